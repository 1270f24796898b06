#ifndef UGWT_DATASET_HPP
#define UGWT_DATASET_HPP

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "ugwt/common.hpp"
#include "ugwt/tensor.hpp"

namespace ugwt {

enum class NetworkTag { circular, rectangular };

inline std::string to_string(NetworkTag t) {
    return t == NetworkTag::circular ? "circular" : "rectangular";
}
inline NetworkTag network_from_string(const std::string& s) {
    if (s == "circular") return NetworkTag::circular;
    if (s == "rectangular") return NetworkTag::rectangular;
    throw ConfigError("unknown network tag '" + s + "' (want circular|rectangular)");
}

enum class Stage { raw, projected };

// A labelled image collection for one domain. Augmented copies of the same
// base acquisition share a site id, which is the grouping key for splits.
struct DomainDataset {
    std::vector<Matrix> images;
    std::vector<std::array<double, 2>> labels; // (x mm, y mm)
    std::vector<int> site_ids;
    std::string material;
    NetworkTag network = NetworkTag::circular;
    Stage stage = Stage::raw;
    double plate_w = 200.0;
    double plate_h = 300.0;

    std::size_t size() const { return images.size(); }

    void push(Matrix img, double x, double y, int site) {
        images.push_back(std::move(img));
        labels.push_back({x, y});
        site_ids.push_back(site);
    }

    DomainDataset meta_clone() const {
        DomainDataset d;
        d.material = material;
        d.network = network;
        d.stage = stage;
        d.plate_w = plate_w;
        d.plate_h = plate_h;
        return d;
    }

    void validate() const {
        if (images.size() != labels.size() || images.size() != site_ids.size())
            throw ShapeError("DomainDataset: images/labels/sites lengths differ");
        if (!images.empty()) {
            const int r = images.front().rows, c = images.front().cols;
            for (const Matrix& m : images)
                if (m.rows != r || m.cols != c)
                    throw ShapeError("DomainDataset: non-uniform image dims");
        }
    }

    std::vector<int> distinct_sites() const {
        std::vector<int> s = site_ids;
        std::sort(s.begin(), s.end());
        s.erase(std::unique(s.begin(), s.end()), s.end());
        return s;
    }
};

struct SplitSpec {
    double train = 0.7, val = 0.15, test = 0.15;
    std::uint64_t seed = 0;
};

struct SplitResult {
    DomainDataset train, val, test;
};

namespace detail {
// Floor each fraction's group count, then hand out the remainder one group at
// a time in the order val, test, train (cycling). 16 groups at 70/15/15 thus
// land as (11, 3, 2).
inline std::array<int, 3> group_counts(int n_groups, const SplitSpec& spec) {
    const double sum = spec.train + spec.val + spec.test;
    if (spec.train < 0 || spec.val < 0 || spec.test < 0 || std::abs(sum - 1.0) > 1e-12)
        throw ConfigError("split fractions must be nonnegative and sum to 1");
    std::array<int, 3> cnt = {static_cast<int>(spec.train * n_groups + 1e-9),
                              static_cast<int>(spec.val * n_groups + 1e-9),
                              static_cast<int>(spec.test * n_groups + 1e-9)};
    int rest = n_groups - cnt[0] - cnt[1] - cnt[2];
    const int order[3] = {1, 2, 0}; // val, test, train
    for (int i = 0; rest > 0; i = (i + 1) % 3, --rest) cnt[order[i]] += 1;
    return cnt;
}
} // namespace detail

// Grouped split: all copies of a damage site stay in one partition. With
// grouped=false the shuffle runs over individual images instead, which lets
// augmented near-duplicates cross partitions (kept for fidelity studies).
inline SplitResult split(const DomainDataset& ds, const SplitSpec& spec, bool grouped = true) {
    ds.validate();
    if (ds.size() < 3) throw ConfigError("split: dataset too small");

    SplitResult out{ds.meta_clone(), ds.meta_clone(), ds.meta_clone()};

    auto scatter = [&](const std::vector<std::size_t>& idx, DomainDataset& part) {
        for (std::size_t i : idx)
            part.push(ds.images[i], ds.labels[i][0], ds.labels[i][1], ds.site_ids[i]);
    };

    if (grouped) {
        std::vector<int> groups = ds.distinct_sites();
        const auto cnt = detail::group_counts(static_cast<int>(groups.size()), spec);
        // small positive fractions may round to zero groups; an empty training
        // partition is the one outcome nothing downstream survives
        if (spec.train > 0 && cnt[0] == 0)
            throw ConfigError("split: too few groups for requested fractions");

        Rng rng(seed_mix(spec.seed, "split-groups"));
        for (std::size_t i = groups.size(); i > 1; --i)
            std::swap(groups[i - 1], groups[rng.next_u64() % i]);

        std::map<int, int> part_of; // 0 train, 1 val, 2 test
        std::size_t g = 0;
        for (int part = 0; part < 3; ++part)
            for (int c = 0; c < cnt[part]; ++c) part_of[groups[g++]] = part;

        std::vector<std::size_t> tr, va, te;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const int p = part_of.at(ds.site_ids[i]);
            (p == 0 ? tr : p == 1 ? va : te).push_back(i);
        }
        scatter(tr, out.train);
        scatter(va, out.val);
        scatter(te, out.test);
    } else {
        std::vector<std::size_t> idx(ds.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        Rng rng(seed_mix(spec.seed, "split-flat"));
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[rng.next_u64() % i]);
        const int n = static_cast<int>(idx.size());
        SplitSpec flat = spec;
        const auto cnt = detail::group_counts(n, flat);
        std::size_t at = 0;
        for (int part = 0; part < 3; ++part) {
            std::vector<std::size_t> sel(idx.begin() + at, idx.begin() + at + cnt[part]);
            at += cnt[part];
            scatter(sel, part == 0 ? out.train : part == 1 ? out.val : out.test);
        }
    }
    return out;
}

// Keeps ceil(groups/2) randomly chosen damage-site groups with all their
// copies; models target-domain data scarcity.
inline DomainDataset halve_target(const DomainDataset& ds, std::uint64_t seed) {
    ds.validate();
    std::vector<int> groups = ds.distinct_sites();
    if (groups.size() < 2) throw ConfigError("halve_target: need at least 2 site groups");
    Rng rng(seed_mix(seed, "halve"));
    for (std::size_t i = groups.size(); i > 1; --i)
        std::swap(groups[i - 1], groups[rng.next_u64() % i]);
    const std::size_t keep = (groups.size() + 1) / 2;
    std::vector<int> kept(groups.begin(), groups.begin() + keep);
    std::sort(kept.begin(), kept.end());

    DomainDataset out = ds.meta_clone();
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (std::binary_search(kept.begin(), kept.end(), ds.site_ids[i]))
            out.push(ds.images[i], ds.labels[i][0], ds.labels[i][1], ds.site_ids[i]);
    return out;
}

} // namespace ugwt

#endif // UGWT_DATASET_HPP
