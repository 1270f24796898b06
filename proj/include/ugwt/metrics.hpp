#ifndef UGWT_METRICS_HPP
#define UGWT_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ugwt/common.hpp"

namespace ugwt {

// Normalized histogram over a fixed range. Out-of-range samples are clipped
// into the boundary bins.
struct Histogram {
    int n_bins = 200;
    double lo = -1.0;
    double hi = +1.0;
    std::vector<double> probs;
    double smoothing_epsilon = 1e-12;
};

inline Histogram build_histogram(std::span<const double> values, int n_bins = 200,
                                 double lo = -1.0, double hi = +1.0) {
    if (values.empty()) throw ConfigError("build_histogram: empty input");
    if (!(lo < hi)) throw ConfigError("build_histogram: lo must be < hi");
    if (n_bins < 1) throw ConfigError("build_histogram: n_bins must be >= 1");
    Histogram h;
    h.n_bins = n_bins;
    h.lo = lo;
    h.hi = hi;
    h.probs.assign(n_bins, 0.0);
    const double scale = n_bins / (hi - lo);
    for (double x : values) {
        int i = static_cast<int>(std::floor((x - lo) * scale));
        i = std::clamp(i, 0, n_bins - 1);
        h.probs[i] += 1.0;
    }
    const double inv = 1.0 / static_cast<double>(values.size());
    for (double& p : h.probs) p *= inv;
    return h;
}

namespace detail {
inline void check_binning(const Histogram& a, const Histogram& b) {
    if (a.n_bins != b.n_bins || a.lo != b.lo || a.hi != b.hi)
        throw ShapeError("histogram binning mismatch");
}
} // namespace detail

// Directed Kullback-Leibler divergence KL(ht || hs) in nats.
// Computed on the raw probabilities when no division by zero can occur;
// otherwise both histograms get the additive-epsilon smoothing and are
// renormalized before the sum.
inline double kl(const Histogram& ht, const Histogram& hs) {
    detail::check_binning(ht, hs);
    const int n = ht.n_bins;
    bool need_smoothing = false;
    for (int i = 0; i < n; ++i)
        if (ht.probs[i] > 0.0 && hs.probs[i] == 0.0) {
            need_smoothing = true;
            break;
        }
    double acc = 0.0;
    if (!need_smoothing) {
        for (int i = 0; i < n; ++i)
            if (ht.probs[i] > 0.0) acc += ht.probs[i] * std::log(ht.probs[i] / hs.probs[i]);
    } else {
        const double eps = ht.smoothing_epsilon;
        const double zt = 1.0 + n * eps, zs = 1.0 + n * eps;
        for (int i = 0; i < n; ++i) {
            const double pt = (ht.probs[i] + eps) / zt;
            const double ps = (hs.probs[i] + eps) / zs;
            acc += pt * std::log(pt / ps);
        }
    }
    return acc;
}

inline double kl_sym(const Histogram& ht, const Histogram& hs) {
    return 0.5 * (kl(ht, hs) + kl(hs, ht));
}

// Jensen-Shannon divergence on the raw probabilities. The mixture is nonzero
// wherever either input is, so no smoothing enters.
inline double jsd(const Histogram& ht, const Histogram& hs) {
    detail::check_binning(ht, hs);
    // separate accumulators keep the result exactly swap-invariant
    double acc_t = 0.0, acc_s = 0.0;
    for (int i = 0; i < ht.n_bins; ++i) {
        const double t = ht.probs[i], s = hs.probs[i];
        const double m = 0.5 * (t + s);
        if (t > 0.0) acc_t += t * std::log(t / m);
        if (s > 0.0) acc_s += s * std::log(s / m);
    }
    return 0.5 * acc_t + 0.5 * acc_s;
}

inline double chi2(const Histogram& ht, const Histogram& hs) {
    detail::check_binning(ht, hs);
    double acc = 0.0;
    for (int i = 0; i < ht.n_bins; ++i) {
        const double t = ht.probs[i], s = hs.probs[i];
        if (t == 0.0 && s == 0.0) continue;
        const double d = t - s;
        acc += d * d / (t + s);
    }
    return acc;
}

// Bhattacharyya distance; fully disjoint supports have zero overlap and are
// reported as an explicit infinity rather than an epsilon artifact.
inline double bhattacharyya(const Histogram& ht, const Histogram& hs) {
    detail::check_binning(ht, hs);
    double overlap = 0.0;
    for (int i = 0; i < ht.n_bins; ++i) overlap += std::sqrt(ht.probs[i] * hs.probs[i]);
    if (overlap <= 0.0) return std::numeric_limits<double>::infinity();
    return std::max(0.0, -std::log(overlap));
}

// Earth mover's distance in bin units (cumulative-difference form).
inline double emd(const Histogram& ht, const Histogram& hs) {
    detail::check_binning(ht, hs);
    double cum = 0.0, acc = 0.0;
    for (int i = 0; i < ht.n_bins; ++i) {
        cum += ht.probs[i] - hs.probs[i];
        acc += std::abs(cum);
    }
    return acc;
}

// The six distances of one source/target audit. kl_t_s is the reported
// direction (target approximated by source); the reverse is kept for the
// asymmetry audit. emd here is converted from bin units to value units
// (multiplied by the bin width) so its magnitude is comparable across bin
// counts and to the common-domain scale.
struct MetricsReport {
    double kl_t_s = 0.0;
    double kl_s_t = 0.0;
    double kl_sym = 0.0;
    double jsd = 0.0;
    double chi2 = 0.0;
    double bhattacharyya = 0.0;
    double emd = 0.0;
};

inline MetricsReport compute_all(std::span<const double> source_values,
                                 std::span<const double> target_values, int n_bins = 200) {
    const Histogram hs = build_histogram(source_values, n_bins);
    const Histogram ht = build_histogram(target_values, n_bins);
    MetricsReport r;
    r.kl_t_s = kl(ht, hs);
    r.kl_s_t = kl(hs, ht);
    r.kl_sym = 0.5 * (r.kl_t_s + r.kl_s_t);
    r.jsd = jsd(ht, hs);
    r.chi2 = chi2(ht, hs);
    r.bhattacharyya = bhattacharyya(ht, hs);
    r.emd = emd(ht, hs) * (ht.hi - ht.lo) / ht.n_bins;
    return r;
}

} // namespace ugwt

#endif // UGWT_METRICS_HPP
