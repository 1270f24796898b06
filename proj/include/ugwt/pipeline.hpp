#ifndef UGWT_PIPELINE_HPP
#define UGWT_PIPELINE_HPP

#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ugwt/common.hpp"
#include "ugwt/dataset.hpp"
#include "ugwt/metrics.hpp"
#include "ugwt/mpca.hpp"
#include "ugwt/nn.hpp"
#include "ugwt/tensor.hpp"

namespace ugwt {

enum class ModelId { scnn = 0, tcnn = 1, ft = 2, mpca_ft = 3 };

inline const char* model_name(ModelId m) {
    switch (m) {
        case ModelId::scnn: return "S-CNN";
        case ModelId::tcnn: return "T-CNN";
        case ModelId::ft: return "FT";
        case ModelId::mpca_ft: return "MPCA-FT";
    }
    return "?";
}

struct AxisRmse {
    double x = 0.0, y = 0.0;
};

struct StageLogEntry {
    std::string stage;
    double seconds = 0.0;
    std::string detail;
};

struct ExperimentReport {
    std::string case_id;
    std::uint64_t seed = 0;
    double q_percent = 99.0;
    MetricsReport metrics_before;
    MetricsReport metrics_after;
    int i2_before = 0;
    int p2_after = 0;
    std::array<AxisRmse, 4> rmse_full;    // on the full target domain
    std::array<AxisRmse, 4> rmse_holdout; // on the sites removed from the reduced set
    std::vector<StageLogEntry> log;       // timings and seeds; not part of the CSV surface
};

struct PredictionRow {
    std::string model;
    int sample = 0;
    int site_id = 0;
    double truth_x = 0, truth_y = 0;
    double pred_x = 0, pred_y = 0;
};

struct RunArtifacts {
    std::vector<PredictionRow> predictions;
};

struct ExperimentConfig {
    std::string case_id = "experiment";
    double q_percent = 99.0;
    std::uint64_t seed = 0;
    nn::TrainConfig train;          // from-scratch stages
    nn::TrainConfig finetune_train; // fine-tuning stages
    double scratch_train = 0.7, scratch_val = 0.15, scratch_test = 0.15;
    double ft_train = 0.9, ft_val = 0.05, ft_test = 0.05;
    bool paper_split = false; // ungrouped splits (augmented copies may cross partitions)
    bool center = true;

    void validate() const {
        if (!(q_percent > 0.0 && q_percent <= 100.0))
            throw ConfigError("experiment: q_percent must be in (0,100]");
        train.validate();
        finetune_train.validate();
    }
};

// rethrow preserving the error class, tagged with the failing stage
[[noreturn]] inline void throw_with_stage(const std::string& stage, const std::exception& e) {
    const std::string msg = "stage " + stage + ": " + e.what();
    if (dynamic_cast<const ShapeError*>(&e)) throw ShapeError(msg);
    if (dynamic_cast<const ConvergenceError*>(&e)) throw ConvergenceError(msg);
    if (dynamic_cast<const NumericError*>(&e)) throw NumericError(msg);
    if (dynamic_cast<const ConfigError*>(&e)) throw ConfigError(msg);
    throw std::runtime_error(msg);
}

// Per-axis root mean square localisation error in mm.
inline std::pair<double, double> rmse(const std::vector<std::pair<double, double>>& predictions,
                                      const std::vector<std::pair<double, double>>& truth) {
    if (predictions.size() != truth.size() || predictions.empty())
        throw ShapeError("rmse: prediction/truth length mismatch");
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double dx = predictions[i].first - truth[i].first;
        const double dy = predictions[i].second - truth[i].second;
        sx += dx * dx;
        sy += dy * dy;
    }
    const double n = static_cast<double>(predictions.size());
    return {std::sqrt(sx / n), std::sqrt(sy / n)};
}

namespace detail {

inline Tensor3 dataset_tensor(const DomainDataset& ds) {
    return stack(ds.images);
}

inline std::vector<double> flat_values(const DomainDataset& ds) {
    std::size_t total = 0;
    for (const Matrix& m : ds.images) total += m.v.size();
    std::vector<double> out;
    out.reserve(total);
    for (const Matrix& m : ds.images) out.insert(out.end(), m.v.begin(), m.v.end());
    return out;
}

inline DomainDataset projected_dataset(const DomainDataset& ds, const ModeBasis& basis) {
    Tensor3 p = project(dataset_tensor(ds), basis);
    DomainDataset out = ds.meta_clone();
    out.stage = Stage::projected;
    for (int k = 0; k < p.i3; ++k)
        out.push(slice(p, k), ds.labels[k][0], ds.labels[k][1], ds.site_ids[k]);
    return out;
}

inline double max_abs(const DomainDataset& ds) {
    double m = 0.0;
    for (const Matrix& img : ds.images)
        for (double v : img.v) m = std::max(m, std::abs(v));
    return m;
}

inline std::vector<double> rescaled_values(const DomainDataset& ds, double scale) {
    std::vector<double> v = flat_values(ds);
    if (scale > 0.0)
        for (double& x : v) x /= scale;
    return v;
}

inline nn::SampleSet axis_samples(const DomainDataset& ds, int axis) {
    nn::SampleSet s;
    const double denom = axis == 0 ? ds.plate_w : ds.plate_h;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        s.images.push_back(&ds.images[i]);
        s.targets.push_back(ds.labels[i][axis] / denom);
    }
    return s;
}

inline std::uint64_t basis_fingerprint(const ModeBasis& b) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const std::vector<double>& v) {
        for (double x : v) {
            std::uint64_t bits;
            static_assert(sizeof(bits) == sizeof(x));
            std::memcpy(&bits, &x, sizeof(bits));
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xff;
                h *= 1099511628211ull;
            }
        }
    };
    mix(b.basis.v);
    mix(b.mean);
    return h;
}

// trains the x and y coordinate heads, concurrently when allowed
struct ModelPair {
    nn::TrainedModel x, y;
};

inline ModelPair train_pair(const nn::ModelSpec& spec, const DomainDataset& train_ds,
                            const DomainDataset& val_ds, nn::TrainConfig cfg,
                            std::uint64_t stage_seed) {
    ModelPair pair;
    nn::TrainConfig cfg_x = cfg, cfg_y = cfg;
    cfg_x.seed = seed_mix(stage_seed, "axis-x");
    cfg_y.seed = seed_mix(stage_seed, "axis-y");
    const nn::SampleSet tx = axis_samples(train_ds, 0), ty = axis_samples(train_ds, 1);
    nn::SampleSet vx, vy;
    if (val_ds.size() > 0) {
        vx = axis_samples(val_ds, 0);
        vy = axis_samples(val_ds, 1);
    }
    run_pair([&] { pair.x = nn::train(spec, tx, vx, cfg_x); },
             [&] { pair.y = nn::train(spec, ty, vy, cfg_y); });
    return pair;
}

inline ModelPair finetune_pair(const ModelPair& base, const DomainDataset& train_ds,
                               const DomainDataset& val_ds, nn::TrainConfig cfg,
                               std::uint64_t stage_seed) {
    ModelPair pair;
    nn::TrainConfig cfg_x = cfg, cfg_y = cfg;
    cfg_x.seed = seed_mix(stage_seed, "axis-x");
    cfg_y.seed = seed_mix(stage_seed, "axis-y");
    const nn::SampleSet tx = axis_samples(train_ds, 0), ty = axis_samples(train_ds, 1);
    nn::SampleSet vx, vy;
    if (val_ds.size() > 0) {
        vx = axis_samples(val_ds, 0);
        vy = axis_samples(val_ds, 1);
    }
    run_pair([&] { pair.x = nn::finetune(base.x, tx, vx, cfg_x); },
             [&] { pair.y = nn::finetune(base.y, ty, vy, cfg_y); });
    return pair;
}

} // namespace detail

// The full procedure: audit the raw domain gap, fit the joint mode-2 basis,
// train the four model pairs (source-trained, reduced-target-trained,
// fine-tuned, and projected+fine-tuned), then score every pair on the full
// target domain. The reduced set C is carved from the target by removing half
// of its damage-site groups.
inline ExperimentReport run_procedure(const DomainDataset& source, const DomainDataset& target,
                                      const ExperimentConfig& cfg,
                                      RunArtifacts* artifacts = nullptr) {
    cfg.validate();
    source.validate();
    target.validate();
    if (source.images.empty() || target.images.empty())
        throw ConfigError("run_procedure: empty domain");
    if (source.images.front().rows != target.images.front().rows ||
        source.images.front().cols != target.images.front().cols)
        throw ShapeError("run_procedure: source/target image dims differ");

    ExperimentReport report;
    report.case_id = cfg.case_id;
    report.seed = cfg.seed;
    report.q_percent = cfg.q_percent;
    report.i2_before = source.images.front().cols;

    const bool grouped = !cfg.paper_split;
    using clock = std::chrono::steady_clock;
    auto timed = [&](const std::string& stage, const std::string& detail, auto&& fn) {
        const auto t0 = clock::now();
        try {
            fn();
        } catch (const std::exception& e) {
            throw_with_stage(stage, e);
        }
        report.log.push_back(
            {stage, std::chrono::duration<double>(clock::now() - t0).count(), detail});
    };

    // data scarcity: keep half of the target's damage-site groups
    DomainDataset reduced;
    timed("halve-target", "", [&] {
        reduced = halve_target(target, seed_mix(cfg.seed, "halve-target"));
    });

    timed("metrics-before", "raw pixel distributions", [&] {
        report.metrics_before =
            compute_all(detail::flat_values(source), detail::flat_values(reduced));
    });

    JointFitResult fit;
    DomainDataset proj_source, proj_reduced;
    std::uint64_t fit_fingerprint = 0;
    timed("mpca-fit", "q=" + format_g17(cfg.q_percent), [&] {
        fit = fit_joint(detail::dataset_tensor(source), detail::dataset_tensor(reduced),
                        cfg.q_percent, cfg.center);
        report.p2_after = fit.p2;
        fit_fingerprint = detail::basis_fingerprint(fit.basis);
        proj_source = source.meta_clone();
        proj_source.stage = Stage::projected;
        for (int k = 0; k < fit.projected_source.i3; ++k)
            proj_source.push(slice(fit.projected_source, k), source.labels[k][0],
                             source.labels[k][1], source.site_ids[k]);
        proj_reduced = reduced.meta_clone();
        proj_reduced.stage = Stage::projected;
        for (int k = 0; k < fit.projected_target.i3; ++k)
            proj_reduced.push(slice(fit.projected_target, k), reduced.labels[k][0],
                              reduced.labels[k][1], reduced.site_ids[k]);
    });

    timed("metrics-after", "projected values, joint max-abs rescale", [&] {
        const double scale = std::max(detail::max_abs(proj_source), detail::max_abs(proj_reduced));
        report.metrics_after = compute_all(detail::rescaled_values(proj_source, scale),
                                           detail::rescaled_values(proj_reduced, scale));
    });

    const int img_h = source.images.front().rows;
    const int img_w = source.images.front().cols;

    SplitSpec scratch_split{cfg.scratch_train, cfg.scratch_val, cfg.scratch_test, 0};
    SplitSpec ft_split{cfg.ft_train, cfg.ft_val, cfg.ft_test, 0};

    detail::ModelPair scnn, tcnn, ftp, mpca_ft;

    timed("train-scnn", "type-1 on the source domain", [&] {
        SplitSpec sp = scratch_split;
        sp.seed = seed_mix(cfg.seed, "split-source");
        const SplitResult parts = split(source, sp, grouped);
        scnn = detail::train_pair(nn::build_type(1, img_h, img_w), parts.train, parts.val,
                                  cfg.train, seed_mix(cfg.seed, "train-scnn"));
    });

    timed("train-tcnn", "type-1 on the reduced target", [&] {
        SplitSpec sp = scratch_split;
        sp.seed = seed_mix(cfg.seed, "split-target");
        const SplitResult parts = split(reduced, sp, grouped);
        tcnn = detail::train_pair(nn::build_type(1, img_h, img_w), parts.train, parts.val,
                                  cfg.train, seed_mix(cfg.seed, "train-tcnn"));
    });

    timed("finetune", "feedforward-only on the reduced target", [&] {
        SplitSpec sp = ft_split;
        sp.seed = seed_mix(cfg.seed, "split-finetune");
        const SplitResult parts = split(reduced, sp, grouped);
        ftp = detail::finetune_pair(scnn, parts.train, parts.val, cfg.finetune_train,
                                    seed_mix(cfg.seed, "finetune"));
    });

    timed("train-mpca-ft", "projected source, then feedforward-only adaptation", [&] {
        const int arch = target.network == NetworkTag::circular ? 2 : 3;
        nn::ModelSpec spec;
        try {
            spec = nn::build_type(arch, img_h, fit.p2);
        } catch (const ConfigError&) {
            // narrow projections underflow the type-2 chain; fall back
            spec = nn::build_type(3, img_h, fit.p2);
            report.log.push_back({"train-mpca-ft", 0.0,
                                  "type-" + std::to_string(arch) + " underflows at width " +
                                      std::to_string(fit.p2) + ", using type-3"});
        }
        SplitSpec sp = scratch_split;
        sp.seed = seed_mix(cfg.seed, "split-mpca-source");
        const SplitResult parts = split(proj_source, sp, grouped);
        detail::ModelPair base = detail::train_pair(spec, parts.train, parts.val, cfg.train,
                                                    seed_mix(cfg.seed, "train-mpca-base"));
        SplitSpec spf = ft_split;
        spf.seed = seed_mix(cfg.seed, "split-mpca-finetune");
        const SplitResult fparts = split(proj_reduced, spf, grouped);
        mpca_ft = detail::finetune_pair(base, fparts.train, fparts.val, cfg.finetune_train,
                                        seed_mix(cfg.seed, "finetune-mpca"));
    });

    timed("evaluate", "full target domain", [&] {
        // the projection reuses the basis fitted above, never a refit
        if (detail::basis_fingerprint(fit.basis) != fit_fingerprint)
            throw NumericError("evaluate: projection basis changed since the fit");
        DomainDataset proj_target = detail::projected_dataset(target, fit.basis);

        std::set<int> reduced_sites(reduced.site_ids.begin(), reduced.site_ids.end());
        std::vector<std::size_t> holdout_idx;
        for (std::size_t i = 0; i < target.size(); ++i)
            if (!reduced_sites.count(target.site_ids[i])) holdout_idx.push_back(i);

        std::vector<std::pair<double, double>> truth;
        for (const auto& l : target.labels) truth.push_back({l[0], l[1]});

        auto evaluate_pair = [&](detail::ModelPair& pair, const DomainDataset& domain,
                                 ModelId id) {
            std::vector<const Matrix*> imgs;
            for (const Matrix& m : domain.images) imgs.push_back(&m);
            const std::vector<double> px = nn::predict(pair.x, imgs);
            const std::vector<double> py = nn::predict(pair.y, imgs);
            std::vector<std::pair<double, double>> preds(imgs.size());
            for (std::size_t i = 0; i < imgs.size(); ++i)
                preds[i] = {px[i] * domain.plate_w, py[i] * domain.plate_h};

            const auto [ex, ey] = rmse(preds, truth);
            report.rmse_full[static_cast<int>(id)] = {ex, ey};

            if (!holdout_idx.empty()) {
                std::vector<std::pair<double, double>> hp, ht;
                for (std::size_t i : holdout_idx) {
                    hp.push_back(preds[i]);
                    ht.push_back(truth[i]);
                }
                const auto [hx, hy] = rmse(hp, ht);
                report.rmse_holdout[static_cast<int>(id)] = {hx, hy};
            }
            if (artifacts) {
                for (std::size_t i = 0; i < preds.size(); ++i)
                    artifacts->predictions.push_back({model_name(id), static_cast<int>(i),
                                                      domain.site_ids[i], truth[i].first,
                                                      truth[i].second, preds[i].first,
                                                      preds[i].second});
            }
        };

        evaluate_pair(scnn, target, ModelId::scnn);
        evaluate_pair(tcnn, target, ModelId::tcnn);
        evaluate_pair(ftp, target, ModelId::ft);
        evaluate_pair(mpca_ft, proj_target, ModelId::mpca_ft);
        report.log.push_back({"evaluate", 0.0,
                              "samples=" + std::to_string(target.size()) +
                                  " basis_fingerprint=" + std::to_string(fit_fingerprint)});
    });

    return report;
}

// ---- report serialization ----

namespace detail {
inline void put_metrics(std::ostream& os, const std::string& prefix, const MetricsReport& m) {
    os << prefix << ".kl_t_s," << format_g17(m.kl_t_s) << "\n";
    os << prefix << ".kl_s_t," << format_g17(m.kl_s_t) << "\n";
    os << prefix << ".kl_sym," << format_g17(m.kl_sym) << "\n";
    os << prefix << ".jsd," << format_g17(m.jsd) << "\n";
    os << prefix << ".chi2," << format_g17(m.chi2) << "\n";
    os << prefix << ".bhattacharyya," << format_g17(m.bhattacharyya) << "\n";
    os << prefix << ".emd," << format_g17(m.emd) << "\n";
}
} // namespace detail

// Flat key,value rows; doubles at 17 significant digits so the round trip is
// lossless. Stage timings are deliberately not part of this surface (they
// live in the stage log), keeping reruns byte-identical.
inline std::string report_to_csv(const ExperimentReport& r) {
    std::ostringstream os;
    os << "key,value\n";
    os << "case_id," << r.case_id << "\n";
    os << "seed," << r.seed << "\n";
    os << "q_percent," << format_g17(r.q_percent) << "\n";
    os << "i2_before," << r.i2_before << "\n";
    os << "p2_after," << r.p2_after << "\n";
    detail::put_metrics(os, "before", r.metrics_before);
    detail::put_metrics(os, "after", r.metrics_after);
    for (int m = 0; m < 4; ++m) {
        const std::string name = model_name(static_cast<ModelId>(m));
        os << "rmse." << name << ".x," << format_g17(r.rmse_full[m].x) << "\n";
        os << "rmse." << name << ".y," << format_g17(r.rmse_full[m].y) << "\n";
        os << "rmse_holdout." << name << ".x," << format_g17(r.rmse_holdout[m].x) << "\n";
        os << "rmse_holdout." << name << ".y," << format_g17(r.rmse_holdout[m].y) << "\n";
    }
    return os.str();
}

inline ExperimentReport report_from_csv(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    std::getline(is, line); // header
    if (line != "key,value") throw ConfigError("report csv: bad header");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos) throw ConfigError("report csv: bad row '" + line + "'");
        kv[line.substr(0, comma)] = line.substr(comma + 1);
    }
    auto want = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw ConfigError("report csv: missing key " + key);
        return it->second;
    };
    auto wantd = [&](const std::string& key) { return std::strtod(want(key).c_str(), nullptr); };

    ExperimentReport r;
    r.case_id = want("case_id");
    r.seed = std::strtoull(want("seed").c_str(), nullptr, 10);
    r.q_percent = wantd("q_percent");
    r.i2_before = static_cast<int>(std::strtol(want("i2_before").c_str(), nullptr, 10));
    r.p2_after = static_cast<int>(std::strtol(want("p2_after").c_str(), nullptr, 10));
    auto get_metrics = [&](const std::string& prefix, MetricsReport& m) {
        m.kl_t_s = wantd(prefix + ".kl_t_s");
        m.kl_s_t = wantd(prefix + ".kl_s_t");
        m.kl_sym = wantd(prefix + ".kl_sym");
        m.jsd = wantd(prefix + ".jsd");
        m.chi2 = wantd(prefix + ".chi2");
        m.bhattacharyya = wantd(prefix + ".bhattacharyya");
        m.emd = wantd(prefix + ".emd");
    };
    get_metrics("before", r.metrics_before);
    get_metrics("after", r.metrics_after);
    for (int m = 0; m < 4; ++m) {
        const std::string name = model_name(static_cast<ModelId>(m));
        r.rmse_full[m] = {wantd("rmse." + name + ".x"), wantd("rmse." + name + ".y")};
        r.rmse_holdout[m] = {wantd("rmse_holdout." + name + ".x"),
                             wantd("rmse_holdout." + name + ".y")};
    }
    return r;
}

// Human-readable blocks: the distance audit and the per-model RMSE table.
inline std::string report_to_text(const ExperimentReport& r) {
    std::ostringstream os;
    os << "case: " << r.case_id << "  (seed " << r.seed << ", q " << r.q_percent << "%)\n";
    os << "image columns: " << r.i2_before << " -> " << r.p2_after << " retained components\n\n";
    os << "domain distance audit (source vs reduced target)\n";
    auto row = [&](const char* name, double before, double after) {
        os << "  " << name << ": " << format_g17(before) << "  ->  " << format_g17(after)
           << "\n";
    };
    row("KL(T||S)   ", r.metrics_before.kl_t_s, r.metrics_after.kl_t_s);
    row("KL(S||T)   ", r.metrics_before.kl_s_t, r.metrics_after.kl_s_t);
    row("KL sym     ", r.metrics_before.kl_sym, r.metrics_after.kl_sym);
    row("JSD        ", r.metrics_before.jsd, r.metrics_after.jsd);
    row("chi^2      ", r.metrics_before.chi2, r.metrics_after.chi2);
    row("Bhattach.  ", r.metrics_before.bhattacharyya, r.metrics_after.bhattacharyya);
    row("EMD        ", r.metrics_before.emd, r.metrics_after.emd);
    os << "\nlocalisation RMSE on the full target domain [mm]\n";
    os << "  model     x        y        x(held-out)  y(held-out)\n";
    for (int m = 0; m < 4; ++m) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "  %-8s %-8.2f %-8.2f %-12.2f %-12.2f\n",
                      model_name(static_cast<ModelId>(m)), r.rmse_full[m].x, r.rmse_full[m].y,
                      r.rmse_holdout[m].x, r.rmse_holdout[m].y);
        os << buf;
    }
    return os.str();
}

inline std::string predictions_to_csv(const RunArtifacts& a) {
    std::ostringstream os;
    os << "model,sample,site_id,truth_x_mm,truth_y_mm,pred_x_mm,pred_y_mm\n";
    for (const PredictionRow& p : a.predictions)
        os << p.model << "," << p.sample << "," << p.site_id << "," << format_g17(p.truth_x)
           << "," << format_g17(p.truth_y) << "," << format_g17(p.pred_x) << ","
           << format_g17(p.pred_y) << "\n";
    return os.str();
}

inline std::string stage_log_to_text(const ExperimentReport& r) {
    std::ostringstream os;
    os << "stage log for " << r.case_id << " (seed " << r.seed << ")\n";
    for (const StageLogEntry& e : r.log) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%10.3f s  ", e.seconds);
        os << buf << e.stage;
        if (!e.detail.empty()) os << "  [" << e.detail << "]";
        os << "\n";
    }
    return os.str();
}

} // namespace ugwt

#endif // UGWT_PIPELINE_HPP
