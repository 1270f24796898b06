// Acceptance suite: one criterion per line, grouped by subsystem.
// Usage: ugwt_acceptance <mpca|metrics|nn|e2e|determinism>
// Exit code 0 when every criterion in the group passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ugwt/bundle.hpp"
#include "ugwt/metrics.hpp"
#include "ugwt/mpca.hpp"
#include "ugwt/nn.hpp"
#include "ugwt/pipeline.hpp"
#include "ugwt/signal.hpp"

using namespace ugwt;

namespace {

struct Suite {
    int passed = 0;
    int failed = 0;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void check(bool ok, const std::string& name, const std::string& detail = "") {
        std::printf("[%s] %s%s%s\n", ok ? "PASS" : "FAIL", name.c_str(),
                    detail.empty() ? "" : ": ", detail.c_str());
        std::fflush(stdout);
        (ok ? passed : failed) += 1;
    }

    double elapsed() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }

    int finish(double budget_s) {
        const double secs = elapsed();
        check(secs < budget_s, "runtime within budget",
              format_g17(secs) + " s of " + format_g17(budget_s) + " s");
        std::printf("%d passed, %d failed\n", passed, failed);
        return failed == 0 ? 0 : 1;
    }
};

Tensor3 random_tensor(int i1, int i2, int i3, Rng& rng) {
    Tensor3 t(i1, i2, i3);
    for (double& v : t.v) v = 2.0 * rng.uniform() - 1.0;
    return t;
}

// independent oracle: explicit centered scatter of all mode-2 vectors,
// solved by a max-pivot Jacobi distinct from the library's cyclic solver
std::vector<double> oracle_spectrum(const Tensor3& src, const Tensor3& tgt) {
    const int d = src.i2;
    std::vector<std::vector<double>> vecs;
    for (const Tensor3* t : {&src, &tgt})
        for (int k = 0; k < t->i3; ++k)
            for (int r = 0; r < t->i1; ++r)
                vecs.emplace_back(t->row(r, k), t->row(r, k) + d);
    std::vector<double> mean(d, 0.0);
    for (const auto& v : vecs)
        for (int c = 0; c < d; ++c) mean[c] += v[c];
    for (double& m : mean) m /= static_cast<double>(vecs.size());

    std::vector<std::vector<double>> a(d, std::vector<double>(d, 0.0));
    for (const auto& v : vecs)
        for (int c = 0; c < d; ++c)
            for (int e = 0; e < d; ++e) a[c][e] += (v[c] - mean[c]) * (v[e] - mean[e]);

    double scale = 0.0;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) scale = std::max(scale, std::abs(a[i][j]));
    if (scale == 0.0) scale = 1.0;
    for (int iter = 0; iter < 200 * d * d; ++iter) {
        int p = 0, q = 1;
        double big = 0.0;
        for (int i = 0; i < d; ++i)
            for (int j = i + 1; j < d; ++j)
                if (std::abs(a[i][j]) > big) {
                    big = std::abs(a[i][j]);
                    p = i;
                    q = j;
                }
        if (d < 2 || big <= 1e-14 * scale) break;
        const double theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
        const double t =
            (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), sn = t * c;
        for (int j = 0; j < d; ++j) {
            const double ap = a[p][j], aq = a[q][j];
            a[p][j] = c * ap - sn * aq;
            a[q][j] = sn * ap + c * aq;
        }
        for (int i = 0; i < d; ++i) {
            const double ap = a[i][p], aq = a[i][q];
            a[i][p] = c * ap - sn * aq;
            a[i][q] = sn * ap + c * aq;
        }
    }
    std::vector<double> vals(d);
    for (int i = 0; i < d; ++i) vals[i] = a[i][i];
    std::sort(vals.begin(), vals.end(), std::greater<>());
    return vals;
}

// ---- group: mpca ----

int run_mpca() {
    Suite s;

    {
        double worst = 0.0;
        for (std::uint64_t seed : {1u, 2u, 3u}) {
            Rng rng(seed);
            Tensor3 src = random_tensor(4, 12, 6, rng);
            Tensor3 tgt = random_tensor(4, 12, 4, rng);
            JointFitResult fit = fit_joint(src, tgt, 100.0);
            const Tensor3 rs = reconstruct(fit.projected_source, fit.basis);
            const Tensor3 rt = reconstruct(fit.projected_target, fit.basis);
            for (std::size_t i = 0; i < rs.v.size(); ++i)
                worst = std::max(worst, std::abs(rs.v[i] - src.v[i]));
            for (std::size_t i = 0; i < rt.v.size(); ++i)
                worst = std::max(worst, std::abs(rt.v[i] - tgt.v[i]));
        }
        s.check(worst <= 1e-8, "full-projection round trip (q=100, 4x12x10 joint tensors)",
                "max-abs error " + format_g17(worst));
    }

    {
        double worst = 0.0;
        for (int i2 : {8, 17, 32}) {
            Rng rng(100 + i2);
            Tensor3 src = random_tensor(3, i2, 5, rng);
            Tensor3 tgt = random_tensor(3, i2, 4, rng);
            JointFitResult fit = fit_joint(src, tgt, 99.0);
            const std::vector<double> want = oracle_spectrum(src, tgt);
            for (std::size_t i = 0; i < want.size(); ++i) {
                const double denom = std::max(std::abs(want[0]), 1e-30);
                worst = std::max(worst,
                                 std::abs(fit.basis.eigenvalues[i] - std::max(want[i], 0.0)) /
                                     denom);
            }
        }
        s.check(worst <= 1e-8, "eigenvalues match the brute-force covariance oracle (i2 <= 32)",
                "max relative error " + format_g17(worst));
    }

    {
        Rng rng(7);
        Tensor3 src = random_tensor(3, 24, 8, rng);
        Tensor3 tgt = random_tensor(3, 24, 6, rng);
        bool retention = true, monotone = true;
        int prev = 0;
        for (double q : {90.0, 97.0, 99.0, 99.9}) {
            JointFitResult fit = fit_joint(src, tgt, q);
            if (fit.basis.retained_fraction < q / 100.0 - 1e-12) retention = false;
            if (fit.p2 < prev) monotone = false;
            prev = fit.p2;
        }
        s.check(retention, "retained fraction >= q/100 for q in {90, 97, 99, 99.9}");
        s.check(monotone, "retained component count nondecreasing in q");
    }

    {
        Rng rng(9);
        Tensor3 src = random_tensor(3, 16, 7, rng);
        Tensor3 tgt = random_tensor(3, 16, 5, rng);
        double worst = 0.0;
        for (double q : {80.0, 95.0, 99.0}) {
            JointFitResult fit = fit_joint(src, tgt, q);
            double residual = 0.0, total = 0.0;
            for (const Tensor3* t : {&src, &tgt}) {
                const Tensor3 rec = reconstruct(project(*t, fit.basis), fit.basis);
                for (int k = 0; k < t->i3; ++k)
                    for (int r = 0; r < t->i1; ++r)
                        for (int c = 0; c < t->i2; ++c) {
                            const double d = (*t)(r, c, k) - rec(r, c, k);
                            residual += d * d;
                            const double cd = (*t)(r, c, k) - fit.basis.mean[c];
                            total += cd * cd;
                        }
            }
            worst = std::max(worst, std::abs(residual / total -
                                             (1.0 - fit.basis.retained_fraction)));
        }
        s.check(worst <= 1e-6, "residual energy fraction = 1 - retained fraction",
                "max deviation " + format_g17(worst));
    }

    return s.finish(30.0);
}

// ---- group: metrics ----

Histogram from_probs(std::vector<double> p) {
    Histogram h;
    h.n_bins = static_cast<int>(p.size());
    h.probs = std::move(p);
    return h;
}

int run_metrics() {
    Suite s;
    const double ln2 = 0.6931471805599453;

    {
        Rng rng(3);
        std::vector<double> probs(200, 0.0);
        double sum = 0.0;
        for (double& p : probs) {
            p = rng.uniform();
            sum += p;
        }
        for (double& p : probs) p /= sum;
        Histogram h = from_probs(probs);
        const double worst = std::max(
            {std::abs(kl(h, h)), std::abs(kl_sym(h, h)), std::abs(jsd(h, h)),
             std::abs(chi2(h, h)), std::abs(bhattacharyya(h, h)), std::abs(emd(h, h))});
        s.check(worst <= 1e-9, "all six metrics vanish on identical histograms",
                "max " + format_g17(worst));
    }

    {
        Histogram a = from_probs({0.5, 0.5, 0.0, 0.0});
        Histogram b = from_probs({0.0, 0.0, 0.25, 0.75});
        s.check(std::abs(jsd(a, b) - ln2) <= 1e-12, "jsd attains ln 2 on disjoint supports",
                format_g17(jsd(a, b)));
        s.check(std::abs(chi2(a, b) - 2.0) <= 1e-12, "chi2 attains 2 on disjoint supports",
                format_g17(chi2(a, b)));
    }

    {
        bool ok = true;
        for (int k = 1; k <= 5; ++k) {
            std::vector<double> pa(8, 0.0), pb(8, 0.0);
            pa[1] = 1.0;
            pb[1 + k] = 1.0;
            const double e = emd(from_probs(pa), from_probs(pb));
            if (std::abs(e - k) > 1e-12) ok = false;
        }
        s.check(ok, "emd equals k on k-bin-shifted point masses");
    }

    {
        Rng rng(5);
        bool ok = true;
        for (int rep = 0; rep < 10; ++rep) {
            std::vector<double> pa(32, 0.0), pb(32, 0.0);
            double sa = 0, sb = 0;
            for (int i = 0; i < 32; ++i) {
                pa[i] = rng.uniform();
                pb[i] = rng.uniform();
                sa += pa[i];
                sb += pb[i];
            }
            for (int i = 0; i < 32; ++i) {
                pa[i] /= sa;
                pb[i] /= sb;
            }
            Histogram a = from_probs(pa), b = from_probs(pb);
            if (kl_sym(a, b) != kl_sym(b, a) || jsd(a, b) != jsd(b, a) ||
                chi2(a, b) != chi2(b, a) || bhattacharyya(a, b) != bhattacharyya(b, a) ||
                emd(a, b) != emd(b, a))
                ok = false;
        }
        s.check(ok, "symmetric metrics are exactly swap-invariant");
    }

    {
        Histogram ht = from_probs({0.5, 0.5, 0.0});
        Histogram hs = from_probs({0.25, 0.5, 0.25});
        s.check(std::abs(kl(ht, hs) - 0.34657359027997264) <= 1e-6,
                "hand value: kl = 0.5 ln 2", format_g17(kl(ht, hs)));
        Histogram h2t = from_probs({0.5, 0.5});
        Histogram h2s = from_probs({1.0, 0.0});
        s.check(std::abs(chi2(h2t, h2s) - 2.0 / 3.0) <= 1e-6, "hand value: chi2 = 2/3",
                format_g17(chi2(h2t, h2s)));
        Histogram e1 = from_probs({0.5, 0.5, 0.0});
        Histogram e2 = from_probs({0.0, 0.5, 0.5});
        s.check(std::abs(emd(e1, e2) - 1.0) <= 1e-6, "hand value: emd = 1",
                format_g17(emd(e1, e2)));
        s.check(kl(ht, hs) != kl(hs, ht), "asymmetry witness: kl directions differ",
                format_g17(kl(ht, hs)) + " vs " + format_g17(kl(hs, ht)));
    }

    return s.finish(5.0);
}

// ---- group: nn ----

int run_nn() {
    using namespace ugwt::nn;
    Suite s;

    {
        Rng rng(23);
        auto batch_of = [&](const ModelSpec& spec, int n) {
            Act a(n, spec.input_shape());
            for (double& v : a.v) v = 2.0 * rng.uniform() - 1.0;
            return a;
        };
        auto targets_of = [&](int n) {
            std::vector<double> t(n);
            for (double& v : t) v = rng.uniform();
            return t;
        };
        struct Case {
            const char* name;
            ModelSpec spec;
            double eps;
        };
        // batchnorm-bearing cases use a larger probe step: the conv bias
        // gradient behind batchnorm is identically zero and the 1e-5 step's
        // roundoff would swamp the 1e-8 relative floor
        std::vector<Case> cases;
        cases.push_back({"conv", ModelSpec::chain({LayerSpec::input(3, 12),
                                                   LayerSpec::conv(2, 3, 3, 1, 2),
                                                   LayerSpec::fc(1), LayerSpec::regression()}),
                         1e-5});
        cases.push_back({"batchnorm",
                         ModelSpec::chain({LayerSpec::input(2, 6), LayerSpec::conv(1, 2, 2),
                                           LayerSpec::batchnorm(), LayerSpec::fc(1),
                                           LayerSpec::regression()}),
                         1e-3});
        cases.push_back({"relu+maxpool",
                         ModelSpec::chain({LayerSpec::input(2, 12), LayerSpec::conv(1, 3, 2),
                                           LayerSpec::relu(), LayerSpec::maxpool(2, 3, 1, 2),
                                           LayerSpec::fc(1), LayerSpec::regression()}),
                         1e-5});
        cases.push_back({"sigmoid+fc",
                         ModelSpec::chain({LayerSpec::input(1, 8), LayerSpec::fc(6),
                                           LayerSpec::sigmoid(), LayerSpec::fc(1),
                                           LayerSpec::regression()}),
                         1e-5});
        cases.push_back({"dropout",
                         ModelSpec::chain({LayerSpec::input(2, 6), LayerSpec::dropout(0.3),
                                           LayerSpec::fc(1), LayerSpec::regression()}),
                         1e-5});
        cases.push_back({"type-3 micro", build_type(3, 3, 20), 1e-4});
        double worst = 0.0;
        std::string worst_name = "none";
        for (auto& c : cases) {
            TrainedModel m = init_model(c.spec, 31);
            Act batch = batch_of(c.spec, 4);
            const std::vector<double> targets = targets_of(4);
            const double err = gradient_check(m, batch, targets, c.eps);
            if (err > worst) {
                worst = err;
                worst_name = c.name;
            }
        }
        s.check(worst < 1e-4, "finite-difference gradient check across layer types",
                "max relative error " + format_g17(worst) + " (" + worst_name + ")");
    }

    {
        std::vector<double> w = {1.0}, m = {0.0}, v = {0.0};
        const std::vector<double> g = {2.0};
        adam_update(w, g, m, v, 1, 1e-3, 0.9, 0.999, 1e-8);
        s.check(std::abs(w[0] - 0.999) <= 1e-9, "adam hand step: w 1 -> 0.999",
                format_g17(w[0]));
    }

    {
        ModelSpec spec = build_type(1, 7, 10568);
        s.check(spec.out_shapes[1].w == 3521, "type-1 first conv width on 7x10568 is 3521",
                std::to_string(spec.out_shapes[1].w));
        bool threw = false;
        std::string msg;
        try {
            build_type(2, 7, 8);
        } catch (const ConfigError& e) {
            threw = true;
            msg = e.what();
        }
        s.check(threw && msg.find("layer") != std::string::npos,
                "undersized input fails construction naming the layer", msg);
    }

    {
        Rng rng(41);
        ModelSpec spec = build_type(3, 2, 30);
        std::vector<Matrix> imgs;
        std::vector<double> targets;
        for (int i = 0; i < 24; ++i) {
            Matrix m(2, 30);
            double acc = 0.0;
            for (double& v : m.v) {
                v = 2.0 * rng.uniform() - 1.0;
                acc += v;
            }
            imgs.push_back(std::move(m));
            targets.push_back(0.5 + acc / 120.0);
        }
        SampleSet set;
        for (const Matrix& m : imgs) set.images.push_back(&m);
        set.targets = targets;

        TrainConfig cfg;
        cfg.seed = 3;
        cfg.max_epochs = 31;
        cfg.batch_size = 8;
        cfg.early_stop_patience = 31;
        TrainedModel base = train(spec, set, set, cfg);
        const bool lr_ok = base.history.size() == 31 &&
                           base.history[0].lr == 1e-3 &&
                           std::abs(base.history[15].lr - 1e-4) < 1e-18 &&
                           std::abs(base.history[30].lr - 1e-5) < 1e-19;
        s.check(lr_ok, "lr schedule: 1e-4 at epoch 16, 1e-5 at epoch 31");

        TrainConfig ft_cfg = cfg;
        ft_cfg.max_epochs = 6;
        TrainedModel ft = finetune(base, set, set, ft_cfg);
        int last_dropout = -1;
        for (std::size_t i = 0; i < spec.layers.size(); ++i)
            if (spec.layers[i].kind == LayerKind::dropout)
                last_dropout = static_cast<int>(i);
        bool frozen_ok = last_dropout > 0;
        for (int i = 0; i <= last_dropout && frozen_ok; ++i)
            frozen_ok = ft.params[i].w == base.params[i].w &&
                        ft.params[i].b == base.params[i].b &&
                        ft.params[i].gamma == base.params[i].gamma &&
                        ft.params[i].beta == base.params[i].beta &&
                        ft.params[i].run_mean == base.params[i].run_mean &&
                        ft.params[i].run_var == base.params[i].run_var;
        s.check(frozen_ok, "fine-tuning keeps the convolutional part bit-identical");
    }

    return s.finish(120.0);
}

// ---- group: e2e ----

constexpr std::uint64_t kReferenceSeed = 1001;

PlateScenario reference_scenario(char which, std::uint64_t seed) {
    PlateScenario sc = default_scenario();
    if (which == 'a') {
        sc.group_velocity = 5.0;
        sc.attenuation_coeff = 0.002;
        sc.material = "mat-a";
        sc.rng_seed = seed_mix(seed, "scenario-a");
    } else {
        sc.group_velocity = 3.5;
        sc.attenuation_coeff = 0.004;
        sc.material = "mat-b";
        sc.rng_seed = seed_mix(seed, "scenario-b");
    }
    return sc;
}

int run_e2e() {
    Suite s;

    // reference scenario: two synthetic materials, circular array, x10 copies
    {
        DomainDataset src =
            build_domain(reference_scenario('a', kReferenceSeed), NetworkTag::circular, 10);
        DomainDataset tgt =
            build_domain(reference_scenario('b', kReferenceSeed), NetworkTag::circular, 10);
        ExperimentConfig cfg;
        cfg.case_id = "reference";
        cfg.seed = kReferenceSeed;
        cfg.q_percent = 99.0;
        const ExperimentReport rep = run_procedure(src, tgt, cfg);

        const MetricsReport& m = rep.metrics_before;
        const bool gap = m.kl_t_s > 0 && m.kl_s_t > 0 && m.kl_sym > 0 && m.jsd > 0 &&
                         m.chi2 > 0 && m.bhattacharyya > 0 && m.emd > 0;
        s.check(gap, "reference: raw domain gap positive in all six metrics");
        s.check(rep.p2_after < 10568, "reference: retained components below 10568",
                std::to_string(rep.p2_after));

        bool finite = true;
        for (int i = 0; i < 4; ++i)
            finite = finite && std::isfinite(rep.rmse_full[i].x) &&
                     std::isfinite(rep.rmse_full[i].y);
        s.check(finite, "reference: all eight RMSE entries finite");

        std::ostringstream detail;
        for (int i = 0; i < 4; ++i) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "%s %.2f/%.2f  ",
                          model_name(static_cast<ModelId>(i)), rep.rmse_full[i].x,
                          rep.rmse_full[i].y);
            detail << buf;
        }
        const bool ordering = rep.rmse_full[3].x <= rep.rmse_full[2].x &&
                              rep.rmse_full[3].y <= rep.rmse_full[2].y &&
                              rep.rmse_full[2].x < rep.rmse_full[0].x &&
                              rep.rmse_full[2].y < rep.rmse_full[0].y;
        s.check(ordering, "reference: MPCA-FT <= FT and FT < S-CNN on both axes",
                detail.str());

        const ExperimentReport rerun = run_procedure(src, tgt, cfg);
        s.check(report_to_csv(rep) == report_to_csv(rerun), "reference: rerun bit-identical");
    }

    // identical-domain control (source = target)
    {
        PlateScenario sc = reference_scenario('a', kReferenceSeed);
        DomainDataset domain = build_domain(sc, NetworkTag::circular, 10);
        DomainDataset reduced =
            halve_target(domain, seed_mix(kReferenceSeed, "halve-target"));
        const MetricsReport m =
            compute_all(detail::flat_values(domain), detail::flat_values(reduced));
        const double worst = std::max({m.kl_t_s, m.kl_s_t, m.kl_sym, m.jsd, m.chi2,
                                       m.bhattacharyya, m.emd});
        s.check(worst <= 1e-3, "identical-domain control: all six metrics <= 1e-3",
                "max " + format_g17(worst));
    }

    // sensor-network adaptation smoke: circular source, rectangular target
    {
        PlateScenario sa = reference_scenario('a', kReferenceSeed + 1);
        PlateScenario sb = sa;
        sb.rng_seed = seed_mix(kReferenceSeed + 1, "scenario-rect");
        DomainDataset src = build_domain(sa, NetworkTag::circular, 3);
        DomainDataset tgt = build_domain(sb, NetworkTag::rectangular, 3);
        ExperimentConfig cfg;
        cfg.case_id = "circ-to-rect";
        cfg.seed = kReferenceSeed + 1;
        cfg.train.max_epochs = 12;
        cfg.finetune_train.max_epochs = 12;
        const ExperimentReport rep = run_procedure(src, tgt, cfg);
        bool finite = true;
        for (int i = 0; i < 4; ++i)
            finite = finite && std::isfinite(rep.rmse_full[i].x) &&
                     std::isfinite(rep.rmse_full[i].y);
        s.check(finite, "sensor-network smoke: circular-to-rectangular 4x2 RMSE block",
                std::to_string(rep.p2_after) + " components retained");
    }

    return s.finish(600.0);
}

// ---- group: determinism ----

int run_determinism() {
    Suite s;
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "ugwt_acceptance_det";
    fs::remove_all(dir);
    fs::create_directories(dir);

    auto slurp = [](const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        std::ostringstream os;
        os << is.rdbuf();
        return os.str();
    };

    {
        PlateScenario sc = default_scenario();
        sc.burst.fs = 1e6;
        sc.burst.n_samples = 200;
        sc.rng_seed = 5;
        DomainDataset ds = build_domain(sc, NetworkTag::circular, 2);
        save_dataset(dir / "d1", ds);
        DomainDataset back = load_dataset(dir / "d1");
        save_dataset(dir / "d2", back);
        const bool ok = slurp(dir / "d1" / "images.ugwt") == slurp(dir / "d2" / "images.ugwt") &&
                        slurp(dir / "d1" / "labels.csv") == slurp(dir / "d2" / "labels.csv") &&
                        slurp(dir / "d1" / "manifest.cfg") == slurp(dir / "d2" / "manifest.cfg");
        s.check(ok, "dataset bundle write-read-write is byte-identical");
    }

    {
        using namespace ugwt::nn;
        Rng rng(9);
        ModelSpec spec = build_type(3, 2, 24);
        std::vector<Matrix> imgs;
        SampleSet set;
        for (int i = 0; i < 10; ++i) {
            Matrix m(2, 24);
            for (double& v : m.v) v = rng.uniform();
            imgs.push_back(std::move(m));
        }
        for (const Matrix& m : imgs) set.images.push_back(&m);
        for (int i = 0; i < 10; ++i) set.targets.push_back(rng.uniform());
        TrainConfig cfg;
        cfg.seed = 2;
        cfg.max_epochs = 3;
        cfg.batch_size = 4;
        TrainedModel model = train(spec, set, set, cfg);
        save_model(dir / "m1.ckpt", model);
        TrainedModel back = load_model(dir / "m1.ckpt");
        save_model(dir / "m2.ckpt", back);
        s.check(slurp(dir / "m1.ckpt") == slurp(dir / "m2.ckpt"),
                "checkpoint write-read-write is byte-identical");
        s.check(predict(model, {&imgs[0]}) == predict(back, {&imgs[0]}),
                "loaded checkpoint reproduces predictions bit-exactly");
    }

    {
        PlateScenario sa = default_scenario();
        sa.burst.fs = 1e6;
        sa.burst.n_samples = 160;
        sa.rng_seed = 21;
        PlateScenario sb = sa;
        sb.group_velocity = 3.5;
        sb.rng_seed = 22;
        DomainDataset src = build_domain(sa, NetworkTag::circular, 2);
        DomainDataset tgt = build_domain(sb, NetworkTag::circular, 2);
        ExperimentConfig cfg;
        cfg.case_id = "threads";
        cfg.seed = 77;
        cfg.train.max_epochs = 3;
        cfg.train.batch_size = 8;
        cfg.finetune_train.max_epochs = 3;
        cfg.finetune_train.batch_size = 8;

        setenv("TDA_THREADS", "1", 1);
        RunArtifacts art1;
        const std::string rep1 = report_to_csv(run_procedure(src, tgt, cfg, &art1));
        const std::string preds1 = predictions_to_csv(art1);
        setenv("TDA_THREADS", "8", 1);
        RunArtifacts art8;
        const std::string rep8 = report_to_csv(run_procedure(src, tgt, cfg, &art8));
        const std::string preds8 = predictions_to_csv(art8);
        unsetenv("TDA_THREADS");
        s.check(rep1 == rep8 && preds1 == preds8,
                "TDA_THREADS=1 and =8 produce identical reports");
    }

    return s.finish(300.0);
}

} // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: %s <mpca|metrics|nn|e2e|determinism>\n", argv[0]);
        return 2;
    }
    const std::string group = argv[1];
    try {
        if (group == "mpca") return run_mpca();
        if (group == "metrics") return run_metrics();
        if (group == "nn") return run_nn();
        if (group == "e2e") return run_e2e();
        if (group == "determinism") return run_determinism();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "[FAIL] unexpected exception: %s\n", e.what());
        return 1;
    }
    std::fprintf(stderr, "unknown group '%s'\n", group.c_str());
    return 2;
}
