// ugwt: synthesize guided-wave datasets, audit domain distances, fit the
// shared mode-2 projection, train/fine-tune the regression CNNs, and run the
// full adaptation experiment.
//
// Exit codes: 0 success, 2 configuration or I/O problem, 3 shape mismatch,
// 4 numeric failure (divergence, no convergence).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>

#include "ugwt/bundle.hpp"
#include "ugwt/config.hpp"
#include "ugwt/metrics.hpp"
#include "ugwt/mpca.hpp"
#include "ugwt/pipeline.hpp"
#include "ugwt/signal.hpp"

namespace fs = std::filesystem;
using namespace ugwt;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw ConfigError("cannot open for writing: " + path.string());
    os << text;
    if (!os) throw ConfigError("write failed: " + path.string());
}

std::string metrics_csv(const MetricsReport& m) {
    std::ostringstream os;
    os << "kl_t_s,kl_s_t,kl_sym,jsd,chi2,bhattacharyya,emd\n";
    os << format_g17(m.kl_t_s) << "," << format_g17(m.kl_s_t) << "," << format_g17(m.kl_sym)
       << "," << format_g17(m.jsd) << "," << format_g17(m.chi2) << ","
       << format_g17(m.bhattacharyya) << "," << format_g17(m.emd) << "\n";
    return os.str();
}

std::string metrics_block(const MetricsReport& m) {
    std::ostringstream os;
    os << "kl_t_s = " << format_g17(m.kl_t_s) << "\n";
    os << "kl_s_t = " << format_g17(m.kl_s_t) << "\n";
    os << "kl_sym = " << format_g17(m.kl_sym) << "\n";
    os << "jsd = " << format_g17(m.jsd) << "\n";
    os << "chi2 = " << format_g17(m.chi2) << "\n";
    os << "bhattacharyya = " << format_g17(m.bhattacharyya) << "\n";
    os << "emd = " << format_g17(m.emd) << "\n";
    return os.str();
}

std::vector<double> dataset_values(const DomainDataset& ds) {
    std::vector<double> v;
    for (const Matrix& m : ds.images) v.insert(v.end(), m.v.begin(), m.v.end());
    return v;
}

nn::SampleSet axis_set(const DomainDataset& ds, char axis) {
    nn::SampleSet s;
    const double denom = axis == 'x' ? ds.plate_w : ds.plate_h;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        s.images.push_back(&ds.images[i]);
        s.targets.push_back(ds.labels[i][axis == 'x' ? 0 : 1] / denom);
    }
    return s;
}

struct TrainFlags {
    std::uint64_t seed = 0;
    double lr = 1e-3;
    int batch_size = 25;
    int max_epochs = 50;
    int patience = 5;
    double train_frac = 0.7, val_frac = 0.15, test_frac = 0.15;

    void attach(CLI::App* cmd) {
        cmd->add_option("--seed", seed, "master seed");
        cmd->add_option("--lr", lr, "initial learning rate");
        cmd->add_option("--batch-size", batch_size, "mini-batch size");
        cmd->add_option("--max-epochs", max_epochs, "epoch cap");
        cmd->add_option("--patience", patience, "early-stop patience (epochs)");
        cmd->add_option("--train-frac", train_frac, "training fraction");
        cmd->add_option("--val-frac", val_frac, "validation fraction");
        cmd->add_option("--test-frac", test_frac, "test fraction");
    }

    nn::TrainConfig config() const {
        nn::TrainConfig cfg;
        cfg.seed = seed;
        cfg.lr = lr;
        cfg.batch_size = batch_size;
        cfg.max_epochs = max_epochs;
        cfg.early_stop_patience = patience;
        return cfg;
    }
    SplitSpec split_spec() const { return SplitSpec{train_frac, val_frac, test_frac, seed}; }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"guided-wave transfer-learning toolkit"};
    app.require_subcommand(1);
    std::function<void()> action;

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "synthesize a labelled dataset bundle");
    struct {
        std::string config, out;
        std::uint64_t seed = 0;
        int copies = 0;
        bool has_seed = false, has_copies = false;
    } sy;
    synth->add_option("--config", sy.config, "scenario file")->required();
    synth->add_option("--out", sy.out, "output bundle directory")->required();
    synth->add_option("--seed", sy.seed, "override the scenario seed")
        ->each([&](const std::string&) { sy.has_seed = true; });
    synth->add_option("--copies", sy.copies, "override the augmentation factor")
        ->each([&](const std::string&) { sy.has_copies = true; });
    synth->callback([&] {
        action = [&] {
            KvConfig kv = KvConfig::parse_file(sy.config);
            ScenarioConfig sc = scenario_from_kv(kv);
            if (sy.has_seed) sc.scenario.rng_seed = sy.seed;
            if (sy.has_copies) sc.copies = sy.copies;
            DomainDataset ds = build_domain(sc.scenario, sc.network, sc.copies);
            save_dataset(sy.out, ds);
            std::cout << "wrote " << ds.size() << " images ("
                      << ds.images.front().rows << "x" << ds.images.front().cols << ", "
                      << ds.distinct_sites().size() << " sites, "
                      << to_string(ds.network) << ", material " << ds.material << ") to "
                      << sy.out << "\n";
        };
    });

    // ---- metrics ----
    auto* met = app.add_subcommand("metrics", "distribution distances between two bundles");
    struct {
        std::string source, target, out;
        int bins = 200;
    } me;
    met->add_option("--source", me.source, "source dataset bundle")->required();
    met->add_option("--target", me.target, "target dataset bundle")->required();
    met->add_option("--out", me.out, "output CSV path")->required();
    met->add_option("--bins", me.bins, "histogram bin count");
    met->callback([&] {
        action = [&] {
            const DomainDataset a = load_dataset(me.source);
            const DomainDataset b = load_dataset(me.target);
            const MetricsReport m =
                compute_all(dataset_values(a), dataset_values(b), me.bins);
            write_text(me.out, metrics_csv(m));
            std::cout << metrics_block(m);
        };
    });

    // ---- mpca ----
    auto* mp = app.add_subcommand("mpca", "fit the joint mode-2 basis and project both bundles");
    struct {
        std::string source, target, out;
        double q = 99.0;
    } mc;
    mp->add_option("--source", mc.source, "source dataset bundle")->required();
    mp->add_option("--target", mc.target, "target dataset bundle")->required();
    mp->add_option("--out", mc.out, "output directory")->required();
    mp->add_option("--q", mc.q, "variance retention percentage");
    mp->callback([&] {
        action = [&] {
            const DomainDataset a = load_dataset(mc.source);
            const DomainDataset b = load_dataset(mc.target);
            const Tensor3 ta = stack(a.images), tb = stack(b.images);
            const JointFitResult fit = fit_joint(ta, tb, mc.q);

            double recon_err = 0.0;
            for (const auto& [orig, proj] :
                 {std::pair{&ta, &fit.projected_source}, std::pair{&tb, &fit.projected_target}}) {
                const Tensor3 rec = reconstruct(*proj, fit.basis);
                for (std::size_t i = 0; i < rec.v.size(); ++i)
                    recon_err = std::max(recon_err, std::abs(rec.v[i] - orig->v[i]));
            }

            fs::create_directories(mc.out);
            save_basis(fs::path(mc.out) / "basis", fit.basis);
            auto projected = [&](const DomainDataset& src, const Tensor3& t) {
                DomainDataset out = src.meta_clone();
                out.stage = Stage::projected;
                for (int k = 0; k < t.i3; ++k)
                    out.push(slice(t, k), src.labels[k][0], src.labels[k][1], src.site_ids[k]);
                return out;
            };
            save_dataset(fs::path(mc.out) / "proj_source", projected(a, fit.projected_source));
            save_dataset(fs::path(mc.out) / "proj_target", projected(b, fit.projected_target));
            std::ostringstream sum;
            sum << "q_percent = " << format_g17(mc.q) << "\n";
            sum << "i2 = " << fit.basis.i2() << "\n";
            sum << "p2 = " << fit.p2 << "\n";
            sum << "retained_fraction = " << format_g17(fit.basis.retained_fraction) << "\n";
            sum << "max_reconstruction_error = " << format_g17(recon_err) << "\n";
            write_text(fs::path(mc.out) / "summary.cfg", sum.str());
            std::cout << sum.str();
        };
    });

    // ---- train ----
    auto* tr = app.add_subcommand("train", "train a coordinate head from scratch");
    struct {
        std::string bundle, out;
        std::string axis = "x";
        int type = 1;
    } tc;
    TrainFlags tr_flags;
    tr->add_option("--bundle", tc.bundle, "dataset bundle")->required();
    tr->add_option("--axis", tc.axis, "x or y")->check(CLI::IsMember({"x", "y"}));
    tr->add_option("--type", tc.type, "architecture (1, 2 or 3)")
        ->check(CLI::IsMember({1, 2, 3}));
    tr->add_option("--out", tc.out, "checkpoint path")->required();
    tr_flags.attach(tr);
    tr->callback([&] {
        action = [&] {
            const DomainDataset ds = load_dataset(tc.bundle);
            const SplitResult parts = split(ds, tr_flags.split_spec());
            const nn::ModelSpec spec = nn::build_type(tc.type, ds.images.front().rows,
                                                      ds.images.front().cols);
            nn::TrainedModel model =
                nn::train(spec, axis_set(parts.train, tc.axis[0]),
                          parts.val.size() ? axis_set(parts.val, tc.axis[0]) : nn::SampleSet{},
                          tr_flags.config());
            save_model(tc.out, model);
            std::cout << "trained " << model.history.size() << " epochs"
                      << (model.early_stopped ? " (early stop)" : "") << ", checkpoint at "
                      << tc.out << "\n";
        };
    });

    // ---- finetune ----
    auto* ft = app.add_subcommand("finetune", "feedforward-only adaptation of a checkpoint");
    struct {
        std::string model, bundle, out;
        std::string axis = "x";
    } fc;
    TrainFlags ft_flags;
    ft_flags.train_frac = 0.9;
    ft_flags.val_frac = 0.05;
    ft_flags.test_frac = 0.05;
    ft->add_option("--model", fc.model, "source checkpoint")->required();
    ft->add_option("--bundle", fc.bundle, "target dataset bundle")->required();
    ft->add_option("--axis", fc.axis, "x or y")->check(CLI::IsMember({"x", "y"}));
    ft->add_option("--out", fc.out, "output checkpoint path")->required();
    ft_flags.attach(ft);
    ft->callback([&] {
        action = [&] {
            const nn::TrainedModel base = load_model(fc.model);
            const DomainDataset ds = load_dataset(fc.bundle);
            const SplitResult parts = split(ds, ft_flags.split_spec());
            nn::TrainedModel model = nn::finetune(
                base, axis_set(parts.train, fc.axis[0]),
                parts.val.size() ? axis_set(parts.val, fc.axis[0]) : nn::SampleSet{},
                ft_flags.config());
            save_model(fc.out, model);
            std::cout << "fine-tuned " << model.history.size() << " epochs, checkpoint at "
                      << fc.out << "\n";
        };
    });

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "score a coordinate-head pair on a bundle");
    struct {
        std::string model_x, model_y, bundle, out, predictions;
    } ec;
    ev->add_option("--model-x", ec.model_x, "x-coordinate checkpoint")->required();
    ev->add_option("--model-y", ec.model_y, "y-coordinate checkpoint")->required();
    ev->add_option("--bundle", ec.bundle, "dataset bundle")->required();
    ev->add_option("--out", ec.out, "RMSE CSV path")->required();
    ev->add_option("--predictions", ec.predictions, "optional per-sample prediction CSV");
    ev->callback([&] {
        action = [&] {
            nn::TrainedModel mx = load_model(ec.model_x);
            nn::TrainedModel my = load_model(ec.model_y);
            const DomainDataset ds = load_dataset(ec.bundle);
            std::vector<const Matrix*> imgs;
            for (const Matrix& m : ds.images) imgs.push_back(&m);
            const std::vector<double> px = nn::predict(mx, imgs);
            const std::vector<double> py = nn::predict(my, imgs);
            std::vector<std::pair<double, double>> preds(imgs.size()), truth(imgs.size());
            for (std::size_t i = 0; i < imgs.size(); ++i) {
                preds[i] = {px[i] * ds.plate_w, py[i] * ds.plate_h};
                truth[i] = {ds.labels[i][0], ds.labels[i][1]};
            }
            const auto [ex, ey] = rmse(preds, truth);
            std::ostringstream os;
            os << "rmse_x_mm,rmse_y_mm,samples\n";
            os << format_g17(ex) << "," << format_g17(ey) << "," << imgs.size() << "\n";
            write_text(ec.out, os.str());
            if (!ec.predictions.empty()) {
                RunArtifacts art;
                for (std::size_t i = 0; i < preds.size(); ++i)
                    art.predictions.push_back({"pair", static_cast<int>(i), ds.site_ids[i],
                                               truth[i].first, truth[i].second,
                                               preds[i].first, preds[i].second});
                write_text(ec.predictions, predictions_to_csv(art));
            }
            std::cout << "rmse_x = " << format_g17(ex) << " mm, rmse_y = " << format_g17(ey)
                      << " mm over " << imgs.size() << " samples\n";
        };
    });

    // ---- run ----
    auto* run = app.add_subcommand("run", "run the full adaptation experiment");
    struct {
        std::string config, out;
        std::uint64_t seed = 0;
        double q = 0.0;
        bool has_seed = false, has_q = false, paper_split = false;
    } rc;
    run->add_option("--config", rc.config, "experiment file")->required();
    run->add_option("--out", rc.out, "output directory")->required();
    run->add_option("--seed", rc.seed, "override the experiment seed")
        ->each([&](const std::string&) { rc.has_seed = true; });
    run->add_option("--q", rc.q, "override the variance retention percentage")
        ->each([&](const std::string&) { rc.has_q = true; });
    run->add_flag("--paper-split", rc.paper_split,
                  "split individual images instead of site groups");
    run->callback([&] {
        action = [&] {
            KvConfig kv = KvConfig::parse_file(rc.config);
            ExperimentFileConfig file = experiment_from_kv(kv);
            if (rc.has_seed) file.experiment.seed = rc.seed;
            if (rc.has_q) file.experiment.q_percent = rc.q;
            if (rc.paper_split) file.experiment.paper_split = true;

            const DomainDataset source = load_dataset(file.source_bundle);
            const DomainDataset target = load_dataset(file.target_bundle);

            RunArtifacts art;
            const ExperimentReport rep = run_procedure(source, target, file.experiment, &art);

            fs::create_directories(rc.out);
            write_text(fs::path(rc.out) / "report.csv", report_to_csv(rep));
            write_text(fs::path(rc.out) / "report.txt", report_to_text(rep));
            write_text(fs::path(rc.out) / "predictions.csv", predictions_to_csv(art));
            write_text(fs::path(rc.out) / "stage_log.txt", stage_log_to_text(rep));
            std::cout << report_to_text(rep);
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc_code = app.exit(e);
        return rc_code == 0 ? 0 : 2;
    }

    try {
        action();
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
