#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ugwt/nn.hpp"

using namespace ugwt;
using namespace ugwt::nn;

namespace {

Act batch_from(const std::vector<std::vector<double>>& samples, Shape3 shape) {
    Act a(static_cast<int>(samples.size()), shape);
    for (std::size_t s = 0; s < samples.size(); ++s)
        std::copy(samples[s].begin(), samples[s].end(), a.sample(static_cast<int>(s)));
    return a;
}

Act random_batch(int n, Shape3 shape, Rng& rng) {
    Act a(n, shape);
    for (double& v : a.v) v = 2.0 * rng.uniform() - 1.0;
    return a;
}

std::vector<double> random_targets(int n, Rng& rng) {
    std::vector<double> t(n);
    for (double& v : t) v = rng.uniform();
    return t;
}

SampleSet to_sample_set(const std::vector<Matrix>& images, const std::vector<double>& targets) {
    SampleSet s;
    for (const Matrix& m : images) s.images.push_back(&m);
    s.targets = targets;
    return s;
}

} // namespace

TEST_CASE("type-1 shape chain on the full-size image", "[nn]") {
    ModelSpec spec = build_type(1, 7, 10568);
    REQUIRE(spec.layers.size() == 28);
    CHECK(spec.out_shapes[1].w == 3521); // first conv, stride 3
    CHECK(spec.out_shapes[1].h == 7);
    CHECK(spec.out_shapes[1].c == 4);

    // audit: every conv/pool output obeys out = floor((in-k)/s)+1
    for (std::size_t i = 1; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        if (l.kind != LayerKind::conv2d && l.kind != LayerKind::maxpool) continue;
        const Shape3 in = spec.out_shapes[i - 1], out = spec.out_shapes[i];
        CHECK(out.h == (in.h - l.kh) / l.sh + 1);
        CHECK(out.w == (in.w - l.kw) / l.sw + 1);
    }

    // widths down the conv stack, then the flattened fan-in of the first fc
    const int want_w[7] = {3521, 1759, 877, 876, 437, 216, 215};
    int seen = 0;
    for (std::size_t i = 1; i < spec.layers.size(); ++i)
        if (spec.layers[i].kind == LayerKind::conv2d || spec.layers[i].kind == LayerKind::maxpool)
            CHECK(spec.out_shapes[i].w == want_w[seen++]);
    REQUIRE(seen == 7);
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
        if (spec.layers[i].kind == LayerKind::fully_connected) {
            CHECK(spec.out_shapes[i - 1].size() == 48160);
            break;
        }
}

TEST_CASE("type-3 narrow-input chain and fc ladder", "[nn]") {
    ModelSpec spec = build_type(3, 7, 119);
    CHECK(spec.out_shapes[1].h == 7);
    CHECK(spec.out_shapes[1].w == 38);
    std::vector<int> fc_units;
    for (const LayerSpec& l : spec.layers)
        if (l.kind == LayerKind::fully_connected) fc_units.push_back(l.units);
    CHECK(fc_units == std::vector<int>{20, 10, 5, 1});
}

TEST_CASE("undersized input fails construction naming the layer", "[nn]") {
    CHECK_THROWS_AS(build_type(2, 7, 8), ConfigError);
    try {
        build_type(2, 7, 8);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("layer") != std::string::npos);
        CHECK(std::string(e.what()).find("underflow") != std::string::npos);
    }
    CHECK_THROWS_AS(build_type(4, 7, 100), ConfigError);
}

TEST_CASE("eval-mode forward is deterministic and relu passes nonnegatives", "[nn]") {
    Rng rng(11);
    ModelSpec spec = ModelSpec::chain({LayerSpec::input(2, 5), LayerSpec::relu(),
                                       LayerSpec::fc(1), LayerSpec::regression()});
    TrainedModel m = init_model(spec, 3);
    Act batch = random_batch(4, spec.input_shape(), rng);
    ForwardOpts opts;
    ForwardCache c1, c2;
    const std::vector<double> p1 = forward(m, batch, opts, &c1);
    const std::vector<double> p2 = forward(m, batch, opts, &c2);
    CHECK(p1 == p2);

    // all-nonnegative activations pass relu unchanged
    Act pos(1, spec.input_shape());
    for (double& v : pos.v) v = rng.uniform();
    ForwardCache cache;
    forward(m, pos, opts, &cache);
    CHECK(cache.outputs[1].v == pos.v);
}

TEST_CASE("train-mode batchnorm emits zero-mean unit-variance channels", "[nn]") {
    Rng rng(13);
    ModelSpec spec = ModelSpec::chain({LayerSpec::input(3, 6, 2), LayerSpec::batchnorm(),
                                       LayerSpec::fc(1), LayerSpec::regression()});
    TrainedModel m = init_model(spec, 5);
    Act batch = random_batch(8, spec.input_shape(), rng);
    for (double& v : batch.v) v = 3.0 * v + 1.5; // non-trivial scale and offset
    ForwardOpts opts;
    opts.train = true;
    Rng drop(1);
    opts.dropout_rng = &drop;
    ForwardCache cache;
    forward(m, batch, opts, &cache);
    const Act& out = cache.outputs[1]; // gamma=1, beta=0 at init
    const std::size_t plane = 18;
    for (int c = 0; c < 2; ++c) {
        double mean = 0.0, var = 0.0;
        for (int s = 0; s < 8; ++s) {
            const double* row = out.sample(s) + c * plane;
            for (std::size_t j = 0; j < plane; ++j) mean += row[j];
        }
        mean /= 8.0 * plane;
        for (int s = 0; s < 8; ++s) {
            const double* row = out.sample(s) + c * plane;
            for (std::size_t j = 0; j < plane; ++j) var += (row[j] - mean) * (row[j] - mean);
        }
        var /= 8.0 * plane;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("zero loss gives identically zero gradients", "[nn]") {
    Rng rng(17);
    ModelSpec spec = ModelSpec::chain({LayerSpec::input(2, 8), LayerSpec::conv(1, 3, 2),
                                       LayerSpec::relu(), LayerSpec::fc(1),
                                       LayerSpec::regression()});
    TrainedModel m = init_model(spec, 7);
    Act batch = random_batch(3, spec.input_shape(), rng);
    ForwardOpts opts;
    opts.train = true;
    Rng drop(1);
    opts.dropout_rng = &drop;
    ForwardCache cache;
    const std::vector<double> preds = forward(m, batch, opts, &cache);
    const Gradients grads = backward(m, cache, preds); // targets == predictions
    CHECK(grads.loss == 0.0);
    for (const LayerParams& g : grads.g) {
        for (double v : g.w) CHECK(v == 0.0);
        for (double v : g.b) CHECK(v == 0.0);
        for (double v : g.gamma) CHECK(v == 0.0);
        for (double v : g.beta) CHECK(v == 0.0);
    }
}

TEST_CASE("frozen layers get zero parameter gradients, others do not", "[nn]") {
    Rng rng(19);
    ModelSpec spec = ModelSpec::chain({LayerSpec::input(2, 10), LayerSpec::conv(1, 3, 2),
                                       LayerSpec::relu(), LayerSpec::dropout(0.2),
                                       LayerSpec::fc(4), LayerSpec::sigmoid(), LayerSpec::fc(1),
                                       LayerSpec::regression()});
    TrainedModel m = init_model(spec, 11);
    m.frozen[1] = true; // the conv layer
    Act batch = random_batch(4, spec.input_shape(), rng);
    ForwardOpts opts;
    opts.train = true;
    opts.disable_dropout = true;
    Rng drop(1);
    opts.dropout_rng = &drop;
    ForwardCache cache;
    forward(m, batch, opts, &cache);
    const std::vector<double> targets = random_targets(4, rng);
    const Gradients grads = backward(m, cache, targets);
    for (double v : grads.g[1].w) CHECK(v == 0.0);
    for (double v : grads.g[1].b) CHECK(v == 0.0);
    double fc_mag = 0.0;
    for (double v : grads.g[4].w) fc_mag += std::abs(v);
    CHECK(fc_mag > 0.0);
}

TEST_CASE("gradient check: exactly representable linear model", "[nn]") {
    ModelSpec spec = ModelSpec::chain(
        {LayerSpec::input(1, 1), LayerSpec::fc(1), LayerSpec::regression()});
    TrainedModel m = init_model(spec, 1);
    m.params[1].w[0] = 0.75;
    m.params[1].b[0] = 0.0;
    Act batch = batch_from({{2.0}, {-1.0}}, spec.input_shape());
    const std::vector<double> targets = {1.0, 0.5};
    const double err = gradient_check(m, batch, targets);
    CHECK(err < 1e-9);
}

TEST_CASE("gradient check covers every layer type", "[nn]") {
    Rng rng(23);
    struct Case {
        const char* name;
        ModelSpec spec;
    };
    std::vector<Case> cases;
    cases.push_back({"conv-strided",
                     ModelSpec::chain({LayerSpec::input(3, 12), LayerSpec::conv(2, 3, 3, 1, 2),
                                       LayerSpec::fc(1), LayerSpec::regression()})});
    cases.push_back({"batchnorm",
                     ModelSpec::chain({LayerSpec::input(2, 6), LayerSpec::conv(1, 2, 2),
                                       LayerSpec::batchnorm(), LayerSpec::fc(1),
                                       LayerSpec::regression()})});
    cases.push_back({"relu",
                     ModelSpec::chain({LayerSpec::input(2, 6), LayerSpec::conv(1, 2, 2),
                                       LayerSpec::relu(), LayerSpec::fc(1),
                                       LayerSpec::regression()})});
    cases.push_back({"sigmoid-stack",
                     ModelSpec::chain({LayerSpec::input(1, 8), LayerSpec::fc(6),
                                       LayerSpec::sigmoid(), LayerSpec::fc(4),
                                       LayerSpec::sigmoid(), LayerSpec::fc(1),
                                       LayerSpec::regression()})});
    cases.push_back({"maxpool",
                     ModelSpec::chain({LayerSpec::input(2, 12), LayerSpec::conv(1, 3, 2),
                                       LayerSpec::maxpool(2, 3, 1, 2), LayerSpec::fc(1),
                                       LayerSpec::regression()})});
    cases.push_back({"dropout-disabled",
                     ModelSpec::chain({LayerSpec::input(2, 6), LayerSpec::dropout(0.3),
                                       LayerSpec::fc(1), LayerSpec::regression()})});
    for (auto& c : cases) {
        TrainedModel m = init_model(c.spec, 31);
        Act batch = random_batch(5, c.spec.input_shape(), rng);
        const std::vector<double> targets = random_targets(5, rng);
        // behind batchnorm the conv bias gradient vanishes identically; a
        // larger probe step keeps the finite-difference roundoff on those
        // zero gradients below the threshold
        const double eps = std::string(c.name) == "batchnorm" ? 1e-3 : 1e-5;
        const double err = gradient_check(m, batch, targets, eps);
        INFO(c.name);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("gradient check on a full type-3 micro instance", "[nn]") {
    Rng rng(29);
    ModelSpec spec = build_type(3, 3, 20);
    TrainedModel m = init_model(spec, 41);
    Act batch = random_batch(4, spec.input_shape(), rng);
    const std::vector<double> targets = random_targets(4, rng);
    const double err = gradient_check(m, batch, targets, 1e-4);
    CHECK(err < 1e-4);
}

TEST_CASE("adam: hand step, zero-gradient decay", "[nn]") {
    // single weight, f(w) = w^2 at w=1: mhat=2, vhat=4, step = lr*2/(2+eps)
    std::vector<double> w = {1.0}, m = {0.0}, v = {0.0};
    const std::vector<double> g = {2.0};
    adam_update(w, g, m, v, 1, 1e-3, 0.9, 0.999, 1e-8);
    CHECK(std::abs(w[0] - 0.999) < 1e-9);

    // zero gradient from zero state leaves the parameter alone
    std::vector<double> w2 = {0.5}, m2 = {0.0}, v2 = {0.0};
    const std::vector<double> zero = {0.0};
    adam_update(w2, zero, m2, v2, 1, 1e-3, 0.9, 0.999, 1e-8);
    CHECK(w2[0] == 0.5);
    // moments decay under zero gradients
    std::vector<double> m3 = {1.0}, v3 = {1.0}, w3 = {0.0};
    adam_update(w3, zero, m3, v3, 5, 1e-3, 0.9, 0.999, 1e-8);
    CHECK(m3[0] == Catch::Approx(0.9));
    CHECK(v3[0] == Catch::Approx(0.999));

    std::vector<double> long_g = {0.0, 0.0};
    CHECK_THROWS_AS(adam_update(w2, long_g, m2, v2, 1, 1e-3, 0.9, 0.999, 1e-8), ShapeError);
}

namespace {
// tiny dataset: 1x6 images, target = mean of the pixels (plus optional flip)
std::vector<Matrix> toy_images(int n, Rng& rng) {
    std::vector<Matrix> imgs;
    for (int i = 0; i < n; ++i) {
        Matrix m(1, 6);
        for (double& v : m.v) v = rng.uniform();
        imgs.push_back(std::move(m));
    }
    return imgs;
}
std::vector<double> mean_targets(const std::vector<Matrix>& imgs, bool flipped) {
    std::vector<double> t;
    for (const Matrix& m : imgs) {
        double s = 0.0;
        for (double v : m.v) s += v;
        s /= static_cast<double>(m.v.size());
        t.push_back(flipped ? 1.0 - s : s);
    }
    return t;
}
} // namespace

TEST_CASE("training fits a constant target through the bias", "[nn]") {
    Rng rng(37);
    std::vector<Matrix> imgs = toy_images(50, rng);
    std::vector<double> targets(50, 0.5);
    SampleSet train_set = to_sample_set(imgs, targets);

    ModelSpec spec = ModelSpec::chain({LayerSpec::input(1, 6), LayerSpec::fc(4),
                                       LayerSpec::sigmoid(), LayerSpec::fc(1),
                                       LayerSpec::regression()});
    TrainConfig cfg;
    cfg.seed = 2;
    cfg.lr = 0.1;       // toy-set scale: the optimizer needs enough travel
    cfg.batch_size = 5; // and enough steps before the schedule decays
    TrainedModel m = train(spec, train_set, SampleSet{}, cfg);
    REQUIRE(!m.history.empty());
    CHECK(m.history.back().train_loss < 1e-4);
    CHECK(m.history.size() <= 50);
}

TEST_CASE("step decay hits 1e-4 at epoch 16 and 1e-5 at epoch 31", "[nn]") {
    Rng rng(43);
    std::vector<Matrix> imgs = toy_images(8, rng);
    SampleSet train_set = to_sample_set(imgs, mean_targets(imgs, false));
    ModelSpec spec = ModelSpec::chain(
        {LayerSpec::input(1, 6), LayerSpec::fc(1), LayerSpec::regression()});
    TrainConfig cfg;
    cfg.seed = 3;
    cfg.max_epochs = 31;
    TrainedModel m = train(spec, train_set, SampleSet{}, cfg);
    REQUIRE(m.history.size() == 31);
    CHECK(m.history[0].lr == Catch::Approx(1e-3));
    CHECK(m.history[14].lr == Catch::Approx(1e-3));
    CHECK(m.history[15].lr == Catch::Approx(1e-4)); // epoch 16
    CHECK(m.history[29].lr == Catch::Approx(1e-4));
    CHECK(m.history[30].lr == Catch::Approx(1e-5)); // epoch 31
}

TEST_CASE("early stopping fires when validation fights the training set", "[nn]") {
    Rng rng(47);
    std::vector<Matrix> tr = toy_images(30, rng);
    std::vector<Matrix> va = toy_images(12, rng);
    SampleSet train_set = to_sample_set(tr, mean_targets(tr, false));
    SampleSet val_set = to_sample_set(va, mean_targets(va, true)); // opposite mapping
    ModelSpec spec = ModelSpec::chain({LayerSpec::input(1, 6), LayerSpec::fc(4),
                                       LayerSpec::sigmoid(), LayerSpec::fc(1),
                                       LayerSpec::regression()});
    TrainConfig cfg;
    cfg.seed = 5;
    cfg.lr = 0.02;
    TrainedModel m = train(spec, train_set, val_set, cfg);
    CHECK(m.early_stopped);
    CHECK(m.history.size() < 50);
}

TEST_CASE("training is bit-reproducible under a fixed seed", "[nn]") {
    Rng rng(53);
    std::vector<Matrix> imgs = toy_images(24, rng);
    std::vector<Matrix> val_imgs = toy_images(8, rng);
    SampleSet train_set = to_sample_set(imgs, mean_targets(imgs, false));
    SampleSet val_set = to_sample_set(val_imgs, mean_targets(val_imgs, false));
    ModelSpec spec = ModelSpec::chain({LayerSpec::input(1, 6), LayerSpec::dropout(0.2),
                                       LayerSpec::fc(4), LayerSpec::sigmoid(), LayerSpec::fc(1),
                                       LayerSpec::regression()});
    TrainConfig cfg;
    cfg.seed = 7;
    cfg.max_epochs = 12;
    TrainedModel a = train(spec, train_set, val_set, cfg);
    TrainedModel b = train(spec, train_set, val_set, cfg);
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        REQUIRE(a.params[i].w == b.params[i].w);
        REQUIRE(a.params[i].b == b.params[i].b);
        REQUIRE(a.params[i].gamma == b.params[i].gamma);
        REQUIRE(a.params[i].run_mean == b.params[i].run_mean);
    }
}

TEST_CASE("divergent loss raises a numeric error", "[nn]") {
    Rng rng(59);
    std::vector<Matrix> imgs = toy_images(10, rng);
    std::vector<double> absurd(10, 1e200);
    SampleSet train_set = to_sample_set(imgs, absurd);
    ModelSpec spec = ModelSpec::chain(
        {LayerSpec::input(1, 6), LayerSpec::fc(1), LayerSpec::regression()});
    TrainConfig cfg;
    cfg.seed = 1;
    CHECK_THROWS_AS(train(spec, train_set, SampleSet{}, cfg), NumericError);
    CHECK_THROWS_AS(train(spec, SampleSet{}, SampleSet{}, cfg), ConfigError);
}

TEST_CASE("fine-tuning freezes the convolutional part bit-exactly", "[nn]") {
    Rng rng(61);
    ModelSpec spec = build_type(3, 2, 24);
    std::vector<Matrix> src_imgs, tgt_imgs, val_imgs;
    auto fill = [&](std::vector<Matrix>& dst, int n, double vel) {
        for (int i = 0; i < n; ++i) {
            Matrix m(2, 24);
            for (double& v : m.v) v = std::sin(vel * rng.uniform()) * 0.8;
            dst.push_back(std::move(m));
        }
    };
    fill(src_imgs, 30, 1.0);
    fill(tgt_imgs, 20, 2.5);
    fill(val_imgs, 8, 2.5);

    SampleSet src = to_sample_set(src_imgs, mean_targets(src_imgs, false));
    SampleSet tgt = to_sample_set(tgt_imgs, mean_targets(tgt_imgs, true));
    SampleSet val = to_sample_set(val_imgs, mean_targets(val_imgs, true));

    TrainConfig cfg;
    cfg.seed = 11;
    cfg.max_epochs = 15;
    cfg.lr = 0.01;
    TrainedModel base = train(spec, src, val, cfg);

    // zero-epoch fine-tune returns the parameters untouched
    TrainConfig zero = cfg;
    zero.max_epochs = 0;
    TrainedModel unchanged = finetune(base, tgt, val, zero);
    for (std::size_t i = 0; i < base.params.size(); ++i)
        REQUIRE(unchanged.params[i].w == base.params[i].w);

    TrainedModel ft = finetune(base, tgt, val, cfg);
    // conv part (everything up to the last dropout) is bit-identical
    int last_dropout = -1;
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
        if (spec.layers[i].kind == LayerKind::dropout) last_dropout = static_cast<int>(i);
    REQUIRE(last_dropout > 0);
    for (int i = 0; i <= last_dropout; ++i) {
        REQUIRE(ft.params[i].w == base.params[i].w);
        REQUIRE(ft.params[i].b == base.params[i].b);
        REQUIRE(ft.params[i].gamma == base.params[i].gamma);
        REQUIRE(ft.params[i].beta == base.params[i].beta);
        REQUIRE(ft.params[i].run_mean == base.params[i].run_mean);
        REQUIRE(ft.params[i].run_var == base.params[i].run_var);
    }

    // the head adapted to the target mapping
    TrainedModel base_copy = base;
    const double before = evaluate_mse(base_copy, val);
    TrainedModel ft_copy = ft;
    const double after = evaluate_mse(ft_copy, val);
    CHECK(after < before);
}

TEST_CASE("position prediction denormalizes by the plate dims", "[nn]") {
    ModelSpec spec = ModelSpec::chain(
        {LayerSpec::input(2, 4), LayerSpec::fc(1), LayerSpec::regression()});
    TrainedModel mx = init_model(spec, 1), my = init_model(spec, 2);
    for (auto* m : {&mx, &my}) {
        std::fill(m->params[1].w.begin(), m->params[1].w.end(), 0.0);
        m->params[1].b[0] = 0.5;
    }
    Matrix img(2, 4);
    const auto [x, y] = predict_position(mx, my, img);
    CHECK(x == Catch::Approx(100.0));
    CHECK(y == Catch::Approx(150.0));

    // denormalization round trip against the raw network output
    Rng rng(67);
    TrainedModel rx = init_model(spec, 3), ry = init_model(spec, 4);
    Matrix rnd(2, 4);
    for (double& v : rnd.v) v = rng.uniform();
    const auto [px, py] = predict_position(rx, ry, rnd);
    CHECK(px / 200.0 == Catch::Approx(predict(rx, {&rnd})[0]));
    CHECK(py / 300.0 == Catch::Approx(predict(ry, {&rnd})[0]));
}
