#ifndef UGWT_NN_HPP
#define UGWT_NN_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ugwt/common.hpp"
#include "ugwt/tensor.hpp"

namespace ugwt::nn {

enum class LayerKind {
    input,
    conv2d,
    batchnorm,
    relu,
    sigmoid,
    maxpool,
    dropout,
    fully_connected,
    regression
};

struct LayerSpec {
    LayerKind kind = LayerKind::input;
    int in_h = 0, in_w = 0, in_c = 1; // input
    int kh = 1, kw = 1;               // conv kernel / pool window
    int filters = 0;
    int sh = 1, sw = 1;               // strides
    double rate = 0.0;                // dropout
    int units = 0;                    // fully connected

    static LayerSpec input(int h, int w, int c = 1) {
        LayerSpec l;
        l.kind = LayerKind::input;
        l.in_h = h;
        l.in_w = w;
        l.in_c = c;
        return l;
    }
    static LayerSpec conv(int kh, int kw, int filters, int sh = 1, int sw = 1) {
        LayerSpec l;
        l.kind = LayerKind::conv2d;
        l.kh = kh;
        l.kw = kw;
        l.filters = filters;
        l.sh = sh;
        l.sw = sw;
        return l;
    }
    static LayerSpec batchnorm() { return with_kind(LayerKind::batchnorm); }
    static LayerSpec relu() { return with_kind(LayerKind::relu); }
    static LayerSpec sigmoid() { return with_kind(LayerKind::sigmoid); }
    static LayerSpec maxpool(int ph, int pw, int sh = 1, int sw = 1) {
        LayerSpec l;
        l.kind = LayerKind::maxpool;
        l.kh = ph;
        l.kw = pw;
        l.sh = sh;
        l.sw = sw;
        return l;
    }
    static LayerSpec dropout(double rate) {
        LayerSpec l;
        l.kind = LayerKind::dropout;
        l.rate = rate;
        return l;
    }
    static LayerSpec fc(int units) {
        LayerSpec l;
        l.kind = LayerKind::fully_connected;
        l.units = units;
        return l;
    }
    static LayerSpec regression() { return with_kind(LayerKind::regression); }

    std::string describe() const {
        switch (kind) {
            case LayerKind::input:
                return "input " + std::to_string(in_h) + "x" + std::to_string(in_w) + "x" +
                       std::to_string(in_c);
            case LayerKind::conv2d:
                return "conv " + std::to_string(kh) + "x" + std::to_string(kw) + " f" +
                       std::to_string(filters) + " s" + std::to_string(sh) + "x" +
                       std::to_string(sw);
            case LayerKind::batchnorm: return "batchnorm";
            case LayerKind::relu: return "relu";
            case LayerKind::sigmoid: return "sigmoid";
            case LayerKind::maxpool:
                return "maxpool " + std::to_string(kh) + "x" + std::to_string(kw) + " s" +
                       std::to_string(sh) + "x" + std::to_string(sw);
            case LayerKind::dropout: return "dropout " + std::to_string(rate);
            case LayerKind::fully_connected: return "fc " + std::to_string(units);
            case LayerKind::regression: return "regression";
        }
        return "?";
    }

private:
    static LayerSpec with_kind(LayerKind k) {
        LayerSpec l;
        l.kind = k;
        return l;
    }
};

struct Shape3 {
    int c = 1, h = 1, w = 1;
    long size() const { return static_cast<long>(c) * h * w; }
    bool operator==(const Shape3&) const = default;
};

// Validated layer chain with propagated output shapes
// (out = floor((in - k)/stride) + 1 per spatial axis, no padding).
struct ModelSpec {
    std::vector<LayerSpec> layers;
    std::vector<Shape3> out_shapes;

    Shape3 input_shape() const { return out_shapes.front(); }
    Shape3 output_shape() const { return out_shapes.back(); }

    static ModelSpec chain(std::vector<LayerSpec> layer_list) {
        if (layer_list.empty() || layer_list.front().kind != LayerKind::input)
            throw ConfigError("model must start with an input layer");
        if (layer_list.back().kind != LayerKind::regression)
            throw ConfigError("model must end with a regression layer");

        ModelSpec spec;
        spec.layers = std::move(layer_list);
        spec.out_shapes.resize(spec.layers.size());

        Shape3 cur{spec.layers[0].in_c, spec.layers[0].in_h, spec.layers[0].in_w};
        if (cur.size() < 1) throw ConfigError("layer 1 (input): empty shape");
        spec.out_shapes[0] = cur;
        bool seen_fc = false;

        for (std::size_t i = 1; i < spec.layers.size(); ++i) {
            const LayerSpec& l = spec.layers[i];
            auto fail = [&](const std::string& why) {
                throw ConfigError("layer " + std::to_string(i + 1) + " (" + l.describe() +
                                  "): " + why);
            };
            switch (l.kind) {
                case LayerKind::input: fail("input layer not at the front"); break;
                case LayerKind::conv2d: {
                    if (l.kh < 1 || l.kw < 1 || l.sh < 1 || l.sw < 1 || l.filters < 1)
                        fail("bad parameters");
                    if (l.kh > cur.h || l.kw > cur.w)
                        fail("kernel " + std::to_string(l.kh) + "x" + std::to_string(l.kw) +
                             " underflows input " + std::to_string(cur.h) + "x" +
                             std::to_string(cur.w));
                    cur = Shape3{l.filters, (cur.h - l.kh) / l.sh + 1,
                                 (cur.w - l.kw) / l.sw + 1};
                    break;
                }
                case LayerKind::maxpool: {
                    if (l.kh < 1 || l.kw < 1 || l.sh < 1 || l.sw < 1) fail("bad parameters");
                    if (l.kh > cur.h || l.kw > cur.w)
                        fail("window " + std::to_string(l.kh) + "x" + std::to_string(l.kw) +
                             " underflows input " + std::to_string(cur.h) + "x" +
                             std::to_string(cur.w));
                    cur = Shape3{cur.c, (cur.h - l.kh) / l.sh + 1, (cur.w - l.kw) / l.sw + 1};
                    break;
                }
                case LayerKind::dropout:
                    if (!(l.rate >= 0.0 && l.rate < 1.0)) fail("rate must be in [0,1)");
                    break;
                case LayerKind::fully_connected:
                    if (l.units < 1) fail("units must be >= 1");
                    cur = Shape3{l.units, 1, 1};
                    seen_fc = true;
                    break;
                case LayerKind::regression: {
                    if (i + 1 != spec.layers.size()) fail("regression must be last");
                    const LayerSpec& prev = spec.layers[i - 1];
                    if (!seen_fc || prev.kind != LayerKind::fully_connected || prev.units != 1)
                        fail("needs a preceding fc layer with 1 unit");
                    break;
                }
                case LayerKind::batchnorm:
                case LayerKind::relu:
                case LayerKind::sigmoid: break;
            }
            spec.out_shapes[i] = cur;
        }
        return spec;
    }
};

// The three regression architectures. Type 1 reads raw grayscale images;
// types 2 and 3 read the narrower projected images (circular and rectangular
// arrays respectively). Dropout rate is 0.2 throughout.
inline ModelSpec build_type(int kind, int h, int w) {
    using L = LayerSpec;
    const double drop = 0.2;
    std::vector<L> layers;
    switch (kind) {
        case 1:
            layers = {L::input(h, w),
                      L::conv(1, 6, 4, 1, 3), L::batchnorm(), L::relu(),
                      L::conv(1, 4, 4, 1, 2), L::batchnorm(), L::relu(),
                      L::maxpool(1, 6, 1, 2),
                      L::conv(1, 2, 32),      L::batchnorm(), L::relu(),
                      L::conv(1, 4, 4, 1, 2), L::batchnorm(),
                      L::maxpool(1, 6, 1, 2),
                      L::conv(1, 2, 32),      L::batchnorm(), L::relu(),
                      L::dropout(drop),
                      L::fc(30), L::sigmoid(), L::fc(20), L::sigmoid(),
                      L::fc(10), L::sigmoid(), L::fc(5),  L::sigmoid(),
                      L::fc(1),  L::regression()};
            break;
        case 2:
            layers = {L::input(h, w),
                      L::conv(1, 6, 4, 1, 3), L::batchnorm(), L::relu(),
                      L::conv(2, 4, 4, 1, 2), L::batchnorm(), L::relu(),
                      L::maxpool(2, 6, 1, 2),
                      L::conv(2, 2, 32),      L::batchnorm(), L::relu(),
                      L::dropout(drop),
                      L::fc(20), L::sigmoid(), L::fc(10), L::sigmoid(),
                      L::fc(5),  L::sigmoid(), L::fc(1),  L::regression()};
            break;
        case 3:
            layers = {L::input(h, w),
                      L::conv(1, 6, 4, 1, 3), L::batchnorm(), L::relu(),
                      L::dropout(drop),
                      L::fc(20), L::sigmoid(), L::fc(10), L::sigmoid(),
                      L::fc(5),  L::sigmoid(), L::fc(1),  L::regression()};
            break;
        default: throw ConfigError("build_type: kind must be 1, 2 or 3");
    }
    return ModelSpec::chain(std::move(layers));
}

// Per-layer trainable state. Conv weights are stored [c][kh][kw][filters]
// (filters innermost); fc weights are [units][fan_in] row-major.
struct LayerParams {
    std::vector<double> w, b;
    std::vector<double> gamma, beta, run_mean, run_var;

    void for_each_tensor(auto&& fn) {
        fn(w);
        fn(b);
        fn(gamma);
        fn(beta);
    }
};

struct EpochStats {
    double train_loss = 0.0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double lr = 0.0;
};

struct TrainedModel {
    ModelSpec spec;
    std::vector<LayerParams> params; // one entry per layer
    std::vector<bool> frozen;        // per layer; frozen batchnorm also stops stat updates
    std::vector<EpochStats> history;
    bool early_stopped = false;
};

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int batch_size = 25;
    double lr_drop_factor = 0.1;
    int lr_drop_period = 15; // epochs
    int max_epochs = 50;
    int early_stop_patience = 5; // epochs without val improvement
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lr > 0 && beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1 && eps > 0))
            throw ConfigError("train config: bad optimizer parameters");
        if (batch_size < 1 || lr_drop_period < 1 || max_epochs < 0 || early_stop_patience < 1)
            throw ConfigError("train config: bad loop parameters");
        if (!(lr_drop_factor > 0 && lr_drop_factor <= 1))
            throw ConfigError("train config: lr_drop_factor must be in (0,1]");
    }
};

// batch activations, sample-major (c,h,w) blocks
struct Act {
    int n = 0;
    Shape3 shape;
    std::vector<double> v;

    Act() = default;
    Act(int n_, Shape3 s) : n(n_), shape(s), v(static_cast<std::size_t>(n_) * s.size(), 0.0) {}
    std::size_t per_sample() const { return static_cast<std::size_t>(shape.size()); }
    double* sample(int i) { return v.data() + per_sample() * i; }
    const double* sample(int i) const { return v.data() + per_sample() * i; }
};

struct ForwardCache {
    bool train_mode = false;
    Act input;
    std::vector<Act> outputs;                     // per layer
    std::vector<std::vector<int>> pool_argmax;    // per layer
    std::vector<std::vector<double>> drop_mask;   // per layer, scaled 0 / 1/(1-rate)
    std::vector<std::vector<double>> bn_xhat;     // per layer
    std::vector<std::vector<double>> bn_inv_std;  // per layer, per channel
    std::vector<char> bn_used_batch_stats;        // per layer
};

struct ForwardOpts {
    bool train = false;
    bool disable_dropout = false;
    bool update_running_stats = true;
    Rng* dropout_rng = nullptr;
};

namespace detail {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

inline void conv_forward(const LayerSpec& l, const LayerParams& p, const Act& in, Act& out) {
    const Shape3 is = in.shape, os = out.shape;
    const int f_n = l.filters;
    std::vector<double> acc(f_n);
    for (int s = 0; s < in.n; ++s) {
        const double* src = in.sample(s);
        double* dst = out.sample(s);
        for (int y = 0; y < os.h; ++y)
            for (int x = 0; x < os.w; ++x) {
                std::copy(p.b.begin(), p.b.end(), acc.begin());
                const int iy0 = y * l.sh, ix0 = x * l.sw;
                for (int c = 0; c < is.c; ++c) {
                    const double* plane = src + static_cast<std::size_t>(c) * is.h * is.w;
                    for (int ky = 0; ky < l.kh; ++ky) {
                        const double* row = plane + static_cast<std::size_t>(iy0 + ky) * is.w + ix0;
                        const double* wrow =
                            p.w.data() + (static_cast<std::size_t>(c) * l.kh + ky) * l.kw * f_n;
                        for (int kx = 0; kx < l.kw; ++kx) {
                            const double v = row[kx];
                            const double* wf = wrow + static_cast<std::size_t>(kx) * f_n;
                            for (int f = 0; f < f_n; ++f) acc[f] += v * wf[f];
                        }
                    }
                }
                for (int f = 0; f < f_n; ++f)
                    dst[(static_cast<std::size_t>(f) * os.h + y) * os.w + x] = acc[f];
            }
    }
}

inline void conv_backward(const LayerSpec& l, const LayerParams& p, const Act& in,
                          const Act& delta_out, Act& delta_in, LayerParams& grad,
                          bool want_param_grads) {
    const Shape3 is = in.shape, os = delta_out.shape;
    const int f_n = l.filters;
    std::vector<double> df(f_n);
    for (int s = 0; s < in.n; ++s) {
        const double* src = in.sample(s);
        const double* dout = delta_out.sample(s);
        double* din = delta_in.sample(s);
        for (int y = 0; y < os.h; ++y)
            for (int x = 0; x < os.w; ++x) {
                for (int f = 0; f < f_n; ++f)
                    df[f] = dout[(static_cast<std::size_t>(f) * os.h + y) * os.w + x];
                if (want_param_grads)
                    for (int f = 0; f < f_n; ++f) grad.b[f] += df[f];
                const int iy0 = y * l.sh, ix0 = x * l.sw;
                for (int c = 0; c < is.c; ++c) {
                    const std::size_t coff = static_cast<std::size_t>(c) * is.h * is.w;
                    for (int ky = 0; ky < l.kh; ++ky) {
                        const std::size_t roff = coff + static_cast<std::size_t>(iy0 + ky) * is.w + ix0;
                        const std::size_t woff =
                            (static_cast<std::size_t>(c) * l.kh + ky) * l.kw * f_n;
                        for (int kx = 0; kx < l.kw; ++kx) {
                            const double* wf = p.w.data() + woff + static_cast<std::size_t>(kx) * f_n;
                            double dsum = 0.0;
                            for (int f = 0; f < f_n; ++f) dsum += wf[f] * df[f];
                            din[roff + kx] += dsum;
                            if (want_param_grads) {
                                const double v = src[roff + kx];
                                double* gw = grad.w.data() + woff + static_cast<std::size_t>(kx) * f_n;
                                for (int f = 0; f < f_n; ++f) gw[f] += v * df[f];
                            }
                        }
                    }
                }
            }
    }
}

} // namespace detail

inline TrainedModel init_model(const ModelSpec& spec, std::uint64_t seed) {
    TrainedModel m;
    m.spec = spec;
    m.params.resize(spec.layers.size());
    m.frozen.assign(spec.layers.size(), false);
    Rng rng(seed_mix(seed, "glorot"));
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        LayerParams& p = m.params[i];
        if (l.kind == LayerKind::conv2d) {
            const Shape3 in = spec.out_shapes[i - 1];
            const int fan_in = in.c * l.kh * l.kw;
            const int fan_out = l.filters * l.kh * l.kw;
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            p.w.resize(static_cast<std::size_t>(fan_in) * l.filters);
            for (double& x : p.w) x = rng.uniform(-limit, limit);
            p.b.assign(l.filters, 0.0);
        } else if (l.kind == LayerKind::fully_connected) {
            const long fan_in = spec.out_shapes[i - 1].size();
            const double limit = std::sqrt(6.0 / (fan_in + l.units));
            p.w.resize(static_cast<std::size_t>(fan_in) * l.units);
            for (double& x : p.w) x = rng.uniform(-limit, limit);
            p.b.assign(l.units, 0.0);
        } else if (l.kind == LayerKind::batchnorm) {
            const int ch = spec.out_shapes[i].c;
            p.gamma.assign(ch, 1.0);
            p.beta.assign(ch, 0.0);
            p.run_mean.assign(ch, 0.0);
            p.run_var.assign(ch, 1.0);
        }
    }
    return m;
}

// Forward pass over a batch. Train mode normalizes with batch statistics and
// samples inverted-dropout masks; eval mode (and frozen batchnorm layers) use
// running statistics and identity dropout. Dropout layers stay active during
// fine-tuning: they carry no state, so the freeze boundary does not silence
// them.
inline std::vector<double> forward(TrainedModel& model, const Act& input,
                                   const ForwardOpts& opts, ForwardCache* cache) {
    const ModelSpec& spec = model.spec;
    if (input.shape != spec.input_shape())
        throw ShapeError("forward: batch shape mismatch");
    if (cache) {
        cache->train_mode = opts.train;
        cache->input = input;
        cache->outputs.assign(spec.layers.size(), Act{});
        cache->pool_argmax.assign(spec.layers.size(), {});
        cache->drop_mask.assign(spec.layers.size(), {});
        cache->bn_xhat.assign(spec.layers.size(), {});
        cache->bn_inv_std.assign(spec.layers.size(), {});
        cache->bn_used_batch_stats.assign(spec.layers.size(), 0);
    }

    Act cur = input;
    const int n = input.n;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        LayerParams& p = model.params[i];
        const Shape3 os = spec.out_shapes[i];
        Act out;
        switch (l.kind) {
            case LayerKind::input:
            case LayerKind::regression: out = cur; break;
            case LayerKind::conv2d: {
                out = Act(n, os);
                detail::conv_forward(l, p, cur, out);
                break;
            }
            case LayerKind::relu: {
                out = cur;
                for (double& x : out.v) x = x > 0.0 ? x : 0.0;
                break;
            }
            case LayerKind::sigmoid: {
                out = cur;
                for (double& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
                break;
            }
            case LayerKind::maxpool: {
                out = Act(n, os);
                std::vector<int>* argmax = nullptr;
                if (cache) {
                    cache->pool_argmax[i].assign(out.v.size(), 0);
                    argmax = &cache->pool_argmax[i];
                }
                const Shape3 is = cur.shape;
                for (int s = 0; s < n; ++s) {
                    const double* src = cur.sample(s);
                    double* dst = out.sample(s);
                    for (int c = 0; c < os.c; ++c)
                        for (int y = 0; y < os.h; ++y)
                            for (int x = 0; x < os.w; ++x) {
                                const int iy0 = y * l.sh, ix0 = x * l.sw;
                                double best = -std::numeric_limits<double>::infinity();
                                int barg = 0;
                                for (int ky = 0; ky < l.kh; ++ky)
                                    for (int kx = 0; kx < l.kw; ++kx) {
                                        const int idx = (c * is.h + iy0 + ky) * is.w + ix0 + kx;
                                        if (src[idx] > best) {
                                            best = src[idx];
                                            barg = idx;
                                        }
                                    }
                                const std::size_t o = (static_cast<std::size_t>(c) * os.h + y) * os.w + x;
                                dst[o] = best;
                                if (argmax)
                                    (*argmax)[out.per_sample() * s + o] =
                                        static_cast<int>(cur.per_sample()) * s + barg;
                            }
                }
                break;
            }
            case LayerKind::dropout: {
                out = cur;
                const bool active = opts.train && !opts.disable_dropout && l.rate > 0.0;
                if (active) {
                    if (!opts.dropout_rng)
                        throw ConfigError("forward: dropout in train mode needs an rng");
                    const double keep_scale = 1.0 / (1.0 - l.rate);
                    std::vector<double> mask(out.v.size());
                    for (std::size_t j = 0; j < out.v.size(); ++j) {
                        mask[j] = opts.dropout_rng->uniform() < l.rate ? 0.0 : keep_scale;
                        out.v[j] *= mask[j];
                    }
                    if (cache) cache->drop_mask[i] = std::move(mask);
                }
                break;
            }
            case LayerKind::batchnorm: {
                out = cur;
                const Shape3 is = cur.shape;
                const int ch = is.c;
                const std::size_t plane = static_cast<std::size_t>(is.h) * is.w;
                const bool use_batch = opts.train && !model.frozen[i];
                std::vector<double> mean(ch, 0.0), var(ch, 0.0), inv_std(ch, 0.0);
                if (use_batch) {
                    const double m_count = static_cast<double>(n) * plane;
                    if (m_count < 1.0) throw ShapeError("batchnorm: empty batch");
                    for (int c = 0; c < ch; ++c) {
                        double acc = 0.0;
                        for (int s = 0; s < n; ++s) {
                            const double* src = cur.sample(s) + c * plane;
                            for (std::size_t j = 0; j < plane; ++j) acc += src[j];
                        }
                        mean[c] = acc / m_count;
                        double vacc = 0.0;
                        for (int s = 0; s < n; ++s) {
                            const double* src = cur.sample(s) + c * plane;
                            for (std::size_t j = 0; j < plane; ++j) {
                                const double d = src[j] - mean[c];
                                vacc += d * d;
                            }
                        }
                        var[c] = vacc / m_count;
                        if (opts.update_running_stats) {
                            const double unbiased =
                                m_count > 1.0 ? var[c] * m_count / (m_count - 1.0) : var[c];
                            p.run_mean[c] = (1.0 - detail::kBnMomentum) * p.run_mean[c] +
                                            detail::kBnMomentum * mean[c];
                            p.run_var[c] = (1.0 - detail::kBnMomentum) * p.run_var[c] +
                                           detail::kBnMomentum * unbiased;
                        }
                    }
                } else {
                    mean = p.run_mean;
                    var = p.run_var;
                }
                for (int c = 0; c < ch; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + detail::kBnEps);
                std::vector<double>* xhat = nullptr;
                if (cache) {
                    cache->bn_xhat[i].assign(out.v.size(), 0.0);
                    xhat = &cache->bn_xhat[i];
                    cache->bn_inv_std[i] = inv_std;
                    cache->bn_used_batch_stats[i] = use_batch ? 1 : 0;
                }
                for (int s = 0; s < n; ++s) {
                    double* dst = out.sample(s);
                    for (int c = 0; c < ch; ++c) {
                        const double mu = mean[c], istd = inv_std[c];
                        const double g = p.gamma[c], be = p.beta[c];
                        double* row = dst + c * plane;
                        for (std::size_t j = 0; j < plane; ++j) {
                            const double xh = (row[j] - mu) * istd;
                            if (xhat) (*xhat)[out.per_sample() * s + c * plane + j] = xh;
                            row[j] = g * xh + be;
                        }
                    }
                }
                break;
            }
            case LayerKind::fully_connected: {
                out = Act(n, os);
                const long fan_in = cur.shape.size();
                for (int s = 0; s < n; ++s) {
                    const double* src = cur.sample(s);
                    double* dst = out.sample(s);
                    for (int u = 0; u < l.units; ++u) {
                        const double* wrow = p.w.data() + static_cast<std::size_t>(u) * fan_in;
                        double acc = p.b[u];
                        for (long j = 0; j < fan_in; ++j) acc += wrow[j] * src[j];
                        dst[u] = acc;
                    }
                }
                break;
            }
        }
        if (cache) cache->outputs[i] = out;
        cur = std::move(out);
    }

    std::vector<double> preds(n);
    for (int s = 0; s < n; ++s) preds[s] = cur.sample(s)[0];
    return preds;
}

struct Gradients {
    std::vector<LayerParams> g; // same tensor shapes as the model parameters
    double loss = 0.0;
};

inline Gradients make_zero_gradients(const TrainedModel& model) {
    Gradients grads;
    grads.g.resize(model.params.size());
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const LayerParams& p = model.params[i];
        grads.g[i].w.assign(p.w.size(), 0.0);
        grads.g[i].b.assign(p.b.size(), 0.0);
        grads.g[i].gamma.assign(p.gamma.size(), 0.0);
        grads.g[i].beta.assign(p.beta.size(), 0.0);
    }
    return grads;
}

// Mean-squared-error backward pass. Frozen layers keep zero parameter
// gradients but still pass the signal through; once no trainable layer
// remains below, propagation stops (observationally equivalent, much cheaper
// for feedforward-only fine-tuning).
inline Gradients backward(const TrainedModel& model, const ForwardCache& cache,
                          std::span<const double> targets) {
    const ModelSpec& spec = model.spec;
    if (!cache.train_mode)
        throw ConfigError("backward: cache must come from a train-mode forward");
    const int n = cache.input.n;
    if (static_cast<int>(targets.size()) != n)
        throw ShapeError("backward: target count mismatch");

    Gradients grads = make_zero_gradients(model);

    int lowest_trainable = static_cast<int>(spec.layers.size());
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const bool has_params =
            !model.params[i].w.empty() || !model.params[i].gamma.empty();
        if (has_params && !model.frozen[i]) {
            lowest_trainable = static_cast<int>(i);
            break;
        }
    }

    const Act& final_out = cache.outputs.back();
    Act delta = final_out;
    double loss = 0.0;
    for (int s = 0; s < n; ++s) {
        const double err = final_out.sample(s)[0] - targets[s];
        loss += err * err;
        delta.sample(s)[0] = 2.0 * err / n;
    }
    grads.loss = loss / n;

    for (int i = static_cast<int>(spec.layers.size()) - 1; i > 0; --i) {
        if (i < lowest_trainable) break;
        const LayerSpec& l = spec.layers[i];
        const LayerParams& p = model.params[i];
        const Act& layer_in = cache.outputs[static_cast<std::size_t>(i) - 1];
        const Act& layer_out = cache.outputs[i];
        const bool want_pg = !model.frozen[i];
        Act next; // delta w.r.t. this layer's input
        switch (l.kind) {
            case LayerKind::input: next = std::move(delta); break;
            case LayerKind::regression: next = std::move(delta); break;
            case LayerKind::relu: {
                next = std::move(delta);
                for (std::size_t j = 0; j < next.v.size(); ++j)
                    if (layer_in.v[j] <= 0.0) next.v[j] = 0.0;
                break;
            }
            case LayerKind::sigmoid: {
                next = std::move(delta);
                for (std::size_t j = 0; j < next.v.size(); ++j) {
                    const double y = layer_out.v[j];
                    next.v[j] *= y * (1.0 - y);
                }
                break;
            }
            case LayerKind::dropout: {
                next = std::move(delta);
                const auto& mask = cache.drop_mask[i];
                if (!mask.empty())
                    for (std::size_t j = 0; j < next.v.size(); ++j) next.v[j] *= mask[j];
                break;
            }
            case LayerKind::maxpool: {
                next = Act(n, layer_in.shape);
                const auto& argmax = cache.pool_argmax[i];
                for (std::size_t j = 0; j < delta.v.size(); ++j)
                    next.v[argmax[j]] += delta.v[j];
                break;
            }
            case LayerKind::fully_connected: {
                next = Act(n, layer_in.shape);
                const long fan_in = layer_in.shape.size();
                for (int s = 0; s < n; ++s) {
                    const double* din = layer_in.sample(s);
                    const double* d = delta.sample(s);
                    double* dx = next.sample(s);
                    for (int u = 0; u < l.units; ++u) {
                        const double du = d[u];
                        if (du == 0.0) continue;
                        const double* wrow = p.w.data() + static_cast<std::size_t>(u) * fan_in;
                        for (long j = 0; j < fan_in; ++j) dx[j] += du * wrow[j];
                        if (want_pg) {
                            double* gw = grads.g[i].w.data() + static_cast<std::size_t>(u) * fan_in;
                            for (long j = 0; j < fan_in; ++j) gw[j] += du * din[j];
                            grads.g[i].b[u] += du;
                        }
                    }
                }
                break;
            }
            case LayerKind::conv2d: {
                next = Act(n, layer_in.shape);
                detail::conv_backward(l, p, layer_in, delta, next, grads.g[i], want_pg);
                break;
            }
            case LayerKind::batchnorm: {
                next = Act(n, layer_in.shape);
                const Shape3 is = layer_in.shape;
                const std::size_t plane = static_cast<std::size_t>(is.h) * is.w;
                const auto& xhat = cache.bn_xhat[i];
                const auto& inv_std = cache.bn_inv_std[i];
                const double m_count = static_cast<double>(n) * plane;
                for (int c = 0; c < is.c; ++c) {
                    double sum_d = 0.0, sum_dx = 0.0;
                    for (int s = 0; s < n; ++s) {
                        const double* d = delta.sample(s) + c * plane;
                        const double* xh = xhat.data() + delta.per_sample() * s + c * plane;
                        for (std::size_t j = 0; j < plane; ++j) {
                            sum_d += d[j];
                            sum_dx += d[j] * xh[j];
                        }
                    }
                    if (want_pg) {
                        grads.g[i].beta[c] = sum_d;
                        grads.g[i].gamma[c] = sum_dx;
                    }
                    const double g = p.gamma[c], istd = inv_std[c];
                    if (cache.bn_used_batch_stats[i]) {
                        for (int s = 0; s < n; ++s) {
                            const double* d = delta.sample(s) + c * plane;
                            const double* xh = xhat.data() + delta.per_sample() * s + c * plane;
                            double* dx = next.sample(s) + c * plane;
                            for (std::size_t j = 0; j < plane; ++j)
                                dx[j] = g * istd / m_count *
                                        (m_count * d[j] - sum_d - xh[j] * sum_dx);
                        }
                    } else {
                        // running statistics are constants
                        for (int s = 0; s < n; ++s) {
                            const double* d = delta.sample(s) + c * plane;
                            double* dx = next.sample(s) + c * plane;
                            for (std::size_t j = 0; j < plane; ++j) dx[j] = g * istd * d[j];
                        }
                    }
                }
                break;
            }
        }
        delta = std::move(next);
    }
    return grads;
}

struct AdamState {
    std::vector<LayerParams> m, v;
    long t = 0;
};

inline AdamState make_adam_state(const TrainedModel& model) {
    AdamState st;
    st.m.resize(model.params.size());
    st.v.resize(model.params.size());
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const LayerParams& p = model.params[i];
        auto zero_like = [](const std::vector<double>& src) {
            return std::vector<double>(src.size(), 0.0);
        };
        st.m[i].w = zero_like(p.w);
        st.m[i].b = zero_like(p.b);
        st.m[i].gamma = zero_like(p.gamma);
        st.m[i].beta = zero_like(p.beta);
        st.v[i].w = zero_like(p.w);
        st.v[i].b = zero_like(p.b);
        st.v[i].gamma = zero_like(p.gamma);
        st.v[i].beta = zero_like(p.beta);
    }
    return st;
}

// One bias-corrected Adam update on a flat parameter tensor.
inline void adam_update(std::span<double> w, std::span<const double> g, std::span<double> m,
                        std::span<double> v, long t, double lr, double beta1, double beta2,
                        double eps) {
    if (w.size() != g.size() || w.size() != m.size() || w.size() != v.size())
        throw ShapeError("adam_update: size mismatch");
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        w[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
}

// Model-level Adam step; frozen layers are skipped outright.
inline void adam_step(TrainedModel& model, const Gradients& grads, AdamState& st, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    ++st.t;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        if (model.frozen[i]) continue;
        auto upd = [&](std::vector<double>& w, const std::vector<double>& g,
                       std::vector<double>& m, std::vector<double>& v) {
            if (!w.empty()) adam_update(w, g, m, v, st.t, lr, beta1, beta2, eps);
        };
        upd(model.params[i].w, grads.g[i].w, st.m[i].w, st.v[i].w);
        upd(model.params[i].b, grads.g[i].b, st.m[i].b, st.v[i].b);
        upd(model.params[i].gamma, grads.g[i].gamma, st.m[i].gamma, st.v[i].gamma);
        upd(model.params[i].beta, grads.g[i].beta, st.m[i].beta, st.v[i].beta);
    }
}

// ---- datasets for the regression heads ----

struct SampleSet {
    std::vector<const Matrix*> images;
    std::vector<double> targets; // normalized to [0,1]
    std::size_t size() const { return images.size(); }
};

inline Act assemble_batch(const ModelSpec& spec, const SampleSet& set,
                          std::span<const std::size_t> idx) {
    const Shape3 in = spec.input_shape();
    Act batch(static_cast<int>(idx.size()), in);
    for (std::size_t s = 0; s < idx.size(); ++s) {
        const Matrix& img = *set.images[idx[s]];
        if (img.rows != in.h || img.cols != in.w || in.c != 1)
            throw ShapeError("batch image is " + std::to_string(img.rows) + "x" +
                             std::to_string(img.cols) + ", model wants " + std::to_string(in.h) +
                             "x" + std::to_string(in.w));
        std::copy(img.v.begin(), img.v.end(), batch.sample(static_cast<int>(s)));
    }
    return batch;
}

inline double evaluate_mse(TrainedModel& model, const SampleSet& set, int batch_cap = 32) {
    if (set.size() == 0) throw ConfigError("evaluate_mse: empty set");
    double se = 0.0;
    std::vector<std::size_t> idx(set.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    ForwardOpts opts; // eval mode
    for (std::size_t at = 0; at < idx.size(); at += batch_cap) {
        const std::size_t hi = std::min(idx.size(), at + batch_cap);
        Act batch = assemble_batch(model.spec, set,
                                   std::span<const std::size_t>(idx.data() + at, hi - at));
        const std::vector<double> preds = forward(model, batch, opts, nullptr);
        for (std::size_t s = 0; s < preds.size(); ++s) {
            const double err = preds[s] - set.targets[at + s];
            se += err * err;
        }
    }
    return se / static_cast<double>(set.size());
}

// Mini-batch training with the step-decay schedule and early stopping.
// Validation runs once per epoch; when it fails to improve for
// early_stop_patience consecutive epochs training stops and the
// best-validation parameters are restored. An empty validation set disables
// both (the run then always lasts max_epochs).
inline TrainedModel train_model(TrainedModel model, const SampleSet& train_set,
                                const SampleSet& val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.size() == 0) throw ConfigError("train: empty training set");
    model.history.clear();
    model.early_stopped = false;
    if (cfg.max_epochs == 0) return model;

    AdamState adam = make_adam_state(model);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    double best_val = std::numeric_limits<double>::infinity();
    std::vector<LayerParams> best_params;
    int stale = 0;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const double lr =
            cfg.lr * std::pow(cfg.lr_drop_factor, (epoch - 1) / cfg.lr_drop_period);

        Rng shuffle_rng(seed_mix(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_u64() % i]);

        double epoch_se = 0.0;
        int batch_index = 0;
        for (std::size_t at = 0; at < order.size(); at += cfg.batch_size, ++batch_index) {
            const std::size_t hi = std::min(order.size(), at + cfg.batch_size);
            const std::span<const std::size_t> idx(order.data() + at, hi - at);
            Act batch = assemble_batch(model.spec, train_set, idx);
            std::vector<double> targets(idx.size());
            for (std::size_t s = 0; s < idx.size(); ++s) targets[s] = train_set.targets[idx[s]];

            Rng drop_rng(seed_mix(cfg.seed, "dropout",
                                  static_cast<std::uint64_t>(epoch),
                                  static_cast<std::uint64_t>(batch_index)));
            ForwardOpts opts;
            opts.train = true;
            opts.dropout_rng = &drop_rng;
            ForwardCache cache;
            forward(model, batch, opts, &cache);
            Gradients grads = backward(model, cache, targets);
            if (!std::isfinite(grads.loss))
                throw NumericError("train: loss diverged at epoch " + std::to_string(epoch));
            epoch_se += grads.loss * static_cast<double>(idx.size());
            adam_step(model, grads, adam, lr, cfg.beta1, cfg.beta2, cfg.eps);
        }

        EpochStats stats;
        stats.train_loss = epoch_se / static_cast<double>(train_set.size());
        stats.lr = lr;
        if (val_set.size() > 0) {
            stats.val_loss = evaluate_mse(model, val_set);
            if (!std::isfinite(stats.val_loss))
                throw NumericError("train: validation loss diverged");
            if (stats.val_loss < best_val) {
                best_val = stats.val_loss;
                best_params = model.params;
                stale = 0;
            } else {
                ++stale;
            }
        }
        model.history.push_back(stats);
        if (val_set.size() > 0 && stale >= cfg.early_stop_patience) {
            model.early_stopped = true;
            break;
        }
    }
    if (!best_params.empty()) model.params = std::move(best_params);
    return model;
}

inline TrainedModel train(const ModelSpec& spec, const SampleSet& train_set,
                          const SampleSet& val_set, const TrainConfig& cfg) {
    return train_model(init_model(spec, cfg.seed), train_set, val_set, cfg);
}

// Feedforward-only fine-tuning: everything up to and including the last
// dropout layer (the convolutional part) is frozen -- parameters, and for
// batchnorm also the running statistics, which the frozen layers then use
// even in train mode.
inline TrainedModel finetune(const TrainedModel& source, const SampleSet& target_train,
                             const SampleSet& target_val, const TrainConfig& cfg) {
    int last_dropout = -1;
    for (std::size_t i = 0; i < source.spec.layers.size(); ++i)
        if (source.spec.layers[i].kind == LayerKind::dropout) last_dropout = static_cast<int>(i);
    if (last_dropout < 0)
        throw ConfigError("finetune: model has no dropout boundary to freeze at");

    TrainedModel model = source;
    for (int i = 0; i <= last_dropout; ++i) model.frozen[i] = true;
    return train_model(std::move(model), target_train, target_val, cfg);
}

inline std::vector<double> predict(TrainedModel& model, const std::vector<const Matrix*>& images,
                                   int batch_cap = 32) {
    SampleSet set;
    set.images = images;
    set.targets.assign(images.size(), 0.0);
    std::vector<double> preds;
    preds.reserve(images.size());
    std::vector<std::size_t> idx(images.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    ForwardOpts opts;
    for (std::size_t at = 0; at < idx.size(); at += batch_cap) {
        const std::size_t hi = std::min(idx.size(), at + batch_cap);
        Act batch = assemble_batch(model.spec, set,
                                   std::span<const std::size_t>(idx.data() + at, hi - at));
        const std::vector<double> out = forward(model, batch, opts, nullptr);
        preds.insert(preds.end(), out.begin(), out.end());
    }
    return preds;
}

// Paired coordinate heads; outputs are denormalized by the plate dimensions.
inline std::pair<double, double> predict_position(TrainedModel& model_x, TrainedModel& model_y,
                                                  const Matrix& image, double plate_w = 200.0,
                                                  double plate_h = 300.0) {
    if (!(model_x.spec.input_shape() == model_y.spec.input_shape()))
        throw ShapeError("predict_position: coordinate heads disagree on input shape");
    const std::vector<double> px = predict(model_x, {&image});
    const std::vector<double> py = predict(model_y, {&image});
    return {px[0] * plate_w, py[0] * plate_h};
}

// Central finite differences against the analytic gradients; dropout is
// disabled and batchnorm runs on the fixed batch statistics.
inline double gradient_check(TrainedModel& model, const Act& batch,
                             std::span<const double> targets, double epsilon = 1e-5) {
    ForwardOpts opts;
    opts.train = true;
    opts.disable_dropout = true;
    opts.update_running_stats = false;

    auto loss_at = [&]() {
        const std::vector<double> preds = forward(model, batch, opts, nullptr);
        double se = 0.0;
        for (std::size_t s = 0; s < preds.size(); ++s) {
            const double e = preds[s] - targets[s];
            se += e * e;
        }
        return se / static_cast<double>(preds.size());
    };

    ForwardCache cache;
    forward(model, batch, opts, &cache);
    const Gradients grads = backward(model, cache, targets);

    double worst = 0.0;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        if (model.frozen[i]) continue; // analytic side is masked to zero there
        auto probe = [&](std::vector<double>& w, const std::vector<double>& g) {
            for (std::size_t j = 0; j < w.size(); ++j) {
                const double keep = w[j];
                w[j] = keep + epsilon;
                const double up = loss_at();
                w[j] = keep - epsilon;
                const double dn = loss_at();
                w[j] = keep;
                const double num = (up - dn) / (2.0 * epsilon);
                const double rel =
                    std::abs(g[j] - num) / std::max({std::abs(g[j]), std::abs(num), 1e-8});
                worst = std::max(worst, rel);
            }
        };
        probe(model.params[i].w, grads.g[i].w);
        probe(model.params[i].b, grads.g[i].b);
        probe(model.params[i].gamma, grads.g[i].gamma);
        probe(model.params[i].beta, grads.g[i].beta);
    }
    return worst;
}

} // namespace ugwt::nn

#endif // UGWT_NN_HPP
