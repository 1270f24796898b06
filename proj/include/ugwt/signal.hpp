#ifndef UGWT_SIGNAL_HPP
#define UGWT_SIGNAL_HPP

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ugwt/common.hpp"
#include "ugwt/dataset.hpp"
#include "ugwt/dsp.hpp"
#include "ugwt/tensor.hpp"

namespace ugwt {

struct ToneBurstConfig {
    double f0 = 150e3;     // Hz
    int cycles = 5;
    double fs = 4e6;       // Hz
    int n_samples = 1321;
    double amplitude = 1.0;

    // burst truncated to the sample grid; 5 cycles at 150 kHz / 4 MHz -> 133
    int burst_samples() const { return static_cast<int>(cycles * fs / f0); }

    void validate() const {
        if (!(f0 > 0 && fs > 0 && cycles >= 1 && n_samples >= 1 && amplitude > 0))
            throw ConfigError("tone burst: nonpositive parameter");
        if (!(f0 < 0.5 * fs)) throw ConfigError("tone burst: f0 must be below fs/2");
        if (cycles * fs / f0 > n_samples)
            throw ConfigError("tone burst: burst longer than the record");
    }
};

struct PztSensor {
    int id;
    double x, y; // mm
};

struct DamageSite {
    int id;
    double x, y; // mm
};

// Plate geometry plus the synthetic "material" parameters. Velocity and
// attenuation are what distinguish two materials in this model.
struct PlateScenario {
    double plate_w = 200.0; // mm
    double plate_h = 300.0; // mm
    std::vector<PztSensor> sensors;
    std::vector<int> actuator_ids; // ordered array members; filled per network when empty
    std::vector<DamageSite> damage_sites;
    double group_velocity = 5.0;    // mm/us
    double attenuation_coeff = 0.002; // 1/mm
    double scatter_amplitude = 0.3;   // relative to the direct arrival
    double boundary_reflection = 0.2; // relative, single first-order echo
    std::uint64_t rng_seed = 1;
    ToneBurstConfig burst;
    double bandpass_lo = 50e3, bandpass_hi = 250e3;
    int bandpass_order = 4;
    std::string material = "mat";
    double snr_min_db = 20.0, snr_max_db = 40.0;

    const PztSensor& sensor(int id) const {
        for (const auto& s : sensors)
            if (s.id == id) return s;
        throw ConfigError("unknown sensor id " + std::to_string(id));
    }
    const DamageSite& damage(int id) const {
        for (const auto& d : damage_sites)
            if (d.id == id) return d;
        throw ConfigError("unknown damage id " + std::to_string(id));
    }

    void validate() const {
        burst.validate();
        if (!(group_velocity > 0)) throw ConfigError("scenario: group_velocity must be > 0");
        if (!(scatter_amplitude >= 0 && scatter_amplitude <= 1))
            throw ConfigError("scenario: scatter_amplitude must be in [0,1]");
        if (!(attenuation_coeff >= 0)) throw ConfigError("scenario: negative attenuation");
        if (!(snr_min_db <= snr_max_db)) throw ConfigError("scenario: snr_min > snr_max");
        for (const auto& s : sensors)
            if (s.x < 0 || s.x > plate_w || s.y < 0 || s.y > plate_h)
                throw ConfigError("sensor " + std::to_string(s.id) + " outside plate");
        for (const auto& d : damage_sites)
            if (d.x < 0 || d.x > plate_w || d.y < 0 || d.y > plate_h)
                throw ConfigError("damage " + std::to_string(d.id) + " outside plate");
    }
};

// Installed transducer positions (ids 1-14). Ids 1-8 form the circular array,
// ids 3, 7 and 9-14 the rectangular one.
inline std::vector<PztSensor> default_sensor_table() {
    return {{1, 100, 230}, {2, 43, 207}, {3, 20, 150},  {4, 43, 94},   {5, 100, 70},
            {6, 157, 94},  {7, 180, 150}, {8, 157, 207}, {9, 20, 30},   {10, 20, 270},
            {11, 100, 270}, {12, 180, 270}, {13, 180, 30}, {14, 100, 30}};
}

inline std::vector<DamageSite> default_damage_table() {
    return {{1, 35, 255},  {2, 65, 255},  {3, 125, 255}, {4, 155, 255}, {5, 35, 225},
            {6, 65, 225},  {7, 125, 225}, {8, 155, 225}, {9, 65, 195},  {10, 95, 195},
            {11, 125, 195}, {12, 35, 165}, {13, 65, 165}, {14, 95, 165}, {15, 125, 165},
            {16, 155, 165}, {17, 35, 135}, {18, 65, 135}, {19, 95, 135}, {20, 125, 135},
            {21, 155, 135}, {22, 65, 105}, {23, 95, 105}, {24, 125, 105}, {25, 35, 75},
            {26, 65, 75},  {27, 125, 75}, {28, 155, 75}, {29, 35, 45},  {30, 65, 45},
            {31, 125, 45}, {32, 155, 45}};
}

inline std::vector<int> array_transducers(NetworkTag net) {
    if (net == NetworkTag::circular) return {1, 2, 3, 4, 5, 6, 7, 8};
    return {3, 7, 9, 10, 11, 12, 13, 14};
}

inline std::vector<int> array_damage_ids(NetworkTag net) {
    std::vector<int> ids;
    if (net == NetworkTag::circular)
        for (int d = 9; d <= 24; ++d) ids.push_back(d);
    else
        for (int d = 1; d <= 32; ++d) ids.push_back(d);
    return ids;
}

inline PlateScenario default_scenario() {
    PlateScenario s;
    s.sensors = default_sensor_table();
    s.damage_sites = default_damage_table();
    return s;
}

namespace detail {
// windowed carrier, active on sample indices [0, burst_samples)
inline double burst_value(const ToneBurstConfig& cfg, double t_samples) {
    if (t_samples < 0.0 || t_samples >= cfg.burst_samples()) return 0.0;
    const double t = t_samples / cfg.fs;
    const double two_pi = 6.283185307179586476925286766559;
    const double window = 0.5 * (1.0 - std::cos(two_pi * cfg.f0 * t / cfg.cycles));
    return cfg.amplitude * window * std::sin(two_pi * cfg.f0 * t);
}

inline double dist(double ax, double ay, double bx, double by) {
    return std::hypot(ax - bx, ay - by);
}

// shortest single-bounce path via an image source across one of the 4 edges
inline double shortest_echo_path(const PlateScenario& sc, double ax, double ay, double bx,
                                 double by) {
    const double mirrors[4][2] = {{-ax, ay},                    // x = 0 edge
                                  {2 * sc.plate_w - ax, ay},    // x = W
                                  {ax, -ay},                    // y = 0
                                  {ax, 2 * sc.plate_h - ay}};   // y = H
    double best = 1e300;
    for (const auto& m : mirrors) best = std::min(best, dist(m[0], m[1], bx, by));
    return best;
}

inline double path_gain(double d, double attenuation) {
    return std::exp(-attenuation * d) / std::sqrt(std::max(d, 1.0));
}
} // namespace detail

inline std::vector<double> tone_burst(const ToneBurstConfig& cfg) {
    cfg.validate();
    std::vector<double> s(cfg.n_samples, 0.0);
    for (int n = 0; n < cfg.burst_samples(); ++n) s[n] = detail::burst_value(cfg, n);
    return s;
}

// Pitch-catch series grid indexed (actuator slot, sensing slot).
struct SignalSet {
    int n_act = 0, n_sens = 0, n_samples = 0;
    std::vector<double> series; // (a, j) blocks of n_samples

    SignalSet() = default;
    SignalSet(int a, int s, int n)
        : n_act(a), n_sens(s), n_samples(n),
          series(static_cast<std::size_t>(a) * s * n, 0.0) {}

    double* at(int a, int j) {
        return series.data() + (static_cast<std::size_t>(a) * n_sens + j) * n_samples;
    }
    const double* at(int a, int j) const {
        return series.data() + (static_cast<std::size_t>(a) * n_sens + j) * n_samples;
    }
};

// One actuation: rows are the array members other than the actuator, in array
// order. The model sums a delayed direct arrival, one first-order boundary
// echo, and (when damaged) a scattered arrival via the damage site; the
// scatter term is added last so healthy and damaged series are bit-identical
// before the scatter arrival.
inline Matrix synth_acquisition(const PlateScenario& sc, std::optional<int> damage_id,
                                int actuator_id) {
    const PztSensor& act = sc.sensor(actuator_id);
    const DamageSite* dmg = damage_id ? &sc.damage(*damage_id) : nullptr;

    std::vector<const PztSensor*> sensing;
    for (int id : sc.actuator_ids)
        if (id != actuator_id) sensing.push_back(&sc.sensor(id));
    if (sensing.empty()) throw ConfigError("synth_acquisition: no sensing transducers");

    const ToneBurstConfig& tb = sc.burst;
    const double us_per_sample = 1e6 / tb.fs;
    Matrix out(static_cast<int>(sensing.size()), tb.n_samples);

    for (std::size_t j = 0; j < sensing.size(); ++j) {
        const PztSensor& sens = *sensing[j];
        const double d_direct = detail::dist(act.x, act.y, sens.x, sens.y);
        const double d_echo = detail::shortest_echo_path(sc, act.x, act.y, sens.x, sens.y);
        const double a_direct = detail::path_gain(d_direct, sc.attenuation_coeff);
        const double a_echo =
            sc.boundary_reflection * detail::path_gain(d_echo, sc.attenuation_coeff);
        const double tau_direct = d_direct / sc.group_velocity / us_per_sample;
        const double tau_echo = d_echo / sc.group_velocity / us_per_sample;

        double a_scatter = 0.0, tau_scatter = 0.0;
        if (dmg) {
            const double d_sc = detail::dist(act.x, act.y, dmg->x, dmg->y) +
                                detail::dist(dmg->x, dmg->y, sens.x, sens.y);
            a_scatter = sc.scatter_amplitude * detail::path_gain(d_sc, sc.attenuation_coeff);
            tau_scatter = d_sc / sc.group_velocity / us_per_sample;
        }

        double* row = out.row(static_cast<int>(j));
        for (int n = 0; n < tb.n_samples; ++n) {
            double v = a_direct * detail::burst_value(tb, n - tau_direct);
            v += a_echo * detail::burst_value(tb, n - tau_echo);
            if (dmg) v += a_scatter * detail::burst_value(tb, n - tau_scatter);
            row[n] = v;
        }
    }
    return out;
}

// Stacked per-sensor series forming one image per acquisition, scaled by a
// dataset-wide normalizer and clipped to [-1, 1].
struct GrayscaleImage {
    Matrix pixels; // n_sens x (n_act * n_samples)
    double label_x = 0.0, label_y = 0.0;
    int site_id = -1;
    int n_samples = 0;
};

inline GrayscaleImage encode_grayscale(const SignalSet& sig, double normalizer) {
    if (!(normalizer > 0.0)) throw ConfigError("encode_grayscale: normalizer must be > 0");
    GrayscaleImage img;
    img.n_samples = sig.n_samples;
    img.pixels = Matrix(sig.n_sens, sig.n_act * sig.n_samples);
    for (int a = 0; a < sig.n_act; ++a)
        for (int j = 0; j < sig.n_sens; ++j) {
            const double* src = sig.at(a, j);
            double* dst = img.pixels.row(j) + static_cast<std::size_t>(a) * sig.n_samples;
            for (int n = 0; n < sig.n_samples; ++n)
                dst[n] = std::clamp(src[n] / normalizer, -1.0, 1.0);
        }
    return img;
}

// block (actuator a, sensor row j) of an encoded image
inline std::vector<double> decode_block(const GrayscaleImage& img, int a, int j) {
    const double* src = img.pixels.row(j) + static_cast<std::size_t>(a) * img.n_samples;
    return std::vector<double>(src, src + img.n_samples);
}

// Gaussian-noise augmentation. Copy c draws its own stream from
// seed_mix(seed, "augment", c); the SNR is uniform in [snr_min_db, snr_max_db]
// and measured over the whole image.
inline std::vector<GrayscaleImage> augment(const GrayscaleImage& img, int copies,
                                           double snr_min_db, double snr_max_db,
                                           std::uint64_t seed) {
    if (copies < 1) throw ConfigError("augment: copies must be >= 1");
    if (!(snr_min_db <= snr_max_db)) throw ConfigError("augment: snr_min > snr_max");
    double p_signal = 0.0;
    for (double v : img.pixels.v) p_signal += v * v;
    p_signal /= static_cast<double>(img.pixels.v.size());
    if (!(p_signal > 0.0)) throw NumericError("augment: zero-signal image, SNR undefined");

    std::vector<GrayscaleImage> out;
    out.reserve(copies);
    for (int c = 0; c < copies; ++c) {
        Rng rng(seed_mix(seed, "augment", static_cast<std::uint64_t>(c)));
        const double snr_db = rng.uniform(snr_min_db, snr_max_db);
        const double sigma = std::sqrt(p_signal * std::pow(10.0, -snr_db / 10.0));
        GrayscaleImage copy = img;
        for (double& v : copy.pixels.v)
            v = std::clamp(v + sigma * rng.gaussian(), -1.0, 1.0);
        out.push_back(std::move(copy));
    }
    return out;
}

// Full synthetic domain: one filtered, encoded image per damage site of the
// chosen array, each augmented into `copies` noisy instances. The grayscale
// normalizer is the max-abs over every clean filtered series of the domain.
inline DomainDataset build_domain(PlateScenario sc, NetworkTag network, int copies) {
    if (sc.sensors.empty()) sc.sensors = default_sensor_table();
    if (sc.damage_sites.empty()) sc.damage_sites = default_damage_table();
    if (sc.actuator_ids.empty()) sc.actuator_ids = array_transducers(network);
    sc.validate();
    if (copies < 1) throw ConfigError("build_domain: copies must be >= 1");

    const std::vector<int> damage_ids = array_damage_ids(network);
    const int n_act = static_cast<int>(sc.actuator_ids.size());
    const int n_sens = n_act - 1;

    // synthesize + band-pass everything once, tracking the domain-wide peak
    std::vector<SignalSet> per_site(damage_ids.size());
    double normalizer = 0.0;
    for (std::size_t s = 0; s < damage_ids.size(); ++s) {
        SignalSet set(n_act, n_sens, sc.burst.n_samples);
        for (int a = 0; a < n_act; ++a) {
            const Matrix acq = synth_acquisition(sc, damage_ids[s], sc.actuator_ids[a]);
            for (int j = 0; j < n_sens; ++j) {
                const std::vector<double> filtered = butterworth_bandpass(
                    std::span<const double>(acq.row(j), acq.cols), sc.bandpass_lo,
                    sc.bandpass_hi, sc.bandpass_order, sc.burst.fs);
                for (double v : filtered) normalizer = std::max(normalizer, std::abs(v));
                std::copy(filtered.begin(), filtered.end(), set.at(a, j));
            }
        }
        per_site[s] = std::move(set);
    }
    if (!(normalizer > 0.0)) throw NumericError("build_domain: silent domain");

    DomainDataset ds;
    ds.material = sc.material;
    ds.network = network;
    ds.stage = Stage::raw;
    ds.plate_w = sc.plate_w;
    ds.plate_h = sc.plate_h;
    for (std::size_t s = 0; s < damage_ids.size(); ++s) {
        const DamageSite& site = sc.damage(damage_ids[s]);
        GrayscaleImage img = encode_grayscale(per_site[s], normalizer);
        img.label_x = site.x;
        img.label_y = site.y;
        img.site_id = site.id;
        const std::uint64_t site_seed =
            seed_mix(sc.rng_seed, "site", static_cast<std::uint64_t>(site.id));
        for (GrayscaleImage& noisy :
             augment(img, copies, sc.snr_min_db, sc.snr_max_db, site_seed))
            ds.push(std::move(noisy.pixels), site.x, site.y, site.id);
    }
    ds.validate();
    return ds;
}

} // namespace ugwt

#endif // UGWT_SIGNAL_HPP
