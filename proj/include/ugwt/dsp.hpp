#ifndef UGWT_DSP_HPP
#define UGWT_DSP_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "ugwt/common.hpp"

namespace ugwt {

namespace detail {

struct Biquad {
    double b0 = 1, b1 = 0, b2 = 0; // numerator
    double a1 = 0, a2 = 0;         // denominator (a0 = 1)
};

// Butterworth band-pass designed by prototype -> band transform -> bilinear.
// An order-N request yields N biquad sections (2N poles), N zeros at z=1 and
// N at z=-1, unit gain at the (prewarped) band center.
inline std::vector<Biquad> butter_bandpass_sections(double lo, double hi, int order, double fs) {
    if (!(lo > 0.0 && lo < hi && hi < 0.5 * fs))
        throw ConfigError("butterworth: need 0 < lo < hi < fs/2");
    if (order < 1) throw ConfigError("butterworth: order must be >= 1");

    using cd = std::complex<double>;
    const double pi = 3.14159265358979323846;
    const double wl = 2.0 * fs * std::tan(pi * lo / fs);
    const double wh = 2.0 * fs * std::tan(pi * hi / fs);
    const double w0 = std::sqrt(wl * wh);
    const double bw = wh - wl;

    std::vector<cd> zpoles;
    for (int k = 0; k < order; ++k) {
        const cd p = std::exp(cd(0.0, pi * (2 * k + order + 1) / (2.0 * order)));
        const cd pb = p * bw;
        const cd disc = std::sqrt(pb * pb - 4.0 * w0 * w0);
        for (const cd s : {0.5 * (pb + disc), 0.5 * (pb - disc)})
            zpoles.push_back((2.0 * fs + s) / (2.0 * fs - s));
    }

    // pair conjugate (or real) poles into real-coefficient sections
    std::vector<Biquad> sections;
    std::vector<bool> used(zpoles.size(), false);
    std::vector<std::size_t> reals;
    for (std::size_t i = 0; i < zpoles.size(); ++i) {
        if (used[i]) continue;
        if (std::abs(zpoles[i].imag()) < 1e-9) {
            reals.push_back(i);
            used[i] = true;
            continue;
        }
        std::size_t mate = i;
        double best = 1e300;
        for (std::size_t j = i + 1; j < zpoles.size(); ++j) {
            if (used[j]) continue;
            const double d = std::abs(zpoles[j] - std::conj(zpoles[i]));
            if (d < best) {
                best = d;
                mate = j;
            }
        }
        used[i] = used[mate] = true;
        Biquad s;
        s.b0 = 1;
        s.b2 = -1;
        s.a1 = -2.0 * zpoles[i].real();
        s.a2 = std::norm(zpoles[i]);
        sections.push_back(s);
    }
    for (std::size_t i = 0; i + 1 < reals.size(); i += 2) {
        Biquad s;
        s.b0 = 1;
        s.b2 = -1;
        const double r1 = zpoles[reals[i]].real(), r2 = zpoles[reals[i + 1]].real();
        s.a1 = -(r1 + r2);
        s.a2 = r1 * r2;
        sections.push_back(s);
    }

    // normalize to unit magnitude at the digital image of the analog center
    const double wc = 2.0 * std::atan(w0 / (2.0 * fs));
    const cd z = std::exp(cd(0.0, wc));
    const cd zi = 1.0 / z;
    cd h = 1.0;
    for (const Biquad& s : sections)
        h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
    sections.front().b0 /= std::abs(h);
    sections.front().b1 /= std::abs(h);
    sections.front().b2 /= std::abs(h);
    return sections;
}

inline void run_sections(const std::vector<Biquad>& sections, std::vector<double>& x) {
    for (const Biquad& s : sections) {
        double s1 = 0.0, s2 = 0.0;
        for (double& v : x) {
            const double in = v;
            const double out = s.b0 * in + s1;
            s1 = s.b1 * in - s.a1 * out + s2;
            s2 = s.b2 * in - s.a2 * out;
            v = out;
        }
    }
}

} // namespace detail

// Zero-phase Butterworth band-pass: the cascade is applied forward and then
// backward, squaring the magnitude response and cancelling the phase.
inline std::vector<double> butterworth_bandpass(std::span<const double> x, double lo = 50e3,
                                                double hi = 250e3, int order = 4,
                                                double fs = 4e6) {
    const std::vector<detail::Biquad> sections =
        detail::butter_bandpass_sections(lo, hi, order, fs);
    std::vector<double> y(x.begin(), x.end());
    detail::run_sections(sections, y);
    std::reverse(y.begin(), y.end());
    detail::run_sections(sections, y);
    std::reverse(y.begin(), y.end());
    return y;
}

// Magnitude of the single-pass filter at frequency f (the zero-phase version
// applies its square).
inline double butterworth_bandpass_gain(double f, double lo = 50e3, double hi = 250e3,
                                        int order = 4, double fs = 4e6) {
    const std::vector<detail::Biquad> sections =
        detail::butter_bandpass_sections(lo, hi, order, fs);
    using cd = std::complex<double>;
    const cd zi = std::exp(cd(0.0, -2.0 * 3.14159265358979323846 * f / fs));
    cd h = 1.0;
    for (const detail::Biquad& s : sections)
        h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
    return std::abs(h);
}

// Elementwise median across equally long series (mean of the middle two for
// even counts).
inline std::vector<double> median_stack(const std::vector<std::vector<double>>& repeats) {
    if (repeats.empty()) throw ShapeError("median_stack: no series");
    const std::size_t len = repeats.front().size();
    for (const auto& r : repeats)
        if (r.size() != len) throw ShapeError("median_stack: ragged input");
    std::vector<double> out(len);
    std::vector<double> col(repeats.size());
    for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t j = 0; j < repeats.size(); ++j) col[j] = repeats[j][i];
        std::sort(col.begin(), col.end());
        const std::size_t m = col.size() / 2;
        out[i] = (col.size() % 2 == 1) ? col[m] : 0.5 * (col[m - 1] + col[m]);
    }
    return out;
}

} // namespace ugwt

#endif // UGWT_DSP_HPP
