#ifndef UGWT_COMMON_HPP
#define UGWT_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>

namespace ugwt {

// Error taxonomy. The CLI maps these onto distinct exit codes
// (config -> 2, shape -> 3, numeric -> 4).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

class ConvergenceError : public NumericError {
public:
    explicit ConvergenceError(const std::string& m) : NumericError(m) {}
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}
} // namespace detail

// Seed derivation: child streams are obtained by mixing the parent seed with
// string tags and integer indices. Adding new derived streams never perturbs
// existing ones.
inline std::uint64_t seed_mix(std::uint64_t seed, std::string_view tag) {
    return detail::splitmix64(seed ^ detail::fnv1a(tag));
}
inline std::uint64_t seed_mix(std::uint64_t seed, std::string_view tag, std::uint64_t a) {
    return detail::splitmix64(seed_mix(seed, tag) ^ detail::splitmix64(a + 0x51ed270b
                                                                        ));
}
inline std::uint64_t seed_mix(std::uint64_t seed, std::string_view tag, std::uint64_t a,
                              std::uint64_t b) {
    return detail::splitmix64(seed_mix(seed, tag, a) ^ detail::splitmix64(b + 0x2545f491));
}

// Deterministic random stream. The engine is std::mt19937_64 (bit-exact by
// the standard); the variate transforms are implemented here because the
// standard library's distributions are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller; one spare value cached
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform(); // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// 17 significant digits: enough for double round trips, '.' decimal point.
inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Worker-count cap. TDA_THREADS limits concurrency; results are identical at
// any cap, so this only affects wall time.
inline int thread_budget() {
    if (const char* s = std::getenv("TDA_THREADS")) {
        int v = std::atoi(s);
        if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Run two independent jobs, concurrently when the budget allows.
template <class F, class G>
void run_pair(F&& f, G&& g) {
    if (thread_budget() >= 2) {
        std::thread t(std::forward<F>(f));
        g();
        t.join();
    } else {
        f();
        g();
    }
}

} // namespace ugwt

#endif // UGWT_COMMON_HPP
