#ifndef UGWT_CONFIG_HPP
#define UGWT_CONFIG_HPP

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ugwt/common.hpp"
#include "ugwt/pipeline.hpp"
#include "ugwt/signal.hpp"

namespace ugwt {

// Plain-text key = value configuration. '#' starts a comment. Every key must
// be consumed by the reader; leftovers are rejected so typos fail loudly.
class KvConfig {
public:
    static KvConfig parse_file(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config: " + path.string());
        return parse_stream(is, path.string());
    }

    static KvConfig parse_string(const std::string& text) {
        std::istringstream is(text);
        return parse_stream(is, "<string>");
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(key);
        return it->second;
    }
    std::string require_string(const std::string& key) {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError(origin_ + ": missing required key '" + key + "'");
        consumed_.insert(key);
        return it->second;
    }

    double get_double(const std::string& key, double fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(key);
        return to_double(key, it->second);
    }
    long get_int(const std::string& key, long fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(key);
        return to_int(key, it->second);
    }
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(key);
        char* end = nullptr;
        const std::uint64_t v = std::strtoull(it->second.c_str(), &end, 10);
        if (end == it->second.c_str() || *end != '\0')
            throw ConfigError(origin_ + ": key '" + key + "' is not an unsigned integer");
        return v;
    }
    bool get_bool(const std::string& key, bool fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(key);
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError(origin_ + ": key '" + key + "' is not a boolean");
    }

    // keys matching "<prefix><suffix>", e.g. sensor.3
    std::vector<std::pair<std::string, std::string>> take_prefixed(const std::string& prefix) {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& [k, v] : values_)
            if (k.rfind(prefix, 0) == 0) {
                out.push_back({k.substr(prefix.size()), v});
                consumed_.insert(k);
            }
        return out;
    }

    // every key must have been consumed by now
    void reject_unknown() const {
        for (const auto& [k, v] : values_)
            if (!consumed_.count(k))
                throw ConfigError(origin_ + ": unknown key '" + k + "'");
    }

    double to_double(const std::string& key, const std::string& raw) const {
        char* end = nullptr;
        const double v = std::strtod(raw.c_str(), &end);
        if (end == raw.c_str() || *end != '\0')
            throw ConfigError(origin_ + ": key '" + key + "' is not a number");
        return v;
    }
    long to_int(const std::string& key, const std::string& raw) const {
        char* end = nullptr;
        const long v = std::strtol(raw.c_str(), &end, 10);
        if (end == raw.c_str() || *end != '\0')
            throw ConfigError(origin_ + ": key '" + key + "' is not an integer");
        return v;
    }

private:
    static KvConfig parse_stream(std::istream& is, std::string origin) {
        KvConfig cfg;
        cfg.origin_ = std::move(origin);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t\r");
                const auto b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            const std::string stripped = trim(line);
            if (stripped.empty()) continue;
            const std::size_t eq = stripped.find('=');
            if (eq == std::string::npos)
                throw ConfigError(cfg.origin_ + ":" + std::to_string(lineno) +
                                  ": expected key = value");
            const std::string key = trim(stripped.substr(0, eq));
            const std::string value = trim(stripped.substr(eq + 1));
            if (key.empty()) throw ConfigError(cfg.origin_ + ": empty key");
            if (cfg.values_.count(key))
                throw ConfigError(cfg.origin_ + ": duplicate key '" + key + "'");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    std::string origin_;
    std::map<std::string, std::string> values_;
    std::set<std::string> consumed_;
};

// Scenario file: network tag, material parameters, acquisition settings and
// optional sensor./damage. coordinate overrides (defaults: the installed
// transducer and damage-position tables).
struct ScenarioConfig {
    PlateScenario scenario;
    NetworkTag network = NetworkTag::circular;
    int copies = 1;
};

inline ScenarioConfig scenario_from_kv(KvConfig& kv) {
    ScenarioConfig out;
    out.scenario = default_scenario();
    PlateScenario& sc = out.scenario;

    out.network = network_from_string(kv.require_string("network"));
    out.copies = static_cast<int>(kv.get_int("copies", 1));
    if (out.copies < 1) throw ConfigError("copies must be >= 1");

    sc.material = kv.get_string("material", "mat");
    sc.group_velocity = kv.get_double("group_velocity", sc.group_velocity);
    sc.attenuation_coeff = kv.get_double("attenuation", sc.attenuation_coeff);
    sc.scatter_amplitude = kv.get_double("scatter_amplitude", sc.scatter_amplitude);
    sc.boundary_reflection = kv.get_double("boundary_reflection", sc.boundary_reflection);
    sc.rng_seed = kv.get_u64("seed", sc.rng_seed);
    sc.snr_min_db = kv.get_double("snr_min_db", sc.snr_min_db);
    sc.snr_max_db = kv.get_double("snr_max_db", sc.snr_max_db);
    sc.plate_w = kv.get_double("plate_w", sc.plate_w);
    sc.plate_h = kv.get_double("plate_h", sc.plate_h);
    sc.burst.f0 = kv.get_double("f0", sc.burst.f0);
    sc.burst.cycles = static_cast<int>(kv.get_int("cycles", sc.burst.cycles));
    sc.burst.fs = kv.get_double("fs", sc.burst.fs);
    sc.burst.n_samples = static_cast<int>(kv.get_int("n_samples", sc.burst.n_samples));
    sc.burst.amplitude = kv.get_double("amplitude", sc.burst.amplitude);
    sc.bandpass_lo = kv.get_double("bandpass_lo", sc.bandpass_lo);
    sc.bandpass_hi = kv.get_double("bandpass_hi", sc.bandpass_hi);
    sc.bandpass_order = static_cast<int>(kv.get_int("bandpass_order", sc.bandpass_order));

    auto parse_xy = [&](const std::string& key, const std::string& raw) {
        std::istringstream is(raw);
        double x, y;
        if (!(is >> x >> y)) throw ConfigError("key '" + key + "' wants 'x y' coordinates");
        return std::pair<double, double>{x, y};
    };
    for (const auto& [suffix, raw] : kv.take_prefixed("sensor.")) {
        const int id = static_cast<int>(kv.to_int("sensor." + suffix, suffix));
        const auto [x, y] = parse_xy("sensor." + suffix, raw);
        bool found = false;
        for (PztSensor& s : sc.sensors)
            if (s.id == id) {
                s.x = x;
                s.y = y;
                found = true;
            }
        if (!found) sc.sensors.push_back({id, x, y});
    }
    for (const auto& [suffix, raw] : kv.take_prefixed("damage.")) {
        const int id = static_cast<int>(kv.to_int("damage." + suffix, suffix));
        const auto [x, y] = parse_xy("damage." + suffix, raw);
        bool found = false;
        for (DamageSite& d : sc.damage_sites)
            if (d.id == id) {
                d.x = x;
                d.y = y;
                found = true;
            }
        if (!found) sc.damage_sites.push_back({id, x, y});
    }

    kv.reject_unknown();
    return out;
}

// Experiment file: bundle paths plus the procedure knobs. Training keys apply
// to the from-scratch stages; finetune_* override the fine-tuning stages.
struct ExperimentFileConfig {
    std::string source_bundle;
    std::string target_bundle;
    ExperimentConfig experiment;
};

inline ExperimentFileConfig experiment_from_kv(KvConfig& kv) {
    ExperimentFileConfig out;
    out.source_bundle = kv.require_string("source_bundle");
    out.target_bundle = kv.require_string("target_bundle");

    ExperimentConfig& e = out.experiment;
    e.case_id = kv.get_string("case_id", "experiment");
    e.q_percent = kv.get_double("q_percent", e.q_percent);
    e.seed = kv.get_u64("seed", e.seed);
    e.paper_split = kv.get_bool("paper_split", e.paper_split);

    nn::TrainConfig& t = e.train;
    t.lr = kv.get_double("learning_rate", t.lr);
    t.batch_size = static_cast<int>(kv.get_int("batch_size", t.batch_size));
    t.lr_drop_factor = kv.get_double("lr_drop_factor", t.lr_drop_factor);
    t.lr_drop_period = static_cast<int>(kv.get_int("lr_drop_period", t.lr_drop_period));
    t.max_epochs = static_cast<int>(kv.get_int("max_epochs", t.max_epochs));
    t.early_stop_patience =
        static_cast<int>(kv.get_int("early_stop_patience", t.early_stop_patience));

    e.finetune_train = t;
    nn::TrainConfig& f = e.finetune_train;
    f.lr = kv.get_double("finetune_learning_rate", f.lr);
    f.batch_size = static_cast<int>(kv.get_int("finetune_batch_size", f.batch_size));
    f.max_epochs = static_cast<int>(kv.get_int("finetune_max_epochs", f.max_epochs));
    f.early_stop_patience =
        static_cast<int>(kv.get_int("finetune_early_stop_patience", f.early_stop_patience));

    e.scratch_train = kv.get_double("train_frac", e.scratch_train);
    e.scratch_val = kv.get_double("val_frac", e.scratch_val);
    e.scratch_test = kv.get_double("test_frac", e.scratch_test);
    e.ft_train = kv.get_double("finetune_train_frac", e.ft_train);
    e.ft_val = kv.get_double("finetune_val_frac", e.ft_val);
    e.ft_test = kv.get_double("finetune_test_frac", e.ft_test);

    kv.reject_unknown();
    e.validate();
    return out;
}

} // namespace ugwt

#endif // UGWT_CONFIG_HPP
