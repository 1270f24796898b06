#ifndef UGWT_BUNDLE_HPP
#define UGWT_BUNDLE_HPP

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ugwt/common.hpp"
#include "ugwt/dataset.hpp"
#include "ugwt/mpca.hpp"
#include "ugwt/nn.hpp"
#include "ugwt/tensor.hpp"

namespace ugwt {

static_assert(std::endian::native == std::endian::little,
              "bundle I/O assumes a little-endian host");

// Binary tensor record: magic "UGWT", version u16, dtype u8 (0 = f32,
// 1 = f64), ndims u8, then ndims x u32 dims, then the payload in the tensor's
// native linear order. All fields little-endian.
struct BundleRecord {
    int dtype = 0; // 0 f32, 1 f64
    std::vector<std::uint32_t> dims;
    std::vector<double> values; // widened on load

    std::size_t count() const {
        std::size_t n = 1;
        for (std::uint32_t d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }
};

namespace detail {
constexpr char kBundleMagic[4] = {'U', 'G', 'W', 'T'};
constexpr std::uint16_t kBundleVersion = 1;

template <class T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw ConfigError("bundle: truncated stream");
    return v;
}
} // namespace detail

inline void write_record(std::ostream& os, const BundleRecord& rec) {
    if (rec.dims.size() > 3) throw ConfigError("bundle: at most 3 dims");
    os.write(detail::kBundleMagic, 4);
    detail::write_pod<std::uint16_t>(os, detail::kBundleVersion);
    detail::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(rec.dtype));
    detail::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(rec.dims.size()));
    for (std::uint32_t d : rec.dims) detail::write_pod<std::uint32_t>(os, d);
    if (rec.values.size() != rec.count()) throw ShapeError("bundle: dims/payload mismatch");
    if (rec.dtype == 0) {
        for (double v : rec.values) detail::write_pod<float>(os, static_cast<float>(v));
    } else if (rec.dtype == 1) {
        for (double v : rec.values) detail::write_pod<double>(os, v);
    } else {
        throw ConfigError("bundle: unknown dtype code " + std::to_string(rec.dtype));
    }
}

inline BundleRecord read_record(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, detail::kBundleMagic, 4) != 0)
        throw ConfigError("bundle: bad magic");
    const auto version = detail::read_pod<std::uint16_t>(is);
    if (version != detail::kBundleVersion)
        throw ConfigError("bundle: unsupported version " + std::to_string(version));
    BundleRecord rec;
    rec.dtype = detail::read_pod<std::uint8_t>(is);
    const int ndims = detail::read_pod<std::uint8_t>(is);
    if (ndims < 1 || ndims > 3) throw ConfigError("bundle: bad ndims");
    for (int i = 0; i < ndims; ++i) rec.dims.push_back(detail::read_pod<std::uint32_t>(is));
    rec.values.resize(rec.count());
    if (rec.dtype == 0) {
        for (double& v : rec.values) v = detail::read_pod<float>(is);
    } else if (rec.dtype == 1) {
        for (double& v : rec.values) v = detail::read_pod<double>(is);
    } else {
        throw ConfigError("bundle: unknown dtype code " + std::to_string(rec.dtype));
    }
    return rec;
}

inline void write_record_file(const std::filesystem::path& path, const BundleRecord& rec) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("cannot open for writing: " + path.string());
    write_record(os, rec);
    if (!os) throw ConfigError("write failed: " + path.string());
}

inline BundleRecord read_record_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open: " + path.string());
    return read_record(is);
}

// ---- dataset bundles ----
// A dataset directory holds manifest.cfg (key = value), images.ugwt (one
// 3-D f32 record, rows x cols x images) and labels.csv (site_id,x_mm,y_mm per
// image). Pixels are f32 on disk and widened to f64 in memory.

inline void save_dataset(const std::filesystem::path& dir, const DomainDataset& ds) {
    ds.validate();
    if (ds.images.empty()) throw ConfigError("save_dataset: empty dataset");
    std::filesystem::create_directories(dir);

    BundleRecord rec;
    rec.dtype = 0;
    const int rows = ds.images.front().rows, cols = ds.images.front().cols;
    rec.dims = {static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(cols),
                static_cast<std::uint32_t>(ds.size())};
    rec.values.reserve(static_cast<std::size_t>(rows) * cols * ds.size());
    for (const Matrix& m : ds.images) rec.values.insert(rec.values.end(), m.v.begin(), m.v.end());
    write_record_file(dir / "images.ugwt", rec);

    std::ofstream labels(dir / "labels.csv", std::ios::trunc);
    labels << "site_id,x_mm,y_mm\n";
    for (std::size_t i = 0; i < ds.size(); ++i)
        labels << ds.site_ids[i] << "," << format_g17(ds.labels[i][0]) << ","
               << format_g17(ds.labels[i][1]) << "\n";

    std::ofstream man(dir / "manifest.cfg", std::ios::trunc);
    man << "format = dataset-v1\n";
    man << "material = " << ds.material << "\n";
    man << "network = " << to_string(ds.network) << "\n";
    man << "stage = " << (ds.stage == Stage::raw ? "raw" : "projected") << "\n";
    man << "plate_w = " << format_g17(ds.plate_w) << "\n";
    man << "plate_h = " << format_g17(ds.plate_h) << "\n";
    man << "rows = " << rows << "\n";
    man << "cols = " << cols << "\n";
    man << "images = " << ds.size() << "\n";
    if (!man) throw ConfigError("write failed: " + (dir / "manifest.cfg").string());
}

inline DomainDataset load_dataset(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / "manifest.cfg"))
        throw ConfigError("not a dataset bundle (no manifest.cfg): " + dir.string());

    std::ifstream man(dir / "manifest.cfg");
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(man, line)) {
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    if (kv["format"] != "dataset-v1")
        throw ConfigError("unsupported dataset format '" + kv["format"] + "'");

    DomainDataset ds;
    ds.material = kv["material"];
    ds.network = network_from_string(kv["network"]);
    ds.stage = kv["stage"] == "projected" ? Stage::projected : Stage::raw;
    ds.plate_w = std::strtod(kv["plate_w"].c_str(), nullptr);
    ds.plate_h = std::strtod(kv["plate_h"].c_str(), nullptr);

    const BundleRecord rec = read_record_file(dir / "images.ugwt");
    if (rec.dims.size() != 3) throw ShapeError("dataset images record must be 3-D");
    const int rows = static_cast<int>(rec.dims[0]);
    const int cols = static_cast<int>(rec.dims[1]);
    const int count = static_cast<int>(rec.dims[2]);

    std::ifstream labels(dir / "labels.csv");
    if (!labels) throw ConfigError("missing labels.csv in " + dir.string());
    std::getline(labels, line); // header
    std::vector<std::array<double, 3>> rows_v;
    while (std::getline(labels, line)) {
        if (line.empty()) continue;
        std::array<double, 3> r{};
        std::istringstream is(line);
        std::string cell;
        for (int c = 0; c < 3; ++c) {
            if (!std::getline(is, cell, ',')) throw ConfigError("labels.csv: short row");
            r[c] = std::strtod(cell.c_str(), nullptr);
        }
        rows_v.push_back(r);
    }
    if (static_cast<int>(rows_v.size()) != count)
        throw ShapeError("labels.csv row count != image count");

    const std::size_t per = static_cast<std::size_t>(rows) * cols;
    for (int k = 0; k < count; ++k) {
        Matrix m(rows, cols);
        std::copy(rec.values.begin() + per * k, rec.values.begin() + per * (k + 1),
                  m.v.begin());
        ds.push(std::move(m), rows_v[k][1], rows_v[k][2], static_cast<int>(rows_v[k][0]));
    }
    ds.validate();
    return ds;
}

// ---- model checkpoints ----
// One file: a length-prefixed text manifest (layer chain, frozen mask,
// training history) followed by six f64 records per layer (weights, biases,
// batchnorm scale/shift/statistics) in layer order. Parameters stay f64 so a
// save/load round trip is bit-exact.

namespace detail {

inline std::string layer_to_line(const nn::LayerSpec& l) {
    std::ostringstream os;
    os << static_cast<int>(l.kind) << " " << l.in_h << " " << l.in_w << " " << l.in_c << " "
       << l.kh << " " << l.kw << " " << l.filters << " " << l.sh << " " << l.sw << " "
       << format_g17(l.rate) << " " << l.units;
    return os.str();
}

inline nn::LayerSpec layer_from_line(const std::string& line) {
    std::istringstream is(line);
    int kind;
    nn::LayerSpec l;
    std::string rate;
    if (!(is >> kind >> l.in_h >> l.in_w >> l.in_c >> l.kh >> l.kw >> l.filters >> l.sh >>
          l.sw >> rate >> l.units))
        throw ConfigError("checkpoint: bad layer line '" + line + "'");
    l.kind = static_cast<nn::LayerKind>(kind);
    l.rate = std::strtod(rate.c_str(), nullptr);
    return l;
}

} // namespace detail

inline void save_model(const std::filesystem::path& path, const nn::TrainedModel& model) {
    std::ostringstream man;
    man << "checkpoint-v1\n";
    man << "layers " << model.spec.layers.size() << "\n";
    for (const nn::LayerSpec& l : model.spec.layers) man << detail::layer_to_line(l) << "\n";
    man << "frozen";
    for (bool f : model.frozen) man << " " << (f ? 1 : 0);
    man << "\n";
    man << "early_stopped " << (model.early_stopped ? 1 : 0) << "\n";
    man << "history " << model.history.size() << "\n";
    for (const nn::EpochStats& h : model.history)
        man << format_g17(h.train_loss) << " " << format_g17(h.val_loss) << " "
            << format_g17(h.lr) << "\n";

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("cannot open for writing: " + path.string());
    const std::string text = man.str();
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));

    for (const nn::LayerParams& p : model.params) {
        for (const std::vector<double>* t :
             {&p.w, &p.b, &p.gamma, &p.beta, &p.run_mean, &p.run_var}) {
            BundleRecord rec;
            rec.dtype = 1;
            rec.dims = {static_cast<std::uint32_t>(t->size())};
            rec.values = *t;
            write_record(os, rec);
        }
    }
    if (!os) throw ConfigError("write failed: " + path.string());
}

inline nn::TrainedModel load_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open: " + path.string());
    const auto len = detail::read_pod<std::uint32_t>(is);
    std::string text(len, '\0');
    is.read(text.data(), len);
    if (!is) throw ConfigError("checkpoint: truncated manifest");

    std::istringstream man(text);
    std::string line;
    std::getline(man, line);
    if (line != "checkpoint-v1") throw ConfigError("checkpoint: unsupported format");

    std::string word;
    std::size_t n_layers = 0;
    man >> word >> n_layers;
    std::getline(man, line);
    std::vector<nn::LayerSpec> layers;
    for (std::size_t i = 0; i < n_layers; ++i) {
        std::getline(man, line);
        layers.push_back(detail::layer_from_line(line));
    }
    nn::TrainedModel model;
    model.spec = nn::ModelSpec::chain(std::move(layers));

    man >> word;
    if (word != "frozen") throw ConfigError("checkpoint: missing frozen mask");
    model.frozen.resize(n_layers);
    for (std::size_t i = 0; i < n_layers; ++i) {
        int f;
        man >> f;
        model.frozen[i] = f != 0;
    }
    int early = 0;
    man >> word >> early;
    model.early_stopped = early != 0;
    std::size_t n_hist = 0;
    man >> word >> n_hist;
    for (std::size_t i = 0; i < n_hist; ++i) {
        std::string a, b, c;
        man >> a >> b >> c;
        nn::EpochStats h;
        h.train_loss = std::strtod(a.c_str(), nullptr);
        h.val_loss = std::strtod(b.c_str(), nullptr);
        h.lr = std::strtod(c.c_str(), nullptr);
        model.history.push_back(h);
    }

    model.params.resize(n_layers);
    for (std::size_t i = 0; i < n_layers; ++i) {
        for (std::vector<double>* t :
             {&model.params[i].w, &model.params[i].b, &model.params[i].gamma,
              &model.params[i].beta, &model.params[i].run_mean, &model.params[i].run_var}) {
            const BundleRecord rec = read_record(is);
            if (rec.dtype != 1 || rec.dims.size() != 1)
                throw ConfigError("checkpoint: bad parameter record");
            *t = rec.values;
        }
    }
    return model;
}

// ---- projection basis bundles ----

inline void save_basis(const std::filesystem::path& dir, const ModeBasis& basis) {
    std::filesystem::create_directories(dir);
    {
        BundleRecord rec;
        rec.dtype = 1;
        rec.dims = {static_cast<std::uint32_t>(basis.basis.rows),
                    static_cast<std::uint32_t>(basis.basis.cols)};
        rec.values = basis.basis.v;
        write_record_file(dir / "basis.ugwt", rec);
    }
    {
        BundleRecord rec;
        rec.dtype = 1;
        rec.dims = {static_cast<std::uint32_t>(basis.mean.size())};
        rec.values = basis.mean;
        write_record_file(dir / "mean.ugwt", rec);
    }
    {
        BundleRecord rec;
        rec.dtype = 1;
        rec.dims = {static_cast<std::uint32_t>(basis.eigenvalues.size())};
        rec.values = basis.eigenvalues;
        write_record_file(dir / "eigenvalues.ugwt", rec);
    }
    std::ofstream man(dir / "manifest.cfg", std::ios::trunc);
    man << "format = basis-v1\n";
    man << "q_percent = " << format_g17(basis.q_percent) << "\n";
    man << "retained_fraction = " << format_g17(basis.retained_fraction) << "\n";
    man << "i2 = " << basis.i2() << "\n";
    man << "p2 = " << basis.p2() << "\n";
}

inline ModeBasis load_basis(const std::filesystem::path& dir) {
    const BundleRecord b = read_record_file(dir / "basis.ugwt");
    const BundleRecord m = read_record_file(dir / "mean.ugwt");
    const BundleRecord e = read_record_file(dir / "eigenvalues.ugwt");
    if (b.dims.size() != 2) throw ShapeError("basis record must be 2-D");
    ModeBasis basis;
    basis.basis = Matrix(static_cast<int>(b.dims[0]), static_cast<int>(b.dims[1]));
    basis.basis.v = b.values;
    basis.mean = m.values;
    basis.eigenvalues = e.values;
    if (static_cast<int>(basis.mean.size()) != basis.basis.rows)
        throw ShapeError("basis/mean dims disagree");
    std::ifstream man(dir / "manifest.cfg");
    std::string line;
    while (std::getline(man, line)) {
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, line.find(' '));
        if (key == "q_percent")
            basis.q_percent = std::strtod(line.substr(eq + 1).c_str(), nullptr);
        if (key == "retained_fraction")
            basis.retained_fraction = std::strtod(line.substr(eq + 1).c_str(), nullptr);
    }
    return basis;
}

} // namespace ugwt

#endif // UGWT_BUNDLE_HPP
