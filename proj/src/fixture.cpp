#include "pxst/fixture.hpp"

#include "pxst/errors.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace pxst::fixture {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "fixture payloads are little-endian");

namespace {

struct Payload {
    std::string file;
    std::string dtype;
    std::vector<Index> shape;

    Index count() const {
        Index n = 1;
        for (Index s : shape) n *= s;
        return n;
    }
};

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
    std::ostringstream o;
    o << std::setprecision(17) << std::scientific << v;
    return o.str();
}

void write_f64(const fs::path &p, const std::vector<double> &v) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char *>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    if (!out) throw DataError("cannot write " + p.string());
}

std::vector<char> read_bytes(const fs::path &p, std::size_t expected) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw FormatError("missing fixture payload: " + p.string());
    std::vector<char> buf(expected);
    in.read(buf.data(), static_cast<std::streamsize>(expected));
    if (static_cast<std::size_t>(in.gcount()) != expected)
        throw FormatError("truncated fixture payload: " + p.string());
    return buf;
}

std::vector<double> read_f64(const fs::path &dir, const Payload &p) {
    if (p.dtype != "float64") throw FormatError("expected float64 payload for " + p.file);
    const auto bytes = read_bytes(dir / p.file, static_cast<std::size_t>(p.count()) * 8);
    std::vector<double> v(p.count());
    std::memcpy(v.data(), bytes.data(), bytes.size());
    return v;
}

}  // namespace

void save_fixture(const ScanData &scan, const std::string &dir) {
    const fs::path root(dir);
    fs::create_directories(root);
    const Index n = scan.n_frames();
    const Shape2 shape = scan.frame_shape();

    std::vector<double> frames;
    frames.reserve(n * shape.ss * shape.fs);
    for (const auto &f : scan.frames) frames.insert(frames.end(), f.data(), f.data() + f.size());
    write_f64(root / "frames.bin", frames);

    std::vector<double> t;
    for (Index k = 0; k < n; ++k)
        for (int c = 0; c < 3; ++c) t.push_back(scan.translations(k, c));
    write_f64(root / "translations.bin", t);

    std::vector<double> b;
    for (const auto &bv : scan.basis_vectors)
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 3; ++c) b.push_back(bv(r, c));
    write_f64(root / "basis_vectors.bin", b);

    {
        std::ofstream out(root / "good_frames.bin", std::ios::binary);
        for (bool g : scan.good_frames) out.put(g ? 1 : 0);
    }

    std::ofstream meta(root / "meta");
    meta << "format = pxst-fixture 1\n";
    meta << "wavelength = " << format_double(scan.wavelength) << "\n";
    meta << "distance = " << format_double(scan.distance) << "\n";
    meta << "x_pixel_size = " << format_double(scan.x_pixel_size) << "\n";
    meta << "y_pixel_size = " << format_double(scan.y_pixel_size) << "\n";
    meta << "frames = frames.bin float64 " << n << " " << shape.ss << " " << shape.fs << "\n";
    meta << "translations = translations.bin float64 " << n << " 3\n";
    meta << "basis_vectors = basis_vectors.bin float64 " << n << " 2 3\n";
    meta << "good_frames = good_frames.bin uint8 " << n << "\n";
    if (!meta) throw DataError("cannot write fixture metadata in " + dir);
}

ScanData load_fixture(const std::string &dir) {
    const fs::path root(dir);
    std::ifstream meta(root / "meta");
    if (!meta) throw FormatError("fixture has no meta file: " + dir);

    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(meta, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("malformed fixture metadata at line " + std::to_string(lineno));
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }

    auto require = [&](const std::string &key) -> const std::string & {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError("fixture metadata missing '" + key + "'");
        return it->second;
    };
    auto number = [&](const std::string &key) {
        const std::string &s = require(key);
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception &) {
            used = 0;
        }
        if (used != s.size()) throw FormatError("fixture metadata '" + key + "' is not a number");
        return v;
    };
    auto payload = [&](const std::string &key) {
        std::istringstream in(require(key));
        Payload p;
        in >> p.file >> p.dtype;
        Index d;
        while (in >> d) p.shape.push_back(d);
        if (p.file.empty() || p.dtype.empty() || p.shape.empty())
            throw FormatError("malformed payload description for '" + key + "'");
        return p;
    };

    if (require("format") != "pxst-fixture 1") throw FormatError("unsupported fixture format");

    ScanData scan;
    scan.wavelength = number("wavelength");
    scan.distance = number("distance");
    scan.x_pixel_size = number("x_pixel_size");
    scan.y_pixel_size = number("y_pixel_size");

    const Payload fp = payload("frames");
    if (fp.shape.size() != 3) throw FormatError("frames payload must be 3-d");
    const Index n = fp.shape[0], ss = fp.shape[1], fs_ = fp.shape[2];
    const auto frames = read_f64(root, fp);
    for (Index k = 0; k < n; ++k)
        scan.frames.emplace_back(Eigen::Map<const ImageD>(frames.data() + k * ss * fs_, ss, fs_));

    const Payload tp = payload("translations");
    if (tp.shape != std::vector<Index>{n, 3}) throw FormatError("translations payload must be N x 3");
    const auto t = read_f64(root, tp);
    scan.translations.resize(n, 3);
    for (Index k = 0; k < n; ++k)
        for (int c = 0; c < 3; ++c) scan.translations(k, c) = t[k * 3 + c];

    const Payload bp = payload("basis_vectors");
    if (bp.shape != std::vector<Index>{n, 2, 3})
        throw FormatError("basis_vectors payload must be N x 2 x 3");
    const auto b = read_f64(root, bp);
    for (Index k = 0; k < n; ++k) {
        BasisVectors bv;
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 3; ++c) bv(r, c) = b[k * 6 + r * 3 + c];
        scan.basis_vectors.push_back(bv);
    }

    const Payload gp = payload("good_frames");
    if (gp.dtype != "uint8" || gp.shape != std::vector<Index>{n})
        throw FormatError("good_frames payload must be uint8 of length N");
    const auto g = read_bytes(root / gp.file, static_cast<std::size_t>(n));
    for (char c : g) scan.good_frames.push_back(c != 0);
    return scan;
}

}  // namespace pxst::fixture
