#include "pxst/cxi.hpp"

#include "pxst/errors.hpp"

#include <hdf5.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <mutex>
#include <sstream>

namespace pxst::cxi {

namespace fs = std::filesystem;

namespace {

std::recursive_mutex &h5_lock() {
    static std::recursive_mutex m;
    return m;
}

void silence_hdf5() {
    static std::once_flag once;
    std::call_once(once, [] { H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr); });
}

// Owns one hid_t and closes it with the matching H5*close.
class Handle {
public:
    using Closer = herr_t (*)(hid_t);
    Handle(hid_t id, Closer closer) : id_(id), closer_(closer) {}
    ~Handle() {
        if (id_ >= 0) closer_(id_);
    }
    Handle(const Handle &) = delete;
    Handle &operator=(const Handle &) = delete;
    hid_t get() const { return id_; }
    explicit operator bool() const { return id_ >= 0; }

private:
    hid_t id_;
    Closer closer_;
};

std::string shape_string(const std::vector<Index> &s) {
    std::ostringstream o;
    o << "(";
    for (std::size_t k = 0; k < s.size(); ++k) o << (k ? "," : "") << s[k];
    o << ")";
    return o.str();
}

bool link_exists(hid_t file, const std::string &path) {
    // H5Lexists requires every intermediate link to exist.
    std::string partial;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '/')) {
        if (part.empty()) continue;
        partial += "/" + part;
        if (H5Lexists(file, partial.c_str(), H5P_DEFAULT) <= 0) return false;
    }
    return !partial.empty();
}

hid_t file_type(DType t) {
    switch (t) {
    case DType::UInt8: return H5T_STD_U8LE;
    case DType::Int64: return H5T_STD_I64LE;
    default: return H5T_IEEE_F64LE;
    }
}

}  // namespace

std::vector<std::string> CxiPaths::invalid() const {
    std::vector<std::string> bad;
    auto check = [&](const std::string &p, const char *name) {
        if (p.empty() || p.front() != '/') bad.emplace_back(name);
    };
    check(data, "data");
    check(translation, "translation");
    check(basis_vectors, "basis_vectors");
    check(distance, "distance");
    check(x_pixel_size, "x_pixel_size");
    check(y_pixel_size, "y_pixel_size");
    check(wavelength, "wavelength");
    check(energy, "energy");
    check(good_frames, "good_frames");
    check(mask, "mask");
    check(whitefield, "whitefield");
    check(output_group, "output_group");
    return bad;
}

CxiPaths CxiPaths::with_output_group(const std::string &group) const {
    CxiPaths p = *this;
    p.output_group = group;
    p.good_frames = group + "/good_frames";
    p.mask = group + "/mask";
    p.whitefield = group + "/whitefield";
    return p;
}

// ---------------------------------------------------------------- NDArray

Index NDArray::size() const {
    Index n = 1;
    for (Index s : shape) n *= s;
    return n;
}

NDArray NDArray::scalar(double v) { return {{}, {v}, DType::Float64}; }

NDArray NDArray::vector(const Eigen::ArrayXd &v) {
    return {{v.size()}, std::vector<double>(v.data(), v.data() + v.size()), DType::Float64};
}

NDArray NDArray::image(const ImageD &a) {
    return {{a.rows(), a.cols()}, std::vector<double>(a.data(), a.data() + a.size()),
            DType::Float64};
}

NDArray NDArray::mask(const ImageB &a) {
    NDArray out{{a.rows(), a.cols()}, std::vector<double>(a.size()), DType::UInt8};
    for (Index k = 0; k < a.size(); ++k) out.values[k] = a.data()[k] ? 1.0 : 0.0;
    return out;
}

NDArray NDArray::stack(const StackD &s) {
    NDArray out;
    if (s.empty()) return out;
    out.shape = {static_cast<Index>(s.size()), s.front().rows(), s.front().cols()};
    out.values.reserve(out.size());
    for (const auto &f : s) out.values.insert(out.values.end(), f.data(), f.data() + f.size());
    return out;
}

NDArray NDArray::from_pixel_map(const PixelMap &u) {
    NDArray out;
    out.shape = {2, u.ss.rows(), u.ss.cols()};
    out.values.reserve(out.size());
    out.values.insert(out.values.end(), u.ss.data(), u.ss.data() + u.ss.size());
    out.values.insert(out.values.end(), u.fs.data(), u.fs.data() + u.fs.size());
    return out;
}

ImageD NDArray::to_image() const {
    if (shape.size() != 2) throw ShapeMismatch("image", "2-d", shape_string(shape));
    return Eigen::Map<const ImageD>(values.data(), shape[0], shape[1]);
}

ImageB NDArray::to_mask() const { return to_image() != 0.0; }

Eigen::ArrayXd NDArray::to_vector() const {
    return Eigen::Map<const Eigen::ArrayXd>(values.data(), static_cast<Index>(values.size()));
}

PixelMap NDArray::to_pixel_map() const {
    if (shape.size() != 3 || shape[0] != 2)
        throw ShapeMismatch("pixel_map", "(2,SS,FS)", shape_string(shape));
    const Index n = shape[1] * shape[2];
    PixelMap u;
    u.ss = Eigen::Map<const ImageD>(values.data(), shape[1], shape[2]);
    u.fs = Eigen::Map<const ImageD>(values.data() + n, shape[1], shape[2]);
    return u;
}

// ---------------------------------------------------------------- File

File::File(const std::string &path, Mode mode) : path_(path) {
    std::lock_guard lock(h5_lock());
    silence_hdf5();
    if (mode == Mode::Create) {
        id_ = H5Fcreate(path.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, H5P_DEFAULT);
        if (id_ < 0) throw DataError("cannot create file: " + path);
        return;
    }
    if (!fs::exists(path)) throw DataError("file not found: " + path);
    if (mode == Mode::ReadWrite) {
        const auto perms = fs::status(path).permissions();
        if ((perms & fs::perms::owner_write) == fs::perms::none) throw ReadOnlyFile(path);
        id_ = H5Fopen(path.c_str(), H5F_ACC_RDWR, H5P_DEFAULT);
        if (id_ < 0) throw ReadOnlyFile(path);
    } else {
        id_ = H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT);
        if (id_ < 0) throw DataError("cannot open HDF5 file: " + path);
    }
}

File::~File() {
    if (id_ >= 0) {
        std::lock_guard lock(h5_lock());
        H5Fclose(id_);
    }
}

File::File(File &&o) noexcept : path_(std::move(o.path_)), id_(o.id_) { o.id_ = -1; }

File &File::operator=(File &&o) noexcept {
    if (this != &o) {
        if (id_ >= 0) {
            std::lock_guard lock(h5_lock());
            H5Fclose(id_);
        }
        path_ = std::move(o.path_);
        id_ = o.id_;
        o.id_ = -1;
    }
    return *this;
}

bool File::exists(const std::string &dataset) const {
    std::lock_guard lock(h5_lock());
    return link_exists(id_, dataset);
}

std::vector<Index> File::shape(const std::string &dataset) const {
    std::lock_guard lock(h5_lock());
    if (!link_exists(id_, dataset)) throw MissingDataset(dataset);
    Handle ds(H5Dopen2(id_, dataset.c_str(), H5P_DEFAULT), H5Dclose);
    if (!ds) throw MissingDataset(dataset);
    Handle space(H5Dget_space(ds.get()), H5Sclose);
    const int rank = H5Sget_simple_extent_ndims(space.get());
    std::vector<hsize_t> dims(std::max(rank, 0));
    H5Sget_simple_extent_dims(space.get(), dims.data(), nullptr);
    return {dims.begin(), dims.end()};
}

NDArray File::read(const std::string &dataset) const {
    std::lock_guard lock(h5_lock());
    NDArray out;
    out.shape = shape(dataset);
    out.values.resize(out.size());
    Handle ds(H5Dopen2(id_, dataset.c_str(), H5P_DEFAULT), H5Dclose);
    if (out.values.empty()) return out;
    if (H5Dread(ds.get(), H5T_NATIVE_DOUBLE, H5S_ALL, H5S_ALL, H5P_DEFAULT, out.values.data()) < 0)
        throw FormatError("cannot read dataset as numbers: " + dataset);
    return out;
}

ImageD File::read_frame(const std::string &dataset, Index n, const std::optional<Roi> &roi) const {
    std::lock_guard lock(h5_lock());
    const auto dims = shape(dataset);
    if (dims.size() != 3) throw ShapeMismatch(dataset, "(N,SS,FS)", shape_string(dims));
    if (n < 0 || n >= dims[0]) throw InvalidArgument("frame index out of range");
    Roi r = roi.value_or(Roi::full({dims[1], dims[2]}));
    if (!r.valid_for({dims[1], dims[2]})) throw InvalidArgument("roi outside the detector");

    Handle ds(H5Dopen2(id_, dataset.c_str(), H5P_DEFAULT), H5Dclose);
    Handle space(H5Dget_space(ds.get()), H5Sclose);
    const hsize_t start[3] = {static_cast<hsize_t>(n), static_cast<hsize_t>(r.ss_min),
                              static_cast<hsize_t>(r.fs_min)};
    const hsize_t count[3] = {1, static_cast<hsize_t>(r.ss_size()),
                              static_cast<hsize_t>(r.fs_size())};
    H5Sselect_hyperslab(space.get(), H5S_SELECT_SET, start, nullptr, count, nullptr);
    Handle mem(H5Screate_simple(3, count, nullptr), H5Sclose);
    ImageD frame(r.ss_size(), r.fs_size());
    if (H5Dread(ds.get(), H5T_NATIVE_DOUBLE, mem.get(), space.get(), H5P_DEFAULT, frame.data()) < 0)
        throw FormatError("cannot read frame from " + dataset);
    return frame;
}

void File::write(const std::string &dataset, const NDArray &array) {
    std::lock_guard lock(h5_lock());
    if (link_exists(id_, dataset)) H5Ldelete(id_, dataset.c_str(), H5P_DEFAULT);

    std::vector<hsize_t> dims(array.shape.begin(), array.shape.end());
    Handle space(dims.empty() ? H5Screate(H5S_SCALAR)
                              : H5Screate_simple(static_cast<int>(dims.size()), dims.data(), nullptr),
                 H5Sclose);
    Handle lcpl(H5Pcreate(H5P_LINK_CREATE), H5Pclose);
    H5Pset_create_intermediate_group(lcpl.get(), 1);
    Handle ds(H5Dcreate2(id_, dataset.c_str(), file_type(array.dtype), space.get(), lcpl.get(),
                         H5P_DEFAULT, H5P_DEFAULT),
              H5Dclose);
    if (!ds) throw DataError("cannot create dataset " + dataset + " in " + path_);
    if (array.values.empty()) return;
    if (H5Dwrite(ds.get(), H5T_NATIVE_DOUBLE, H5S_ALL, H5S_ALL, H5P_DEFAULT, array.values.data()) < 0)
        throw DataError("cannot write dataset " + dataset);
}

void File::write_string(const std::string &dataset, const std::string &value) {
    std::lock_guard lock(h5_lock());
    if (link_exists(id_, dataset)) H5Ldelete(id_, dataset.c_str(), H5P_DEFAULT);
    Handle type(H5Tcopy(H5T_C_S1), H5Tclose);
    H5Tset_size(type.get(), std::max<std::size_t>(value.size(), 1));
    H5Tset_strpad(type.get(), H5T_STR_NULLPAD);
    Handle space(H5Screate(H5S_SCALAR), H5Sclose);
    Handle lcpl(H5Pcreate(H5P_LINK_CREATE), H5Pclose);
    H5Pset_create_intermediate_group(lcpl.get(), 1);
    Handle ds(H5Dcreate2(id_, dataset.c_str(), type.get(), space.get(), lcpl.get(), H5P_DEFAULT,
                         H5P_DEFAULT),
              H5Dclose);
    if (!ds) throw DataError("cannot create dataset " + dataset);
    std::string buf = value.empty() ? std::string(1, '\0') : value;
    H5Dwrite(ds.get(), type.get(), H5S_ALL, H5S_ALL, H5P_DEFAULT, buf.data());
}

std::optional<std::string> File::read_string(const std::string &dataset) const {
    std::lock_guard lock(h5_lock());
    if (!link_exists(id_, dataset)) return std::nullopt;
    Handle ds(H5Dopen2(id_, dataset.c_str(), H5P_DEFAULT), H5Dclose);
    Handle type(H5Dget_type(ds.get()), H5Tclose);
    if (H5Tget_class(type.get()) != H5T_STRING) return std::nullopt;
    if (H5Tis_variable_str(type.get()) > 0) {
        char *ptr = nullptr;
        Handle mtype(H5Tcopy(H5T_C_S1), H5Tclose);
        H5Tset_size(mtype.get(), H5T_VARIABLE);
        H5Dread(ds.get(), mtype.get(), H5S_ALL, H5S_ALL, H5P_DEFAULT, &ptr);
        std::string s = ptr ? ptr : "";
        H5free_memory(ptr);
        return s;
    }
    std::string s(H5Tget_size(type.get()), '\0');
    H5Dread(ds.get(), type.get(), H5S_ALL, H5S_ALL, H5P_DEFAULT, s.data());
    s.erase(std::find(s.begin(), s.end(), '\0'), s.end());
    return s;
}

void File::remove(const std::string &dataset) {
    std::lock_guard lock(h5_lock());
    if (link_exists(id_, dataset)) H5Ldelete(id_, dataset.c_str(), H5P_DEFAULT);
}

std::vector<std::string> File::list(const std::string &group) const {
    std::lock_guard lock(h5_lock());
    std::vector<std::string> names;
    if (group != "/" && !link_exists(id_, group)) return names;
    Handle g(H5Gopen2(id_, group.c_str(), H5P_DEFAULT), H5Gclose);
    if (!g) return names;
    H5G_info_t info;
    H5Gget_info(g.get(), &info);
    for (hsize_t k = 0; k < info.nlinks; ++k) {
        const ssize_t len = H5Lget_name_by_idx(g.get(), ".", H5_INDEX_NAME, H5_ITER_INC, k, nullptr,
                                               0, H5P_DEFAULT);
        std::string name(static_cast<std::size_t>(len), '\0');
        H5Lget_name_by_idx(g.get(), ".", H5_INDEX_NAME, H5_ITER_INC, k, name.data(), len + 1,
                           H5P_DEFAULT);
        names.push_back(name);
    }
    return names;
}

// ---------------------------------------------------------------- scans

double wavelength_from_energy(double joules) {
    constexpr double h = 6.62607015e-34;
    constexpr double c = 299792458.0;
    return h * c / joules;
}

namespace {

double read_scalar(const File &f, const std::string &path) {
    const NDArray a = f.read(path);
    if (a.values.empty()) throw FormatError("empty dataset: " + path);
    // Per-frame copies of a scalar are accepted when they agree.
    return a.values.front();
}

}  // namespace

ScanData load_scan(const std::string &path, const CxiPaths &paths, const std::optional<Roi> &roi,
                   std::vector<std::string> *warnings) {
    if (auto bad = paths.invalid(); !bad.empty())
        throw InvalidArgument("dataset path must be absolute: " + bad.front());
    auto warn = [&](const std::string &w) {
        if (warnings) warnings->push_back(w);
    };

    File f(path, File::Mode::ReadOnly);
    ScanData scan;

    const auto dims = f.shape(paths.data);
    if (dims.size() != 3) throw ShapeMismatch(paths.data, "(N,SS,FS)", shape_string(dims));
    const Index n = dims[0];
    if (roi && !roi->valid_for({dims[1], dims[2]})) throw InvalidArgument("roi outside the detector");
    scan.frames.reserve(n);
    for (Index k = 0; k < n; ++k) scan.frames.push_back(f.read_frame(paths.data, k, roi));

    const NDArray t = f.read(paths.translation);
    if (t.shape.size() != 2 || t.shape[0] != n || t.shape[1] != 3)
        throw ShapeMismatch(paths.translation, shape_string({n, 3}), shape_string(t.shape));
    scan.translations.resize(n, 3);
    for (Index k = 0; k < n; ++k)
        for (int c = 0; c < 3; ++c) scan.translations(k, c) = t.values[k * 3 + c];

    const NDArray b = f.read(paths.basis_vectors);
    if (b.shape.size() == 3 && b.shape[0] == n && b.shape[1] == 2 && b.shape[2] == 3) {
        for (Index k = 0; k < n; ++k) {
            BasisVectors bv;
            for (int r = 0; r < 2; ++r)
                for (int c = 0; c < 3; ++c) bv(r, c) = b.values[k * 6 + r * 3 + c];
            scan.basis_vectors.push_back(bv);
        }
    } else if (b.shape.size() == 2 && b.shape[0] == 2 && b.shape[1] == 3) {
        BasisVectors bv;
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 3; ++c) bv(r, c) = b.values[r * 3 + c];
        scan.basis_vectors.assign(n, bv);
    } else {
        throw ShapeMismatch(paths.basis_vectors, shape_string({n, 2, 3}), shape_string(b.shape));
    }
    if (basis_vector_spread(scan) > 1e-9)
        throw DataError("basis_vectors vary across frames; only a fixed detector is supported");

    scan.distance = read_scalar(f, paths.distance);
    scan.x_pixel_size = read_scalar(f, paths.x_pixel_size);
    scan.y_pixel_size = read_scalar(f, paths.y_pixel_size);
    if (f.exists(paths.wavelength)) {
        scan.wavelength = read_scalar(f, paths.wavelength);
    } else if (f.exists(paths.energy)) {
        double e = read_scalar(f, paths.energy);
        // CXI stores joules; values above 1 can only be electron-volts.
        if (e > 1.0) e *= 1.602176634e-19;
        scan.wavelength = wavelength_from_energy(e);
    } else {
        throw MissingDataset(paths.wavelength);
    }
    if (scan.distance < 1e-3 || scan.distance > 100)
        warn("detector distance outside [1e-3, 100] m: check units");

    scan.good_frames.assign(n, true);
    if (f.exists(paths.good_frames)) {
        const NDArray g = f.read(paths.good_frames);
        const bool boolean = g.size() == n && std::all_of(g.values.begin(), g.values.end(),
                                                          [](double v) { return v == 0 || v == 1; });
        if (boolean) {
            for (Index k = 0; k < n; ++k) scan.good_frames[k] = g.values[k] != 0;
        } else {
            // Index-list form: the listed frames are the good ones.
            scan.good_frames.assign(n, false);
            for (double v : g.values) {
                const auto k = static_cast<Index>(v);
                if (k < 0 || k >= n) throw FormatError("good_frames index out of range");
                scan.good_frames[k] = true;
            }
        }
    }
    return scan;
}

void save_scan(const std::string &path, const ScanData &scan, const CxiPaths &paths) {
    File f(path, File::Mode::Create);
    f.write(paths.data, NDArray::stack(scan.frames));
    NDArray t{{scan.n_frames(), 3}, {}, DType::Float64};
    for (Index k = 0; k < scan.n_frames(); ++k)
        for (int c = 0; c < 3; ++c) t.values.push_back(scan.translations(k, c));
    f.write(paths.translation, t);
    NDArray b{{scan.n_frames(), 2, 3}, {}, DType::Float64};
    for (const auto &bv : scan.basis_vectors)
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 3; ++c) b.values.push_back(bv(r, c));
    f.write(paths.basis_vectors, b);
    f.write(paths.distance, NDArray::scalar(scan.distance));
    f.write(paths.x_pixel_size, NDArray::scalar(scan.x_pixel_size));
    f.write(paths.y_pixel_size, NDArray::scalar(scan.y_pixel_size));
    f.write(paths.wavelength, NDArray::scalar(scan.wavelength));
    NDArray g{{scan.n_frames()}, {}, DType::UInt8};
    for (bool v : scan.good_frames) g.values.push_back(v ? 1.0 : 0.0);
    f.write(paths.good_frames, g);
}

void write_result(const std::string &path, const std::string &group, const std::string &name,
                  const NDArray &value) {
    if (group.empty() || group.front() != '/')
        throw InvalidArgument("output group must be an absolute path: " + group);
    File f(path, File::Mode::ReadWrite);
    const std::string full = group == "/" ? "/" + name : group + "/" + name;
    f.write(full, value);
}

}  // namespace pxst::cxi
