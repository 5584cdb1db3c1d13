#ifndef PXST_CXI_HPP
#define PXST_CXI_HPP

#include "pxst/types.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace pxst::cxi {

// Dataset locations inside a CXI file. Outputs go under output_group.
struct CxiPaths {
    std::string data = "/entry_1/data_1/data";
    std::string translation = "/entry_1/sample_1/geometry/translation";
    std::string basis_vectors = "/entry_1/instrument_1/detector_1/basis_vectors";
    std::string distance = "/entry_1/instrument_1/detector_1/distance";
    std::string x_pixel_size = "/entry_1/instrument_1/detector_1/x_pixel_size";
    std::string y_pixel_size = "/entry_1/instrument_1/detector_1/y_pixel_size";
    std::string wavelength = "/entry_1/instrument_1/source_1/wavelength";
    std::string energy = "/entry_1/instrument_1/source_1/energy";
    std::string good_frames = "/speckle_tracking/good_frames";
    std::string mask = "/speckle_tracking/mask";
    std::string whitefield = "/speckle_tracking/whitefield";
    std::string output_group = "/speckle_tracking";

    // Names of fields whose path is not absolute.
    std::vector<std::string> invalid() const;
    // Points good_frames/mask/whitefield at a different output group.
    CxiPaths with_output_group(const std::string &group) const;
};

enum class DType { Float64, UInt8, Int64 };

// Dense N-d array in C order. Values are held as double regardless of the
// on-disk type; dtype selects the type used when writing.
struct NDArray {
    std::vector<Index> shape;
    std::vector<double> values;
    DType dtype = DType::Float64;

    Index size() const;
    static NDArray scalar(double v);
    static NDArray vector(const Eigen::ArrayXd &v);
    static NDArray image(const ImageD &a);
    static NDArray mask(const ImageB &a);
    static NDArray stack(const StackD &s);
    static NDArray from_pixel_map(const PixelMap &u);

    ImageD to_image() const;
    ImageB to_mask() const;
    Eigen::ArrayXd to_vector() const;
    PixelMap to_pixel_map() const;
};

// Thin RAII wrapper around an open HDF5 file. All HDF5 calls made through
// this class are serialised on a process-wide lock.
class File {
public:
    enum class Mode { ReadOnly, ReadWrite, Create };

    File(const std::string &path, Mode mode);
    ~File();
    File(File &&) noexcept;
    File &operator=(File &&) noexcept;
    File(const File &) = delete;
    File &operator=(const File &) = delete;

    const std::string &path() const { return path_; }
    bool exists(const std::string &dataset) const;
    std::vector<Index> shape(const std::string &dataset) const;
    NDArray read(const std::string &dataset) const;
    // One frame of a 3-d stack, optionally cropped.
    ImageD read_frame(const std::string &dataset, Index n, const std::optional<Roi> &roi = {}) const;
    // Creates or replaces dataset (deleting any previous link first).
    void write(const std::string &dataset, const NDArray &array);
    void write_string(const std::string &dataset, const std::string &value);
    std::optional<std::string> read_string(const std::string &dataset) const;
    void remove(const std::string &dataset);
    // Direct children names of a group; empty when the group does not exist.
    std::vector<std::string> list(const std::string &group) const;

private:
    std::string path_;
    std::int64_t id_ = -1;
};

// Reads a scan. Missing good_frames defaults to all true; wavelength falls
// back to hc/E from the photon energy dataset. Non-fatal oddities (e.g. an
// implausible detector distance) are appended to warnings.
ScanData load_scan(const std::string &path, const CxiPaths &paths = {},
                   const std::optional<Roi> &roi = {}, std::vector<std::string> *warnings = nullptr);

// Writes every ScanData field to a new file (overwriting it).
void save_scan(const std::string &path, const ScanData &scan, const CxiPaths &paths = {});

// Creates or overwrites group/name in an existing file.
void write_result(const std::string &path, const std::string &group, const std::string &name,
                  const NDArray &value);

// Photon wavelength for an energy given in joules.
double wavelength_from_energy(double joules);

}  // namespace pxst::cxi

#endif
