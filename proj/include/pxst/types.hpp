#ifndef PXST_TYPES_HPP
#define PXST_TYPES_HPP

#include "pxst/array.hpp"

#include <string>
#include <utility>
#include <vector>

namespace pxst {

using BasisVectors = Eigen::Matrix<double, 2, 3>;   // row 0: slow-scan step, row 1: fast-scan step
using Translations = Eigen::Matrix<double, Eigen::Dynamic, 3>;

// A recorded scan. Lengths are SI metres; frames are photon counts indexed
// [frame][slow-scan, fast-scan].
struct ScanData {
    StackD frames;
    double wavelength = 0;
    double distance = 0;       // sample to detector
    double x_pixel_size = 0;   // slow-scan pixel pitch
    double y_pixel_size = 0;   // fast-scan pixel pitch
    std::vector<BasisVectors> basis_vectors;
    Translations translations;  // sample position per frame, origin at the focus
    std::vector<bool> good_frames;

    Index n_frames() const { return static_cast<Index>(frames.size()); }
    Shape2 frame_shape() const {
        return frames.empty() ? Shape2{} : Shape2{frames.front().rows(), frames.front().cols()};
    }
    Index n_good_frames() const;
};

struct PixelMask {
    ImageB mask;  // true = good pixel

    static PixelMask all_good(Shape2 shape) {
        return {ImageB::Constant(shape.ss, shape.fs, true)};
    }
};

struct Whitefield {
    ImageD w;
};

// Half-open rectangle of detector pixels.
struct Roi {
    Index ss_min = 0, ss_max = 0, fs_min = 0, fs_max = 0;

    static Roi full(Shape2 shape) { return {0, shape.ss, 0, shape.fs}; }
    Index ss_size() const { return ss_max - ss_min; }
    Index fs_size() const { return fs_max - fs_min; }
    bool contains(Index i, Index j) const {
        return i >= ss_min && i < ss_max && j >= fs_min && j < fs_max;
    }
    bool valid_for(Shape2 shape) const {
        return 0 <= ss_min && ss_min < ss_max && ss_max <= shape.ss && 0 <= fs_min &&
               fs_min < fs_max && fs_max <= shape.fs;
    }
    friend bool operator==(const Roi &, const Roi &) = default;
};

// Per-axis projection geometry of a point-focus beam.
struct Geometry {
    double z1_ss = 0, z1_fs = 0;     // focus to sample
    double z = 0;                    // sample to detector
    double mag_ss = 1, mag_fs = 1;   // (z1 + z) / z1
    double du = 0, dv = 0;           // reference-grid sampling (demagnified pixel)
    double zbar_ss = 0, zbar_fs = 0; // z1 z / (z1 + z)
};

// Coordinates into the reference grid for every detector pixel, in units of
// (du, dv).
struct PixelMap {
    ImageD ss;
    ImageD fs;

    static PixelMap identity(Shape2 shape);
    Shape2 shape() const { return shape_of(ss); }
};

// Sample translations in reference-grid pixels.
struct PixelTranslations {
    Eigen::ArrayXd di;
    Eigen::ArrayXd dj;

    Index size() const { return di.size(); }
};

// Merged virtual reference image. Array index (r, c) corresponds to
// reference coordinate (r + origin_ss, c + origin_fs).
struct ReferenceImage {
    ImageD i_ref;
    ImageD wsum;
    Index origin_ss = 0;
    Index origin_fs = 0;
    double du = 0, dv = 0;

    ImageB valid() const { return wsum > 0.0; }
};

struct ErrorMetrics {
    double total = 0;
    Eigen::ArrayXd per_frame;
    ImageD per_pixel;
    ImageD reference_plane;
    ImageD variance;
};

struct GroundTruth {
    ImageD phase;  // aberration phase at the detector plane (radians)
    PixelMap pixel_map;
    ReferenceImage reference;
    PixelTranslations translations;
    std::vector<std::pair<int, double>> zernike_coeffs;  // Noll index, radians
    Geometry geometry;
};

// Lists every violated ScanData invariant; empty when the scan is well formed.
std::vector<std::string> validate(const ScanData &scan);

// Largest per-component deviation of any frame's basis vectors from frame 0.
double basis_vector_spread(const ScanData &scan);

}  // namespace pxst

#endif
