#include "pxst/types.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pxst {

Index ScanData::n_good_frames() const {
    return static_cast<Index>(std::count(good_frames.begin(), good_frames.end(), true));
}

PixelMap PixelMap::identity(Shape2 shape) {
    PixelMap u;
    u.ss.resize(shape.ss, shape.fs);
    u.fs.resize(shape.ss, shape.fs);
    for (Index i = 0; i < shape.ss; ++i)
        for (Index j = 0; j < shape.fs; ++j) {
            u.ss(i, j) = static_cast<double>(i);
            u.fs(i, j) = static_cast<double>(j);
        }
    return u;
}

double basis_vector_spread(const ScanData &scan) {
    double spread = 0;
    for (const auto &b : scan.basis_vectors)
        spread = std::max(spread, (b - scan.basis_vectors.front()).cwiseAbs().maxCoeff());
    return spread;
}

std::vector<std::string> validate(const ScanData &scan) {
    std::vector<std::string> v;
    auto positive = [&](double x, const char *name) {
        if (!(x > 0) || !std::isfinite(x)) v.push_back(std::string(name) + " must be > 0");
    };

    const Index n = scan.n_frames();
    if (n < 1) v.push_back("frames must contain at least one frame");
    positive(scan.wavelength, "wavelength");
    positive(scan.distance, "distance");
    positive(scan.x_pixel_size, "x_pixel_size");
    positive(scan.y_pixel_size, "y_pixel_size");

    const Shape2 shape = scan.frame_shape();
    bool values_ok = true;
    for (const auto &f : scan.frames) {
        if (shape_of(f) != shape) {
            v.push_back("frames must all have the same shape");
            values_ok = true;
            break;
        }
        if (!f.isFinite().all() || (f < 0).any()) values_ok = false;
    }
    if (!values_ok) v.push_back("frames must be finite and >= 0");

    if (scan.translations.rows() != n) {
        std::ostringstream s;
        s << "translations must have " << n << " rows, found " << scan.translations.rows();
        v.push_back(s.str());
    } else if (!scan.translations.allFinite()) {
        v.push_back("translations must be finite");
    }
    if (static_cast<Index>(scan.good_frames.size()) != n)
        v.push_back("good_frames must have one entry per frame");

    if (static_cast<Index>(scan.basis_vectors.size()) != n) {
        v.push_back("basis_vectors must have one entry per frame");
    } else if (n > 0) {
        bool norm_ok = true;
        for (const auto &b : scan.basis_vectors) {
            const double ns = b.row(0).norm();
            const double nf = b.row(1).norm();
            if (std::abs(ns - scan.x_pixel_size) > 1e-6 * scan.x_pixel_size ||
                std::abs(nf - scan.y_pixel_size) > 1e-6 * scan.y_pixel_size)
                norm_ok = false;
        }
        if (!norm_ok) v.push_back("basis_vectors row norm mismatch");
        if (basis_vector_spread(scan) > 1e-9) v.push_back("basis_vectors vary across frames");
    }
    return v;
}

}  // namespace pxst
