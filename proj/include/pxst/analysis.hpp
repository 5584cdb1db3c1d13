#ifndef PXST_ANALYSIS_HPP
#define PXST_ANALYSIS_HPP

#include "pxst/recon.hpp"
#include "pxst/types.hpp"

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace pxst {

// Wavefront phase at the detector plane (radians). phi is the aberration
// part recovered from u - identity; defocus is the ideal separable quadratic
// of the point focus, centred on the detector.
struct Phase {
    ImageD phi;
    ImageD defocus;
    ImageB mask;
    bool converged = true;

    ImageD total() const { return defocus.size() ? ImageD(phi + defocus) : phi; }
};

Phase calculate_phase(const PixelMap &u, const Geometry &geom, double wavelength,
                      double x_pixel_size, double y_pixel_size, const PixelMask &m);

// Least-squares piston + tilt over the mask, evaluated on the full grid.
ImageD fit_tilt(const ImageD &phi, const ImageB &mask);

// Noll index -> (n, m); m < 0 selects the sine term.
std::pair<int, int> noll_to_nm(int j);

// Unit-disk Zernike polynomial, Noll normalisation.
double zernike(int j, double rho, double theta);

struct ZernikeFit {
    std::vector<std::pair<int, double>> coefficients;  // Noll index, radians
    std::vector<ImageD> basis;  // orthonormal over the support: (1/N) sum B_a B_b = delta_ab
    ImageB support;
    double residual_rms = 0;
};

// Zernike terms 1..max_noll sampled on the ellipse circumscribing the
// aperture's bounding box, orthonormalised (modified Gram-Schmidt) over the
// pixels valid in both the phase mask and the aperture.
ZernikeFit zernike_fit(const Phase &phase, const ImageB &aperture, int max_noll);

struct FocusVolume {
    std::vector<ImageD> intensities;  // one slice per z, padded grid
    std::vector<double> z_values;     // relative to the nominal focus
    double dx = 0, dy = 0;            // transverse sampling
    std::vector<double> power;        // per slice
    double input_power = 0;
};

// Angular-spectrum propagation of sqrt(W) exp(i phase.total()) from the
// detector to planes at z (relative to focus, downstream positive).
FocusVolume focus_profile(const Phase &phase, const Whitefield &w, const Geometry &geom,
                          double wavelength, double x_pixel_size, double y_pixel_size,
                          const std::vector<double> &z_values, int padding = 2);

struct ThicknessParams {
    double delta = 0;         // refractive index decrement
    double mu = 0;            // linear attenuation, 1/m
    double zbar = 0;          // effective propagation distance, m
    double pixel_ss = 0;      // sampling of the image, m (0 = take from the reference)
    double pixel_fs = 0;
    std::optional<double> flat;  // flat-field level; default: mean of the valid border
};

struct Thickness {
    ImageD t;  // metres
    ImageB valid;
    Index clipped = 0;  // cells whose filtered intensity was <= 0
    double flat = 0;
};

Thickness calculate_sample_thickness(const ReferenceImage &ref, const ThicknessParams &params);

struct SplitHalf {
    PixelMap u_a, u_b;
    ImageB included;
    std::vector<double> bin_edges;  // shared by both components
    std::vector<Index> hist_ss, hist_fs;
    double sigma_ss = 0, sigma_fs = 0, sigma = 0;
};

// Sample (n, i, j) belongs to half A when the top bit of a counter-based hash
// of (seed, n, i, j) is clear.
bool split_half_assignment(std::uint64_t seed, Index n, Index i, Index j);

SplitHalf split_half_recon(const ScanData &scan, const Whitefield &w, const PixelMask &m,
                           const ReferenceImage &ref, const PixelMap &u,
                           const PixelTranslations &t, const Roi &roi, const SearchWindow &win,
                           std::uint64_t seed, int bins = 51);

}  // namespace pxst

#endif
