#ifndef PXST_GEOMETRY_HPP
#define PXST_GEOMETRY_HPP

#include "pxst/types.hpp"

#include <vector>

namespace pxst {

Geometry make_geometry(double z1_ss, double z1_fs, double z, double x_pixel_size,
                       double y_pixel_size);
Geometry make_geometry(double z1_ss, double z1_fs, const ScanData &scan);

// Identity map in reference-grid units: u.ss(i, j) = i, u.fs(i, j) = j.
// Astigmatism is carried by the per-axis du, dv of the geometry.
PixelMap generate_pixel_map(const Geometry &geom, Shape2 shape, const Roi &roi);

// Sample translations projected onto the detector axes and divided by the
// reference sampling.
PixelTranslations translations_to_pixels(const ScanData &scan, const Geometry &geom);

// Candidate focus-to-sample distances. An empty z1_fs ties the fast-scan
// value to z1_ss (stigmatic search); otherwise every pair is tried.
struct DefocusGrid {
    std::vector<double> z1_ss;
    std::vector<double> z1_fs;

    std::vector<std::pair<double, double>> candidates() const;
};

struct ThonFit {
    double z1_ss = 0, z1_fs = 0;
    double score = 0;       // Pearson correlation at the optimum
    bool reliable = false;  // score >= 0.2
    ImageD power_spectrum;  // DC at [0, 0]
    std::vector<double> scores;  // one per candidate
};

// Matches the mean power spectrum of the flat-field-corrected frames against
// the defocus fringe model sin^2(pi lambda (zeff_ss q_ss^2 + zeff_fs q_fs^2))
// where zeff = z (z1 + z) / z1 per axis and q is in cycles/m at the detector.
ThonFit fit_thon_rings(const ScanData &scan, const Whitefield &w, const PixelMask &m,
                       const Roi &roi, const DefocusGrid &grid);

struct RegistrationFit {
    double z1_ss = 0, z1_fs = 0;
    std::vector<std::pair<double, double>> candidates;
    std::vector<double> contrast;  // var / mean^2 of the valid reference, per candidate
};

// Builds a reference image for every candidate defocus (identity pixel map,
// translations rescaled by the candidate magnification) and keeps the one
// with the highest contrast. Ties go to the smaller z1.
RegistrationFit fit_defocus_registration(const ScanData &scan, const Whitefield &w,
                                         const PixelMask &m, const Roi &roi,
                                         const DefocusGrid &grid);

}  // namespace pxst

#endif
