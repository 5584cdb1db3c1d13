#ifndef PXST_SIM_HPP
#define PXST_SIM_HPP

#include "pxst/types.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace pxst {

struct SimSpec {
    Shape2 shape{128, 128};
    double wavelength = 1e-10;
    double z = 1.0;
    double z1_ss = 1e-3, z1_fs = 1e-3;
    double x_pixel_size = 1e-5, y_pixel_size = 1e-5;

    // Noll index -> radians, sampled on the ellipse circumscribing the detector.
    std::vector<std::pair<int, double>> aberrations;

    enum class WhitefieldModel { Flat, Gaussian };
    WhitefieldModel whitefield = WhitefieldModel::Flat;
    double peak_counts = 1000;
    double whitefield_width = 0.5;  // Gaussian sigma as a fraction of each detector extent

    enum class Texture { Blobs, Spokes, Image };
    Texture texture = Texture::Blobs;
    double texture_sigma = 1.5;     // blob smoothing, reference px
    double texture_contrast = 0.3;  // relative modulation (blobs, spokes)
    int spokes = 24;
    ImageD texture_image;           // used when texture == Image, tiled over the grid
    bool hologram = false;          // render |Fresnel(exp(i texture))|^2 at zbar instead
    double hologram_phase = 0.2;    // phase amplitude of the texture, radians (weak-phase regime)

    enum class Positions { Raster, Spiral };
    Positions positions = Positions::Raster;
    Index n_positions = 25;
    double step = 4.0;    // reference px
    double jitter = 0.0;  // raster only: uniform random offset, fraction of step

    bool poisson = false;
    std::uint64_t seed = 0;
};

struct Simulation {
    ScanData scan;
    GroundTruth truth;
    ImageD whitefield;
};

// Displacement in reference px per radian/px of phase gradient, per axis.
std::pair<double, double> phase_to_pixel_scale(const SimSpec &spec);

// Aberration phase on the detector grid.
ImageD aberration_phase(const SimSpec &spec);

// Rescales spec.aberrations so the largest displacement of the true pixel map
// from the identity is `pixels` reference px.
void scale_to_peak_displacement(SimSpec &spec, double pixels);

Simulation simulate_scan(const SimSpec &spec);

}  // namespace pxst

#endif
