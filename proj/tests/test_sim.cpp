#include "support.hpp"

#include "pxst/errors.hpp"
#include "pxst/geometry.hpp"
#include "pxst/integrate.hpp"
#include "pxst/recon.hpp"
#include "pxst/sim.hpp"

#include <doctest.h>

#include <cmath>

using namespace pxst;

TEST_SUITE("sim") {

TEST_CASE("one aberration-free frame is the whitefield times the reference") {
    SimSpec spec;
    spec.shape = {20, 26};
    spec.n_positions = 1;
    spec.whitefield = SimSpec::WhitefieldModel::Gaussian;
    const Simulation sim = simulate_scan(spec);
    REQUIRE(sim.scan.frames.size() == 1);
    const auto &ref = sim.truth.reference;
    CHECK(sim.truth.translations.di[0] == 0.0);
    CHECK(sim.truth.translations.dj[0] == 0.0);
    const ImageD expect = sim.whitefield * ref.i_ref.block(-ref.origin_ss, -ref.origin_fs, 20, 26);
    CHECK((sim.scan.frames[0] - expect).abs().maxCoeff() < 1e-12 * expect.maxCoeff());
    CHECK(validate(sim.scan).empty());
}

TEST_CASE("defocus alone leaves the identity map") {
    SimSpec spec;
    spec.shape = {16, 18};
    spec.z1_ss = 1e-3;
    spec.z1_fs = 2e-3;
    spec.n_positions = 4;
    const Simulation sim = simulate_scan(spec);
    const PixelMap id = PixelMap::identity(spec.shape);
    CHECK((sim.truth.pixel_map.ss == id.ss).all());
    CHECK((sim.truth.pixel_map.fs == id.fs).all());
    CHECK(sim.truth.phase.abs().maxCoeff() == 0.0);
    CHECK(sim.truth.geometry.mag_ss == doctest::Approx(1001.0));
    CHECK(sim.truth.geometry.mag_fs == doctest::Approx(501.0));
}

TEST_CASE("ground truth is self-consistent") {
    const SimSpec spec = testing::small_spec(4);
    const Simulation sim = simulate_scan(spec);
    const Whitefield w{sim.whitefield};
    const PixelMask m = PixelMask::all_good(spec.shape);
    const Roi roi = Roi::full(spec.shape);
    const auto &t = sim.truth;
    const ErrorMetrics e = calc_error(sim.scan, w, m, t.reference, t.pixel_map, t.translations, roi);
    const ErrorMetrics off =
        calc_error(sim.scan, w, m, t.reference, PixelMap::identity(spec.shape), t.translations, roi);
    MESSAGE("truth error " << e.total << ", identity-map error " << off.total);
    CHECK(off.total > 0);
    CHECK(e.total < 1e-10 * off.total);

    // the map is the gradient mapping of the phase
    const auto [ks, kf] = phase_to_pixel_scale(spec);
    const PixelMap id = PixelMap::identity(spec.shape);
    CHECK((t.pixel_map.ss - (id.ss - ks * derivative(t.phase, 0))).abs().maxCoeff() < 1e-12);
    CHECK((t.pixel_map.fs - (id.fs - kf * derivative(t.phase, 1))).abs().maxCoeff() < 1e-12);

    // translations in the file convert back to the truth
    const PixelTranslations back = translations_to_pixels(sim.scan, t.geometry);
    CHECK((back.di - t.translations.di).abs().maxCoeff() < 1e-9);
    CHECK((back.dj - t.translations.dj).abs().maxCoeff() < 1e-9);
}

TEST_CASE("peak displacement scaling") {
    SimSpec spec = testing::small_spec(1);
    scale_to_peak_displacement(spec, 2.5);
    const Simulation sim = simulate_scan(spec);
    const PixelMap id = PixelMap::identity(spec.shape);
    const double peak = std::max((sim.truth.pixel_map.ss - id.ss).abs().maxCoeff(),
                                 (sim.truth.pixel_map.fs - id.fs).abs().maxCoeff());
    CHECK(peak == doctest::Approx(2.5).epsilon(1e-9));
    spec.aberrations.clear();
    CHECK_THROWS_AS(scale_to_peak_displacement(spec, 1.0), InvalidArgument);
}

TEST_CASE("poisson frames scatter around the noiseless frames") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        SimSpec spec = testing::small_spec(seed);
        spec.peak_counts = 50;
        const Simulation clean = simulate_scan(spec);
        spec.poisson = true;
        const Simulation noisy = simulate_scan(spec);
        double diff = 0, mean = 0, z2 = 0;
        Index n = 0;
        for (std::size_t k = 0; k < clean.scan.frames.size(); ++k) {
            const ImageD &c = clean.scan.frames[k], &p = noisy.scan.frames[k];
            CHECK((p == p.round()).all());
            diff += (p - c).sum();
            mean += c.sum();
            z2 += ((p - c).square() / c).sum();
            n += c.size();
        }
        // sum of Poisson deviates has variance equal to the summed mean
        CHECK(std::abs(diff) < 3 * std::sqrt(mean));
        // normalised residual variance is one, with sd about sqrt(2 / n)
        CHECK(std::abs(z2 / static_cast<double>(n) - 1.0) < 3 * std::sqrt(2.0 / static_cast<double>(n)) + 0.02);
    }
}

TEST_CASE("simulation is seeded") {
    SimSpec spec = testing::small_spec(6);
    spec.poisson = true;
    const Simulation a = simulate_scan(spec);
    const Simulation b = simulate_scan(spec);
    for (std::size_t k = 0; k < a.scan.frames.size(); ++k) CHECK((a.scan.frames[k] == b.scan.frames[k]).all());
    spec.seed = 7;
    const Simulation c = simulate_scan(spec);
    CHECK(!(a.scan.frames[0] == c.scan.frames[0]).all());
}

TEST_CASE("spiral and texture options") {
    SimSpec spec = testing::small_spec(2);
    spec.positions = SimSpec::Positions::Spiral;
    spec.texture = SimSpec::Texture::Spokes;
    const Simulation s = simulate_scan(spec);
    CHECK(s.truth.translations.di[0] == 0.0);
    CHECK(std::hypot(s.truth.translations.di[4], s.truth.translations.dj[4]) == doctest::Approx(spec.step * 2));

    spec.texture = SimSpec::Texture::Image;
    spec.texture_image = ImageD::Constant(3, 3, 2.0);
    const Simulation img = simulate_scan(spec);
    CHECK((img.truth.reference.i_ref == 2.0).all());
    spec.texture_image.resize(0, 0);
    CHECK_THROWS_AS(simulate_scan(spec), InvalidArgument);
}

TEST_CASE("invalid specs") {
    SimSpec spec;
    spec.shape = {1, 10};
    CHECK_THROWS_AS(simulate_scan(spec), InvalidArgument);
    spec.shape = {10, 10};
    spec.n_positions = 0;
    CHECK_THROWS_AS(simulate_scan(spec), InvalidArgument);
    spec.n_positions = 1;
    spec.aberrations = {{4, 1.0}};
    scale_to_peak_displacement(spec, 50.0);
    CHECK_THROWS_AS(simulate_scan(spec), InvalidArgument);
}

}  // TEST_SUITE
