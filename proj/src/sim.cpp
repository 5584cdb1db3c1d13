#include "pxst/sim.hpp"

#include "pxst/analysis.hpp"
#include "pxst/errors.hpp"
#include "pxst/fft.hpp"
#include "pxst/geometry.hpp"
#include "pxst/integrate.hpp"
#include "pxst/interp.hpp"
#include "pxst/parallel.hpp"
#include "pxst/recon.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace pxst {

namespace {

constexpr double pi = std::numbers::pi;

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Periodic Gaussian smoothing through the FFT.
ImageD smooth_periodic(const ImageD &a, double sigma) {
    if (!(sigma > 0)) return a;
    const Eigen::ArrayXd qs = fft::frequencies(a.rows(), 1.0);
    const Eigen::ArrayXd qf = fft::frequencies(a.cols(), 1.0);
    ImageC s = fft::forward(a);
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j)
            s(i, j) *= std::exp(-2 * pi * pi * sigma * sigma * (qs[i] * qs[i] + qf[j] * qf[j]));
    return fft::inverse(s).real();
}

ImageD unit_texture(const SimSpec &spec, Index rows, Index cols, std::mt19937_64 &rng) {
    ImageD t(rows, cols);
    switch (spec.texture) {
    case SimSpec::Texture::Blobs: {
        std::normal_distribution<double> g(0.0, 1.0);
        for (Index k = 0; k < t.size(); ++k) t.data()[k] = g(rng);
        t = smooth_periodic(t, spec.texture_sigma);
        const double mean = t.mean();
        const double sd = std::sqrt((t - mean).square().mean());
        t = (t - mean) / (sd > 0 ? sd : 1.0);
        break;
    }
    case SimSpec::Texture::Spokes: {
        const double cs = 0.5 * static_cast<double>(rows - 1), cf = 0.5 * static_cast<double>(cols - 1);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) {
                const double th = std::atan2(static_cast<double>(j) - cf, static_cast<double>(i) - cs);
                t(i, j) = std::sin(spec.spokes * th) > 0 ? 1.0 : -1.0;
            }
        t = smooth_periodic(t, 0.7);
        break;
    }
    case SimSpec::Texture::Image: {
        if (spec.texture_image.size() == 0) throw InvalidArgument("texture image is empty");
        const auto &src = spec.texture_image;
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) t(i, j) = src(i % src.rows(), j % src.cols());
        break;
    }
    }
    return t;
}

}  // namespace

std::pair<double, double> phase_to_pixel_scale(const SimSpec &spec) {
    const Geometry g = make_geometry(spec.z1_ss, spec.z1_fs, spec.z, spec.x_pixel_size, spec.y_pixel_size);
    return {spec.wavelength * spec.z / (2 * pi * spec.x_pixel_size * g.du),
            spec.wavelength * spec.z / (2 * pi * spec.y_pixel_size * g.dv)};
}

ImageD aberration_phase(const SimSpec &spec) {
    const Index rows = spec.shape.ss, cols = spec.shape.fs;
    ImageD phi = ImageD::Zero(rows, cols);
    const double cs = 0.5 * static_cast<double>(rows - 1), cf = 0.5 * static_cast<double>(cols - 1);
    const double as = std::sqrt(2.0) * std::max(0.5, cs), af = std::sqrt(2.0) * std::max(0.5, cf);
    for (const auto &[j, c] : spec.aberrations)
        for (Index a = 0; a < rows; ++a)
            for (Index b = 0; b < cols; ++b) {
                const double x = (static_cast<double>(a) - cs) / as;
                const double y = (static_cast<double>(b) - cf) / af;
                phi(a, b) += c * zernike(j, std::hypot(x, y), std::atan2(y, x));
            }
    return phi;
}

void scale_to_peak_displacement(SimSpec &spec, double pixels) {
    if (!(pixels > 0)) throw InvalidArgument("peak displacement must be > 0");
    const auto [ks, kf] = phase_to_pixel_scale(spec);
    const ImageD phi = aberration_phase(spec);
    const double peak = std::max((ks * derivative(phi, 0)).abs().maxCoeff(), (kf * derivative(phi, 1)).abs().maxCoeff());
    if (!(peak > 0)) throw InvalidArgument("aberrations produce no displacement");
    for (auto &a : spec.aberrations) a.second *= pixels / peak;
}

Simulation simulate_scan(const SimSpec &spec) {
    if (spec.shape.ss < 2 || spec.shape.fs < 2) throw InvalidArgument("detector must be at least 2x2");
    if (spec.n_positions < 1) throw InvalidArgument("need at least one position");
    if (!(spec.peak_counts > 0)) throw InvalidArgument("peak_counts must be > 0");
    const Geometry geom = make_geometry(spec.z1_ss, spec.z1_fs, spec.z, spec.x_pixel_size, spec.y_pixel_size);
    const Shape2 shape = spec.shape;

    Simulation sim;
    GroundTruth &truth = sim.truth;
    truth.geometry = geom;
    truth.zernike_coeffs = spec.aberrations;
    truth.phase = aberration_phase(spec);

    const auto [ks, kf] = phase_to_pixel_scale(spec);
    const PixelMap id = PixelMap::identity(shape);
    truth.pixel_map.ss = id.ss - ks * derivative(truth.phase, 0);
    truth.pixel_map.fs = id.fs - kf * derivative(truth.phase, 1);
    const double max_disp = std::max((truth.pixel_map.ss - id.ss).abs().maxCoeff(),
                                     (truth.pixel_map.fs - id.fs).abs().maxCoeff());
    if (max_disp > static_cast<double>(std::max(shape.ss, shape.fs)))
        throw InvalidArgument("aberration displacement exceeds the reference extent");

    // positions in reference px
    const Index N = spec.n_positions;
    truth.translations.di.resize(N);
    truth.translations.dj.resize(N);
    std::mt19937_64 rng(mix(spec.seed));
    if (spec.positions == SimSpec::Positions::Raster) {
        std::uniform_real_distribution<double> jit(-0.5 * spec.jitter * spec.step, 0.5 * spec.jitter * spec.step);
        const Index nx = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(N))));
        const Index ny = (N + nx - 1) / nx;
        for (Index k = 0; k < N; ++k) {
            truth.translations.di[k] = spec.step * (static_cast<double>(k / ny) - 0.5 * static_cast<double>(nx - 1));
            truth.translations.dj[k] = spec.step * (static_cast<double>(k % ny) - 0.5 * static_cast<double>(ny - 1));
            if (spec.jitter > 0) {
                truth.translations.di[k] += jit(rng);
                truth.translations.dj[k] += jit(rng);
            }
        }
    } else {
        const double golden = pi * (3.0 - std::sqrt(5.0));
        for (Index k = 0; k < N; ++k) {
            const double r = spec.step * std::sqrt(static_cast<double>(k));
            truth.translations.di[k] = r * std::cos(golden * static_cast<double>(k));
            truth.translations.dj[k] = r * std::sin(golden * static_cast<double>(k));
        }
    }

    // reference on a grid covering every sampled position
    const ImageB all = ImageB::Constant(shape.ss, shape.fs, true);
    const ReferenceGrid g = reference_grid(truth.pixel_map, truth.translations, all, {});
    const ImageD tex = unit_texture(spec, g.rows, g.cols, rng);
    ImageD iref;
    if (spec.hologram) {
        ImageC field(g.rows, g.cols);
        for (Index k = 0; k < tex.size(); ++k) field.data()[k] = std::polar(1.0, spec.hologram_phase * tex.data()[k]);
        ImageC s = fft::forward(field);
        const Eigen::ArrayXd qs = fft::frequencies(g.rows, geom.du);
        const Eigen::ArrayXd qf = fft::frequencies(g.cols, geom.dv);
        for (Index i = 0; i < g.rows; ++i)
            for (Index j = 0; j < g.cols; ++j)
                s(i, j) *= std::polar(1.0, -pi * spec.wavelength *
                                               (geom.zbar_ss * qs[i] * qs[i] + geom.zbar_fs * qf[j] * qf[j]));
        iref = fft::inverse(s).abs2();
    } else if (spec.texture == SimSpec::Texture::Image) {
        iref = tex;
    } else {
        iref = (1.0 + spec.texture_contrast * tex).max(0.05);
    }
    truth.reference.i_ref = iref;
    truth.reference.wsum = ImageD::Ones(g.rows, g.cols);
    truth.reference.origin_ss = g.origin_ss;
    truth.reference.origin_fs = g.origin_fs;
    truth.reference.du = geom.du;
    truth.reference.dv = geom.dv;

    // whitefield
    ImageD W(shape.ss, shape.fs);
    if (spec.whitefield == SimSpec::WhitefieldModel::Flat) {
        W.setConstant(spec.peak_counts);
    } else {
        const double cs = 0.5 * static_cast<double>(shape.ss - 1), cf = 0.5 * static_cast<double>(shape.fs - 1);
        const double ss_sig = spec.whitefield_width * static_cast<double>(shape.ss);
        const double fs_sig = spec.whitefield_width * static_cast<double>(shape.fs);
        for (Index i = 0; i < shape.ss; ++i)
            for (Index j = 0; j < shape.fs; ++j) {
                const double a = (static_cast<double>(i) - cs) / ss_sig, b = (static_cast<double>(j) - cf) / fs_sig;
                W(i, j) = spec.peak_counts * std::exp(-0.5 * (a * a + b * b));
            }
    }
    sim.whitefield = W;

    ScanData &scan = sim.scan;
    scan.wavelength = spec.wavelength;
    scan.distance = spec.z;
    scan.x_pixel_size = spec.x_pixel_size;
    scan.y_pixel_size = spec.y_pixel_size;
    BasisVectors bv;
    bv << spec.x_pixel_size, 0, 0, 0, spec.y_pixel_size, 0;
    scan.basis_vectors.assign(N, bv);
    scan.translations.resize(N, 3);
    for (Index k = 0; k < N; ++k)
        scan.translations.row(k) << truth.translations.di[k] * geom.du, truth.translations.dj[k] * geom.dv, 0.0;
    scan.good_frames.assign(N, true);
    scan.frames.resize(N);

    const auto &u = truth.pixel_map;
    parallel_for(0, N, [&](Index n) {
        ImageD f(shape.ss, shape.fs);
        for (Index i = 0; i < shape.ss; ++i)
            for (Index j = 0; j < shape.fs; ++j) {
                const auto s = interp::gather(iref, u.ss(i, j) - truth.translations.di[n] - g.origin_ss,
                                              u.fs(i, j) - truth.translations.dj[n] - g.origin_fs);
                f(i, j) = W(i, j) * s.value;
            }
        if (spec.poisson) {
            std::mt19937_64 frng(mix(spec.seed ^ mix(static_cast<std::uint64_t>(n) + 1)));
            for (Index k = 0; k < f.size(); ++k) {
                std::poisson_distribution<long long> p(f.data()[k]);
                f.data()[k] = f.data()[k] > 0 ? static_cast<double>(p(frng)) : 0.0;
            }
        }
        scan.frames[n] = std::move(f);
    });
    return sim;
}

}  // namespace pxst
