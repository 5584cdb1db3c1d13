#include "pxst/analysis.hpp"

#include "pxst/errors.hpp"
#include "pxst/fft.hpp"
#include "pxst/integrate.hpp"
#include "pxst/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>

namespace pxst {

namespace {

constexpr double pi = std::numbers::pi;

double factorial(int k) {
    double f = 1;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
}

double radial(int n, int m, double rho) {
    m = std::abs(m);
    double r = 0;
    for (int k = 0; k <= (n - m) / 2; ++k) {
        const double c = ((k % 2) ? -1.0 : 1.0) * factorial(n - k) /
                         (factorial(k) * factorial((n + m) / 2 - k) * factorial((n - m) / 2 - k));
        r += c * std::pow(rho, n - 2 * k);
    }
    return r;
}

double robust_sigma(std::vector<double> v) {
    if (v.empty()) return 0;
    auto median = [](std::vector<double> &x) {
        const std::size_t k = x.size() / 2;
        std::nth_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(k), x.end());
        double m = x[k];
        if (x.size() % 2 == 0) {
            const double lo = *std::max_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(k));
            m = 0.5 * (m + lo);
        }
        return m;
    };
    const double med = median(v);
    for (auto &x : v) x = std::abs(x - med);
    return 1.4826 * median(v);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

Phase calculate_phase(const PixelMap &u, const Geometry &geom, double wavelength,
                      double x_pixel_size, double y_pixel_size, const PixelMask &m) {
    if (!(wavelength > 0) || !(geom.z > 0)) throw InvalidArgument("calculate_phase: bad geometry");
    const Shape2 shape = u.shape();
    if (shape_of(m.mask) != shape) throw ShapeMismatch("mask", "pixel map shape", "other");

    const PixelMap id = PixelMap::identity(shape);
    const double ks = -2 * pi * geom.du * x_pixel_size / (wavelength * geom.z);
    const double kf = -2 * pi * geom.dv * y_pixel_size / (wavelength * geom.z);
    const ImageD gs = m.mask.select((u.ss - id.ss) * ks, 0.0);
    const ImageD gf = m.mask.select((u.fs - id.fs) * kf, 0.0);
    const IntegrationResult r = integrate_gradient(gs, gf, m.mask);

    Phase p;
    p.phi = m.mask.select(r.phi, 0.0);
    p.mask = m.mask;
    p.converged = r.converged;
    p.defocus.resize(shape.ss, shape.fs);
    const double cs = 0.5 * static_cast<double>(shape.ss - 1), cf = 0.5 * static_cast<double>(shape.fs - 1);
    for (Index i = 0; i < shape.ss; ++i)
        for (Index j = 0; j < shape.fs; ++j) {
            const double x = (static_cast<double>(i) - cs) * x_pixel_size;
            const double y = (static_cast<double>(j) - cf) * y_pixel_size;
            p.defocus(i, j) = pi * x * x / (wavelength * (geom.z1_ss + geom.z)) +
                              pi * y * y / (wavelength * (geom.z1_fs + geom.z));
        }
    return p;
}

ImageD fit_tilt(const ImageD &phi, const ImageB &mask) {
    Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
    Eigen::Vector3d b = Eigen::Vector3d::Zero();
    for (Index i = 0; i < phi.rows(); ++i)
        for (Index j = 0; j < phi.cols(); ++j) {
            if (!mask(i, j)) continue;
            const Eigen::Vector3d v(1.0, static_cast<double>(i), static_cast<double>(j));
            A += v * v.transpose();
            b += v * phi(i, j);
        }
    const Eigen::Vector3d c = A.ldlt().solve(b);
    ImageD out(phi.rows(), phi.cols());
    for (Index i = 0; i < phi.rows(); ++i)
        for (Index j = 0; j < phi.cols(); ++j)
            out(i, j) = c(0) + c(1) * static_cast<double>(i) + c(2) * static_cast<double>(j);
    return out;
}

std::pair<int, int> noll_to_nm(int j) {
    if (j < 1) throw InvalidArgument("Noll index starts at 1");
    int n = 0, j1 = j - 1;
    while (j1 > n) {
        ++n;
        j1 -= n;
    }
    const int mag = (n % 2) + 2 * ((j1 + ((n + 1) % 2)) / 2);
    const int m = (j % 2 == 0) ? mag : -mag;
    return {n, m};
}

double zernike(int j, double rho, double theta) {
    const auto [n, m] = noll_to_nm(j);
    const double r = radial(n, m, rho);
    if (m == 0) return std::sqrt(n + 1.0) * r;
    const double norm = std::sqrt(2.0 * (n + 1));
    return m > 0 ? norm * r * std::cos(m * theta) : norm * r * std::sin(-m * theta);
}

ZernikeFit zernike_fit(const Phase &phase, const ImageB &aperture, int max_noll) {
    if (max_noll < 1) throw InvalidArgument("max Noll index must be >= 1");
    const Shape2 shape = shape_of(phase.phi);
    if (shape_of(aperture) != shape || shape_of(phase.mask) != shape)
        throw ShapeMismatch("aperture", "phase shape", "other");

    ZernikeFit fit;
    fit.support = aperture && phase.mask;
    const Index n_valid = fit.support.count();
    if (n_valid < max_noll) throw DataError("zernike_fit: fewer valid pixels than coefficients");

    Index i0 = shape.ss, i1 = -1, j0 = shape.fs, j1 = -1;
    for (Index i = 0; i < shape.ss; ++i)
        for (Index j = 0; j < shape.fs; ++j)
            if (fit.support(i, j)) {
                i0 = std::min(i0, i);
                i1 = std::max(i1, i);
                j0 = std::min(j0, j);
                j1 = std::max(j1, j);
            }
    const double cs = 0.5 * static_cast<double>(i0 + i1), cf = 0.5 * static_cast<double>(j0 + j1);
    const double as = std::sqrt(2.0) * std::max(0.5, 0.5 * static_cast<double>(i1 - i0));
    const double af = std::sqrt(2.0) * std::max(0.5, 0.5 * static_cast<double>(j1 - j0));

    const double inv_n = 1.0 / static_cast<double>(n_valid);
    auto dot = [&](const ImageD &a, const ImageD &b) { return fit.support.select(a * b, 0.0).sum() * inv_n; };

    for (int k = 1; k <= max_noll; ++k) {
        ImageD z(shape.ss, shape.fs);
        for (Index i = 0; i < shape.ss; ++i)
            for (Index j = 0; j < shape.fs; ++j) {
                const double x = (static_cast<double>(i) - cs) / as;
                const double y = (static_cast<double>(j) - cf) / af;
                z(i, j) = zernike(k, std::hypot(x, y), std::atan2(y, x));
            }
        z = fit.support.select(z, 0.0);
        const double norm0 = std::sqrt(dot(z, z));
        for (int pass = 0; pass < 2; ++pass)
            for (const auto &b : fit.basis) z -= dot(z, b) * b;
        const double norm = std::sqrt(dot(z, z));
        if (!(norm > 1e-9 * norm0))
            throw NumericalError("zernike_fit: basis is rank deficient on this aperture (term " +
                                 std::to_string(k) + ")");
        fit.basis.push_back(z / norm);
    }

    ImageD resid = fit.support.select(phase.phi, 0.0);
    for (int k = 0; k < max_noll; ++k) {
        const double c = dot(phase.phi, fit.basis[k]);
        fit.coefficients.emplace_back(k + 1, c);
        resid -= c * fit.basis[k];
    }
    fit.residual_rms = std::sqrt(dot(resid, resid));
    return fit;
}

FocusVolume focus_profile(const Phase &phase, const Whitefield &w, const Geometry &geom,
                          double wavelength, double x_pixel_size, double y_pixel_size,
                          const std::vector<double> &z_values, int padding) {
    if (padding < 1) throw InvalidArgument("padding must be >= 1");
    if (z_values.empty()) throw InvalidArgument("focus_profile: empty z range");
    const Shape2 shape = shape_of(phase.phi);
    if (shape_of(w.w) != shape) throw ShapeMismatch("whitefield", "phase shape", "other");

    const ImageD total = phase.total();
    const ImageB mask = phase.mask.size() ? phase.mask : ImageB::Constant(shape.ss, shape.fs, true);
    const ImageB live = mask && (w.w > 0.0);

    // largest phase step between neighbouring pixels
    const ImageD gs = derivative(total, 0), gf = derivative(total, 1);
    const double gmax_ss = live.select(gs.abs(), 0.0).maxCoeff();
    const double gmax_fs = live.select(gf.abs(), 0.0).maxCoeff();
    if (gmax_ss > pi || gmax_fs > pi)
        throw SamplingViolation("focus_profile: phase gradient exceeds pi rad per pixel");

    const Index P = padding;
    const Index rows = P * shape.ss, cols = P * shape.fs;
    const double extent_ss = static_cast<double>(rows - shape.ss) * x_pixel_size;
    const double extent_fs = static_cast<double>(cols - shape.fs) * y_pixel_size;
    const double zfocus = 0.5 * (geom.z1_ss + geom.z1_fs) + geom.z;
    for (double zr : z_values) {
        const double L = std::abs(zr - zfocus);
        const double shift_ss = L * wavelength * gmax_ss / (2 * pi * x_pixel_size);
        const double shift_fs = L * wavelength * gmax_fs / (2 * pi * y_pixel_size);
        if (padding > 1 && (shift_ss > extent_ss || shift_fs > extent_fs))
            throw SamplingViolation("focus_profile: rays leave the padded grid");
    }

    ImageC field = ImageC::Zero(rows, cols);
    const Index o_ss = (rows - shape.ss) / 2, o_fs = (cols - shape.fs) / 2;
    for (Index i = 0; i < shape.ss; ++i)
        for (Index j = 0; j < shape.fs; ++j)
            if (live(i, j)) field(i + o_ss, j + o_fs) = std::polar(std::sqrt(w.w(i, j)), total(i, j));

    FocusVolume vol;
    vol.dx = x_pixel_size;
    vol.dy = y_pixel_size;
    vol.z_values = z_values;
    vol.input_power = field.abs2().sum();
    const ImageC spectrum = fft::forward(field);
    const Eigen::ArrayXd qs = fft::frequencies(rows, x_pixel_size);
    const Eigen::ArrayXd qf = fft::frequencies(cols, y_pixel_size);
    const double k0 = 1.0 / wavelength;

    vol.intensities.resize(z_values.size());
    vol.power.resize(z_values.size());
    parallel_for(0, static_cast<std::ptrdiff_t>(z_values.size()), [&](std::ptrdiff_t s) {
        const double L = z_values[s] - zfocus;
        ImageC prop(rows, cols);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) {
                const double q2 = qs[i] * qs[i] + qf[j] * qf[j];
                if (q2 >= k0 * k0) {
                    prop(i, j) = 0;
                    continue;
                }
                // sqrt(k0^2 - q^2) - k0 without cancellation
                const double kz = -q2 / (k0 + std::sqrt(k0 * k0 - q2));
                prop(i, j) = spectrum(i, j) * std::polar(1.0, 2 * pi * L * kz);
            }
        vol.intensities[s] = fft::inverse(prop).abs2();
        vol.power[s] = vol.intensities[s].sum();
    });
    return vol;
}

Thickness calculate_sample_thickness(const ReferenceImage &ref, const ThicknessParams &params) {
    if (!(params.mu > 0)) throw InvalidArgument("mu must be > 0");
    if (!(params.delta >= 0)) throw InvalidArgument("delta must be >= 0");
    if (!(params.zbar >= 0)) throw InvalidArgument("zbar must be >= 0");
    const double ps = params.pixel_ss > 0 ? params.pixel_ss : ref.du;
    const double pf = params.pixel_fs > 0 ? params.pixel_fs : ref.dv;
    if (!(ps > 0) || !(pf > 0)) throw InvalidArgument("thickness: unknown pixel size");

    const Index rows = ref.i_ref.rows(), cols = ref.i_ref.cols();
    const ImageB valid = ref.wsum.size() ? ImageB(ref.valid()) : ImageB::Constant(rows, cols, true);
    if (!valid.any()) throw DataError("thickness: reference has no valid cells");

    Thickness out;
    out.valid = valid;
    if (params.flat) {
        out.flat = *params.flat;
    } else {
        Index i0 = rows, i1 = -1, j0 = cols, j1 = -1;
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j)
                if (valid(i, j)) {
                    i0 = std::min(i0, i);
                    i1 = std::max(i1, i);
                    j0 = std::min(j0, j);
                    j1 = std::max(j1, j);
                }
        double s = 0;
        Index n = 0;
        for (Index i = i0; i <= i1; ++i)
            for (Index j = j0; j <= j1; ++j) {
                const bool ring = i - i0 < 2 || i1 - i < 2 || j - j0 < 2 || j1 - j < 2;
                if (ring && valid(i, j)) {
                    s += ref.i_ref(i, j);
                    ++n;
                }
            }
        out.flat = s / static_cast<double>(n);
    }
    if (!(out.flat > 0)) throw NumericalError("thickness: flat-field level must be > 0");

    // nearest valid neighbour fill (breadth first, fixed visiting order)
    ImageD img = valid.select(ref.i_ref, 0.0);
    ImageB done = valid;
    std::deque<std::pair<Index, Index>> queue;
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j)
            if (valid(i, j)) queue.emplace_back(i, j);
    const int di[4] = {-1, 1, 0, 0}, dj[4] = {0, 0, -1, 1};
    while (!queue.empty()) {
        const auto [i, j] = queue.front();
        queue.pop_front();
        for (int k = 0; k < 4; ++k) {
            const Index a = i + di[k], b = j + dj[k];
            if (a < 0 || a >= rows || b < 0 || b >= cols || done(a, b)) continue;
            img(a, b) = img(i, j);
            done(a, b) = true;
            queue.emplace_back(a, b);
        }
    }

    const ImageC spec = fft::forward(ImageD(img / out.flat));
    const Eigen::ArrayXd qs = fft::frequencies(rows, ps);
    const Eigen::ArrayXd qf = fft::frequencies(cols, pf);
    ImageC filtered(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) {
            const double k2 = 4 * pi * pi * (qs[i] * qs[i] + qf[j] * qf[j]);
            filtered(i, j) = spec(i, j) / (1.0 + params.zbar * params.delta * k2 / params.mu);
        }
    const ImageD a = fft::inverse(filtered).real();
    const double eps = 1e-12;
    out.t.resize(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) {
            double v = a(i, j);
            if (!(v > eps)) {
                if (valid(i, j)) ++out.clipped;
                v = eps;
            }
            out.t(i, j) = valid(i, j) ? -std::log(v) / params.mu : 0.0;
        }
    return out;
}

bool split_half_assignment(std::uint64_t seed, Index n, Index i, Index j) {
    std::uint64_t x = splitmix64(seed);
    x = splitmix64(x ^ static_cast<std::uint64_t>(n));
    x = splitmix64(x ^ static_cast<std::uint64_t>(i));
    x = splitmix64(x ^ static_cast<std::uint64_t>(j));
    return (x >> 63) == 0;
}

SplitHalf split_half_recon(const ScanData &scan, const Whitefield &w, const PixelMask &m,
                           const ReferenceImage &ref, const PixelMap &u,
                           const PixelTranslations &t, const Roi &roi, const SearchWindow &win,
                           std::uint64_t seed, int bins) {
    if (bins < 1) throw InvalidArgument("histogram needs at least one bin");
    const UpdateOptions opts{true, false, 0.0, true};
    const SampleFilter half_a = [seed](Index n, Index i, Index j) { return split_half_assignment(seed, n, i, j); };
    const SampleFilter half_b = [seed](Index n, Index i, Index j) { return !split_half_assignment(seed, n, i, j); };

    SplitHalf out;
    out.u_a = update_pixel_map(scan, w, m, ref, u, t, roi, win, opts, half_a).u;
    out.u_b = update_pixel_map(scan, w, m, ref, u, t, roi, win, opts, half_b).u;

    const ImageB active = active_pixels(m, w, roi);
    out.included = active;
    for (Index i = 0; i < active.rows(); ++i)
        for (Index j = 0; j < active.cols(); ++j) {
            if (!active(i, j)) continue;
            int na = 0, nb = 0;
            for (Index n = 0; n < scan.n_frames(); ++n) {
                if (!scan.good_frames.empty() && !scan.good_frames[n]) continue;
                (split_half_assignment(seed, n, i, j) ? na : nb)++;
            }
            if (na == 0 || nb == 0) out.included(i, j) = false;
        }

    std::vector<double> ds, df;
    for (Index i = 0; i < active.rows(); ++i)
        for (Index j = 0; j < active.cols(); ++j)
            if (out.included(i, j)) {
                ds.push_back(out.u_a.ss(i, j) - out.u_b.ss(i, j));
                df.push_back(out.u_a.fs(i, j) - out.u_b.fs(i, j));
            }

    double range = 0;
    for (double v : ds) range = std::max(range, std::abs(v));
    for (double v : df) range = std::max(range, std::abs(v));
    if (range == 0) range = 1;
    out.bin_edges.resize(bins + 1);
    for (int b = 0; b <= bins; ++b) out.bin_edges[b] = -range + 2 * range * b / bins;
    auto histogram = [&](const std::vector<double> &v) {
        std::vector<Index> h(bins, 0);
        for (double x : v) {
            int b = static_cast<int>(std::floor((x + range) / (2 * range) * bins));
            h[std::clamp(b, 0, bins - 1)]++;
        }
        return h;
    };
    out.hist_ss = histogram(ds);
    out.hist_fs = histogram(df);
    out.sigma_ss = robust_sigma(ds) / std::sqrt(2.0);
    out.sigma_fs = robust_sigma(df) / std::sqrt(2.0);
    out.sigma = std::sqrt(0.5 * (out.sigma_ss * out.sigma_ss + out.sigma_fs * out.sigma_fs));
    return out;
}

}  // namespace pxst
