#include "pxst/geometry.hpp"

#include "pxst/errors.hpp"
#include "pxst/fft.hpp"
#include "pxst/parallel.hpp"
#include "pxst/recon.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pxst {

Geometry make_geometry(double z1_ss, double z1_fs, double z, double x_pixel_size,
                       double y_pixel_size) {
    if (!(z1_ss > 0) || !(z1_fs > 0)) throw InvalidArgument("z1 must be > 0");
    if (!(z > 0)) throw InvalidArgument("detector distance must be > 0");
    if (!(x_pixel_size > 0) || !(y_pixel_size > 0)) throw InvalidArgument("pixel size must be > 0");
    Geometry g;
    g.z1_ss = z1_ss;
    g.z1_fs = z1_fs;
    g.z = z;
    g.mag_ss = (z1_ss + z) / z1_ss;
    g.mag_fs = (z1_fs + z) / z1_fs;
    g.du = x_pixel_size / g.mag_ss;
    g.dv = y_pixel_size / g.mag_fs;
    g.zbar_ss = z / g.mag_ss;
    g.zbar_fs = z / g.mag_fs;
    return g;
}

Geometry make_geometry(double z1_ss, double z1_fs, const ScanData &scan) {
    return make_geometry(z1_ss, z1_fs, scan.distance, scan.x_pixel_size, scan.y_pixel_size);
}

PixelMap generate_pixel_map(const Geometry &, Shape2 shape, const Roi &) {
    return PixelMap::identity(shape);
}

PixelTranslations translations_to_pixels(const ScanData &scan, const Geometry &geom) {
    const Index n = scan.n_frames();
    if (scan.translations.rows() != n) throw ShapeMismatch("translations", "N x 3", "other");
    if (!(geom.du > 0) || !(geom.dv > 0)) throw InvalidArgument("geometry has no reference sampling");
    Eigen::Vector3d ss_axis(1, 0, 0), fs_axis(0, 1, 0);
    if (!scan.basis_vectors.empty()) {
        ss_axis = scan.basis_vectors.front().row(0).transpose().normalized();
        fs_axis = scan.basis_vectors.front().row(1).transpose().normalized();
    }
    PixelTranslations t{Eigen::ArrayXd(n), Eigen::ArrayXd(n)};
    for (Index k = 0; k < n; ++k) {
        const Eigen::Vector3d d = scan.translations.row(k).transpose();
        t.di[k] = d.dot(ss_axis) / geom.du;
        t.dj[k] = d.dot(fs_axis) / geom.dv;
    }
    return t;
}

std::vector<std::pair<double, double>> DefocusGrid::candidates() const {
    std::vector<std::pair<double, double>> out;
    if (z1_fs.empty()) {
        for (double a : z1_ss) out.emplace_back(a, a);
    } else {
        for (double a : z1_ss)
            for (double b : z1_fs) out.emplace_back(a, b);
    }
    return out;
}

namespace {

constexpr int kBackgroundDegree = 3;

std::vector<std::pair<double, double>> checked_candidates(const DefocusGrid &grid) {
    auto c = grid.candidates();
    if (c.empty()) throw InvalidArgument("empty defocus search grid");
    for (const auto &[a, b] : c)
        if (!(a > 0) || !(b > 0)) throw InvalidArgument("defocus candidates must be > 0");
    return c;
}

// Index of the best score; equal scores resolve to the smaller z1.
std::size_t argmax(const std::vector<std::pair<double, double>> &cand, const std::vector<double> &s) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < s.size(); ++k) {
        const double sum_k = cand[k].first + cand[k].second;
        const double sum_b = cand[best].first + cand[best].second;
        if (s[k] > s[best] || (s[k] == s[best] && sum_k < sum_b)) best = k;
    }
    return best;
}

double pearson(const std::vector<double> &x, const std::vector<double> &y) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        mx += x[k];
        my += y[k];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sxy += (x[k] - mx) * (y[k] - my);
        sxx += (x[k] - mx) * (x[k] - mx);
        syy += (y[k] - my) * (y[k] - my);
    }
    if (!(sxx > 0) || !(syy > 0)) return 0;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace

ThonFit fit_thon_rings(const ScanData &scan, const Whitefield &w, const PixelMask &m,
                       const Roi &roi, const DefocusGrid &grid) {
    const auto cand = checked_candidates(grid);
    const Shape2 shape = scan.frame_shape();
    if (!roi.valid_for(shape)) throw InvalidArgument("roi does not fit the frame shape");
    const ImageB active = active_pixels(m, w, roi);
    if (!active.any()) throw DataError("fit_thon_rings: no good pixels inside the roi");

    const Index rows = roi.ss_size(), cols = roi.fs_size();
    ImageD power = ImageD::Zero(rows, cols);
    Index used = 0;
    for (Index n = 0; n < scan.n_frames(); ++n) {
        if (!scan.good_frames.empty() && !scan.good_frames[n]) continue;
        ImageD a = ImageD::Zero(rows, cols);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) {
                const Index ii = i + roi.ss_min, jj = j + roi.fs_min;
                if (active(ii, jj)) a(i, j) = scan.frames[n](ii, jj) / w.w(ii, jj) - 1.0;
            }
        power += fft::forward(a).abs2();
        ++used;
    }
    if (used == 0) throw DataError("fit_thon_rings: no good frames");
    power /= static_cast<double>(used);

    const Eigen::ArrayXd qs = fft::frequencies(rows, scan.x_pixel_size);
    const Eigen::ArrayXd qf = fft::frequencies(cols, scan.y_pixel_size);
    const Eigen::ArrayXd ks = fft::frequencies(rows, 1.0);
    const Eigen::ArrayXd kf = fft::frequencies(cols, 1.0);

    // log spectrum minus a smooth radial background (a low-order polynomial in
    // |q|; per-annulus statistics would also remove stigmatic rings)
    const double tiny = 1e-30 + 1e-12 * power.maxCoeff();
    const ImageD logp = (power + tiny).log();
    const double r_min = 2.0 / static_cast<double>(std::min(rows, cols));
    std::vector<double> x, r_used;
    std::vector<std::pair<double, double>> q2;
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) {
            const double r = std::sqrt(ks[i] * ks[i] + kf[j] * kf[j]);
            if (r < r_min || r > 0.5) continue;
            x.push_back(logp(i, j));
            r_used.push_back(r);
            q2.emplace_back(qs[i] * qs[i], qf[j] * qf[j]);
        }
    if (x.size() > kBackgroundDegree + 1) {
        Eigen::MatrixXd A(static_cast<Index>(x.size()), kBackgroundDegree + 1);
        Eigen::VectorXd b(static_cast<Index>(x.size()));
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double t = 4 * r_used[k] - 1;  // [r_min, 0.5] -> about [-1, 1]
            double p = 1;
            for (int d = 0; d <= kBackgroundDegree; ++d, p *= t) A(static_cast<Index>(k), d) = p;
            b(static_cast<Index>(k)) = x[k];
        }
        const Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
        const Eigen::VectorXd bg = A * c;
        for (std::size_t k = 0; k < x.size(); ++k) x[k] -= bg(static_cast<Index>(k));
    }
    if (x.size() < 3) throw DataError("fit_thon_rings: roi too small for a spectrum fit");

    ThonFit fit;
    fit.scores.resize(cand.size());
    parallel_for(0, static_cast<std::ptrdiff_t>(cand.size()), [&](std::ptrdiff_t c) {
        const double zs = scan.distance * (cand[c].first + scan.distance) / cand[c].first;
        const double zf = scan.distance * (cand[c].second + scan.distance) / cand[c].second;
        std::vector<double> model(q2.size());
        for (std::size_t k = 0; k < q2.size(); ++k) {
            const double s = std::sin(std::numbers::pi * scan.wavelength * (zs * q2[k].first + zf * q2[k].second));
            model[k] = s * s;
        }
        fit.scores[c] = pearson(x, model);
    });
    const std::size_t best = argmax(cand, fit.scores);
    fit.z1_ss = cand[best].first;
    fit.z1_fs = cand[best].second;
    fit.score = fit.scores[best];
    fit.reliable = fit.score >= 0.2;
    fit.power_spectrum = std::move(power);
    return fit;
}

RegistrationFit fit_defocus_registration(const ScanData &scan, const Whitefield &w,
                                         const PixelMask &m, const Roi &roi,
                                         const DefocusGrid &grid) {
    RegistrationFit fit;
    fit.candidates = checked_candidates(grid);
    const PixelMap u = PixelMap::identity(scan.frame_shape());
    for (const auto &[a, b] : fit.candidates) {
        const Geometry g = make_geometry(a, b, scan);
        const PixelTranslations t = translations_to_pixels(scan, g);
        const ReferenceImage ref = make_reference(scan, w, m, u, t, roi);
        const ImageB valid = ref.valid();
        const double n = static_cast<double>(valid.count());
        const double mean = valid.select(ref.i_ref, 0.0).sum() / n;
        const double var = valid.select((ref.i_ref - mean).square(), 0.0).sum() / n;
        fit.contrast.push_back(mean != 0 ? var / (mean * mean) : 0.0);
    }
    const std::size_t best = argmax(fit.candidates, fit.contrast);
    fit.z1_ss = fit.candidates[best].first;
    fit.z1_fs = fit.candidates[best].second;
    return fit;
}

}  // namespace pxst
