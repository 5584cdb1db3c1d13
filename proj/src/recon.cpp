#include "pxst/recon.hpp"

#include "pxst/errors.hpp"
#include "pxst/integrate.hpp"
#include "pxst/interp.hpp"
#include "pxst/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pxst {

namespace {

std::vector<Index> good_frame_list(const ScanData &scan) {
    std::vector<Index> out;
    for (Index n = 0; n < scan.n_frames(); ++n)
        if (scan.good_frames.empty() || scan.good_frames[n]) out.push_back(n);
    return out;
}

void check_inputs(const ScanData &scan, const Whitefield &w, const PixelMask &m, const PixelMap &u,
                  const PixelTranslations &t, const Roi &roi) {
    const Shape2 shape = scan.frame_shape();
    if (shape_of(w.w) != shape) throw ShapeMismatch("whitefield", "frame shape", "other");
    if (shape_of(m.mask) != shape) throw ShapeMismatch("mask", "frame shape", "other");
    if (u.shape() != shape || shape_of(u.fs) != shape)
        throw ShapeMismatch("pixel_map", "frame shape", "other");
    if (t.size() != scan.n_frames() || t.dj.size() != t.di.size())
        throw ShapeMismatch("pixel translations", std::to_string(scan.n_frames()),
                            std::to_string(t.size()));
    if (!roi.valid_for(shape)) throw InvalidArgument("roi does not fit the frame shape");
}

// Everything the per-pixel error needs, resolved once.
struct Evaluator {
    const ScanData &scan;
    const Whitefield &w;
    const ReferenceImage &ref;
    const PixelTranslations &t;
    const std::vector<Index> &frames;
    ImageB valid;

    Evaluator(const ScanData &s, const Whitefield &wf, const ReferenceImage &r,
              const PixelTranslations &tr, const std::vector<Index> &f)
        : scan(s), w(wf), ref(r), t(tr), frames(f), valid(r.valid()) {}

    double reference_at(double x, double y, bool &ok) const {
        const auto s = interp::gather(ref.i_ref, valid, x - static_cast<double>(ref.origin_ss),
                                      y - static_cast<double>(ref.origin_fs));
        ok = s.valid;
        return s.value;
    }

    // Sum over frames of (I - W I_ref)^2 with pixel (i, j) mapped to (x, y).
    template <typename Filter>
    double pixel(Index i, Index j, double x, double y, const Filter &use) const {
        const double wij = w.w(i, j);
        double e = 0;
        for (Index n : frames) {
            if (!use(n)) continue;
            const double I = scan.frames[n](i, j);
            bool ok;
            const double r = reference_at(x - t.di[n], y - t.dj[n], ok);
            const double d = ok ? I - wij * r : I - wij;
            e += d * d;
        }
        return e;
    }

    template <typename Filter>
    double variance(Index i, Index j, const Filter &use) const {
        double v = 0;
        for (Index n : frames) {
            if (!use(n)) continue;
            const double d = scan.frames[n](i, j) - w.w(i, j);
            v += d * d;
        }
        return v;
    }
};

// Per-pixel variance over good frames with the small floor that keeps static
// pixels finite.
ImageD intensity_variance(const ScanData &scan, const Whitefield &w, const ImageB &active,
                          const std::vector<Index> &frames) {
    const Shape2 shape = scan.frame_shape();
    ImageD var = ImageD::Zero(shape.ss, shape.fs);
    const double nf = static_cast<double>(frames.size());
    parallel_for(0, shape.ss, [&](Index i) {
        for (Index j = 0; j < shape.fs; ++j) {
            if (!active(i, j)) continue;
            double mean = 0;
            for (Index n : frames) mean += scan.frames[n](i, j);
            mean /= nf;
            double v = 0;
            for (Index n : frames) {
                const double d = scan.frames[n](i, j) - mean;
                v += d * d;
            }
            var(i, j) = v / nf;
        }
    });
    const double wmax = active.select(w.w.square(), 0.0).maxCoeff();
    const double floor = 1e-8 * wmax;
    return active.select(var.max(floor), 0.0);
}

// Paraboloid refinement on the 3x3 neighbourhood, then once more on a
// half-spaced 3x3 patch around the first vertex (the bilinear error surface
// is only piecewise quadratic, so one fit can be off by a few tenths of a
// pixel). Each step is kept only if it does not raise the error.
template <typename Eval>
std::pair<double, double> refine_around(const Eval &eval, double best, double &best_err) {
    double cx = 0, cy = 0, h = 1;
    for (int stage = 0; stage < 2; ++stage, h *= 0.5) {
        Eigen::Matrix3d patch;
        for (int a = -1; a <= 1; ++a)
            for (int b = -1; b <= 1; ++b)
                patch(a + 1, b + 1) = (a == 0 && b == 0) ? best : eval(cx + a * h, cy + b * h);
        const auto [dx, dy] = quadratic_subpixel_refine(patch);
        if (dx == 0.0 && dy == 0.0) break;
        const double e = eval(cx + dx * h, cy + dy * h);
        if (!(e <= best)) break;
        best = e;
        cx += dx * h;
        cy += dy * h;
    }
    best_err = best;
    return {cx, cy};
}

ImageD gaussian_kernel(double sigma) {
    const Index r = static_cast<Index>(std::ceil(4.0 * sigma));
    ImageD k(1, 2 * r + 1);
    for (Index d = -r; d <= r; ++d)
        k(0, d + r) = std::exp(-0.5 * static_cast<double>(d * d) / (sigma * sigma));
    return k / k.sum();
}

// Separable convolution with zero padding.
ImageD convolve(const ImageD &a, const ImageD &k) {
    const Index r = k.cols() / 2;
    const Index rows = a.rows(), cols = a.cols();
    ImageD tmp = ImageD::Zero(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) {
            double s = 0;
            for (Index d = -r; d <= r; ++d) {
                const Index jj = j + d;
                if (jj >= 0 && jj < cols) s += k(0, d + r) * a(i, jj);
            }
            tmp(i, j) = s;
        }
    ImageD out = ImageD::Zero(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) {
            double s = 0;
            for (Index d = -r; d <= r; ++d) {
                const Index ii = i + d;
                if (ii >= 0 && ii < rows) s += k(0, d + r) * tmp(ii, j);
            }
            out(i, j) = s;
        }
    return out;
}

}  // namespace

ImageB active_pixels(const PixelMask &m, const Whitefield &w, const Roi &roi) {
    ImageB a = m.mask && (w.w > 0.0);
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j)
            if (!roi.contains(i, j)) a(i, j) = false;
    return a;
}

ReferenceGrid reference_grid(const PixelMap &u, const PixelTranslations &t, const ImageB &active,
                             const std::vector<bool> &good_frames) {
    if (!active.any()) throw DataError("no good pixels");
    const double inf = std::numeric_limits<double>::infinity();
    double umin_ss = inf, umax_ss = -inf, umin_fs = inf, umax_fs = -inf;
    for (Index i = 0; i < active.rows(); ++i)
        for (Index j = 0; j < active.cols(); ++j) {
            if (!active(i, j)) continue;
            umin_ss = std::min(umin_ss, u.ss(i, j));
            umax_ss = std::max(umax_ss, u.ss(i, j));
            umin_fs = std::min(umin_fs, u.fs(i, j));
            umax_fs = std::max(umax_fs, u.fs(i, j));
        }
    double tmin_ss = inf, tmax_ss = -inf, tmin_fs = inf, tmax_fs = -inf;
    bool any = false;
    for (Index n = 0; n < t.size(); ++n) {
        if (!good_frames.empty() && !good_frames[n]) continue;
        any = true;
        tmin_ss = std::min(tmin_ss, t.di[n]);
        tmax_ss = std::max(tmax_ss, t.di[n]);
        tmin_fs = std::min(tmin_fs, t.dj[n]);
        tmax_fs = std::max(tmax_fs, t.dj[n]);
    }
    if (!any) throw DataError("no good frames");
    if (!std::isfinite(umin_ss + umax_ss + umin_fs + umax_fs + tmin_ss + tmax_ss + tmin_fs + tmax_fs))
        throw NumericalError("non-finite pixel map or translations");

    ReferenceGrid g;
    const double lo_ss = std::floor(umin_ss - tmax_ss), hi_ss = std::floor(umax_ss - tmin_ss);
    const double lo_fs = std::floor(umin_fs - tmax_fs), hi_fs = std::floor(umax_fs - tmin_fs);
    g.origin_ss = static_cast<Index>(lo_ss);
    g.origin_fs = static_cast<Index>(lo_fs);
    g.rows = static_cast<Index>(hi_ss - lo_ss) + 2;
    g.cols = static_cast<Index>(hi_fs - lo_fs) + 2;
    if (g.rows * g.cols > (Index(1) << 28))
        throw NumericalError("reference grid too large; pixel map or translations out of range");
    return g;
}

ReferenceImage make_reference(const ScanData &scan, const Whitefield &w, const PixelMask &m,
                              const PixelMap &u, const PixelTranslations &t, const Roi &roi) {
    check_inputs(scan, w, m, u, t, roi);
    const ImageB active = active_pixels(m, w, roi);
    const auto frames = good_frame_list(scan);
    const ReferenceGrid g = reference_grid(u, t, active, scan.good_frames);

    const Index nf = static_cast<Index>(frames.size());
    std::vector<interp::WeightedAccumulator<double>> parts(chunk_count(nf));
    parallel_chunks(0, nf, [&](int c, std::ptrdiff_t b, std::ptrdiff_t e) {
        auto &acc = parts[c];
        acc = interp::WeightedAccumulator<double>(g.rows, g.cols);
        for (std::ptrdiff_t k = b; k < e; ++k) {
            const Index n = frames[k];
            const auto &I = scan.frames[n];
            for (Index i = 0; i < active.rows(); ++i)
                for (Index j = 0; j < active.cols(); ++j) {
                    if (!active(i, j)) continue;
                    const double wij = w.w(i, j);
                    interp::scatter_accumulate(acc, u.ss(i, j) - t.di[n] - g.origin_ss,
                                               u.fs(i, j) - t.dj[n] - g.origin_fs, I(i, j) / wij,
                                               wij * wij);
                }
        }
    });
    interp::WeightedAccumulator<double> acc(g.rows, g.cols);
    for (const auto &p : parts)
        if (p.rows() == g.rows) acc += p;

    ReferenceImage ref;
    auto [values, valid] = interp::normalize(acc);
    ref.i_ref = std::move(values);
    ref.wsum = std::move(acc.weights);
    ref.origin_ss = g.origin_ss;
    ref.origin_fs = g.origin_fs;
    return ref;
}

std::pair<double, double> quadratic_subpixel_refine(const Eigen::Matrix3d &err) {
    // f = c0 + p x + q y + a x^2 + b x y + c y^2 on x, y in {-1, 0, 1}. The
    // x^2 y and x y^2 columns soak up the skew of bilinear error surfaces so
    // that it does not leak into the slopes; the paraboloid itself is unchanged.
    Eigen::Matrix<double, 9, 8> A;
    Eigen::Matrix<double, 9, 1> f;
    int k = 0;
    for (int x = -1; x <= 1; ++x)
        for (int y = -1; y <= 1; ++y, ++k) {
            A.row(k) << 1, x, y, x * x, x * y, y * y, x * x * y, x * y * y;
            f(k) = err(x + 1, y + 1);
        }
    if (!f.allFinite()) return {0.0, 0.0};
    const Eigen::Matrix<double, 8, 1> c = A.colPivHouseholderQr().solve(f);
    Eigen::Matrix2d H;
    H << 2 * c(3), c(4), c(4), 2 * c(5);
    const Eigen::Vector2d g(c(1), c(2));
    if (!(H(0, 0) > 0) || !(H.determinant() > 0)) return {0.0, 0.0};
    Eigen::Vector2d d = -H.inverse() * g;
    d = d.cwiseMax(-1.0).cwiseMin(1.0);
    return {d(0), d(1)};
}

ImageD pixel_map_error(const ScanData &scan, const Whitefield &w, const PixelMask &m,
                       const ReferenceImage &ref, const PixelMap &u, const PixelTranslations &t,
                       const Roi &roi) {
    check_inputs(scan, w, m, u, t, roi);
    const ImageB active = active_pixels(m, w, roi);
    const auto frames = good_frame_list(scan);
    const Evaluator ev(scan, w, ref, t, frames);
    const auto all = [](Index) { return true; };
    ImageD err = ImageD::Zero(active.rows(), active.cols());
    parallel_for(0, active.rows(), [&](Index i) {
        for (Index j = 0; j < active.cols(); ++j) {
            if (!active(i, j)) continue;
            const double var = ev.variance(i, j, all);
            const double e = ev.pixel(i, j, u.ss(i, j), u.fs(i, j), all);
            err(i, j) = var > 0 ? e / var : e;
        }
    });
    return err;
}

PixelMapUpdate update_pixel_map(const ScanData &scan, const Whitefield &w, const PixelMask &m,
                                const ReferenceImage &ref, const PixelMap &u,
                                const PixelTranslations &t, const Roi &roi, const SearchWindow &win,
                                const UpdateOptions &opts, const SampleFilter &filter) {
    check_inputs(scan, w, m, u, t, roi);
    if (win.half_ss < 0 || win.half_fs < 0) throw InvalidArgument("search window must be >= 0");
    if (win.subpixel_grid && !(*win.subpixel_grid > 0 && *win.subpixel_grid <= 1))
        throw InvalidArgument("subpixel_grid must be in (0, 1]");
    if (opts.sigma < 0) throw InvalidArgument("sigma must be >= 0");
    if (!ref.valid().any()) throw NumericalError("reference image has no valid cells");

    const ImageB active = active_pixels(m, w, roi);
    const auto frames = good_frame_list(scan);
    const Evaluator ev(scan, w, ref, t, frames);

    const double step = win.subpixel_grid.value_or(1.0);
    const int ks = static_cast<int>(std::floor(win.half_ss / step + 1e-9));
    const int kf = static_cast<int>(std::floor(win.half_fs / step + 1e-9));
    const bool quad = opts.quadratic_refinement && !win.subpixel_grid;

    PixelMapUpdate out{u, ImageD::Zero(active.rows(), active.cols())};
    parallel_for(0, active.rows(), [&](Index i) {
        std::vector<double> cache((2 * ks + 1) * (2 * kf + 1));
        for (Index j = 0; j < active.cols(); ++j) {
            if (!active(i, j)) continue;
            const auto use = [&](Index n) { return !filter || filter(n, i, j); };
            const double var = ev.variance(i, j, use);
            const double x0 = u.ss(i, j), y0 = u.fs(i, j);
            // same expression as pixel_map_error, so equal candidates compare equal
            const double norm = var > 0 ? var : 1.0;
            auto eval = [&](double dx, double dy) { return ev.pixel(i, j, x0 + dx, y0 + dy, use) / norm; };

            double best = eval(0.0, 0.0);
            if (var == 0) {
                out.error(i, j) = best;
                continue;
            }
            int bs = 0, bf = 0;
            for (int a = -ks; a <= ks; ++a)
                for (int b = -kf; b <= kf; ++b) {
                    double e;
                    if (a == 0 && b == 0) {
                        e = best;
                    } else {
                        e = eval(a * step, b * step);
                        if (e < best) {
                            best = e;
                            bs = a;
                            bf = b;
                        }
                    }
                    cache[(a + ks) * (2 * kf + 1) + (b + kf)] = e;
                }
            double dx = bs * step, dy = bf * step;
            if (quad) {
                auto around = [&](double a, double b) {
                    const double fa = bs + a, fb = bf + b;
                    const int ia = static_cast<int>(fa), ib = static_cast<int>(fb);
                    if (fa == ia && fb == ib && std::abs(ia) <= ks && std::abs(ib) <= kf)
                        return cache[(ia + ks) * (2 * kf + 1) + (ib + kf)];
                    return eval(fa, fb);
                };
                const auto [rx, ry] = refine_around(around, best, best);
                dx += rx;
                dy += ry;
            }
            out.u.ss(i, j) = x0 + dx;
            out.u.fs(i, j) = y0 + dy;
            out.error(i, j) = best;
        }
    });

    if (opts.sigma > 0 || opts.integrate) {
        if (opts.sigma > 0) out.u = smooth_pixel_map(out.u, active, opts.sigma);
        if (opts.integrate) out.u = irrotational_projection(out.u, PixelMask{active});
        // error of the map actually returned
        const Evaluator ev2(scan, w, ref, t, frames);
        parallel_for(0, active.rows(), [&](Index i) {
            for (Index j = 0; j < active.cols(); ++j) {
                if (!active(i, j)) continue;
                const auto use = [&](Index n) { return !filter || filter(n, i, j); };
                const double var = ev2.variance(i, j, use);
                const double e = ev2.pixel(i, j, out.u.ss(i, j), out.u.fs(i, j), use);
                out.error(i, j) = var > 0 ? e / var : e;
            }
        });
    }
    return out;
}

PixelMap smooth_pixel_map(const PixelMap &u, const ImageB &mask, double sigma) {
    if (!(sigma > 0)) return u;
    const PixelMap id = PixelMap::identity(u.shape());
    const ImageD k = gaussian_kernel(sigma);
    const ImageD mw = mask.cast<double>();
    const ImageD den = convolve(mw, k);
    // The affine part is removed first so the renormalised edges do not
    // flatten a uniform magnification.
    Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
    Eigen::Vector3d bs = Eigen::Vector3d::Zero(), bf = Eigen::Vector3d::Zero();
    for (Index i = 0; i < u.ss.rows(); ++i)
        for (Index j = 0; j < u.ss.cols(); ++j) {
            if (!mask(i, j)) continue;
            const Eigen::Vector3d a(1.0, static_cast<double>(i), static_cast<double>(j));
            ata += a * a.transpose();
            bs += a * (u.ss(i, j) - id.ss(i, j));
            bf += a * (u.fs(i, j) - id.fs(i, j));
        }
    Eigen::Vector3d cs = Eigen::Vector3d::Zero(), cf = Eigen::Vector3d::Zero();
    if (mask.count() >= 3) {
        const auto qr = ata.colPivHouseholderQr();
        if (qr.rank() == 3) {
            cs = qr.solve(bs);
            cf = qr.solve(bf);
        }
    }
    const auto affine = [](const Eigen::Vector3d &c, Index i, Index j) {
        return c[0] + c[1] * static_cast<double>(i) + c[2] * static_cast<double>(j);
    };
    ImageD rs(u.ss.rows(), u.ss.cols()), rf(u.ss.rows(), u.ss.cols());
    for (Index i = 0; i < u.ss.rows(); ++i)
        for (Index j = 0; j < u.ss.cols(); ++j) {
            rs(i, j) = mw(i, j) * (u.ss(i, j) - id.ss(i, j) - affine(cs, i, j));
            rf(i, j) = mw(i, j) * (u.fs(i, j) - id.fs(i, j) - affine(cf, i, j));
        }
    const ImageD ns = convolve(rs, k);
    const ImageD nf = convolve(rf, k);
    PixelMap out = u;
    for (Index i = 0; i < u.ss.rows(); ++i)
        for (Index j = 0; j < u.ss.cols(); ++j) {
            if (!mask(i, j) || !(den(i, j) > 0)) continue;
            out.ss(i, j) = id.ss(i, j) + affine(cs, i, j) + ns(i, j) / den(i, j);
            out.fs(i, j) = id.fs(i, j) + affine(cf, i, j) + nf(i, j) / den(i, j);
        }
    return out;
}

PixelMap irrotational_projection(const PixelMap &u, const PixelMask &m, bool *converged) {
    if (shape_of(m.mask) != u.shape()) throw ShapeMismatch("mask", "pixel map shape", "other");
    const PixelMap id = PixelMap::identity(u.shape());
    const ImageD ds = m.mask.select(u.ss - id.ss, 0.0);
    const ImageD df = m.mask.select(u.fs - id.fs, 0.0);
    const IntegrationResult r = integrate_gradient(ds, df, m.mask);
    if (converged) *converged = r.converged;
    PixelMap out = u;
    out.ss = m.mask.select(id.ss + derivative(r.phi, 0), u.ss);
    out.fs = m.mask.select(id.fs + derivative(r.phi, 1), u.fs);
    return out;
}

PixelTranslations update_translations(const ScanData &scan, const Whitefield &w,
                                      const PixelMask &m, const ReferenceImage &ref,
                                      const PixelMap &u, const PixelTranslations &t,
                                      const Roi &roi, const SearchWindow &win) {
    check_inputs(scan, w, m, u, t, roi);
    if (win.half_ss < 0 || win.half_fs < 0) throw InvalidArgument("search window must be >= 0");
    if (win.half_ss == 0 && win.half_fs == 0) return t;
    if (win.subpixel_grid && !(*win.subpixel_grid > 0 && *win.subpixel_grid <= 1))
        throw InvalidArgument("subpixel_grid must be in (0, 1]");

    const ImageB active = active_pixels(m, w, roi);
    const auto frames = good_frame_list(scan);
    const ImageD var = intensity_variance(scan, w, active, frames);
    const ImageB valid = ref.valid();
    std::vector<std::pair<Index, Index>> pixels;
    for (Index i = 0; i < active.rows(); ++i)
        for (Index j = 0; j < active.cols(); ++j)
            if (active(i, j)) pixels.emplace_back(i, j);

    const double step = win.subpixel_grid.value_or(1.0);
    const int ks = static_cast<int>(std::floor(win.half_ss / step + 1e-9));
    const int kf = static_cast<int>(std::floor(win.half_fs / step + 1e-9));

    PixelTranslations out = t;
    parallel_for(0, static_cast<std::ptrdiff_t>(frames.size()), [&](std::ptrdiff_t k) {
        const Index n = frames[k];
        const auto &I = scan.frames[n];
        auto eval = [&](double a, double b) {
            const double ti = t.di[n] + a, tj = t.dj[n] + b;
            double e = 0;
            for (const auto &[i, j] : pixels) {
                const auto s = interp::gather(ref.i_ref, valid, u.ss(i, j) - ti - ref.origin_ss,
                                              u.fs(i, j) - tj - ref.origin_fs);
                const double d = s.valid ? I(i, j) - w.w(i, j) * s.value : I(i, j) - w.w(i, j);
                e += d * d / var(i, j);
            }
            return e;
        };
        double best = eval(0, 0);
        int bs = 0, bf = 0;
        std::vector<double> cache((2 * ks + 1) * (2 * kf + 1));
        for (int a = -ks; a <= ks; ++a)
            for (int b = -kf; b <= kf; ++b) {
                double e = best;
                if (a != 0 || b != 0) {
                    e = eval(a * step, b * step);
                    if (e < best) {
                        best = e;
                        bs = a;
                        bf = b;
                    }
                }
                cache[(a + ks) * (2 * kf + 1) + (b + kf)] = e;
            }
        double da = bs * step, db = bf * step;
        if (!win.subpixel_grid) {
            auto around = [&](double a, double b) {
                const double fa = bs + a, fb = bf + b;
                const int ia = static_cast<int>(fa), ib = static_cast<int>(fb);
                if (fa == ia && fb == ib && std::abs(ia) <= ks && std::abs(ib) <= kf)
                    return cache[(ia + ks) * (2 * kf + 1) + (ib + kf)];
                return eval(fa, fb);
            };
            const auto [rx, ry] = refine_around(around, best, best);
            da += rx;
            db += ry;
        }
        out.di[n] = t.di[n] + da;
        out.dj[n] = t.dj[n] + db;
    });
    return out;
}

ErrorMetrics calc_error(const ScanData &scan, const Whitefield &w, const PixelMask &m,
                        const ReferenceImage &ref, const PixelMap &u, const PixelTranslations &t,
                        const Roi &roi) {
    check_inputs(scan, w, m, u, t, roi);
    const ImageB active = active_pixels(m, w, roi);
    const auto frames = good_frame_list(scan);
    if (frames.empty()) throw DataError("no good frames");
    const Shape2 shape = scan.frame_shape();
    const ImageB valid = ref.valid();

    ErrorMetrics out;
    out.variance = intensity_variance(scan, w, active, frames);
    out.per_pixel = ImageD::Zero(shape.ss, shape.fs);
    out.per_frame = Eigen::ArrayXd::Zero(static_cast<Index>(frames.size()));

    const Index nf = static_cast<Index>(frames.size());
    std::vector<interp::WeightedAccumulator<double>> parts(chunk_count(nf));
    std::vector<ImageD> pixel_parts(parts.size());
    parallel_chunks(0, nf, [&](int c, std::ptrdiff_t b, std::ptrdiff_t e) {
        auto &acc = parts[c];
        acc = interp::WeightedAccumulator<double>(ref.i_ref.rows(), ref.i_ref.cols());
        ImageD pp = ImageD::Zero(shape.ss, shape.fs);
        for (std::ptrdiff_t k = b; k < e; ++k) {
            const Index n = frames[k];
            const auto &I = scan.frames[n];
            double frame_total = 0;
            for (Index i = 0; i < shape.ss; ++i)
                for (Index j = 0; j < shape.fs; ++j) {
                    if (!active(i, j)) continue;
                    const double x = u.ss(i, j) - t.di[n] - ref.origin_ss;
                    const double y = u.fs(i, j) - t.dj[n] - ref.origin_fs;
                    const auto s = interp::gather(ref.i_ref, valid, x, y);
                    const double d = s.valid ? I(i, j) - w.w(i, j) * s.value : I(i, j) - w.w(i, j);
                    const double eps = d * d / out.variance(i, j);
                    frame_total += eps;
                    pp(i, j) += eps;
                    interp::scatter_accumulate(acc, x, y, eps, 1.0);
                }
            out.per_frame[k] = frame_total;
        }
        pixel_parts[c] = std::move(pp);
    });
    interp::WeightedAccumulator<double> acc(ref.i_ref.rows(), ref.i_ref.cols());
    for (std::size_t c = 0; c < parts.size(); ++c) {
        if (parts[c].rows() != acc.rows()) continue;
        acc += parts[c];
        out.per_pixel += pixel_parts[c];
    }
    out.reference_plane = interp::normalize(acc).first;
    out.total = out.per_frame.sum();
    return out;
}

std::vector<UpdateOptions> LoopOptions::default_schedule() {
    return {{true, true, 5.0, true}, {true, true, std::sqrt(5.0), true}, {true, true, 1.0, true}};
}

PixelMap refine_magnification(const ScanData &scan, const Whitefield &w, const PixelMask &m,
                              const PixelMap &u, const PixelTranslations &t, const Roi &roi,
                              double step, int rounds) {
    check_inputs(scan, w, m, u, t, roi);
    if (!(step > 0) || rounds < 1) throw InvalidArgument("refine_magnification: bad step or rounds");
    const ImageB active = active_pixels(m, w, roi);
    const Index count = active.count();
    if (count == 0) return u;
    double ci = 0, cj = 0;
    for (Index i = 0; i < active.rows(); ++i)
        for (Index j = 0; j < active.cols(); ++j)
            if (active(i, j)) {
                ci += static_cast<double>(i);
                cj += static_cast<double>(j);
            }
    ci /= static_cast<double>(count);
    cj /= static_cast<double>(count);

    const auto scaled = [&](const PixelMap &base, int axis, double d) {
        PixelMap v = base;
        for (Index i = 0; i < active.rows(); ++i)
            for (Index j = 0; j < active.cols(); ++j) {
                if (!active(i, j)) continue;
                if (axis == 0) v.ss(i, j) += d * (static_cast<double>(i) - ci);
                else v.fs(i, j) += d * (static_cast<double>(j) - cj);
            }
        return v;
    };
    const auto total = [&](const PixelMap &v) {
        const ReferenceImage ref = make_reference(scan, w, m, v, t, roi);
        return calc_error(scan, w, m, ref, v, t, roi).total;
    };

    PixelMap best = u;
    double e0 = total(best);
    for (int r = 0; r < rounds; ++r) {
        const double h = step / std::pow(4.0, r);
        for (int axis = 0; axis < 2; ++axis) {
            const double em = total(scaled(best, axis, -h));
            const double ep = total(scaled(best, axis, h));
            double d = 0, e = e0;
            if (em < e) { d = -h; e = em; }
            if (ep < e) { d = h; e = ep; }
            const double curv = em + ep - 2 * e0;
            if (curv > 0) {
                const double v = std::clamp(0.5 * h * (em - ep) / curv, -2 * h, 2 * h);
                if (v != 0 && v != d) {
                    const double ev = total(scaled(best, axis, v));
                    if (ev < e) { d = v; e = ev; }
                }
            }
            if (d != 0) {
                best = scaled(best, axis, d);
                e0 = e;
            }
        }
    }
    return best;
}

LoopResult run_main_loop(const ScanData &scan, const Whitefield &w, const PixelMask &m,
                         const PixelMap &u0, const PixelTranslations &t0, const Roi &roi,
                         const LoopOptions &opts) {
    if (opts.max_iters < 0) throw InvalidArgument("max_iters must be >= 0");
    if (opts.schedule.empty()) throw InvalidArgument("empty update schedule");

    LoopResult res{u0, {}, t0, {}, {}, 0};
    res.reference = make_reference(scan, w, m, res.u, res.translations, roi);
    res.error = calc_error(scan, w, m, res.reference, res.u, res.translations, roi);
    res.history.push_back(res.error.total);
    if (opts.progress) opts.progress(0, res.error.total);

    for (int it = 1; it <= opts.max_iters; ++it) {
        const UpdateOptions &uo =
            opts.schedule[std::min<std::size_t>(static_cast<std::size_t>(it - 1), opts.schedule.size() - 1)];
        const SearchWindow &win = it == 1 ? opts.first_window : opts.window;

        // (i) reference, (ii) pixel map
        res.reference = make_reference(scan, w, m, res.u, res.translations, roi);
        res.u = update_pixel_map(scan, w, m, res.reference, res.u, res.translations, roi, win, uo).u;
        if (opts.refine_magnification)
            res.u = refine_magnification(scan, w, m, res.u, res.translations, roi);

        // (iii) translations
        if (opts.update_translations_from > 0 && it >= opts.update_translations_from) {
            res.reference = make_reference(scan, w, m, res.u, res.translations, roi);
            res.translations = update_translations(scan, w, m, res.reference, res.u,
                                                   res.translations, roi, opts.translation_window);
        }

        // (iv) figures of merit
        res.reference = make_reference(scan, w, m, res.u, res.translations, roi);
        res.error = calc_error(scan, w, m, res.reference, res.u, res.translations, roi);
        const double prev = res.history.back();
        res.history.push_back(res.error.total);
        res.iterations = it;
        if (opts.progress) opts.progress(it, res.error.total);

        const bool schedule_done = static_cast<std::size_t>(it) >= opts.schedule.size();
        if (schedule_done && prev > 0 && (prev - res.error.total) / prev < opts.tol) break;
    }
    return res;
}

}  // namespace pxst
