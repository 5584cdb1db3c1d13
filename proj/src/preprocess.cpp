#include "pxst/preprocess.hpp"

#include "pxst/errors.hpp"
#include "pxst/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace pxst {

namespace {

double lower_median(std::vector<double> &v) {
    const std::size_t k = (v.size() - 1) / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
    return v[k];
}

std::vector<Index> good_frame_indices(const ScanData &scan) {
    std::vector<Index> idx;
    for (Index n = 0; n < scan.n_frames(); ++n)
        if (scan.good_frames.empty() || scan.good_frames[n]) idx.push_back(n);
    return idx;
}

ImageD median3x3(const ImageD &a) {
    ImageD out(a.rows(), a.cols());
    parallel_for(0, a.rows(), [&](Index i) {
        std::vector<double> buf;
        buf.reserve(9);
        for (Index j = 0; j < a.cols(); ++j) {
            buf.clear();
            for (Index di = -1; di <= 1; ++di)
                for (Index dj = -1; dj <= 1; ++dj) {
                    const Index ii = i + di, jj = j + dj;
                    if (ii >= 0 && ii < a.rows() && jj >= 0 && jj < a.cols()) buf.push_back(a(ii, jj));
                }
            out(i, j) = lower_median(buf);
        }
    });
    return out;
}

}  // namespace

Whitefield make_whitefield(const ScanData &scan, const std::optional<PixelMask> &mask) {
    const auto good = good_frame_indices(scan);
    if (good.empty()) throw DataError("make_whitefield: no good frames");
    const Shape2 shape = scan.frame_shape();
    if (mask && shape_of(mask->mask) != shape) throw InvalidArgument("mask shape differs from frames");

    Whitefield w{ImageD::Zero(shape.ss, shape.fs)};
    parallel_for(0, shape.ss, [&](Index i) {
        std::vector<double> series(good.size());
        for (Index j = 0; j < shape.fs; ++j) {
            if (mask && !mask->mask(i, j)) continue;
            for (std::size_t k = 0; k < good.size(); ++k) series[k] = scan.frames[good[k]](i, j);
            w.w(i, j) = lower_median(series);
        }
    });
    return w;
}

PixelMask make_mask(const ScanData &scan, const MaskOptions &opts, std::vector<std::string> *warnings) {
    const Shape2 shape = scan.frame_shape();
    const auto good = good_frame_indices(scan);
    if (good.size() < 3) {
        if (warnings) warnings->push_back("make_mask: fewer than 3 good frames, mask left all good");
        return PixelMask::all_good(shape);
    }

    ImageD med(shape.ss, shape.fs), mad(shape.ss, shape.fs);
    parallel_for(0, shape.ss, [&](Index i) {
        std::vector<double> series(good.size());
        for (Index j = 0; j < shape.fs; ++j) {
            for (std::size_t k = 0; k < good.size(); ++k) series[k] = scan.frames[good[k]](i, j);
            const double m = lower_median(series);
            for (auto &v : series) v = std::abs(v - m);
            med(i, j) = m;
            mad(i, j) = lower_median(series);
        }
    });
    const ImageD med_nb = median3x3(med);
    const ImageD mad_nb = median3x3(mad);

    PixelMask out = PixelMask::all_good(shape);
    parallel_for(0, shape.ss, [&](Index i) {
        std::vector<double> dev(good.size());
        for (Index j = 0; j < shape.fs; ++j) {
            for (std::size_t k = 0; k < good.size(); ++k)
                dev[k] = std::abs(scan.frames[good[k]](i, j) - med_nb(i, j));
            const double score = lower_median(dev) / (mad_nb(i, j) + opts.mad_floor);
            out.mask(i, j) = !(score > opts.threshold);
        }
    });
    return out;
}

namespace {

// Interval [lo, hi) along one axis.
std::pair<Index, Index> roi_axis(const Eigen::ArrayXd &marginal, double fraction) {
    const Index n = marginal.size();
    const double total = marginal.sum();
    const double peak = marginal.maxCoeff();
    const double level = (1.0 - fraction) * peak;

    Index lo = 0, hi = n;
    while (lo < n && !(marginal[lo] > level)) ++lo;
    while (hi > lo && !(marginal[hi - 1] > level)) --hi;
    if (lo >= hi) return {0, n};

    double inside = marginal.segment(lo, hi - lo).sum();
    const double target = fraction * total * (1.0 - 1e-12);
    while (inside < target && (lo > 0 || hi < n)) {
        const double left = lo > 0 ? marginal[lo - 1] : -1.0;
        const double right = hi < n ? marginal[hi] : -1.0;
        if (right > left) {
            inside += marginal[hi++];
        } else {
            inside += marginal[--lo];
        }
    }
    return {lo, hi};
}

}  // namespace

Roi guess_roi(const Whitefield &w, double fraction) {
    if (!(fraction > 0 && fraction <= 1)) throw InvalidArgument("guess_roi: fraction must be in (0, 1]");
    if (w.w.size() == 0 || !(w.w.abs().sum() > 0)) throw DataError("guess_roi: whitefield is all zero");
    const ImageD pos = w.w.max(0.0);
    const Eigen::ArrayXd ss_marginal = pos.rowwise().sum();
    const Eigen::ArrayXd fs_marginal = pos.colwise().sum().transpose();
    const auto [s0, s1] = roi_axis(ss_marginal, fraction);
    const auto [f0, f1] = roi_axis(fs_marginal, fraction);
    return {s0, s1, f0, f1};
}

}  // namespace pxst
