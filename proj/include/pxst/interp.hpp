#ifndef PXST_INTERP_HPP
#define PXST_INTERP_HPP

#include "pxst/array.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace pxst::interp {

// Bilinear sampling and splatting on a regular grid with unit spacing, where
// grid node (i, j) sits at coordinate (i, j). Masked nodes are dropped from the
// weighted sum and the remaining corner weights renormalised.

template <typename Scalar>
struct Sample {
    Scalar value = 0;
    bool valid = false;
};

template <typename Scalar>
struct Point {
    Scalar ss;
    Scalar fs;
};

namespace detail {

// Splits a coordinate into a base node and fractional offset. Coordinates on
// the last node get fraction 0 so the upper neighbour is never touched.
template <typename Scalar>
inline bool split(Scalar x, Index n, Index &i0, Scalar &frac) {
    if (!(x >= Scalar(0)) || !(x <= static_cast<Scalar>(n - 1))) return false;
    i0 = static_cast<Index>(x);
    if (i0 >= n - 1) {
        i0 = n - 1;
        frac = Scalar(0);
    } else {
        frac = x - static_cast<Scalar>(i0);
    }
    return true;
}

}  // namespace detail

// Masked bilinear read of f at fractional (x, y). Invalid when the point lies
// outside [0, rows-1] x [0, cols-1] or every contributing corner is masked.
template <typename DerivedF, typename DerivedM>
Sample<typename DerivedF::Scalar> gather(const Eigen::ArrayBase<DerivedF> &f,
                                         const Eigen::ArrayBase<DerivedM> &mask,
                                         typename DerivedF::Scalar x,
                                         typename DerivedF::Scalar y) {
    using Scalar = typename DerivedF::Scalar;
    Index i0, j0;
    Scalar fx, fy;
    if (!detail::split(x, f.rows(), i0, fx) || !detail::split(y, f.cols(), j0, fy)) return {};

    const Scalar wx[2] = {Scalar(1) - fx, fx};
    const Scalar wy[2] = {Scalar(1) - fy, fy};
    Scalar num = 0, den = 0;
    for (int a = 0; a < 2; ++a) {
        if (wx[a] == Scalar(0)) continue;
        for (int b = 0; b < 2; ++b) {
            if (wy[b] == Scalar(0)) continue;
            if (!mask.coeff(i0 + a, j0 + b)) continue;
            const Scalar w = wx[a] * wy[b];
            num += w * f.coeff(i0 + a, j0 + b);
            den += w;
        }
    }
    if (den == Scalar(0)) return {};
    if (den == Scalar(1)) return {num, true};
    return {num / den, true};
}

// Unmasked bilinear read.
template <typename DerivedF>
Sample<typename DerivedF::Scalar> gather(const Eigen::ArrayBase<DerivedF> &f,
                                         typename DerivedF::Scalar x,
                                         typename DerivedF::Scalar y) {
    using Scalar = typename DerivedF::Scalar;
    Index i0, j0;
    Scalar fx, fy;
    if (!detail::split(x, f.rows(), i0, fx) || !detail::split(y, f.cols(), j0, fy)) return {};
    Scalar v = (Scalar(1) - fx) * (Scalar(1) - fy) * f.coeff(i0, j0);
    if (fy != Scalar(0)) v += (Scalar(1) - fx) * fy * f.coeff(i0, j0 + 1);
    if (fx != Scalar(0)) {
        v += fx * (Scalar(1) - fy) * f.coeff(i0 + 1, j0);
        if (fy != Scalar(0)) v += fx * fy * f.coeff(i0 + 1, j0 + 1);
    }
    return {v, true};
}

// Batch form: one sample per point.
template <typename DerivedF, typename DerivedM>
std::vector<Sample<typename DerivedF::Scalar>> gather(
    const Eigen::ArrayBase<DerivedF> &f, const Eigen::ArrayBase<DerivedM> &mask,
    const std::vector<Point<typename DerivedF::Scalar>> &points) {
    std::vector<Sample<typename DerivedF::Scalar>> out;
    out.reserve(points.size());
    for (const auto &p : points) out.push_back(gather(f, mask, p.ss, p.fs));
    return out;
}

template <typename Scalar>
struct WeightedAccumulator {
    Image<Scalar> values;
    Image<Scalar> weights;
    Index dropped = 0;  // points that fell outside the grid

    WeightedAccumulator() = default;
    WeightedAccumulator(Index rows, Index cols)
        : values(Image<Scalar>::Zero(rows, cols)), weights(Image<Scalar>::Zero(rows, cols)) {}

    Index rows() const { return values.rows(); }
    Index cols() const { return values.cols(); }

    WeightedAccumulator &operator+=(const WeightedAccumulator &other) {
        values += other.values;
        weights += other.weights;
        dropped += other.dropped;
        return *this;
    }
};

// Splats value (with the given weight) onto the up to four nodes surrounding
// (x, y). values receives value*weight*w_corner, weights receives
// weight*w_corner. Out-of-grid points are counted and ignored.
template <typename Scalar>
void scatter_accumulate(WeightedAccumulator<Scalar> &acc, Scalar x, Scalar y, Scalar value,
                        Scalar weight) {
    Index i0, j0;
    Scalar fx, fy;
    if (!detail::split(x, acc.rows(), i0, fx) || !detail::split(y, acc.cols(), j0, fy)) {
        ++acc.dropped;
        return;
    }
    const Scalar wx[2] = {Scalar(1) - fx, fx};
    const Scalar wy[2] = {Scalar(1) - fy, fy};
    for (int a = 0; a < 2; ++a) {
        if (wx[a] == Scalar(0)) continue;
        for (int b = 0; b < 2; ++b) {
            if (wy[b] == Scalar(0)) continue;
            const Scalar w = weight * wx[a] * wy[b];
            acc.values(i0 + a, j0 + b) += value * w;
            acc.weights(i0 + a, j0 + b) += w;
        }
    }
}

// values / weights where weights > 0; the mask marks the filled cells.
template <typename Scalar>
std::pair<Image<Scalar>, ImageB> normalize(const WeightedAccumulator<Scalar> &acc) {
    ImageB valid = acc.weights > Scalar(0);
    Image<Scalar> out = valid.select(acc.values / acc.weights, Scalar(0));
    return {std::move(out), std::move(valid)};
}

}  // namespace pxst::interp

#endif
