#ifndef PXST_ARRAY_HPP
#define PXST_ARRAY_HPP

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

namespace pxst {

// Images are row-major so that row index = slow-scan axis, column = fast-scan
// axis, and the memory layout matches C-ordered HDF5 datasets.
template <typename Scalar>
using Image = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ImageD = Image<double>;
using ImageB = Image<bool>;
using ImageC = Image<std::complex<double>>;

// N x SS x FS stack, one image per frame.
template <typename Scalar>
using Stack = std::vector<Image<Scalar>>;

using StackD = Stack<double>;

using Eigen::Index;

struct Shape2 {
    Index ss = 0;
    Index fs = 0;
    friend bool operator==(const Shape2 &, const Shape2 &) = default;
};

template <typename Derived>
Shape2 shape_of(const Eigen::DenseBase<Derived> &a) {
    return {a.rows(), a.cols()};
}

// Masked mean; returns 0 when the mask is empty.
template <typename Derived, typename MaskDerived>
typename Derived::Scalar masked_mean(const Eigen::ArrayBase<Derived> &a,
                                     const Eigen::ArrayBase<MaskDerived> &mask) {
    using Scalar = typename Derived::Scalar;
    const Index n = mask.count();
    if (n == 0) return Scalar(0);
    return mask.select(a, Scalar(0)).sum() / static_cast<Scalar>(n);
}

template <typename Derived, typename MaskDerived>
typename Derived::Scalar masked_rms(const Eigen::ArrayBase<Derived> &a,
                                    const Eigen::ArrayBase<MaskDerived> &mask) {
    using Scalar = typename Derived::Scalar;
    const Index n = mask.count();
    if (n == 0) return Scalar(0);
    return std::sqrt(mask.select(a.square(), Scalar(0)).sum() / static_cast<Scalar>(n));
}

}  // namespace pxst

#endif
