#ifndef PXST_INTEGRATE_HPP
#define PXST_INTEGRATE_HPP

#include "pxst/array.hpp"

namespace pxst {

// Discrete derivative along the slow-scan (axis 0) or fast-scan (axis 1)
// direction: second-order central differences in the interior and
// second-order one-sided differences on the first and last rows/columns.
// Exact for quadratic fields.
ImageD derivative(const ImageD &phi, int axis);

// Adjoint of derivative() under the plain Euclidean inner product.
ImageD derivative_adjoint(const ImageD &g, int axis);

// Discrete curl d/dss(g_fs) - d/dfs(g_ss). Vanishes identically on fields
// produced by derivative().
ImageD curl(const ImageD &g_ss, const ImageD &g_fs);

struct IntegrationResult {
    ImageD phi;
    bool converged = false;
    int iterations = 0;
    double relative_residual = 0;
};

// Least-squares integration: finds phi minimising
//   sum_masked |derivative(phi) - g|^2
// with conjugate gradients on the normal equations, then anchors phi to zero
// at the first good pixel (row-major order).
IntegrationResult integrate_gradient(const ImageD &g_ss, const ImageD &g_fs, const ImageB &mask,
                                     int max_iterations = 20000, double tolerance = 1e-13);

}  // namespace pxst

#endif
