#include "pxst/integrate.hpp"

#include "pxst/errors.hpp"

#include <cmath>

namespace pxst {

namespace {

// Applies the 1-D derivative stencil (or its transpose) to a strided line.
void line_op(const double *x, double *y, Index n, Index stride, bool transpose) {
    auto X = [&](Index k) { return x[k * stride]; };
    auto Y = [&](Index k) -> double & { return y[k * stride]; };
    if (n == 1) return;
    if (n == 2) {
        if (!transpose) {
            Y(0) += X(1) - X(0);
            Y(1) += X(1) - X(0);
        } else {
            const double s = X(0) + X(1);
            Y(0) -= s;
            Y(1) += s;
        }
        return;
    }
    if (!transpose) {
        Y(0) += 0.5 * (-3.0 * X(0) + 4.0 * X(1) - X(2));
        for (Index k = 1; k < n - 1; ++k) Y(k) += 0.5 * (X(k + 1) - X(k - 1));
        Y(n - 1) += 0.5 * (3.0 * X(n - 1) - 4.0 * X(n - 2) + X(n - 3));
    } else {
        // row 0
        Y(0) += -1.5 * X(0);
        Y(1) += 2.0 * X(0);
        Y(2) += -0.5 * X(0);
        for (Index k = 1; k < n - 1; ++k) {
            Y(k + 1) += 0.5 * X(k);
            Y(k - 1) -= 0.5 * X(k);
        }
        Y(n - 1) += 1.5 * X(n - 1);
        Y(n - 2) += -2.0 * X(n - 1);
        Y(n - 3) += 0.5 * X(n - 1);
    }
}

ImageD apply(const ImageD &a, int axis, bool transpose) {
    ImageD out = ImageD::Zero(a.rows(), a.cols());
    const Index rows = a.rows(), cols = a.cols();
    if (axis == 0) {
        for (Index c = 0; c < cols; ++c) line_op(a.data() + c, out.data() + c, rows, cols, transpose);
    } else {
        for (Index r = 0; r < rows; ++r)
            line_op(a.data() + r * cols, out.data() + r * cols, cols, 1, transpose);
    }
    return out;
}

}  // namespace

ImageD derivative(const ImageD &phi, int axis) { return apply(phi, axis, false); }

ImageD derivative_adjoint(const ImageD &g, int axis) { return apply(g, axis, true); }

ImageD curl(const ImageD &g_ss, const ImageD &g_fs) {
    return derivative(g_fs, 0) - derivative(g_ss, 1);
}

IntegrationResult integrate_gradient(const ImageD &g_ss, const ImageD &g_fs, const ImageB &mask,
                                     int max_iterations, double tolerance) {
    if (shape_of(g_ss) != shape_of(g_fs) || shape_of(g_ss) != shape_of(mask))
        throw InvalidArgument("integrate_gradient: gradient and mask shapes differ");

    const ImageD m = mask.cast<double>();
    auto normal = [&](const ImageD &phi) {
        return ImageD(derivative_adjoint(m * derivative(phi, 0), 0) +
                      derivative_adjoint(m * derivative(phi, 1), 1));
    };
    const ImageD gs = mask.select(g_ss, 0.0);
    const ImageD gf = mask.select(g_fs, 0.0);
    const ImageD b = derivative_adjoint(m * gs, 0) + derivative_adjoint(m * gf, 1);

    IntegrationResult res;
    res.phi = ImageD::Zero(g_ss.rows(), g_ss.cols());
    const double bnorm = std::sqrt(b.square().sum());
    if (bnorm == 0.0) {
        res.converged = true;
        return res;
    }

    ImageD r = b;
    ImageD p = r;
    double rr = r.square().sum();
    int it = 0;
    for (; it < max_iterations; ++it) {
        if (std::sqrt(rr) <= tolerance * bnorm) break;
        const ImageD Ap = normal(p);
        const double pAp = (p * Ap).sum();
        if (!(pAp > 0)) break;
        const double alpha = rr / pAp;
        res.phi += alpha * p;
        r -= alpha * Ap;
        const double rr_new = r.square().sum();
        p = r + (rr_new / rr) * p;
        rr = rr_new;
    }
    res.iterations = it;
    res.relative_residual = std::sqrt(rr) / bnorm;
    // Stagnation at round-off level still counts as converged.
    res.converged = res.relative_residual <= std::max(tolerance, 1e-10);

    for (Index k = 0; k < mask.size(); ++k) {
        if (mask.data()[k]) {
            const double anchor = res.phi.data()[k];
            res.phi -= anchor;
            break;
        }
    }
    return res;
}

}  // namespace pxst
