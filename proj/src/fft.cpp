#include "pxst/fft.hpp"

#include <unsupported/Eigen/FFT>

#include <vector>

namespace pxst::fft {

namespace {

using Complex = std::complex<double>;

ImageC transform(const ImageC &a, bool inverse) {
    Eigen::FFT<double> engine;
    engine.SetFlag(Eigen::FFT<double>::Unscaled);
    const Index rows = a.rows(), cols = a.cols();
    ImageC out(rows, cols);

    std::vector<Complex> in_buf, out_buf;
    in_buf.resize(cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) in_buf[c] = a(r, c);
        if (inverse)
            engine.inv(out_buf, in_buf);
        else
            engine.fwd(out_buf, in_buf);
        for (Index c = 0; c < cols; ++c) out(r, c) = out_buf[c];
    }
    in_buf.resize(rows);
    for (Index c = 0; c < cols; ++c) {
        for (Index r = 0; r < rows; ++r) in_buf[r] = out(r, c);
        if (inverse)
            engine.inv(out_buf, in_buf);
        else
            engine.fwd(out_buf, in_buf);
        for (Index r = 0; r < rows; ++r) out(r, c) = out_buf[r];
    }
    if (inverse) out /= static_cast<double>(rows * cols);
    return out;
}

}  // namespace

ImageC forward(const ImageC &a) { return transform(a, false); }

ImageC inverse(const ImageC &a) { return transform(a, true); }

ImageC forward(const ImageD &a) { return transform(a.cast<Complex>(), false); }

Eigen::ArrayXd frequencies(Index n, double spacing) {
    Eigen::ArrayXd q(n);
    for (Index k = 0; k < n; ++k) {
        const Index kk = k <= (n - 1) / 2 ? k : k - n;
        q[k] = static_cast<double>(kk) / (static_cast<double>(n) * spacing);
    }
    return q;
}

}  // namespace pxst::fft
