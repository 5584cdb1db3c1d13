#ifndef PXST_FFT_HPP
#define PXST_FFT_HPP

#include "pxst/array.hpp"

namespace pxst::fft {

// Unnormalised forward 2-D DFT (exp(-2 pi i k x / n)).
ImageC forward(const ImageC &a);

// Inverse 2-D DFT including the 1/(rows*cols) factor, so inverse(forward(a)) == a.
ImageC inverse(const ImageC &a);

ImageC forward(const ImageD &a);

// Sample frequencies in cycles per unit length, in DFT order (DC first),
// matching numpy.fft.fftfreq(n, spacing).
Eigen::ArrayXd frequencies(Index n, double spacing);

}  // namespace pxst::fft

#endif
