#ifndef PXST_PREPROCESS_HPP
#define PXST_PREPROCESS_HPP

#include "pxst/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pxst {

// Per-pixel median over the good frames. For an even number of frames the
// lower of the two middle values is taken. Masked pixels are set to zero.
Whitefield make_whitefield(const ScanData &scan, const std::optional<PixelMask> &mask = {});

struct MaskOptions {
    double threshold = 10.0;  // kappa, in units of the local MAD
    double mad_floor = 1.0;   // added to the MAD so flat regions do not divide by zero
};

// Flags pixels whose values sit far from their neighbourhood during the scan.
// For each pixel the temporal median m and median absolute deviation (MAD)
// are computed over the good frames; m_nb and mad_nb are the 3x3 spatial
// medians of those maps. A pixel is bad when
//     median_n |I[n] - m_nb| / (mad_nb + mad_floor) > threshold.
// Fewer than three good frames yields an all-good mask and a warning.
PixelMask make_mask(const ScanData &scan, const MaskOptions &opts = {},
                    std::vector<std::string> *warnings = nullptr);

// Rectangle holding most of the whitefield signal, decided per axis from the
// marginal sums: rows (columns) whose marginal exceeds (1 - fraction) of the
// largest marginal are kept, and the interval is then widened until it
// contains at least `fraction` of the axis total.
Roi guess_roi(const Whitefield &w, double fraction = 0.95);

}  // namespace pxst

#endif
