#ifndef PXST_RECON_HPP
#define PXST_RECON_HPP

#include "pxst/types.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pxst {

struct SearchWindow {
    int half_ss = 4;
    int half_fs = 4;
    std::optional<double> subpixel_grid;  // step in reference px; replaces the integer step
};

struct UpdateOptions {
    bool quadratic_refinement = true;
    bool integrate = true;
    double sigma = 0;  // detector px, 0 = no smoothing
    bool include_current = true;
};

// Extent of the reference grid needed to hold every u - t position of the
// good pixels and frames.
struct ReferenceGrid {
    Index origin_ss = 0, origin_fs = 0;
    Index rows = 0, cols = 0;
};

// Pixels that take part in the reconstruction: mask, inside roi, W > 0.
ImageB active_pixels(const PixelMask &m, const Whitefield &w, const Roi &roi);

ReferenceGrid reference_grid(const PixelMap &u, const PixelTranslations &t, const ImageB &active,
                             const std::vector<bool> &good_frames);

ReferenceImage make_reference(const ScanData &scan, const Whitefield &w, const PixelMask &m,
                              const PixelMap &u, const PixelTranslations &t, const Roi &roi);

struct PixelMapUpdate {
    PixelMap u;
    ImageD error;  // normalised per-pixel error at the returned map
};

// Optional per-sample selector used by split-half analysis: returns whether
// sample (n, i, j) takes part.
using SampleFilter = std::function<bool(Index n, Index i, Index j)>;

PixelMapUpdate update_pixel_map(const ScanData &scan, const Whitefield &w, const PixelMask &m,
                                const ReferenceImage &ref, const PixelMap &u,
                                const PixelTranslations &t, const Roi &roi, const SearchWindow &win,
                                const UpdateOptions &opts, const SampleFilter &filter = {});

// Normalised error of every pixel at the given map (no search).
ImageD pixel_map_error(const ScanData &scan, const Whitefield &w, const PixelMask &m,
                       const ReferenceImage &ref, const PixelMap &u, const PixelTranslations &t,
                       const Roi &roi);

// Minimum of the least-squares paraboloid through a 3x3 error patch centred
// on (0, 0). Returns (0, 0) when the fitted Hessian is not positive definite;
// offsets are clamped to [-1, 1].
std::pair<double, double> quadratic_subpixel_refine(const Eigen::Matrix3d &err);

// Replaces u - identity with the gradient of its least-squares potential on
// the masked pixels. Masked-out pixels keep their input value.
PixelMap irrotational_projection(const PixelMap &u, const PixelMask &m, bool *converged = nullptr);

// Mask-aware Gaussian smoothing of u - identity (sigma in pixels).
PixelMap smooth_pixel_map(const PixelMap &u, const ImageB &mask, double sigma);

PixelTranslations update_translations(const ScanData &scan, const Whitefield &w,
                                      const PixelMask &m, const ReferenceImage &ref,
                                      const PixelMap &u, const PixelTranslations &t,
                                      const Roi &roi, const SearchWindow &win);

ErrorMetrics calc_error(const ScanData &scan, const Whitefield &w, const PixelMask &m,
                        const ReferenceImage &ref, const PixelMap &u, const PixelTranslations &t,
                        const Roi &roi);

// Per-axis line search on a uniform magnification added to u - identity
// about the centre of the active pixels, scored by the total error with the
// reference rebuilt for each trial. Only moves that lower the error are kept.
// The per-pixel search sees a magnification error only as reference blur, so
// this mode otherwise converges very slowly.
PixelMap refine_magnification(const ScanData &scan, const Whitefield &w, const PixelMask &m,
                              const PixelMap &u, const PixelTranslations &t, const Roi &roi,
                              double step = 2e-3, int rounds = 3);

struct LoopOptions {
    // Per-iteration options; the last entry is reused once the list runs out.
    std::vector<UpdateOptions> schedule = default_schedule();
    SearchWindow first_window{4, 4, {}};
    SearchWindow window{2, 2, {}};
    SearchWindow translation_window{1, 1, {}};
    int update_translations_from = 2;  // 1-based iteration; 0 disables
    bool refine_magnification = true;
    int max_iters = 10;
    double tol = 1e-3;
    std::function<void(int iteration, double total_error)> progress;

    // sigma 5 -> sqrt(5) -> 1 px, integrate and quadratic refinement on.
    static std::vector<UpdateOptions> default_schedule();
};

struct LoopResult {
    PixelMap u;
    ReferenceImage reference;
    PixelTranslations translations;
    ErrorMetrics error;
    std::vector<double> history;  // initial error, then one entry per iteration
    int iterations = 0;
};

LoopResult run_main_loop(const ScanData &scan, const Whitefield &w, const PixelMask &m,
                         const PixelMap &u0, const PixelTranslations &t0, const Roi &roi,
                         const LoopOptions &opts = {});

}  // namespace pxst

#endif
