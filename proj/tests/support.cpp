#include "support.hpp"

#include <atomic>
#include <chrono>
#include <cmath>

namespace testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            ("pxst-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::permissions(path_, fs::perms::owner_all, fs::perm_options::add, ec);
    for (const auto &e : fs::recursive_directory_iterator(path_, ec))
        fs::permissions(e.path(), fs::perms::owner_all, fs::perm_options::add, ec);
    fs::remove_all(path_, ec);
}

pxst::SimSpec small_spec(std::uint64_t seed) {
    pxst::SimSpec s;
    s.shape = {48, 40};
    s.n_positions = 9;
    s.step = 10;
    s.jitter = 0.5;
    s.texture_sigma = 3;
    s.aberrations = {{4, 1.0}, {7, 0.5}};
    pxst::scale_to_peak_displacement(s, 1.5);
    s.seed = seed;
    return s;
}

pxst::ScanData random_scan(pxst::Index n, pxst::Index ss, pxst::Index fs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    pxst::ScanData s;
    s.wavelength = 1e-10;
    s.distance = 1.0;
    s.x_pixel_size = 1e-5;
    s.y_pixel_size = 2e-5;
    pxst::BasisVectors bv;
    bv << 1e-5, 0, 0, 0, 2e-5, 0;
    s.basis_vectors.assign(static_cast<std::size_t>(n), bv);
    s.translations.resize(n, 3);
    std::uniform_real_distribution<double> pos(-1e-6, 1e-6);
    for (pxst::Index k = 0; k < n; ++k) s.translations.row(k) << pos(rng), pos(rng), 0.0;
    for (pxst::Index k = 0; k < n; ++k) s.frames.push_back(random_image(ss, fs, rng, 0, 100));
    s.good_frames.assign(static_cast<std::size_t>(n), true);
    return s;
}

pxst::ImageD random_image(pxst::Index rows, pxst::Index cols, std::mt19937_64 &rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    pxst::ImageD a(rows, cols);
    for (pxst::Index k = 0; k < a.size(); ++k) a.data()[k] = d(rng);
    return a;
}

double rms(const pxst::ImageD &a) { return std::sqrt(a.square().mean()); }

std::string st_binary() { return PXST_ST_BINARY; }

}  // namespace testing
