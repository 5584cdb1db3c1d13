#ifndef PXST_TEST_SUPPORT_HPP
#define PXST_TEST_SUPPORT_HPP

#include "pxst/sim.hpp"
#include "pxst/types.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testing {

// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;
    const std::filesystem::path &path() const { return path_; }
    std::string file(const std::string &name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

// Small, fast simulated scan used across modules.
pxst::SimSpec small_spec(std::uint64_t seed = 1);

// Scan with arbitrary but valid metadata and random frames.
pxst::ScanData random_scan(pxst::Index n, pxst::Index ss, pxst::Index fs, std::uint64_t seed);

pxst::ImageD random_image(pxst::Index rows, pxst::Index cols, std::mt19937_64 &rng, double lo = 0, double hi = 1);

double rms(const pxst::ImageD &a);

// Directory holding the `st` binary (set by CMake).
std::string st_binary();

}  // namespace testing

#endif
