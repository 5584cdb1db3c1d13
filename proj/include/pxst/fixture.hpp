#ifndef PXST_FIXTURE_HPP
#define PXST_FIXTURE_HPP

#include "pxst/types.hpp"

#include <string>

namespace pxst::fixture {

// Portable scan format: a directory holding a `meta` text file of
// `key = value` lines (SI units) and raw little-endian payloads described in
// it, e.g.
//
//   format = pxst-fixture 1
//   wavelength = 1.0000000000000000e-10
//   frames = frames.bin float64 25 128 128
//   good_frames = good_frames.bin uint8 25
//
// Doubles are written with 17 significant digits so round trips are exact.
void save_fixture(const ScanData &scan, const std::string &dir);
ScanData load_fixture(const std::string &dir);

}  // namespace pxst::fixture

#endif
