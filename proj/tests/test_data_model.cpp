#include "support.hpp"

#include "pxst/errors.hpp"
#include "pxst/geometry.hpp"
#include "pxst/types.hpp"

#include <doctest.h>

#include <algorithm>
#include <limits>

using namespace pxst;

namespace {

bool has(const std::vector<std::string> &v, const std::string &s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

TEST_SUITE("data_model") {

TEST_CASE("well formed scan validates clean") {
    const ScanData s = testing::random_scan(121, 6, 9, 3);
    CHECK(validate(s).empty());
    CHECK(s.n_good_frames() == 121);
}

TEST_CASE("zero wavelength is reported") {
    ScanData s = testing::random_scan(2, 4, 4, 1);
    s.wavelength = 0;
    const auto v = validate(s);
    REQUIRE(v.size() == 1);
    CHECK(v.front() == "wavelength must be > 0");
}

TEST_CASE("basis vector of twice the pixel size is reported") {
    ScanData s = testing::random_scan(3, 4, 4, 1);
    for (auto &b : s.basis_vectors) b.row(0) *= 2;
    CHECK(has(validate(s), "basis_vectors row norm mismatch"));
}

TEST_CASE("basis vector norm tolerance is relative 1e-6") {
    ScanData s = testing::random_scan(2, 4, 4, 1);
    for (auto &b : s.basis_vectors) b(0, 0) *= 1 + 5e-7;
    CHECK(validate(s).empty());
    for (auto &b : s.basis_vectors) b(0, 0) *= 1 + 5e-6;
    CHECK(has(validate(s), "basis_vectors row norm mismatch"));
}

TEST_CASE("negative and non-finite counts are reported") {
    ScanData s = testing::random_scan(2, 4, 4, 1);
    s.frames[1](2, 2) = -1;
    CHECK(has(validate(s), "frames must be finite and >= 0"));
    s.frames[1](2, 2) = std::numeric_limits<double>::quiet_NaN();
    CHECK(has(validate(s), "frames must be finite and >= 0"));
}

TEST_CASE("structural violations") {
    ScanData empty;
    empty.wavelength = empty.distance = empty.x_pixel_size = empty.y_pixel_size = 1;
    CHECK(has(validate(empty), "frames must contain at least one frame"));

    ScanData s = testing::random_scan(3, 4, 4, 1);
    s.good_frames.pop_back();
    CHECK(has(validate(s), "good_frames must have one entry per frame"));

    ScanData r = testing::random_scan(3, 4, 4, 1);
    r.frames[2] = ImageD::Zero(5, 4);
    CHECK(has(validate(r), "frames must all have the same shape"));

    ScanData b = testing::random_scan(3, 4, 4, 1);
    b.basis_vectors[2](0, 1) = 1e-8;
    CHECK(has(validate(b), "basis_vectors vary across frames"));
}

TEST_CASE("geometry construction") {
    const Geometry g = make_geometry(1e-3, 1e-3, 1.0, 1e-5, 2e-5);
    CHECK(g.mag_ss == doctest::Approx(1001).epsilon(1e-14));
    CHECK(g.mag_fs == g.mag_ss);
    CHECK(g.du * g.mag_ss == doctest::Approx(1e-5).epsilon(1e-15));
    CHECK(g.dv * g.mag_fs == doctest::Approx(2e-5).epsilon(1e-15));
    CHECK(g.zbar_ss == doctest::Approx(1.0 / 1001).epsilon(1e-14));
    CHECK(g.zbar_ss < g.z);

    for (double z1 : {1e-6, 1e-3, 0.7, 50.0}) {
        const Geometry h = make_geometry(z1, z1, 2.0, 1e-5, 1e-5);
        CHECK(h.mag_ss > 1);
        CHECK(h.mag_ss == (z1 + 2.0) / z1);
        CHECK(h.zbar_ss == 2.0 / h.mag_ss);
    }
    CHECK_THROWS_AS(make_geometry(0, 1e-3, 1, 1e-5, 1e-5), InvalidArgument);
    CHECK_THROWS_AS(make_geometry(1e-3, -1, 1, 1e-5, 1e-5), InvalidArgument);
}

TEST_CASE("identity pixel map") {
    const PixelMap u = PixelMap::identity({3, 5});
    for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 5; ++j) {
            CHECK(u.ss(i, j) == i);
            CHECK(u.fs(i, j) == j);
        }
}

TEST_CASE("roi predicates") {
    const Roi r{1, 4, 2, 6};
    CHECK(r.valid_for({4, 6}));
    CHECK_FALSE(r.valid_for({3, 6}));
    CHECK_FALSE((Roi{2, 2, 0, 1}).valid_for({4, 4}));
    CHECK(r.contains(1, 2));
    CHECK_FALSE(r.contains(4, 2));
    CHECK(r.ss_size() == 3);
    CHECK(r.fs_size() == 4);
}

}
