#include "support.hpp"

#include "pxst/interp.hpp"

#include <doctest.h>

using namespace pxst;
using interp::WeightedAccumulator;

TEST_SUITE("interp") {

TEST_CASE("symmetric average") {
    ImageD f(2, 2);
    f << 0, 0, 1, 1;
    const auto s = interp::gather(f, ImageB::Constant(2, 2, true), 0.5, 0.5);
    CHECK(s.valid);
    CHECK(s.value == 0.5);
}

TEST_CASE("masked constant field keeps its value") {
    ImageD f = ImageD::Constant(3, 3, 4.0);
    ImageB m = ImageB::Constant(3, 3, true);
    m(1, 1) = false;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> d(0, 2);
    for (int k = 0; k < 500; ++k) {
        const auto s = interp::gather(f, m, d(rng), d(rng));
        if (!s.valid) continue;
        CHECK(s.value == 4.0);
    }
    CHECK_FALSE(interp::gather(f, m, 1.0, 1.0).valid);
}

TEST_CASE("integer nodes are bit-exact") {
    std::mt19937_64 rng(5);
    const ImageD f = testing::random_image(7, 9, rng, -1e3, 1e3);
    const ImageB m = ImageB::Constant(7, 9, true);
    for (Index i = 0; i < 7; ++i)
        for (Index j = 0; j < 9; ++j) {
            const auto s = interp::gather(f, m, double(i), double(j));
            CHECK(s.valid);
            CHECK(s.value == f(i, j));
            CHECK(interp::gather(f, double(i), double(j)).value == f(i, j));
        }
    CHECK(interp::gather(f, m, 1.0, 0.0).value == f(1, 0));
}

TEST_CASE("affine fields are reproduced") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> coef(-3, 3);
    for (int trial = 0; trial < 20; ++trial) {
        const double a = coef(rng), b = coef(rng), c = coef(rng);
        ImageD f(10, 12);
        for (Index i = 0; i < 10; ++i)
            for (Index j = 0; j < 12; ++j) f(i, j) = a + b * double(i) + c * double(j);
        const ImageB m = ImageB::Constant(10, 12, true);
        std::uniform_real_distribution<double> x(0, 9), y(0, 11);
        for (int k = 0; k < 100; ++k) {
            const double px = x(rng), py = y(rng);
            const auto s = interp::gather(f, m, px, py);
            REQUIRE(s.valid);
            CHECK(std::abs(s.value - (a + b * px + c * py)) < 1e-12);
        }
    }
}

TEST_CASE("out of bounds is invalid, the last node is inside") {
    const ImageD f = ImageD::Ones(4, 5);
    const ImageB m = ImageB::Constant(4, 5, true);
    CHECK_FALSE(interp::gather(f, m, -1e-9, 2.0).valid);
    CHECK_FALSE(interp::gather(f, m, 3.0 + 1e-9, 2.0).valid);
    CHECK_FALSE(interp::gather(f, m, 1.0, 4.5).valid);
    CHECK_FALSE(interp::gather(f, m, std::nan(""), 1.0).valid);
    CHECK(interp::gather(f, m, 3.0, 4.0).valid);
    CHECK(interp::gather(f, m, 3.0, 4.0).value == 1.0);
}

TEST_CASE("bilinear weights sum to one") {
    WeightedAccumulator<double> acc(6, 6);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> d(0, 5);
    for (int k = 0; k < 50; ++k) {
        WeightedAccumulator<double> one(6, 6);
        interp::scatter_accumulate(one, d(rng), d(rng), 1.0, 1.0);
        CHECK(one.weights.sum() == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("scatter at an integer point does not spill") {
    WeightedAccumulator<double> acc(5, 6);
    interp::scatter_accumulate(acc, 2.0, 3.0, 1.0, 1.0);
    CHECK(acc.values(2, 3) == 1.0);
    CHECK(acc.weights(2, 3) == 1.0);
    CHECK(acc.weights.sum() == 1.0);
    CHECK(acc.values.sum() == 1.0);
}

TEST_CASE("scatter half way splits evenly") {
    WeightedAccumulator<double> acc(5, 6);
    interp::scatter_accumulate(acc, 2.5, 3.0, 1.0, 1.0);
    CHECK(acc.values(2, 3) == 0.5);
    CHECK(acc.values(3, 3) == 0.5);
    CHECK(acc.weights(2, 3) == 0.5);
    CHECK(acc.weights(3, 3) == 0.5);
    CHECK(acc.weights.sum() == 1.0);
}

TEST_CASE("out of grid scatter is dropped and counted") {
    WeightedAccumulator<double> acc(3, 3);
    interp::scatter_accumulate(acc, -0.5, 1.0, 1.0, 1.0);
    interp::scatter_accumulate(acc, 1.0, 2.5, 1.0, 1.0);
    CHECK(acc.dropped == 2);
    CHECK(acc.weights.sum() == 0);
}

TEST_CASE("constant field scattered from a shifted grid") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> shift(0, 3);
    for (int trial = 0; trial < 10; ++trial) {
        WeightedAccumulator<double> acc(20, 20);
        for (int n = 0; n < 3; ++n) {
            const double si = shift(rng), sj = shift(rng);
            for (Index i = 0; i < 16; ++i)
                for (Index j = 0; j < 16; ++j) interp::scatter_accumulate(acc, i + si, j + sj, 2.5, 0.7);
        }
        const auto [out, valid] = interp::normalize(acc);
        REQUIRE(valid.any());
        for (Index k = 0; k < out.size(); ++k)
            if (valid.data()[k]) CHECK(std::abs(out.data()[k] - 2.5) < 1e-12);
    }
}

TEST_CASE("normalize of an empty accumulator is all invalid") {
    const auto [out, valid] = interp::normalize(WeightedAccumulator<double>(4, 3));
    CHECK_FALSE(valid.any());
    CHECK((out == 0).all());
}

TEST_CASE("single scatter round trip") {
    WeightedAccumulator<double> acc(4, 4);
    interp::scatter_accumulate(acc, 1.0, 2.0, 3.75, 0.3);
    const auto [out, valid] = interp::normalize(acc);
    CHECK(out(1, 2) == doctest::Approx(3.75).epsilon(1e-15));
    CHECK(valid.count() == 1);
}

TEST_CASE("scatter and normalize match a dense evaluation") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> pos(0, 9), val(-5, 5), wt(0.1, 2);
    struct P { double x, y, v, w; };
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<P> pts;
        for (int k = 0; k < 200; ++k) pts.push_back({pos(rng), pos(rng), val(rng), wt(rng)});
        WeightedAccumulator<double> acc(10, 10);
        for (const auto &p : pts) interp::scatter_accumulate(acc, p.x, p.y, p.v, p.w);
        const auto [out, valid] = interp::normalize(acc);
        // Dense oracle: each cell's hat-function weight against every point.
        for (Index i = 0; i < 10; ++i)
            for (Index j = 0; j < 10; ++j) {
                double num = 0, den = 0;
                for (const auto &p : pts) {
                    const double h = std::max(0.0, 1 - std::abs(p.x - i)) * std::max(0.0, 1 - std::abs(p.y - j));
                    num += h * p.w * p.v;
                    den += h * p.w;
                }
                CHECK(valid(i, j) == (den > 0));
                if (den > 0) CHECK(std::abs(out(i, j) - num / den) <= 1e-10 * std::max(1.0, std::abs(num / den)));
            }
    }
}

TEST_CASE("accumulators merge additively") {
    WeightedAccumulator<double> a(3, 3), b(3, 3), both(3, 3);
    interp::scatter_accumulate(a, 0.3, 1.2, 2.0, 1.0);
    interp::scatter_accumulate(b, 1.7, 0.4, -1.0, 0.5);
    interp::scatter_accumulate(both, 0.3, 1.2, 2.0, 1.0);
    interp::scatter_accumulate(both, 1.7, 0.4, -1.0, 0.5);
    a += b;
    CHECK(((a.values - both.values).abs() < 1e-15).all());
    CHECK(((a.weights - both.weights).abs() < 1e-15).all());
}

TEST_CASE("batch gather matches single gathers") {
    std::mt19937_64 rng(8);
    const ImageD f = testing::random_image(5, 5, rng);
    ImageB m = ImageB::Constant(5, 5, true);
    m(2, 2) = false;
    std::vector<interp::Point<double>> pts{{0.5, 0.5}, {2, 2}, {1.5, 2.5}, {6, 0}};
    const auto out = interp::gather(f, m, pts);
    REQUIRE(out.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) {
        const auto s = interp::gather(f, m, pts[k].ss, pts[k].fs);
        CHECK(out[k].valid == s.valid);
        CHECK(out[k].value == s.value);
    }
    CHECK_FALSE(out[1].valid);
    CHECK_FALSE(out[3].valid);
}

}
