// Acceptance run: one line per criterion, exit status 1 when any fails.

#include "support.hpp"

#include "pxst/analysis.hpp"
#include "pxst/cxi.hpp"
#include "pxst/geometry.hpp"
#include "pxst/integrate.hpp"
#include "pxst/interp.hpp"
#include "pxst/parallel.hpp"
#include "pxst/recon.hpp"
#include "pxst/sim.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace pxst;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char *f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double map_rms(const PixelMap &a, const PixelMap &b) {
    return std::sqrt(((a.ss - b.ss).square() + (a.fs - b.fs).square()).mean());
}

// 25-frame 128x128 jittered raster, Noll 4/6/7/8 scaled to a 3 px peak.
SimSpec end_to_end_spec(bool poisson) {
    SimSpec s;
    s.shape = {128, 128};
    s.n_positions = 25;
    s.step = 24;
    s.jitter = 1.0;
    s.texture_sigma = 4;
    s.aberrations = {{4, 1.0}, {6, 0.5}, {7, 0.5}, {8, -0.5}};
    scale_to_peak_displacement(s, 3.0);
    s.poisson = poisson;
    s.peak_counts = 1000;
    s.seed = 7;
    return s;
}

struct Recovery {
    SimSpec spec;
    Simulation sim;
    Geometry geom;
    LoopResult result;
    double seconds = 0;
};

Recovery recover(bool poisson) {
    Recovery r;
    r.spec = end_to_end_spec(poisson);
    r.sim = simulate_scan(r.spec);
    const auto t0 = std::chrono::steady_clock::now();
    const Shape2 shape = r.spec.shape;
    const Whitefield w{r.sim.whitefield};
    const PixelMask m = PixelMask::all_good(shape);
    const Roi roi = Roi::full(shape);
    r.geom = make_geometry(r.spec.z1_ss, r.spec.z1_fs, r.sim.scan);
    const PixelTranslations t = translations_to_pixels(r.sim.scan, r.geom);
    LoopOptions lo;
    lo.max_iters = 10;
    r.result = run_main_loop(r.sim.scan, w, m, generate_pixel_map(r.geom, shape, roi), t, roi, lo);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

Phase recovered_phase(const Recovery &r) {
    return calculate_phase(r.result.u, r.geom, r.spec.wavelength, r.spec.x_pixel_size, r.spec.y_pixel_size,
                           PixelMask::all_good(r.spec.shape));
}

Outcome a1(const Recovery &r) {
    const double err = map_rms(r.result.u, r.sim.truth.pixel_map);
    const ImageB all = ImageB::Constant(r.spec.shape.ss, r.spec.shape.fs, true);
    const ZernikeFit got = zernike_fit(recovered_phase(r), all, 8);
    const ZernikeFit want = zernike_fit(Phase{r.sim.truth.phase, {}, all, true}, all, 8);
    double worst = 0;
    std::string coeffs;
    for (int j : {4, 6, 7, 8}) {
        const double a = got.coefficients[j - 1].second, b = want.coefficients[j - 1].second;
        worst = std::max(worst, std::abs(a - b) / std::abs(b));
        coeffs += fmt(" Z%d %.4f/%.4f", j, a, b);
    }
    const bool pass = err < 0.1 && worst < 0.05 && r.seconds < 60 && r.result.iterations <= 10;
    return {pass, fmt("map RMS %.4f px (< 0.1), worst Zernike deviation %.2f%% (< 5%%),%s, %d iterations, %.1f s "
                      "single-threaded (< 60 s)",
                      err, 100 * worst, coeffs.c_str(), r.result.iterations, r.seconds)};
}

Outcome a2(const Recovery &r) {
    const double err = map_rms(r.result.u, r.sim.truth.pixel_map);
    const auto &h = r.result.history;
    bool strict = h.size() >= 4;
    for (std::size_t k = 1; strict && k < 4; ++k) strict = h[k] < h[k - 1];
    const double ratio = h.size() >= 4 ? h[0] / h[3] : 0;
    return {err < 0.3 && strict && ratio >= 2,
            fmt("map RMS %.4f px (< 0.3), error %.4g -> %.4g -> %.4g -> %.4g, strictly decreasing %s, "
                "factor %.2f over 3 iterations (>= 2)",
                err, h.size() > 0 ? h[0] : 0.0, h.size() > 1 ? h[1] : 0.0, h.size() > 2 ? h[2] : 0.0,
                h.size() > 3 ? h[3] : 0.0, strict ? "yes" : "no", ratio)};
}

Outcome a3() {
    Index violations = 0, pixels = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        SimSpec spec = testing::small_spec(100 + seed);
        spec.poisson = seed % 2 == 0;
        const Simulation sim = simulate_scan(spec);
        const Whitefield w{sim.whitefield};
        const PixelMask m = PixelMask::all_good(spec.shape);
        const Roi roi = Roi::full(spec.shape);
        const PixelTranslations &t = sim.truth.translations;
        // random starting map around the identity
        std::mt19937_64 rng(seed);
        const PixelMap id = PixelMap::identity(spec.shape);
        const PixelMap u0{id.ss + testing::random_image(spec.shape.ss, spec.shape.fs, rng, -1, 1),
                          id.fs + testing::random_image(spec.shape.ss, spec.shape.fs, rng, -1, 1)};
        const ReferenceImage ref = make_reference(sim.scan, w, m, u0, t, roi);
        const ImageD before = pixel_map_error(sim.scan, w, m, ref, u0, t, roi);
        const auto up = update_pixel_map(sim.scan, w, m, ref, u0, t, roi, SearchWindow{2, 2, {}},
                                         UpdateOptions{true, false, 0.0, true});
        const ImageD after = pixel_map_error(sim.scan, w, m, ref, up.u, t, roi);
        violations += (after > before).count();
        pixels += before.size();
    }
    return {violations == 0, fmt("%ld of %ld pixel errors increased over 10 instances", long(violations), long(pixels))};
}

Outcome a4() {
    std::mt19937_64 rng(41);
    // integer nodes
    const ImageD f = testing::random_image(9, 11, rng, -1e3, 1e3);
    const ImageB full = ImageB::Constant(9, 11, true);
    bool exact = true;
    for (Index i = 0; i < 9; ++i)
        for (Index j = 0; j < 11; ++j)
            exact = exact && interp::gather(f, full, double(i), double(j)).value == f(i, j);
    // affine fields
    double affine = 0;
    std::uniform_real_distribution<double> c(-3, 3), x(0, 8), y(0, 10);
    for (int trial = 0; trial < 20; ++trial) {
        const double a = c(rng), b = c(rng), d = c(rng);
        ImageD g(9, 11);
        for (Index i = 0; i < 9; ++i)
            for (Index j = 0; j < 11; ++j) g(i, j) = a + b * double(i) + d * double(j);
        for (int k = 0; k < 200; ++k) {
            const double px = x(rng), py = y(rng);
            affine = std::max(affine, std::abs(interp::gather(g, full, px, py).value - (a + b * px + d * py)));
        }
    }
    // masked constant field
    const ImageD k4 = ImageD::Constant(9, 11, 4.0);
    ImageB holes = full;
    for (Index n = 0; n < 20; ++n) holes(Index(rng() % 9), Index(rng() % 11)) = false;
    bool constant = true;
    for (int k = 0; k < 2000; ++k) {
        const auto s = interp::gather(k4, holes, x(rng), y(rng));
        if (s.valid) constant = constant && s.value == 4.0;
    }
    // scatter + normalize against a dense hat-function evaluation
    double dense = 0;
    std::uniform_real_distribution<double> pos(0, 9), val(-5, 5), wt(0.1, 2);
    struct P { double x, y, v, w; };
    std::vector<P> pts;
    for (int k = 0; k < 300; ++k) pts.push_back({pos(rng), pos(rng), val(rng), wt(rng)});
    interp::WeightedAccumulator<double> acc(10, 10);
    for (const auto &p : pts) interp::scatter_accumulate(acc, p.x, p.y, p.v, p.w);
    const auto [out, valid] = interp::normalize(acc);
    for (Index i = 0; i < 10; ++i)
        for (Index j = 0; j < 10; ++j) {
            double num = 0, den = 0;
            for (const auto &p : pts) {
                const double h = std::max(0.0, 1 - std::abs(p.x - double(i))) * std::max(0.0, 1 - std::abs(p.y - double(j)));
                num += h * p.w * p.v;
                den += h * p.w;
            }
            if (den > 0) dense = std::max(dense, std::abs(out(i, j) - num / den));
            else if (valid(i, j)) dense = 1;
        }
    return {exact && affine < 1e-12 && constant && dense < 1e-10,
            fmt("integer nodes bit-exact %s, affine max error %.2e (< 1e-12), masked constant exact %s, "
                "scatter vs dense oracle %.2e (< 1e-10)",
                exact ? "yes" : "no", affine, constant ? "yes" : "no", dense)};
}

Outcome a5() {
    const Index rows = 32, cols = 28;
    const PixelMap id = PixelMap::identity({rows, cols});
    const PixelMask all = PixelMask::all_good({rows, cols});

    ImageD phi(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j)
            phi(i, j) = 0.01 * double(i * i) - 0.007 * double(j * j) + 0.003 * double(i * j) + 0.2 * std::sin(0.3 * double(j));
    const PixelMap grad{id.ss + derivative(phi, 0), id.fs + derivative(phi, 1)};
    const PixelMap pg = irrotational_projection(grad, all);
    const double fixed = std::sqrt(0.5 * ((pg.ss - grad.ss).square().mean() + (pg.fs - grad.fs).square().mean()));

    ImageD psi = ImageD::Zero(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) {
            const double r2 = std::pow(double(i) - 15.5, 2) + std::pow(double(j) - 13.5, 2);
            if (r2 < 81) psi(i, j) = std::pow(81 - r2, 3) / 1e5;
        }
    const ImageD cs = derivative(psi, 1), cf = -derivative(psi, 0);
    const PixelMap pc = irrotational_projection({id.ss + cs, id.fs + cf}, all);
    const double curl_rel = std::sqrt(((pc.ss - id.ss).square() + (pc.fs - id.fs).square()).mean()) /
                            std::sqrt((cs.square() + cf.square()).mean());

    std::mt19937_64 rng(5);
    const PixelMap u{id.ss + testing::random_image(rows, cols, rng, -1, 1),
                     id.fs + testing::random_image(rows, cols, rng, -1, 1)};
    const PixelMap p1 = irrotational_projection(u, all), p2 = irrotational_projection(p1, all);
    const double idem = std::sqrt(0.5 * ((p2.ss - p1.ss).square().mean() + (p2.fs - p1.fs).square().mean()));
    return {fixed < 1e-8 && curl_rel < 1e-6 && idem < 1e-8,
            fmt("gradient fixed point %.2e (< 1e-8), pure curl residual %.2e relative (< 1e-6), "
                "idempotence %.2e (< 1e-8)",
                fixed, curl_rel, idem)};
}

std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> v;
    for (int k = 0; k < n; ++k) v.push_back(a + (b - a) * k / (n - 1));
    return v;
}

Outcome a6() {
    // Fresnel holograms of a weak phase object: 5e-5 m pixels at M = 501 give 1e-7 m sampling
    SimSpec s;
    s.shape = {128, 128};
    s.z1_ss = s.z1_fs = 2e-3;
    s.z = 1.0;
    s.x_pixel_size = s.y_pixel_size = 5e-5;
    s.hologram = true;
    s.texture_sigma = 0.5;
    s.n_positions = 16;
    s.step = 40;
    s.seed = 3;
    const Simulation holo = simulate_scan(s);
    const Shape2 shape = s.shape;
    const PixelMask m = PixelMask::all_good(shape);
    const Roi roi = Roi::full(shape);
    const ThonFit thon = fit_thon_rings(holo.scan, Whitefield{holo.whitefield}, m, roi,
                                        DefocusGrid{linspace(1e-3, 3e-3, 41), {}});
    const double thon_err = std::abs(thon.z1_ss - 2e-3) / 2e-3;

    SimSpec r = end_to_end_spec(false);
    r.aberrations.clear();
    r.z1_ss = r.z1_fs = 2e-3;
    const Simulation speckle = simulate_scan(r);
    const std::vector<double> grid = linspace(1.5e-3, 2.5e-3, 11);
    const RegistrationFit reg = fit_defocus_registration(speckle.scan, Whitefield{speckle.whitefield}, m, roi,
                                                         DefocusGrid{grid, {}});
    const auto best = std::max_element(reg.contrast.begin(), reg.contrast.end()) - reg.contrast.begin();
    const bool reg_ok = std::abs(grid[static_cast<std::size_t>(best)] - 2e-3) < 1e-12;
    return {thon_err < 0.05 && thon.reliable && reg_ok,
            fmt("Thon z1 %.4g mm vs 2 mm (%.2f%%, < 5%%), score %.2f, sampling %.3g m; registration argmax "
                "%.3g mm on 11 points 1.5-2.5 mm",
                thon.z1_ss * 1e3, 100 * thon_err, thon.score, holo.truth.geometry.du,
                grid[static_cast<std::size_t>(best)] * 1e3)};
}

Outcome a7() {
    double worst = 0;
    for (std::uint64_t seed : {6, 7, 8}) {
        const SimSpec spec = testing::small_spec(seed);
        const Simulation sim = simulate_scan(spec);
        const Whitefield w{sim.whitefield};
        const PixelMask m = PixelMask::all_good(spec.shape);
        const Roi roi = Roi::full(spec.shape);
        const PixelTranslations &truth = sim.truth.translations;
        const PixelMap &u = sim.truth.pixel_map;
        const ReferenceImage ref = make_reference(sim.scan, w, m, u, truth, roi);
        PixelTranslations t = truth;
        std::mt19937_64 rng(seed);
        std::bernoulli_distribution sign;
        for (Index n = 0; n < t.size(); ++n) {
            t.di[n] += sign(rng) ? 0.4 : -0.4;
            t.dj[n] += sign(rng) ? 0.4 : -0.4;
        }
        const PixelTranslations out = update_translations(sim.scan, w, m, ref, u, t, roi, SearchWindow{1, 1, {}});
        worst = std::max({worst, (out.di - truth.di).abs().maxCoeff(), (out.dj - truth.dj).abs().maxCoeff()});
    }
    return {worst < 0.2, fmt("0.4 px perturbations on 27 frames, worst recovered offset %.3f px (< 0.2)", worst)};
}

double correlation(const ImageD &a, const ImageD &b) {
    const ImageD da = a - a.mean(), db = b - b.mean();
    return (da * db).sum() / std::sqrt(da.square().sum() * db.square().sum());
}

Outcome a8(const Recovery &r) {
    const ImageB all = ImageB::Constant(r.spec.shape.ss, r.spec.shape.fs, true);
    const Phase p = recovered_phase(r);
    ImageD d = p.phi - r.sim.truth.phase;
    d -= fit_tilt(d, all);
    const double phase_rms = std::sqrt(d.square().mean());

    // propagation of the recovered aberration, and of a converging beam through its focus
    double power = 0;
    {
        const Phase ab{p.phi, {}, all, true};
        const std::vector<double> zs = linspace(-0.5, 0.5, 11);
        const FocusVolume v = focus_profile(ab, Whitefield{r.sim.whitefield}, r.geom, r.spec.wavelength,
                                            r.spec.x_pixel_size, r.spec.y_pixel_size, zs);
        for (double pw : v.power) power = std::max(power, std::abs(pw - v.input_power) / v.input_power);
    }
    {
        const Shape2 shape{64, 64};
        const Geometry g = make_geometry(1e-3, 1e-3, 1.0, 1e-6, 1e-6);
        const Phase conv = calculate_phase(PixelMap::identity(shape), g, 1e-10, 1e-6, 1e-6, PixelMask::all_good(shape));
        const FocusVolume v = focus_profile(conv, Whitefield{ImageD::Ones(64, 64)}, g, 1e-10, 1e-6, 1e-6,
                                            linspace(-0.3, 0.3, 13));
        for (double pw : v.power) power = std::max(power, std::abs(pw - v.input_power) / v.input_power);
    }

    // transport-of-intensity image of a blurred disk, finite-difference Laplacian
    const Index n = 128;
    const double pixel = 1e-7, mu = 1e4, delta = 1e-6, zbar = 1e-3;
    ImageD T(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
            const double rr = std::hypot(double(i) - 63.5, double(j) - 63.5);
            T(i, j) = 1e-5 * 0.5 * (1 - std::tanh((rr - 30) / 3));
        }
    const ImageD A = (-mu * T).exp();
    ImageD lap(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
            auto at = [&](Index a, Index b) { return A(std::clamp<Index>(a, 0, n - 1), std::clamp<Index>(b, 0, n - 1)); };
            lap(i, j) = (at(i - 1, j) + at(i + 1, j) + at(i, j - 1) + at(i, j + 1) - 4 * A(i, j)) / (pixel * pixel);
        }
    ReferenceImage ref;
    ref.i_ref = A - (zbar * delta / mu) * lap;
    ref.wsum = ImageD::Ones(n, n);
    ref.du = ref.dv = pixel;
    ThicknessParams tp;
    tp.delta = delta;
    tp.mu = mu;
    tp.zbar = zbar;
    const Thickness th = calculate_sample_thickness(ref, tp);
    const double corr = correlation(th.t, T);
    return {phase_rms < 1e-2 && power < 1e-6 && corr > 0.95,
            fmt("phase RMS error %.2e rad after tilt removal (< 1e-2), worst slice power deviation %.2e (< 1e-6), "
                "thickness correlation %.4f (> 0.95)",
                phase_rms, power, corr)};
}

Outcome a9() {
    auto run = [](bool poisson, double counts) {
        SimSpec spec = end_to_end_spec(poisson);
        spec.peak_counts = counts;
        const Simulation sim = simulate_scan(spec);
        const PixelMask m = PixelMask::all_good(spec.shape);
        return split_half_recon(sim.scan, Whitefield{sim.whitefield}, m, sim.truth.reference, sim.truth.pixel_map,
                                sim.truth.translations, Roi::full(spec.shape), SearchWindow{2, 2, {}}, 42);
    };
    const SplitHalf clean = run(false, 1000), mid = run(true, 1000), low = run(true, 100);
    const SplitHalf again = run(true, 100);
    const bool same = (low.u_a.ss == again.u_a.ss).all() && (low.u_a.fs == again.u_a.fs).all() &&
                      (low.u_b.ss == again.u_b.ss).all() && (low.u_b.fs == again.u_b.fs).all() &&
                      low.hist_ss == again.hist_ss && low.hist_fs == again.hist_fs && low.sigma == again.sigma;
    return {clean.sigma < mid.sigma && mid.sigma < low.sigma && same,
            fmt("sigma noiseless %.4f < 1000 counts %.4f < 100 counts %.4f px; repeated seed bitwise identical %s",
                clean.sigma, mid.sigma, low.sigma, same ? "yes" : "no")};
}

int shell(const std::string &cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Every dataset below group, keyed by path.
void collect(const cxi::File &f, const std::string &group, std::vector<std::pair<std::string, cxi::NDArray>> &out) {
    for (const auto &name : f.list(group)) {
        const std::string path = group + "/" + name;
        if (!f.list(path).empty()) collect(f, path, out);
        else out.emplace_back(path, f.read(path));
    }
}

Outcome a10() {
    testing::TempDir dir;
    const std::string st = "\"" + testing::st_binary() + "\"";
    const std::string a = dir.file("a.cxi"), b = dir.file("b.cxi");
    if (shell(st + " simulate " + a + " --seed 5 --threads 1 > /dev/null") != 0)
        return {false, "st simulate failed"};
    std::filesystem::copy_file(a, b);
    for (const auto &p : {a, b})
        if (shell(st + " run " + p + " --seed 5 --threads 1 > /dev/null") != 0) return {false, "st run failed"};
    std::vector<std::pair<std::string, cxi::NDArray>> da, db;
    {
        const cxi::File fa(a, cxi::File::Mode::ReadOnly);
        collect(fa, "/speckle_tracking", da);
    }
    {
        const cxi::File fb(b, cxi::File::Mode::ReadOnly);
        collect(fb, "/speckle_tracking", db);
    }
    bool same = da.size() == db.size() && !da.empty();
    std::string first_diff;
    for (std::size_t k = 0; same && k < da.size(); ++k) {
        same = da[k].first == db[k].first && da[k].second.shape == db[k].second.shape &&
               da[k].second.values.size() == db[k].second.values.size();
        for (std::size_t v = 0; same && v < da[k].second.values.size(); ++v) {
            const double x = da[k].second.values[v], y = db[k].second.values[v];
            same = std::memcmp(&x, &y, sizeof x) == 0;
        }
        if (!same) first_diff = da[k].first;
    }
    return {same, fmt("%zu datasets under /speckle_tracking compared bitwise after two serial runs%s%s", da.size(),
                      same ? ", identical" : ", first difference at ", first_diff.c_str())};
}

}  // namespace

int main() {
    set_num_threads(1);
    int failed = 0;
    auto report = [&](const char *id, const char *title, const std::function<Outcome()> &fn) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception &e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::printf("%s %s  %s: %s\n", id, o.pass ? "PASS" : "FAIL", title, o.detail.c_str());
        std::fflush(stdout);
    };

    std::optional<Recovery> clean;
    report("A1", "end-to-end recovery", [&] {
        clean = recover(false);
        return a1(*clean);
    });
    report("A2", "noise robustness", [&] { return a2(recover(true)); });
    report("A3", "per-pixel monotonicity", a3);
    report("A4", "interpolation", a4);
    report("A5", "irrotational projection", a5);
    report("A6", "defocus estimators", a6);
    report("A7", "translation refinement", a7);
    report("A8", "phase pipeline", [&] {
        if (!clean) clean = recover(false);
        return a8(*clean);
    });
    report("A9", "split-half uncertainty", a9);
    report("A10", "reproducibility", a10);
    std::printf("A11 SKIP  public dataset ingestion: optional network check, not run (no downloads in this "
                "environment)\n");
    std::printf("%s: %d of 10 required criteria failed\n", failed ? "FAILED" : "PASSED", failed);
    return failed ? 1 : 0;
}
