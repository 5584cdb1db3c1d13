#include "support.hpp"

#include "pxst/cxi.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <string>

using namespace pxst;

namespace {

struct Outcome {
    int code = -1;
    std::string output;  // stdout and stderr
};

Outcome st(const std::string &args, const std::string &env = "") {
    const std::string cmd = env + " \"" + testing::st_binary() + "\" " + args + " 2>&1";
    Outcome o;
    FILE *pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) o.output.append(buf, n);
    const int status = pclose(pipe);
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return o;
}

void write_text(const std::string &path, const std::string &text) {
    std::ofstream f(path);
    f << text;
}

const char *kSmall = "[simulate]\n"
                     "shape = 48,40\n"
                     "n_positions = 9\n"
                     "step = 10\n"
                     "jitter = 0.5\n"
                     "texture_sigma = 3\n"
                     "noll = 4,7\n"
                     "coefficients = 1,0.5\n"
                     "peak_displacement = 1.5\n"
                     "[run]\n"
                     "max_iters = 3\n"
                     "[update_pixel_map]\n"
                     "window = 2,2\n";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("simulate then run") {
    testing::TempDir dir;
    const std::string cfg = dir.file("recon.ini"), cxi = dir.file("scan.cxi");
    write_text(cfg, kSmall);

    const Outcome sim = st("simulate " + cxi + " --config " + cfg + " --seed 3 --threads 1");
    INFO(sim.output);
    REQUIRE(sim.code == 0);
    CHECK(sim.output.find("simulate: wrote /entry_1") != std::string::npos);
    const ScanData scan = cxi::load_scan(cxi);
    CHECK(scan.n_frames() == 9);
    CHECK(scan.frame_shape() == Shape2{48, 40});

    const Outcome run = st("run " + cxi + " --config " + cfg + " --threads 1");
    INFO(run.output);
    REQUIRE(run.code == 0);
    CHECK(run.output.find("iteration 1: total error") != std::string::npos);
    CHECK(run.output.find("iteration 3: total error") != std::string::npos);
    CHECK(run.output.find("run: total error") != std::string::npos);
    CHECK(run.output.find("/speckle_tracking/pixel_map") != std::string::npos);

    {
        const cxi::File f(cxi, cxi::File::Mode::ReadOnly);
        CHECK(f.exists("/speckle_tracking/pixel_map"));
        CHECK(f.exists("/speckle_tracking/reference_image"));
        const auto hist = f.read("/speckle_tracking/error_history").values;
        REQUIRE(hist.size() >= 2);
        CHECK(hist.back() < hist.front());
    }

    // single steps on the same file, including the environment fallback
    const Outcome upm = st("update_pixel_map " + cxi, "ST_CONFIG=\"" + cfg + "\"");
    INFO(upm.output);
    CHECK(upm.code == 0);
    CHECK(upm.output.find("update_pixel_map: ") != std::string::npos);
    const Outcome zern = st("zernike " + cxi + " --config " + cfg);
    INFO(zern.output);
    CHECK(zern.code == 0);
}

TEST_CASE("help lists the parameters") {
    const Outcome o = st("update_pixel_map --help");
    CHECK(o.code == 0);
    for (const char *key : {"sigma", "integrate", "quadratic_refinement", "window", "--threads", "--roi"})
        CHECK_MESSAGE(o.output.find(key) != std::string::npos, key);
    const Outcome top = st("--help");
    CHECK(top.code == 0);
    for (const char *cmd : {"simulate", "make_mask", "fit_thon_rings", "split_half_recon", "serve"})
        CHECK_MESSAGE(top.output.find(cmd) != std::string::npos, cmd);
}

TEST_CASE("exit codes") {
    testing::TempDir dir;
    SUBCASE("missing file") {
        const Outcome o = st("run " + dir.file("missing.cxi"));
        CHECK(o.code == 2);
        CHECK(o.output.find("file not found") != std::string::npos);
    }
    SUBCASE("usage") {
        CHECK(st("no_such_command x.cxi").code == 1);
        CHECK(st("run").code == 1);
        CHECK(st("run x.cxi --threads 0").code == 1);
    }
    SUBCASE("bad configuration") {
        write_text(dir.file("bad.ini"), "[update_pixel_map]\nsigma = abc\n");
        const Outcome o = st("update_pixel_map " + dir.file("x.cxi") + " --config " + dir.file("bad.ini"));
        CHECK(o.code == 1);
        CHECK(o.output.find("sigma") != std::string::npos);
    }
    SUBCASE("bad roi") {
        write_text(dir.file("s.ini"), kSmall);
        REQUIRE(st("simulate " + dir.file("s.cxi") + " --config " + dir.file("s.ini")).code == 0);
        CHECK(st("make_reference " + dir.file("s.cxi") + " --roi 1,2,3").code == 1);
    }
    SUBCASE("numerical failure") {
        // default geometry: the ideal defocus phase is far too steep to propagate
        write_text(dir.file("s.ini"), kSmall);
        REQUIRE(st("simulate " + dir.file("s.cxi") + " --config " + dir.file("s.ini")).code == 0);
        const Outcome o = st("focus_profile " + dir.file("s.cxi"));
        CHECK(o.code == 3);
        CHECK(o.output.find("exceeds pi") != std::string::npos);
    }
}

}  // TEST_SUITE
