#include "support.hpp"

#include "pxst/commands.hpp"
#include "pxst/config.hpp"
#include "pxst/cxi.hpp"
#include "pxst/errors.hpp"
#include "pxst/fixture.hpp"

#include <doctest.h>
#include <hdf5.h>

#include <filesystem>
#include <fstream>
#include <variant>

using namespace pxst;
namespace fs = std::filesystem;

namespace {

void require_same(const ScanData &a, const ScanData &b) {
    REQUIRE(a.n_frames() == b.n_frames());
    for (Index k = 0; k < a.n_frames(); ++k) CHECK((a.frames[k] == b.frames[k]).all());
    CHECK(a.wavelength == b.wavelength);
    CHECK(a.distance == b.distance);
    CHECK(a.x_pixel_size == b.x_pixel_size);
    CHECK(a.y_pixel_size == b.y_pixel_size);
    CHECK((a.translations.array() == b.translations.array()).all());
    REQUIRE(a.basis_vectors.size() == b.basis_vectors.size());
    for (std::size_t k = 0; k < a.basis_vectors.size(); ++k)
        CHECK((a.basis_vectors[k].array() == b.basis_vectors[k].array()).all());
    CHECK(a.good_frames == b.good_frames);
}

// Creates a chunked float32 stack that is never written (HDF5 serves the
// fill value), so a detector-sized file costs almost nothing on disk.
void create_lazy_stack(const std::string &path, hsize_t n, hsize_t ss, hsize_t fs) {
    hid_t file = H5Fcreate(path.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, H5P_DEFAULT);
    REQUIRE(file >= 0);
    hid_t lcpl = H5Pcreate(H5P_LINK_CREATE);
    H5Pset_create_intermediate_group(lcpl, 1);
    const hsize_t dims[3] = {n, ss, fs};
    const hsize_t chunk[3] = {1, 64, 64};
    hid_t space = H5Screate_simple(3, dims, nullptr);
    hid_t dcpl = H5Pcreate(H5P_DATASET_CREATE);
    H5Pset_chunk(dcpl, 3, chunk);
    const float fill = 7.0f;
    H5Pset_fill_value(dcpl, H5T_NATIVE_FLOAT, &fill);
    hid_t ds = H5Dcreate2(file, "/entry_1/data_1/data", H5T_IEEE_F32LE, space, lcpl, dcpl, H5P_DEFAULT);
    REQUIRE(ds >= 0);
    H5Dclose(ds);
    H5Pclose(dcpl);
    H5Sclose(space);
    H5Pclose(lcpl);
    H5Fclose(file);
}

void write_metadata(cxi::File &f, Index n, bool with_translation = true) {
    cxi::CxiPaths p;
    if (with_translation) f.write(p.translation, {{n, 3}, std::vector<double>(n * 3, 0.0)});
    f.write(p.basis_vectors, {{2, 3}, {0, -75e-6, 0, 75e-6, 0, 0}});
    f.write(p.distance, cxi::NDArray::scalar(2.3));
    f.write(p.x_pixel_size, cxi::NDArray::scalar(75e-6));
    f.write(p.y_pixel_size, cxi::NDArray::scalar(75e-6));
}

}  // namespace

TEST_SUITE("cxi_io") {

TEST_CASE("detector-sized file loads frame by frame") {
    testing::TempDir dir;
    const std::string path = dir.file("fig4.cxi");
    create_lazy_stack(path, 121, 516, 1556);
    {
        cxi::File f(path, cxi::File::Mode::ReadWrite);
        write_metadata(f, 121);
        f.write(cxi::CxiPaths{}.wavelength, cxi::NDArray::scalar(7.29e-11));
    }
    cxi::File f(path, cxi::File::Mode::ReadOnly);
    CHECK(f.shape("/entry_1/data_1/data") == std::vector<Index>{121, 516, 1556});
    const ImageD last = f.read_frame("/entry_1/data_1/data", 120);
    CHECK(last.rows() == 516);
    CHECK(last.cols() == 1556);
    CHECK((last == 7.0).all());

    const Roi roi{100, 132, 700, 764};
    const ScanData s = cxi::load_scan(path, {}, roi);
    CHECK(s.n_frames() == 121);
    CHECK(s.frame_shape() == Shape2{32, 64});
    CHECK(validate(s).empty());
    CHECK(s.good_frames.size() == 121);
}

TEST_CASE("missing translation dataset") {
    testing::TempDir dir;
    const std::string path = dir.file("no_t.cxi");
    {
        cxi::File f(path, cxi::File::Mode::Create);
        f.write("/entry_1/data_1/data", cxi::NDArray::stack(testing::random_scan(2, 3, 3, 1).frames));
        write_metadata(f, 2, false);
        f.write(cxi::CxiPaths{}.wavelength, cxi::NDArray::scalar(1e-10));
    }
    try {
        cxi::load_scan(path);
        FAIL("expected MissingDataset");
    } catch (const MissingDataset &e) {
        CHECK(e.path() == "/entry_1/sample_1/geometry/translation");
    }
}

TEST_CASE("wavelength from photon energy") {
    constexpr double h = 6.62607015e-34, c = 299792458.0, eV = 1.602176634e-19;
    const double expected = h * c / (8000 * eV);
    CHECK(expected == doctest::Approx(1.5498e-10).epsilon(1e-4));

    for (double stored : {8000 * eV, 8000.0}) {
        testing::TempDir dir;
        const std::string path = dir.file("energy.cxi");
        {
            cxi::File f(path, cxi::File::Mode::Create);
            f.write("/entry_1/data_1/data", cxi::NDArray::stack(testing::random_scan(1, 2, 2, 1).frames));
            write_metadata(f, 1);
            f.write(cxi::CxiPaths{}.energy, cxi::NDArray::scalar(stored));
        }
        const ScanData s = cxi::load_scan(path);
        CHECK(s.wavelength == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("scan round trip and determinism") {
    testing::TempDir dir;
    ScanData s = testing::random_scan(5, 6, 7, 9);
    s.good_frames[3] = false;
    cxi::save_scan(dir.file("s.cxi"), s);
    const ScanData a = cxi::load_scan(dir.file("s.cxi"));
    const ScanData b = cxi::load_scan(dir.file("s.cxi"));
    require_same(s, a);
    require_same(a, b);
}

TEST_CASE("implausible distance is a warning") {
    testing::TempDir dir;
    ScanData s = testing::random_scan(1, 2, 2, 1);
    s.distance = 500;
    cxi::save_scan(dir.file("far.cxi"), s);
    std::vector<std::string> warnings;
    const ScanData a = cxi::load_scan(dir.file("far.cxi"), {}, {}, &warnings);
    CHECK(a.distance == 500);
    CHECK(warnings.size() == 1);
}

TEST_CASE("write_result creates, overwrites and refuses read-only files") {
    testing::TempDir dir;
    const std::string path = dir.file("r.cxi");
    cxi::save_scan(path, testing::random_scan(2, 4, 5, 1));

    std::mt19937_64 rng(3);
    const ImageD e = testing::random_image(4, 5, rng);
    cxi::write_result(path, "/speckle_tracking", "error_pixel", cxi::NDArray::image(e));
    {
        cxi::File f(path, cxi::File::Mode::ReadOnly);
        CHECK(f.shape("/speckle_tracking/error_pixel") == std::vector<Index>{4, 5});
        CHECK((f.read("/speckle_tracking/error_pixel").to_image() == e).all());
    }

    PixelMap u = PixelMap::identity({4, 5});
    cxi::write_result(path, "/speckle_tracking", "pixel_map", cxi::NDArray::from_pixel_map(u));
    u.ss += 0.25;
    u.fs -= 1.5;
    cxi::write_result(path, "/speckle_tracking", "pixel_map", cxi::NDArray::from_pixel_map(u));
    {
        cxi::File f(path, cxi::File::Mode::ReadOnly);
        const PixelMap back = f.read("/speckle_tracking/pixel_map").to_pixel_map();
        CHECK((back.ss == u.ss).all());
        CHECK((back.fs == u.fs).all());
    }

    fs::permissions(path, fs::perms::owner_read | fs::perms::group_read | fs::perms::others_read);
    CHECK_THROWS_AS(cxi::write_result(path, "/speckle_tracking", "x", cxi::NDArray::scalar(1)),
                    ReadOnlyFile);
}

TEST_CASE("mask and integer datasets round trip bitwise") {
    testing::TempDir dir;
    const std::string path = dir.file("m.cxi");
    ImageB m = ImageB::Constant(3, 4, true);
    m(1, 2) = false;
    cxi::File f(path, cxi::File::Mode::Create);
    f.write("/speckle_tracking/mask", cxi::NDArray::mask(m));
    f.write("/speckle_tracking/roi", {{4}, {1, 3, 0, 4}, cxi::DType::Int64});
    CHECK((f.read("/speckle_tracking/mask").to_mask() == m).all());
    CHECK(f.read("/speckle_tracking/roi").values == std::vector<double>{1, 3, 0, 4});
    CHECK_THROWS_AS(f.read("/speckle_tracking/nothing"), MissingDataset);
    f.remove("/speckle_tracking/roi");
    CHECK_FALSE(f.exists("/speckle_tracking/roi"));
}

TEST_CASE("missing file") {
    CHECK_THROWS_AS(cxi::load_scan("/nonexistent/scan.cxi"), DataError);
}

TEST_CASE("relative dataset paths are rejected") {
    cxi::CxiPaths p;
    p.mask = "speckle_tracking/mask";
    CHECK(p.invalid() == std::vector<std::string>{"mask"});
}

}

TEST_SUITE("fixture") {

TEST_CASE("save then load is field-for-field equal") {
    testing::TempDir dir;
    ScanData s = testing::random_scan(4, 5, 3, 11);
    s.good_frames[0] = false;
    s.wavelength = 1.0 / 3.0 * 1e-10;
    fixture::save_fixture(s, dir.file("fx"));
    require_same(s, fixture::load_fixture(dir.file("fx")));
}

TEST_CASE("single frame fixture") {
    testing::TempDir dir;
    const ScanData s = testing::random_scan(1, 2, 2, 1);
    fixture::save_fixture(s, dir.file("one"));
    const ScanData back = fixture::load_fixture(dir.file("one"));
    CHECK(back.n_frames() == 1);
    CHECK(validate(back).empty());
}

TEST_CASE("metadata missing a pixel size") {
    testing::TempDir dir;
    fixture::save_fixture(testing::random_scan(2, 2, 2, 1), dir.file("fx"));
    const fs::path meta = fs::path(dir.file("fx")) / "meta";
    std::ifstream in(meta);
    std::string text, line;
    while (std::getline(in, line))
        if (line.rfind("x_pixel_size", 0) != 0) text += line + "\n";
    in.close();
    std::ofstream(meta) << text;
    CHECK_THROWS_WITH_AS(fixture::load_fixture(dir.file("fx")),
                         doctest::Contains("x_pixel_size"), FormatError);
}

TEST_CASE("truncated payload") {
    testing::TempDir dir;
    fixture::save_fixture(testing::random_scan(2, 4, 4, 1), dir.file("fx"));
    fs::path frames;
    for (const auto &e : fs::directory_iterator(dir.file("fx")))
        if (e.path().filename().string().rfind("frames", 0) == 0) frames = e.path();
    REQUIRE(!frames.empty());
    fs::resize_file(frames, fs::file_size(frames) - 8);
    CHECK_THROWS_WITH_AS(fixture::load_fixture(dir.file("fx")), doctest::Contains("truncated"),
                         FormatError);
}

}

TEST_SUITE("config") {

TEST_CASE("section number") {
    const auto c = config::parse_config("[update_pixel_map]\nsigma = 5\n");
    const auto *v = c.find("update_pixel_map", "sigma");
    REQUIRE(v);
    REQUIRE(std::holds_alternative<double>(*v));
    CHECK(std::get<double>(*v) == 5.0);
    CHECK(c.number("update_pixel_map", "sigma", 0) == 5.0);
}

TEST_CASE("booleans") {
    const auto c = config::parse_config("integrate = True\n[run]\nintegrate = false\n");
    REQUIRE(std::holds_alternative<bool>(*c.find("", "integrate")));
    CHECK(std::get<bool>(*c.find("", "integrate")));
    CHECK_FALSE(c.boolean("run", "integrate", true));
}

TEST_CASE("lists and comments") {
    const auto c = config::parse_config("# comment\n[run]\nsigma = 5, 2.2, 1 \n\n");
    CHECK(c.numbers("run", "sigma", {}) == std::vector<double>{5, 2.2, 1});
}

TEST_CASE("unparseable number names the key") {
    CHECK_THROWS_WITH_AS(config::parse_config("[update_pixel_map]\nsigma = abc\n", &commands::schema()),
                         doctest::Contains("sigma"), config::ParseError);
    const auto loose = config::parse_config("[update_pixel_map]\nsigma = abc\n");
    CHECK_THROWS_WITH_AS(loose.number("update_pixel_map", "sigma", 0), doctest::Contains("sigma"),
                         config::ParseError);
}

TEST_CASE("duplicate keys and malformed lines") {
    CHECK_THROWS_AS(config::parse_config("[a]\nx = 1\nx = 2\n"), config::ParseError);
    CHECK_NOTHROW(config::parse_config("[a]\nx = 1\n[b]\nx = 2\n"));
    CHECK_THROWS_AS(config::parse_config("[a\n"), config::ParseError);
    CHECK_THROWS_AS(config::parse_config("[a]\njust words\n"), config::ParseError);
}

TEST_CASE("unknown keys are reported") {
    const auto c = config::parse_config("[update_pixel_map]\nsigma = 1\nsigmaa = 2\n[nonsense]\nk = 1\n");
    const auto unknown = c.unknown_keys(commands::schema());
    CHECK(std::find(unknown.begin(), unknown.end(), "update_pixel_map.sigmaa") != unknown.end());
    CHECK(std::find(unknown.begin(), unknown.end(), "nonsense.k") != unknown.end());
    CHECK(std::find(unknown.begin(), unknown.end(), "update_pixel_map.sigma") == unknown.end());
}

}
