#include "pxst/commands.hpp"

#include "pxst/analysis.hpp"
#include "pxst/cxi.hpp"
#include "pxst/errors.hpp"
#include "pxst/geometry.hpp"
#include "pxst/preprocess.hpp"
#include "pxst/recon.hpp"
#include "pxst/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <sstream>

namespace pxst::commands {

namespace {

using config::ParamSpec;
using config::ParamType;

const ParamSpec kZ1ss{"z1_ss", ParamType::Number, "0",
                      "focus to sample distance along ss, m (0 = stored value)"};
const ParamSpec kZ1fs{"z1_fs", ParamType::Number, "0",
                      "focus to sample distance along fs, m (0 = same as z1_ss)"};

struct CommandInfo {
    std::string description;
    std::vector<ParamSpec> params;
};

const std::map<std::string, CommandInfo> &table() {
    static const std::map<std::string, CommandInfo> t = [] {
        std::map<std::string, CommandInfo> m;
        const std::vector<ParamSpec> grid = {
            {"z1_min", ParamType::Number, "1e-4", "smallest candidate focus to sample distance, m"},
            {"z1_max", ParamType::Number, "1e-2", "largest candidate, m"},
            {"steps", ParamType::Number, "41", "number of candidates per axis"},
            {"astigmatic", ParamType::Bool, "False", "search z1_ss and z1_fs independently"},
        };
        m["simulate"] = {
            "Write a simulated scan (and its ground truth) to a new CXI file.",
            {{"shape", ParamType::NumberList, "128,128", "detector shape ss,fs"},
             {"n_positions", ParamType::Number, "25", "number of frames"},
             {"positions", ParamType::String, "raster", "raster or spiral"},
             {"step", ParamType::Number, "24", "position spacing, reference px"},
             {"jitter", ParamType::Number, "1", "raster jitter as a fraction of step"},
             {"z1_ss", ParamType::Number, "1e-3", "focus to sample distance along ss, m"},
             {"z1_fs", ParamType::Number, "0", "along fs, m (0 = same as z1_ss)"},
             {"distance", ParamType::Number, "1", "sample to detector distance, m"},
             {"wavelength", ParamType::Number, "1e-10", "m"},
             {"pixel_size", ParamType::Number, "1e-5", "detector pixel pitch, m"},
             {"noll", ParamType::NumberList, "4,6,7,8", "Noll indices of the aberrations"},
             {"coefficients", ParamType::NumberList, "1,0.5,0.5,-0.5", "aberration amplitudes, rad"},
             {"peak_displacement", ParamType::Number, "3",
              "rescale the aberrations to this peak displacement, px (0 = use as given)"},
             {"counts", ParamType::Number, "1000", "peak whitefield counts"},
             {"whitefield", ParamType::String, "flat", "flat or gaussian"},
             {"poisson", ParamType::Bool, "False", "add Poisson noise"},
             {"texture", ParamType::String, "blobs", "blobs or spokes"},
             {"texture_sigma", ParamType::Number, "4", "blob size, reference px"},
             {"texture_contrast", ParamType::Number, "0.3", "relative modulation"},
             {"hologram", ParamType::Bool, "False", "render the texture as a phase object's hologram"}}};
        m["make_mask"] = {"Flag detector pixels that misbehave throughout the scan.",
                          {{"threshold", ParamType::Number, "10", "outlier threshold in local MADs"},
                           {"mad_floor", ParamType::Number, "1", "added to the MAD, counts"}}};
        m["make_whitefield"] = {"Per-pixel median of the good frames.",
                                {{"use_mask", ParamType::Bool, "True", "zero the masked pixels"}}};
        m["guess_roi"] = {"Rectangle holding most of the whitefield signal.",
                          {{"fraction", ParamType::Number, "0.95", "signal fraction to keep"}}};
        m["generate_pixel_map"] = {"Initial pixel map and translations in reference pixels.", {kZ1ss, kZ1fs}};
        m["fit_thon_rings"] = {"Estimate the defocus from the Fresnel fringes of the flat-field-corrected frames.",
                               grid};
        m["fit_defocus_registration"] = {"Estimate the defocus by maximising the reference image contrast.",
                                         grid};
        m["make_reference"] = {"Merge the frames into the reference image.", {kZ1ss, kZ1fs}};
        m["update_pixel_map"] = {
            "One pixel map update against the current reference image.",
            {kZ1ss, kZ1fs,
             {"window", ParamType::NumberList, "2,2", "search half-width ss,fs, px"},
             {"subpixel_grid", ParamType::Number, "0", "search step, px (0 = integer steps)"},
             {"quadratic_refinement", ParamType::Bool, "True", "refine the best integer shift"},
             {"sigma", ParamType::Number, "0", "Gaussian smoothing of the map, px"},
             {"integrate", ParamType::Bool, "True", "project onto gradient fields"}}};
        m["update_translations"] = {
            "One sample-translation update against the current reference image.",
            {kZ1ss, kZ1fs, {"window", ParamType::NumberList, "1,1", "search half-width ss,fs, px"}}};
        m["calc_error"] = {"Per-frame, per-pixel and reference-plane error maps.", {kZ1ss, kZ1fs}};
        m["run"] = {
            "Main loop: reference, pixel map, translations and error until converged.",
            {kZ1ss, kZ1fs,
             {"max_iters", ParamType::Number, "10", "iteration limit"},
             {"tol", ParamType::Number, "1e-3", "stop when the relative error drop is below this"},
             {"sigma", ParamType::NumberList, "5,2.2360679774997898,1",
              "smoothing per iteration, px (the last value repeats)"},
             {"quadratic_refinement", ParamType::Bool, "True", "sub-pixel refinement"},
             {"integrate", ParamType::Bool, "True", "project onto gradient fields"},
             {"first_window", ParamType::NumberList, "4,4", "search half-width in iteration 1"},
             {"window", ParamType::NumberList, "2,2", "search half-width afterwards"},
             {"translation_window", ParamType::NumberList, "1,1", "translation search half-width"},
             {"update_translations_from", ParamType::Number, "2", "first iteration refining translations (0 = never)"},
             {"refine_magnification", ParamType::Bool, "True", "line search on the uniform magnification"}}};
        m["calculate_phase"] = {"Integrate the pixel map into the wavefront phase.", {kZ1ss, kZ1fs}};
        m["zernike"] = {"Fit Zernike polynomials to the phase.",
                        {kZ1ss, kZ1fs, {"max_noll", ParamType::Number, "15", "highest Noll index"}}};
        m["focus_profile"] = {
            "Propagate the recovered wavefield through the focus.",
            {kZ1ss, kZ1fs,
             {"z_min", ParamType::Number, "0", "first plane relative to focus, m (0 and z_max 0 = +/- z1)"},
             {"z_max", ParamType::Number, "0", "last plane, m"},
             {"planes", ParamType::Number, "21", "number of planes"},
             {"padding", ParamType::Number, "2", "zero-padding factor"}}};
        m["calculate_sample_thickness"] = {
            "Single-material thickness from the reference image.",
            {kZ1ss, kZ1fs,
             {"delta", ParamType::Number, "0", "refractive index decrement"},
             {"mu", ParamType::Number, "0", "linear attenuation coefficient, 1/m"},
             {"flat", ParamType::Number, "0", "flat-field level (0 = mean of the border)"}}};
        m["split_half_recon"] = {
            "Pixel-map uncertainty from two independent halves of the data.",
            {kZ1ss, kZ1fs,
             {"window", ParamType::NumberList, "2,2", "search half-width ss,fs, px"},
             {"bins", ParamType::Number, "51", "histogram bins"}}};
        m["serve"] = {"Serve the inspector HTTP API for one CXI file.",
                      {{"port", ParamType::Number, "8008", "TCP port"},
                       {"static_dir", ParamType::String, "", "directory with the built UI"}}};
        return m;
    }();
    return t;
}

const CommandInfo &info(const std::string &command) {
    auto it = table().find(command);
    if (it == table().end()) throw InvalidArgument("unknown command: " + command);
    return it->second;
}

// Parameter lookup with schema defaults.
class Params {
public:
    Params(const Context &ctx, const std::string &section) : cfg_(ctx.config), section_(section) {
        for (const auto &p : info(section).params) defaults_[p.name] = p;
    }

    double number(const std::string &key) const {
        return cfg_.number(section_, key, std::get<double>(fallback(key)));
    }
    Index integer(const std::string &key) const {
        const double v = number(key);
        if (v != std::floor(v)) throw InvalidArgument("parameter '" + key + "' must be an integer");
        return static_cast<Index>(v);
    }
    bool boolean(const std::string &key) const {
        return cfg_.boolean(section_, key, std::get<bool>(fallback(key)));
    }
    std::string string(const std::string &key) const {
        return cfg_.string(section_, key, std::get<std::string>(fallback(key)));
    }
    std::vector<double> numbers(const std::string &key) const {
        return cfg_.numbers(section_, key, std::get<std::vector<double>>(fallback(key)));
    }
    std::pair<int, int> pair(const std::string &key) const {
        const auto v = numbers(key);
        if (v.size() != 1 && v.size() != 2) throw InvalidArgument("parameter '" + key + "' takes one or two values");
        const double a = v[0], b = v.size() == 2 ? v[1] : v[0];
        if (a < 0 || b < 0 || a != std::floor(a) || b != std::floor(b))
            throw InvalidArgument("parameter '" + key + "' must be non-negative integers");
        return {static_cast<int>(a), static_cast<int>(b)};
    }

private:
    config::Value fallback(const std::string &key) const {
        auto it = defaults_.find(key);
        if (it == defaults_.end()) throw InvalidArgument("undeclared parameter " + key);
        return config::parse_value(key, it->second.default_value, it->second.type);
    }

    const config::RunConfig &cfg_;
    std::string section_;
    std::map<std::string, ParamSpec> defaults_;
};

class ReadGuard {
public:
    explicit ReadGuard(std::shared_mutex *m) : m_(m) {
        if (m_) m_->lock_shared();
    }
    ~ReadGuard() {
        if (m_) m_->unlock_shared();
    }
    ReadGuard(const ReadGuard &) = delete;
    ReadGuard &operator=(const ReadGuard &) = delete;

private:
    std::shared_mutex *m_;
};

// Inputs shared by most steps.
struct State {
    ScanData scan;
    PixelMask mask;
    Whitefield w;
    Roi roi;
    std::map<std::string, cxi::NDArray> stored;  // outputs of earlier steps that exist

    const cxi::NDArray *find(const std::string &name) const {
        auto it = stored.find(name);
        return it == stored.end() ? nullptr : &it->second;
    }
};

void note(const Context &ctx, Result &res, const std::string &msg) {
    res.notes.push_back(msg);
    if (ctx.log) ctx.log(msg);
}

State load_state(const Context &ctx, Result &res, const std::vector<std::string> &wanted) {
    State s;
    ReadGuard guard(ctx.file_lock);
    const cxi::CxiPaths paths = cxi::CxiPaths{}.with_output_group(ctx.output_group);
    std::vector<std::string> warnings;
    s.scan = cxi::load_scan(ctx.cxi_path, paths, {}, &warnings);
    for (const auto &w : warnings) note(ctx, res, w);
    const Shape2 shape = s.scan.frame_shape();

    cxi::File f(ctx.cxi_path, cxi::File::Mode::ReadOnly);
    for (const auto &name : wanted) {
        const std::string p = output_path(ctx.output_group, name);
        if (f.exists(p)) s.stored.emplace(name, f.read(p));
    }

    s.mask = PixelMask::all_good(shape);
    if (f.exists(paths.mask)) {
        s.mask.mask = f.read(paths.mask).to_mask();
        if (shape_of(s.mask.mask) != shape) throw ShapeMismatch("mask", "frame shape", "other");
    }
    if (f.exists(paths.whitefield)) {
        s.w.w = f.read(paths.whitefield).to_image();
        if (shape_of(s.w.w) != shape) throw ShapeMismatch("whitefield", "frame shape", "other");
    } else {
        s.w = make_whitefield(s.scan, s.mask);
        note(ctx, res, "no stored whitefield; using the median of the good frames");
    }

    const std::string roi_path = output_path(ctx.output_group, "roi");
    if (ctx.roi) {
        s.roi = *ctx.roi;
    } else if (f.exists(roi_path)) {
        const auto v = f.read(roi_path).values;
        if (v.size() != 4) throw ShapeMismatch("roi", "4 values", std::to_string(v.size()) + " values");
        s.roi = {static_cast<Index>(v[0]), static_cast<Index>(v[1]), static_cast<Index>(v[2]),
                 static_cast<Index>(v[3])};
    } else {
        s.roi = Roi::full(shape);
    }
    if (!s.roi.valid_for(shape)) throw InvalidArgument("roi does not fit the detector");
    return s;
}

double scalar_of(const cxi::NDArray &a, const std::string &name) {
    if (a.values.size() != 1) throw ShapeMismatch(name, "scalar", std::to_string(a.values.size()) + " values");
    return a.values.front();
}

Geometry geometry(const Context &ctx, const std::string &section, const State &s) {
    const Params p(ctx, section);
    double z1s = p.number("z1_ss"), z1f = p.number("z1_fs");
    if (z1s <= 0) {
        const auto *a = s.find("z1_ss");
        if (!a) throw DataError("defocus unknown: set z1_ss or run fit_thon_rings / fit_defocus_registration");
        z1s = scalar_of(*a, "z1_ss");
        if (z1f <= 0)
            if (const auto *b = s.find("z1_fs")) z1f = scalar_of(*b, "z1_fs");
    }
    if (z1f <= 0) z1f = z1s;
    return make_geometry(z1s, z1f, s.scan);
}

const std::vector<std::string> kGeometryInputs = {"z1_ss", "z1_fs"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string> &b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

PixelMap pixel_map(const State &s, const Geometry &g) {
    if (const auto *a = s.find("pixel_map")) {
        PixelMap u = a->to_pixel_map();
        if (u.shape() != s.scan.frame_shape()) throw ShapeMismatch("pixel_map", "frame shape", "other");
        return u;
    }
    return generate_pixel_map(g, s.scan.frame_shape(), s.roi);
}

PixelTranslations translations(const State &s, const Geometry &g) {
    if (const auto *a = s.find("pixel_translations")) {
        const Index n = s.scan.n_frames();
        if (a->shape != std::vector<Index>{n, 2}) throw ShapeMismatch("pixel_translations", "(N,2)", "other");
        PixelTranslations t{Eigen::ArrayXd(n), Eigen::ArrayXd(n)};
        for (Index k = 0; k < n; ++k) {
            t.di[k] = a->values[2 * k];
            t.dj[k] = a->values[2 * k + 1];
        }
        return t;
    }
    return translations_to_pixels(s.scan, g);
}

ReferenceImage reference(const State &s, const Geometry &g, const PixelMap &u, const PixelTranslations &t) {
    const auto *img = s.find("reference_image");
    const auto *wts = s.find("reference_weights");
    const auto *org = s.find("reference_origin");
    ReferenceImage ref;
    if (img && wts && org && org->values.size() == 2) {
        ref.i_ref = img->to_image();
        ref.wsum = wts->to_image();
        ref.origin_ss = static_cast<Index>(org->values[0]);
        ref.origin_fs = static_cast<Index>(org->values[1]);
    } else {
        ref = make_reference(s.scan, s.w, s.mask, u, t, s.roi);
    }
    ref.du = g.du;
    ref.dv = g.dv;
    return ref;
}

const std::vector<std::string> kReferenceInputs = {"reference_image", "reference_weights", "reference_origin"};
const std::vector<std::string> kMapInputs = {"pixel_map", "pixel_translations"};

cxi::NDArray translations_array(const PixelTranslations &t) {
    cxi::NDArray a{{t.size(), 2}, {}, cxi::DType::Float64};
    for (Index k = 0; k < t.size(); ++k) {
        a.values.push_back(t.di[k]);
        a.values.push_back(t.dj[k]);
    }
    return a;
}

cxi::NDArray list_array(const std::vector<double> &v) {
    return cxi::NDArray{{static_cast<Index>(v.size())}, v, cxi::DType::Float64};
}

// Collects outputs and writes them in one go under the exclusive lock.
class Writer {
public:
    Writer(const Context &ctx, Result &res) : ctx_(ctx), res_(res) {}

    void put(const std::string &name, cxi::NDArray a) { items_.emplace_back(name, std::move(a)); }

    void flush(bool create = false) {
        std::unique_lock<std::shared_mutex> lock;
        if (ctx_.file_lock) lock = std::unique_lock<std::shared_mutex>(*ctx_.file_lock);
        cxi::File f(ctx_.cxi_path, create ? cxi::File::Mode::Create : cxi::File::Mode::ReadWrite);
        for (auto &[name, a] : items_) {
            const std::string p = output_path(ctx_.output_group, name);
            f.write(p, a);
            res_.outputs.push_back(p);
        }
        items_.clear();
    }

private:
    const Context &ctx_;
    Result &res_;
    std::vector<std::pair<std::string, cxi::NDArray>> items_;
};

void put_reference(Writer &out, const ReferenceImage &ref) {
    out.put("reference_image", cxi::NDArray::image(ref.i_ref));
    out.put("reference_weights", cxi::NDArray::image(ref.wsum));
    cxi::NDArray o{{2}, {static_cast<double>(ref.origin_ss), static_cast<double>(ref.origin_fs)}, cxi::DType::Int64};
    out.put("reference_origin", o);
    out.put("reference_sampling", list_array({ref.du, ref.dv}));
}

void put_errors(Writer &out, const ErrorMetrics &e) {
    out.put("error_total", cxi::NDArray::scalar(e.total));
    out.put("error_frame", cxi::NDArray::vector(e.per_frame));
    out.put("error_pixel", cxi::NDArray::image(e.per_pixel));
    out.put("error_reference", cxi::NDArray::image(e.reference_plane));
}

SearchWindow window(const Params &p, const std::string &key) {
    const auto [a, b] = p.pair(key);
    return SearchWindow{a, b, {}};
}

void report(const Context &ctx, double f) {
    if (ctx.progress) ctx.progress(std::clamp(f, 0.0, 1.0));
}

// ---------------------------------------------------------------------------

Result cmd_simulate(const Context &ctx) {
    Result res;
    const Params p(ctx, "simulate");
    SimSpec spec;
    const auto shape = p.numbers("shape");
    if (shape.size() != 2 || shape[0] < 2 || shape[1] < 2) throw InvalidArgument("shape takes two values >= 2");
    spec.shape = {static_cast<Index>(shape[0]), static_cast<Index>(shape[1])};
    spec.n_positions = p.integer("n_positions");
    const std::string pos = p.string("positions");
    if (pos == "raster") spec.positions = SimSpec::Positions::Raster;
    else if (pos == "spiral") spec.positions = SimSpec::Positions::Spiral;
    else throw InvalidArgument("positions must be raster or spiral");
    spec.step = p.number("step");
    spec.jitter = p.number("jitter");
    spec.z1_ss = p.number("z1_ss");
    spec.z1_fs = p.number("z1_fs") > 0 ? p.number("z1_fs") : spec.z1_ss;
    spec.z = p.number("distance");
    spec.wavelength = p.number("wavelength");
    spec.x_pixel_size = spec.y_pixel_size = p.number("pixel_size");
    const auto noll = p.numbers("noll"), coef = p.numbers("coefficients");
    if (noll.size() != coef.size()) throw InvalidArgument("noll and coefficients differ in length");
    for (std::size_t k = 0; k < noll.size(); ++k) {
        if (noll[k] < 1 || noll[k] != std::floor(noll[k])) throw InvalidArgument("Noll indices start at 1");
        spec.aberrations.emplace_back(static_cast<int>(noll[k]), coef[k]);
    }
    if (const double peak = p.number("peak_displacement"); peak > 0 && !spec.aberrations.empty())
        scale_to_peak_displacement(spec, peak);
    spec.peak_counts = p.number("counts");
    const std::string wf = p.string("whitefield");
    if (wf == "flat") spec.whitefield = SimSpec::WhitefieldModel::Flat;
    else if (wf == "gaussian") spec.whitefield = SimSpec::WhitefieldModel::Gaussian;
    else throw InvalidArgument("whitefield must be flat or gaussian");
    spec.poisson = p.boolean("poisson");
    const std::string tex = p.string("texture");
    if (tex == "blobs") spec.texture = SimSpec::Texture::Blobs;
    else if (tex == "spokes") spec.texture = SimSpec::Texture::Spokes;
    else throw InvalidArgument("texture must be blobs or spokes");
    spec.texture_sigma = p.number("texture_sigma");
    spec.texture_contrast = p.number("texture_contrast");
    spec.hologram = p.boolean("hologram");
    spec.seed = ctx.seed;

    const Simulation sim = simulate_scan(spec);
    report(ctx, 0.5);
    {
        std::unique_lock<std::shared_mutex> lock;
        if (ctx.file_lock) lock = std::unique_lock<std::shared_mutex>(*ctx.file_lock);
        cxi::save_scan(ctx.cxi_path, sim.scan, cxi::CxiPaths{}.with_output_group(ctx.output_group));
    }
    res.outputs.push_back("/entry_1");
    Writer out(ctx, res);
    // Nominal defocus, as a beamline would record it.
    out.put("z1_ss", cxi::NDArray::scalar(spec.z1_ss));
    out.put("z1_fs", cxi::NDArray::scalar(spec.z1_fs));
    out.put("ground_truth/phase", cxi::NDArray::image(sim.truth.phase));
    out.put("ground_truth/pixel_map", cxi::NDArray::from_pixel_map(sim.truth.pixel_map));
    out.put("ground_truth/pixel_translations", translations_array(sim.truth.translations));
    out.put("ground_truth/whitefield", cxi::NDArray::image(sim.whitefield));
    out.put("ground_truth/reference_image", cxi::NDArray::image(sim.truth.reference.i_ref));
    cxi::NDArray z{{static_cast<Index>(spec.aberrations.size()), 2}, {}, cxi::DType::Float64};
    for (const auto &[j, c] : spec.aberrations) {
        z.values.push_back(j);
        z.values.push_back(c);
    }
    out.put("ground_truth/zernike_coefficients", z);
    out.flush();
    return res;
}

Result cmd_make_mask(const Context &ctx) {
    Result res;
    const Params p(ctx, "make_mask");
    State s = load_state(ctx, res, {});
    std::vector<std::string> warnings;
    const PixelMask m = make_mask(s.scan, MaskOptions{p.number("threshold"), p.number("mad_floor")}, &warnings);
    for (const auto &w : warnings) note(ctx, res, w);
    Writer out(ctx, res);
    out.put("mask", cxi::NDArray::mask(m.mask));
    out.flush();
    note(ctx, res, std::to_string((m.mask == false).count()) + " pixels masked");
    return res;
}

Result cmd_make_whitefield(const Context &ctx) {
    Result res;
    const Params p(ctx, "make_whitefield");
    State s = load_state(ctx, res, {});
    const Whitefield w = p.boolean("use_mask") ? make_whitefield(s.scan, s.mask) : make_whitefield(s.scan);
    Writer out(ctx, res);
    out.put("whitefield", cxi::NDArray::image(w.w));
    out.flush();
    return res;
}

Result cmd_guess_roi(const Context &ctx) {
    Result res;
    const Params p(ctx, "guess_roi");
    State s = load_state(ctx, res, {});
    const Roi r = guess_roi(s.w, p.number("fraction"));
    Writer out(ctx, res);
    out.put("roi", cxi::NDArray{{4},
                                {static_cast<double>(r.ss_min), static_cast<double>(r.ss_max),
                                 static_cast<double>(r.fs_min), static_cast<double>(r.fs_max)},
                                cxi::DType::Int64});
    out.flush();
    return res;
}

Result cmd_generate_pixel_map(const Context &ctx) {
    Result res;
    State s = load_state(ctx, res, kGeometryInputs);
    const Geometry g = geometry(ctx, "generate_pixel_map", s);
    Writer out(ctx, res);
    out.put("pixel_map", cxi::NDArray::from_pixel_map(generate_pixel_map(g, s.scan.frame_shape(), s.roi)));
    out.put("pixel_translations", translations_array(translations_to_pixels(s.scan, g)));
    out.flush();
    return res;
}

DefocusGrid defocus_grid(const Params &p) {
    const double lo = p.number("z1_min"), hi = p.number("z1_max");
    const Index n = p.integer("steps");
    if (!(lo > 0) || !(hi >= lo) || n < 1) throw InvalidArgument("need 0 < z1_min <= z1_max and steps >= 1");
    std::vector<double> v(static_cast<std::size_t>(n));
    for (Index k = 0; k < n; ++k)
        v[static_cast<std::size_t>(k)] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
    DefocusGrid grid;
    grid.z1_ss = v;
    if (p.boolean("astigmatic")) grid.z1_fs = v;
    return grid;
}

cxi::NDArray candidates_array(const std::vector<std::pair<double, double>> &c) {
    cxi::NDArray a{{static_cast<Index>(c.size()), 2}, {}, cxi::DType::Float64};
    for (const auto &[x, y] : c) {
        a.values.push_back(x);
        a.values.push_back(y);
    }
    return a;
}

Result cmd_fit_thon_rings(const Context &ctx) {
    Result res;
    const Params p(ctx, "fit_thon_rings");
    State s = load_state(ctx, res, {});
    const DefocusGrid grid = defocus_grid(p);
    const ThonFit fit = fit_thon_rings(s.scan, s.w, s.mask, s.roi, grid);
    if (!fit.reliable) note(ctx, res, "fringe fit is unreliable (score " + std::to_string(fit.score) + ")");
    Writer out(ctx, res);
    out.put("z1_ss", cxi::NDArray::scalar(fit.z1_ss));
    out.put("z1_fs", cxi::NDArray::scalar(fit.z1_fs));
    out.put("thon_score", cxi::NDArray::scalar(fit.score));
    out.put("thon_scores", list_array(fit.scores));
    out.put("thon_candidates", candidates_array(grid.candidates()));
    out.put("power_spectrum", cxi::NDArray::image(fit.power_spectrum));
    out.flush();
    char buf[96];
    std::snprintf(buf, sizeof buf, "z1_ss = %.6g m, z1_fs = %.6g m", fit.z1_ss, fit.z1_fs);
    note(ctx, res, buf);
    return res;
}

Result cmd_fit_defocus_registration(const Context &ctx) {
    Result res;
    const Params p(ctx, "fit_defocus_registration");
    State s = load_state(ctx, res, {});
    const RegistrationFit fit = fit_defocus_registration(s.scan, s.w, s.mask, s.roi, defocus_grid(p));
    Writer out(ctx, res);
    out.put("z1_ss", cxi::NDArray::scalar(fit.z1_ss));
    out.put("z1_fs", cxi::NDArray::scalar(fit.z1_fs));
    out.put("registration_contrast", list_array(fit.contrast));
    out.put("registration_candidates", candidates_array(fit.candidates));
    out.flush();
    char buf[96];
    std::snprintf(buf, sizeof buf, "z1_ss = %.6g m, z1_fs = %.6g m", fit.z1_ss, fit.z1_fs);
    note(ctx, res, buf);
    return res;
}

Result cmd_make_reference(const Context &ctx) {
    Result res;
    State s = load_state(ctx, res, with(kGeometryInputs, kMapInputs));
    const Geometry g = geometry(ctx, "make_reference", s);
    const PixelMap u = pixel_map(s, g);
    const PixelTranslations t = translations(s, g);
    ReferenceImage ref = make_reference(s.scan, s.w, s.mask, u, t, s.roi);
    ref.du = g.du;
    ref.dv = g.dv;
    Writer out(ctx, res);
    put_reference(out, ref);
    out.flush();
    return res;
}

Result cmd_update_pixel_map(const Context &ctx) {
    Result res;
    const Params p(ctx, "update_pixel_map");
    State s = load_state(ctx, res, with(with(kGeometryInputs, kMapInputs), kReferenceInputs));
    const Geometry g = geometry(ctx, "update_pixel_map", s);
    const PixelMap u = pixel_map(s, g);
    const PixelTranslations t = translations(s, g);
    const ReferenceImage ref = reference(s, g, u, t);
    SearchWindow win = window(p, "window");
    if (const double sub = p.number("subpixel_grid"); sub > 0) win.subpixel_grid = sub;
    UpdateOptions opts;
    opts.quadratic_refinement = p.boolean("quadratic_refinement");
    opts.integrate = p.boolean("integrate");
    opts.sigma = p.number("sigma");
    const PixelMapUpdate up = update_pixel_map(s.scan, s.w, s.mask, ref, u, t, s.roi, win, opts);
    const ImageB active = active_pixels(s.mask, s.w, s.roi);
    res.total_error = active.select(up.error, 0.0).sum();
    Writer out(ctx, res);
    out.put("pixel_map", cxi::NDArray::from_pixel_map(up.u));
    out.put("pixel_map_error", cxi::NDArray::image(up.error));
    if (!s.find("pixel_translations")) out.put("pixel_translations", translations_array(t));
    out.flush();
    return res;
}

Result cmd_update_translations(const Context &ctx) {
    Result res;
    const Params p(ctx, "update_translations");
    State s = load_state(ctx, res, with(with(kGeometryInputs, kMapInputs), kReferenceInputs));
    const Geometry g = geometry(ctx, "update_translations", s);
    const PixelMap u = pixel_map(s, g);
    const PixelTranslations t = translations(s, g);
    const ReferenceImage ref = reference(s, g, u, t);
    const PixelTranslations t2 = update_translations(s.scan, s.w, s.mask, ref, u, t, s.roi, window(p, "window"));
    Writer out(ctx, res);
    out.put("pixel_translations", translations_array(t2));
    out.flush();
    return res;
}

Result cmd_calc_error(const Context &ctx) {
    Result res;
    State s = load_state(ctx, res, with(with(kGeometryInputs, kMapInputs), kReferenceInputs));
    const Geometry g = geometry(ctx, "calc_error", s);
    const PixelMap u = pixel_map(s, g);
    const PixelTranslations t = translations(s, g);
    const ReferenceImage ref = reference(s, g, u, t);
    const ErrorMetrics e = calc_error(s.scan, s.w, s.mask, ref, u, t, s.roi);
    res.total_error = e.total;
    Writer out(ctx, res);
    put_errors(out, e);
    out.flush();
    return res;
}

Result cmd_run(const Context &ctx) {
    Result res;
    const Params p(ctx, "run");
    State s = load_state(ctx, res, with(kGeometryInputs, kMapInputs));
    const Geometry g = geometry(ctx, "run", s);
    const PixelMap u0 = pixel_map(s, g);
    const PixelTranslations t0 = translations(s, g);

    LoopOptions lo;
    lo.schedule.clear();
    for (double sigma : p.numbers("sigma")) {
        if (sigma < 0) throw InvalidArgument("sigma must be >= 0");
        lo.schedule.push_back({p.boolean("quadratic_refinement"), p.boolean("integrate"), sigma, true});
    }
    if (lo.schedule.empty()) throw InvalidArgument("sigma needs at least one value");
    lo.first_window = window(p, "first_window");
    lo.window = window(p, "window");
    lo.translation_window = window(p, "translation_window");
    lo.update_translations_from = static_cast<int>(p.integer("update_translations_from"));
    lo.refine_magnification = p.boolean("refine_magnification");
    lo.max_iters = static_cast<int>(p.integer("max_iters"));
    lo.tol = p.number("tol");
    lo.progress = [&](int it, double e) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "iteration %d: total error %.6e", it, e);
        if (ctx.log) ctx.log(buf);
        report(ctx, lo.max_iters > 0 ? static_cast<double>(it) / lo.max_iters : 1.0);
    };

    const LoopResult r = run_main_loop(s.scan, s.w, s.mask, u0, t0, s.roi, lo);
    LoopResult out_r = r;
    out_r.reference.du = g.du;
    out_r.reference.dv = g.dv;
    res.total_error = r.error.total;
    Writer out(ctx, res);
    out.put("pixel_map", cxi::NDArray::from_pixel_map(r.u));
    out.put("pixel_translations", translations_array(r.translations));
    put_reference(out, out_r.reference);
    put_errors(out, r.error);
    out.put("error_history", list_array(r.history));
    out.flush();
    return res;
}

Phase phase_of(const Context &ctx, const std::string &section, const State &s, Geometry *g_out = nullptr) {
    const Geometry g = geometry(ctx, section, s);
    if (g_out) *g_out = g;
    const PixelMap u = pixel_map(s, g);
    const PixelMask m{active_pixels(s.mask, s.w, s.roi)};
    return calculate_phase(u, g, s.scan.wavelength, s.scan.x_pixel_size, s.scan.y_pixel_size, m);
}

Result cmd_calculate_phase(const Context &ctx) {
    Result res;
    State s = load_state(ctx, res, with(kGeometryInputs, kMapInputs));
    const Phase ph = phase_of(ctx, "calculate_phase", s);
    if (!ph.converged) note(ctx, res, "phase integration did not reach its tolerance");
    Writer out(ctx, res);
    out.put("phase", cxi::NDArray::image(ph.phi));
    out.put("phase_defocus", cxi::NDArray::image(ph.defocus));
    out.put("phase_mask", cxi::NDArray::mask(ph.mask));
    out.flush();
    return res;
}

Result cmd_zernike(const Context &ctx) {
    Result res;
    const Params p(ctx, "zernike");
    State s = load_state(ctx, res, with(kGeometryInputs, kMapInputs));
    const Phase ph = phase_of(ctx, "zernike", s);
    const ZernikeFit z = zernike_fit(ph, active_pixels(s.mask, s.w, s.roi), static_cast<int>(p.integer("max_noll")));
    cxi::NDArray a{{static_cast<Index>(z.coefficients.size()), 2}, {}, cxi::DType::Float64};
    for (const auto &[j, c] : z.coefficients) {
        a.values.push_back(j);
        a.values.push_back(c);
    }
    Writer out(ctx, res);
    out.put("zernike_coefficients", a);
    out.put("zernike_residual_rms", cxi::NDArray::scalar(z.residual_rms));
    out.flush();
    return res;
}

Result cmd_focus_profile(const Context &ctx) {
    Result res;
    const Params p(ctx, "focus_profile");
    State s = load_state(ctx, res, with(kGeometryInputs, kMapInputs));
    Geometry g;
    const Phase ph = phase_of(ctx, "focus_profile", s, &g);
    double lo = p.number("z_min"), hi = p.number("z_max");
    if (lo == 0 && hi == 0) {
        const double z1 = 0.5 * (g.z1_ss + g.z1_fs);
        lo = -z1;
        hi = z1;
    }
    const Index n = p.integer("planes");
    if (n < 1 || hi < lo) throw InvalidArgument("need planes >= 1 and z_max >= z_min");
    std::vector<double> zs(static_cast<std::size_t>(n));
    for (Index k = 0; k < n; ++k)
        zs[static_cast<std::size_t>(k)] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
    const FocusVolume v = focus_profile(ph, s.w, g, s.scan.wavelength, s.scan.x_pixel_size, s.scan.y_pixel_size, zs,
                                        static_cast<int>(p.integer("padding")));
    Writer out(ctx, res);
    out.put("focus_volume", cxi::NDArray::stack(v.intensities));
    out.put("focus_z", list_array(v.z_values));
    out.put("focus_power", list_array(v.power));
    out.put("focus_sampling", list_array({v.dx, v.dy}));
    out.flush();
    return res;
}

Result cmd_calculate_sample_thickness(const Context &ctx) {
    Result res;
    const Params p(ctx, "calculate_sample_thickness");
    State s = load_state(ctx, res, with(with(kGeometryInputs, kMapInputs), kReferenceInputs));
    const Geometry g = geometry(ctx, "calculate_sample_thickness", s);
    const PixelMap u = pixel_map(s, g);
    const PixelTranslations t = translations(s, g);
    const ReferenceImage ref = reference(s, g, u, t);
    ThicknessParams tp;
    tp.delta = p.number("delta");
    tp.mu = p.number("mu");
    tp.zbar = 0.5 * (g.zbar_ss + g.zbar_fs);
    if (const double f = p.number("flat"); f > 0) tp.flat = f;
    const Thickness th = calculate_sample_thickness(ref, tp);
    if (th.clipped > 0) note(ctx, res, std::to_string(th.clipped) + " cells clipped at a non-positive intensity");
    Writer out(ctx, res);
    out.put("thickness", cxi::NDArray::image(th.t));
    out.put("thickness_valid", cxi::NDArray::mask(th.valid));
    out.flush();
    return res;
}

Result cmd_split_half_recon(const Context &ctx) {
    Result res;
    const Params p(ctx, "split_half_recon");
    State s = load_state(ctx, res, with(with(kGeometryInputs, kMapInputs), kReferenceInputs));
    const Geometry g = geometry(ctx, "split_half_recon", s);
    const PixelMap u = pixel_map(s, g);
    const PixelTranslations t = translations(s, g);
    const ReferenceImage ref = reference(s, g, u, t);
    const SplitHalf sh = split_half_recon(s.scan, s.w, s.mask, ref, u, t, s.roi, window(p, "window"), ctx.seed,
                                          static_cast<int>(p.integer("bins")));
    const auto counts = [](const std::vector<Index> &h) {
        std::vector<double> v(h.begin(), h.end());
        return cxi::NDArray{{static_cast<Index>(v.size())}, v, cxi::DType::Int64};
    };
    Writer out(ctx, res);
    out.put("split_half_pixel_map_a", cxi::NDArray::from_pixel_map(sh.u_a));
    out.put("split_half_pixel_map_b", cxi::NDArray::from_pixel_map(sh.u_b));
    out.put("split_half_bin_edges", list_array(sh.bin_edges));
    out.put("split_half_hist_ss", counts(sh.hist_ss));
    out.put("split_half_hist_fs", counts(sh.hist_fs));
    out.put("split_half_sigma", list_array({sh.sigma_ss, sh.sigma_fs, sh.sigma}));
    out.flush();
    char buf[64];
    std::snprintf(buf, sizeof buf, "sigma = %.4g px", sh.sigma);
    note(ctx, res, buf);
    return res;
}

}  // namespace

std::string Result::summary() const {
    std::ostringstream o;
    o << command << ":";
    if (total_error) {
        char buf[48];
        std::snprintf(buf, sizeof buf, " total error %.6e;", *total_error);
        o << buf;
    }
    o << " wrote ";
    for (std::size_t k = 0; k < outputs.size(); ++k) o << (k ? ", " : "") << outputs[k];
    if (outputs.empty()) o << "nothing";
    return o.str();
}

const config::Schema &schema() {
    static const config::Schema s = [] {
        config::Schema out;
        for (const auto &[name, ci] : table()) out[name] = ci.params;
        return out;
    }();
    return s;
}

const std::vector<std::string> &names() {
    static const std::vector<std::string> n = {
        "simulate",         "make_mask",          "make_whitefield",  "guess_roi",
        "generate_pixel_map", "fit_thon_rings",   "fit_defocus_registration",
        "make_reference",   "update_pixel_map",   "update_translations", "calc_error",
        "run",              "calculate_phase",    "zernike",          "focus_profile",
        "calculate_sample_thickness", "split_half_recon", "serve"};
    return n;
}

bool known(const std::string &command) { return table().count(command) > 0; }

std::string description(const std::string &command) { return info(command).description; }

std::string help(const std::string &command) {
    const CommandInfo &ci = info(command);
    std::ostringstream o;
    o << command << ": " << ci.description << "\n";
    if (ci.params.empty()) {
        o << "  (no parameters)\n";
        return o.str();
    }
    o << "Parameters, read from the [" << command << "] section of the configuration file:\n";
    for (const auto &p : ci.params) {
        const char *type = p.type == ParamType::Bool     ? "bool"
                           : p.type == ParamType::Number ? "number"
                           : p.type == ParamType::String ? "string"
                                                         : "list";
        o << "  " << p.name << " (" << type << ", default " << (p.default_value.empty() ? "\"\"" : p.default_value)
          << "): " << p.description << "\n";
    }
    return o.str();
}

Result run(const std::string &command, const Context &ctx) {
    using Fn = Result (*)(const Context &);
    static const std::map<std::string, Fn> dispatch = {
        {"simulate", cmd_simulate},
        {"make_mask", cmd_make_mask},
        {"make_whitefield", cmd_make_whitefield},
        {"guess_roi", cmd_guess_roi},
        {"generate_pixel_map", cmd_generate_pixel_map},
        {"fit_thon_rings", cmd_fit_thon_rings},
        {"fit_defocus_registration", cmd_fit_defocus_registration},
        {"make_reference", cmd_make_reference},
        {"update_pixel_map", cmd_update_pixel_map},
        {"update_translations", cmd_update_translations},
        {"calc_error", cmd_calc_error},
        {"run", cmd_run},
        {"calculate_phase", cmd_calculate_phase},
        {"zernike", cmd_zernike},
        {"focus_profile", cmd_focus_profile},
        {"calculate_sample_thickness", cmd_calculate_sample_thickness},
        {"split_half_recon", cmd_split_half_recon},
    };
    auto it = dispatch.find(command);
    if (it == dispatch.end()) throw InvalidArgument("unknown command: " + command);
    if (ctx.output_group.empty() || ctx.output_group.front() != '/')
        throw InvalidArgument("output group must be an absolute path");
    Result r = it->second(ctx);
    r.command = command;
    report(ctx, 1.0);
    return r;
}

int exit_code(const std::exception &e) {
    if (dynamic_cast<const config::ParseError *>(&e)) return 1;
    if (dynamic_cast<const InvalidArgument *>(&e)) return 1;
    if (dynamic_cast<const NumericalError *>(&e)) return 3;
    return 2;
}

std::string output_path(const std::string &group, const std::string &name) {
    if (group == "/") return "/" + name;
    return group + "/" + name;
}

}  // namespace pxst::commands
