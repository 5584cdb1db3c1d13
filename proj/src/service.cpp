#include "pxst/service.hpp"

#include "pxst/commands.hpp"
#include "pxst/cxi.hpp"
#include "pxst/errors.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <bit>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <filesystem>
#include <limits>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <thread>

namespace pxst::service {

using json = nlohmann::json;

namespace {

void put_u32(std::string &out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

void put_f32(std::string &out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(const std::string &in, std::size_t &pos) {
    if (pos + 4 > in.size()) throw FormatError("truncated payload");
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + k])) << (8 * k);
    pos += 4;
    return v;
}

}  // namespace

std::string encode_array(const std::vector<Index> &shape, const std::vector<double> &values) {
    std::string out;
    out.reserve(8 + 4 * shape.size() + 4 * values.size());
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (Index d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    float lo = std::numeric_limits<float>::infinity(), hi = -lo;
    for (double v : values) {
        const float f = static_cast<float>(v);
        if (!std::isfinite(f)) continue;
        lo = std::min(lo, f);
        hi = std::max(hi, f);
    }
    if (lo > hi) lo = hi = 0;
    put_f32(out, lo);
    put_f32(out, hi);
    for (double v : values) put_f32(out, static_cast<float>(v));
    return out;
}

std::string encode_image(const ImageD &a) {
    return encode_array({a.rows(), a.cols()}, std::vector<double>(a.data(), a.data() + a.size()));
}

DecodedArray decode_array(const std::string &bytes) {
    std::size_t pos = 0;
    DecodedArray d;
    const std::uint32_t ndim = get_u32(bytes, pos);
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
        d.shape.push_back(get_u32(bytes, pos));
        n *= static_cast<std::size_t>(d.shape.back());
    }
    d.min = std::bit_cast<float>(get_u32(bytes, pos));
    d.max = std::bit_cast<float>(get_u32(bytes, pos));
    if (bytes.size() != pos + 4 * n) throw FormatError("array payload length does not match its header");
    d.values.resize(n);
    for (auto &v : d.values) v = std::bit_cast<float>(get_u32(bytes, pos));
    return d;
}

std::string encode_mask(const ImageB &mask) {
    std::string out;
    put_u32(out, static_cast<std::uint32_t>(mask.rows()));
    put_u32(out, static_cast<std::uint32_t>(mask.cols()));
    std::string bits(static_cast<std::size_t>((mask.size() + 7) / 8), '\0');
    for (Index k = 0; k < mask.size(); ++k)
        if (mask.data()[k]) bits[static_cast<std::size_t>(k / 8)] |= static_cast<char>(1u << (k % 8));
    return out + bits;
}

ImageB decode_mask(const std::string &bytes) {
    std::size_t pos = 0;
    const Index ss = get_u32(bytes, pos), fs = get_u32(bytes, pos);
    const Index n = ss * fs;
    if (bytes.size() != pos + static_cast<std::size_t>((n + 7) / 8))
        throw FormatError("mask payload length does not match its header");
    ImageB m(ss, fs);
    for (Index k = 0; k < n; ++k)
        m.data()[k] = (static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(k / 8)]) >> (k % 8)) & 1u;
    return m;
}

namespace {

enum class Status { Queued, Running, Done, Failed };

const char *status_name(Status s) {
    switch (s) {
    case Status::Queued: return "queued";
    case Status::Running: return "running";
    case Status::Done: return "done";
    case Status::Failed: return "failed";
    }
    return "?";
}

struct Job {
    std::string id;
    std::string command;
    json params;
    config::RunConfig config;
    Status status = Status::Queued;
    double progress = 0;
    std::optional<commands::Result> result;
    std::string error;
    std::vector<std::string> log;
};

void send_json(httplib::Response &res, const json &j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response &res, int status, const std::string &msg) {
    send_json(res, json{{"error", msg}}, status);
}

void send_binary(httplib::Response &res, std::string body) {
    res.status = 200;
    res.set_content(std::move(body), "application/octet-stream");
}

int http_status(const std::exception &e) {
    if (dynamic_cast<const MissingDataset *>(&e)) return 404;
    if (dynamic_cast<const InvalidArgument *>(&e) || dynamic_cast<const config::ParseError *>(&e)) return 400;
    return 500;
}

const char *kPlaceholder =
    "<!doctype html><html><head><meta charset=\"utf-8\"><title>st inspector</title></head>"
    "<body><h1>st inspector</h1><p>The UI bundle is not installed. The HTTP API is available under "
    "<code>/api/</code>, e.g. <a href=\"/api/meta\">/api/meta</a>.</p></body></html>";

}  // namespace

struct Server::Impl {
    Options opts;
    cxi::CxiPaths paths;
    httplib::Server http;
    std::shared_mutex file_lock;
    int bound_port = -1;
    std::thread listener;

    std::mutex jobs_mutex;
    std::condition_variable jobs_cv;
    std::map<std::string, std::shared_ptr<Job>> jobs;
    std::deque<std::shared_ptr<Job>> queue;
    std::shared_ptr<Job> active;  // queued or running
    std::uint64_t next_id = 1;
    bool stopping = false;
    std::thread worker;

    explicit Impl(Options o) : opts(std::move(o)), paths(cxi::CxiPaths{}.with_output_group(opts.output_group)) {}

    std::string out(const std::string &name) const { return commands::output_path(opts.output_group, name); }

    bool busy() {
        std::lock_guard<std::mutex> g(jobs_mutex);
        return active != nullptr;
    }

    // Runs fn on a read-only handle under the shared lock.
    template <typename Fn>
    auto read(Fn &&fn) {
        std::shared_lock<std::shared_mutex> lock(file_lock);
        cxi::File f(opts.cxi_path, cxi::File::Mode::ReadOnly);
        return fn(f);
    }

    std::vector<Index> frame_stack_shape(const cxi::File &f) const {
        const auto s = f.shape(paths.data);
        if (s.size() != 3) throw ShapeMismatch(paths.data, "(N,SS,FS)", "other");
        return s;
    }

    json meta() {
        return read([&](cxi::File &f) {
            const auto s = frame_stack_shape(f);
            auto scalar = [&](const std::string &p) -> json {
                if (!f.exists(p)) return nullptr;
                const auto a = f.read(p);
                return a.values.size() == 1 ? json(a.values[0]) : json(nullptr);
            };
            json wavelength = scalar(paths.wavelength);
            if (wavelength.is_null() && f.exists(paths.energy)) {
                double e = f.read(paths.energy).values.at(0);
                if (e > 1.0) e *= 1.602176634e-19;
                wavelength = cxi::wavelength_from_energy(e);
            }
            json cmds = json::array();
            for (const auto &c : commands::names())
                if (c != "serve") cmds.push_back(c);
            return json{{"path", opts.cxi_path},
                        {"n_frames", s[0]},
                        {"shape", {s[1], s[2]}},
                        {"wavelength", wavelength},
                        {"distance", scalar(paths.distance)},
                        {"x_pixel_size", scalar(paths.x_pixel_size)},
                        {"y_pixel_size", scalar(paths.y_pixel_size)},
                        {"output_group", opts.output_group},
                        {"has_whitefield", f.exists(paths.whitefield)},
                        {"has_mask", f.exists(paths.mask)},
                        {"commands", cmds}};
        });
    }

    std::vector<bool> good_frames(cxi::File &f) {
        const Index n = frame_stack_shape(f)[0];
        std::vector<bool> g(static_cast<std::size_t>(n), true);
        if (f.exists(paths.good_frames)) {
            const auto a = f.read(paths.good_frames);
            const bool boolean = a.size() == n && std::all_of(a.values.begin(), a.values.end(),
                                                              [](double v) { return v == 0 || v == 1; });
            if (boolean) {
                for (Index k = 0; k < n; ++k) g[static_cast<std::size_t>(k)] = a.values[static_cast<std::size_t>(k)] != 0;
            } else {
                g.assign(g.size(), false);
                for (double v : a.values) {
                    const auto k = static_cast<Index>(v);
                    if (k < 0 || k >= n) throw FormatError("good_frames index out of range");
                    g[static_cast<std::size_t>(k)] = true;
                }
            }
        }
        return g;
    }

    void run_worker() {
        for (;;) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock<std::mutex> g(jobs_mutex);
                jobs_cv.wait(g, [&] { return stopping || !queue.empty(); });
                if (stopping) return;
                job = queue.front();
                queue.pop_front();
                job->status = Status::Running;
            }
            commands::Context ctx;
            ctx.cxi_path = opts.cxi_path;
            ctx.config = job->config;
            ctx.roi = opts.roi;
            ctx.seed = opts.seed;
            ctx.output_group = opts.output_group;
            ctx.file_lock = &file_lock;
            ctx.progress = [&](double f) {
                std::lock_guard<std::mutex> g(jobs_mutex);
                job->progress = f;
            };
            ctx.log = [&](const std::string &line) {
                std::lock_guard<std::mutex> g(jobs_mutex);
                job->log.push_back(line);
            };
            std::optional<commands::Result> result;
            std::string error;
            try {
                result = commands::run(job->command, ctx);
            } catch (const std::exception &e) {
                error = e.what();
            }
            std::lock_guard<std::mutex> g(jobs_mutex);
            if (result) {
                job->result = std::move(result);
                job->status = Status::Done;
                job->progress = 1.0;
            } else {
                job->error = error;
                job->status = Status::Failed;
            }
            active.reset();
        }
    }

    json job_json(const Job &j) {
        json r{{"id", j.id},
               {"command", j.command},
               {"params", j.params},
               {"status", status_name(j.status)},
               {"progress", j.progress},
               {"log", j.log}};
        if (j.result) {
            json s{{"outputs", j.result->outputs}, {"notes", j.result->notes}, {"line", j.result->summary()}};
            s["total_error"] = j.result->total_error ? json(*j.result->total_error) : json(nullptr);
            r["summary"] = s;
        }
        if (!j.error.empty()) r["error"] = j.error;
        return r;
    }

    // Job parameters: JSON values are converted to the declared types of the
    // command's section and layered over the server's configuration.
    config::RunConfig job_config(const std::string &command, const json &params) {
        config::RunConfig cfg = opts.config;
        if (params.is_null()) return cfg;
        if (!params.is_object()) throw InvalidArgument("params must be an object");
        const auto &decl = commands::schema().at(command);
        for (const auto &[key, value] : params.items()) {
            auto it = std::find_if(decl.begin(), decl.end(), [&](const config::ParamSpec &p) { return p.name == key; });
            if (it == decl.end()) throw InvalidArgument("unknown parameter for " + command + ": " + key);
            std::string text;
            if (value.is_boolean()) text = value.get<bool>() ? "True" : "False";
            else if (value.is_number()) text = json(value).dump();
            else if (value.is_string()) text = value.get<std::string>();
            else if (value.is_array()) {
                for (std::size_t k = 0; k < value.size(); ++k) {
                    if (!value[k].is_number()) throw InvalidArgument("parameter " + key + ": list entries must be numbers");
                    text += (k ? "," : "") + value[k].dump();
                }
            } else {
                throw InvalidArgument("parameter " + key + ": unsupported value");
            }
            cfg.set(command, key, config::parse_value(key, text, it->type));
        }
        return cfg;
    }

    void routes() {
        http.set_exception_handler([](const httplib::Request &, httplib::Response &res, std::exception_ptr ep) {
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception &e) {
                send_error(res, http_status(e), e.what());
            } catch (...) {
                send_error(res, 500, "unknown error");
            }
        });

        http.Get("/api/meta", [this](const httplib::Request &, httplib::Response &res) { send_json(res, meta()); });

        http.Get(R"(/api/frame/(\d+))", [this](const httplib::Request &req, httplib::Response &res) {
            const Index n = std::stoll(req.matches[1]);
            const bool normalize = req.has_param("normalize") && req.get_param_value("normalize") == "whitefield";
            const auto body = read([&](cxi::File &f) -> std::optional<std::string> {
                const auto s = frame_stack_shape(f);
                if (n >= s[0]) return std::nullopt;
                ImageD frame = f.read_frame(paths.data, n);
                if (normalize) {
                    if (!f.exists(paths.whitefield)) throw MissingDataset(paths.whitefield);
                    const ImageD w = f.read(paths.whitefield).to_image();
                    if (shape_of(w) != shape_of(frame)) throw ShapeMismatch("whitefield", "frame shape", "other");
                    frame = (w > 0).select(frame / w, 0.0);
                }
                return encode_image(frame);
            });
            if (!body) return send_error(res, 404, "frame index out of range");
            send_binary(res, *body);
        });

        http.Get("/api/whitefield", [this](const httplib::Request &, httplib::Response &res) {
            send_binary(res, read([&](cxi::File &f) { return encode_image(f.read(paths.whitefield).to_image()); }));
        });

        http.Get("/api/mask", [this](const httplib::Request &, httplib::Response &res) {
            send_binary(res, read([&](cxi::File &f) {
                if (f.exists(paths.mask)) return encode_mask(f.read(paths.mask).to_mask());
                const auto s = frame_stack_shape(f);
                return encode_mask(ImageB::Constant(s[1], s[2], true));
            }));
        });

        http.Put("/api/mask", [this](const httplib::Request &req, httplib::Response &res) {
            const ImageB m = decode_mask(req.body);
            mutate(res, [&](cxi::File &f) {
                const auto s = frame_stack_shape(f);
                if (m.rows() != s[1] || m.cols() != s[2]) throw InvalidArgument("mask shape does not match the frames");
                f.write(paths.mask, cxi::NDArray::mask(m));
                return json{{"ok", true}, {"bad_pixels", (m == false).count()}};
            });
        });

        http.Get("/api/good_frames", [this](const httplib::Request &, httplib::Response &res) {
            send_json(res, read([&](cxi::File &f) { return json{{"good_frames", good_frames(f)}}; }));
        });

        http.Put("/api/good_frames", [this](const httplib::Request &req, httplib::Response &res) {
            json body;
            try {
                body = json::parse(req.body);
            } catch (const json::exception &) {
                throw InvalidArgument("body is not JSON");
            }
            if (body.is_object() && body.contains("good_frames")) body = body["good_frames"];
            if (!body.is_array()) throw InvalidArgument("expected an array of booleans");
            std::vector<double> flags;
            for (const auto &v : body) {
                if (!v.is_boolean()) throw InvalidArgument("expected an array of booleans");
                flags.push_back(v.get<bool>() ? 1.0 : 0.0);
            }
            mutate(res, [&](cxi::File &f) {
                const Index n = frame_stack_shape(f)[0];
                if (static_cast<Index>(flags.size()) != n) throw InvalidArgument("expected one flag per frame");
                f.write(paths.good_frames, cxi::NDArray{{n}, flags, cxi::DType::UInt8});
                return json{{"ok", true}};
            });
        });

        http.Get("/api/positions", [this](const httplib::Request &, httplib::Response &res) {
            send_json(res, read([&](cxi::File &f) {
                const auto t = f.read(paths.translation);
                if (t.shape.size() != 2 || t.shape[1] != 3) throw ShapeMismatch(paths.translation, "(N,3)", "other");
                json xyz = json::array();
                for (Index k = 0; k < t.shape[0]; ++k)
                    xyz.push_back({t.values[3 * k], t.values[3 * k + 1], t.values[3 * k + 2]});
                json r{{"translations", xyz}, {"good_frames", good_frames(f)}};
                if (f.exists(out("pixel_translations"))) {
                    const auto p = f.read(out("pixel_translations"));
                    json px = json::array();
                    for (Index k = 0; k + 1 < static_cast<Index>(p.values.size()); k += 2)
                        px.push_back({p.values[k], p.values[k + 1]});
                    r["pixel_translations"] = px;
                }
                return r;
            }));
        });

        http.Get("/api/commands", [](const httplib::Request &, httplib::Response &res) {
            json r = json::object();
            for (const auto &name : commands::names()) {
                if (name == "serve") continue;
                json params = json::array();
                for (const auto &p : commands::schema().at(name)) {
                    const char *type = p.type == config::ParamType::Bool     ? "bool"
                                       : p.type == config::ParamType::Number ? "number"
                                       : p.type == config::ParamType::String ? "string"
                                                                             : "list";
                    params.push_back({{"name", p.name}, {"type", type}, {"default", p.default_value},
                                      {"description", p.description}});
                }
                r[name] = {{"description", commands::description(name)}, {"params", params}};
            }
            send_json(res, r);
        });

        http.Post("/api/jobs", [this](const httplib::Request &req, httplib::Response &res) {
            json body;
            try {
                body = json::parse(req.body);
            } catch (const json::exception &) {
                return send_error(res, 400, "body is not JSON");
            }
            if (!body.is_object() || !body.contains("command") || !body["command"].is_string())
                return send_error(res, 400, "expected {\"command\": name, \"params\": {...}}");
            const std::string command = body["command"];
            if (!commands::known(command) || command == "serve" || command == "simulate")
                return send_error(res, 400, "unknown command: " + command);
            auto job = std::make_shared<Job>();
            job->command = command;
            job->params = body.value("params", json::object());
            job->config = job_config(command, job->params);
            {
                std::lock_guard<std::mutex> g(jobs_mutex);
                if (active) return send_error(res, 409, "a job is already queued or running: " + active->id);
                job->id = std::to_string(next_id++);
                jobs[job->id] = job;
                active = job;
                queue.push_back(job);
            }
            jobs_cv.notify_one();
            std::lock_guard<std::mutex> g(jobs_mutex);
            send_json(res, job_json(*job), 202);
        });

        http.Get("/api/jobs", [this](const httplib::Request &, httplib::Response &res) {
            std::lock_guard<std::mutex> g(jobs_mutex);
            json r = json::array();
            for (const auto &[id, j] : jobs) r.push_back(job_json(*j));
            send_json(res, r);
        });

        http.Get(R"(/api/jobs/([^/]+))", [this](const httplib::Request &req, httplib::Response &res) {
            std::lock_guard<std::mutex> g(jobs_mutex);
            auto it = jobs.find(req.matches[1]);
            if (it == jobs.end()) return send_error(res, 404, "no such job");
            send_json(res, job_json(*it->second));
        });

        http.Get(R"(/api/result/(.+))", [this](const httplib::Request &req, httplib::Response &res) {
            const std::string name = req.matches[1];
            if (name.find("..") != std::string::npos) return send_error(res, 400, "bad result name");
            send_binary(res, read([&](cxi::File &f) {
                const auto a = f.read(out(name));
                return encode_array(a.shape, a.values);
            }));
        });

        namespace fs = std::filesystem;
        if (!opts.static_dir.empty() && fs::is_directory(opts.static_dir)) {
            http.set_mount_point("/", opts.static_dir);
        } else {
            http.Get("/", [](const httplib::Request &, httplib::Response &res) {
                res.set_content(kPlaceholder, "text/html");
            });
        }
    }

    // Edits are refused while a job holds the file.
    template <typename Fn>
    void mutate(httplib::Response &res, Fn &&fn) {
        std::lock_guard<std::mutex> g(jobs_mutex);
        if (active) return send_error(res, 409, "a job is running on this file");
        std::unique_lock<std::shared_mutex> lock(file_lock);
        cxi::File f(opts.cxi_path, cxi::File::Mode::ReadWrite);
        send_json(res, fn(f));
    }

    void check_file() {
        cxi::File f(opts.cxi_path, cxi::File::Mode::ReadOnly);
        frame_stack_shape(f);
    }

    int bind() {
        check_file();
        routes();
        if (opts.port == 0) {
            bound_port = http.bind_to_any_port(opts.host);
        } else {
            bound_port = http.bind_to_port(opts.host, opts.port) ? opts.port : -1;
        }
        if (bound_port < 0) throw DataError("cannot listen on " + opts.host + ":" + std::to_string(opts.port) + " (port busy?)");
        worker = std::thread([this] { run_worker(); });
        return bound_port;
    }

    void shutdown() {
        http.stop();
        if (listener.joinable()) listener.join();
        {
            std::lock_guard<std::mutex> g(jobs_mutex);
            stopping = true;
        }
        jobs_cv.notify_all();
        if (worker.joinable()) worker.join();
    }
};

Server::Server(Options opts) : impl_(std::make_unique<Impl>(std::move(opts))) {}

Server::~Server() { impl_->shutdown(); }

int Server::start() {
    const int p = impl_->bind();
    impl_->listener = std::thread([this] { impl_->http.listen_after_bind(); });
    impl_->http.wait_until_ready();
    return p;
}

void Server::run() {
    impl_->bind();
    impl_->http.listen_after_bind();
}

void Server::stop() { impl_->http.stop(); }

int Server::port() const { return impl_->bound_port; }

}  // namespace pxst::service
