#include "pxst/commands.hpp"
#include "pxst/errors.hpp"
#include "pxst/parallel.hpp"
#include "pxst/service.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <sstream>
#include <thread>

namespace {

pxst::Roi parse_roi(const std::string &text) {
    std::vector<long long> v;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stoll(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception &) {
            throw pxst::InvalidArgument("--roi expects ss0,ss1,fs0,fs1");
        }
    }
    if (v.size() != 4) throw pxst::InvalidArgument("--roi expects ss0,ss1,fs0,fs1");
    return {v[0], v[1], v[2], v[3]};
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Ptychographic speckle tracking: wavefront reconstruction from near-field speckle scans."};
    app.require_subcommand(1);

    std::string cxi_path, config_path, roi_text, output_group = "/speckle_tracking";
    int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    std::uint64_t seed = 0;
    int port = -1;

    for (const auto &name : pxst::commands::names()) {
        CLI::App *sub = app.add_subcommand(name, pxst::commands::description(name));
        sub->add_option("cxi", cxi_path, "CXI file")->required();
        sub->add_option("--config", config_path, "configuration file (default: $ST_CONFIG)");
        sub->add_option("--roi", roi_text, "region of interest ss0,ss1,fs0,fs1 (half-open)");
        sub->add_option("--threads", threads, "worker threads (1 = bitwise reproducible)")->check(CLI::PositiveNumber);
        sub->add_option("--seed", seed, "random seed");
        sub->add_option("--output-group", output_group, "HDF5 group for outputs");
        if (name == "serve") sub->add_option("--port", port, "TCP port (overrides the config)");
        sub->footer(pxst::commands::help(name));
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        pxst::set_num_threads(threads);
        pxst::commands::Context ctx;
        ctx.cxi_path = cxi_path;
        ctx.seed = seed;
        ctx.output_group = output_group;
        if (!roi_text.empty()) ctx.roi = parse_roi(roi_text);
        if (config_path.empty())
            if (const char *env = std::getenv("ST_CONFIG")) config_path = env;
        if (!config_path.empty()) {
            ctx.config = pxst::config::load_config(config_path, &pxst::commands::schema());
            for (const auto &k : ctx.config.unknown_keys(pxst::commands::schema()))
                std::cerr << "warning: unknown configuration key " << k << "\n";
        }

        if (command == "serve") {
            pxst::service::Options opts;
            opts.cxi_path = cxi_path;
            opts.port = port >= 0 ? port : static_cast<int>(ctx.config.number("serve", "port", 8008));
            opts.static_dir = ctx.config.string("serve", "static_dir", "");
            opts.output_group = output_group;
            opts.config = ctx.config;
            opts.seed = seed;
            opts.roi = ctx.roi;
            pxst::service::Server server(opts);
            std::cout << "serving " << cxi_path << " on http://" << opts.host << ":" << opts.port << std::endl;
            server.run();
            return 0;
        }

        ctx.log = [](const std::string &line) { std::cout << line << "\n"; };
        const auto result = pxst::commands::run(command, ctx);
        std::cout << result.summary() << std::endl;
        return 0;
    } catch (const std::exception &e) {
        const std::string msg = e.what();
        if (msg.rfind(command + ":", 0) == 0)
            std::cerr << msg << std::endl;
        else
            std::cerr << command << ": " << msg << std::endl;
        return pxst::commands::exit_code(e);
    }
}
