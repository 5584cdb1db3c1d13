#ifndef PXST_COMMANDS_HPP
#define PXST_COMMANDS_HPP

#include "pxst/config.hpp"
#include "pxst/types.hpp"

#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

// Pipeline steps shared by the `st` command line and the inspector service.
// Every step reads its inputs from a CXI file (falling back to defaults when
// an earlier step has not run), reads its parameters from the configuration
// section named after it, and writes its outputs back under the output group.
namespace pxst::commands {

struct Context {
    std::string cxi_path;
    config::RunConfig config;
    std::optional<Roi> roi;  // overrides a stored roi
    std::uint64_t seed = 0;
    std::string output_group = "/speckle_tracking";

    // Called with a fraction in [0, 1] as long steps advance.
    std::function<void(double)> progress;
    // Informational lines (per-iteration errors, fallbacks taken).
    std::function<void(const std::string &)> log;
    // When set, inputs are read under a shared lock and outputs written
    // under an exclusive one.
    std::shared_mutex *file_lock = nullptr;
};

struct Result {
    std::string command;
    std::optional<double> total_error;
    std::vector<std::string> outputs;  // absolute dataset paths
    std::vector<std::string> notes;

    // "<command>: [total error E; ]wrote a, b, c"
    std::string summary() const;
};

// Section names with their accepted parameters. Includes `serve`, which is
// handled by the caller.
const config::Schema &schema();
const std::vector<std::string> &names();
bool known(const std::string &command);
std::string description(const std::string &command);
// Description followed by one line per parameter: name, type, default, text.
std::string help(const std::string &command);

// Runs a pipeline step. Throws pxst::Error subclasses or config::ParseError.
Result run(const std::string &command, const Context &ctx);

// CLI exit status for an exception thrown by run: 1 usage/configuration,
// 2 data, 3 numerical.
int exit_code(const std::exception &e);

// Shared by the service and the CLI: resolves the dataset path of a named
// output ("pixel_map" -> "/speckle_tracking/pixel_map").
std::string output_path(const std::string &group, const std::string &name);

}  // namespace pxst::commands

#endif
