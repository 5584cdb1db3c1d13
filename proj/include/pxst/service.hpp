#ifndef PXST_SERVICE_HPP
#define PXST_SERVICE_HPP

#include "pxst/config.hpp"
#include "pxst/types.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace pxst::service {

struct Options {
    std::string cxi_path;
    std::string host = "127.0.0.1";
    int port = 8008;  // 0 = any free port
    std::string static_dir;
    std::string output_group = "/speckle_tracking";
    config::RunConfig config;  // defaults for job parameters
    std::uint64_t seed = 0;
    std::optional<Roi> roi;
};

// HTTP API over one CXI file. Reads run concurrently; mask and good-frame
// edits and jobs are serialised, and edits are refused while a job is queued
// or running.
//
//   GET  /api/meta                      scan constants and command list
//   GET  /api/frame/{n}[?normalize=whitefield]
//   GET  /api/whitefield
//   GET  /api/mask, PUT /api/mask       packed bit mask
//   GET  /api/good_frames, PUT /api/good_frames
//   GET  /api/positions
//   GET  /api/commands                  parameter schema per command
//   POST /api/jobs {command, params}, GET /api/jobs, GET /api/jobs/{id}
//   GET  /api/result/{name}             dataset under the output group
//   GET  /                              static UI
class Server {
public:
    explicit Server(Options opts);
    ~Server();
    Server(const Server &) = delete;
    Server &operator=(const Server &) = delete;

    // Binds the socket and serves on a background thread. Returns the port.
    // Throws DataError when the file cannot be read or the port is taken.
    int start();
    // Binds and serves on the calling thread until stop() is called.
    void run();
    void stop();
    int port() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Array payload: uint32 ndim, uint32 dims[ndim], float32 min, float32 max,
// then the values as float32, all little-endian, C order. min and max cover
// the finite values (both 0 when there are none).
std::string encode_array(const std::vector<Index> &shape, const std::vector<double> &values);
std::string encode_image(const ImageD &a);

struct DecodedArray {
    std::vector<Index> shape;
    float min = 0, max = 0;
    std::vector<float> values;
};
DecodedArray decode_array(const std::string &bytes);

// Mask payload: uint32 SS, uint32 FS, then ceil(SS*FS/8) bytes. Pixel k in
// row-major order is bit (k % 8) of byte k / 8, least significant first;
// 1 = good.
std::string encode_mask(const ImageB &mask);
ImageB decode_mask(const std::string &bytes);

}  // namespace pxst::service

#endif
