#ifndef PXST_PARALLEL_HPP
#define PXST_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace pxst {

// Worker count used by every parallel loop in the library. 1 selects the
// serial path, which is bitwise reproducible.
void set_num_threads(int n);
int num_threads();

// Calls body(chunk_index, begin, end) over a static partition of [begin, end).
// Chunk boundaries depend only on the range and the worker count, so callers
// that reduce per-chunk partial results in chunk order are deterministic.
void parallel_chunks(std::ptrdiff_t begin, std::ptrdiff_t end,
                     const std::function<void(int, std::ptrdiff_t, std::ptrdiff_t)> &body);

// Number of chunks parallel_chunks will use for a range of the given length.
int chunk_count(std::ptrdiff_t length);

template <typename Fn>
void parallel_for(std::ptrdiff_t begin, std::ptrdiff_t end, Fn &&fn) {
    parallel_chunks(begin, end, [&](int, std::ptrdiff_t b, std::ptrdiff_t e) {
        for (std::ptrdiff_t k = b; k < e; ++k) fn(k);
    });
}

}  // namespace pxst

#endif
