#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace recast {

// Exit-code aligned error categories (see tools/recast_main.cpp).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d < 0) throw ShapeError("negative axis length");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + ")";
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Global worker count for batch-level parallelism. Per-item work is assigned
// by index and merged in index order, so results do not depend on this value.
inline int& thread_count() {
    static int n = 1;
    return n;
}

inline void set_thread_count(int n) {
    thread_count() = n < 1 ? 1 : n;
}

// Runs fn(i) for i in [0, n). Work is split into contiguous index ranges,
// one per worker. fn must not touch shared mutable state.
template <class Fn>
void parallel_for(int64_t n, Fn&& fn) {
    int workers = thread_count();
    if (workers <= 1 || n <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    if (workers > n) workers = static_cast<int>(n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    int64_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        int64_t lo = w * chunk;
        int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace recast
