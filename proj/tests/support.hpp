#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "layerfusion/io/tensor_file.hpp"
#include "layerfusion/tensor.hpp"
#include "oracles.hpp"

namespace lftest {

namespace fs = std::filesystem;

inline layerfusion::Tensor to_tensor(const oracle::Vec& v, std::vector<std::size_t> dims) {
    std::vector<float> f(v.begin(), v.end());
    return layerfusion::Tensor(std::move(dims), std::move(f));
}

inline layerfusion::Tensor to_tensor(const oracle::Map& m) {
    return to_tensor(m.p, {m.heads, m.queries, m.keys});
}

// Rounds the oracle map to float32 first so the library and the oracle see
// identical inputs.
inline oracle::Map as_float(oracle::Map m) {
    for (double& v : m.p) v = static_cast<float>(v);
    return m;
}

inline layerfusion::Tensor random_tensor(std::mt19937_64& gen, std::vector<std::size_t> dims,
                                         float lo = -1.0f, float hi = 1.0f) {
    layerfusion::Tensor t(std::move(dims));
    std::uniform_real_distribution<float> u(lo, hi);
    for (float& v : t.values()) v = u(gen);
    return t;
}

inline oracle::Vec to_vec(const layerfusion::Tensor& t) { return {t.vec().begin(), t.vec().end()}; }

/// Fresh, empty scratch directory under the system temp dir.
inline fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("layerfusion_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

inline bool updating_goldens() {
    const char* v = std::getenv("LAYERFUSION_UPDATE_GOLDEN");
    return v && std::string(v) == "1";
}

inline fs::path golden_path(const std::string& name) { return fs::path(LF_GOLDEN_DIR) / name; }

/// Loads a frozen golden tensor; with LAYERFUSION_UPDATE_GOLDEN=1 the value
/// is (re)written first.
inline layerfusion::Tensor golden_tensor(const std::string& name, const layerfusion::Tensor& current) {
    if (updating_goldens()) layerfusion::io::write_tensor(golden_path(name), current);
    return layerfusion::io::read_tensor(golden_path(name));
}

}  // namespace lftest
