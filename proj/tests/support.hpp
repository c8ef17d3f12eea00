#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "limn/ops.hpp"
#include "limn/rng.hpp"
#include "limn/tensor.hpp"

namespace limn::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = uniform(rng, lo, hi);
  return t;
}

// sum(x .* w) as a 1 x 1 tensor: a scalar probe with non-symmetric weights.
inline Tensor probe(Graph& g, const Tensor& x, const Tensor& w) {
  Tensor flat = ops::reshape(g, x, {1, x.size()});
  return ops::matmul(g, flat, ops::reshape(g, w, {w.size(), 1}));
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("limn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace limn::testing
