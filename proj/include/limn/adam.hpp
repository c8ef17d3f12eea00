#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "limn/params.hpp"

namespace limn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
};

// Bias-corrected Adam. Parameters without an accumulated gradient are treated
// as having a zero gradient.
class Adam {
 public:
  explicit Adam(AdamConfig config = {});
  explicit Adam(AdamState state) : state_(std::move(state)) {}

  // Throws TrainingError naming the first parameter with a non-finite gradient;
  // in that case no parameter is modified.
  void step(ParamStore& params);

  void set_lr(double lr) { state_.config.lr = lr; }
  double lr() const { return state_.config.lr; }
  const AdamState& state() const { return state_; }

 private:
  AdamState state_;
};

}  // namespace limn
