#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "abn/tensor.hpp"

namespace abn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First and second moments per parameter tensor, plus the step count.
struct AdamState {
  std::vector<Tensor> m, v;
  std::size_t step = 0;

  static AdamState for_params(const std::vector<Tensor*>& params);
};

// One bias-corrected Adam update of every parameter in place.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state,
               double lr, const AdamConfig& config = {});

enum class LrAction { keep, halve, stop };
std::string to_string(LrAction a);

// Compares the last two entries of the dev metric history with
// r = (prev - curr) / prev.
LrAction lr_schedule(const std::vector<double>& history, double halve_threshold = 0.004,
                     double stop_threshold = 0.0005);

}  // namespace abn
