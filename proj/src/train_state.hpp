#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace despeckler {

/// Optimizer and loop counters needed to resume training exactly.
template <typename T>
struct TrainState {
  std::uint64_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;   // completed optimizer steps
  double best_val_psnr = -std::numeric_limits<double>::infinity();
  std::string config_text;  // resolved TrainConfig the run was started with
  // Adam moments, parallel to the model's parameter list.
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

}  // namespace despeckler
