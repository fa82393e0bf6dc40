#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "abn/recurrent.hpp"

namespace abn {

// Synthetic token-sequence task standing in for a speech corpus: each token
// has a fixed feature template, rendered for a random number of frames with
// additive Gaussian noise.
struct SyntheticTask {
  std::size_t vocab = 12;  // including the blank, so tokens are 1 .. vocab-1
  std::size_t features = 16;
  std::size_t min_token_frames = 2;
  std::size_t max_token_frames = 5;
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 8;
  double noise = 0.3;
  std::uint64_t template_seed = 1234;

  void validate() const;
};

enum class ScheduleMetric { loss, ter };

struct TrainConfig {
  std::size_t max_frames_per_batch = 5000;
  double initial_lr = 1e-4;
  double halve_threshold = 0.004;
  double stop_threshold = 0.0005;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  ScheduleMetric schedule_metric = ScheduleMetric::loss;
  std::size_t train_utterances = 500;
  std::size_t dev_utterances = 100;
  std::uint64_t data_seed = 1;

  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SyntheticTask task;

  void validate() const;
};

// Flat `key = value` text; `#` starts a comment. Unknown keys, repeated keys
// and malformed values are errors naming the line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
// Canonical text form; parse_config(to_config_text(c)) reproduces c.
std::string to_config_text(const RunConfig& config);

std::string to_string(ScheduleMetric m);

}  // namespace abn
