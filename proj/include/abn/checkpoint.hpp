#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "abn/config.hpp"
#include "abn/ctc.hpp"
#include "abn/recurrent.hpp"

namespace abn {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  RunConfig config;
  AcousticModel model;
};

// Text format: a version line, the blank index, the run configuration, then
// every parameter and running statistic as `name rank dims...` followed by
// its row-major values at 17 significant digits.
void save_checkpoint(const std::string& path, AcousticModel& model, const RunConfig& config);
std::string checkpoint_text(AcousticModel& model, const RunConfig& config);

// When `expected` is given, its model shape (variants, sizes) must match the
// stored one.
Checkpoint load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected = {});
Checkpoint parse_checkpoint(const std::string& text, const std::optional<ModelConfig>& expected = {});

}  // namespace abn
