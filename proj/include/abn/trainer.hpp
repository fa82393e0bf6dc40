#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "abn/config.hpp"
#include "abn/data.hpp"
#include "abn/optim.hpp"
#include "abn/recurrent.hpp"

namespace abn {

// Mean CTC loss over the utterances of a batch, from time-major logits.
// Utterances whose labels cannot fit their frames are left out and counted.
struct BatchLoss {
  Var loss;
  std::size_t used = 0;
  std::size_t infeasible = 0;
};
BatchLoss batch_ctc_loss(const Var& logits, const BatchLayout& layout,
                         const std::vector<const LabelSequence*>& labels);

// Greedy hypotheses per utterance from time-major logits.
std::vector<LabelSequence> decode_batch(const Tensor& logits, const BatchLayout& layout);

struct EvalResult {
  double loss = 0.0;  // mean per utterance
  double ter = 0.0;   // total edits / total reference tokens
  std::size_t utterances = 0;
};

EvalResult evaluate(AcousticModel& model, const Dataset& data, std::size_t max_frames);

// Consecutive index groups of the length-sorted dataset.
std::vector<std::vector<std::size_t>> plan_batches(const Dataset& data, std::size_t max_frames);

struct MetricsRow {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double ter = 0.0;
  double lr = 0.0;
  double wall_s = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,split,loss,ter,lr,wall_s";
std::string format_metrics_row(const MetricsRow& row);

struct TrainResult {
  std::vector<MetricsRow> rows;
  std::size_t epochs_run = 0;
  bool stopped_by_schedule = false;
  EvalResult final_dev;
  AcousticModel model;
};

struct TrainOptions {
  std::optional<std::string> out_dir;  // metrics.csv and model.ckpt go here
  std::ostream* log = nullptr;         // one progress line per epoch
};

TrainResult train(const RunConfig& config, const TrainOptions& options = {});

// Train and dev sets of a run; both share the task's token templates.
Dataset make_train_set(const RunConfig& config);
Dataset make_dev_set(const RunConfig& config);

}  // namespace abn
