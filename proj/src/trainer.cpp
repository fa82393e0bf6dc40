#include "abn/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "abn/checkpoint.hpp"
#include "abn/errors.hpp"

namespace abn {

BatchLoss batch_ctc_loss(const Var& logits, const BatchLayout& layout,
                         const std::vector<const LabelSequence*>& labels) {
  if (labels.size() != layout.batch) throw ShapeError("one label sequence per utterance required");
  BatchLoss out;
  std::vector<Var> terms;
  for (std::size_t b = 0; b < layout.batch; ++b) {
    if (ctc_min_frames(*labels[b]) > layout.lengths[b]) {
      ++out.infeasible;
      continue;
    }
    std::vector<std::size_t> rows = layout.utterance_rows(b);
    rows.resize(layout.lengths[b]);
    terms.push_back(ctc_loss(gather_rows(logits, rows), *labels[b]));
  }
  if (terms.empty()) throw DomainError("no utterance in the batch has a feasible alignment");
  out.used = terms.size();
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  out.loss = scale(total, 1.0 / static_cast<double>(terms.size()));
  return out;
}

std::vector<LabelSequence> decode_batch(const Tensor& logits, const BatchLayout& layout) {
  std::vector<LabelSequence> out;
  const std::size_t V = logits.cols();
  for (std::size_t b = 0; b < layout.batch; ++b) {
    Tensor one({layout.lengths[b], V});
    for (std::size_t t = 0; t < layout.lengths[b]; ++t)
      for (std::size_t k = 0; k < V; ++k) one.at(t, k) = logits.at(layout.row(t, b), k);
    out.push_back(greedy_decode(one));
  }
  return out;
}

std::vector<std::vector<std::size_t>> plan_batches(const Dataset& data, std::size_t max_frames) {
  const std::vector<std::size_t> order = sort_by_length_desc(data);
  std::vector<std::size_t> lengths;
  for (auto i : order) lengths.push_back(data[i].features.rows());
  std::vector<std::vector<std::size_t>> out;
  std::size_t at = 0;
  for (std::size_t n : make_batches(lengths, max_frames)) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                     order.begin() + static_cast<std::ptrdiff_t>(at + n));
    at += n;
  }
  return out;
}

namespace {

struct Tally {
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::size_t edits = 0;
  std::size_t ref_tokens = 0;

  void add_decodes(const std::vector<LabelSequence>& hyps, const Dataset& data,
                   const std::vector<std::size_t>& idx) {
    for (std::size_t b = 0; b < idx.size(); ++b) {
      edits += edit_distance(hyps[b], data[idx[b]].labels);
      ref_tokens += data[idx[b]].labels.size();
    }
  }
  double loss() const { return loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0; }
  double ter() const { return ref_tokens ? static_cast<double>(edits) / static_cast<double>(ref_tokens) : 0.0; }
};

std::vector<const LabelSequence*> labels_of(const Dataset& data, const std::vector<std::size_t>& idx) {
  std::vector<const LabelSequence*> out;
  for (auto i : idx) out.push_back(&data[i].labels);
  return out;
}

}  // namespace

EvalResult evaluate(AcousticModel& model, const Dataset& data, std::size_t max_frames) {
  Tally tally;
  for (const auto& idx : plan_batches(data, max_frames)) {
    const SequenceBatch batch = assemble_batch(data, idx);
    const BatchLayout layout = batch.layout();
    ParamBinding bind;
    const Var logits = model.forward(Var(batch.time_major()), layout, bind, {Mode::infer, nullptr});
    const BatchLoss l = batch_ctc_loss(logits, layout, labels_of(data, idx));
    tally.loss_sum += l.loss.value().item() * static_cast<double>(l.used);
    tally.loss_count += l.used;
    tally.add_decodes(decode_batch(logits.value(), layout), data, idx);
  }
  return {tally.loss(), tally.ter(), data.size()};
}

std::string format_metrics_row(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%s,%.17g,%.17g,%.17g,%.3f", r.epoch, r.split.c_str(), r.loss, r.ter, r.lr,
                r.wall_s);
  return buf;
}

Dataset make_train_set(const RunConfig& config) {
  return synth_generate(config.task, config.train.train_utterances, mix_seed(config.train.data_seed, 0));
}

Dataset make_dev_set(const RunConfig& config) {
  return synth_generate(config.task, config.train.dev_utterances, mix_seed(config.train.data_seed, 1));
}

TrainResult train(const RunConfig& config, const TrainOptions& options) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  const TrainConfig& tc = config.train;
  const Dataset train_set = make_train_set(config);
  const Dataset dev_set = make_dev_set(config);
  std::vector<std::vector<std::size_t>> batches = plan_batches(train_set, tc.max_frames_per_batch);

  std::ofstream metrics;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    metrics.open(std::filesystem::path(*options.out_dir) / "metrics.csv");
    if (!metrics) throw ContractError("cannot write metrics in " + *options.out_dir);
    metrics << kMetricsHeader << "\n" << std::flush;
  }

  TrainResult result;
  result.model = AcousticModel::create(config.model, mix_seed(tc.seed, 0));
  AcousticModel& model = result.model;
  Rng rng(mix_seed(tc.seed, 1));
  std::vector<Tensor*> params;
  for (auto& p : model.parameters()) params.push_back(p.tensor);
  AdamState adam = AdamState::for_params(params);
  const AdamConfig adam_cfg{tc.adam_beta1, tc.adam_beta2, tc.adam_epsilon};
  double lr = tc.initial_lr;
  std::vector<double> history;

  auto emit = [&](const MetricsRow& row) {
    result.rows.push_back(row);
    if (metrics.is_open()) metrics << format_metrics_row(row) << "\n" << std::flush;
  };

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    // Batches keep their sorted composition; only the visiting order changes.
    for (std::size_t i = batches.size(); i > 1; --i) std::swap(batches[i - 1], batches[rng() % i]);
    Tally tally;
    for (const auto& idx : batches) {
      const SequenceBatch batch = assemble_batch(train_set, idx);
      const BatchLayout layout = batch.layout();
      Tape tape;
      ParamBinding bind(&tape);
      const Var logits = model.forward(Var(batch.time_major()), layout, bind, {Mode::train, &rng});
      const BatchLoss l = batch_ctc_loss(logits, layout, labels_of(train_set, idx));
      tape.backward(l.loss);
      std::vector<Tensor> grads;
      grads.reserve(params.size());
      for (Tensor* p : params) grads.push_back(bind.grad(*p));
      adam_step(params, grads, adam, lr, adam_cfg);
      tally.loss_sum += l.loss.value().item() * static_cast<double>(l.used);
      tally.loss_count += l.used;
      tally.add_decodes(decode_batch(logits.value(), layout), train_set, idx);
    }
    const EvalResult dev = evaluate(model, dev_set, tc.max_frames_per_batch);
    const double wall = elapsed();
    emit({epoch, "train", tally.loss(), tally.ter(), lr, wall});
    emit({epoch, "dev", dev.loss, dev.ter, lr, wall});
    result.final_dev = dev;
    result.epochs_run = epoch;
    if (options.log)
      *options.log << "epoch " << epoch << "  train loss " << tally.loss() << "  dev loss " << dev.loss
                   << "  dev ter " << dev.ter << "  lr " << lr << "  " << wall << "s\n"
                   << std::flush;

    history.push_back(tc.schedule_metric == ScheduleMetric::loss ? dev.loss : dev.ter);
    if (history.size() >= 2) {
      // A perfect previous score leaves nothing to improve on.
      const LrAction action = history[history.size() - 2] <= 0.0
                                  ? LrAction::stop
                                  : lr_schedule(history, tc.halve_threshold, tc.stop_threshold);
      if (action == LrAction::stop) {
        result.stopped_by_schedule = true;
        break;
      }
      if (action == LrAction::halve) lr *= 0.5;
    }
  }
  if (options.out_dir)
    save_checkpoint((std::filesystem::path(*options.out_dir) / "model.ckpt").string(), model, config);
  return result;
}

}  // namespace abn
