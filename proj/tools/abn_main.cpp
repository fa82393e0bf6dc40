// Command-line front end: training, evaluation, decoding and the
// verification routines.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "abn/checkpoint.hpp"
#include "abn/config.hpp"
#include "abn/errors.hpp"
#include "abn/gradient_suite.hpp"
#include "abn/trainer.hpp"

namespace {

using namespace abn;

std::string join(const LabelSequence& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? " " : "") + std::to_string(s[i]);
  return out;
}

int cmd_train(const std::string& config_path, const std::optional<std::string>& variant,
              const std::optional<std::uint64_t>& seed, const std::string& out_dir) {
  RunConfig cfg = load_config(config_path);
  if (variant) cfg.model.variants = {parse_variant(*variant)};
  if (seed) cfg.train.seed = *seed;
  cfg.validate();
  std::cout << "training " << to_string(cfg.model.variant(0)) << " seed " << cfg.train.seed << " -> " << out_dir
            << "\n";
  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.log = &std::cout;
  const TrainResult r = train(cfg, opts);
  std::cout << "finished after " << r.epochs_run << " epoch(s)"
            << (r.stopped_by_schedule ? " (stopped by schedule)" : "") << ": dev loss " << r.final_dev.loss
            << ", dev ter " << r.final_dev.ter << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& config_path) {
  const RunConfig cfg = load_config(config_path);
  Checkpoint ck = load_checkpoint(ckpt, cfg.model);
  const Dataset dev = make_dev_set(cfg);
  const EvalResult r = evaluate(ck.model, dev, cfg.train.max_frames_per_batch);
  std::cout << "utterances " << r.utterances << "\nloss " << r.loss << "\nter " << r.ter << "\n";
  return 0;
}

int cmd_decode(const std::string& ckpt, std::size_t count) {
  Checkpoint ck = load_checkpoint(ckpt);
  Dataset dev = make_dev_set(ck.config);
  if (dev.size() > count) dev.resize(count);
  for (std::size_t i = 0; i < dev.size(); ++i) {
    const SequenceBatch batch = assemble_batch(dev, {i});
    const SequenceBatch logits = stack_forward(ck.model, batch, {Mode::infer, nullptr});
    Tensor frames({batch.lengths[0], logits.features()});
    for (std::size_t t = 0; t < batch.lengths[0]; ++t)
      for (std::size_t k = 0; k < logits.features(); ++k) frames.at(t, k) = logits.at(0, t, k);
    const LabelSequence hyp = greedy_decode(frames);
    const ErrorRate er = token_error_rate(hyp, dev[i].labels);
    std::cout << "utt " << i << "  ref: " << join(dev[i].labels) << "  hyp: " << join(hyp) << "  edits "
              << er.distance << "\n";
  }
  return 0;
}

int cmd_gradcheck(const std::optional<std::string>& variant, std::uint64_t seed, double step, bool verbose) {
  std::vector<Variant> variants{Variant::bn, Variant::abn_frame, Variant::abn_utt};
  if (variant) variants = {parse_variant(*variant)};
  double max_err = 0.0;
  for (Variant v : variants) {
    const auto results = model_gradient_checks({v}, seed, {1, 2, 5, 7}, step);
    if (verbose)
      for (const auto& r : results) std::printf("  %-5s %-28s %.3e\n", to_string(v).data(), r.name.c_str(), r.max_error);
    std::printf("%-5s max relative error %.3e over %zu checks\n", to_string(v).data(), worst(results), results.size());
    max_err = std::max(max_err, worst(results));
  }
  std::printf("max relative error %.3e (tolerance %.0e)\n", max_err, kGradTolerance);
  return max_err < kGradTolerance ? 0 : 1;
}

int cmd_ctc_oracle(std::size_t max_t) {
  const OracleSweep s = ctc_oracle_sweep(max_t, {2, 3}, 3, 20240601);
  std::printf("cases %zu (infeasible on both sides %zu), max |diff| %.3e, mismatches %zu\n", s.cases, s.infeasible,
              s.max_abs_diff, s.mismatches);
  std::printf("%s\n", s.mismatches == 0 ? "PASS" : "FAIL");
  return s.mismatches == 0 ? 0 : 1;
}

int cmd_param_count(const std::string& config_path) {
  const RunConfig cfg = load_config(config_path);
  std::size_t total = 0;
  for (const auto& m : parameter_counts(cfg.model)) {
    std::printf("%-14s %zu\n", m.module.c_str(), m.count);
    total += m.count;
  }
  AcousticModel model = AcousticModel::create(cfg.model, 0);
  std::size_t actual = 0;
  for (const auto& p : model.parameters()) actual += p.tensor->size();
  std::printf("%-14s %zu\n", "total", total);
  if (actual != total) {
    std::fprintf(stderr, "instantiated model holds %zu parameters, formula gives %zu\n", actual, total);
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attentive batch normalization for BiLSTM-CTC models"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt;
  std::optional<std::string> variant;
  std::optional<std::uint64_t> seed;
  std::uint64_t grad_seed = 7;
  std::size_t max_t = 6, count = 5;
  double step = kModelFdStep;
  bool verbose = false;

  auto* train_cmd = app.add_subcommand("train", "train one model on the synthetic task");
  train_cmd->add_option("--config", config_path, "config file")->required();
  train_cmd->add_option("--variant", variant, "bn | abn-f | abn-u (overrides the config)");
  train_cmd->add_option("--seed", seed, "run seed (overrides the config)");
  train_cmd->add_option("--out-dir", out_dir, "directory for metrics.csv and model.ckpt")->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the dev set of a config");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--config", config_path, "config file")->required();

  auto* decode_cmd = app.add_subcommand("decode", "greedy-decode dev utterances with a checkpoint");
  decode_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  decode_cmd->add_option("--count", count, "number of utterances");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full model gradient");
  grad_cmd->add_option("--variant", variant, "bn | abn-f | abn-u (default: all)");
  grad_cmd->add_option("--seed", grad_seed, "seed");
  grad_cmd->add_option("--step", step, "finite-difference step");
  grad_cmd->add_flag("--verbose", verbose, "print every check");

  auto* oracle_cmd = app.add_subcommand("ctc-oracle", "compare CTC loss with path enumeration");
  oracle_cmd->add_option("--max-t", max_t, "longest input to enumerate (at most 8)");

  auto* count_cmd = app.add_subcommand("param-count", "closed-form parameter counts per module");
  count_cmd->add_option("--config", config_path, "config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(config_path, variant, seed, out_dir);
    if (*eval_cmd) return cmd_eval(ckpt, config_path);
    if (*decode_cmd) return cmd_decode(ckpt, count);
    if (*grad_cmd) return cmd_gradcheck(variant, grad_seed, step, verbose);
    if (*oracle_cmd) return cmd_ctc_oracle(max_t);
    if (*count_cmd) return cmd_param_count(config_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
