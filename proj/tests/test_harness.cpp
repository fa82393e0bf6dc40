#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "abn/checkpoint.hpp"
#include "abn/config.hpp"
#include "abn/data.hpp"
#include "abn/optim.hpp"
#include "abn/trainer.hpp"
#include "doctest.h"

using namespace abn;

namespace {

RunConfig tiny_config(Variant v) {
  RunConfig c = parse_config(
      "layers = 2\nhidden = 5\nd_e = 3\nd_a = 3\nvocab = 4\nfeatures = 6\n"
      "train_utterances = 12\ndev_utterances = 6\nmax_frames = 120\nepochs = 3\nlr = 0.01\n"
      "min_tokens = 2\nmax_tokens = 4\n");
  c.model.variants = {v};
  return c;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("abn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("make_batches follows max_frames / L_max") {
  CHECK(make_batches({2500, 2400, 100}, 5000) == std::vector<std::size_t>{2, 1});
  CHECK(make_batches({5000}, 5000) == std::vector<std::size_t>{1});
  CHECK(make_batches(std::vector<std::size_t>(7, 1000), 5000) == std::vector<std::size_t>{5, 2});
  CHECK(make_batches({}, 10).empty());
  // floor, not round: 5000 / 1900 = 2.63 -> 2
  CHECK(make_batches({1900, 1900, 1900}, 5000) == std::vector<std::size_t>{2, 1});
}

TEST_CASE("make_batches rejects bad input") {
  CHECK_THROWS_AS(make_batches({5001, 10}, 5000), ContractError);
  CHECK_THROWS_AS(make_batches({10, 20}, 5000), ContractError);
  try {
    make_batches({6000, 30}, 5000);
    FAIL("expected a ContractError");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("6000") != std::string::npos);
  }
}

TEST_CASE("make_batches keeps order and the frame budget") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> lengths(1 + rng() % 60);
    for (auto& l : lengths) l = 1 + rng() % 300;
    std::sort(lengths.rbegin(), lengths.rend());
    const std::size_t max_frames = 300 + rng() % 2000;
    std::size_t at = 0;
    for (std::size_t n : make_batches(lengths, max_frames)) {
      CHECK(n >= 1);
      CHECK(n * lengths[at] <= max_frames);
      at += n;
    }
    CHECK(at == lengths.size());
  }
}

TEST_CASE("adam_step examples") {
  Tensor p = Tensor::filled({3}, 0.5);
  std::vector<Tensor*> params{&p};
  AdamState s = AdamState::for_params(params);
  adam_step(params, {Tensor::ones({3})}, s, 1e-4);
  for (double v : p.data()) CHECK(v == doctest::Approx(0.5 - 1e-4).epsilon(1e-9));

  Tensor q = Tensor::vector({1.0, -2.0});
  std::vector<Tensor*> qp{&q};
  AdamState z = AdamState::for_params(qp);
  for (int i = 0; i < 5; ++i) adam_step(qp, {Tensor::zeros({2})}, z, 1e-3);
  CHECK(q == Tensor::vector({1.0, -2.0}));

  Tensor a = Tensor::zeros({2}), b = Tensor::zeros({2});
  std::vector<Tensor*> pa{&a}, pb{&b};
  AdamState sa = AdamState::for_params(pa), sb = AdamState::for_params(pb);
  adam_step(pa, {Tensor::vector({0.3, -2.0})}, sa, 1e-2);
  adam_step(pb, {Tensor::vector({-0.3, 2.0})}, sb, 1e-2);
  CHECK(a[0] == -b[0]);
  CHECK(a[1] == -b[1]);
}

TEST_CASE("adam_step matches a scalar reference over several steps") {
  Tensor p = Tensor::vector({0.2});
  std::vector<Tensor*> params{&p};
  AdamState s = AdamState::for_params(params);
  double theta = 0.2, m = 0.0, v = 0.0;
  const double grads[] = {0.5, -1.5, 0.25, 3.0};
  for (int t = 1; t <= 4; ++t) {
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    theta -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    adam_step(params, {Tensor::vector({g})}, s, 0.01);
    CHECK(p[0] == doctest::Approx(theta).epsilon(1e-14));
  }
}

TEST_CASE("lr_schedule thresholds") {
  CHECK(lr_schedule({10.0, 9.9}) == LrAction::keep);
  CHECK(lr_schedule({10.0, 9.97}) == LrAction::halve);
  CHECK(lr_schedule({10.0, 9.999}) == LrAction::stop);
  CHECK(lr_schedule({10.0, 11.0}) == LrAction::stop);
  CHECK(lr_schedule({5.0, 10.0, 9.9}) == LrAction::keep);
  CHECK_THROWS_AS(lr_schedule({0.0, 1.0}), ContractError);
  CHECK_THROWS_AS(lr_schedule({-1.0, 1.0}), ContractError);
  CHECK_THROWS_AS(lr_schedule({1.0}), ContractError);
}

TEST_CASE("config parsing") {
  const RunConfig d = parse_config("");
  CHECK(d.train.max_frames_per_batch == 5000);
  CHECK(d.train.initial_lr == 1e-4);
  CHECK(d.train.halve_threshold == 0.004);
  CHECK(d.train.stop_threshold == 0.0005);
  CHECK(d.train.adam_beta1 == 0.9);
  CHECK(d.train.adam_beta2 == 0.999);
  CHECK(d.train.adam_epsilon == 1e-8);
  CHECK(d.model.hidden == 64);
  CHECK(d.model.input_dim == 16);
  CHECK(d.model.vocab == 12);

  const RunConfig c = parse_config("# comment\n  hidden = 8   # trailing\nvariant = abn-f, abn-u\nlr=0.5\n");
  CHECK(c.model.hidden == 8);
  CHECK(c.model.variants == std::vector<Variant>{Variant::abn_frame, Variant::abn_utt});
  CHECK(c.train.initial_lr == 0.5);

  CHECK_THROWS_AS(parse_config("hiden = 8\n"), ContractError);
  CHECK_THROWS_AS(parse_config("hidden = 8\nhidden = 9\n"), ContractError);
  CHECK_THROWS_AS(parse_config("hidden 8\n"), ContractError);
  CHECK_THROWS_AS(parse_config("hidden = eight\n"), ContractError);
  CHECK_THROWS_AS(parse_config("variant = lstm\n"), ContractError);
  CHECK_THROWS_AS(parse_config("stop_threshold = 0.01\n"), ContractError);
  try {
    parse_config("layers = 2\nbogus = 1\n");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    CHECK(std::string(e.what()).find("bogus") != std::string::npos);
  }
}

TEST_CASE("config text roundtrip") {
  RunConfig c = parse_config("variant = abn-u,bn\nlr = 0.00123\nnoise = 0.7\nseed = 99\n");
  const RunConfig back = parse_config(to_config_text(c));
  CHECK(to_config_text(back) == to_config_text(c));
  CHECK(back.train.initial_lr == 0.00123);
}

TEST_CASE("synthetic rendering") {
  SyntheticTask task;
  task.noise = 0.0;
  Rng rng(1);
  const Tensor x = render_tokens(task, {3}, {3}, rng);
  const Tensor tpl = token_template(task, 3);
  CHECK(x.rows() == 3);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t f = 0; f < task.features; ++f) CHECK(x.at(t, f) == tpl[f]);
  CHECK(max_abs_diff(token_template(task, 3), token_template(task, 4)) > 0.1);
  CHECK_THROWS_AS(token_template(task, 0), ContractError);
}

TEST_CASE("synth_generate is deterministic and well formed") {
  SyntheticTask task;
  const Dataset a = synth_generate(task, 40, 5);
  const Dataset b = synth_generate(task, 40, 5);
  const Dataset c = synth_generate(task, 40, 6);
  std::size_t differing = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].features == b[i].features);
    CHECK(a[i].labels == b[i].labels);
    if (a[i].labels != c[i].labels) ++differing;
    CHECK(a[i].labels.size() >= task.min_tokens);
    CHECK(a[i].labels.size() <= task.max_tokens);
    CHECK(a[i].features.rows() >= a[i].labels.size() * task.min_token_frames);
    CHECK(a[i].features.rows() <= a[i].labels.size() * task.max_token_frames);
    for (std::size_t k = 0; k < a[i].labels.size(); ++k) {
      CHECK(a[i].labels[k] >= 1);
      CHECK(a[i].labels[k] < task.vocab);
      if (k) CHECK(a[i].labels[k] != a[i].labels[k - 1]);
    }
  }
  CHECK(differing >= 38);
}

TEST_CASE("synth_generate ignores the thread count") {
  SyntheticTask task;
  const char* old = std::getenv("ABN_DETERMINISTIC");
  const std::string saved = old ? old : "";
  setenv("ABN_DETERMINISTIC", "1", 1);
  const Dataset single = synth_generate(task, 25, 8);
  setenv("ABN_DETERMINISTIC", "0", 1);
  const Dataset multi = synth_generate(task, 25, 8);
  if (old)
    setenv("ABN_DETERMINISTIC", saved.c_str(), 1);
  else
    unsetenv("ABN_DETERMINISTIC");
  for (std::size_t i = 0; i < 25; ++i) CHECK(single[i].features == multi[i].features);
}

TEST_CASE("metrics rows are formatted in a fixed layout") {
  CHECK(std::string(kMetricsHeader) == "epoch,split,loss,ter,lr,wall_s");
  CHECK(format_metrics_row({3, "dev", 0.5, 0.25, 0.001, 1.5}) == "3,dev,0.5,0.25,0.001,1.500");
}

TEST_CASE("checkpoint roundtrip is bit exact") {
  for (Variant v : {Variant::bn, Variant::abn_frame, Variant::abn_utt}) {
    RunConfig cfg = tiny_config(v);
    AcousticModel m = AcousticModel::create(cfg.model, 11);
    Rng rng(4);
    for (auto& p : m.parameters())
      for (double& x : p.tensor->data()) x = gaussian(rng) / 3.0;
    for (auto& b : m.buffers())
      for (double& x : b.tensor->data()) x = 0.5 + uniform01(rng);
    Checkpoint ck = parse_checkpoint(checkpoint_text(m, cfg));
    auto a = m.parameters(), b = ck.model.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i].tensor == *b[i].tensor);
    auto ab = m.buffers(), bb = ck.model.buffers();
    for (std::size_t i = 0; i < ab.size(); ++i) CHECK(*ab[i].tensor == *bb[i].tensor);

    const Dataset dev = make_dev_set(cfg);
    const SequenceBatch batch = assemble_batch(dev, {0, 1, 2});
    const SequenceBatch y1 = stack_forward(m, batch, {Mode::infer, nullptr});
    const SequenceBatch y2 = stack_forward(ck.model, batch, {Mode::infer, nullptr});
    CHECK(y1.data == y2.data);
  }
}

TEST_CASE("checkpoint errors") {
  RunConfig cfg = tiny_config(Variant::abn_frame);
  AcousticModel m = AcousticModel::create(cfg.model, 1);
  const std::string text = checkpoint_text(m, cfg);

  auto message = [](const std::string& t, const std::optional<ModelConfig>& expected = {}) {
    try {
      parse_checkpoint(t, expected);
    } catch (const CheckpointError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };

  std::string bad_version = text;
  bad_version.replace(0, bad_version.find('\n'), "abn-checkpoint 7");
  CHECK(message(bad_version).find("version 7") != std::string::npos);
  CHECK(message("garbage\n").find("bad header") != std::string::npos);

  // Drop the end marker and the last line of values.
  const std::string cut = text.substr(0, text.rfind("end\n") - 4);
  CHECK(message(cut).find("layer1.bn.running_var") != std::string::npos);

  std::string reshaped = text;
  const auto at = reshaped.find("tensor layer0.fwd.w_h 2 20 5");
  REQUIRE(at != std::string::npos);
  reshaped.replace(at, 28, "tensor layer0.fwd.w_h 2 5 20");
  CHECK(message(reshaped).find("layer0.fwd.w_h") != std::string::npos);

  ModelConfig wants_bn = cfg.model;
  wants_bn.variants = {Variant::bn};
  const std::string err = message(text, wants_bn);
  CHECK(err.find("abn-f") != std::string::npos);
  CHECK(err.find("bn was requested") != std::string::npos);
  CHECK(message(text, cfg.model) == "no error");
}

TEST_CASE("training runs, writes metrics and a loadable checkpoint") {
  const auto dir = scratch_dir("train");
  RunConfig cfg = tiny_config(Variant::abn_utt);
  TrainOptions opts;
  opts.out_dir = dir.string();
  const TrainResult r = train(cfg, opts);
  CHECK(r.epochs_run >= 2);
  CHECK(r.rows.size() == 2 * r.epochs_run);
  const std::string csv = read_file(dir / "metrics.csv");
  CHECK(csv.rfind("epoch,split,loss,ter,lr,wall_s\n", 0) == 0);
  CHECK(csv.find("1,train,") != std::string::npos);
  CHECK(csv.find("1,dev,") != std::string::npos);
  Checkpoint ck = load_checkpoint((dir / "model.ckpt").string(), cfg.model);
  const EvalResult e = evaluate(ck.model, make_dev_set(cfg), cfg.train.max_frames_per_batch);
  CHECK(e.loss == doctest::Approx(r.final_dev.loss).epsilon(1e-12));
  std::filesystem::remove_all(dir);
}

TEST_CASE("training is reproducible for a fixed seed") {
  RunConfig cfg = tiny_config(Variant::abn_frame);
  const TrainResult a = train(cfg);
  const TrainResult b = train(cfg);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].loss == b.rows[i].loss);
    CHECK(a.rows[i].ter == b.rows[i].ter);
    CHECK(a.rows[i].lr == b.rows[i].lr);
  }
}

TEST_CASE("batch_ctc_loss averages feasible utterances") {
  const BatchLayout layout = BatchLayout::from_lengths({3, 1});
  Rng rng(2);
  const Tensor logits = gaussian_tensor({layout.rows(), 3}, rng);
  const LabelSequence l0{1, 2}, l1{1, 1};  // l1 cannot fit one frame
  const BatchLoss bl = batch_ctc_loss(logits, layout, {&l0, &l1});
  CHECK(bl.used == 1);
  CHECK(bl.infeasible == 1);
  Tensor u0({3, 3});
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t k = 0; k < 3; ++k) u0.at(t, k) = logits.at(layout.row(t, 0), k);
  CHECK(bl.loss.value().item() == doctest::Approx(ctc_loss_value(u0, l0).loss).epsilon(1e-14));
}
