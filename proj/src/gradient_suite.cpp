#include "abn/gradient_suite.hpp"

#include <algorithm>

#include "abn/ctc.hpp"
#include "abn/gradcheck.hpp"
#include "abn/recurrent.hpp"
#include "abn/trainer.hpp"

namespace abn {

double worst(const std::vector<GradCheckResult>& results) {
  double w = 0.0;
  for (const auto& r : results) w = std::max(w, r.max_error);
  return w;
}

namespace {

// Weighted sum so the loss depends on every output coordinate.
Var project(const Var& y) {
  Rng r(7);
  return sum(mul(y, Var(uniform_tensor(y.shape(), r, 0.5, 1.5))));
}

SequenceBatch random_batch(Rng& rng, const std::vector<std::size_t>& lengths, std::size_t p) {
  std::vector<Tensor> parts;
  for (auto len : lengths) parts.push_back(gaussian_tensor({len, p}, rng, 1.5));
  return SequenceBatch::from_utterances(parts);
}

LabelSequence random_labels(Rng& rng, std::size_t length, std::size_t vocab) {
  LabelSequence out;
  while (out.size() < length) {
    const std::size_t tok = 1 + static_cast<std::size_t>(rng() % (vocab - 1));
    if (out.empty() || tok != out.back()) out.push_back(tok);
  }
  return out;
}

}  // namespace

std::vector<GradCheckResult> operation_gradient_checks(std::uint64_t seed) {
  std::vector<GradCheckResult> out;
  auto run = [&](const std::string& name, const ScalarBuilder& f, const Tensor& theta) {
    out.push_back({name, check_gradient(f, theta)});
  };
  Rng rng(seed);
  const Tensor a = uniform_tensor({3, 4}, rng, -1.5, 1.5);
  const Tensor b = uniform_tensor({4, 2}, rng, -1.5, 1.5);
  const Tensor w = uniform_tensor({5, 4}, rng, -1.5, 1.5);
  const Tensor bias = uniform_tensor({5}, rng, -1, 1);
  const Tensor row = uniform_tensor({4}, rng, 0.5, 1.5);
  const Tensor probe = uniform_tensor({3, 4}, rng, -1.5, 1.5);
  const std::vector<double> wts{1.0, 0.0, 1.0};
  const std::vector<unsigned char> pick{1, 0, 1};
  const std::vector<std::size_t> idx{2, 0, 2, 1};
  const std::vector<std::size_t> row_lengths{4, 1, 2};

  run("matmul/a", [&](const Var& x) { return project(matmul(x, b)); }, a);
  run("matmul/b", [&](const Var& x) { return project(matmul(Var(a), x)); }, b);
  run("matmul_nt/a", [&](const Var& x) { return project(matmul_nt(x, w)); }, a);
  run("matmul_nt/b", [&](const Var& x) { return project(matmul_nt(Var(a), x)); }, w);
  run("affine/x", [&](const Var& x) { return project(affine(x, w, bias)); }, a);
  run("affine/w", [&](const Var& x) { return project(affine(Var(a), x, bias)); }, w);
  run("affine/b", [&](const Var& x) { return project(affine(Var(a), w, x)); }, bias);
  run("add", [&](const Var& x) { return project(add(x, probe)); }, a);
  run("sub", [&](const Var& x) { return project(sub(probe, x)); }, a);
  run("mul", [&](const Var& x) { return project(mul(x, probe)); }, a);
  run("scale", [&](const Var& x) { return project(scale(x, -2.5)); }, a);
  run("add_row", [&](const Var& x) { return project(add_row(Var(a), x)); }, row);
  run("mul_row", [&](const Var& x) { return project(mul_row(Var(a), x)); }, row);
  run("sub_row", [&](const Var& x) { return project(sub_row(Var(a), x)); }, row);
  run("sigmoid", [&](const Var& x) { return project(sigmoid(x)); }, a);
  run("tanh", [&](const Var& x) { return project(tanh(x)); }, a);
  run("square", [&](const Var& x) { return project(square(x)); }, a);
  run("inv_sqrt", [&](const Var& x) { return project(inv_sqrt(x, 1e-5)); }, row);
  run("log", [&](const Var& x) { return project(log(x)); }, row);
  run("row_mean", [&](const Var& x) { return project(row_mean(x)); }, a);
  run("weighted_column_mean", [&](const Var& x) { return project(weighted_column_mean(x, wts)); }, a);
  run("scale_rows", [&](const Var& x) { return project(scale_rows(x, wts)); }, a);
  run("select_rows", [&](const Var& x) { return project(select_rows(pick, x, Var(probe))); }, a);
  run("reshape", [&](const Var& x) { return project(reshape(x, {2, 6})); }, a);
  run("transpose", [&](const Var& x) { return project(transpose(x)); }, a);
  run("slice_rows", [&](const Var& x) { return project(slice_rows(x, 1, 2)); }, a);
  run("slice_cols", [&](const Var& x) { return project(slice_cols(x, 1, 2)); }, a);
  run("concat_rows", [&](const Var& x) {
    const std::vector<Var> parts{x, Var(probe), x};
    return project(concat_rows(parts));
  }, a);
  run("concat_cols", [&](const Var& x) {
    const std::vector<Var> parts{Var(probe), x};
    return project(concat_cols(parts));
  }, a);
  run("gather_rows", [&](const Var& x) { return project(gather_rows(x, idx)); }, a);
  run("masked_softmax", [&](const Var& x) { return project(masked_softmax(x, 3)); }, a);
  run("masked_softmax/rows", [&](const Var& x) { return project(masked_softmax(x, row_lengths)); }, a);

  // Normalization on a padded batch.
  const std::size_t p = 6;
  const SequenceBatch batch = random_batch(rng, {5, 3}, p);
  const BatchLayout layout = batch.layout();
  const Tensor rows = batch.time_major();
  const Tensor gamma = uniform_tensor({p}, rng, 0.5, 1.5);
  const Tensor beta = uniform_tensor({p}, rng, -0.5, 0.5);
  auto bn_loss = [&](const Var& x, const Var& g, const Var& be) {
    BatchNormState st = BatchNormState::fresh(p);
    return project(tanh(bn_forward(x, layout, st, g, be, Mode::train)));
  };
  run("bn_forward/x", [&](const Var& x) { return bn_loss(x, gamma, beta); }, rows);
  run("bn_forward/gamma", [&](const Var& g) { return bn_loss(rows, g, beta); }, gamma);
  run("bn_forward/beta", [&](const Var& be) { return bn_loss(rows, gamma, be); }, beta);

  // Attentive normalization, generators with nonzero output maps.
  FrameAbnGenerator fg = init_frame_generator(p, 3, rng);
  fg.w_gamma = uniform_tensor({p, 3}, rng, -0.8, 0.8);
  fg.w_beta = uniform_tensor({p, 3}, rng, -0.8, 0.8);
  fg.b_e = uniform_tensor({3}, rng, -0.5, 0.5);
  UttAbnGenerator ug = init_utt_generator(p, 3, rng);
  ug.w_gamma = uniform_tensor({p, 3}, rng, -0.8, 0.8);
  ug.w_beta = uniform_tensor({p, 3}, rng, -0.8, 0.8);
  auto abn_loss = [&](const AbnParams& params, const Var& x) {
    BatchNormState st = BatchNormState::fresh(p);
    return project(tanh(abn_forward(x, layout, st, params, Mode::train)));
  };
  auto frame_params_with = [&](std::size_t k, const Var& v) {
    AbnParams params{Variant::abn_frame, {}, {}, as_constants(fg), std::nullopt};
    FrameAbnVars& g = *params.frame;
    Var* slots[] = {&g.w_e, &g.b_e, &g.w_gamma, &g.b_gamma, &g.w_beta, &g.b_beta};
    if (k < 6) *slots[k] = v;
    return params;
  };
  auto utt_params_with = [&](std::size_t k, const Var& v) {
    AbnParams params{Variant::abn_utt, {}, {}, std::nullopt, as_constants(ug)};
    UttAbnVars& g = *params.utt;
    Var* slots[] = {&g.w_k, &g.w_q, &g.w_v, &g.w_gamma, &g.b_gamma, &g.w_beta, &g.b_beta};
    if (k < 7) *slots[k] = v;
    return params;
  };
  run("abn_frame/x", [&](const Var& x) { return abn_loss(frame_params_with(99, Var()), x); }, rows);
  run("abn_utt/x", [&](const Var& x) { return abn_loss(utt_params_with(99, Var()), x); }, rows);
  const char* frame_names[] = {"w_e", "b_e", "w_gamma", "b_gamma", "w_beta", "b_beta"};
  const Tensor* frame_tensors[] = {&fg.w_e, &fg.b_e, &fg.w_gamma, &fg.b_gamma, &fg.w_beta, &fg.b_beta};
  for (std::size_t k = 0; k < 6; ++k)
    run(std::string("abn_frame/") + frame_names[k],
        [&](const Var& v) { return abn_loss(frame_params_with(k, v), rows); }, *frame_tensors[k]);
  const char* utt_names[] = {"w_k", "w_q", "w_v", "w_gamma", "b_gamma", "w_beta", "b_beta"};
  const Tensor* utt_tensors[] = {&ug.w_k, &ug.w_q, &ug.w_v, &ug.w_gamma, &ug.b_gamma, &ug.w_beta, &ug.b_beta};
  for (std::size_t k = 0; k < 7; ++k)
    run(std::string("abn_utt/") + utt_names[k],
        [&](const Var& v) { return abn_loss(utt_params_with(k, v), rows); }, *utt_tensors[k]);

  // LSTM cell and bidirectional layer.
  const std::size_t n = 4;
  const LstmLayerParams lp = init_lstm_params(n, p, rng);
  const LstmLayerParams lq = init_lstm_params(n, p, rng);
  const Tensor x0 = uniform_tensor({2, p}, rng, -1, 1);
  const Tensor h0 = uniform_tensor({2, n}, rng, -0.9, 0.9);
  const Tensor c0 = uniform_tensor({2, n}, rng, -2, 2);
  auto step_loss = [&](const Var& x, const Var& h, const Var& c, const LstmVars& prm) {
    const LstmState s = lstm_step(x, {h, c}, prm);
    return add(project(s.h), project(s.c));
  };
  run("lstm_step/x", [&](const Var& v) { return step_loss(v, h0, c0, as_constants(lp)); }, x0);
  run("lstm_step/h", [&](const Var& v) { return step_loss(x0, v, c0, as_constants(lp)); }, h0);
  run("lstm_step/c", [&](const Var& v) { return step_loss(x0, h0, v, as_constants(lp)); }, c0);
  const char* lstm_names[] = {"w_x", "w_h", "bias", "w_co"};
  const Tensor* lstm_tensors[] = {&lp.w_x, &lp.w_h, &lp.bias, &lp.w_co};
  for (std::size_t k = 0; k < 4; ++k) {
    auto with = [&](const Var& v) {
      LstmVars prm = as_constants(lp);
      Var* slots[] = {&prm.w_x, &prm.w_h, &prm.bias, &prm.w_co};
      *slots[k] = v;
      return prm;
    };
    run(std::string("lstm_step/") + lstm_names[k],
        [&](const Var& v) { return step_loss(x0, h0, c0, with(v)); }, *lstm_tensors[k]);
    run(std::string("bilstm_layer/fwd.") + lstm_names[k],
        [&](const Var& v) { return project(bilstm_layer(rows, layout, with(v), as_constants(lq))); },
        *lstm_tensors[k]);
  }
  run("bilstm_layer/x",
      [&](const Var& x) { return project(bilstm_layer(x, layout, as_constants(lp), as_constants(lq))); }, rows);

  // CTC.
  const Tensor logits = gaussian_tensor({6, 4}, rng);
  const LabelSequence labels{1, 3, 3};
  run("ctc_loss", [&](const Var& x) { return ctc_loss(x, labels); }, logits);
  run("ctc_loss/empty", [&](const Var& x) { return ctc_loss(x, {}); }, logits);
  return out;
}

std::vector<GradCheckResult> model_gradient_checks(const std::vector<Variant>& variants, std::uint64_t seed,
                                                   const std::vector<std::size_t>& frame_counts, double step) {
  ModelConfig cfg;
  cfg.num_layers = variants.size() > 1 ? variants.size() : 2;
  cfg.hidden = 4;
  cfg.input_dim = 6;
  cfg.vocab = 3;
  cfg.d_e = 3;
  cfg.d_a = 3;
  cfg.variants = variants;
  std::vector<GradCheckResult> out;
  for (std::size_t T : frame_counts) {
    Rng rng(mix_seed(seed, T));
    AcousticModel model = AcousticModel::create(cfg, mix_seed(seed, 100 + T));
    for (auto& layer : model.layers()) {
      const std::size_t p = layer.norm.feature_dim();
      if (layer.frame) {
        layer.frame->w_gamma = uniform_tensor({p, cfg.d_e}, rng, -0.5, 0.5);
        layer.frame->w_beta = uniform_tensor({p, cfg.d_e}, rng, -0.5, 0.5);
      }
      if (layer.utt) {
        layer.utt->w_gamma = uniform_tensor({p, cfg.d_a}, rng, -0.5, 0.5);
        layer.utt->w_beta = uniform_tensor({p, cfg.d_a}, rng, -0.5, 0.5);
      }
    }
    const std::vector<std::size_t> lengths{T, (T + 1) / 2};
    const SequenceBatch batch = random_batch(rng, lengths, cfg.input_dim);
    const BatchLayout layout = batch.layout();
    const Tensor features = batch.time_major();
    std::vector<LabelSequence> labels;
    for (auto len : lengths) labels.push_back(random_labels(rng, (len + 1) / 2, cfg.vocab));
    std::vector<const LabelSequence*> label_ptrs;
    for (const auto& l : labels) label_ptrs.push_back(&l);
    const std::uint64_t dropout_seed = mix_seed(seed, 1000 + T);

    for (const auto& param : model.parameters()) {
      auto loss = [&](const Var& v) {
        ParamBinding bind;
        bind.bind(*param.tensor, v);
        // Same dropout masks on every evaluation.
        Rng drop(dropout_seed);
        const Var logits = model.forward(Var(features), layout, bind, {Mode::train, &drop});
        return batch_ctc_loss(logits, layout, label_ptrs).loss;
      };
      out.push_back({"T=" + std::to_string(T) + " " + param.name, check_gradient(loss, *param.tensor, step, Stencil::extrapolated)});
    }
  }
  return out;
}

}  // namespace abn
