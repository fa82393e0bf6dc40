#include "abn/recurrent.hpp"

#include <cmath>

namespace abn {

LstmLayerParams init_lstm_params(std::size_t hidden, std::size_t input, Rng& rng) {
  const double r = 1.0 / std::sqrt(static_cast<double>(hidden));
  LstmLayerParams p{uniform_tensor({4 * hidden, input}, rng, -r, r),
                    uniform_tensor({4 * hidden, hidden}, rng, -r, r), Tensor::zeros({4 * hidden}),
                    uniform_tensor({hidden}, rng, -r, r)};
  for (std::size_t j = hidden; j < 2 * hidden; ++j) p.bias[j] = 1.0;
  return p;
}

LstmVars as_constants(const LstmLayerParams& p) { return {p.w_x, p.w_h, p.bias, p.w_co}; }

std::size_t lstm_parameter_count(std::size_t hidden, std::size_t input) {
  return 4 * hidden * input + 4 * hidden * hidden + 4 * hidden + hidden;
}

LstmState zero_state(std::size_t batch, std::size_t hidden) {
  return {Var(Tensor::zeros({batch, hidden})), Var(Tensor::zeros({batch, hidden}))};
}

namespace {

// Gate nonlinearities given the summed pre-activations [batch x 4n].
LstmState lstm_cell(const Var& gates, const Var& c_prev, const Var& w_co) {
  const std::size_t n = w_co.value().size();
  Var i = sigmoid(slice_cols(gates, 0, n));
  Var f = sigmoid(slice_cols(gates, n, n));
  Var g = tanh(slice_cols(gates, 2 * n, n));
  Var c = add(mul(f, c_prev), mul(i, g));
  Var o = sigmoid(add(slice_cols(gates, 3 * n, n), mul_row(c, w_co)));
  return {mul(o, tanh(c)), c};
}

void check_lstm(const LstmVars& p, std::size_t input) {
  const std::size_t n = p.w_co.value().size();
  if (p.w_h.shape() != Shape{4 * n, n})
    throw ShapeError("recurrent matrix must be [4n x n], got " + shape_to_string(p.w_h.shape()));
  if (p.w_x.shape() != Shape{4 * n, input})
    throw ShapeError("input matrix " + shape_to_string(p.w_x.shape()) + " does not accept " +
                     std::to_string(input) + " features");
  if (p.bias.value().size() != 4 * n) throw ShapeError("gate bias must have 4n entries");
}

// Runs one direction; returns per-step outputs in time order.
std::vector<Var> run_direction(const Var& projected, const BatchLayout& layout, const LstmVars& p,
                               bool reverse) {
  const std::size_t n = p.w_co.value().size();
  LstmState state = zero_state(layout.batch, n);
  std::vector<Var> outputs(layout.frames);
  for (std::size_t k = 0; k < layout.frames; ++k) {
    const std::size_t t = reverse ? layout.frames - 1 - k : k;
    Var gates = add(slice_rows(projected, t * layout.batch, layout.batch),
                    matmul_nt(state.h, p.w_h));
    LstmState next = lstm_cell(gates, state.c, p.w_co);
    const auto mask = layout.step_mask(t);
    // Utterances outside their valid span keep their state untouched.
    state = {select_rows(mask, next.h, state.h), select_rows(mask, next.c, state.c)};
    outputs[t] = state.h;
  }
  return outputs;
}

}  // namespace

LstmState lstm_step(const Var& x_norm, const LstmState& prev, const LstmVars& params) {
  check_lstm(params, x_norm.value().cols());
  Var gates = add(affine(x_norm, params.w_x, params.bias), matmul_nt(prev.h, params.w_h));
  if (gates.value().rank() == 1) gates = reshape(gates, {1, gates.value().size()});
  return lstm_cell(gates, prev.c, params.w_co);
}

Var bilstm_layer(const Var& rows, const BatchLayout& layout, const LstmVars& fwd,
                 const LstmVars& bwd) {
  if (rows.value().rows() != layout.rows())
    throw ShapeError("bilstm_layer: input " + shape_to_string(rows.shape()) +
                     " does not match the batch layout");
  const std::size_t p = rows.value().cols();
  check_lstm(fwd, p);
  check_lstm(bwd, p);
  const std::vector<Var> f = run_direction(affine(rows, fwd.w_x, fwd.bias), layout, fwd, false);
  const std::vector<Var> b = run_direction(affine(rows, bwd.w_x, bwd.bias), layout, bwd, true);
  const std::vector<Var> halves{concat_rows(f), concat_rows(b)};
  return scale_rows(concat_cols(halves), layout.row_weights());
}

Variant ModelConfig::variant(std::size_t layer) const {
  if (variants.size() == 1) return variants[0];
  return variants.at(layer);
}

void ModelConfig::validate() const {
  if (num_layers < 1) throw ContractError("num_layers must be at least 1");
  if (hidden < 1 || input_dim < 1) throw ContractError("hidden and input dimensions must be positive");
  if (vocab < 2) throw ContractError("vocabulary needs the blank and at least one token");
  if (variants.size() != 1 && variants.size() != num_layers)
    throw ContractError("give one variant for all layers or one per layer");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("dropout must lie in [0, 1)");
  if (!(generator_dropout >= 0.0 && generator_dropout < 1.0))
    throw ContractError("generator dropout must lie in [0, 1)");
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::size_t p = layer_input(l);
    if (variant(l) == Variant::abn_frame && !(d_e > 0 && d_e < p))
      throw ContractError("layer " + std::to_string(l) + ": d_e=" + std::to_string(d_e) +
                          " must be below the layer input width " + std::to_string(p));
    if (variant(l) == Variant::abn_utt && !(d_a > 0 && d_a < p))
      throw ContractError("layer " + std::to_string(l) + ": d_a=" + std::to_string(d_a) +
                          " must be below the layer input width " + std::to_string(p));
  }
}

std::vector<ModuleCount> parameter_counts(const ModelConfig& config) {
  config.validate();
  std::vector<ModuleCount> out;
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    const std::size_t p = config.layer_input(l);
    switch (config.variant(l)) {
      case Variant::bn: out.push_back({prefix + "bn", 2 * p}); break;
      case Variant::abn_frame:
        out.push_back({prefix + "abn_f", frame_generator_parameter_count(p, config.d_e)});
        break;
      case Variant::abn_utt:
        out.push_back({prefix + "abn_u", utt_generator_parameter_count(p, config.d_a)});
        break;
    }
    out.push_back({prefix + "fwd", lstm_parameter_count(config.hidden, p)});
    out.push_back({prefix + "bwd", lstm_parameter_count(config.hidden, p)});
  }
  out.push_back({"output", config.vocab * 2 * config.hidden + config.vocab});
  return out;
}

Var ParamBinding::operator()(const Tensor& t) {
  auto it = bound_.find(&t);
  if (it != bound_.end()) return it->second;
  if (!tape_ || !tape_->recording()) return Var(t);
  Var v = tape_->variable(t);
  bound_.emplace(&t, v);
  return v;
}

Tensor ParamBinding::grad(const Tensor& t) const {
  auto it = bound_.find(&t);
  if (it == bound_.end() || !tape_) return Tensor::zeros(t.shape());
  return tape_->grad(it->second);
}

AcousticModel AcousticModel::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  AcousticModel m;
  m.config_ = config;
  Rng rng(seed);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::size_t p = config.layer_input(l);
    LayerParams layer{BatchNormState::fresh(p, config.bn_epsilon, config.bn_momentum),
                      std::nullopt, std::nullopt, init_lstm_params(config.hidden, p, rng),
                      init_lstm_params(config.hidden, p, rng)};
    if (config.variant(l) == Variant::abn_frame) layer.frame = init_frame_generator(p, config.d_e, rng);
    if (config.variant(l) == Variant::abn_utt) layer.utt = init_utt_generator(p, config.d_a, rng);
    m.layers_.push_back(std::move(layer));
  }
  const double r = 1.0 / std::sqrt(static_cast<double>(2 * config.hidden));
  m.out_w_ = uniform_tensor({config.vocab, 2 * config.hidden}, rng, -r, r);
  m.out_b_ = Tensor::zeros({config.vocab});
  return m;
}

std::vector<NamedTensor> AcousticModel::parameters() {
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    LayerParams& L = layers_[l];
    switch (config_.variant(l)) {
      case Variant::bn:
        out.push_back({prefix + "bn.gamma", &L.norm.gamma});
        out.push_back({prefix + "bn.beta", &L.norm.beta});
        break;
      case Variant::abn_frame: {
        auto& g = *L.frame;
        const std::string q = prefix + "abn_f.";
        out.insert(out.end(), {{q + "w_e", &g.w_e},
                               {q + "b_e", &g.b_e},
                               {q + "w_gamma", &g.w_gamma},
                               {q + "b_gamma", &g.b_gamma},
                               {q + "w_beta", &g.w_beta},
                               {q + "b_beta", &g.b_beta}});
        break;
      }
      case Variant::abn_utt: {
        auto& g = *L.utt;
        const std::string q = prefix + "abn_u.";
        out.insert(out.end(), {{q + "w_k", &g.w_k},
                               {q + "w_q", &g.w_q},
                               {q + "w_v", &g.w_v},
                               {q + "w_gamma", &g.w_gamma},
                               {q + "b_gamma", &g.b_gamma},
                               {q + "w_beta", &g.w_beta},
                               {q + "b_beta", &g.b_beta}});
        break;
      }
    }
    for (auto [dir, params] : {std::pair{"fwd.", &L.fwd}, std::pair{"bwd.", &L.bwd}}) {
      const std::string q = prefix + dir;
      out.insert(out.end(), {{q + "w_x", &params->w_x},
                             {q + "w_h", &params->w_h},
                             {q + "bias", &params->bias},
                             {q + "w_co", &params->w_co}});
    }
  }
  out.push_back({"output.w", &out_w_});
  out.push_back({"output.b", &out_b_});
  return out;
}

std::vector<NamedTensor> AcousticModel::buffers() {
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".bn.";
    out.push_back({prefix + "running_mean", &layers_[l].norm.running_mean});
    out.push_back({prefix + "running_var", &layers_[l].norm.running_var});
  }
  return out;
}

namespace {

LstmVars bind_lstm(const LstmLayerParams& p, ParamBinding& bind) {
  return {bind(p.w_x), bind(p.w_h), bind(p.bias), bind(p.w_co)};
}

}  // namespace

Var AcousticModel::forward(const Var& features, const BatchLayout& layout, ParamBinding& bind,
                           const ForwardOptions& options) {
  if (features.value().cols() != config_.input_dim)
    throw ShapeError("model expects " + std::to_string(config_.input_dim) + " features, got " +
                     shape_to_string(features.shape()));
  const bool train = options.mode == Mode::train;
  if (train && !options.rng && (config_.dropout > 0.0 || config_.generator_dropout > 0.0))
    throw ContractError("train mode with dropout needs a random generator");
  Var x = features;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    LayerParams& L = layers_[l];
    AbnParams norm;
    norm.variant = config_.variant(l);
    if (norm.variant == Variant::bn) {
      norm.gamma = bind(L.norm.gamma);
      norm.beta = bind(L.norm.beta);
    } else if (norm.variant == Variant::abn_frame) {
      const auto& g = *L.frame;
      norm.frame = FrameAbnVars{bind(g.w_e),    bind(g.b_e),     bind(g.w_gamma),
                                bind(g.b_gamma), bind(g.w_beta), bind(g.b_beta)};
    } else {
      const auto& g = *L.utt;
      norm.utt = UttAbnVars{bind(g.w_k),     bind(g.w_q),    bind(g.w_v),   bind(g.w_gamma),
                            bind(g.b_gamma), bind(g.w_beta), bind(g.b_beta)};
    }
    GeneratorDropout gd{train ? config_.generator_dropout : 0.0, options.rng};
    Var normalized = abn_forward(x, layout, L.norm, norm, options.mode, gd);
    x = bilstm_layer(normalized, layout, bind_lstm(L.fwd, bind), bind_lstm(L.bwd, bind));
    if (train && config_.dropout > 0.0) x = dropout(x, config_.dropout, *options.rng, options.mode);
  }
  return affine(x, bind(out_w_), bind(out_b_));
}

SequenceBatch stack_forward(AcousticModel& model, const SequenceBatch& batch,
                            const ForwardOptions& options) {
  const BatchLayout layout = batch.layout();
  ParamBinding bind;
  Var logits = model.forward(Var(batch.time_major()), layout, bind, options);
  return SequenceBatch::from_time_major(logits.value(), layout);
}

}  // namespace abn
