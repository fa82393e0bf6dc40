#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "abn/abn.hpp"
#include "abn/autodiff.hpp"
#include "abn/dropout.hpp"
#include "abn/normalization.hpp"
#include "abn/random.hpp"
#include "abn/sequence.hpp"

namespace abn {

// LSTM weights with the four gates stacked in the order input, forget,
// cell, output:
//   w_x  [4n x p]  input-to-hidden, applied to the normalized input
//   w_h  [4n x n]  hidden-to-hidden
//   bias [4n]
//   w_co [n]       diagonal peephole from c_t into the output gate
template <class T>
struct LstmLayerParamsT {
  T w_x, w_h, bias, w_co;
};
using LstmLayerParams = LstmLayerParamsT<Tensor>;
using LstmVars = LstmLayerParamsT<Var>;

// Uniform +-1/sqrt(n) weights, zero biases except forget gate +1.
LstmLayerParams init_lstm_params(std::size_t hidden, std::size_t input, Rng& rng);
LstmVars as_constants(const LstmLayerParams& p);
std::size_t lstm_parameter_count(std::size_t hidden, std::size_t input);

struct LstmState {
  Var h;  // [batch x n]
  Var c;
};

LstmState zero_state(std::size_t batch, std::size_t hidden);

// One step of the BN-LSTM recurrence on an already normalized input
// ([p] or [batch x p]).
LstmState lstm_step(const Var& x_norm, const LstmState& prev, const LstmVars& params);

// Forward LSTM left to right and backward LSTM right to left over the valid
// frames of every utterance; per-frame outputs concatenated [h_fwd, h_bwd].
// Input and output are time-major; padded rows of the output are zero.
Var bilstm_layer(const Var& rows, const BatchLayout& layout, const LstmVars& fwd,
                 const LstmVars& bwd);

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t hidden = 64;
  std::size_t input_dim = 16;
  std::size_t vocab = 12;  // including the blank at index 0
  std::vector<Variant> variants{Variant::bn};  // one entry, or one per layer
  double dropout = 0.3;
  double generator_dropout = 0.3;
  std::size_t d_e = 8;
  std::size_t d_a = 8;
  double bn_epsilon = kDefaultBnEpsilon;
  double bn_momentum = kDefaultBnMomentum;

  Variant variant(std::size_t layer) const;
  std::size_t layer_input(std::size_t layer) const { return layer == 0 ? input_dim : 2 * hidden; }
  void validate() const;
};

struct LayerParams {
  BatchNormState norm;  // gamma/beta trained only for Variant::bn
  std::optional<FrameAbnGenerator> frame;
  std::optional<UttAbnGenerator> utt;
  LstmLayerParams fwd;
  LstmLayerParams bwd;
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct ModuleCount {
  std::string module;
  std::size_t count;
};

// Closed-form trainable parameter counts per module, in model order.
std::vector<ModuleCount> parameter_counts(const ModelConfig& config);

// Maps parameter tensors to Vars for one forward pass: recorded leaves when
// a recording tape is given, constants otherwise.
class ParamBinding {
 public:
  explicit ParamBinding(Tape* tape = nullptr) : tape_(tape) {}
  Var operator()(const Tensor& t);
  // Routes every later lookup of t to v (used to probe one tensor).
  void bind(const Tensor& t, Var v) { bound_[&t] = std::move(v); }
  // Gradient for a bound tensor after tape->backward(); zeros if unbound.
  Tensor grad(const Tensor& t) const;
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_;
  std::unordered_map<const Tensor*, Var> bound_;
};

struct ForwardOptions {
  Mode mode = Mode::infer;
  Rng* rng = nullptr;  // required for dropout in train mode
};

// Deep BiLSTM with a per-layer normalization variant and an output
// projection to vocabulary logits.
class AcousticModel {
 public:
  AcousticModel() = default;
  static AcousticModel create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<LayerParams>& layers() { return layers_; }
  const std::vector<LayerParams>& layers() const { return layers_; }
  Tensor& output_w() { return out_w_; }
  Tensor& output_b() { return out_b_; }

  // Trainable tensors and running statistics, with stable names.
  std::vector<NamedTensor> parameters();
  std::vector<NamedTensor> buffers();

  // Time-major features [frames*batch x input_dim] to logits [frames*batch x vocab].
  Var forward(const Var& features, const BatchLayout& layout, ParamBinding& bind,
              const ForwardOptions& options);

 private:
  ModelConfig config_;
  std::vector<LayerParams> layers_;
  Tensor out_w_;  // [vocab x 2n]
  Tensor out_b_;  // [vocab]
};

// Convenience: padded batch in, padded logits out.
SequenceBatch stack_forward(AcousticModel& model, const SequenceBatch& batch,
                            const ForwardOptions& options);

}  // namespace abn
