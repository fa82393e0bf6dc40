#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "abn/autodiff.hpp"
#include "abn/normalization.hpp"
#include "abn/random.hpp"
#include "abn/sequence.hpp"

namespace abn {

// How a layer obtains its scale/shift.
//   bn        learned gamma/beta shared by every frame
//   abn_frame one generated (gamma, beta) per utterance, from an
//             attention-pooled summary of the utterance
//   abn_utt   one generated (gamma_t, beta_t) per frame, from scaled
//             dot-product self-attention over the utterance
enum class Variant { bn, abn_frame, abn_utt };

std::string_view to_string(Variant v);  // "bn", "abn-f", "abn-u"
Variant parse_variant(std::string_view name);

// Frame-level generator. T is Tensor for storage and Var when bound to a
// forward pass.
//   w_e [d_e x p], b_e [d_e], w_gamma/w_beta [p x d_e], b_gamma/b_beta [p]
template <class T>
struct FrameAbnGeneratorT {
  T w_e, b_e, w_gamma, b_gamma, w_beta, b_beta;
};
using FrameAbnGenerator = FrameAbnGeneratorT<Tensor>;
using FrameAbnVars = FrameAbnGeneratorT<Var>;

// Utterance-level generator.
//   w_k/w_q/w_v [d_a x p], w_gamma/w_beta [p x d_a], b_gamma/b_beta [p]
template <class T>
struct UttAbnGeneratorT {
  T w_k, w_q, w_v, w_gamma, b_gamma, w_beta, b_beta;
};
using UttAbnGenerator = UttAbnGeneratorT<Tensor>;
using UttAbnVars = UttAbnGeneratorT<Var>;

// Projection weights are drawn uniformly in +-1/sqrt(p). The output maps start
// at zero with b_gamma = 1 and b_beta = 0, so a fresh generator reproduces
// plain batch normalization exactly. Requires d_e < p.
FrameAbnGenerator init_frame_generator(std::size_t p, std::size_t d_e, Rng& rng);
UttAbnGenerator init_utt_generator(std::size_t p, std::size_t d_a, Rng& rng);

FrameAbnVars as_constants(const FrameAbnGenerator& g);
UttAbnVars as_constants(const UttAbnGenerator& g);

std::size_t frame_generator_parameter_count(std::size_t p, std::size_t d_e);
std::size_t utt_generator_parameter_count(std::size_t p, std::size_t d_a);

struct ScaleShift {
  Var gamma;
  Var beta;
};

// ---- frame-level, one utterance ([T x .] matrices, first `valid` rows real)

// e_t = tanh(W_e h_t + b_e) for every row.
Var frame_embed(const Var& h_norm, const FrameAbnVars& gen);
// alpha [1 x T]: softmax over valid frames of the per-frame mean of e_t.
Var frame_attention(const Var& e, std::size_t valid);
// u [1 x d_e] = sum_t alpha_t e_t.
Var frame_pool(const Var& e, const Var& alpha);
// gamma = W_gamma u + b_gamma, beta = W_beta u + b_beta, each [1 x p].
ScaleShift frame_params(const Var& u, const FrameAbnVars& gen);

// ---- utterance-level, one utterance

struct Projections {
  Var keys, queries, values;  // [T x d_a], no bias
};
Projections utt_project(const Var& h_norm, const UttAbnVars& gen);
// alpha [T x T], row t = softmax over valid tau of K_tau . Q_t / sqrt(d_a).
Var utt_attention(const Var& keys, const Var& queries, std::size_t valid);
// c_t = sum_tau alpha_{t,tau} V_tau, [T x d_a].
Var utt_context(const Var& alpha, const Var& values);
// Per-frame gamma_t / beta_t, [T x p].
ScaleShift utt_params(const Var& context, const UttAbnVars& gen);

// ---- whole mini-batch

// Scale/shift source for one normalization layer. `gamma`/`beta` are used by
// Variant::bn; the generators by their respective variants.
struct AbnParams {
  Variant variant = Variant::bn;
  Var gamma, beta;
  std::optional<FrameAbnVars> frame;
  std::optional<UttAbnVars> utt;
};

// Generator dropout. Rate 0 or a null rng disables it.
struct GeneratorDropout {
  double rate = 0.0;
  Rng* rng = nullptr;
};

// Optional diagnostics captured from a forward pass.
struct AbnTrace {
  std::vector<Tensor> attention;  // per utterance: [1 x T] (frame) or [T x T] (utt)
  Tensor gamma;                   // [batch x p] (frame) or time-major [rows x p] (utt)
  Tensor beta;
};

// Standardize with batch or running statistics, generate the scale/shift
// from the standardized activations according to the variant, then apply
// it. Generated parameters replace the state's learned ones. Input and
// output are time-major [frames*batch x p]; padded rows come out zero.
Var abn_forward(const Var& rows, const BatchLayout& layout, BatchNormState& state,
                const AbnParams& params, Mode mode, GeneratorDropout dropout = {},
                AbnTrace* trace = nullptr);

SequenceBatch abn_forward(const SequenceBatch& batch, BatchNormState& state,
                          const AbnParams& params, Mode mode);

}  // namespace abn
