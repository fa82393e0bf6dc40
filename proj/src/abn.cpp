#include "abn/abn.hpp"

#include <cmath>
#include <string>

#include "abn/dropout.hpp"

namespace abn {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::bn: return "bn";
    case Variant::abn_frame: return "abn-f";
    case Variant::abn_utt: return "abn-u";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  if (name == "bn") return Variant::bn;
  if (name == "abn-f") return Variant::abn_frame;
  if (name == "abn-u") return Variant::abn_utt;
  throw ContractError("unknown variant '" + std::string(name) + "' (expected bn, abn-f or abn-u)");
}

namespace {

void require_bottleneck(const char* what, std::size_t p, std::size_t d) {
  if (d == 0 || d >= p)
    throw ContractError(std::string(what) + " width " + std::to_string(d) +
                        " must be positive and smaller than the feature dimension " +
                        std::to_string(p));
}

}  // namespace

FrameAbnGenerator init_frame_generator(std::size_t p, std::size_t d_e, Rng& rng) {
  require_bottleneck("frame generator", p, d_e);
  const double r = 1.0 / std::sqrt(static_cast<double>(p));
  return {uniform_tensor({d_e, p}, rng, -r, r), Tensor::zeros({d_e}), Tensor::zeros({p, d_e}),
          Tensor::ones({p}),                    Tensor::zeros({p, d_e}), Tensor::zeros({p})};
}

UttAbnGenerator init_utt_generator(std::size_t p, std::size_t d_a, Rng& rng) {
  require_bottleneck("utterance generator", p, d_a);
  const double r = 1.0 / std::sqrt(static_cast<double>(p));
  UttAbnGenerator g;
  g.w_k = uniform_tensor({d_a, p}, rng, -r, r);
  g.w_q = uniform_tensor({d_a, p}, rng, -r, r);
  g.w_v = uniform_tensor({d_a, p}, rng, -r, r);
  g.w_gamma = Tensor::zeros({p, d_a});
  g.b_gamma = Tensor::ones({p});
  g.w_beta = Tensor::zeros({p, d_a});
  g.b_beta = Tensor::zeros({p});
  return g;
}

FrameAbnVars as_constants(const FrameAbnGenerator& g) {
  return {g.w_e, g.b_e, g.w_gamma, g.b_gamma, g.w_beta, g.b_beta};
}

UttAbnVars as_constants(const UttAbnGenerator& g) {
  return {g.w_k, g.w_q, g.w_v, g.w_gamma, g.b_gamma, g.w_beta, g.b_beta};
}

std::size_t frame_generator_parameter_count(std::size_t p, std::size_t d_e) {
  return d_e * p + d_e + 2 * (p * d_e + p);
}

std::size_t utt_generator_parameter_count(std::size_t p, std::size_t d_a) {
  return 3 * d_a * p + 2 * (p * d_a + p);
}

Var frame_embed(const Var& h_norm, const FrameAbnVars& gen) {
  return tanh(affine(h_norm, gen.w_e, gen.b_e));
}

Var frame_attention(const Var& e, std::size_t valid) {
  const std::size_t frames = e.value().rows();
  return masked_softmax(reshape(row_mean(e), {1, frames}), valid);
}

Var frame_pool(const Var& e, const Var& alpha) { return matmul(alpha, e); }

ScaleShift frame_params(const Var& u, const FrameAbnVars& gen) {
  return {affine(u, gen.w_gamma, gen.b_gamma), affine(u, gen.w_beta, gen.b_beta)};
}

Projections utt_project(const Var& h_norm, const UttAbnVars& gen) {
  return {matmul_nt(h_norm, gen.w_k), matmul_nt(h_norm, gen.w_q), matmul_nt(h_norm, gen.w_v)};
}

Var utt_attention(const Var& keys, const Var& queries, std::size_t valid) {
  const double d_a = static_cast<double>(keys.value().cols());
  Var scores = scale(matmul_nt(queries, keys), 1.0 / std::sqrt(d_a));
  return masked_softmax(scores, valid);
}

Var utt_context(const Var& alpha, const Var& values) { return matmul(alpha, values); }

ScaleShift utt_params(const Var& context, const UttAbnVars& gen) {
  return {affine(context, gen.w_gamma, gen.b_gamma), affine(context, gen.w_beta, gen.b_beta)};
}

namespace {

Var maybe_dropout(const Var& x, const GeneratorDropout& d, Mode mode) {
  if (d.rate == 0.0 || d.rng == nullptr) return x;
  return dropout(x, d.rate, *d.rng, mode);
}

// One (gamma, beta) per utterance, broadcast over that utterance's frames.
ScaleShift frame_level(const Var& xhat, const BatchLayout& layout, const FrameAbnVars& gen,
                       Mode mode, const GeneratorDropout& drop, AbnTrace* trace) {
  Var e = maybe_dropout(frame_embed(xhat, gen), drop, mode);
  std::vector<Var> gammas, betas;
  for (std::size_t b = 0; b < layout.batch; ++b) {
    const auto rows = layout.utterance_rows(b);
    Var e_b = gather_rows(e, rows);
    Var alpha = frame_attention(e_b, layout.lengths[b]);
    Var u = frame_pool(e_b, alpha);
    ScaleShift ss = frame_params(u, gen);
    gammas.push_back(ss.gamma);
    betas.push_back(ss.beta);
    if (trace) trace->attention.push_back(alpha.value());
  }
  Var gamma = concat_rows(gammas);
  Var beta = concat_rows(betas);
  if (trace) {
    trace->gamma = gamma.value();
    trace->beta = beta.value();
  }
  std::vector<std::size_t> owner(layout.rows());
  for (std::size_t r = 0; r < owner.size(); ++r) owner[r] = r % layout.batch;
  return {gather_rows(gamma, owner), gather_rows(beta, owner)};
}

// One (gamma_t, beta_t) per frame from self-attention within each utterance.
ScaleShift utt_level(const Var& xhat, const BatchLayout& layout, const UttAbnVars& gen, Mode mode,
                     const GeneratorDropout& drop, AbnTrace* trace) {
  Projections kqv = utt_project(xhat, gen);
  std::vector<Var> contexts;
  for (std::size_t b = 0; b < layout.batch; ++b) {
    const auto rows = layout.utterance_rows(b);
    Var alpha = utt_attention(gather_rows(kqv.keys, rows), gather_rows(kqv.queries, rows),
                              layout.lengths[b]);
    contexts.push_back(utt_context(alpha, gather_rows(kqv.values, rows)));
    if (trace) trace->attention.push_back(alpha.value());
  }
  // Batch-major [b * T + t] back to time-major [t * B + b].
  std::vector<std::size_t> order(layout.rows());
  for (std::size_t t = 0; t < layout.frames; ++t)
    for (std::size_t b = 0; b < layout.batch; ++b) order[layout.row(t, b)] = b * layout.frames + t;
  Var context = maybe_dropout(gather_rows(concat_rows(contexts), order), drop, mode);
  ScaleShift ss = utt_params(context, gen);
  if (trace) {
    trace->gamma = ss.gamma.value();
    trace->beta = ss.beta.value();
  }
  return ss;
}

}  // namespace

Var abn_forward(const Var& rows, const BatchLayout& layout, BatchNormState& state,
                const AbnParams& params, Mode mode, GeneratorDropout dropout, AbnTrace* trace) {
  Var xhat = bn_standardize(rows, layout, state, mode);
  const std::vector<double> mask = layout.row_weights();
  switch (params.variant) {
    case Variant::bn:
      return scale_rows(bn_affine(xhat, params.gamma, params.beta), mask);
    case Variant::abn_frame: {
      if (!params.frame) throw ContractError("abn-f layer has no frame-level generator");
      ScaleShift ss = frame_level(xhat, layout, *params.frame, mode, dropout, trace);
      return scale_rows(add(mul(xhat, ss.gamma), ss.beta), mask);
    }
    case Variant::abn_utt: {
      if (!params.utt) throw ContractError("abn-u layer has no utterance-level generator");
      ScaleShift ss = utt_level(xhat, layout, *params.utt, mode, dropout, trace);
      return scale_rows(add(mul(xhat, ss.gamma), ss.beta), mask);
    }
  }
  throw ContractError("unhandled variant");
}

SequenceBatch abn_forward(const SequenceBatch& batch, BatchNormState& state,
                          const AbnParams& params, Mode mode) {
  const BatchLayout layout = batch.layout();
  Var out = abn_forward(Var(batch.time_major()), layout, state, params, mode);
  return SequenceBatch::from_time_major(out.value(), layout);
}

}  // namespace abn
