#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "abn/autodiff.hpp"

namespace abn {

inline constexpr std::size_t kBlank = 0;

// Target tokens; never the blank, each below the vocabulary size.
using LabelSequence = std::vector<std::size_t>;

void validate_labels(const LabelSequence& labels, std::size_t vocab);

// Fewest frames that can emit `labels`: one per token plus a separating
// blank between equal neighbours.
std::size_t ctc_min_frames(const LabelSequence& labels);

Tensor log_softmax_rows(const Tensor& logits);

struct CtcResult {
  double loss = 0.0;  // +inf when infeasible
  bool feasible = true;
  Tensor grad;        // d loss / d logits, [T x V]; zero when infeasible
};

// Negative log-likelihood of `labels` under per-frame softmax(logits),
// summed over every alignment, by the forward-backward recursion over the
// blank-interleaved label sequence in log space.
CtcResult ctc_loss_value(const Tensor& logits, const LabelSequence& labels);

// Same loss recorded on the logits' tape.
Var ctc_loss(const Var& logits, const LabelSequence& labels);

inline constexpr std::size_t kBruteForceMaxFrames = 8;
inline constexpr std::size_t kBruteForceMaxVocab = 4;

// Oracle: enumerates all V^T paths over log-probabilities [T x V], collapses
// each and sums the probability of those that match. Returns -log of the
// total (+inf when nothing matches). Refuses instances beyond T=8, V=4.
double ctc_brute_force(const Tensor& logprobs, const LabelSequence& labels);

// Exhaustive comparison of ctc_loss_value against ctc_brute_force: every
// label sequence of length <= max_label_length over V in `vocab_sizes`, every
// T in 1..max_frames, Gaussian logits from `seed`.
struct OracleSweep {
  std::size_t cases = 0;
  std::size_t infeasible = 0;   // both sides agreed on +inf
  std::size_t mismatches = 0;   // differences above the tolerance
  double max_abs_diff = 0.0;    // over feasible cases
};
OracleSweep ctc_oracle_sweep(std::size_t max_frames, const std::vector<std::size_t>& vocab_sizes,
                             std::size_t max_label_length, std::uint64_t seed, double tolerance = 1e-9);

// Argmax per frame (lowest index on ties), merge repeats, drop blanks.
LabelSequence greedy_decode(const Tensor& logits);

LabelSequence ctc_collapse(const std::vector<std::size_t>& path);

struct ErrorRate {
  std::size_t distance = 0;
  std::size_t reference_length = 0;
  std::optional<double> rate;  // empty when the reference is empty
};

std::size_t edit_distance(const LabelSequence& hyp, const LabelSequence& ref);
ErrorRate token_error_rate(const LabelSequence& hyp, const LabelSequence& ref);

}  // namespace abn
