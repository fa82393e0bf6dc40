#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "abn/config.hpp"
#include "abn/ctc.hpp"
#include "abn/sequence.hpp"

namespace abn {

struct Utterance {
  Tensor features;  // [frames x features]
  LabelSequence labels;
};

using Dataset = std::vector<Utterance>;

// Template for token k (1 .. vocab-1), a unit Gaussian vector fixed by the
// task's template seed.
Tensor token_template(const SyntheticTask& task, std::size_t token);

// Renders a known token sequence with the given per-token durations.
Tensor render_tokens(const SyntheticTask& task, const LabelSequence& tokens,
                     const std::vector<std::size_t>& durations, Rng& rng);

// Utterance i is drawn from its own stream mix_seed(seed, i): a random token
// sequence without adjacent repeats, each token held for a random duration.
// Generation runs on several threads unless ABN_DETERMINISTIC=1; output is
// identical either way.
Dataset synth_generate(const SyntheticTask& task, std::size_t n_utterances, std::uint64_t seed);

// True when ABN_DETERMINISTIC is set to 1.
bool deterministic_mode();

// Indices of `dataset` ordered by length, longest first; ties keep index order.
std::vector<std::size_t> sort_by_length_desc(const Dataset& dataset);

// Splits lengths (already sorted descending) into consecutive batches of
// floor(max_frames / L_max) utterances, L_max being the first length of each
// batch. Returns the batch sizes in order.
std::vector<std::size_t> make_batches(const std::vector<std::size_t>& sorted_lengths,
                                      std::size_t max_frames);

SequenceBatch assemble_batch(const Dataset& dataset, const std::vector<std::size_t>& indices);

}  // namespace abn
