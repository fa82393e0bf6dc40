#include "abn/data.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <numeric>
#include <string>
#include <thread>

#include "abn/errors.hpp"

namespace abn {

Tensor token_template(const SyntheticTask& task, std::size_t token) {
  if (token == kBlank || token >= task.vocab)
    throw ContractError("token " + std::to_string(token) + " has no template");
  Rng rng(mix_seed(task.template_seed, token));
  return gaussian_tensor({task.features}, rng);
}

Tensor render_tokens(const SyntheticTask& task, const LabelSequence& tokens,
                     const std::vector<std::size_t>& durations, Rng& rng) {
  if (tokens.size() != durations.size()) throw ShapeError("one duration per token required");
  const std::size_t frames = std::accumulate(durations.begin(), durations.end(), std::size_t{0});
  if (frames == 0) throw ContractError("an utterance needs at least one frame");
  Tensor out({frames, task.features});
  std::size_t row = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Tensor tpl = token_template(task, tokens[i]);
    for (std::size_t d = 0; d < durations[i]; ++d, ++row)
      for (std::size_t f = 0; f < task.features; ++f)
        out.at(row, f) = tpl[f] + (task.noise > 0.0 ? gaussian(rng, 0.0, task.noise) : 0.0);
  }
  return out;
}

namespace {

std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

Utterance generate_one(const SyntheticTask& task, std::uint64_t stream) {
  Rng rng(stream);
  const std::size_t n = draw(rng, task.min_tokens, task.max_tokens);
  LabelSequence tokens;
  std::vector<std::size_t> durations;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t tok = draw(rng, 1, task.vocab - 1);
    // Redraw over the remaining tokens so neighbours always differ.
    if (!tokens.empty()) {
      tok = draw(rng, 1, task.vocab - 2);
      if (tok >= tokens.back()) ++tok;
    }
    tokens.push_back(tok);
    durations.push_back(draw(rng, task.min_token_frames, task.max_token_frames));
  }
  Tensor features = render_tokens(task, tokens, durations, rng);
  return {std::move(features), std::move(tokens)};
}

}  // namespace

bool deterministic_mode() {
  const char* v = std::getenv("ABN_DETERMINISTIC");
  return v && std::strcmp(v, "1") == 0;
}

Dataset synth_generate(const SyntheticTask& task, std::size_t n_utterances, std::uint64_t seed) {
  task.validate();
  Dataset out(n_utterances);
  const std::size_t workers =
      deterministic_mode() ? 1 : std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(), 8));
  auto work = [&](std::size_t w) {
    for (std::size_t i = w; i < n_utterances; i += workers) out[i] = generate_one(task, mix_seed(seed, i));
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  return out;
}

std::vector<std::size_t> sort_by_length_desc(const Dataset& dataset) {
  std::vector<std::size_t> idx(dataset.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return dataset[a].features.rows() > dataset[b].features.rows();
  });
  return idx;
}

std::vector<std::size_t> make_batches(const std::vector<std::size_t>& sorted_lengths,
                                      std::size_t max_frames) {
  if (max_frames == 0) throw ContractError("max_frames must be positive");
  for (std::size_t i = 1; i < sorted_lengths.size(); ++i)
    if (sorted_lengths[i] > sorted_lengths[i - 1])
      throw ContractError("make_batches needs lengths sorted in descending order");
  std::vector<std::size_t> sizes;
  std::size_t i = 0;
  while (i < sorted_lengths.size()) {
    const std::size_t l_max = sorted_lengths[i];
    if (l_max == 0) throw ContractError("utterance " + std::to_string(i) + " is empty");
    if (l_max > max_frames)
      throw ContractError("utterance " + std::to_string(i) + " has " + std::to_string(l_max) +
                          " frames, more than max_frames = " + std::to_string(max_frames));
    const std::size_t take = std::min(max_frames / l_max, sorted_lengths.size() - i);
    sizes.push_back(take);
    i += take;
  }
  return sizes;
}

SequenceBatch assemble_batch(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  std::vector<Tensor> parts;
  parts.reserve(indices.size());
  for (auto i : indices) parts.push_back(dataset.at(i).features);
  return SequenceBatch::from_utterances(parts);
}

}  // namespace abn
