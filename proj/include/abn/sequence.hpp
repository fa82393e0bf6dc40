#pragma once

#include <cstddef>
#include <vector>

#include "abn/tensor.hpp"

namespace abn {

// Geometry of a padded mini-batch. Internally activations are kept as
// time-major matrices: row t * batch + b holds frame t of utterance b.
struct BatchLayout {
  std::size_t batch = 0;
  std::size_t frames = 0;  // padded length, L_max
  std::vector<std::size_t> lengths;

  static BatchLayout from_lengths(std::vector<std::size_t> lengths);

  std::size_t rows() const { return batch * frames; }
  std::size_t row(std::size_t t, std::size_t b) const { return t * batch + b; }
  bool valid(std::size_t t, std::size_t b) const { return t < lengths[b]; }
  std::size_t valid_frames() const;

  // 1.0 for valid rows, 0.0 for padding, in time-major row order.
  std::vector<double> row_weights() const;
  // Time-major rows of utterance b, t = 0 .. frames-1.
  std::vector<std::size_t> utterance_rows(std::size_t b) const;
  // 1 where utterance b is still inside its valid span at step t.
  std::vector<unsigned char> step_mask(std::size_t t) const;
};

// Padded activations [utterances x frames x features] plus valid lengths.
struct SequenceBatch {
  Tensor data;
  std::vector<std::size_t> lengths;

  static SequenceBatch from_utterances(const std::vector<Tensor>& utterances);

  std::size_t batch() const { return data.shape().at(0); }
  std::size_t frames() const { return data.shape().at(1); }
  std::size_t features() const { return data.shape().at(2); }
  double at(std::size_t b, std::size_t t, std::size_t f) const {
    return data[(b * frames() + t) * features() + f];
  }
  double& at(std::size_t b, std::size_t t, std::size_t f) {
    return data[(b * frames() + t) * features() + f];
  }

  BatchLayout layout() const;
  // [frames*batch x features], row t * batch + b.
  Tensor time_major() const;
  static SequenceBatch from_time_major(const Tensor& rows, const BatchLayout& layout);
};

}  // namespace abn
