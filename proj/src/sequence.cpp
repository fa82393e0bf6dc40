#include "abn/sequence.hpp"

#include <algorithm>

namespace abn {

BatchLayout BatchLayout::from_lengths(std::vector<std::size_t> lengths) {
  if (lengths.empty()) throw ShapeError("batch layout needs at least one utterance");
  BatchLayout layout;
  layout.batch = lengths.size();
  layout.frames = *std::max_element(lengths.begin(), lengths.end());
  if (layout.frames == 0) throw ShapeError("batch layout needs at least one frame");
  layout.lengths = std::move(lengths);
  return layout;
}

std::size_t BatchLayout::valid_frames() const {
  std::size_t n = 0;
  for (auto len : lengths) n += len;
  return n;
}

std::vector<double> BatchLayout::row_weights() const {
  std::vector<double> w(rows(), 0.0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t b = 0; b < batch; ++b)
      if (valid(t, b)) w[row(t, b)] = 1.0;
  return w;
}

std::vector<std::size_t> BatchLayout::utterance_rows(std::size_t b) const {
  std::vector<std::size_t> idx(frames);
  for (std::size_t t = 0; t < frames; ++t) idx[t] = row(t, b);
  return idx;
}

std::vector<unsigned char> BatchLayout::step_mask(std::size_t t) const {
  std::vector<unsigned char> m(batch);
  for (std::size_t b = 0; b < batch; ++b) m[b] = valid(t, b) ? 1 : 0;
  return m;
}

SequenceBatch SequenceBatch::from_utterances(const std::vector<Tensor>& utterances) {
  if (utterances.empty()) throw ShapeError("empty batch");
  const std::size_t features = utterances[0].cols();
  std::size_t frames = 0;
  for (const auto& u : utterances) {
    if (u.cols() != features)
      throw ShapeError("utterance feature dims differ: " + shape_to_string(u.shape()));
    frames = std::max(frames, u.rows());
  }
  SequenceBatch sb{Tensor({utterances.size(), frames, features}), {}};
  for (std::size_t b = 0; b < utterances.size(); ++b) {
    sb.lengths.push_back(utterances[b].rows());
    std::copy(utterances[b].data().begin(), utterances[b].data().end(),
              sb.data.data().begin() + b * frames * features);
  }
  return sb;
}

BatchLayout SequenceBatch::layout() const {
  if (data.rank() != 3) throw ShapeError("sequence batch must be rank 3");
  if (lengths.size() != batch()) throw ShapeError("one length per utterance required");
  for (auto len : lengths)
    if (len > frames()) throw ShapeError("utterance length exceeds padded length");
  BatchLayout l = BatchLayout::from_lengths(lengths);
  l.frames = frames();
  return l;
}

Tensor SequenceBatch::time_major() const {
  const std::size_t B = batch(), T = frames(), F = features();
  Tensor out({T * B, F});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = 0; f < F; ++f) out[(t * B + b) * F + f] = at(b, t, f);
  return out;
}

SequenceBatch SequenceBatch::from_time_major(const Tensor& rows, const BatchLayout& layout) {
  const std::size_t B = layout.batch, T = layout.frames, F = rows.cols();
  if (rows.rows() != B * T) throw ShapeError("time-major matrix does not match layout");
  SequenceBatch sb{Tensor({B, T, F}), layout.lengths};
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = 0; f < F; ++f) sb.at(b, t, f) = rows[(t * B + b) * F + f];
  return sb;
}

}  // namespace abn
