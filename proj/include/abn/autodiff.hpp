#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "abn/tensor.hpp"

namespace abn {

class Tape;

// Handle to a value that may be recorded on a Tape. A Var built straight
// from a Tensor is a constant: operations on constants only compute values
// and never touch a tape.
class Var {
 public:
  Var() = default;
  Var(Tensor value);  // NOLINT(google-explicit-constructor): constants convert implicitly

  const Tensor& value() const { return *value_; }
  const Shape& shape() const { return value_->shape(); }
  bool recorded() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  std::shared_ptr<const Tensor> value_;
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Gradient accumulators handed to a backward function, one per input.
// Entries are null for inputs that are constants.
using GradSlots = std::span<Tensor* const>;
using BackwardFn = std::function<void(const Tensor& grad_out, GradSlots grad_in)>;

// Linear record of executed primitives. Nodes are appended in execution
// order, which is a topological order of the computation graph, so the
// backward sweep walks the record once in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Recorded leaf whose gradient is accumulated by backward(). A constant
  // when recording is off.
  Var variable(Tensor value);

  // Records the output of a primitive. Inputs that are constants (or live on
  // another tape) receive no gradient. Returns a constant when recording is
  // off or no input is recorded here.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  // Seeds d(loss)/d(loss) = 1 and propagates to every recorded node.
  void backward(const Var& loss);

  // Gradient of the last backward() target with respect to v; zeros when v
  // did not influence the loss.
  Tensor grad(const Var& v) const;

  std::size_t size() const { return nodes_.size(); }
  // Number of backward functions invoked by the last backward() call.
  std::size_t last_backward_visits() const { return visits_; }

 private:
  struct Node {
    std::vector<std::size_t> inputs;  // tape ids; npos for constants
    BackwardFn backward;
    Shape shape;
  };
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool recording_ = true;
  std::size_t visits_ = 0;
};

// ---- primitives -----------------------------------------------------------
// Matrix operations read rank-1 operands as a single row.

Var matmul(const Var& a, const Var& b);           // [m x k] * [k x n]
Var matmul_nt(const Var& a, const Var& b);        // a * b^T, [m x k] * [n x k]^T
Var affine(const Var& x, const Var& w, const Var& b);  // x W^T + b, row-wise

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_row(const Var& x, const Var& row);  // broadcast row over all rows of x
Var mul_row(const Var& x, const Var& row);
Var sub_row(const Var& x, const Var& row);

Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var square(const Var& x);
Var inv_sqrt(const Var& x, double epsilon);  // 1/sqrt(x + epsilon)
Var log(const Var& x);

Var sum(const Var& x);                   // scalar [1]
Var row_mean(const Var& x);              // [r x c] -> [r x 1]
// Weighted column mean: sum_r w_r x_rc / sum_r w_r, shape [1 x c].
Var weighted_column_mean(const Var& x, std::span<const double> row_weights);
// Multiplies row r by the constant w_r.
Var scale_rows(const Var& x, std::span<const double> row_weights);
// Row r is taken from a where take_a[r] is nonzero, else from b.
Var select_rows(std::span<const unsigned char> take_a, const Var& a, const Var& b);

Var reshape(const Var& x, Shape shape);
Var transpose(const Var& x);
Var slice_rows(const Var& x, std::size_t begin, std::size_t count);
Var slice_cols(const Var& x, std::size_t begin, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
// out[i] = x[indices[i]]; backward scatter-adds.
Var gather_rows(const Var& x, std::span<const std::size_t> indices);

// Row-wise softmax over the first valid_length columns of each row. Columns
// at or beyond valid_length are excluded before exponentiation and get
// probability exactly zero.
Var masked_softmax(const Var& scores, std::size_t valid_length);
Var masked_softmax(const Var& scores, std::span<const std::size_t> valid_lengths_per_row);

}  // namespace abn
