#include "abn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace abn {

Var::Var(Tensor value) : value_(std::make_shared<const Tensor>(std::move(value))) {}

Var Tape::variable(Tensor value) {
  Var v(std::move(value));
  if (!recording_) return v;
  v.tape_ = this;
  v.id_ = nodes_.size();
  nodes_.push_back(Node{{}, {}, v.shape()});
  return v;
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Var out(std::move(value));
  if (!recording_) return out;
  Node node;
  node.inputs.reserve(inputs.size());
  bool any = false;
  for (const auto& in : inputs) {
    if (in.tape_ == this) {
      node.inputs.push_back(in.id_);
      any = true;
    } else {
      node.inputs.push_back(npos);
    }
  }
  if (!any) return out;
  node.backward = std::move(backward);
  node.shape = out.shape();
  out.tape_ = this;
  out.id_ = nodes_.size();
  nodes_.push_back(std::move(node));
  return out;
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw ContractError("backward: loss is not recorded on this tape");
  if (loss.value().size() != 1)
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_to_string(loss.shape()));
  grads_.assign(nodes_.size(), Tensor());
  grads_[loss.id_] = Tensor::ones(loss.shape());
  visits_ = 0;
  std::vector<Tensor*> slots;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || grads_[i].empty()) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t id = node.inputs[k];
      if (id == npos) continue;
      if (grads_[id].empty()) grads_[id] = Tensor::zeros(nodes_[id].shape);
      slots[k] = &grads_[id];
    }
    node.backward(grads_[i], slots);
    ++visits_;
    grads_[i] = Tensor();  // interior gradients are not kept
  }
}

Tensor Tape::grad(const Var& v) const {
  if (v.tape_ == this && v.id_ < grads_.size() && !grads_[v.id_].empty()) return grads_[v.id_];
  return Tensor::zeros(v.shape());
}

namespace {

Tape* tape_of(std::initializer_list<const Var*> inputs) {
  for (const Var* v : inputs)
    if (v->recorded()) return v->tape();
  return nullptr;
}

Var emit(Tape* tape, Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  if (!tape) return Var(std::move(value));
  return tape->record(std::move(value), std::move(inputs), std::move(fn));
}

Shape matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " +
                   shape_to_string(b));
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t r = 0; r < k; ++r) {
      const double av = a[i * k + r];
      if (av == 0.0) continue;
      const double* brow = b + r * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    std::size_t j = 0;
    // Four independent dot products per pass; each keeps its own sequential
    // summation order, so results match the one-at-a-time loop bit for bit.
    for (; j + 4 <= n; j += 4) {
      const double *b0 = b + j * k, *b1 = b0 + k, *b2 = b1 + k, *b3 = b2 + k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (std::size_t r = 0; r < k; ++r) {
        const double av = arow[r];
        s0 += av * b0[r];
        s1 += av * b1[r];
        s2 += av * b2[r];
        s3 += av * b3[r];
      }
      double* crow = c + i * n + j;
      crow[0] += s0;
      crow[1] += s1;
      crow[2] += s2;
      crow[3] += s3;
    }
    for (; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t r = 0; r < k; ++r) s += arow[r] * brow[r];
      c[i * n + j] += s;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t r = 0; r < k; ++r) {
    const double* arow = a + r * m;
    const double* brow = b + r * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class F, class D>
Var unary(const Var& x, F f, D dfdx_from_xy) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  if (!x.recorded()) return Var(std::move(out));
  auto ys = std::make_shared<const Tensor>(std::move(out));
  return emit(x.tape(), *ys, {x},
              [x, ys, dfdx_from_xy](const Tensor& g, GradSlots in) {
                if (!in[0]) return;
                const Tensor& xs = x.value();
                for (std::size_t i = 0; i < g.size(); ++i)
                  (*in[0])[i] += g[i] * dfdx_from_xy(xs[i], (*ys)[i]);
              });
}

void require_same(const char* op, const Var& a, const Var& b) {
  if (a.value().size() != b.value().size() || a.value().cols() != b.value().cols())
    shape_mismatch(op, a.shape(), b.shape());
}

void require_row(const char* op, const Var& x, const Var& row) {
  if (row.value().size() != x.value().cols()) shape_mismatch(op, x.shape(), row.shape());
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.rank() != 2 || av.cols() != bv.rows()) shape_mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out(matrix_shape(m, n));
  gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return emit(tape_of({&a, &b}), std::move(out), {a, b},
              [a, b, m, k, n](const Tensor& g, GradSlots in) {
                if (in[0]) gemm_nt(g.data().data(), b.value().data().data(), in[0]->data().data(), m, n, k);
                if (in[1]) gemm_tn(a.value().data().data(), g.data().data(), in[1]->data().data(), k, m, n);
              });
}

Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) shape_mismatch("matmul_nt", a.shape(), b.shape());
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  Tensor out(matrix_shape(m, n));
  gemm_nt(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return emit(tape_of({&a, &b}), std::move(out), {a, b},
              [a, b, m, k, n](const Tensor& g, GradSlots in) {
                if (in[0]) gemm_nn(g.data().data(), b.value().data().data(), in[0]->data().data(), m, n, k);
                if (in[1]) gemm_tn(g.data().data(), a.value().data().data(), in[1]->data().data(), n, m, k);
              });
}

Var affine(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (wv.rank() != 2 || xv.cols() != wv.cols()) shape_mismatch("affine", x.shape(), w.shape());
  const std::size_t m = xv.rows(), k = xv.cols(), d = wv.rows();
  if (bv.size() != d) shape_mismatch("affine (bias)", w.shape(), b.shape());
  Tensor out(xv.rank() == 1 ? Shape{d} : matrix_shape(m, d));
  double* o = out.data().data();
  for (std::size_t i = 0; i < m; ++i) std::copy(bv.data().begin(), bv.data().end(), o + i * d);
  gemm_nt(xv.data().data(), wv.data().data(), o, m, k, d);
  return emit(tape_of({&x, &w, &b}), std::move(out), {x, w, b},
              [x, w, m, k, d](const Tensor& g, GradSlots in) {
                if (in[0]) gemm_nn(g.data().data(), w.value().data().data(), in[0]->data().data(), m, d, k);
                if (in[1]) gemm_tn(g.data().data(), x.value().data().data(), in[1]->data().data(), d, m, k);
                if (in[2])
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < d; ++j) (*in[2])[j] += g[i * d + j];
              });
}

Var add(const Var& a, const Var& b) {
  require_same("add", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return emit(tape_of({&a, &b}), std::move(out), {a, b}, [](const Tensor& g, GradSlots in) {
    for (Tensor* slot : in)
      if (slot)
        for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
  });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return emit(tape_of({&a, &b}), std::move(out), {a, b}, [](const Tensor& g, GradSlots in) {
    if (in[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
    if (in[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] -= g[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same("mul", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return emit(tape_of({&a, &b}), std::move(out), {a, b}, [a, b](const Tensor& g, GradSlots in) {
    if (in[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * b.value()[i];
    if (in[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * a.value()[i];
  });
}

Var scale(const Var& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  return emit(a.tape(), std::move(out), {a}, [s](const Tensor& g, GradSlots in) {
    if (in[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * s;
  });
}

Var add_row(const Var& x, const Var& row) {
  require_row("add_row", x, row);
  const std::size_t r = x.value().rows(), c = x.value().cols();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.value()[i * c + j] + row.value()[j];
  return emit(tape_of({&x, &row}), std::move(out), {x, row}, [r, c](const Tensor& g, GradSlots in) {
    if (in[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
    if (in[1])
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*in[1])[j] += g[i * c + j];
  });
}

Var sub_row(const Var& x, const Var& row) {
  require_row("sub_row", x, row);
  const std::size_t r = x.value().rows(), c = x.value().cols();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.value()[i * c + j] - row.value()[j];
  return emit(tape_of({&x, &row}), std::move(out), {x, row}, [r, c](const Tensor& g, GradSlots in) {
    if (in[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
    if (in[1])
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*in[1])[j] -= g[i * c + j];
  });
}

Var mul_row(const Var& x, const Var& row) {
  require_row("mul_row", x, row);
  const std::size_t r = x.value().rows(), c = x.value().cols();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.value()[i * c + j] * row.value()[j];
  return emit(tape_of({&x, &row}), std::move(out), {x, row},
              [x, row, r, c](const Tensor& g, GradSlots in) {
                if (in[0])
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                      (*in[0])[i * c + j] += g[i * c + j] * row.value()[j];
                if (in[1])
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                      (*in[1])[j] += g[i * c + j] * x.value()[i * c + j];
              });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var square(const Var& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var inv_sqrt(const Var& x, double epsilon) {
  return unary(
      x, [epsilon](double v) { return 1.0 / std::sqrt(v + epsilon); },
      [](double, double y) { return -0.5 * y * y * y; });
}

Var log(const Var& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return emit(x.tape(), Tensor::scalar(s), {x}, [](const Tensor& g, GradSlots in) {
    if (in[0])
      for (double& v : in[0]->data()) v += g[0];
  });
}

Var row_mean(const Var& x) {
  const std::size_t r = x.value().rows(), c = x.value().cols();
  Tensor out(matrix_shape(r, 1));
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += x.value()[i * c + j];
    out[i] = s / static_cast<double>(c);
  }
  return emit(x.tape(), std::move(out), {x}, [r, c](const Tensor& g, GradSlots in) {
    if (!in[0]) return;
    const double inv = 1.0 / static_cast<double>(c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*in[0])[i * c + j] += g[i] * inv;
  });
}

Var weighted_column_mean(const Var& x, std::span<const double> row_weights) {
  const std::size_t r = x.value().rows(), c = x.value().cols();
  if (row_weights.size() != r)
    throw ShapeError("weighted_column_mean: " + std::to_string(row_weights.size()) +
                     " weights for shape " + shape_to_string(x.shape()));
  double total = 0.0;
  for (double w : row_weights) total += w;
  if (!(total > 0.0)) throw DomainError("weighted_column_mean: total weight must be positive");
  std::vector<double> w(row_weights.begin(), row_weights.end());
  for (double& v : w) v /= total;
  Tensor out(Shape{c});
  for (std::size_t i = 0; i < r; ++i) {
    if (w[i] == 0.0) continue;
    for (std::size_t j = 0; j < c; ++j) out[j] += w[i] * x.value()[i * c + j];
  }
  return emit(x.tape(), std::move(out), {x}, [w = std::move(w), c](const Tensor& g, GradSlots in) {
    if (!in[0]) return;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) (*in[0])[i * c + j] += w[i] * g[j];
    }
  });
}

Var scale_rows(const Var& x, std::span<const double> row_weights) {
  const std::size_t r = x.value().rows(), c = x.value().cols();
  if (row_weights.size() != r)
    throw ShapeError("scale_rows: " + std::to_string(row_weights.size()) + " weights for shape " +
                     shape_to_string(x.shape()));
  std::vector<double> w(row_weights.begin(), row_weights.end());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = w[i] * x.value()[i * c + j];
  return emit(x.tape(), std::move(out), {x}, [w = std::move(w), c](const Tensor& g, GradSlots in) {
    if (!in[0]) return;
    for (std::size_t i = 0; i < w.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) (*in[0])[i * c + j] += w[i] * g[i * c + j];
  });
}

Var select_rows(std::span<const unsigned char> take_a, const Var& a, const Var& b) {
  require_same("select_rows", a, b);
  const std::size_t r = a.value().rows(), c = a.value().cols();
  if (take_a.size() != r) throw ShapeError("select_rows: mask length does not match rows");
  std::vector<unsigned char> mask(take_a.begin(), take_a.end());
  Tensor out(a.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const Tensor& src = mask[i] ? a.value() : b.value();
    std::copy_n(src.data().begin() + i * c, c, out.data().begin() + i * c);
  }
  return emit(tape_of({&a, &b}), std::move(out), {a, b},
              [mask = std::move(mask), c](const Tensor& g, GradSlots in) {
                for (std::size_t i = 0; i < mask.size(); ++i) {
                  Tensor* slot = mask[i] ? in[0] : in[1];
                  if (!slot) continue;
                  for (std::size_t j = 0; j < c; ++j) (*slot)[i * c + j] += g[i * c + j];
                }
              });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return emit(x.tape(), std::move(out), {x}, [](const Tensor& g, GradSlots in) {
    if (in[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
  });
}

Var transpose(const Var& x) {
  const std::size_t r = x.value().rows(), c = x.value().cols();
  Tensor out(matrix_shape(c, r));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.value()[i * c + j];
  return emit(x.tape(), std::move(out), {x}, [r, c](const Tensor& g, GradSlots in) {
    if (!in[0]) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*in[0])[i * c + j] += g[j * r + i];
  });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
  const std::size_t r = x.value().rows(), c = x.value().cols();
  if (count == 0 || begin + count > r)
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " +
                     shape_to_string(x.shape()));
  const auto first = x.value().data().begin() + begin * c;
  Tensor out(matrix_shape(count, c), std::vector<double>(first, first + count * c));
  return emit(x.tape(), std::move(out), {x}, [begin, c](const Tensor& g, GradSlots in) {
    if (!in[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[begin * c + i] += g[i];
  });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
  const std::size_t r = x.value().rows(), c = x.value().cols();
  if (count == 0 || begin + count > c)
    throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " +
                     shape_to_string(x.shape()));
  Tensor out(matrix_shape(r, count));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x.value()[i * c + begin + j];
  return emit(x.tape(), std::move(out), {x}, [r, c, begin, count](const Tensor& g, GradSlots in) {
    if (!in[0]) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) (*in[0])[i * c + begin + j] += g[i * count + j];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts[0].value().cols();
  std::size_t rows = 0;
  Tape* tape = nullptr;
  for (const auto& p : parts) {
    if (p.value().cols() != c) shape_mismatch("concat_rows", parts[0].shape(), p.shape());
    rows += p.value().rows();
    if (!tape && p.recorded()) tape = p.tape();
  }
  std::vector<double> values;
  values.reserve(rows * c);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(values.size());
    values.insert(values.end(), p.value().data().begin(), p.value().data().end());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return emit(tape, Tensor(matrix_shape(rows, c), std::move(values)), std::move(inputs),
              [offsets = std::move(offsets)](const Tensor& g, GradSlots in) {
                for (std::size_t k = 0; k < in.size(); ++k) {
                  if (!in[k]) continue;
                  for (std::size_t i = 0; i < in[k]->size(); ++i) (*in[k])[i] += g[offsets[k] + i];
                }
              });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts[0].value().rows();
  std::size_t cols = 0;
  Tape* tape = nullptr;
  std::vector<std::size_t> offsets, widths;
  for (const auto& p : parts) {
    if (p.value().rows() != r) shape_mismatch("concat_cols", parts[0].shape(), p.shape());
    offsets.push_back(cols);
    widths.push_back(p.value().cols());
    cols += p.value().cols();
    if (!tape && p.recorded()) tape = p.tape();
  }
  Tensor out(matrix_shape(r, cols));
  for (std::size_t k = 0; k < parts.size(); ++k)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j)
        out[i * cols + offsets[k] + j] = parts[k].value()[i * widths[k] + j];
  std::vector<Var> inputs(parts.begin(), parts.end());
  return emit(tape, std::move(out), std::move(inputs),
              [offsets = std::move(offsets), widths = std::move(widths), r, cols](
                  const Tensor& g, GradSlots in) {
                for (std::size_t k = 0; k < in.size(); ++k) {
                  if (!in[k]) continue;
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < widths[k]; ++j)
                      (*in[k])[i * widths[k] + j] += g[i * cols + offsets[k] + j];
                }
              });
}

Var gather_rows(const Var& x, std::span<const std::size_t> indices) {
  const std::size_t r = x.value().rows(), c = x.value().cols();
  if (indices.empty()) throw ShapeError("gather_rows: no indices");
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Tensor out(matrix_shape(idx.size(), c));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= r)
      throw ShapeError("gather_rows: index " + std::to_string(idx[i]) + " out of range for " +
                       shape_to_string(x.shape()));
    std::copy_n(x.value().data().begin() + idx[i] * c, c, out.data().begin() + i * c);
  }
  return emit(x.tape(), std::move(out), {x}, [idx = std::move(idx), c](const Tensor& g, GradSlots in) {
    if (!in[0]) return;
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) (*in[0])[idx[i] * c + j] += g[i * c + j];
  });
}

Var masked_softmax(const Var& scores, std::span<const std::size_t> valid_lengths_per_row) {
  const std::size_t r = scores.value().rows(), c = scores.value().cols();
  if (valid_lengths_per_row.size() != r)
    throw ShapeError("masked_softmax: one valid length per row required");
  std::vector<std::size_t> lens(valid_lengths_per_row.begin(), valid_lengths_per_row.end());
  Tensor out(scores.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t len = lens[i];
    if (len == 0) throw DomainError("masked_softmax: every position is masked");
    if (len > c)
      throw ShapeError("masked_softmax: valid length " + std::to_string(len) + " exceeds " +
                       std::to_string(c) + " columns");
    const double* s = scores.value().data().data() + i * c;
    double* y = out.data().data() + i * c;
    const double mx = *std::max_element(s, s + len);
    double z = 0.0;
    for (std::size_t j = 0; j < len; ++j) z += (y[j] = std::exp(s[j] - mx));
    for (std::size_t j = 0; j < len; ++j) y[j] /= z;
  }
  auto ys = std::make_shared<const Tensor>(out);
  return emit(scores.tape(), std::move(out), {scores},
              [ys, lens = std::move(lens), c](const Tensor& g, GradSlots in) {
                if (!in[0]) return;
                for (std::size_t i = 0; i < lens.size(); ++i) {
                  const double* y = ys->data().data() + i * c;
                  const double* gi = g.data().data() + i * c;
                  double dot = 0.0;
                  for (std::size_t j = 0; j < lens[i]; ++j) dot += y[j] * gi[j];
                  for (std::size_t j = 0; j < lens[i]; ++j) (*in[0])[i * c + j] += y[j] * (gi[j] - dot);
                }
              });
}

Var masked_softmax(const Var& scores, std::size_t valid_length) {
  std::vector<std::size_t> lens(scores.value().rows(), valid_length);
  return masked_softmax(scores, lens);
}

}  // namespace abn
