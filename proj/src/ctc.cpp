#include "abn/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "abn/random.hpp"

namespace abn {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

void validate_labels(const LabelSequence& labels, std::size_t vocab) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kBlank)
      throw ContractError("label " + std::to_string(i) + " is the blank symbol");
    if (labels[i] >= vocab)
      throw ContractError("label " + std::to_string(i) + " = " + std::to_string(labels[i]) +
                          " outside vocabulary of size " + std::to_string(vocab));
  }
}

std::size_t ctc_min_frames(const LabelSequence& labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++n;
  return n;
}

Tensor log_softmax_rows(const Tensor& logits) {
  const std::size_t T = logits.rows(), V = logits.cols();
  Tensor out(logits.shape());
  for (std::size_t t = 0; t < T; ++t) {
    const double* x = logits.data().data() + t * V;
    const double mx = *std::max_element(x, x + V);
    double z = 0.0;
    for (std::size_t k = 0; k < V; ++k) z += std::exp(x[k] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t k = 0; k < V; ++k) out[t * V + k] = x[k] - lz;
  }
  return out;
}

CtcResult ctc_loss_value(const Tensor& logits, const LabelSequence& labels) {
  const std::size_t T = logits.rows(), V = logits.cols();
  validate_labels(labels, V);
  CtcResult res;
  res.grad = Tensor::zeros({T, V});
  if (T < ctc_min_frames(labels)) {
    res.loss = std::numeric_limits<double>::infinity();
    res.feasible = false;
    return res;
  }
  const Tensor lp = log_softmax_rows(logits);
  const std::size_t S = 2 * labels.size() + 1;
  auto sym = [&](std::size_t s) { return s % 2 == 0 ? kBlank : labels[s / 2]; };
  // Skip transition s-2 -> s allowed for tokens differing from the token two back.
  auto can_skip = [&](std::size_t s) { return s >= 2 && sym(s) != kBlank && sym(s) != sym(s - 2); };

  std::vector<double> alpha(T * S, kNegInf), beta(T * S, kNegInf);
  auto A = [&](std::size_t t, std::size_t s) -> double& { return alpha[t * S + s]; };
  auto B = [&](std::size_t t, std::size_t s) -> double& { return beta[t * S + s]; };
  auto LP = [&](std::size_t t, std::size_t s) { return lp[t * V + sym(s)]; };

  A(0, 0) = LP(0, 0);
  if (S > 1) A(0, 1) = LP(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = A(t - 1, s);
      if (s >= 1) acc = log_add(acc, A(t - 1, s - 1));
      if (can_skip(s)) acc = log_add(acc, A(t - 1, s - 2));
      if (acc != kNegInf) A(t, s) = acc + LP(t, s);
    }
  }
  double log_p = A(T - 1, S - 1);
  if (S > 1) log_p = log_add(log_p, A(T - 1, S - 2));
  if (log_p == kNegInf) {
    res.loss = std::numeric_limits<double>::infinity();
    res.feasible = false;
    return res;
  }

  B(T - 1, S - 1) = LP(T - 1, S - 1);
  if (S > 1) B(T - 1, S - 2) = LP(T - 1, S - 2);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = B(t + 1, s);
      if (s + 1 < S) acc = log_add(acc, B(t + 1, s + 1));
      if (s + 2 < S && can_skip(s + 2)) acc = log_add(acc, B(t + 1, s + 2));
      if (acc != kNegInf) B(t, s) = acc + LP(t, s);
    }
  }

  res.loss = -log_p;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < V; ++k) res.grad[t * V + k] = std::exp(lp[t * V + k]);
    for (std::size_t s = 0; s < S; ++s) {
      const double occ = A(t, s) + B(t, s) - LP(t, s) - log_p;
      if (occ != kNegInf && !std::isnan(occ)) res.grad[t * V + sym(s)] -= std::exp(occ);
    }
  }
  return res;
}

Var ctc_loss(const Var& logits, const LabelSequence& labels) {
  CtcResult r = ctc_loss_value(logits.value(), labels);
  auto grad = std::make_shared<const Tensor>(std::move(r.grad));
  Tensor out = Tensor::scalar(r.loss);
  if (!logits.recorded()) return Var(std::move(out));
  return logits.tape()->record(std::move(out), {logits}, [grad](const Tensor& g, GradSlots in) {
    if (!in[0]) return;
    for (std::size_t i = 0; i < grad->size(); ++i) (*in[0])[i] += g[0] * (*grad)[i];
  });
}

LabelSequence ctc_collapse(const std::vector<std::size_t>& path) {
  LabelSequence out;
  std::size_t prev = kBlank;
  for (std::size_t k : path) {
    if (k != kBlank && k != prev) out.push_back(k);
    prev = k;
  }
  return out;
}

double ctc_brute_force(const Tensor& logprobs, const LabelSequence& labels) {
  const std::size_t T = logprobs.rows(), V = logprobs.cols();
  if (T > kBruteForceMaxFrames || V > kBruteForceMaxVocab)
    throw ContractError("ctc_brute_force: T=" + std::to_string(T) + ", V=" + std::to_string(V) +
                        " is too large to enumerate (limits T<=8, V<=4)");
  validate_labels(labels, V);
  std::vector<std::size_t> path(T, 0);
  double total = 0.0;
  for (;;) {
    if (ctc_collapse(path) == labels) {
      double lp = 0.0;
      for (std::size_t t = 0; t < T; ++t) lp += logprobs[t * V + path[t]];
      total += std::exp(lp);
    }
    std::size_t t = 0;
    while (t < T && ++path[t] == V) path[t++] = 0;
    if (t == T) break;
  }
  return -std::log(total);
}

OracleSweep ctc_oracle_sweep(std::size_t max_frames, const std::vector<std::size_t>& vocab_sizes,
                             std::size_t max_label_length, std::uint64_t seed, double tolerance) {
  OracleSweep out;
  Rng rng(seed);
  for (std::size_t V : vocab_sizes) {
    if (V < 2) throw ContractError("oracle sweep needs at least one non-blank token");
    // All label sequences up to the maximum length, shortest first.
    std::vector<LabelSequence> all{{}};
    for (std::size_t i = 0; i < all.size(); ++i)
      if (all[i].size() < max_label_length)
        for (std::size_t tok = 1; tok < V; ++tok) {
          LabelSequence next = all[i];
          next.push_back(tok);
          all.push_back(std::move(next));
        }
    for (std::size_t T = 1; T <= max_frames; ++T)
      for (const auto& labels : all) {
        const Tensor logits = gaussian_tensor({T, V}, rng, 2.0);
        const double oracle = ctc_brute_force(log_softmax_rows(logits), labels);
        const CtcResult r = ctc_loss_value(logits, labels);
        ++out.cases;
        if (std::isinf(oracle) || !r.feasible) {
          if (std::isinf(oracle) && !r.feasible)
            ++out.infeasible;
          else
            ++out.mismatches;
          continue;
        }
        const double d = std::abs(oracle - r.loss);
        out.max_abs_diff = std::max(out.max_abs_diff, d);
        if (!(d <= tolerance)) ++out.mismatches;
      }
  }
  return out;
}

LabelSequence greedy_decode(const Tensor& logits) {
  const std::size_t T = logits.rows(), V = logits.cols();
  std::vector<std::size_t> path(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double* x = logits.data().data() + t * V;
    path[t] = static_cast<std::size_t>(std::max_element(x, x + V) - x);
  }
  return ctc_collapse(path);
}

std::size_t edit_distance(const LabelSequence& hyp, const LabelSequence& ref) {
  std::vector<std::size_t> prev(ref.size() + 1), cur(ref.size() + 1);
  for (std::size_t j = 0; j <= ref.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[ref.size()];
}

ErrorRate token_error_rate(const LabelSequence& hyp, const LabelSequence& ref) {
  ErrorRate r;
  r.distance = edit_distance(hyp, ref);
  r.reference_length = ref.size();
  if (!ref.empty()) r.rate = static_cast<double>(r.distance) / static_cast<double>(ref.size());
  return r;
}

}  // namespace abn
