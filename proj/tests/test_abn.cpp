#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "abn/abn.hpp"
#include "abn/gradcheck.hpp"
#include "doctest.h"

using namespace abn;

namespace {

SequenceBatch random_batch(Rng& rng, const std::vector<std::size_t>& lengths, std::size_t p) {
  std::vector<Tensor> parts;
  for (auto len : lengths) parts.push_back(gaussian_tensor({len, p}, rng, 1.5));
  return SequenceBatch::from_utterances(parts);
}

// Generator with nonzero output maps so that every parameter matters.
FrameAbnGenerator busy_frame(std::size_t p, std::size_t d_e, Rng& rng) {
  FrameAbnGenerator g = init_frame_generator(p, d_e, rng);
  g.b_e = uniform_tensor({d_e}, rng, -0.5, 0.5);
  g.w_gamma = uniform_tensor({p, d_e}, rng, -0.8, 0.8);
  g.w_beta = uniform_tensor({p, d_e}, rng, -0.8, 0.8);
  g.b_gamma = uniform_tensor({p}, rng, 0.5, 1.5);
  g.b_beta = uniform_tensor({p}, rng, -0.5, 0.5);
  return g;
}

UttAbnGenerator busy_utt(std::size_t p, std::size_t d_a, Rng& rng) {
  UttAbnGenerator g = init_utt_generator(p, d_a, rng);
  g.w_k = uniform_tensor({d_a, p}, rng, -1.0, 1.0);
  g.w_q = uniform_tensor({d_a, p}, rng, -1.0, 1.0);
  g.w_gamma = uniform_tensor({p, d_a}, rng, -0.8, 0.8);
  g.w_beta = uniform_tensor({p, d_a}, rng, -0.8, 0.8);
  g.b_gamma = uniform_tensor({p}, rng, 0.5, 1.5);
  g.b_beta = uniform_tensor({p}, rng, -0.5, 0.5);
  return g;
}

AbnParams frame_params_of(const FrameAbnGenerator& g) {
  AbnParams a;
  a.variant = Variant::abn_frame;
  a.frame = as_constants(g);
  return a;
}

AbnParams utt_params_of(const UttAbnGenerator& g) {
  AbnParams a;
  a.variant = Variant::abn_utt;
  a.utt = as_constants(g);
  return a;
}

AbnParams bn_params_of(const BatchNormState& s) {
  AbnParams a;
  a.gamma = s.gamma;
  a.beta = s.beta;
  return a;
}

}  // namespace

TEST_CASE("variant names round trip") {
  for (Variant v : {Variant::bn, Variant::abn_frame, Variant::abn_utt})
    CHECK(parse_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_variant("abn"), ContractError);
}

TEST_CASE("generator initialization") {
  Rng rng(1);
  const FrameAbnGenerator f = init_frame_generator(8, 4, rng);
  CHECK(f.w_gamma == Tensor::zeros({8, 4}));
  CHECK(f.w_beta == Tensor::zeros({8, 4}));
  CHECK(f.b_gamma == Tensor::ones({8}));
  CHECK(f.b_beta == Tensor::zeros({8}));
  CHECK_THROWS_AS(init_frame_generator(4, 4, rng), ContractError);
  const UttAbnGenerator u = init_utt_generator(8, 3, rng);
  CHECK(u.w_gamma == Tensor::zeros({8, 3}));
  CHECK(u.b_gamma == Tensor::ones({8}));
  CHECK_THROWS_AS(init_utt_generator(3, 5, rng), ContractError);
  // 32 + 4 + 32 + 8 + 32 + 8
  CHECK(frame_generator_parameter_count(8, 4) == 116);
  CHECK(utt_generator_parameter_count(8, 4) == 3 * 32 + 2 * (32 + 8));
}

TEST_CASE("frame_embed examples") {
  FrameAbnVars g{Tensor::zeros({2, 3}), Tensor::zeros({2}), Tensor::zeros({3, 2}),
                 Tensor::ones({3}),     Tensor::zeros({3, 2}), Tensor::zeros({3})};
  const Tensor h = Tensor::matrix({{0.3, -1.0, 2.0}, {1.0, 1.0, 1.0}});
  CHECK(frame_embed(h, g).value() == Tensor::zeros({2, 2}));
  g.b_e = Tensor::filled({2}, std::atanh(0.5));
  const Tensor e = frame_embed(h, g).value();
  for (double v : e.data()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));

  FrameAbnVars small{Tensor::matrix({{1, 1}}), Tensor::zeros({1}), Tensor::zeros({2, 1}),
                     Tensor::ones({2}),       Tensor::zeros({2, 1}), Tensor::zeros({2})};
  CHECK(frame_embed(Tensor::matrix({{1, -1}}), small).value().item() == 0.0);
}

TEST_CASE("frame_attention examples") {
  const Tensor same = Tensor::matrix({{0.2, -0.4}, {0.2, -0.4}, {0.2, -0.4}});
  const Tensor uniform = frame_attention(same, 3).value();
  for (double a : uniform.data()) CHECK(a == doctest::Approx(1.0 / 3.0));
  const Tensor a = frame_attention(Tensor({2, 1}, {std::log(3.0), 0.0}), 2).value();
  CHECK(a[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(a[1] == doctest::Approx(0.25).epsilon(1e-15));
  const Tensor m = frame_attention(Tensor({3, 1}, {0.0, 0.0, 9.0}), 2).value();
  CHECK(m[0] == 0.5);
  CHECK(m[1] == 0.5);
  CHECK(m[2] == 0.0);
  CHECK_THROWS_AS(frame_attention(same, 0), DomainError);
}

TEST_CASE("frame_pool examples") {
  const Tensor v = Tensor::matrix({{0.3, -0.2}, {5.0, 7.0}});
  CHECK(frame_pool(v, Tensor::matrix({{1, 0}})).value() == Tensor::matrix({{0.3, -0.2}}));
  CHECK(frame_pool(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{0.5, 0.5}})).value() ==
        Tensor::matrix({{0.5, 0.5}}));
  const Tensor eq = Tensor::matrix({{0.25, -1.5}, {0.25, -1.5}, {0.25, -1.5}});
  const Tensor u = frame_pool(eq, Tensor::matrix({{0.2, 0.3, 0.5}})).value();
  CHECK(u[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(u[1] == doctest::Approx(-1.5).epsilon(1e-15));
}

TEST_CASE("frame_params examples") {
  Rng rng(2);
  const FrameAbnGenerator fresh = init_frame_generator(3, 2, rng);
  ScaleShift ss = frame_params(Tensor::matrix({{0.4, -0.9}}), as_constants(fresh));
  CHECK(ss.gamma.value() == Tensor::ones({1, 3}));
  CHECK(ss.beta.value() == Tensor::zeros({1, 3}));

  const FrameAbnGenerator busy = busy_frame(3, 2, rng);
  ss = frame_params(Tensor::zeros({1, 2}), as_constants(busy));
  CHECK(ss.gamma.value().values() == busy.b_gamma.values());
  CHECK(ss.beta.value().values() == busy.b_beta.values());

  FrameAbnVars g{Tensor::zeros({1, 2}), Tensor::zeros({1}), Tensor::matrix({{2}, {2}}),
                 Tensor::ones({2}),     Tensor::zeros({2, 1}), Tensor::zeros({2})};
  ss = frame_params(Tensor::matrix({{3}}), g);
  CHECK(ss.gamma.value() == Tensor::filled({1, 2}, 7.0));
}

TEST_CASE("utt_project examples") {
  Rng rng(3);
  const Tensor h = gaussian_tensor({4, 3}, rng);
  UttAbnVars zero{Tensor::zeros({2, 3}), Tensor::zeros({2, 3}), Tensor::zeros({2, 3}),
                  Tensor::zeros({3, 2}), Tensor::ones({3}),     Tensor::zeros({3, 2}),
                  Tensor::zeros({3})};
  Projections p = utt_project(h, zero);
  CHECK(p.keys.value() == Tensor::zeros({4, 2}));
  CHECK(p.queries.value() == Tensor::zeros({4, 2}));
  CHECK(p.values.value() == Tensor::zeros({4, 2}));

  UttAbnVars select = zero;
  select.w_k = Tensor::matrix({{0, 1, 0}});
  p = utt_project(h, select);
  for (std::size_t t = 0; t < 4; ++t) CHECK(p.keys.value()[t] == h.at(t, 1));

  const UttAbnGenerator g = busy_utt(3, 2, rng);
  p = utt_project(h, as_constants(g));
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t a = 0; a < 2; ++a) {
      double k = 0, q = 0, v = 0;
      for (std::size_t j = 0; j < 3; ++j) {
        k += g.w_k.at(a, j) * h.at(t, j);
        q += g.w_q.at(a, j) * h.at(t, j);
        v += g.w_v.at(a, j) * h.at(t, j);
      }
      CHECK(p.keys.value().at(t, a) == doctest::Approx(k).epsilon(1e-14));
      CHECK(p.queries.value().at(t, a) == doctest::Approx(q).epsilon(1e-14));
      CHECK(p.values.value().at(t, a) == doctest::Approx(v).epsilon(1e-14));
    }
}

TEST_CASE("utt_attention examples") {
  CHECK(utt_attention(Tensor::matrix({{0.3, 2.0}}), Tensor::matrix({{-1.0, 0.5}}), 1).value() ==
        Tensor::matrix({{1.0}}));

  const Tensor ones = Tensor::ones({3, 4});
  // Scores are 4 / sqrt(4) = 2 everywhere, so each row is uniform.
  const Tensor a = utt_attention(ones, ones, 3).value();
  for (double v : a.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  double prev_diag = 0.0;
  for (double s : {1.0, 2.0, 4.0, 8.0}) {
    Tensor k = Tensor::identity(3);
    for (double& v : k.data()) v *= s;
    const Tensor att = utt_attention(k, k, 3).value();
    const double diag = att.at(0, 0);
    CHECK(diag > prev_diag);
    CHECK(att.at(1, 1) == doctest::Approx(diag));
    prev_diag = diag;
  }
  CHECK(prev_diag > 0.99);
}

TEST_CASE("utt_context examples") {
  const Tensor v = Tensor::matrix({{2, 0}, {0, 2}});
  CHECK(utt_context(Tensor::identity(2), v).value() == v);
  CHECK(utt_context(Tensor::filled({2, 2}, 0.5), v).value() == Tensor::ones({2, 2}));
  const Tensor same = Tensor::matrix({{0.1, -3.0}, {0.1, -3.0}});
  const Tensor c = utt_context(Tensor::matrix({{0.3, 0.7}, {0.9, 0.1}}), same).value();
  for (std::size_t t = 0; t < 2; ++t) {
    CHECK(c.at(t, 0) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(c.at(t, 1) == doctest::Approx(-3.0).epsilon(1e-15));
  }
}

TEST_CASE("utt_params examples") {
  Rng rng(4);
  const UttAbnGenerator fresh = init_utt_generator(3, 2, rng);
  const Tensor c = gaussian_tensor({5, 2}, rng);
  ScaleShift ss = utt_params(c, as_constants(fresh));
  CHECK(ss.gamma.value() == Tensor::ones({5, 3}));
  CHECK(ss.beta.value() == Tensor::zeros({5, 3}));

  const UttAbnGenerator busy = busy_utt(3, 2, rng);
  ss = utt_params(Tensor::zeros({2, 2}), as_constants(busy));
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(ss.gamma.value().at(t, j) == busy.b_gamma[j]);
      CHECK(ss.beta.value().at(t, j) == busy.b_beta[j]);
    }
  const Tensor same = Tensor::matrix({{0.4, -0.2}, {0.4, -0.2}, {0.4, -0.2}});
  ss = utt_params(same, as_constants(busy));
  for (std::size_t t = 1; t < 3; ++t)
    for (std::size_t j = 0; j < 3; ++j) CHECK(ss.gamma.value().at(t, j) == ss.gamma.value().at(0, j));
}

TEST_CASE("zero-initialized generators reduce to batch normalization") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const SequenceBatch batch = random_batch(rng, {4, 2, 3}, 6);
    BatchNormState ref_state = BatchNormState::fresh(6);
    const SequenceBatch ref = abn_forward(batch, ref_state, bn_params_of(ref_state), Mode::train);
    BatchNormState fs = BatchNormState::fresh(6), us = BatchNormState::fresh(6);
    const SequenceBatch f = abn_forward(batch, fs, frame_params_of(init_frame_generator(6, 3, rng)), Mode::train);
    const SequenceBatch u = abn_forward(batch, us, utt_params_of(init_utt_generator(6, 3, rng)), Mode::train);
    CHECK(max_abs_diff(ref.data, f.data) <= 1e-12);
    CHECK(max_abs_diff(ref.data, u.data) <= 1e-12);
    CHECK(fs.running_mean == ref_state.running_mean);
  }
}

TEST_CASE("frame-level ABN gives each utterance its own scale and shift") {
  Rng rng(6);
  const SequenceBatch batch = random_batch(rng, {5, 4}, 6);
  const FrameAbnGenerator g = busy_frame(6, 3, rng);
  const BatchLayout layout = batch.layout();
  BatchNormState state = BatchNormState::fresh(6);
  AbnTrace trace;
  abn_forward(Var(batch.time_major()), layout, state, frame_params_of(g), Mode::train, {}, &trace);

  // Recompute each utterance on its own from the standardized activations.
  BatchNormState s2 = BatchNormState::fresh(6);
  const Tensor xhat = bn_standardize(Var(batch.time_major()), layout, s2, Mode::train).value();
  for (std::size_t b = 0; b < 2; ++b) {
    const auto rows = layout.utterance_rows(b);
    const Var e = frame_embed(gather_rows(Var(xhat), rows), as_constants(g));
    const Var alpha = frame_attention(e, layout.lengths[b]);
    const ScaleShift ss = frame_params(frame_pool(e, alpha), as_constants(g));
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(trace.gamma.at(b, j) == doctest::Approx(ss.gamma.value()[j]).epsilon(1e-14));
      CHECK(trace.beta.at(b, j) == doctest::Approx(ss.beta.value()[j]).epsilon(1e-14));
    }
  }
  CHECK(max_abs_diff(slice_rows(Var(trace.gamma), 0, 1).value(),
                     slice_rows(Var(trace.gamma), 1, 1).value()) > 1e-6);
}

TEST_CASE("single-frame utterances: both generators reduce to a map of the lone frame") {
  // Two one-frame utterances standardize to h and -h.
  Rng rng(7);
  const SequenceBatch batch = random_batch(rng, {1, 1}, 6);
  FrameAbnGenerator fg = busy_frame(6, 3, rng);
  fg.b_e = Tensor::zeros({3});
  BatchNormState s = BatchNormState::fresh(6);
  AbnTrace ft;
  abn_forward(Var(batch.time_major()), batch.layout(), s, frame_params_of(fg), Mode::train, {}, &ft);

  const Tensor xhat =
      bn_standardize(Var(batch.time_major()), batch.layout(), s, Mode::train).value();
  const Tensor h = slice_rows(Var(xhat), 0, 1).value();
  const Tensor e = frame_embed(h, as_constants(fg)).value();
  double norm2 = 0.0;
  for (double v : h.data()) norm2 += v * v;
  // Value map V_1 = e_1 h_1^T / |h_1|^2 h_1 = e_1, and -h_1 -> -e_1 = tanh(-W_e h_1).
  UttAbnGenerator ug = busy_utt(6, 3, rng);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t j = 0; j < 6; ++j) ug.w_v.at(a, j) = e[a] * h[j] / norm2;
  ug.w_gamma = fg.w_gamma;
  ug.w_beta = fg.w_beta;
  ug.b_gamma = fg.b_gamma;
  ug.b_beta = fg.b_beta;
  BatchNormState s2 = BatchNormState::fresh(6);
  AbnTrace ut;
  abn_forward(Var(batch.time_major()), batch.layout(), s2, utt_params_of(ug), Mode::train, {}, &ut);
  CHECK(ft.attention[0] == Tensor::matrix({{1.0}}));
  CHECK(ut.attention[0] == Tensor::matrix({{1.0}}));
  CHECK(max_abs_diff(ft.gamma, ut.gamma) < 1e-12);
  CHECK(max_abs_diff(ft.beta, ut.beta) < 1e-12);
}

TEST_CASE("padded frames change neither attention nor valid outputs") {
  Rng rng(8);
  SequenceBatch batch = random_batch(rng, {6, 3, 4}, 5);
  const FrameAbnGenerator fg = busy_frame(5, 2, rng);
  const UttAbnGenerator ug = busy_utt(5, 3, rng);
  for (const AbnParams& params : {frame_params_of(fg), utt_params_of(ug)}) {
    SequenceBatch perturbed = batch;
    for (std::size_t b = 0; b < batch.batch(); ++b)
      for (std::size_t t = batch.lengths[b]; t < batch.frames(); ++t)
        for (std::size_t f = 0; f < 5; ++f) perturbed.at(b, t, f) = 50.0 * gaussian(rng);
    BatchNormState s1 = BatchNormState::fresh(5), s2 = BatchNormState::fresh(5);
    AbnTrace t1, t2;
    const Tensor y1 = abn_forward(Var(batch.time_major()), batch.layout(), s1, params, Mode::train, {}, &t1).value();
    const Tensor y2 = abn_forward(Var(perturbed.time_major()), batch.layout(), s2, params, Mode::train, {}, &t2).value();
    CHECK(y1 == y2);
    for (std::size_t b = 0; b < batch.batch(); ++b) {
      const std::size_t valid = batch.lengths[b];
      const Tensor& a = t1.attention[b];
      CHECK(a == t2.attention[b]);
      // Rows consumed for valid frames are probability vectors with no mass on padding.
      for (std::size_t r = 0; r < std::min(a.rows(), valid); ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) {
          if (c >= valid) CHECK(a.at(r, c) == 0.0);
          total += a.at(r, c);
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("frame permutation: frame-level parameters invariant, utterance-level equivariant") {
  Rng rng(9);
  const std::size_t T = 7, p = 5;
  const Tensor frames = gaussian_tensor({T, p}, rng, 2.0);
  const Tensor other = gaussian_tensor({T, p}, rng, 2.0);
  std::vector<std::size_t> perm(T);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[1], perm[4]);
  const Tensor permuted = gather_rows(Var(frames), perm).value();

  const FrameAbnGenerator fg = busy_frame(p, 2, rng);
  const UttAbnGenerator ug = busy_utt(p, 3, rng);
  auto run = [&](const Tensor& first, const AbnParams& params, AbnTrace& trace) {
    const SequenceBatch batch = SequenceBatch::from_utterances({first, other});
    BatchNormState s = BatchNormState::fresh(p);
    return SequenceBatch::from_time_major(
        abn_forward(Var(batch.time_major()), batch.layout(), s, params, Mode::train, {}, &trace).value(),
        batch.layout());
  };
  AbnTrace f1, f2, u1, u2;
  run(frames, frame_params_of(fg), f1);
  run(permuted, frame_params_of(fg), f2);
  CHECK(max_abs_diff(f1.gamma, f2.gamma) < 1e-12);
  CHECK(max_abs_diff(f1.beta, f2.beta) < 1e-12);

  const SequenceBatch y1 = run(frames, utt_params_of(ug), u1);
  const SequenceBatch y2 = run(permuted, utt_params_of(ug), u2);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < p; ++j) {
      CHECK(std::abs(y2.at(0, t, j) - y1.at(0, perm[t], j)) < 1e-12);
      // gamma_t lives in time-major rows t * batch + b
      CHECK(std::abs(u2.gamma.at(t * 2, j) - u1.gamma.at(perm[t] * 2, j)) < 1e-12);
    }
}

TEST_CASE("abn_forward gradients pass the finite-difference check") {
  Rng rng(10);
  const std::size_t p = 6;
  for (std::size_t T : {1, 2, 7}) {
    // Two valid frames in total would make the standardized output independent
    // of x up to epsilon, leaving gradients below finite-difference resolution.
    const SequenceBatch batch = random_batch(rng, {T, T + 1}, p);
    const BatchLayout layout = batch.layout();
    const Tensor x = batch.time_major();
    const Tensor weights = uniform_tensor({x.rows(), p}, rng, -1.0, 1.0);
    auto loss_of = [&](const AbnParams& params, const Var& in) {
      BatchNormState s = BatchNormState::fresh(p);
      return sum(mul(tanh(abn_forward(in, layout, s, params, Mode::train)), Var(weights)));
    };
    const FrameAbnGenerator fg = busy_frame(p, 3, rng);
    const UttAbnGenerator ug = busy_utt(p, 3, rng);
    CHECK(check_gradient([&](const Var& v) { return loss_of(frame_params_of(fg), v); }, x) < 1e-4);
    CHECK(check_gradient([&](const Var& v) { return loss_of(utt_params_of(ug), v); }, x) < 1e-4);

    auto frame_slots = [](FrameAbnVars& g) {
      return std::array<Var*, 6>{&g.w_e, &g.b_e, &g.w_gamma, &g.b_gamma, &g.w_beta, &g.b_beta};
    };
    auto utt_slots = [](UttAbnVars& g) {
      return std::array<Var*, 7>{&g.w_k, &g.w_q, &g.w_v, &g.w_gamma, &g.b_gamma, &g.w_beta, &g.b_beta};
    };
    for (std::size_t k = 0; k < 6; ++k) {
      FrameAbnVars base = as_constants(fg);
      const Tensor theta = frame_slots(base)[k]->value();
      CHECK(check_gradient(
                [&](const Var& v) {
                  AbnParams params = frame_params_of(fg);
                  *frame_slots(*params.frame)[k] = v;
                  return loss_of(params, x);
                },
                theta) < 1e-4);
    }
    for (std::size_t k = 0; k < 7; ++k) {
      UttAbnVars base = as_constants(ug);
      const Tensor theta = utt_slots(base)[k]->value();
      CHECK(check_gradient(
                [&](const Var& v) {
                  AbnParams params = utt_params_of(ug);
                  *utt_slots(*params.utt)[k] = v;
                  return loss_of(params, x);
                },
                theta) < 1e-4);
    }
  }
}
