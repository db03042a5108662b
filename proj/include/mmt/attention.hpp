#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mmt/model.hpp"
#include "mmt/tape.hpp"

namespace mmt {

// Energies e_l = v . tanh(U_a s' + W_a a_l). P = annotations @ W_a is
// precomputed once per sentence and passed in.
template <typename Real>
Var<Real> attn_energies(Binder<Real>& B, SoftAttnParams<Real>& p,
                        Var<Real> P, Var<Real> s_prime) {
  auto q = vecmat(s_prime, B(p.U_a));
  return attn_scores(P, q, B(p.v));
}

template <typename Real>
struct SoftAttnOut {
  Var<Real> alpha;
  Var<Real> context;
};

template <typename Real>
SoftAttnOut<Real> soft_attend(Binder<Real>& B, SoftAttnParams<Real>& p,
                              Var<Real> P, Var<Real> annotations,
                              Var<Real> s_prime) {
  auto alpha = softmax_vec(attn_energies(B, p, P, s_prime));
  return {alpha, weighted_sum(alpha, annotations)};
}

template <typename Real>
struct HardAttnOut {
  int selected = -1;
  Var<Real> context;    // exactly the selected annotation row
  Var<Real> log_alpha;  // log alpha[selected], for the score-function term
};

// Samples gamma ~ Multinoulli(alpha); the context is the selected row, so
// the pathwise gradient bypasses alpha entirely. With sample=false the
// argmax is taken (inference).
template <typename Real>
HardAttnOut<Real> hard_attend(Var<Real> alpha, Var<Real> annotations,
                              RngState* rng, bool sample = true) {
  const Tensor<Real>& av = alpha.value();
  Real s = 0;
  for (Real v : av.data) s += v;
  if (std::abs(static_cast<double>(s) - 1.0) > 1e-4)
    throw std::invalid_argument("hard_attend: alpha is not normalized");
  int j;
  if (sample) {
    if (!rng) throw std::invalid_argument("hard_attend: rng required");
    j = rng->multinoulli(av.data);
  } else {
    j = 0;
    for (int i = 1; i < static_cast<int>(av.data.size()); ++i)
      if (av.data[i] > av.data[j]) j = i;
  }
  return {j, row(annotations, j), log_(pick(alpha, j))};
}

template <typename Real>
struct LocalAttnOut {
  Var<Real> alpha;    // weights over the window, after Gaussian reweighting
  Var<Real> context;
  Var<Real> p_t;      // predicted position, scalar node
  int window_lo = 0;
  int window_hi = 0;
};

// Predictive alignment: p_t = S * sigmoid(v_p . tanh(U_p s')), S = L; the
// window [ceil(p_t - D), floor(p_t + D)] is clipped to valid positions,
// energies and softmax are restricted to it, and the weights are then
// multiplied by exp(-(i - p_t)^2 / (2 sigma^2)) without renormalization.
template <typename Real>
LocalAttnOut<Real> local_attend(Binder<Real>& B, Model<Real>& m,
                                Var<Real> P, Var<Real> annotations,
                                Var<Real> s_prime) {
  const int L = annotations.value().rows();
  const int D = m.cfg.local_D();
  const Real sigma = static_cast<Real>(D) / Real(2);

  auto score = dot(B(m.loc_vp), tanh_(vecmat(s_prime, B(m.loc_Up))));
  auto p_t = scale_const(sigmoid_(score), static_cast<Real>(L));
  double pv = static_cast<double>(p_t.value().data[0]);

  int lo = static_cast<int>(std::ceil(pv - D));
  int hi = static_cast<int>(std::floor(pv + D));
  lo = std::max(0, std::min(lo, L - 1));
  hi = std::max(lo, std::min(hi, L - 1));
  int n = hi - lo + 1;

  auto e = attn_scores(slice_rows(P, lo, n),
                       vecmat(s_prime, B(m.att_img.U_a)), B(m.att_img.v));
  auto alpha = softmax_vec(e);
  std::vector<Real> offsets(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) offsets[static_cast<size_t>(i)] =
      static_cast<Real>(lo + i);
  auto g = gaussian_window(p_t, offsets, sigma);
  auto reweighted = mul(alpha, g);
  auto context = weighted_sum(reweighted, slice_rows(annotations, lo, n));
  return {reweighted, context, p_t, lo, hi};
}

template <typename Real>
struct GateOut {
  Var<Real> beta;  // scalar in [0, 1]
  Var<Real> context;
};

// beta_t = sigmoid(W_beta . s_prev + b_beta); scales the image context.
template <typename Real>
GateOut<Real> gate_context(Binder<Real>& B, Model<Real>& m, Var<Real> s_prev,
                           Var<Real> context) {
  auto beta = sigmoid_(add(dot(s_prev, B(m.gate_W)), B(m.gate_b)));
  return {beta, scale_by(beta, context)};
}

// Grounding: merge every image annotation with s0, L2-normalize, score each
// location with two position-shared 1x1 layers, softmax, and rescale the
// original annotations. Applied once per sentence before decoding.
template <typename Real>
Var<Real> ground_annotations(Binder<Real>& B, Model<Real>& m, Var<Real> I,
                             Var<Real> s0) {
  Var<Real> s0p = s0;
  if (m.grd_P.value.numel() > 0) s0p = vecmat(s0, B(m.grd_P));
  auto merged = tanh_(add_rowvec(I, s0p));
  auto normed = normalize_rows(merged);
  auto hidden = tanh_(add_rowvec(matmul(normed, B(m.grd_W1)), B(m.grd_b1)));
  auto scores = add(matvec(hidden, B(m.grd_W2)),
                    broadcast_scalar(B(m.grd_b2), I.value().rows()));
  auto weights = softmax_vec(scores);
  return scale_rows(I, weights);
}

}  // namespace mmt
