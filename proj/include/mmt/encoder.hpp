#pragma once

#include <stdexcept>
#include <vector>

#include "mmt/model.hpp"
#include "mmt/tape.hpp"

namespace mmt {

// Per-sequence dropout masks. One mask per site, shared across all
// timesteps of the sequence; inactive packs behave as identity.
template <typename Real>
struct DropoutPack {
  bool active = false;
  Tensor<Real> emb_src, emb_tgt, enc_h, ann, img, dec_h, ctx_txt, ctx_img,
      deepout;

  static DropoutPack none() { return {}; }

  static DropoutPack make(const ModelConfig& cfg, double p, RngState& rng) {
    DropoutPack d;
    if (p <= 0.0) return d;
    d.active = true;
    d.emb_src = dropout_mask<Real>({cfg.embed_dim}, p, rng);
    d.emb_tgt = dropout_mask<Real>({cfg.embed_dim}, p, rng);
    d.enc_h = dropout_mask<Real>({cfg.hidden}, p, rng);
    d.ann = dropout_mask<Real>({2 * cfg.hidden}, p, rng);
    d.dec_h = dropout_mask<Real>({cfg.hidden}, p, rng);
    d.ctx_txt = dropout_mask<Real>({2 * cfg.hidden}, p, rng);
    d.deepout = dropout_mask<Real>({cfg.embed_dim}, p, rng);
    if (cfg.multimodal()) {
      d.img = dropout_mask<Real>({cfg.img_dim}, p, rng);
      d.ctx_img = dropout_mask<Real>({cfg.img_dim}, p, rng);
    }
    return d;
  }
};

template <typename Real>
Var<Real> masked(Var<Real> v, const Tensor<Real>& mask, bool active) {
  return active ? apply_mask(v, mask) : v;
}

// One GRU transition: h = (1-z) .* hbar + z .* h_prev.
template <typename Real>
Var<Real> gru_step(Binder<Real>& B, GruParams<Real>& g, Var<Real> x,
                   Var<Real> h_prev) {
  auto z = sigmoid_(
      add(add(vecmat(x, B(g.Wz)), vecmat(h_prev, B(g.Uz))), B(g.bz)));
  auto r = sigmoid_(
      add(add(vecmat(x, B(g.Wr)), vecmat(h_prev, B(g.Ur))), B(g.br)));
  auto hbar = tanh_(
      add(add(vecmat(x, B(g.Wh)), mul(r, vecmat(h_prev, B(g.Uh)))), B(g.bh)));
  return add(sub(hbar, mul(z, hbar)), mul(z, h_prev));
}

template <typename Real>
struct Annotations {
  Var<Real> C;  // M x 2H
  int M = 0;
};

// Bidirectional GRU over the source tokens; both directions start from a
// zero state and the per-position states are concatenated.
template <typename Real>
Annotations<Real> encode(Tape<Real>& tape, Binder<Real>& B, Model<Real>& m,
                         const std::vector<int>& tokens,
                         const DropoutPack<Real>& drop) {
  if (tokens.empty()) throw std::invalid_argument("encode: empty input");
  const int M = static_cast<int>(tokens.size());
  const int H = m.cfg.hidden;
  Var<Real> Ex = B(m.E_X);

  std::vector<Var<Real>> embs(tokens.size());
  for (int t = 0; t < M; ++t) {
    if (tokens[t] < 0 || tokens[t] >= m.cfg.src_vocab)
      throw std::invalid_argument("encode: token index out of range");
    embs[t] = masked(row(Ex, tokens[t]), drop.emb_src, drop.active);
  }

  std::vector<Var<Real>> fwd(tokens.size()), bwd(tokens.size());
  Var<Real> h = tape.input(Tensor<Real>({H}));
  for (int t = 0; t < M; ++t) {
    h = masked(gru_step(B, m.enc_fwd, embs[t], h), drop.enc_h, drop.active);
    fwd[t] = h;
  }
  h = tape.input(Tensor<Real>({H}));
  for (int t = M - 1; t >= 0; --t) {
    h = masked(gru_step(B, m.enc_bwd, embs[t], h), drop.enc_h, drop.active);
    bwd[t] = h;
  }

  std::vector<Var<Real>> rows(tokens.size());
  for (int t = 0; t < M; ++t)
    rows[t] = masked(concat(fwd[t], bwd[t]), drop.ann, drop.active);
  return {stack_rows<Real>(rows), M};
}

// s0 = tanh(W2 tanh(W1 h_M + b1) + b2) on the final-position annotation.
template <typename Real>
Var<Real> init_state(Binder<Real>& B, Model<Real>& m,
                     const Annotations<Real>& ann) {
  auto h_M = row(ann.C, ann.M - 1);
  auto hid = tanh_(add(vecmat(h_M, B(m.finit_W1)), B(m.finit_b1)));
  return tanh_(add(vecmat(hid, B(m.finit_W2)), B(m.finit_b2)));
}

}  // namespace mmt
