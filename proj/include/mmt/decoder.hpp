#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "mmt/attention.hpp"
#include "mmt/encoder.hpp"
#include "mmt/model.hpp"
#include "mmt/tape.hpp"

namespace mmt {

// Per-step record for inspection: text/image attention weights, gating
// scalar, local alignment, hard selection and output logits.
template <typename Real>
struct TraceRow {
  std::vector<Real> alpha_txt;
  std::vector<Real> alpha_img;  // full length L; zero outside window/one-hot
  Real beta = Real(-1);         // -1 when gating is off
  Real p_t = Real(-1);          // -1 unless local attention
  int selected = -1;            // hard attention only
  std::vector<Real> logits;
};

template <typename Real>
using DecodeTrace = std::vector<TraceRow<Real>>;

// Everything fixed for one sentence: annotations, image annotations
// (grounded if enabled), their attention projections, and s0.
template <typename Real>
struct SentenceCtx {
  Annotations<Real> ann;
  Var<Real> s0;
  Var<Real> P_txt;  // M x A
  bool has_image = false;
  Var<Real> I;      // L x D
  Var<Real> P_img;  // L x Ai
};

template <typename Real>
SentenceCtx<Real> prepare_sentence(Tape<Real>& tape, Binder<Real>& B,
                                   Model<Real>& m,
                                   const std::vector<int>& src_tokens,
                                   const Tensor<Real>* features,
                                   const DropoutPack<Real>& drop) {
  SentenceCtx<Real> ctx;
  ctx.ann = encode(tape, B, m, src_tokens, drop);
  ctx.s0 = init_state(B, m, ctx.ann);
  ctx.P_txt = matmul(ctx.ann.C, B(m.att_txt.W_a));
  if (m.cfg.multimodal()) {
    if (!features)
      throw std::invalid_argument(
          "prepare_sentence: image attention configured but no features "
          "given");
    if (features->shape != std::vector<int>{m.cfg.img_len, m.cfg.img_dim})
      throw std::invalid_argument("prepare_sentence: feature shape " +
                                  features->shape_str() + " does not match " +
                                  "configured LxD");
    ctx.has_image = true;
    ctx.I = tape.input(*features);
    if (drop.active) {
      Tensor<Real> tiled({m.cfg.img_len, m.cfg.img_dim});
      for (int l = 0; l < m.cfg.img_len; ++l)
        for (int d = 0; d < m.cfg.img_dim; ++d)
          tiled.at2(l, d) = drop.img.data[static_cast<size_t>(d)];
      ctx.I = apply_mask(ctx.I, tiled);
    }
    if (m.cfg.grounding)
      ctx.I = ground_annotations(B, m, ctx.I, ctx.s0);
    ctx.P_img = matmul(ctx.I, B(m.att_img.W_a));
  }
  return ctx;
}

// Target embedding for the previous token; index -1 means sequence start
// (zero vector).
template <typename Real>
Var<Real> target_embedding(Tape<Real>& tape, Binder<Real>& B, Model<Real>& m,
                           int y_prev, const DropoutPack<Real>& drop) {
  if (y_prev < -1 || y_prev >= m.cfg.tgt_vocab)
    throw std::invalid_argument("target_embedding: invalid token index " +
                                std::to_string(y_prev));
  if (y_prev < 0) return tape.input(Tensor<Real>({m.cfg.embed_dim}));
  return masked(row(B(m.E_Y), y_prev), drop.emb_tgt, drop.active);
}

// REC1: hidden state proposal from the previous state and previous word.
template <typename Real>
Var<Real> rec1(Binder<Real>& B, Model<Real>& m, Var<Real> s_prev,
               Var<Real> y_emb) {
  return gru_step(B, m.rec1, y_emb, s_prev);
}

// REC2 with the text context only.
template <typename Real>
Var<Real> rec2_mono(Binder<Real>& B, Model<Real>& m, Var<Real> s_prime,
                    Var<Real> c_t) {
  return gru_step(B, m.rec2_txt, c_t, s_prime);
}

// REC2 with both contexts; the image context enters every gate through its
// own weight matrices.
template <typename Real>
Var<Real> rec2_multi(Binder<Real>& B, Model<Real>& m, Var<Real> s_prime,
                     Var<Real> c_t, Var<Real> i_t) {
  GruParams<Real>& g = m.rec2_txt;
  auto z = sigmoid_(add(
      add(add(vecmat(c_t, B(g.Wz)), vecmat(i_t, B(m.rec2_img_Wz))),
          vecmat(s_prime, B(g.Uz))),
      B(g.bz)));
  auto r = sigmoid_(add(
      add(add(vecmat(c_t, B(g.Wr)), vecmat(i_t, B(m.rec2_img_Wr))),
          vecmat(s_prime, B(g.Ur))),
      B(g.br)));
  auto hbar = tanh_(add(
      add(add(vecmat(c_t, B(g.Wh)), vecmat(i_t, B(m.rec2_img_Wh))),
          mul(r, vecmat(s_prime, B(g.Uh)))),
      B(g.bh)));
  return add(sub(hbar, mul(z, hbar)), mul(z, s_prime));
}

// Deep output layer: L_o tanh(L_s s + L_c c [+ L_i i] + L_w E_Y[y_prev]).
template <typename Real>
Var<Real> output_logits(Binder<Real>& B, Model<Real>& m, Var<Real> s_t,
                        Var<Real> c_t, std::optional<Var<Real>> i_t,
                        Var<Real> y_emb, const DropoutPack<Real>& drop) {
  auto pre = add(vecmat(masked(s_t, drop.dec_h, drop.active), B(m.out_Ls)),
                 vecmat(c_t, B(m.out_Lc)));
  if (i_t) pre = add(pre, vecmat(*i_t, B(m.out_Li)));
  pre = add(add(pre, vecmat(y_emb, B(m.out_Lw))), B(m.out_bt));
  auto hid = masked(tanh_(pre), drop.deepout, drop.active);
  return add(vecmat(hid, B(m.out_Lo)), B(m.out_bo));
}

template <typename Real>
struct StepOut {
  Var<Real> s_t;
  Var<Real> logits;
  Var<Real> log_alpha_sel;  // hard mode only
  bool has_score_term = false;
};

// One decode step: rec1 -> text attention -> image attention -> optional
// gating -> rec2 -> deep output. Populates one trace row if given.
template <typename Real>
StepOut<Real> decode_step(Tape<Real>& tape, Binder<Real>& B, Model<Real>& m,
                          const SentenceCtx<Real>& ctx, Var<Real> s_prev,
                          int y_prev, const DropoutPack<Real>& drop,
                          RngState* rng, bool sample_hard,
                          TraceRow<Real>* trace) {
  auto y_emb = target_embedding(tape, B, m, y_prev, drop);
  auto s_prime = rec1(B, m, s_prev, y_emb);

  auto txt = soft_attend(B, m.att_txt, ctx.P_txt, ctx.ann.C, s_prime);
  auto c_t = masked(txt.context, drop.ctx_txt, drop.active);

  StepOut<Real> out;
  std::optional<Var<Real>> i_t;
  if (m.cfg.multimodal()) {
    if (!ctx.has_image)
      throw std::invalid_argument("decode_step: image context required");
    const int L = m.cfg.img_len;
    Var<Real> img_ctx;
    switch (m.cfg.img_attention) {
      case ImgAttn::soft: {
        auto a = soft_attend(B, m.att_img, ctx.P_img, ctx.I, s_prime);
        img_ctx = a.context;
        if (trace) {
          trace->alpha_img.assign(a.alpha.value().data.begin(),
                                  a.alpha.value().data.end());
        }
        break;
      }
      case ImgAttn::hard: {
        auto a = soft_attend(B, m.att_img, ctx.P_img, ctx.I, s_prime);
        auto h = hard_attend(a.alpha, ctx.I, rng, sample_hard);
        img_ctx = h.context;
        out.log_alpha_sel = h.log_alpha;
        out.has_score_term = true;
        if (trace) {
          trace->alpha_img.assign(static_cast<size_t>(L), Real(0));
          trace->alpha_img[static_cast<size_t>(h.selected)] = Real(1);
          trace->selected = h.selected;
        }
        break;
      }
      case ImgAttn::local: {
        auto a = local_attend(B, m, ctx.P_img, ctx.I, s_prime);
        img_ctx = a.context;
        if (trace) {
          trace->alpha_img.assign(static_cast<size_t>(L), Real(0));
          const auto& w = a.alpha.value().data;
          for (int i = a.window_lo; i <= a.window_hi; ++i)
            trace->alpha_img[static_cast<size_t>(i)] =
                w[static_cast<size_t>(i - a.window_lo)];
          trace->p_t = a.p_t.value().data[0];
        }
        break;
      }
      case ImgAttn::none:
        break;
    }
    if (m.cfg.gating) {
      auto gated = gate_context(B, m, s_prev, img_ctx);
      img_ctx = gated.context;
      if (trace) trace->beta = gated.beta.value().data[0];
    }
    i_t = masked(img_ctx, drop.ctx_img, drop.active);
  }

  out.s_t = i_t ? rec2_multi(B, m, s_prime, c_t, *i_t)
                : rec2_mono(B, m, s_prime, c_t);
  out.logits = output_logits(B, m, out.s_t, c_t, i_t, y_emb, drop);

  if (trace) {
    trace->alpha_txt.assign(txt.alpha.value().data.begin(),
                            txt.alpha.value().data.end());
    trace->logits.assign(out.logits.value().data.begin(),
                         out.logits.value().data.end());
  }
  return out;
}

template <typename Real>
struct GreedyResult {
  std::vector<int> tokens;  // without the terminating <eos>
  DecodeTrace<Real> trace;
};

// Greedy search from s0; emits the argmax token each step and stops at
// <eos> or max_len. Hard attention uses argmax(alpha) at inference.
template <typename Real>
GreedyResult<Real> greedy_decode(Model<Real>& m,
                                 const std::vector<int>& src_tokens,
                                 const Tensor<Real>* features, int max_len) {
  if (max_len < 1)
    throw std::invalid_argument("greedy_decode: max_len must be >= 1");
  GreedyResult<Real> res;
  Tape<Real> tape;
  Binder<Real> B(tape);
  DropoutPack<Real> drop;  // evaluation mode
  auto ctx = prepare_sentence(tape, B, m, src_tokens, features, drop);
  Var<Real> state = ctx.s0;
  int y_prev = -1;
  for (int t = 0; t < max_len; ++t) {
    TraceRow<Real> row;
    auto step = decode_step(tape, B, m, ctx, state, y_prev, drop, nullptr,
                            /*sample_hard=*/false, &row);
    const auto& lg = step.logits.value().data;
    int best = 0;
    for (int i = 1; i < static_cast<int>(lg.size()); ++i)
      if (lg[i] > lg[best]) best = i;
    if (best == Vocabulary::kEos) break;
    res.trace.push_back(std::move(row));
    res.tokens.push_back(best);
    state = step.s_t;
    y_prev = best;
  }
  return res;
}

}  // namespace mmt
