#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mmt/adadelta.hpp"
#include "mmt/bleu.hpp"
#include "mmt/corpus.hpp"
#include "mmt/decoder.hpp"
#include "mmt/model.hpp"

namespace mmt {

// Moving-average baseline for the score-function estimator:
// b <- 0.9 b + 0.1 * log p(y | sampled gamma, I).
struct HardBaseline {
  double value = 0.0;
  static constexpr double kDecay = 0.9;
  static constexpr double kWeight = 0.1;

  void update(double log_likelihood) {
    value = kDecay * value + kWeight * log_likelihood;
  }
};

template <typename Real>
struct SentenceLoss {
  Var<Real> loss;       // summed negative log-likelihood
  Var<Real> score_sum;  // sum_t log alpha_{t, gamma_t} (hard mode)
  bool has_score = false;
  int n_tokens = 0;
  double nll = 0.0;
};

// Teacher-forced NLL graph over target tokens plus the terminating <eos>.
template <typename Real>
SentenceLoss<Real> nll_graph(Tape<Real>& tape, Binder<Real>& B,
                             Model<Real>& m, const std::vector<int>& src,
                             const std::vector<int>& tgt,
                             const Tensor<Real>* features,
                             const DropoutPack<Real>& drop,
                             RngState* rng = nullptr,
                             bool sample_hard = false,
                             DecodeTrace<Real>* trace = nullptr) {
  for (int y : tgt)
    if (y < 0 || y >= m.cfg.tgt_vocab)
      throw std::invalid_argument("nll_graph: target index out of range: " +
                                  std::to_string(y));
  auto ctx = prepare_sentence(tape, B, m, src, features, drop);
  std::vector<int> gold = tgt;
  gold.push_back(Vocabulary::kEos);

  SentenceLoss<Real> out;
  Var<Real> state = ctx.s0;
  int y_prev = -1;
  for (size_t t = 0; t < gold.size(); ++t) {
    TraceRow<Real> row;
    auto step = decode_step(tape, B, m, ctx, state, y_prev, drop, rng,
                            sample_hard, trace ? &row : nullptr);
    auto step_loss = cross_entropy_logits(step.logits, gold[t]);
    out.loss = (t == 0) ? step_loss : add(out.loss, step_loss);
    if (step.has_score_term) {
      out.score_sum = out.has_score ? add(out.score_sum, step.log_alpha_sel)
                                    : step.log_alpha_sel;
      out.has_score = true;
    }
    if (trace) trace->push_back(std::move(row));
    state = step.s_t;
    y_prev = gold[t];
  }
  out.n_tokens = static_cast<int>(gold.size());
  out.nll = static_cast<double>(out.loss.value().data[0]);
  return out;
}

// Deterministic-path loss value (soft/local/none image attention).
template <typename Real>
double nll_loss(Model<Real>& m, const std::vector<int>& src,
                const std::vector<int>& tgt, const Tensor<Real>* features,
                double* per_token = nullptr) {
  Tape<Real> tape;
  Binder<Real> B(tape);
  DropoutPack<Real> drop;
  auto sl = nll_graph(tape, B, m, src, tgt, features, drop);
  if (per_token) *per_token = sl.nll / sl.n_tokens;
  return sl.nll;
}

// Monte Carlo gradient for hard attention (Eq. form: pathwise term plus
// (log p - b) times the score-function term), averaged over n_samples and
// accumulated into the parameter grads with overall weight `scale`.
// Returns false (batch item skipped) on a non-finite sampled likelihood.
template <typename Real>
bool hard_step_gradient(Model<Real>& m, const std::vector<int>& src,
                        const std::vector<int>& tgt,
                        const Tensor<Real>* features, double dropout_p,
                        RngState& rng, HardBaseline& baseline,
                        int n_samples, Real scale, double* mean_nll,
                        std::string* diag = nullptr) {
  double ll_sum = 0.0;
  double nll_sum = 0.0;
  for (int n = 0; n < n_samples; ++n) {
    Tape<Real> tape;
    Binder<Real> B(tape);
    auto drop = dropout_p > 0
                    ? DropoutPack<Real>::make(m.cfg, dropout_p, rng)
                    : DropoutPack<Real>();
    auto sl = nll_graph(tape, B, m, src, tgt, features, drop, &rng,
                        /*sample_hard=*/true);
    double ll = -sl.nll;
    if (!std::isfinite(ll)) {
      if (diag) *diag = "non-finite sampled log-likelihood";
      return false;
    }
    ll_sum += ll;
    nll_sum += sl.nll;
    Real per_sample = scale / static_cast<Real>(n_samples);
    if (sl.has_score) {
      // surrogate: nll - (ll - b) * sum_t log alpha_{t,gamma_t}
      Real coeff = -static_cast<Real>(ll - baseline.value);
      tape.backward2(sl.loss, sl.score_sum, coeff, per_sample);
    } else {
      tape.backward(sl.loss, per_sample);
    }
  }
  baseline.update(ll_sum / n_samples);
  if (mean_nll) *mean_nll = nll_sum / n_samples;
  return true;
}

struct TrainConfig {
  int batch_size = 80;  // 40 is the multimodal default at paper scale
  double dropout = 0.5;
  int patience = 20;
  int max_epochs = 100;
  std::uint64_t seed = 1;
  int n_samples = 1;  // Monte Carlo samples per sentence, hard mode
  int max_decode_len = 50;
  double adadelta_rho = 0.95;
  double adadelta_eps = 1e-6;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;  // mean per-sentence NLL
  double dev_bleu = 0.0;
  double baseline = 0.0;
  double wall_secs = 0.0;

  std::string tsv() const {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << epoch << '\t' << train_loss << '\t' << dev_bleu
       << '\t' << baseline << '\t' << wall_secs;
    return os.str();
  }
};

template <typename Real>
struct TrainResult {
  std::vector<EpochLog> log;
  Model<Real> best;
  double best_bleu = -1.0;
  int best_epoch = -1;
  int stopped_epoch = 0;
};

// Greedy-decodes a corpus and scores it against the gold target lines.
template <typename Real>
double dev_bleu(Model<Real>& m, const ParallelCorpus& corpus,
                const FeaturePack* pack, int max_len) {
  std::vector<std::string> hyp, ref;
  for (size_t i = 0; i < corpus.size(); ++i) {
    std::optional<Tensor<Real>> feat;
    if (m.cfg.multimodal()) {
      if (!pack) throw std::invalid_argument("dev_bleu: features required");
      feat = pack->features<Real>(corpus.feature_index[i]);
    }
    auto res = greedy_decode(m, corpus.src[i], feat ? &*feat : nullptr,
                             max_len);
    hyp.push_back(corpus.tgt_vocab.decode(res.tokens));
    ref.push_back(corpus.tgt_vocab.decode(corpus.tgt[i]));
  }
  return corpus_bleu4(hyp, ref).score;
}

// Epoch loop with BLEU-4 early stopping: keeps the best-dev checkpoint and
// halts when no improvement is seen for more than `patience` epochs.
template <typename Real>
TrainResult<Real> train(Model<Real>& m, const ParallelCorpus& train_corpus,
                        const FeaturePack* train_pack,
                        const ParallelCorpus& dev_corpus,
                        const FeaturePack* dev_pack, const TrainConfig& cfg,
                        std::ostream* log_stream = nullptr) {
  if (dev_corpus.size() == 0)
    throw std::invalid_argument("train: dev set must be nonempty");
  RngState rng(cfg.seed);
  AdadeltaState<Real> opt(m, static_cast<Real>(cfg.adadelta_rho),
                          static_cast<Real>(cfg.adadelta_eps));
  HardBaseline baseline;
  TrainResult<Real> result{.best = m};

  std::vector<size_t> order(train_corpus.size());
  std::iota(order.begin(), order.end(), 0);

  int since_best = 0;
  auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    // deterministic Fisher-Yates shuffle
    for (size_t i = order.size(); i > 1; --i) {
      size_t j = rng.uniform_int(i);
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    long n_sentences = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      size_t end = std::min(order.size(),
                            start + static_cast<size_t>(cfg.batch_size));
      m.reset_grads();
      Real scale = Real(1) / static_cast<Real>(end - start);
      long batch_ok = 0;
      for (size_t k = start; k < end; ++k) {
        size_t i = order[k];
        std::optional<Tensor<Real>> feat;
        if (m.cfg.multimodal())
          feat = train_pack->features<Real>(train_corpus.feature_index[i]);
        double nll = 0.0;
        if (m.cfg.img_attention == ImgAttn::hard) {
          if (!hard_step_gradient(m, train_corpus.src[i], train_corpus.tgt[i],
                                  feat ? &*feat : nullptr, cfg.dropout, rng,
                                  baseline, cfg.n_samples, scale, &nll))
            continue;  // skipped with diagnostic
        } else {
          Tape<Real> tape;
          Binder<Real> B(tape);
          auto drop = cfg.dropout > 0
                          ? DropoutPack<Real>::make(m.cfg, cfg.dropout, rng)
                          : DropoutPack<Real>();
          auto sl = nll_graph(tape, B, m, train_corpus.src[i],
                              train_corpus.tgt[i], feat ? &*feat : nullptr,
                              drop);
          tape.backward(sl.loss, scale);
          nll = sl.nll;
        }
        loss_sum += nll;
        ++batch_ok;
      }
      n_sentences += batch_ok;
      if (batch_ok > 0) opt.update(m);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = n_sentences ? loss_sum / n_sentences : 0.0;
    log.dev_bleu = dev_bleu(m, dev_corpus, dev_pack, cfg.max_decode_len);
    log.baseline = baseline.value;
    log.wall_secs = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    result.log.push_back(log);
    if (log_stream) *log_stream << log.tsv() << '\n' << std::flush;

    if (log.dev_bleu > result.best_bleu) {
      result.best_bleu = log.dev_bleu;
      result.best_epoch = epoch;
      result.best = m;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best > cfg.patience) {
        result.stopped_epoch = epoch;
        return result;
      }
    }
    result.stopped_epoch = epoch;
  }
  return result;
}

}  // namespace mmt
