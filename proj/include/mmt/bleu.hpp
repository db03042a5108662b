#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmt {

struct BleuReport {
  double precision[4] = {0, 0, 0, 0};  // modified n-gram precisions p_1..p_4
  double brevity_penalty = 1.0;
  double score = 0.0;  // in [0, 100]
  long candidate_length = 0;
  long reference_length = 0;

  std::string tsv() const {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    os << precision[0] << '\t' << precision[1] << '\t' << precision[2] << '\t'
       << precision[3] << '\t' << brevity_penalty << '\t' << score;
    return os.str();
  }
};

namespace bleu_detail {

using Tokens = std::vector<std::string>;

inline std::map<Tokens, long> ngram_counts(const Tokens& toks, int n) {
  std::map<Tokens, long> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (size_t i = 0; i + n <= toks.size(); ++i)
    counts[Tokens(toks.begin() + static_cast<long>(i),
                  toks.begin() + static_cast<long>(i) + n)]++;
  return counts;
}

inline Tokens split_ws(const std::string& line) {
  Tokens out;
  std::istringstream is(line);
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

struct Stats {
  long correct[4] = {0, 0, 0, 0};
  long total[4] = {0, 0, 0, 0};
  long cand_len = 0;
  long ref_len = 0;

  void add(const Tokens& cand, const Tokens& ref) {
    cand_len += static_cast<long>(cand.size());
    ref_len += static_cast<long>(ref.size());
    for (int n = 1; n <= 4; ++n) {
      auto cc = ngram_counts(cand, n);
      auto rc = ngram_counts(ref, n);
      for (const auto& [gram, cnt] : cc) {
        total[n - 1] += cnt;
        auto it = rc.find(gram);
        if (it != rc.end()) correct[n - 1] += std::min(cnt, it->second);
      }
    }
  }
};

inline BleuReport finish(const Stats& s, bool smooth) {
  BleuReport r;
  r.candidate_length = s.cand_len;
  r.reference_length = s.ref_len;
  double logsum = 0.0;
  bool zero = false;
  for (int n = 0; n < 4; ++n) {
    long correct = s.correct[n];
    long total = s.total[n];
    if (smooth && n >= 1) {  // add-one smoothing for n >= 2
      correct += 1;
      total += 1;
    }
    double p = total > 0 ? static_cast<double>(correct) / total : 0.0;
    r.precision[n] = p;
    if (p <= 0.0)
      zero = true;
    else
      logsum += std::log(p);
  }
  r.brevity_penalty =
      (s.cand_len <= s.ref_len && s.cand_len > 0)
          ? std::exp(1.0 - static_cast<double>(s.ref_len) / s.cand_len)
          : 1.0;
  r.score = zero ? 0.0 : r.brevity_penalty * std::exp(logsum / 4.0) * 100.0;
  return r;
}

}  // namespace bleu_detail

// Corpus-level BLEU-4, single reference, whitespace tokens, case-sensitive.
inline BleuReport corpus_bleu4(const std::vector<std::string>& candidates,
                               const std::vector<std::string>& references) {
  if (candidates.empty())
    throw std::invalid_argument("corpus_bleu4: empty corpus");
  if (candidates.size() != references.size())
    throw std::invalid_argument(
        "corpus_bleu4: candidate/reference count mismatch: " +
        std::to_string(candidates.size()) + " vs " +
        std::to_string(references.size()));
  bleu_detail::Stats stats;
  for (size_t i = 0; i < candidates.size(); ++i)
    stats.add(bleu_detail::split_ws(candidates[i]),
              bleu_detail::split_ws(references[i]));
  return bleu_detail::finish(stats, /*smooth=*/false);
}

// Sentence-level BLEU-4 with add-one smoothing for n >= 2.
inline double sentence_bleu4(const std::string& candidate,
                             const std::string& reference) {
  auto cand = bleu_detail::split_ws(candidate);
  auto ref = bleu_detail::split_ws(reference);
  if (cand.empty() || ref.empty())
    throw std::invalid_argument("sentence_bleu4: empty input");
  bleu_detail::Stats stats;
  stats.add(cand, ref);
  return bleu_detail::finish(stats, /*smooth=*/true).score;
}

}  // namespace mmt
