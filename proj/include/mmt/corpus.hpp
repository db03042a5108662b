#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmt/rng.hpp"
#include "mmt/tensor.hpp"
#include "mmt/vocab.hpp"

namespace mmt {

// ---------------------------------------------------------------------------
// FeaturePack: "MMAF" magic, version 1, example count, L, D_ann as u32,
// then count * L * D little-endian float32, location-major.
// ---------------------------------------------------------------------------
struct FeaturePack {
  int count = 0;
  int L = 0;
  int D = 0;
  std::vector<float> data;  // count * L * D

  void resize(int count_, int L_, int D_) {
    count = count_;
    L = L_;
    D = D_;
    data.assign(static_cast<size_t>(count) * L * D, 0.0f);
  }

  float* example(int i) {
    return &data[static_cast<size_t>(i) * L * D];
  }
  const float* example(int i) const {
    return &data[static_cast<size_t>(i) * L * D];
  }

  template <typename Real>
  Tensor<Real> features(int i) const {
    if (i < 0 || i >= count)
      throw std::out_of_range("FeaturePack: example index " +
                              std::to_string(i));
    Tensor<Real> t({L, D});
    const float* src = example(i);
    for (long k = 0; k < static_cast<long>(L) * D; ++k)
      t.data[static_cast<size_t>(k)] = static_cast<Real>(src[k]);
    return t;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("FeaturePack: cannot write " + path);
    os.write("MMAF", 4);
    auto w32 = [&](std::uint32_t v) {
      unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                            static_cast<unsigned char>((v >> 8) & 0xff),
                            static_cast<unsigned char>((v >> 16) & 0xff),
                            static_cast<unsigned char>((v >> 24) & 0xff)};
      os.write(reinterpret_cast<char*>(b), 4);
    };
    w32(1);  // format version
    w32(static_cast<std::uint32_t>(count));
    w32(static_cast<std::uint32_t>(L));
    w32(static_cast<std::uint32_t>(D));
    for (float f : data) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      w32(bits);
    }
  }

  static FeaturePack load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("FeaturePack: cannot read " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "MMAF")
      throw std::runtime_error("FeaturePack: bad magic in " + path);
    auto r32 = [&]() {
      unsigned char b[4];
      is.read(reinterpret_cast<char*>(b), 4);
      if (!is) throw std::runtime_error("FeaturePack: truncated " );
      return static_cast<std::uint32_t>(b[0]) |
             (static_cast<std::uint32_t>(b[1]) << 8) |
             (static_cast<std::uint32_t>(b[2]) << 16) |
             (static_cast<std::uint32_t>(b[3]) << 24);
    };
    std::uint32_t version = r32();
    if (version != 1)
      throw std::runtime_error("FeaturePack: unsupported version " +
                               std::to_string(version));
    FeaturePack p;
    p.count = static_cast<int>(r32());
    p.L = static_cast<int>(r32());
    p.D = static_cast<int>(r32());
    p.data.resize(static_cast<size_t>(p.count) * p.L * p.D);
    for (float& f : p.data) {
      std::uint32_t bits = r32();
      std::memcpy(&f, &bits, 4);
    }
    return p;
  }
};

// ---------------------------------------------------------------------------
// Parallel corpus
// ---------------------------------------------------------------------------
struct ParallelCorpus {
  std::vector<std::vector<int>> src;
  std::vector<std::vector<int>> tgt;
  std::vector<int> feature_index;  // empty when text-only
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;

  size_t size() const { return src.size(); }
};

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

// Loads aligned source/target files (and optionally a feature pack index:
// line i maps to pack example i). Vocabulary keeps every token at desk
// scale (frequency cutoff 1).
inline ParallelCorpus load_corpus(const std::string& src_path,
                                  const std::string& tgt_path,
                                  const FeaturePack* features = nullptr) {
  auto src_lines = read_lines(src_path);
  auto tgt_lines = read_lines(tgt_path);
  if (src_lines.size() != tgt_lines.size())
    throw std::runtime_error("load_corpus: line count mismatch: " +
                             std::to_string(src_lines.size()) + " vs " +
                             std::to_string(tgt_lines.size()));
  if (features && static_cast<size_t>(features->count) < src_lines.size())
    throw std::runtime_error("load_corpus: feature pack has fewer examples "
                             "than the corpus");
  ParallelCorpus c;
  for (const auto& l : src_lines) {
    std::istringstream is(l);
    std::string t;
    while (is >> t) c.src_vocab.add(t);
  }
  for (const auto& l : tgt_lines) {
    std::istringstream is(l);
    std::string t;
    while (is >> t) c.tgt_vocab.add(t);
  }
  for (size_t i = 0; i < src_lines.size(); ++i) {
    c.src.push_back(c.src_vocab.encode(src_lines[i]));
    c.tgt.push_back(c.tgt_vocab.encode(tgt_lines[i]));
    if (features) c.feature_index.push_back(static_cast<int>(i));
  }
  return c;
}

// Re-encodes raw lines against existing vocabularies (dev/test sets).
inline ParallelCorpus encode_corpus(const std::vector<std::string>& src_lines,
                                    const std::vector<std::string>& tgt_lines,
                                    const Vocabulary& src_vocab,
                                    const Vocabulary& tgt_vocab,
                                    bool with_features) {
  ParallelCorpus c;
  c.src_vocab = src_vocab;
  c.tgt_vocab = tgt_vocab;
  for (size_t i = 0; i < src_lines.size(); ++i) {
    c.src.push_back(src_vocab.encode(src_lines[i]));
    c.tgt.push_back(tgt_vocab.encode(tgt_lines[i]));
    if (with_features) c.feature_index.push_back(static_cast<int>(i));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Synthetic planted-signal task. The OBJ slot's gold translation is a class
// token recoverable only from one image grid cell, so text-only accuracy on
// that slot is capped at chance.
// ---------------------------------------------------------------------------
struct SyntheticSpec {
  int grid_side = 4;      // g, L = g^2
  int img_dim = 8;        // D_ann
  int classes = 4;        // K
  int src_alphabet = 10;  // ordinary source token types
  int sent_len = 6;
  int obj_pos = 2;        // ambiguous slot position
  double noise_std = 0.1;
  std::uint64_t seed = 1;
  int n_train = 2000;
  int n_dev = 200;
  int n_test = 200;

  int L() const { return grid_side * grid_side; }

  void validate() const {
    if (classes > L())
      throw std::invalid_argument("SyntheticSpec: K must be <= L");
    if (classes > img_dim)
      throw std::invalid_argument(
          "SyntheticSpec: orthogonal signatures need K <= D_ann");
    if (obj_pos < 0 || obj_pos >= sent_len)
      throw std::invalid_argument("SyntheticSpec: obj_pos out of range");
  }
};

struct SyntheticSplit {
  std::vector<std::string> src_lines;
  std::vector<std::string> tgt_lines;
  FeaturePack pack;
  std::vector<int> planted_cell;   // per example
  std::vector<int> planted_class;  // per example
};

struct SyntheticData {
  SyntheticSplit train, dev, test;
  Vocabulary src_vocab, tgt_vocab;
};

inline SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  RngState rng(spec.seed);
  SyntheticData d;

  // Vocabularies are fixed up front so splits share index spaces.
  std::vector<std::string> src_toks, tgt_toks;
  for (int i = 0; i < spec.src_alphabet; ++i) {
    src_toks.push_back("s" + std::to_string(i));
    tgt_toks.push_back("t" + std::to_string(i));  // fixed bijection s_i->t_i
  }
  for (const auto& t : src_toks) d.src_vocab.add(t);
  d.src_vocab.add("OBJ");
  for (const auto& t : tgt_toks) d.tgt_vocab.add(t);
  for (int k = 0; k < spec.classes; ++k)
    d.tgt_vocab.add("c" + std::to_string(k));

  auto gen_split = [&](SyntheticSplit& s, int n) {
    s.pack.resize(n, spec.L(), spec.img_dim);
    for (int i = 0; i < n; ++i) {
      int cls = static_cast<int>(rng.uniform_int(
          static_cast<std::uint64_t>(spec.classes)));
      int cell = static_cast<int>(
          rng.uniform_int(static_cast<std::uint64_t>(spec.L())));
      std::string src, tgt;
      for (int t = 0; t < spec.sent_len; ++t) {
        if (t) {
          src += ' ';
          tgt += ' ';
        }
        if (t == spec.obj_pos) {
          src += "OBJ";
          tgt += "c" + std::to_string(cls);
        } else {
          int w = static_cast<int>(rng.uniform_int(
              static_cast<std::uint64_t>(spec.src_alphabet)));
          src += src_toks[static_cast<size_t>(w)];
          tgt += tgt_toks[static_cast<size_t>(w)];
        }
      }
      s.src_lines.push_back(src);
      s.tgt_lines.push_back(tgt);
      s.planted_cell.push_back(cell);
      s.planted_class.push_back(cls);
      float* feat = s.pack.example(i);
      for (long k = 0; k < static_cast<long>(spec.L()) * spec.img_dim; ++k)
        feat[k] = static_cast<float>(rng.normal() * spec.noise_std);
      // class signature: unit basis vector e_cls (orthogonal, unit norm)
      float* cellv = feat + static_cast<long>(cell) * spec.img_dim;
      for (int k = 0; k < spec.img_dim; ++k)
        cellv[k] = (k == cls) ? 1.0f : 0.0f;
    }
  };
  gen_split(d.train, spec.n_train);
  gen_split(d.dev, spec.n_dev);
  gen_split(d.test, spec.n_test);
  return d;
}

inline void write_lines(const std::string& path,
                        const std::vector<std::string>& lines) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  for (const auto& l : lines) os << l << '\n';
}

}  // namespace mmt
