#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmt/init.hpp"
#include "mmt/rng.hpp"
#include "mmt/tape.hpp"
#include "mmt/tensor.hpp"
#include "mmt/vocab.hpp"

namespace mmt {

enum class ImgAttn { none, soft, hard, local };

inline std::string to_string(ImgAttn a) {
  switch (a) {
    case ImgAttn::none: return "none";
    case ImgAttn::soft: return "soft";
    case ImgAttn::hard: return "hard";
    case ImgAttn::local: return "local";
  }
  return "none";
}

inline ImgAttn img_attn_from_string(const std::string& s) {
  if (s == "none") return ImgAttn::none;
  if (s == "soft") return ImgAttn::soft;
  if (s == "hard") return ImgAttn::hard;
  if (s == "local") return ImgAttn::local;
  throw std::invalid_argument("unknown image attention mode: " + s);
}

struct ModelConfig {
  int src_vocab = 0;
  int tgt_vocab = 0;
  int embed_dim = 620;
  int hidden = 1024;   // encoder hidden size; decoder uses the same width
  int attn_dim = 0;    // 0 -> hidden
  int img_len = 196;   // L
  int img_dim = 1024;  // D_ann
  ImgAttn img_attention = ImgAttn::none;
  bool gating = false;
  bool doubling = false;
  bool grounding = false;
  int grounding_hidden = 512;
  int local_window = 0;  // D; 0 -> min(49, L/4)

  bool multimodal() const { return img_attention != ImgAttn::none; }
  int attn_dim_text() const { return attn_dim > 0 ? attn_dim : hidden; }
  int attn_dim_img() const {
    return doubling ? 2 * img_dim : attn_dim_text();
  }
  int local_D() const {
    if (local_window > 0) return local_window;
    return std::max(1, std::min(49, img_len / 4));
  }
};

// One GRU cell's weights: W* act on the input, U* on the state.
template <typename Real>
struct GruParams {
  Parameter<Real> Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh;

  void allocate(const std::string& prefix, int in_dim, int hid) {
    Wz = {prefix + ".Wz", init_zero<Real>({in_dim, hid})};
    Uz = {prefix + ".Uz", init_zero<Real>({hid, hid})};
    bz = {prefix + ".bz", init_zero<Real>({hid})};
    Wr = {prefix + ".Wr", init_zero<Real>({in_dim, hid})};
    Ur = {prefix + ".Ur", init_zero<Real>({hid, hid})};
    br = {prefix + ".br", init_zero<Real>({hid})};
    Wh = {prefix + ".Wh", init_zero<Real>({in_dim, hid})};
    Uh = {prefix + ".Uh", init_zero<Real>({hid, hid})};
    bh = {prefix + ".bh", init_zero<Real>({hid})};
  }
  void init(RngState& rng) {
    for (auto* p : {&Wz, &Wr, &Wh})
      p->value = init_gaussian<Real>(p->value.shape, rng);
    for (auto* p : {&Uz, &Ur, &Uh})
      p->value = init_orthogonal<Real>(p->value.shape, rng);
  }
  void collect(std::vector<Parameter<Real>*>& out) {
    for (auto* p : {&Wz, &Uz, &bz, &Wr, &Ur, &br, &Wh, &Uh, &bh})
      out.push_back(p);
  }
};

// Energy-network weights for one attention head (Eq. form
// e_l = v . tanh(U_a s' + W_a a_l), row-vector convention).
template <typename Real>
struct SoftAttnParams {
  Parameter<Real> U_a, W_a, v;

  void allocate(const std::string& prefix, int state_dim, int ann_dim,
                int attn_dim) {
    U_a = {prefix + ".U_a", init_zero<Real>({state_dim, attn_dim})};
    W_a = {prefix + ".W_a", init_zero<Real>({ann_dim, attn_dim})};
    v = {prefix + ".v", init_zero<Real>({attn_dim})};
  }
  void init(RngState& rng) {
    for (auto* p : {&U_a, &W_a, &v})
      p->value = init_gaussian<Real>(p->value.shape, rng);
  }
  void collect(std::vector<Parameter<Real>*>& out) {
    for (auto* p : {&U_a, &W_a, &v}) out.push_back(p);
  }
};

template <typename Real>
struct Model {
  ModelConfig cfg;

  Parameter<Real> E_X, E_Y;
  GruParams<Real> enc_fwd, enc_bwd;
  Parameter<Real> finit_W1, finit_b1, finit_W2, finit_b2;

  GruParams<Real> rec1;       // input: target embedding
  GruParams<Real> rec2_txt;   // input: text context (2H)
  Parameter<Real> rec2_img_Wz, rec2_img_Wr, rec2_img_Wh;  // image context

  SoftAttnParams<Real> att_txt, att_img;
  Parameter<Real> loc_Up, loc_vp;           // local attention alignment
  Parameter<Real> gate_W, gate_b;           // gating scalar
  Parameter<Real> grd_W1, grd_b1, grd_W2, grd_b2, grd_P;  // grounding

  Parameter<Real> out_Ls, out_Lc, out_Li, out_Lw, out_bt, out_Lo, out_bo;

  std::vector<Parameter<Real>*> params;  // registration order = manifest order

  explicit Model(ModelConfig c) : cfg(c) { allocate(); }

  void allocate() {
    const int E = cfg.embed_dim, H = cfg.hidden, D = cfg.img_dim;
    const int A = cfg.attn_dim_text(), Ai = cfg.attn_dim_img();
    params.clear();

    E_X = {"E_X", init_zero<Real>({cfg.src_vocab, E})};
    E_Y = {"E_Y", init_zero<Real>({cfg.tgt_vocab, E})};
    enc_fwd.allocate("enc.fwd", E, H);
    enc_bwd.allocate("enc.bwd", E, H);
    finit_W1 = {"finit.W1", init_zero<Real>({2 * H, H})};
    finit_b1 = {"finit.b1", init_zero<Real>({H})};
    finit_W2 = {"finit.W2", init_zero<Real>({H, H})};
    finit_b2 = {"finit.b2", init_zero<Real>({H})};

    rec1.allocate("dec.rec1", E, H);
    rec2_txt.allocate("dec.rec2", 2 * H, H);
    att_txt.allocate("att.txt", H, 2 * H, A);

    out_Ls = {"out.Ls", init_zero<Real>({H, E})};
    out_Lc = {"out.Lc", init_zero<Real>({2 * H, E})};
    out_Lw = {"out.Lw", init_zero<Real>({E, E})};
    out_bt = {"out.bt", init_zero<Real>({E})};
    out_Lo = {"out.Lo", init_zero<Real>({E, cfg.tgt_vocab})};
    out_bo = {"out.bo", init_zero<Real>({cfg.tgt_vocab})};

    params.push_back(&E_X);
    params.push_back(&E_Y);
    enc_fwd.collect(params);
    enc_bwd.collect(params);
    for (auto* p : {&finit_W1, &finit_b1, &finit_W2, &finit_b2})
      params.push_back(p);
    rec1.collect(params);
    rec2_txt.collect(params);
    att_txt.collect(params);
    for (auto* p : {&out_Ls, &out_Lc, &out_Lw, &out_bt, &out_Lo, &out_bo})
      params.push_back(p);

    if (cfg.multimodal()) {
      att_img.allocate("att.img", H, D, Ai);
      att_img.collect(params);
      rec2_img_Wz = {"dec.rec2.img.Wz", init_zero<Real>({D, H})};
      rec2_img_Wr = {"dec.rec2.img.Wr", init_zero<Real>({D, H})};
      rec2_img_Wh = {"dec.rec2.img.Wh", init_zero<Real>({D, H})};
      out_Li = {"out.Li", init_zero<Real>({D, E})};
      for (auto* p : {&rec2_img_Wz, &rec2_img_Wr, &rec2_img_Wh, &out_Li})
        params.push_back(p);
      if (cfg.img_attention == ImgAttn::local) {
        loc_Up = {"loc.Up", init_zero<Real>({H, A})};
        loc_vp = {"loc.vp", init_zero<Real>({A})};
        params.push_back(&loc_Up);
        params.push_back(&loc_vp);
      }
      if (cfg.gating) {
        gate_W = {"gate.W", init_zero<Real>({H})};
        gate_b = {"gate.b", init_zero<Real>({1})};
        params.push_back(&gate_W);
        params.push_back(&gate_b);
      }
      if (cfg.grounding) {
        const int G = cfg.grounding_hidden;
        grd_W1 = {"grd.W1", init_zero<Real>({D, G})};
        grd_b1 = {"grd.b1", init_zero<Real>({G})};
        grd_W2 = {"grd.W2", init_zero<Real>({G})};
        grd_b2 = {"grd.b2", init_zero<Real>({1})};
        for (auto* p : {&grd_W1, &grd_b1, &grd_W2, &grd_b2})
          params.push_back(p);
        if (H != D) {
          grd_P = {"grd.P", init_zero<Real>({H, D})};
          params.push_back(&grd_P);
        }
      }
    }
  }

  // Gaussian for non-recurrent weights, orthogonal recurrent matrices,
  // zero biases.
  void init(RngState& rng) {
    E_X.value = init_gaussian<Real>(E_X.value.shape, rng);
    E_Y.value = init_gaussian<Real>(E_Y.value.shape, rng);
    enc_fwd.init(rng);
    enc_bwd.init(rng);
    for (auto* p : {&finit_W1, &finit_W2})
      p->value = init_gaussian<Real>(p->value.shape, rng);
    rec1.init(rng);
    rec2_txt.init(rng);
    att_txt.init(rng);
    for (auto* p : {&out_Ls, &out_Lc, &out_Lw, &out_Lo})
      p->value = init_gaussian<Real>(p->value.shape, rng);
    if (cfg.multimodal()) {
      att_img.init(rng);
      for (auto* p : {&rec2_img_Wz, &rec2_img_Wr, &rec2_img_Wh, &out_Li})
        p->value = init_gaussian<Real>(p->value.shape, rng);
      if (cfg.img_attention == ImgAttn::local) {
        loc_Up.value = init_gaussian<Real>(loc_Up.value.shape, rng);
        loc_vp.value = init_gaussian<Real>(loc_vp.value.shape, rng);
      }
      if (cfg.gating)
        gate_W.value = init_gaussian<Real>(gate_W.value.shape, rng);
      if (cfg.grounding) {
        grd_W1.value = init_gaussian<Real>(grd_W1.value.shape, rng);
        grd_W2.value = init_gaussian<Real>(grd_W2.value.shape, rng);
        if (grd_P.value.numel() > 0)
          grd_P.value = init_gaussian<Real>(grd_P.value.shape, rng);
      }
    }
  }

  void reset_grads() {
    for (auto* p : params) p->reset_grad();
  }

  long param_count() const {
    long n = 0;
    for (auto* p : params) n += p->value.numel();
    return n;
  }

  template <typename Other>
  Model<Other> cast() const {
    Model<Other> out(cfg);
    for (size_t i = 0; i < params.size(); ++i)
      out.params[i]->value = params[i]->value.template cast<Other>();
    return out;
  }
};

// Per-pass leaf binder: at most one tape node per parameter, created on
// first use.
template <typename Real>
class Binder {
 public:
  explicit Binder(Tape<Real>& tape) : tape_(&tape) {}

  Var<Real> operator()(Parameter<Real>& p) {
    auto it = cache_.find(&p);
    if (it != cache_.end()) return it->second;
    Var<Real> v = tape_->leaf(p);
    cache_.emplace(&p, v);
    return v;
  }

 private:
  Tape<Real>* tape_;
  std::unordered_map<Parameter<Real>*, Var<Real>> cache_;
};

// ---------------------------------------------------------------------------
// Checkpoint: "MMCK" magic, little-endian u32 manifest length, JSON manifest
// (config, vocab hashes, parameter names+shapes), then raw little-endian
// float32 data per parameter in manifest order.
// ---------------------------------------------------------------------------

namespace checkpoint {

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"src_vocab", c.src_vocab},
          {"tgt_vocab", c.tgt_vocab},
          {"embed_dim", c.embed_dim},
          {"hidden", c.hidden},
          {"attn_dim", c.attn_dim},
          {"img_len", c.img_len},
          {"img_dim", c.img_dim},
          {"img_attention", to_string(c.img_attention)},
          {"gating", c.gating},
          {"doubling", c.doubling},
          {"grounding", c.grounding},
          {"grounding_hidden", c.grounding_hidden},
          {"local_window", c.local_window}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.src_vocab = j.at("src_vocab");
  c.tgt_vocab = j.at("tgt_vocab");
  c.embed_dim = j.at("embed_dim");
  c.hidden = j.at("hidden");
  c.attn_dim = j.at("attn_dim");
  c.img_len = j.at("img_len");
  c.img_dim = j.at("img_dim");
  c.img_attention = img_attn_from_string(j.at("img_attention"));
  c.gating = j.at("gating");
  c.doubling = j.at("doubling");
  c.grounding = j.at("grounding");
  c.grounding_hidden = j.at("grounding_hidden");
  c.local_window = j.at("local_window");
  return c;
}

template <typename Real>
void save(const Model<Real>& m, const std::string& path,
          std::uint64_t src_vocab_hash, std::uint64_t tgt_vocab_hash) {
  nlohmann::json manifest;
  manifest["config"] = config_to_json(m.cfg);
  manifest["src_vocab_hash"] = src_vocab_hash;
  manifest["tgt_vocab_hash"] = tgt_vocab_hash;
  nlohmann::json plist = nlohmann::json::array();
  for (auto* p : m.params)
    plist.push_back({{"name", p->name}, {"shape", p->value.shape}});
  manifest["params"] = plist;

  std::string mstr = manifest.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  os.write("MMCK", 4);
  std::uint32_t len = static_cast<std::uint32_t>(mstr.size());
  unsigned char lb[4] = {static_cast<unsigned char>(len & 0xff),
                         static_cast<unsigned char>((len >> 8) & 0xff),
                         static_cast<unsigned char>((len >> 16) & 0xff),
                         static_cast<unsigned char>((len >> 24) & 0xff)};
  os.write(reinterpret_cast<char*>(lb), 4);
  os.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  for (auto* p : m.params) {
    for (Real v : p->value.data) {
      float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      unsigned char b[4] = {static_cast<unsigned char>(bits & 0xff),
                            static_cast<unsigned char>((bits >> 8) & 0xff),
                            static_cast<unsigned char>((bits >> 16) & 0xff),
                            static_cast<unsigned char>((bits >> 24) & 0xff)};
      os.write(reinterpret_cast<char*>(b), 4);
    }
  }
}

struct LoadedMeta {
  std::uint64_t src_vocab_hash = 0;
  std::uint64_t tgt_vocab_hash = 0;
};

template <typename Real>
Model<Real> load(const std::string& path, LoadedMeta* meta = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot read " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "MMCK")
    throw std::runtime_error("checkpoint: bad magic in " + path);
  unsigned char lb[4];
  is.read(reinterpret_cast<char*>(lb), 4);
  std::uint32_t len = static_cast<std::uint32_t>(lb[0]) |
                      (static_cast<std::uint32_t>(lb[1]) << 8) |
                      (static_cast<std::uint32_t>(lb[2]) << 16) |
                      (static_cast<std::uint32_t>(lb[3]) << 24);
  std::string mstr(len, '\0');
  is.read(mstr.data(), len);
  if (!is) throw std::runtime_error("checkpoint: truncated manifest");
  nlohmann::json manifest = nlohmann::json::parse(mstr);

  Model<Real> m(config_from_json(manifest.at("config")));
  if (meta) {
    meta->src_vocab_hash = manifest.at("src_vocab_hash");
    meta->tgt_vocab_hash = manifest.at("tgt_vocab_hash");
  }
  const auto& plist = manifest.at("params");
  if (plist.size() != m.params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (size_t i = 0; i < m.params.size(); ++i) {
    Parameter<Real>* p = m.params[i];
    std::string name = plist[i].at("name");
    std::vector<int> shape = plist[i].at("shape");
    if (name != p->name || shape != p->value.shape)
      throw std::runtime_error("checkpoint: manifest entry " + name +
                               " does not match model parameter " + p->name);
    for (Real& v : p->value.data) {
      unsigned char b[4];
      is.read(reinterpret_cast<char*>(b), 4);
      if (!is) throw std::runtime_error("checkpoint: truncated payload");
      std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                           (static_cast<std::uint32_t>(b[1]) << 8) |
                           (static_cast<std::uint32_t>(b[2]) << 16) |
                           (static_cast<std::uint32_t>(b[3]) << 24);
      float f;
      std::memcpy(&f, &bits, 4);
      v = static_cast<Real>(f);
    }
  }
  return m;
}

}  // namespace checkpoint

}  // namespace mmt
