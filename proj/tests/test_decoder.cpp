#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "mmt/decoder.hpp"
#include "mmt/gradcheck.hpp"
#include "mmt/model.hpp"

using namespace mmt;

namespace {

ModelConfig tiny_cfg(ImgAttn mode = ImgAttn::none) {
  ModelConfig c;
  c.src_vocab = 7;
  c.tgt_vocab = 7;
  c.embed_dim = 3;
  c.hidden = 4;
  c.img_len = 4;
  c.img_dim = 3;
  c.img_attention = mode;
  return c;
}

// Copies every parameter of `src` into the same-named parameter of `dst`;
// parameters missing on either side are left alone.
template <typename Real>
void copy_shared(Model<Real>& dst, const Model<Real>& src) {
  for (auto* d : dst.params)
    for (auto* s : src.params)
      if (d->name == s->name && d->value.shape == s->value.shape)
        d->value = s->value;
}

}  // namespace

TEST_CASE("rec2_multi zero-weight closed form", "[decoder]") {
  Model<double> m(tiny_cfg(ImgAttn::soft));  // all weights zero

  Tape<double> t;
  Binder<double> B(t);
  Tensor<double> sp({4}, {0.4, -0.2, 1.0, -1.0});
  auto s = rec2_multi(B, m, t.input(sp),
                      t.input(Tensor<double>({8}, std::vector<double>(8, 1.0))),
                      t.input(Tensor<double>({3}, {1, 2, 3})));
  // z = 0.5, hbar = 0 -> s_t = 0.5 * s_prime
  for (int j = 0; j < 4; ++j)
    CHECK(s.value().data[j] == Catch::Approx(0.5 * sp.data[j]));
}

TEST_CASE("rec2_multi matches scalar oracle", "[decoder]") {
  Model<double> m(tiny_cfg(ImgAttn::soft));
  RngState rng(31);
  m.init(rng);

  std::vector<double> sp{0.2, -0.6, 0.9, 0.1};
  std::vector<double> c(8), im(3);
  for (auto& v : c) v = rng.normal();
  for (auto& v : im) v = rng.normal();

  auto affine = [&](const Tensor<double>& W, const Tensor<double>& Wi,
                    const Tensor<double>& U, const Tensor<double>& b, int j) {
    double acc = b.data[j];
    for (int i = 0; i < 8; ++i) acc += c[static_cast<size_t>(i)] * W.at2(i, j);
    for (int i = 0; i < 3; ++i) acc += im[static_cast<size_t>(i)] * Wi.at2(i, j);
    for (int i = 0; i < 4; ++i) acc += sp[static_cast<size_t>(i)] * U.at2(i, j);
    return acc;
  };
  auto& g = m.rec2_txt;
  std::vector<double> expect(4);
  for (int j = 0; j < 4; ++j) {
    double z = 1 / (1 + std::exp(-affine(g.Wz.value, m.rec2_img_Wz.value,
                                         g.Uz.value, g.bz.value, j)));
    double r = 1 / (1 + std::exp(-affine(g.Wr.value, m.rec2_img_Wr.value,
                                         g.Ur.value, g.br.value, j)));
    double uh = 0;
    for (int i = 0; i < 4; ++i)
      uh += sp[static_cast<size_t>(i)] * g.Uh.value.at2(i, j);
    double wx = g.bh.value.data[j];
    for (int i = 0; i < 8; ++i)
      wx += c[static_cast<size_t>(i)] * g.Wh.value.at2(i, j);
    for (int i = 0; i < 3; ++i)
      wx += im[static_cast<size_t>(i)] * m.rec2_img_Wh.value.at2(i, j);
    double hbar = std::tanh(wx + r * uh);
    expect[static_cast<size_t>(j)] = (1 - z) * hbar + z * sp[static_cast<size_t>(j)];
  }

  Tape<double> t;
  Binder<double> B(t);
  auto s = rec2_multi(B, m, t.input(Tensor<double>({4}, sp)),
                      t.input(Tensor<double>({8}, c)),
                      t.input(Tensor<double>({3}, im)));
  for (int j = 0; j < 4; ++j)
    CHECK(s.value().data[j] ==
          Catch::Approx(expect[static_cast<size_t>(j)]).epsilon(1e-12));
}

TEST_CASE("zero image weights reduce multimodal to text-only", "[decoder]") {
  Model<double> mono(tiny_cfg(ImgAttn::none));
  RngState rng(37);
  mono.init(rng);

  Model<double> mm(tiny_cfg(ImgAttn::soft));
  RngState rng2(41);
  mm.init(rng2);  // image-path weights get values...
  copy_shared(mm, mono);
  // ...then every image-specific weight is zeroed
  for (auto* p : {&mm.rec2_img_Wz, &mm.rec2_img_Wr, &mm.rec2_img_Wh,
                  &mm.out_Li})
    p->value.zero();

  std::vector<int> src{2, 5, 1};
  Tensor<double> feat({4, 3});
  for (auto& v : feat.data) v = rng.normal();

  auto logits_of = [&](Model<double>& m, const Tensor<double>* f) {
    Tape<double> t;
    Binder<double> B(t);
    DropoutPack<double> drop;
    auto ctx = prepare_sentence<double>(t, B, m, src, f, drop);
    auto step = decode_step<double>(t, B, m, ctx, ctx.s0, -1, drop, nullptr, false,
                            nullptr);
    return step.logits.value().data;
  };
  auto a = logits_of(mono, nullptr);
  auto b = logits_of(mm, &feat);
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(std::abs(a[i] - b[i]) <= 1e-6);
}

TEST_CASE("output_logits with zero weights is uniform", "[decoder]") {
  Model<double> m(tiny_cfg());
  Tape<double> t;
  Binder<double> B(t);
  DropoutPack<double> drop;
  RngState rng(5);
  auto s = t.input(init_gaussian<double>({4}, rng, 1.0));
  auto c = t.input(init_gaussian<double>({8}, rng, 1.0));
  auto y = t.input(init_gaussian<double>({3}, rng, 1.0));
  auto lg = output_logits<double>(B, m, s, c, std::nullopt, y, drop);
  for (double v : lg.value().data) CHECK(v == 0.0);
  auto p = softmax_vec(lg);
  for (double v : p.value().data) CHECK(v == Catch::Approx(1.0 / 7));
}

TEST_CASE("decode_step is deterministic and fills the trace", "[decoder]") {
  for (ImgAttn mode : {ImgAttn::soft, ImgAttn::local}) {
    ModelConfig c = tiny_cfg(mode);
    c.gating = true;
    Model<double> m(c);
    RngState rng(43);
    m.init(rng);
    std::vector<int> src{1, 3, 6};
    Tensor<double> feat({4, 3});
    for (auto& v : feat.data) v = rng.normal();

    auto run = [&]() {
      Tape<double> t;
      Binder<double> B(t);
      DropoutPack<double> drop;
      auto ctx = prepare_sentence<double>(t, B, m, src, &feat, drop);
      TraceRow<double> row;
      auto step = decode_step<double>(t, B, m, ctx, ctx.s0, 2, drop, nullptr, false,
                              &row);
      (void)step;
      return row;
    };
    auto r1 = run(), r2 = run();
    CHECK(r1.logits == r2.logits);
    CHECK(r1.alpha_img == r2.alpha_img);
    CHECK(r1.alpha_txt.size() == 3);
    CHECK(r1.alpha_img.size() == 4);
    CHECK(r1.beta >= 0.0);
    CHECK(r1.beta <= 1.0);
    double sum_txt = 0;
    for (double v : r1.alpha_txt) sum_txt += v;
    CHECK(sum_txt == Catch::Approx(1.0));
    if (mode == ImgAttn::soft) {
      double sum_img = 0;
      for (double v : r1.alpha_img) sum_img += v;
      CHECK(sum_img == Catch::Approx(1.0));
      CHECK(r1.p_t == -1.0);
    } else {
      // local: reweighted mass never exceeds 1, alignment point recorded
      double sum_img = 0;
      for (double v : r1.alpha_img) sum_img += v;
      CHECK(sum_img <= 1.0 + 1e-12);
      CHECK(r1.p_t >= 0.0);
      CHECK(r1.p_t <= 4.0);
    }
  }
}

TEST_CASE("hard trace row is one-hot at inference argmax", "[decoder]") {
  Model<double> m(tiny_cfg(ImgAttn::hard));
  RngState rng(47);
  m.init(rng);
  Tensor<double> feat({4, 3});
  for (auto& v : feat.data) v = rng.normal();

  Tape<double> t;
  Binder<double> B(t);
  DropoutPack<double> drop;
  auto ctx = prepare_sentence<double>(t, B, m, {2, 4}, &feat, drop);
  TraceRow<double> row;
  auto step = decode_step<double>(t, B, m, ctx, ctx.s0, -1, drop, nullptr,
                          /*sample_hard=*/false, &row);
  CHECK(step.has_score_term);
  CHECK(row.selected >= 0);
  CHECK(row.selected < 4);
  double sum = 0;
  for (double v : row.alpha_img) sum += v;
  CHECK(sum == 1.0);
  CHECK(row.alpha_img[static_cast<size_t>(row.selected)] == 1.0);
}

TEST_CASE("prepare_sentence validates features", "[decoder]") {
  Model<double> m(tiny_cfg(ImgAttn::soft));
  RngState rng(7);
  m.init(rng);
  Tape<double> t;
  Binder<double> B(t);
  DropoutPack<double> drop;

  CHECK_THROWS_AS(prepare_sentence<double>(t, B, m, {1, 2}, nullptr, drop),
                  std::invalid_argument);
  Tensor<double> bad({3, 3});
  CHECK_THROWS_AS(prepare_sentence<double>(t, B, m, {1, 2}, &bad, drop),
                  std::invalid_argument);
}

TEST_CASE("greedy_decode stops at eos and respects max_len", "[decoder]") {
  // all-zero model: logits all zero, argmax = index 0 = <eos> -> empty
  {
    Model<double> m(tiny_cfg());
    auto res = greedy_decode<double>(m, {1, 2}, nullptr, 10);
    CHECK(res.tokens.empty());
    CHECK(res.trace.empty());
  }
  // biased output: token 3 always wins -> runs to max_len
  {
    Model<double> m(tiny_cfg());
    m.out_bo.value.data[3] = 5.0;
    auto res = greedy_decode<double>(m, {1, 2}, nullptr, 6);
    CHECK(res.tokens == std::vector<int>(6, 3));
    CHECK(res.trace.size() == res.tokens.size());
  }
  {
    Model<double> m(tiny_cfg());
    CHECK_THROWS_AS(greedy_decode<double>(m, {1}, nullptr, 0),
                    std::invalid_argument);
  }
}

TEST_CASE("full decoder path passes grad_check", "[decoder]") {
  ModelConfig c = tiny_cfg(ImgAttn::soft);
  c.gating = true;
  Model<double> m(c);
  RngState rng(53);
  m.init(rng);
  std::vector<int> src{2, 5, 1};
  Tensor<double> feat({4, 3});
  for (auto& v : feat.data) v = rng.normal();

  auto build = [&](Tape<double>& t) {
    Binder<double> B(t);
    DropoutPack<double> drop;
    auto ctx = prepare_sentence<double>(t, B, m, src, &feat, drop);
    auto s1 = decode_step<double>(t, B, m, ctx, ctx.s0, -1, drop, nullptr, false,
                          nullptr);
    auto l1 = cross_entropy_logits(s1.logits, 3);
    auto s2 = decode_step<double>(t, B, m, ctx, s1.s_t, 3, drop, nullptr, false,
                          nullptr);
    return add(l1, cross_entropy_logits(s2.logits, 0));
  };

  m.reset_grads();
  {
    Tape<double> t;
    t.backward(build(t));
  }
  auto res = grad_check(
      [&]() {
        Tape<double> t;
        return build(t).value().data[0];
      },
      m.params);
  INFO("worst: " << res.worst_param << " rel " << res.max_rel_error);
  CHECK(res.max_rel_error <= 1e-4);
}

TEST_CASE("checkpoint round-trip preserves parameters", "[decoder]") {
  ModelConfig c = tiny_cfg(ImgAttn::local);
  c.gating = true;
  c.grounding = true;
  c.grounding_hidden = 5;
  Model<float> m(c);
  RngState rng(59);
  m.init(rng);

  namespace fs = std::filesystem;
  auto path = (fs::temp_directory_path() / "mmt_ckpt_test.bin").string();
  checkpoint::save(m, path, 111, 222);

  checkpoint::LoadedMeta meta;
  auto m2 = checkpoint::load<float>(path, &meta);
  CHECK(meta.src_vocab_hash == 111);
  CHECK(meta.tgt_vocab_hash == 222);
  CHECK(m2.cfg.img_attention == ImgAttn::local);
  CHECK(m2.cfg.grounding);
  REQUIRE(m2.params.size() == m.params.size());
  for (size_t i = 0; i < m.params.size(); ++i) {
    CHECK(m2.params[i]->name == m.params[i]->name);
    CHECK(m2.params[i]->value.data == m.params[i]->value.data);  // bit-exact
  }

  // corrupt magic -> rejected
  {
    std::ofstream os(path, std::ios::binary);
    os.write("NOPE", 4);
  }
  CHECK_THROWS_AS(checkpoint::load<float>(path), std::runtime_error);
  fs::remove(path);
}
