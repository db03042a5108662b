#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mmt/gradcheck.hpp"
#include "mmt/init.hpp"
#include "mmt/rng.hpp"
#include "mmt/tape.hpp"
#include "mmt/tensor.hpp"

using namespace mmt;

namespace {

// Scalar softmax oracle, written independently of the tape op.
std::vector<double> softmax_oracle(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double s = 0;
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

// Runs analytic backward then the central-difference check for a loss built
// from the given parameters.
double check_loss(const std::function<Var<double>(Tape<double>&)>& build,
                  std::vector<Parameter<double>*> params) {
  for (auto* p : params) p->reset_grad();
  {
    Tape<double> tape;
    Var<double> loss = build(tape);
    tape.backward(loss);
  }
  auto loss_fn = [&]() {
    Tape<double> tape;
    return build(tape).value().data[0];
  };
  return grad_check(loss_fn, params).max_rel_error;
}

}  // namespace

TEST_CASE("softmax forward values", "[tape]") {
  Tape<double> t;
  auto s0 = softmax_vec(t.input(Tensor<double>({3}, {0, 0, 0})));
  for (double v : s0.value().data) CHECK(v == Catch::Approx(1.0 / 3));

  // shift invariance
  auto a = softmax_vec(t.input(Tensor<double>({3}, {0.3, -1.2, 2.0})));
  auto b = softmax_vec(
      t.input(Tensor<double>({3}, {0.3 + 7.5, -1.2 + 7.5, 2.0 + 7.5})));
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(a.value().data[i] - b.value().data[i]) < 1e-12);

  auto oracle = softmax_oracle({1, 2, 3});
  auto c = softmax_vec(t.input(Tensor<double>({3}, {1, 2, 3})));
  for (int i = 0; i < 3; ++i)
    CHECK(c.value().data[i] == Catch::Approx(oracle[i]).epsilon(1e-12));

  // nonnegative, sums to 1
  double sum = 0;
  for (double v : c.value().data) {
    CHECK(v >= 0);
    sum += v;
  }
  CHECK(sum == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("elementary derivative values", "[tape]") {
  Parameter<double> x("x", Tensor<double>({1}, {0.0}));

  {
    Tape<double> t;
    auto y = tanh_(t.leaf(x));
    t.backward(y);
    CHECK(x.grad.data[0] == Catch::Approx(1.0));  // tanh'(0) = 1
  }
  x.reset_grad();
  {
    Tape<double> t;
    auto y = sigmoid_(t.leaf(x));
    t.backward(y);
    CHECK(x.grad.data[0] == Catch::Approx(0.25));  // sigma'(0) = 1/4
  }
}

TEST_CASE("gradient of sum(softmax) vanishes", "[tape]") {
  Parameter<double> x("x", Tensor<double>({4}, {0.5, -1.0, 2.0, 0.1}));
  Tape<double> t;
  auto loss = sum(softmax_vec(t.leaf(x)));
  t.backward(loss);
  for (double g : x.grad.data) CHECK(std::abs(g) < 1e-10);
}

TEST_CASE("backward root must be scalar", "[tape]") {
  Parameter<double> x("x", Tensor<double>({2}, {1.0, 2.0}));
  Tape<double> t;
  auto y = tanh_(t.leaf(x));
  CHECK_THROWS_AS(t.backward(y), std::invalid_argument);
}

TEST_CASE("shape mismatch diagnostics name both shapes", "[tape]") {
  Tape<double> t;
  auto a = t.input(Tensor<double>({2}, {1, 2}));
  auto b = t.input(Tensor<double>({3}, {1, 2, 3}));
  try {
    add(a, b);
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
}

TEST_CASE("grad_check on quadratic is near exact", "[tape]") {
  Parameter<double> x("x", Tensor<double>({1}, {3.0}));
  double err = check_loss(
      [&](Tape<double>& t) {
        auto v = t.leaf(x);
        return mul(v, v);
      },
      {&x});
  CHECK(x.grad.data[0] == Catch::Approx(6.0));
  CHECK(err <= 1e-8);
}

TEST_CASE("unused parameter has exactly zero gradient", "[tape]") {
  Parameter<double> x("x", Tensor<double>({1}, {3.0}));
  Parameter<double> unused("unused", Tensor<double>({2}, {1.0, 2.0}));
  unused.reset_grad();
  x.reset_grad();
  Tape<double> t;
  auto v = t.leaf(x);
  t.leaf(unused);
  t.backward(mul(v, v));
  CHECK(unused.grad.data[0] == 0.0);
  CHECK(unused.grad.data[1] == 0.0);
}

TEST_CASE("per-op gradients match finite differences", "[tape]") {
  RngState rng(7);
  auto rnd = [&](std::vector<int> shape) {
    return init_gaussian<double>(shape, rng, 0.7);
  };

  Parameter<double> a("a", rnd({4}));
  Parameter<double> b("b", rnd({4}));
  Parameter<double> W("W", rnd({4, 3}));
  Parameter<double> M("M", rnd({5, 4}));
  Parameter<double> al("al", rnd({5}));
  std::vector<Parameter<double>*> all{&a, &b, &W, &M, &al};

  SECTION("add/mul/tanh/sigmoid chain") {
    double err = check_loss(
        [&](Tape<double>& t) {
          auto va = t.leaf(a), vb = t.leaf(b);
          return sum(mul(tanh_(add(va, vb)), sigmoid_(sub(va, vb))));
        },
        {&a, &b});
    CHECK(err <= 1e-6);
  }
  SECTION("vecmat and matmul") {
    double err = check_loss(
        [&](Tape<double>& t) {
          auto y = vecmat(t.leaf(a), t.leaf(W));
          auto P = matmul(t.leaf(M), t.leaf(W));
          return add(sum(tanh_(y)), sum(tanh_(P)));
        },
        {&a, &W, &M});
    CHECK(err <= 1e-6);
  }
  SECTION("softmax/log/exp/dot") {
    double err = check_loss(
        [&](Tape<double>& t) {
          auto va = t.leaf(a), vb = t.leaf(b);
          auto sm = softmax_vec(va);
          return add(dot(log_(sm), vb), sum(exp_(scale_const(va, 0.3))));
        },
        {&a, &b});
    CHECK(err <= 1e-6);
  }
  SECTION("concat/row/pick/slice/stack") {
    double err = check_loss(
        [&](Tape<double>& t) {
          auto vM = t.leaf(M);
          auto r1 = row(vM, 1);
          auto r3 = row(vM, 3);
          auto st = stack_rows<double>({r1, r3, tanh_(r1)});
          auto sl = slice_rows(st, 1, 2);
          auto cc = concat(row(sl, 0), row(sl, 1));
          return add(sum(tanh_(cc)), pick(r3, 2));
        },
        {&M});
    CHECK(err <= 1e-6);
  }
  SECTION("weighted_sum/scale_rows/normalize_rows") {
    double err = check_loss(
        [&](Tape<double>& t) {
          auto vM = t.leaf(M);
          auto w = softmax_vec(t.leaf(al));
          auto ctx = weighted_sum(w, vM);
          auto sc = scale_rows(vM, w);
          auto nr = normalize_rows(sc);
          return add(sum(tanh_(ctx)), sum(nr));
        },
        {&M, &al});
    CHECK(err <= 1e-6);
  }
  SECTION("attn_scores fused op") {
    Parameter<double> P("P", rnd({5, 4}));
    double err = check_loss(
        [&](Tape<double>& t) {
          auto e = attn_scores(t.leaf(P), t.leaf(a), t.leaf(b));
          return sum(mul(softmax_vec(e), e));
        },
        {&P, &a, &b});
    CHECK(err <= 1e-6);
  }
  SECTION("gaussian_window and scale_by") {
    Parameter<double> p("p", Tensor<double>({1}, {2.3}));
    Parameter<double> s("s", Tensor<double>({1}, {0.8}));
    double err = check_loss(
        [&](Tape<double>& t) {
          auto g = gaussian_window(t.leaf(p), std::vector<double>{0, 1, 2, 3},
                                   1.5);
          auto v = scale_by(sigmoid_(t.leaf(s)), g);
          return sum(mul(v, v));
        },
        {&p, &s});
    CHECK(err <= 1e-6);
  }
  SECTION("cross_entropy_logits and add_rowvec") {
    double err = check_loss(
        [&](Tape<double>& t) {
          auto logits = vecmat(t.leaf(a), t.leaf(W));
          auto P = add_rowvec(t.leaf(M), t.leaf(a));
          return add(cross_entropy_logits(logits, 1), sum(tanh_(P)));
        },
        {&a, &W, &M});
    CHECK(err <= 1e-6);
  }
  (void)all;
}

TEST_CASE("backward is deterministic across repeats", "[tape]") {
  RngState rng(11);
  Parameter<double> W("W", init_gaussian<double>({4, 4}, rng, 0.5));
  Parameter<double> x("x", init_gaussian<double>({4}, rng, 0.5));

  auto run = [&]() {
    for (auto* p : std::vector<Parameter<double>*>{&W, &x}) p->reset_grad();
    Tape<double> t;
    auto loss = sum(tanh_(vecmat(t.leaf(x), t.leaf(W))));
    t.backward(loss);
    auto g = W.grad.data;
    g.insert(g.end(), x.grad.data.begin(), x.grad.data.end());
    return g;
  };
  CHECK(run() == run());
}

TEST_CASE("repeated backward accumulates additively", "[tape]") {
  Parameter<double> x("x", Tensor<double>({1}, {2.0}));
  x.reset_grad();
  for (int i = 0; i < 3; ++i) {
    Tape<double> t;
    auto v = t.leaf(x);
    t.backward(mul(v, v));
  }
  CHECK(x.grad.data[0] == Catch::Approx(3 * 4.0));
}

TEST_CASE("initializers", "[tape]") {
  RngState rng(123);

  auto z = init_zero<double>({3});
  CHECK(z.data == std::vector<double>({0, 0, 0}));

  auto Q = init_orthogonal<float>({4, 4}, rng);
  // Q^T Q = I within 1e-5
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double d = 0;
      for (int k = 0; k < 4; ++k) d += Q.at2(k, i) * Q.at2(k, j);
      CHECK(std::abs(d - (i == j ? 1.0 : 0.0)) <= 1e-5);
    }

  // rectangular: rows orthonormal when wide dimension truncated
  auto R = init_orthogonal<double>({3, 5}, rng);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double d = 0;
      for (int k = 0; k < 5; ++k) d += R.at2(i, k) * R.at2(j, k);
      CHECK(std::abs(d - (i == j ? 1.0 : 0.0)) <= 1e-5);
    }

  auto g = init_gaussian<double>({10000}, rng, 0.01);
  double mean = 0;
  for (double v : g.data) mean += v;
  mean /= g.numel();
  double var = 0;
  for (double v : g.data) var += (v - mean) * (v - mean);
  double sd = std::sqrt(var / (g.numel() - 1));
  CHECK(sd > 0.009);
  CHECK(sd < 0.011);
}

TEST_CASE("dropout masks", "[tape]") {
  RngState rng(5);
  auto m0 = dropout_mask<double>({100}, 0.0, rng);
  for (double v : m0.data) CHECK(v == 1.0);

  auto m = dropout_mask<double>({10000}, 0.5, rng);
  int zeros = 0;
  for (double v : m.data) {
    CHECK((v == 0.0 || v == 2.0));  // inverted scaling 1/(1-p)
    if (v == 0.0) ++zeros;
  }
  double frac = zeros / 10000.0;
  CHECK(frac > 0.48);
  CHECK(frac < 0.52);

  CHECK_THROWS_AS(dropout_mask<double>({4}, 1.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(dropout_mask<double>({4}, -0.1, rng), std::invalid_argument);

  auto id = identity_mask<double>({7});
  for (double v : id.data) CHECK(v == 1.0);
}

TEST_CASE("rng determinism and multinoulli", "[tape]") {
  RngState a(99), b(99);
  for (int i = 0; i < 100; ++i) CHECK(a.raw() == b.raw());

  RngState r(3);
  std::vector<double> probs{0.25, 0.25, 0.25, 0.25};
  std::vector<int> counts(4, 0);
  for (int i = 0; i < 10000; ++i) counts[r.multinoulli(probs)]++;
  for (int c : counts) {
    CHECK(c > 10000 * 0.23);
    CHECK(c < 10000 * 0.27);
  }
}
