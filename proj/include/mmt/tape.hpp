#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mmt/tensor.hpp"

namespace mmt {

template <typename Real>
class Tape;

// Handle into a tape node. Value-like, cheap to copy.
template <typename Real>
struct Var {
  Tape<Real>* tape = nullptr;
  int idx = -1;

  bool valid() const { return tape != nullptr && idx >= 0; }
  const Tensor<Real>& value() const { return tape->value(idx); }
};

// Reverse-mode tape. Nodes are appended in topological order during the
// forward pass; backward() replays them once in reverse. A tape is owned by
// a single forward/backward pass.
template <typename Real>
class Tape {
 public:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    bool grad_live = false;  // grad allocated and touched this backward
    bool needs_grad = false;
    Parameter<Real>* param = nullptr;
    std::function<void(Tape&, int)> backward;  // (tape, own index)
  };

  const Tensor<Real>& value(int i) const { return nodes_[i].value; }
  Tensor<Real>& grad(int i) { return nodes_[i].grad; }
  bool grad_live(int i) const { return nodes_[i].grad_live; }
  bool needs_grad(int i) const { return nodes_[i].needs_grad; }
  size_t size() const { return nodes_.size(); }

  Var<Real> leaf(Parameter<Real>& p) {
    Node n;
    n.value = p.value;
    n.needs_grad = true;
    n.param = &p;
    return push(std::move(n));
  }

  // Graph input without gradient (features, dropout masks, constants).
  Var<Real> input(Tensor<Real> t) {
    Node n;
    n.value = std::move(t);
    return push(std::move(n));
  }

  Var<Real> constant(Real v) { return input(Tensor<Real>({1}, {v})); }

  // Generic op: forward value computed by caller, backward supplied.
  Var<Real> record(Tensor<Real> value, std::vector<int> parents,
                   std::function<void(Tape&, int)> backward) {
    Node n;
    n.value = std::move(value);
    for (int p : parents)
      if (nodes_[p].needs_grad) n.needs_grad = true;
    if (n.needs_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  // Adds g into node i's gradient accumulator.
  void accum(int i, const Tensor<Real>& g) {
    Node& n = nodes_[i];
    if (!n.needs_grad) return;
    touch(i);
    for (size_t k = 0; k < g.data.size(); ++k) n.grad.data[k] += g.data[k];
  }
  void accum_at(int i, long flat, Real g) {
    Node& n = nodes_[i];
    if (!n.needs_grad) return;
    touch(i);
    n.grad.data[static_cast<size_t>(flat)] += g;
  }
  // Direct accumulator access for hot loops; caller must touch() first.
  Tensor<Real>* grad_buf(int i) {
    Node& n = nodes_[i];
    if (!n.needs_grad) return nullptr;
    touch(i);
    return &n.grad;
  }

  // Propagates d(root)/d(everything); accumulates into Parameter::grad.
  // Repeated calls on fresh tapes accumulate additively into parameters.
  void backward(const Var<Real>& root, Real seed = Real(1)) {
    if (!nodes_[root.idx].value.is_scalar())
      throw std::invalid_argument("backward: root must be a scalar node");
    touch(root.idx);
    nodes_[root.idx].grad.data[0] += seed;
    run_backward();
  }

  // Two-root variant: d(root_a + coeff_b * root_b) in one sweep.
  void backward2(const Var<Real>& root_a, const Var<Real>& root_b,
                 Real coeff_b, Real scale = Real(1)) {
    if (!nodes_[root_a.idx].value.is_scalar() ||
        !nodes_[root_b.idx].value.is_scalar())
      throw std::invalid_argument("backward2: roots must be scalar nodes");
    touch(root_a.idx);
    nodes_[root_a.idx].grad.data[0] += scale;
    touch(root_b.idx);
    nodes_[root_b.idx].grad.data[0] += coeff_b * scale;
    run_backward();
  }

 private:
  std::vector<Node> nodes_;

  void touch(int i) {
    Node& n = nodes_[i];
    if (!n.grad_live) {
      if (n.grad.data.empty()) n.grad = Tensor<Real>(n.value.shape);
      else n.grad.zero();
      n.grad_live = true;
    }
  }

  Var<Real> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<Real>{this, static_cast<int>(nodes_.size()) - 1};
  }

  void run_backward() {
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.grad_live || !n.needs_grad) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        for (size_t k = 0; k < n.grad.data.size(); ++k)
          n.param->grad.data[k] += n.grad.data[k];
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Ops. Each checks shapes up front, computes the forward value eagerly and
// records a backward closure over the saved intermediates it needs.
// ---------------------------------------------------------------------------

namespace detail {
template <typename Real>
inline Real stable_sigmoid(Real x) {
  if (x >= Real(0)) {
    Real e = std::exp(-x);
    return Real(1) / (Real(1) + e);
  }
  Real e = std::exp(x);
  return e / (Real(1) + e);
}
}  // namespace detail

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  check_same_shape("add", a.value(), b.value());
  Tensor<Real> out = a.value();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.value().data[i];
  int pa = a.idx, pb = b.idx;
  return a.tape->record(std::move(out), {pa, pb},
                        [pa, pb](Tape<Real>& t, int self) {
                          t.accum(pa, t.grad(self));
                          t.accum(pb, t.grad(self));
                        });
}

template <typename Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  check_same_shape("sub", a.value(), b.value());
  Tensor<Real> out = a.value();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.value().data[i];
  int pa = a.idx, pb = b.idx;
  return a.tape->record(std::move(out), {pa, pb},
                        [pa, pb](Tape<Real>& t, int self) {
                          t.accum(pa, t.grad(self));
                          const Tensor<Real>& g = t.grad(self);
                          Tensor<Real>* gb = t.grad_buf(pb);
                          if (gb)
                            for (size_t i = 0; i < g.data.size(); ++i)
                              gb->data[i] -= g.data[i];
                        });
}

template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  check_same_shape("mul", a.value(), b.value());
  Tensor<Real> out = a.value();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.value().data[i];
  int pa = a.idx, pb = b.idx;
  return a.tape->record(
      std::move(out), {pa, pb}, [pa, pb](Tape<Real>& t, int self) {
        const Tensor<Real>& g = t.grad(self);
        const Tensor<Real>& va = t.value(pa);
        const Tensor<Real>& vb = t.value(pb);
        if (Tensor<Real>* ga = t.grad_buf(pa))
          for (size_t i = 0; i < g.data.size(); ++i)
            ga->data[i] += g.data[i] * vb.data[i];
        if (Tensor<Real>* gb = t.grad_buf(pb))
          for (size_t i = 0; i < g.data.size(); ++i)
            gb->data[i] += g.data[i] * va.data[i];
      });
}

template <typename Real>
Var<Real> scale_const(Var<Real> a, Real c) {
  Tensor<Real> out = a.value();
  for (Real& v : out.data) v *= c;
  int pa = a.idx;
  return a.tape->record(std::move(out), {pa},
                        [pa, c](Tape<Real>& t, int self) {
                          const Tensor<Real>& g = t.grad(self);
                          if (Tensor<Real>* ga = t.grad_buf(pa))
                            for (size_t i = 0; i < g.data.size(); ++i)
                              ga->data[i] += c * g.data[i];
                        });
}

// Elementwise multiply by a fixed tensor (dropout masks).
template <typename Real>
Var<Real> apply_mask(Var<Real> a, const Tensor<Real>& mask) {
  check_same_shape("apply_mask", a.value(), mask);
  Tensor<Real> out = a.value();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
  int pa = a.idx;
  Tensor<Real> m = mask;
  return a.tape->record(std::move(out), {pa},
                        [pa, m = std::move(m)](Tape<Real>& t, int self) {
                          const Tensor<Real>& g = t.grad(self);
                          if (Tensor<Real>* ga = t.grad_buf(pa))
                            for (size_t i = 0; i < g.data.size(); ++i)
                              ga->data[i] += g.data[i] * m.data[i];
                        });
}

// Scales every element of vec by a scalar node (gating).
template <typename Real>
Var<Real> scale_by(Var<Real> scalar, Var<Real> vec) {
  if (!scalar.value().is_scalar())
    throw std::invalid_argument("scale_by: first argument must be scalar");
  Real s = scalar.value().data[0];
  Tensor<Real> out = vec.value();
  for (Real& v : out.data) v *= s;
  int ps = scalar.idx, pv = vec.idx;
  return scalar.tape->record(
      std::move(out), {ps, pv}, [ps, pv](Tape<Real>& t, int self) {
        const Tensor<Real>& g = t.grad(self);
        const Tensor<Real>& vv = t.value(pv);
        Real s = t.value(ps).data[0];
        if (t.needs_grad(ps)) {
          Real acc = 0;
          for (size_t i = 0; i < g.data.size(); ++i)
            acc += g.data[i] * vv.data[i];
          t.accum_at(ps, 0, acc);
        }
        if (Tensor<Real>* gv = t.grad_buf(pv))
          for (size_t i = 0; i < g.data.size(); ++i)
            gv->data[i] += s * g.data[i];
      });
}

template <typename Real>
Var<Real> tanh_(Var<Real> a) {
  Tensor<Real> out = a.value();
  for (Real& v : out.data) v = std::tanh(v);
  int pa = a.idx;
  return a.tape->record(std::move(out), {pa},
                        [pa](Tape<Real>& t, int self) {
                          const Tensor<Real>& g = t.grad(self);
                          const Tensor<Real>& y = t.value(self);
                          if (Tensor<Real>* ga = t.grad_buf(pa))
                            for (size_t i = 0; i < g.data.size(); ++i)
                              ga->data[i] +=
                                  g.data[i] * (Real(1) - y.data[i] * y.data[i]);
                        });
}

template <typename Real>
Var<Real> sigmoid_(Var<Real> a) {
  Tensor<Real> out = a.value();
  for (Real& v : out.data) v = detail::stable_sigmoid(v);
  int pa = a.idx;
  return a.tape->record(std::move(out), {pa},
                        [pa](Tape<Real>& t, int self) {
                          const Tensor<Real>& g = t.grad(self);
                          const Tensor<Real>& y = t.value(self);
                          if (Tensor<Real>* ga = t.grad_buf(pa))
                            for (size_t i = 0; i < g.data.size(); ++i)
                              ga->data[i] += g.data[i] * y.data[i] *
                                             (Real(1) - y.data[i]);
                        });
}

template <typename Real>
Var<Real> log_(Var<Real> a) {
  Tensor<Real> out = a.value();
  for (Real& v : out.data) v = std::log(v);
  int pa = a.idx;
  return a.tape->record(std::move(out), {pa},
                        [pa](Tape<Real>& t, int self) {
                          const Tensor<Real>& g = t.grad(self);
                          const Tensor<Real>& x = t.value(pa);
                          if (Tensor<Real>* ga = t.grad_buf(pa))
                            for (size_t i = 0; i < g.data.size(); ++i)
                              ga->data[i] += g.data[i] / x.data[i];
                        });
}

template <typename Real>
Var<Real> exp_(Var<Real> a) {
  Tensor<Real> out = a.value();
  for (Real& v : out.data) v = std::exp(v);
  int pa = a.idx;
  return a.tape->record(std::move(out), {pa},
                        [pa](Tape<Real>& t, int self) {
                          const Tensor<Real>& g = t.grad(self);
                          const Tensor<Real>& y = t.value(self);
                          if (Tensor<Real>* ga = t.grad_buf(pa))
                            for (size_t i = 0; i < g.data.size(); ++i)
                              ga->data[i] += g.data[i] * y.data[i];
                        });
}

// y = x^T W for x (n), W (n x m). Row-vector-times-matrix convention
// throughout: parameter matrices are stored input-dim x output-dim.
template <typename Real>
Var<Real> vecmat(Var<Real> x, Var<Real> W) {
  const Tensor<Real>& xv = x.value();
  const Tensor<Real>& Wv = W.value();
  if (!Wv.is_matrix() || xv.numel() != Wv.rows())
    throw std::invalid_argument("vecmat: shape mismatch " + xv.shape_str() +
                                " vs " + Wv.shape_str());
  int n = Wv.rows(), m = Wv.cols();
  Tensor<Real> out({m});
  for (int i = 0; i < n; ++i) {
    Real xi = xv.data[i];
    const Real* wrow = &Wv.data[static_cast<size_t>(i) * m];
    for (int j = 0; j < m; ++j) out.data[j] += xi * wrow[j];
  }
  int px = x.idx, pW = W.idx;
  return x.tape->record(
      std::move(out), {px, pW}, [px, pW, n, m](Tape<Real>& t, int self) {
        const Tensor<Real>& g = t.grad(self);
        const Tensor<Real>& xv = t.value(px);
        const Tensor<Real>& Wv = t.value(pW);
        if (Tensor<Real>* gx = t.grad_buf(px)) {
          for (int i = 0; i < n; ++i) {
            const Real* wrow = &Wv.data[static_cast<size_t>(i) * m];
            Real acc = 0;
            for (int j = 0; j < m; ++j) acc += g.data[j] * wrow[j];
            gx->data[i] += acc;
          }
        }
        if (Tensor<Real>* gW = t.grad_buf(pW)) {
          for (int i = 0; i < n; ++i) {
            Real xi = xv.data[i];
            Real* grow = &gW->data[static_cast<size_t>(i) * m];
            for (int j = 0; j < m; ++j) grow[j] += xi * g.data[j];
          }
        }
      });
}

// C = A W for A (L x n), W (n x m).
template <typename Real>
Var<Real> matmul(Var<Real> A, Var<Real> W) {
  const Tensor<Real>& Av = A.value();
  const Tensor<Real>& Wv = W.value();
  if (!Av.is_matrix() || !Wv.is_matrix() || Av.cols() != Wv.rows())
    throw std::invalid_argument("matmul: shape mismatch " + Av.shape_str() +
                                " vs " + Wv.shape_str());
  int L = Av.rows(), n = Av.cols(), m = Wv.cols();
  Tensor<Real> out({L, m});
  for (int r = 0; r < L; ++r) {
    const Real* arow = &Av.data[static_cast<size_t>(r) * n];
    Real* orow = &out.data[static_cast<size_t>(r) * m];
    for (int i = 0; i < n; ++i) {
      Real ai = arow[i];
      const Real* wrow = &Wv.data[static_cast<size_t>(i) * m];
      for (int j = 0; j < m; ++j) orow[j] += ai * wrow[j];
    }
  }
  int pA = A.idx, pW = W.idx;
  return A.tape->record(
      std::move(out), {pA, pW}, [pA, pW, L, n, m](Tape<Real>& t, int self) {
        const Tensor<Real>& g = t.grad(self);
        const Tensor<Real>& Av = t.value(pA);
        const Tensor<Real>& Wv = t.value(pW);
        if (Tensor<Real>* gA = t.grad_buf(pA)) {
          for (int r = 0; r < L; ++r) {
            const Real* grow = &g.data[static_cast<size_t>(r) * m];
            Real* garow = &gA->data[static_cast<size_t>(r) * n];
            for (int i = 0; i < n; ++i) {
              const Real* wrow = &Wv.data[static_cast<size_t>(i) * m];
              Real acc = 0;
              for (int j = 0; j < m; ++j) acc += grow[j] * wrow[j];
              garow[i] += acc;
            }
          }
        }
        if (Tensor<Real>* gW = t.grad_buf(pW)) {
          for (int r = 0; r < L; ++r) {
            const Real* arow = &Av.data[static_cast<size_t>(r) * n];
            const Real* grow = &g.data[static_cast<size_t>(r) * m];
            for (int i = 0; i < n; ++i) {
              Real ai = arow[i];
              Real* gwrow = &gW->data[static_cast<size_t>(i) * m];
              for (int j = 0; j < m; ++j) gwrow[j] += ai * grow[j];
            }
          }
        }
      });
}

// y_r = A_r . x for A (L x n), x (n).
template <typename Real>
Var<Real> matvec(Var<Real> A, Var<Real> x) {
  const Tensor<Real>& Av = A.value();
  const Tensor<Real>& xv = x.value();
  if (!Av.is_matrix() || xv.numel() != Av.cols())
    throw std::invalid_argument("matvec: shape mismatch " + Av.shape_str() +
                                " vs " + xv.shape_str());
  int L = Av.rows(), n = Av.cols();
  Tensor<Real> out({L});
  for (int r = 0; r < L; ++r) {
    const Real* arow = &Av.data[static_cast<size_t>(r) * n];
    Real acc = 0;
    for (int j = 0; j < n; ++j) acc += arow[j] * xv.data[j];
    out.data[r] = acc;
  }
  int pA = A.idx, px = x.idx;
  return A.tape->record(
      std::move(out), {pA, px}, [pA, px, L, n](Tape<Real>& t, int self) {
        const Tensor<Real>& g = t.grad(self);
        const Tensor<Real>& Av = t.value(pA);
        const Tensor<Real>& xv = t.value(px);
        if (Tensor<Real>* gA = t.grad_buf(pA))
          for (int r = 0; r < L; ++r)
            for (int j = 0; j < n; ++j)
              gA->data[static_cast<size_t>(r) * n + j] +=
                  g.data[r] * xv.data[j];
        if (Tensor<Real>* gx = t.grad_buf(px))
          for (int r = 0; r < L; ++r)
            for (int j = 0; j < n; ++j)
              gx->data[j] += g.data[r] * Av.data[static_cast<size_t>(r) * n + j];
      });
}

// Repeats a scalar node into a length-n vector.
template <typename Real>
Var<Real> broadcast_scalar(Var<Real> s, int n) {
  if (!s.value().is_scalar())
    throw std::invalid_argument("broadcast_scalar: expected scalar");
  Tensor<Real> out({n});
  out.fill(s.value().data[0]);
  int ps = s.idx;
  return s.tape->record(std::move(out), {ps},
                        [ps](Tape<Real>& t, int self) {
                          const Tensor<Real>& g = t.grad(self);
                          Real acc = 0;
                          for (Real v : g.data) acc += v;
                          t.accum_at(ps, 0, acc);
                        });
}

// Adds vector v to every row of matrix A.
template <typename Real>
Var<Real> add_rowvec(Var<Real> A, Var<Real> v) {
  const Tensor<Real>& Av = A.value();
  const Tensor<Real>& vv = v.value();
  if (!Av.is_matrix() || vv.numel() != Av.cols())
    throw std::invalid_argument("add_rowvec: shape mismatch " + Av.shape_str() +
                                " vs " + vv.shape_str());
  int L = Av.rows(), m = Av.cols();
  Tensor<Real> out = Av;
  for (int r = 0; r < L; ++r)
    for (int j = 0; j < m; ++j) out.at2(r, j) += vv.data[j];
  int pA = A.idx, pv = v.idx;
  return A.tape->record(
      std::move(out), {pA, pv}, [pA, pv, L, m](Tape<Real>& t, int self) {
        const Tensor<Real>& g = t.grad(self);
        t.accum(pA, g);
        if (Tensor<Real>* gv = t.grad_buf(pv))
          for (int r = 0; r < L; ++r)
            for (int j = 0; j < m; ++j)
              gv->data[j] += g.data[static_cast<size_t>(r) * m + j];
      });
}

// Numerically stable softmax over a vector.
template <typename Real>
Var<Real> softmax_vec(Var<Real> e) {
  const Tensor<Real>& ev = e.value();
  if (!ev.is_vector())
    throw std::invalid_argument("softmax_vec: expected vector, got " +
                                ev.shape_str());
  Tensor<Real> out = ev;
  Real mx = out.data[0];
  for (Real v : out.data) mx = std::max(mx, v);
  Real sum = 0;
  for (Real& v : out.data) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (Real& v : out.data) v /= sum;
  int pe = e.idx;
  return e.tape->record(std::move(out), {pe},
                        [pe](Tape<Real>& t, int self) {
                          const Tensor<Real>& g = t.grad(self);
                          const Tensor<Real>& y = t.value(self);
                          if (Tensor<Real>* ge = t.grad_buf(pe)) {
                            Real dot = 0;
                            for (size_t i = 0; i < g.data.size(); ++i)
                              dot += g.data[i] * y.data[i];
                            for (size_t i = 0; i < g.data.size(); ++i)
                              ge->data[i] += y.data[i] * (g.data[i] - dot);
                          }
                        });
}

template <typename Real>
Var<Real> dot(Var<Real> a, Var<Real> b) {
  check_same_shape("dot", a.value(), b.value());
  Real acc = 0;
  for (size_t i = 0; i < a.value().data.size(); ++i)
    acc += a.value().data[i] * b.value().data[i];
  int pa = a.idx, pb = b.idx;
  return a.tape->record(
      Tensor<Real>({1}, {acc}), {pa, pb}, [pa, pb](Tape<Real>& t, int self) {
        Real g = t.grad(self).data[0];
        const Tensor<Real>& va = t.value(pa);
        const Tensor<Real>& vb = t.value(pb);
        if (Tensor<Real>* ga = t.grad_buf(pa))
          for (size_t i = 0; i < va.data.size(); ++i)
            ga->data[i] += g * vb.data[i];
        if (Tensor<Real>* gb = t.grad_buf(pb))
          for (size_t i = 0; i < vb.data.size(); ++i)
            gb->data[i] += g * va.data[i];
      });
}

template <typename Real>
Var<Real> sum(Var<Real> a) {
  Real acc = 0;
  for (Real v : a.value().data) acc += v;
  int pa = a.idx;
  return a.tape->record(Tensor<Real>({1}, {acc}), {pa},
                        [pa](Tape<Real>& t, int self) {
                          Real g = t.grad(self).data[0];
                          if (Tensor<Real>* ga = t.grad_buf(pa))
                            for (Real& v : ga->data) v += g;
                        });
}

template <typename Real>
Var<Real> concat(Var<Real> a, Var<Real> b) {
  if (!a.value().is_vector() || !b.value().is_vector())
    throw std::invalid_argument("concat: expected vectors");
  int na = static_cast<int>(a.value().numel());
  int nb = static_cast<int>(b.value().numel());
  Tensor<Real> out({na + nb});
  std::copy(a.value().data.begin(), a.value().data.end(), out.data.begin());
  std::copy(b.value().data.begin(), b.value().data.end(),
            out.data.begin() + na);
  int pa = a.idx, pb = b.idx;
  return a.tape->record(std::move(out), {pa, pb},
                        [pa, pb, na, nb](Tape<Real>& t, int self) {
                          const Tensor<Real>& g = t.grad(self);
                          if (Tensor<Real>* ga = t.grad_buf(pa))
                            for (int i = 0; i < na; ++i)
                              ga->data[i] += g.data[i];
                          if (Tensor<Real>* gb = t.grad_buf(pb))
                            for (int i = 0; i < nb; ++i)
                              gb->data[i] += g.data[na + i];
                        });
}

// Row r of a matrix node (embedding lookup, hard-attention context).
template <typename Real>
Var<Real> row(Var<Real> A, int r) {
  const Tensor<Real>& Av = A.value();
  if (!Av.is_matrix() || r < 0 || r >= Av.rows())
    throw std::invalid_argument("row: index " + std::to_string(r) +
                                " out of range for " + Av.shape_str());
  int m = Av.cols();
  Tensor<Real> out({m});
  std::copy(Av.data.begin() + static_cast<size_t>(r) * m,
            Av.data.begin() + static_cast<size_t>(r + 1) * m, out.data.begin());
  int pA = A.idx;
  return A.tape->record(std::move(out), {pA},
                        [pA, r, m](Tape<Real>& t, int self) {
                          const Tensor<Real>& g = t.grad(self);
                          if (Tensor<Real>* gA = t.grad_buf(pA))
                            for (int j = 0; j < m; ++j)
                              gA->data[static_cast<size_t>(r) * m + j] +=
                                  g.data[j];
                        });
}

template <typename Real>
Var<Real> pick(Var<Real> v, int i) {
  const Tensor<Real>& vv = v.value();
  if (i < 0 || i >= vv.numel())
    throw std::invalid_argument("pick: index out of range");
  int pv = v.idx;
  return v.tape->record(Tensor<Real>({1}, {vv.data[static_cast<size_t>(i)]}),
                        {pv}, [pv, i](Tape<Real>& t, int self) {
                          t.accum_at(pv, i, t.grad(self).data[0]);
                        });
}

// Contiguous rows [lo, lo+n) of a matrix node.
template <typename Real>
Var<Real> slice_rows(Var<Real> A, int lo, int n) {
  const Tensor<Real>& Av = A.value();
  if (!Av.is_matrix() || lo < 0 || n < 1 || lo + n > Av.rows())
    throw std::invalid_argument("slice_rows: bad range");
  int m = Av.cols();
  Tensor<Real> out({n, m});
  std::copy(Av.data.begin() + static_cast<size_t>(lo) * m,
            Av.data.begin() + static_cast<size_t>(lo + n) * m,
            out.data.begin());
  int pA = A.idx;
  return A.tape->record(std::move(out), {pA},
                        [pA, lo, n, m](Tape<Real>& t, int self) {
                          const Tensor<Real>& g = t.grad(self);
                          if (Tensor<Real>* gA = t.grad_buf(pA))
                            for (long k = 0; k < static_cast<long>(n) * m; ++k)
                              gA->data[static_cast<size_t>(lo) * m + k] +=
                                  g.data[k];
                        });
}

// Builds a matrix node from equal-length vector nodes.
template <typename Real>
Var<Real> stack_rows(const std::vector<Var<Real>>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty");
  int m = static_cast<int>(rows[0].value().numel());
  int L = static_cast<int>(rows.size());
  Tensor<Real> out({L, m});
  std::vector<int> parents(rows.size());
  for (int r = 0; r < L; ++r) {
    if (rows[r].value().numel() != m)
      throw std::invalid_argument("stack_rows: ragged rows");
    std::copy(rows[r].value().data.begin(), rows[r].value().data.end(),
              out.data.begin() + static_cast<size_t>(r) * m);
    parents[r] = rows[r].idx;
  }
  return rows[0].tape->record(
      std::move(out), parents, [parents, m](Tape<Real>& t, int self) {
        const Tensor<Real>& g = t.grad(self);
        for (size_t r = 0; r < parents.size(); ++r) {
          if (Tensor<Real>* gr = t.grad_buf(parents[r]))
            for (int j = 0; j < m; ++j)
              gr->data[j] += g.data[r * static_cast<size_t>(m) + j];
        }
      });
}

// c = sum_i alpha_i * A_i for alpha (L), A (L x D).
template <typename Real>
Var<Real> weighted_sum(Var<Real> alpha, Var<Real> A) {
  const Tensor<Real>& av = alpha.value();
  const Tensor<Real>& Av = A.value();
  if (!Av.is_matrix() || av.numel() != Av.rows())
    throw std::invalid_argument("weighted_sum: shape mismatch " +
                                av.shape_str() + " vs " + Av.shape_str());
  int L = Av.rows(), m = Av.cols();
  Tensor<Real> out({m});
  for (int i = 0; i < L; ++i) {
    Real w = av.data[i];
    const Real* arow = &Av.data[static_cast<size_t>(i) * m];
    for (int j = 0; j < m; ++j) out.data[j] += w * arow[j];
  }
  int pa = alpha.idx, pA = A.idx;
  return alpha.tape->record(
      std::move(out), {pa, pA}, [pa, pA, L, m](Tape<Real>& t, int self) {
        const Tensor<Real>& g = t.grad(self);
        const Tensor<Real>& av = t.value(pa);
        const Tensor<Real>& Av = t.value(pA);
        if (Tensor<Real>* ga = t.grad_buf(pa)) {
          for (int i = 0; i < L; ++i) {
            const Real* arow = &Av.data[static_cast<size_t>(i) * m];
            Real acc = 0;
            for (int j = 0; j < m; ++j) acc += g.data[j] * arow[j];
            ga->data[i] += acc;
          }
        }
        if (Tensor<Real>* gA = t.grad_buf(pA)) {
          for (int i = 0; i < L; ++i) {
            Real w = av.data[i];
            Real* grow = &gA->data[static_cast<size_t>(i) * m];
            for (int j = 0; j < m; ++j) grow[j] += w * g.data[j];
          }
        }
      });
}

// Out_i = alpha_i * A_i (per-row rescale; grounding output).
template <typename Real>
Var<Real> scale_rows(Var<Real> A, Var<Real> alpha) {
  const Tensor<Real>& Av = A.value();
  const Tensor<Real>& av = alpha.value();
  if (!Av.is_matrix() || av.numel() != Av.rows())
    throw std::invalid_argument("scale_rows: shape mismatch");
  int L = Av.rows(), m = Av.cols();
  Tensor<Real> out = Av;
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < m; ++j) out.at2(i, j) *= av.data[i];
  int pA = A.idx, pa = alpha.idx;
  return A.tape->record(
      std::move(out), {pA, pa}, [pA, pa, L, m](Tape<Real>& t, int self) {
        const Tensor<Real>& g = t.grad(self);
        const Tensor<Real>& Av = t.value(pA);
        const Tensor<Real>& av = t.value(pa);
        if (Tensor<Real>* gA = t.grad_buf(pA))
          for (int i = 0; i < L; ++i)
            for (int j = 0; j < m; ++j)
              gA->data[static_cast<size_t>(i) * m + j] +=
                  g.data[static_cast<size_t>(i) * m + j] * av.data[i];
        if (Tensor<Real>* ga = t.grad_buf(pa))
          for (int i = 0; i < L; ++i) {
            Real acc = 0;
            for (int j = 0; j < m; ++j)
              acc += g.data[static_cast<size_t>(i) * m + j] *
                     Av.data[static_cast<size_t>(i) * m + j];
            ga->data[i] += acc;
          }
      });
}

// L2-normalizes every row: r_i = x_i / ||x_i||.
template <typename Real>
Var<Real> normalize_rows(Var<Real> A) {
  const Tensor<Real>& Av = A.value();
  if (!Av.is_matrix()) throw std::invalid_argument("normalize_rows: matrix");
  int L = Av.rows(), m = Av.cols();
  Tensor<Real> out = Av;
  std::vector<Real> norms(L);
  for (int i = 0; i < L; ++i) {
    Real s = 0;
    for (int j = 0; j < m; ++j) s += Av.at2(i, j) * Av.at2(i, j);
    Real nrm = std::sqrt(s);
    if (nrm < Real(1e-12)) nrm = Real(1e-12);
    norms[i] = nrm;
    for (int j = 0; j < m; ++j) out.at2(i, j) /= nrm;
  }
  int pA = A.idx;
  return A.tape->record(
      std::move(out), {pA},
      [pA, L, m, norms = std::move(norms)](Tape<Real>& t, int self) {
        const Tensor<Real>& g = t.grad(self);
        const Tensor<Real>& y = t.value(self);
        if (Tensor<Real>* gA = t.grad_buf(pA))
          for (int i = 0; i < L; ++i) {
            const Real* grow = &g.data[static_cast<size_t>(i) * m];
            const Real* yrow = &y.data[static_cast<size_t>(i) * m];
            Real dotgy = 0;
            for (int j = 0; j < m; ++j) dotgy += grow[j] * yrow[j];
            Real* garow = &gA->data[static_cast<size_t>(i) * m];
            for (int j = 0; j < m; ++j)
              garow[j] += (grow[j] - dotgy * yrow[j]) / norms[i];
          }
      });
}

// Fused attention energies: e_l = v . tanh(P_l + q) for P (L x A), q (A),
// v (A). Saves the tanh activations for backward.
template <typename Real>
Var<Real> attn_scores(Var<Real> P, Var<Real> q, Var<Real> v) {
  const Tensor<Real>& Pv = P.value();
  const Tensor<Real>& qv = q.value();
  const Tensor<Real>& vv = v.value();
  if (!Pv.is_matrix() || qv.numel() != Pv.cols() || vv.numel() != Pv.cols())
    throw std::invalid_argument("attn_scores: shape mismatch " +
                                Pv.shape_str() + " / " + qv.shape_str() +
                                " / " + vv.shape_str());
  int L = Pv.rows(), A = Pv.cols();
  Tensor<Real> out({L});
  Tensor<Real> T({L, A});
  for (int l = 0; l < L; ++l) {
    Real acc = 0;
    for (int j = 0; j < A; ++j) {
      Real th = std::tanh(Pv.at2(l, j) + qv.data[j]);
      T.at2(l, j) = th;
      acc += vv.data[j] * th;
    }
    out.data[l] = acc;
  }
  int pP = P.idx, pq = q.idx, pv2 = v.idx;
  return P.tape->record(
      std::move(out), {pP, pq, pv2},
      [pP, pq, pv2, L, A, T = std::move(T)](Tape<Real>& t, int self) {
        const Tensor<Real>& g = t.grad(self);
        const Tensor<Real>& vv = t.value(pv2);
        Tensor<Real>* gP = t.grad_buf(pP);
        Tensor<Real>* gq = t.grad_buf(pq);
        Tensor<Real>* gv = t.grad_buf(pv2);
        for (int l = 0; l < L; ++l) {
          Real gl = g.data[l];
          if (gl == Real(0)) continue;
          for (int j = 0; j < A; ++j) {
            Real th = T.at2(l, j);
            if (gv) gv->data[j] += gl * th;
            Real dpre = gl * vv.data[j] * (Real(1) - th * th);
            if (gP) gP->data[static_cast<size_t>(l) * A + j] += dpre;
            if (gq) gq->data[j] += dpre;
          }
        }
      });
}

// Gaussian reweighting factors g_i = exp(-(off_i - p)^2 / (2 sigma^2))
// where p is a scalar node and off_i are fixed positions.
template <typename Real>
Var<Real> gaussian_window(Var<Real> p, const std::vector<Real>& offsets,
                          Real sigma) {
  if (!p.value().is_scalar())
    throw std::invalid_argument("gaussian_window: p must be scalar");
  Real pv = p.value().data[0];
  int L = static_cast<int>(offsets.size());
  Tensor<Real> out({L});
  for (int i = 0; i < L; ++i) {
    Real d = offsets[i] - pv;
    out.data[i] = std::exp(-d * d / (Real(2) * sigma * sigma));
  }
  int pp = p.idx;
  return p.tape->record(
      std::move(out), {pp},
      [pp, offsets, sigma](Tape<Real>& t, int self) {
        const Tensor<Real>& g = t.grad(self);
        const Tensor<Real>& y = t.value(self);
        Real pv = t.value(pp).data[0];
        if (t.needs_grad(pp)) {
          Real acc = 0;
          for (size_t i = 0; i < offsets.size(); ++i) {
            Real d = offsets[i] - pv;
            // d/dp exp(-d^2/2s^2) = y * d / s^2
            acc += g.data[i] * y.data[i] * d / (sigma * sigma);
          }
          t.accum_at(pp, 0, acc);
        }
      });
}

// -log softmax(logits)[target], computed via a stable log-sum-exp.
template <typename Real>
Var<Real> cross_entropy_logits(Var<Real> logits, int target) {
  const Tensor<Real>& ov = logits.value();
  if (!ov.is_vector() || target < 0 || target >= ov.numel())
    throw std::invalid_argument("cross_entropy_logits: bad target index");
  Real mx = ov.data[0];
  for (Real v : ov.data) mx = std::max(mx, v);
  Real sum = 0;
  for (Real v : ov.data) sum += std::exp(v - mx);
  Real lse = mx + std::log(sum);
  Real loss = lse - ov.data[static_cast<size_t>(target)];
  int po = logits.idx;
  return logits.tape->record(
      Tensor<Real>({1}, {loss}), {po},
      [po, target, lse](Tape<Real>& t, int self) {
        Real g = t.grad(self).data[0];
        const Tensor<Real>& ov = t.value(po);
        if (Tensor<Real>* go = t.grad_buf(po)) {
          for (size_t i = 0; i < ov.data.size(); ++i) {
            Real p = std::exp(ov.data[i] - lse);
            go->data[i] += g * (p - (static_cast<int>(i) == target
                                         ? Real(1)
                                         : Real(0)));
          }
        }
      });
}

}  // namespace mmt
