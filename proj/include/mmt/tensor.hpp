#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmt {

// Dense row-major tensor. Rank is 1 or 2 everywhere in this codebase;
// shape is kept generic so shape errors stay readable.
template <typename Real>
struct Tensor {
  std::vector<int> shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), Real(0));
  }
  Tensor(std::vector<int> s, std::vector<Real> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<size_t>(numel_of(shape)) != data.size())
      throw std::invalid_argument("Tensor: element count does not match shape");
  }

  static long numel_of(const std::vector<int>& s) {
    long n = 1;
    for (int e : s) {
      if (e <= 0) throw std::invalid_argument("Tensor: nonpositive extent");
      n *= e;
    }
    return n;
  }

  long numel() const { return static_cast<long>(data.size()); }
  int rows() const { return shape.at(0); }
  int cols() const { return shape.size() >= 2 ? shape.at(1) : 1; }
  bool is_scalar() const { return data.size() == 1; }
  bool is_vector() const { return shape.size() == 1; }
  bool is_matrix() const { return shape.size() == 2; }

  Real& operator[](long i) { return data[static_cast<size_t>(i)]; }
  const Real& operator[](long i) const { return data[static_cast<size_t>(i)]; }
  Real& at2(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  const Real& at2(int r, int c) const {
    return data[static_cast<size_t>(r) * cols() + c];
  }

  void fill(Real v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(Real(0)); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (Real v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i)
      os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<Other>(data[i]);
    return out;
  }
};

template <typename Real>
inline void check_same_shape(const char* op, const Tensor<Real>& a,
                             const Tensor<Real>& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

// Named trainable parameter: value plus accumulated gradient of equal shape.
template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<Real> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

  void reset_grad() { grad.zero(); }
};

}  // namespace mmt
