#pragma once

#include <stdexcept>
#include <vector>

#include "mmt/rng.hpp"
#include "mmt/tensor.hpp"

namespace mmt {

template <typename Real>
Tensor<Real> init_zero(std::vector<int> shape) {
  return Tensor<Real>(std::move(shape));
}

// N(0, std^2) entries; std defaults to the 0.01 used for non-recurrent
// matrices and embeddings.
template <typename Real>
Tensor<Real> init_gaussian(std::vector<int> shape, RngState& rng,
                           double stddev = 0.01) {
  Tensor<Real> t(std::move(shape));
  for (Real& v : t.data) v = static_cast<Real>(rng.normal() * stddev);
  return t;
}

// Random orthogonal matrix via Gram-Schmidt on a Gaussian draw. Rectangular
// shapes are handled by orthogonalizing in the larger dimension and
// truncating, so rows (or columns) stay orthonormal.
template <typename Real>
Tensor<Real> init_orthogonal(std::vector<int> shape, RngState& rng) {
  if (shape.size() != 2)
    throw std::invalid_argument("init_orthogonal: expected a matrix shape");
  int r = shape[0], c = shape[1];
  int n = std::max(r, c);
  // n x n Gaussian, orthogonalized row by row (modified Gram-Schmidt).
  std::vector<double> q(static_cast<size_t>(n) * n);
  for (double& v : q) v = rng.normal();
  for (int i = 0; i < n; ++i) {
    double* qi = &q[static_cast<size_t>(i) * n];
    for (int j = 0; j < i; ++j) {
      const double* qj = &q[static_cast<size_t>(j) * n];
      double d = 0;
      for (int k = 0; k < n; ++k) d += qi[k] * qj[k];
      for (int k = 0; k < n; ++k) qi[k] -= d * qj[k];
    }
    double nrm = 0;
    for (int k = 0; k < n; ++k) nrm += qi[k] * qi[k];
    nrm = std::sqrt(nrm);
    if (nrm < 1e-12) {
      // degenerate draw; retry this row
      for (int k = 0; k < n; ++k) qi[k] = rng.normal();
      --i;
      continue;
    }
    for (int k = 0; k < n; ++k) qi[k] /= nrm;
  }
  Tensor<Real> out({r, c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out.at2(i, j) = static_cast<Real>(q[static_cast<size_t>(i) * n + j]);
  return out;
}

// Inverted dropout mask: 0 with probability p, else 1/(1-p). One mask is
// built per sequence and reused at every timestep.
template <typename Real>
Tensor<Real> dropout_mask(std::vector<int> shape, double p, RngState& rng) {
  if (p < 0.0 || p >= 1.0)
    throw std::invalid_argument("dropout_mask: p must be in [0, 1)");
  Tensor<Real> m(std::move(shape));
  if (p == 0.0) {
    m.fill(Real(1));
    return m;
  }
  Real keep = static_cast<Real>(1.0 / (1.0 - p));
  for (Real& v : m.data) v = (rng.uniform() < p) ? Real(0) : keep;
  return m;
}

template <typename Real>
Tensor<Real> identity_mask(std::vector<int> shape) {
  Tensor<Real> m(std::move(shape));
  m.fill(Real(1));
  return m;
}

}  // namespace mmt
