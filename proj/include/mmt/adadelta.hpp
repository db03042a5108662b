#pragma once

#include <cmath>
#include <vector>

#include "mmt/model.hpp"
#include "mmt/tensor.hpp"

namespace mmt {

// ADADELTA accumulators, one pair per parameter tensor.
template <typename Real>
struct AdadeltaState {
  Real rho = Real(0.95);
  Real eps = Real(1e-6);
  std::vector<Tensor<Real>> Eg2, Edx2;

  explicit AdadeltaState(const Model<Real>& m, Real rho_ = Real(0.95),
                         Real eps_ = Real(1e-6))
      : rho(rho_), eps(eps_) {
    for (auto* p : m.params) {
      Eg2.emplace_back(p->value.shape);
      Edx2.emplace_back(p->value.shape);
    }
  }

  // Applies the standard recurrences using each parameter's current grad.
  void update(Model<Real>& m) {
    for (size_t i = 0; i < m.params.size(); ++i) {
      Parameter<Real>& p = *m.params[i];
      Tensor<Real>& eg = Eg2[i];
      Tensor<Real>& ed = Edx2[i];
      for (size_t k = 0; k < p.value.data.size(); ++k) {
        Real g = p.grad.data[k];
        eg.data[k] = rho * eg.data[k] + (Real(1) - rho) * g * g;
        Real dx = -std::sqrt(ed.data[k] + eps) / std::sqrt(eg.data[k] + eps) * g;
        ed.data[k] = rho * ed.data[k] + (Real(1) - rho) * dx * dx;
        p.value.data[k] += dx;
      }
    }
  }
};

}  // namespace mmt
