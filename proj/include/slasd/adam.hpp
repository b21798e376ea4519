#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "slasd/error.hpp"
#include "slasd/matrix.hpp"

namespace slasd {

template <class T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Matrix<T>> m;
  std::vector<Matrix<T>> v;
};

// One Adam update with bias correction. Moments are created on the first call
// and must keep the parameters' shapes afterwards.
template <class T>
void adam_step(std::span<Matrix<T>* const> params, std::span<const Matrix<T>* const> grads, AdamState<T>& state,
               double lr) {
  if (params.size() != grads.size()) throw InvalidArgument("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->rows, p->cols);
      state.v.emplace_back(p->rows, p->cols);
    }
  }
  if (state.m.size() != params.size()) throw InvalidArgument("adam_step: state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i]->rows != params[i]->rows || grads[i]->cols != params[i]->cols ||
        state.m[i].rows != params[i]->rows || state.m[i].cols != params[i]->cols)
      throw InvalidArgument("adam_step: shape mismatch for parameter " + std::to_string(i));
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->data;
    const auto& g = grads[i]->data;
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      m[k] = static_cast<T>(state.beta1 * m[k] + (1.0 - state.beta1) * gk);
      v[k] = static_cast<T>(state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk);
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] = static_cast<T>(p[k] - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace slasd
