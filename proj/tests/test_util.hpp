#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <cstdint>
#include <random>
#include <vector>

#include "bbyol/autodiff.hpp"
#include "bbyol/byol.hpp"

namespace testutil {

inline bbyol::ad::Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = g(rng);
  return bbyol::ad::Tensor::matrix(rows, cols, std::move(v));
}

/// grad_check of the symmetrized loss over all online parameters of `model`.
inline double twin_grad_error(bbyol::TwinModel& model, const bbyol::ad::Tensor& a, const bbyol::ad::Tensor& b,
                              double h = 1e-5) {
  const std::vector<double> theta = model.online_values();
  bbyol::TwinModel work = model;
  auto loss = [&](std::span<const double> t) {
    work.set_online_values(t);
    return bbyol::byol_loss_symmetrized(work, a, b);
  };
  auto grad = [&](std::span<const double> t) {
    work.set_online_values(t);
    bbyol::byol_loss_and_grad(work, a, b);
    return work.online_grad();
  };
  return bbyol::ad::grad_check(loss, grad, theta, h);
}

}  // namespace testutil
