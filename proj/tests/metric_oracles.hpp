#pragma once

// Deliberately naive reference implementations used to check the metrics.

#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "bbyol/autodiff.hpp"

namespace oracle {

/// Quadratic pairwise count: ties contribute one half.
inline double brute_auroc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

inline double naive_nll(const bbyol::ad::Tensor& p, const std::vector<int>& y) {
  double s = 0.0;
  for (std::size_t r = 0; r < y.size(); ++r) s += -std::log(std::max(p.at(r, static_cast<std::size_t>(y[r])), 1e-12));
  return s / static_cast<double>(y.size());
}

inline double naive_accuracy(const bbyol::ad::Tensor& p, const std::vector<int>& y) {
  std::size_t hits = 0;
  for (std::size_t r = 0; r < y.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < p.cols(); ++c)
      if (p.at(r, c) > p.at(r, best)) best = c;
    hits += static_cast<int>(best) == y[r];
  }
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

/// Counts per [edge_i, edge_{i+1}) by linear scan; the last bin is closed and
/// out-of-range values go to the nearest end bin.
inline std::vector<std::size_t> scan_histogram(const std::vector<double>& values, const std::vector<double>& edges) {
  const std::size_t bins = edges.size() - 1;
  std::vector<std::size_t> counts(bins, 0);
  for (double v : values) {
    std::size_t bin = 0;
    if (v >= edges.back()) bin = bins - 1;
    else
      for (std::size_t b = 0; b < bins; ++b)
        if (v >= edges[b]) bin = b;
    ++counts[bin];
  }
  return counts;
}

/// Random softmax rows (with occasional exact ties) and labels.
inline std::pair<bbyol::ad::Tensor, std::vector<int>> random_predictions(std::size_t rows, std::size_t classes,
                                                                         std::mt19937_64& rng) {
  std::gamma_distribution<double> g(0.7, 1.0);
  std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
  std::vector<double> v(rows * classes);
  std::vector<int> y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += (v[r * classes + c] = g(rng));
    if (r % 7 == 0) v[r * classes + 1] = v[r * classes];
    s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += v[r * classes + c];
    for (std::size_t c = 0; c < classes; ++c) v[r * classes + c] /= s;
    y[r] = label(rng);
  }
  return {bbyol::ad::Tensor::matrix(rows, classes, std::move(v)), std::move(y)};
}

}  // namespace oracle
