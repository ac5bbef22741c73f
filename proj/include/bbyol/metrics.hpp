#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bbyol/autodiff.hpp"

namespace bbyol {

/// Fraction of rows whose argmax equals the label; ties go to the lowest class index.
double accuracy(const ad::Tensor& probs, std::span<const int> labels);

/// Probabilities are clamped below at this value before taking logs.
inline constexpr double kNllFloor = 1e-12;

/// Mean of -ln p[label] in nats.
double nll(const ad::Tensor& probs, std::span<const int> labels);

/// Mann-Whitney statistic: P(pos > neg) + 0.5 P(pos == neg).
double auroc(std::span<const double> positives, std::span<const double> negatives);

struct Histogram {
  std::vector<double> edges;  // bins + 1 entries
  std::vector<std::size_t> counts;
  /// Inputs that fell outside the range and were placed in an end bin.
  std::size_t clamped = 0;

  std::size_t total() const;
};

/// Fixed-width, left-closed bins over [lo, hi]; the last bin also holds hi.
Histogram entropy_histogram(std::span<const double> values, std::size_t bins, double lo, double hi);

struct SeedSummary {
  double mean = 0.0;
  /// Sample standard deviation over sqrt(count); 0 for a single value.
  double std_error = 0.0;
  std::size_t count = 0;
};

SeedSummary aggregate_seeds(std::span<const double> values);

enum class OodScore { Entropy, MaxProb };

OodScore parse_ood_score(const std::string& name);
const char* ood_score_name(OodScore score);
/// Per-row OOD score where larger means "more likely out of distribution":
/// predictive entropy, or 1 - max probability.
std::vector<double> ood_scores(const ad::Tensor& probs, OodScore score);

struct MetricSummary {
  std::string metric;
  std::vector<double> per_seed;
  SeedSummary summary;
};

struct EvalReport {
  double accuracy = 0.0;
  double nll = 0.0;
  std::optional<double> auroc;
  Histogram entropy_histogram;
  std::vector<MetricSummary> per_seed;
};

/// Tab-separated (metric, value, stderr) table with a header row.
std::string format_report(const EvalReport& report);
/// Tab-separated (bin_left_edge, count) table with a header row.
std::string format_histogram(const Histogram& hist);

}  // namespace bbyol
