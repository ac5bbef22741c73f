#include "bbyol/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "bbyol/errors.hpp"
#include "bbyol/posterior.hpp"

namespace bbyol {

namespace {

void check_batch(const ad::Tensor& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.rows() == 0) throw ContractError("metric on an empty batch");
  if (labels.size() != probs.rows()) throw DimensionError("label count does not match prediction rows");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= probs.cols()) throw DataError("label out of range");
}

}  // namespace

double accuracy(const ad::Tensor& probs, std::span<const int> labels) {
  check_batch(probs, labels);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    hits += best == static_cast<std::size_t>(labels[r]) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(probs.rows());
}

double nll(const ad::Tensor& probs, std::span<const int> labels) {
  check_batch(probs, labels);
  double total = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r)
    total -= std::log(std::max(probs.at(r, static_cast<std::size_t>(labels[r])), kNllFloor));
  return total / static_cast<double>(probs.rows());
}

double auroc(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) throw ContractError("AUROC needs both positive and negative scores");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(positives.size() + negatives.size());
  for (double s : positives) items.push_back({s, true});
  for (double s : negatives) items.push_back({s, false});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Tied runs share their mean 1-based rank; rank sums of the positives give U.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    std::size_t pos_in_run = 0;
    while (j < items.size() && items[j].score == items[i].score) pos_in_run += items[j++].positive ? 1 : 0;
    const double mean_rank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += mean_rank * static_cast<double>(pos_in_run);
    i = j;
  }
  const double np = static_cast<double>(positives.size()), nn = static_cast<double>(negatives.size());
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

std::size_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

Histogram entropy_histogram(std::span<const double> values, std::size_t bins, double lo, double hi) {
  if (bins < 1) throw ContractError("histogram needs at least one bin");
  if (!(hi > lo)) throw ContractError("histogram range must be non-empty");
  Histogram h;
  h.counts.assign(bins, 0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(b == bins ? hi : lo + width * static_cast<double>(b));
  for (double v : values) {
    std::size_t bin;
    if (v < lo) {
      bin = 0;
      ++h.clamped;
    } else if (v > hi) {
      bin = bins - 1;
      ++h.clamped;
    } else {
      bin = static_cast<std::size_t>(std::floor((v - lo) / width));
      // Correct floor() against the stored edges so edge values go right.
      while (bin > 0 && v < h.edges[bin]) --bin;
      while (bin + 1 < bins && v >= h.edges[bin + 1]) ++bin;
      bin = std::min(bin, bins - 1);
    }
    ++h.counts[bin];
  }
  return h;
}

SeedSummary aggregate_seeds(std::span<const double> values) {
  if (values.empty()) throw ContractError("aggregate_seeds needs at least one value");
  SeedSummary s;
  s.count = values.size();
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.count);
  if (s.count > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    const double sd = std::sqrt(ss / static_cast<double>(s.count - 1));
    s.std_error = sd / std::sqrt(static_cast<double>(s.count));
  }
  return s;
}

OodScore parse_ood_score(const std::string& name) {
  if (name == "entropy") return OodScore::Entropy;
  if (name == "max_prob") return OodScore::MaxProb;
  throw ConfigError("unknown OOD score '" + name + "'");
}

const char* ood_score_name(OodScore score) { return score == OodScore::Entropy ? "entropy" : "max_prob"; }

std::vector<double> ood_scores(const ad::Tensor& probs, OodScore score) {
  if (score == OodScore::Entropy) return predictive_entropy_rows(probs);
  std::vector<double> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r);
    out[r] = 1.0 - *std::max_element(row.begin(), row.end());
  }
  return out;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  os.precision(10);
  os << "metric\tvalue\tstderr\n";
  auto stderr_of = [&](const std::string& metric) -> std::string {
    for (const auto& m : report.per_seed)
      if (m.metric == metric) {
        std::ostringstream v;
        v.precision(10);
        v << m.summary.std_error;
        return v.str();
      }
    return "0";
  };
  os << "accuracy\t" << report.accuracy << '\t' << stderr_of("accuracy") << '\n';
  os << "nll\t" << report.nll << '\t' << stderr_of("nll") << '\n';
  if (report.auroc) os << "auroc\t" << *report.auroc << '\t' << stderr_of("auroc") << '\n';
  return os.str();
}

std::string format_histogram(const Histogram& hist) {
  std::ostringstream os;
  os.precision(10);
  os << "bin_left_edge\tcount\n";
  for (std::size_t b = 0; b < hist.counts.size(); ++b) os << hist.edges[b] << '\t' << hist.counts[b] << '\n';
  return os.str();
}

}  // namespace bbyol
