#include "pretext/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pretext/error.hpp"
#include "pretext/rng.hpp"

namespace pretext {

namespace {

constexpr uint64_t kBootstrapStream = 3;

void require_scored(const std::vector<float>& scores, const std::vector<uint8_t>& labels,
                    const char* op) {
  if (scores.empty() || scores.size() != labels.size()) {
    raise<ValueError>(op, ": scores and labels must be non-empty and equally sized");
  }
  for (uint8_t l : labels) {
    if (l > 1) raise<ValueError>(op, ": labels must be binary");
  }
}

struct LabelMatrix {
  const Tensor& scores;
  const Tensor& labels;
  int64_t rows;
  int64_t cols;
};

LabelMatrix require_matrix(const Tensor& scores, const Tensor& labels,
                           const std::vector<std::string>& names, const char* op) {
  if (scores.rank() != 2 || labels.rank() != 2 || scores.shape() != labels.shape()) {
    raise<ShapeError>(op, ": scores and labels must share a {M, N} shape");
  }
  if (static_cast<int64_t>(names.size()) != scores.cols()) {
    raise<ShapeError>(op, ": expected ", scores.cols(), " label names, got ", names.size());
  }
  return {scores, labels, scores.rows(), scores.cols()};
}

std::vector<uint8_t> label_column(const Tensor& labels, int64_t col,
                                  const std::vector<size_t>& rows) {
  std::vector<uint8_t> out(rows.size());
  const int64_t n = labels.cols();
  for (size_t i = 0; i < rows.size(); ++i) {
    out[i] = labels.data()[rows[i] * static_cast<size_t>(n) + static_cast<size_t>(col)] > 0.5f
                 ? 1
                 : 0;
  }
  return out;
}

std::vector<float> score_column(const Tensor& scores, int64_t col,
                                const std::vector<size_t>& rows) {
  std::vector<float> out(rows.size());
  const int64_t n = scores.cols();
  for (size_t i = 0; i < rows.size(); ++i) {
    out[i] = scores.data()[rows[i] * static_cast<size_t>(n) + static_cast<size_t>(col)];
  }
  return out;
}

enum class MetricKind { roc, ap };

MacroMetric macro_over_labels(const LabelMatrix& m, const std::vector<std::string>& names,
                              const std::vector<size_t>& rows, MetricKind kind) {
  MacroMetric out;
  double total = 0.0;
  for (int64_t j = 0; j < m.cols; ++j) {
    const auto col_labels = label_column(m.labels, j, rows);
    const int64_t positives = std::count(col_labels.begin(), col_labels.end(), uint8_t{1});
    const int64_t negatives = static_cast<int64_t>(col_labels.size()) - positives;
    const bool defined = kind == MetricKind::roc ? (positives > 0 && negatives > 0)
                                                 : (positives > 0);
    if (!defined) {
      out.warnings.push_back("label '" + names[static_cast<size_t>(j)] +
                             "' skipped: metric undefined on this sample");
      continue;
    }
    const auto col_scores = score_column(m.scores, j, rows);
    total += kind == MetricKind::roc ? roc_auc(col_scores, col_labels)
                                     : average_precision(col_scores, col_labels);
    ++out.n_evaluated;
  }
  if (out.n_evaluated == 0) {
    raise<DataError>("macro metric: every label was undefined on this sample");
  }
  out.value = total / static_cast<double>(out.n_evaluated);
  return out;
}

std::vector<size_t> all_rows(int64_t m) {
  std::vector<size_t> rows(static_cast<size_t>(m));
  std::iota(rows.begin(), rows.end(), size_t{0});
  return rows;
}

}  // namespace

double roc_auc(const std::vector<float>& scores, const std::vector<uint8_t>& labels) {
  require_scored(scores, labels, "roc_auc");
  const size_t m = scores.size();
  std::vector<size_t> order(m);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Average 1-based ranks over tied score groups, then Mann-Whitney U.
  double positive_rank_sum = 0.0;
  int64_t n_pos = 0;
  size_t i = 0;
  while (i < m) {
    size_t j = i;
    while (j < m && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const int64_t n_neg = static_cast<int64_t>(m) - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    raise<DataError>("roc_auc: undefined with a single class (", n_pos, " positives of ", m, ")");
  }
  const double u = positive_rank_sum -
                   0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double average_precision(const std::vector<float>& scores, const std::vector<uint8_t>& labels) {
  require_scored(scores, labels, "average_precision");
  const size_t m = scores.size();
  std::vector<size_t> order(m);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  double sum = 0.0;
  int64_t hits = 0;
  for (size_t k = 0; k < m; ++k) {
    if (labels[order[k]] == 1) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  if (hits == 0) raise<DataError>("average_precision: undefined without positives");
  return sum / static_cast<double>(hits);
}

MacroMetric macro_roc_auc(const Tensor& scores, const Tensor& labels,
                          const std::vector<std::string>& label_names) {
  const auto m = require_matrix(scores, labels, label_names, "macro_roc_auc");
  return macro_over_labels(m, label_names, all_rows(m.rows), MetricKind::roc);
}

MacroMetric macro_average_precision(const Tensor& scores, const Tensor& labels,
                                    const std::vector<std::string>& label_names) {
  const auto m = require_matrix(scores, labels, label_names, "macro_average_precision");
  return macro_over_labels(m, label_names, all_rows(m.rows), MetricKind::ap);
}

BootstrapStats bootstrap_eval(const Tensor& scores, const Tensor& labels,
                              const std::vector<std::string>& label_names, double fraction,
                              int64_t n_resamples, uint64_t seed) {
  const auto m = require_matrix(scores, labels, label_names, "bootstrap_eval");
  if (fraction <= 0.0 || fraction > 1.0) {
    raise<ValueError>("bootstrap_eval: fraction must lie in (0, 1], got ", fraction);
  }
  if (n_resamples < 1) raise<ValueError>("bootstrap_eval: need at least one resample");
  const int64_t take = static_cast<int64_t>(fraction * static_cast<double>(m.rows));
  if (take < 1) raise<DataError>("bootstrap_eval: resample of ", m.rows, " rows is empty");

  BootstrapStats stats;
  stats.n_resamples = n_resamples;
  stats.fraction = fraction;
  stats.seed = seed;

  Rng rng = Rng::substream(seed, {kBootstrapStream});
  std::vector<double> rocs, maps;
  rocs.reserve(static_cast<size_t>(n_resamples));
  maps.reserve(static_cast<size_t>(n_resamples));
  for (int64_t r = 0; r < n_resamples; ++r) {
    auto rows = rng.sample_indices(static_cast<size_t>(m.rows), static_cast<size_t>(take));
    std::sort(rows.begin(), rows.end());  // keep dataset order for tie stability
    auto roc = macro_over_labels(m, label_names, rows, MetricKind::roc);
    auto ap = macro_over_labels(m, label_names, rows, MetricKind::ap);
    rocs.push_back(roc.value);
    maps.push_back(ap.value);
    for (auto& w : roc.warnings) {
      stats.warnings.push_back("resample " + std::to_string(r) + ": " + w);
    }
  }

  auto mean_std = [](const std::vector<double>& xs) {
    // A constant sequence (e.g. fraction 1) has exactly zero spread; the
    // two-pass formula would report mean-rounding noise instead.
    if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); })) {
      return std::pair<double, double>(xs.front(), 0.0);
    }
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return std::pair<double, double>(mean, std::sqrt(var / static_cast<double>(xs.size())));
  };
  std::tie(stats.mean_roc, stats.std_roc) = mean_std(rocs);
  std::tie(stats.mean_map, stats.std_map) = mean_std(maps);
  return stats;
}

}  // namespace pretext
