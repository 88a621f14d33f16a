#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pretext/tensor.hpp"

namespace pretext {

// Ranking metrics for multi-label tagging, computed in double precision.
// Binary labels are 0/1; scores are arbitrary reals (any strictly monotone
// transform leaves both metrics unchanged).

// Mann-Whitney formulation with average ranks for ties: the probability a
// random positive outranks a random negative, ties counted half. Needs both
// classes present; a single-class input is a DataError.
double roc_auc(const std::vector<float>& scores, const std::vector<uint8_t>& labels);

// Mean of precision@k over the ranks k holding positives, descending score
// order, ties kept in input order. No positives is a DataError.
double average_precision(const std::vector<float>& scores, const std::vector<uint8_t>& labels);

// Unweighted mean over the labels where the metric is defined; the rest are
// recorded as warnings and skipped. Every label skipped is a DataError.
struct MacroMetric {
  double value = 0.0;
  int64_t n_evaluated = 0;
  std::vector<std::string> warnings;
};

MacroMetric macro_roc_auc(const Tensor& scores, const Tensor& labels,
                          const std::vector<std::string>& label_names);
MacroMetric macro_average_precision(const Tensor& scores, const Tensor& labels,
                                    const std::vector<std::string>& label_names);

// Resampled uncertainty for the macro metrics: n draws of floor(fraction*M)
// rows without replacement (row order preserved, so fraction 1 reproduces
// the full-set metric exactly and its std is 0). Deterministic from seed.
// Mean and population std over the resamples.
struct BootstrapStats {
  double mean_roc = 0.0;
  double std_roc = 0.0;
  double mean_map = 0.0;
  double std_map = 0.0;
  int64_t n_resamples = 0;
  double fraction = 0.0;
  uint64_t seed = 0;
  std::vector<std::string> warnings;
};

BootstrapStats bootstrap_eval(const Tensor& scores, const Tensor& labels,
                              const std::vector<std::string>& label_names, double fraction = 0.5,
                              int64_t n_resamples = 50, uint64_t seed = 1);

}  // namespace pretext
