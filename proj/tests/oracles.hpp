#pragma once

// Reference implementations used only by tests. Each is written the dumbest
// possible way (double precision, no blocking, no stability tricks beyond
// what correctness demands) so disagreement with the library points at the
// library.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "pretext/tensor.hpp"

namespace oracle {

inline std::vector<float> naive_matmul(const std::vector<float>& a, int64_t m, int64_t k,
                                       const std::vector<float>& b, int64_t n) {
  std::vector<float> out(static_cast<size_t>(m * n), 0.0f);
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) {
        acc += static_cast<double>(a[i * k + p]) * b[p * n + j];
      }
      out[static_cast<size_t>(i * n + j)] = static_cast<float>(acc);
    }
  }
  return out;
}

struct GradCheckReport {
  bool ok = true;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::string worst;
};

// Central finite differences against the recorded backward pass. The
// tolerances are calibrated for float32: with h = 1e-3 the FD quotient
// carries noise around |L| * 2^-23 / h ~ 1.2e-4, hence the absolute floor.
template <class F>
GradCheckReport grad_check(F f, std::vector<pretext::Tensor> inputs, float h = 1e-3f,
                           double rtol = 1e-3, double atol = 2e-4) {
  using namespace pretext;
  zero_grad(inputs);
  Tensor loss = f(inputs);
  backward(loss);
  std::vector<std::vector<float>> analytic;
  for (const Tensor& in : inputs) {
    analytic.push_back(in.grad().empty() ? std::vector<float>(static_cast<size_t>(in.numel()), 0.0f)
                                         : in.grad());
  }
  GradCheckReport rep;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    if (!inputs[ti].requires_grad()) continue;
    auto& data = inputs[ti].data();
    for (size_t i = 0; i < data.size(); ++i) {
      const float keep = data[i];
      data[i] = keep + h;
      const double lp = static_cast<double>(f(inputs).item());
      data[i] = keep - h;
      const double lm = static_cast<double>(f(inputs).item());
      data[i] = keep;
      const double fd = (lp - lm) / (2.0 * static_cast<double>(h));
      const double an = static_cast<double>(analytic[ti][i]);
      const double abs_err = std::abs(an - fd);
      const double denom = std::max(std::abs(an), std::abs(fd));
      const double rel = denom > 0.0 ? abs_err / denom : 0.0;
      rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
      if (abs_err > atol) rep.max_rel_err = std::max(rep.max_rel_err, rel);
      if (abs_err > std::max(atol, rtol * denom)) {
        rep.ok = false;
        if (rep.worst.empty()) {
          rep.worst = "input " + std::to_string(ti) + " flat " + std::to_string(i) +
                      ": analytic " + std::to_string(an) + " vs fd " + std::to_string(fd);
        }
      }
    }
  }
  return rep;
}

// O(N^2) discrete Fourier transform of a real signal, double precision.
inline std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<std::complex<double>> out(n / 2 + 1);
  for (size_t k = 0; k < out.size(); ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (size_t t = 0; t < n; ++t) {
      const double a = -2.0 * 3.14159265358979323846 * static_cast<double>(k) *
                       static_cast<double>(t) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(a), std::sin(a));
    }
    out[k] = acc;
  }
  return out;
}

// ROC-AUC by explicit pair counting: ties between a positive and a negative
// count half.
inline double pairwise_roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  int64_t pos = 0, negs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1) {
      ++pos;
      for (size_t j = 0; j < scores.size(); ++j) {
        if (labels[j] != 0) continue;
        if (scores[i] > scores[j]) wins += 1.0;
        else if (scores[i] == scores[j]) wins += 0.5;
      }
    } else {
      ++negs;
    }
  }
  if (pos == 0 || negs == 0) return std::nan("");
  return wins / (static_cast<double>(pos) * static_cast<double>(negs));
}

// Average precision as sum over positives of precision at their rank,
// descending scores, stable order on ties.
inline double ranked_average_precision(const std::vector<double>& scores,
                                       const std::vector<int>& labels) {
  std::vector<size_t> idx(scores.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  int64_t pos_total = 0;
  for (int v : labels) pos_total += v;
  if (pos_total == 0) return std::nan("");
  double ap = 0.0;
  int64_t hits = 0;
  for (size_t r = 0; r < idx.size(); ++r) {
    if (labels[idx[r]] == 1) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return ap / static_cast<double>(pos_total);
}

}  // namespace oracle
