#include "pretext/objectives.hpp"

#include <cmath>
#include <cstddef>

#include "pretext/error.hpp"

namespace pretext {

namespace {

constexpr float kBarlowStdEps = 1e-5f;
constexpr float kDiagMask = 1e4f;  // finite, so the graph stays NaN-free

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape() != b.shape() || a.rows() < 1) {
    raise<ShapeError>(op, ": views must share a {B, D} shape");
  }
}

// The batch-statistics losses additionally need real batches.
void require_paired(const Tensor& a, const Tensor& b, const char* op) {
  require_same_shape(a, b, op);
  if (a.rows() < 2) raise<ValueError>(op, ": needs a batch of at least 2, got ", a.rows());
}

}  // namespace

ObjectiveKind objective_kind_from_string(const std::string& name) {
  if (name == "contrastive") return ObjectiveKind::contrastive;
  if (name == "byol") return ObjectiveKind::byol;
  if (name == "clustering") return ObjectiveKind::clustering;
  if (name == "barlow_twins") return ObjectiveKind::barlow_twins;
  if (name == "vicreg") return ObjectiveKind::vicreg;
  raise<ConfigError>("unknown objective '", name,
                     "' (expected contrastive, byol, clustering, barlow_twins or vicreg)");
}

std::string to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::contrastive: return "contrastive";
    case ObjectiveKind::byol: return "byol";
    case ObjectiveKind::clustering: return "clustering";
    case ObjectiveKind::barlow_twins: return "barlow_twins";
    case ObjectiveKind::vicreg: return "vicreg";
  }
  raise<ValueError>("objective kind out of range");
}

void ObjectiveConfig::validate() const {
  if (temperature <= 0.0f) raise<ConfigError>("objective: temperature must be positive");
  if (teacher_temp <= 0.0f || student_temp <= 0.0f) {
    raise<ConfigError>("objective: clustering temperatures must be positive");
  }
  if (ema_momentum < 0.0f || ema_momentum > 1.0f) {
    raise<ConfigError>("objective: ema_momentum must lie in [0, 1]");
  }
  if (center_momentum < 0.0f || center_momentum > 1.0f) {
    raise<ConfigError>("objective: center_momentum must lie in [0, 1]");
  }
  if (n_prototypes < 2) raise<ConfigError>("objective: n_prototypes must be at least 2");
  if (bt_lambda < 0.0f) raise<ConfigError>("objective: bt_lambda must be non-negative");
  if (vicreg_inv < 0.0f || vicreg_var < 0.0f || vicreg_cov < 0.0f) {
    raise<ConfigError>("objective: vicreg coefficients must be non-negative");
  }
  if (vicreg_gamma <= 0.0f || vicreg_eps <= 0.0f) {
    raise<ConfigError>("objective: vicreg gamma and eps must be positive");
  }
}

Tensor nt_xent(const Tensor& z_a, const Tensor& z_b, float temperature) {
  require_paired(z_a, z_b, "nt_xent");
  if (temperature <= 0.0f) raise<ValueError>("nt_xent: temperature must be positive");
  const int64_t b = z_a.rows();
  const int64_t n = 2 * b;

  Tensor z = normalize_rows(concat_rows(z_a, z_b));
  Tensor logits = scale(matmul(z, transpose(z)), 1.0f / temperature);

  // Knock the self-similarity out of every row's denominator with a large
  // finite offset; its softmax weight underflows to zero.
  std::vector<float> mask(static_cast<size_t>(n * n), 0.0f);
  for (int64_t i = 0; i < n; ++i) mask[static_cast<size_t>(i * n + i)] = kDiagMask;
  Tensor masked = sub(logits, make_tensor({n, n}, std::move(mask)));

  std::vector<int64_t> rows(static_cast<size_t>(n)), cols(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    rows[static_cast<size_t>(i)] = i;
    cols[static_cast<size_t>(i)] = i < b ? i + b : i - b;
  }
  Tensor positives = select_entries(masked, rows, cols);
  return reduce_mean(sub(logsumexp_rows(masked), positives));
}

Tensor byol_loss(const Tensor& student_pred, const Tensor& teacher_proj) {
  require_same_shape(student_pred, teacher_proj, "byol_loss");
  if (teacher_proj.requires_grad()) {
    raise<ValueError>("byol_loss: teacher projections must not require grad");
  }
  Tensor diff = sub(normalize_rows(student_pred), normalize_rows(teacher_proj));
  return reduce_mean(reduce_sum_axis(square(diff), 1));
}

Tensor clustering_teacher_targets(const Tensor& teacher_logits, const Tensor& center,
                                  float teacher_temp) {
  if (teacher_logits.rank() != 2) raise<ShapeError>("clustering: teacher logits must be {B, K}");
  const int64_t b = teacher_logits.rows();
  const int64_t k = teacher_logits.cols();
  if (center.shape() != Shape{1, k}) {
    raise<ShapeError>("clustering: center must be {1, ", k, "}");
  }
  if (teacher_temp <= 0.0f) raise<ValueError>("clustering: teacher_temp must be positive");

  // Constant target, so this runs outside the graph in double precision.
  std::vector<float> q(static_cast<size_t>(b * k));
  const float* tl = teacher_logits.data().data();
  const float* c = center.data().data();
  for (int64_t i = 0; i < b; ++i) {
    double row_max = -1e300;
    for (int64_t j = 0; j < k; ++j) {
      const double v = (static_cast<double>(tl[i * k + j]) - static_cast<double>(c[j])) /
                       static_cast<double>(teacher_temp);
      if (!std::isfinite(v)) raise<NumericError>("clustering: non-finite teacher logit");
      row_max = std::max(row_max, v);
    }
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const double v = (static_cast<double>(tl[i * k + j]) - static_cast<double>(c[j])) /
                       static_cast<double>(teacher_temp);
      denom += std::exp(v - row_max);
    }
    for (int64_t j = 0; j < k; ++j) {
      const double v = (static_cast<double>(tl[i * k + j]) - static_cast<double>(c[j])) /
                       static_cast<double>(teacher_temp);
      q[static_cast<size_t>(i * k + j)] = static_cast<float>(std::exp(v - row_max) / denom);
    }
  }
  return make_tensor({b, k}, std::move(q));
}

Tensor clustering_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                       const Tensor& center, float student_temp, float teacher_temp) {
  require_same_shape(student_logits, teacher_logits, "clustering_loss");
  if (teacher_logits.requires_grad()) {
    raise<ValueError>("clustering_loss: teacher logits must not require grad");
  }
  if (student_temp <= 0.0f) raise<ValueError>("clustering: student_temp must be positive");
  Tensor q = clustering_teacher_targets(teacher_logits, center, teacher_temp);
  Tensor logp = log_softmax_rows(scale(student_logits, 1.0f / student_temp));
  return neg(reduce_mean(reduce_sum_axis(mul(q, logp), 1)));
}

namespace {

// Dims standardized across the batch with population stats.
Tensor standardize_dims(const Tensor& z) {
  Tensor mu = reduce_mean_axis(z, 0);
  Tensor centered = sub_rowvec(z, mu);
  Tensor var = reduce_mean_axis(square(centered), 0);
  return div_rowvec(centered, vsqrt_eps(var, kBarlowStdEps));
}

}  // namespace

Tensor barlow_twins(const Tensor& z_a, const Tensor& z_b, float lambda) {
  require_paired(z_a, z_b, "barlow_twins");
  if (lambda < 0.0f) raise<ValueError>("barlow_twins: lambda must be non-negative");
  const int64_t b = z_a.rows();
  const float bf = static_cast<float>(b);

  // The D x D cross-correlation c = A^T B / b is never materialized: its
  // diagonal is the per-dim mean of A.B, and sum_ij c_ij^2 equals
  // tr((A A^T)(B B^T)) / b^2, which needs only B x B Grams. D is 2048 here,
  // so this trades a D^2 intermediate for two b^2 ones.
  Tensor a_std = standardize_dims(z_a);
  Tensor b_std = standardize_dims(z_b);
  Tensor diag_c = reduce_mean_axis(mul(a_std, b_std), 0);  // {1, D}, c_jj
  Tensor gram_a = matmul(a_std, transpose(a_std));
  Tensor gram_b = matmul(b_std, transpose(b_std));
  Tensor total_sq = scale(reduce_sum(mul(gram_a, gram_b)), 1.0f / (bf * bf));
  Tensor diag_term = reduce_sum(square(add_scalar(diag_c, -1.0f)));
  Tensor off_term = sub(total_sq, reduce_sum(square(diag_c)));
  return add(diag_term, scale(off_term, lambda));
}

Tensor vicreg(const Tensor& z_a, const Tensor& z_b, const ObjectiveConfig& cfg) {
  require_paired(z_a, z_b, "vicreg");
  const int64_t b = z_a.rows();
  const int64_t d = z_a.cols();

  Tensor invariance = reduce_mean(square(sub(z_a, z_b)));

  Tensor variance_total;
  Tensor covariance_total;
  for (const Tensor& z : {z_a, z_b}) {
    Tensor centered = sub_rowvec(z, reduce_mean_axis(z, 0));
    Tensor var = reduce_mean_axis(square(centered), 0);  // population, {1, D}
    Tensor hinge = relu(neg(add_scalar(vsqrt_eps(var, cfg.vicreg_eps), -cfg.vicreg_gamma)));
    Tensor var_term = reduce_mean(hinge);

    // As in barlow_twins, the D x D covariance stays implicit: its diagonal
    // is var, and sum_ij cov_ij^2 = ||Z Z^T||_F^2 / b^2 by trace cyclicity.
    const float bf = static_cast<float>(b);
    Tensor gram = matmul(centered, transpose(centered));  // {B, B}
    Tensor total_sq = scale(reduce_sum(square(gram)), 1.0f / (bf * bf));
    Tensor off = sub(total_sq, reduce_sum(square(var)));
    Tensor cov_term = scale(off, 1.0f / static_cast<float>(d));

    variance_total = variance_total.defined() ? add(variance_total, var_term) : var_term;
    covariance_total = covariance_total.defined() ? add(covariance_total, cov_term) : cov_term;
  }

  return add(add(scale(invariance, cfg.vicreg_inv), scale(variance_total, cfg.vicreg_var)),
             scale(covariance_total, cfg.vicreg_cov));
}

void center_update(Tensor& center, const Tensor& teacher_logits, float momentum) {
  if (momentum < 0.0f || momentum > 1.0f) {
    raise<ValueError>("center_update: momentum must lie in [0, 1]");
  }
  if (teacher_logits.rank() != 2 || center.shape() != Shape{1, teacher_logits.cols()}) {
    raise<ShapeError>("center_update: center/logits shapes disagree");
  }
  const int64_t b = teacher_logits.rows();
  const int64_t k = teacher_logits.cols();
  const float* tl = teacher_logits.data().data();
  float* c = center.data().data();
  for (int64_t j = 0; j < k; ++j) {
    double mean = 0.0;
    for (int64_t i = 0; i < b; ++i) mean += tl[i * k + j];
    mean /= static_cast<double>(b);
    c[j] = static_cast<float>(momentum * static_cast<double>(c[j]) + (1.0 - momentum) * mean);
  }
}

double embedding_std(const Tensor& embeddings) {
  if (embeddings.rank() != 2 || embeddings.rows() < 2) {
    raise<ValueError>("embedding_std: needs a {B >= 2, D} tensor");
  }
  const int64_t b = embeddings.rows();
  const int64_t d = embeddings.cols();
  const float* p = embeddings.data().data();
  double total = 0.0;
  for (int64_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (int64_t i = 0; i < b; ++i) mean += p[i * d + j];
    mean /= static_cast<double>(b);
    double var = 0.0;
    for (int64_t i = 0; i < b; ++i) {
      const double dev = p[i * d + j] - mean;
      var += dev * dev;
    }
    total += std::sqrt(var / static_cast<double>(b));
  }
  return total / static_cast<double>(d);
}

double cluster_usage_entropy(const std::vector<int64_t>& assignments, int64_t n_clusters) {
  if (n_clusters < 2) raise<ValueError>("cluster_usage_entropy: need at least 2 clusters");
  if (assignments.empty()) raise<ValueError>("cluster_usage_entropy: no assignments");
  std::vector<int64_t> counts(static_cast<size_t>(n_clusters), 0);
  for (int64_t a : assignments) {
    if (a < 0 || a >= n_clusters) {
      raise<ValueError>("cluster_usage_entropy: assignment ", a, " out of range");
    }
    ++counts[static_cast<size_t>(a)];
  }
  const double total = static_cast<double>(assignments.size());
  double entropy = 0.0;
  for (int64_t count : counts) {
    if (count == 0) continue;
    const double p = static_cast<double>(count) / total;
    entropy -= p * std::log(p);
  }
  return entropy / std::log(static_cast<double>(n_clusters));
}

std::vector<int64_t> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) raise<ShapeError>("argmax_rows: needs a {B, K} tensor");
  const int64_t b = logits.rows();
  const int64_t k = logits.cols();
  const float* p = logits.data().data();
  std::vector<int64_t> out(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < k; ++j) {
      if (p[i * k + j] > p[i * k + best]) best = j;
    }
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

}  // namespace pretext
