#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pretext/tensor.hpp"

namespace pretext {

// The five pretext losses with their collapse-avoidance machinery. Each loss
// is a pure function from projection tensors to a scalar graph node; teacher
// inputs must arrive gradient-free (frozen clones), which is what gives the
// stop-gradient semantics. byol_loss and clustering_loss score one view
// ordering; the training step averages both orderings.

enum class ObjectiveKind { contrastive, byol, clustering, barlow_twins, vicreg };

ObjectiveKind objective_kind_from_string(const std::string& name);  // ConfigError on unknown
std::string to_string(ObjectiveKind kind);

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::contrastive;
  float temperature = 0.1f;      // contrastive
  float ema_momentum = 0.996f;   // byol, clustering
  float center_momentum = 0.9f;  // clustering
  float teacher_temp = 0.04f;    // clustering
  float student_temp = 0.1f;     // clustering
  int64_t n_prototypes = 512;    // clustering
  float bt_lambda = 5e-3f;       // barlow_twins
  float vicreg_inv = 25.0f;
  float vicreg_var = 25.0f;
  float vicreg_cov = 1.0f;
  float vicreg_gamma = 1.0f;  // variance target
  float vicreg_eps = 1e-4f;
  // Collapse-study knob: byol without its prediction head degenerates to
  // matching the teacher directly. center_momentum = 1 plays the same role
  // for clustering (the zero-initialized center then never moves).
  bool use_predictor = true;  // byol

  void validate() const;  // ConfigError on violation
};

// Normalized temperature-scaled cross-entropy over 2B views. For view i the
// positive is its pair; the denominator runs over every view but i itself
// (the positive included), masked on the diagonal. B >= 2.
Tensor nt_xent(const Tensor& z_a, const Tensor& z_b, float temperature);

// Mean over the batch of the squared distance between L2-normalized rows,
// in [0, 4]. teacher_proj must not require grad.
Tensor byol_loss(const Tensor& student_pred, const Tensor& teacher_proj);

// Teacher target distribution: softmax((logits - center) / teacher_temp).
// Computed outside the graph (constant target). Rows sum to 1.
Tensor clustering_teacher_targets(const Tensor& teacher_logits, const Tensor& center,
                                  float teacher_temp);

// Cross-entropy from the centered, sharpened teacher distribution to the
// student's softmax at student_temp. teacher_logits must not require grad.
Tensor clustering_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                       const Tensor& center, float student_temp, float teacher_temp);

// Cross-correlation-to-identity: dims standardized across the batch
// (population stats, sqrt(var + 1e-5)), C = (1/B) za_hat^T zb_hat,
// loss = sum_d (1 - C_dd)^2 + lambda * sum_{d != d'} C_dd'^2. B >= 2.
Tensor barlow_twins(const Tensor& z_a, const Tensor& z_b, float lambda);

// Invariance (mean squared difference over all B*D entries), variance hinge
// (per view, mean over dims of max(0, gamma - sqrt(var_d + eps))), and
// covariance (per view, sum of squared off-diagonal covariances / D),
// weighted by the configured coefficients. B >= 2.
Tensor vicreg(const Tensor& z_a, const Tensor& z_b, const ObjectiveConfig& cfg);

// center <- momentum * center + (1 - momentum) * batch column mean.
// Plain data update on a {1, K} buffer; no graph.
void center_update(Tensor& center, const Tensor& teacher_logits, float momentum);

// Mean over dims of the population batch std; near zero means the encoder
// emits (almost) the same embedding for everything. B >= 2.
double embedding_std(const Tensor& embeddings);

// Shannon entropy of the argmax-assignment histogram normalized by log K,
// so 1 = uniform usage and 0 = a single cluster absorbing everything.
double cluster_usage_entropy(const std::vector<int64_t>& assignments, int64_t n_clusters);

// Row argmax of prototype logits, the assignment input to the entropy above.
std::vector<int64_t> argmax_rows(const Tensor& logits);

}  // namespace pretext
