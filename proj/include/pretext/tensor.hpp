#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pretext/error.hpp"

namespace pretext {

// Dense float32 tensors with reverse-mode autodiff. Every op is eager: it
// computes its output immediately and, when any input requires gradients,
// records a backward closure plus the parent links needed to run it. Calling
// backward() on a scalar loss walks the recorded graph once in reverse
// topological order and accumulates into each node's grad buffer (additively;
// the caller zeroes gradients explicitly between steps). When no input
// requires gradients an op records nothing, so pure inference builds no graph.
//
// Invariant enforced by every op: outputs are finite. A NaN or Inf raises
// NumericError at the op that produced it instead of propagating.

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Receives the node itself; closures capture parents only, never the node,
  // so ownership stays acyclic.
  std::function<void(const TensorNode&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t rows() const { return node_->shape.at(0); }
  int64_t cols() const { return node_->shape.at(1); }
  int64_t numel() const { return node_->numel(); }

  std::vector<float>& data() { return node_->data; }
  const std::vector<float>& data() const { return node_->data; }
  // Gradient accumulated by backward(); empty vector means "all zero".
  const std::vector<float>& grad() const { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }

  float item() const {
    if (numel() != 1) raise<ShapeError>("item: tensor has ", numel(), " elements");
    return node_->data[0];
  }

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// ---- construction ----

Tensor make_tensor(Shape shape, std::vector<float> data, bool requires_grad = false,
                   std::string name = {});
Tensor zeros(Shape shape, bool requires_grad = false, std::string name = {});
Tensor full(Shape shape, float value);
Tensor scalar(float value);
Tensor eye(int64_t n);

// ---- op kinds for the generic dispatchers ----

enum class EwKind { add, sub, mul, div, exp, log, relu, sqrt, power };
enum class ReduceKind { sum, mean, max };

// Generic entry points. Binary kinds accept equal shapes or a scalar-shaped
// b; unary kinds reject a defined b except `power`, whose b is the scalar
// exponent. reduce() with no axis collapses everything to shape {1}; axis 0
// gives {1, C}, axis 1 gives {R, 1}.
Tensor elementwise(EwKind kind, const Tensor& a, const Tensor& b = {});
Tensor reduce(ReduceKind kind, const Tensor& a, std::optional<int> axis = {});

// ---- named ops ----

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float k);
Tensor add_scalar(const Tensor& a, float k);
Tensor neg(const Tensor& a);

Tensor vexp(const Tensor& a);
Tensor vlog(const Tensor& a);                   // x > 0 required
Tensor vlog_eps(const Tensor& a, float eps);    // log(x + eps), x >= 0 required
Tensor relu(const Tensor& a);
Tensor vsqrt(const Tensor& a);                  // x >= 0 required
Tensor vsqrt_eps(const Tensor& a, float eps);   // sqrt(x + eps), x >= 0 required
Tensor vpow(const Tensor& a, float exponent);   // x >= 0 unless exponent is a non-negative integer

Tensor square(const Tensor& a);  // x*x with the cheap backward

Tensor reduce_sum(const Tensor& a);
Tensor reduce_mean(const Tensor& a);
Tensor reduce_max(const Tensor& a);
Tensor reduce_sum_axis(const Tensor& a, int axis);
Tensor reduce_mean_axis(const Tensor& a, int axis);

Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(const Tensor& a, const Tensor& b);
// out[i] = a[rows[i], cols[i]], shape {N, 1}; backward scatter-adds.
Tensor select_entries(const Tensor& a, const std::vector<int64_t>& rows,
                      const std::vector<int64_t>& cols);

Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor logsumexp_rows(const Tensor& a);  // {R, 1}
Tensor normalize_rows(const Tensor& a);  // L2; a zero-norm row is a DomainError

// mean over all entries of max(x,0) - x*t + log1p(exp(-|x|)); targets in [0,1].
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

// frames {B*T, H} pooled by weights {B, T}: out[b] = sum_t w[b,t] * frames[b*T+t].
Tensor attn_pool(const Tensor& frames, const Tensor& weights);

// Row-vector broadcasts: a is {R, C}, v is {1, C}.
Tensor add_rowvec(const Tensor& a, const Tensor& v);
Tensor sub_rowvec(const Tensor& a, const Tensor& v);
Tensor mul_rowvec(const Tensor& a, const Tensor& v);
Tensor div_rowvec(const Tensor& a, const Tensor& v);  // v entries must be nonzero

// ---- batch normalization ----

struct BatchNormParams {
  Tensor gamma, beta;                  // trainable
  Tensor running_mean, running_var;    // updated in training forward, read in eval
};

BatchNormParams make_batch_norm(int64_t channels, const std::string& name_prefix);

// Training mode normalizes with batch statistics (population variance,
// eps 1e-5) and, when update_running is set, folds them into the running
// buffers with momentum 0.1. Eval mode normalizes with the running buffers.
// Training requires at least two rows.
Tensor batch_norm(const Tensor& x, BatchNormParams& params, bool training,
                  bool update_running = true);

// ---- autodiff driver ----

void backward(const Tensor& loss);                 // loss must be scalar
void zero_grad(const std::vector<Tensor>& params); // keeps buffers, fills 0

}  // namespace pretext
