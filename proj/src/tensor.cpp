#include "pretext/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cblas.h>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace pretext {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 0) raise<ShapeError>("negative dimension in shape ", shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "{";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "}";
}

namespace {

using NodePtr = std::shared_ptr<TensorNode>;

// Exponent-mask scan: all-ones exponent means Inf or NaN. Integer OR is
// reassociable so this vectorizes where a float reduction would not.
void check_finite(const char* op, const float* p, int64_t n) {
  constexpr uint32_t kExp = 0x7f800000u;
  uint32_t bad = 0;
  for (int64_t i = 0; i < n; ++i) {
    bad |= static_cast<uint32_t>((std::bit_cast<uint32_t>(p[i]) & kExp) == kExp);
  }
  if (!bad) return;
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) {
      raise<NumericError>(op, ": non-finite value at flat index ", i);
    }
  }
}

NodePtr new_node(Shape shape) {
  auto n = std::make_shared<TensorNode>();
  int64_t count = shape_numel(shape);
  n->shape = std::move(shape);
  n->data.assign(static_cast<size_t>(count), 0.0f);
  return n;
}

bool grad_needed(const Tensor& a) { return a.defined() && a.requires_grad(); }
bool grad_needed(const Tensor& a, const Tensor& b) {
  return grad_needed(a) || grad_needed(b);
}

void wire(const NodePtr& out, std::initializer_list<Tensor> parents,
          std::function<void(const TensorNode&)> bw) {
  out->requires_grad = true;
  for (const Tensor& p : parents) {
    if (p.defined()) out->parents.push_back(p.node());
  }
  out->backward_fn = std::move(bw);
}

void require_rank2(const char* op, const Tensor& a) {
  if (a.rank() != 2) raise<ShapeError>(op, ": expected rank-2 tensor, got ", shape_str(a.shape()));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    raise<ShapeError>(op, ": shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
  }
}

}  // namespace

// ---- construction ----

Tensor make_tensor(Shape shape, std::vector<float> data, bool requires_grad, std::string name) {
  int64_t count = shape_numel(shape);
  if (count != static_cast<int64_t>(data.size())) {
    raise<ShapeError>("make_tensor: shape ", shape_str(shape), " wants ", count,
                      " elements, got ", data.size());
  }
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  n->name = std::move(name);
  check_finite("make_tensor", n->data.data(), n->numel());
  return Tensor(n);
}

Tensor zeros(Shape shape, bool requires_grad, std::string name) {
  auto n = new_node(std::move(shape));
  n->requires_grad = requires_grad;
  n->name = std::move(name);
  return Tensor(n);
}

Tensor full(Shape shape, float value) {
  auto n = new_node(std::move(shape));
  std::fill(n->data.begin(), n->data.end(), value);
  check_finite("full", n->data.data(), n->numel());
  return Tensor(n);
}

Tensor scalar(float value) { return full({1}, value); }

Tensor eye(int64_t n) {
  auto node = new_node({n, n});
  for (int64_t i = 0; i < n; ++i) node->data[static_cast<size_t>(i * n + i)] = 1.0f;
  return Tensor(node);
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    raise<ShapeError>("matmul: inner dimensions differ, ", shape_str(a.shape()), " x ",
                      shape_str(b.shape()));
  }
  auto out = new_node({m, n});
  if (m > 0 && n > 0) {
    if (k > 0) {
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m),
                  static_cast<int>(n), static_cast<int>(k), 1.0f, a.data().data(),
                  static_cast<int>(k), b.data().data(), static_cast<int>(n), 0.0f,
                  out->data.data(), static_cast<int>(n));
    }
    check_finite("matmul", out->data.data(), out->numel());
  }
  if (grad_needed(a, b)) {
    auto an = a.node(), bn = b.node();
    wire(out, {a, b}, [an, bn, m, k, n](const TensorNode& self) {
      const float* g = self.grad.data();
      if (an->requires_grad && m > 0 && k > 0 && n > 0) {
        an->ensure_grad();
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(m),
                    static_cast<int>(k), static_cast<int>(n), 1.0f, g, static_cast<int>(n),
                    bn->data.data(), static_cast<int>(n), 1.0f, an->grad.data(),
                    static_cast<int>(k));
      }
      if (bn->requires_grad && m > 0 && k > 0 && n > 0) {
        bn->ensure_grad();
        cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(k),
                    static_cast<int>(n), static_cast<int>(m), 1.0f, an->data.data(),
                    static_cast<int>(k), g, static_cast<int>(n), 1.0f, bn->grad.data(),
                    static_cast<int>(n));
      }
    });
  }
  return Tensor(out);
}

// ---- elementwise binary ----

namespace {

enum class BinKind { add, sub, mul, div };

Tensor binary_op(BinKind kind, const char* opname, const Tensor& a, const Tensor& b) {
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!b_scalar) require_same_shape(opname, a, b);
  const int64_t n = a.numel();
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  const int64_t sb = b_scalar ? 0 : 1;
  auto out = new_node(a.shape());
  float* po = out->data.data();
  switch (kind) {
    case BinKind::add:
      for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i * sb];
      break;
    case BinKind::sub:
      for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i * sb];
      break;
    case BinKind::mul:
      for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i * sb];
      break;
    case BinKind::div:
      for (int64_t i = 0; i < n; ++i) {
        if (pb[i * sb] == 0.0f) raise<DomainError>("divide: zero divisor at flat index ", i * sb);
        po[i] = pa[i] / pb[i * sb];
      }
      break;
  }
  check_finite(opname, po, n);
  if (grad_needed(a, b)) {
    auto an = a.node(), bn = b.node();
    wire(out, {a, b}, [kind, an, bn, n, sb](const TensorNode& self) {
      const float* g = self.grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        float* da = an->grad.data();
        const float* pb2 = bn->data.data();
        switch (kind) {
          case BinKind::add:
          case BinKind::sub:
            for (int64_t i = 0; i < n; ++i) da[i] += g[i];
            break;
          case BinKind::mul:
            for (int64_t i = 0; i < n; ++i) da[i] += g[i] * pb2[i * sb];
            break;
          case BinKind::div:
            for (int64_t i = 0; i < n; ++i) da[i] += g[i] / pb2[i * sb];
            break;
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        float* db = bn->grad.data();
        const float* pa2 = an->data.data();
        const float* pb2 = bn->data.data();
        switch (kind) {
          case BinKind::add:
            for (int64_t i = 0; i < n; ++i) db[i * sb] += g[i];
            break;
          case BinKind::sub:
            for (int64_t i = 0; i < n; ++i) db[i * sb] -= g[i];
            break;
          case BinKind::mul:
            for (int64_t i = 0; i < n; ++i) db[i * sb] += g[i] * pa2[i];
            break;
          case BinKind::div:
            for (int64_t i = 0; i < n; ++i) {
              const float bv = pb2[i * sb];
              db[i * sb] -= g[i] * pa2[i] / (bv * bv);
            }
            break;
        }
      }
    });
  }
  return Tensor(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(BinKind::add, "add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(BinKind::sub, "sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(BinKind::mul, "mul", a, b); }
Tensor divide(const Tensor& a, const Tensor& b) { return binary_op(BinKind::div, "divide", a, b); }

// ---- elementwise unary ----

namespace {

// forward: fwd(x); backward contribution: bwd(x, y, g) added into da.
template <class Fwd, class Bwd>
Tensor unary_op(const char* opname, const Tensor& a, Fwd fwd, Bwd bwd) {
  const int64_t n = a.numel();
  auto out = new_node(a.shape());
  const float* pa = a.data().data();
  float* po = out->data.data();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], i);
  check_finite(opname, po, n);
  if (grad_needed(a)) {
    auto an = a.node();
    auto out_raw = out.get();
    wire(out, {a}, [an, n, bwd, opname](const TensorNode& self) {
      an->ensure_grad();
      float* da = an->grad.data();
      const float* x = an->data.data();
      const float* y = self.data.data();
      const float* g = self.grad.data();
      for (int64_t i = 0; i < n; ++i) {
        const float contrib = bwd(x[i], y[i], g[i]);
        if (!std::isfinite(contrib)) {
          raise<NumericError>(opname, " backward: non-finite gradient at flat index ", i);
        }
        da[i] += contrib;
      }
    });
    (void)out_raw;
  }
  return Tensor(out);
}

}  // namespace

Tensor vexp(const Tensor& a) {
  return unary_op(
      "exp", a, [](float x, int64_t) { return std::exp(x); },
      [](float, float y, float g) { return g * y; });
}

Tensor vlog(const Tensor& a) {
  return unary_op(
      "log", a,
      [](float x, int64_t i) {
        if (x <= 0.0f) raise<DomainError>("log: non-positive input at flat index ", i);
        return std::log(x);
      },
      [](float x, float, float g) { return g / x; });
}

Tensor vlog_eps(const Tensor& a, float eps) {
  if (eps <= 0.0f) raise<ValueError>("log_eps: eps must be positive");
  return unary_op(
      "log_eps", a,
      [eps](float x, int64_t i) {
        if (x < 0.0f) raise<DomainError>("log_eps: negative input at flat index ", i);
        return std::log(x + eps);
      },
      [eps](float x, float, float g) { return g / (x + eps); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      "relu", a, [](float x, int64_t) { return x > 0.0f ? x : 0.0f; },
      [](float x, float, float g) { return x > 0.0f ? g : 0.0f; });
}

Tensor vsqrt(const Tensor& a) {
  return unary_op(
      "sqrt", a,
      [](float x, int64_t i) {
        if (x < 0.0f) raise<DomainError>("sqrt: negative input at flat index ", i);
        return std::sqrt(x);
      },
      [](float, float y, float g) { return g / (2.0f * y); });
}

Tensor vsqrt_eps(const Tensor& a, float eps) {
  if (eps <= 0.0f) raise<ValueError>("sqrt_eps: eps must be positive");
  return unary_op(
      "sqrt_eps", a,
      [eps](float x, int64_t i) {
        if (x < 0.0f) raise<DomainError>("sqrt_eps: negative input at flat index ", i);
        return std::sqrt(x + eps);
      },
      [](float, float y, float g) { return g / (2.0f * y); });
}

Tensor vpow(const Tensor& a, float exponent) {
  const bool nonneg_int_exp =
      exponent >= 0.0f && exponent == std::floor(exponent);
  return unary_op(
      "power", a,
      [exponent, nonneg_int_exp](float x, int64_t i) {
        if (x < 0.0f && !nonneg_int_exp) {
          raise<DomainError>("power: negative base with non-integer exponent at flat index ", i);
        }
        return std::pow(x, exponent);
      },
      [exponent](float x, float, float g) {
        return g * exponent * std::pow(x, exponent - 1.0f);
      });
}

Tensor square(const Tensor& a) {
  return unary_op(
      "square", a, [](float x, int64_t) { return x * x; },
      [](float x, float, float g) { return 2.0f * g * x; });
}

Tensor scale(const Tensor& a, float k) {
  return unary_op(
      "scale", a, [k](float x, int64_t) { return k * x; },
      [k](float, float, float g) { return k * g; });
}

Tensor add_scalar(const Tensor& a, float k) {
  return unary_op(
      "add_scalar", a, [k](float x, int64_t) { return x + k; },
      [](float, float, float g) { return g; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0f); }

// ---- dispatchers ----

Tensor elementwise(EwKind kind, const Tensor& a, const Tensor& b) {
  const bool binary = kind == EwKind::add || kind == EwKind::sub || kind == EwKind::mul ||
                      kind == EwKind::div || kind == EwKind::power;
  if (binary && !b.defined()) raise<ValueError>("elementwise: binary kind needs b");
  if (!binary && b.defined()) raise<ValueError>("elementwise: unary kind takes no b");
  switch (kind) {
    case EwKind::add: return add(a, b);
    case EwKind::sub: return sub(a, b);
    case EwKind::mul: return mul(a, b);
    case EwKind::div: return divide(a, b);
    case EwKind::exp: return vexp(a);
    case EwKind::log: return vlog(a);
    case EwKind::relu: return relu(a);
    case EwKind::sqrt: return vsqrt(a);
    case EwKind::power:
      if (b.numel() != 1) raise<ShapeError>("elementwise power: exponent must be scalar");
      if (b.requires_grad()) raise<ValueError>("elementwise power: exponent is not differentiable");
      return vpow(a, b.item());
  }
  raise<ValueError>("elementwise: unknown kind");
}

// ---- reductions ----

namespace {

Tensor reduce_all(ReduceKind kind, const Tensor& a) {
  const int64_t n = a.numel();
  if (n == 0) raise<ShapeError>("reduce: empty tensor");
  auto out = new_node({1});
  const float* pa = a.data().data();
  int64_t arg = 0;
  switch (kind) {
    case ReduceKind::sum:
    case ReduceKind::mean: {
      // Pairwise-ish accumulation in double keeps long sums stable.
      double acc = 0.0;
      for (int64_t i = 0; i < n; ++i) acc += pa[i];
      out->data[0] = static_cast<float>(kind == ReduceKind::mean ? acc / n : acc);
      break;
    }
    case ReduceKind::max: {
      float best = pa[0];
      for (int64_t i = 1; i < n; ++i) {
        if (pa[i] > best) { best = pa[i]; arg = i; }
      }
      out->data[0] = best;
      break;
    }
  }
  check_finite("reduce", out->data.data(), 1);
  if (grad_needed(a)) {
    auto an = a.node();
    wire(out, {a}, [kind, an, n, arg](const TensorNode& self) {
      an->ensure_grad();
      float* da = an->grad.data();
      const float g = self.grad[0];
      switch (kind) {
        case ReduceKind::sum:
          for (int64_t i = 0; i < n; ++i) da[i] += g;
          break;
        case ReduceKind::mean: {
          const float inv = g / static_cast<float>(n);
          for (int64_t i = 0; i < n; ++i) da[i] += inv;
          break;
        }
        case ReduceKind::max:
          da[arg] += g;  // ties: first occurrence wins
          break;
      }
    });
  }
  return Tensor(out);
}

Tensor reduce_axis(ReduceKind kind, const Tensor& a, int axis) {
  require_rank2("reduce", a);
  if (axis != 0 && axis != 1) raise<ValueError>("reduce: axis must be 0 or 1");
  const int64_t r = a.rows(), c = a.cols();
  if (r == 0 || c == 0) raise<ShapeError>("reduce: empty tensor");
  const int64_t out_len = axis == 0 ? c : r;
  auto out = new_node(axis == 0 ? Shape{1, c} : Shape{r, 1});
  const float* pa = a.data().data();
  float* po = out->data.data();
  std::vector<int64_t> argmax;
  if (kind == ReduceKind::max) argmax.assign(static_cast<size_t>(out_len), 0);
  const int64_t extent = axis == 0 ? r : c;
  for (int64_t o = 0; o < out_len; ++o) {
    auto at = [&](int64_t e) { return axis == 0 ? pa[e * c + o] : pa[o * c + e]; };
    switch (kind) {
      case ReduceKind::sum:
      case ReduceKind::mean: {
        double acc = 0.0;
        for (int64_t e = 0; e < extent; ++e) acc += at(e);
        po[o] = static_cast<float>(kind == ReduceKind::mean ? acc / extent : acc);
        break;
      }
      case ReduceKind::max: {
        float best = at(0);
        int64_t arg = 0;
        for (int64_t e = 1; e < extent; ++e) {
          if (at(e) > best) { best = at(e); arg = e; }
        }
        po[o] = best;
        argmax[static_cast<size_t>(o)] = arg;
        break;
      }
    }
  }
  check_finite("reduce", po, out_len);
  if (grad_needed(a)) {
    auto an = a.node();
    wire(out, {a},
         [kind, an, axis, r, c, extent, out_len, argmax = std::move(argmax)](const TensorNode& self) {
           an->ensure_grad();
           float* da = an->grad.data();
           const float* g = self.grad.data();
           for (int64_t o = 0; o < out_len; ++o) {
             auto dat = [&](int64_t e) -> float& {
               return axis == 0 ? da[e * c + o] : da[o * c + e];
             };
             switch (kind) {
               case ReduceKind::sum:
                 for (int64_t e = 0; e < extent; ++e) dat(e) += g[o];
                 break;
               case ReduceKind::mean: {
                 const float inv = g[o] / static_cast<float>(extent);
                 for (int64_t e = 0; e < extent; ++e) dat(e) += inv;
                 break;
               }
               case ReduceKind::max:
                 dat(argmax[static_cast<size_t>(o)]) += g[o];
                 break;
             }
           }
           (void)r;
         });
  }
  return Tensor(out);
}

}  // namespace

Tensor reduce(ReduceKind kind, const Tensor& a, std::optional<int> axis) {
  return axis ? reduce_axis(kind, a, *axis) : reduce_all(kind, a);
}

Tensor reduce_sum(const Tensor& a) { return reduce_all(ReduceKind::sum, a); }
Tensor reduce_mean(const Tensor& a) { return reduce_all(ReduceKind::mean, a); }
Tensor reduce_max(const Tensor& a) { return reduce_all(ReduceKind::max, a); }
Tensor reduce_sum_axis(const Tensor& a, int axis) { return reduce_axis(ReduceKind::sum, a, axis); }
Tensor reduce_mean_axis(const Tensor& a, int axis) { return reduce_axis(ReduceKind::mean, a, axis); }

// ---- layout ops ----

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  const int64_t r = a.rows(), c = a.cols();
  auto out = new_node({c, r});
  const float* pa = a.data().data();
  float* po = out->data.data();
  for (int64_t i = 0; i < r; ++i) {
    for (int64_t j = 0; j < c; ++j) po[j * r + i] = pa[i * c + j];
  }
  if (grad_needed(a)) {
    auto an = a.node();
    wire(out, {a}, [an, r, c](const TensorNode& self) {
      an->ensure_grad();
      float* da = an->grad.data();
      const float* g = self.grad.data();
      for (int64_t i = 0; i < r; ++i) {
        for (int64_t j = 0; j < c; ++j) da[i * c + j] += g[j * r + i];
      }
    });
  }
  return Tensor(out);
}

Tensor reshape(const Tensor& a, Shape shape) {
  const int64_t want = shape_numel(shape);
  if (want != a.numel()) {
    raise<ShapeError>("reshape: cannot view ", shape_str(a.shape()), " as ", shape_str(shape));
  }
  auto out = std::make_shared<TensorNode>();
  out->shape = std::move(shape);
  out->data = a.data();  // copy; tensors stay contiguous and independent
  if (grad_needed(a)) {
    auto an = a.node();
    const int64_t n = a.numel();
    wire(out, {a}, [an, n](const TensorNode& self) {
      an->ensure_grad();
      float* da = an->grad.data();
      const float* g = self.grad.data();
      for (int64_t i = 0; i < n; ++i) da[i] += g[i];
    });
  }
  return Tensor(out);
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_rank2("concat_rows", a);
  require_rank2("concat_rows", b);
  if (a.cols() != b.cols()) {
    raise<ShapeError>("concat_rows: column mismatch ", shape_str(a.shape()), " vs ",
                      shape_str(b.shape()));
  }
  const int64_t ra = a.rows(), rb = b.rows(), c = a.cols();
  auto out = new_node({ra + rb, c});
  std::memcpy(out->data.data(), a.data().data(), static_cast<size_t>(ra * c) * sizeof(float));
  std::memcpy(out->data.data() + ra * c, b.data().data(),
              static_cast<size_t>(rb * c) * sizeof(float));
  if (grad_needed(a, b)) {
    auto an = a.node(), bn = b.node();
    wire(out, {a, b}, [an, bn, ra, rb, c](const TensorNode& self) {
      const float* g = self.grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        float* da = an->grad.data();
        for (int64_t i = 0; i < ra * c; ++i) da[i] += g[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        float* db = bn->grad.data();
        const float* gb = g + ra * c;
        for (int64_t i = 0; i < rb * c; ++i) db[i] += gb[i];
      }
    });
  }
  return Tensor(out);
}

Tensor select_entries(const Tensor& a, const std::vector<int64_t>& rows,
                      const std::vector<int64_t>& cols) {
  require_rank2("select_entries", a);
  if (rows.size() != cols.size()) {
    raise<ShapeError>("select_entries: rows and cols lengths differ");
  }
  const int64_t r = a.rows(), c = a.cols();
  const int64_t n = static_cast<int64_t>(rows.size());
  auto out = new_node({n, 1});
  const float* pa = a.data().data();
  for (int64_t i = 0; i < n; ++i) {
    if (rows[i] < 0 || rows[i] >= r || cols[i] < 0 || cols[i] >= c) {
      raise<ValueError>("select_entries: index (", rows[i], ", ", cols[i],
                        ") out of bounds for ", shape_str(a.shape()));
    }
    out->data[static_cast<size_t>(i)] = pa[rows[i] * c + cols[i]];
  }
  if (grad_needed(a)) {
    auto an = a.node();
    wire(out, {a}, [an, rows, cols, c, n](const TensorNode& self) {
      an->ensure_grad();
      float* da = an->grad.data();
      const float* g = self.grad.data();
      for (int64_t i = 0; i < n; ++i) da[rows[i] * c + cols[i]] += g[i];
    });
  }
  return Tensor(out);
}

// ---- row-structured ops ----

Tensor softmax_rows(const Tensor& a) {
  require_rank2("softmax_rows", a);
  const int64_t r = a.rows(), c = a.cols();
  if (c == 0) raise<ShapeError>("softmax_rows: zero columns");
  auto out = new_node({r, c});
  const float* pa = a.data().data();
  float* po = out->data.data();
  for (int64_t i = 0; i < r; ++i) {
    const float* x = pa + i * c;
    float* y = po + i * c;
    float m = x[0];
    for (int64_t j = 1; j < c; ++j) m = std::max(m, x[j]);
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - m);
      s += y[j];
    }
    const float inv = static_cast<float>(1.0 / s);
    for (int64_t j = 0; j < c; ++j) y[j] *= inv;
  }
  check_finite("softmax_rows", po, r * c);
  if (grad_needed(a)) {
    auto an = a.node();
    wire(out, {a}, [an, r, c](const TensorNode& self) {
      an->ensure_grad();
      float* da = an->grad.data();
      const float* y = self.data.data();
      const float* g = self.grad.data();
      for (int64_t i = 0; i < r; ++i) {
        const float* yi = y + i * c;
        const float* gi = g + i * c;
        float* di = da + i * c;
        double dot = 0.0;
        for (int64_t j = 0; j < c; ++j) dot += static_cast<double>(gi[j]) * yi[j];
        const float d = static_cast<float>(dot);
        for (int64_t j = 0; j < c; ++j) di[j] += yi[j] * (gi[j] - d);
      }
    });
  }
  return Tensor(out);
}

Tensor log_softmax_rows(const Tensor& a) {
  require_rank2("log_softmax_rows", a);
  const int64_t r = a.rows(), c = a.cols();
  if (c == 0) raise<ShapeError>("log_softmax_rows: zero columns");
  auto out = new_node({r, c});
  const float* pa = a.data().data();
  float* po = out->data.data();
  for (int64_t i = 0; i < r; ++i) {
    const float* x = pa + i * c;
    float* y = po + i * c;
    float m = x[0];
    for (int64_t j = 1; j < c; ++j) m = std::max(m, x[j]);
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) s += std::exp(static_cast<double>(x[j]) - m);
    const float lse = m + static_cast<float>(std::log(s));
    for (int64_t j = 0; j < c; ++j) y[j] = x[j] - lse;
  }
  check_finite("log_softmax_rows", po, r * c);
  if (grad_needed(a)) {
    auto an = a.node();
    wire(out, {a}, [an, r, c](const TensorNode& self) {
      an->ensure_grad();
      float* da = an->grad.data();
      const float* y = self.data.data();
      const float* g = self.grad.data();
      for (int64_t i = 0; i < r; ++i) {
        const float* yi = y + i * c;
        const float* gi = g + i * c;
        float* di = da + i * c;
        double gsum = 0.0;
        for (int64_t j = 0; j < c; ++j) gsum += gi[j];
        const float gs = static_cast<float>(gsum);
        for (int64_t j = 0; j < c; ++j) di[j] += gi[j] - std::exp(yi[j]) * gs;
      }
    });
  }
  return Tensor(out);
}

Tensor logsumexp_rows(const Tensor& a) {
  require_rank2("logsumexp_rows", a);
  const int64_t r = a.rows(), c = a.cols();
  if (c == 0) raise<ShapeError>("logsumexp_rows: zero columns");
  auto out = new_node({r, 1});
  const float* pa = a.data().data();
  for (int64_t i = 0; i < r; ++i) {
    const float* x = pa + i * c;
    float m = x[0];
    for (int64_t j = 1; j < c; ++j) m = std::max(m, x[j]);
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) s += std::exp(static_cast<double>(x[j]) - m);
    out->data[static_cast<size_t>(i)] = m + static_cast<float>(std::log(s));
  }
  check_finite("logsumexp_rows", out->data.data(), r);
  if (grad_needed(a)) {
    auto an = a.node();
    wire(out, {a}, [an, r, c](const TensorNode& self) {
      an->ensure_grad();
      float* da = an->grad.data();
      const float* x = an->data.data();
      const float* lse = self.data.data();
      const float* g = self.grad.data();
      for (int64_t i = 0; i < r; ++i) {
        const float* xi = x + i * c;
        float* di = da + i * c;
        for (int64_t j = 0; j < c; ++j) di[j] += g[i] * std::exp(xi[j] - lse[i]);
      }
    });
  }
  return Tensor(out);
}

Tensor normalize_rows(const Tensor& a) {
  require_rank2("normalize_rows", a);
  const int64_t r = a.rows(), c = a.cols();
  auto out = new_node({r, c});
  const float* pa = a.data().data();
  float* po = out->data.data();
  std::vector<float> norms(static_cast<size_t>(r));
  for (int64_t i = 0; i < r; ++i) {
    const float* x = pa + i * c;
    double ss = 0.0;
    for (int64_t j = 0; j < c; ++j) ss += static_cast<double>(x[j]) * x[j];
    const float n = static_cast<float>(std::sqrt(ss));
    if (n == 0.0f) raise<DomainError>("normalize_rows: zero-norm row ", i);
    norms[static_cast<size_t>(i)] = n;
    const float inv = 1.0f / n;
    for (int64_t j = 0; j < c; ++j) po[i * c + j] = x[j] * inv;
  }
  check_finite("normalize_rows", po, r * c);
  if (grad_needed(a)) {
    auto an = a.node();
    wire(out, {a}, [an, r, c, norms = std::move(norms)](const TensorNode& self) {
      an->ensure_grad();
      float* da = an->grad.data();
      const float* y = self.data.data();
      const float* g = self.grad.data();
      for (int64_t i = 0; i < r; ++i) {
        const float* yi = y + i * c;
        const float* gi = g + i * c;
        float* di = da + i * c;
        double dot = 0.0;
        for (int64_t j = 0; j < c; ++j) dot += static_cast<double>(gi[j]) * yi[j];
        const float d = static_cast<float>(dot);
        const float inv = 1.0f / norms[static_cast<size_t>(i)];
        for (int64_t j = 0; j < c; ++j) di[j] += (gi[j] - yi[j] * d) * inv;
      }
    });
  }
  return Tensor(out);
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  require_same_shape("bce_with_logits", logits, targets);
  const int64_t n = logits.numel();
  if (n == 0) raise<ShapeError>("bce_with_logits: empty input");
  const float* x = logits.data().data();
  const float* t = targets.data().data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (t[i] < 0.0f || t[i] > 1.0f) {
      raise<ValueError>("bce_with_logits: target outside [0, 1] at flat index ", i);
    }
    // max(x, 0) - x*t + log1p(exp(-|x|)): stable for large |x|.
    acc += std::max(x[i], 0.0f) - static_cast<double>(x[i]) * t[i] +
           std::log1p(std::exp(-std::abs(x[i])));
  }
  auto out = new_node({1});
  out->data[0] = static_cast<float>(acc / n);
  check_finite("bce_with_logits", out->data.data(), 1);
  if (grad_needed(logits, targets)) {
    auto xn = logits.node(), tn = targets.node();
    wire(out, {logits, targets}, [xn, tn, n](const TensorNode& self) {
      const float g = self.grad[0] / static_cast<float>(n);
      const float* x2 = xn->data.data();
      const float* t2 = tn->data.data();
      if (xn->requires_grad) {
        xn->ensure_grad();
        float* dx = xn->grad.data();
        for (int64_t i = 0; i < n; ++i) {
          const float sig = 1.0f / (1.0f + std::exp(-x2[i]));
          dx[i] += g * (sig - t2[i]);
        }
      }
      if (tn->requires_grad) {
        tn->ensure_grad();
        float* dt = tn->grad.data();
        for (int64_t i = 0; i < n; ++i) dt[i] += g * (-x2[i]);
      }
    });
  }
  return Tensor(out);
}

Tensor attn_pool(const Tensor& frames, const Tensor& weights) {
  require_rank2("attn_pool", frames);
  require_rank2("attn_pool", weights);
  const int64_t b = weights.rows(), t = weights.cols(), h = frames.cols();
  if (frames.rows() != b * t) {
    raise<ShapeError>("attn_pool: frames rows ", frames.rows(), " != B*T = ", b * t);
  }
  auto out = new_node({b, h});
  const float* f = frames.data().data();
  const float* w = weights.data().data();
  float* po = out->data.data();
  for (int64_t i = 0; i < b; ++i) {
    float* oi = po + i * h;
    for (int64_t j = 0; j < t; ++j) {
      const float wij = w[i * t + j];
      const float* fr = f + (i * t + j) * h;
      for (int64_t k = 0; k < h; ++k) oi[k] += wij * fr[k];
    }
  }
  check_finite("attn_pool", po, b * h);
  if (grad_needed(frames, weights)) {
    auto fn = frames.node(), wn = weights.node();
    wire(out, {frames, weights}, [fn, wn, b, t, h](const TensorNode& self) {
      const float* g = self.grad.data();
      const float* f2 = fn->data.data();
      const float* w2 = wn->data.data();
      if (fn->requires_grad) {
        fn->ensure_grad();
        float* df = fn->grad.data();
        for (int64_t i = 0; i < b; ++i) {
          const float* gi = g + i * h;
          for (int64_t j = 0; j < t; ++j) {
            const float wij = w2[i * t + j];
            float* dfr = df + (i * t + j) * h;
            for (int64_t k = 0; k < h; ++k) dfr[k] += wij * gi[k];
          }
        }
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        float* dw = wn->grad.data();
        for (int64_t i = 0; i < b; ++i) {
          const float* gi = g + i * h;
          for (int64_t j = 0; j < t; ++j) {
            const float* fr = f2 + (i * t + j) * h;
            double dot = 0.0;
            for (int64_t k = 0; k < h; ++k) dot += static_cast<double>(gi[k]) * fr[k];
            dw[i * t + j] += static_cast<float>(dot);
          }
        }
      }
    });
  }
  return Tensor(out);
}

// ---- row-vector broadcasts ----

namespace {

enum class RvKind { add, sub, mul, div };

Tensor rowvec_op(RvKind kind, const char* opname, const Tensor& a, const Tensor& v) {
  require_rank2(opname, a);
  if (!(v.rank() == 2 && v.rows() == 1 && v.cols() == a.cols())) {
    raise<ShapeError>(opname, ": expected v shape {1, ", a.cols(), "}, got ",
                      shape_str(v.shape()));
  }
  const int64_t r = a.rows(), c = a.cols();
  auto out = new_node({r, c});
  const float* pa = a.data().data();
  const float* pv = v.data().data();
  float* po = out->data.data();
  if (kind == RvKind::div) {
    for (int64_t j = 0; j < c; ++j) {
      if (pv[j] == 0.0f) raise<DomainError>(opname, ": zero divisor at column ", j);
    }
  }
  for (int64_t i = 0; i < r; ++i) {
    const float* x = pa + i * c;
    float* y = po + i * c;
    switch (kind) {
      case RvKind::add: for (int64_t j = 0; j < c; ++j) y[j] = x[j] + pv[j]; break;
      case RvKind::sub: for (int64_t j = 0; j < c; ++j) y[j] = x[j] - pv[j]; break;
      case RvKind::mul: for (int64_t j = 0; j < c; ++j) y[j] = x[j] * pv[j]; break;
      case RvKind::div: for (int64_t j = 0; j < c; ++j) y[j] = x[j] / pv[j]; break;
    }
  }
  check_finite(opname, po, r * c);
  if (grad_needed(a, v)) {
    auto an = a.node(), vn = v.node();
    wire(out, {a, v}, [kind, an, vn, r, c](const TensorNode& self) {
      const float* g = self.grad.data();
      const float* pa2 = an->data.data();
      const float* pv2 = vn->data.data();
      if (an->requires_grad) {
        an->ensure_grad();
        float* da = an->grad.data();
        for (int64_t i = 0; i < r; ++i) {
          const float* gi = g + i * c;
          float* di = da + i * c;
          switch (kind) {
            case RvKind::add:
            case RvKind::sub:
              for (int64_t j = 0; j < c; ++j) di[j] += gi[j];
              break;
            case RvKind::mul:
              for (int64_t j = 0; j < c; ++j) di[j] += gi[j] * pv2[j];
              break;
            case RvKind::div:
              for (int64_t j = 0; j < c; ++j) di[j] += gi[j] / pv2[j];
              break;
          }
        }
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        float* dv = vn->grad.data();
        for (int64_t j = 0; j < c; ++j) {
          double acc = 0.0;
          for (int64_t i = 0; i < r; ++i) {
            const float gij = g[i * c + j];
            switch (kind) {
              case RvKind::add: acc += gij; break;
              case RvKind::sub: acc -= gij; break;
              case RvKind::mul: acc += static_cast<double>(gij) * pa2[i * c + j]; break;
              case RvKind::div:
                acc -= static_cast<double>(gij) * pa2[i * c + j] / (static_cast<double>(pv2[j]) * pv2[j]);
                break;
            }
          }
          dv[j] += static_cast<float>(acc);
        }
      }
    });
  }
  return Tensor(out);
}

}  // namespace

Tensor add_rowvec(const Tensor& a, const Tensor& v) { return rowvec_op(RvKind::add, "add_rowvec", a, v); }
Tensor sub_rowvec(const Tensor& a, const Tensor& v) { return rowvec_op(RvKind::sub, "sub_rowvec", a, v); }
Tensor mul_rowvec(const Tensor& a, const Tensor& v) { return rowvec_op(RvKind::mul, "mul_rowvec", a, v); }
Tensor div_rowvec(const Tensor& a, const Tensor& v) { return rowvec_op(RvKind::div, "div_rowvec", a, v); }

// ---- batch normalization ----

namespace {
constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.1f;
}  // namespace

BatchNormParams make_batch_norm(int64_t channels, const std::string& name_prefix) {
  BatchNormParams p;
  p.gamma = make_tensor({1, channels}, std::vector<float>(static_cast<size_t>(channels), 1.0f),
                        true, name_prefix + ".gamma");
  p.beta = zeros({1, channels}, true, name_prefix + ".beta");
  p.running_mean = zeros({1, channels}, false, name_prefix + ".running_mean");
  p.running_var =
      make_tensor({1, channels}, std::vector<float>(static_cast<size_t>(channels), 1.0f), false,
                  name_prefix + ".running_var");
  return p;
}

Tensor batch_norm(const Tensor& x, BatchNormParams& params, bool training, bool update_running) {
  require_rank2("batch_norm", x);
  const int64_t r = x.rows(), c = x.cols();
  if (params.gamma.cols() != c) {
    raise<ShapeError>("batch_norm: gamma has ", params.gamma.cols(), " channels, input has ", c);
  }
  auto out = new_node({r, c});
  const float* px = x.data().data();
  const float* gamma = params.gamma.data().data();
  const float* beta = params.beta.data().data();
  float* po = out->data.data();

  if (training) {
    if (r < 2) raise<ValueError>("batch_norm: training mode needs at least 2 rows, got ", r);
    std::vector<float> xhat(static_cast<size_t>(r * c));
    std::vector<float> inv_std(static_cast<size_t>(c));
    std::vector<float> mean(static_cast<size_t>(c)), var(static_cast<size_t>(c));
    for (int64_t j = 0; j < c; ++j) {
      double m = 0.0;
      for (int64_t i = 0; i < r; ++i) m += px[i * c + j];
      m /= r;
      double v = 0.0;
      for (int64_t i = 0; i < r; ++i) {
        const double d = px[i * c + j] - m;
        v += d * d;
      }
      v /= r;  // population variance
      mean[static_cast<size_t>(j)] = static_cast<float>(m);
      var[static_cast<size_t>(j)] = static_cast<float>(v);
      inv_std[static_cast<size_t>(j)] = static_cast<float>(1.0 / std::sqrt(v + kBnEps));
    }
    for (int64_t i = 0; i < r; ++i) {
      for (int64_t j = 0; j < c; ++j) {
        const float xh = (px[i * c + j] - mean[static_cast<size_t>(j)]) * inv_std[static_cast<size_t>(j)];
        xhat[static_cast<size_t>(i * c + j)] = xh;
        po[i * c + j] = gamma[j] * xh + beta[j];
      }
    }
    if (update_running) {
      float* rm = params.running_mean.data().data();
      float* rv = params.running_var.data().data();
      for (int64_t j = 0; j < c; ++j) {
        rm[j] = (1.0f - kBnMomentum) * rm[j] + kBnMomentum * mean[static_cast<size_t>(j)];
        rv[j] = (1.0f - kBnMomentum) * rv[j] + kBnMomentum * var[static_cast<size_t>(j)];
      }
    }
    check_finite("batch_norm", po, r * c);
    if (grad_needed(x) || params.gamma.requires_grad() || params.beta.requires_grad()) {
      auto xn = x.node(), gn = params.gamma.node(), bn = params.beta.node();
      wire(out, {x, params.gamma, params.beta},
           [xn, gn, bn, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](
               const TensorNode& self) {
             const float* g = self.grad.data();
             const float* gam = gn->data.data();
             if (gn->requires_grad) {
               gn->ensure_grad();
               float* dg = gn->grad.data();
               for (int64_t j = 0; j < c; ++j) {
                 double acc = 0.0;
                 for (int64_t i = 0; i < r; ++i) {
                   acc += static_cast<double>(g[i * c + j]) * xhat[static_cast<size_t>(i * c + j)];
                 }
                 dg[j] += static_cast<float>(acc);
               }
             }
             if (bn->requires_grad) {
               bn->ensure_grad();
               float* db = bn->grad.data();
               for (int64_t j = 0; j < c; ++j) {
                 double acc = 0.0;
                 for (int64_t i = 0; i < r; ++i) acc += g[i * c + j];
                 db[j] += static_cast<float>(acc);
               }
             }
             if (xn->requires_grad) {
               xn->ensure_grad();
               float* dx = xn->grad.data();
               for (int64_t j = 0; j < c; ++j) {
                 double gsum = 0.0, gxsum = 0.0;
                 for (int64_t i = 0; i < r; ++i) {
                   const double gij = g[i * c + j];
                   gsum += gij;
                   gxsum += gij * xhat[static_cast<size_t>(i * c + j)];
                 }
                 const float gmean = static_cast<float>(gsum / r);
                 const float gxmean = static_cast<float>(gxsum / r);
                 const float k = gam[j] * inv_std[static_cast<size_t>(j)];
                 for (int64_t i = 0; i < r; ++i) {
                   dx[i * c + j] += k * (g[i * c + j] - gmean -
                                         xhat[static_cast<size_t>(i * c + j)] * gxmean);
                 }
               }
             }
           });
    }
    return Tensor(out);
  }

  // eval mode: normalize with the running statistics
  (void)update_running;
  const float* rm = params.running_mean.data().data();
  const float* rv = params.running_var.data().data();
  std::vector<float> inv_std(static_cast<size_t>(c));
  for (int64_t j = 0; j < c; ++j) {
    if (rv[j] < 0.0f) raise<DomainError>("batch_norm: negative running variance at channel ", j);
    inv_std[static_cast<size_t>(j)] = 1.0f / std::sqrt(rv[j] + kBnEps);
  }
  for (int64_t i = 0; i < r; ++i) {
    for (int64_t j = 0; j < c; ++j) {
      po[i * c + j] = gamma[j] * (px[i * c + j] - rm[j]) * inv_std[static_cast<size_t>(j)] + beta[j];
    }
  }
  check_finite("batch_norm", po, r * c);
  if (grad_needed(x) || params.gamma.requires_grad() || params.beta.requires_grad()) {
    auto xn = x.node(), gn = params.gamma.node(), bn = params.beta.node();
    auto rmn = params.running_mean.node();
    wire(out, {x, params.gamma, params.beta},
         [xn, gn, bn, rmn, r, c, inv_std = std::move(inv_std)](const TensorNode& self) {
           const float* g = self.grad.data();
           const float* gam = gn->data.data();
           const float* px2 = xn->data.data();
           const float* rm2 = rmn->data.data();
           if (gn->requires_grad) {
             gn->ensure_grad();
             float* dg = gn->grad.data();
             for (int64_t j = 0; j < c; ++j) {
               double acc = 0.0;
               for (int64_t i = 0; i < r; ++i) {
                 acc += static_cast<double>(g[i * c + j]) * (px2[i * c + j] - rm2[j]) *
                        inv_std[static_cast<size_t>(j)];
               }
               dg[j] += static_cast<float>(acc);
             }
           }
           if (bn->requires_grad) {
             bn->ensure_grad();
             float* db = bn->grad.data();
             for (int64_t j = 0; j < c; ++j) {
               double acc = 0.0;
               for (int64_t i = 0; i < r; ++i) acc += g[i * c + j];
               db[j] += static_cast<float>(acc);
             }
           }
           if (xn->requires_grad) {
             xn->ensure_grad();
             float* dx = xn->grad.data();
             for (int64_t i = 0; i < r; ++i) {
               for (int64_t j = 0; j < c; ++j) {
                 dx[i * c + j] += g[i * c + j] * gam[j] * inv_std[static_cast<size_t>(j)];
               }
             }
           }
         });
  }
  return Tensor(out);
}

// ---- autodiff driver ----

void backward(const Tensor& loss) {
  if (!loss.defined()) raise<ValueError>("backward: undefined tensor");
  if (loss.numel() != 1) {
    raise<ShapeError>("backward: loss must be scalar, got ", shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    raise<ValueError>("backward: loss does not depend on any tensor requiring grad");
  }

  // Iterative post-order DFS; reversed post-order processes each node before
  // its parents.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

void zero_grad(const std::vector<Tensor>& params) {
  for (const Tensor& p : params) {
    if (!p.defined()) continue;
    auto& g = p.node()->grad;
    std::fill(g.begin(), g.end(), 0.0f);
  }
}

}  // namespace pretext
