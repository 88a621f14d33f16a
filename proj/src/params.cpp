#include "pretext/params.hpp"

namespace pretext {

void ema_update(ParamSet& teacher, const ParamSet& student, float momentum) {
  if (momentum < 0.0f || momentum > 1.0f) {
    raise<ValueError>("ema_update: momentum must lie in [0, 1], got ", momentum);
  }
  if (teacher.items.size() != student.items.size()) {
    raise<ValueError>("ema_update: set sizes differ (", teacher.items.size(), " vs ",
                      student.items.size(), ")");
  }
  for (size_t i = 0; i < teacher.items.size(); ++i) {
    Tensor& t = teacher.items[i];
    const Tensor& s = student.items[i];
    if (t.shape() != s.shape()) {
      raise<ValueError>("ema_update: shape mismatch at '", t.name(), "'");
    }
    float* td = t.data().data();
    const float* sd = s.data().data();
    const int64_t n = t.numel();
    for (int64_t j = 0; j < n; ++j) td[j] = momentum * td[j] + (1.0f - momentum) * sd[j];
  }
}

ParamSet clone_frozen(const ParamSet& src, const std::string& name_prefix) {
  ParamSet out;
  for (const Tensor& t : src.items) {
    out.add(make_tensor(t.shape(), t.data(), /*requires_grad=*/false, name_prefix + t.name()));
  }
  return out;
}

}  // namespace pretext
