#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pretext/error.hpp"
#include "pretext/tensor.hpp"

namespace pretext {

// Ordered, name-addressed collection of model tensors. Trainable weights
// require grad; running statistics and other buffers do not but still travel
// with the set (so checkpoints and EMA copies see them).
struct ParamSet {
  std::vector<Tensor> items;

  void add(const Tensor& t) {
    if (!t.defined() || t.name().empty()) raise<ValueError>("param set: tensors must be named");
    for (const Tensor& e : items) {
      if (e.name() == t.name()) raise<ValueError>("param set: duplicate name '", t.name(), "'");
    }
    items.push_back(t);
  }

  void add_all(const ParamSet& other) {
    for (const Tensor& t : other.items) add(t);
  }

  const Tensor& find(const std::string& name) const {
    for (const Tensor& t : items) {
      if (t.name() == name) return t;
    }
    raise<ValueError>("param set: no tensor named '", name, "'");
  }

  std::vector<Tensor> trainable() const {
    std::vector<Tensor> out;
    for (const Tensor& t : items) {
      if (t.requires_grad()) out.push_back(t);
    }
    return out;
  }

  int64_t total_params() const {
    int64_t n = 0;
    for (const Tensor& t : items) {
      if (t.requires_grad()) n += t.numel();
    }
    return n;
  }
};

// teacher <- momentum * teacher + (1 - momentum) * student, elementwise over
// two structurally identical sets (same order, names may differ by prefix).
// Pure data update; no graph is recorded.
void ema_update(ParamSet& teacher, const ParamSet& student, float momentum);

// Deep-copies a set under a new name prefix, with requires_grad dropped
// (teacher networks are never trained directly).
ParamSet clone_frozen(const ParamSet& src, const std::string& name_prefix);

}  // namespace pretext
