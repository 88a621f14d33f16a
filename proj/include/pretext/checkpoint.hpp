#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pretext/params.hpp"
#include "pretext/tensor.hpp"

namespace pretext {

// Named-tensor container, used for model checkpoints and embedding caches.
//
// File layout (all integers little-endian, floats IEEE-754 little-endian):
//   bytes [0, 8)       uint64 length H of the JSON header
//   bytes [8, 8+H)     UTF-8 JSON:
//                        {"format_version": 1,
//                         "tensors": [{"name": ..., "shape": [...],
//                                      "dtype": "f32", "byte_offset": ...}, ...],
//                         "meta": {"key": "value", ...}}
//   bytes [8+H, end)   tensor payloads, raw float32, concatenated in array
//                      order; byte_offset is relative to the payload start
//
// Serialization is deterministic (fixed key order, sequential offsets), so
// save -> load -> save reproduces the original file byte for byte.

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::vector<CheckpointEntry> tensors;  // array order = payload order
  std::vector<std::pair<std::string, std::string>> meta;

  // Appends a tensor. Names must be unique, dims positive, values finite and
  // matching the shape's element count.
  void add(std::string name, Shape shape, std::vector<float> values);

  const CheckpointEntry* find(std::string_view name) const;

  // Sets key to value, overwriting in place if the key exists.
  void set_meta(std::string key, std::string value);
  const std::string* find_meta(std::string_view key) const;
};

// In-memory image of the container file.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);

// Parses a container image. Malformed input raises DataError naming the
// offending header field.
Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Copies the current values of every tensor in the set.
Checkpoint snapshot(const ParamSet& params);

// Copies values back into the set's tensors, matching by name. Every tensor
// in `params` must be present with an identical shape; extra checkpoint
// entries are ignored (a full training checkpoint can restore a sub-model).
void restore(const Checkpoint& ckpt, ParamSet& params);

// FNV-1a over the serialized image; equal digests for equal contents.
std::uint64_t checkpoint_digest(const Checkpoint& ckpt);

}  // namespace pretext
