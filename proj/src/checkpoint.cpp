#include "pretext/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "pretext/error.hpp"

namespace pretext {
namespace {

using ordered_json = nlohmann::ordered_json;

// The payload is raw IEEE-754 bytes; written and read via memcpy, which is
// only correct on a little-endian host.
static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

constexpr int kFormatVersion = 1;

std::uint64_t fnv1a64(const std::uint8_t* data, size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

void append_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t read_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

[[noreturn]] void bad_field(size_t tensor_index, const char* field, const std::string& why) {
  raise<DataError>("checkpoint header: tensor ", tensor_index, " field '", field, "' ", why);
}

}  // namespace

void Checkpoint::add(std::string name, Shape shape, std::vector<float> values) {
  if (name.empty()) raise<ValueError>("checkpoint: tensor name must be non-empty");
  if (find(name) != nullptr) raise<ValueError>("checkpoint: duplicate tensor name '", name, "'");
  if (shape.empty()) raise<ValueError>("checkpoint: tensor '", name, "' has empty shape");
  for (int64_t d : shape) {
    if (d < 1) raise<ValueError>("checkpoint: tensor '", name, "' has non-positive dim ", d);
  }
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    raise<ValueError>("checkpoint: tensor '", name, "' shape ", shape_str(shape), " expects ",
                      shape_numel(shape), " values, got ", values.size());
  }
  for (float v : values) {
    if (!std::isfinite(v)) raise<ValueError>("checkpoint: tensor '", name, "' has non-finite value");
  }
  tensors.push_back({std::move(name), std::move(shape), std::move(values)});
}

const CheckpointEntry* Checkpoint::find(std::string_view name) const {
  for (const CheckpointEntry& e : tensors) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void Checkpoint::set_meta(std::string key, std::string value) {
  for (auto& kv : meta) {
    if (kv.first == key) {
      kv.second = std::move(value);
      return;
    }
  }
  meta.emplace_back(std::move(key), std::move(value));
}

const std::string* Checkpoint::find_meta(std::string_view key) const {
  for (const auto& kv : meta) {
    if (kv.first == key) return &kv.second;
  }
  return nullptr;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  ordered_json header;
  header["format_version"] = kFormatVersion;
  header["tensors"] = ordered_json::array();
  std::uint64_t offset = 0;
  for (const CheckpointEntry& e : ckpt.tensors) {
    ordered_json t;
    t["name"] = e.name;
    t["shape"] = e.shape;
    t["dtype"] = "f32";
    t["byte_offset"] = offset;
    header["tensors"].push_back(std::move(t));
    offset += e.values.size() * sizeof(float);
  }
  ordered_json meta = ordered_json::object();
  for (const auto& kv : ckpt.meta) meta[kv.first] = kv.second;
  header["meta"] = std::move(meta);

  const std::string header_str = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(8 + header_str.size() + offset);
  append_u64_le(out, header_str.size());
  out.insert(out.end(), header_str.begin(), header_str.end());
  for (const CheckpointEntry& e : ckpt.tensors) {
    const size_t n = e.values.size() * sizeof(float);
    const size_t at = out.size();
    out.resize(at + n);
    std::memcpy(out.data() + at, e.values.data(), n);
  }
  return out;
}

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) {
    raise<DataError>("checkpoint header: file truncated before the header length (",
                     bytes.size(), " bytes)");
  }
  const std::uint64_t header_len = read_u64_le(bytes.data());
  if (header_len > bytes.size() - 8) {
    raise<DataError>("checkpoint header: declared length ", header_len, " exceeds the ",
                     bytes.size() - 8, " bytes after it");
  }
  ordered_json header;
  try {
    header = ordered_json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
  } catch (const std::exception& e) {
    raise<DataError>("checkpoint header: not valid JSON: ", e.what());
  }
  if (!header.is_object()) raise<DataError>("checkpoint header: top level is not an object");
  if (!header.contains("format_version") || !header["format_version"].is_number_integer()) {
    raise<DataError>("checkpoint header: field 'format_version' missing or not an integer");
  }
  if (header["format_version"].get<int>() != kFormatVersion) {
    raise<DataError>("checkpoint header: field 'format_version' is ",
                     header["format_version"].get<int>(), ", expected ", kFormatVersion);
  }
  if (!header.contains("tensors") || !header["tensors"].is_array()) {
    raise<DataError>("checkpoint header: field 'tensors' missing or not an array");
  }
  if (!header.contains("meta") || !header["meta"].is_object()) {
    raise<DataError>("checkpoint header: field 'meta' missing or not an object");
  }

  Checkpoint ckpt;
  for (const auto& kv : header["meta"].items()) {
    if (!kv.value().is_string()) {
      raise<DataError>("checkpoint header: field 'meta' entry '", kv.key(), "' is not a string");
    }
    ckpt.meta.emplace_back(kv.key(), kv.value().get<std::string>());
  }

  const std::uint8_t* payload = bytes.data() + 8 + header_len;
  const std::uint64_t payload_size = bytes.size() - 8 - header_len;
  std::uint64_t offset = 0;
  size_t index = 0;
  for (const auto& t : header["tensors"]) {
    if (!t.is_object()) bad_field(index, "(entry)", "is not an object");
    if (!t.contains("name") || !t["name"].is_string()) {
      bad_field(index, "name", "missing or not a string");
    }
    const std::string name = t["name"].get<std::string>();
    if (name.empty()) bad_field(index, "name", "is empty");
    if (ckpt.find(name) != nullptr) bad_field(index, "name", "duplicates '" + name + "'");
    if (!t.contains("dtype") || !t["dtype"].is_string()) {
      bad_field(index, "dtype", "missing or not a string");
    }
    if (t["dtype"].get<std::string>() != "f32") {
      bad_field(index, "dtype", "is '" + t["dtype"].get<std::string>() + "', only 'f32' is supported");
    }
    if (!t.contains("shape") || !t["shape"].is_array() || t["shape"].empty()) {
      bad_field(index, "shape", "missing or not a non-empty array");
    }
    Shape shape;
    std::uint64_t numel = 1;
    for (const auto& d : t["shape"]) {
      if (!d.is_number_integer() || d.get<int64_t>() < 1) {
        bad_field(index, "shape", "has a non-positive or non-integer dim");
      }
      shape.push_back(d.get<int64_t>());
      numel *= static_cast<std::uint64_t>(shape.back());
    }
    if (!t.contains("byte_offset") || !t["byte_offset"].is_number_unsigned()) {
      bad_field(index, "byte_offset", "missing or not an unsigned integer");
    }
    if (t["byte_offset"].get<std::uint64_t>() != offset) {
      bad_field(index, "byte_offset",
                "is " + std::to_string(t["byte_offset"].get<std::uint64_t>()) + ", expected " +
                    std::to_string(offset) + " (payloads are sequential)");
    }
    const std::uint64_t nbytes = numel * sizeof(float);
    if (offset + nbytes > payload_size) {
      bad_field(index, "shape", "needs " + std::to_string(nbytes) +
                                    " payload bytes past offset " + std::to_string(offset) +
                                    ", payload has " + std::to_string(payload_size));
    }
    std::vector<float> values(numel);
    std::memcpy(values.data(), payload + offset, nbytes);
    for (float v : values) {
      if (!std::isfinite(v)) {
        raise<DataError>("checkpoint payload: tensor '", name, "' has a non-finite value");
      }
    }
    ckpt.tensors.push_back({name, std::move(shape), std::move(values)});
    offset += nbytes;
    ++index;
  }
  if (offset != payload_size) {
    raise<DataError>("checkpoint payload: header describes ", offset, " bytes but ", payload_size,
                     " are present");
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::vector<std::uint8_t> bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise<DataError>("checkpoint: cannot open '", path, "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) raise<DataError>("checkpoint: write to '", path, "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) raise<DataError>("checkpoint: cannot open '", path, "'");
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<size_t>(size));
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) raise<DataError>("checkpoint: read from '", path, "' failed");
  return parse_checkpoint(bytes);
}

Checkpoint snapshot(const ParamSet& params) {
  Checkpoint ckpt;
  for (const Tensor& t : params.items) ckpt.add(t.name(), t.shape(), t.data());
  return ckpt;
}

void restore(const Checkpoint& ckpt, ParamSet& params) {
  for (Tensor& t : params.items) {
    const CheckpointEntry* e = ckpt.find(t.name());
    if (e == nullptr) raise<DataError>("checkpoint restore: no tensor named '", t.name(), "'");
    if (e->shape != t.shape()) {
      raise<DataError>("checkpoint restore: tensor '", t.name(), "' has shape ",
                       shape_str(e->shape), ", expected ", shape_str(t.shape()));
    }
    t.data() = e->values;
  }
}

std::uint64_t checkpoint_digest(const Checkpoint& ckpt) {
  const std::vector<std::uint8_t> bytes = serialize_checkpoint(ckpt);
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace pretext
