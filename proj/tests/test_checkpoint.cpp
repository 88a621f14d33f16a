#include <cfloat>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "pretext/checkpoint.hpp"
#include "pretext/error.hpp"
#include "pretext/params.hpp"
#include "pretext/tensor.hpp"

using namespace pretext;

namespace {

std::string temp_dir(const std::string& leaf) {
  auto d = std::filesystem::temp_directory_path() / "pretext_checkpoint_tests" / leaf;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d.string();
}

std::vector<std::uint8_t> file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

// Assembles a container image from a handwritten header and raw payload.
std::vector<std::uint8_t> image(const std::string& header, const std::vector<float>& payload) {
  std::vector<std::uint8_t> out;
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>(header.size() >> (8 * i)));
  }
  out.insert(out.end(), header.begin(), header.end());
  const size_t at = out.size();
  out.resize(at + payload.size() * sizeof(float));
  if (!payload.empty()) std::memcpy(out.data() + at, payload.data(), payload.size() * sizeof(float));
  return out;
}

template <class E, class F>
std::string message_of(F&& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  } catch (...) {
    FAIL("wrong exception type");
  }
  FAIL("no exception thrown");
  return {};
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  // Values chosen to exercise exact bit preservation: signed zero, a
  // denormal, the float32 extremes, and a non-representable decimal.
  c.add("enc.w", {2, 3}, {0.1f, -0.0f, 1e-45f, FLT_MAX, -FLT_MAX, FLT_MIN});
  c.add("enc.b", {1, 3}, {1.0f, 2.0f, 3.0f});
  c.add("head.scale", {1, 1}, {-7.25f});
  c.set_meta("objective", "byol");
  c.set_meta("seed", "42");
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("serialize and parse round-trip the exact bytes") {
  const Checkpoint c = sample_checkpoint();
  const std::vector<std::uint8_t> once = serialize_checkpoint(c);
  const Checkpoint back = parse_checkpoint(once);
  const std::vector<std::uint8_t> twice = serialize_checkpoint(back);
  CHECK(once == twice);

  REQUIRE(back.tensors.size() == 3);
  CHECK(back.tensors[0].name == "enc.w");
  CHECK(back.tensors[0].shape == Shape{2, 3});
  // Bit-for-bit float payloads, not just approximately equal values.
  CHECK(std::memcmp(back.tensors[0].values.data(), c.tensors[0].values.data(),
                    c.tensors[0].values.size() * sizeof(float)) == 0);
  CHECK(std::signbit(back.tensors[0].values[1]));
  CHECK(back.tensors[2].values[0] == -7.25f);
}

TEST_CASE("save, load, save produces byte-identical files") {
  const std::string dir = temp_dir("roundtrip");
  const std::string p1 = dir + "/a.ckpt";
  const std::string p2 = dir + "/b.ckpt";
  const Checkpoint c = sample_checkpoint();
  save_checkpoint(c, p1);
  const Checkpoint loaded = load_checkpoint(p1);
  save_checkpoint(loaded, p2);
  CHECK(file_bytes(p1) == file_bytes(p2));
}

TEST_CASE("snapshot captures a param set and restore writes it back") {
  ParamSet model;
  model.add(make_tensor({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}, true, "m.w"));
  model.add(make_tensor({1, 2}, {5.0f, 6.0f}, false, "m.running"));

  Checkpoint c = snapshot(model);
  c.set_meta("epoch", "3");
  REQUIRE(c.tensors.size() == 2);
  CHECK(c.tensors[0].name == "m.w");

  model.find("m.w").node()->data = {9.0f, 9.0f, 9.0f, 9.0f};
  model.find("m.running").node()->data = {0.0f, 0.0f};
  restore(c, model);
  CHECK(model.find("m.w").data() == std::vector<float>{1.0f, 2.0f, 3.0f, 4.0f});
  CHECK(model.find("m.running").data() == std::vector<float>{5.0f, 6.0f});
}

TEST_CASE("restore accepts a superset checkpoint and rejects gaps") {
  Checkpoint c;
  c.add("a", {1, 2}, {1.0f, 2.0f});
  c.add("b", {1, 1}, {3.0f});
  c.add("extra", {1, 1}, {4.0f});

  ParamSet sub;
  sub.add(make_tensor({1, 2}, {0.0f, 0.0f}, true, "a"));
  sub.add(make_tensor({1, 1}, {0.0f}, true, "b"));
  restore(c, sub);
  CHECK(sub.find("b").data()[0] == 3.0f);

  ParamSet missing;
  missing.add(make_tensor({1, 1}, {0.0f}, true, "nowhere"));
  CHECK(contains(message_of<DataError>([&] { restore(c, missing); }), "nowhere"));

  ParamSet wrong_shape;
  wrong_shape.add(make_tensor({2, 1}, {0.0f, 0.0f}, true, "a"));
  CHECK(contains(message_of<DataError>([&] { restore(c, wrong_shape); }), "shape"));
}

TEST_CASE("meta entries keep insertion order and overwrite in place") {
  Checkpoint c;
  c.add("t", {1, 1}, {1.0f});
  c.set_meta("zulu", "1");
  c.set_meta("alpha", "2");
  c.set_meta("zulu", "3");
  REQUIRE(c.meta.size() == 2);
  CHECK(c.meta[0].first == "zulu");
  CHECK(c.meta[0].second == "3");
  CHECK(c.meta[1].first == "alpha");
  REQUIRE(c.find_meta("alpha") != nullptr);
  CHECK(*c.find_meta("alpha") == "2");
  CHECK(c.find_meta("missing") == nullptr);

  const Checkpoint back = parse_checkpoint(serialize_checkpoint(c));
  CHECK(back.meta == c.meta);
}

TEST_CASE("add rejects malformed tensors") {
  Checkpoint c;
  CHECK_THROWS_AS(c.add("", {1, 1}, {1.0f}), ValueError);
  c.add("w", {1, 1}, {1.0f});
  CHECK_THROWS_AS(c.add("w", {1, 1}, {2.0f}), ValueError);
  CHECK_THROWS_AS(c.add("bad_shape", {0, 2}, {}), ValueError);
  CHECK_THROWS_AS(c.add("bad_count", {2, 2}, {1.0f, 2.0f}), ValueError);
  CHECK_THROWS_AS(c.add("bad_value", {1, 1}, {std::nanf("")}), ValueError);
  CHECK_THROWS_AS(c.add("no_dims", {}, {}), ValueError);
}

TEST_CASE("malformed container images are rejected and the message names the field") {
  const std::string good_entry =
      R"({"name":"w","shape":[2,2],"dtype":"f32","byte_offset":0})";
  const std::vector<float> four = {1.0f, 2.0f, 3.0f, 4.0f};
  auto header_with = [&](const std::string& entry) {
    return R"({"format_version":1,"tensors":[)" + entry + R"(],"meta":{}})";
  };

  // The well-formed baseline parses, so each rejection below isolates its own defect.
  CHECK(parse_checkpoint(image(header_with(good_entry), four)).tensors.size() == 1);

  CHECK(contains(message_of<DataError>([&] { parse_checkpoint({0x01, 0x02}); }),
                 "header length"));

  std::vector<std::uint8_t> overlong = image(header_with(good_entry), four);
  overlong[0] = 0xff;  // declared header length far past the end of the file
  overlong[1] = 0xff;
  CHECK(contains(message_of<DataError>([&] { parse_checkpoint(overlong); }), "exceeds"));

  CHECK(contains(message_of<DataError>([&] { parse_checkpoint(image("{not json", {})); }),
                 "not valid JSON"));
  CHECK(contains(message_of<DataError>([&] { parse_checkpoint(image("[1,2]", {})); }),
                 "not an object"));
  CHECK(contains(message_of<DataError>(
                     [&] { parse_checkpoint(image(R"({"tensors":[],"meta":{}})", {})); }),
                 "format_version"));
  CHECK(contains(message_of<DataError>([&] {
                   parse_checkpoint(image(R"({"format_version":2,"tensors":[],"meta":{}})", {}));
                 }),
                 "format_version"));
  CHECK(contains(message_of<DataError>(
                     [&] { parse_checkpoint(image(R"({"format_version":1,"meta":{}})", {})); }),
                 "tensors"));
  CHECK(contains(message_of<DataError>(
                     [&] { parse_checkpoint(image(R"({"format_version":1,"tensors":[]})", {})); }),
                 "meta"));
  CHECK(contains(message_of<DataError>([&] {
                   parse_checkpoint(
                       image(R"({"format_version":1,"tensors":[],"meta":{"k":1}})", {}));
                 }),
                 "meta"));

  auto reject_entry = [&](const std::string& entry, const std::string& field,
                          const std::vector<float>& payload) {
    CHECK(contains(message_of<DataError>(
                       [&] { parse_checkpoint(image(header_with(entry), payload)); }),
                   field));
  };
  reject_entry(R"({"shape":[2,2],"dtype":"f32","byte_offset":0})", "name", four);
  reject_entry(R"({"name":"","shape":[2,2],"dtype":"f32","byte_offset":0})", "name", four);
  reject_entry(R"({"name":"w","shape":[2,2],"byte_offset":0})", "dtype", four);
  reject_entry(R"({"name":"w","shape":[2,2],"dtype":"f64","byte_offset":0})", "dtype", four);
  reject_entry(R"({"name":"w","dtype":"f32","byte_offset":0})", "shape", four);
  reject_entry(R"({"name":"w","shape":[],"dtype":"f32","byte_offset":0})", "shape", four);
  reject_entry(R"({"name":"w","shape":[2,0],"dtype":"f32","byte_offset":0})", "shape", four);
  reject_entry(R"({"name":"w","shape":[2,2],"dtype":"f32"})", "byte_offset", four);
  reject_entry(R"({"name":"w","shape":[2,2],"dtype":"f32","byte_offset":8})", "byte_offset", four);
  // Declared shape larger than the payload on disk.
  reject_entry(R"({"name":"w","shape":[4,4],"dtype":"f32","byte_offset":0})", "shape", four);

  CHECK(contains(message_of<DataError>([&] {
                   parse_checkpoint(image(
                       header_with(good_entry + "," + good_entry), four));
                 }),
                 "name"));

  // Payload bytes beyond what the header describes.
  std::vector<float> extra = four;
  extra.push_back(5.0f);
  CHECK(contains(message_of<DataError>(
                     [&] { parse_checkpoint(image(header_with(good_entry), extra)); }),
                 "present"));

  std::vector<float> with_nan = four;
  with_nan[2] = std::nanf("");
  CHECK(contains(message_of<DataError>(
                     [&] { parse_checkpoint(image(header_with(good_entry), with_nan)); }),
                 "non-finite"));

  CHECK_THROWS_AS(load_checkpoint("/nonexistent/path/x.ckpt"), DataError);
}

TEST_CASE("digest is stable for equal content and moves when content moves") {
  const Checkpoint a = sample_checkpoint();
  const Checkpoint b = sample_checkpoint();
  CHECK(checkpoint_digest(a) == checkpoint_digest(b));

  Checkpoint changed_value = sample_checkpoint();
  changed_value.tensors[1].values[0] += 1.0f;
  CHECK(checkpoint_digest(changed_value) != checkpoint_digest(a));

  Checkpoint changed_meta = sample_checkpoint();
  changed_meta.set_meta("seed", "43");
  CHECK(checkpoint_digest(changed_meta) != checkpoint_digest(a));
}

TEST_SUITE_END();
