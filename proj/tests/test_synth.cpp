#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "pretext/audio.hpp"
#include "pretext/dataset.hpp"
#include "pretext/error.hpp"
#include "pretext/probe.hpp"
#include "pretext/tensor.hpp"
#include "pretext/wav.hpp"

using namespace pretext;

namespace {

std::string temp_dir(const std::string& leaf) {
  auto d = std::filesystem::temp_directory_path() / "pretext_synth_tests" / leaf;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d.string();
}

std::vector<double> mean_mel(MelComputer& mc, const Waveform& w) {
  Mel m = mc.log_mel(w);
  std::vector<double> mean(static_cast<size_t>(m.bins), 0.0);
  for (int64_t f = 0; f < m.frames; ++f) {
    for (int64_t b = 0; b < m.bins; ++b) mean[static_cast<size_t>(b)] += m.row(f)[b];
  }
  for (double& v : mean) v /= static_cast<double>(m.frames);
  return mean;
}

}  // namespace

TEST_SUITE_BEGIN("synth");

TEST_CASE("rendered tracks are deterministic in the seed") {
  SynthConfig cfg;
  cfg.duration_s = 2.0;
  Rng r1 = Rng::substream(7, {2, 5});
  Rng r2 = Rng::substream(7, {2, 5});
  Waveform a = render_synth_track(cfg, 3, r1);
  Waveform b = render_synth_track(cfg, 3, r2);
  CHECK(a.samples == b.samples);
  Rng r3 = Rng::substream(8, {2, 5});
  Waveform c = render_synth_track(cfg, 3, r3);
  CHECK(a.samples != c.samples);
}

TEST_CASE("tracks have headroom and full duration") {
  SynthConfig cfg;
  cfg.duration_s = 3.0;
  Rng rng(42);
  Waveform w = render_synth_track(cfg, 0, rng);
  CHECK(w.sample_rate == 16000);
  CHECK(static_cast<double>(w.samples.size()) == 3.0 * 16000);
  float peak = 0.0f;
  for (float x : w.samples) peak = std::max(peak, std::abs(x));
  CHECK(peak == doctest::Approx(0.9).epsilon(1e-3));
}

TEST_CASE("class fundamental bands rise with class id") {
  // Neighbouring bands overlap by design, so pitch is only reliable between
  // distant classes: the lowest class must peak below the highest.
  SynthConfig cfg;
  cfg.n_classes = 4;
  cfg.duration_s = 2.0;
  MelComputer mc;
  std::map<int, double> mean_peak;
  for (int c : {0, 3}) {
    double acc = 0.0;
    for (int t = 0; t < 6; ++t) {
      Rng rng = Rng::substream(11, {static_cast<uint64_t>(c), static_cast<uint64_t>(t)});
      Waveform w = render_synth_track(cfg, c, rng);
      auto mm = mean_mel(mc, w);
      int best = 0;
      for (int b = 1; b < 128; ++b) {
        if (mm[static_cast<size_t>(b)] > mm[static_cast<size_t>(best)]) best = b;
      }
      acc += best;
    }
    mean_peak[c] = acc / 6.0;
  }
  CHECK(mean_peak[0] < mean_peak[3]);
}

TEST_CASE("two well-separated classes are probe-separable from mean mel") {
  // Oracle-feature sanity: with only two classes the recipes differ enough
  // that a linear probe on the per-track mean mel vector must be nearly
  // perfect. If this fails the corpus is noise, not a benchmark.
  const std::string dir = temp_dir("oracle2");
  SynthConfig cfg;
  cfg.n_classes = 2;
  cfg.n_tracks = 160;
  cfg.duration_s = 8.0;
  cfg.seed = 21;
  cfg.train_frac = 0.6;
  cfg.val_frac = 0.15;
  const DatasetManifest m = generate_synth_dataset(cfg, dir);

  MelComputer mc;
  auto build_set = [&](const std::string& split) {
    std::vector<float> xs, ys;
    int64_t rows = 0;
    for (size_t i : m.split_indices(split)) {
      Waveform w = standardize(read_wav(m.track_path(i)));
      for (double v : mean_mel(mc, w)) xs.push_back(static_cast<float>(v));
      for (int l : m.tracks[i].labels) ys.push_back(static_cast<float>(l));
      ++rows;
    }
    EmbeddingSet set;
    set.vectors = make_tensor({rows, 128}, xs);
    set.labels = make_tensor({rows, 2}, ys);
    set.label_names = m.label_names;
    return set;
  };
  EmbeddingSet train = build_set("train");
  EmbeddingSet val = build_set("val");
  EmbeddingSet test = build_set("test");

  // Standardize with train statistics so the probe is well conditioned; raw
  // log-mel rows share a large common offset.
  std::vector<double> mu(128, 0.0), sd(128, 0.0);
  const int64_t n_train = train.vectors.shape()[0];
  const auto& tx = train.vectors.data();
  for (int64_t r = 0; r < n_train; ++r) {
    for (int b = 0; b < 128; ++b) mu[static_cast<size_t>(b)] += tx[static_cast<size_t>(r * 128 + b)];
  }
  for (double& v : mu) v /= static_cast<double>(n_train);
  for (int64_t r = 0; r < n_train; ++r) {
    for (int b = 0; b < 128; ++b) {
      const double d = tx[static_cast<size_t>(r * 128 + b)] - mu[static_cast<size_t>(b)];
      sd[static_cast<size_t>(b)] += d * d;
    }
  }
  for (double& v : sd) v = std::sqrt(v / static_cast<double>(n_train)) + 1e-6;
  auto zscore = [&](EmbeddingSet& s) {
    const auto& xs = s.vectors.data();
    const int64_t rows = s.vectors.shape()[0];
    std::vector<float> out;
    out.reserve(static_cast<size_t>(rows * 128));
    for (int64_t r = 0; r < rows; ++r) {
      for (int b = 0; b < 128; ++b) {
        const size_t i = static_cast<size_t>(r * 128 + b);
        out.push_back(static_cast<float>((xs[i] - mu[static_cast<size_t>(b)]) / sd[static_cast<size_t>(b)]));
      }
    }
    s.vectors = make_tensor({rows, 128}, out);
  };
  zscore(train);
  zscore(val);
  zscore(test);

  ProbeSchedule sched;
  sched.epochs = 40;
  sched.steps_per_epoch = 16;
  sched.batch_size = 32;
  sched.lr = 3e-3f;
  const ProbeModel probe = train_probe(train, val, sched, 3);
  const ProbeOutcome out = evaluate_probe(probe, test);
  CHECK(out.roc_macro > 0.95);
}

TEST_CASE("generate_synth_dataset writes a readable, balanced corpus") {
  SynthConfig cfg;
  cfg.n_classes = 3;
  cfg.n_tracks = 12;
  cfg.duration_s = 1.0;
  cfg.seed = 99;
  const std::string dir = temp_dir("corpus");
  DatasetManifest m = generate_synth_dataset(cfg, dir);
  REQUIRE(m.tracks.size() == 12);
  REQUIRE(m.label_names.size() == 3);

  DatasetManifest reread = read_manifest(dir + "/manifest.jsonl");
  REQUIRE(reread.tracks.size() == 12);
  CHECK(reread.label_names == m.label_names);

  std::map<std::string, int> split_counts;
  std::vector<int> class_counts(3, 0);
  for (size_t i = 0; i < reread.tracks.size(); ++i) {
    const TrackInfo& t = reread.tracks[i];
    ++split_counts[t.split];
    int lbl_sum = 0;
    for (size_t c = 0; c < t.labels.size(); ++c) {
      lbl_sum += t.labels[c];
      if (t.labels[c]) ++class_counts[c];
    }
    CHECK(lbl_sum == 1);  // one-hot
    Waveform w = read_wav(reread.track_path(i));
    CHECK(w.sample_rate == 16000);
    CHECK(w.duration_s() == doctest::Approx(1.0).epsilon(1e-3));
  }
  CHECK(split_counts["train"] == 8);   // floor(0.7 * 12)
  CHECK(split_counts["val"] == 1);     // floor(0.1 * 12)
  CHECK(split_counts["test"] == 3);
  for (int c : class_counts) CHECK(c == 4);
}

TEST_CASE("regeneration with the same seed reproduces the corpus bit for bit") {
  SynthConfig cfg;
  cfg.n_classes = 2;
  cfg.n_tracks = 4;
  cfg.duration_s = 0.5;
  cfg.seed = 1234;
  const std::string d1 = temp_dir("rep1");
  const std::string d2 = temp_dir("rep2");
  generate_synth_dataset(cfg, d1);
  generate_synth_dataset(cfg, d2);
  for (int i = 0; i < 4; ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "/audio/track_%04d.wav", i);
    std::ifstream f1(d1 + name, std::ios::binary), f2(d2 + name, std::ios::binary);
    std::vector<char> b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::vector<char> b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(!b1.empty());
    CHECK(b1 == b2);
  }
}

TEST_CASE("manifest validation rejects broken files") {
  const std::string dir = temp_dir("badmanifest");
  auto write_lines = [&](const std::string& name, const std::string& body) {
    std::ofstream f(dir + "/" + name);
    f << body;
    return dir + "/" + name;
  };
  CHECK_THROWS_AS(read_manifest(dir + "/missing.jsonl"), DataError);
  CHECK_THROWS_AS(read_manifest(write_lines("nohdr.jsonl",
                                            R"({"type":"track","id":0})"
                                            "\n")),
                  DataError);
  CHECK_THROWS_AS(read_manifest(write_lines("badjson.jsonl", "{not json}\n")), DataError);
  CHECK_THROWS_AS(
      read_manifest(write_lines(
          "badlabels.jsonl",
          R"({"type":"header","label_names":["a","b"]})"
          "\n"
          R"({"type":"track","id":0,"path":"x.wav","labels":[1],"split":"train","duration_s":1.0})"
          "\n")),
      DataError);
  CHECK_THROWS_AS(
      read_manifest(write_lines(
          "badsplit.jsonl",
          R"({"type":"header","label_names":["a"]})"
          "\n"
          R"({"type":"track","id":0,"path":"x.wav","labels":[1],"split":"dev","duration_s":1.0})"
          "\n")),
      DataError);
}

TEST_CASE("synth configuration validation") {
  SynthConfig cfg;
  Rng rng(1);
  CHECK_THROWS_AS(render_synth_track(cfg, -1, rng), ValueError);
  CHECK_THROWS_AS(render_synth_track(cfg, 8, rng), ValueError);
  SynthConfig bad = cfg;
  bad.n_classes = 1;
  CHECK_THROWS_AS(generate_synth_dataset(bad, "/tmp/unused"), ConfigError);
  SynthConfig bad2 = cfg;
  bad2.train_frac = 0.95;
  bad2.val_frac = 0.1;
  CHECK_THROWS_AS(generate_synth_dataset(bad2, "/tmp/unused"), ConfigError);
}

TEST_SUITE_END();
