#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "pretext/audio.hpp"
#include "pretext/dataset.hpp"
#include "pretext/error.hpp"

namespace pretext {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

struct ClassRecipe {
  double f0_lo, f0_hi;      // fundamental band, Hz
  double decay;             // harmonic amplitude k^-decay
  double even_weight;       // scale on even harmonics
  double noise_level;       // broadband noise amplitude
  double vibrato_rate_hz;
};

// How far each class band is widened past its own log-spaced slice, as a
// fixed factor in frequency. Against the narrow slices of an 8-class corpus
// this overlaps each band with two to three neighbours on purpose: if pitch
// alone named the class, a frozen random encoder would already saturate the
// probe and the benchmark could not separate the objectives. Against the wide
// slices of a 2-class corpus the same factor leaves the fundamentals mostly
// separated, which keeps the mean-mel oracle probe near-perfect there.
constexpr double kBandSpread = 1.9;

ClassRecipe class_recipe(int class_id, int n_classes) {
  // Band centers stay log-spaced over [110, 1760] Hz, so only distant
  // classes differ reliably in pitch. Identity mostly rides on texture
  // (decay, even-harmonic balance, noise floor), and render_synth_track
  // jitters each texture cue per track so no single one settles a class.
  const double lo_edge = 110.0 * std::pow(16.0, static_cast<double>(class_id) / n_classes);
  const double hi_edge = 110.0 * std::pow(16.0, static_cast<double>(class_id + 1) / n_classes);
  ClassRecipe r;
  r.f0_lo = std::max(70.0, lo_edge / kBandSpread);
  r.f0_hi = std::min(2090.0, hi_edge * kBandSpread);
  // The non-monotone decay table caps the tilt difference of any adjacent
  // pair at 0.4, which the per-track jitter then blurs; a plain ramp would
  // hand the wrap-around pair a triple-size linear cue.
  constexpr double kDecayTable[4] = {0.6, 1.0, 1.4, 1.0};
  r.decay = kDecayTable[class_id % 4];
  r.even_weight = class_id % 2 == 0 ? 1.0 : 0.3;
  // The offset grouping makes classes 0 and 1 sit in different noise tiers
  // (a 2-class corpus stays linearly separable from the floor alone) while
  // several neighbouring pairs in larger corpora still share a tier. Only
  // the first gap is wide; tiers 1 and 2 nearly merge under jitter, so the
  // floor reads as clean-versus-noisy rather than as a class code.
  constexpr double kNoiseTable[3] = {0.015, 0.12, 0.165};
  r.noise_level = kNoiseTable[((class_id + 1) / 2) % 3];
  r.vibrato_rate_hz = 2.5 + 1.3 * (class_id % 5);
  return r;
}

}  // namespace

Waveform render_synth_track(const SynthConfig& cfg, int class_id, Rng& rng) {
  if (class_id < 0 || class_id >= cfg.n_classes) {
    raise<ValueError>("synth: class_id ", class_id, " outside [0, ", cfg.n_classes, ")");
  }
  if (cfg.duration_s <= 0.0) raise<ConfigError>("synth: duration must be positive");
  const ClassRecipe r = class_recipe(class_id, cfg.n_classes);
  const int sr = kSampleRate;
  const int64_t n = static_cast<int64_t>(cfg.duration_s * sr);

  // Track-level draws. The texture jitter blurs each class cue enough that
  // tracks of neighbouring classes overlap on any single attribute.
  const double f0 = r.f0_lo * std::pow(r.f0_hi / r.f0_lo, rng.uniform());
  const double decay = r.decay + rng.uniform(-0.4, 0.4);
  const double even_weight = r.even_weight * rng.uniform(0.7, 1.3);
  const double vib_depth = rng.uniform(0.003, 0.012);
  const double vib_phase = rng.uniform(0.0, kTau);
  const double am_rate = rng.uniform(0.08, 0.35);
  const double am_depth_db = rng.uniform(4.0, 12.0);
  const double am_phase = rng.uniform(0.0, kTau);
  const double noise_amp = r.noise_level * rng.uniform(0.7, 1.4);

  const int n_harm = std::max(1, std::min(20, static_cast<int>(7800.0 / f0)));
  std::vector<double> amp(static_cast<size_t>(n_harm));
  std::vector<double> phase(static_cast<size_t>(n_harm));
  double amp_sum = 0.0;
  for (int k = 0; k < n_harm; ++k) {
    double a = std::pow(static_cast<double>(k + 1), -decay);
    if ((k + 1) % 2 == 0) a *= even_weight;
    amp[static_cast<size_t>(k)] = a;
    amp_sum += a;
    phase[static_cast<size_t>(k)] = rng.uniform(0.0, kTau);
  }
  for (double& a : amp) a /= amp_sum;

  // noise bursts, on average one per four seconds
  struct Burst {
    int64_t start, len;
    double amp;
  };
  std::vector<Burst> bursts;
  const int n_bursts = static_cast<int>(rng.int_in(static_cast<int64_t>(cfg.duration_s / 8.0),
                                                   static_cast<int64_t>(cfg.duration_s / 3.0)));
  for (int b = 0; b < n_bursts; ++b) {
    Burst bu;
    bu.len = static_cast<int64_t>(rng.uniform(0.2, 0.6) * sr);
    bu.start = static_cast<int64_t>(rng.uniform() * std::max<int64_t>(1, n - bu.len));
    bu.amp = noise_amp * rng.uniform(1.5, 3.0);
    bursts.push_back(bu);
  }

  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(static_cast<size_t>(n));
  const double dt = 1.0 / sr;
  for (int64_t i = 0; i < n; ++i) {
    const double t = i * dt;
    const double f_inst = f0 * (1.0 + vib_depth * std::sin(kTau * r.vibrato_rate_hz * t + vib_phase));
    // slow gain wobble in dB
    const double gain =
        std::pow(10.0, (am_depth_db / 2.0) * std::sin(kTau * am_rate * t + am_phase) / 20.0);
    double s = 0.0;
    for (int k = 0; k < n_harm; ++k) {
      s += amp[static_cast<size_t>(k)] * std::sin(phase[static_cast<size_t>(k)]);
      phase[static_cast<size_t>(k)] += kTau * (k + 1) * f_inst * dt;
      if (phase[static_cast<size_t>(k)] > kTau) phase[static_cast<size_t>(k)] -= kTau;
    }
    s *= gain;
    s += noise_amp * (rng.uniform() * 2.0 - 1.0);
    w.samples[static_cast<size_t>(i)] = static_cast<float>(s);
  }
  for (const Burst& bu : bursts) {
    const int64_t end = std::min<int64_t>(n, bu.start + bu.len);
    for (int64_t i = bu.start; i < end; ++i) {
      w.samples[static_cast<size_t>(i)] += static_cast<float>(bu.amp * (rng.uniform() * 2.0 - 1.0));
    }
  }

  // leave headroom so the 16-bit round trip never clips
  float peak = 0.0f;
  for (float x : w.samples) peak = std::max(peak, std::abs(x));
  if (peak > 0.0f) {
    const float s = 0.9f / peak;
    for (float& x : w.samples) x *= s;
  }
  return w;
}

DatasetManifest generate_synth_dataset(const SynthConfig& cfg, const std::string& out_dir) {
  if (cfg.n_classes < 2) raise<ConfigError>("synth: need at least 2 classes");
  if (cfg.n_tracks < cfg.n_classes) raise<ConfigError>("synth: need at least one track per class");
  if (cfg.train_frac <= 0.0 || cfg.val_frac < 0.0 || cfg.train_frac + cfg.val_frac >= 1.0) {
    raise<ConfigError>("synth: split fractions must leave room for a test split");
  }
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "audio");

  DatasetManifest m;
  m.root_dir = out_dir;
  for (int c = 0; c < cfg.n_classes; ++c) m.label_names.push_back("class_" + std::to_string(c));

  // round-robin classes, then shuffle the split assignment
  std::vector<std::string> splits(static_cast<size_t>(cfg.n_tracks), "test");
  const auto n_train = static_cast<size_t>(cfg.train_frac * cfg.n_tracks);
  const auto n_val = static_cast<size_t>(cfg.val_frac * cfg.n_tracks);
  for (size_t i = 0; i < n_train; ++i) splits[i] = "train";
  for (size_t i = n_train; i < n_train + n_val && i < splits.size(); ++i) splits[i] = "val";
  constexpr uint64_t kSplitStream = 1, kTrackStream = 2;
  Rng split_rng = Rng::substream(cfg.seed, {kSplitStream});
  split_rng.shuffle(splits);

  for (int i = 0; i < cfg.n_tracks; ++i) {
    const int c = i % cfg.n_classes;
    Rng track_rng = Rng::substream(cfg.seed, {kTrackStream, static_cast<uint64_t>(i)});
    Waveform w = render_synth_track(cfg, c, track_rng);
    char name[64];
    std::snprintf(name, sizeof(name), "audio/track_%04d.wav", i);
    write_wav16((fs::path(out_dir) / name).string(), w);

    TrackInfo t;
    t.id = i;
    t.path = name;
    t.labels.assign(static_cast<size_t>(cfg.n_classes), 0);
    t.labels[static_cast<size_t>(c)] = 1;
    t.split = splits[static_cast<size_t>(i)];
    t.duration_s = w.duration_s();
    m.tracks.push_back(std::move(t));
  }
  write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), m);
  return m;
}

}  // namespace pretext
