#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pretext/rng.hpp"
#include "pretext/wav.hpp"

namespace pretext {

// ---- manifest ----

struct TrackInfo {
  int64_t id = 0;
  std::string path;             // relative to the manifest's directory
  std::vector<int> labels;      // binary, one entry per label name
  std::string split;            // "train", "val" or "test"
  double duration_s = 0.0;
};

struct DatasetManifest {
  std::string root_dir;  // directory the manifest lives in
  std::vector<std::string> label_names;
  std::vector<TrackInfo> tracks;

  std::vector<size_t> split_indices(const std::string& split) const;
  std::string track_path(size_t index) const;  // root_dir joined with the relative path
};

// JSON-lines format: a header line carrying the label names, then one line
// per track. Structural problems raise DataError with the offending line.
DatasetManifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const DatasetManifest& m);

// ---- synthetic data ----

struct SynthConfig {
  int n_classes = 8;
  int n_tracks = 400;
  double duration_s = 30.0;
  uint64_t seed = 1;
  double train_frac = 0.7;
  double val_frac = 0.1;  // remainder is test
};

// One class-c track: a harmonic tone whose fundamental sits in the class's
// band, with class-dependent spectral decay, even-harmonic weight, noise
// level and vibrato rate. Track-level draws (exact pitch, phases, slow gain
// wobble, noise bursts) vary within the class.
Waveform render_synth_track(const SynthConfig& cfg, int class_id, Rng& rng);

// Writes n_tracks WAVs under out_dir/audio plus out_dir/manifest.jsonl with
// one-hot labels and a shuffled train/val/test split; returns the manifest.
DatasetManifest generate_synth_dataset(const SynthConfig& cfg, const std::string& out_dir);

}  // namespace pretext
