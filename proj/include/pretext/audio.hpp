#pragma once

#include <cstdint>
#include <vector>

#include "pretext/rng.hpp"
#include "pretext/wav.hpp"

// FFTW's C types live in the implementation; the plan is held opaquely here.
struct fftwf_plan_s;

namespace pretext {

// All analysis runs at a fixed standard rate and grid.
constexpr int kSampleRate = 16000;
constexpr int kWinLength = 400;   // 25 ms Hann window (periodic)
constexpr int kHopLength = 160;   // 10 ms hop
constexpr int kFftSize = 512;
constexpr int kMelBins = 128;
constexpr float kMelFmax = 8000.0f;
constexpr float kLogMelFloor = 1e-5f;

constexpr int64_t kSegmentSamples = 4 * kSampleRate;    // each view is 4 s
constexpr int64_t kGapMinSamples = 4 * kSampleRate;     // view starts at least 4 s apart
constexpr int64_t kGapMaxSamples = 16 * kSampleRate;    // and at most 16 s

// Frames a signal of n samples yields: 1 + floor((n - win) / hop), 0 if short.
int64_t mel_frame_count(int64_t n_samples);
constexpr int64_t kSegmentFrames = 398;  // = mel_frame_count(kSegmentSamples)

// ---- standardization ----

// Windowed-sinc resampling (Hann-windowed kernel, 32-tap radius scaled by the
// anti-aliasing cutoff for downsampling). Passthrough when rates match.
Waveform resample_to(const Waveform& w, int target_rate);

// Scales so max |x| == 1. Silence is left untouched.
void peak_normalize(Waveform& w);

// Resample to 16 kHz, then peak-normalize.
Waveform standardize(Waveform w);

// ---- log-mel spectrograms ----

struct Mel {
  int64_t frames = 0;
  int64_t bins = 0;
  std::vector<float> data;  // frames x bins, row-major

  const float* row(int64_t f) const { return data.data() + f * bins; }
};

// Owns the FFTW plan and the HTK-style triangular filterbank (128 filters,
// 0..8 kHz, each normalized by 2 / (hz width) so filter areas match).
// Magnitude spectra are pooled by the filters, then log(x + 1e-5).
// Not copyable; one instance per thread.
class MelComputer {
 public:
  MelComputer();
  ~MelComputer();
  MelComputer(const MelComputer&) = delete;
  MelComputer& operator=(const MelComputer&) = delete;

  // Full-signal log-mel. Requires w.sample_rate == 16000 and at least one
  // whole window of samples.
  Mel log_mel(const Waveform& w);
  Mel log_mel(const float* samples, int64_t n);

  // Copies `frames` rows starting at frame_offset out of a full-track mel.
  // A segment whose start sample is hop-aligned equals the same slice of the
  // full-track mel bit for bit, which is what makes cached full-track mels
  // usable for view sampling.
  static Mel slice(const Mel& full, int64_t frame_offset, int64_t frames);

 private:
  float* fft_in_ = nullptr;
  void* fft_out_ = nullptr;  // fftwf_complex[kFftSize/2+1]
  fftwf_plan_s* plan_ = nullptr;
  std::vector<float> window_;
  std::vector<int> filter_first_bin_;
  std::vector<std::vector<float>> filter_weights_;
};

// ---- view pairs ----

struct ViewPair {
  int64_t anchor_start = 0;    // sample offsets at 16 kHz, hop-aligned
  int64_t positive_start = 0;
};

// Draws two 4 s views whose start times are between 4 and 16 s apart. The
// anchor is uniform over the hop-aligned offsets that admit at least one
// positive; direction and gap are then drawn uniformly from the feasible
// choices. Offsets land on the 10 ms hop grid so the views' mels are exact
// slices of the full-track mel. Tracks shorter than 8 s raise DataError.
ViewPair sample_view_pair(Rng& rng, int64_t track_samples);

}  // namespace pretext
