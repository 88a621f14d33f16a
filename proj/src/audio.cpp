#include "pretext/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "pretext/error.hpp"

namespace pretext {

int64_t mel_frame_count(int64_t n_samples) {
  if (n_samples < kWinLength) return 0;
  return 1 + (n_samples - kWinLength) / kHopLength;
}

// ---- resampling ----

namespace {

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = 3.14159265358979323846 * x;
  return std::sin(px) / px;
}

}  // namespace

Waveform resample_to(const Waveform& w, int target_rate) {
  if (w.sample_rate <= 0) raise<DataError>("resample: source sample rate is not set");
  if (target_rate <= 0) raise<ValueError>("resample: target rate must be positive");
  if (w.sample_rate == target_rate) return w;

  const double ratio = static_cast<double>(w.sample_rate) / target_rate;  // input samples per output
  const double cutoff = std::min(1.0, 1.0 / ratio);  // anti-aliasing for downsampling
  const double radius = 32.0 / cutoff;

  const int64_t n_in = static_cast<int64_t>(w.samples.size());
  const int64_t n_out = static_cast<int64_t>(std::floor(static_cast<double>(n_in) / ratio));
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<size_t>(n_out));

  for (int64_t i = 0; i < n_out; ++i) {
    const double center = static_cast<double>(i) * ratio;
    const int64_t k_lo = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(center - radius)));
    const int64_t k_hi = std::min<int64_t>(n_in - 1, static_cast<int64_t>(std::floor(center + radius)));
    double acc = 0.0;
    for (int64_t k = k_lo; k <= k_hi; ++k) {
      const double u = static_cast<double>(k) - center;
      // Hann-windowed sinc, scaled by the cutoff
      const double win = 0.5 + 0.5 * std::cos(3.14159265358979323846 * u / radius);
      acc += static_cast<double>(w.samples[static_cast<size_t>(k)]) * cutoff *
             sinc(cutoff * u) * win;
    }
    out.samples[static_cast<size_t>(i)] = static_cast<float>(acc);
  }
  return out;
}

void peak_normalize(Waveform& w) {
  float peak = 0.0f;
  for (float x : w.samples) peak = std::max(peak, std::abs(x));
  if (peak == 0.0f) return;
  const float inv = 1.0f / peak;
  for (float& x : w.samples) x *= inv;
}

Waveform standardize(Waveform w) {
  Waveform out = resample_to(w, kSampleRate);
  peak_normalize(out);
  return out;
}

// ---- mel ----

namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

MelComputer::MelComputer() {
  fft_in_ = fftwf_alloc_real(kFftSize);
  fftwf_complex* out = fftwf_alloc_complex(kFftSize / 2 + 1);
  fft_out_ = out;
  // FFTW_ESTIMATE picks the plan deterministically (no runtime measurement).
  plan_ = fftwf_plan_dft_r2c_1d(kFftSize, fft_in_, out, FFTW_ESTIMATE);
  if (!plan_) raise<NumericError>("mel: fftw plan creation failed");

  window_.resize(kWinLength);
  for (int n = 0; n < kWinLength; ++n) {
    // periodic Hann
    window_[static_cast<size_t>(n)] =
        0.5f - 0.5f * std::cos(2.0f * 3.14159265f * static_cast<float>(n) / kWinLength);
  }

  // 128 triangular filters, equally spaced on the HTK mel scale over
  // [0, 8000] Hz, evaluated at the FFT bin frequencies and normalized by
  // 2 / (hz width).
  const int n_bins = kFftSize / 2 + 1;
  const double bin_hz = static_cast<double>(kSampleRate) / kFftSize;
  std::vector<double> pts(kMelBins + 2);
  const double mel_lo = hz_to_mel(0.0), mel_hi = hz_to_mel(kMelFmax);
  for (int i = 0; i < kMelBins + 2; ++i) {
    pts[static_cast<size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (kMelBins + 1));
  }
  filter_first_bin_.resize(kMelBins);
  filter_weights_.resize(kMelBins);
  for (int m = 0; m < kMelBins; ++m) {
    const double fl = pts[static_cast<size_t>(m)];
    const double fc = pts[static_cast<size_t>(m + 1)];
    const double fr = pts[static_cast<size_t>(m + 2)];
    const double norm = 2.0 / (fr - fl);
    int first = -1;
    std::vector<float> weights;
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * bin_hz;
      double wgt = 0.0;
      if (f > fl && f < fr) {
        wgt = f <= fc ? (f - fl) / (fc - fl) : (fr - f) / (fr - fc);
      }
      if (wgt > 0.0) {
        if (first < 0) first = k;
        weights.push_back(static_cast<float>(wgt * norm));
      } else if (first >= 0) {
        break;
      }
    }
    if (first < 0) {
      // No FFT bin falls inside this filter; keep an empty filter (its
      // output is the log floor). With 128 filters over 257 bins this
      // happens for the narrowest low-frequency triangles.
      first = 0;
    }
    filter_first_bin_[static_cast<size_t>(m)] = first;
    filter_weights_[static_cast<size_t>(m)] = std::move(weights);
  }
}

MelComputer::~MelComputer() {
  if (plan_) fftwf_destroy_plan(plan_);
  if (fft_in_) fftwf_free(fft_in_);
  if (fft_out_) fftwf_free(static_cast<fftwf_complex*>(fft_out_));
}

Mel MelComputer::log_mel(const Waveform& w) {
  if (w.sample_rate != kSampleRate) {
    raise<ValueError>("mel: expected ", kSampleRate, " Hz input, got ", w.sample_rate);
  }
  return log_mel(w.samples.data(), static_cast<int64_t>(w.samples.size()));
}

Mel MelComputer::log_mel(const float* samples, int64_t n) {
  const int64_t frames = mel_frame_count(n);
  if (frames <= 0) {
    raise<DataError>("mel: signal of ", n, " samples is shorter than one window");
  }
  Mel mel;
  mel.frames = frames;
  mel.bins = kMelBins;
  mel.data.resize(static_cast<size_t>(frames * kMelBins));

  fftwf_complex* out = static_cast<fftwf_complex*>(fft_out_);
  const int n_bins = kFftSize / 2 + 1;
  std::vector<float> mag(static_cast<size_t>(n_bins));
  for (int64_t f = 0; f < frames; ++f) {
    const float* src = samples + f * kHopLength;
    for (int i = 0; i < kWinLength; ++i) fft_in_[i] = src[i] * window_[static_cast<size_t>(i)];
    std::memset(fft_in_ + kWinLength, 0, sizeof(float) * (kFftSize - kWinLength));
    fftwf_execute(plan_);
    for (int k = 0; k < n_bins; ++k) {
      mag[static_cast<size_t>(k)] = std::sqrt(out[k][0] * out[k][0] + out[k][1] * out[k][1]);
    }
    float* dst = mel.data.data() + f * kMelBins;
    for (int m = 0; m < kMelBins; ++m) {
      const auto& wgt = filter_weights_[static_cast<size_t>(m)];
      const int first = filter_first_bin_[static_cast<size_t>(m)];
      float acc = 0.0f;
      for (size_t j = 0; j < wgt.size(); ++j) acc += wgt[j] * mag[static_cast<size_t>(first) + j];
      if (!std::isfinite(acc)) raise<NumericError>("mel: non-finite filter output");
      dst[m] = std::log(acc + kLogMelFloor);
    }
  }
  return mel;
}

Mel MelComputer::slice(const Mel& full, int64_t frame_offset, int64_t frames) {
  if (frame_offset < 0 || frames <= 0 || frame_offset + frames > full.frames) {
    raise<ValueError>("mel slice: frames [", frame_offset, ", ", frame_offset + frames,
                      ") out of range for ", full.frames, "-frame mel");
  }
  Mel out;
  out.frames = frames;
  out.bins = full.bins;
  out.data.assign(full.data.begin() + frame_offset * full.bins,
                  full.data.begin() + (frame_offset + frames) * full.bins);
  return out;
}

// ---- view pairs ----

ViewPair sample_view_pair(Rng& rng, int64_t track_samples) {
  const int64_t last_start = track_samples - kSegmentSamples;  // inclusive, in samples
  if (last_start < kGapMinSamples) {
    raise<DataError>("view pair: track of ", track_samples,
                     " samples is too short (needs at least ",
                     kSegmentSamples + kGapMinSamples, ")");
  }

  // Work in hop-grid units; the segment and gap bounds are whole hops.
  const int64_t hop = kHopLength;
  const int64_t a_max = last_start / hop;          // largest anchor index
  const int64_t g_min = kGapMinSamples / hop;      // 400
  const int64_t g_max = kGapMaxSamples / hop;      // 1600
  const int64_t right_hi = a_max - g_min;          // anchors that can reach rightward

  // Feasible anchors: [0, right_hi] union [g_min, a_max]. Both pieces are
  // nonempty here (a_max >= g_min was checked above).
  int64_t idx;
  if (right_hi >= g_min - 1) {
    // pieces touch or overlap: the union is [0, a_max]
    idx = static_cast<int64_t>(rng.below(static_cast<uint64_t>(a_max + 1)));
  } else {
    const int64_t n_right = right_hi + 1;
    const int64_t n_left = a_max - g_min + 1;
    int64_t r = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n_right + n_left)));
    idx = r < n_right ? r : g_min + (r - n_right);
  }

  const bool can_right = idx <= right_hi;
  const bool can_left = idx >= g_min;
  const bool go_right = can_right && can_left ? rng.below(2) == 0 : can_right;

  const int64_t room = go_right ? a_max - idx : idx;
  const int64_t n_gaps = std::min(g_max, room) - g_min + 1;
  const int64_t gap =
      g_min + static_cast<int64_t>(rng.below(static_cast<uint64_t>(n_gaps)));

  ViewPair vp;
  vp.anchor_start = idx * hop;
  vp.positive_start = (go_right ? idx + gap : idx - gap) * hop;
  return vp;
}

}  // namespace pretext
