#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pretext {

struct Waveform {
  int sample_rate = 0;
  std::vector<float> samples;  // mono, nominally in [-1, 1]

  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

// Reads a RIFF/WAVE file: PCM 8/16/24-bit integer or 32-bit IEEE float,
// any channel count (channels are averaged to mono). Unknown chunks are
// skipped. Malformed or unsupported files raise DataError naming the file.
Waveform read_wav(const std::string& path);

// Writes mono 16-bit PCM; samples are clamped to [-1, 1] and scaled by 32767.
void write_wav16(const std::string& path, const Waveform& w);

}  // namespace pretext
