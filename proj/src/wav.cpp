#include "pretext/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "pretext/error.hpp"

namespace pretext {

namespace {

uint32_t read_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise<DataError>("wav: cannot open ", path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    raise<DataError>("wav: ", path, " is not a RIFF/WAVE file");
  }

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  const uint8_t* data = nullptr;
  size_t data_len = 0;

  size_t off = 12;
  while (off + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + off);
    const uint32_t len = read_u32(bytes.data() + off + 4);
    const size_t body = off + 8;
    if (body + len > bytes.size()) raise<DataError>("wav: ", path, " has a truncated chunk");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) raise<DataError>("wav: ", path, " fmt chunk too short");
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) raise<DataError>("wav: ", path, " data chunk precedes fmt chunk");
      data = bytes.data() + body;
      data_len = len;
      break;
    }
    off = body + len + (len & 1);  // chunks are word-aligned
  }
  if (!have_fmt) raise<DataError>("wav: ", path, " has no fmt chunk");
  if (data == nullptr) raise<DataError>("wav: ", path, " has no data chunk");
  if (channels == 0) raise<DataError>("wav: ", path, " has zero channels");
  if (rate == 0) raise<DataError>("wav: ", path, " has zero sample rate");

  const bool pcm_int = format == 1 && (bits == 8 || bits == 16 || bits == 24);
  const bool ieee = format == 3 && bits == 32;
  if (!pcm_int && !ieee) {
    raise<DataError>("wav: ", path, " unsupported encoding (format tag ", format, ", ", bits,
                     " bits)");
  }

  const size_t bytes_per_sample = bits / 8;
  const size_t stride = bytes_per_sample * channels;
  if (stride == 0 || data_len % stride != 0) {
    raise<DataError>("wav: ", path, " data chunk is not a whole number of frames");
  }
  const size_t n_frames = data_len / stride;

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(n_frames);
  const float inv_channels = 1.0f / static_cast<float>(channels);
  for (size_t i = 0; i < n_frames; ++i) {
    float acc = 0.0f;
    for (size_t ch = 0; ch < channels; ++ch) {
      const uint8_t* p = data + i * stride + ch * bytes_per_sample;
      float v = 0.0f;
      switch (bits) {
        case 8:
          v = (static_cast<float>(*p) - 128.0f) / 128.0f;
          break;
        case 16: {
          const int16_t s = static_cast<int16_t>(p[0] | (p[1] << 8));
          v = static_cast<float>(s) / 32768.0f;
          break;
        }
        case 24: {
          int32_t s = static_cast<int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
          if (s & 0x800000) s |= static_cast<int32_t>(0xff000000);
          v = static_cast<float>(s) / 8388608.0f;
          break;
        }
        case 32: {
          float fv;
          std::memcpy(&fv, p, 4);
          if (!std::isfinite(fv)) raise<DataError>("wav: ", path, " contains non-finite samples");
          v = fv;
          break;
        }
      }
      acc += v;
    }
    w.samples[i] = acc * inv_channels;
  }
  return w;
}

void write_wav16(const std::string& path, const Waveform& w) {
  if (w.sample_rate <= 0) raise<ValueError>("write_wav16: invalid sample rate");
  std::ofstream f(path, std::ios::binary);
  if (!f) raise<DataError>("wav: cannot create ", path);

  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  const uint32_t data_len = n * 2;
  const uint32_t riff_len = 36 + data_len;
  const uint32_t rate = static_cast<uint32_t>(w.sample_rate);
  const uint32_t byte_rate = rate * 2;

  uint8_t header[44];
  std::memcpy(header, "RIFF", 4);
  std::memcpy(header + 8, "WAVEfmt ", 8);
  std::memcpy(header + 36, "data", 4);
  auto put_u32 = [&](size_t at, uint32_t v) {
    header[at] = static_cast<uint8_t>(v & 0xff);
    header[at + 1] = static_cast<uint8_t>((v >> 8) & 0xff);
    header[at + 2] = static_cast<uint8_t>((v >> 16) & 0xff);
    header[at + 3] = static_cast<uint8_t>((v >> 24) & 0xff);
  };
  auto put_u16 = [&](size_t at, uint16_t v) {
    header[at] = static_cast<uint8_t>(v & 0xff);
    header[at + 1] = static_cast<uint8_t>((v >> 8) & 0xff);
  };
  put_u32(4, riff_len);
  put_u32(16, 16);       // fmt chunk length
  put_u16(20, 1);        // PCM
  put_u16(22, 1);        // mono
  put_u32(24, rate);
  put_u32(28, byte_rate);
  put_u16(32, 2);        // block align
  put_u16(34, 16);       // bits
  put_u32(40, data_len);
  f.write(reinterpret_cast<const char*>(header), 44);

  std::vector<uint8_t> body(static_cast<size_t>(data_len));
  for (size_t i = 0; i < w.samples.size(); ++i) {
    const float x = std::clamp(w.samples[i], -1.0f, 1.0f);
    const int16_t s = static_cast<int16_t>(std::lround(x * 32767.0f));
    body[2 * i] = static_cast<uint8_t>(s & 0xff);
    body[2 * i + 1] = static_cast<uint8_t>((s >> 8) & 0xff);
  }
  f.write(reinterpret_cast<const char*>(body.data()), body.size());
  if (!f) raise<DataError>("wav: failed writing ", path);
}

}  // namespace pretext
