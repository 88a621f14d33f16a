#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pretext/params.hpp"
#include "pretext/rng.hpp"
#include "pretext/tensor.hpp"

namespace pretext {

// Per-frame MLP + additive attention pooling. Each 128-d mel frame passes
// through the hidden layers (linear + ReLU, He-uniform init) and a final
// linear map to the 1024-d feature space; a zero-initialized scorer
// (linear 1024 -> 1) turns features into per-frame logits, softmax over time
// gives attention weights, and the embedding is the weighted sum of frame
// features. Zero scorer weights mean uniform attention, i.e. the frame mean.
//
// The forward pass exploits that both the scorer and the pooling commute
// with the final linear layer: frames are pooled in the last hidden space
// and mapped once per segment, which is algebraically identical to mapping
// every frame first but avoids materializing T x 1024 features.
struct EncoderConfig {
  int64_t frame_dim = 128;
  std::vector<int64_t> hidden_dims = {256, 512};
  int64_t embedding_dim = 1024;  // fixed by the probe contract
};

struct EncoderParams {
  EncoderConfig cfg;
  std::vector<Tensor> hidden_w, hidden_b;  // per hidden layer
  Tensor out_w, out_b;                     // last hidden -> embedding
  Tensor attn_v;                           // {embedding_dim, 1}
  Tensor attn_c;                           // {1, 1}
  ParamSet all() const;
};

EncoderParams make_encoder(const EncoderConfig& cfg, uint64_t seed,
                           const std::string& name_prefix = "encoder.");

struct EncodeResult {
  Tensor embedding;  // {B, embedding_dim}
  Tensor attention;  // {B, T}, rows sum to 1
};

// mel_frames is a {B*T, frame_dim} leaf (segment-major, frame-minor).
// T must be at least 1.
EncodeResult encode_batch(const EncoderParams& p, const Tensor& mel_frames, int64_t batch,
                          int64_t frames_per_segment);

// Two blocks of linear (no bias) + batch norm + ReLU. The projector maps
// 1024 -> 1024 -> 2048; the BYOL predictor uses the same block shape at
// 2048 -> 2048 -> 2048.
struct HeadParams {
  Tensor w1, w2;
  BatchNormParams bn1, bn2;
  ParamSet all() const;
};

HeadParams make_projector(uint64_t seed, const std::string& name_prefix = "projector.");
HeadParams make_predictor(uint64_t seed, const std::string& name_prefix = "predictor.");

// Training mode uses batch statistics (batch >= 2). update_running controls
// whether the running buffers absorb them; teacher passes keep it off.
Tensor head_forward(HeadParams& head, const Tensor& x, bool training, bool update_running = true);

// Deep copies with requires_grad dropped and names re-prefixed, for EMA
// teachers. Forward passes through these record no graph, so the student
// never backpropagates into teacher weights.
EncoderParams frozen_clone(const EncoderParams& src, const std::string& name_prefix);
HeadParams frozen_clone(const HeadParams& src, const std::string& name_prefix);

}  // namespace pretext
