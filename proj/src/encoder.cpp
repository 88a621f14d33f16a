#include "pretext/encoder.hpp"

#include <cmath>
#include <cstddef>
#include <utility>

#include "pretext/error.hpp"

namespace pretext {

namespace {

Tensor he_uniform(int64_t fan_in, int64_t fan_out, Rng& rng, const std::string& name) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<float> data(static_cast<size_t>(fan_in * fan_out));
  for (float& v : data) v = static_cast<float>(rng.uniform(-limit, limit));
  return make_tensor({fan_in, fan_out}, std::move(data), true, name);
}

HeadParams make_head(int64_t in_dim, int64_t mid_dim, int64_t out_dim, uint64_t seed,
                     const std::string& prefix) {
  Rng rng(seed);
  HeadParams h;
  // Linears feeding batch norm carry no bias: the per-channel beta already
  // plays that role, and batch-stat normalization would cancel a bias anyway.
  h.w1 = he_uniform(in_dim, mid_dim, rng, prefix + "l1.w");
  h.bn1 = make_batch_norm(mid_dim, prefix + "bn1");
  h.w2 = he_uniform(mid_dim, out_dim, rng, prefix + "l2.w");
  h.bn2 = make_batch_norm(out_dim, prefix + "bn2");
  return h;
}

}  // namespace

ParamSet EncoderParams::all() const {
  ParamSet ps;
  for (size_t i = 0; i < hidden_w.size(); ++i) {
    ps.add(hidden_w[i]);
    ps.add(hidden_b[i]);
  }
  ps.add(out_w);
  ps.add(out_b);
  ps.add(attn_v);
  ps.add(attn_c);
  return ps;
}

EncoderParams make_encoder(const EncoderConfig& cfg, uint64_t seed,
                           const std::string& name_prefix) {
  if (cfg.frame_dim < 1) raise<ConfigError>("encoder: frame_dim must be positive");
  if (cfg.embedding_dim < 1) raise<ConfigError>("encoder: embedding_dim must be positive");
  for (int64_t d : cfg.hidden_dims) {
    if (d < 1) raise<ConfigError>("encoder: hidden dims must be positive");
  }

  Rng rng(seed);
  EncoderParams p;
  p.cfg = cfg;
  int64_t width = cfg.frame_dim;
  for (size_t i = 0; i < cfg.hidden_dims.size(); ++i) {
    const int64_t next = cfg.hidden_dims[i];
    const std::string stem = name_prefix + "mlp" + std::to_string(i);
    p.hidden_w.push_back(he_uniform(width, next, rng, stem + ".w"));
    p.hidden_b.push_back(zeros({1, next}, true, stem + ".b"));
    width = next;
  }
  p.out_w = he_uniform(width, cfg.embedding_dim, rng, name_prefix + "out.w");
  p.out_b = zeros({1, cfg.embedding_dim}, true, name_prefix + "out.b");
  // Zero scorer: every frame gets the same logit, so a fresh encoder starts
  // from uniform attention (the frame mean) and learns to focus from there.
  p.attn_v = zeros({cfg.embedding_dim, 1}, true, name_prefix + "attn.v");
  p.attn_c = zeros({1, 1}, true, name_prefix + "attn.c");
  return p;
}

EncodeResult encode_batch(const EncoderParams& p, const Tensor& mel_frames, int64_t batch,
                          int64_t frames_per_segment) {
  if (batch < 1 || frames_per_segment < 1) {
    raise<ValueError>("encode_batch: batch and frame counts must be positive");
  }
  if (mel_frames.rank() != 2 || mel_frames.rows() != batch * frames_per_segment ||
      mel_frames.cols() != p.cfg.frame_dim) {
    raise<ShapeError>("encode_batch: expected {", batch * frames_per_segment, ", ",
                      p.cfg.frame_dim, "} frames, got {", mel_frames.rows(), ", ",
                      mel_frames.cols(), "}");
  }

  Tensor h = mel_frames;
  for (size_t i = 0; i < p.hidden_w.size(); ++i) {
    h = relu(add_rowvec(matmul(h, p.hidden_w[i]), p.hidden_b[i]));
  }

  // Frame score s = (h W + b) v + c, folded to s = h (W v) + (b v + c) so the
  // embedding-space features are never materialized per frame; pooling in
  // hidden space then mapping the pooled vector gives the identical result
  // because the final layer is linear.
  Tensor u = matmul(p.out_w, p.attn_v);
  Tensor score_bias = add(matmul(p.out_b, p.attn_v), p.attn_c);
  Tensor scores = add(matmul(h, u), score_bias);
  Tensor weights = softmax_rows(reshape(scores, {batch, frames_per_segment}));
  Tensor pooled = attn_pool(h, weights);
  Tensor embedding = add_rowvec(matmul(pooled, p.out_w), p.out_b);
  return {embedding, weights};
}

ParamSet HeadParams::all() const {
  ParamSet ps;
  ps.add(w1);
  ps.add(bn1.gamma);
  ps.add(bn1.beta);
  ps.add(bn1.running_mean);
  ps.add(bn1.running_var);
  ps.add(w2);
  ps.add(bn2.gamma);
  ps.add(bn2.beta);
  ps.add(bn2.running_mean);
  ps.add(bn2.running_var);
  return ps;
}

HeadParams make_projector(uint64_t seed, const std::string& name_prefix) {
  return make_head(1024, 1024, 2048, seed, name_prefix);
}

HeadParams make_predictor(uint64_t seed, const std::string& name_prefix) {
  return make_head(2048, 2048, 2048, seed, name_prefix);
}

Tensor head_forward(HeadParams& head, const Tensor& x, bool training, bool update_running) {
  Tensor h1 = relu(batch_norm(matmul(x, head.w1), head.bn1, training, update_running));
  return relu(batch_norm(matmul(h1, head.w2), head.bn2, training, update_running));
}

namespace {

Tensor frozen_copy(const Tensor& t, const std::string& prefix) {
  return make_tensor(t.shape(), t.data(), false, prefix + t.name());
}

}  // namespace

EncoderParams frozen_clone(const EncoderParams& src, const std::string& name_prefix) {
  EncoderParams out;
  out.cfg = src.cfg;
  for (size_t i = 0; i < src.hidden_w.size(); ++i) {
    out.hidden_w.push_back(frozen_copy(src.hidden_w[i], name_prefix));
    out.hidden_b.push_back(frozen_copy(src.hidden_b[i], name_prefix));
  }
  out.out_w = frozen_copy(src.out_w, name_prefix);
  out.out_b = frozen_copy(src.out_b, name_prefix);
  out.attn_v = frozen_copy(src.attn_v, name_prefix);
  out.attn_c = frozen_copy(src.attn_c, name_prefix);
  return out;
}

HeadParams frozen_clone(const HeadParams& src, const std::string& name_prefix) {
  HeadParams out;
  out.w1 = frozen_copy(src.w1, name_prefix);
  out.bn1.gamma = frozen_copy(src.bn1.gamma, name_prefix);
  out.bn1.beta = frozen_copy(src.bn1.beta, name_prefix);
  out.bn1.running_mean = frozen_copy(src.bn1.running_mean, name_prefix);
  out.bn1.running_var = frozen_copy(src.bn1.running_var, name_prefix);
  out.w2 = frozen_copy(src.w2, name_prefix);
  out.bn2.gamma = frozen_copy(src.bn2.gamma, name_prefix);
  out.bn2.beta = frozen_copy(src.bn2.beta, name_prefix);
  out.bn2.running_mean = frozen_copy(src.bn2.running_mean, name_prefix);
  out.bn2.running_var = frozen_copy(src.bn2.running_var, name_prefix);
  return out;
}

}  // namespace pretext
