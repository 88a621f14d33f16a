#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pretext/checkpoint.hpp"
#include "pretext/dataset.hpp"
#include "pretext/encoder.hpp"
#include "pretext/objectives.hpp"
#include "pretext/optim.hpp"
#include "pretext/params.hpp"
#include "pretext/tensor.hpp"

namespace pretext {

// Pretext training: one loop skeleton shared by all five objectives. Only the
// loss call and the teacher/center hooks differ between objectives; encoder,
// projector, optimizer, data pipeline and logging are identical, so runs
// differ in nothing but the pretext signal.

struct ScheduleConfig {
  int64_t epochs = 20;
  int64_t steps_per_epoch = 64;
  int64_t batch_pairs = 32;  // >= 2: every objective needs batch statistics or negatives

  void validate() const;  // ConfigError on violation
};

struct OptimizerSettings {
  float lr = 3e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;

  void validate() const;
};

// Exactly one source: a manifest on disk, or a synthetic corpus rendered
// under <output_dir>/data before training starts.
struct DataConfig {
  std::string manifest_path;
  bool use_synth = false;
  SynthConfig synth;

  void validate() const;
};

struct RunConfig {
  ObjectiveConfig objective;
  EncoderConfig encoder;
  DataConfig data;
  ScheduleConfig schedule;
  OptimizerSettings optimizer;
  uint64_t seed = 1;
  std::string output_dir;

  void validate() const;
};

// Strict JSON parsing: unknown keys, wrong types and invalid values raise
// ConfigError naming the offending field. Absent fields keep their defaults.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Canonical echo with every field spelled out; parsing it back reproduces the
// config exactly. Written to <output_dir>/config.json as the run snapshot.
std::string run_config_json(const RunConfig& cfg);

// ---- model assembly ----

// Student tower plus whatever the objective needs: a predictor head (byol),
// prototype logits (clustering), and an EMA teacher copy of the shared tower
// (byol, clustering). The teacher starts as an exact copy of the student.
struct PretextModel {
  ObjectiveConfig objective;
  EncoderParams encoder;
  HeadParams projector;

  bool has_predictor = false;
  HeadParams predictor;

  bool has_prototypes = false;
  Tensor prototypes;          // {2048, K}, student
  Tensor teacher_prototypes;  // frozen
  Tensor center;              // {1, K} buffer

  bool has_teacher = false;
  EncoderParams teacher_encoder;
  HeadParams teacher_projector;

  ParamSet student_params() const;     // everything Adam may touch (plus BN buffers)
  ParamSet ema_student_scope() const;  // index-aligned with ema_teacher_scope
  ParamSet ema_teacher_scope() const;
  ParamSet checkpoint_scope() const;  // student + teacher + center
};

// Requires encoder.embedding_dim == 1024 (the probe contract fixes it, and
// the projector input width is baked to match).
PretextModel make_pretext_model(const ObjectiveConfig& objective, const EncoderConfig& encoder,
                                uint64_t seed);

// Checkpoints record the encoder architecture in their meta entries; this
// rebuilds the config so a probe can reconstruct the encoder before
// restoring weights. Missing or malformed entries raise DataError.
EncoderConfig encoder_config_from_checkpoint(const Checkpoint& ckpt);

// ---- the shared step ----

struct StepStats {
  double loss = 0.0;
  double embedding_std = 0.0;       // population std of the student projection
  double cluster_entropy = 0.0;     // normalized teacher cluster-usage entropy
  bool has_cluster_entropy = false;
};

// One optimization step on a prepared batch: forward both views, objective
// loss (teacher paths where applicable, both view orderings averaged for the
// asymmetric losses), backward, Adam, then EMA and center updates.
// mel_a / mel_b are {pairs * T, frame_dim} leaves, segment-major.
StepStats train_step(PretextModel& m, Adam& opt, const Tensor& mel_a, const Tensor& mel_b,
                     int64_t pairs);

// Same forward and loss with no parameter, running-stat, teacher or center
// movement; batch statistics are still used for the norm layers.
double validation_loss(PretextModel& m, const Tensor& mel_a, const Tensor& mel_b, int64_t pairs);

// ---- the full run ----

struct PretrainResult {
  std::string checkpoint_path;  // <output_dir>/checkpoint_last.bin
  std::string log_path;         // <output_dir>/log.jsonl
  std::string config_path;      // <output_dir>/config.json
  int64_t global_steps = 0;
  double final_val_loss = 0.0;
};

// Runs the configured schedule: caches full-track log-mels for the train
// split (minus a held-out 5% of tracks that provides the per-epoch
// validation loss), samples view pairs online, and appends one JSON line per
// step to the run log. A rolling checkpoint is rewritten after every epoch;
// the file left after the last epoch is the run's final ("last") checkpoint.
// A non-finite loss aborts with an abort record in the log and a
// NumericError naming the objective and step. Identical (config, seed) runs
// produce byte-identical checkpoints.
PretrainResult pretrain(const RunConfig& cfg);

}  // namespace pretext
