#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pretext/audio.hpp"
#include "pretext/encoder.hpp"
#include "pretext/metrics.hpp"
#include "pretext/tensor.hpp"
#include "pretext/wav.hpp"

namespace pretext {

// Frozen-backbone evaluation: per-track mean embeddings, a single linear
// layer trained with sigmoid cross-entropy, and the limited-data campaign.

struct EmbeddingSet {
  Tensor vectors;  // {M, D}
  Tensor labels;   // {M, N}, entries exactly 0 or 1
  std::vector<std::string> label_names;
  void validate() const;
};

// Mean encoder embedding over consecutive non-overlapping 4 s windows; the
// final shorter remainder is dropped. The encoder must be frozen (no
// parameter requires grad), so the call records no graph. 16 kHz input,
// at least 4 s long.
std::vector<float> track_embedding(const Waveform& track, const EncoderParams& encoder,
                                   MelComputer& mel);

struct ProbeSchedule {
  int64_t epochs = 25;
  int64_t steps_per_epoch = 128;
  int64_t batch_size = 256;
  float lr = 1e-3f;
  void validate() const;  // ConfigError on violation
};

struct ProbeModel {
  Tensor weights;  // {D, N}
  Tensor bias;     // {1, N}
  std::vector<std::string> label_names;
  int64_t best_epoch = 0;          // 0-based argmin of val_losses, earliest on ties
  std::vector<double> val_losses;  // one entry per epoch
};

// Per-label sigmoid binary cross-entropy over the frozen embeddings, Adam,
// batches drawn without replacement within each step. Returns the epoch
// snapshot with minimum validation loss. Deterministic from seed.
ProbeModel train_probe(const EmbeddingSet& train, const EmbeddingSet& val,
                       const ProbeSchedule& schedule, uint64_t seed);

// Probe logits {M, N}. Monotone in the predicted probabilities, so ranking
// metrics consume them directly.
Tensor probe_scores(const ProbeModel& model, const Tensor& vectors);

struct ProbeOutcome {
  double roc_macro = 0.0;
  double map_macro = 0.0;
  std::vector<std::string> warnings;
};

ProbeOutcome evaluate_probe(const ProbeModel& model, const EmbeddingSet& test);

struct LimitedCell {
  double percentage = 100.0;  // 100 with repeat -1 marks the full-train reference
  int64_t repeat = 0;
  int64_t n_train = 0;
  double roc_macro = 0.0;
  double map_macro = 0.0;
  BootstrapStats bootstrap;  // test-set resampling uncertainty for this cell
  std::vector<std::string> warnings;
};

// Every (percentage, repeat) cell draws its train subset without
// replacement, trains a fresh probe, and scores the full test set; the
// full-train reference cell is appended last with repeat -1. Percentage 100
// entries are subsumed by the reference, so {100} x any repeats yields just
// that one cell. Each cell owns an RNG derived from (seed, percentage,
// repeat), so results do not depend on the order cells run in.
std::vector<LimitedCell> limited_data_protocol(const EmbeddingSet& train, const EmbeddingSet& val,
                                               const EmbeddingSet& test,
                                               const ProbeSchedule& schedule,
                                               const std::vector<double>& percentages,
                                               int64_t repeats, uint64_t seed,
                                               double bootstrap_fraction = 0.5,
                                               int64_t bootstrap_n = 50);

}  // namespace pretext
