#include "pretext/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "pretext/error.hpp"
#include "pretext/optim.hpp"
#include "pretext/rng.hpp"

namespace pretext {

namespace {

constexpr uint64_t kProbeStream = 4;
constexpr uint64_t kLimitedStream = 5;

Tensor gather_rows(const Tensor& t, const std::vector<size_t>& rows) {
  const int64_t c = t.cols();
  std::vector<float> data(rows.size() * static_cast<size_t>(c));
  for (size_t i = 0; i < rows.size(); ++i) {
    std::memcpy(data.data() + i * static_cast<size_t>(c),
                t.data().data() + rows[i] * static_cast<size_t>(c),
                static_cast<size_t>(c) * sizeof(float));
  }
  return make_tensor({static_cast<int64_t>(rows.size()), c}, std::move(data));
}

double validation_loss(const Tensor& w, const Tensor& b, const EmbeddingSet& val) {
  return bce_with_logits(add_rowvec(matmul(val.vectors, w), b), val.labels).item();
}

}  // namespace

void EmbeddingSet::validate() const {
  if (!vectors.defined() || !labels.defined() || vectors.rank() != 2 || labels.rank() != 2) {
    raise<ShapeError>("embedding set: vectors and labels must be rank-2 tensors");
  }
  if (vectors.rows() < 1) raise<DataError>("embedding set: no examples");
  if (labels.cols() < 1) raise<DataError>("embedding set: no labels");
  if (labels.rows() != vectors.rows()) {
    raise<ShapeError>("embedding set: ", vectors.rows(), " vectors vs ", labels.rows(),
                      " label rows");
  }
  if (static_cast<int64_t>(label_names.size()) != labels.cols()) {
    raise<ShapeError>("embedding set: expected ", labels.cols(), " label names, got ",
                      label_names.size());
  }
  for (float l : labels.data()) {
    if (l != 0.0f && l != 1.0f) raise<ValueError>("embedding set: labels must be exactly 0 or 1");
  }
}

std::vector<float> track_embedding(const Waveform& track, const EncoderParams& encoder,
                                   MelComputer& mel) {
  for (const Tensor& t : encoder.all().items) {
    if (t.requires_grad()) {
      raise<ValueError>("track_embedding: encoder must be frozen ('", t.name(),
                        "' requires grad)");
    }
  }
  const int64_t n_windows = static_cast<int64_t>(track.samples.size()) / kSegmentSamples;
  if (n_windows < 1) {
    raise<DataError>("track_embedding: track shorter than one 4 s window (",
                     track.samples.size(), " samples)");
  }

  // One mel pass over the whole track; 4 s windows start on the hop grid,
  // so each window's mel is an exact slice of the full matrix.
  const Mel full = mel.log_mel(track);
  const int64_t window_hop_frames = kSegmentSamples / kHopLength;
  std::vector<float> frames(static_cast<size_t>(n_windows * kSegmentFrames * kMelBins));
  for (int64_t w = 0; w < n_windows; ++w) {
    const Mel piece = MelComputer::slice(full, w * window_hop_frames, kSegmentFrames);
    std::memcpy(frames.data() + static_cast<size_t>(w * kSegmentFrames * kMelBins),
                piece.data.data(), piece.data.size() * sizeof(float));
  }
  Tensor batch = make_tensor({n_windows * kSegmentFrames, kMelBins}, std::move(frames));
  Tensor embeddings = encode_batch(encoder, batch, n_windows, kSegmentFrames).embedding;

  const int64_t d = embeddings.cols();
  std::vector<float> out(static_cast<size_t>(d));
  for (int64_t j = 0; j < d; ++j) {
    double acc = 0.0;
    for (int64_t w = 0; w < n_windows; ++w) {
      acc += embeddings.data()[static_cast<size_t>(w * d + j)];
    }
    out[static_cast<size_t>(j)] = static_cast<float>(acc / static_cast<double>(n_windows));
  }
  return out;
}

void ProbeSchedule::validate() const {
  if (epochs < 1 || steps_per_epoch < 1 || batch_size < 1) {
    raise<ConfigError>("probe schedule: epochs, steps and batch size must be positive");
  }
  if (!(lr > 0.0f)) raise<ConfigError>("probe schedule: lr must be positive");
}

ProbeModel train_probe(const EmbeddingSet& train, const EmbeddingSet& val,
                       const ProbeSchedule& schedule, uint64_t seed) {
  schedule.validate();
  train.validate();
  val.validate();
  if (train.label_names != val.label_names) {
    raise<ValueError>("train_probe: train/val label names disagree");
  }
  if (train.vectors.cols() != val.vectors.cols()) {
    raise<ShapeError>("train_probe: train/val embedding widths disagree");
  }

  const int64_t m = train.vectors.rows();
  const int64_t d = train.vectors.cols();
  const int64_t n = train.labels.cols();
  Tensor w = zeros({d, n}, true, "probe.w");
  Tensor b = zeros({1, n}, true, "probe.b");
  AdamConfig opt_cfg;
  opt_cfg.lr = schedule.lr;
  Adam adam({w, b}, opt_cfg);
  Rng rng = Rng::substream(seed, {kProbeStream});

  ProbeModel model;
  model.label_names = train.label_names;
  double best = 0.0;
  std::vector<float> best_w, best_b;
  const size_t take = static_cast<size_t>(std::min(schedule.batch_size, m));
  for (int64_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    for (int64_t step = 0; step < schedule.steps_per_epoch; ++step) {
      const auto rows = rng.sample_indices(static_cast<size_t>(m), take);
      Tensor x = gather_rows(train.vectors, rows);
      Tensor t = gather_rows(train.labels, rows);
      Tensor loss = bce_with_logits(add_rowvec(matmul(x, w), b), t);
      zero_grad({w, b});
      backward(loss);
      adam.step();
    }
    const double val_loss = validation_loss(w, b, val);
    model.val_losses.push_back(val_loss);
    if (model.val_losses.size() == 1 || val_loss < best) {
      best = val_loss;
      best_w = w.data();
      best_b = b.data();
      model.best_epoch = epoch;
    }
  }

  model.weights = make_tensor({d, n}, std::move(best_w), false, "probe.w");
  model.bias = make_tensor({1, n}, std::move(best_b), false, "probe.b");
  return model;
}

Tensor probe_scores(const ProbeModel& model, const Tensor& vectors) {
  if (vectors.rank() != 2 || vectors.cols() != model.weights.rows()) {
    raise<ShapeError>("probe_scores: vectors must be {M, ", model.weights.rows(), "}");
  }
  return add_rowvec(matmul(vectors, model.weights), model.bias);
}

ProbeOutcome evaluate_probe(const ProbeModel& model, const EmbeddingSet& test) {
  test.validate();
  if (test.label_names != model.label_names) {
    raise<ValueError>("evaluate_probe: test label names disagree with the probe");
  }
  Tensor scores = probe_scores(model, test.vectors);
  auto roc = macro_roc_auc(scores, test.labels, test.label_names);
  auto ap = macro_average_precision(scores, test.labels, test.label_names);
  ProbeOutcome out;
  out.roc_macro = roc.value;
  out.map_macro = ap.value;
  out.warnings = std::move(roc.warnings);
  for (auto& warning : ap.warnings) out.warnings.push_back(std::move(warning));
  return out;
}

std::vector<LimitedCell> limited_data_protocol(const EmbeddingSet& train, const EmbeddingSet& val,
                                               const EmbeddingSet& test,
                                               const ProbeSchedule& schedule,
                                               const std::vector<double>& percentages,
                                               int64_t repeats, uint64_t seed,
                                               double bootstrap_fraction, int64_t bootstrap_n) {
  train.validate();
  if (percentages.empty()) raise<ConfigError>("limited data: no percentages given");
  for (double p : percentages) {
    if (p <= 0.0 || p > 100.0) raise<ConfigError>("limited data: percentage ", p, " out of (0, 100]");
  }
  if (repeats < 1) raise<ConfigError>("limited data: repeats must be positive");

  const int64_t m = train.vectors.rows();
  const int64_t n = train.labels.cols();
  std::vector<LimitedCell> cells;

  auto run_cell = [&](const EmbeddingSet& subset, double percentage, int64_t repeat,
                      uint64_t probe_seed, uint64_t bootstrap_seed) {
    ProbeModel probe = train_probe(subset, val, schedule, probe_seed);
    ProbeOutcome outcome = evaluate_probe(probe, test);
    LimitedCell cell;
    cell.percentage = percentage;
    cell.repeat = repeat;
    cell.n_train = subset.vectors.rows();
    cell.roc_macro = outcome.roc_macro;
    cell.map_macro = outcome.map_macro;
    cell.bootstrap = bootstrap_eval(probe_scores(probe, test.vectors), test.labels,
                                    test.label_names, bootstrap_fraction, bootstrap_n,
                                    bootstrap_seed);
    cell.warnings = std::move(outcome.warnings);
    for (int64_t j = 0; j < n; ++j) {
      bool any = false;
      for (int64_t i = 0; i < subset.labels.rows() && !any; ++i) {
        any = subset.labels.data()[static_cast<size_t>(i * n + j)] == 1.0f;
      }
      if (!any) {
        cell.warnings.push_back("label '" + train.label_names[static_cast<size_t>(j)] +
                                "' has no positives in the train subset");
      }
    }
    cells.push_back(std::move(cell));
  };

  for (size_t pi = 0; pi < percentages.size(); ++pi) {
    const double p = percentages[pi];
    // A 100% draw is the full train set, which the reference cell already
    // covers; emitting it twice would only duplicate rows.
    if (p == 100.0) continue;
    // Identify the cell stream by the percentage itself (in basis points,
    // so fractional percentages stay distinct), not the list position.
    const uint64_t pct_id = static_cast<uint64_t>(std::llround(p * 100.0));
    const auto take = static_cast<size_t>(
        std::max<int64_t>(1, static_cast<int64_t>(p / 100.0 * static_cast<double>(m))));
    for (int64_t r = 0; r < repeats; ++r) {
      Rng rng = Rng::substream(seed, {kLimitedStream, pct_id, static_cast<uint64_t>(r)});
      auto rows = rng.sample_indices(static_cast<size_t>(m), take);
      std::sort(rows.begin(), rows.end());
      EmbeddingSet subset;
      subset.vectors = gather_rows(train.vectors, rows);
      subset.labels = gather_rows(train.labels, rows);
      subset.label_names = train.label_names;
      const uint64_t probe_seed = rng.next_u64();
      const uint64_t boot_seed = rng.next_u64();
      run_cell(subset, p, r, probe_seed, boot_seed);
    }
  }

  Rng ref_rng = Rng::substream(seed, {kLimitedStream});
  const uint64_t ref_probe_seed = ref_rng.next_u64();
  const uint64_t ref_boot_seed = ref_rng.next_u64();
  run_cell(train, 100.0, -1, ref_probe_seed, ref_boot_seed);
  return cells;
}

}  // namespace pretext
