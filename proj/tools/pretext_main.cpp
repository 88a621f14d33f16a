// Command-line front end: dataset synthesis, pretext training, frozen-probe
// evaluation, the limited-data campaign and cross-run comparison.
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric abort,
// 1 anything else.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "pretext/audio.hpp"
#include "pretext/checkpoint.hpp"
#include "pretext/dataset.hpp"
#include "pretext/encoder.hpp"
#include "pretext/error.hpp"
#include "pretext/metrics.hpp"
#include "pretext/objectives.hpp"
#include "pretext/probe.hpp"
#include "pretext/trainer.hpp"
#include "pretext/wav.hpp"

namespace {

using nlohmann::ordered_json;
using namespace pretext;

// ---- formatting ----

std::string fmt(double v) {
  char b[64];
  std::snprintf(b, sizeof(b), "%.10g", v);
  return b;
}

std::string fmt4(double v) {
  char b[32];
  std::snprintf(b, sizeof(b), "%.4f", v);
  return b;
}

std::string hex_digest(uint64_t d) {
  char b[24];
  std::snprintf(b, sizeof(b), "%016llx", static_cast<unsigned long long>(d));
  return b;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise<DataError>("cannot open '", path, "' for writing");
  out << text;
  out.flush();
  if (!out) raise<DataError>("short write to '", path, "'");
}

// One row per (percentage, repeat) cell; the full-protocol probe is the
// percentage-100 reference row. Shared by probe, limited and compare.
constexpr const char* kCellHeader =
    "dataset,objective,percentage,repeat,roc_mean,roc_std,map_mean,map_std\n";

std::string cell_row(const std::string& dataset, const std::string& objective, double percentage,
                     int64_t repeat, const BootstrapStats& b) {
  char p[32];
  std::snprintf(p, sizeof(p), "%g", percentage);
  return dataset + "," + objective + "," + p + "," + std::to_string(repeat) + "," +
         fmt(b.mean_roc) + "," + fmt(b.std_roc) + "," + fmt(b.mean_map) + "," + fmt(b.std_map) +
         "\n";
}

ordered_json bootstrap_json(const BootstrapStats& b) {
  return ordered_json{{"mean_roc", b.mean_roc},       {"std_roc", b.std_roc},
                      {"mean_map", b.mean_map},       {"std_map", b.std_map},
                      {"n_resamples", b.n_resamples}, {"resample_fraction", b.fraction},
                      {"seed", b.seed}};
}

ordered_json checkpoint_json(const Checkpoint& ckpt, const std::string& path,
                             const std::string& digest) {
  ordered_json c{{"path", path}, {"digest", digest}};
  for (const char* key : {"objective", "seed", "epoch", "global_step"}) {
    if (const std::string* v = ckpt.find_meta(key)) c[key] = *v;
  }
  return c;
}

std::string default_dataset(const std::string& manifest_path) {
  const std::filesystem::path p(manifest_path);
  const std::string parent = p.parent_path().filename().string();
  if (!parent.empty() && parent != "." && parent != "..") return parent;
  return p.stem().string();
}

// ---- evaluation inputs ----

struct EvalInputs {
  Checkpoint ckpt;
  std::string digest;
  std::string objective;
  DatasetManifest manifest;
  EmbeddingSet train, val, test;
};

EmbeddingSet split_set(const DatasetManifest& m, const std::vector<size_t>& idx,
                       const std::unordered_map<int64_t, std::vector<float>>& by_id, int64_t dim) {
  const auto rows = static_cast<int64_t>(idx.size());
  const auto n = static_cast<int64_t>(m.label_names.size());
  std::vector<float> vec(static_cast<size_t>(rows * dim));
  std::vector<float> lab(static_cast<size_t>(rows * n));
  for (int64_t i = 0; i < rows; ++i) {
    const TrackInfo& t = m.tracks[idx[static_cast<size_t>(i)]];
    const std::vector<float>& e = by_id.at(t.id);
    std::copy(e.begin(), e.end(), vec.begin() + static_cast<size_t>(i * dim));
    for (int64_t j = 0; j < n; ++j) {
      lab[static_cast<size_t>(i * n + j)] = t.labels[static_cast<size_t>(j)] != 0 ? 1.0f : 0.0f;
    }
  }
  EmbeddingSet s;
  s.vectors = make_tensor({rows, dim}, std::move(vec));
  s.labels = make_tensor({rows, n}, std::move(lab));
  s.label_names = m.label_names;
  s.validate();
  return s;
}

EvalInputs load_eval_inputs(const std::string& checkpoint_path, const std::string& manifest_path,
                            const std::string& output_dir) {
  EvalInputs in;
  in.ckpt = load_checkpoint(checkpoint_path);
  in.digest = hex_digest(checkpoint_digest(in.ckpt));
  const std::string* objective = in.ckpt.find_meta("objective");
  in.objective = objective != nullptr ? *objective : "unknown";
  in.manifest = read_manifest(manifest_path);

  const std::array<const char*, 3> split_names = {"train", "val", "test"};
  std::array<std::vector<size_t>, 3> split_idx;
  for (size_t s = 0; s < split_names.size(); ++s) {
    split_idx[s] = in.manifest.split_indices(split_names[s]);
    if (split_idx[s].empty()) {
      raise<DataError>("manifest '", manifest_path, "': split '", split_names[s], "' is empty");
    }
  }

  const EncoderConfig ec = encoder_config_from_checkpoint(in.ckpt);
  EncoderParams enc = make_encoder(ec, 0);
  ParamSet enc_params = enc.all();
  restore(in.ckpt, enc_params);
  const EncoderParams frozen = frozen_clone(enc, "");
  const int64_t dim = ec.embedding_dim;

  // Track embeddings live in the same tensor container as checkpoints, one
  // {1, D} entry per track keyed by its id and stamped with the encoder
  // digest, so a cache from a different checkpoint never silently survives.
  const std::string cache_path = output_dir + "/embeddings.bin";
  std::unordered_map<int64_t, std::vector<float>> by_id;
  bool cache_hit = false;
  if (std::filesystem::exists(cache_path)) {
    try {
      const Checkpoint cache = load_checkpoint(cache_path);
      const std::string* digest = cache.find_meta("checkpoint_digest");
      cache_hit = digest != nullptr && *digest == in.digest;
      for (const TrackInfo& t : in.manifest.tracks) {
        if (!cache_hit) break;
        const CheckpointEntry* e = cache.find(std::to_string(t.id));
        if (e == nullptr || e->shape != Shape{1, dim}) {
          cache_hit = false;
          break;
        }
        by_id[t.id] = e->values;
      }
    } catch (const DataError&) {
      cache_hit = false;
    }
    if (!cache_hit) by_id.clear();
  }

  if (cache_hit) {
    std::cout << "embeddings: cache hit, extraction skipped (" << cache_path << ")\n";
  } else {
    std::cout << "embeddings: encoding " << in.manifest.tracks.size() << " tracks\n";
    MelComputer mel;
    Checkpoint cache;
    cache.set_meta("kind", "embedding_cache");
    cache.set_meta("checkpoint_digest", in.digest);
    cache.set_meta("embedding_dim", std::to_string(dim));
    for (size_t i = 0; i < in.manifest.tracks.size(); ++i) {
      const TrackInfo& t = in.manifest.tracks[i];
      try {
        const Waveform w = standardize(read_wav(in.manifest.track_path(i)));
        std::vector<float> e = track_embedding(w, frozen, mel);
        by_id[t.id] = e;
        cache.add(std::to_string(t.id), {1, dim}, std::move(e));
      } catch (const DataError& err) {
        raise<DataError>("track ", t.id, " ('", t.path, "'): ", err.what());
      }
    }
    save_checkpoint(cache, cache_path);
  }

  in.train = split_set(in.manifest, split_idx[0], by_id, dim);
  in.val = split_set(in.manifest, split_idx[1], by_id, dim);
  in.test = split_set(in.manifest, split_idx[2], by_id, dim);
  return in;
}

// ---- probe ----

struct ProbeArgs {
  std::string checkpoint;
  std::string manifest;
  std::string output_dir;
  std::string dataset;
  uint64_t seed = 1;
  int64_t probe_epochs = 25;
  int64_t probe_steps = 128;
  int64_t probe_batch = 256;
  float probe_lr = 1e-3f;
  int64_t bootstrap_n = 50;
  double bootstrap_frac = 0.5;
};

void add_probe_flags(CLI::App* cmd, ProbeArgs& a) {
  cmd->add_option("--checkpoint", a.checkpoint, "pretext checkpoint to evaluate")->required();
  cmd->add_option("--manifest", a.manifest, "dataset manifest (JSON lines)")->required();
  cmd->add_option("--output-dir", a.output_dir, "directory for reports and the embedding cache")
      ->required();
  cmd->add_option("--dataset", a.dataset,
                  "dataset name used in reports (default: manifest directory name)");
  cmd->add_option("--seed", a.seed, "probe and bootstrap seed")->capture_default_str();
  cmd->add_option("--probe-epochs", a.probe_epochs, "probe epochs")->capture_default_str();
  cmd->add_option("--probe-steps", a.probe_steps, "probe steps per epoch")->capture_default_str();
  cmd->add_option("--probe-batch", a.probe_batch, "probe batch size")->capture_default_str();
  cmd->add_option("--probe-lr", a.probe_lr, "probe learning rate")->capture_default_str();
  cmd->add_option("--bootstrap-n", a.bootstrap_n, "bootstrap resample count")
      ->capture_default_str();
  cmd->add_option("--bootstrap-frac", a.bootstrap_frac, "bootstrap resample fraction")
      ->capture_default_str();
}

ProbeSchedule schedule_of(const ProbeArgs& a) {
  ProbeSchedule s;
  s.epochs = a.probe_epochs;
  s.steps_per_epoch = a.probe_steps;
  s.batch_size = a.probe_batch;
  s.lr = a.probe_lr;
  s.validate();
  return s;
}

void run_probe(const ProbeArgs& a) {
  std::filesystem::create_directories(a.output_dir);
  const ProbeSchedule sched = schedule_of(a);
  const EvalInputs in = load_eval_inputs(a.checkpoint, a.manifest, a.output_dir);
  const std::string dataset = a.dataset.empty() ? default_dataset(a.manifest) : a.dataset;

  const ProbeModel probe = train_probe(in.train, in.val, sched, a.seed);
  const ProbeOutcome outcome = evaluate_probe(probe, in.test);
  const Tensor scores = probe_scores(probe, in.test.vectors);
  const BootstrapStats boot = bootstrap_eval(scores, in.test.labels, in.test.label_names,
                                             a.bootstrap_frac, a.bootstrap_n, a.seed);

  // Per-label metrics on the full test set; a label undefined there (single
  // class) stays null rather than failing the report.
  ordered_json per_label = ordered_json::array();
  const int64_t m = in.test.labels.rows();
  const int64_t n = in.test.labels.cols();
  for (int64_t j = 0; j < n; ++j) {
    std::vector<float> s(static_cast<size_t>(m));
    std::vector<uint8_t> y(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
      s[static_cast<size_t>(i)] = scores.data()[static_cast<size_t>(i * n + j)];
      y[static_cast<size_t>(i)] =
          in.test.labels.data()[static_cast<size_t>(i * n + j)] == 1.0f ? 1 : 0;
    }
    ordered_json e{{"name", in.test.label_names[static_cast<size_t>(j)]}};
    try {
      e["roc"] = roc_auc(s, y);
    } catch (const DataError&) {
      e["roc"] = nullptr;
    }
    try {
      e["ap"] = average_precision(s, y);
    } catch (const DataError&) {
      e["ap"] = nullptr;
    }
    per_label.push_back(std::move(e));
  }

  std::vector<std::string> warnings = outcome.warnings;
  warnings.insert(warnings.end(), boot.warnings.begin(), boot.warnings.end());

  ordered_json report;
  report["dataset"] = dataset;
  report["objective"] = in.objective;
  report["roc_macro"] = outcome.roc_macro;
  report["map_macro"] = outcome.map_macro;
  report["per_label"] = std::move(per_label);
  report["bootstrap"] = bootstrap_json(boot);
  report["protocol"] = ordered_json{{"train_fraction", 1.0},
                                    {"repeat_index", -1},
                                    {"probe_epochs", sched.epochs},
                                    {"probe_steps_per_epoch", sched.steps_per_epoch},
                                    {"probe_batch_size", sched.batch_size},
                                    {"probe_lr", sched.lr},
                                    {"best_epoch", probe.best_epoch},
                                    {"seed", a.seed}};
  report["checkpoint"] = checkpoint_json(in.ckpt, a.checkpoint, in.digest);
  report["warnings"] = warnings;

  const std::string json_path = a.output_dir + "/probe_report.json";
  const std::string csv_path = a.output_dir + "/probe_report.csv";
  write_text(json_path, report.dump(2) + "\n");
  write_text(csv_path, std::string(kCellHeader) + cell_row(dataset, in.objective, 100.0, -1, boot));

  std::cout << "probe " << in.objective << " on " << dataset << ": roc_macro "
            << fmt4(outcome.roc_macro) << ", map_macro " << fmt4(outcome.map_macro) << "\n";
  std::cout << "bootstrap (n=" << boot.n_resamples << ", fraction=" << fmt(boot.fraction)
            << "): roc " << fmt4(boot.mean_roc) << " +/- " << fmt4(boot.std_roc) << ", map "
            << fmt4(boot.mean_map) << " +/- " << fmt4(boot.std_map) << "\n";
  std::cout << "report: " << json_path << "\n";
}

// ---- limited ----

struct LimitedArgs {
  ProbeArgs base;
  std::vector<double> percentages = {1.0, 5.0, 10.0, 20.0};
  int64_t repeats = 4;
};

void run_limited(const LimitedArgs& a) {
  std::filesystem::create_directories(a.base.output_dir);
  const ProbeSchedule sched = schedule_of(a.base);
  const EvalInputs in = load_eval_inputs(a.base.checkpoint, a.base.manifest, a.base.output_dir);
  const std::string dataset =
      a.base.dataset.empty() ? default_dataset(a.base.manifest) : a.base.dataset;

  const std::vector<LimitedCell> cells =
      limited_data_protocol(in.train, in.val, in.test, sched, a.percentages, a.repeats,
                            a.base.seed, a.base.bootstrap_frac, a.base.bootstrap_n);

  std::string csv(kCellHeader);
  ordered_json jcells = ordered_json::array();
  for (const LimitedCell& cell : cells) {
    csv += cell_row(dataset, in.objective, cell.percentage, cell.repeat, cell.bootstrap);
    jcells.push_back(ordered_json{{"percentage", cell.percentage},
                                  {"repeat", cell.repeat},
                                  {"n_train", cell.n_train},
                                  {"roc_macro", cell.roc_macro},
                                  {"map_macro", cell.map_macro},
                                  {"bootstrap", bootstrap_json(cell.bootstrap)},
                                  {"warnings", cell.warnings}});
    std::cout << "  pct " << fmt(cell.percentage) << " repeat " << cell.repeat << ": roc "
              << fmt4(cell.roc_macro) << ", map " << fmt4(cell.map_macro) << " (n_train "
              << cell.n_train << ")\n";
  }

  ordered_json report;
  report["dataset"] = dataset;
  report["objective"] = in.objective;
  report["protocol"] = ordered_json{{"percentages", a.percentages},
                                    {"repeats", a.repeats},
                                    {"probe_epochs", sched.epochs},
                                    {"probe_steps_per_epoch", sched.steps_per_epoch},
                                    {"probe_batch_size", sched.batch_size},
                                    {"probe_lr", sched.lr},
                                    {"bootstrap_n", a.base.bootstrap_n},
                                    {"bootstrap_fraction", a.base.bootstrap_frac},
                                    {"seed", a.base.seed}};
  report["checkpoint"] = checkpoint_json(in.ckpt, a.base.checkpoint, in.digest);
  report["cells"] = std::move(jcells);

  const std::string csv_path = a.base.output_dir + "/limited_cells.csv";
  write_text(csv_path, csv);
  write_text(a.base.output_dir + "/limited_report.json", report.dump(2) + "\n");
  std::cout << "limited campaign on " << dataset << ": " << cells.size() << " cells\n";
  std::cout << "cells: " << csv_path << "\n";
}

// ---- compare ----

struct CompareArgs {
  std::string report_dir;
  std::string output_dir;
};

void run_compare(const CompareArgs& a) {
  if (!std::filesystem::is_directory(a.report_dir)) {
    raise<DataError>("compare: '", a.report_dir, "' is not a directory");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(a.report_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());

  struct Entry {
    double roc_mean, roc_std, map_mean, map_std;
  };
  std::map<std::string, std::map<std::string, std::vector<Entry>>> grouped;
  size_t n_valid = 0;
  for (const auto& f : files) {
    try {
      std::ifstream ifs(f);
      if (!ifs) throw std::runtime_error("cannot open file");
      const auto j = nlohmann::json::parse(ifs);
      // Campaign files share the directory but rank per-cell, not per-run.
      if (j.is_object() && j.contains("cells")) continue;
      const auto dataset = j.at("dataset").get<std::string>();
      const auto objective = j.at("objective").get<std::string>();
      const auto& b = j.at("bootstrap");
      grouped[dataset][objective].push_back(
          Entry{b.at("mean_roc").get<double>(), b.at("std_roc").get<double>(),
                b.at("mean_map").get<double>(), b.at("std_map").get<double>()});
      ++n_valid;
    } catch (const std::exception& e) {
      std::cerr << "compare: skipping '" << f.string() << "': " << e.what() << "\n";
    }
  }
  if (n_valid == 0) raise<DataError>("compare: no valid probe report under '", a.report_dir, "'");

  std::string csv = "dataset,objective,n_reports,roc_mean,roc_std,map_mean,map_std\n";
  std::string text;
  for (const auto& [dataset, objectives] : grouped) {
    struct Row {
      std::string objective;
      size_t n = 0;
      double roc_mean = 0, roc_std = 0, map_mean = 0, map_std = 0;
    };
    std::vector<Row> rows;
    for (const auto& [objective, entries] : objectives) {
      Row r;
      r.objective = objective;
      r.n = entries.size();
      for (const Entry& e : entries) {
        r.roc_mean += e.roc_mean;
        r.roc_std += e.roc_std;
        r.map_mean += e.map_mean;
        r.map_std += e.map_std;
      }
      const auto k = static_cast<double>(entries.size());
      r.roc_mean /= k;
      r.roc_std /= k;
      r.map_mean /= k;
      r.map_std /= k;
      rows.push_back(std::move(r));
    }
    // Best mean ROC first; exact ties fall back to the objective name so the
    // table order is reproducible.
    std::sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) {
      if (x.roc_mean != y.roc_mean) return x.roc_mean > y.roc_mean;
      return x.objective < y.objective;
    });

    size_t width = std::string("objective").size();
    for (const Row& r : rows) width = std::max(width, r.objective.size());
    char line[256];
    text += "dataset: " + dataset + "\n";
    std::snprintf(line, sizeof(line), "  %-*s  %-19s  %-19s  %s\n", static_cast<int>(width),
                  "objective", "roc (mean+/-std)", "map (mean+/-std)", "reports");
    text += line;
    for (const Row& r : rows) {
      const std::string roc = fmt4(r.roc_mean) + " +/- " + fmt4(r.roc_std);
      const std::string map = fmt4(r.map_mean) + " +/- " + fmt4(r.map_std);
      std::snprintf(line, sizeof(line), "  %-*s  %-19s  %-19s  %zu\n", static_cast<int>(width),
                    r.objective.c_str(), roc.c_str(), map.c_str(), r.n);
      text += line;
      csv += dataset + "," + r.objective + "," + std::to_string(r.n) + "," + fmt(r.roc_mean) +
             "," + fmt(r.roc_std) + "," + fmt(r.map_mean) + "," + fmt(r.map_std) + "\n";
    }
    text += "\n";
  }

  const std::string out_dir = a.output_dir.empty() ? a.report_dir : a.output_dir;
  std::filesystem::create_directories(out_dir);
  write_text(out_dir + "/ranking.csv", csv);
  write_text(out_dir + "/ranking.txt", text);
  std::cout << text;
  std::cout << "ranking: " << out_dir << "/ranking.csv\n";
}

// ---- pretrain ----

struct PretrainArgs {
  std::string config_path;
  std::string objective;
  std::string manifest;
  std::string output_dir;
  uint64_t seed = 1;
  int64_t epochs = 20;
  int64_t steps_per_epoch = 64;
  int64_t batch_pairs = 32;
  float lr = 3e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  std::vector<int64_t> hidden_dims;
  float temperature = 0.1f;
  float ema_momentum = 0.996f;
  float center_momentum = 0.9f;
  float teacher_temp = 0.04f;
  float student_temp = 0.1f;
  int64_t n_prototypes = 512;
  float bt_lambda = 5e-3f;
  float vicreg_inv = 25.0f;
  float vicreg_var = 25.0f;
  float vicreg_cov = 1.0f;
  float vicreg_gamma = 1.0f;
  bool use_predictor = true;
};

void run_pretrain(const CLI::App* cmd, const PretrainArgs& a) {
  // Config file first, then every flag the user actually passed on top.
  RunConfig cfg;
  if (!a.config_path.empty()) cfg = load_run_config(a.config_path);
  const auto given = [&](const char* flag) { return cmd->count(flag) > 0; };
  if (given("--objective")) cfg.objective.kind = objective_kind_from_string(a.objective);
  if (given("--manifest")) {
    cfg.data.manifest_path = a.manifest;
    cfg.data.use_synth = false;
  }
  if (given("--output-dir")) cfg.output_dir = a.output_dir;
  if (given("--seed")) cfg.seed = a.seed;
  if (given("--epochs")) cfg.schedule.epochs = a.epochs;
  if (given("--steps-per-epoch")) cfg.schedule.steps_per_epoch = a.steps_per_epoch;
  if (given("--batch-pairs")) cfg.schedule.batch_pairs = a.batch_pairs;
  if (given("--lr")) cfg.optimizer.lr = a.lr;
  if (given("--beta1")) cfg.optimizer.beta1 = a.beta1;
  if (given("--beta2")) cfg.optimizer.beta2 = a.beta2;
  if (given("--hidden-dims")) cfg.encoder.hidden_dims = a.hidden_dims;
  if (given("--temperature")) cfg.objective.temperature = a.temperature;
  if (given("--ema-momentum")) cfg.objective.ema_momentum = a.ema_momentum;
  if (given("--center-momentum")) cfg.objective.center_momentum = a.center_momentum;
  if (given("--teacher-temp")) cfg.objective.teacher_temp = a.teacher_temp;
  if (given("--student-temp")) cfg.objective.student_temp = a.student_temp;
  if (given("--n-prototypes")) cfg.objective.n_prototypes = a.n_prototypes;
  if (given("--bt-lambda")) cfg.objective.bt_lambda = a.bt_lambda;
  if (given("--vicreg-inv")) cfg.objective.vicreg_inv = a.vicreg_inv;
  if (given("--vicreg-var")) cfg.objective.vicreg_var = a.vicreg_var;
  if (given("--vicreg-cov")) cfg.objective.vicreg_cov = a.vicreg_cov;
  if (given("--vicreg-gamma")) cfg.objective.vicreg_gamma = a.vicreg_gamma;
  if (given("--use-predictor")) cfg.objective.use_predictor = a.use_predictor;

  const PretrainResult res = pretrain(cfg);
  std::cout << "pretrain " << to_string(cfg.objective.kind) << ": " << res.global_steps
            << " steps, final val loss " << fmt4(res.final_val_loss) << "\n";
  std::cout << "checkpoint: " << res.checkpoint_path << "\n";
  std::cout << "log: " << res.log_path << "\n";
}

// ---- synth-data ----

struct SynthArgs {
  std::string output_dir;
  SynthConfig cfg;
};

void run_synth(const SynthArgs& a) {
  const DatasetManifest m = generate_synth_dataset(a.cfg, a.output_dir);
  std::cout << "synth-data: " << m.tracks.size() << " tracks, " << m.label_names.size()
            << " classes\n";
  std::cout << "manifest: " << a.output_dir << "/manifest.jsonl\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-view self-supervised audio pretext benchmark"};
  app.require_subcommand(1);

  PretrainArgs pa;
  CLI::App* pre = app.add_subcommand("pretrain", "train one pretext objective");
  pre->add_option("--config", pa.config_path, "JSON run config; flags below override it");
  pre->add_option("--objective", pa.objective,
                  "contrastive | byol | clustering | barlow_twins | vicreg");
  pre->add_option("--manifest", pa.manifest, "dataset manifest (overrides the config data source)");
  pre->add_option("--output-dir", pa.output_dir, "run directory");
  pre->add_option("--seed", pa.seed, "run seed")->capture_default_str();
  pre->add_option("--epochs", pa.epochs, "training epochs")->capture_default_str();
  pre->add_option("--steps-per-epoch", pa.steps_per_epoch, "steps per epoch")
      ->capture_default_str();
  pre->add_option("--batch-pairs", pa.batch_pairs, "view pairs per batch")->capture_default_str();
  pre->add_option("--lr", pa.lr, "Adam learning rate")->capture_default_str();
  pre->add_option("--beta1", pa.beta1, "Adam beta1")->capture_default_str();
  pre->add_option("--beta2", pa.beta2, "Adam beta2")->capture_default_str();
  pre->add_option("--hidden-dims", pa.hidden_dims, "encoder hidden widths, comma separated")
      ->delimiter(',');
  pre->add_option("--temperature", pa.temperature, "contrastive temperature")
      ->capture_default_str();
  pre->add_option("--ema-momentum", pa.ema_momentum, "teacher EMA momentum")
      ->capture_default_str();
  pre->add_option("--center-momentum", pa.center_momentum, "clustering center momentum")
      ->capture_default_str();
  pre->add_option("--teacher-temp", pa.teacher_temp, "clustering teacher temperature")
      ->capture_default_str();
  pre->add_option("--student-temp", pa.student_temp, "clustering student temperature")
      ->capture_default_str();
  pre->add_option("--n-prototypes", pa.n_prototypes, "clustering prototype count")
      ->capture_default_str();
  pre->add_option("--bt-lambda", pa.bt_lambda, "barlow twins off-diagonal weight")
      ->capture_default_str();
  pre->add_option("--vicreg-inv", pa.vicreg_inv, "vicreg invariance weight")
      ->capture_default_str();
  pre->add_option("--vicreg-var", pa.vicreg_var, "vicreg variance weight")->capture_default_str();
  pre->add_option("--vicreg-cov", pa.vicreg_cov, "vicreg covariance weight")
      ->capture_default_str();
  pre->add_option("--vicreg-gamma", pa.vicreg_gamma, "vicreg variance target")
      ->capture_default_str();
  pre->add_option("--use-predictor", pa.use_predictor, "byol prediction head on/off")
      ->capture_default_str();

  ProbeArgs ba;
  CLI::App* prb = app.add_subcommand("probe", "frozen-encoder linear probe with bootstrap");
  add_probe_flags(prb, ba);

  LimitedArgs la;
  CLI::App* lim = app.add_subcommand("limited", "limited-data probe campaign");
  add_probe_flags(lim, la.base);
  lim->add_option("--percentages", la.percentages, "train percentages, comma separated")
      ->delimiter(',')
      ->capture_default_str();
  lim->add_option("--repeats", la.repeats, "subset redraws per percentage")->capture_default_str();

  CompareArgs ca;
  CLI::App* cmp = app.add_subcommand("compare", "rank probe reports per dataset");
  cmp->add_option("report_dir", ca.report_dir, "directory holding probe report JSONs")
      ->required();
  cmp->add_option("--output-dir", ca.output_dir, "where to write ranking files (default: report_dir)");

  SynthArgs sa;
  CLI::App* syn = app.add_subcommand("synth-data", "generate the synthetic labeled dataset");
  syn->add_option("--output-dir", sa.output_dir, "dataset directory")->required();
  syn->add_option("--classes", sa.cfg.n_classes, "number of classes")->capture_default_str();
  syn->add_option("--tracks", sa.cfg.n_tracks, "number of tracks")->capture_default_str();
  syn->add_option("--duration", sa.cfg.duration_s, "track duration, seconds")
      ->capture_default_str();
  syn->add_option("--seed", sa.cfg.seed, "dataset seed")->capture_default_str();
  syn->add_option("--train-frac", sa.cfg.train_frac, "train split fraction")
      ->capture_default_str();
  syn->add_option("--val-frac", sa.cfg.val_frac, "val split fraction")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad or missing flags are config errors
  }

  try {
    if (pre->parsed()) run_pretrain(pre, pa);
    if (prb->parsed()) run_probe(ba);
    if (lim->parsed()) run_limited(la);
    if (cmp->parsed()) run_compare(ca);
    if (syn->parsed()) run_synth(sa);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
