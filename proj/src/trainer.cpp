#include "pretext/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pretext/audio.hpp"
#include "pretext/error.hpp"
#include "pretext/rng.hpp"
#include "pretext/wav.hpp"

namespace pretext {
namespace {

using ordered_json = nlohmann::ordered_json;

// Substream ids, unique across the project (synth owns 1-2, metrics 3,
// probe 4-5).
constexpr uint64_t kModelStream = 6;
constexpr uint64_t kHoldoutStream = 7;
constexpr uint64_t kBatchStream = 8;
constexpr uint64_t kValBatchStream = 9;

constexpr int64_t kProjectorIn = 1024;
constexpr int64_t kProjectorOut = 2048;

// ---- config JSON ----

void expect_keys(const ordered_json& j, const char* where,
                 std::initializer_list<const char*> allowed) {
  for (const auto& kv : j.items()) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || kv.key() == k;
    if (!ok) raise<ConfigError>(where, ": unknown field '", kv.key(), "'");
  }
}

const ordered_json& require_object(const ordered_json& j, const char* where) {
  if (!j.is_object()) raise<ConfigError>(where, " must be a JSON object");
  return j;
}

double as_number(const ordered_json& j, const char* path) {
  if (!j.is_number()) raise<ConfigError>(path, " must be a number");
  return j.get<double>();
}

int64_t as_int(const ordered_json& j, const char* path) {
  if (!j.is_number_integer()) raise<ConfigError>(path, " must be an integer");
  return j.get<int64_t>();
}

uint64_t as_uint(const ordered_json& j, const char* path) {
  if (!j.is_number_unsigned()) raise<ConfigError>(path, " must be a non-negative integer");
  return j.get<uint64_t>();
}

bool as_bool(const ordered_json& j, const char* path) {
  if (!j.is_boolean()) raise<ConfigError>(path, " must be a boolean");
  return j.get<bool>();
}

std::string as_string(const ordered_json& j, const char* path) {
  if (!j.is_string()) raise<ConfigError>(path, " must be a string");
  return j.get<std::string>();
}

ObjectiveConfig parse_objective(const ordered_json& j) {
  require_object(j, "objective");
  expect_keys(j, "objective",
              {"kind", "temperature", "ema_momentum", "center_momentum", "teacher_temp",
               "student_temp", "n_prototypes", "bt_lambda", "vicreg_inv", "vicreg_var",
               "vicreg_cov", "vicreg_gamma", "vicreg_eps", "use_predictor"});
  ObjectiveConfig oc;
  if (!j.contains("kind")) raise<ConfigError>("objective.kind is required");
  oc.kind = objective_kind_from_string(as_string(j["kind"], "objective.kind"));
  auto f = [&](const char* key, float& field) {
    if (j.contains(key)) {
      field = static_cast<float>(as_number(j[key], ("objective." + std::string(key)).c_str()));
    }
  };
  f("temperature", oc.temperature);
  f("ema_momentum", oc.ema_momentum);
  f("center_momentum", oc.center_momentum);
  f("teacher_temp", oc.teacher_temp);
  f("student_temp", oc.student_temp);
  if (j.contains("n_prototypes")) oc.n_prototypes = as_int(j["n_prototypes"], "objective.n_prototypes");
  f("bt_lambda", oc.bt_lambda);
  f("vicreg_inv", oc.vicreg_inv);
  f("vicreg_var", oc.vicreg_var);
  f("vicreg_cov", oc.vicreg_cov);
  f("vicreg_gamma", oc.vicreg_gamma);
  f("vicreg_eps", oc.vicreg_eps);
  if (j.contains("use_predictor")) oc.use_predictor = as_bool(j["use_predictor"], "objective.use_predictor");
  oc.validate();
  return oc;
}

EncoderConfig parse_encoder(const ordered_json& j) {
  require_object(j, "encoder");
  expect_keys(j, "encoder", {"frame_dim", "hidden_dims", "embedding_dim"});
  EncoderConfig ec;
  if (j.contains("frame_dim")) ec.frame_dim = as_int(j["frame_dim"], "encoder.frame_dim");
  if (j.contains("embedding_dim")) {
    ec.embedding_dim = as_int(j["embedding_dim"], "encoder.embedding_dim");
  }
  if (j.contains("hidden_dims")) {
    if (!j["hidden_dims"].is_array()) raise<ConfigError>("encoder.hidden_dims must be an array");
    ec.hidden_dims.clear();
    for (const auto& d : j["hidden_dims"]) {
      ec.hidden_dims.push_back(as_int(d, "encoder.hidden_dims"));
    }
  }
  if (ec.frame_dim < 1) raise<ConfigError>("encoder.frame_dim must be positive");
  if (ec.embedding_dim < 1) raise<ConfigError>("encoder.embedding_dim must be positive");
  for (int64_t d : ec.hidden_dims) {
    if (d < 1) raise<ConfigError>("encoder.hidden_dims entries must be positive");
  }
  return ec;
}

DataConfig parse_data(const ordered_json& j) {
  require_object(j, "data");
  expect_keys(j, "data", {"manifest", "synth"});
  DataConfig d;
  if (j.contains("manifest")) d.manifest_path = as_string(j["manifest"], "data.manifest");
  if (j.contains("synth")) {
    const ordered_json& s = require_object(j["synth"], "data.synth");
    expect_keys(s, "data.synth",
                {"n_classes", "n_tracks", "duration_s", "seed", "train_frac", "val_frac"});
    d.use_synth = true;
    if (s.contains("n_classes")) d.synth.n_classes = static_cast<int>(as_int(s["n_classes"], "data.synth.n_classes"));
    if (s.contains("n_tracks")) d.synth.n_tracks = static_cast<int>(as_int(s["n_tracks"], "data.synth.n_tracks"));
    if (s.contains("duration_s")) d.synth.duration_s = as_number(s["duration_s"], "data.synth.duration_s");
    if (s.contains("seed")) d.synth.seed = as_uint(s["seed"], "data.synth.seed");
    if (s.contains("train_frac")) d.synth.train_frac = as_number(s["train_frac"], "data.synth.train_frac");
    if (s.contains("val_frac")) d.synth.val_frac = as_number(s["val_frac"], "data.synth.val_frac");
  }
  d.validate();
  return d;
}

ScheduleConfig parse_schedule(const ordered_json& j) {
  require_object(j, "schedule");
  expect_keys(j, "schedule", {"epochs", "steps_per_epoch", "batch_pairs"});
  ScheduleConfig sc;
  if (j.contains("epochs")) sc.epochs = as_int(j["epochs"], "schedule.epochs");
  if (j.contains("steps_per_epoch")) sc.steps_per_epoch = as_int(j["steps_per_epoch"], "schedule.steps_per_epoch");
  if (j.contains("batch_pairs")) sc.batch_pairs = as_int(j["batch_pairs"], "schedule.batch_pairs");
  sc.validate();
  return sc;
}

OptimizerSettings parse_optimizer(const ordered_json& j) {
  require_object(j, "optimizer");
  expect_keys(j, "optimizer", {"lr", "betas"});
  OptimizerSettings os;
  if (j.contains("lr")) os.lr = static_cast<float>(as_number(j["lr"], "optimizer.lr"));
  if (j.contains("betas")) {
    const ordered_json& b = j["betas"];
    if (!b.is_array() || b.size() != 2) raise<ConfigError>("optimizer.betas must be a 2-element array");
    os.beta1 = static_cast<float>(as_number(b[0], "optimizer.betas[0]"));
    os.beta2 = static_cast<float>(as_number(b[1], "optimizer.betas[1]"));
  }
  os.validate();
  return os;
}

// ---- run internals ----

struct CachedTrack {
  Mel mel;
  int64_t n_samples = 0;
  int64_t track_id = 0;
};

std::vector<CachedTrack> build_mel_cache(const DatasetManifest& man,
                                         const std::vector<size_t>& rows, MelComputer& mc) {
  std::vector<CachedTrack> cache;
  cache.reserve(rows.size());
  for (size_t r : rows) {
    const TrackInfo& info = man.tracks[r];
    Waveform w;
    try {
      w = standardize(read_wav(man.track_path(r)));
    } catch (const DataError& e) {
      raise<DataError>("track ", info.id, ": ", e.what());
    }
    const int64_t n = static_cast<int64_t>(w.samples.size());
    if (n < kSegmentSamples + kGapMinSamples) {
      raise<DataError>("track ", info.id, " ('", info.path, "'): a view pair needs at least ",
                       static_cast<double>(kSegmentSamples + kGapMinSamples) / kSampleRate,
                       " s, track has ", static_cast<double>(n) / kSampleRate, " s");
    }
    cache.push_back({mc.log_mel(w), n, info.id});
  }
  return cache;
}

struct PairBatch {
  Tensor a, b;
};

// Views are hop-aligned, so each one is a contiguous row block of the cached
// full-track mel.
PairBatch sample_pair_batch(const std::vector<CachedTrack>& cache, Rng& rng, int64_t pairs) {
  const int64_t seg_floats = kSegmentFrames * kMelBins;
  std::vector<float> a(static_cast<size_t>(pairs * seg_floats));
  std::vector<float> b(a.size());
  for (int64_t p = 0; p < pairs; ++p) {
    const CachedTrack& t = cache[rng.below(cache.size())];
    const ViewPair vp = sample_view_pair(rng, t.n_samples);
    std::memcpy(a.data() + p * seg_floats, t.mel.row(vp.anchor_start / kHopLength),
                seg_floats * sizeof(float));
    std::memcpy(b.data() + p * seg_floats, t.mel.row(vp.positive_start / kHopLength),
                seg_floats * sizeof(float));
  }
  return {make_tensor({pairs * kSegmentFrames, kMelBins}, std::move(a)),
          make_tensor({pairs * kSegmentFrames, kMelBins}, std::move(b))};
}

int64_t frames_per_segment_of(const PretextModel& m, const Tensor& mel, int64_t pairs) {
  if (!mel.defined() || mel.rank() != 2) raise<ShapeError>("train step: mel batch must be rank 2");
  if (pairs < 2) raise<ValueError>("train step: need at least 2 pairs, got ", pairs);
  if (mel.cols() != m.encoder.cfg.frame_dim) {
    raise<ShapeError>("train step: mel frame dim ", mel.cols(), ", encoder expects ",
                      m.encoder.cfg.frame_dim);
  }
  if (mel.rows() % pairs != 0 || mel.rows() / pairs < 1) {
    raise<ShapeError>("train step: ", mel.rows(), " mel rows do not split into ", pairs,
                      " segments");
  }
  return mel.rows() / pairs;
}

struct ForwardResult {
  Tensor loss;
  Tensor teacher_logits;  // {2B, K}, clustering only, feeds the center update
  double embedding_std = 0.0;
  double cluster_entropy = 0.0;
  bool has_cluster_entropy = false;
};

// The objective-independent skeleton: encode both views, project, hand the
// projections to the loss. Teacher passes run on the frozen copies (their
// forward records no graph) with batch statistics but frozen running
// buffers, which only ever move by EMA from the student.
ForwardResult forward_loss(PretextModel& m, const Tensor& mel_a, const Tensor& mel_b,
                           int64_t pairs, bool update_running) {
  const int64_t frames = frames_per_segment_of(m, mel_a, pairs);
  if (mel_b.shape() != mel_a.shape()) {
    raise<ShapeError>("train step: view batches differ in shape");
  }
  const Tensor emb_a = encode_batch(m.encoder, mel_a, pairs, frames).embedding;
  const Tensor emb_b = encode_batch(m.encoder, mel_b, pairs, frames).embedding;
  const Tensor proj_a = head_forward(m.projector, emb_a, true, update_running);
  const Tensor proj_b = head_forward(m.projector, emb_b, true, update_running);

  auto teacher_projection = [&](const Tensor& mel) {
    const Tensor emb = encode_batch(m.teacher_encoder, mel, pairs, frames).embedding;
    return head_forward(m.teacher_projector, emb, true, false);
  };

  ForwardResult r;
  r.embedding_std = embedding_std(proj_a);
  switch (m.objective.kind) {
    case ObjectiveKind::contrastive:
      r.loss = nt_xent(proj_a, proj_b, m.objective.temperature);
      break;
    case ObjectiveKind::barlow_twins:
      r.loss = barlow_twins(proj_a, proj_b, m.objective.bt_lambda);
      break;
    case ObjectiveKind::vicreg:
      r.loss = vicreg(proj_a, proj_b, m.objective);
      break;
    case ObjectiveKind::byol: {
      const Tensor t_a = teacher_projection(mel_a);
      const Tensor t_b = teacher_projection(mel_b);
      const Tensor p_a = m.has_predictor ? head_forward(m.predictor, proj_a, true, update_running) : proj_a;
      const Tensor p_b = m.has_predictor ? head_forward(m.predictor, proj_b, true, update_running) : proj_b;
      r.loss = scale(add(byol_loss(p_a, t_b), byol_loss(p_b, t_a)), 0.5f);
      break;
    }
    case ObjectiveKind::clustering: {
      const Tensor s_a = matmul(proj_a, m.prototypes);
      const Tensor s_b = matmul(proj_b, m.prototypes);
      const Tensor t_a = matmul(teacher_projection(mel_a), m.teacher_prototypes);
      const Tensor t_b = matmul(teacher_projection(mel_b), m.teacher_prototypes);
      r.loss = scale(add(clustering_loss(s_a, t_b, m.center, m.objective.student_temp,
                                         m.objective.teacher_temp),
                         clustering_loss(s_b, t_a, m.center, m.objective.student_temp,
                                         m.objective.teacher_temp)),
                     0.5f);
      r.teacher_logits = concat_rows(t_a, t_b);
      r.cluster_entropy = cluster_usage_entropy(
          argmax_rows(sub_rowvec(r.teacher_logits, m.center)), m.objective.n_prototypes);
      r.has_cluster_entropy = true;
      break;
    }
  }
  return r;
}

std::string join_dims(const std::vector<int64_t>& dims) {
  std::string out;
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(dims[i]);
  }
  return out;
}

void save_run_checkpoint(const PretextModel& m, const RunConfig& cfg, int64_t epoch,
                         int64_t global_step, const std::string& path) {
  Checkpoint c = snapshot(m.checkpoint_scope());
  c.set_meta("objective", to_string(cfg.objective.kind));
  c.set_meta("seed", std::to_string(cfg.seed));
  c.set_meta("epoch", std::to_string(epoch));
  c.set_meta("global_step", std::to_string(global_step));
  c.set_meta("encoder.frame_dim", std::to_string(cfg.encoder.frame_dim));
  c.set_meta("encoder.hidden_dims", join_dims(cfg.encoder.hidden_dims));
  c.set_meta("encoder.embedding_dim", std::to_string(cfg.encoder.embedding_dim));
  save_checkpoint(c, path);
}

int64_t meta_int(const Checkpoint& c, const char* key) {
  const std::string* v = c.find_meta(key);
  if (v == nullptr) raise<DataError>("checkpoint meta: missing '", key, "'");
  try {
    size_t used = 0;
    const int64_t n = std::stoll(*v, &used);
    if (used != v->size()) throw std::invalid_argument("trailing characters");
    return n;
  } catch (const std::exception&) {
    raise<DataError>("checkpoint meta: '", key, "' is not an integer: '", *v, "'");
  }
}

}  // namespace

// ---- config ----

void ScheduleConfig::validate() const {
  if (epochs < 1) raise<ConfigError>("schedule.epochs must be >= 1, got ", epochs);
  if (steps_per_epoch < 1) {
    raise<ConfigError>("schedule.steps_per_epoch must be >= 1, got ", steps_per_epoch);
  }
  if (batch_pairs < 2) {
    raise<ConfigError>("schedule.batch_pairs must be >= 2 (objectives need batch statistics "
                       "or negatives), got ",
                       batch_pairs);
  }
}

void OptimizerSettings::validate() const {
  if (!(lr > 0.0f) || !std::isfinite(lr)) raise<ConfigError>("optimizer.lr must be positive");
  if (!(beta1 >= 0.0f && beta1 < 1.0f)) raise<ConfigError>("optimizer.betas[0] must be in [0, 1)");
  if (!(beta2 >= 0.0f && beta2 < 1.0f)) raise<ConfigError>("optimizer.betas[1] must be in [0, 1)");
}

void DataConfig::validate() const {
  if (manifest_path.empty() == !use_synth) {
    raise<ConfigError>("data: exactly one of 'manifest' and 'synth' must be given");
  }
}

void RunConfig::validate() const {
  objective.validate();
  schedule.validate();
  optimizer.validate();
  data.validate();
  if (encoder.frame_dim != kMelBins) {
    raise<ConfigError>("encoder.frame_dim must be ", kMelBins,
                       " (the mel frontend's bin count), got ", encoder.frame_dim);
  }
  if (output_dir.empty()) raise<ConfigError>("output_dir must be set");
}

RunConfig parse_run_config(const std::string& json_text) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const std::exception& e) {
    raise<ConfigError>("config: not valid JSON: ", e.what());
  }
  require_object(j, "config");
  expect_keys(j, "config",
              {"objective", "encoder", "data", "schedule", "optimizer", "seed", "output_dir"});
  RunConfig cfg;
  if (j.contains("objective")) cfg.objective = parse_objective(j["objective"]);
  if (j.contains("encoder")) cfg.encoder = parse_encoder(j["encoder"]);
  if (j.contains("data")) cfg.data = parse_data(j["data"]);
  if (j.contains("schedule")) cfg.schedule = parse_schedule(j["schedule"]);
  if (j.contains("optimizer")) cfg.optimizer = parse_optimizer(j["optimizer"]);
  if (j.contains("seed")) cfg.seed = as_uint(j["seed"], "seed");
  if (j.contains("output_dir")) cfg.output_dir = as_string(j["output_dir"], "output_dir");
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise<ConfigError>("config: cannot read '", path, "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::string run_config_json(const RunConfig& cfg) {
  ordered_json j;
  j["objective"] = {{"kind", to_string(cfg.objective.kind)},
                    {"temperature", cfg.objective.temperature},
                    {"ema_momentum", cfg.objective.ema_momentum},
                    {"center_momentum", cfg.objective.center_momentum},
                    {"teacher_temp", cfg.objective.teacher_temp},
                    {"student_temp", cfg.objective.student_temp},
                    {"n_prototypes", cfg.objective.n_prototypes},
                    {"bt_lambda", cfg.objective.bt_lambda},
                    {"vicreg_inv", cfg.objective.vicreg_inv},
                    {"vicreg_var", cfg.objective.vicreg_var},
                    {"vicreg_cov", cfg.objective.vicreg_cov},
                    {"vicreg_gamma", cfg.objective.vicreg_gamma},
                    {"vicreg_eps", cfg.objective.vicreg_eps},
                    {"use_predictor", cfg.objective.use_predictor}};
  j["encoder"] = {{"frame_dim", cfg.encoder.frame_dim},
                  {"hidden_dims", cfg.encoder.hidden_dims},
                  {"embedding_dim", cfg.encoder.embedding_dim}};
  if (cfg.data.use_synth) {
    j["data"] = {{"synth",
                  {{"n_classes", cfg.data.synth.n_classes},
                   {"n_tracks", cfg.data.synth.n_tracks},
                   {"duration_s", cfg.data.synth.duration_s},
                   {"seed", cfg.data.synth.seed},
                   {"train_frac", cfg.data.synth.train_frac},
                   {"val_frac", cfg.data.synth.val_frac}}}};
  } else {
    j["data"] = {{"manifest", cfg.data.manifest_path}};
  }
  j["schedule"] = {{"epochs", cfg.schedule.epochs},
                   {"steps_per_epoch", cfg.schedule.steps_per_epoch},
                   {"batch_pairs", cfg.schedule.batch_pairs}};
  j["optimizer"] = {{"lr", cfg.optimizer.lr},
                    {"betas", std::vector<float>{cfg.optimizer.beta1, cfg.optimizer.beta2}}};
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  return j.dump(2);
}

// ---- model assembly ----

ParamSet PretextModel::student_params() const {
  ParamSet s;
  s.add_all(encoder.all());
  s.add_all(projector.all());
  if (has_predictor) s.add_all(predictor.all());
  if (has_prototypes) s.add(prototypes);
  return s;
}

ParamSet PretextModel::ema_student_scope() const {
  ParamSet s;
  s.add_all(encoder.all());
  s.add_all(projector.all());
  if (has_prototypes) s.add(prototypes);
  return s;
}

ParamSet PretextModel::ema_teacher_scope() const {
  if (!has_teacher) raise<ValueError>("model has no teacher");
  ParamSet s;
  s.add_all(teacher_encoder.all());
  s.add_all(teacher_projector.all());
  if (has_prototypes) s.add(teacher_prototypes);
  return s;
}

ParamSet PretextModel::checkpoint_scope() const {
  ParamSet s = student_params();
  if (has_teacher) s.add_all(ema_teacher_scope());
  if (has_prototypes) s.add(center);
  return s;
}

PretextModel make_pretext_model(const ObjectiveConfig& objective, const EncoderConfig& encoder,
                                uint64_t seed) {
  objective.validate();
  if (encoder.embedding_dim != kProjectorIn) {
    raise<ConfigError>("encoder.embedding_dim must be ", kProjectorIn,
                       " (the projector and probe contract), got ", encoder.embedding_dim);
  }
  PretextModel m;
  m.objective = objective;
  // All component seeds are drawn up front so the encoder and projector
  // start identically across objectives for the same run seed.
  Rng init = Rng::substream(seed, {kModelStream});
  const uint64_t encoder_seed = init.next_u64();
  const uint64_t projector_seed = init.next_u64();
  const uint64_t predictor_seed = init.next_u64();
  m.encoder = make_encoder(encoder, encoder_seed);
  m.projector = make_projector(projector_seed);

  switch (objective.kind) {
    case ObjectiveKind::contrastive:
    case ObjectiveKind::barlow_twins:
    case ObjectiveKind::vicreg:
      break;
    case ObjectiveKind::byol:
      m.has_teacher = true;
      if (objective.use_predictor) {
        m.has_predictor = true;
        m.predictor = make_predictor(predictor_seed);
      }
      break;
    case ObjectiveKind::clustering: {
      m.has_teacher = true;
      m.has_prototypes = true;
      const int64_t k = objective.n_prototypes;
      std::vector<float> w(static_cast<size_t>(kProjectorOut * k));
      const double limit = std::sqrt(6.0 / static_cast<double>(kProjectorOut));
      Rng proto_rng(Rng::substream(seed, {kModelStream, 1}));
      for (float& x : w) x = static_cast<float>(proto_rng.uniform(-limit, limit));
      m.prototypes = make_tensor({kProjectorOut, k}, w, true, "prototypes.w");
      m.teacher_prototypes = make_tensor({kProjectorOut, k}, std::move(w), false,
                                         "teacher.prototypes.w");
      m.center = zeros({1, k}, false, "clustering.center");
      break;
    }
  }
  if (m.has_teacher) {
    m.teacher_encoder = frozen_clone(m.encoder, "teacher.");
    m.teacher_projector = frozen_clone(m.projector, "teacher.");
  }
  return m;
}

EncoderConfig encoder_config_from_checkpoint(const Checkpoint& ckpt) {
  EncoderConfig ec;
  ec.frame_dim = meta_int(ckpt, "encoder.frame_dim");
  ec.embedding_dim = meta_int(ckpt, "encoder.embedding_dim");
  const std::string* dims = ckpt.find_meta("encoder.hidden_dims");
  if (dims == nullptr) raise<DataError>("checkpoint meta: missing 'encoder.hidden_dims'");
  ec.hidden_dims.clear();
  std::stringstream ss(*dims);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      size_t used = 0;
      ec.hidden_dims.push_back(std::stoll(part, &used));
      if (used != part.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      raise<DataError>("checkpoint meta: 'encoder.hidden_dims' is not a dim list: '", *dims, "'");
    }
  }
  if (ec.frame_dim < 1 || ec.embedding_dim < 1) {
    raise<DataError>("checkpoint meta: encoder dims must be positive");
  }
  for (int64_t d : ec.hidden_dims) {
    if (d < 1) raise<DataError>("checkpoint meta: encoder dims must be positive");
  }
  return ec;
}

// ---- steps ----

StepStats train_step(PretextModel& m, Adam& opt, const Tensor& mel_a, const Tensor& mel_b,
                     int64_t pairs) {
  ForwardResult r = forward_loss(m, mel_a, mel_b, pairs, true);
  const double loss = r.loss.item();
  if (!std::isfinite(loss)) {
    raise<NumericError>(to_string(m.objective.kind), ": non-finite loss");
  }
  opt.zero_grad();
  backward(r.loss);
  opt.step();
  if (m.has_teacher) {
    ParamSet teacher = m.ema_teacher_scope();
    ema_update(teacher, m.ema_student_scope(), m.objective.ema_momentum);
  }
  if (m.has_prototypes) {
    center_update(m.center, r.teacher_logits, m.objective.center_momentum);
  }
  return {loss, r.embedding_std, r.cluster_entropy, r.has_cluster_entropy};
}

double validation_loss(PretextModel& m, const Tensor& mel_a, const Tensor& mel_b, int64_t pairs) {
  ForwardResult r = forward_loss(m, mel_a, mel_b, pairs, false);
  return r.loss.item();
}

// ---- the full run ----

PretrainResult pretrain(const RunConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);

  const std::string config_path = cfg.output_dir + "/config.json";
  {
    std::ofstream f(config_path, std::ios::trunc);
    if (!f) raise<DataError>("pretrain: cannot write '", config_path, "'");
    f << run_config_json(cfg) << "\n";
  }

  const DatasetManifest man = cfg.data.use_synth
                                  ? generate_synth_dataset(cfg.data.synth, cfg.output_dir + "/data")
                                  : read_manifest(cfg.data.manifest_path);
  const std::vector<size_t> train_rows = man.split_indices("train");
  if (train_rows.size() < 2) {
    raise<DataError>("pretrain: need at least 2 train tracks, manifest has ", train_rows.size());
  }

  // Hold out 5% of the train tracks (at least one) for the per-epoch
  // validation loss; they never feed training batches.
  const size_t n_hold = std::max<size_t>(1, train_rows.size() / 20);
  Rng hold_rng = Rng::substream(cfg.seed, {kHoldoutStream});
  std::vector<size_t> hold_pos = hold_rng.sample_indices(train_rows.size(), n_hold);
  std::sort(hold_pos.begin(), hold_pos.end());
  std::vector<size_t> fit_rows, hold_rows;
  for (size_t i = 0, h = 0; i < train_rows.size(); ++i) {
    if (h < hold_pos.size() && hold_pos[h] == i) {
      hold_rows.push_back(train_rows[i]);
      ++h;
    } else {
      fit_rows.push_back(train_rows[i]);
    }
  }

  MelComputer mc;
  const std::vector<CachedTrack> fit_cache = build_mel_cache(man, fit_rows, mc);
  const std::vector<CachedTrack> hold_cache = build_mel_cache(man, hold_rows, mc);

  PretextModel model = make_pretext_model(cfg.objective, cfg.encoder, cfg.seed);
  const ParamSet student = model.student_params();
  Adam opt(student.trainable(), AdamConfig{cfg.optimizer.lr, cfg.optimizer.beta1,
                                           cfg.optimizer.beta2, 1e-8f});

  const std::string log_path = cfg.output_dir + "/log.jsonl";
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) raise<DataError>("pretrain: cannot write '", log_path, "'");
  auto write_line = [&log](const ordered_json& j) {
    log << j.dump() << "\n";
    log.flush();
  };
  write_line({{"type", "run_start"},
              {"objective", to_string(cfg.objective.kind)},
              {"seed", cfg.seed},
              {"epochs", cfg.schedule.epochs},
              {"steps_per_epoch", cfg.schedule.steps_per_epoch},
              {"batch_pairs", cfg.schedule.batch_pairs},
              {"n_train_tracks", fit_cache.size()},
              {"n_holdout_tracks", hold_cache.size()},
              {"trainable_params", student.total_params()}});

  // Degenerate batches (a zero-norm row under full collapse) abort the same
  // way non-finite losses do: with a log record and a numeric exit.
  auto abort_run = [&](int64_t epoch, int64_t step, const std::string& why) {
    write_line({{"type", "abort"},
                {"objective", to_string(cfg.objective.kind)},
                {"epoch", epoch},
                {"step", step},
                {"reason", why}});
    raise<NumericError>("pretrain[", to_string(cfg.objective.kind), "]: aborted at epoch ", epoch,
                        " step ", step, ": ", why);
  };

  const std::string ckpt_path = cfg.output_dir + "/checkpoint_last.bin";
  Rng batch_rng = Rng::substream(cfg.seed, {kBatchStream});
  int64_t global_step = 0;
  double final_val_loss = 0.0;
  using clock = std::chrono::steady_clock;
  for (int64_t epoch = 0; epoch < cfg.schedule.epochs; ++epoch) {
    for (int64_t step = 0; step < cfg.schedule.steps_per_epoch; ++step) {
      const auto t0 = clock::now();
      const PairBatch batch = sample_pair_batch(fit_cache, batch_rng, cfg.schedule.batch_pairs);
      StepStats st;
      try {
        st = train_step(model, opt, batch.a, batch.b, cfg.schedule.batch_pairs);
      } catch (const NumericError& e) {
        abort_run(epoch, step, e.what());
      } catch (const DomainError& e) {
        abort_run(epoch, step, e.what());
      }
      const double wall_ms =
          std::chrono::duration<double, std::milli>(clock::now() - t0).count();
      ordered_json line{{"type", "step"},        {"epoch", epoch},
                        {"step", step},          {"global_step", global_step},
                        {"loss", st.loss},       {"wall_ms", wall_ms},
                        {"embedding_std", st.embedding_std}};
      if (st.has_cluster_entropy) line["cluster_usage_entropy"] = st.cluster_entropy;
      write_line(line);
      ++global_step;
    }
    // The validation substream is re-derived every epoch, so the same pairs
    // score every epoch and the series is comparable over time.
    Rng val_rng = Rng::substream(cfg.seed, {kValBatchStream});
    const PairBatch val_batch = sample_pair_batch(hold_cache, val_rng, cfg.schedule.batch_pairs);
    try {
      final_val_loss = validation_loss(model, val_batch.a, val_batch.b, cfg.schedule.batch_pairs);
    } catch (const NumericError& e) {
      abort_run(epoch, -1, e.what());
    } catch (const DomainError& e) {
      abort_run(epoch, -1, e.what());
    }
    save_run_checkpoint(model, cfg, epoch, global_step, ckpt_path);
    write_line({{"type", "epoch"},
                {"epoch", epoch},
                {"val_loss", final_val_loss},
                {"checkpoint", "checkpoint_last.bin"}});
  }
  write_line({{"type", "run_end"}, {"global_steps", global_step}, {"final_val_loss", final_val_loss}});
  return {ckpt_path, log_path, config_path, global_step, final_val_loss};
}

}  // namespace pretext
