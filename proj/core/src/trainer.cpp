// Copyright 2026 The thermofield Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "thermofield/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>
#include <tbb/parallel_for.h>

#include "thermofield/image_io.hpp"

namespace thermofield {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (rays_per_batch < 1) throw ConfigError("rays_per_batch must be >= 1");
  if (!(base_lr > 0.0) || !(final_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (warmup_iterations < 0) throw ConfigError("warmup_iterations must be >= 0");
  if (!(warmup_scale > 0.0 && warmup_scale <= 1.0)) {
    throw ConfigError("warmup_scale must lie in (0, 1]");
  }
  if (eval_every < 0 || checkpoint_every < 0) throw ConfigError("periods must be >= 0");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (chunk_rays < 1) throw ConfigError("chunk_rays must be >= 1");
  if (sampler.proposal_samples < 1 || sampler.final_samples < 1) {
    throw ConfigError("sample counts must be >= 1");
  }
  if (!(sampler.eps_pdf > 0.0 && sampler.eps_pdf <= 1.0)) {
    throw ConfigError("eps_pdf must lie in (0, 1]");
  }
  if (!(sampler.near_plane > 0.0)) throw ConfigError("near_plane must be positive");
  field.validate();
  loss.validate();
}

TrainConfig TrainConfig::preset(const std::string& name) {
  TrainConfig c;
  if (name == "paper") return c;
  if (name == "synth-small") {
    c.iterations = 2000;
    c.rays_per_batch = 256;
    c.field.grid.table_size_log2 = 16;
    c.field.proposal_grid.table_size_log2 = 14;
    c.sampler.proposal_samples = 48;
    c.sampler.final_samples = 24;
    c.log_every = 100;
    c.chunk_rays = 128;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected paper or synth-small)");
}

namespace {

json grid_json(const HashGridConfig& g) {
  return {{"num_levels", g.num_levels},
          {"min_resolution", g.min_resolution},
          {"max_resolution", g.max_resolution},
          {"features_per_level", g.features_per_level},
          {"table_size_log2", g.table_size_log2}};
}

json config_json(const TrainConfig& c) {
  json j;
  j["iterations"] = c.iterations;
  j["rays_per_batch"] = c.rays_per_batch;
  j["base_lr"] = c.base_lr;
  j["final_lr"] = c.final_lr;
  j["warmup_iterations"] = c.warmup_iterations;
  j["warmup_scale"] = c.warmup_scale;
  j["mode"] = std::string(field_mode_name(c.field.mode));
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["checkpoint_every"] = c.checkpoint_every;
  j["log_every"] = c.log_every;
  j["chunk_rays"] = c.chunk_rays;
  j["mask_invalid"] = c.mask_invalid;
  j["frozen_groups"] = c.frozen_groups;
  j["loss"] = {{"lambda_r", c.loss.lambda_r},
               {"lambda_t", c.loss.lambda_t},
               {"lambda_dist", c.loss.lambda_dist},
               {"lambda_interl", c.loss.lambda_interl},
               {"interlevel_eps", c.loss.interlevel_eps}};
  j["sampler"] = {{"proposal_samples", c.sampler.proposal_samples},
                  {"final_samples", c.sampler.final_samples},
                  {"eps_pdf", c.sampler.eps_pdf},
                  {"near_plane", c.sampler.near_plane}};
  j["field"] = {{"grid", grid_json(c.field.grid)},
                {"proposal_grid", grid_json(c.field.proposal_grid)},
                {"proposal_hidden_width", c.field.proposal_hidden_width},
                {"hidden_width", c.field.hidden_width},
                {"sh_degree", c.field.sh_degree},
                {"appearance_dim", c.field.appearance_dim}};
  return j;
}

// Reads known keys of `j` into the matching fields; anything else is an error.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + " must be an object");
  }
  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + " has the wrong type");
    }
  }
  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key " + where_ + "." + it.key());
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_grid(const json& j, HashGridConfig& g, const std::string& where) {
  Reader r(j, where);
  r.get("num_levels", g.num_levels);
  r.get("min_resolution", g.min_resolution);
  r.get("max_resolution", g.max_resolution);
  r.get("features_per_level", g.features_per_level);
  r.get("table_size_log2", g.table_size_log2);
  r.finish();
}

TrainConfig config_from(const json& j, TrainConfig c) {
  Reader r(j, "config");
  r.get("iterations", c.iterations);
  r.get("rays_per_batch", c.rays_per_batch);
  r.get("base_lr", c.base_lr);
  r.get("final_lr", c.final_lr);
  r.get("warmup_iterations", c.warmup_iterations);
  r.get("warmup_scale", c.warmup_scale);
  std::string mode(field_mode_name(c.field.mode));
  r.get("mode", mode);
  c.field.mode = parse_field_mode(mode);
  r.get("seed", c.seed);
  r.get("eval_every", c.eval_every);
  r.get("checkpoint_every", c.checkpoint_every);
  r.get("log_every", c.log_every);
  r.get("chunk_rays", c.chunk_rays);
  r.get("mask_invalid", c.mask_invalid);
  r.get("frozen_groups", c.frozen_groups);
  if (const json* l = r.sub("loss")) {
    Reader lr(*l, "config.loss");
    lr.get("lambda_r", c.loss.lambda_r);
    lr.get("lambda_t", c.loss.lambda_t);
    lr.get("lambda_dist", c.loss.lambda_dist);
    lr.get("lambda_interl", c.loss.lambda_interl);
    lr.get("interlevel_eps", c.loss.interlevel_eps);
    lr.finish();
  }
  if (const json* s = r.sub("sampler")) {
    Reader sr(*s, "config.sampler");
    sr.get("proposal_samples", c.sampler.proposal_samples);
    sr.get("final_samples", c.sampler.final_samples);
    sr.get("eps_pdf", c.sampler.eps_pdf);
    sr.get("near_plane", c.sampler.near_plane);
    sr.finish();
  }
  if (const json* f = r.sub("field")) {
    Reader fr(*f, "config.field");
    if (const json* g = fr.sub("grid")) read_grid(*g, c.field.grid, "config.field.grid");
    if (const json* g = fr.sub("proposal_grid")) {
      read_grid(*g, c.field.proposal_grid, "config.field.proposal_grid");
    }
    fr.get("proposal_hidden_width", c.field.proposal_hidden_width);
    fr.get("hidden_width", c.field.hidden_width);
    fr.get("sh_degree", c.field.sh_degree);
    fr.get("appearance_dim", c.field.appearance_dim);
    fr.finish();
  }
  r.finish();
  c.validate();
  return c;
}

}  // namespace

std::string TrainConfig::to_json() const { return config_json(*this).dump(2); }

TrainConfig TrainConfig::from_json(const std::string& text, const TrainConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from(j, base);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  return from_json(text, TrainConfig{});
}

TrainConfig TrainConfig::from_file(const fs::path& file) { return from_file(file, TrainConfig{}); }

TrainConfig TrainConfig::from_file(const fs::path& file, const TrainConfig& base) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str(), base);
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

std::array<double, 3> clamp_unit(const std::array<double, 3>& v) {
  return {std::clamp(v[0], 0.01, 0.99), std::clamp(v[1], 0.01, 0.99),
          std::clamp(v[2], 0.01, 0.99)};
}

FieldModel<float> initial_model(const SceneDataset& data, const TrainConfig& config) {
  config.validate();
  FieldModel<float> m(config.field, static_cast<int>(data.train.size()), data.box, data.bounds,
                      config.seed);
  m.set_background(clamp_unit(data.mean_rgb), std::clamp(data.mean_t_unit, 0.01, 0.99));
  return m;
}

ad::LrSchedule schedule_of(const TrainConfig& c) {
  return ad::LrSchedule{c.base_lr, c.final_lr, c.iterations};
}

std::uint64_t sampling_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ull; }

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

}  // namespace

Trainer::Trainer(const SceneDataset& data, const TrainConfig& config)
    : Trainer(data, config, initial_model(data, config)) {}

Trainer::Trainer(const SceneDataset& data, const TrainConfig& config, FieldModel<float> model)
    : data_(&data),
      config_(config),
      model_(std::move(model)),
      opt_(ad::OptimizerState<float>::zeros(model_.params(), schedule_of(config))),
      rng_(sampling_seed(config.seed)),
      grads_(model_.params(), false) {
  config_.validate();
  for (const auto& g : config_.frozen_groups) {
    bool found = false;
    for (std::size_t b = 0; b < model_.params().size(); ++b) {
      if (model_.params().block(b).group == g) {
        frozen_blocks_.push_back(b);
        found = true;
      }
    }
    if (!found) throw ConfigError("frozen group '" + g + "' does not exist in this mode");
  }
}

Trainer Trainer::resume(const SceneDataset& data, const fs::path& checkpoint, std::ostream* warn) {
  CheckpointData ck = load_checkpoint(checkpoint);
  if (ck.manifest_digest != data.digest && warn != nullptr) {
    *warn << "warning: checkpoint was trained on a different scene manifest\n";
  }
  if (ck.model.num_appearance() != static_cast<int>(data.train.size())) {
    throw DatasetError("checkpoint appearance table does not match the training split");
  }
  Trainer t(data, ck.config, std::move(ck.model));
  t.opt_ = std::move(ck.optimizer);
  t.iteration_ = ck.iteration;
  std::istringstream ss(ck.rng_state);
  ss >> t.rng_;
  if (!ss) throw DatasetError("checkpoint rng state is corrupt");
  return t;
}

double Trainer::lr_at(std::int64_t step) const {
  const double scale = step < config_.warmup_iterations ? config_.warmup_scale : 1.0;
  return opt_.schedule.at(step) * scale;
}

StepStats Trainer::step() {
  const auto start = std::chrono::steady_clock::now();
  const int R = config_.rays_per_batch;
  const RayBatch batch = sample_ray_batch(*data_, R, rng_, config_.sampler.near_plane);
  const int C = config_.chunk_rays;
  const int chunks = (R + C - 1) / C;
  std::vector<std::uint64_t> seeds(chunks);
  for (auto& s : seeds) s = rng_();

  int valid_total = 0;
  for (auto v : batch.t_valid) valid_total += v != 0;

  // Dense per-chunk buffers: at desk scale a chunk touches a large share of
  // the hash tables, so scatter-merging sparse entries costs more than a
  // dense add. Chunk 0 writes into the total directly.
  while (static_cast<int>(spare_.size()) < chunks - 1) {
    spare_.emplace_back(model_.params(), false);
  }
  grads_.zero();
  for (int c = 0; c + 1 < chunks; ++c) spare_[c].zero();
  std::vector<LossParts> results(chunks);
  const LossWeights& lw = config_.loss;

  tbb::parallel_for(0, chunks, [&](int c) {
    const int begin = c * C;
    const int n = std::min(C, R - begin);
    std::mt19937_64 chunk_rng(seeds[c]);
    LossParts& parts = results[c];
    ad::GradientBuffer<float>& grads = c == 0 ? grads_ : spare_[c - 1];

    ad::Tape<float> tape;
    const std::span<const Ray> rays(batch.rays.data() + begin, n);
    const std::vector<int> app(batch.appearance.begin() + begin,
                               batch.appearance.begin() + begin + n);
    const RayGraph<float> graph =
        trace_rays(model_, tape, &grads, rays, app, config_.sampler, &chunk_rng);

    RayTargets<float> targets;
    targets.rgb.resize(n, 3);
    targets.t_unit.resize(n, 1);
    int valid = 0;
    for (int r = 0; r < n; ++r) {
      for (int k = 0; k < 3; ++k) targets.rgb(r, k) = batch.rgb[(begin + r) * 3 + k];
      targets.t_unit(r, 0) = batch.t_unit[begin + r];
      targets.t_valid.push_back(batch.t_valid[begin + r]);
      valid += batch.t_valid[begin + r] != 0;
    }
    const LossGraph<float> lg = build_loss_graph(tape, rays, graph, targets, lw);

    // Chunk terms are means over the chunk; reweight them into batch means.
    const double ray_share = static_cast<double>(n) / R;
    const double t_share = valid_total > 0 ? static_cast<double>(valid) / valid_total : 0.0;
    std::vector<std::pair<ad::Var, float>> terms;
    if (lg.rgb.valid()) {
      parts.rgb = ray_share * lg.parts.rgb;
      if (lw.lambda_r > 0.0) terms.emplace_back(lg.rgb, static_cast<float>(lw.lambda_r * ray_share));
    }
    if (lg.thermal.valid() && valid > 0) {
      parts.thermal = t_share * lg.parts.thermal;
      if (lw.lambda_t > 0.0) {
        terms.emplace_back(lg.thermal, static_cast<float>(lw.lambda_t * t_share));
      }
    }
    parts.distortion = ray_share * lg.parts.distortion;
    if (lw.lambda_dist > 0.0) {
      terms.emplace_back(lg.distortion, static_cast<float>(lw.lambda_dist * ray_share));
    }
    parts.interlevel = ray_share * lg.parts.interlevel;
    if (lw.lambda_interl > 0.0) {
      terms.emplace_back(lg.interlevel, static_cast<float>(lw.lambda_interl * ray_share));
    }
    const ad::Var total = tape.weighted_sum(terms);
    tape.backward(total);
  });

  StepStats stats;
  for (int c = 1; c < chunks; ++c) spare_[c - 1].accumulate_into(grads_);
  for (const auto& p : results) {
    stats.parts.rgb += p.rgb;
    stats.parts.thermal += p.thermal;
    stats.parts.distortion += p.distortion;
    stats.parts.interlevel += p.interlevel;
  }
  stats.thermal_skipped = model_.has_thermal() && valid_total == 0;
  stats.loss = total_loss(stats.parts, config_.loss);  // throws on non-finite terms
  for (std::size_t b : frozen_blocks_) {
    auto g = grads_.dense(b);
    std::fill(g.begin(), g.end(), 0.0f);
  }
  stats.iteration = iteration_;
  stats.lr = lr_at(iteration_);
  const double scale = iteration_ < config_.warmup_iterations ? config_.warmup_scale : 1.0;
  ad::adam_step(opt_, model_.params(), grads_, scale);
  ++iteration_;
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  stats.rays_per_second = secs > 0.0 ? R / secs : 0.0;
  return stats;
}

namespace {

void write_log(std::ostream* log, const json& j) {
  if (log == nullptr) return;
  *log << j.dump() << '\n';
  log->flush();
}

json step_json(const StepStats& s) {
  return {{"iter", s.iteration},         {"loss", s.loss},
          {"rgb", s.parts.rgb},          {"thermal", s.parts.thermal},
          {"distortion", s.parts.distortion}, {"interlevel", s.parts.interlevel},
          {"lr", s.lr},                  {"rays_per_sec", s.rays_per_second}};
}

}  // namespace

StepStats Trainer::run(const fs::path& out_dir, std::ostream* log) {
  fs::create_directories(out_dir);
  StepStats last;
  const auto total = config_.iterations;
  while (iteration_ < total) {
    try {
      last = step();
    } catch (const TrainingError& e) {
      save(out_dir / "checkpoint_last_good.ckpt");
      write_log(log, {{"iter", iteration_}, {"error", e.what()}, {"culprit", e.culprit()}});
      throw;
    }
    if (last.thermal_skipped) {
      write_log(log, {{"iter", last.iteration}, {"warning", "no valid thermal pixel in batch"}});
    }
    if (last.iteration % config_.log_every == 0 || last.iteration + 1 == total) {
      write_log(log, step_json(last));
    }
    if (config_.checkpoint_every > 0 && iteration_ % config_.checkpoint_every == 0 &&
        iteration_ < total) {
      save(out_dir / "checkpoint_latest.ckpt");
    }
    if (config_.eval_every > 0 && iteration_ % config_.eval_every == 0 && !data_->test.empty()) {
      const NeuralField<float> field(model_);
      RenderOptions ro;
      ro.sampler = config_.sampler;
      double mae_sum = 0.0;
      int n = 0;
      for (int fi : data_->test) {
        const RenderedView v = render_view(field, data_->frames[fi].camera, ro);
        if (!v.thermal.size()) continue;
        mae_sum += mae(v.thermal, data_->frames[fi].thermal);
        ++n;
      }
      if (n > 0) write_log(log, {{"iter", iteration_}, {"eval_thermal_mae", mae_sum / n}});
    }
  }
  save(out_dir / "checkpoint.ckpt");
  write_log(log, {{"iter", total}, {"lr", lr_at(total)}, {"final", true}});
  return last;
}

void Trainer::save(const fs::path& file) const {
  save_checkpoint(file, CheckpointData{config_, iteration_, rng_to_string(rng_), data_->digest,
                                       model_, opt_});
}

// ---------------------------------------------------------------------------
// Checkpoint container:
//   8-byte magic, u32 version, u64 metadata length, metadata JSON,
//   float32 little-endian payload: parameters, Adam m, Adam v (block order).

namespace {

constexpr char kMagic[8] = {'T', 'F', 'I', 'E', 'L', 'D', 'C', 'K'};

template <typename T>
void put_le(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char b[sizeof(T)];
  in.read(reinterpret_cast<char*>(b), sizeof(T));
  if (!in) throw DatasetError("checkpoint is truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
  return v;
}

void put_floats(std::ostream& out, const std::vector<float>& v) {
  for (float f : v) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
}

void get_floats(std::istream& in, std::vector<float>& v) {
  for (float& f : v) f = std::bit_cast<float>(get_le<std::uint32_t>(in));
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void save_checkpoint(const fs::path& file, const CheckpointData& data) {
  const auto& P = data.model.params();
  json meta;
  meta["config"] = config_json(data.config);
  meta["iteration"] = data.iteration;
  meta["rng_state"] = data.rng_state;
  meta["manifest_digest"] = hex64(data.manifest_digest);
  meta["optimizer_step"] = data.optimizer.step;
  meta["num_appearance"] = data.model.num_appearance();
  const Aabb& box = data.model.scene_box();
  meta["box"] = {{box.lo.x(), box.lo.y(), box.lo.z()}, {box.hi.x(), box.hi.y(), box.hi.z()}};
  meta["bounds"] = {data.model.bounds().t_min, data.model.bounds().t_max};
  json blocks = json::array();
  for (const auto& b : P.blocks()) {
    blocks.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  }
  meta["blocks"] = std::move(blocks);
  const std::string text = meta.dump();

  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DatasetError("cannot write checkpoint " + file.string());
    out.write(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& b : P.blocks()) put_floats(out, b.values);
    for (const auto& m : data.optimizer.first_moment) put_floats(out, m);
    for (const auto& v : data.optimizer.second_moment) put_floats(out, v);
    if (!out) throw DatasetError("failed writing checkpoint " + file.string());
  }
  fs::rename(tmp, file);
}

CheckpointData load_checkpoint(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DatasetError("cannot open checkpoint " + file.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DatasetError(file.string() + " is not a checkpoint");
  }
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw DatasetError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = get_le<std::uint64_t>(in);
  if (len > (1ull << 30)) throw DatasetError("checkpoint metadata is implausibly large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DatasetError("checkpoint is truncated");

  json meta;
  try {
    meta = json::parse(text);
    const TrainConfig config = config_from(meta.at("config"), TrainConfig{});
    Aabb box;
    for (int a = 0; a < 3; ++a) {
      box.lo[a] = meta.at("box").at(0).at(a).get<double>();
      box.hi[a] = meta.at("box").at(1).at(a).get<double>();
    }
    TemperatureBounds bounds{meta.at("bounds").at(0).get<double>(),
                             meta.at("bounds").at(1).get<double>()};
    FieldModel<float> model(config.field, meta.at("num_appearance").get<int>(), box, bounds,
                            config.seed);
    auto& P = model.params();
    const auto& blocks = meta.at("blocks");
    if (blocks.size() != P.size()) throw DatasetError("checkpoint block table does not match");
    for (std::size_t b = 0; b < P.size(); ++b) {
      const auto& blk = P.block(b);
      if (blocks[b].at("name").get<std::string>() != blk.name ||
          blocks[b].at("rows").get<int>() != blk.rows ||
          blocks[b].at("cols").get<int>() != blk.cols) {
        throw DatasetError("checkpoint block '" + blk.name + "' does not match the model");
      }
    }
    auto opt = ad::OptimizerState<float>::zeros(P, schedule_of(config));
    opt.step = meta.at("optimizer_step").get<std::int64_t>();
    for (auto& b : P.blocks()) get_floats(in, b.values);
    for (auto& m : opt.first_moment) get_floats(in, m);
    for (auto& v : opt.second_moment) get_floats(in, v);
    const std::string digest = meta.at("manifest_digest").get<std::string>();
    return CheckpointData{config,
                          meta.at("iteration").get<std::int64_t>(),
                          meta.at("rng_state").get<std::string>(),
                          std::stoull(digest, nullptr, 16),
                          std::move(model),
                          std::move(opt)};
  } catch (const json::exception& e) {
    throw DatasetError("malformed checkpoint metadata: " + std::string(e.what()));
  } catch (const ConfigError& e) {
    throw DatasetError("checkpoint holds an invalid config: " + std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------
// Poses

PoseSet test_poses(const SceneDataset& data) {
  PoseSet p;
  for (int i : data.test) {
    p.ids.push_back(data.frames[i].id);
    p.cameras.push_back(data.frames[i].camera);
  }
  return p;
}

PoseSet train_poses(const SceneDataset& data) {
  PoseSet p;
  for (int i : data.train) {
    p.ids.push_back(data.frames[i].id);
    p.cameras.push_back(data.frames[i].camera);
  }
  return p;
}

PoseSet poses_from_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DatasetError("cannot open pose file " + file.string());
  PoseSet p;
  try {
    const json j = json::parse(in);
    int index = 0;
    for (const auto& f : j.at("frames")) {
      auto intr = [&](const char* key) {
        return f.contains(key) ? f.at(key).get<double>() : j.at(key).get<double>();
      };
      Camera c;
      c.fx = intr("fl_x");
      c.fy = intr("fl_y");
      c.cx = intr("cx");
      c.cy = intr("cy");
      c.width = static_cast<int>(intr("w"));
      c.height = static_cast<int>(intr("h"));
      const auto& m = f.at("transform_matrix");
      for (int r = 0; r < 3; ++r) {
        for (int k = 0; k < 4; ++k) c.cam_to_world(r, k) = m.at(r).at(k).get<double>();
      }
      c.validate();
      char name[32];
      std::snprintf(name, sizeof(name), "pose_%04d", index);
      p.ids.push_back(f.value("id", std::string(name)));
      p.cameras.push_back(c);
      ++index;
    }
  } catch (const json::exception& e) {
    throw DatasetError("malformed pose file " + file.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DatasetError("bad camera in pose file " + file.string() + ": " + e.what());
  }
  if (p.ids.empty()) throw DatasetError("pose file lists no frames");
  return p;
}

PoseSet orbit_poses(const SceneDataset& data, int n) {
  if (n < 1) throw ConfigError("orbit needs at least one pose");
  const Eigen::Vector3d center = data.box.center();
  double radius = 0.0, height = 0.0;
  for (const auto& f : data.frames) {
    const Eigen::Vector3d d = f.camera.center() - center;
    radius += std::hypot(d.x(), d.z());
    height += d.y();
  }
  radius /= static_cast<double>(data.frames.size());
  height /= static_cast<double>(data.frames.size());
  if (!(radius > 1e-6)) radius = 0.5 * data.box.extent().maxCoeff();
  PoseSet p;
  for (int k = 0; k < n; ++k) {
    const double a = 2.0 * std::numbers::pi * k / n;
    Camera c = data.frames.front().camera;
    const Eigen::Vector3d eye = center + Eigen::Vector3d(radius * std::cos(a), height,
                                                         radius * std::sin(a));
    c.cam_to_world = look_at(eye, center, Eigen::Vector3d::UnitY());
    char name[32];
    std::snprintf(name, sizeof(name), "orbit_%04d", k);
    p.ids.push_back(name);
    p.cameras.push_back(c);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Render / eval

void write_renders(const fs::path& out_dir, const RadianceField& field, const PoseSet& poses,
                   const RenderOptions& opts) {
  const TemperatureBounds bounds = field.temperature_bounds();
  for (const char* sub : {"rgb", "thermal", "thermal_raw", "depth"}) {
    fs::create_directories(out_dir / sub);
  }
  json index;
  index["t_min"] = bounds.t_min;
  index["t_max"] = bounds.t_max;
  index["frames"] = json::array();
  for (std::size_t i = 0; i < poses.ids.size(); ++i) {
    const std::string& id = poses.ids[i];
    const RenderedView v = render_view(field, poses.cameras[i], opts);
    json f;
    f["id"] = id;
    f["rgb"] = nullptr;
    f["thermal"] = nullptr;
    f["thermal_raw"] = nullptr;
    if (!v.rgb.empty()) {
      const fs::path p = fs::path("rgb") / (id + ".png");
      write_png8(out_dir / p, to_u8(v.rgb));
      f["rgb"] = p.generic_string();
    }
    if (v.thermal.size() > 0) {
      const fs::path p = fs::path("thermal") / (id + ".png");
      const fs::path raw = fs::path("thermal_raw") / (id + ".csv");
      write_png16(out_dir / p, encode_thermal_map(v.thermal, bounds.t_min, bounds.t_max));
      write_csv_grid(out_dir / raw, v.thermal.celsius);
      f["thermal"] = p.generic_string();
      f["thermal_raw"] = raw.generic_string();
    }
    const fs::path d = fs::path("depth") / (id + ".csv");
    write_csv_grid(out_dir / d, v.depth);
    f["depth"] = d.generic_string();
    index["frames"].push_back(std::move(f));
  }
  std::ofstream out(out_dir / "renders.json");
  if (!out) throw DatasetError("cannot write " + (out_dir / "renders.json").string());
  out << index.dump(2) << '\n';
}

namespace {

ViewMetrics compare(const std::string& id, const Image<float>& rgb, const ThermalMap& thermal,
                    const Frame& gt, const TemperatureBounds& bounds, RoiSide side) {
  ViewMetrics m;
  m.id = id;
  if (!rgb.empty()) {
    if (!rgb.same_shape(gt.rgb)) throw MetricError("view '" + id + "': RGB shape differs");
    m.psnr_rgb = psnr(rgb, gt.rgb, 1.0);
    m.ssim_rgb = ssim(rgb, gt.rgb, 1.0);
  }
  if (thermal.size() > 0) {
    m.mae = mae(thermal, gt.thermal);
    try {
      const RoiResult roi = mae_roi(thermal, gt.thermal, side);
      m.mae_roi = roi.mae;
      m.roi_threshold = roi.threshold;
    } catch (const MetricError&) {
      // No separable region (e.g. constant ground truth): leave undefined.
    }
    m.psnr_th = psnr_thermal(thermal, gt.thermal, bounds);
    m.ssim_th = ssim_thermal(thermal, gt.thermal, bounds);
  }
  return m;
}

}  // namespace

ViewMetrics evaluate_view(const RenderedView& view, const Frame& gt,
                          const TemperatureBounds& bounds, RoiSide side) {
  return compare(gt.id, view.rgb, view.thermal, gt, bounds, side);
}

MetricsReport evaluate_renders(const fs::path& render_dir, const SceneDataset& gt,
                               const EvalOptions& opts, std::vector<std::string>* unmatched) {
  const fs::path index_file = render_dir / "renders.json";
  std::ifstream in(index_file);
  if (!in) throw DatasetError("no renders.json in " + render_dir.string());
  json index;
  try {
    index = json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetError("malformed renders.json: " + std::string(e.what()));
  }
  std::map<std::string, int> by_id;
  for (std::size_t i = 0; i < gt.frames.size(); ++i) by_id[gt.frames[i].id] = static_cast<int>(i);

  MetricsReport report;
  report.scene = gt.root.filename().string();
  if (opts.write_error_maps) fs::create_directories(render_dir / "error_maps");
  for (const auto& f : index.at("frames")) {
    const std::string id = f.at("id").get<std::string>();
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      if (unmatched != nullptr) unmatched->push_back(id);
      continue;
    }
    const Frame& g = gt.frames[it->second];
    Image<float> rgb;
    if (!f.at("rgb").is_null()) rgb = to_unit_float(read_png8(render_dir / f.at("rgb").get<std::string>()));
    ThermalMap thermal;
    if (!f.at("thermal_raw").is_null()) {
      Image<float> grid = read_csv_grid(render_dir / f.at("thermal_raw").get<std::string>());
      thermal = ThermalMap(grid.width, grid.height);
      thermal.celsius = std::move(grid);
    } else if (!f.at("thermal").is_null()) {
      thermal = decode_thermal_map(read_png16(render_dir / f.at("thermal").get<std::string>()),
                                   index.at("t_min").get<double>(), index.at("t_max").get<double>());
    }
    if (thermal.size() > 0 &&
        (thermal.width() != g.thermal.width() || thermal.height() != g.thermal.height())) {
      throw DatasetError("view '" + id + "': rendered size differs from ground truth");
    }
    report.views.push_back(compare(id, rgb, thermal, g, gt.bounds, opts.roi_side));
    if (opts.write_error_maps && thermal.size() > 0) {
      const ErrorMap em = error_map(thermal, g.thermal);
      write_png8(render_dir / "error_maps" / (id + ".png"), em.colored);
      write_csv_grid(render_dir / "error_maps" / (id + ".csv"), em.abs_error);
    }
  }
  if (report.views.empty()) throw DatasetError("no rendered view matches a ground-truth frame");
  return report;
}

}  // namespace thermofield
