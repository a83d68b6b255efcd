// Copyright 2026 The mfakit Authors.
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

#ifndef MFA_PIPELINE_HPP_
#define MFA_PIPELINE_HPP_

// Run configuration and the run-directory driven stage sequence:
//
//   <run>/config.json            resolved configuration
//   <run>/artifacts/*.mfaw|json  stage outputs, each with <name>.manifest.json
//   <run>/logs/<stage>.jsonl     metrics, one JSON object per line
//   <run>/export/                final SubGenerator weights, graph, genotype
//   <run>/.lock                  held while a stage runs

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfa/builders.hpp"
#include "mfa/costmodel.hpp"
#include "mfa/dataio.hpp"
#include "mfa/engine/stages.hpp"
#include "mfa/error.hpp"
#include "mfa/evaluate.hpp"
#include "mfa/genotype.hpp"
#include "mfa/latency.hpp"
#include "mfa/search.hpp"
#include "mfa/sharing.hpp"
#include "mfa/weights.hpp"

namespace mfa {

inline constexpr const char* kToolkitVersion = "0.1.0";

using json = nlohmann::json;

struct DataSource {
  std::string dir;  // non-empty: <dir>/hr/*.ppm; otherwise synthetic
  std::uint64_t seed = 7;
  int count = 200;
  int hr_size = 64;
};

struct StageSettings {
  Schedule schedule;  // paper-scale; divided by scale_factor when run
  LossWeights lambda;
};

struct RunConfig {
  std::string run_dir = "run";
  std::uint64_t seed = 0;
  int scale = 4;
  double scale_factor = 100.0;
  GeneSpace space;
  int teacher_width = 64;
  int d_base_teacher = 48;
  int d_base_student = 32;
  int cfabs_per_mfam = 2;
  int batch = 16;
  int hr_patch = 64;  // 128 suits DIV2K-sized images; the default data is 64x64
  NormConvention norm = NormConvention::Rms;
  std::uint64_t percep_seed = 1;
  std::string distill_init = "scratch";  // or "teacher_slice"
  int log_every = 10;
  int eval_every = 0;
  int eval_border = -1;  // -1: scale

  DataSource train{"", 7, 200, 64};
  DataSource val{"", 8, 20, 64};
  DataSource test{"", 9, 20, 64};

  StageSettings pretrain{{500000, 2e-4, {}}, {1, 0, 0, 0, 0}};
  StageSettings train_gan{{15000, 1e-4, {5000, 10000}}, {1, 0, 0, 1, 10}};
  StageSettings distill{{15000, 1e-4, {5000, 10000}}, {1, 0.05, 0.05, 1, 10}};
  StageSettings supernet{{800000, 1e-4, {200000, 400000, 600000}}, {1, 0, 0, 1, 0}};
  StageSettings finetune{{10000, 1e-4, {}}, {1, 0.05, 0.05, 1, 10}};

  std::string lut_model = "profile";  // profile | flops_proportional | random_seeded
  int lut_reps = 7;
  int lut_warmup = 2;
  std::uint64_t lut_seed = 0;
  double lut_alpha = 1e-4;
  int lr_h = 32;  // LR input size used for latency keys and search
  int lr_w = 32;

  SearchConfig search;
  std::optional<double> budget_us;
  std::optional<double> budget_quantile;  // fraction of the space admitted

  int cost_h = 128;
  int cost_w = 128;

  MfanetOptions mfanet() const { return {scale, cfabs_per_mfam}; }
  int border() const { return eval_border < 0 ? scale : eval_border; }
  Genotype super_genotype() const { return space.max_genotype(); }
  Genotype teacher_genotype() const { return Genotype::uniform(teacher_width); }
};

// ---------------------------------------------------------------------------
// JSON mapping

namespace detail {

inline json lambda_json(const LossWeights& w) {
  return json::array({w.recon, w.distill_g, w.distill_d, w.percep, w.adv});
}

inline json stage_json(const StageSettings& s) {
  return {{"iterations", s.schedule.iterations}, {"lr", s.schedule.lr}, {"milestones", s.schedule.milestones},
          {"lambda", lambda_json(s.lambda)}};
}

inline json data_json(const DataSource& d) {
  return {{"dir", d.dir}, {"seed", d.seed}, {"count", d.count}, {"hr_size", d.hr_size}};
}

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(); }

}  // namespace detail

inline json to_json(const RunConfig& c) {
  return {
      {"run_dir", c.run_dir},
      {"seed", c.seed},
      {"scale", c.scale},
      {"scale_factor", c.scale_factor},
      {"gene_choices", c.space.choices},
      {"teacher_width", c.teacher_width},
      {"d_base_teacher", c.d_base_teacher},
      {"d_base_student", c.d_base_student},
      {"cfabs_per_mfam", c.cfabs_per_mfam},
      {"batch", c.batch},
      {"hr_patch", c.hr_patch},
      {"distill_norm", c.norm == NormConvention::Rms ? "rms" : "euclidean"},
      {"percep_seed", c.percep_seed},
      {"distill_init", c.distill_init},
      {"log_every", c.log_every},
      {"eval_every", c.eval_every},
      {"eval_border", c.eval_border},
      {"data", {{"train", detail::data_json(c.train)}, {"val", detail::data_json(c.val)},
                {"test", detail::data_json(c.test)}}},
      {"stages",
       {{"pretrain", detail::stage_json(c.pretrain)},
        {"train_gan", detail::stage_json(c.train_gan)},
        {"distill", detail::stage_json(c.distill)},
        {"supernet", detail::stage_json(c.supernet)},
        {"finetune", detail::stage_json(c.finetune)}}},
      {"latency",
       {{"model", c.lut_model},
        {"reps", c.lut_reps},
        {"warmup", c.lut_warmup},
        {"seed", c.lut_seed},
        {"alpha", c.lut_alpha},
        {"input_hw", {c.lr_h, c.lr_w}}}},
      {"search",
       {{"population", c.search.population},
        {"generations", c.search.generations},
        {"mutation_rate", c.search.mutation_rate},
        {"elite_k", c.search.elite_k},
        {"tournament", c.search.tournament},
        {"seed", c.search.seed},
        {"threads", c.search.threads},
        {"budget_us", detail::opt_json(c.budget_us)},
        {"budget_quantile", detail::opt_json(c.budget_quantile)}}},
      {"cost_input_hw", {c.cost_h, c.cost_w}},
  };
}

namespace detail {

// Reports keys of `user` that the defaults do not know about.
inline void unknown_keys(const json& user, const json& defaults, const std::string& path,
                         std::vector<std::string>& out) {
  if (!user.is_object() || !defaults.is_object()) return;
  for (const auto& [k, v] : user.items()) {
    const std::string p = path.empty() ? k : path + "." + k;
    if (!defaults.contains(k)) {
      out.push_back("unknown key '" + p + "'");
    } else if (v.is_object()) {
      unknown_keys(v, defaults[k], p, out);
    }
  }
}

class Reader {
 public:
  Reader(const json& j, std::vector<std::string>& errs) : j_(j), errs_(errs) {}

  template <class T>
  void get(const std::string& path, T& out) {
    const json* node = find(path);
    if (!node) return;
    try {
      out = node->get<T>();
    } catch (const json::exception&) {
      errs_.push_back("'" + path + "' has the wrong type (" + node->dump() + ")");
    }
  }

  void get_opt(const std::string& path, std::optional<double>& out) {
    const json* node = find(path);
    if (!node || node->is_null()) {
      out.reset();
      return;
    }
    if (!node->is_number()) {
      errs_.push_back("'" + path + "' must be a number or null");
      return;
    }
    out = node->get<double>();
  }

  void stage(const std::string& path, StageSettings& s) {
    get(path + ".iterations", s.schedule.iterations);
    get(path + ".lr", s.schedule.lr);
    get(path + ".milestones", s.schedule.milestones);
    std::vector<double> lam;
    get(path + ".lambda", lam);
    if (lam.size() == 5) {
      s.lambda = {lam[0], lam[1], lam[2], lam[3], lam[4]};
    } else if (find(path + ".lambda")) {
      errs_.push_back("'" + path + ".lambda' needs exactly 5 weights");
    }
  }

  void data(const std::string& path, DataSource& d) {
    get(path + ".dir", d.dir);
    get(path + ".seed", d.seed);
    get(path + ".count", d.count);
    get(path + ".hr_size", d.hr_size);
  }

 private:
  const json* find(const std::string& path) const {
    const json* node = &j_;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) {
      if (!node->is_object() || !node->contains(part)) return nullptr;
      node = &(*node)[part];
    }
    return node;
  }
  const json& j_;
  std::vector<std::string>& errs_;
};

}  // namespace detail

// Every problem with a configuration, in one list.
inline std::vector<std::string> config_violations(const RunConfig& c) {
  std::vector<std::string> v;
  if (c.run_dir.empty()) v.push_back("run_dir must not be empty");
  if (c.scale != 2 && c.scale != 4) v.push_back("scale must be 2 or 4");
  if (!(c.scale_factor > 0)) v.push_back("scale_factor must be positive");
  {
    auto ch = c.space.choices;
    std::sort(ch.begin(), ch.end());
    if (ch[0] < 1 || ch[0] == ch[1] || ch[1] == ch[2]) v.push_back("gene_choices must be three distinct positive widths");
  }
  if (c.teacher_width < c.space.max_width()) v.push_back("teacher_width must be >= the largest gene choice");
  if (c.d_base_teacher < 1 || c.d_base_student < 1) v.push_back("discriminator bases must be positive");
  if (c.cfabs_per_mfam < 1) v.push_back("cfabs_per_mfam must be >= 1");
  if (c.batch < 1) v.push_back("batch must be >= 1");
  if (c.hr_patch < c.scale || c.hr_patch % c.scale != 0) v.push_back("hr_patch must be a positive multiple of scale");
  if (c.distill_init != "scratch" && c.distill_init != "teacher_slice") {
    v.push_back("distill_init must be 'scratch' or 'teacher_slice'");
  }
  if (c.log_every < 1) v.push_back("log_every must be >= 1");
  if (c.eval_every < 0) v.push_back("eval_every must be >= 0");
  for (const auto* d : {&c.train, &c.val, &c.test}) {
    if (d->dir.empty()) {
      if (d->count < 1) v.push_back("synthetic dataset count must be >= 1");
      if (d->hr_size < c.hr_patch && d == &c.train) v.push_back("train hr_size must be >= hr_patch");
      if (d->hr_size % c.scale != 0) v.push_back("synthetic hr_size must be divisible by scale");
    }
  }
  const std::pair<const char*, const StageSettings*> stages[] = {{"pretrain", &c.pretrain},
                                                                   {"train_gan", &c.train_gan},
                                                                   {"distill", &c.distill},
                                                                   {"supernet", &c.supernet},
                                                                   {"finetune", &c.finetune}};
  for (const auto& [name, s] : stages) {
    const std::string n = name;
    if (s->schedule.iterations < 1) v.push_back("stages." + n + ".iterations must be >= 1");
    if (!(s->schedule.lr > 0)) v.push_back("stages." + n + ".lr must be positive");
    const auto& l = s->lambda;
    if (!l.all_finite() || l.recon < 0 || l.distill_g < 0 || l.distill_d < 0 || l.percep < 0 || l.adv < 0) {
      v.push_back("stages." + n + ".lambda must be finite and non-negative");
    }
  }
  if (c.lut_model != "profile" && c.lut_model != "flops_proportional" && c.lut_model != "random_seeded") {
    v.push_back("latency.model must be profile, flops_proportional or random_seeded");
  }
  if (c.lut_reps < 3) v.push_back("latency.reps must be >= 3");
  if (c.lut_warmup < 0) v.push_back("latency.warmup must be >= 0");
  if (!(c.lut_alpha > 0)) v.push_back("latency.alpha must be positive");
  if (c.lr_h < 8 || c.lr_w < 8) v.push_back("latency.input_hw must be at least 8x8");
  for (const auto& s : c.search.violations()) v.push_back("search: " + s);
  if (c.budget_us && !(*c.budget_us >= 0)) v.push_back("search.budget_us must be >= 0");
  if (c.budget_quantile && !(*c.budget_quantile > 0 && *c.budget_quantile <= 1)) {
    v.push_back("search.budget_quantile must be in (0, 1]");
  }
  if (c.cost_h < 1 || c.cost_w < 1) v.push_back("cost_input_hw must be positive");
  return v;
}

// Merges `user` over the defaults and validates. Throws ConfigError listing
// every violation.
inline RunConfig config_from_json(const json& user) {
  const RunConfig defaults;
  const json base = to_json(defaults);
  std::vector<std::string> errs;
  if (!user.is_object()) throw ConfigError("configuration must be a JSON object");
  detail::unknown_keys(user, base, "", errs);
  json merged = base;
  merged.merge_patch(user);

  RunConfig c;
  detail::Reader r(merged, errs);
  r.get("run_dir", c.run_dir);
  r.get("seed", c.seed);
  r.get("scale", c.scale);
  r.get("scale_factor", c.scale_factor);
  std::vector<int> choices;
  r.get("gene_choices", choices);
  if (choices.size() == 3) {
    std::copy(choices.begin(), choices.end(), c.space.choices.begin());
  } else {
    errs.push_back("gene_choices needs exactly 3 widths");
  }
  r.get("teacher_width", c.teacher_width);
  r.get("d_base_teacher", c.d_base_teacher);
  r.get("d_base_student", c.d_base_student);
  r.get("cfabs_per_mfam", c.cfabs_per_mfam);
  r.get("batch", c.batch);
  r.get("hr_patch", c.hr_patch);
  std::string norm;
  r.get("distill_norm", norm);
  if (norm == "rms") {
    c.norm = NormConvention::Rms;
  } else if (norm == "euclidean") {
    c.norm = NormConvention::Euclidean;
  } else {
    errs.push_back("distill_norm must be 'rms' or 'euclidean'");
  }
  r.get("percep_seed", c.percep_seed);
  r.get("distill_init", c.distill_init);
  r.get("log_every", c.log_every);
  r.get("eval_every", c.eval_every);
  r.get("eval_border", c.eval_border);
  r.data("data.train", c.train);
  r.data("data.val", c.val);
  r.data("data.test", c.test);
  r.stage("stages.pretrain", c.pretrain);
  r.stage("stages.train_gan", c.train_gan);
  r.stage("stages.distill", c.distill);
  r.stage("stages.supernet", c.supernet);
  r.stage("stages.finetune", c.finetune);
  r.get("latency.model", c.lut_model);
  r.get("latency.reps", c.lut_reps);
  r.get("latency.warmup", c.lut_warmup);
  r.get("latency.seed", c.lut_seed);
  r.get("latency.alpha", c.lut_alpha);
  std::vector<int> hw;
  r.get("latency.input_hw", hw);
  if (hw.size() == 2) {
    c.lr_h = hw[0];
    c.lr_w = hw[1];
  } else {
    errs.push_back("latency.input_hw needs [h, w]");
  }
  r.get("search.population", c.search.population);
  r.get("search.generations", c.search.generations);
  r.get("search.mutation_rate", c.search.mutation_rate);
  r.get("search.elite_k", c.search.elite_k);
  r.get("search.tournament", c.search.tournament);
  r.get("search.seed", c.search.seed);
  r.get("search.threads", c.search.threads);
  r.get_opt("search.budget_us", c.budget_us);
  r.get_opt("search.budget_quantile", c.budget_quantile);
  std::vector<int> chw;
  r.get("cost_input_hw", chw);
  if (chw.size() == 2) {
    c.cost_h = chw[0];
    c.cost_w = chw[1];
  } else {
    errs.push_back("cost_input_hw needs [h, w]");
  }
  for (auto& e : config_violations(c)) errs.push_back(std::move(e));
  if (!errs.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  return c;
}

inline json read_json_file(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw ConfigError("cannot open config file " + p.string());
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + p.string() + " is not valid JSON: " + e.what());
  }
}

// Applies "a.b.c=value"; value is parsed as JSON when possible, else taken
// as a string.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override '" + key + "' descends into a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  (*node)[parts.back()] = value;
}

inline std::uint64_t config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("run_dir");
  return fnv1a(j.dump());
}

// ---------------------------------------------------------------------------
// Run directory

// Exclusive lock file; removed on destruction.
class RunLock {
 public:
  explicit RunLock(std::filesystem::path path) : path_(std::move(path)) {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw PipelineError("run directory is locked by another stage (remove " + path_.string() +
                          " if no stage is running)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    (void)!::write(fd_, pid.data(), pid.size());
  }
  ~RunLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      std::filesystem::remove(path_, ec);
    }
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

struct EvalRow {
  std::string name;
  double sr_db = 0.0;
  double bicubic_db = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_sr = 0.0;
  double mean_bicubic = 0.0;
  int border = 0;
};

class Pipeline {
 public:
  explicit Pipeline(RunConfig cfg) : cfg_(std::move(cfg)), root_(cfg_.run_dir) {}

  const RunConfig& config() const { return cfg_; }
  std::filesystem::path artifact(const std::string& name) const { return root_ / "artifacts" / name; }
  std::filesystem::path log_path(const std::string& name) const { return root_ / "logs" / (name + ".jsonl"); }
  std::filesystem::path export_dir() const { return root_ / "export"; }

  // Artifact names
  static constexpr const char* kPretrainG = "pretrain_g.mfaw";
  static constexpr const char* kGanG = "gan_g.mfaw";
  static constexpr const char* kGanD = "gan_d.mfaw";
  static constexpr const char* kDistillG = "distill_g.mfaw";
  static constexpr const char* kDistillD = "distill_d.mfaw";
  static constexpr const char* kSupernet = "supernet_g.mfaw";
  static constexpr const char* kLut = "lut.json";
  static constexpr const char* kSearch = "search.json";
  static constexpr const char* kFinalG = "final_g.mfaw";
  static constexpr const char* kFinalD = "final_d.mfaw";

  StageResult pretrain() {
    auto lock = begin();
    Model g = teacher_model();
    g.weights = init_weights<float>(g.graph, Rng(cfg_.seed).split(11).next_u64());
    StageIO io = io_for("pretrain");
    const StageResult r = train_pretrain(g, train_config(cfg_.pretrain, 1), io);
    g.weights.genotype_tag = cfg_.teacher_genotype();
    save_store(g.weights, kPretrainG, "pretrain");
    return r;
  }

  StageResult train_gan() {
    auto lock = begin();
    Model g = teacher_model();
    g.weights = require_weights(kPretrainG);
    check_store(g.weights, g.graph);
    Model d{build_patchgan(cfg_.d_base_teacher), {}};
    d.weights = init_weights<float>(d.graph, Rng(cfg_.seed).split(12).next_u64());
    StageIO io = io_for("train_gan");
    const StageResult r = train_adversarial(Stage::TrainGanLarge, g, d, train_config(cfg_.train_gan, 2), io);
    g.weights.genotype_tag = cfg_.teacher_genotype();
    save_store(g.weights, kGanG, "train_gan");
    save_store(d.weights, kGanD, "train_gan");
    return r;
  }

  StageResult distill() {
    auto lock = begin();
    Model tg = teacher_model();
    tg.weights = require_weights(kGanG);
    Model td{build_patchgan(cfg_.d_base_teacher), require_weights(kGanD)};
    check_store(tg.weights, tg.graph);
    check_store(td.weights, td.graph);
    const Genotype sg = cfg_.super_genotype();
    Model g{build_mfanet(sg, cfg_.mfanet()), {}};
    if (cfg_.distill_init == "teacher_slice") {
      g.weights = slice_for_genotype(tg.weights, cfg_.teacher_genotype(), sg, cfg_.mfanet());
    } else {
      g.weights = init_weights<float>(g.graph, Rng(cfg_.seed).split(13).next_u64());
    }
    Model d{build_patchgan(cfg_.d_base_student), {}};
    d.weights = init_weights<float>(d.graph, Rng(cfg_.seed).split(14).next_u64());
    StageIO io = io_for("distill");
    const StageResult r =
        train_adversarial(Stage::DistillGD, g, d, train_config(cfg_.distill, 3), io, Teachers{&tg, &td});
    g.weights.genotype_tag = sg;
    save_store(g.weights, kDistillG, "distill");
    save_store(d.weights, kDistillD, "distill");
    return r;
  }

  StageResult train_supernet() {
    auto lock = begin();
    const Genotype sg = cfg_.super_genotype();
    WeightStore<float> super = require_weights(kDistillG);
    const NetworkGraph graph = build_mfanet(sg, cfg_.mfanet());
    check_store(super, graph);
    // Most important channels first, so every prefix starts from the
    // strongest filters of the distilled network.
    super = reorder_by_importance(super, graph);
    super.genotype_tag = sg;
    StageIO io = io_for("train_supernet");
    const StageResult r =
        mfa::train_supernet(super, sg, cfg_.space, cfg_.mfanet(), train_config(cfg_.supernet, 4), io);
    save_store(super, kSupernet, "train_supernet");
    return r;
  }

  LatencyTable profile_latency() {
    auto lock = begin();
    LatencyTable t;
    if (cfg_.lut_model == "profile") {
      std::vector<ProfileInput> graphs;
      for (std::size_t i = 0; i < cfg_.space.size(); ++i)
        graphs.push_back({build_mfanet(cfg_.space.at(i), cfg_.mfanet()), cfg_.lr_h, cfg_.lr_w});
      t = profile(graphs, cfg_.lut_reps, cfg_.lut_warmup, cfg_.lut_seed);
    } else {
      t = synth_lut(cfg_.space, cfg_.mfanet(), cfg_.lr_h, cfg_.lr_w,
                    cfg_.lut_model == "flops_proportional" ? LutModel::FlopsProportional : LutModel::RandomSeeded,
                    cfg_.lut_seed, cfg_.lut_alpha);
    }
    save_lut(t, artifact(kLut));
    write_manifest(kLut, "profile_latency");
    return t;
  }

  // Optional replacements for the run's own artifacts.
  struct SearchInputs {
    std::optional<std::filesystem::path> lut;
    std::optional<std::filesystem::path> super;
    std::optional<std::filesystem::path> valset;
  };

  SearchResult search(const SearchInputs& in = {}) {
    auto lock = begin();
    const std::filesystem::path lut_path = in.lut ? *in.lut : artifact(kLut);
    const std::filesystem::path super_path = in.super ? *in.super : artifact(kSupernet);
    require(lut_path);
    require(super_path);
    const LatencyTable lut = load_lut(lut_path);
    const WeightStore<float> super = load_weights<float>(super_path);
    const Genotype sg = cfg_.super_genotype();
    check_store(super, build_mfanet(sg, cfg_.mfanet()));
    LatencyCache latency(cfg_.space, lut_latency(lut, cfg_.mfanet(), cfg_.lr_h, cfg_.lr_w));
    SearchConfig sc = cfg_.search;
    sc.latency_budget_us = resolve_budget(latency);
    DataSource val = cfg_.val;
    if (in.valset) val.dir = in.valset->string();
    const SubnetFitness fit_fn(super, sg, load_data(val), cfg_.mfanet(), cfg_.border());
    MemoFitness fitness([&](const Genotype& g) { return fit_fn(g); });
    const SearchResult res = evolutionary_search(sc, cfg_.space, fitness, latency);
    json out = to_json(res.best);
    out["budget_us"] = sc.latency_budget_us;
    out["evaluations"] = fitness.evaluations();
    write_text(artifact(kSearch), out.dump(2) + "\n");
    write_manifest(kSearch, "search");
    std::ofstream hist(log_path("search_history"), std::ios::trunc);
    for (const auto& s : res.history) hist << to_json(s).dump() << "\n";
    return res;
  }

  StageResult finetune() {
    auto lock = begin();
    const Genotype sub = searched_genotype();
    const Genotype sg = cfg_.super_genotype();
    const WeightStore<float> super = require_weights(kSupernet);
    Model g{build_mfanet(sub, cfg_.mfanet()), slice_for_genotype(super, sg, sub, cfg_.mfanet())};
    Model d{build_patchgan(cfg_.d_base_student), require_weights(kDistillD)};
    check_store(d.weights, d.graph);
    Teachers t;
    Model tg, td;
    const LossWeights& lam = cfg_.finetune.lambda;
    if (lam.distill_g > 0 || lam.distill_d > 0) {
      tg = teacher_model();
      tg.weights = require_weights(kGanG);
      td = Model{build_patchgan(cfg_.d_base_teacher), require_weights(kGanD)};
      t = Teachers{&tg, &td};
    }
    StageIO io = io_for("finetune");
    const StageResult r = train_adversarial(Stage::Finetune, g, d, train_config(cfg_.finetune, 5), io, t);
    g.weights.genotype_tag = sub;
    save_store(g.weights, kFinalG, "finetune");
    save_store(d.weights, kFinalD, "finetune");
    return r;
  }

  // PSNR-Y of a generator against bicubic on a dataset (default: test set).
  EvalReport eval(const std::optional<std::filesystem::path>& weights_path = std::nullopt,
                  const std::optional<std::filesystem::path>& dataset_dir = std::nullopt) const {
    const std::filesystem::path wp = weights_path ? *weights_path : artifact(kFinalG);
    require(wp);
    const WeightStore<float> w = load_weights<float>(wp);
    if (!w.genotype_tag) throw PipelineError("weights " + wp.string() + " carry no genotype tag");
    const NetworkGraph g = build_mfanet(*w.genotype_tag, cfg_.mfanet());
    check_store(w, g);
    DataSource src = cfg_.test;
    if (dataset_dir) src.dir = dataset_dir->string();
    const EvalSet set(load_data(src));
    EvalReport rep;
    rep.border = cfg_.border();
    const auto sr = set.psnr(g, w, rep.border);
    const auto bic = set.bicubic_psnr(cfg_.scale, rep.border);
    for (std::size_t i = 0; i < sr.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "%04zu", i);
      rep.rows.push_back({name, sr[i], bic[i]});
    }
    rep.mean_sr = mean_of(sr);
    rep.mean_bicubic = mean_of(bic);
    return rep;
  }

  void export_final() const {
    const Genotype sub = searched_genotype();
    const WeightStore<float> w = require_weights(kFinalG);
    const NetworkGraph g = build_mfanet(sub, cfg_.mfanet());
    check_store(w, g);
    std::filesystem::create_directories(export_dir());
    save_weights(w, export_dir() / "generator.mfaw");
    write_text(export_dir() / "graph.json", to_json(g).dump(2) + "\n");
    write_text(export_dir() / "genotype.json", json{{"genotype", sub.genes()}, {"scale", cfg_.scale}}.dump(2) + "\n");
  }

  Genotype searched_genotype() const {
    require(artifact(kSearch));
    std::ifstream f(artifact(kSearch));
    try {
      const json j = json::parse(f);
      return Genotype(j.at("genotype").get<std::vector<int>>());
    } catch (const json::exception& e) {
      throw FormatError("malformed " + artifact(kSearch).string() + ": " + e.what());
    }
  }

  std::vector<ImagePair> load_data(const DataSource& d) const {
    if (!d.dir.empty()) return load_dataset_dir(d.dir, cfg_.scale);
    return synth_dataset(d.seed, d.count, d.hr_size, cfg_.scale);
  }

 private:
  std::unique_ptr<RunLock> begin() {
    std::filesystem::create_directories(root_ / "artifacts");
    std::filesystem::create_directories(root_ / "logs");
    auto lock = std::make_unique<RunLock>(root_ / ".lock");
    write_text(root_ / "config.json", to_json(cfg_).dump(2) + "\n");
    return lock;
  }

  Model teacher_model() const { return Model{build_mfanet(cfg_.teacher_genotype(), cfg_.mfanet()), {}}; }

  TrainConfig train_config(const StageSettings& s, std::uint64_t stream) const {
    TrainConfig t;
    t.schedule = s.schedule.scaled(cfg_.scale_factor);
    t.batch = cfg_.batch;
    t.hr_patch = cfg_.hr_patch;
    t.scale = cfg_.scale;
    t.seed = Rng(cfg_.seed).split(100 + stream).next_u64();
    t.lambda = s.lambda;
    t.norm = cfg_.norm;
    t.log_every = cfg_.log_every;
    t.eval_every = cfg_.eval_every;
    return t;
  }

  StageIO io_for(const std::string& stage) {
    train_data_ = load_data(cfg_.train);
    val_ = EvalSet(load_data(cfg_.val));
    auto [pg, pw] = build_percep_extractor<float>(cfg_.percep_seed);
    phi_ = FeatureExtractor<float>{std::move(pg), std::move(pw)};
    log_ = std::make_shared<std::ofstream>(log_path(stage), std::ios::trunc);
    StageIO io;
    io.train = &train_data_;
    io.val = &val_;
    io.phi = &phi_;
    auto log = log_;
    io.sink = [log](const json& j) { *log << j.dump() << "\n" << std::flush; };
    return io;
  }

  void require(const std::filesystem::path& p) const {
    if (!std::filesystem::exists(p)) throw PipelineError("missing predecessor artifact: " + p.string());
  }

  WeightStore<float> require_weights(const std::string& name) const {
    require(artifact(name));
    return load_weights<float>(artifact(name));
  }

  void save_store(const WeightStore<float>& w, const std::string& name, const std::string& stage) {
    save_weights(w, artifact(name));
    write_manifest(name, stage);
  }

  void write_manifest(const std::string& name, const std::string& stage) const {
    const std::string bytes = detail::read_file(artifact(name));
    char hash[17];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(config_hash(cfg_)));
    char digest[17];
    std::snprintf(digest, sizeof(digest), "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
    const json m{{"artifact", name},     {"stage", stage},     {"config_hash", hash},
                 {"seed", cfg_.seed},    {"toolkit_version", kToolkitVersion},
                 {"content_fnv1a", digest}, {"bytes", bytes.size()}};
    write_text(artifact(name + ".manifest.json"), m.dump(2) + "\n");
  }

  static void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::trunc);
    if (!f) throw PipelineError("cannot write " + p.string());
    f << s;
  }

  double resolve_budget(LatencyCache& latency) const {
    if (cfg_.budget_us) return *cfg_.budget_us;
    if (cfg_.budget_quantile) {
      std::vector<double> all;
      for (std::size_t i = 0; i < cfg_.space.size(); ++i) all.push_back(latency(cfg_.space.at(i)));
      std::sort(all.begin(), all.end());
      const auto k = static_cast<std::size_t>(std::ceil(*cfg_.budget_quantile * static_cast<double>(all.size())));
      return all[std::clamp<std::size_t>(k, 1, all.size()) - 1];
    }
    throw ConfigError("search needs a latency budget: set search.budget_us (or search.budget_quantile)");
  }

  RunConfig cfg_;
  std::filesystem::path root_;
  std::vector<ImagePair> train_data_;
  EvalSet val_;
  FeatureExtractor<float> phi_;
  std::shared_ptr<std::ofstream> log_;
};

}  // namespace mfa

#endif  // MFA_PIPELINE_HPP_
