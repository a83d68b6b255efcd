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

// mfa: command-line driver for the compression pipeline.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mfa/mfa.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 2, kPipeline = 3, kDivergence = 4 };

struct Common {
  std::string config_path;
  std::string run_dir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config_path, "JSON run configuration");
  sub->add_option("-r,--run", c.run_dir, "run directory (overrides run_dir)");
  sub->add_option("--set", c.overrides, "override a config key, e.g. --set stages.pretrain.lr=1e-4")->take_all();
}

mfa::RunConfig resolve(const Common& c, const std::vector<std::string>& extra = {}) {
  nlohmann::json doc = c.config_path.empty() ? nlohmann::json::object() : mfa::read_json_file(c.config_path);
  for (const auto& o : c.overrides) mfa::apply_override(doc, o);
  for (const auto& o : extra) mfa::apply_override(doc, o);
  if (!c.run_dir.empty()) doc["run_dir"] = c.run_dir;
  return mfa::config_from_json(doc);
}

void print_stage(const char* name, const mfa::StageResult& r) {
  std::printf("%s: %zu iterations, final loss %.6f", name, r.total.size(), r.total.empty() ? 0.0 : r.total.back());
  if (!std::isnan(r.psnr_val)) std::printf(", val PSNR-Y %.3f dB", r.psnr_val);
  std::printf("\n");
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mfa: MFANet compression pipeline (distillation, supernet, latency-aware search)"};
  app.require_subcommand(1);

  Common common;
  auto* pretrain = app.add_subcommand("pretrain", "stage 1a: L1 pretraining of the large generator");
  auto* train_gan = app.add_subcommand("train-gan", "stage 1b: adversarial training of the large model");
  auto* distill = app.add_subcommand("distill", "stage 2: joint G/D distillation into the student");
  auto* supernet = app.add_subcommand("train-supernet", "stage 3: weight-shared SuperGenerator training");
  auto* profile = app.add_subcommand("profile-latency", "build the operator latency lookup table");
  auto* search = app.add_subcommand("search", "stage 4: latency-constrained evolutionary search");
  auto* finetune = app.add_subcommand("finetune", "stage 5: fine-tune the searched SubGenerator");
  auto* eval = app.add_subcommand("eval", "PSNR-Y table of a generator against bicubic");
  auto* cost = app.add_subcommand("cost-report", "parameters, FLOPs and memory access cost of a genotype");
  auto* exportc = app.add_subcommand("export", "write final weights, graph and genotype to <run>/export");
  auto* predict = app.add_subcommand("predict", "predicted latency of a generator from a LUT");
  auto* run_all = app.add_subcommand("run-all", "stages 1 to 5 plus latency table and search, in order");
  auto* synth = app.add_subcommand("synth-data", "write a synthetic dataset directory");

  for (auto* s : {pretrain, train_gan, distill, supernet, profile, search, finetune, eval, cost, exportc, predict,
                  run_all})
    add_common(s, common);

  std::optional<double> budget_us;
  std::optional<int> population, generations;
  std::optional<double> mutation_rate;
  std::optional<std::uint64_t> search_seed;
  std::string lut_path, super_path, valset_dir;
  search->add_option("--budget-us", budget_us, "latency budget in microseconds");
  search->add_option("--population", population, "population size");
  search->add_option("--generations", generations, "number of generations");
  search->add_option("--mutation-rate", mutation_rate, "per-gene mutation probability");
  search->add_option("--seed", search_seed, "search seed");
  search->add_option("--lut", lut_path, "latency table (default <run>/artifacts/lut.json)");
  search->add_option("--super", super_path, "SuperGenerator weights (default <run>/artifacts/supernet_g.mfaw)");
  search->add_option("--valset", valset_dir, "validation dataset directory (default: configured val set)");

  std::string eval_weights, eval_dataset;
  eval->add_option("--weights", eval_weights, "generator weights (default <run>/artifacts/final_g.mfaw)");
  eval->add_option("--dataset", eval_dataset, "dataset directory with hr/ (default: configured test set)");

  std::string cost_genotype, cost_json;
  std::vector<int> cost_hw;
  cost->add_option("--genotype", cost_genotype, "comma-separated 8 widths (default: max genotype)");
  cost->add_option("--hw", cost_hw, "LR input height and width (default: cost_input_hw)")->expected(2);
  cost->add_option("--json", cost_json, "also write the JSON report to this file");

  std::string pred_graph, pred_genotype, pred_lut;
  std::vector<int> pred_hw;
  predict->add_option("--graph", pred_graph, "graph JSON (e.g. <run>/export/graph.json)");
  predict->add_option("--genotype", pred_genotype, "comma-separated 8 widths");
  predict->add_option("--lut", pred_lut, "latency table (default <run>/artifacts/lut.json)");
  predict->add_option("--hw", pred_hw, "LR input height and width (default: latency.input_hw)")->expected(2);

  std::string synth_out;
  std::uint64_t synth_seed = 7;
  int synth_count = 200, synth_size = 64, synth_scale = 4;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "dataset seed");
  synth->add_option("--count", synth_count, "number of images");
  synth->add_option("--hr-size", synth_size, "HR image side");
  synth->add_option("--scale", synth_scale, "downscale factor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (synth->parsed()) {
      mfa::write_dataset_dir(mfa::synth_dataset(synth_seed, synth_count, synth_size, synth_scale), synth_out);
      std::printf("wrote %d image pairs to %s\n", synth_count, synth_out.c_str());
      return kOk;
    }

    std::vector<std::string> extra;
    if (search->parsed()) {
      if (budget_us) extra.push_back("search.budget_us=" + fmt("%.17g", *budget_us));
      if (population) extra.push_back("search.population=" + std::to_string(*population));
      if (generations) extra.push_back("search.generations=" + std::to_string(*generations));
      if (mutation_rate) extra.push_back("search.mutation_rate=" + fmt("%.17g", *mutation_rate));
      if (search_seed) extra.push_back("search.seed=" + std::to_string(*search_seed));
    }
    const mfa::RunConfig cfg = resolve(common, extra);
    mfa::Pipeline p(cfg);

    if (pretrain->parsed()) print_stage("pretrain", p.pretrain());
    if (train_gan->parsed()) print_stage("train-gan", p.train_gan());
    if (distill->parsed()) print_stage("distill", p.distill());
    if (supernet->parsed()) print_stage("train-supernet", p.train_supernet());
    if (profile->parsed()) {
      const auto t = p.profile_latency();
      std::printf("latency table: %zu operators -> %s\n", t.entries.size(),
                  p.artifact(mfa::Pipeline::kLut).c_str());
    }
    if (search->parsed()) {
      mfa::Pipeline::SearchInputs in;
      if (!lut_path.empty()) in.lut = lut_path;
      if (!super_path.empty()) in.super = super_path;
      if (!valset_dir.empty()) in.valset = valset_dir;
      const auto r = p.search(in);
      std::cout << mfa::to_json(r.best).dump() << "\n";
      for (const auto& h : r.history) std::cout << mfa::to_json(h).dump() << "\n";
    }
    if (finetune->parsed()) print_stage("finetune", p.finetune());
    if (eval->parsed()) {
      std::optional<std::filesystem::path> w, d;
      if (!eval_weights.empty()) w = eval_weights;
      if (!eval_dataset.empty()) d = eval_dataset;
      const auto rep = p.eval(w, d);
      std::printf("%-8s %12s %12s %10s   (border %d)\n", "image", "sr_db", "bicubic_db", "gain_db", rep.border);
      for (const auto& r : rep.rows)
        std::printf("%-8s %12.4f %12.4f %+10.4f\n", r.name.c_str(), r.sr_db, r.bicubic_db, r.sr_db - r.bicubic_db);
      std::printf("%-8s %12.4f %12.4f %+10.4f\n", "mean", rep.mean_sr, rep.mean_bicubic,
                  rep.mean_sr - rep.mean_bicubic);
    }
    if (cost->parsed()) {
      const mfa::Genotype g = cost_genotype.empty() ? cfg.super_genotype() : mfa::Genotype::parse(cost_genotype);
      const int h = cost_hw.size() == 2 ? cost_hw[0] : cfg.cost_h;
      const int w = cost_hw.size() == 2 ? cost_hw[1] : cfg.cost_w;
      const auto rep = mfa::cost_report(mfa::build_mfanet(g, cfg.mfanet()), h, w);
      nlohmann::json j = mfa::to_json(rep);
      j["genotype"] = g.genes();
      std::cout << mfa::format_table(rep);
      std::cout << j.dump() << "\n";
      if (!cost_json.empty()) {
        std::ofstream f(cost_json, std::ios::trunc);
        f << j.dump(2) << "\n";
      }
    }
    if (exportc->parsed()) {
      p.export_final();
      std::printf("exported to %s\n", p.export_dir().c_str());
    }
    if (predict->parsed()) {
      const std::filesystem::path lp = pred_lut.empty() ? p.artifact(mfa::Pipeline::kLut) : std::filesystem::path(pred_lut);
      if (!std::filesystem::exists(lp)) throw mfa::PipelineError("missing latency table: " + lp.string());
      mfa::NetworkGraph g;
      if (!pred_graph.empty()) {
        g = mfa::graph_from_json(mfa::read_json_file(pred_graph));
      } else {
        g = mfa::build_mfanet(pred_genotype.empty() ? cfg.super_genotype() : mfa::Genotype::parse(pred_genotype),
                              cfg.mfanet());
      }
      const int h = pred_hw.size() == 2 ? pred_hw[0] : cfg.lr_h;
      const int w = pred_hw.size() == 2 ? pred_hw[1] : cfg.lr_w;
      std::printf("%.6f\n", mfa::predict(g, mfa::load_lut(lp), h, w));
    }
    if (run_all->parsed()) {
      print_stage("pretrain", p.pretrain());
      print_stage("train-gan", p.train_gan());
      print_stage("distill", p.distill());
      print_stage("train-supernet", p.train_supernet());
      p.profile_latency();
      const auto r = p.search();
      std::cout << "search: " << mfa::to_json(r.best).dump() << "\n";
      print_stage("finetune", p.finetune());
      p.export_final();
      const auto rep = p.eval();
      std::printf("test PSNR-Y %.4f dB, bicubic %.4f dB, gain %+.4f dB\n", rep.mean_sr, rep.mean_bicubic,
                  rep.mean_sr - rep.mean_bicubic);
    }
    return kOk;
  } catch (const mfa::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const mfa::GenotypeError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const mfa::DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return kDivergence;
  } catch (const mfa::Error& e) {
    std::fprintf(stderr, "pipeline error: %s\n", e.what());
    return kPipeline;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kPipeline;
  }
}
