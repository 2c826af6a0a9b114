// Copyright 2026 The MBS Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// mbs: train toy models, build calibration plans, compress, measure language
// similarity and compare perplexities.
//
// Exit codes: 0 success, 2 configuration/input error, 3 runtime/numerical error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mbs/mbs.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

std::string file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw mbs::ConfigError("cannot read " + p.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return hex64(mbs::fnv1a64(bytes));
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("MBS_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw mbs::ConfigError(std::string("MBS_SEED is not an unsigned integer: '") + env + "'");
  }
  return 0;
}

ojson read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw mbs::ConfigError("file not found: " + p.string());
  try {
    return ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw mbs::ConfigError(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw mbs::RuntimeError("cannot write " + p.string());
  out << text;
}

void reject_unknown(const ojson& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) throw mbs::ConfigError(where + ": expected a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (auto a : allowed) ok |= it.key() == a;
    if (!ok) throw mbs::ConfigError(where + ": unknown key \"" + it.key() + "\"");
  }
}

// Replay record written next to every output.
struct RunManifest {
  ojson doc;

  RunManifest(const std::string& command, int argc, char** argv) {
    doc["tool"] = "mbs";
    doc["command"] = command;
    doc["argv"] = std::vector<std::string>(argv, argv + argc);
  }
  void input(const fs::path& p) { doc["inputs"][p.string()] = file_hash(p); }
  void output(const fs::path& p) { doc["outputs"][p.string()] = file_hash(p); }
  void write(const fs::path& p) const { write_text(p, doc.dump(2) + "\n"); }
};

fs::path manifest_path_for(const std::string& flag, const fs::path& primary_output) {
  if (!flag.empty()) return flag;
  return fs::path(primary_output.string() + ".run.json");
}

void add_manifest_inputs(RunManifest& run, const mbs::LanguageManifest& m) {
  for (const auto& e : m.entries) {
    if (!e.train_path.empty() && fs::exists(e.train_path)) run.input(e.train_path);
    if (!e.eval_path.empty() && fs::exists(e.eval_path)) run.input(e.eval_path);
  }
}

std::vector<std::string> eval_languages(const mbs::LanguageManifest& m, const mbs::Corpus& c) {
  std::vector<std::string> out;
  for (const auto& e : m.entries)
    if (c.has(e.id, mbs::Source::eval)) out.push_back(e.id);
  if (out.empty()) throw mbs::ConfigError("manifest lists no eval corpus for any language");
  return out;
}

void print_report(const mbs::PerplexityReport& rep) {
  std::cout << std::fixed << std::setprecision(3);
  std::cout << std::left << std::setw(12) << "lang" << std::right << std::setw(12) << "dense" << std::setw(12)
            << "compressed" << std::setw(12) << "increase%" << '\n';
  for (const auto& r : rep.rows)
    std::cout << std::left << std::setw(12) << r.lang_id << std::right << std::setw(12) << r.dense_ppl
              << std::setw(12) << r.compressed_ppl << std::setw(12) << r.increase_pct << '\n';
  std::cout << std::left << std::setw(12) << "average" << std::right << std::setw(12) << rep.mean_dense()
            << std::setw(12) << rep.mean_compressed() << std::setw(12) << rep.increase_of_means_pct() << '\n';
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string alphabet;
  std::size_t bytes = 0;
  int successors = 3;
  std::uint64_t grammar = 0;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  const auto text = mbs::synthesize_text({a.alphabet, a.successors, a.grammar}, a.bytes, resolve_seed(a.seed));
  write_text(a.out, text);
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> steps;
  std::string out;
  std::string run_manifest;
};

int run_train(const TrainArgs& a, int argc, char** argv) {
  const fs::path cfg_path = a.config;
  const auto cfg = read_json(cfg_path);
  reject_unknown(cfg, {"manifest", "model", "mixture", "steps", "seed", "batch_size", "learning_rate", "out"},
                 cfg_path.string());
  if (!cfg.contains("manifest")) throw mbs::ConfigError(cfg_path.string() + ": \"manifest\" is required");

  mbs::ModelConfig model;
  if (cfg.contains("model")) {
    const auto& m = cfg["model"];
    reject_unknown(m, {"context_k", "embed_dim", "hidden_dim", "n_hidden_layers"}, "model");
    model.context_k = m.value("context_k", model.context_k);
    model.embed_dim = m.value("embed_dim", model.embed_dim);
    model.hidden_dim = m.value("hidden_dim", model.hidden_dim);
    model.n_hidden_layers = m.value("n_hidden_layers", model.n_hidden_layers);
  }
  model.validate();

  mbs::TrainOptions opt;
  opt.steps = a.steps ? *a.steps : cfg.value("steps", opt.steps);
  opt.seed = a.seed ? *a.seed : (cfg.contains("seed") ? cfg["seed"].get<std::uint64_t>() : resolve_seed({}));
  opt.batch_size = cfg.value("batch_size", opt.batch_size);
  opt.learning_rate = cfg.value("learning_rate", opt.learning_rate);
  if (opt.steps == 0) throw mbs::ConfigError("steps must be >= 1");

  fs::path manifest_path = cfg["manifest"].get<std::string>();
  if (manifest_path.is_relative()) manifest_path = cfg_path.parent_path() / manifest_path;
  const auto manifest = mbs::load_manifest(manifest_path);
  const auto corpus = mbs::Corpus::load(manifest);

  std::vector<mbs::MixtureEntry> mixture;
  if (cfg.contains("mixture")) {
    for (const auto& [lang, w] : cfg["mixture"].items()) {
      manifest.at(lang);
      mixture.push_back({lang, w.get<double>()});
    }
  } else {
    for (const auto& e : manifest.entries)
      if (e.byte_size > 0 && corpus.has(e.id, mbs::Source::train))
        mixture.push_back({e.id, static_cast<double>(e.byte_size)});
  }

  const fs::path out = !a.out.empty() ? fs::path(a.out)
                       : cfg.contains("out") ? fs::path(cfg["out"].get<std::string>())
                                             : throw mbs::ConfigError("no output path (--out or \"out\")");

  const auto ckpt = mbs::train(model, mixture, corpus, opt);
  mbs::save_checkpoint(ckpt, out);

  RunManifest run("train", argc, argv);
  run.doc["config"] = cfg;
  run.doc["seed"] = opt.seed;
  run.doc["steps"] = opt.steps;
  run.input(cfg_path);
  run.input(manifest_path);
  add_manifest_inputs(run, manifest);
  run.output(out);
  run.write(manifest_path_for(a.run_manifest, out));
  std::cout << "checkpoint " << out.string() << " hash " << hex64(mbs::checkpoint_hash(ckpt)) << '\n';
  return 0;
}

// ---- plan ------------------------------------------------------------------

struct PlanArgs {
  std::string policy = "mbs";
  std::string lang;
  std::uint64_t total = 256;
  std::string manifest;
  std::string out;
  std::string run_manifest;
};

mbs::CalibrationPlan make_plan(const std::string& policy, const std::string& lang, std::uint64_t total,
                               const mbs::LanguageManifest& m) {
  switch (mbs::parse_policy(policy)) {
    case mbs::PlanPolicy::mbs: return mbs::plan_mbs(m, total);
    case mbs::PlanPolicy::equal: return mbs::plan_equal(m, total);
    case mbs::PlanPolicy::monolingual:
      if (lang.empty()) throw mbs::ConfigError("monolingual plan needs --lang");
      return mbs::plan_monolingual(m, lang, total);
  }
  throw mbs::ConfigError("unknown policy");
}

int run_plan(const PlanArgs& a, int argc, char** argv) {
  const auto manifest = mbs::load_manifest(a.manifest);
  const auto plan = make_plan(a.policy, a.lang, a.total, manifest);
  for (const auto& e : plan.counts) std::cout << std::left << std::setw(10) << e.lang_id << e.count << '\n';
  std::cout << std::left << std::setw(10) << "total" << plan.sum() << '\n';
  if (!a.out.empty()) {
    write_text(a.out, mbs::plan_to_json(plan).dump(2) + "\n");
    RunManifest run("plan", argc, argv);
    run.doc["config"] = {{"policy", a.policy}, {"lang", a.lang}, {"total", a.total}};
    run.input(a.manifest);
    run.output(a.out);
    run.write(manifest_path_for(a.run_manifest, a.out));
  }
  return 0;
}

// ---- compress --------------------------------------------------------------

struct CompressArgs {
  std::string checkpoint;
  std::string manifest;
  std::string method;
  std::optional<double> sparsity;
  std::optional<int> bits;
  std::optional<int> group;
  double lambda = 0.01;
  int block_size = 32;
  std::string plan;
  std::string policy;
  std::string lang;
  std::uint64_t total = 256;
  std::size_t seg_len = 128;
  std::size_t eval_segments = 32;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string report;
  std::string run_manifest;
  int threads = 1;
  bool per_language_hessian = false;
};

int run_compress(const CompressArgs& a, int argc, char** argv) {
  mbs::CompressionConfig cfg;
  cfg.method = mbs::parse_method(a.method);
  if (mbs::is_pruning(cfg.method)) {
    if (a.bits || a.group) throw mbs::ConfigError("--bits/--group apply to quantization methods only");
    if (a.sparsity) cfg.sparsity = *a.sparsity;
  } else {
    if (a.sparsity) throw mbs::ConfigError("--sparsity applies to pruning methods only");
    if (a.bits) cfg.bits = *a.bits;
    if (a.group) cfg.group_size = *a.group;
  }
  cfg.lambda_rel = a.lambda;
  cfg.block_size = a.block_size;
  cfg.seg_len = a.seg_len;
  cfg.seed = resolve_seed(a.seed);
  cfg.threads = a.threads;
  cfg.per_language_hessian = a.per_language_hessian;

  const auto manifest = mbs::load_manifest(a.manifest);
  if (!a.plan.empty() && !a.policy.empty()) throw mbs::ConfigError("give either --plan or --policy, not both");
  if (!a.plan.empty())
    cfg.plan = mbs::plan_from_json(read_json(a.plan));
  else
    cfg.plan = make_plan(a.policy.empty() ? "mbs" : a.policy, a.lang, a.total, manifest);
  for (const auto& e : cfg.plan.counts)
    if (e.count > 0) manifest.at(e.lang_id);
  cfg.validate();

  const auto dense = mbs::load_checkpoint(a.checkpoint);
  const auto corpus = mbs::Corpus::load(manifest);
  const auto result = mbs::compress_model(dense, cfg, corpus);
  mbs::save_checkpoint(result.checkpoint, a.out);

  RunManifest run("compress", argc, argv);
  run.doc["config"] = mbs::config_to_json(cfg);
  run.doc["seed"] = cfg.seed;
  run.input(a.checkpoint);
  run.input(a.manifest);
  if (!a.plan.empty()) run.input(a.plan);
  add_manifest_inputs(run, manifest);
  for (const auto& s : result.layers)
    run.doc["layers"].push_back({{"layer", s.layer_index},
                                 {"samples", s.n_samples},
                                 {"layer_error", s.layer_error},
                                 {"lambda", s.lambda}});
  run.output(a.out);

  if (!a.report.empty()) {
    const auto eval = mbs::draw_eval_set(corpus, eval_languages(manifest, corpus), a.seg_len, a.eval_segments,
                                         cfg.seed);
    auto rep = mbs::report(dense, result.checkpoint, eval);
    rep.config = run.doc["config"];
    std::ofstream csv(a.report);
    if (!csv) throw mbs::RuntimeError("cannot write " + a.report);
    mbs::write_report_csv(rep, csv);
    csv.close();
    run.doc["eval_segments"] = a.eval_segments;
    run.output(a.report);
    print_report(rep);
  }
  run.write(manifest_path_for(a.run_manifest, a.out));
  return 0;
}

// ---- similarity ------------------------------------------------------------

struct SimilarityArgs {
  std::string checkpoint;
  std::string manifest;
  std::size_t segments = 64;
  std::size_t seg_len = 128;
  std::optional<std::uint64_t> seed;
  int mds_dim = 2;
  std::string out;
  std::string mds_out;
  std::string run_manifest;
};

int run_similarity(const SimilarityArgs& a, int argc, char** argv) {
  const auto ckpt = mbs::load_checkpoint(a.checkpoint);
  const auto manifest = mbs::load_manifest(a.manifest);
  const auto corpus = mbs::Corpus::load(manifest);
  const auto seed = resolve_seed(a.seed);
  std::vector<mbs::ActivationProfile> profiles;
  for (const auto& e : manifest.entries) {
    const auto source = corpus.has(e.id, mbs::Source::eval) ? mbs::Source::eval : mbs::Source::train;
    const auto segs = mbs::draw_segments(corpus, e.id, source, a.seg_len, a.segments, seed);
    profiles.push_back(mbs::build_profile(ckpt, e.id, segs));
  }
  const auto dist = mbs::distance_matrix(profiles);
  const auto coords = mbs::mds_embed(dist, a.mds_dim);
  {
    std::ofstream out(a.out);
    if (!out) throw mbs::RuntimeError("cannot write " + a.out);
    mbs::write_distance_csv(dist, out);
  }
  const fs::path mds_out = a.mds_out.empty() ? fs::path(a.out).replace_extension(".mds.csv") : fs::path(a.mds_out);
  {
    std::ofstream out(mds_out);
    if (!out) throw mbs::RuntimeError("cannot write " + mds_out.string());
    mbs::write_coordinates_csv(dist.langs, coords, out);
  }
  std::cout << std::fixed << std::setprecision(2);
  for (const auto& l : dist.langs) std::cout << std::left << std::setw(10) << l << mbs::average_distance(dist, l) << '\n';

  RunManifest run("similarity", argc, argv);
  run.doc["config"] = {{"segments", a.segments}, {"seg_len", a.seg_len}, {"mds_dim", a.mds_dim}};
  run.doc["seed"] = seed;
  run.input(a.checkpoint);
  run.input(a.manifest);
  add_manifest_inputs(run, manifest);
  run.output(a.out);
  run.output(mds_out);
  run.write(manifest_path_for(a.run_manifest, a.out));
  return 0;
}

// ---- report ----------------------------------------------------------------

struct ReportArgs {
  std::string dense;
  std::string compressed;
  std::string manifest;
  std::size_t segments = 32;
  std::size_t seg_len = 128;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string input;
  std::string run_manifest;
};

int run_report(const ReportArgs& a, int argc, char** argv) {
  if (!a.input.empty()) {
    std::ifstream in(a.input);
    if (!in) throw mbs::ConfigError("report not found: " + a.input);
    print_report(mbs::read_report_csv(in));
    return 0;
  }
  if (a.dense.empty() || a.compressed.empty() || a.manifest.empty())
    throw mbs::ConfigError("report needs --in, or --dense, --compressed and --manifest");
  const auto dense = mbs::load_checkpoint(a.dense);
  const auto compressed = mbs::load_checkpoint(a.compressed);
  const auto manifest = mbs::load_manifest(a.manifest);
  const auto corpus = mbs::Corpus::load(manifest);
  const auto seed = resolve_seed(a.seed);
  const auto rep =
      mbs::report(dense, compressed, mbs::draw_eval_set(corpus, eval_languages(manifest, corpus), a.seg_len,
                                                        a.segments, seed));
  print_report(rep);
  if (!a.out.empty()) {
    std::ofstream out(a.out);
    if (!out) throw mbs::RuntimeError("cannot write " + a.out);
    mbs::write_report_csv(rep, out);
    out.close();
    RunManifest run("report", argc, argv);
    run.doc["config"] = {{"segments", a.segments}, {"seg_len", a.seg_len}};
    run.doc["seed"] = seed;
    run.input(a.dense);
    run.input(a.compressed);
    run.input(a.manifest);
    add_manifest_inputs(run, manifest);
    run.output(a.out);
    run.write(manifest_path_for(a.run_manifest, a.out));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilingual calibration and compression toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write synthetic Markov-chain text");
  s->add_option("--alphabet", synth.alphabet, "Symbols of the language")->required();
  s->add_option("--bytes", synth.bytes, "Output length")->required();
  s->add_option("--successors", synth.successors, "Successors per symbol");
  s->add_option("--grammar", synth.grammar, "Grammar seed");
  s->add_option("--seed", synth.seed, "Text seed (falls back to MBS_SEED)");
  s->add_option("--out", synth.out, "Output file")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a toy k-gram language model");
  t->add_option("--config", train.config, "Training config (JSON)")->required();
  t->add_option("--seed", train.seed, "Seed (overrides config, falls back to MBS_SEED)");
  t->add_option("--steps", train.steps, "Optimizer steps (overrides config)");
  t->add_option("--out", train.out, "Checkpoint path (overrides config)");
  t->add_option("--run-manifest", train.run_manifest, "Run manifest path");

  PlanArgs plan;
  auto* p = app.add_subcommand("plan", "Build a calibration plan");
  p->add_option("--policy", plan.policy, "mbs | equal | mono");
  p->add_option("--lang", plan.lang, "Language for --policy mono");
  p->add_option("--total", plan.total, "Number of segments");
  p->add_option("--manifest", plan.manifest, "Language manifest (JSON)")->required();
  p->add_option("--out", plan.out, "Plan file (JSON)");
  p->add_option("--run-manifest", plan.run_manifest, "Run manifest path");

  CompressArgs comp;
  auto* c = app.add_subcommand("compress", "Prune or quantize a checkpoint");
  c->add_option("--checkpoint", comp.checkpoint, "Dense checkpoint")->required();
  c->add_option("--manifest", comp.manifest, "Language manifest (JSON)")->required();
  c->add_option("--method", comp.method, "magnitude | wanda | sparsegpt | gptq | rtn")->required();
  c->add_option("--sparsity", comp.sparsity, "Pruned fraction per row, in [0, 1)");
  c->add_option("--bits", comp.bits, "Quantization bits");
  c->add_option("--group", comp.group, "Quantization group size");
  c->add_option("--lambda", comp.lambda, "Dampening, relative to mean diag(H)");
  c->add_option("--block-size", comp.block_size, "Column block size of the pruning sweep");
  c->add_option("--plan", comp.plan, "Calibration plan file (JSON)");
  c->add_option("--policy", comp.policy, "Build the plan inline: mbs | equal | mono");
  c->add_option("--lang", comp.lang, "Language for --policy mono");
  c->add_option("--total", comp.total, "Segments for --policy");
  c->add_option("--seg-len", comp.seg_len, "Segment length in tokens");
  c->add_option("--eval-segments", comp.eval_segments, "Eval segments per language for --report");
  c->add_option("--seed", comp.seed, "Seed (falls back to MBS_SEED)");
  c->add_option("--out", comp.out, "Compressed checkpoint")->required();
  c->add_option("--report", comp.report, "Perplexity report (CSV)");
  c->add_option("--run-manifest", comp.run_manifest, "Run manifest path");
  c->add_option("--threads", comp.threads, "Threads for row-parallel stages");
  c->add_flag("--per-language-hessian", comp.per_language_hessian, "Record per-language Hessian parts");

  SimilarityArgs sim;
  auto* m = app.add_subcommand("similarity", "Language distances from embedding activations");
  m->add_option("--checkpoint", sim.checkpoint, "Checkpoint")->required();
  m->add_option("--manifest", sim.manifest, "Language manifest (JSON)")->required();
  m->add_option("--segments", sim.segments, "Segments per language");
  m->add_option("--seg-len", sim.seg_len, "Segment length in tokens");
  m->add_option("--seed", sim.seed, "Seed (falls back to MBS_SEED)");
  m->add_option("--mds-dim", sim.mds_dim, "MDS dimensions");
  m->add_option("--out", sim.out, "Distance matrix (CSV)")->required();
  m->add_option("--mds-out", sim.mds_out, "MDS coordinates (CSV)");
  m->add_option("--run-manifest", sim.run_manifest, "Run manifest path");

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Per-language perplexity comparison");
  r->add_option("--in", rep.input, "Print an existing report CSV");
  r->add_option("--dense", rep.dense, "Dense checkpoint");
  r->add_option("--compressed", rep.compressed, "Compressed checkpoint");
  r->add_option("--manifest", rep.manifest, "Language manifest (JSON)");
  r->add_option("--segments", rep.segments, "Eval segments per language");
  r->add_option("--seg-len", rep.seg_len, "Segment length in tokens");
  r->add_option("--seed", rep.seed, "Seed (falls back to MBS_SEED)");
  r->add_option("--out", rep.out, "Report (CSV)");
  r->add_option("--run-manifest", rep.run_manifest, "Run manifest path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*s) return run_synth(synth);
    if (*t) return run_train(train, argc, argv);
    if (*p) return run_plan(plan, argc, argv);
    if (*c) return run_compress(comp, argc, argv);
    if (*m) return run_similarity(sim, argc, argv);
    if (*r) return run_report(rep, argc, argv);
  } catch (const mbs::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const mbs::RuntimeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
