// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "exitwise/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "exitwise/error.hpp"
#include "exitwise/kernels.hpp"
#include "exitwise/pipeline.hpp"
#include "exitwise/runtime.hpp"
#include "json.hpp"

namespace exitwise {

namespace {

using json = nlohmann::ordered_json;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string format = "table";

  RunConfig load() const { return load_run_config(config, overrides); }
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  auto* opt = cmd->add_option("-c,--config", c.config, "run config (JSON)");
  if (config_required) opt->required();
  cmd->add_option("-o,--override", c.overrides, "section.key=value, applied in order");
}

void add_format(CLI::App* cmd, Common& c) {
  cmd->add_option("--format", c.format, "table or jsonl")->check(CLI::IsMember({"table", "jsonl"}));
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::filesystem::path checkpoint_or_default(const std::string& given, const RunConfig& c) {
  return given.empty() ? c.output.checkpoint_path() : std::filesystem::path(given);
}

// ---------------------------------------------------------------- train

int cmd_train(const Common& common, const std::string& mode, std::ostream& out, std::ostream& err) {
  std::vector<std::string> overrides = common.overrides;
  if (!mode.empty()) overrides.push_back("train.mode=" + mode);
  const RunConfig c = load_run_config(common.config, overrides);
  c.check_paths();
  std::filesystem::create_directories(c.output.dir);

  std::ofstream log_file(c.output.log_path(), std::ios::trunc);
  if (!log_file) throw ConfigError("cannot write " + c.output.log_path().string());
  std::ostringstream lines;
  TrainHooks hooks;
  hooks.log_stream = &lines;
  err << "training " << to_string(c.mode) << " for " << c.train.epochs << " epochs\n";
  kernels::set_num_threads(1);
  auto outcome = run_training(c, hooks);
  log_file << lines.str();
  out << lines.str();

  save_checkpoint(*outcome.model, c.output.checkpoint_path());
  build_catalog(*outcome.model, c.data.clip_length).save(c.output.catalog_path());
  std::ofstream(std::filesystem::path(c.output.dir) / "config.json", std::ios::trunc) << dump_run_config(c);
  out << json{{"event", "saved"},
              {"checkpoint", c.output.checkpoint_path().string()},
              {"log", c.output.log_path().string()},
              {"catalog", c.output.catalog_path().string()}}
             .dump()
      << '\n';
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::string checkpoint;
  std::string split = "test";
  bool per_exit = false;
  bool fusion = false;
  bool confusion = false;
  std::string report;
};

int cmd_eval(const Common& common, const EvalOptions& o, std::ostream& out) {
  const RunConfig c = common.load();
  const auto model = load_trained(c, checkpoint_or_default(o.checkpoint, c));
  const Split split = load_split(c);
  const Corpus& data = o.split == "dev" ? split.dev : o.split == "train" ? split.train : split.test;

  std::vector<std::string> ids;
  if (!o.per_exit) ids.push_back(model->exit_infos().back().id);
  const auto m = evaluate(*model, data, c.data.clip_length, c.data.synth.sample_rate, ids, o.per_exit && o.fusion);

  std::vector<const ExitMetrics*> rows;
  for (const auto& e : m.exits) rows.push_back(&e);
  if (m.fusion) rows.push_back(&*m.fusion);

  std::ostringstream report;
  if (common.format == "jsonl") {
    for (const auto* r : rows) {
      json j{{"exit", r->id}, {"split", o.split}, {"n", data.size()}, {"uar", r->uar}};
      if (o.confusion) {
        json cm = json::array();
        for (std::size_t t = 0; t < r->confusion.classes(); ++t) {
          json row = json::array();
          for (std::size_t p = 0; p < r->confusion.classes(); ++p) row.push_back(r->confusion.at(t, p));
          cm.push_back(row);
        }
        j["confusion"] = cm;
      }
      report << j.dump() << '\n';
    }
  } else {
    report << std::left << std::setw(10) << "exit" << std::setw(7) << "split" << std::right << std::setw(8) << "UAR"
           << '\n';
    for (const auto* r : rows) {
      report << std::left << std::setw(10) << r->id << std::setw(7) << o.split << std::right << std::setw(8)
             << fixed(r->uar) << '\n';
      if (o.confusion) {
        for (std::size_t t = 0; t < r->confusion.classes(); ++t) {
          report << "  ";
          for (std::size_t p = 0; p < r->confusion.classes(); ++p) report << std::setw(5) << r->confusion.at(t, p);
          report << '\n';
        }
      }
    }
  }
  out << report.str();
  if (!o.report.empty()) std::ofstream(o.report, std::ios::trunc) << report.str();
  return 0;
}

// ---------------------------------------------------------------- infer

struct InferOptions {
  std::string checkpoint;
  std::string input;
  int clip = -1;
  std::string exit;
  std::string budget;
  std::string catalog;
  bool select_only = false;
};

int cmd_infer(const Common& common, const InferOptions& o, std::ostream& out) {
  if (o.exit.empty() == o.budget.empty()) throw ConfigError("give exactly one of --exit or --budget");
  std::optional<RunConfig> c;
  if (!common.config.empty()) c = common.load();

  std::optional<ExitCatalog> catalog;
  auto load_catalog = [&] {
    std::filesystem::path p = o.catalog;
    if (p.empty()) {
      if (!c) throw ConfigError("--catalog or --config is required");
      p = c->output.catalog_path();
    }
    catalog = ExitCatalog::load(p);
  };

  std::string chosen = o.exit;
  std::optional<Budget> budget;
  if (!o.budget.empty()) {
    budget = Budget::parse(o.budget);
    load_catalog();
    chosen = select_exit(*catalog, *budget);
  }
  json j;
  j["exit"] = chosen;
  if (budget) {
    const auto& e = catalog->at(chosen);
    j["layer"] = e.layer;
    j["cost"] = {{"kind", to_string(budget->kind)}, {"value", cost_of(e, budget->kind)}, {"limit", budget->limit}};
  }
  if (o.select_only) {
    out << j.dump() << '\n';
    return 0;
  }
  if (!c) throw ConfigError("--config is required to run the model");
  const auto model = load_trained(*c, checkpoint_or_default(o.checkpoint, *c));
  const int rate = c->data.synth.sample_rate;
  Corpus clips;
  if (!o.input.empty()) {
    auto wav = read_wav(o.input);
    clips.push_back({std::move(wav.samples), wav.sample_rate, 0, ""});
  } else {
    const Split split = load_split(*c);
    if (o.clip < 0 || static_cast<std::size_t>(o.clip) >= split.test.size())
      throw ConfigError("--clip must index the test split (0.." + std::to_string(split.test.size() - 1) + ")");
    clips.push_back(split.test[static_cast<std::size_t>(o.clip)]);
  }
  const Batch b = make_batch(clips, {0}, c->data.clip_length, rate);
  const auto info = model->info(chosen);
  if (!budget) {
    j["layer"] = info.layer;
    j["cost"] = {{"kind", "params"}, {"value", count_params(*model, chosen)}};
  }
  const Tensor p = predict_at_exit(*model, b.wave, chosen);
  const auto probs = p.data();
  const auto label = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  j["label"] = label;
  if (label < c->data.class_names.size()) j["label_name"] = c->data.class_names[label];
  j["probabilities"] = std::vector<float>(probs.begin(), probs.end());
  if (o.input.empty()) j["truth"] = clips[0].label;
  out << j.dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------- bench

struct BenchOptions {
  std::string checkpoint;
  std::size_t repeats = 10;
  std::size_t batch = 1;
  std::string catalog;
};

int cmd_bench(const Common& common, const BenchOptions& o, std::ostream& out) {
  const RunConfig c = common.load();
  if (o.repeats < 3) throw ConfigError("--repeats must be at least 3");
  const auto model = load_trained(c, checkpoint_or_default(o.checkpoint, c));
  auto catalog = build_catalog(*model, c.data.clip_length);
  const auto stats = bench(*model, catalog, o.batch, c.data.clip_length, o.repeats);
  const std::filesystem::path path = o.catalog.empty() ? c.output.catalog_path() : std::filesystem::path(o.catalog);
  catalog.save(path);
  if (common.format == "jsonl") {
    for (const auto& s : stats) {
      const auto& e = catalog.at(s.id);
      out << json{{"exit", s.id},        {"layer", e.layer},         {"params", e.params},
                  {"flops", *e.flops},   {"median_us", s.median_us}, {"p95_us", s.p95_us},
                  {"layers_executed", s.layers_executed}}
                 .dump()
          << '\n';
    }
  } else {
    out << std::left << std::setw(10) << "exit" << std::right << std::setw(7) << "layer" << std::setw(12) << "params"
        << std::setw(12) << "MAC/frame" << std::setw(12) << "median_us" << std::setw(12) << "p95_us" << '\n';
    for (const auto& s : stats) {
      const auto& e = catalog.at(s.id);
      out << std::left << std::setw(10) << s.id << std::right << std::setw(7) << e.layer << std::setw(12) << e.params
          << std::setw(12) << *e.flops << std::setw(12) << fixed(s.median_us, 1) << std::setw(12)
          << fixed(s.p95_us, 1) << '\n';
    }
  }
  return 0;
}

// ---------------------------------------------------------------- sweep

std::size_t sweep_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("EXITWISE_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v < 1) throw ConfigError("EXITWISE_THREADS must be at least 1");
      n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw ConfigError(std::string("EXITWISE_THREADS is not a number: ") + env);
    }
  }
  return n;
}

int cmd_sweep(const Common& common, const std::vector<std::string>& axis_args, std::ostream& out,
              std::ostream& err) {
  const RunConfig base = common.load();
  base.check_paths();
  std::vector<SweepAxis> axes;
  for (const auto& a : axis_args) {
    std::stringstream ss(a);
    std::string part;
    while (std::getline(ss, part, ',')) axes.push_back(parse_sweep_axis(part));
  }
  const auto grid = sweep_grid(base, axes);
  const std::size_t threads = sweep_threads();
  err << "sweep: " << grid.size() << " runs on " << threads << " threads\n";
  const auto results = run_sweep(grid, threads);

  if (common.format == "jsonl") {
    for (const auto& r : results) {
      json j{{"block", r.block}, {"loss", r.loss}, {"params", r.parameter_total}};
      json exits = json::object();
      for (std::size_t e = 0; e < r.exit_ids.size(); ++e)
        exits[r.exit_ids[e]] = {{"dev", r.dev_uar[e]}, {"test", r.test_uar[e]}};
      if (r.dev_fusion) exits["fusion"] = {{"dev", *r.dev_fusion}, {"test", *r.test_fusion}};
      j["uar"] = exits;
      out << j.dump() << '\n';
    }
    return 0;
  }
  for (const auto& r : results) {
    out << std::left << std::setw(16) << r.block << std::setw(12) << r.loss;
    for (std::size_t e = 0; e < r.exit_ids.size(); ++e)
      out << ' ' << r.exit_ids[e] << ' ' << fixed(r.dev_uar[e]) << '/' << fixed(r.test_uar[e]);
    if (r.dev_fusion) out << " fusion " << fixed(*r.dev_fusion) << '/' << fixed(*r.test_fusion);
    out << '\n';
  }
  out << "(dev/test UAR %)\n";
  return 0;
}

// ---------------------------------------------------------------- synth-data

int cmd_synth(const Common& common, const std::string& dir, bool wav, std::ostream& out) {
  const RunConfig c = common.load();
  if (c.data.source != "synth") throw ConfigError("synth-data needs data.source = synth");
  const Corpus corpus = synth_corpus(c.data.synth);
  std::filesystem::create_directories(dir);
  const auto cache = std::filesystem::path(dir) / "corpus.bin";
  save_corpus(cache, corpus);
  json j{{"clips", corpus.size()}, {"cache", cache.string()}};
  if (wav) {
    const auto manifest = std::filesystem::path(dir) / "manifest.tsv";
    std::ofstream m(manifest, std::ios::trunc);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto& clip = corpus[i];
      const std::string rel = "clip_" + std::to_string(i) + ".wav";
      write_wav_pcm16(std::filesystem::path(dir) / rel, clip.samples, clip.sample_rate);
      m << rel << '\t' << c.data.class_names.at(static_cast<std::size_t>(clip.label)) << '\t' << clip.speaker_id
        << '\n';
    }
    j["manifest"] = manifest.string();
  }
  out << j.dump() << '\n';
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"exitwise: multi-exit self-distillation and anytime inference"};
  app.require_subcommand(1);

  Common train_c, eval_c, infer_c, bench_c, sweep_c, synth_c;
  std::string mode;
  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, train_c);
  train->add_option("--mode", mode, "self_distill, truncated or layerwise")
      ->check(CLI::IsMember({"self_distill", "truncated", "layerwise"}));

  EvalOptions eo;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_c);
  add_format(eval, eval_c);
  eval->add_option("--checkpoint", eo.checkpoint, "checkpoint (default: from config)");
  eval->add_option("--split", eo.split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));
  eval->add_flag("--per-exit", eo.per_exit, "one row per exit; otherwise the teacher only");
  eval->add_flag("--fusion", eo.fusion, "add the fused students row");
  eval->add_flag("--confusion", eo.confusion, "print confusion matrices");
  eval->add_option("--report", eo.report, "also write the report here");

  InferOptions io;
  auto* infer = app.add_subcommand("infer", "predict one clip at a chosen exit or under a budget");
  add_common(infer, infer_c, false);
  infer->add_option("--checkpoint", io.checkpoint, "checkpoint (default: from config)");
  infer->add_option("--input", io.input, "mono WAV file");
  infer->add_option("--clip", io.clip, "index into the test split");
  infer->add_option("--exit", io.exit, "exit id, e.g. layer2 or teacher");
  infer->add_option("--budget", io.budget, "kind=limit with kind params, flops, latency or depth");
  infer->add_option("--catalog", io.catalog, "exit catalog (default: from config)");
  infer->add_flag("--select-only", io.select_only, "report the chosen exit without running the model");

  BenchOptions bo;
  auto* benchc = app.add_subcommand("bench", "time every exit and update the catalog");
  add_common(benchc, bench_c);
  add_format(benchc, bench_c);
  benchc->add_option("--checkpoint", bo.checkpoint, "checkpoint (default: from config)");
  benchc->add_option("--repeats", bo.repeats, "timed calls per exit (>= 3)");
  benchc->add_option("--batch", bo.batch, "clips per call");
  benchc->add_option("--catalog", bo.catalog, "catalog to write (default: from config)");

  std::vector<std::string> axes;
  auto* sweep = app.add_subcommand("sweep", "train a grid of configurations");
  add_common(sweep, sweep_c);
  add_format(sweep, sweep_c);
  sweep->add_option("--axis", axes, "exits, blocks or simloss; several form a grid")->required();

  std::string synth_dir;
  bool synth_wav = false;
  auto* synth = app.add_subcommand("synth-data", "write the synthetic corpus");
  add_common(synth, synth_c);
  synth->add_option("--out", synth_dir, "output directory")->required();
  synth->add_flag("--wav", synth_wav, "also write WAV files and a manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(train_c, mode, out, err);
    if (*eval) return cmd_eval(eval_c, eo, out);
    if (*infer) return cmd_infer(infer_c, io, out);
    if (*benchc) return cmd_bench(bench_c, bo, out);
    if (*sweep) return cmd_sweep(sweep_c, axes, out, err);
    if (*synth) return cmd_synth(synth_c, synth_dir, synth_wav, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace exitwise
