// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all
// selected criteria pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "exitwise/checkpoint.hpp"
#include "exitwise/error.hpp"
#include "exitwise/kernels.hpp"
#include "exitwise/losses.hpp"
#include "exitwise/pipeline.hpp"
#include "exitwise/runtime.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace exitwise;
using namespace exitwise::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(v[i], 1);
  return s;
}

struct Context {
  fs::path work;
  fs::path cli;
  std::size_t seeds = 5;
  std::size_t gradient_cases = 100;
  std::ostream* log = &std::cerr;
};

// ------------------------------------------------------------------ 1

Outcome gradient_suite_criterion(const Context& ctx) {
  const auto t0 = Clock::now();
  Rng rng(2026);
  GradReport total;
  std::size_t entries = 0;
  for (const auto& e : gradient_suite()) {
    const auto r = e.run(rng, ctx.gradient_cases, GradTolerance{});
    if (!r.ok()) *ctx.log << "  gradient " << e.name << ": " << r.first_failure << '\n';
    total.merge(r);
    ++entries;
  }
  const double secs = seconds_since(t0);
  const bool pass = total.ok() && secs < 60.0 && total.cases >= 100;
  return {pass, std::to_string(entries) + " ops, " + std::to_string(total.cases) + " cases, " +
                    std::to_string(total.failures) + " failures, worst ratio " + fmt(total.worst_ratio, 3) + ", " +
                    fmt(secs, 1) + " s"};
}

// ------------------------------------------------------------------ 2

Outcome loss_identities(const Context&) {
  std::vector<std::string> bad;
  Rng rng(5);
  const Tensor64 logits = random_leaf({6, 7}, rng, -3, 3);
  const double kl_self = kl_loss(logits, {logits, logits}).item();
  if (std::abs(kl_self) > 1e-12) bad.push_back("kl(O,O)=" + std::to_string(kl_self));
  const double ce = cross_entropy(Tensor64::zeros({4, 7}), {0, 2, 4, 6}).item();
  if (std::abs(ce - std::log(7.0)) > 1e-6) bad.push_back("uniform ce=" + std::to_string(ce));
  const Tensor64 u = random_leaf({5, 9}, rng, -2, 2, 0.1);
  const double cs = similarity(SimKind::Cosine, u, u).item();
  if (std::abs(cs + 1.0) > 1e-6) bad.push_back("cosine self=" + std::to_string(cs));

  // Every step of a 2-epoch desk-scale run.
  RunConfig c = parse_run_config("{}", {"train.epochs=2", "train.log_timing=false"});
  std::size_t steps = 0;
  double worst = 0;
  TrainHooks hooks;
  hooks.on_step = [&](std::size_t, std::size_t, const LossReport& r) {
    ++steps;
    const double rel = std::abs(r.reconstructed(c.loss) - r.total) / std::max(std::abs(r.total), 1e-12);
    worst = std::max(worst, rel);
  };
  kernels::set_num_threads(1);
  const auto out = run_training(c, hooks);
  const std::size_t expected = 2 * ((700 + c.train.batch_size - 1) / c.train.batch_size);
  if (steps != expected) bad.push_back("saw " + std::to_string(steps) + " steps");
  if (worst > 1e-5) bad.push_back("reconstruction error " + std::to_string(worst));
  std::string detail = "kl(O,O)=" + fmt(kl_self, 3) + ", ce(uniform)=" + fmt(ce, 6) + ", cos(u,u)=" + fmt(cs, 6) +
                       ", " + std::to_string(steps) + " steps, worst relative reconstruction " +
                       [&] {
                         std::ostringstream os;
                         os << std::scientific << std::setprecision(1) << worst;
                         return os.str();
                       }();
  for (const auto& b : bad) detail += "; " + b;
  return {bad.empty(), detail};
}

// ------------------------------------------------------------------ 3, 4

struct SeedRun {
  std::map<std::string, double> self_distill;  // layer2, layer4, teacher
  double truncated2 = 0;
  std::map<std::size_t, double> layerwise;  // student depth -> dev UAR
  std::size_t sd_epochs = 0, sd_joint = 0;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> lw_phases;  // regress, classify
};

struct TrendData {
  std::vector<SeedRun> runs;
  double seconds = 0;
  std::string error;
};

const TrendData& trend_runs(const Context& ctx) {
  static std::optional<TrendData> cached;
  if (cached) return *cached;
  cached.emplace();
  TrendData& d = *cached;
  const auto t0 = Clock::now();
  kernels::set_num_threads(1);
  try {
    // Stand-in for a pretrained backbone: the teacher alone, trained on an
    // independently seeded corpus.
    const fs::path pre_dir = ctx.work / "pretrain";
    RunConfig pre = load_run_config(fs::path(EXITWISE_SOURCE_DIR) / "configs" / "pretrain.json",
                                    {"train.log_timing=false", "output.dir=" + pre_dir.string()});
    fs::create_directories(pre_dir);
    *ctx.log << "  pretraining stand-in backbone (" << pre.train.epochs << " epochs)\n";
    {
      const auto out = run_training(pre);
      save_checkpoint(*out.model, pre.output.checkpoint_path());
      *ctx.log << "  pretrain dev UAR " << fmt(out.log.epochs.back().dev_uar.at("teacher")) << '\n';
    }
    const std::string init = "train.init_checkpoint=" + pre.output.checkpoint_path().string();

    for (std::size_t s = 1; s <= ctx.seeds; ++s) {
      SeedRun r;
      const std::string seed = "train.seed=" + std::to_string(s);
      const std::vector<std::string> common{init, seed, "train.log_timing=false"};

      auto sd_cfg = parse_run_config("{}", common);
      const auto sd = run_training(sd_cfg);
      r.self_distill = sd.log.epochs.back().dev_uar;
      r.sd_epochs = sd.log.epochs.size();
      r.sd_joint = sd.log.count("joint");

      auto tr = common;
      tr.push_back("train.mode=truncated");
      tr.push_back("train.truncate_layer=2");
      r.truncated2 = run_training(parse_run_config("{}", tr)).log.epochs.back().dev_uar.at("layer2");

      for (std::size_t depth : {2u, 4u}) {
        auto lw = common;
        lw.push_back("train.mode=layerwise");
        lw.push_back("train.student_depth=" + std::to_string(depth));
        const auto out = run_training(parse_run_config("{}", lw));
        r.layerwise[depth] = out.log.epochs.back().dev_uar.at("layer" + std::to_string(depth));
        r.lw_phases[depth] = {out.log.count("regress"), out.log.count("classify")};
      }
      *ctx.log << "  seed " << s << ": self-distill layer2 " << fmt(r.self_distill["layer2"]) << " layer4 "
               << fmt(r.self_distill["layer4"]) << " teacher " << fmt(r.self_distill["teacher"]) << " | truncated2 "
               << fmt(r.truncated2) << " | layerwise2 " << fmt(r.layerwise[2]) << " layerwise4 "
               << fmt(r.layerwise[4]) << " (" << fmt(seconds_since(t0), 0) << " s)\n";
      d.runs.push_back(std::move(r));
    }
  } catch (const std::exception& e) {
    d.error = e.what();
  }
  d.seconds = seconds_since(t0);
  return d;
}

std::vector<double> column(const TrendData& d, const std::function<double(const SeedRun&)>& f) {
  std::vector<double> v;
  for (const auto& r : d.runs) v.push_back(f(r));
  return v;
}

Outcome trend_reproduction(const Context& ctx) {
  const auto& d = trend_runs(ctx);
  if (!d.error.empty()) return {false, "training failed: " + d.error};
  const auto l2 = column(d, [](const SeedRun& r) { return r.self_distill.at("layer2"); });
  const auto l4 = column(d, [](const SeedRun& r) { return r.self_distill.at("layer4"); });
  const auto t = column(d, [](const SeedRun& r) { return r.self_distill.at("teacher"); });
  const auto tr = column(d, [](const SeedRun& r) { return r.truncated2; });
  const double m2 = median(l2), m4 = median(l4), mt = median(t), mtr = median(tr);
  const bool a = m2 <= m4 + 2.0 && m4 <= mt + 2.0;
  const bool b = m2 >= mtr;
  const bool c = m4 >= mt - 3.0;
  const bool budget = d.seconds < 30 * 60;
  std::string detail = "median dev UAR layer2 " + fmt(m2) + " layer4 " + fmt(m4) + " teacher " + fmt(mt) +
                       " truncated2 " + fmt(mtr) + "; (a) " + (a ? "ok" : "FAIL") + " (b) " + (b ? "ok" : "FAIL") +
                       " (c) " + (c ? "ok" : "FAIL") + " [gap " + fmt(mt - m4) + "]; " +
                       std::to_string(d.runs.size()) + " seeds in " + fmt(d.seconds / 60.0, 1) + " min";
  return {a && b && c && budget && d.runs.size() == ctx.seeds, detail};
}

Outcome baseline_ordering(const Context& ctx) {
  const auto& d = trend_runs(ctx);
  if (!d.error.empty()) return {false, "training failed: " + d.error};
  bool pass = d.runs.size() == ctx.seeds;
  std::string detail;
  for (std::size_t depth : {2u, 4u}) {
    const std::string id = "layer" + std::to_string(depth);
    const double sd = median(column(d, [&](const SeedRun& r) { return r.self_distill.at(id); }));
    const double lw = median(column(d, [&](const SeedRun& r) { return r.layerwise.at(depth); }));
    pass = pass && sd >= lw;
    detail += id + " self-distill " + fmt(sd) + (sd >= lw ? " >= " : " < ") + "layer-wise " + fmt(lw) + "; ";
  }
  bool epochs_ok = true;
  for (const auto& r : d.runs) {
    epochs_ok = epochs_ok && r.sd_epochs == 20 && r.sd_joint == 20;
    for (const auto& [depth, ph] : r.lw_phases) epochs_ok = epochs_ok && ph.first == 20 && ph.second == 20;
  }
  detail += std::string("epochs self-distill 20 vs layer-wise 20+20 ") + (epochs_ok ? "ok" : "MISMATCH");
  return {pass && epochs_ok, detail};
}

// ------------------------------------------------------------------ 5

Outcome budget_oracle(const Context&) {
  Rng rng(77);
  std::size_t agree = 0, infeasible = 0, total = 0;
  std::vector<std::string> bad;
  auto check = [&](const ExitCatalog& cat, const Budget& b) {
    ++total;
    const auto want = select_exit_oracle(cat, b);
    try {
      const auto got = select_exit(cat, b);
      if (want && *want == got) ++agree;
      else if (bad.size() < 3) bad.push_back("got " + got + " want " + want.value_or("infeasible"));
    } catch (const BudgetInfeasible& e) {
      if (!want && std::string(e.what()).find(cat.entries.front().id) != std::string::npos) {
        ++agree;
        ++infeasible;
      } else if (bad.size() < 3) {
        bad.push_back(std::string("unexpected infeasible: ") + e.what());
      }
    }
  };
  for (int i = 0; i < 1000; ++i) {
    const auto cat = random_catalog(rng);
    const BudgetKind kinds[] = {BudgetKind::Params, BudgetKind::Flops, BudgetKind::LatencyMicros, BudgetKind::Depth};
    const BudgetKind kind = kinds[rng.below(4)];
    const auto cap = static_cast<std::uint64_t>(cost_of(cat.entries.back(), kind));
    // Mix of exact boundaries and random limits.
    std::uint64_t limit = 1 + rng.below(cap + 20);
    if (rng.below(4) == 0) limit = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(
                                                                  cost_of(cat.entries[rng.below(cat.entries.size())], kind)));
    check(cat, Budget{kind, limit});
  }
  const auto ref = reference_catalog();
  for (const char* b : {"params=80000000", "params=10000000", "params=85800000", "params=36200000",
                        "params=10^12", "depth=11"})
    check(ref, Budget::parse(b));
  const bool examples = select_exit(ref, Budget::parse("params=80000000")) == "layer8" &&
                        select_exit(ref, Budget::parse("params=85800000")) == "layer10";
  std::string detail = std::to_string(agree) + "/" + std::to_string(total) + " agree with exhaustive scan (" +
                       std::to_string(infeasible) + " infeasible); reference catalog 80M -> " +
                       select_exit(ref, Budget::parse("params=80000000"));
  for (const auto& b : bad) detail += "; " + b;
  return {agree == total && examples, detail};
}

// ------------------------------------------------------------------ 6

Outcome compute_monotonicity(const Context&) {
  kernels::set_num_threads(1);
  const RunConfig c = parse_run_config("{}", {"exits=[{\"layer\":1,\"block\":\"conv1x1\"},{\"layer\":2,\"block\":"
                                              "\"conv1x1\"},{\"layer\":3,\"block\":\"conv1x1\"},{\"layer\":4,"
                                              "\"block\":\"conv1x1\"},{\"layer\":5,\"block\":\"conv1x1\"}]"});
  MultiExitModel<float> model(c.model, 1);
  const Tensor wave = Tensor::full({1, c.data.clip_length}, 0.1f);
  bool counters = true;
  std::string counts;
  for (const auto& info : model.exit_infos()) {
    model.backbone().reset_layer_counter();
    predict_at_exit(model, wave, info.id);
    counters = counters && model.backbone().layers_executed() == info.layer;
    counts += std::to_string(model.backbone().layers_executed());
  }
  auto catalog = build_catalog(model, c.data.clip_length);
  const auto stats = bench(model, catalog, 1, c.data.clip_length, 25, 3);
  bool latency = true;
  std::vector<double> med;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    med.push_back(stats[i].median_us);
    counters = counters && stats[i].layers_executed == catalog.entries[i].layer;
    if (i > 0 && stats[i].median_us < 0.9 * stats[i - 1].median_us) latency = false;
  }
  return {counters && latency, "layers executed per exit " + counts + "; median us " + join(med)};
}

// ------------------------------------------------------------------ 7

Outcome determinism(const Context& ctx) {
  const fs::path cfg = ctx.work / "determinism.json";
  std::ofstream(cfg) << R"({"train": {"epochs": 2, "seed": 9, "log_timing": false}})";
  std::vector<std::string> outputs;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = ctx.work / ("determinism_" + std::to_string(run));
    fs::remove_all(dir);
    const std::string cmd = "\"" + ctx.cli.string() + "\" train -c \"" + cfg.string() + "\" -o output.dir=\"" +
                            dir.string() + "\" > \"" + (ctx.work / "determinism.out").string() + "\" 2>&1";
    const int code = std::system(cmd.c_str());
    if (code != 0) return {false, "train invocation failed: " + cmd};
  }
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
  };
  const fs::path a = ctx.work / "determinism_0", b = ctx.work / "determinism_1";
  const std::string ca = slurp(a / "model.ckpt"), cb = slurp(b / "model.ckpt");
  const std::string la = slurp(a / "train.jsonl"), lb = slurp(b / "train.jsonl");
  const bool same = !ca.empty() && ca == cb && !la.empty() && la == lb;
  return {same, "checkpoints " + std::to_string(ca.size()) + " bytes " + (ca == cb ? "identical" : "DIFFER") +
                    ", logs " + std::to_string(la.size()) + " bytes " + (la == lb ? "identical" : "DIFFER")};
}

// ------------------------------------------------------------------ 8

Outcome parameter_accounting(const Context& ctx) {
  const RunConfig base = parse_run_config("{}");
  std::vector<SweepPoint> points;
  for (const auto& axes : std::vector<std::vector<SweepAxis>>{{SweepAxis::Exits},
                                                              {SweepAxis::Blocks},
                                                              {SweepAxis::SimLoss},
                                                              {SweepAxis::Blocks, SweepAxis::SimLoss},
                                                              {SweepAxis::Exits, SweepAxis::Blocks}})
    for (auto& p : sweep_grid(base, axes)) points.push_back(std::move(p));
  std::size_t models = 0, exits = 0;
  std::vector<std::string> bad;
  const fs::path ckpt = ctx.work / "accounting.ckpt";
  auto check_model = [&](const ExitModel<float>& m, const std::string& label) {
    save_checkpoint(m, ckpt);
    ++models;
    std::uint64_t prev = 0;
    for (const auto& info : m.exit_infos()) {
      ++exits;
      const bool teacher_head = info.teacher || dynamic_cast<const TruncatedModel<float>*>(&m) != nullptr;
      const auto n = count_params(m, info.id);
      const auto oracle = checkpoint_walk_count(ckpt, info.layer, teacher_head);
      if (n != oracle && bad.size() < 3) bad.push_back(label + " " + info.id + " count " + std::to_string(n) +
                                                       " vs walk " + std::to_string(oracle));
      if (n <= prev && bad.size() < 3) bad.push_back(label + " " + info.id + " not above previous exit");
      prev = n;
    }
  };
  for (const auto& p : points) {
    auto m = make_model(p.config);
    check_model(*m, p.block + "/" + p.loss);
  }
  for (std::size_t k = 1; k <= base.model.backbone.num_layers; ++k)
    check_model(TruncatedModel<float>(base.model.backbone, k, 0), "truncated" + std::to_string(k));
  std::string detail = std::to_string(models) + " models, " + std::to_string(exits) + " exits checked";
  for (const auto& b : bad) detail += "; " + b;
  return {bad.empty(), detail};
}

// ------------------------------------------------------------------ 9

Outcome uar_metric(const Context&) {
  Rng rng(99);
  double worst = 0, worst_scaling = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    ConfusionMatrix cm(7);
    std::vector<std::vector<std::uint64_t>> counts(7, std::vector<std::uint64_t>(7));
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j) cm.at(i, j) = counts[i][j] = rng.below(trial % 3 == 0 ? 3 : 50);
    bool any = false;
    for (const auto& row : counts)
      for (auto v : row) any = any || v > 0;
    if (!any) continue;
    const double u = uar(cm);
    worst = std::max(worst, std::abs(u - uar_oracle(counts)));
    ConfusionMatrix scaled = cm;
    for (std::size_t i = 0; i < 7; ++i) {
      const std::uint64_t f = 1 + rng.below(12);
      for (std::size_t j = 0; j < 7; ++j) scaled.at(i, j) *= f;
    }
    worst_scaling = std::max(worst_scaling, std::abs(uar(scaled) - u));
  }
  std::ostringstream os;
  os << std::scientific << std::setprecision(1) << "max |uar - loop oracle| " << worst << ", max scaling drift "
     << worst_scaling;
  return {worst <= 1e-9 && worst_scaling <= 1e-9, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"exitwise acceptance"};
  Context ctx;
  std::string work = "acceptance_work";
  std::vector<int> only;
  ctx.cli = EXITWISE_CLI_PATH;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--criteria", only, "run only these criteria")->delimiter(',');
  app.add_option("--seeds", ctx.seeds, "seeds for the trend criteria");
  app.add_option("--cli", ctx.cli, "path to the exitwise executable");
  CLI11_PARSE(app, argc, argv);
  ctx.work = fs::absolute(work);
  fs::create_directories(ctx.work);

  const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> criteria{
      {"gradient suite", gradient_suite_criterion},
      {"loss identities", loss_identities},
      {"trend reproduction", trend_reproduction},
      {"baseline ordering", baseline_ordering},
      {"budget-selection oracle", budget_oracle},
      {"compute monotonicity", compute_monotonicity},
      {"determinism", determinism},
      {"parameter accounting", parameter_accounting},
      {"uar metric", uar_metric},
  };
  const std::set<int> selected(only.begin(), only.end());
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
