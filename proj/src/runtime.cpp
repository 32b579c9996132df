// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "exitwise/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "exitwise/error.hpp"
#include "exitwise/ops.hpp"
#include "json.hpp"

namespace exitwise {

void ExitCatalog::validate() const {
  if (entries.empty()) throw ConfigError("exit catalog is empty");
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].layer <= entries[i - 1].layer)
      throw ConfigError("catalog layers must increase: " + entries[i - 1].id + " then " + entries[i].id);
    if (entries[i].params <= entries[i - 1].params)
      throw ConfigError("catalog parameter counts must increase with depth: " + entries[i - 1].id + " then " +
                        entries[i].id);
  }
}

const CatalogEntry& ExitCatalog::at(const std::string& id) const {
  for (const auto& e : entries)
    if (e.id == id) return e;
  throw ConfigError("exit '" + id + "' is not in the catalog");
}

CatalogEntry& ExitCatalog::at(const std::string& id) {
  return const_cast<CatalogEntry&>(std::as_const(*this).at(id));
}

std::string ExitCatalog::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& e : entries) {
    nlohmann::ordered_json x;
    x["layer"] = e.layer;
    x["params"] = e.params;
    if (e.flops) x["flops"] = *e.flops;
    if (e.latency_us) x["latency_us"] = *e.latency_us;
    if (e.p95_us) x["p95_us"] = *e.p95_us;
    j[e.id] = x;
  }
  return j.dump(2) + "\n";
}

ExitCatalog ExitCatalog::from_json(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("catalog is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("catalog must be a JSON object keyed by exit id");
  ExitCatalog c;
  for (const auto& [id, x] : j.items()) {
    if (!x.is_object()) throw ConfigError("catalog entry '" + id + "' must be an object");
    for (const auto& [k, v] : x.items()) {
      (void)v;
      if (k != "layer" && k != "params" && k != "flops" && k != "latency_us" && k != "p95_us")
        throw ConfigError("unknown catalog field '" + id + "." + k + "'");
    }
    if (!x.contains("layer") || !x.contains("params"))
      throw ConfigError("catalog entry '" + id + "' needs layer and params");
    CatalogEntry e;
    e.id = id;
    try {
      e.layer = x.at("layer").get<std::size_t>();
      e.params = x.at("params").get<std::uint64_t>();
      if (x.contains("flops")) e.flops = x.at("flops").get<std::uint64_t>();
      if (x.contains("latency_us")) e.latency_us = x.at("latency_us").get<double>();
      if (x.contains("p95_us")) e.p95_us = x.at("p95_us").get<double>();
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError("catalog entry '" + id + "': " + ex.what());
    }
    c.entries.push_back(std::move(e));
  }
  std::stable_sort(c.entries.begin(), c.entries.end(),
                   [](const CatalogEntry& a, const CatalogEntry& b) { return a.layer < b.layer; });
  c.validate();
  return c;
}

void ExitCatalog::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write catalog " + path.string());
  out << to_json();
}

ExitCatalog ExitCatalog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read catalog " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

ExitCatalog build_catalog(const ExitModel<float>& model, std::size_t samples) {
  const std::size_t frames = model.backbone().config().frames_for(samples);
  ExitCatalog c;
  for (const auto& info : model.exit_infos()) {
    CatalogEntry e;
    e.id = info.id;
    e.layer = info.layer;
    e.params = count_params(model, info.id);
    e.flops = model.clip_macs(info.id, samples) / frames;
    c.entries.push_back(std::move(e));
  }
  c.validate();
  return c;
}

std::string to_string(BudgetKind kind) {
  switch (kind) {
    case BudgetKind::Params: return "params";
    case BudgetKind::Flops: return "flops";
    case BudgetKind::LatencyMicros: return "latency";
    case BudgetKind::Depth: return "depth";
  }
  return "?";
}

namespace {

std::uint64_t parse_limit(const std::string& s) {
  auto bad = [&] { return ConfigError("budget limit '" + s + "' is not a positive integer, a^b or scientific number"); };
  if (s.empty()) throw bad();
  double value = 0;
  try {
    const auto caret = s.find('^');
    std::size_t used = 0;
    if (caret != std::string::npos) {
      const std::string base = s.substr(0, caret), exponent = s.substr(caret + 1);
      std::size_t u1 = 0, u2 = 0;
      const double b = std::stod(base, &u1);
      const double e = std::stod(exponent, &u2);
      if (u1 != base.size() || u2 != exponent.size()) throw bad();
      value = std::pow(b, e);
    } else {
      value = std::stod(s, &used);
      if (used != s.size()) throw bad();
    }
  } catch (const std::logic_error&) {
    throw bad();
  }
  if (!std::isfinite(value) || value < 1.0 || value != std::floor(value)) throw bad();
  if (value >= 18446744073709551615.0) return std::numeric_limits<std::uint64_t>::max();
  return static_cast<std::uint64_t>(value);
}

}  // namespace

Budget Budget::parse(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("budget must look like kind=limit, got '" + text + "'");
  const std::string kind = text.substr(0, eq);
  Budget b;
  if (kind == "params")
    b.kind = BudgetKind::Params;
  else if (kind == "flops")
    b.kind = BudgetKind::Flops;
  else if (kind == "latency" || kind == "latency_us")
    b.kind = BudgetKind::LatencyMicros;
  else if (kind == "depth")
    b.kind = BudgetKind::Depth;
  else
    throw ConfigError("unknown budget kind '" + kind + "' (params, flops, latency, depth)");
  b.limit = parse_limit(text.substr(eq + 1));
  return b;
}

double cost_of(const CatalogEntry& e, BudgetKind kind) {
  switch (kind) {
    case BudgetKind::Params: return static_cast<double>(e.params);
    case BudgetKind::Depth: return static_cast<double>(e.layer);
    case BudgetKind::Flops:
      if (!e.flops) throw ConfigError("catalog entry " + e.id + " has no flops estimate");
      return static_cast<double>(*e.flops);
    case BudgetKind::LatencyMicros:
      if (!e.latency_us) throw ConfigError("catalog entry " + e.id + " has no measured latency; run bench first");
      return *e.latency_us;
  }
  return 0;
}

std::string select_exit(const ExitCatalog& catalog, const Budget& budget) {
  if (budget.limit == 0) throw ConfigError("budget limit must be positive");
  catalog.validate();
  const double limit = static_cast<double>(budget.limit);
  const CatalogEntry* best = nullptr;
  const CatalogEntry* cheapest = nullptr;
  for (const auto& e : catalog.entries) {
    const double c = cost_of(e, budget.kind);
    if (!cheapest || c < cost_of(*cheapest, budget.kind)) cheapest = &e;
    if (c <= limit) best = &e;  // entries are sorted by layer
  }
  if (!best) {
    std::ostringstream os;
    os << "no exit fits " << to_string(budget.kind) << " budget " << budget.limit << "; cheapest is "
       << cheapest->id << " at " << static_cast<std::uint64_t>(std::ceil(cost_of(*cheapest, budget.kind)));
    throw BudgetInfeasible(os.str());
  }
  return best->id;
}

Tensor predict_at_exit(const ExitModel<float>& model, const Tensor& wave, const std::string& id) {
  NoGradGuard guard;
  return softmax(model.logits_at(wave, id), 1);
}

Tensor fuse(const std::vector<Tensor>& probabilities, FusionRule rule) {
  if (probabilities.empty()) throw ShapeError("fuse needs at least one distribution");
  const Shape& shape = probabilities[0].shape();
  if (shape.size() != 2) throw ShapeError("fuse expects [B,D] distributions, got " + shape_str(shape));
  for (const auto& p : probabilities)
    if (p.shape() != shape)
      throw ShapeError("fuse inputs disagree: " + shape_str(shape) + " vs " + shape_str(p.shape()));
  const std::size_t rows = shape[0], cols = shape[1];
  const float n = static_cast<float>(probabilities.size());
  std::vector<float> out(rows * cols, 0.0f);
  for (const auto& p : probabilities) {
    const auto d = p.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const auto row = d.subspan(r * cols, cols);
      if (rule == FusionRule::Mean) {
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += row[c] / n;
      } else {
        const auto top = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        out[r * cols + top] += 1.0f / n;
      }
    }
  }
  return Tensor(shape, std::move(out));
}

std::uint64_t count_params(const ExitModel<float>& model, const std::string& id) {
  return nn::count_scalars(model.exit_parameters(id));
}

std::vector<LatencyStats> bench(const ExitModel<float>& model, ExitCatalog& catalog, std::size_t batch,
                                std::size_t samples, std::size_t repeats, std::uint64_t seed) {
  if (repeats < 3) throw ConfigError("bench needs at least 3 repeats, got " + std::to_string(repeats));
  if (batch == 0) throw ConfigError("bench batch must be positive");
  Rng rng(seed);
  std::vector<float> w(batch * samples);
  for (auto& x : w) x = static_cast<float>(rng.uniform(-0.5, 0.5));
  const Tensor wave({batch, samples}, std::move(w));
  auto& counter_owner = const_cast<Backbone<float>&>(model.backbone());

  std::vector<LatencyStats> out;
  for (const auto& info : model.exit_infos()) {
    predict_at_exit(model, wave, info.id);  // warm-up
    std::vector<double> us;
    counter_owner.reset_layer_counter();
    for (std::size_t r = 0; r < repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      predict_at_exit(model, wave, info.id);
      us.push_back(std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count());
    }
    LatencyStats s;
    s.id = info.id;
    s.layers_executed = model.backbone().layers_executed() / repeats;
    std::sort(us.begin(), us.end());
    s.median_us = us.size() % 2 ? us[us.size() / 2] : 0.5 * (us[us.size() / 2 - 1] + us[us.size() / 2]);
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(us.size())));
    s.p95_us = us[std::max<std::size_t>(rank, 1) - 1];
    for (auto& e : catalog.entries)
      if (e.id == info.id) {
        e.latency_us = s.median_us;
        e.p95_us = s.p95_us;
      }
    out.push_back(s);
  }
  return out;
}

}  // namespace exitwise
