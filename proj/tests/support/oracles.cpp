// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "oracles.hpp"

#include <cmath>
#include <numbers>

#include "exitwise/checkpoint.hpp"

namespace exitwise::testing {

std::optional<std::string> select_exit_oracle(const ExitCatalog& catalog, const Budget& budget) {
  std::optional<std::string> best;
  std::size_t best_layer = 0;
  for (const auto& e : catalog.entries) {
    if (cost_of(e, budget.kind) > static_cast<double>(budget.limit)) continue;
    if (!best || e.layer > best_layer) {
      best = e.id;
      best_layer = e.layer;
    }
  }
  return best;
}

ExitCatalog random_catalog(Rng& rng) {
  ExitCatalog c;
  const std::size_t n = 1 + rng.below(8);
  std::size_t layer = 0;
  std::uint64_t params = 0, flops = 0;
  double latency = 0;
  for (std::size_t i = 0; i < n; ++i) {
    layer += 1 + rng.below(3);
    params += 1 + rng.below(1000);
    flops += rng.below(500);
    latency += rng.uniform(0.0, 100.0);
    CatalogEntry e;
    e.id = i + 1 == n ? "teacher" : "layer" + std::to_string(layer);
    e.layer = layer;
    e.params = params;
    e.flops = flops;
    e.latency_us = latency;
    c.entries.push_back(e);
  }
  return c;
}

ExitCatalog reference_catalog() {
  ExitCatalog c;
  c.entries = {{"layer3", 3, 36200000, {}, {}, {}},
               {"layer8", 8, 71600000, {}, {}, {}},
               {"layer10", 10, 85800000, {}, {}, {}},
               {"teacher", 12, 100000000, {}, {}, {}}};
  return c;
}

double uar_oracle(const std::vector<std::vector<std::uint64_t>>& counts) {
  double total = 0;
  int rows = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    std::uint64_t n = 0;
    for (auto v : counts[i]) n += v;
    if (n == 0) continue;
    total += static_cast<double>(counts[i][i]) / static_cast<double>(n);
    ++rows;
  }
  return 100.0 * total / rows;
}

std::uint64_t checkpoint_walk_count(const std::filesystem::path& checkpoint, std::size_t layer, bool teacher_head) {
  const auto container = read_container(checkpoint);
  const std::string exit_prefix = "exit." + std::to_string(layer) + ".";
  std::uint64_t total = 0;
  for (const auto& t : container.tensors) {
    bool needed = t.name.rfind("backbone.encoder.", 0) == 0;
    if (t.name.rfind("backbone.layer.", 0) == 0) {
      const auto rest = t.name.substr(std::string("backbone.layer.").size());
      needed = std::stoul(rest.substr(0, rest.find('.'))) <= layer;
    }
    if (teacher_head) needed = needed || t.name.rfind("head.", 0) == 0;
    else needed = needed || t.name.rfind(exit_prefix, 0) == 0;
    if (!needed) continue;
    std::uint64_t n = 1;
    for (auto d : t.shape) n *= d;
    total += n;
  }
  return total;
}

namespace {

std::vector<double> histogram(const LabeledClip& clip, std::size_t bins) {
  const std::size_t n = clip.samples.size();
  const std::size_t half = n / 2;
  std::vector<double> h(bins, 0.0);
  for (std::size_t k = 1; k <= half; ++k) {
    double re = 0, im = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(n);
      re += clip.samples[t] * std::cos(a);
      im -= clip.samples[t] * std::sin(a);
    }
    h[std::min(bins - 1, (k - 1) * bins / half)] += std::sqrt(re * re + im * im);
  }
  double s = 0;
  for (double v : h) s += v;
  if (s > 0)
    for (double& v : h) v /= s;
  return h;
}

}  // namespace

double histogram_centroid_uar(const Corpus& train, const Corpus& test, std::size_t classes, std::size_t bins) {
  std::vector<std::vector<double>> centroid(classes, std::vector<double>(bins, 0.0));
  std::vector<double> count(classes, 0.0);
  for (const auto& c : train) {
    const auto h = histogram(c, bins);
    for (std::size_t b = 0; b < bins; ++b) centroid[c.label][b] += h[b];
    count[c.label] += 1;
  }
  for (std::size_t k = 0; k < classes; ++k)
    for (double& v : centroid[k]) v /= std::max(1.0, count[k]);
  std::vector<std::vector<std::uint64_t>> cm(classes, std::vector<std::uint64_t>(classes, 0));
  for (const auto& c : test) {
    const auto h = histogram(c, bins);
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t k = 0; k < classes; ++k) {
      double d = 0;
      for (std::size_t b = 0; b < bins; ++b) d += (h[b] - centroid[k][b]) * (h[b] - centroid[k][b]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    ++cm[c.label][best];
  }
  return uar_oracle(cm);
}

}  // namespace exitwise::testing
