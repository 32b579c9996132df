// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "exitwise/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include "exitwise/error.hpp"
#include "json.hpp"

namespace exitwise {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.eps > 0.0))
    throw ConfigError("adam betas must lie in [0, 1) and eps must be positive");
  if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("train.grad_clip must be positive");
  weights.validate();
}

std::size_t TrainLog::count(const std::string& phase) const {
  return static_cast<std::size_t>(
      std::count_if(epochs.begin(), epochs.end(), [&](const EpochRecord& r) { return r.phase == phase; }));
}

std::string TrainLog::to_json_line(const EpochRecord& r, bool with_timing) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["phase"] = r.phase;
  j["steps"] = r.steps;
  j["loss"] = {{"total", r.loss.total},       {"ce_teacher", r.loss.ce_teacher}, {"ce_students", r.loss.ce_students},
               {"kl", r.loss.kl},             {"sim", r.loss.sim},               {"exit_ce", r.loss.exit_ce},
               {"exit_kl", r.loss.exit_kl},   {"exit_sim", r.loss.exit_sim},
               {"degenerate_pairs", r.loss.degenerate_pairs}};
  j["train_uar"] = r.train_uar;
  j["dev_uar"] = r.dev_uar;
  if (with_timing) j["seconds"] = r.seconds;
  return j.dump();
}

void TrainLog::write_jsonl(std::ostream& out, bool with_timing) const {
  for (const auto& r : epochs) out << to_json_line(r, with_timing) << '\n';
}

const ExitMetrics& Metrics::at(const std::string& id) const {
  for (const auto& e : exits)
    if (e.id == id) return e;
  if (id == "fusion" && fusion) return *fusion;
  throw ConfigError("no metrics for exit '" + id + "'");
}

namespace {

struct StepResult {
  Tensor loss;
  LossReport report;
  std::vector<Tensor> logits;  // per tracked exit, for train UAR
};

using StepFn = std::function<StepResult(const Batch&, Rng*)>;

void require_finite(const LossReport& r, const std::vector<std::string>& exit_ids, std::size_t epoch,
                    std::size_t step) {
  const std::string where = " at epoch " + std::to_string(epoch) + ", step " + std::to_string(step);
  if (!std::isfinite(r.ce_teacher)) throw NumericError("non-finite teacher cross-entropy" + where);
  for (std::size_t i = 0; i < r.exit_ce.size(); ++i)
    if (!std::isfinite(r.exit_ce[i]))
      throw NumericError("non-finite student cross-entropy at " + exit_ids.at(i) + where);
  for (std::size_t i = 0; i < r.exit_kl.size(); ++i)
    if (!std::isfinite(r.exit_kl[i])) throw NumericError("non-finite KL term at " + exit_ids.at(i) + where);
  for (std::size_t i = 0; i < r.exit_sim.size(); ++i)
    if (!std::isfinite(r.exit_sim[i])) throw NumericError("non-finite similarity term at " + exit_ids.at(i) + where);
  if (!std::isfinite(r.sim)) throw NumericError("non-finite similarity loss" + where);
  if (!std::isfinite(r.total)) throw NumericError("non-finite total loss" + where);
}

void accumulate(LossReport& acc, const LossReport& r) {
  acc.total += r.total;
  acc.ce_teacher += r.ce_teacher;
  acc.ce_students += r.ce_students;
  acc.kl += r.kl;
  acc.sim += r.sim;
  acc.degenerate_pairs += r.degenerate_pairs;
  auto add = [](std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < b.size()) a.resize(b.size(), 0.0);
    for (std::size_t i = 0; i < b.size(); ++i) a[i] += b[i];
  };
  add(acc.exit_ce, r.exit_ce);
  add(acc.exit_kl, r.exit_kl);
  add(acc.exit_sim, r.exit_sim);
}

void scale(LossReport& r, double s) {
  r.total *= s;
  r.ce_teacher *= s;
  r.ce_students *= s;
  r.kl *= s;
  r.sim *= s;
  for (auto* v : {&r.exit_ce, &r.exit_kl, &r.exit_sim})
    for (double& x : *v) x *= s;
}

int argmax_row(std::span<const float> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

void tally(ConfusionMatrix& cm, const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t classes = logits.dim(1);
  const auto d = logits.data();
  for (std::size_t b = 0; b < labels.size(); ++b) cm.add(labels[b], argmax_row(d.subspan(b * classes, classes)));
}

/// Drops `backbone.encoder.*` when the encoder is frozen.
nn::ParameterList<float> trainable(nn::ParameterList<float> params, bool freeze_encoder) {
  if (!freeze_encoder) return params;
  std::erase_if(params, [](const auto& p) { return p.name.rfind("backbone.encoder.", 0) == 0; });
  return params;
}

struct Phase {
  std::string name;
  nn::ParameterList<float> params;
  std::vector<std::string> tracked_ids;  // exits whose logits the step returns
  const ExitModel<float>* eval_model = nullptr;
  StepFn step;
};

void run_phase(const Phase& phase, const TrainData& data, const TrainConfig& cfg, Rng& order_rng, Rng& dropout_rng,
               const TrainHooks& hooks, TrainLog& log) {
  if (data.train.empty()) throw DataError(DataError::Kind::Empty, "training set is empty");
  const bool use_dropout = phase.eval_model && phase.eval_model->backbone().config().dropout > 0.0;
  std::vector<std::size_t> order(data.train.size());
  AdamState<float> adam;
  const std::size_t classes =
      phase.eval_model ? phase.eval_model->backbone().config().num_classes : std::size_t{1};

  double best_dev = -1.0;
  std::vector<std::vector<float>> best;
  const bool track_best = cfg.keep_best_dev && phase.eval_model && !data.dev.empty();

  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = log.epochs.size() + 1;
    rec.phase = phase.name;
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(order);

    std::vector<ConfusionMatrix> train_cm(phase.tracked_ids.size(), ConfusionMatrix(classes));
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t last = std::min(order.size(), first + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(first),
                                         order.begin() + static_cast<std::ptrdiff_t>(last));
      const Batch batch = make_batch(data.train, idx, data.clip_length, data.sample_rate);

      zero_grads(phase.params);
      StepResult res = phase.step(batch, use_dropout ? &dropout_rng : nullptr);
      require_finite(res.report, phase.tracked_ids, rec.epoch, rec.steps + 1);
      backward(res.loss);
      if (cfg.grad_clip) clip_grad_norm(phase.params, *cfg.grad_clip);
      adam_step(phase.params, adam, cfg.lr, cfg.adam);

      for (std::size_t i = 0; i < res.logits.size() && i < train_cm.size(); ++i)
        tally(train_cm[i], res.logits[i], batch.labels);
      accumulate(rec.loss, res.report);
      ++rec.steps;
      if (hooks.on_step) hooks.on_step(rec.epoch, rec.steps, res.report);
    }
    scale(rec.loss, 1.0 / static_cast<double>(rec.steps));
    for (std::size_t i = 0; i < train_cm.size(); ++i) rec.train_uar[phase.tracked_ids[i]] = uar(train_cm[i]);

    if (phase.eval_model && !data.dev.empty()) {
      const auto m = evaluate(*phase.eval_model, data.dev, data.clip_length, data.sample_rate, {}, false);
      for (const auto& x : m.exits) rec.dev_uar[x.id] = x.uar;
      if (track_best) {
        const double dev = m.exits.back().uar;
        if (dev > best_dev) {
          best_dev = dev;
          best.clear();
          for (const auto& p : phase.params) best.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
        }
      }
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (hooks.log_stream) *hooks.log_stream << TrainLog::to_json_line(rec, cfg.log_timing) << '\n' << std::flush;
    log.epochs.push_back(std::move(rec));
  }

  if (track_best && !best.empty()) {
    for (std::size_t i = 0; i < phase.params.size(); ++i) {
      auto t = phase.params[i].tensor;
      std::copy(best[i].begin(), best[i].end(), t.mutable_data().begin());
    }
  }
}

constexpr std::uint64_t kDropoutSalt = 0x64726f706f757431ULL;

}  // namespace

TrainLog fit_self_distill(MultiExitModel<float>& model, const TrainData& data, const TrainConfig& cfg,
                          const TrainHooks& hooks) {
  cfg.validate();
  TrainLog log;
  Rng order_rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ kDropoutSalt);
  std::vector<std::string> ids;
  for (const auto& s : model.config().exits) ids.push_back(s.id());
  ids.push_back("teacher");

  Phase phase;
  phase.name = "joint";
  phase.params = trainable(model.parameters(), cfg.freeze_encoder);
  phase.tracked_ids = ids;
  phase.eval_model = &model;
  phase.step = [&](const Batch& b, Rng* rng) {
    const auto out = model.forward(b.wave, rng);
    auto [loss, report] = total_loss(out, b.labels, cfg.weights, model.config().exits);
    StepResult r{loss, std::move(report), {}};
    for (const auto& e : out.exits) r.logits.push_back(e.logits);
    r.logits.push_back(out.logits);
    return r;
  };
  run_phase(phase, data, cfg, order_rng, dropout_rng, hooks, log);
  return log;
}

std::size_t init_backbone_from(const std::vector<TensorRecord>& records, const nn::ParameterList<float>& params) {
  std::vector<TensorRecord> backbone;
  for (const auto& r : records)
    if (r.name.rfind("backbone.", 0) == 0) backbone.push_back(r);
  nn::ParameterList<float> targets;
  std::set<std::string> have;
  for (const auto& r : backbone) have.insert(r.name);
  for (const auto& p : params)
    if (have.count(p.name)) targets.push_back(p);
  return assign_parameters(backbone, targets, false);
}

TrainLog fine_tune_truncated(TruncatedModel<float>& model, const TrainData& data, const TrainConfig& cfg,
                             const TrainHooks& hooks) {
  cfg.validate();
  TrainLog log;
  Rng order_rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ kDropoutSalt);
  for (const auto& p : model.frozen_parameters()) {
    auto t = p.tensor;
    t.set_requires_grad(false);
  }
  Phase phase;
  phase.name = "finetune";
  phase.params = trainable(model.active_parameters(), cfg.freeze_encoder);
  phase.tracked_ids = {model.exit_infos()[0].id};
  phase.eval_model = &model;
  phase.step = [&](const Batch& b, Rng* rng) {
    const auto out = model.forward(b.wave, rng);
    auto loss = cross_entropy(out.logits, b.labels);
    LossReport rep;
    rep.ce_teacher = rep.total = static_cast<double>(loss.item());
    return StepResult{loss, rep, {out.logits}};
  };
  run_phase(phase, data, cfg, order_rng, dropout_rng, hooks, log);
  return log;
}

std::vector<std::size_t> default_predict_layers(std::size_t n) {
  std::set<std::size_t> s{std::max<std::size_t>(1, n / 3), std::max<std::size_t>(1, 2 * n / 3), n};
  return {s.begin(), s.end()};
}

LayerwiseResult layerwise_distill(const MultiExitModel<float>& teacher, std::size_t student_depth,
                                  const std::vector<std::size_t>& predict_layers, const TrainData& data,
                                  const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const auto& bc = teacher.config().backbone;
  if (predict_layers.empty()) throw ConfigError("layer-wise distillation needs at least one prediction layer");
  for (auto l : predict_layers)
    if (l < 1 || l > bc.num_layers)
      throw ConfigError("prediction layer " + std::to_string(l) + " outside 1.." + std::to_string(bc.num_layers));
  if (student_depth < 1 || student_depth > bc.num_layers)
    throw ConfigError("student depth " + std::to_string(student_depth) + " outside 1.." +
                      std::to_string(bc.num_layers));

  Rng init_rng(cfg.seed ^ 0x6c617965727769ULL);
  LayerwiseResult res{TruncatedModel<float>(bc, student_depth, init_rng.fork()), predict_layers, {}, {}};
  init_backbone_from(snapshot(teacher.parameters()), res.student.parameters());
  for (const auto& p : res.student.frozen_parameters()) {
    auto t = p.tensor;
    t.set_requires_grad(false);
  }
  for (std::size_t i = 0; i < predict_layers.size(); ++i) res.predictors.emplace_back(bc.hidden, bc.hidden, init_rng);

  Rng order_rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ kDropoutSalt);
  const std::set<std::size_t> targets(predict_layers.begin(), predict_layers.end());
  const std::size_t deepest = *targets.rbegin();
  auto& student = res.student;

  Phase regress;
  regress.name = "regress";
  regress.params = trainable(student.active_parameters(), cfg.freeze_encoder);
  // The student head sees no loss in this stage; leave it out of the update.
  std::erase_if(regress.params, [](const auto& p) { return p.name.rfind("head.", 0) == 0; });
  for (std::size_t i = 0; i < res.predictors.size(); ++i)
    res.predictors[i].collect("predict." + std::to_string(predict_layers[i]), regress.params);
  regress.step = [&](const Batch& b, Rng* rng) {
    HiddenStates<float> t;
    {
      NoGradGuard guard;
      t = teacher.backbone().forward_to_layer(b.wave, deepest, targets);
    }
    const auto s = student.backbone().forward_to_layer(b.wave, student_depth, {student_depth}, rng);
    const auto& h = s.at(student_depth);
    const std::size_t rows = h.dim(0) * h.dim(1), width = h.dim(2);
    const auto flat = reshape(h, {rows, width});
    Tensor loss;
    LossReport rep;
    for (std::size_t i = 0; i < predict_layers.size(); ++i) {
      const auto pred = res.predictors[i].forward(flat);
      const auto target = reshape(t.at(predict_layers[i]), {rows, width});
      auto term = similarity(cfg.weights.sim, pred, target, &rep.degenerate_pairs);
      rep.exit_sim.push_back(static_cast<double>(term.item()));
      loss = i == 0 ? term : add(loss, term);
    }
    loss = mul_scalar(loss, 1.0f / static_cast<float>(predict_layers.size()));
    rep.sim = rep.total = static_cast<double>(loss.item());
    return StepResult{loss, rep, {}};
  };
  run_phase(regress, data, cfg, order_rng, dropout_rng, hooks, res.log);

  Phase classify;
  classify.name = "classify";
  classify.params = trainable(student.active_parameters(), cfg.freeze_encoder);
  classify.tracked_ids = {student.exit_infos()[0].id};
  classify.eval_model = &student;
  classify.step = [&](const Batch& b, Rng* rng) {
    const auto out = student.forward(b.wave, rng);
    auto loss = cross_entropy(out.logits, b.labels);
    LossReport rep;
    rep.ce_teacher = rep.total = static_cast<double>(loss.item());
    return StepResult{loss, rep, {out.logits}};
  };
  run_phase(classify, data, cfg, order_rng, dropout_rng, hooks, res.log);
  return res;
}

Metrics evaluate(const ExitModel<float>& model, const Corpus& corpus, std::size_t clip_length, int sample_rate,
                 const std::vector<std::string>& ids, bool fusion, std::size_t batch_size) {
  if (corpus.empty()) throw DataError(DataError::Kind::Empty, "cannot evaluate on an empty dataset");
  if (batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  NoGradGuard guard;
  const auto infos = model.exit_infos();
  std::vector<std::size_t> chosen;  // positions in infos
  if (ids.empty()) {
    for (std::size_t i = 0; i < infos.size(); ++i) chosen.push_back(i);
  } else {
    for (const auto& id : ids) {
      const auto it = std::find_if(infos.begin(), infos.end(), [&](const ExitInfo& e) { return e.id == id; });
      if (it == infos.end()) throw ConfigError("unknown exit '" + id + "'");
      chosen.push_back(static_cast<std::size_t>(it - infos.begin()));
    }
  }
  std::vector<std::size_t> students;
  for (std::size_t c = 0; c < chosen.size(); ++c)
    if (!infos[chosen[c]].teacher) students.push_back(c);
  const bool with_fusion = fusion && !students.empty();

  const std::size_t classes = model.backbone().config().num_classes;
  std::vector<ConfusionMatrix> cms(chosen.size(), ConfusionMatrix(classes));
  ConfusionMatrix fused(classes);
  const bool only_one = chosen.size() == 1;
  for (std::size_t first = 0; first < corpus.size(); first += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, corpus.size() - first));
    std::iota(idx.begin(), idx.end(), first);
    const Batch b = make_batch(corpus, idx, clip_length, sample_rate);
    std::vector<Tensor> logits;
    if (only_one) {
      logits.push_back(model.logits_at(b.wave, infos[chosen[0]].id));
    } else {
      const auto all = model.all_logits(b.wave);
      for (auto c : chosen) logits.push_back(all[c]);
    }
    for (std::size_t c = 0; c < chosen.size(); ++c) tally(cms[c], logits[c], b.labels);
    if (with_fusion) {
      std::vector<Tensor> probs;
      for (auto s : students) probs.push_back(softmax(logits[s], 1));
      Tensor mean_p = probs[0];
      for (std::size_t i = 1; i < probs.size(); ++i) mean_p = add(mean_p, probs[i]);
      tally(fused, mean_p, b.labels);
    }
  }
  Metrics m;
  for (std::size_t c = 0; c < chosen.size(); ++c) {
    const double u = uar(cms[c]);
    m.exits.push_back({infos[chosen[c]].id, std::move(cms[c]), u});
  }
  if (with_fusion) {
    const double u = uar(fused);
    m.fusion = ExitMetrics{"fusion", std::move(fused), u};
  }
  return m;
}

}  // namespace exitwise
