#include "gapstride/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "gapstride/rng.hpp"
#include "json.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gapstride {

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
  if (validation_fraction <= 0.0 || validation_fraction >= 1.0)
    throw std::invalid_argument("TrainConfig: validation_fraction must be in (0,1)");
  if (lr_proposed <= 0.0 || lr_grud <= 0.0 || lr_strats <= 0.0)
    throw std::invalid_argument("TrainConfig: learning rates must be > 0");
}

const char* arch_name(BaselineArch arch) { return arch == BaselineArch::kGrud ? "grud" : "strats"; }

double compute_objective(const std::vector<double>& y, const std::vector<double>& g_stat, const std::vector<double>& residuals) {
  if (y.empty()) throw std::invalid_argument("compute_objective: empty batch");
  if (y.size() != g_stat.size() || y.size() != residuals.size())
    throw std::invalid_argument("compute_objective: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = (y[i] - g_stat[i]) - residuals[i];
    acc += e * e;
  }
  return acc / static_cast<double>(y.size());
}

double compute_objective_residual(const std::vector<double>& u, const std::vector<double>& residuals) {
  if (u.empty()) throw std::invalid_argument("compute_objective_residual: empty batch");
  if (u.size() != residuals.size()) throw std::invalid_argument("compute_objective_residual: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double e = u[i] - residuals[i];
    acc += e * e;
  }
  return acc / static_cast<double>(u.size());
}

namespace {

// ---------------------------------------------------------------------------
// Shared minibatch driver. One tape per sample; per-sample gradients land in
// preallocated slots and are reduced in sample order, so the result is
// bit-identical for any thread count.
// ---------------------------------------------------------------------------

struct LoopHooks {
  // builds the prediction node for sample `idx`
  std::function<int(ad::Tape&, int, std::mt19937_64*)> forward;
  // called after each optimizer step (lambda positivity, identity checks)
  std::function<void(const std::vector<int>& batch, const std::vector<double>& preds)> after_step;
  std::function<std::vector<double>()> lambdas;  // may be empty
};

struct LoopResult {
  std::vector<EpochLog> log;
  std::vector<double> best_params;
  double init_train_loss = 0.0;
  int best_epoch = 0;
};

std::vector<double> eval_all(const LoopHooks& hooks, ad::ParameterStore& store, int n) {
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 4)
#endif
  for (int i = 0; i < n; ++i) {
    ad::Tape tape(&store);
    const int pred = hooks.forward(tape, i, nullptr);
    out[static_cast<std::size_t>(i)] = tape.value(pred).data[0];
  }
  return out;
}

LoopResult run_training_loop(ad::ParameterStore& store, const LoopHooks& hooks, const std::vector<double>& train_targets,
                             const std::vector<double>& val_targets, int n_train, int n_val, double lr,
                             const TrainConfig& cfg) {
  ad::AdamOptimizer adam(lr);
  adam.set_clip_norm(cfg.clip_norm);
  std::mt19937_64 g(rng::substream(cfg.seed, 0x7261696eULL));

  auto train_loss_eval = [&]() {
    const std::vector<double> preds = eval_all(hooks, store, n_train);
    return compute_objective_residual(train_targets, preds);
  };
  auto val_mse_eval = [&]() {
    std::vector<double> preds(static_cast<std::size_t>(n_val), 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 4)
#endif
    for (int i = 0; i < n_val; ++i) {
      ad::Tape tape(&store);
      const int pred = hooks.forward(tape, n_train + i, nullptr);
      preds[static_cast<std::size_t>(i)] = tape.value(pred).data[0];
    }
    return compute_objective_residual(val_targets, preds);
  };

  LoopResult res;
  res.init_train_loss = train_loss_eval();
  double val = val_mse_eval();
  res.log.push_back({0, res.init_train_loss, val, hooks.lambdas ? hooks.lambdas() : std::vector<double>{}});

  res.best_params = store.values_flat();
  double best_val = val;
  res.best_epoch = 0;
  int bad_epochs = 0;

  std::vector<int> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);

  const std::size_t n_scalars = store.total_scalars();
  std::vector<std::vector<double>> slots(static_cast<std::size_t>(cfg.batch_size), std::vector<double>(n_scalars, 0.0));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng::shuffle(order, g);
    double epoch_sq_sum = 0.0;
    for (int b0 = 0; b0 < n_train; b0 += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, n_train - b0);
      const std::vector<int> batch(order.begin() + b0, order.begin() + b0 + bsz);
      std::vector<std::uint64_t> sample_seeds(static_cast<std::size_t>(bsz));
      for (auto& s : sample_seeds) s = g();

      std::vector<double> preds(static_cast<std::size_t>(bsz), 0.0);
      std::string abort_msg;
      const int batch_id = b0 / cfg.batch_size;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
      for (int s = 0; s < bsz; ++s) {
        try {
          std::fill(slots[static_cast<std::size_t>(s)].begin(), slots[static_cast<std::size_t>(s)].end(), 0.0);
          std::mt19937_64 drop_rng(sample_seeds[static_cast<std::size_t>(s)]);
          ad::Tape tape(&store);
          const int idx = batch[static_cast<std::size_t>(s)];
          const int pred = hooks.forward(tape, idx, &drop_rng);
          const int target = tape.constant(Tensor::scalar(train_targets[static_cast<std::size_t>(idx)]));
          const int loss = tape.square(tape.sub(target, pred));
          tape.backward(loss);
          tape.export_param_grads(slots[static_cast<std::size_t>(s)], 1.0);
          preds[static_cast<std::size_t>(s)] = tape.value(pred).data[0];
        } catch (const std::exception& e) {
#ifdef _OPENMP
#pragma omp critical
#endif
          if (abort_msg.empty()) abort_msg = e.what();
        }
      }
      if (!abort_msg.empty())
        throw NumericalAbort("training aborted in epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_id) + ": " +
                             abort_msg);

      store.zero_grad();
      const double inv_b = 1.0 / static_cast<double>(bsz);
      for (int s = 0; s < bsz; ++s) store.add_to_grads_flat(slots[static_cast<std::size_t>(s)], inv_b);

      for (int s = 0; s < bsz; ++s) {
        const double e = train_targets[static_cast<std::size_t>(batch[static_cast<std::size_t>(s)])] - preds[static_cast<std::size_t>(s)];
        if (!std::isfinite(e)) throw NumericalAbort("non-finite loss in epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_id));
        epoch_sq_sum += e * e;
      }

      adam.step(store);
      if (hooks.after_step) hooks.after_step(batch, preds);
    }

    const double train_loss = epoch_sq_sum / static_cast<double>(n_train);
    val = val_mse_eval();
    res.log.push_back({epoch, train_loss, val, hooks.lambdas ? hooks.lambdas() : std::vector<double>{}});

    if (val < best_val) {
      best_val = val;
      res.best_params = store.values_flat();
      res.best_epoch = epoch;
      bad_epochs = 0;
    } else if (++bad_epochs >= cfg.patience) {
      break;
    }
  }

  store.set_values_flat(res.best_params);
  return res;
}

std::vector<double> grud_train_means(const CohortTable& cohort, const std::vector<std::string>& train_pids,
                                     const TrainStats& stats, int n_vars) {
  const std::set<std::string> pids(train_pids.begin(), train_pids.end());
  std::vector<double> sum(static_cast<std::size_t>(n_vars), 0.0);
  std::vector<long> n(static_cast<std::size_t>(n_vars), 0);
  for (const auto& v : cohort.visits) {
    if (!pids.count(v.participant_id)) continue;
    if (v.variable < 1 || v.variable > n_vars) continue;
    sum[static_cast<std::size_t>(v.variable - 1)] += stats.standardize(v.variable, v.value);
    ++n[static_cast<std::size_t>(v.variable - 1)];
  }
  std::vector<double> mean(static_cast<std::size_t>(n_vars), 0.0);
  for (int d = 0; d < n_vars; ++d)
    if (n[static_cast<std::size_t>(d)] > 0) mean[static_cast<std::size_t>(d)] = sum[static_cast<std::size_t>(d)] / static_cast<double>(n[static_cast<std::size_t>(d)]);
  return mean;
}

}  // namespace

// ---------------------------------------------------------------------------
// proposed model
// ---------------------------------------------------------------------------

TrainedProposed train_proposed(const CohortTable& cohort, const std::vector<AnchorSample>& pool_anchors, const SplitPlan& plan,
                               const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  train_cfg.validate();
  model_cfg.validate();

  const std::set<std::string> train_pids(plan.train.begin(), plan.train.end());
  const std::set<std::string> val_pids(plan.validation.begin(), plan.validation.end());
  std::vector<AnchorSample> train_anchors, val_anchors;
  for (const auto& a : pool_anchors) {
    if (train_pids.count(a.participant_id)) train_anchors.push_back(a);
    else if (val_pids.count(a.participant_id)) val_anchors.push_back(a);
    // anchors outside the training pool are never touched here
  }
  if (train_anchors.empty()) throw std::invalid_argument("train_proposed: empty training partition");
  if (val_anchors.empty()) throw std::invalid_argument("train_proposed: empty validation set");

  TrainedProposed out{GapTransformer(model_cfg, EncoderStyle::kGapResidual, train_cfg.seed)};
  out.stats = compute_train_stats(cohort, plan.train);

  // Algorithm step 1-2: training-only mixed-effects reference and its
  // fixed-effect predictions
  auto [spec, fit] = select_by_bic(CovariateSchema::instance().blocks, train_anchors);
  out.lmm_spec = std::move(spec);
  out.lmm = std::move(fit);

  const int n_train = static_cast<int>(train_anchors.size());
  const int n_val = static_cast<int>(val_anchors.size());
  std::vector<double> y_all, g_all, u_all;
  std::vector<TokenRow> rows;
  rows.reserve(static_cast<std::size_t>(n_train + n_val));
  for (const auto* group : {&train_anchors, &val_anchors}) {
    for (const auto& a : *group) {
      y_all.push_back(a.y);
      g_all.push_back(predict_fixed(out.lmm, a.x));
      u_all.push_back(a.y - g_all.back());
      rows.push_back(tokenize(a.history, out.stats, model_cfg));
    }
  }
  const std::vector<double> u_train(u_all.begin(), u_all.begin() + n_train);
  const std::vector<double> u_val(u_all.begin() + n_train, u_all.end());
  const std::vector<double> y_train(y_all.begin(), y_all.begin() + n_train);
  const std::vector<double> g_train(g_all.begin(), g_all.begin() + n_train);

  GapTransformer& model = out.model;
  LoopHooks hooks;
  hooks.forward = [&](ad::Tape& tape, int idx, std::mt19937_64* rng) {
    return model.forward(tape, rows[static_cast<std::size_t>(idx)], rng).output;
  };
  hooks.lambdas = [&]() { return model.lambdas_per_month(); };
  hooks.after_step = [&](const std::vector<int>& batch, const std::vector<double>& preds) {
    // Assumption: every gap penalty stays strictly positive after the update
    for (double l : model.lambdas_per_month())
      if (!(l > 0.0) || !std::isfinite(l)) throw NumericalAbort("gap penalty left the positive range after an optimizer step");
    // residual-risk identity, checked at every step on the live batch
    std::vector<double> yb, gb, ub;
    for (int idx : batch) {
      yb.push_back(y_train[static_cast<std::size_t>(idx)]);
      gb.push_back(g_train[static_cast<std::size_t>(idx)]);
      ub.push_back(u_train[static_cast<std::size_t>(idx)]);
    }
    const double emp = compute_objective(yb, gb, preds);
    const double res = compute_objective_residual(ub, preds);
    if (std::memcmp(&emp, &res, sizeof(double)) != 0)
      throw NumericalAbort("empirical and residual objectives disagree bitwise");
  };

  LoopResult lr = run_training_loop(model.params(), hooks, u_train, u_val, n_train, n_val, train_cfg.lr_proposed, train_cfg);
  out.log = std::move(lr.log);
  out.init_train_loss = lr.init_train_loss;
  out.best_epoch = lr.best_epoch;

  {
    std::vector<double> preds(static_cast<std::size_t>(n_train), 0.0);
    for (int i = 0; i < n_train; ++i) preds[static_cast<std::size_t>(i)] = model.evaluate(rows[static_cast<std::size_t>(i)]);
    out.final_train_loss = compute_objective(y_train, g_train, preds);
  }
  return out;
}

// ---------------------------------------------------------------------------
// baselines
// ---------------------------------------------------------------------------

double TrainedBaseline::predict(const AnchorSample& sample) const {
  if (arch == BaselineArch::kGrud) {
    const RegularGridSeries series = to_regular_grid(sample.history, x_bar, stats, grud_cfg.grid_cap);
    return grud->evaluate(series);
  }
  const TokenRow row = tokenize(sample.history, stats, strats->encoder().config());
  return strats->evaluate(row);
}

TrainedBaseline train_baseline(BaselineArch arch, const CohortTable& cohort, const std::vector<AnchorSample>& pool_anchors,
                               const SplitPlan& plan, const GrudConfig& grud_cfg, const StratsConfig& strats_cfg,
                               const TrainConfig& train_cfg) {
  train_cfg.validate();

  const std::set<std::string> train_pids(plan.train.begin(), plan.train.end());
  const std::set<std::string> val_pids(plan.validation.begin(), plan.validation.end());
  std::vector<const AnchorSample*> train_anchors, val_anchors;
  for (const auto& a : pool_anchors) {
    if (train_pids.count(a.participant_id)) train_anchors.push_back(&a);
    else if (val_pids.count(a.participant_id)) val_anchors.push_back(&a);
  }
  if (train_anchors.empty()) throw std::invalid_argument("train_baseline: empty training partition");
  if (val_anchors.empty()) throw std::invalid_argument("train_baseline: empty validation set");

  TrainedBaseline out;
  out.arch = arch;
  out.grud_cfg = grud_cfg;
  out.strats_cfg = strats_cfg;
  out.stats = compute_train_stats(cohort, plan.train);

  const int n_train = static_cast<int>(train_anchors.size());
  const int n_val = static_cast<int>(val_anchors.size());
  std::vector<double> y_train, y_val;
  for (const auto* a : train_anchors) y_train.push_back(a->y);
  for (const auto* a : val_anchors) y_val.push_back(a->y);

  LoopHooks hooks;
  double lr = 0.0;
  std::vector<RegularGridSeries> grids;
  std::vector<TokenRow> rows;

  if (arch == BaselineArch::kGrud) {
    out.x_bar = grud_train_means(cohort, plan.train, out.stats, grud_cfg.n_vars);
    out.grud = std::make_unique<GrudModel>(grud_cfg, train_cfg.seed);
    grids.reserve(static_cast<std::size_t>(n_train + n_val));
    for (const auto* group : {&train_anchors, &val_anchors})
      for (const auto* a : *group) grids.push_back(to_regular_grid(a->history, out.x_bar, out.stats, grud_cfg.grid_cap));
    hooks.forward = [&grids, m = out.grud.get()](ad::Tape& tape, int idx, std::mt19937_64* rng) {
      return m->forward(tape, grids[static_cast<std::size_t>(idx)], rng);
    };
    lr = train_cfg.lr_grud;
  } else {
    out.strats = std::make_unique<StratsModel>(strats_cfg, train_cfg.seed);
    const ModelConfig mc = strats_cfg.as_model_config();
    rows.reserve(static_cast<std::size_t>(n_train + n_val));
    for (const auto* group : {&train_anchors, &val_anchors})
      for (const auto* a : *group) rows.push_back(tokenize(a->history, out.stats, mc));
    hooks.forward = [&rows, m = out.strats.get()](ad::Tape& tape, int idx, std::mt19937_64* rng) {
      return m->encoder().forward(tape, rows[static_cast<std::size_t>(idx)], rng).output;
    };
    lr = train_cfg.lr_strats;
  }

  ad::ParameterStore& store = arch == BaselineArch::kGrud ? out.grud->params() : out.strats->encoder().params();
  LoopResult res = run_training_loop(store, hooks, y_train, y_val, n_train, n_val, lr, train_cfg);
  out.log = std::move(res.log);
  out.init_train_loss = res.init_train_loss;
  out.best_epoch = res.best_epoch;
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

nlohmann::json stats_to_json(const TrainStats& s) {
  return {{"mean", std::vector<double>(s.mean.begin(), s.mean.end())},
          {"sd", std::vector<double>(s.sd.begin(), s.sd.end())},
          {"clip_sd", s.clip_sd},
          {"digest", s.digest()}};
}

TrainStats stats_from_json(const nlohmann::json& j) {
  TrainStats s;
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto sd = j.at("sd").get<std::vector<double>>();
  if (mean.size() != s.mean.size() || sd.size() != s.sd.size())
    throw std::invalid_argument("checkpoint: train stats size mismatch");
  std::copy(mean.begin(), mean.end(), s.mean.begin());
  std::copy(sd.begin(), sd.end(), s.sd.begin());
  s.clip_sd = j.at("clip_sd").get<double>();
  return s;
}

nlohmann::json model_cfg_to_json(const ModelConfig& c) {
  return {{"d", c.d},           {"layers", c.layers},
          {"heads", c.heads},   {"dropout", c.dropout},
          {"attn_dropout", c.attn_dropout}, {"batch_size", c.batch_size},
          {"gap_init_per_year", c.gap_init_per_year}, {"vocab_size", c.vocab_size},
          {"m_max", c.m_max},   {"layer_norm", c.layer_norm}};
}

ModelConfig model_cfg_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d = j.at("d").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.attn_dropout = j.at("attn_dropout").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.gap_init_per_year = j.at("gap_init_per_year").get<double>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.m_max = j.at("m_max").get<int>();
  c.layer_norm = j.at("layer_norm").get<bool>();
  return c;
}

}  // namespace

std::string proposed_checkpoint_json(const TrainedProposed& t, const ModelConfig& cfg, std::uint64_t seed,
                                     const std::string& config_digest) {
  const std::vector<double> lam = t.model.lambdas_per_month();
  std::vector<double> lam_year(lam);
  for (double& v : lam_year) v *= 12.0;
  nlohmann::json j{{"format_version", 1},
                   {"arch", "proposed"},
                   {"seed", seed},
                   {"config_digest", config_digest},
                   {"model_config", model_cfg_to_json(cfg)},
                   {"train_stats", stats_to_json(t.stats)},
                   {"lmm", nlohmann::json::parse(lmm_to_json(t.lmm))},
                   {"lambdas_per_month", lam},
                   {"lambdas_per_year", lam_year},
                   {"best_epoch", t.best_epoch},
                   {"params", nlohmann::json::parse(ad::params_to_json(t.model.params()))}};
  return j.dump();
}

LoadedProposed load_proposed_checkpoint(const std::string& json_text) {
  const nlohmann::json j = nlohmann::json::parse(json_text);
  if (j.at("arch").get<std::string>() != "proposed") throw std::invalid_argument("checkpoint: not a proposed-model checkpoint");
  LoadedProposed out;
  out.model_cfg = model_cfg_from_json(j.at("model_config"));
  out.lmm = lmm_from_json(j.at("lmm").dump());
  out.stats = stats_from_json(j.at("train_stats"));
  out.model = std::make_unique<GapTransformer>(out.model_cfg, EncoderStyle::kGapResidual, 0);
  ad::params_from_json(out.model->params(), j.at("params").dump());
  return out;
}

std::string baseline_checkpoint_json(const TrainedBaseline& t, std::uint64_t seed, const std::string& config_digest) {
  nlohmann::json j{{"format_version", 1},
                   {"arch", arch_name(t.arch)},
                   {"seed", seed},
                   {"config_digest", config_digest},
                   {"train_stats", stats_to_json(t.stats)},
                   {"best_epoch", t.best_epoch}};
  if (t.arch == BaselineArch::kGrud) {
    j["grud_config"] = {{"hidden", t.grud_cfg.hidden}, {"dropout", t.grud_cfg.dropout},
                        {"grid_cap", t.grud_cfg.grid_cap}, {"n_vars", t.grud_cfg.n_vars}};
    j["x_bar"] = t.x_bar;
    j["params"] = nlohmann::json::parse(ad::params_to_json(t.grud->params()));
  } else {
    j["strats_config"] = {{"d", t.strats_cfg.d},
                          {"layers", t.strats_cfg.layers},
                          {"heads", t.strats_cfg.heads},
                          {"dropout", t.strats_cfg.dropout},
                          {"attn_dropout", t.strats_cfg.attn_dropout},
                          {"m_max", t.strats_cfg.m_max}};
    j["params"] = nlohmann::json::parse(ad::params_to_json(t.strats->encoder().params()));
  }
  return j.dump();
}

double LoadedBaseline::predict(const AnchorSample& sample) const {
  if (arch == BaselineArch::kGrud) {
    const RegularGridSeries series = to_regular_grid(sample.history, x_bar, stats, grud_cfg.grid_cap);
    return grud->evaluate(series);
  }
  const TokenRow row = tokenize(sample.history, stats, strats->encoder().config());
  return strats->evaluate(row);
}

LoadedBaseline load_baseline_checkpoint(const std::string& json_text) {
  const nlohmann::json j = nlohmann::json::parse(json_text);
  const std::string arch = j.at("arch").get<std::string>();
  LoadedBaseline out;
  out.stats = stats_from_json(j.at("train_stats"));
  if (arch == "grud") {
    out.arch = BaselineArch::kGrud;
    const auto& gc = j.at("grud_config");
    out.grud_cfg.hidden = gc.at("hidden").get<int>();
    out.grud_cfg.dropout = gc.at("dropout").get<double>();
    out.grud_cfg.grid_cap = gc.at("grid_cap").get<int>();
    out.grud_cfg.n_vars = gc.at("n_vars").get<int>();
    out.x_bar = j.at("x_bar").get<std::vector<double>>();
    out.grud = std::make_unique<GrudModel>(out.grud_cfg, 0);
    ad::params_from_json(out.grud->params(), j.at("params").dump());
  } else if (arch == "strats") {
    out.arch = BaselineArch::kStrats;
    const auto& sc = j.at("strats_config");
    out.strats_cfg.d = sc.at("d").get<int>();
    out.strats_cfg.layers = sc.at("layers").get<int>();
    out.strats_cfg.heads = sc.at("heads").get<int>();
    out.strats_cfg.dropout = sc.at("dropout").get<double>();
    out.strats_cfg.attn_dropout = sc.at("attn_dropout").get<double>();
    out.strats_cfg.m_max = sc.at("m_max").get<int>();
    out.strats = std::make_unique<StratsModel>(out.strats_cfg, 0);
    ad::params_from_json(out.strats->encoder().params(), j.at("params").dump());
  } else {
    throw std::invalid_argument("checkpoint: unknown architecture tag '" + arch + "'");
  }
  return out;
}

void write_training_log(const std::string& path, const std::vector<EpochLog>& log, const std::string& provenance) {
  std::ofstream f(path);
  if (!f) throw std::invalid_argument("cannot open log file: " + path);
  if (!provenance.empty()) f << nlohmann::json{{"_header", provenance}}.dump() << "\n";
  for (const auto& e : log) {
    nlohmann::json j{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_mse", e.val_mse}};
    if (!e.lambdas_per_month.empty()) j["lambdas_per_month"] = e.lambdas_per_month;
    f << j.dump() << "\n";
  }
}

}  // namespace gapstride
