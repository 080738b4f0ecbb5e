#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "dcsm/dataset.hpp"
#include "dcsm/errors.hpp"
#include "dcsm/metrics.hpp"
#include "dcsm/model.hpp"
#include "dcsm/rng.hpp"

namespace dcsm {

struct TrainConfig {
  int k_experts = 2;
  double lambda = 1.0;
  double learning_rate = 1e-3;
  std::vector<int> hidden = {50};
  int batch_size = 128;
  int max_epochs = 500;
  int patience = 20;
  double val_fraction = 0.15;
  std::uint64_t seed = 0;
};

struct EpochStats {
  LossBreakdown train;
  LossBreakdown val;
};

struct TrainReport {
  std::vector<EpochStats> history;
  int best_epoch = 0;
  std::string stop_reason;  // "early_stop" or "max_epochs"
  DcsmModel model;          // parameters of the best epoch
};

namespace detail {

// Adaptive-moment optimizer state over one flat parameter vector.
class Adam {
 public:
  explicit Adam(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  static constexpr double beta1_ = 0.9;
  static constexpr double beta2_ = 0.999;
  static constexpr double eps_ = 1e-8;
  std::vector<double> m_, v_;
  long t_ = 0;
};

inline std::vector<std::vector<int>> make_batches(std::vector<int> order, int batch_size) {
  std::vector<std::vector<int>> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

// Ensures every batch holds at least one uncensored instance when the epoch
// has enough events to go around: batches without one swap a censored member
// for an event member of the first batch holding two or more.
inline void stratify_batches(std::vector<std::vector<int>>& batches, const SurvivalDataset& ds) {
  auto count_events = [&](const std::vector<int>& b) {
    int c = 0;
    for (int i : b) c += ds.records[static_cast<std::size_t>(i)].event ? 1 : 0;
    return c;
  };
  for (auto& poor : batches) {
    if (count_events(poor) > 0) continue;
    for (auto& donor : batches) {
      if (&donor == &poor || count_events(donor) < 2) continue;
      std::size_t donor_pos = 0;
      while (!ds.records[static_cast<std::size_t>(donor[donor_pos])].event) ++donor_pos;
      std::swap(donor[donor_pos], poor.front());
      break;
    }
  }
}

struct FlatParams {
  std::vector<double> values;  // [gating | log_shape_0..K-1 | log_scale_0..K-1]
  std::size_t gating_size = 0;

  static FlatParams from_model(const DcsmModel& m) {
    FlatParams p;
    p.values = flatten_parameters(m.gating);
    p.gating_size = p.values.size();
    for (const auto& e : m.experts) p.values.push_back(e.log_shape);
    for (const auto& e : m.experts) p.values.push_back(e.log_scale);
    return p;
  }

  void into_model(DcsmModel& m) const {
    set_parameters(m.gating, std::span<const double>(values.data(), gating_size));
    const std::size_t k = m.experts.size();
    for (std::size_t i = 0; i < k; ++i) {
      m.experts[i].log_shape = values[gating_size + i];
      m.experts[i].log_scale = values[gating_size + k + i];
    }
  }
};

inline void validate_config(const TrainConfig& cfg) {
  if (cfg.k_experts < 1) throw std::invalid_argument("k_experts must be >= 1");
  if (cfg.lambda <= 0.0) throw std::invalid_argument("lambda must be > 0");
  if (cfg.learning_rate < 0.0) throw std::invalid_argument("learning_rate must be >= 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (cfg.max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (cfg.patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0)) {
    throw std::invalid_argument("val_fraction must be in (0, 1)");
  }
}

}  // namespace detail

// Mini-batch gradient training of the full objective. The prior comes from a
// censored single-Weibull MLE on the training portion; experts start at the
// prior with a +-1% jitter on the natural scale to break symmetry. A
// validation slice carved from the training data drives early stopping, and
// the returned model carries the best epoch's parameters. Deterministic
// given the seed.
inline TrainReport fit(const SurvivalDataset& ds, const TrainConfig& cfg) {
  detail::validate_config(cfg);
  if (!ds.standardized) throw std::invalid_argument("fit requires a standardized dataset");
  const int n = static_cast<int>(ds.size());
  if (n < 2) throw DataError("fit: needs at least 2 records");

  Rng rng(cfg.seed);
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  const int val_n = std::clamp(static_cast<int>(std::lround(cfg.val_fraction * n)), 1, n - 1);
  std::vector<int> val_idx(perm.begin(), perm.begin() + val_n);
  std::vector<int> train_idx(perm.begin() + val_n, perm.end());

  std::vector<double> train_times;
  std::vector<std::uint8_t> train_events;
  for (int i : train_idx) {
    train_times.push_back(ds.records[static_cast<std::size_t>(i)].time);
    train_events.push_back(ds.records[static_cast<std::size_t>(i)].event ? 1 : 0);
  }

  TrainReport report;
  DcsmModel& model = report.model;
  model.prior = fit_single_weibull_mle(train_times, train_events);
  model.lambda = cfg.lambda;
  model.transform = ds.transform;
  model.gating = init_gating(static_cast<int>(ds.dim()), cfg.hidden, cfg.k_experts,
                             derive_seed(cfg.seed, 1));
  Rng jitter(derive_seed(cfg.seed, 2));
  for (int k = 0; k < cfg.k_experts; ++k) {
    WeibullExpert e;
    e.log_shape = model.prior.log_shape + jitter.uniform(-0.01, 0.01);
    e.log_scale = model.prior.log_scale + jitter.uniform(-0.01, 0.01);
    model.experts.push_back(e);
  }

  auto params = detail::FlatParams::from_model(model);
  detail::Adam adam(params.values.size());
  std::vector<double> grad(params.values.size());

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<double> best_params = params.values;
  int epochs_since_best = 0;
  report.best_epoch = 0;
  report.stop_reason = "max_epochs";

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::vector<int> order = train_idx;
    rng.shuffle(order);
    auto batches = detail::make_batches(std::move(order), cfg.batch_size);
    detail::stratify_batches(batches, ds);

    for (const auto& batch : batches) {
      const auto g = loss_gradients(model, ds, batch);
      if (!std::isfinite(g.loss.total)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      std::copy(g.gating.begin(), g.gating.end(), grad.begin());
      std::copy(g.expert_log_shape.begin(), g.expert_log_shape.end(),
                grad.begin() + static_cast<std::ptrdiff_t>(params.gating_size));
      std::copy(g.expert_log_scale.begin(), g.expert_log_scale.end(),
                grad.begin() + static_cast<std::ptrdiff_t>(params.gating_size + model.experts.size()));
      adam.step(params.values, grad, cfg.learning_rate);
      params.into_model(model);
    }

    EpochStats stats;
    stats.train = total_loss(model, ds, train_idx);
    stats.val = total_loss(model, ds, val_idx);
    report.history.push_back(stats);
    if (!std::isfinite(stats.train.total) || !std::isfinite(stats.val.total)) {
      throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
    }

    if (stats.val.total < best_val) {
      best_val = stats.val.total;
      best_params = params.values;
      report.best_epoch = epoch;
      epochs_since_best = 0;
    } else if (++epochs_since_best >= cfg.patience) {
      report.stop_reason = "early_stop";
      break;
    }
  }

  params.values = best_params;
  params.into_model(model);
  return report;
}

// ---------------------------------------------------------------------------
// Cross-validated grid search.

struct CvRow {
  int config_index = 0;
  int fold = 0;
  bool skipped = false;
  std::string warning;
  double c_index = 0.0;
  std::optional<double> logrank_chi2;
  std::optional<double> logrank_p;
  double val_loss = 0.0;
};

struct CvSummary {
  int config_index = 0;
  int folds_used = 0;
  double c_index_mean = 0.0;
  double c_index_std = 0.0;
  double logrank_mean = 0.0;
  double logrank_std = 0.0;
  int logrank_folds = 0;
  double val_loss_mean = 0.0;
  double val_loss_std = 0.0;
};

struct CvReport {
  std::vector<CvRow> rows;           // ordered by (config_index, fold)
  std::vector<CvSummary> summaries;  // one per config
  int selected_config = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

// Per-instance evaluation of a trained model on a raw held-out fold:
// C-index with risk = negative predicted median, and the log-rank statistic
// of the learned clusters (absent when only one cluster appears).
struct FoldEval {
  double c_index = 0.0;
  std::optional<double> logrank_chi2;
  std::optional<double> logrank_p;
};

inline FoldEval evaluate_fold(const DcsmModel& model, const SurvivalDataset& raw_test) {
  const std::size_t n = raw_test.size();
  std::vector<double> risks(n);
  std::vector<int> clusters(n);
  for (std::size_t i = 0; i < n; ++i) {
    risks[i] = -predict_median(model, raw_test.records[i].features);
    clusters[i] = assign_cluster(model, raw_test.records[i].features);
  }
  const auto times = raw_test.times();
  const auto events = raw_test.events();

  FoldEval eval;
  eval.c_index = concordance_index(times, events, risks).value;

  // remap cluster ids to dense labels over the clusters actually present
  std::vector<int> present;
  for (int c : clusters) {
    if (std::find(present.begin(), present.end(), c) == present.end()) present.push_back(c);
  }
  if (present.size() >= 2) {
    std::sort(present.begin(), present.end());
    std::vector<int> dense(n);
    for (std::size_t i = 0; i < n; ++i) {
      dense[i] = static_cast<int>(
          std::find(present.begin(), present.end(), clusters[i]) - present.begin());
    }
    const auto lr = logrank_test(times, events, dense);
    eval.logrank_chi2 = lr.chi2;
    eval.logrank_p = lr.p_value;
  }
  return eval;
}

}  // namespace detail

// Trains every config on each fold's complement and scores the held-out
// fold. Fold seeds derive from the config's seed and the fold index only, so
// duplicate configs reproduce identical rows. Selection: highest mean
// C-index, ties broken by higher mean log-rank statistic, then lower config
// index. Folds without events are skipped for metric aggregation with a
// recorded warning.
inline CvReport grid_search(const SurvivalDataset& raw, const std::vector<TrainConfig>& configs,
                            int folds, std::uint64_t seed) {
  if (configs.empty()) throw std::invalid_argument("grid_search: configs must be nonempty");
  if (raw.standardized) {
    throw std::invalid_argument("grid_search expects raw data; it standardizes per fold");
  }
  const FoldSplit split = kfold(raw, folds, seed);

  CvReport report;
  for (int ci = 0; ci < static_cast<int>(configs.size()); ++ci) {
    for (int f = 0; f < folds; ++f) {
      CvRow row;
      row.config_index = ci;
      row.fold = f;

      const auto test_idx = fold_members(split, f);
      const auto train_idx = fold_complement(split, f);
      const auto raw_test = subset(raw, test_idx);

      if (raw_test.event_count() == 0) {
        row.skipped = true;
        row.warning = "fold " + std::to_string(f) + " has no events";
        report.warnings.push_back(row.warning);
        report.rows.push_back(std::move(row));
        continue;
      }

      TrainConfig cfg = configs[static_cast<std::size_t>(ci)];
      cfg.seed = derive_seed(configs[static_cast<std::size_t>(ci)].seed, static_cast<std::uint64_t>(f));

      try {
        const auto train_ds = standardize_and_scale(subset(raw, train_idx));
        const auto fit_report = fit(train_ds, cfg);
        row.val_loss = fit_report.history[static_cast<std::size_t>(fit_report.best_epoch)].val.total;
        const auto eval = detail::evaluate_fold(fit_report.model, raw_test);
        row.c_index = eval.c_index;
        row.logrank_chi2 = eval.logrank_chi2;
        row.logrank_p = eval.logrank_p;
      } catch (const DataError& err) {
        row.skipped = true;
        row.warning = "config " + std::to_string(ci) + " fold " + std::to_string(f) +
                      " skipped: " + err.what();
        report.warnings.push_back(row.warning);
      }
      report.rows.push_back(std::move(row));
    }
  }

  for (int ci = 0; ci < static_cast<int>(configs.size()); ++ci) {
    CvSummary s;
    s.config_index = ci;
    std::vector<double> cs, lrs, losses;
    for (const auto& row : report.rows) {
      if (row.config_index != ci || row.skipped) continue;
      cs.push_back(row.c_index);
      losses.push_back(row.val_loss);
      if (row.logrank_chi2) lrs.push_back(*row.logrank_chi2);
    }
    s.folds_used = static_cast<int>(cs.size());
    s.logrank_folds = static_cast<int>(lrs.size());
    std::tie(s.c_index_mean, s.c_index_std) = detail::mean_std(cs);
    std::tie(s.logrank_mean, s.logrank_std) = detail::mean_std(lrs);
    std::tie(s.val_loss_mean, s.val_loss_std) = detail::mean_std(losses);
    report.summaries.push_back(s);
  }

  int best = -1;
  for (const auto& s : report.summaries) {
    if (s.folds_used == 0) continue;
    if (best < 0) {
      best = s.config_index;
      continue;
    }
    const auto& b = report.summaries[static_cast<std::size_t>(best)];
    if (s.c_index_mean > b.c_index_mean ||
        (s.c_index_mean == b.c_index_mean && s.logrank_mean > b.logrank_mean)) {
      best = s.config_index;
    }
  }
  if (best < 0) throw DataError("grid_search: no fold produced metrics");
  report.selected_config = best;
  return report;
}

}  // namespace dcsm
