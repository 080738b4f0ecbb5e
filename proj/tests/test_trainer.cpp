#include <catch_amalgamated.hpp>

#include <cmath>

#include "dcsm/synthetic.hpp"
#include "dcsm/trainer.hpp"
#include "testutil.hpp"

using namespace dcsm;

namespace {

SurvivalDataset small_training_data(int n, std::uint64_t seed, double censoring = 0.3) {
  SyntheticConfig cfg;
  cfg.n = n;
  cfg.d = 4;
  cfg.k_true = 2;
  cfg.censoring_fraction = censoring;
  cfg.seed = seed;
  return generate_synthetic(cfg).dataset;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.k_experts = 2;
  cfg.hidden = {8};
  cfg.batch_size = 64;
  cfg.max_epochs = 25;
  cfg.patience = 10;
  cfg.learning_rate = 1e-2;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("adam leaves parameters alone on zero gradient", "[trainer]") {
  detail::Adam adam(3);
  std::vector<double> params = {1.0, -2.0, 0.5};
  const auto before = params;
  std::vector<double> zeros(3, 0.0);
  for (int i = 0; i < 5; ++i) adam.step(params, zeros, 0.1);
  CHECK(params == before);
}

TEST_CASE("training reduces the loss on separable data", "[trainer]") {
  const auto ds = standardize_and_scale(small_training_data(400, 9));
  const auto report = fit(ds, quick_config());
  REQUIRE(!report.history.empty());
  const double first = report.history.front().train.total;
  const double best = report.history[static_cast<std::size_t>(report.best_epoch)].train.total;
  CHECK(best < first);
}

TEST_CASE("zero learning rate leaves the model flat", "[trainer]") {
  const auto ds = standardize_and_scale(small_training_data(120, 3));
  TrainConfig cfg = quick_config();
  cfg.learning_rate = 0.0;
  cfg.max_epochs = 6;
  const auto report = fit(ds, cfg);
  for (const auto& stats : report.history) {
    CHECK(stats.train.total == report.history.front().train.total);
    CHECK(stats.val.total == report.history.front().val.total);
  }
  // parameters equal the freshly initialized ones
  const auto fresh = init_gating(static_cast<int>(ds.dim()), cfg.hidden, cfg.k_experts,
                                 derive_seed(cfg.seed, 1));
  CHECK(flatten_parameters(report.model.gating) == flatten_parameters(fresh));
}

TEST_CASE("training is deterministic", "[trainer]") {
  const auto ds = standardize_and_scale(small_training_data(150, 21));
  TrainConfig cfg = quick_config();
  cfg.max_epochs = 12;
  const auto a = fit(ds, cfg);
  const auto b = fit(ds, cfg);
  CHECK(flatten_parameters(a.model.gating) == flatten_parameters(b.model.gating));
  for (std::size_t k = 0; k < a.model.experts.size(); ++k) {
    CHECK(a.model.experts[k].log_shape == b.model.experts[k].log_shape);
    CHECK(a.model.experts[k].log_scale == b.model.experts[k].log_scale);
  }
  CHECK(a.best_epoch == b.best_epoch);
  CHECK(a.history.size() == b.history.size());
}

TEST_CASE("early stopping tracks the best validation epoch", "[trainer]") {
  const auto ds = standardize_and_scale(small_training_data(200, 33));
  TrainConfig cfg = quick_config();
  cfg.max_epochs = 40;
  cfg.patience = 5;
  const auto report = fit(ds, cfg);
  const double best = report.history[static_cast<std::size_t>(report.best_epoch)].val.total;
  for (const auto& stats : report.history) CHECK(best <= stats.val.total);
  CHECK((report.stop_reason == "early_stop" || report.stop_reason == "max_epochs"));
  if (report.stop_reason == "early_stop") {
    CHECK(static_cast<int>(report.history.size()) == report.best_epoch + cfg.patience + 1);
  }
  CHECK(static_cast<int>(report.history.size()) <= cfg.max_epochs);
}

TEST_CASE("fit validates its inputs", "[trainer]") {
  auto raw = small_training_data(50, 2);
  CHECK_THROWS_AS(fit(raw, quick_config()), std::invalid_argument);  // not standardized

  auto censored_only = raw;
  for (auto& rec : censored_only.records) rec.event = false;
  CHECK_THROWS_WITH(fit(standardize_and_scale(censored_only), quick_config()),
                    Catch::Matchers::ContainsSubstring("requires >= 1 event"));

  TrainConfig bad = quick_config();
  bad.val_fraction = 1.5;
  CHECK_THROWS_AS(fit(standardize_and_scale(raw), bad), std::invalid_argument);
}

TEST_CASE("batches get an event member when available", "[trainer]") {
  // heavy censoring: only 3 events in 64 records
  SurvivalDataset ds;
  ds.feature_names = {"f0"};
  ds.transform = identity_transform(1);
  ds.standardized = true;
  Rng rng(8);
  for (int i = 0; i < 64; ++i) {
    SurvivalRecord rec;
    rec.features = {rng.uniform(-1, 1)};
    rec.time = rng.uniform(0.1, 1.0);
    rec.event = i < 3;
    ds.records.push_back(rec);
  }
  std::vector<int> order(64);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(4);
  shuffle_rng.shuffle(order);
  auto batches = detail::make_batches(order, 16);  // 4 batches, 3 events
  detail::stratify_batches(batches, ds);
  int batches_with_event = 0;
  for (const auto& b : batches) {
    int events = 0;
    for (int i : b) events += ds.records[static_cast<std::size_t>(i)].event ? 1 : 0;
    batches_with_event += events > 0 ? 1 : 0;
  }
  CHECK(batches_with_event == 3);  // as many as the events allow
}

TEST_CASE("grid search shapes and determinism", "[trainer]") {
  const auto raw = small_training_data(80, 11);
  TrainConfig cfg = quick_config();
  cfg.max_epochs = 6;
  cfg.patience = 3;
  cfg.hidden = {};

  const auto report = grid_search(raw, {cfg}, 2, 7);
  CHECK(report.rows.size() == 2);
  CHECK(report.summaries.size() == 1);
  CHECK(report.selected_config == 0);
  for (const auto& row : report.rows) {
    CHECK_FALSE(row.skipped);
    CHECK(row.c_index >= 0.0);
    CHECK(row.c_index <= 1.0);
  }

  // duplicate configs produce identical per-fold metrics
  const auto dup = grid_search(raw, {cfg, cfg}, 2, 7);
  REQUIRE(dup.rows.size() == 4);
  for (int f = 0; f < 2; ++f) {
    CHECK(dup.rows[static_cast<std::size_t>(f)].c_index ==
          dup.rows[static_cast<std::size_t>(2 + f)].c_index);
    CHECK(dup.rows[static_cast<std::size_t>(f)].val_loss ==
          dup.rows[static_cast<std::size_t>(2 + f)].val_loss);
  }

  // summary means recompute from the rows
  const auto& s = report.summaries[0];
  CHECK(s.folds_used == 2);
  const double mean = (report.rows[0].c_index + report.rows[1].c_index) / 2.0;
  CHECK(s.c_index_mean == Catch::Approx(mean).margin(1e-12));

  CHECK_THROWS_AS(grid_search(raw, {}, 2, 7), std::invalid_argument);
  CHECK_THROWS_AS(grid_search(standardize_and_scale(raw), {cfg}, 2, 7), std::invalid_argument);
}

TEST_CASE("grid search skips folds without events", "[trainer]") {
  // nine records, two events placed in different folds; the third fold has
  // none and must be skipped with a warning
  SurvivalDataset raw;
  raw.feature_names = {"f0"};
  Rng rng(14);
  for (int i = 0; i < 9; ++i) {
    SurvivalRecord rec;
    rec.features = {rng.uniform(-1, 1)};
    rec.time = i < 2 ? 0.2 + 0.1 * i : 2.0 + 0.3 * i;  // events early, censored late
    rec.event = i < 2;
    raw.records.push_back(rec);
  }

  std::uint64_t seed = 0;
  bool found = false;
  for (; seed < 200 && !found; ++seed) {
    const auto split = kfold(raw, 3, seed);
    std::vector<int> events_per_fold(3, 0);
    for (int i = 0; i < 9; ++i) {
      if (raw.records[static_cast<std::size_t>(i)].event) ++events_per_fold[static_cast<std::size_t>(split.assignments[static_cast<std::size_t>(i)])];
    }
    int zero_folds = 0;
    for (int c : events_per_fold) zero_folds += c == 0 ? 1 : 0;
    if (zero_folds == 1) found = true;
  }
  REQUIRE(found);
  --seed;

  TrainConfig cfg;
  cfg.k_experts = 1;
  cfg.hidden = {};
  cfg.max_epochs = 4;
  cfg.patience = 2;
  cfg.batch_size = 8;
  cfg.seed = 0;

  const auto report = grid_search(raw, {cfg}, 3, seed);
  CHECK(report.rows.size() == 3);
  int skipped = 0;
  for (const auto& row : report.rows) skipped += row.skipped ? 1 : 0;
  CHECK(skipped >= 1);
  CHECK(!report.warnings.empty());
  CHECK(report.summaries[0].folds_used + skipped == 3);
}
