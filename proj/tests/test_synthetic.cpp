#include <catch_amalgamated.hpp>

#include <cmath>
#include <fstream>

#include "dcsm/synthetic.hpp"
#include "testutil.hpp"

using namespace dcsm;

TEST_CASE("no censoring means observed equals latent", "[synthetic]") {
  SyntheticConfig cfg;
  cfg.n = 200;
  cfg.d = 3;
  cfg.censoring_fraction = 0.0;
  cfg.seed = 4;
  const auto sd = generate_synthetic(cfg);
  REQUIRE(sd.dataset.size() == 200);
  for (std::size_t i = 0; i < sd.dataset.size(); ++i) {
    CHECK(sd.dataset.records[i].event);
    CHECK(sd.dataset.records[i].time == sd.uncensored_times[i]);
    CHECK(sd.dataset.records[i].time > 0.0);
  }
}

TEST_CASE("single cluster labels", "[synthetic]") {
  SyntheticConfig cfg;
  cfg.n = 50;
  cfg.d = 2;
  cfg.k_true = 1;
  cfg.seed = 1;
  const auto sd = generate_synthetic(cfg);
  for (int label : sd.true_labels) CHECK(label == 0);
  CHECK(sd.true_params.size() == 1);
}

TEST_CASE("censoring fraction concentrates near the target", "[synthetic]") {
  SyntheticConfig cfg;
  cfg.n = 10000;
  cfg.d = 5;
  cfg.censoring_fraction = 0.3;
  cfg.seed = 77;
  const auto sd = generate_synthetic(cfg);
  const double frac = 1.0 - static_cast<double>(sd.dataset.event_count()) /
                                static_cast<double>(sd.dataset.size());
  CHECK(frac > 0.28);
  CHECK(frac < 0.32);
}

TEST_CASE("censored observations sit strictly below the latent time", "[synthetic]") {
  SyntheticConfig cfg;
  cfg.n = 2000;
  cfg.d = 4;
  cfg.censoring_fraction = 0.5;
  cfg.seed = 10;
  const auto sd = generate_synthetic(cfg);
  int censored = 0;
  for (std::size_t i = 0; i < sd.dataset.size(); ++i) {
    const auto& rec = sd.dataset.records[i];
    if (rec.event) {
      CHECK(rec.time == sd.uncensored_times[i]);
    } else {
      ++censored;
      CHECK(rec.time < sd.uncensored_times[i]);
      CHECK(rec.time > 0.0);
    }
  }
  CHECK(censored > 0);
}

TEST_CASE("features stay within the cluster box", "[synthetic]") {
  SyntheticConfig cfg;
  cfg.n = 500;
  cfg.d = 6;
  cfg.k_true = 3;
  cfg.separation = 2.0;
  cfg.seed = 3;
  const auto sd = generate_synthetic(cfg);
  for (std::size_t i = 0; i < sd.dataset.size(); ++i) {
    const auto& center = sd.true_params[static_cast<std::size_t>(sd.true_labels[i])].center;
    for (int j = 0; j < cfg.d; ++j) {
      CHECK(std::fabs(sd.dataset.records[i].features[static_cast<std::size_t>(j)] -
                      center[static_cast<std::size_t>(j)]) <= 0.5);
    }
  }
}

TEST_CASE("generation is deterministic in the seed", "[synthetic]") {
  SyntheticConfig cfg;
  cfg.n = 120;
  cfg.d = 3;
  cfg.seed = 2026;
  const auto a = generate_synthetic(cfg);
  const auto b = generate_synthetic(cfg);
  REQUIRE(a.dataset.size() == b.dataset.size());
  for (std::size_t i = 0; i < a.dataset.size(); ++i) {
    CHECK(a.dataset.records[i].features == b.dataset.records[i].features);
    CHECK(a.dataset.records[i].time == b.dataset.records[i].time);
    CHECK(a.dataset.records[i].event == b.dataset.records[i].event);
  }
  CHECK(a.true_labels == b.true_labels);

  cfg.seed = 2027;
  const auto c = generate_synthetic(cfg);
  CHECK(a.dataset.records[0].features != c.dataset.records[0].features);
}

TEST_CASE("config validation", "[synthetic]") {
  SyntheticConfig cfg;
  cfg.censoring_fraction = 1.0;
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
  cfg = SyntheticConfig{};
  cfg.n = 1;
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
  cfg = SyntheticConfig{};
  cfg.shape_range = {2.0, 1.0};
  CHECK_THROWS_AS(generate_synthetic(cfg), std::invalid_argument);
}

TEST_CASE("within-cluster times follow the analytic distribution", "[synthetic]") {
  // with flat covariate effects and no censoring the times are iid Weibull
  SyntheticConfig cfg;
  cfg.n = 10000;
  cfg.d = 3;
  cfg.k_true = 1;
  cfg.coef_scale = 0.0;
  cfg.censoring_fraction = 0.0;
  cfg.seed = 99;
  const auto sd = generate_synthetic(cfg);
  const double mu = sd.true_params[0].shape;
  const double sigma = std::exp(sd.true_params[0].base_log_scale);

  auto times = sd.dataset.times();
  std::sort(times.begin(), times.end());
  double d_stat = 0.0;
  const double n = static_cast<double>(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double f = 1.0 - std::exp(-std::pow(times[i] / sigma, mu));
    d_stat = std::max(d_stat, std::fabs((static_cast<double>(i) + 1.0) / n - f));
    d_stat = std::max(d_stat, std::fabs(f - static_cast<double>(i) / n));
  }
  // Kolmogorov-Smirnov critical value at the 1e-3 level
  const double crit = 1.94947 / std::sqrt(n);
  CHECK(d_stat < crit);
}

TEST_CASE("benchmark grid layout and per-cell reproducibility", "[synthetic][grid]") {
  testutil::TempDir dir("grid");
  SyntheticConfig base;
  base.k_true = 2;
  base.censoring_fraction = 0.3;
  base.seed = 42;
  const auto cells = generate_synthetic_grid(base, dir.path());
  REQUIRE(cells.size() == 36);

  // manifest lists every cell
  std::ifstream manifest(dir.file("manifest.txt"));
  REQUIRE(manifest.good());
  std::string line;
  int cell_lines = 0;
  while (std::getline(manifest, line)) {
    if (line.rfind("cell ", 0) == 0) ++cell_lines;
  }
  CHECK(cell_lines == 36);

  // row counts match the requested n for the small cells
  for (const auto& cell : cells) {
    if (cell.n > 500) continue;
    std::ifstream data(dir.file(cell.data_file));
    REQUIRE(data.good());
    int rows = -1;  // header
    while (std::getline(data, line)) {
      if (!line.empty()) ++rows;
    }
    CHECK(rows == cell.n);
  }

  // a cell regenerated from its recorded seed reproduces the exact bytes
  SyntheticConfig cfg = base;
  cfg.n = cells[0].n;
  cfg.d = cells[0].d;
  cfg.seed = cells[0].seed;
  const auto sd = generate_synthetic(cfg);
  write_csv(sd.dataset, dir.file("regen.csv"));
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(dir.file("regen.csv")) == slurp(dir.file(cells[0].data_file)));
}
