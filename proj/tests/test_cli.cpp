#include <catch_amalgamated.hpp>

#include <fstream>
#include <map>
#include <sstream>

#include "dcsm/cli.hpp"
#include "testutil.hpp"

using namespace dcsm;

namespace {

int cli(std::initializer_list<std::string> args) { return run_cli(std::vector<std::string>(args)); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

int count_data_rows(const std::filesystem::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::string line;
  int rows = -1;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  return rows;
}

std::map<std::string, std::string> read_metrics(const std::filesystem::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::map<std::string, std::string> kv;
  std::string key, value;
  while (in >> key >> value) kv[key] = value;
  return kv;
}

}  // namespace

TEST_CASE("simulate writes data and labels", "[cli]") {
  testutil::TempDir dir("cli_sim");
  const auto data = dir.file("sim.csv");
  CHECK(cli({"simulate", "--n", "200", "--d", "10", "--clusters", "2", "--seed", "9", "--out",
             data.string()}) == 0);
  CHECK(count_data_rows(data) == 200);
  CHECK(std::filesystem::exists(dir.file("sim.labels.csv")));
  const auto ds = load_csv(data);
  CHECK(ds.dim() == 10);
}

TEST_CASE("simulate rejects out-of-range censoring", "[cli]") {
  testutil::TempDir dir("cli_sim");
  CHECK(cli({"simulate", "--censoring", "1.5", "--out", dir.file("x.csv").string()}) == 1);
  CHECK_FALSE(std::filesystem::exists(dir.file("x.csv")));
}

TEST_CASE("usage errors exit with code 1", "[cli]") {
  CHECK(cli({"train"}) == 1);                     // missing required options
  CHECK(cli({"no-such-command"}) == 1);
  CHECK(cli({}) == 1);                            // subcommand required
  CHECK(cli({"--help"}) == 0);
}

TEST_CASE("train evaluate cluster export pipeline", "[cli]") {
  testutil::TempDir dir("cli_pipe");
  const auto data = dir.file("train.csv");
  REQUIRE(cli({"simulate", "--n", "240", "--d", "5", "--clusters", "2", "--censoring", "0.3",
               "--seed", "12", "--out", data.string()}) == 0);

  const auto model_path = dir.file("model.dcsm");
  CHECK(cli({"train", "--data", data.string(), "--model-out", model_path.string(), "--k", "2",
             "--lambda", "0.75", "--lr", "1e-2", "--hidden", "8", "--max-epochs", "30",
             "--patience", "10", "--seed", "3"}) == 0);
  REQUIRE(std::filesystem::exists(model_path));
  const auto model = load_model(model_path);
  CHECK(model.lambda == 0.75);
  CHECK(model.expert_count() == 2);

  const auto metrics_path = dir.file("metrics.txt");
  CHECK(cli({"evaluate", "--data", data.string(), "--model", model_path.string(), "--labels",
             dir.file("train.labels.csv").string(), "--out", metrics_path.string()}) == 0);
  const auto metrics = read_metrics(metrics_path);
  REQUIRE(metrics.count("c_index") == 1);
  REQUIRE(metrics.count("logrank_chi2") == 1);
  REQUIRE(metrics.count("cluster_sizes") == 1);
  REQUIRE(metrics.count("accuracy") == 1);
  double c_index = 0.0;
  REQUIRE(parse_double(metrics.at("c_index"), c_index));
  CHECK(c_index >= 0.0);
  CHECK(c_index <= 1.0);
  double acc = 0.0;
  REQUIRE(parse_double(metrics.at("accuracy"), acc));
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);

  const auto clusters_path = dir.file("clusters.csv");
  CHECK(cli({"cluster", "--data", data.string(), "--model", model_path.string(), "--out",
             clusters_path.string()}) == 0);
  std::ifstream cf(clusters_path);
  std::string header;
  std::getline(cf, header);
  CHECK(header == "instance_id,cluster,alpha_0,alpha_1");
  std::string line;
  int rows = 0;
  while (std::getline(cf, line)) {
    if (line.empty()) continue;
    ++rows;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::getline(ss, cell, ',');
    const int cluster = std::stoi(cell);
    std::vector<double> alphas;
    while (std::getline(ss, cell, ',')) alphas.push_back(std::stod(cell));
    REQUIRE(alphas.size() == 2);
    CHECK(alphas[0] + alphas[1] == Catch::Approx(1.0).margin(1e-6));
    const int argmax = alphas[0] >= alphas[1] ? 0 : 1;
    CHECK(cluster == argmax);
  }
  CHECK(rows == 240);

  const auto km_path = dir.file("km.csv");
  const auto svg_path = dir.file("km.svg");
  CHECK(cli({"export-km", "--data", data.string(), "--model", model_path.string(), "--out",
             km_path.string(), "--svg", svg_path.string()}) == 0);
  {
    std::ifstream km(km_path);
    std::getline(km, header);
    CHECK(header == "cluster,time,survival,at_risk,events");
    std::map<int, double> last_survival;
    std::map<int, bool> first_seen;
    while (std::getline(km, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string cell;
      std::getline(ss, cell, ',');
      const int c = std::stoi(cell);
      std::getline(ss, cell, ',');
      std::getline(ss, cell, ',');
      const double s = std::stod(cell);
      CHECK(s <= 1.0);
      if (last_survival.count(c)) {
        CHECK(s <= last_survival[c] + 1e-12);  // nonincreasing within a cluster
      }
      last_survival[c] = s;
    }
    CHECK(!last_survival.empty());
  }
  const auto svg = slurp(svg_path);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("cluster") != std::string::npos);

  // evaluate must run off the saved file, so a deleted model fails cleanly
  CHECK(cli({"evaluate", "--data", data.string(), "--model", dir.file("gone.dcsm").string(),
             "--out", dir.file("m2.txt").string()}) == 2);
  CHECK_FALSE(std::filesystem::exists(dir.file("m2.txt")));
}

TEST_CASE("train reads a config file and flags override it", "[cli]") {
  testutil::TempDir dir("cli_cfg");
  const auto data = dir.file("d.csv");
  REQUIRE(cli({"simulate", "--n", "120", "--d", "4", "--seed", "5", "--out", data.string()}) == 0);

  {
    std::ofstream cfg(dir.file("train.cfg"));
    cfg << "# comment line\n";
    cfg << "k_experts 3\n";
    cfg << "lambda 0.5\n";
    cfg << "learning_rate 1e-2\n";
    cfg << "hidden none\n";
    cfg << "max_epochs 8\n";
    cfg << "patience 4\n";
    cfg << "seed 2\n";
  }
  const auto model_path = dir.file("m.dcsm");
  CHECK(cli({"train", "--data", data.string(), "--config", dir.file("train.cfg").string(),
             "--model-out", model_path.string(), "--lambda", "1"}) == 0);
  const auto model = load_model(model_path);
  CHECK(model.expert_count() == 3);   // from file
  CHECK(model.lambda == 1.0);         // flag wins
  CHECK(model.gating.layers.empty()); // hidden none
}

TEST_CASE("single-expert model reports logrank as not applicable", "[cli]") {
  testutil::TempDir dir("cli_k1");
  const auto data = dir.file("d.csv");
  REQUIRE(cli({"simulate", "--n", "80", "--d", "3", "--seed", "6", "--out", data.string()}) == 0);
  const auto model_path = dir.file("m.dcsm");
  REQUIRE(cli({"train", "--data", data.string(), "--model-out", model_path.string(), "--k", "1",
               "--hidden", "none", "--max-epochs", "5", "--patience", "2"}) == 0);
  const auto metrics_path = dir.file("metrics.txt");
  CHECK(cli({"evaluate", "--data", data.string(), "--model", model_path.string(), "--out",
             metrics_path.string()}) == 0);
  const auto metrics = read_metrics(metrics_path);
  CHECK(metrics.at("logrank_chi2") == "n/a");
  CHECK(metrics.at("logrank_p") == "n/a");
  CHECK(metrics.count("c_index") == 1);
}

TEST_CASE("cv runs the default grid and writes the selection", "[cli]") {
  testutil::TempDir dir("cli_cv");
  const auto data = dir.file("d.csv");
  REQUIRE(cli({"simulate", "--n", "60", "--d", "4", "--seed", "8", "--out", data.string()}) == 0);

  const auto report_path = dir.file("cv.csv");
  CHECK(cli({"cv", "--data", data.string(), "--out", report_path.string(), "--k", "2",
             "--max-epochs", "2", "--patience", "1", "--batch-size", "32", "--seed", "1"}) == 0);
  // default grid: 3 lambdas x 2 learning rates x 2 layouts = 12 configs, 5 folds
  CHECK(count_data_rows(report_path) == 60);
  REQUIRE(std::filesystem::exists(report_path.string() + ".selected"));
  const auto selected = slurp(report_path.string() + ".selected");
  CHECK(selected.find("lambda") != std::string::npos);
  CHECK(selected.find("learning_rate") != std::string::npos);

  // the selected config trains as-is through --config
  CHECK(cli({"train", "--data", data.string(), "--config", report_path.string() + ".selected",
             "--model-out", dir.file("sel.dcsm").string(), "--max-epochs", "3"}) == 0);
}

TEST_CASE("cv grid file with duplicate configs yields identical rows", "[cli]") {
  testutil::TempDir dir("cli_cv2");
  const auto data = dir.file("d.csv");
  REQUIRE(cli({"simulate", "--n", "70", "--d", "3", "--seed", "2", "--out", data.string()}) == 0);
  {
    std::ofstream grid(dir.file("grid.txt"));
    grid << "k_experts=2 lambda=0.75 learning_rate=1e-2 hidden=none max_epochs=4 patience=2\n";
    grid << "k_experts=2 lambda=0.75 learning_rate=1e-2 hidden=none max_epochs=4 patience=2\n";
  }
  const auto report_path = dir.file("cv.csv");
  CHECK(cli({"cv", "--data", data.string(), "--out", report_path.string(), "--grid-file",
             dir.file("grid.txt").string(), "--folds", "2", "--seed", "4"}) == 0);
  std::ifstream in(report_path);
  std::string header, r0, r1, r2, r3;
  std::getline(in, header);
  std::getline(in, r0);
  std::getline(in, r1);
  std::getline(in, r2);
  std::getline(in, r3);
  CHECK(r0.substr(2) == r2.substr(2));  // same metrics after the config index
  CHECK(r1.substr(2) == r3.substr(2));
}

TEST_CASE("export-experts emits one sampled curve per expert", "[cli]") {
  testutil::TempDir dir("cli_exp");
  // exponential expert with scaled scale s and raw time scale T:
  // survival at s * T * ln 2 is exactly one half
  DcsmModel m;
  m.gating = init_gating(1, {}, 2, 0);
  m.experts = {WeibullExpert{0.0, std::log(0.8)}, WeibullExpert{std::log(2.0), 0.0}};
  m.prior = WeibullPrior{0.0, 0.0};
  m.transform = identity_transform(1, 25.0);
  const auto model_path = dir.file("m.dcsm");
  save_model(m, model_path);

  const double t_half = 0.8 * 25.0 * std::log(2.0);
  const double tmax = 2.0 * t_half;  // sample 100 of 200 lands exactly on t_half
  const auto out_path = dir.file("experts.csv");
  CHECK(cli({"export-experts", "--model", model_path.string(), "--out", out_path.string(),
             "--tmax", fmt_double(tmax)}) == 0);

  std::ifstream in(out_path);
  std::string header, row0, row1;
  std::getline(in, header);
  std::getline(in, row0);
  std::getline(in, row1);
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  const auto h = split(header);
  const auto a = split(row0);
  const auto b = split(row1);
  REQUIRE(h.size() == 201);
  REQUIRE(a.size() == 201);
  REQUIRE(b.size() == 201);
  CHECK(a[0] == "0");
  CHECK(b[0] == "1");
  // curves start near one
  CHECK(std::stod(a[1]) > 0.9);
  CHECK(std::stod(b[1]) > 0.99);
  // the exponential expert crosses one half exactly at sigma ln 2
  CHECK(std::stod(h[100]) == Catch::Approx(t_half).margin(1e-9));
  CHECK(std::stod(a[100]) == Catch::Approx(0.5).margin(1e-6));

  std::string extra;
  CHECK_FALSE((std::getline(in, extra) && !extra.empty()));
}

TEST_CASE("cluster rejects data of the wrong width", "[cli]") {
  testutil::TempDir dir("cli_dim");
  const auto data = dir.file("d.csv");
  REQUIRE(cli({"simulate", "--n", "60", "--d", "4", "--seed", "7", "--out", data.string()}) == 0);
  const auto model_path = dir.file("m.dcsm");
  REQUIRE(cli({"train", "--data", data.string(), "--model-out", model_path.string(), "--k", "2",
               "--hidden", "none", "--max-epochs", "3", "--patience", "2"}) == 0);
  const auto narrow = dir.file("narrow.csv");
  REQUIRE(cli({"simulate", "--n", "40", "--d", "2", "--seed", "7", "--out", narrow.string()}) == 0);
  CHECK(cli({"cluster", "--data", narrow.string(), "--model", model_path.string(), "--out",
             dir.file("c.csv").string()}) == 2);
  CHECK_FALSE(std::filesystem::exists(dir.file("c.csv")));
}

TEST_CASE("failed commands leave no output behind", "[cli]") {
  testutil::TempDir dir("cli_atomic");
  // nonexistent data file
  CHECK(cli({"train", "--data", dir.file("missing.csv").string(), "--model-out",
             dir.file("m.dcsm").string()}) == 2);
  CHECK_FALSE(std::filesystem::exists(dir.file("m.dcsm")));
  // unwritable output directory
  const auto data = dir.file("d.csv");
  REQUIRE(cli({"simulate", "--n", "50", "--d", "2", "--seed", "3", "--out", data.string()}) == 0);
  CHECK(cli({"train", "--data", data.string(), "--model-out",
             (dir.path() / "no_such_dir" / "m.dcsm").string(), "--max-epochs", "2"}) == 2);
}

TEST_CASE("train maps numeric failures to exit 3", "[cli]") {
  testutil::TempDir dir("cli_num");
  // constant times: the prior MLE bracket cannot find a root
  {
    std::ofstream out(dir.file("flat.csv"));
    out << "f0,time,event\n";
    for (int i = 0; i < 20; ++i) out << (i % 2 ? "1.0" : "-1.0") << ",7.0,1\n";
  }
  CHECK(cli({"train", "--data", dir.file("flat.csv").string(), "--model-out",
             dir.file("m.dcsm").string(), "--max-epochs", "2"}) == 3);
  CHECK_FALSE(std::filesystem::exists(dir.file("m.dcsm")));
}
