#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dcsm/dataset.hpp"
#include "dcsm/errors.hpp"
#include "dcsm/io.hpp"
#include "dcsm/metrics.hpp"
#include "dcsm/model.hpp"
#include "dcsm/synthetic.hpp"
#include "dcsm/trainer.hpp"

namespace dcsm {

namespace cli_detail {

inline std::vector<int> parse_int_list(const std::string& s) {
  if (s.empty() || s == "none") return {};
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw DataError("cannot parse integer list element '" + tok + "'");
    }
  }
  return out;
}

inline std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    double v = 0.0;
    if (!parse_double(tok, v)) throw DataError("cannot parse number list element '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

inline std::string hidden_to_string(const std::vector<int>& hidden) {
  if (hidden.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (i > 0) s += ',';
    s += std::to_string(hidden[i]);
  }
  return s;
}

inline std::uint64_t parse_seed(const std::string& s) {
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw DataError("cannot parse seed '" + s + "'");
  }
}

inline void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value) {
  auto num = [&](const char* what) {
    double v = 0.0;
    if (!parse_double(value, v)) throw DataError(std::string("config: bad value for ") + what);
    return v;
  };
  if (key == "k_experts") {
    cfg.k_experts = static_cast<int>(num("k_experts"));
  } else if (key == "lambda") {
    cfg.lambda = num("lambda");
  } else if (key == "learning_rate") {
    cfg.learning_rate = num("learning_rate");
  } else if (key == "hidden") {
    cfg.hidden = parse_int_list(value);
  } else if (key == "batch_size") {
    cfg.batch_size = static_cast<int>(num("batch_size"));
  } else if (key == "max_epochs") {
    cfg.max_epochs = static_cast<int>(num("max_epochs"));
  } else if (key == "patience") {
    cfg.patience = static_cast<int>(num("patience"));
  } else if (key == "val_fraction") {
    cfg.val_fraction = num("val_fraction");
  } else if (key == "seed") {
    cfg.seed = parse_seed(value);
  } else {
    throw DataError("config: unknown key '" + key + "'");
  }
}

// Flat key-value config file; '#' starts a comment line.
inline TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    std::stringstream ss{std::string(t)};
    std::string key, value;
    ss >> key >> value;
    if (key.empty() || value.empty()) throw DataError("config: malformed line '" + std::string(t) + "'");
    apply_config_entry(base, key, value);
  }
  return base;
}

inline void write_train_config(const TrainConfig& cfg, std::ofstream& out) {
  out << "k_experts " << cfg.k_experts << "\n";
  out << "lambda " << fmt_double(cfg.lambda) << "\n";
  out << "learning_rate " << fmt_double(cfg.learning_rate) << "\n";
  out << "hidden " << hidden_to_string(cfg.hidden) << "\n";
  out << "batch_size " << cfg.batch_size << "\n";
  out << "max_epochs " << cfg.max_epochs << "\n";
  out << "patience " << cfg.patience << "\n";
  out << "val_fraction " << fmt_double(cfg.val_fraction) << "\n";
  out << "seed " << cfg.seed << "\n";
}

inline std::string describe_config(const TrainConfig& cfg) {
  return "k=" + std::to_string(cfg.k_experts) + " lambda=" + fmt_double(cfg.lambda) +
         " lr=" + fmt_double(cfg.learning_rate) + " hidden=" + hidden_to_string(cfg.hidden);
}

// Per-line "key=value ..." grid file, one candidate config per line.
inline std::vector<TrainConfig> load_grid_file(const std::filesystem::path& path,
                                               const TrainConfig& base) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open grid file: " + path.string());
  std::vector<TrainConfig> configs;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    TrainConfig cfg = base;
    std::stringstream ss{std::string(t)};
    std::string tok;
    while (ss >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw DataError("grid file: expected key=value, got '" + tok + "'");
      apply_config_entry(cfg, tok.substr(0, eq), tok.substr(eq + 1));
    }
    configs.push_back(std::move(cfg));
  }
  if (configs.empty()) throw DataError("grid file has no configs: " + path.string());
  return configs;
}

// Best-permutation agreement between predicted clusters and true labels;
// exhaustive over label permutations, supported up to 8 clusters.
inline double best_permutation_accuracy(std::span<const int> predicted,
                                        std::span<const int> truth) {
  if (predicted.size() != truth.size() || predicted.empty()) {
    throw DataError("accuracy: label count does not match data rows");
  }
  int kp = 0, kt = 0;
  for (int c : predicted) {
    if (c < 0) throw DataError("accuracy: negative cluster id");
    kp = std::max(kp, c + 1);
  }
  for (int c : truth) {
    if (c < 0) throw DataError("accuracy: negative true label");
    kt = std::max(kt, c + 1);
  }
  const int m = std::max(kp, kt);
  if (m > 8) throw DataError("accuracy: exhaustive matching supports at most 8 clusters");

  std::vector<std::int64_t> conf(static_cast<std::size_t>(m) * m, 0);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    conf[static_cast<std::size_t>(predicted[i]) * m + truth[i]] += 1;
  }
  std::vector<int> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), 0);
  std::int64_t best = 0;
  do {
    std::int64_t hits = 0;
    for (int k = 0; k < m; ++k) hits += conf[static_cast<std::size_t>(k) * m + perm[static_cast<std::size_t>(k)]];
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(predicted.size());
}

// (instance_id, true_cluster) CSV; ids must cover 0..N-1.
inline std::vector<int> load_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open labels file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty labels file: " + path.string());
  std::vector<std::pair<long, int>> pairs;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto comma = t.find(',');
    if (comma == std::string_view::npos) throw DataError("labels file: malformed line '" + std::string(t) + "'");
    double id = 0.0, lab = 0.0;
    if (!parse_double(t.substr(0, comma), id) || !parse_double(t.substr(comma + 1), lab) ||
        id != std::floor(id) || lab != std::floor(lab)) {
      throw DataError("labels file: malformed line '" + std::string(t) + "'");
    }
    pairs.emplace_back(static_cast<long>(id), static_cast<int>(lab));
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<int> labels(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].first != static_cast<long>(i)) {
      throw DataError("labels file: instance ids must cover 0.." + std::to_string(pairs.size() - 1));
    }
    labels[i] = pairs[i].second;
  }
  return labels;
}

inline const char* svg_color(int i) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return palette[i % 8];
}

inline std::string fmt_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// Minimal stepped-line rendering of one KM curve per cluster.
inline std::string render_km_svg(const std::vector<std::pair<int, KMCurve>>& curves) {
  const double w = 720, h = 480, left = 60, right = 20, top = 20, bottom = 45;
  const double pw = w - left - right, ph = h - top - bottom;
  double tmax = 0.0;
  for (const auto& [c, curve] : curves) {
    for (double t : curve.event_times) tmax = std::max(tmax, t);
  }
  if (tmax <= 0.0) tmax = 1.0;
  auto x = [&](double t) { return left + t / tmax * pw; };
  auto y = [&](double s) { return top + (1.0 - s) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  svg << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << y(0) << "\" x2=\"" << left + pw << "\" y2=\""
      << y(0) << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << y(0) << "\" x2=\"" << left << "\" y2=\"" << y(1)
      << "\" stroke=\"black\"/>\n";
  for (double s : {0.0, 0.5, 1.0}) {
    svg << "<text x=\"" << left - 8 << "\" y=\"" << y(s) + 4
        << "\" font-size=\"12\" text-anchor=\"end\">" << fmt_label(s) << "</text>\n";
  }
  for (double f : {0.0, 0.5, 1.0}) {
    svg << "<text x=\"" << x(f * tmax) << "\" y=\"" << y(0) + 18
        << "\" font-size=\"12\" text-anchor=\"middle\">" << fmt_label(f * tmax) << "</text>\n";
  }
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 8
      << "\" font-size=\"13\" text-anchor=\"middle\">time</text>\n";
  svg << "<text x=\"14\" y=\"" << top + ph / 2
      << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 14 " << top + ph / 2
      << ")\">survival</text>\n";

  int ci = 0;
  for (const auto& [cluster, curve] : curves) {
    std::ostringstream path;
    path << "M " << x(0) << " " << y(1);
    double s = 1.0;
    for (std::size_t j = 0; j < curve.event_times.size(); ++j) {
      path << " H " << x(curve.event_times[j]);
      s = curve.survival[j];
      path << " V " << y(s);
    }
    path << " H " << x(tmax);
    svg << "<path d=\"" << path.str() << "\" fill=\"none\" stroke=\"" << svg_color(ci)
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << left + pw - 8 << "\" y=\"" << top + 16 + 16 * ci
        << "\" font-size=\"12\" text-anchor=\"end\" fill=\"" << svg_color(ci) << "\">cluster "
        << cluster << "</text>\n";
    ++ci;
  }
  svg << "</svg>\n";
  return svg.str();
}

struct EvaluateOutput {
  double c_index = 0.0;
  std::optional<double> logrank_chi2;
  std::optional<double> logrank_p;
  std::vector<std::int64_t> cluster_sizes;  // per model cluster, length K
  std::optional<double> accuracy;
};

inline EvaluateOutput evaluate_model(const DcsmModel& model, const SurvivalDataset& raw,
                                     const std::optional<std::vector<int>>& labels) {
  const std::size_t n = raw.size();
  std::vector<double> risks(n);
  std::vector<int> clusters(n);
  for (std::size_t i = 0; i < n; ++i) {
    risks[i] = -predict_median(model, raw.records[i].features);
    clusters[i] = assign_cluster(model, raw.records[i].features);
  }
  const auto times = raw.times();
  const auto events = raw.events();

  EvaluateOutput out;
  out.c_index = concordance_index(times, events, risks).value;
  out.cluster_sizes.assign(static_cast<std::size_t>(model.expert_count()), 0);
  for (int c : clusters) ++out.cluster_sizes[static_cast<std::size_t>(c)];

  int nonempty = 0;
  for (auto s : out.cluster_sizes) nonempty += s > 0 ? 1 : 0;
  if (nonempty >= 2) {
    std::vector<int> dense_map(static_cast<std::size_t>(model.expert_count()), -1);
    int next = 0;
    for (int k = 0; k < model.expert_count(); ++k) {
      if (out.cluster_sizes[static_cast<std::size_t>(k)] > 0) dense_map[static_cast<std::size_t>(k)] = next++;
    }
    std::vector<int> dense(n);
    for (std::size_t i = 0; i < n; ++i) dense[i] = dense_map[static_cast<std::size_t>(clusters[i])];
    const auto lr = logrank_test(times, events, dense);
    out.logrank_chi2 = lr.chi2;
    out.logrank_p = lr.p_value;
  }
  if (labels) out.accuracy = best_permutation_accuracy(clusters, *labels);
  return out;
}

inline void write_metrics_file(const EvaluateOutput& ev, const std::filesystem::path& path) {
  AtomicFile file(path);
  auto& out = file.stream();
  out << "c_index " << fmt_double(ev.c_index) << "\n";
  out << "logrank_chi2 " << (ev.logrank_chi2 ? fmt_double(*ev.logrank_chi2) : "n/a") << "\n";
  out << "logrank_p " << (ev.logrank_p ? fmt_double(*ev.logrank_p) : "n/a") << "\n";
  out << "cluster_sizes ";
  for (std::size_t i = 0; i < ev.cluster_sizes.size(); ++i) {
    out << (i > 0 ? "," : "") << ev.cluster_sizes[i];
  }
  out << "\n";
  if (ev.accuracy) out << "accuracy " << fmt_double(*ev.accuracy) << "\n";
  file.commit();
}

}  // namespace cli_detail

// Command-line driver. Exit codes: 0 success, 1 usage error, 2 data error,
// 3 numeric failure.
inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Deep clustering survival machines: mixture-of-Weibull-experts "
               "survival modeling with discriminative gating"};
  app.require_subcommand(1);

  // ---- simulate -----------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "Generate synthetic clustered survival data");
  int sim_n = 1000, sim_d = 10, sim_clusters = 2;
  double sim_censoring = 0.3;
  std::string sim_seed = "0", sim_out;
  bool sim_grid = false;
  sim->add_option("--n", sim_n, "Instances")->check(CLI::Range(2, 100000000));
  sim->add_option("--d", sim_d, "Feature dimension")->check(CLI::Range(1, 1000000));
  sim->add_option("--clusters", sim_clusters, "True cluster count")->check(CLI::Range(1, 64));
  sim->add_option("--censoring", sim_censoring, "Censoring fraction, in [0, 1)")
      ->check(CLI::Validator(
          [](std::string& input) {
            double v = 0.0;
            if (!parse_double(input, v) || !(v >= 0.0 && v < 1.0)) {
              return std::string("censoring must be in [0, 1)");
            }
            return std::string{};
          },
          "CENSORING"));
  sim->add_option("--seed", sim_seed, "PRNG seed");
  sim->add_option("--out", sim_out, "Output CSV path (or directory with --grid)")->required();
  sim->add_flag("--grid", sim_grid, "Write the full 36-cell benchmark grid");

  // ---- train --------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Fit a model on a CSV dataset");
  std::string tr_data, tr_config, tr_model_out, tr_hidden, tr_seed;
  std::string tr_time_col = "time", tr_event_col = "event";
  int tr_k = 0, tr_batch = 0, tr_epochs = 0, tr_patience = 0;
  double tr_lambda = 0.0, tr_lr = 0.0, tr_val_fraction = 0.0;
  train->add_option("--data", tr_data, "Training CSV")->required();
  train->add_option("--config", tr_config, "Config file (flags override it)");
  train->add_option("--model-out", tr_model_out, "Where to write the model")->required();
  train->add_option("--time-column", tr_time_col, "Time column name");
  train->add_option("--event-column", tr_event_col, "Event column name");
  auto* opt_k = train->add_option("--k", tr_k, "Expert count");
  auto* opt_lambda = train->add_option("--lambda", tr_lambda, "Censored-term trade-off");
  auto* opt_lr = train->add_option("--lr", tr_lr, "Learning rate");
  auto* opt_hidden = train->add_option("--hidden", tr_hidden, "Hidden widths, e.g. 50,50 or none");
  auto* opt_batch = train->add_option("--batch-size", tr_batch, "Mini-batch size");
  auto* opt_epochs = train->add_option("--max-epochs", tr_epochs, "Epoch cap");
  auto* opt_patience = train->add_option("--patience", tr_patience, "Early-stop patience");
  auto* opt_valf = train->add_option("--val-fraction", tr_val_fraction, "Validation fraction");
  auto* opt_seed = train->add_option("--seed", tr_seed, "PRNG seed");

  // ---- evaluate -----------------------------------------------------------
  auto* eval = app.add_subcommand("evaluate", "Score a model on a CSV dataset");
  std::string ev_data, ev_model, ev_labels, ev_out;
  std::string ev_time_col = "time", ev_event_col = "event";
  eval->add_option("--data", ev_data, "Evaluation CSV")->required();
  eval->add_option("--model", ev_model, "Model file")->required();
  eval->add_option("--labels", ev_labels, "True-cluster CSV for agreement reporting");
  eval->add_option("--out", ev_out, "Metrics file")->required();
  eval->add_option("--time-column", ev_time_col, "Time column name");
  eval->add_option("--event-column", ev_event_col, "Event column name");

  // ---- cluster -------------------------------------------------------------
  auto* cluster = app.add_subcommand("cluster", "Assign clusters and export mixture weights");
  std::string cl_data, cl_model, cl_out;
  std::string cl_time_col = "time", cl_event_col = "event";
  cluster->add_option("--data", cl_data, "Input CSV")->required();
  cluster->add_option("--model", cl_model, "Model file")->required();
  cluster->add_option("--out", cl_out, "Output CSV")->required();
  cluster->add_option("--time-column", cl_time_col, "Time column name");
  cluster->add_option("--event-column", cl_event_col, "Event column name");

  // ---- cv -------------------------------------------------------------------
  auto* cv = app.add_subcommand("cv", "Cross-validated grid search");
  std::string cv_data, cv_out, cv_grid_file, cv_seed = "0";
  std::string cv_time_col = "time", cv_event_col = "event";
  int cv_folds = 5, cv_k = 2, cv_batch = 128, cv_epochs = 500, cv_patience = 20;
  double cv_val_fraction = 0.15;
  std::string cv_lambdas = "0.5,0.75,1", cv_lrs = "1e-3,1e-4", cv_hiddens = "50|50,50";
  cv->add_option("--data", cv_data, "Input CSV")->required();
  cv->add_option("--out", cv_out, "Report CSV; the winning config goes to <out>.selected")
      ->required();
  cv->add_option("--folds", cv_folds, "Fold count")->check(CLI::Range(2, 1000));
  cv->add_option("--seed", cv_seed, "PRNG seed");
  cv->add_option("--k", cv_k, "Expert count for the default grid");
  cv->add_option("--lambdas", cv_lambdas, "Comma list of trade-off values");
  cv->add_option("--lrs", cv_lrs, "Comma list of learning rates");
  cv->add_option("--hiddens", cv_hiddens, "|-separated hidden layouts, e.g. 50|50,50");
  cv->add_option("--grid-file", cv_grid_file, "Explicit config list, one per line");
  cv->add_option("--batch-size", cv_batch, "Mini-batch size");
  cv->add_option("--max-epochs", cv_epochs, "Epoch cap");
  cv->add_option("--patience", cv_patience, "Early-stop patience");
  cv->add_option("--val-fraction", cv_val_fraction, "Validation fraction for early stopping");
  cv->add_option("--time-column", cv_time_col, "Time column name");
  cv->add_option("--event-column", cv_event_col, "Event column name");

  // ---- export-km -------------------------------------------------------------
  auto* ekm = app.add_subcommand("export-km", "Per-cluster Kaplan-Meier curves");
  std::string km_data, km_model, km_out, km_svg;
  std::string km_time_col = "time", km_event_col = "event";
  ekm->add_option("--data", km_data, "Input CSV")->required();
  ekm->add_option("--model", km_model, "Model file")->required();
  ekm->add_option("--out", km_out, "Long-format curve CSV")->required();
  ekm->add_option("--svg", km_svg, "Also render a stepped-line SVG here");
  ekm->add_option("--time-column", km_time_col, "Time column name");
  ekm->add_option("--event-column", km_event_col, "Event column name");

  // ---- export-experts ---------------------------------------------------------
  auto* exp = app.add_subcommand("export-experts", "Per-expert survival curves");
  std::string xp_model, xp_out;
  double xp_tmax = 0.0;
  exp->add_option("--model", xp_model, "Model file")->required();
  exp->add_option("--out", xp_out, "Curve CSV")->required();
  exp->add_option("--tmax", xp_tmax, "Largest sampled time, raw units (default: the time scale)")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (sim->parsed()) {
      SyntheticConfig cfg;
      cfg.k_true = sim_clusters;
      cfg.censoring_fraction = sim_censoring;
      cfg.seed = cli_detail::parse_seed(sim_seed);
      if (sim_grid) {
        const auto cells = generate_synthetic_grid(cfg, sim_out);
        std::cout << "wrote " << cells.size() << " datasets + labels + manifest to " << sim_out
                  << "\n";
      } else {
        cfg.n = sim_n;
        cfg.d = sim_d;
        const auto sd = generate_synthetic(cfg);
        write_csv(sd.dataset, sim_out);
        std::filesystem::path labels_path(sim_out);
        labels_path.replace_extension(".labels.csv");
        write_labels_csv(sd.true_labels, labels_path);
        std::size_t censored = sd.dataset.size() - sd.dataset.event_count();
        std::cout << "wrote " << sd.dataset.size() << " instances (" << censored
                  << " censored) to " << sim_out << "\n";
        std::cout << "true labels in " << labels_path.string() << "\n";
      }
      return 0;
    }

    if (train->parsed()) {
      TrainConfig cfg;
      if (!tr_config.empty()) cfg = cli_detail::load_train_config(tr_config, cfg);
      if (opt_k->count()) cfg.k_experts = tr_k;
      if (opt_lambda->count()) cfg.lambda = tr_lambda;
      if (opt_lr->count()) cfg.learning_rate = tr_lr;
      if (opt_hidden->count()) cfg.hidden = cli_detail::parse_int_list(tr_hidden);
      if (opt_batch->count()) cfg.batch_size = tr_batch;
      if (opt_epochs->count()) cfg.max_epochs = tr_epochs;
      if (opt_patience->count()) cfg.patience = tr_patience;
      if (opt_valf->count()) cfg.val_fraction = tr_val_fraction;
      if (opt_seed->count()) cfg.seed = cli_detail::parse_seed(tr_seed);

      const auto raw = load_csv(tr_data, tr_time_col, tr_event_col);
      const auto ds = standardize_and_scale(raw);
      const auto report = fit(ds, cfg);
      save_model(report.model, tr_model_out);

      const auto& best = report.history[static_cast<std::size_t>(report.best_epoch)];
      std::cout << "config: " << cli_detail::describe_config(cfg) << "\n";
      std::cout << "prior: shape=" << fmt_double(report.model.prior.shape())
                << " scale=" << fmt_double(report.model.prior.scale()) << "\n";
      std::cout << "epochs: " << report.history.size() << " (" << report.stop_reason
                << "), best epoch " << report.best_epoch << "\n";
      std::cout << "best val loss: total=" << fmt_double(best.val.total)
                << " elbo_u=" << fmt_double(best.val.elbo_u)
                << " elbo_c=" << fmt_double(best.val.elbo_c)
                << " prior_loss=" << fmt_double(best.val.prior_loss) << "\n";
      std::cout << "model written to " << tr_model_out << "\n";
      return 0;
    }

    if (eval->parsed()) {
      const auto model = load_model(ev_model);
      const auto raw = load_csv(ev_data, ev_time_col, ev_event_col);
      std::optional<std::vector<int>> labels;
      if (!ev_labels.empty()) labels = cli_detail::load_labels_csv(ev_labels);
      const auto out = cli_detail::evaluate_model(model, raw, labels);
      cli_detail::write_metrics_file(out, ev_out);
      std::cout << "c_index " << fmt_double(out.c_index) << "\n";
      std::cout << "logrank_chi2 " << (out.logrank_chi2 ? fmt_double(*out.logrank_chi2) : "n/a")
                << "\n";
      if (out.accuracy) std::cout << "accuracy " << fmt_double(*out.accuracy) << "\n";
      std::cout << "metrics written to " << ev_out << "\n";
      return 0;
    }

    if (cluster->parsed()) {
      const auto model = load_model(cl_model);
      const auto raw = load_csv(cl_data, cl_time_col, cl_event_col);
      AtomicFile file(cl_out);
      auto& out = file.stream();
      out << "instance_id,cluster";
      for (int k = 0; k < model.expert_count(); ++k) out << ",alpha_" << k;
      out << "\n";
      for (std::size_t i = 0; i < raw.size(); ++i) {
        const auto w = mixture_weights(model, raw.records[i].features);
        int best = 0;
        for (int k = 1; k < model.expert_count(); ++k) {
          if (w.alpha[static_cast<std::size_t>(k)] > w.alpha[static_cast<std::size_t>(best)]) best = k;
        }
        out << i << ',' << best;
        for (double a : w.alpha) out << ',' << fmt_double(a);
        out << "\n";
      }
      file.commit();
      std::cout << "wrote " << raw.size() << " assignments to " << cl_out << "\n";
      return 0;
    }

    if (cv->parsed()) {
      TrainConfig base;
      base.k_experts = cv_k;
      base.batch_size = cv_batch;
      base.max_epochs = cv_epochs;
      base.patience = cv_patience;
      base.val_fraction = cv_val_fraction;
      base.seed = cli_detail::parse_seed(cv_seed);

      std::vector<TrainConfig> configs;
      if (!cv_grid_file.empty()) {
        configs = cli_detail::load_grid_file(cv_grid_file, base);
      } else {
        std::vector<std::string> layouts;
        std::stringstream ss(cv_hiddens);
        std::string tok;
        while (std::getline(ss, tok, '|')) layouts.push_back(tok);
        for (double lambda : cli_detail::parse_double_list(cv_lambdas)) {
          for (double lr : cli_detail::parse_double_list(cv_lrs)) {
            for (const auto& layout : layouts) {
              TrainConfig cfg = base;
              cfg.lambda = lambda;
              cfg.learning_rate = lr;
              cfg.hidden = cli_detail::parse_int_list(layout);
              configs.push_back(std::move(cfg));
            }
          }
        }
      }

      const auto raw = load_csv(cv_data, cv_time_col, cv_event_col);
      const auto report = grid_search(raw, configs, cv_folds, base.seed);

      {
        AtomicFile file(cv_out);
        auto& out = file.stream();
        out << "config,fold,status,c_index,logrank_chi2,logrank_p,val_loss\n";
        for (const auto& row : report.rows) {
          out << row.config_index << ',' << row.fold << ',' << (row.skipped ? "skipped" : "ok")
              << ',';
          if (!row.skipped) {
            out << fmt_double(row.c_index) << ','
                << (row.logrank_chi2 ? fmt_double(*row.logrank_chi2) : "n/a") << ','
                << (row.logrank_p ? fmt_double(*row.logrank_p) : "n/a") << ','
                << fmt_double(row.val_loss);
          } else {
            out << ",,,";
          }
          out << "\n";
        }
        file.commit();
      }
      {
        AtomicFile file(cv_out + ".selected");
        auto& out = file.stream();
        out << "# selected by cv: config " << report.selected_config << "\n";
        cli_detail::write_train_config(configs[static_cast<std::size_t>(report.selected_config)],
                                       out);
        file.commit();
      }

      for (const auto& w : report.warnings) std::cout << "warning: " << w << "\n";
      for (const auto& s : report.summaries) {
        std::cout << "config " << s.config_index << " ("
                  << cli_detail::describe_config(configs[static_cast<std::size_t>(s.config_index)])
                  << "): c_index ";
        char buf[160];
        std::snprintf(buf, sizeof buf, "%.4f+-%.4f, logrank %.2f+-%.2f, val_loss %.4f (%d folds)",
                      s.c_index_mean, s.c_index_std, s.logrank_mean, s.logrank_std,
                      s.val_loss_mean, s.folds_used);
        std::cout << buf << "\n";
      }
      std::cout << "selected config " << report.selected_config << "; report in " << cv_out
                << "\n";
      return 0;
    }

    if (ekm->parsed()) {
      const auto model = load_model(km_model);
      const auto raw = load_csv(km_data, km_time_col, km_event_col);
      std::vector<std::vector<double>> times_by_cluster(static_cast<std::size_t>(model.expert_count()));
      std::vector<std::vector<std::uint8_t>> events_by_cluster(static_cast<std::size_t>(model.expert_count()));
      for (const auto& rec : raw.records) {
        const int c = assign_cluster(model, rec.features);
        times_by_cluster[static_cast<std::size_t>(c)].push_back(rec.time);
        events_by_cluster[static_cast<std::size_t>(c)].push_back(rec.event ? 1 : 0);
      }
      std::vector<std::pair<int, KMCurve>> curves;
      for (int c = 0; c < model.expert_count(); ++c) {
        if (times_by_cluster[static_cast<std::size_t>(c)].empty()) {
          std::cout << "warning: cluster " << c << " is empty; omitted\n";
          continue;
        }
        curves.emplace_back(c, kaplan_meier(times_by_cluster[static_cast<std::size_t>(c)],
                                            events_by_cluster[static_cast<std::size_t>(c)]));
      }
      AtomicFile file(km_out);
      auto& out = file.stream();
      out << "cluster,time,survival,at_risk,events\n";
      for (const auto& [c, curve] : curves) {
        for (std::size_t j = 0; j < curve.event_times.size(); ++j) {
          out << c << ',' << fmt_double(curve.event_times[j]) << ','
              << fmt_double(curve.survival[j]) << ',' << curve.at_risk[j] << ','
              << curve.events[j] << "\n";
        }
      }
      file.commit();
      if (!km_svg.empty()) {
        AtomicFile svg(km_svg);
        svg.stream() << cli_detail::render_km_svg(curves);
        svg.commit();
        std::cout << "svg written to " << km_svg << "\n";
      }
      std::cout << "wrote " << curves.size() << " cluster curves to " << km_out << "\n";
      return 0;
    }

    if (exp->parsed()) {
      const auto model = load_model(xp_model);
      const double tmax = xp_tmax > 0.0 ? xp_tmax : model.transform.time_scale;
      const int samples = 200;
      AtomicFile file(xp_out);
      auto& out = file.stream();
      out << "expert";
      std::vector<double> ts(samples);
      for (int i = 0; i < samples; ++i) {
        ts[static_cast<std::size_t>(i)] = tmax * static_cast<double>(i + 1) / samples;
        out << ',' << fmt_double(ts[static_cast<std::size_t>(i)]);
      }
      out << "\n";
      for (int k = 0; k < model.expert_count(); ++k) {
        out << k;
        for (double t : ts) {
          const double s = std::exp(
              weibull_log_survival(t / model.transform.time_scale, model.experts[static_cast<std::size_t>(k)]));
          out << ',' << fmt_double(s);
        }
        out << "\n";
      }
      file.commit();
      std::cout << "wrote " << model.expert_count() << " expert curves to " << xp_out << "\n";
      return 0;
    }
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

inline int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> full;
  full.reserve(args.size() + 1);
  full.push_back("dcsm");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const auto& s : full) argv.push_back(s.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace dcsm
