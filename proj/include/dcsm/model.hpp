#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcsm/dataset.hpp"
#include "dcsm/errors.hpp"
#include "dcsm/gating.hpp"
#include "dcsm/io.hpp"
#include "dcsm/weibull.hpp"

namespace dcsm {

struct MixtureWeights {
  std::vector<double> alpha;  // on the probability simplex
};

struct LossBreakdown {
  double elbo_u = 0.0;
  double elbo_c = 0.0;      // <= 0
  double prior_loss = 0.0;  // >= 0
  double total = 0.0;       // prior_loss - elbo_u - lambda * elbo_c
};

// Mixture-of-Weibull-experts survival model: a gating network maps features
// to K softmax weights over shared expert distributions. Prediction-facing
// operations take raw-domain features and times and replay the stored
// training transform internally; the loss operations work on standardized
// data directly.
struct DcsmModel {
  GatingNetwork gating;
  std::vector<WeibullExpert> experts;
  WeibullPrior prior;
  double lambda = 1.0;
  Standardization transform;

  int expert_count() const { return static_cast<int>(experts.size()); }

  std::vector<double> standardize_features(std::span<const double> raw) const {
    if (raw.size() != transform.mean.size()) {
      throw DataError("feature width " + std::to_string(raw.size()) +
                      " does not match model input " + std::to_string(transform.mean.size()));
    }
    std::vector<double> x(raw.size());
    for (std::size_t j = 0; j < raw.size(); ++j) {
      x[j] = (raw[j] - transform.mean[j]) / transform.stddev[j];
    }
    return x;
  }
};

// An identity transform for models built directly on standardized data.
inline Standardization identity_transform(std::size_t dim, double time_scale = 1.0) {
  Standardization tf;
  tf.mean.assign(dim, 0.0);
  tf.stddev.assign(dim, 1.0);
  tf.time_scale = time_scale;
  return tf;
}

inline MixtureWeights mixture_weights(const DcsmModel& m, std::span<const double> raw_x) {
  const auto x = m.standardize_features(raw_x);
  const auto logits = gating_forward(m.gating, {x});
  return {softmax(logits[0])};
}

// argmax weight; exact ties resolve to the lowest index
inline int assign_cluster(const DcsmModel& m, std::span<const double> raw_x) {
  const auto w = mixture_weights(m, raw_x);
  int best = 0;
  for (int k = 1; k < static_cast<int>(w.alpha.size()); ++k) {
    if (w.alpha[k] > w.alpha[best]) best = k;
  }
  return best;
}

namespace detail {

inline std::vector<std::vector<double>> collect_features(const SurvivalDataset& ds,
                                                         std::span<const int> idx) {
  std::vector<std::vector<double>> X;
  X.reserve(idx.size());
  for (int i : idx) X.push_back(ds.records.at(static_cast<std::size_t>(i)).features);
  return X;
}

inline void require_standardized(const SurvivalDataset& ds) {
  if (!ds.standardized) {
    throw std::invalid_argument("loss operations require a standardized dataset");
  }
}

}  // namespace detail

// Mean over the batch of sum_k alpha_k(x_i) ln f(t_i; mu_k, sigma_k).
// The batch must hold uncensored instances; an empty batch contributes 0.
inline double elbo_uncensored(const DcsmModel& m, const SurvivalDataset& ds,
                              std::span<const int> idx) {
  if (idx.empty()) return 0.0;
  detail::require_standardized(ds);
  const auto logits = gating_forward(m.gating, detail::collect_features(ds, idx));
  double sum = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto alpha = softmax(logits[i]);
    const double t = ds.records[static_cast<std::size_t>(idx[i])].time;
    for (int k = 0; k < m.expert_count(); ++k) {
      sum += alpha[k] * weibull_log_pdf(t, m.experts[static_cast<std::size_t>(k)]);
    }
  }
  return sum / static_cast<double>(idx.size());
}

// Same bound with ln S in place of ln f, over censored instances.
inline double elbo_censored(const DcsmModel& m, const SurvivalDataset& ds,
                            std::span<const int> idx) {
  if (idx.empty()) return 0.0;
  detail::require_standardized(ds);
  const auto logits = gating_forward(m.gating, detail::collect_features(ds, idx));
  double sum = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto alpha = softmax(logits[i]);
    const double t = ds.records[static_cast<std::size_t>(idx[i])].time;
    for (int k = 0; k < m.expert_count(); ++k) {
      sum += alpha[k] * weibull_log_survival(t, m.experts[static_cast<std::size_t>(k)]);
    }
  }
  return sum / static_cast<double>(idx.size());
}

// sum_k (mu_k - mu)^2 + (sigma_k - sigma)^2 on the natural scale.
inline double prior_loss(const DcsmModel& m) {
  const double mu0 = m.prior.shape();
  const double s0 = m.prior.scale();
  double loss = 0.0;
  for (const auto& e : m.experts) {
    const double dmu = e.shape() - mu0;
    const double ds = e.scale() - s0;
    loss += dmu * dmu + ds * ds;
  }
  return loss;
}

// total = prior_loss - elbo_u - lambda * elbo_c with batch-mean ELBO terms;
// elbo_u averages the uncensored members, elbo_c the censored members.
inline LossBreakdown total_loss(const DcsmModel& m, const SurvivalDataset& ds,
                                std::span<const int> idx) {
  if (idx.empty()) throw DataError("total_loss: empty batch");
  std::vector<int> uncensored, censored;
  for (int i : idx) {
    (ds.records.at(static_cast<std::size_t>(i)).event ? uncensored : censored).push_back(i);
  }
  LossBreakdown lb;
  lb.elbo_u = elbo_uncensored(m, ds, uncensored);
  lb.elbo_c = elbo_censored(m, ds, censored);
  lb.prior_loss = prior_loss(m);
  lb.total = lb.prior_loss - lb.elbo_u - m.lambda * lb.elbo_c;
  return lb;
}

struct ModelGradients {
  LossBreakdown loss;
  std::vector<double> gating;           // flatten_parameters order
  std::vector<double> expert_log_shape; // K
  std::vector<double> expert_log_scale; // K
};

// Analytic gradient of total_loss. Softmax chain rule per instance:
// d/dlogit_j of sum_k alpha_k c_k = alpha_j (c_j - sum_k alpha_k c_k) with
// c_k the per-expert ln f or ln S; expert gradients pick up d mu / d ln mu
// = mu factors from the natural-scale prior loss.
inline ModelGradients loss_gradients(const DcsmModel& m, const SurvivalDataset& ds,
                                     std::span<const int> idx) {
  if (idx.empty()) throw DataError("loss_gradients: empty batch");
  detail::require_standardized(ds);
  const int K = m.expert_count();

  std::size_t n_u = 0, n_c = 0;
  for (int i : idx) {
    if (ds.records.at(static_cast<std::size_t>(i)).event) {
      ++n_u;
    } else {
      ++n_c;
    }
  }
  const double wu = n_u > 0 ? 1.0 / static_cast<double>(n_u) : 0.0;
  const double wc = n_c > 0 ? m.lambda / static_cast<double>(n_c) : 0.0;

  GatingCache cache;
  const auto logits = gating_forward(m.gating, detail::collect_features(ds, idx), &cache);

  ModelGradients g;
  g.expert_log_shape.assign(K, 0.0);
  g.expert_log_scale.assign(K, 0.0);

  std::vector<std::vector<double>> d_logits(idx.size(), std::vector<double>(K, 0.0));
  std::vector<double> c(K), dc_a(K), dc_b(K);
  double sum_u = 0.0, sum_c = 0.0;

  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& rec = ds.records[static_cast<std::size_t>(idx[i])];
    const auto alpha = softmax(logits[i]);
    const bool ev = rec.event;
    for (int k = 0; k < K; ++k) {
      const auto& e = m.experts[static_cast<std::size_t>(k)];
      if (ev) {
        c[k] = weibull_log_pdf(rec.time, e);
        const auto pg = weibull_log_pdf_grad(rec.time, e);
        dc_a[k] = pg.d_log_shape;
        dc_b[k] = pg.d_log_scale;
      } else {
        c[k] = weibull_log_survival(rec.time, e);
        const auto sg = weibull_log_survival_grad(rec.time, e);
        dc_a[k] = sg.d_log_shape;
        dc_b[k] = sg.d_log_scale;
      }
    }
    double mean_c = 0.0;
    for (int k = 0; k < K; ++k) mean_c += alpha[k] * c[k];
    (ev ? sum_u : sum_c) += mean_c;

    const double w = ev ? wu : wc;
    for (int k = 0; k < K; ++k) {
      d_logits[i][k] = -w * alpha[k] * (c[k] - mean_c);
      g.expert_log_shape[static_cast<std::size_t>(k)] -= w * alpha[k] * dc_a[k];
      g.expert_log_scale[static_cast<std::size_t>(k)] -= w * alpha[k] * dc_b[k];
    }
  }

  const double mu0 = m.prior.shape();
  const double s0 = m.prior.scale();
  for (int k = 0; k < K; ++k) {
    const auto& e = m.experts[static_cast<std::size_t>(k)];
    g.expert_log_shape[static_cast<std::size_t>(k)] += 2.0 * (e.shape() - mu0) * e.shape();
    g.expert_log_scale[static_cast<std::size_t>(k)] += 2.0 * (e.scale() - s0) * e.scale();
  }

  g.gating = gating_backward(m.gating, cache, d_logits);

  g.loss.elbo_u = n_u > 0 ? sum_u / static_cast<double>(n_u) : 0.0;
  g.loss.elbo_c = n_c > 0 ? sum_c / static_cast<double>(n_c) : 0.0;
  g.loss.prior_loss = prior_loss(m);
  g.loss.total = g.loss.prior_loss - g.loss.elbo_u - m.lambda * g.loss.elbo_c;
  return g;
}

namespace detail {

inline double mixture_survival_scaled(const DcsmModel& m, const std::vector<double>& alpha,
                                      double t_scaled) {
  double s = 0.0;
  for (int k = 0; k < m.expert_count(); ++k) {
    s += alpha[static_cast<std::size_t>(k)] *
         std::exp(weibull_log_survival(t_scaled, m.experts[static_cast<std::size_t>(k)]));
  }
  return s;
}

}  // namespace detail

// S(t | x) = sum_k alpha_k(x) exp(ln S(t / time_scale; expert_k)); t in raw units.
inline double predict_survival(const DcsmModel& m, std::span<const double> raw_x, double t_raw) {
  if (!(t_raw > 0.0)) throw std::domain_error("predict_survival: t must be > 0");
  const auto w = mixture_weights(m, raw_x);
  return detail::mixture_survival_scaled(m, w.alpha, t_raw / m.transform.time_scale);
}

// Raw-unit time t* with S(t* | x) = 0.5: bracket by doubling from the time
// scale, then bisect. The mixture survival is strictly decreasing, so the
// root is unique.
inline double predict_median(const DcsmModel& m, std::span<const double> raw_x) {
  const auto w = mixture_weights(m, raw_x);
  double lo = 0.0, hi = 1.0;  // scaled units; hi = one time_scale
  for (int it = 0; it < 1100 && detail::mixture_survival_scaled(m, w.alpha, hi) > 0.5; ++it) {
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (detail::mixture_survival_scaled(m, w.alpha, mid) > 0.5) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi) * m.transform.time_scale;
}

// ---------------------------------------------------------------------------
// Model file: versioned structured text, parameters at 17 significant digits.

namespace detail {

inline void write_doubles(std::ofstream& out, std::span<const double> v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    out << fmt_double17(v[i]) << (i + 1 == v.size() ? "\n" : " ");
  }
  if (v.empty()) out << "\n";
}

class ModelReader {
 public:
  explicit ModelReader(std::istream& in) : in_(in) {}

  std::string word(const std::string& context) {
    std::string w;
    if (!(in_ >> w)) throw DataError("model file: unexpected end of file in " + context);
    return w;
  }

  void expect(const std::string& keyword) {
    std::string w;
    if (!(in_ >> w)) throw DataError("model file: missing section '" + keyword + "'");
    if (w != keyword) {
      throw DataError("model file: expected section '" + keyword + "', found '" + w + "'");
    }
  }

  double number(const std::string& context) {
    const std::string w = word(context);
    double v = 0.0;
    if (!parse_double(w, v)) {
      throw DataError("model file: bad number '" + w + "' in " + context);
    }
    return v;
  }

  long integer(const std::string& context) {
    const double v = number(context);
    if (v != std::floor(v)) throw DataError("model file: expected integer in " + context);
    return static_cast<long>(v);
  }

  std::vector<double> numbers(std::size_t count, const std::string& context) {
    std::vector<double> v(count);
    for (auto& x : v) x = number(context);
    return v;
  }

 private:
  std::istream& in_;
};

}  // namespace detail

inline void save_model(const DcsmModel& m, const std::filesystem::path& path) {
  AtomicFile file(path);
  auto& out = file.stream();
  out << "dcsm 1\n";
  out << "lambda " << fmt_double17(m.lambda) << "\n";
  out << "time_scale " << fmt_double17(m.transform.time_scale) << "\n";
  out << "feature_means " << m.transform.mean.size() << "\n";
  detail::write_doubles(out, m.transform.mean);
  out << "feature_stds " << m.transform.stddev.size() << "\n";
  detail::write_doubles(out, m.transform.stddev);
  out << "prior " << fmt_double17(m.prior.log_shape) << " " << fmt_double17(m.prior.log_scale)
      << "\n";
  out << "experts " << m.experts.size() << "\n";
  for (const auto& e : m.experts) {
    out << fmt_double17(e.log_shape) << " " << fmt_double17(e.log_scale) << "\n";
  }
  out << "gating " << m.gating.layers.size() << " " << m.gating.input_dim << " "
      << m.gating.experts << "\n";
  for (const auto& l : m.gating.layers) {
    out << "layer " << l.out << " " << l.in << "\n";
    detail::write_doubles(out, l.weights);
    detail::write_doubles(out, l.bias);
  }
  out << "output_map " << m.gating.experts << " " << m.gating.repr_dim() << "\n";
  detail::write_doubles(out, m.gating.output_map);
  out << "end\n";
  file.commit();
}

inline DcsmModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file: " + path.string());
  detail::ModelReader r(in);

  const std::string magic = r.word("header");
  if (magic != "dcsm") throw DataError("not a dcsm model file: " + path.string());
  const std::string version = r.word("header");
  if (version != "1") throw DataError("unsupported model file version: " + version);

  DcsmModel m;
  r.expect("lambda");
  m.lambda = r.number("lambda");
  r.expect("time_scale");
  m.transform.time_scale = r.number("time_scale");
  if (!(m.transform.time_scale > 0.0)) throw DataError("model file: time_scale must be > 0");

  r.expect("feature_means");
  const long d_means = r.integer("feature_means");
  if (d_means < 1) throw DataError("model file: feature_means count must be >= 1");
  m.transform.mean = r.numbers(static_cast<std::size_t>(d_means), "feature_means");
  r.expect("feature_stds");
  const long d_stds = r.integer("feature_stds");
  if (d_stds != d_means) throw DataError("model file: feature_stds count mismatch");
  m.transform.stddev = r.numbers(static_cast<std::size_t>(d_stds), "feature_stds");

  r.expect("prior");
  m.prior.log_shape = r.number("prior");
  m.prior.log_scale = r.number("prior");

  r.expect("experts");
  const long k = r.integer("experts");
  if (k < 1) throw DataError("model file: expert count must be >= 1");
  for (long i = 0; i < k; ++i) {
    WeibullExpert e;
    e.log_shape = r.number("experts");
    e.log_scale = r.number("experts");
    m.experts.push_back(e);
  }

  r.expect("gating");
  const long layer_count = r.integer("gating");
  const long input_dim = r.integer("gating");
  const long experts = r.integer("gating");
  if (input_dim != d_means) throw DataError("model file: gating input_dim mismatch");
  if (experts != k) throw DataError("model file: gating expert count mismatch");
  m.gating.input_dim = static_cast<int>(input_dim);
  m.gating.experts = static_cast<int>(experts);

  long prev = input_dim;
  for (long l = 0; l < layer_count; ++l) {
    r.expect("layer");
    DenseLayer layer;
    layer.out = static_cast<int>(r.integer("layer"));
    layer.in = static_cast<int>(r.integer("layer"));
    if (layer.in != prev || layer.out < 1) throw DataError("model file: layer dims do not chain");
    layer.weights = r.numbers(static_cast<std::size_t>(layer.out) * layer.in, "layer weights");
    layer.bias = r.numbers(static_cast<std::size_t>(layer.out), "layer bias");
    prev = layer.out;
    m.gating.layers.push_back(std::move(layer));
  }

  r.expect("output_map");
  const long om_k = r.integer("output_map");
  const long om_h = r.integer("output_map");
  if (om_k != k || om_h != prev) throw DataError("model file: output_map dims do not chain");
  m.gating.output_map = r.numbers(static_cast<std::size_t>(om_k * om_h), "output_map");

  r.expect("end");
  return m;
}

}  // namespace dcsm
