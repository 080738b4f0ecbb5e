#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcsm/dataset.hpp"
#include "dcsm/errors.hpp"

namespace dcsm {

// One mixture component's Weibull parameters, kept in log domain so
// unconstrained gradient steps preserve positivity.
struct WeibullExpert {
  double log_shape = 0.0;
  double log_scale = 0.0;

  double shape() const { return std::exp(log_shape); }
  double scale() const { return std::exp(log_scale); }
};

// The single-distribution MLE fit that anchors every expert.
struct WeibullPrior {
  double log_shape = 0.0;
  double log_scale = 0.0;

  double shape() const { return std::exp(log_shape); }
  double scale() const { return std::exp(log_scale); }
};

// ln f(t) = ln mu - ln sigma + (mu - 1)(ln t - ln sigma) - exp(mu (ln t - ln sigma)).
// Evaluated entirely in log domain; (t/sigma)^mu is never formed directly.
inline double weibull_log_pdf(double t, const WeibullExpert& e) {
  if (!(t > 0.0)) throw std::domain_error("weibull_log_pdf: t must be > 0");
  const double mu = std::exp(e.log_shape);
  const double z = std::log(t) - e.log_scale;
  return e.log_shape - e.log_scale + (mu - 1.0) * z - std::exp(mu * z);
}

// ln S(t) = -exp(mu (ln t - ln sigma)); always <= 0, nonincreasing in t.
inline double weibull_log_survival(double t, const WeibullExpert& e) {
  if (!(t > 0.0)) throw std::domain_error("weibull_log_survival: t must be > 0");
  const double mu = std::exp(e.log_shape);
  const double z = std::log(t) - e.log_scale;
  return -std::exp(mu * z);
}

// Partial derivatives with respect to the log-domain parameters.
struct WeibullParamGrad {
  double d_log_shape = 0.0;
  double d_log_scale = 0.0;
};

inline WeibullParamGrad weibull_log_pdf_grad(double t, const WeibullExpert& e) {
  const double mu = std::exp(e.log_shape);
  const double z = std::log(t) - e.log_scale;
  const double w = std::exp(mu * z);
  return {1.0 + mu * z * (1.0 - w), mu * (w - 1.0)};
}

inline WeibullParamGrad weibull_log_survival_grad(double t, const WeibullExpert& e) {
  const double mu = std::exp(e.log_shape);
  const double z = std::log(t) - e.log_scale;
  const double w = std::exp(mu * z);
  return {-mu * z * w, mu * w};
}

namespace detail {

// Profile-likelihood score for the censored Weibull MLE, scaled by 1/r:
//   g(mu) = 1/mu + mean(ln t over events) - sum(t^mu ln t) / sum(t^mu),
// with the power sums over all instances. Computed through a shifted
// exponential sum so large mu cannot overflow.
struct WeibullProfile {
  std::vector<double> log_times;
  double event_mean_log_time = 0.0;
  double event_count = 0.0;

  double score(double mu) const {
    double m = -1e308;
    for (double lt : log_times) m = std::max(m, mu * lt);
    double a = 0.0, b = 0.0;
    for (double lt : log_times) {
      const double w = std::exp(mu * lt - m);
      a += w;
      b += w * lt;
    }
    return 1.0 / mu + event_mean_log_time - b / a;
  }

  double log_scale_at(double mu) const {
    double m = -1e308;
    for (double lt : log_times) m = std::max(m, mu * lt);
    double a = 0.0;
    for (double lt : log_times) a += std::exp(mu * lt - m);
    return (m + std::log(a) - std::log(event_count)) / mu;
  }
};

}  // namespace detail

// Censored single-Weibull maximum likelihood: maximizes
//   sum over events of ln f(t_i) + sum over censored of ln S(t_i).
// The scale has a closed form given the shape, sigma^mu = sum(t_i^mu) / r,
// so only the shape score needs a root; it is bracketed on
// mu in [1e-2, 1e3] and solved by bisection on ln mu to |g| < 1e-10.
inline WeibullPrior fit_single_weibull_mle(std::span<const double> times,
                                           std::span<const std::uint8_t> events) {
  if (times.size() != events.size()) {
    throw std::invalid_argument("fit_single_weibull_mle: size mismatch");
  }
  detail::WeibullProfile prof;
  prof.log_times.reserve(times.size());
  double event_sum_log = 0.0;
  std::size_t r = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] > 0.0)) throw DataError("fit_single_weibull_mle: times must be > 0");
    const double lt = std::log(times[i]);
    prof.log_times.push_back(lt);
    if (events[i]) {
      event_sum_log += lt;
      ++r;
    }
  }
  if (r == 0) throw DataError("prior MLE requires >= 1 event");
  prof.event_count = static_cast<double>(r);
  prof.event_mean_log_time = event_sum_log / static_cast<double>(r);

  const double mu_lo = 1e-2, mu_hi = 1e3;
  double g_lo = prof.score(mu_lo);
  double g_hi = prof.score(mu_hi);
  if (std::isnan(g_lo) || std::isnan(g_hi) || g_lo * g_hi > 0.0) {
    throw NumericError("prior MLE bracket has no sign change: g(" + fmt_double(mu_lo) + ") = " +
                       fmt_double(g_lo) + ", g(" + fmt_double(mu_hi) + ") = " + fmt_double(g_hi));
  }

  double llo = std::log(mu_lo), lhi = std::log(mu_hi);
  double mu = mu_lo, g = g_lo;
  for (int it = 0; it < 200; ++it) {
    const double lmid = 0.5 * (llo + lhi);
    mu = std::exp(lmid);
    g = prof.score(mu);
    if (std::abs(g) < 1e-10) break;
    if ((g > 0.0) == (g_lo > 0.0)) {
      llo = lmid;
    } else {
      lhi = lmid;
    }
  }

  WeibullPrior prior;
  prior.log_shape = std::log(mu);
  prior.log_scale = prof.log_scale_at(mu);
  return prior;
}

inline WeibullPrior fit_single_weibull_mle(const SurvivalDataset& ds) {
  const auto t = ds.times();
  const auto e = ds.events();
  return fit_single_weibull_mle(t, e);
}

}  // namespace dcsm
