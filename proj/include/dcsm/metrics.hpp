#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcsm/errors.hpp"

namespace dcsm {

// ---------------------------------------------------------------------------
// Chi-square upper tail via the regularized incomplete gamma function.

namespace detail {

inline double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < 1000; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// modified Lentz continued fraction for Q(a, x), x > a + 1
inline double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 1000; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace detail

// Upper-tail probability of the chi-square distribution with dof degrees of
// freedom: Q(dof/2, x/2).
inline double chi2_sf(double x, int dof) {
  if (x < 0.0) throw std::domain_error("chi2_sf: x must be >= 0");
  if (dof < 1) throw std::invalid_argument("chi2_sf: dof must be >= 1");
  if (x == 0.0) return 1.0;
  const double a = 0.5 * dof;
  const double y = 0.5 * x;
  if (y < a + 1.0) return 1.0 - detail::gamma_p_series(a, y);
  return detail::gamma_q_contfrac(a, y);
}

// ---------------------------------------------------------------------------
// Harrell concordance index.

struct CIndexResult {
  double value = 0.0;
  std::int64_t comparable_pairs = 0;
  std::int64_t concordant = 0;
  std::int64_t tied_risk = 0;
};

// Pair (i, j) is comparable iff t_i < t_j and instance i had its event;
// equal observed times are never comparable. Concordant iff risk_i > risk_j;
// risk ties count one half. Exact O(n^2) pair counting.
inline CIndexResult concordance_index(std::span<const double> times,
                                      std::span<const std::uint8_t> events,
                                      std::span<const double> risks) {
  const std::size_t n = times.size();
  if (events.size() != n || risks.size() != n) {
    throw std::invalid_argument("concordance_index: input sizes differ");
  }
  CIndexResult res;
  for (std::size_t i = 0; i < n; ++i) {
    if (!events[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (times[i] >= times[j]) continue;
      ++res.comparable_pairs;
      if (risks[i] > risks[j]) {
        ++res.concordant;
      } else if (risks[i] == risks[j]) {
        ++res.tied_risk;
      }
    }
  }
  if (res.comparable_pairs == 0) throw DataError("concordance_index: no comparable pairs");
  res.value = (static_cast<double>(res.concordant) + 0.5 * static_cast<double>(res.tied_risk)) /
              static_cast<double>(res.comparable_pairs);
  return res;
}

// ---------------------------------------------------------------------------
// Kaplan-Meier product-limit estimator.

struct KMCurve {
  std::vector<double> event_times;      // ascending distinct times with >= 1 event
  std::vector<double> survival;         // S after each drop
  std::vector<std::int64_t> at_risk;    // n_j, including instances tied at t_j
  std::vector<std::int64_t> events;     // d_j
};

// Censored instances leave the risk set after their time without causing a
// drop; events at a tied time are processed against the at-risk count that
// includes every tied instance.
inline KMCurve kaplan_meier(std::span<const double> times, std::span<const std::uint8_t> events) {
  const std::size_t n = times.size();
  if (events.size() != n) throw std::invalid_argument("kaplan_meier: input sizes differ");
  if (n == 0) throw DataError("kaplan_meier: empty input");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  KMCurve curve;
  double s = 1.0;
  std::size_t pos = 0;
  std::int64_t at_risk = static_cast<std::int64_t>(n);
  while (pos < n) {
    const double t = times[order[pos]];
    std::int64_t d = 0;
    std::int64_t leaving = 0;
    while (pos < n && times[order[pos]] == t) {
      d += events[order[pos]] ? 1 : 0;
      ++leaving;
      ++pos;
    }
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
      curve.event_times.push_back(t);
      curve.survival.push_back(s);
      curve.at_risk.push_back(at_risk);
      curve.events.push_back(d);
    }
    at_risk -= leaving;
  }
  return curve;
}

// ---------------------------------------------------------------------------
// K-sample log-rank test.

struct LogRankResult {
  double chi2 = 0.0;
  int dof = 0;  // K - 1
  double p_value = 1.0;
  std::vector<double> observed;  // O_g
  std::vector<double> expected;  // E_g
};

namespace detail {

// Cyclic Jacobi eigendecomposition of a small symmetric matrix (row-major).
// Returns eigenvalues; vecs holds eigenvectors in columns.
inline std::vector<double> jacobi_eigen_sym(std::vector<double> a, int n,
                                            std::vector<double>& vecs) {
  vecs.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) vecs[static_cast<std::size_t>(i) * n + i] = 1.0;
  auto at = [&](std::vector<double>& m, int r, int c) -> double& {
    return m[static_cast<std::size_t>(r) * n + c];
  };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) off += at(a, p, q) * at(a, p, q);
    }
    if (off < 1e-30) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(a, p, q);
        if (apq == 0.0) continue;
        const double theta = (at(a, q, q) - at(a, p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double cs = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * cs;
        for (int i = 0; i < n; ++i) {
          const double aip = at(a, i, p), aiq = at(a, i, q);
          at(a, i, p) = cs * aip - sn * aiq;
          at(a, i, q) = sn * aip + cs * aiq;
        }
        for (int i = 0; i < n; ++i) {
          const double api = at(a, p, i), aqi = at(a, q, i);
          at(a, p, i) = cs * api - sn * aqi;
          at(a, q, i) = sn * api + cs * aqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = at(vecs, i, p), viq = at(vecs, i, q);
          at(vecs, i, p) = cs * vip - sn * viq;
          at(vecs, i, q) = sn * vip + cs * viq;
        }
      }
    }
  }
  std::vector<double> eig(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) eig[static_cast<std::size_t>(i)] = at(a, i, i);
  return eig;
}

// z^T V^+ z through the eigendecomposition; eigenvalues below a relative
// floor are treated as exact zeros (degenerate groupings).
inline double quadratic_form_pinv(const std::vector<double>& v, const std::vector<double>& z,
                                  int n) {
  std::vector<double> vecs;
  std::vector<double> a = v;
  const auto eig = jacobi_eigen_sym(std::move(a), n, vecs);
  double lmax = 0.0;
  for (double l : eig) lmax = std::max(lmax, l);
  if (lmax <= 0.0) return 0.0;
  const double tol = 1e-12 * lmax;
  double chi2 = 0.0;
  for (int e = 0; e < n; ++e) {
    if (eig[static_cast<std::size_t>(e)] <= tol) continue;
    double proj = 0.0;
    for (int i = 0; i < n; ++i) proj += vecs[static_cast<std::size_t>(i) * n + e] * z[static_cast<std::size_t>(i)];
    chi2 += proj * proj / eig[static_cast<std::size_t>(e)];
  }
  return chi2;
}

}  // namespace detail

// K-sample log-rank statistic. At each distinct event time with d_j total
// events and n_j at risk, group g contributes d_gj to O_g and d_j n_gj / n_j
// to E_g; the covariance is
//   V_gg' = sum_j d_j (n_j - d_j) / (n_j - 1) (n_gj / n_j) (1{g=g'} - n_g'j / n_j)
// with the (n_j - d_j)/(n_j - 1) factor taken as 0 when n_j = 1. The
// statistic is z^T V^- z over the first K-1 groups, with a pseudo-inverse
// when V is singular.
inline LogRankResult logrank_test(std::span<const double> times,
                                  std::span<const std::uint8_t> events,
                                  std::span<const int> groups) {
  const std::size_t n = times.size();
  if (events.size() != n || groups.size() != n) {
    throw std::invalid_argument("logrank_test: input sizes differ");
  }
  if (n == 0) throw DataError("logrank_test: empty input");

  int k = 0;
  for (int g : groups) {
    if (g < 0) throw DataError("logrank_test: negative group label");
    k = std::max(k, g + 1);
  }
  if (k < 2) throw DataError("logrank_test: needs >= 2 groups");
  std::vector<std::int64_t> group_sizes(static_cast<std::size_t>(k), 0);
  for (int g : groups) ++group_sizes[static_cast<std::size_t>(g)];
  for (int g = 0; g < k; ++g) {
    if (group_sizes[static_cast<std::size_t>(g)] == 0) {
      throw DataError("logrank_test: group " + std::to_string(g) + " is empty");
    }
  }
  std::size_t total_events = 0;
  for (auto e : events) total_events += e ? 1 : 0;
  if (total_events == 0) throw DataError("logrank_test: no events");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  LogRankResult res;
  res.dof = k - 1;
  res.observed.assign(static_cast<std::size_t>(k), 0.0);
  res.expected.assign(static_cast<std::size_t>(k), 0.0);

  std::vector<double> at_risk_group(static_cast<std::size_t>(k));
  for (int g = 0; g < k; ++g) {
    at_risk_group[static_cast<std::size_t>(g)] = static_cast<double>(group_sizes[static_cast<std::size_t>(g)]);
  }
  double at_risk = static_cast<double>(n);
  std::vector<double> cov(static_cast<std::size_t>(k) * k, 0.0);
  std::vector<double> d_group(static_cast<std::size_t>(k));

  std::size_t pos = 0;
  while (pos < n) {
    const double t = times[order[pos]];
    std::fill(d_group.begin(), d_group.end(), 0.0);
    double d_total = 0.0;
    std::vector<double> leaving(static_cast<std::size_t>(k), 0.0);
    double leaving_total = 0.0;
    while (pos < n && times[order[pos]] == t) {
      const std::size_t i = order[pos];
      if (events[i]) {
        d_group[static_cast<std::size_t>(groups[i])] += 1.0;
        d_total += 1.0;
      }
      leaving[static_cast<std::size_t>(groups[i])] += 1.0;
      leaving_total += 1.0;
      ++pos;
    }
    if (d_total > 0.0) {
      const double nj = at_risk;
      const double hyper = nj > 1.0 ? d_total * (nj - d_total) / (nj - 1.0) : 0.0;
      for (int g = 0; g < k; ++g) {
        const double pg = at_risk_group[static_cast<std::size_t>(g)] / nj;
        res.observed[static_cast<std::size_t>(g)] += d_group[static_cast<std::size_t>(g)];
        res.expected[static_cast<std::size_t>(g)] += d_total * pg;
        for (int h = 0; h < k; ++h) {
          const double ph = at_risk_group[static_cast<std::size_t>(h)] / nj;
          cov[static_cast<std::size_t>(g) * k + h] += hyper * pg * ((g == h ? 1.0 : 0.0) - ph);
        }
      }
    }
    at_risk -= leaving_total;
    for (int g = 0; g < k; ++g) at_risk_group[static_cast<std::size_t>(g)] -= leaving[static_cast<std::size_t>(g)];
  }

  const int m = k - 1;
  std::vector<double> z(static_cast<std::size_t>(m));
  std::vector<double> v(static_cast<std::size_t>(m) * m);
  for (int g = 0; g < m; ++g) {
    z[static_cast<std::size_t>(g)] = res.observed[static_cast<std::size_t>(g)] - res.expected[static_cast<std::size_t>(g)];
    for (int h = 0; h < m; ++h) {
      v[static_cast<std::size_t>(g) * m + h] = cov[static_cast<std::size_t>(g) * k + h];
    }
  }
  res.chi2 = std::max(detail::quadratic_form_pinv(v, z, m), 0.0);
  res.p_value = chi2_sf(res.chi2, res.dof);
  return res;
}

}  // namespace dcsm
