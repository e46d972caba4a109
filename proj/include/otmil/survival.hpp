#pragma once
// Survival evaluation: Harrell's C, Kaplan-Meier curves, the two-group
// log-rank test, and median risk stratification. Censored subjects at time t
// remain at risk for events at t.

#include <otmil/common.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace otmil {

struct Cohort {
  Vector risks;
  Vector times;
  std::vector<std::uint8_t> events;  // 1 = event observed, 0 = censored
  std::vector<std::string> ids;

  int size() const { return static_cast<int>(times.size()); }

  void validate() const {
    require(risks.size() == times.size() &&
                events.size() == static_cast<std::size_t>(times.size()),
            "cohort fields must have equal lengths");
    require(ids.empty() || ids.size() == events.size(),
            "cohort ids must be empty or match length");
    require(times.size() == 0 || times.minCoeff() > 0.0,
            "cohort times must be positive");
  }
};

struct SurvivalCurve {
  std::vector<double> time_points;     // distinct observed times, increasing
  std::vector<double> survival;        // S after each time point
  std::vector<int> at_risk;            // n at each time point
  std::vector<int> observed_events;    // d at each time point
};

struct LogRankResult {
  double chi_square;
  double p_value;
};

struct MedianSplit {
  Cohort high;
  Cohort low;
  double median;
  bool degenerate;  // true when the high group came out empty
};

namespace detail {

// Regularized upper incomplete gamma Q(a, x): series for x < a+1, Lentz
// continued fraction otherwise. Accurate to ~1e-15 in the range used here.
inline double gamma_q(double a, double x) {
  require(a > 0.0 && x >= 0.0, "gamma_q requires a > 0, x >= 0");
  if (x == 0.0) return 1.0;
  const double log_prefactor = -x + a * std::log(x) - std::lgamma(a);
  if (x < a + 1.0) {
    // P(a,x) by series, then Q = 1 - P.
    double term = 1.0 / a;
    double sum = term;
    for (int n = 1; n < 500; ++n) {
      term *= x / (a + n);
      sum += term;
      if (std::abs(term) < std::abs(sum) * 1e-16) break;
    }
    return 1.0 - sum * std::exp(log_prefactor);
  }
  // Q(a,x) by continued fraction (modified Lentz).
  const double fpmin = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / fpmin;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < fpmin) d = fpmin;
    c = b + an / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(log_prefactor) * h;
}

}  // namespace detail

// Upper tail of the chi-square distribution with one degree of freedom.
inline double chi_square_p_value(double chi_square) {
  require(chi_square >= 0.0, "chi_square must be nonnegative");
  return detail::gamma_q(0.5, 0.5 * chi_square);
}

// Harrell's C. Pair (i, j) is comparable iff t_i < t_j and subject i had an
// event; concordant iff r_i > r_j; risk ties count one half.
inline double c_index(const Cohort& cohort) {
  cohort.validate();
  const int n = cohort.size();
  double score = 0.0;
  long long comparable = 0;
  for (int i = 0; i < n; ++i) {
    if (!cohort.events[i]) continue;
    for (int j = 0; j < n; ++j) {
      if (cohort.times(i) >= cohort.times(j)) continue;
      ++comparable;
      if (cohort.risks(i) > cohort.risks(j)) {
        score += 1.0;
      } else if (cohort.risks(i) == cohort.risks(j)) {
        score += 0.5;
      }
    }
  }
  if (comparable == 0) {
    throw std::invalid_argument("c_index: no comparable pairs");
  }
  return score / static_cast<double>(comparable);
}

// Median is the midpoint of the two central order statistics for even sizes.
// Subjects with risk strictly above the median form the high-risk group.
inline MedianSplit stratify_by_median(const Cohort& cohort) {
  cohort.validate();
  const int n = cohort.size();
  require(n >= 2, "stratify_by_median requires at least 2 subjects");
  std::vector<double> sorted(cohort.risks.data(), cohort.risks.data() + n);
  std::sort(sorted.begin(), sorted.end());
  const double median = (n % 2 == 1)
                            ? sorted[n / 2]
                            : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  MedianSplit split;
  split.median = median;
  std::vector<int> hi_idx, lo_idx;
  for (int i = 0; i < n; ++i) {
    (cohort.risks(i) > median ? hi_idx : lo_idx).push_back(i);
  }
  auto subset = [&](const std::vector<int>& idx) {
    Cohort c;
    c.risks.resize(idx.size());
    c.times.resize(idx.size());
    c.events.resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      c.risks(r) = cohort.risks(idx[r]);
      c.times(r) = cohort.times(idx[r]);
      c.events[r] = cohort.events[idx[r]];
      if (!cohort.ids.empty()) c.ids.push_back(cohort.ids[idx[r]]);
    }
    return c;
  };
  split.high = subset(hi_idx);
  split.low = subset(lo_idx);
  split.degenerate = hi_idx.empty();
  return split;
}

// Product-limit estimator over distinct observed times. When nobody has left
// the risk set except through events, the product telescopes and S is
// computed as survivors/n in a single division.
inline SurvivalCurve km_curve(const Vector& times,
                              const std::vector<std::uint8_t>& events) {
  require(times.size() > 0, "km_curve requires a nonempty cohort");
  require(events.size() == static_cast<std::size_t>(times.size()),
          "km_curve: times/events length mismatch");
  const int n = static_cast<int>(times.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return times(a) < times(b); });

  SurvivalCurve curve;
  double survival = 1.0;
  int at_risk = n;
  long long events_so_far = 0;
  int pos = 0;
  while (pos < n) {
    const double t = times(order[pos]);
    int d = 0;
    int removed = 0;
    while (pos < n && times(order[pos]) == t) {
      d += events[order[pos]] ? 1 : 0;
      ++removed;
      ++pos;
    }
    if (d > 0) {
      if (at_risk + events_so_far == n) {
        // no censoring has left the risk set yet: exact telescoped value
        survival = static_cast<double>(at_risk - d) / static_cast<double>(n);
      } else {
        survival *= static_cast<double>(at_risk - d) / at_risk;
      }
    }
    curve.time_points.push_back(t);
    curve.survival.push_back(survival);
    curve.at_risk.push_back(at_risk);
    curve.observed_events.push_back(d);
    events_so_far += d;
    at_risk -= removed;
  }
  return curve;
}

// Two-group log-rank test; expected events from pooled risk sets at each
// distinct event time, hypergeometric variance, chi-square with 1 dof.
inline LogRankResult log_rank_test(const Cohort& a, const Cohort& b) {
  a.validate();
  b.validate();
  require(a.size() >= 1 && b.size() >= 1, "log_rank_test: empty group");

  struct Obs {
    double time;
    bool event;
    bool group_a;
  };
  std::vector<Obs> obs;
  obs.reserve(a.size() + b.size());
  for (int i = 0; i < a.size(); ++i)
    obs.push_back({a.times(i), a.events[i] != 0, true});
  for (int i = 0; i < b.size(); ++i)
    obs.push_back({b.times(i), b.events[i] != 0, false});
  std::sort(obs.begin(), obs.end(),
            [](const Obs& x, const Obs& y) { return x.time < y.time; });

  double observed_a = 0.0;
  double expected_a = 0.0;
  double variance = 0.0;
  int n_a = a.size();
  int n_b = b.size();
  std::size_t pos = 0;
  while (pos < obs.size()) {
    const double t = obs[pos].time;
    int d_a = 0, d_b = 0, r_a = 0, r_b = 0;
    while (pos < obs.size() && obs[pos].time == t) {
      if (obs[pos].group_a) {
        d_a += obs[pos].event ? 1 : 0;
        ++r_a;
      } else {
        d_b += obs[pos].event ? 1 : 0;
        ++r_b;
      }
      ++pos;
    }
    const int d = d_a + d_b;
    if (d > 0) {
      const double n = n_a + n_b;
      expected_a += d * (n_a / n);
      observed_a += d_a;
      if (n > 1.0) {
        variance += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1.0);
      }
    }
    n_a -= r_a;
    n_b -= r_b;
  }
  if (variance == 0.0) {
    throw std::invalid_argument(
        "log_rank_test: zero variance (no informative event times)");
  }
  LogRankResult result;
  const double diff = observed_a - expected_a;
  result.chi_square = diff * diff / variance;
  result.p_value = chi_square_p_value(result.chi_square);
  return result;
}

}  // namespace otmil
