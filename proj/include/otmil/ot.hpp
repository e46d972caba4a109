#pragma once
// Heterogeneity-aware optimal transport.
//
// The problem: move the uniform row mass 1/N of N instances onto K survival
// tokens, spending only a fraction rho of the total mass, with the token
// marginal softly tied to the uniform target rho/K by a weighted KL penalty.
// A virtual zero-cost token column absorbs the remaining 1-rho, which turns
// the problem into an unbalanced OT instance solvable by alternating matrix
// scaling against the Gibbs kernel M = exp(-C/eps).

#include <otmil/common.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace otmil {

// Sink target floor used when rho = 1 so the weighted KL stays finite.
inline constexpr double kSinkTargetFloor = 1e-12;

// Kernel entries below exp(-x) with x/eps past this switch to log-domain
// arithmetic when mode is Auto.
inline constexpr double kLogDomainThreshold = 500.0;

struct OtProblem {
  Matrix cost;       // N x K
  double rho;        // fraction of mass routed to real tokens, in (0, 1]
  double kl_weight;  // lambda, weight of the token-marginal KL penalty
  double epsilon;    // entropic regularization of the scaling solver
  double iota;       // finite stand-in for the sink's +inf KL weight
  int n_instances;
  int n_tokens;

  OtProblem(Matrix cost_, double rho_, double kl_weight_, double epsilon_,
            double iota_ = 1e8)
      : cost(std::move(cost_)),
        rho(rho_),
        kl_weight(kl_weight_),
        epsilon(epsilon_),
        iota(iota_),
        n_instances(static_cast<int>(cost.rows())),
        n_tokens(static_cast<int>(cost.cols())) {
    require(n_instances >= 1 && n_tokens >= 1, "cost matrix must be nonempty");
    require(cost.allFinite(), "cost entries must be finite");
    require(cost.minCoeff() >= 0.0, "cost entries must be nonnegative");
    require(rho > 0.0 && rho <= 1.0, "rho must lie in (0, 1]");
    require(kl_weight > 0.0, "kl_weight must be positive");
    require(epsilon > 0.0, "epsilon must be positive");
    require(iota >= 1e6 * kl_weight, "iota must be at least 1e6 * kl_weight");
  }
};

struct AugmentedProblem {
  Matrix cost_hat;    // N x (K+1); last column identically zero
  Vector beta;        // K+1 token-marginal targets, sums to 1
  Vector lambda_hat;  // K+1 KL weights; sink entry = iota
  Vector alpha;       // N hard row marginals, each 1/N
  int n_instances = 0;
  int n_tokens = 0;   // K, not counting the sink
};

// token_prior, when given, replaces the uniform rho/K target with a
// user-supplied distribution over the K real tokens (rescaled to mass rho).
inline AugmentedProblem build_augmented(
    const OtProblem& p, const std::optional<Vector>& token_prior = {}) {
  const int n = p.n_instances;
  const int k = p.n_tokens;
  AugmentedProblem aug;
  aug.n_instances = n;
  aug.n_tokens = k;
  aug.cost_hat = Matrix::Zero(n, k + 1);
  aug.cost_hat.leftCols(k) = p.cost;
  aug.beta = Vector::Zero(k + 1);
  if (token_prior) {
    require(token_prior->size() == k, "token prior must have K entries");
    require(token_prior->minCoeff() > 0.0, "token prior entries must be positive");
    aug.beta.head(k) = (*token_prior) * (p.rho / token_prior->sum());
  } else {
    aug.beta.head(k).setConstant(p.rho / k);
  }
  aug.beta(k) = std::max(1.0 - p.rho, kSinkTargetFloor);
  aug.lambda_hat = Vector::Constant(k + 1, p.kl_weight);
  aug.lambda_hat(k) = p.iota;
  aug.alpha = Vector::Constant(n, 1.0 / n);
  return aug;
}

// sum_i lambda_hat[i] * m[i] * log(m[i] / beta[i]), with 0 log 0 = 0.
inline double weighted_kl(const Vector& marginal, const Vector& beta,
                          const Vector& lambda_hat) {
  require(marginal.size() == beta.size() && beta.size() == lambda_hat.size(),
          "weighted_kl: size mismatch");
  require(beta.minCoeff() > 0.0, "weighted_kl: beta entries must be positive");
  double acc = 0.0;
  for (int i = 0; i < marginal.size(); ++i) {
    const double m = marginal(i);
    require(m >= 0.0, "weighted_kl: negative marginal entry");
    if (m > 0.0) acc += lambda_hat(i) * m * std::log(m / beta(i));
  }
  return acc;
}

struct TransportPlan {
  Matrix mass;       // N x K, first K columns of the augmented plan
  Vector sink_mass;  // N, the virtual column
  int iterations = 0;
  double residual = 0.0;  // final row-marginal residual
  // marginal metadata
  double rho = 1.0;
  double row_target = 1.0;  // 1/N

  double total_mass() const { return mass.sum(); }
};

enum class KernelMode { Auto, Linear, LogDomain };

struct SolveOptions {
  double tol = 1e-8;
  int max_iter = 5000;
  KernelMode mode = KernelMode::Auto;
};

// One solver state: dual scalings against the fixed kernel.
struct ScalingState {
  Vector a;         // N, strictly positive
  Vector b;         // K+1, strictly positive
  Matrix kernel;    // M = exp(-cost_hat / eps)
  Vector exponent;  // f = lambda_hat / (lambda_hat + eps)
};

// Everything reverse-mode differentiation needs to replay the sweeps.
struct SolveTrace {
  Matrix kernel;    // M
  Vector exponent;  // f
  Vector alpha;
  Vector beta;
  double epsilon = 0.0;
  std::vector<Vector> a;  // a[s] for sweep s+1 (size S)
  std::vector<Vector> b;  // b[0] = ones, then per sweep (size S+1)
  Vector a_final;         // row rebalance applied before forming the plan
};

namespace detail {

inline double rel_change_inf(const Vector& next, const Vector& prev) {
  const double scale = prev.cwiseAbs().maxCoeff();
  return (next - prev).cwiseAbs().maxCoeff() / scale;
}

inline Vector logsumexp_rows(const Matrix& x) {
  Vector m = x.rowwise().maxCoeff();
  Vector out(x.rows());
  for (int i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < x.cols(); ++j) s += std::exp(x(i, j) - m(i));
    out(i) = m(i) + std::log(s);
  }
  return out;
}

inline Vector logsumexp_cols(const Matrix& x) {
  Vector m = x.colwise().maxCoeff();
  Vector out(x.cols());
  for (int j = 0; j < x.cols(); ++j) {
    double s = 0.0;
    for (int i = 0; i < x.rows(); ++i) s += std::exp(x(i, j) - m(j));
    out(j) = m(j) + std::log(s);
  }
  return out;
}

inline TransportPlan finish_plan(const Matrix& qhat, const AugmentedProblem& aug,
                                 int sweeps) {
  const int k = aug.n_tokens;
  TransportPlan plan;
  plan.mass = qhat.leftCols(k);
  plan.sink_mass = qhat.col(k);
  plan.iterations = sweeps;
  plan.rho = aug.beta.head(k).sum();
  plan.row_target = aug.alpha(0);
  plan.residual =
      (qhat.rowwise().sum() - aug.alpha).cwiseAbs().maxCoeff();
  return plan;
}

inline TransportPlan scaling_solve_linear(const AugmentedProblem& aug,
                                          double epsilon, double tol,
                                          int max_iter, SolveTrace* trace) {
  const int n = aug.n_instances;
  const int k = aug.n_tokens;
  const Matrix kernel = (-aug.cost_hat / epsilon).array().exp();
  // The sink column is exp(0) = 1, so rows cannot vanish unless the caller
  // bypassed build_augmented; columns can when cost/eps is extreme.
  for (int i = 0; i < n; ++i) {
    if (kernel.row(i).maxCoeff() <= 0.0) {
      throw SolverError(SolverError::Kind::KernelUnderflow,
                        "kernel row " + std::to_string(i) +
                            " underflowed to zero; raise epsilon or use "
                            "log-domain mode");
    }
  }
  for (int j = 0; j <= k; ++j) {
    if (kernel.col(j).maxCoeff() <= 0.0) {
      throw SolverError(SolverError::Kind::KernelUnderflow,
                        "kernel column " + std::to_string(j) +
                            " underflowed to zero; raise epsilon or use "
                            "log-domain mode");
    }
  }
  const Vector f =
      (aug.lambda_hat.array() / (aug.lambda_hat.array() + epsilon)).matrix();

  Vector b = Vector::Ones(k + 1);
  Vector a(n);
  if (trace) {
    *trace = SolveTrace{};
    trace->kernel = kernel;
    trace->exponent = f;
    trace->alpha = aug.alpha;
    trace->beta = aug.beta;
    trace->epsilon = epsilon;
    trace->b.push_back(b);
  }

  int sweeps = 0;
  double b_change = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    a = aug.alpha.cwiseQuotient(kernel * b);
    const Vector u = kernel.transpose() * a;
    const Vector b_new =
        aug.beta.cwiseQuotient(u).array().pow(f.array()).matrix();
    b_change = rel_change_inf(b_new, b);
    b = b_new;
    ++sweeps;
    if (trace) {
      trace->a.push_back(a);
      trace->b.push_back(b);
    }
    if (b_change < tol) break;
  }
  if (b_change >= tol && b_change > 100.0 * tol) {
    throw SolverError(SolverError::Kind::NonConvergence,
                      "scaling solver did not converge in " +
                          std::to_string(max_iter) +
                          " sweeps (b change " + std::to_string(b_change) + ")");
  }
  // Final row rebalance: the returned plan honors the hard row marginal.
  a = aug.alpha.cwiseQuotient(kernel * b);
  if (trace) trace->a_final = a;
  const Matrix qhat = a.asDiagonal() * kernel * b.asDiagonal();
  return finish_plan(qhat, aug, sweeps);
}

inline TransportPlan scaling_solve_log(const AugmentedProblem& aug,
                                       double epsilon, double tol,
                                       int max_iter) {
  const int n = aug.n_instances;
  const int k = aug.n_tokens;
  const Matrix log_kernel = -aug.cost_hat / epsilon;
  const Vector f =
      (aug.lambda_hat.array() / (aug.lambda_hat.array() + epsilon)).matrix();
  const Vector log_alpha = aug.alpha.array().log().matrix();
  const Vector log_beta = aug.beta.array().log().matrix();

  Vector log_b = Vector::Zero(k + 1);
  Vector log_a(n);
  int sweeps = 0;
  double change = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    log_a = log_alpha - logsumexp_rows(log_kernel + log_b.transpose().replicate(n, 1));
    const Vector log_u =
        logsumexp_cols(log_kernel + log_a.replicate(1, k + 1));
    const Vector log_b_new =
        (f.array() * (log_beta - log_u).array()).matrix();
    change = (log_b_new - log_b).cwiseAbs().maxCoeff();
    log_b = log_b_new;
    ++sweeps;
    if (change < tol) break;
  }
  if (change >= tol && change > 100.0 * tol) {
    throw SolverError(SolverError::Kind::NonConvergence,
                      "log-domain scaling solver did not converge in " +
                          std::to_string(max_iter) + " sweeps");
  }
  log_a = log_alpha - logsumexp_rows(log_kernel + log_b.transpose().replicate(n, 1));
  Matrix qhat(n, k + 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= k; ++j)
      qhat(i, j) = std::exp(log_a(i) + log_kernel(i, j) + log_b(j));
  return finish_plan(qhat, aug, sweeps);
}

}  // namespace detail

inline TransportPlan scaling_solve(const AugmentedProblem& aug, double epsilon,
                                   const SolveOptions& opts = {},
                                   SolveTrace* trace = nullptr) {
  require(epsilon > 0.0, "epsilon must be positive");
  require(opts.tol > 0.0, "tol must be positive");
  require(opts.max_iter >= 1, "max_iter must be at least 1");
  require(aug.cost_hat.rows() == aug.alpha.size() &&
              aug.cost_hat.cols() == aug.beta.size() &&
              aug.beta.size() == aug.lambda_hat.size(),
          "augmented problem is dimensionally inconsistent");

  KernelMode mode = opts.mode;
  if (mode == KernelMode::Auto) {
    const double min_real_cost = aug.cost_hat.leftCols(aug.n_tokens).minCoeff();
    mode = (min_real_cost / epsilon > kLogDomainThreshold)
               ? KernelMode::LogDomain
               : KernelMode::Linear;
  }
  if (mode == KernelMode::LogDomain) {
    require(trace == nullptr, "sweep traces are only recorded in linear mode");
    return detail::scaling_solve_log(aug, epsilon, opts.tol, opts.max_iter);
  }
  return detail::scaling_solve_linear(aug, epsilon, opts.tol, opts.max_iter,
                                      trace);
}

inline TransportPlan scaling_solve(const AugmentedProblem& aug, double epsilon,
                                   double tol, int max_iter) {
  SolveOptions opts;
  opts.tol = tol;
  opts.max_iter = max_iter;
  return scaling_solve(aug, epsilon, opts);
}

inline TransportPlan solve_heterogeneity_ot(const OtProblem& problem,
                                            const SolveOptions& opts = {},
                                            SolveTrace* trace = nullptr) {
  const AugmentedProblem aug = build_augmented(problem);
  return scaling_solve(aug, problem.epsilon, opts, trace);
}

inline TransportPlan solve_heterogeneity_ot(const OtProblem& problem,
                                            double tol, int max_iter) {
  SolveOptions opts;
  opts.tol = tol;
  opts.max_iter = max_iter;
  return solve_heterogeneity_ot(problem, opts);
}

// Named entry point for the rho = 1 case.
inline TransportPlan solve_semi_relaxed(const Matrix& cost, double kl_weight,
                                        double epsilon,
                                        const SolveOptions& opts = {}) {
  return solve_heterogeneity_ot(OtProblem(cost, 1.0, kl_weight, epsilon), opts);
}

// Objective whose minimizer over {Q >= 0, Q 1 = alpha} is the solver's fixed
// point: <Q,C> + sum_j lhat_j (m_j log(m_j/beta_j) - m_j + beta_j)
//        + eps sum_ij (q log q - q).
inline double entropic_objective(const TransportPlan& plan,
                                 const AugmentedProblem& aug, double epsilon) {
  const int n = aug.n_instances;
  const int k = aug.n_tokens;
  require(plan.mass.rows() == n && plan.mass.cols() == k &&
              plan.sink_mass.size() == n,
          "plan and augmented problem are dimensionally inconsistent");
  Matrix qhat(n, k + 1);
  qhat.leftCols(k) = plan.mass;
  qhat.col(k) = plan.sink_mass;

  double value = (qhat.array() * aug.cost_hat.array()).sum();
  const Vector m = qhat.colwise().sum();
  for (int j = 0; j <= k; ++j) {
    const double mj = m(j);
    const double kl = (mj > 0.0 ? mj * std::log(mj / aug.beta(j)) : 0.0) - mj +
                      aug.beta(j);
    value += aug.lambda_hat(j) * kl;
  }
  double ent = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= k; ++j) {
      const double q = qhat(i, j);
      if (q > 0.0) ent += q * std::log(q) - q;
    }
  }
  return value + epsilon * ent;
}

struct MarginalResiduals {
  double row_residual;
  double mass_residual;
};

inline MarginalResiduals marginal_residuals(const TransportPlan& plan) {
  const Vector row_sums = plan.mass.rowwise().sum() + plan.sink_mass;
  MarginalResiduals r;
  r.row_residual = (row_sums.array() - plan.row_target).abs().maxCoeff();
  r.mass_residual = std::abs(plan.mass.sum() - plan.rho);
  return r;
}

}  // namespace otmil
