#pragma once
// The OT-based multiple-instance survival model: linear projection, learnable
// survival tokens, cost construction on the unit sphere, transport-weighted
// aggregation, a linear risk head, and Cox partial-likelihood training.
// Gradients flow through the recorded scaling sweeps by manual reverse-mode
// differentiation; rho is curriculum state and receives no gradient.

#include <otmil/bag.hpp>
#include <otmil/common.hpp>
#include <otmil/ot.hpp>
#include <otmil/rng.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace otmil {

enum class RampShape { Sigmoid, Linear, Fixed };
enum class GlobalConstraint { Kl, Equality };

struct TrainConfig {
  double rho0 = 0.1;
  int ramp_epochs = 10;  // T
  int epochs = 50;
  double lr = 1e-4;  // initial learning rate, cosine-decayed
  double weight_decay = 1e-5;
  int batch_size = 16;
  int n_tokens = 16;       // K
  double kl_weight = 0.1;  // lambda
  double epsilon = 0.05;
  int latent_dim = 256;  // d
  RampShape ramp_shape = RampShape::Sigmoid;
  double fixed_rho = 0.8;  // used when ramp_shape == Fixed
  GlobalConstraint global_constraint = GlobalConstraint::Kl;
  int max_patches = 0;  // N cap; 0 disables subsampling
  double solver_tol = 1e-8;
  int solver_max_iter = 5000;
  double iota = 1e8;
  std::uint64_t seed = 0;

  void validate() const {
    require(rho0 > 0.0 && rho0 <= 1.0, "rho0 must lie in (0, 1]");
    require(ramp_epochs >= 0 && ramp_epochs <= epochs,
            "ramp_epochs must lie in [0, epochs]");
    require(epochs >= 0, "epochs must be nonnegative");
    require(lr > 0.0 && weight_decay >= 0.0, "bad optimizer settings");
    require(batch_size >= 1, "batch_size must be positive");
    require(n_tokens >= 1 && latent_dim >= 1, "bad model dimensions");
    require(kl_weight > 0.0 && epsilon > 0.0, "bad solver settings");
    require(fixed_rho > 0.0 && fixed_rho <= 1.0, "fixed_rho must lie in (0, 1]");
  }

  // Equality ablation: the token-marginal KL weight is pushed to iota, which
  // recovers the balanced column constraint in the limit.
  double effective_kl_weight() const {
    return global_constraint == GlobalConstraint::Kl ? kl_weight : iota;
  }
  double effective_iota() const {
    return global_constraint == GlobalConstraint::Kl ? iota : iota * 1e6;
  }
};

// Sigmoid ramp-up of the transport mass ratio; holds at 1 from t = T*I on.
inline double rho_schedule(long t, int ramp_epochs, long iters_per_epoch,
                           double rho0) {
  const double horizon =
      static_cast<double>(ramp_epochs) * static_cast<double>(iters_per_epoch);
  if (horizon <= 0.0 || static_cast<double>(t) >= horizon) return 1.0;
  const double s = 1.0 - static_cast<double>(t) / horizon;
  return rho0 + (1.0 - rho0) * std::exp(-5.0 * s * s);
}

inline double rho_schedule_linear(long t, int ramp_epochs, long iters_per_epoch,
                                  double rho0) {
  const double horizon =
      static_cast<double>(ramp_epochs) * static_cast<double>(iters_per_epoch);
  if (horizon <= 0.0 || static_cast<double>(t) >= horizon) return 1.0;
  return rho0 + (1.0 - rho0) * (static_cast<double>(t) / horizon);
}

inline double rho_for_iteration(const TrainConfig& cfg, long t,
                                long iters_per_epoch) {
  switch (cfg.ramp_shape) {
    case RampShape::Sigmoid:
      return rho_schedule(t, cfg.ramp_epochs, iters_per_epoch, cfg.rho0);
    case RampShape::Linear:
      return rho_schedule_linear(t, cfg.ramp_epochs, iters_per_epoch, cfg.rho0);
    case RampShape::Fixed:
      return cfg.fixed_rho;
  }
  return 1.0;
}

struct ModelParams {
  Matrix proj_weight;  // D x d
  Vector proj_bias;    // d
  Matrix tokens;       // K x d
  Vector agg_weight;   // K
  double agg_bias = 0.0;
  Vector pred_weight;  // d
  double pred_bias = 0.0;

  int input_dim() const { return static_cast<int>(proj_weight.rows()); }
  int latent_dim() const { return static_cast<int>(proj_weight.cols()); }
  int n_tokens() const { return static_cast<int>(tokens.rows()); }

  // Projection/predictor/aggregation from centered uniforms scaled by
  // 1/sqrt(fan_in); tokens from unit Gaussians, then row-normalized.
  static ModelParams init(int input_dim, int latent_dim, int n_tokens,
                          Rng& rng) {
    require(latent_dim <= input_dim, "latent_dim must not exceed input_dim");
    ModelParams p;
    const double proj_scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
    p.proj_weight.resize(input_dim, latent_dim);
    for (int i = 0; i < input_dim; ++i)
      for (int j = 0; j < latent_dim; ++j)
        p.proj_weight(i, j) = rng.uniform(-proj_scale, proj_scale);
    p.proj_bias = Vector::Zero(latent_dim);
    p.tokens.resize(n_tokens, latent_dim);
    for (int i = 0; i < n_tokens; ++i) {
      for (int j = 0; j < latent_dim; ++j) p.tokens(i, j) = rng.normal();
      p.tokens.row(i) /= p.tokens.row(i).norm();
    }
    const double agg_scale = 1.0 / std::sqrt(static_cast<double>(n_tokens));
    p.agg_weight.resize(n_tokens);
    for (int i = 0; i < n_tokens; ++i)
      p.agg_weight(i) = rng.uniform(-agg_scale, agg_scale);
    p.agg_bias = 0.0;
    const double pred_scale = 1.0 / std::sqrt(static_cast<double>(latent_dim));
    p.pred_weight.resize(latent_dim);
    for (int j = 0; j < latent_dim; ++j)
      p.pred_weight(j) = rng.uniform(-pred_scale, pred_scale);
    p.pred_bias = 0.0;
    return p;
  }

  long n_parameters() const {
    return proj_weight.size() + proj_bias.size() + tokens.size() +
           agg_weight.size() + 1 + pred_weight.size() + 1;
  }

  // Flat packing (row-major matrices) used by the finite-difference checks.
  Vector to_vector() const {
    Vector v(n_parameters());
    long at = 0;
    for (int i = 0; i < proj_weight.rows(); ++i)
      for (int j = 0; j < proj_weight.cols(); ++j) v(at++) = proj_weight(i, j);
    for (int j = 0; j < proj_bias.size(); ++j) v(at++) = proj_bias(j);
    for (int i = 0; i < tokens.rows(); ++i)
      for (int j = 0; j < tokens.cols(); ++j) v(at++) = tokens(i, j);
    for (int i = 0; i < agg_weight.size(); ++i) v(at++) = agg_weight(i);
    v(at++) = agg_bias;
    for (int j = 0; j < pred_weight.size(); ++j) v(at++) = pred_weight(j);
    v(at++) = pred_bias;
    return v;
  }

  void from_vector(const Vector& v) {
    require(v.size() == n_parameters(), "parameter vector size mismatch");
    long at = 0;
    for (int i = 0; i < proj_weight.rows(); ++i)
      for (int j = 0; j < proj_weight.cols(); ++j) proj_weight(i, j) = v(at++);
    for (int j = 0; j < proj_bias.size(); ++j) proj_bias(j) = v(at++);
    for (int i = 0; i < tokens.rows(); ++i)
      for (int j = 0; j < tokens.cols(); ++j) tokens(i, j) = v(at++);
    for (int i = 0; i < agg_weight.size(); ++i) agg_weight(i) = v(at++);
    agg_bias = v(at++);
    for (int j = 0; j < pred_weight.size(); ++j) pred_weight(j) = v(at++);
    pred_bias = v(at++);
  }
};

struct ParamGrads {
  Matrix proj_weight;
  Vector proj_bias;
  Matrix tokens;
  Vector agg_weight;
  double agg_bias = 0.0;
  Vector pred_weight;
  double pred_bias = 0.0;

  static ParamGrads zero(const ModelParams& p) {
    ParamGrads g;
    g.proj_weight = Matrix::Zero(p.proj_weight.rows(), p.proj_weight.cols());
    g.proj_bias = Vector::Zero(p.proj_bias.size());
    g.tokens = Matrix::Zero(p.tokens.rows(), p.tokens.cols());
    g.agg_weight = Vector::Zero(p.agg_weight.size());
    g.agg_bias = 0.0;
    g.pred_weight = Vector::Zero(p.pred_weight.size());
    g.pred_bias = 0.0;
    return g;
  }

  void add(const ParamGrads& o) {
    proj_weight += o.proj_weight;
    proj_bias += o.proj_bias;
    tokens += o.tokens;
    agg_weight += o.agg_weight;
    agg_bias += o.agg_bias;
    pred_weight += o.pred_weight;
    pred_bias += o.pred_bias;
  }

  bool all_finite() const {
    return proj_weight.allFinite() && proj_bias.allFinite() &&
           tokens.allFinite() && agg_weight.allFinite() &&
           std::isfinite(agg_bias) && pred_weight.allFinite() &&
           std::isfinite(pred_bias);
  }

  Vector to_vector(const ModelParams& shape) const {
    ModelParams tmp = shape;
    tmp.proj_weight = proj_weight;
    tmp.proj_bias = proj_bias;
    tmp.tokens = tokens;
    tmp.agg_weight = agg_weight;
    tmp.agg_bias = agg_bias;
    tmp.pred_weight = pred_weight;
    tmp.pred_bias = pred_bias;
    return tmp.to_vector();
  }
};

// Z = F W + 1 b^T
inline Matrix project(const Matrix& features, const ModelParams& p) {
  require(features.cols() == p.proj_weight.rows(),
          "project: feature dimension mismatch");
  Matrix z = features * p.proj_weight;
  z.rowwise() += p.proj_bias.transpose();
  return z;
}

namespace detail {

// Rows scaled to unit norm; zero rows map to zero vectors.
inline Matrix normalize_rows(const Matrix& x, Vector& norms) {
  Matrix out = x;
  norms.resize(x.rows());
  for (int i = 0; i < x.rows(); ++i) {
    const double r = x.row(i).norm();
    norms(i) = r;
    if (r > 0.0) {
      out.row(i) /= r;
    } else {
      out.row(i).setZero();
    }
  }
  return out;
}

}  // namespace detail

// C_ij = || z_i/|z_i| - s_j/|s_j| ||_2, entries in [0, 2].
inline Matrix cost_matrix(const Matrix& z, const Matrix& tokens) {
  require(z.cols() == tokens.cols(), "cost_matrix: dimension mismatch");
  Vector zn, sn;
  const Matrix zh = detail::normalize_rows(z, zn);
  const Matrix sh = detail::normalize_rows(tokens, sn);
  Matrix cost(z.rows(), tokens.rows());
  for (int i = 0; i < z.rows(); ++i) {
    for (int j = 0; j < tokens.rows(); ++j) {
      cost(i, j) = (zh.row(i) - sh.row(j)).norm();
    }
  }
  return cost;
}

// E = W_agg (Q^T Z) + bias
inline Vector aggregate(const TransportPlan& plan, const Matrix& z,
                        const ModelParams& p) {
  require(plan.mass.rows() == z.rows(), "aggregate: instance count mismatch");
  require(plan.mass.cols() == p.agg_weight.size(),
          "aggregate: token count mismatch");
  const Matrix pooled = plan.mass.transpose() * z;  // K x d
  Vector e = pooled.transpose() * p.agg_weight;
  e.array() += p.agg_bias;
  return e;
}

struct ForwardTrace {
  Matrix features;        // possibly subsampled
  std::vector<int> kept;  // original indices kept by subsampling (empty = all)
  Matrix z;
  Matrix z_hat;
  Vector z_norms;
  Matrix s_hat;
  Vector s_norms;
  Matrix cost;
  AugmentedProblem aug;
  SolveTrace solve;
  TransportPlan plan;
  Matrix pooled;     // K x d
  Vector embedding;  // E
  double risk = 0.0;
  double rho = 1.0;
  std::string bag_id;
};

inline ForwardTrace forward(const Bag& bag, const ModelParams& params,
                            double rho, const TrainConfig& cfg) {
  bag.validate();
  ForwardTrace tr;
  tr.bag_id = bag.bag_id;
  tr.rho = rho;

  if (cfg.max_patches > 0 && bag.n_instances() > cfg.max_patches) {
    // Deterministic per (run seed, bag id); order of survivors is preserved.
    Rng sub(Rng::mix(cfg.seed, Rng::hash_string(bag.bag_id)));
    std::vector<int> idx = sub.permutation(bag.n_instances());
    idx.resize(cfg.max_patches);
    std::sort(idx.begin(), idx.end());
    tr.kept = idx;
    tr.features.resize(cfg.max_patches, bag.feature_dim());
    for (int r = 0; r < cfg.max_patches; ++r) {
      tr.features.row(r) = bag.features.row(idx[r]);
    }
  } else {
    tr.features = bag.features;
  }

  tr.z = project(tr.features, params);
  tr.z_hat = detail::normalize_rows(tr.z, tr.z_norms);
  tr.s_hat = detail::normalize_rows(params.tokens, tr.s_norms);
  tr.cost.resize(tr.z.rows(), params.tokens.rows());
  for (int i = 0; i < tr.z.rows(); ++i) {
    for (int j = 0; j < params.tokens.rows(); ++j) {
      tr.cost(i, j) = (tr.z_hat.row(i) - tr.s_hat.row(j)).norm();
    }
  }

  const OtProblem problem(tr.cost, rho, cfg.effective_kl_weight(), cfg.epsilon,
                          cfg.effective_iota());
  tr.aug = build_augmented(problem);
  SolveOptions opts;
  opts.tol = cfg.solver_tol;
  opts.max_iter = cfg.solver_max_iter;
  opts.mode = KernelMode::Linear;  // model costs are bounded by 2
  try {
    tr.plan = scaling_solve(tr.aug, cfg.epsilon, opts, &tr.solve);
  } catch (const SolverError& e) {
    throw SolverError(e.kind(),
                      std::string(e.what()) + " (bag " + bag.bag_id + ")");
  }

  tr.pooled = tr.plan.mass.transpose() * tr.z;
  tr.embedding = tr.pooled.transpose() * params.agg_weight;
  tr.embedding.array() += params.agg_bias;
  tr.risk = params.pred_weight.dot(tr.embedding) + params.pred_bias;
  return tr;
}

// Negative Cox partial log-likelihood averaged over observed events, Breslow
// convention for ties; 0 when the batch has no events.
inline double cox_loss(const Vector& risks, const Vector& times,
                       const std::vector<std::uint8_t>& events) {
  const int n = static_cast<int>(risks.size());
  require(times.size() == n && events.size() == static_cast<std::size_t>(n),
          "cox_loss: size mismatch");
  int n_events = 0;
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!events[i]) continue;
    ++n_events;
    // log sum over the risk set {j : t_j >= t_i}
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (times(j) >= times(i)) m = std::max(m, risks(j));
    }
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      if (times(j) >= times(i)) s += std::exp(risks(j) - m);
    }
    loss += m + std::log(s) - risks(i);
  }
  return n_events == 0 ? 0.0 : loss / n_events;
}

// d(cox_loss)/d(risks), analytic.
inline Vector cox_loss_grad(const Vector& risks, const Vector& times,
                            const std::vector<std::uint8_t>& events) {
  const int n = static_cast<int>(risks.size());
  require(times.size() == n && events.size() == static_cast<std::size_t>(n),
          "cox_loss_grad: size mismatch");
  Vector grad = Vector::Zero(n);
  int n_events = 0;
  for (int i = 0; i < n; ++i) {
    if (!events[i]) continue;
    ++n_events;
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (times(j) >= times(i)) m = std::max(m, risks(j));
    }
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      if (times(j) >= times(i)) s += std::exp(risks(j) - m);
    }
    for (int j = 0; j < n; ++j) {
      if (times(j) >= times(i)) grad(j) += std::exp(risks(j) - m) / s;
    }
    grad(i) -= 1.0;
  }
  if (n_events == 0) return Vector::Zero(n);
  return grad / n_events;
}

// Reverse-mode differentiation of one bag's forward pass. risk_grad is
// dLoss/dRisk for this bag; rho is a constant of the iteration.
inline ParamGrads backward(const ForwardTrace& tr, const ModelParams& params,
                           double risk_grad) {
  ParamGrads g = ParamGrads::zero(params);
  const int n = static_cast<int>(tr.z.rows());
  const int k = static_cast<int>(params.tokens.rows());

  // risk = pred_weight . E + pred_bias
  Vector d_embedding = risk_grad * params.pred_weight;
  g.pred_weight = risk_grad * tr.embedding;
  g.pred_bias = risk_grad;

  // E = pooled^T agg_weight + agg_bias, pooled = Q^T Z
  Matrix d_pooled = params.agg_weight * d_embedding.transpose();  // K x d
  g.agg_weight = tr.pooled * d_embedding;
  g.agg_bias = d_embedding.sum();
  Matrix d_mass = tr.z * d_pooled.transpose();  // N x K
  Matrix d_z = tr.plan.mass * d_pooled;         // N x d (aggregation path)

  // Through the solver: Qhat = diag(a_final) M diag(b_S).
  const SolveTrace& st = tr.solve;
  const int sweeps = static_cast<int>(st.a.size());
  Matrix d_qhat = Matrix::Zero(n, k + 1);
  d_qhat.leftCols(k) = d_mass;  // the sink column feeds nothing downstream

  const Vector& b_last = st.b.back();
  Matrix g_masked = d_qhat.cwiseProduct(st.kernel);
  Vector d_a = g_masked * b_last;
  Vector g_b = g_masked.transpose() * st.a_final;
  Matrix d_kernel = d_qhat.cwiseProduct(st.a_final * b_last.transpose());

  // a_final = alpha / (M b_S)
  {
    const Vector v = st.alpha.cwiseQuotient(st.a_final);
    const Vector d_v =
        -(st.a_final.cwiseQuotient(v)).cwiseProduct(d_a);
    g_b += st.kernel.transpose() * d_v;
    d_kernel += d_v * b_last.transpose();
  }

  // Unrolled sweeps, newest first.
  const Vector inv_f = st.exponent.cwiseInverse();
  for (int s = sweeps - 1; s >= 0; --s) {
    const Vector& a_s = st.a[s];
    const Vector& b_s = st.b[s + 1];
    const Vector& b_prev = st.b[s];
    // b_s = (beta / u)^f with u = M^T a_s
    Vector u(k + 1);
    for (int j = 0; j <= k; ++j) {
      u(j) = st.beta(j) * std::pow(b_s(j), -inv_f(j));
    }
    const Vector d_u =
        -(st.exponent.cwiseProduct(b_s).cwiseQuotient(u)).cwiseProduct(g_b);
    Vector d_a_s = st.kernel * d_u;
    d_kernel += a_s * d_u.transpose();
    // a_s = alpha / v with v = M b_prev
    const Vector v = st.alpha.cwiseQuotient(a_s);
    const Vector d_v = -(a_s.cwiseQuotient(v)).cwiseProduct(d_a_s);
    g_b = st.kernel.transpose() * d_v;
    d_kernel += d_v * b_prev.transpose();
  }
  // b_0 is constant; g_b is dropped here.

  // M = exp(-C_hat / eps); the virtual column of C_hat is constant zero.
  const Matrix d_cost_hat =
      -(d_kernel.cwiseProduct(st.kernel)) / st.epsilon;
  const Matrix d_cost = d_cost_hat.leftCols(k);

  // C_ij = || zh_i - sh_j ||
  Matrix d_zh = Matrix::Zero(n, tr.z.cols());
  Matrix d_sh = Matrix::Zero(k, tr.z.cols());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) {
      const double c = tr.cost(i, j);
      if (c < 1e-12) continue;  // kink at coincident points; subgradient 0
      const double w = d_cost(i, j) / c;
      const auto diff = (tr.z_hat.row(i) - tr.s_hat.row(j)).eval();
      d_zh.row(i) += w * diff;
      d_sh.row(j) -= w * diff;
    }
  }

  // zh = z / |z| (zero rows stay zero and receive no gradient)
  for (int i = 0; i < n; ++i) {
    const double r = tr.z_norms(i);
    if (r <= 0.0) continue;
    const double dot = tr.z_hat.row(i).dot(d_zh.row(i));
    d_z.row(i) += (d_zh.row(i) - dot * tr.z_hat.row(i)) / r;
  }
  for (int j = 0; j < k; ++j) {
    const double r = tr.s_norms(j);
    if (r <= 0.0) continue;
    const double dot = tr.s_hat.row(j).dot(d_sh.row(j));
    g.tokens.row(j) += (d_sh.row(j) - dot * tr.s_hat.row(j)) / r;
  }

  // Z = F W + 1 b^T
  g.proj_weight = tr.features.transpose() * d_z;
  g.proj_bias = d_z.colwise().sum();

  if (!g.all_finite()) {
    throw SolverError(SolverError::Kind::Diverged,
                      "non-finite gradient entries (bag " + tr.bag_id + ")");
  }
  return g;
}

// Attention = Q |W_agg^T|, one nonnegative score per instance.
inline Vector attention_scores(const TransportPlan& plan,
                               const ModelParams& params) {
  require(plan.mass.cols() == params.agg_weight.size(),
          "attention_scores: token count mismatch");
  return plan.mass * params.agg_weight.cwiseAbs();
}

}  // namespace otmil
