#pragma once
// Training loop: AdamW with cosine learning-rate decay over epochs, the rho
// curriculum advanced per iteration, per-bag work optionally threaded with a
// fixed reduction order so results are identical for any worker count.

#include <otmil/common.hpp>
#include <otmil/csv.hpp>
#include <otmil/model.hpp>
#include <otmil/rng.hpp>
#include <otmil/survival.hpp>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace otmil {

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  double rho = 1.0;
  double val_cindex = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  ModelParams params;
  std::vector<HistoryRow> history;
};

inline int worker_count() {
  const char* env = std::getenv("OTMIL_THREADS");
  if (env == nullptr) return 1;
  const long v = std::strtol(env, nullptr, 10);
  if (v <= 1) return 1;
  return static_cast<int>(v);
}

namespace detail {

// Each index is processed exactly once into its own slot; execution order
// does not affect results.
template <typename F>
inline void parallel_for(int n, int threads, F&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  pool.reserve(threads);
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n || failed.load()) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!failed.exchange(true)) error = std::current_exception();
          break;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failed.load()) std::rethrow_exception(error);
}

struct AdamWState {
  ParamGrads m;
  ParamGrads v;
  long step = 0;

  static AdamWState init(const ModelParams& p) {
    AdamWState s;
    s.m = ParamGrads::zero(p);
    s.v = ParamGrads::zero(p);
    return s;
  }
};

template <typename T>
inline void adamw_tensor(T& param, T& m, T& v, const T& grad, double lr,
                         double weight_decay, double bc1, double bc2) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  m = kBeta1 * m + (1.0 - kBeta1) * grad;
  v = kBeta2 * v + (1.0 - kBeta2) * grad.cwiseProduct(grad);
  const T m_hat = m / bc1;
  const T v_hat = v / bc2;
  param -= (lr * (m_hat.array() / (v_hat.array().sqrt() + kEps)) +
            lr * weight_decay * param.array())
               .matrix();
}

inline void adamw_scalar(double& param, double& m, double& v, double grad,
                         double lr, double weight_decay, double bc1,
                         double bc2) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  m = kBeta1 * m + (1.0 - kBeta1) * grad;
  v = kBeta2 * v + (1.0 - kBeta2) * grad * grad;
  param -= lr * (m / bc1) / (std::sqrt(v / bc2) + kEps) +
           lr * weight_decay * param;
}

inline void adamw_step(ModelParams& p, AdamWState& st, const ParamGrads& g,
                       double lr, double weight_decay) {
  ++st.step;
  const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(st.step));
  adamw_tensor(p.proj_weight, st.m.proj_weight, st.v.proj_weight,
               g.proj_weight, lr, weight_decay, bc1, bc2);
  adamw_tensor(p.proj_bias, st.m.proj_bias, st.v.proj_bias, g.proj_bias, lr,
               weight_decay, bc1, bc2);
  adamw_tensor(p.tokens, st.m.tokens, st.v.tokens, g.tokens, lr, weight_decay,
               bc1, bc2);
  adamw_tensor(p.agg_weight, st.m.agg_weight, st.v.agg_weight, g.agg_weight,
               lr, weight_decay, bc1, bc2);
  adamw_scalar(p.agg_bias, st.m.agg_bias, st.v.agg_bias, g.agg_bias, lr,
               weight_decay, bc1, bc2);
  adamw_tensor(p.pred_weight, st.m.pred_weight, st.v.pred_weight,
               g.pred_weight, lr, weight_decay, bc1, bc2);
  adamw_scalar(p.pred_bias, st.m.pred_bias, st.v.pred_bias, g.pred_bias, lr,
               weight_decay, bc1, bc2);
}

}  // namespace detail

// Evaluation-time risks use the full mass (rho = 1).
inline Vector predict_risks(const std::vector<Bag>& bags,
                            const ModelParams& params, const TrainConfig& cfg) {
  Vector risks(bags.size());
  const int threads = worker_count();
  detail::parallel_for(static_cast<int>(bags.size()), threads, [&](int i) {
    risks(i) = forward(bags[i], params, 1.0, cfg).risk;
  });
  return risks;
}

inline TrainResult train(const std::vector<Bag>& train_bags,
                         const std::vector<Bag>& val_bags,
                         const TrainConfig& cfg) {
  cfg.validate();
  require(!train_bags.empty(), "train: empty dataset");
  const int input_dim = train_bags.front().feature_dim();
  for (const auto& bag : train_bags) {
    require(bag.feature_dim() == input_dim, "train: inconsistent feature dims");
  }

  Rng rng(cfg.seed);
  TrainResult result;
  result.params =
      ModelParams::init(input_dim, cfg.latent_dim, cfg.n_tokens, rng);
  if (cfg.epochs == 0) return result;

  const int n = static_cast<int>(train_bags.size());
  const long iters_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int threads = worker_count();

  detail::AdamWState opt = detail::AdamWState::init(result.params);
  long t_global = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        cfg.lr * 0.5 *
        (1.0 + std::cos(M_PI * static_cast<double>(epoch) / cfg.epochs));
    const std::vector<int> order = rng.permutation(n);

    double loss_sum = 0.0;
    int loss_batches = 0;
    int event_batches = 0;
    double rho = 1.0;
    for (long start = 0; start < n; start += cfg.batch_size) {
      const int bsz = static_cast<int>(
          std::min<long>(cfg.batch_size, n - start));
      rho = rho_for_iteration(cfg, t_global, iters_per_epoch);

      std::vector<ForwardTrace> traces(bsz);
      detail::parallel_for(bsz, threads, [&](int i) {
        traces[i] =
            forward(train_bags[order[start + i]], result.params, rho, cfg);
      });

      Vector risks(bsz), times(bsz);
      std::vector<std::uint8_t> events(bsz);
      int batch_events = 0;
      for (int i = 0; i < bsz; ++i) {
        const Bag& bag = train_bags[order[start + i]];
        risks(i) = traces[i].risk;
        times(i) = bag.time;
        events[i] = bag.event ? 1 : 0;
        batch_events += events[i];
      }
      ++t_global;
      if (batch_events == 0) continue;  // no risk sets to learn from
      ++event_batches;

      const double loss = cox_loss(risks, times, events);
      if (!std::isfinite(loss)) {
        throw SolverError(SolverError::Kind::Diverged,
                          "non-finite training loss at epoch " +
                              std::to_string(epoch));
      }
      loss_sum += loss;
      ++loss_batches;

      const Vector risk_grads = cox_loss_grad(risks, times, events);
      std::vector<ParamGrads> grads(bsz);
      detail::parallel_for(bsz, threads, [&](int i) {
        grads[i] = backward(traces[i], result.params, risk_grads(i));
      });
      ParamGrads total = ParamGrads::zero(result.params);
      for (int i = 0; i < bsz; ++i) total.add(grads[i]);  // fixed order
      detail::adamw_step(result.params, opt, total, lr, cfg.weight_decay);
    }
    if (event_batches == 0) {
      throw std::runtime_error("train: every batch in epoch " +
                               std::to_string(epoch) + " had zero events");
    }

    HistoryRow row;
    row.epoch = epoch;
    row.train_loss = loss_batches > 0 ? loss_sum / loss_batches : 0.0;
    row.rho = rho;
    if (!val_bags.empty()) {
      Cohort cohort;
      cohort.risks = predict_risks(val_bags, result.params, cfg);
      cohort.times.resize(val_bags.size());
      cohort.events.resize(val_bags.size());
      for (std::size_t i = 0; i < val_bags.size(); ++i) {
        cohort.times(static_cast<int>(i)) = val_bags[i].time;
        cohort.events[i] = val_bags[i].event ? 1 : 0;
      }
      try {
        row.val_cindex = c_index(cohort);
      } catch (const std::invalid_argument&) {
        // no comparable pairs; leave NaN
      }
    }
    result.history.push_back(row);
  }
  return result;
}

inline std::string history_csv(const std::vector<HistoryRow>& history) {
  std::string out = "epoch,train_loss,rho,val_cindex\n";
  for (const auto& row : history) {
    out += std::to_string(row.epoch) + "," + format_g17(row.train_loss) + "," +
           format_g17(row.rho) + "," +
           (std::isnan(row.val_cindex) ? std::string("nan")
                                       : format_g17(row.val_cindex)) +
           "\n";
  }
  return out;
}

}  // namespace otmil
