#pragma once

// Dataset generation, Adam, the penalty-loss training loop and evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pisac/autodiff.hpp"
#include "pisac/config.hpp"
#include "pisac/errors.hpp"
#include "pisac/loss_graph.hpp"
#include "pisac/metrics.hpp"
#include "pisac/network.hpp"
#include "pisac/rng.hpp"
#include "pisac/scenario.hpp"

namespace pisac {

/// n scenarios, element i drawn with seed derive_seed(seed, tag, i).
inline std::vector<Scenario> make_dataset(const SystemConfig& cfg, std::uint64_t seed, std::uint64_t tag,
                                          std::size_t n) {
  std::vector<Scenario> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_scenario(cfg, derive_seed(seed, tag, i)));
  return out;
}

inline std::vector<Scenario> make_train_set(const SystemConfig& cfg, const TrainConfig& tc) {
  return make_dataset(cfg, tc.seed, stream::kTrain, static_cast<std::size_t>(tc.train_size));
}

inline std::vector<Scenario> make_test_set(const SystemConfig& cfg, const TrainConfig& tc) {
  return make_dataset(cfg, tc.seed, stream::kTest, static_cast<std::size_t>(tc.test_size));
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::uint64_t step = 0;
  std::vector<ad::Tensor> m;
  std::vector<ad::Tensor> v;

  bool operator==(const AdamState& o) const {
    auto same = [](const std::vector<ad::Tensor>& a, const std::vector<ad::Tensor>& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].shape != b[i].shape || a[i].values != b[i].values) return false;
      }
      return true;
    };
    return step == o.step && same(m, o.m) && same(v, o.v);
  }
};

inline AdamState adam_init(const NetworkParams& p) {
  AdamState s;
  for (const auto& t : p.tensors) {
    s.m.emplace_back(t.shape, 0.0);
    s.v.emplace_back(t.shape, 0.0);
  }
  return s;
}

/// One bias-corrected Adam update.
inline void adam_step(NetworkParams& params, const std::vector<ad::Tensor>& grads, AdamState& st,
                      const TrainConfig& hyper) {
  if (grads.size() != params.tensors.size() || st.m.size() != params.tensors.size()) {
    throw DimensionError("adam_step: parameter, gradient and state counts differ");
  }
  ++st.step;
  const double b1 = hyper.adam_beta1, b2 = hyper.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& p = params.tensors[i];
    const auto& g = grads[i];
    if (g.shape != p.shape) throw DimensionError("adam_step: gradient " + std::to_string(i) + " has the wrong shape");
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      p[j] -= hyper.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + hyper.adam_eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training

/// Per-epoch means over all training samples seen in the epoch.
struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_sum_rate = 0.0;
  double spacing_penalty = 0.0;
  double sinr_penalty = 0.0;
  std::vector<double> mean_pa_y;  // mean PA offsets (m)
};

struct TrainResult {
  NetworkParams params;
  AdamState adam;
  int epochs_done = 0;
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

namespace detail {

inline std::vector<const Scenario*> gather(const std::vector<Scenario>& data, const std::vector<std::size_t>& order,
                                           std::size_t begin, std::size_t end) {
  std::vector<const Scenario*> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(&data[order[i]]);
  return out;
}

}  // namespace detail

/// Continues training from `start` (parameters, Adam state, epochs done) for the
/// remaining epochs of `tc`.
inline TrainResult train_from(TrainResult start, const SystemConfig& cfg, const TrainConfig& tc, Variant variant,
                              const std::vector<Scenario>& data, const EpochCallback& on_epoch = {}) {
  const NetworkConfig nc = NetworkConfig::from(cfg);
  check_params(start.params, nc);
  if (data.empty()) throw ConfigError("train: empty training set");
  const std::size_t n = data.size();
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(tc.batch_size), n);
  TrainResult res = std::move(start);

  for (int epoch = res.epochs_done; epoch < tc.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle(derive_seed(tc.seed, stream::kShuffle, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    EpochStats st;
    st.epoch = epoch + 1;
    st.mean_pa_y.assign(static_cast<std::size_t>(cfg.n_t), 0.0);
    double rate_acc = 0.0, sp_acc = 0.0, sn_acc = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += bs) {
      const std::size_t b1 = std::min(n, b0 + bs);
      const auto batch = detail::gather(data, order, b0, b1);
      ad::Tape tape;
      const auto leaves = param_leaves(tape, res.params);
      LossGraph lg;
      NetworkOutput out;
      try {
        out = forward(tape.constant(batch_inputs(batch, cfg)), leaves, cfg, variant);
        lg = build_loss(out, batch, cfg);
      } catch (const NotPositiveDefiniteError& e) {
        throw NumericalAbort("epoch " + std::to_string(epoch + 1) + ": " + e.what());
      } catch (const SingularMatrixError& e) {
        throw NumericalAbort("epoch " + std::to_string(epoch + 1) + ": " + e.what());
      }
      const double loss = lg.loss.item();
      if (!std::isfinite(loss)) {
        throw NumericalAbort("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch starting at " +
                             std::to_string(b0));
      }
      tape.backward(lg.loss);
      std::vector<ad::Tensor> grads;
      grads.reserve(leaves.size());
      for (const auto& v : leaves) {
        grads.push_back(v.grad());
        if (!grads.back().all_finite()) {
          throw NumericalAbort("non-finite gradient at epoch " + std::to_string(epoch + 1));
        }
      }
      for (std::size_t i = 0; i < batch.size(); ++i) {
        rate_acc += lg.sum_rate.value()[i];
        sp_acc += lg.spacing_penalty.value()[i];
        sn_acc += lg.sinr_penalty.value()[i];
        for (std::size_t t = 0; t < st.mean_pa_y.size(); ++t) st.mean_pa_y[t] += out.pa_y.value()[i * st.mean_pa_y.size() + t];
      }
      adam_step(res.params, grads, res.adam, tc);
    }
    const double inv = 1.0 / static_cast<double>(n);
    st.mean_sum_rate = rate_acc * inv;
    st.spacing_penalty = sp_acc * inv;
    st.sinr_penalty = sn_acc * inv;
    st.mean_loss = -st.mean_sum_rate + st.spacing_penalty + st.sinr_penalty;
    for (auto& y : st.mean_pa_y) y *= inv;
    res.epochs_done = epoch + 1;
    res.history.push_back(st);
    if (on_epoch) on_epoch(res.history.back());
  }
  return res;
}

/// Trains from a fresh initialization drawn from the master seed's init stream.
inline TrainResult train(const SystemConfig& cfg, const TrainConfig& tc, Variant variant,
                         const std::vector<Scenario>& data, const EpochCallback& on_epoch = {}) {
  TrainResult start;
  start.params = init_params(NetworkConfig::from(cfg), derive_seed(tc.seed, stream::kInit));
  start.adam = adam_init(start.params);
  return train_from(std::move(start), cfg, tc, variant, data, on_epoch);
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalSummary {
  std::size_t count = 0;
  double mean_sum_rate = 0.0;
  double mean_ps = 0.0;
  double mean_gamma = 0.0;
  double sinr_satisfaction = 0.0;     // fraction with gamma_s >= gamma0
  double spacing_satisfaction = 0.0;  // fraction with d_k >= d_min for all users
  double max_gamma_rel_gap = 0.0;     // evaluated gamma_s vs training-graph gamma*
  std::vector<MetricsRecord> records;
};

/// Inference on `test`, then per-scenario metrics with the closed-form combiner
/// and the complex-reference rate path.
inline EvalSummary evaluate(const NetworkParams& params, const SystemConfig& cfg, Variant variant,
                            const std::vector<Scenario>& test, std::size_t chunk = 100) {
  check_params(params, NetworkConfig::from(cfg));
  EvalSummary s;
  for (std::size_t b0 = 0; b0 < test.size(); b0 += chunk) {
    const std::size_t b1 = std::min(test.size(), b0 + chunk);
    std::vector<const Scenario*> batch;
    for (std::size_t i = b0; i < b1; ++i) batch.push_back(&test[i]);
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const auto& t : params.tensors) leaves.push_back(tape.constant(t));
    const NetworkOutput out = forward(tape.constant(batch_inputs(batch, cfg)), leaves, cfg, variant);
    const LossGraph lg = build_loss(out, batch, cfg);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Decision d = extract(out, i, cfg);
      MetricsRecord r = evaluate_metrics(d.pa, d.ma, *batch[i], d.beams, cfg);
      const double g = lg.gamma.value()[i];
      const double gap = std::abs(r.gamma_s - g) / std::max({std::abs(r.gamma_s), std::abs(g), 1e-300});
      s.max_gamma_rel_gap = std::max(s.max_gamma_rel_gap, gap);
      s.records.push_back(std::move(r));
    }
  }
  s.count = s.records.size();
  for (const auto& r : s.records) {
    s.mean_sum_rate += r.sum_rate;
    s.mean_ps += r.p_s;
    s.mean_gamma += r.gamma_s;
    s.sinr_satisfaction += r.sinr_ok ? 1.0 : 0.0;
    s.spacing_satisfaction += r.spacing_ok ? 1.0 : 0.0;
  }
  if (s.count > 0) {
    const double inv = 1.0 / static_cast<double>(s.count);
    s.mean_sum_rate *= inv;
    s.mean_ps *= inv;
    s.mean_gamma *= inv;
    s.sinr_satisfaction *= inv;
    s.spacing_satisfaction *= inv;
  }
  return s;
}

}  // namespace pisac
