#pragma once

#include <deque>

#include "tas/dataset.hpp"
#include "tas/policy.hpp"

namespace tas {

// Baseline execution strategies. Every runner yields an Episode with
// per-step instrumentation: the origin timestep of the chunk the executed
// action came from, and the row within that chunk.

struct ExecutorSpec {
  enum class Kind { OpenLoop, ClosedLoop, Ema, Delayed };
  Kind kind = Kind::ClosedLoop;
  int h = 8;       // OpenLoop: actions executed per query, 1 <= h <= l
  double m = 0.1;  // Ema: exponential weight, > 0
  int d = 0;       // Delayed: execute a_{t-d}^{d}, 0 <= d <= l-1

  std::string label() const {
    switch (kind) {
      case Kind::OpenLoop: return "open_loop(h=" + std::to_string(h) + ")";
      case Kind::ClosedLoop: return "closed_loop";
      case Kind::Ema: return "ema(m=" + std::to_string(m) + ")";
      default: return "delayed(d=" + std::to_string(d) + ")";
    }
  }
};

namespace detail {

// CVAE prior draws are a pure function of (episode seed, query timestep).
inline Vec predict_at(const ChunkPolicy& policy, const std::vector<Vec>& history, int t,
                      uint64_t episode_seed) {
  const Vec ctx = stack_context(history, t, policy.cfg.context_length);
  if (policy.cfg.kind == PolicyKind::Cvae) {
    Rng latent(derive_seed(episode_seed, "policy.latent", static_cast<uint64_t>(t)));
    return policy.predict_chunk(ctx, nullptr, &latent);
  }
  return policy.predict_chunk(ctx);
}

inline Vec chunk_row(const Vec& chunk_flat, int row, int act_dim) {
  return Vec(chunk_flat.begin() + static_cast<size_t>(row) * act_dim,
             chunk_flat.begin() + static_cast<size_t>(row + 1) * act_dim);
}

}  // namespace detail

inline Episode run_executor(const ChunkPolicy& policy, Env& env, const ExecutorSpec& spec,
                            uint64_t seed) {
  const int l = policy.cfg.chunk_length;
  const int ad = policy.act_dim;
  switch (spec.kind) {
    case ExecutorSpec::Kind::OpenLoop:
      require(spec.h >= 1 && spec.h <= l, "open loop: h must be in [1, l]");
      break;
    case ExecutorSpec::Kind::Ema:
      require(spec.m > 0.0, "ema: m must be > 0");
      break;
    case ExecutorSpec::Kind::Delayed:
      require(spec.d >= 0 && spec.d <= l - 1, "delayed: d must be in [0, l-1]");
      break;
    default:
      break;
  }

  Episode ep;
  ep.seed = seed;
  ep.env_name = env.name();

  std::vector<Vec> history;
  history.push_back(env.reset(seed));

  // chunks from the last l queries, newest first: cached[i] was predicted at t-i
  std::deque<Vec> cached;
  Vec open_loop_chunk;
  int open_loop_origin = 0;

  int t = 0;
  while (!env.done()) {
    Vec action;
    int origin = t, row = 0;
    switch (spec.kind) {
      case ExecutorSpec::Kind::OpenLoop: {
        if (t % spec.h == 0) {
          open_loop_chunk = detail::predict_at(policy, history, t, seed);
          open_loop_origin = t;
        }
        row = t - open_loop_origin;
        origin = open_loop_origin;
        action = detail::chunk_row(open_loop_chunk, row, ad);
        break;
      }
      case ExecutorSpec::Kind::ClosedLoop: {
        const Vec chunk = detail::predict_at(policy, history, t, seed);
        action = detail::chunk_row(chunk, 0, ad);
        break;
      }
      case ExecutorSpec::Kind::Ema: {
        cached.push_front(detail::predict_at(policy, history, t, seed));
        if (static_cast<int>(cached.size()) > l) cached.pop_back();
        // weighted blend of every cached prediction for timestep t
        action.assign(ad, 0.0);
        double wsum = 0.0;
        for (int i = 0; i < static_cast<int>(cached.size()); ++i) {
          const double w = std::exp(-spec.m * i);
          wsum += w;
          for (int dim = 0; dim < ad; ++dim) action[dim] += w * cached[i][static_cast<size_t>(i) * ad + dim];
        }
        for (double& x : action) x /= wsum;
        break;
      }
      case ExecutorSpec::Kind::Delayed: {
        cached.push_front(detail::predict_at(policy, history, t, seed));
        if (static_cast<int>(cached.size()) > l) cached.pop_back();
        if (t >= spec.d) {
          row = spec.d;
          origin = t - spec.d;
          action = detail::chunk_row(cached[spec.d], spec.d, ad);
        } else {
          // warm-up: freshest prediction
          action = detail::chunk_row(cached[0], 0, ad);
        }
        break;
      }
    }

    ep.observations.push_back(history.back());
    ep.actions.push_back(action);
    ep.source_origin.push_back(origin);
    ep.source_row.push_back(row);

    StepResult res = env.step(action);
    ep.episode_return += res.reward;
    ep.max_coverage = std::max(ep.max_coverage, res.coverage);
    ep.success = res.success;
    history.push_back(res.observation);
    ++t;
  }
  return ep;
}

inline Episode run_open_loop(const ChunkPolicy& p, Env& env, int h, uint64_t seed) {
  return run_executor(p, env, {ExecutorSpec::Kind::OpenLoop, h, 0.1, 0}, seed);
}
inline Episode run_closed_loop(const ChunkPolicy& p, Env& env, uint64_t seed) {
  return run_executor(p, env, {ExecutorSpec::Kind::ClosedLoop, 8, 0.1, 0}, seed);
}
inline Episode run_ema(const ChunkPolicy& p, Env& env, double m, uint64_t seed) {
  return run_executor(p, env, {ExecutorSpec::Kind::Ema, 8, m, 0}, seed);
}
inline Episode run_delayed(const ChunkPolicy& p, Env& env, int d, uint64_t seed) {
  return run_executor(p, env, {ExecutorSpec::Kind::Delayed, 8, 0.1, d}, seed);
}

}  // namespace tas
