#pragma once

#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "tas/ppo.hpp"

namespace tas {

struct CurveRow {
  long env_steps = 0;
  long episodes = 0;
  double eval_sr = 0.0;
  double eval_ms = 0.0;
  double mean_return = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double kl = 0.0;
};

inline std::string curve_csv(const std::vector<CurveRow>& rows) {
  std::ostringstream out;
  out << "env_steps,episodes,eval_sr,eval_ms,mean_return,entropy,clip_frac,kl\n";
  out << std::setprecision(17);
  for (const auto& r : rows)
    out << r.env_steps << "," << r.episodes << "," << r.eval_sr << "," << r.eval_ms << ","
        << r.mean_return << "," << r.entropy << "," << r.clip_frac << "," << r.kl << "\n";
  return out.str();
}

inline void write_curve_csv(const std::string& path, const std::vector<CurveRow>& rows) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write curve: " + path);
  out << curve_csv(rows);
}

struct TrainResult {
  std::vector<CurveRow> curve;
  double final_eval_sr = 0.0;
  double final_eval_ms = 0.0;
  long env_steps = 0;
  long episodes = 0;
};

namespace detail {

struct EvalOutcome {
  double sr = 0.0;
  double ms = 0.0;
};

// shared PPO driver: collect whole episodes until steps_per_update, update,
// eval on a fixed cadence
template <typename CollectEpisode, typename Evaluate>
TrainResult ppo_driver(const Env& proto, PpoActor& actor, MlpParams& value_net,
                       const PpoConfig& cfg, uint64_t seed, CollectEpisode&& collect_episode,
                       Evaluate&& evaluate, const std::function<void(long)>& checkpoint_cb) {
  cfg.validate();
  TrainResult result;
  Adam opt({cfg.lr, 0.9, 0.999, 1e-8});
  Rng order_rng(derive_seed(seed, "ppo.order"));
  auto env = proto.fresh();

  RolloutBuffer buffer;
  PpoStats stats;
  {
    const EvalOutcome ev = evaluate(*env);
    CurveRow row;
    row.eval_sr = ev.sr;
    row.eval_ms = ev.ms;
    result.curve.push_back(row);
    result.final_eval_sr = ev.sr;
    result.final_eval_ms = ev.ms;
  }
  long next_eval = cfg.eval_every;
  while (result.env_steps < cfg.total_env_steps) {
    buffer.clear();
    double phase_return = 0.0;
    long phase_episodes = 0;
    while (buffer.size() < cfg.steps_per_update) {
      const uint64_t ep_seed = derive_seed(seed, "rollout", result.episodes);
      phase_return += collect_episode(*env, ep_seed, buffer);
      result.episodes += 1;
      phase_episodes += 1;
    }
    result.env_steps += buffer.size();
    stats = ppo_update(buffer, actor, value_net, opt, cfg, order_rng);

    if (result.env_steps >= next_eval || result.env_steps >= cfg.total_env_steps) {
      const EvalOutcome ev = evaluate(*env);
      CurveRow row;
      row.env_steps = result.env_steps;
      row.episodes = result.episodes;
      row.eval_sr = ev.sr;
      row.eval_ms = ev.ms;
      row.mean_return = phase_episodes > 0 ? phase_return / phase_episodes : 0.0;
      row.entropy = stats.entropy;
      row.clip_frac = stats.clip_frac;
      row.kl = stats.approx_kl;
      result.curve.push_back(row);
      result.final_eval_sr = ev.sr;
      result.final_eval_ms = ev.ms;
      if (checkpoint_cb) checkpoint_cb(result.env_steps);
      next_eval += cfg.eval_every;
    }
  }
  return result;
}

template <typename RunEpisode>
EvalOutcome deterministic_eval(Env& env, int episodes, uint64_t seed, RunEpisode&& run) {
  EvalOutcome out;
  for (int i = 0; i < episodes; ++i) {
    const Episode ep = run(env, derive_seed(seed, "train.eval", i));
    out.sr += ep.success ? 1.0 : 0.0;
    out.ms += ep.max_coverage;
  }
  out.sr /= std::max(1, episodes);
  out.ms /= std::max(1, episodes);
  return out;
}

inline Vec critic_view(const NormStats& stats, const Vec& obs, const CandidateSet& cands) {
  Vec v = stats.normalize_obs_frame(obs);
  for (const auto& c : cands.candidates) {
    const Vec cn = stats.normalize_action(c);
    v.insert(v.end(), cn.begin(), cn.end());
  }
  return v;
}

}  // namespace detail

struct TasTrainOptions {
  bool force_zero_task_reward = false;  // debugging aid: removes the learning signal
};

// Online PPO over the selector's categorical choices; the base policy stays
// frozen throughout.
inline TrainResult train_tas(const Env& proto, const ChunkPolicy& policy, SelectorParams& selector,
                             const PpoConfig& cfg, uint64_t seed,
                             const std::function<void(long)>& checkpoint_cb = nullptr,
                             TasTrainOptions options = TasTrainOptions()) {
  require(selector.k <= policy.cfg.chunk_length, "train_tas: k must be <= chunk_length");
  Rng vinit(derive_seed(seed, "value.init"));
  MlpParams value_net =
      make_mlp(selector.input_dim(), {128, 64}, 1, Activation::ReLU, vinit);
  SelectorActor actor(selector);

  auto collect = [&](Env& env, uint64_t ep_seed, RolloutBuffer& buffer) -> double {
    std::vector<Vec> history;
    history.push_back(env.reset(ep_seed));
    ActionCache cache(selector.k);
    Rng sample_rng(derive_seed(ep_seed, "tas.sample"));
    std::optional<Vec> successor;
    double ep_return = 0.0;
    int t = 0;
    while (!env.done()) {
      const TasStep step =
          tas_step(policy, selector, cache, history, t, false, ep_seed, &sample_rng);
      RolloutStep rs;
      rs.obs = history[t];
      rs.cand_flat = step.cands.flattened();
      rs.mask = step.cands.valid;
      rs.chosen = step.selected;
      rs.log_prob = step.log_prob;
      rs.critic_input = detail::critic_view(selector.stats, history[t], step.cands);
      rs.value = mlp_forward(value_net, rs.critic_input)[0];
      rs.r_coh = coherence_penalty(step.executed, successor, cfg.lambda_coh);

      // successor of the chosen action within its chunk, for the next step
      const ActionChunk& src = cache.aged(step.selected);
      successor = (step.selected + 1 < static_cast<int>(src.actions.size()))
                      ? std::optional<Vec>(src.actions[step.selected + 1])
                      : std::nullopt;

      StepResult res = env.step(step.executed);
      rs.r_task = options.force_zero_task_reward ? 0.0 : res.reward;
      rs.r_total = rs.r_task + rs.r_coh;
      rs.done = res.done;
      ep_return += res.reward;
      buffer.steps.push_back(std::move(rs));
      history.push_back(res.observation);
      ++t;
    }
    return ep_return;
  };

  auto evaluate = [&](Env& env) {
    return detail::deterministic_eval(env, cfg.eval_episodes, seed, [&](Env& e, uint64_t s) {
      return run_tas_episode(policy, selector, e, s, true);
    });
  };

  return detail::ppo_driver(proto, actor, value_net, cfg, seed, collect, evaluate, checkpoint_cb);
}

// ---------------------------------------------------------------------------
// RL FineTune baseline: PPO directly on the (deterministic MLP) base policy,
// one gaussian chunk decision per l steps, executed open-loop. The base
// parameters DO change here.
// ---------------------------------------------------------------------------

struct FineTuneOptions {
  double init_log_std = std::log(0.05);
  bool shaped_coverage_reward = false;  // PushT2D: reward = per-step coverage gain
};

inline TrainResult finetune_base(const Env& proto, ChunkPolicy& policy, const PpoConfig& cfg,
                                 uint64_t seed,
                                 const std::function<void(long)>& checkpoint_cb = nullptr,
                                 FineTuneOptions options = FineTuneOptions()) {
  require(policy.cfg.kind == PolicyKind::Mlp, "finetune_base: MLP base policy required");
  const int l = policy.cfg.chunk_length;
  const int ad = policy.act_dim;
  Vec log_std(static_cast<size_t>(l) * ad, options.init_log_std);
  GaussianActor actor(policy.net, log_std, 0.0);
  Rng vinit(derive_seed(seed, "value.init"));
  MlpParams value_net = make_mlp(policy.context_dim(), {128, 64}, 1, Activation::ReLU, vinit);

  // one macro decision per chunk: discount within the chunk, gamma^l across
  PpoConfig macro_cfg = cfg;
  macro_cfg.gamma = std::pow(cfg.gamma, l);
  macro_cfg.steps_per_update = std::max(1, cfg.steps_per_update / l);

  long raw_env_steps = 0;

  auto collect = [&](Env& env, uint64_t ep_seed, RolloutBuffer& buffer) -> double {
    std::vector<Vec> history;
    history.push_back(env.reset(ep_seed));
    Rng noise_rng(derive_seed(ep_seed, "finetune.sample"));
    double ep_return = 0.0;
    double prev_cov = 0.0;
    if (auto* pt = dynamic_cast<PushT2D*>(&env)) prev_cov = pt->current_coverage();
    int t = 0;
    while (!env.done()) {
      const Vec ctx = stack_context(history, t, policy.cfg.context_length);
      const Vec ctx_n = policy.stats.normalize_context(ctx);
      const Vec mean = mlp_forward(policy.net, ctx_n);
      Vec sample(mean.size());
      double logp = 0.0;
      for (size_t i = 0; i < mean.size(); ++i) {
        const double sig = std::exp(log_std[i]);
        sample[i] = mean[i] + sig * noise_rng.gaussian();
        const double z = (sample[i] - mean[i]) / sig;
        logp += -0.5 * z * z - log_std[i] - 0.5 * std::log(2.0 * M_PI);
      }
      const Vec chunk_raw = policy.stats.denormalize_chunk(sample);

      RolloutStep rs;
      rs.obs = ctx;
      rs.actor_input = ctx_n;
      rs.critic_input = ctx_n;
      rs.gauss = sample;
      rs.log_prob = logp;
      rs.value = mlp_forward(value_net, ctx_n)[0];

      double macro_reward = 0.0;
      double discount = 1.0;
      for (int j = 0; j < l && !env.done(); ++j) {
        const Vec a(chunk_raw.begin() + static_cast<size_t>(j) * ad,
                    chunk_raw.begin() + static_cast<size_t>(j + 1) * ad);
        StepResult res = env.step(a);
        ++raw_env_steps;
        ep_return += res.reward;
        double r = res.reward;
        if (options.shaped_coverage_reward) {
          r = res.coverage - prev_cov;
          prev_cov = res.coverage;
        }
        macro_reward += discount * r;
        discount *= cfg.gamma;
        history.push_back(res.observation);
        ++t;
      }
      rs.r_task = macro_reward;
      rs.r_coh = 0.0;
      rs.r_total = macro_reward;
      rs.done = env.done();
      buffer.steps.push_back(std::move(rs));
    }
    return ep_return;
  };

  auto evaluate = [&](Env& env) {
    return detail::deterministic_eval(env, cfg.eval_episodes, seed, [&](Env& e, uint64_t s) {
      return run_open_loop(policy, e, l, s);
    });
  };

  TrainResult res = detail::ppo_driver(proto, actor, value_net, macro_cfg, seed, collect, evaluate,
                                       checkpoint_cb);
  res.env_steps = raw_env_steps;
  return res;
}

// ---------------------------------------------------------------------------
// Residual RL: executed action = base + tanh-bounded residual correction.
// ---------------------------------------------------------------------------

struct ResidualConfig {
  enum class Mode { Frozen, Joint };
  enum class BaseKind { VanillaPolicy, Tas };
  Mode mode = Mode::Frozen;
  BaseKind base = BaseKind::Tas;
  std::vector<int> hidden = {128, 64};
  double rho_scale = 0.25;  // rho_max = rho_scale * env action limit
  double init_std = 0.3;    // gaussian std in rho_max units
};

struct ResidualPolicy {
  MlpParams net;  // [norm obs; norm base action] -> act_dim, tanh-squashed mean
  Vec log_std;    // in rho_max units
  double rho_max = 0.0;
  NormStats stats;
  int obs_dim = 0;
  int act_dim = 0;

  Vec input(const Vec& obs_raw, const Vec& base_raw) const {
    Vec in = stats.normalize_obs_frame(obs_raw);
    const Vec bn = stats.normalize_action(base_raw);
    in.insert(in.end(), bn.begin(), bn.end());
    return in;
  }
  // deterministic correction in raw action units
  Vec mean_residual(const Vec& obs_raw, const Vec& base_raw) const {
    const Vec pre = mlp_forward(net, input(obs_raw, base_raw));
    Vec out(pre.size());
    for (size_t i = 0; i < pre.size(); ++i) out[i] = rho_max * std::tanh(pre[i]);
    return out;
  }
};

inline ResidualPolicy make_residual_policy(const ResidualConfig& cfg, const NormStats& stats,
                                           int obs_dim, int act_dim, double a_max, Rng& rng) {
  ResidualPolicy rp;
  rp.stats = stats;
  rp.obs_dim = obs_dim;
  rp.act_dim = act_dim;
  rp.rho_max = cfg.rho_scale * a_max;
  rp.net = make_mlp(obs_dim + act_dim, cfg.hidden, act_dim, Activation::ReLU, rng);
  // zero output head: step-0 behavior identical to the base policy
  Layer& head = rp.net.layers.back();
  std::fill(head.weight.data.begin(), head.weight.data.end(), 0.0);
  std::fill(head.bias.begin(), head.bias.end(), 0.0);
  rp.log_std.assign(act_dim, std::log(cfg.init_std));
  return rp;
}

inline void save_residual(const std::string& base_path, const ResidualPolicy& rp) {
  auto entries = mlp_checkpoint_entries(rp.net, "res");
  entries.push_back({"log_std", static_cast<int>(rp.log_std.size()), 0, Activation::Identity,
                     nullptr, &rp.log_std});
  nlohmann::json extra = {{"model", "residual"},
                          {"rho_max", rp.rho_max},
                          {"obs_dim", rp.obs_dim},
                          {"act_dim", rp.act_dim},
                          {"obs_mean", rp.stats.obs_mean},
                          {"obs_std", rp.stats.obs_std},
                          {"act_mean", rp.stats.act_mean},
                          {"act_std", rp.stats.act_std}};
  save_checkpoint(base_path, entries, extra);
}

inline ResidualPolicy load_residual(const std::string& base_path) {
  const LoadedCheckpoint ck = load_checkpoint(base_path);
  ResidualPolicy rp;
  try {
    const auto& m = ck.manifest;
    rp.rho_max = m.at("rho_max").get<double>();
    rp.obs_dim = m.at("obs_dim").get<int>();
    rp.act_dim = m.at("act_dim").get<int>();
    rp.stats.obs_mean = m.at("obs_mean").get<Vec>();
    rp.stats.obs_std = m.at("obs_std").get<Vec>();
    rp.stats.act_mean = m.at("act_mean").get<Vec>();
    rp.stats.act_std = m.at("act_std").get<Vec>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("residual manifest: ") + e.what());
  }
  rp.net = mlp_from_checkpoint(ck, "res");
  rp.log_std = ck.entry("log_std").bias;
  return rp;
}

// Deterministic residual-corrected rollout (mean residual, argmax selector).
inline Episode run_residual_episode(const ChunkPolicy& policy, const SelectorParams* selector,
                                    const ResidualPolicy& residual, Env& env, uint64_t seed) {
  Episode ep;
  ep.seed = seed;
  ep.env_name = env.name();
  std::vector<Vec> history;
  history.push_back(env.reset(seed));
  std::optional<ActionCache> cache;
  if (selector) cache.emplace(selector->k);
  int t = 0;
  while (!env.done()) {
    Vec base;
    int origin = t, row = 0;
    if (selector) {
      const TasStep step = tas_step(policy, *selector, *cache, history, t, true, seed, nullptr);
      base = step.executed;
      origin = t - step.selected;
      row = step.selected;
    } else {
      const Vec chunk = detail::predict_at(policy, history, t, seed);
      base = Vec(chunk.begin(), chunk.begin() + policy.act_dim);
    }
    const Vec res_mean = residual.mean_residual(history[t], base);
    Vec action(base.size());
    for (size_t i = 0; i < base.size(); ++i) action[i] = base[i] + res_mean[i];
    ep.observations.push_back(history[t]);
    ep.actions.push_back(action);
    ep.source_origin.push_back(origin);
    ep.source_row.push_back(row);
    StepResult sr = env.step(action);
    ep.episode_return += sr.reward;
    ep.max_coverage = std::max(ep.max_coverage, sr.coverage);
    ep.success = sr.success;
    history.push_back(sr.observation);
    ++t;
  }
  return ep;
}

// Frozen: only the residual head trains; the selector checkpoint stays
// bit-identical. Joint: selector categorical head and residual gaussian head
// co-optimized under one PPO objective with a shared critic.
inline TrainResult train_residual(const Env& proto, const ChunkPolicy& policy,
                                  SelectorParams* selector, ResidualPolicy& residual,
                                  const ResidualConfig& rcfg, const PpoConfig& cfg, uint64_t seed,
                                  const std::function<void(long)>& checkpoint_cb = nullptr) {
  const bool tas_base = rcfg.base == ResidualConfig::BaseKind::Tas;
  const bool joint = rcfg.mode == ResidualConfig::Mode::Joint;
  require(!tas_base || selector != nullptr, "train_residual: TAS base needs a selector");
  require(!joint || tas_base, "train_residual: joint mode requires the TAS base");

  const int critic_dim = tas_base ? selector->input_dim() : residual.obs_dim + residual.act_dim;
  Rng vinit(derive_seed(seed, "value.init"));
  MlpParams value_net = make_mlp(critic_dim, {128, 64}, 1, Activation::ReLU, vinit);

  GaussianActor gauss_actor(residual.net, residual.log_std, 1.0);  // mean in rho units
  std::optional<SelectorActor> cat_actor;
  std::optional<JointActor> joint_actor;
  PpoActor* actor = &gauss_actor;
  if (joint) {
    cat_actor.emplace(*selector);
    joint_actor.emplace(*cat_actor, gauss_actor);
    actor = &*joint_actor;
  }

  auto collect = [&](Env& env, uint64_t ep_seed, RolloutBuffer& buffer) -> double {
    std::vector<Vec> history;
    history.push_back(env.reset(ep_seed));
    std::optional<ActionCache> cache;
    if (tas_base) cache.emplace(selector->k);
    Rng sample_rng(derive_seed(ep_seed, "residual.sample"));
    Rng idx_rng(derive_seed(ep_seed, "tas.sample"));
    std::optional<Vec> successor;
    double ep_return = 0.0;
    int t = 0;
    while (!env.done()) {
      RolloutStep rs;
      rs.obs = history[t];
      Vec base;
      if (tas_base) {
        // Frozen mode deploys the selector (argmax); Joint samples it
        const TasStep step =
            tas_step(policy, *selector, *cache, history, t, !joint, ep_seed, &idx_rng);
        base = step.executed;
        rs.cand_flat = step.cands.flattened();
        rs.mask = step.cands.valid;
        rs.critic_input = detail::critic_view(selector->stats, history[t], step.cands);
        if (joint) {
          rs.chosen = step.selected;
          rs.log_prob += step.log_prob;
          rs.r_coh = coherence_penalty(base, successor, cfg.lambda_coh);
          const ActionChunk& src = cache->aged(step.selected);
          successor = (step.selected + 1 < static_cast<int>(src.actions.size()))
                          ? std::optional<Vec>(src.actions[step.selected + 1])
                          : std::nullopt;
        }
      } else {
        const Vec chunk = detail::predict_at(policy, history, t, ep_seed);
        base = Vec(chunk.begin(), chunk.begin() + policy.act_dim);
        rs.critic_input = residual.input(history[t], base);
      }
      rs.actor_input = residual.input(history[t], base);

      const Vec pre = mlp_forward(residual.net, rs.actor_input);
      Vec sample(pre.size());
      double logp = 0.0;
      for (size_t i = 0; i < pre.size(); ++i) {
        const double mean = std::tanh(pre[i]);
        const double sig = std::exp(residual.log_std[i]);
        sample[i] = mean + sig * sample_rng.gaussian();
        const double z = (sample[i] - mean) / sig;
        logp += -0.5 * z * z - residual.log_std[i] - 0.5 * std::log(2.0 * M_PI);
      }
      rs.gauss = sample;
      rs.log_prob += logp;
      rs.value = mlp_forward(value_net, rs.critic_input)[0];

      Vec action(base.size());
      for (size_t i = 0; i < base.size(); ++i)
        action[i] = base[i] + residual.rho_max * clamp(sample[i], -1.0, 1.0);

      StepResult res = env.step(action);
      rs.r_task = res.reward;
      rs.r_total = rs.r_task + rs.r_coh;
      rs.done = res.done;
      ep_return += res.reward;
      buffer.steps.push_back(std::move(rs));
      history.push_back(res.observation);
      ++t;
    }
    return ep_return;
  };

  auto evaluate = [&](Env& env) {
    return detail::deterministic_eval(env, cfg.eval_episodes, seed, [&](Env& e, uint64_t s) {
      return run_residual_episode(policy, tas_base ? selector : nullptr, residual, e, s);
    });
  };

  return detail::ppo_driver(proto, *actor, value_net, cfg, seed, collect, evaluate, checkpoint_cb);
}

// ---------------------------------------------------------------------------
// Synchronous-caching ablation: every k steps the base policy emits k
// candidate chunks from the single current observation; the selector picks
// one row per step from that frozen slate.
// ---------------------------------------------------------------------------

struct SyncAblationOptions {
  double perturb_std = 0.01;  // MLP candidate generation: context perturbation
};

// k candidate chunks from one context: CVAE prior draws, or gaussian context
// perturbations for deterministic MLPs.
inline std::vector<ActionChunk> sync_slate(const ChunkPolicy& policy, const std::vector<Vec>& history,
                                           int t, int k, uint64_t ep_seed, double perturb_std) {
  const Vec ctx = stack_context(history, t, policy.cfg.context_length);
  std::vector<ActionChunk> slate;
  for (int i = 0; i < k; ++i) {
    Vec chunk;
    if (policy.cfg.kind == PolicyKind::Cvae) {
      Rng latent(derive_seed(ep_seed, "slate.latent", static_cast<uint64_t>(t) * 1000 + i));
      chunk = policy.predict_chunk(ctx, nullptr, &latent);
    } else {
      Vec ctx_p = ctx;
      if (perturb_std > 0.0) {
        Rng prng(derive_seed(ep_seed, "slate.perturb", static_cast<uint64_t>(t) * 1000 + i));
        for (double& x : ctx_p) x += prng.gaussian(0.0, perturb_std);
      }
      chunk = policy.predict_chunk(ctx_p);
    }
    slate.push_back(to_chunk(chunk, t, policy.cfg.chunk_length, policy.act_dim));
  }
  return slate;
}

inline CandidateSet slate_candidates(const std::vector<ActionChunk>& slate, int offset, int t) {
  CandidateSet set;
  set.t = t;
  for (const auto& ch : slate) {
    set.candidates.push_back(ch.actions.at(offset));
    set.valid.push_back(true);
  }
  return set;
}

inline Episode run_sync_episode(const ChunkPolicy& policy, const SelectorParams& sel, Env& env,
                                uint64_t seed, bool deploy, double perturb_std,
                                RolloutBuffer* buffer, MlpParams* value_net, double lambda_coh) {
  Episode ep;
  ep.seed = seed;
  ep.env_name = env.name();
  std::vector<Vec> history;
  history.push_back(env.reset(seed));
  Rng sample_rng(derive_seed(seed, "sync.sample"));
  std::vector<ActionChunk> slate;
  std::optional<Vec> successor;
  int t = 0;
  while (!env.done()) {
    const int offset = t % sel.k;
    if (offset == 0) slate = sync_slate(policy, history, t, sel.k, seed, perturb_std);
    const CandidateSet cands = slate_candidates(slate, offset, t);
    const Vec scores = selector_scores(sel, history[t], cands);
    const Vec probs = select_probs(scores, sel.tau, cands.valid);
    int chosen;
    double logp;
    if (deploy) {
      chosen = argmax_action(probs);
      logp = std::log(probs[chosen]);
    } else {
      std::tie(chosen, logp) = sample_action(probs, sample_rng);
    }
    const Vec executed = cands.candidates[chosen];

    RolloutStep rs;
    if (buffer) {
      rs.obs = history[t];
      rs.cand_flat = cands.flattened();
      rs.mask = cands.valid;
      rs.chosen = chosen;
      rs.log_prob = logp;
      rs.critic_input = detail::critic_view(sel.stats, history[t], cands);
      rs.value = mlp_forward(*value_net, rs.critic_input)[0];
      rs.r_coh = coherence_penalty(executed, successor, lambda_coh);
    }
    const ActionChunk& src = slate[chosen];
    successor = (offset + 1 < static_cast<int>(src.actions.size()))
                    ? std::optional<Vec>(src.actions[offset + 1])
                    : std::nullopt;

    ep.observations.push_back(history[t]);
    ep.actions.push_back(executed);
    ep.source_origin.push_back(src.origin_t);
    ep.source_row.push_back(offset);

    StepResult res = env.step(executed);
    if (buffer) {
      rs.r_task = res.reward;
      rs.r_total = rs.r_task + rs.r_coh;
      rs.done = res.done;
      buffer->steps.push_back(std::move(rs));
    }
    ep.episode_return += res.reward;
    ep.max_coverage = std::max(ep.max_coverage, res.coverage);
    ep.success = res.success;
    history.push_back(res.observation);
    ++t;
  }
  return ep;
}

inline TrainResult train_sync_ablation(const Env& proto, const ChunkPolicy& policy,
                                       SelectorParams& selector, const PpoConfig& cfg,
                                       uint64_t seed,
                                       const std::function<void(long)>& checkpoint_cb = nullptr,
                                       SyncAblationOptions options = SyncAblationOptions()) {
  require(selector.k <= policy.cfg.chunk_length, "train_sync_ablation: k must be <= chunk_length");
  Rng vinit(derive_seed(seed, "value.init"));
  MlpParams value_net = make_mlp(selector.input_dim(), {128, 64}, 1, Activation::ReLU, vinit);
  SelectorActor actor(selector);

  auto collect = [&](Env& env, uint64_t ep_seed, RolloutBuffer& buffer) -> double {
    const Episode ep = run_sync_episode(policy, selector, env, ep_seed, false, options.perturb_std,
                                        &buffer, &value_net, cfg.lambda_coh);
    return ep.episode_return;
  };

  auto evaluate = [&](Env& env) {
    return detail::deterministic_eval(env, cfg.eval_episodes, seed, [&](Env& e, uint64_t s) {
      return run_sync_episode(policy, selector, e, s, true, options.perturb_std, nullptr, nullptr,
                              0.0);
    });
  };

  return detail::ppo_driver(proto, actor, value_net, cfg, seed, collect, evaluate, checkpoint_cb);
}

}  // namespace tas
