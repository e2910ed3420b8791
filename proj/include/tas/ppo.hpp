#pragma once

#include <optional>

#include "tas/selector.hpp"

namespace tas {

struct PpoConfig {
  double clip_ratio = 0.2;
  double gae_lambda = 0.95;
  double gamma = 0.99;
  int epochs_per_batch = 4;
  int minibatch_size = 256;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double lr = 3e-4;
  int steps_per_update = 4096;
  double lambda_coh = 0.01;
  long total_env_steps = 150000;
  long eval_every = 16384;  // env steps between deterministic evals
  int eval_episodes = 40;

  void validate() const {
    require(clip_ratio > 0.0 && clip_ratio < 1.0, "ppo config: clip_ratio must be in (0,1)");
    require(gamma > 0.0 && gamma <= 1.0, "ppo config: gamma must be in (0,1]");
    require(gae_lambda > 0.0 && gae_lambda <= 1.0, "ppo config: gae_lambda must be in (0,1]");
    require(lambda_coh >= 0.0, "ppo config: lambda_coh must be >= 0");
    require(steps_per_update >= 1 && minibatch_size >= 1, "ppo config: batch sizes must be >= 1");
  }
};

// -lambda * ||a_t* - succ(a_{t-1}*)||^2; zero when the previous selection had
// no successor (last row of its chunk).
inline double coherence_penalty(const Vec& executed, const std::optional<Vec>& successor,
                                double lambda) {
  if (!successor) return 0.0;
  require(executed.size() == successor->size(), "coherence_penalty: dimension mismatch");
  double d2 = 0.0;
  for (size_t i = 0; i < executed.size(); ++i) {
    const double d = executed[i] - (*successor)[i];
    d2 += d * d;
  }
  return -lambda * d2;
}

// Standard GAE; terminal bootstrap value is 0 (buffers hold whole episodes).
inline void gae(const Vec& rewards, const Vec& values, const std::vector<bool>& dones, double gamma,
                double lam, Vec& advantages, Vec& returns) {
  require(rewards.size() == values.size() && rewards.size() == dones.size(),
          "gae: input lengths differ");
  const int n = static_cast<int>(rewards.size());
  advantages.assign(n, 0.0);
  returns.assign(n, 0.0);
  double last_adv = 0.0;
  for (int t = n - 1; t >= 0; --t) {
    const double next_value = (t + 1 < n && !dones[t]) ? values[t + 1] : 0.0;
    const double nonterminal = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * next_value - values[t];
    last_adv = delta + gamma * lam * nonterminal * last_adv;
    advantages[t] = last_adv;
    returns[t] = advantages[t] + values[t];
  }
}

// One buffered decision. The actor model interprets obs/context/extra per
// trainer; rewards carry the task/coherence decomposition explicitly.
struct RolloutStep {
  Vec obs;                  // raw observation (selector view)
  Vec cand_flat;            // raw flattened candidate set, empty if none
  std::vector<bool> mask;   // candidate validity (categorical actors)
  int chosen = -1;          // selected candidate index, -1 if none
  Vec gauss;                // sampled gaussian head output, empty if none
  Vec actor_input;          // normalized gaussian-actor input, fixed at collection
  double log_prob = 0.0;
  double value = 0.0;
  Vec critic_input;         // normalized critic view, fixed at collection
  double r_task = 0.0;
  double r_coh = 0.0;
  double r_total = 0.0;
  bool done = false;
};

struct RolloutBuffer {
  std::vector<RolloutStep> steps;

  void clear() { steps.clear(); }
  int size() const { return static_cast<int>(steps.size()); }

  void check_reward_decomposition() const {
    for (const auto& s : steps)
      require(s.r_total == s.r_task + s.r_coh, "rollout buffer: r_total != r_task + r_coh");
  }
};

// Actor abstraction for the PPO update. evaluate() recomputes log-prob and
// entropy for a stored decision and retains the forward tape; backward()
// consumes that tape. Calls always come in evaluate/backward pairs.
class PpoActor {
 public:
  virtual ~PpoActor() = default;
  virtual std::pair<double, double> evaluate(const RolloutStep& s) = 0;  // (log_prob, entropy)
  virtual void backward(const RolloutStep& s, double dlogp, double dentropy) = 0;
  virtual std::vector<TensorRef> param_tensors() = 0;
  virtual std::vector<TensorRef> grad_tensor_refs() = 0;
  virtual void zero_grads() = 0;
  virtual void scale_grads(double s) = 0;
};

// d entropy / d score_j = -p_j (ln p_j + H) / tau over valid entries
inline Vec entropy_score_grad(const Vec& probs, double tau, double entropy) {
  Vec g(probs.size(), 0.0);
  for (size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] <= 0.0) continue;
    g[j] = -probs[j] * (std::log(probs[j]) + entropy) / tau;
  }
  return g;
}

inline double categorical_entropy(const Vec& probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

// Categorical head over the candidate set, backed by any selector kind.
class SelectorActor final : public PpoActor {
 public:
  SelectorActor(SelectorParams& sel) : sel_(sel), grads_(sel) {}

  std::pair<double, double> evaluate(const RolloutStep& s) override {
    cands_.t = 0;
    cands_.candidates.clear();
    cands_.valid = s.mask;
    const int ad = sel_.act_dim;
    for (int i = 0; i < sel_.k; ++i)
      cands_.candidates.push_back(Vec(s.cand_flat.begin() + static_cast<size_t>(i) * ad,
                                      s.cand_flat.begin() + static_cast<size_t>(i + 1) * ad));
    scores_ = selector_scores(sel_, s.obs, cands_, &tape_);
    probs_ = select_probs(scores_, sel_.tau, s.mask);
    const double logp = std::log(probs_[s.chosen]);
    const double ent = categorical_entropy(probs_);
    return {logp, ent};
  }

  void backward(const RolloutStep& s, double dlogp, double dentropy) override {
    Vec dscores(sel_.k, 0.0);
    // d logp(chosen) / d score_j = (1[j==chosen] - p_j) / tau
    for (int j = 0; j < sel_.k; ++j) {
      if (!s.mask[j]) continue;
      dscores[j] += dlogp * (((j == s.chosen) ? 1.0 : 0.0) - probs_[j]) / sel_.tau;
    }
    if (dentropy != 0.0) {
      const double ent = categorical_entropy(probs_);
      const Vec dent = entropy_score_grad(probs_, sel_.tau, ent);
      for (int j = 0; j < sel_.k; ++j) dscores[j] += dentropy * dent[j];
    }
    selector_backward(sel_, tape_, dscores, grads_);
  }

  std::vector<TensorRef> param_tensors() override { return sel_.tensors(); }
  std::vector<TensorRef> grad_tensor_refs() override { return grads_.tensors(); }
  void zero_grads() override { grads_.zero(); }
  void scale_grads(double s) override {
    if (grads_.phi) {
      grads_.phi->scale(s);
      grads_.psi->scale(s);
    }
    if (grads_.net) grads_.net->scale(s);
  }

 private:
  SelectorParams& sel_;
  SelectorGrads grads_;
  ScoreTape tape_;
  CandidateSet cands_;
  Vec scores_, probs_;
};

// Diagonal gaussian head: mean = net(input) (optionally squashed through
// rho * tanh), learnable per-dimension log-std.
class GaussianActor final : public PpoActor {
 public:
  // squash_rho <= 0 disables the tanh bound
  GaussianActor(MlpParams& net, Vec& log_std, double squash_rho = 0.0)
      : net_(net), log_std_(log_std), rho_(squash_rho), grads_(net), dlogstd_(log_std.size(), 0.0) {}

  std::pair<double, double> evaluate(const RolloutStep& s) override {
    pre_ = mlp_forward(net_, s.actor_input, &tape_);
    mean_.resize(pre_.size());
    for (size_t i = 0; i < pre_.size(); ++i)
      mean_[i] = rho_ > 0.0 ? rho_ * std::tanh(pre_[i]) : pre_[i];
    double logp = 0.0, ent = 0.0;
    for (size_t i = 0; i < mean_.size(); ++i) {
      const double sig = std::exp(log_std_[i]);
      const double z = (s.gauss[i] - mean_[i]) / sig;
      logp += -0.5 * z * z - log_std_[i] - 0.5 * std::log(2.0 * M_PI);
      ent += log_std_[i] + 0.5 * std::log(2.0 * M_PI * std::exp(1.0));
    }
    return {logp, ent};
  }

  void backward(const RolloutStep& s, double dlogp, double dentropy) override {
    Vec dmean(mean_.size());
    for (size_t i = 0; i < mean_.size(); ++i) {
      const double sig = std::exp(log_std_[i]);
      const double z = (s.gauss[i] - mean_[i]) / sig;
      dmean[i] = dlogp * z / sig;
      dlogstd_[i] += dlogp * (z * z - 1.0) + dentropy * 1.0;
    }
    Vec dpre(dmean.size());
    for (size_t i = 0; i < dmean.size(); ++i) {
      if (rho_ > 0.0) {
        const double th = std::tanh(pre_[i]);
        dpre[i] = dmean[i] * rho_ * (1.0 - th * th);
      } else {
        dpre[i] = dmean[i];
      }
    }
    mlp_backward(net_, tape_, dpre, grads_);
  }

  std::vector<TensorRef> param_tensors() override {
    auto out = mlp_tensors(net_, "gauss");
    out.push_back({"gauss.log_std", log_std_.data(), log_std_.size()});
    return out;
  }
  std::vector<TensorRef> grad_tensor_refs() override {
    auto out = grad_tensors(grads_, "gauss");
    out.push_back({"gauss.log_std", dlogstd_.data(), dlogstd_.size()});
    return out;
  }
  void zero_grads() override {
    grads_.zero();
    std::fill(dlogstd_.begin(), dlogstd_.end(), 0.0);
  }
  void scale_grads(double s) override {
    grads_.scale(s);
    for (double& x : dlogstd_) x *= s;
  }

  const Vec& last_mean() const { return mean_; }

 private:
  MlpParams& net_;
  Vec& log_std_;
  double rho_;
  MlpGrads grads_;
  Vec dlogstd_;
  MlpTape tape_;
  Vec pre_, mean_;
};

// Joint mode: categorical selector head plus gaussian residual head under a
// single PPO objective (log-probs add, entropies add).
class JointActor final : public PpoActor {
 public:
  JointActor(PpoActor& categorical, PpoActor& gaussian) : cat_(categorical), gauss_(gaussian) {}

  std::pair<double, double> evaluate(const RolloutStep& s) override {
    const auto [lp1, e1] = cat_.evaluate(s);
    const auto [lp2, e2] = gauss_.evaluate(s);
    return {lp1 + lp2, e1 + e2};
  }
  void backward(const RolloutStep& s, double dlogp, double dentropy) override {
    cat_.backward(s, dlogp, dentropy);
    gauss_.backward(s, dlogp, dentropy);
  }
  std::vector<TensorRef> param_tensors() override {
    auto out = cat_.param_tensors();
    auto g = gauss_.param_tensors();
    out.insert(out.end(), g.begin(), g.end());
    return out;
  }
  std::vector<TensorRef> grad_tensor_refs() override {
    auto out = cat_.grad_tensor_refs();
    auto g = gauss_.grad_tensor_refs();
    out.insert(out.end(), g.begin(), g.end());
    return out;
  }
  void zero_grads() override {
    cat_.zero_grads();
    gauss_.zero_grads();
  }
  void scale_grads(double s) override {
    cat_.scale_grads(s);
    gauss_.scale_grads(s);
  }

 private:
  PpoActor& cat_;
  PpoActor& gauss_;
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double approx_kl = 0.0;
  double first_batch_ratio_dev = 0.0;  // max |ratio - 1| before the first step
};

// batch-wide mean 0 / std 1 (no-op for a single sample)
inline void normalize_advantages(Vec& advantages) {
  const size_t n = advantages.size();
  if (n <= 1) return;
  double mean = 0.0;
  for (double a : advantages) mean += a;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  const double std = std::sqrt(var / static_cast<double>(n));
  for (double& a : advantages) a = (a - mean) / (std + 1e-8);
}

// Clipped-surrogate update over whole-episode buffers. Advantages are
// normalized once per batch. On a non-finite loss the parameters are restored
// to their pre-update values and the update aborts.
inline PpoStats ppo_update(const RolloutBuffer& buffer, PpoActor& actor, MlpParams& value_net,
                           Adam& opt, const PpoConfig& cfg, Rng& order_rng) {
  cfg.validate();
  require(buffer.size() >= 1, "ppo_update: empty buffer");
  buffer.check_reward_decomposition();

  const int n = buffer.size();
  Vec rewards(n), values(n);
  std::vector<bool> dones(n);
  for (int i = 0; i < n; ++i) {
    rewards[i] = buffer.steps[i].r_total;
    values[i] = buffer.steps[i].value;
    dones[i] = buffer.steps[i].done;
  }
  Vec advantages, returns;
  gae(rewards, values, dones, cfg.gamma, cfg.gae_lambda, advantages, returns);
  normalize_advantages(advantages);

  // snapshot for abort-on-NaN
  auto params = actor.param_tensors();
  auto vparams = mlp_tensors(value_net, "value");
  params.insert(params.end(), vparams.begin(), vparams.end());
  std::vector<Vec> snapshot;
  for (const auto& p : params) snapshot.emplace_back(p.data, p.data + p.n);

  MlpGrads vgrads(value_net);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  PpoStats stats;
  long stat_count = 0;
  bool first_batch = true;
  for (int epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
    order_rng.shuffle(order);
    for (int start = 0; start < n; start += cfg.minibatch_size) {
      const int stop = std::min(n, start + cfg.minibatch_size);
      const double inv = 1.0 / static_cast<double>(stop - start);
      actor.zero_grads();
      vgrads.zero();
      double batch_loss = 0.0;
      for (int oi = start; oi < stop; ++oi) {
        const RolloutStep& s = buffer.steps[order[oi]];
        const double adv = advantages[order[oi]];
        const auto [logp, entropy] = actor.evaluate(s);
        const double logratio = logp - s.log_prob;
        const double ratio = std::exp(logratio);
        if (first_batch)
          stats.first_batch_ratio_dev = std::max(stats.first_batch_ratio_dev, std::abs(ratio - 1.0));
        const double unclipped = -adv * ratio;
        const double clipped = -adv * clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
        const double pg = std::max(unclipped, clipped);
        // gradient flows only through the branch selected by the max
        double dlogp = 0.0;
        if (unclipped >= clipped) dlogp = -adv * ratio;
        actor.backward(s, dlogp * inv, -cfg.entropy_coef * inv);

        MlpTape vtape;
        const double v = mlp_forward(value_net, s.critic_input, &vtape)[0];
        const double verr = v - returns[order[oi]];
        mlp_backward(value_net, vtape, {cfg.value_coef * 2.0 * verr * inv}, vgrads);

        batch_loss += pg + cfg.value_coef * verr * verr - cfg.entropy_coef * entropy;
        stats.policy_loss += pg;
        stats.value_loss += verr * verr;
        stats.entropy += entropy;
        stats.clip_frac += std::abs(ratio - 1.0) > cfg.clip_ratio ? 1.0 : 0.0;
        stats.approx_kl += (ratio - 1.0) - logratio;
        ++stat_count;
      }
      if (!std::isfinite(batch_loss)) {
        for (size_t pi = 0; pi < params.size(); ++pi)
          std::copy(snapshot[pi].begin(), snapshot[pi].end(), params[pi].data);
        throw std::runtime_error("ppo_update: non-finite loss; parameters restored");
      }
      auto grads = actor.grad_tensor_refs();
      auto vg = grad_tensors(vgrads, "value");
      grads.insert(grads.end(), vg.begin(), vg.end());
      opt.step(params, grads);
      first_batch = false;
    }
  }
  const double inv = 1.0 / static_cast<double>(std::max<long>(1, stat_count));
  stats.policy_loss *= inv;
  stats.value_loss *= inv;
  stats.entropy *= inv;
  stats.clip_frac *= inv;
  stats.approx_kl *= inv;
  return stats;
}

}  // namespace tas
