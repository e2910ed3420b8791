#pragma once

#include <string>

#include <json.hpp>

#include "tas/envs.hpp"
#include "tas/executors.hpp"
#include "tas/policy.hpp"
#include "tas/ppo.hpp"
#include "tas/train.hpp"

namespace tas {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error("config: " + msg) {}
};

namespace cfgdetail {

template <typename T>
T get_or(const Json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError("field '" + key + "': " + e.what());
  }
}

inline const Json& section(const Json& j, const std::string& key) {
  static const Json empty = Json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw ConfigError("section '" + key + "' must be an object");
  return j.at(key);
}

}  // namespace cfgdetail

struct EnvSection {
  std::string name = "noisy_reach";
  // empty vectors = env defaults
  Vec systematic_std;
  Vec observation_std;
  // pusht2d knobs
  double init_theta_range = 0.015;
  // noisy_reach knobs
  double reach_a_max = 0.01;
};

struct DemoSection {
  int n_episodes = 400;
  bool keep_failures = false;
  ExpertImperfections imperfections;
};

struct EvalSection {
  int n_episodes = 200;
  uint64_t seed = 9000;
  std::string controller = "executor";  // executor | tas | residual | sync
  ExecutorSpec executor;
  std::string residual_mode_base = "tas";  // residual controller: tas | vanilla
};

struct SweepSection {
  std::vector<int> delays = {0, 1, 2, 3, 4, 5, 6, 7};
};

struct IoSection {
  std::string out_dir = "out";
  std::string dataset = "out/demos.jsonl";
  std::string policy = "out/policy";
  std::string selector = "out/selector";
  std::string residual = "out/residual";
};

struct SelectorSection {
  SelectorKind kind = SelectorKind::SpaceAware;
  double tau = 1.0;
  int k = 8;
  int embed_dim = 64;
};

struct RunConfig {
  uint64_t master_seed = 1;
  EnvSection env;
  ChunkPolicyConfig policy;
  SelectorSection selector;
  PpoConfig ppo;
  ResidualConfig residual;
  FineTuneOptions finetune;
  SyncAblationOptions sync;
  DemoSection demos;
  EvalSection eval;
  SweepSection sweep;
  IoSection io;

  static RunConfig from_json(const Json& j);
  Json to_json() const;

  void validate() const {
    policy.validate();
    ppo.validate();
    if (selector.k > policy.chunk_length)
      throw ConfigError("selector.k (" + std::to_string(selector.k) +
                        ") must satisfy k <= policy.chunk_length (" +
                        std::to_string(policy.chunk_length) + ")");
    if (selector.k < 1) throw ConfigError("selector.k must be >= 1");
    if (selector.tau <= 0.0) throw ConfigError("selector.tau must be > 0");
    if (env.name != "pusht2d" && env.name != "noisy_reach")
      throw ConfigError("env.name must be 'pusht2d' or 'noisy_reach', got '" + env.name + "'");
    if (eval.controller != "executor" && eval.controller != "tas" &&
        eval.controller != "residual" && eval.controller != "sync")
      throw ConfigError("eval.controller must be one of executor|tas|residual|sync");
    for (int d : sweep.delays)
      if (d < 0 || d > policy.chunk_length - 1)
        throw ConfigError("sweep delay " + std::to_string(d) + " outside [0, l-1]");
  }

  std::unique_ptr<Env> make_env() const {
    if (env.name == "pusht2d") {
      PushTConfig c;
      c.init_theta_range = env.init_theta_range;
      if (!env.systematic_std.empty()) c.noise.systematic_std = env.systematic_std;
      if (!env.observation_std.empty()) c.noise.observation_std = env.observation_std;
      if (c.noise.systematic_std.empty()) c.noise = NoiseConfig::zeros(6);
      return std::make_unique<PushT2D>(c);
    }
    ReachConfig c;
    c.a_max = env.reach_a_max;
    if (!env.systematic_std.empty()) c.noise.systematic_std = env.systematic_std;
    if (!env.observation_std.empty()) c.noise.observation_std = env.observation_std;
    return std::make_unique<NoisyReach>(c);
  }
};

inline RunConfig RunConfig::from_json(const Json& j) {
  using cfgdetail::get_or;
  using cfgdetail::section;
  if (!j.is_object()) throw ConfigError("root must be a JSON object");
  RunConfig c;
  c.master_seed = get_or<uint64_t>(j, "master_seed", c.master_seed);

  {
    const Json& e = section(j, "env");
    c.env.name = get_or<std::string>(e, "name", c.env.name);
    const Json& n = section(e, "noise");
    c.env.systematic_std = get_or<Vec>(n, "systematic_std", {});
    c.env.observation_std = get_or<Vec>(n, "observation_std", {});
    c.env.init_theta_range = get_or<double>(e, "init_theta_range", c.env.init_theta_range);
    c.env.reach_a_max = get_or<double>(e, "a_max", c.env.reach_a_max);
  }
  {
    const Json& p = section(j, "policy");
    c.policy.kind = policy_kind_from_name(get_or<std::string>(p, "kind", "mlp"));
    c.policy.context_length = get_or<int>(p, "context_length", c.policy.context_length);
    c.policy.chunk_length = get_or<int>(p, "chunk_length", c.policy.chunk_length);
    c.policy.hidden = get_or<std::vector<int>>(p, "hidden", c.policy.hidden);
    c.policy.latent_dim = get_or<int>(p, "latent_dim", c.policy.latent_dim);
    c.policy.beta = get_or<double>(p, "beta", c.policy.beta);
    c.policy.epochs = get_or<int>(p, "epochs", c.policy.epochs);
    c.policy.batch_size = get_or<int>(p, "batch_size", c.policy.batch_size);
    c.policy.lr = get_or<double>(p, "lr", c.policy.lr);
  }
  {
    const Json& s = section(j, "selector");
    c.selector.kind = selector_kind_from_name(get_or<std::string>(s, "kind", "space_aware"));
    c.selector.tau = get_or<double>(s, "tau", c.selector.tau);
    c.selector.k = get_or<int>(s, "k", c.selector.k);
    c.selector.embed_dim = get_or<int>(s, "embed_dim", c.selector.embed_dim);
  }
  {
    const Json& t = section(j, "training");
    const Json& p = section(t, "ppo");
    c.ppo.clip_ratio = get_or<double>(p, "clip_ratio", c.ppo.clip_ratio);
    c.ppo.gae_lambda = get_or<double>(p, "gae_lambda", c.ppo.gae_lambda);
    c.ppo.gamma = get_or<double>(p, "gamma", c.ppo.gamma);
    c.ppo.epochs_per_batch = get_or<int>(p, "epochs_per_batch", c.ppo.epochs_per_batch);
    c.ppo.minibatch_size = get_or<int>(p, "minibatch_size", c.ppo.minibatch_size);
    c.ppo.entropy_coef = get_or<double>(p, "entropy_coef", c.ppo.entropy_coef);
    c.ppo.value_coef = get_or<double>(p, "value_coef", c.ppo.value_coef);
    c.ppo.lr = get_or<double>(p, "lr", c.ppo.lr);
    c.ppo.steps_per_update = get_or<int>(p, "steps_per_update", c.ppo.steps_per_update);
    c.ppo.lambda_coh = get_or<double>(p, "lambda_coh", c.ppo.lambda_coh);
    c.ppo.total_env_steps = get_or<long>(p, "total_env_steps", c.ppo.total_env_steps);
    c.ppo.eval_every = get_or<long>(p, "eval_every", c.ppo.eval_every);
    c.ppo.eval_episodes = get_or<int>(p, "eval_episodes", c.ppo.eval_episodes);

    const Json& r = section(t, "residual");
    const std::string mode = get_or<std::string>(r, "mode", "frozen");
    if (mode != "frozen" && mode != "joint") throw ConfigError("residual.mode must be frozen|joint");
    c.residual.mode = mode == "frozen" ? ResidualConfig::Mode::Frozen : ResidualConfig::Mode::Joint;
    const std::string base = get_or<std::string>(r, "base", "tas");
    if (base != "tas" && base != "vanilla") throw ConfigError("residual.base must be tas|vanilla");
    c.residual.base =
        base == "tas" ? ResidualConfig::BaseKind::Tas : ResidualConfig::BaseKind::VanillaPolicy;
    c.residual.hidden = get_or<std::vector<int>>(r, "hidden", c.residual.hidden);
    c.residual.rho_scale = get_or<double>(r, "rho_scale", c.residual.rho_scale);
    c.residual.init_std = get_or<double>(r, "init_std", c.residual.init_std);

    const Json& f = section(t, "finetune");
    c.finetune.init_log_std = get_or<double>(f, "init_log_std", c.finetune.init_log_std);
    c.finetune.shaped_coverage_reward =
        get_or<bool>(f, "shaped_coverage_reward", c.finetune.shaped_coverage_reward);

    const Json& sy = section(t, "sync");
    c.sync.perturb_std = get_or<double>(sy, "perturb_std", c.sync.perturb_std);
  }
  {
    const Json& d = section(j, "demos");
    c.demos.n_episodes = get_or<int>(d, "n_episodes", c.demos.n_episodes);
    c.demos.keep_failures = get_or<bool>(d, "keep_failures", c.demos.keep_failures);
    c.demos.imperfections.pause_prob = get_or<double>(d, "pause_prob", 0.02);
    c.demos.imperfections.jitter_std = get_or<double>(d, "jitter_std", 0.002);
  }
  {
    const Json& e = section(j, "eval");
    c.eval.n_episodes = get_or<int>(e, "n_episodes", c.eval.n_episodes);
    c.eval.seed = get_or<uint64_t>(e, "seed", c.eval.seed);
    c.eval.controller = get_or<std::string>(e, "controller", c.eval.controller);
    const std::string ex = get_or<std::string>(e, "executor", "closed_loop");
    if (ex == "open_loop")
      c.eval.executor.kind = ExecutorSpec::Kind::OpenLoop;
    else if (ex == "closed_loop")
      c.eval.executor.kind = ExecutorSpec::Kind::ClosedLoop;
    else if (ex == "ema")
      c.eval.executor.kind = ExecutorSpec::Kind::Ema;
    else if (ex == "delayed")
      c.eval.executor.kind = ExecutorSpec::Kind::Delayed;
    else
      throw ConfigError("eval.executor must be open_loop|closed_loop|ema|delayed");
    c.eval.executor.h = get_or<int>(e, "h", 8);
    c.eval.executor.m = get_or<double>(e, "m", 0.1);
    c.eval.executor.d = get_or<int>(e, "d", 0);
    c.eval.residual_mode_base = get_or<std::string>(e, "residual_base", c.eval.residual_mode_base);
  }
  {
    const Json& s = section(j, "sweep");
    c.sweep.delays = get_or<std::vector<int>>(s, "delays", c.sweep.delays);
  }
  {
    const Json& io = section(j, "io");
    c.io.out_dir = get_or<std::string>(io, "out_dir", c.io.out_dir);
    c.io.dataset = get_or<std::string>(io, "dataset", c.io.out_dir + "/demos.jsonl");
    c.io.policy = get_or<std::string>(io, "policy", c.io.out_dir + "/policy");
    c.io.selector = get_or<std::string>(io, "selector", c.io.out_dir + "/selector");
    c.io.residual = get_or<std::string>(io, "residual", c.io.out_dir + "/residual");
  }
  c.validate();
  return c;
}

inline Json RunConfig::to_json() const {
  Json j;
  j["master_seed"] = master_seed;
  j["env"] = {{"name", env.name},
              {"noise", {{"systematic_std", env.systematic_std},
                         {"observation_std", env.observation_std}}},
              {"init_theta_range", env.init_theta_range},
              {"a_max", env.reach_a_max}};
  j["policy"] = {{"kind", policy_kind_name(policy.kind)},
                 {"context_length", policy.context_length},
                 {"chunk_length", policy.chunk_length},
                 {"hidden", policy.hidden},
                 {"latent_dim", policy.latent_dim},
                 {"beta", policy.beta},
                 {"epochs", policy.epochs},
                 {"batch_size", policy.batch_size},
                 {"lr", policy.lr}};
  j["selector"] = {{"kind", selector_kind_name(selector.kind)},
                   {"tau", selector.tau},
                   {"k", selector.k},
                   {"embed_dim", selector.embed_dim}};
  j["training"] = {
      {"ppo",
       {{"clip_ratio", ppo.clip_ratio},
        {"gae_lambda", ppo.gae_lambda},
        {"gamma", ppo.gamma},
        {"epochs_per_batch", ppo.epochs_per_batch},
        {"minibatch_size", ppo.minibatch_size},
        {"entropy_coef", ppo.entropy_coef},
        {"value_coef", ppo.value_coef},
        {"lr", ppo.lr},
        {"steps_per_update", ppo.steps_per_update},
        {"lambda_coh", ppo.lambda_coh},
        {"total_env_steps", ppo.total_env_steps},
        {"eval_every", ppo.eval_every},
        {"eval_episodes", ppo.eval_episodes}}},
      {"residual",
       {{"mode", residual.mode == ResidualConfig::Mode::Frozen ? "frozen" : "joint"},
        {"base", residual.base == ResidualConfig::BaseKind::Tas ? "tas" : "vanilla"},
        {"hidden", residual.hidden},
        {"rho_scale", residual.rho_scale},
        {"init_std", residual.init_std}}},
      {"finetune",
       {{"init_log_std", finetune.init_log_std},
        {"shaped_coverage_reward", finetune.shaped_coverage_reward}}},
      {"sync", {{"perturb_std", sync.perturb_std}}}};
  j["demos"] = {{"n_episodes", demos.n_episodes},
                {"keep_failures", demos.keep_failures},
                {"pause_prob", demos.imperfections.pause_prob},
                {"jitter_std", demos.imperfections.jitter_std}};
  std::string ex = "closed_loop";
  switch (eval.executor.kind) {
    case ExecutorSpec::Kind::OpenLoop: ex = "open_loop"; break;
    case ExecutorSpec::Kind::ClosedLoop: ex = "closed_loop"; break;
    case ExecutorSpec::Kind::Ema: ex = "ema"; break;
    case ExecutorSpec::Kind::Delayed: ex = "delayed"; break;
  }
  j["eval"] = {{"n_episodes", eval.n_episodes}, {"seed", eval.seed},
               {"controller", eval.controller}, {"executor", ex},
               {"h", eval.executor.h},          {"m", eval.executor.m},
               {"d", eval.executor.d},          {"residual_base", eval.residual_mode_base}};
  j["sweep"] = {{"delays", sweep.delays}};
  j["io"] = {{"out_dir", io.out_dir},
             {"dataset", io.dataset},
             {"policy", io.policy},
             {"selector", io.selector},
             {"residual", io.residual}};
  return j;
}

// Dotted-path override: "training.ppo.lr=1e-4". Values parse as JSON when
// possible, otherwise as strings.
inline void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  Json parsed;
  try {
    parsed = Json::parse(value);
  } catch (const Json::exception&) {
    parsed = value;
  }
  Json* node = &j;
  size_t start = 0;
  for (;;) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("override path has an empty segment: " + path);
    if (dot == std::string::npos) {
      (*node)[key] = parsed;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace tas
