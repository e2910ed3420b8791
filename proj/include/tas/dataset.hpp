#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <future>
#include <string>
#include <vector>

#include <json.hpp>

#include "tas/envs.hpp"
#include "tas/experts.hpp"

namespace tas {

struct Episode {
  std::vector<Vec> observations;  // T x obs_dim, as seen by the policy
  std::vector<Vec> actions;       // T x act_dim, as executed
  uint64_t seed = 0;
  bool success = false;
  std::string env_name;
  double episode_return = 0.0;
  double max_coverage = 0.0;  // PushT2D only

  // executor instrumentation: chunk origin timestep and chunk row of every
  // executed action
  std::vector<int> source_origin;
  std::vector<int> source_row;

  int length() const { return static_cast<int>(actions.size()); }
};

// Stacked context s_{t-c+1:t}, oldest first, padded by repeating the first
// observation before episode start.
inline Vec stack_context(const std::vector<Vec>& obs_history, int t, int c) {
  require(c >= 1, "stack_context: context length must be >= 1");
  require(t >= 0 && t < static_cast<int>(obs_history.size()), "stack_context: t out of range");
  const int od = static_cast<int>(obs_history[0].size());
  Vec ctx(static_cast<size_t>(c) * od);
  for (int i = 0; i < c; ++i) {
    const int src = std::max(0, t - c + 1 + i);
    std::copy(obs_history[src].begin(), obs_history[src].end(), ctx.begin() + static_cast<size_t>(i) * od);
  }
  return ctx;
}

struct ChunkPair {
  Vec context;  // c * obs_dim
  Vec chunk;    // l * act_dim, flattened row-major
};

inline std::vector<ChunkPair> make_chunks(const Episode& ep, int c, int l) {
  require(c >= 1 && l >= 1, "make_chunks: c and l must be >= 1");
  std::vector<ChunkPair> out;
  const int T = ep.length();
  if (T < l) return out;
  const int ad = T > 0 ? static_cast<int>(ep.actions[0].size()) : 0;
  for (int t = 0; t + l <= T; ++t) {
    ChunkPair pair;
    pair.context = stack_context(ep.observations, t, c);
    pair.chunk.resize(static_cast<size_t>(l) * ad);
    for (int j = 0; j < l; ++j)
      std::copy(ep.actions[t + j].begin(), ep.actions[t + j].end(),
                pair.chunk.begin() + static_cast<size_t>(j) * ad);
    out.push_back(std::move(pair));
  }
  return out;
}

inline nlohmann::json episode_to_json(const Episode& ep) {
  nlohmann::json j;
  j["obs"] = ep.observations;
  j["act"] = ep.actions;
  j["meta"] = {{"seed", ep.seed}, {"success", ep.success}, {"env", ep.env_name}};
  return j;
}

inline Episode episode_from_json(const nlohmann::json& j) {
  Episode ep;
  for (const auto& row : j.at("obs")) ep.observations.push_back(row.get<Vec>());
  for (const auto& row : j.at("act")) ep.actions.push_back(row.get<Vec>());
  ep.seed = j.at("meta").at("seed").get<uint64_t>();
  ep.success = j.at("meta").at("success").get<bool>();
  ep.env_name = j.at("meta").at("env").get<std::string>();
  if (ep.observations.size() != ep.actions.size())
    throw ParseError("episode record: obs/act length mismatch");
  return ep;
}

inline void write_dataset(const std::string& path, const std::vector<Episode>& episodes) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  for (const auto& ep : episodes) out << episode_to_json(ep).dump() << "\n";
}

inline std::vector<Episode> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read dataset: " + path);
  std::vector<Episode> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(episode_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// One scripted-expert rollout. The expert acts on the true state; the stored
// observations are what the env emits (noise included).
inline Episode run_expert_episode(Env& env, ExpertImperfections imp, uint64_t seed) {
  auto expert = make_expert(env);
  ImperfectExpert wrapped(*expert, imp);
  wrapped.begin_episode(seed);

  Episode ep;
  ep.seed = seed;
  ep.env_name = env.name();
  Vec obs = env.reset(seed);
  while (!env.done()) {
    const Vec action = wrapped.act(env);
    ep.observations.push_back(obs);
    ep.actions.push_back(action);
    StepResult res = env.step(action);
    ep.episode_return += res.reward;
    ep.max_coverage = std::max(ep.max_coverage, res.coverage);
    ep.success = res.success;
    obs = res.observation;
  }
  return ep;
}

// n_episodes attempts with per-index seeds; failures dropped unless kept.
// Parallel over episodes, output order is by episode index regardless of
// scheduling.
inline std::vector<Episode> generate_demos(const Env& proto, ExpertImperfections imp, int n_episodes,
                                           bool keep_failures, uint64_t master_seed, int jobs = 1) {
  require(n_episodes >= 1, "generate_demos: n_episodes must be >= 1");
  std::vector<Episode> all(static_cast<size_t>(n_episodes));
  jobs = std::max(1, jobs);
  std::vector<std::future<void>> workers;
  std::atomic<int> next{0};
  auto work = [&]() {
    auto env = proto.fresh();
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n_episodes) break;
      all[i] = run_expert_episode(*env, imp, derive_seed(master_seed, "demo", i));
    }
  };
  if (jobs == 1) {
    work();
  } else {
    for (int w = 0; w < jobs; ++w) workers.push_back(std::async(std::launch::async, work));
    for (auto& f : workers) f.get();
  }
  std::vector<Episode> out;
  for (auto& ep : all)
    if (ep.success || keep_failures) out.push_back(std::move(ep));
  return out;
}

}  // namespace tas
