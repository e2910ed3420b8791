#pragma once

#include <deque>
#include <functional>
#include <optional>

#include "tas/checkpoint.hpp"
#include "tas/executors.hpp"
#include "tas/policy.hpp"

namespace tas {

// l actions predicted at one origin timestep; actions[k] targets origin_t + k.
struct ActionChunk {
  int origin_t = 0;
  std::vector<Vec> actions;
};

// Ring of the last k chunks, newest first, consecutive origins.
class ActionCache {
 public:
  explicit ActionCache(int capacity) : capacity_(capacity) {
    require(capacity >= 1, "ActionCache: capacity must be >= 1");
  }

  void push(ActionChunk chunk) {
    require(chunks_.empty() || chunk.origin_t == chunks_.front().origin_t + 1,
            "cache_push: out-of-order origin " + std::to_string(chunk.origin_t));
    chunks_.push_front(std::move(chunk));
    if (static_cast<int>(chunks_.size()) > capacity_) chunks_.pop_back();
  }

  int capacity() const { return capacity_; }
  int size() const { return static_cast<int>(chunks_.size()); }
  bool empty() const { return chunks_.empty(); }
  int newest_origin() const {
    require(!chunks_.empty(), "ActionCache: empty");
    return chunks_.front().origin_t;
  }
  // aged i = chunk predicted i steps ago
  const ActionChunk& aged(int i) const { return chunks_.at(i); }
  void clear() { chunks_.clear(); }

 private:
  int capacity_;
  std::deque<ActionChunk> chunks_;
};

// A_t = {a_t^0, a_{t-1}^1, ..., a_{t-k+1}^{k-1}}, newest first. Cold-start
// entries are masked invalid and padded with candidate 0 so every selector
// sees fixed-width input.
struct CandidateSet {
  int t = 0;
  std::vector<Vec> candidates;
  std::vector<bool> valid;

  int k() const { return static_cast<int>(candidates.size()); }
  int valid_count() const {
    int n = 0;
    for (bool v : valid) n += v ? 1 : 0;
    return n;
  }
  Vec flattened() const {
    Vec out;
    for (const auto& c : candidates) out.insert(out.end(), c.begin(), c.end());
    return out;
  }
};

inline CandidateSet candidates(const ActionCache& cache, int t) {
  require(!cache.empty(), "candidates: cache is empty");
  require(cache.newest_origin() == t, "candidates: cache newest origin != t");
  CandidateSet set;
  set.t = t;
  const int k = cache.capacity();
  for (int i = 0; i < k; ++i) {
    if (i < cache.size() && t - i >= 0) {
      const ActionChunk& ch = cache.aged(i);
      require(ch.origin_t == t - i, "candidates: cache origins not consecutive");
      require(i < static_cast<int>(ch.actions.size()), "candidates: chunk shorter than cache age");
      set.candidates.push_back(ch.actions[i]);
      set.valid.push_back(true);
    } else {
      set.candidates.push_back(cache.aged(0).actions[0]);
      set.valid.push_back(false);
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// Selector architectures
// ---------------------------------------------------------------------------

enum class SelectorKind { SpaceAware, ImplicitMlp, ExplicitMlp };

inline const char* selector_kind_name(SelectorKind k) {
  switch (k) {
    case SelectorKind::SpaceAware: return "space_aware";
    case SelectorKind::ImplicitMlp: return "implicit_mlp";
    default: return "explicit_mlp";
  }
}

inline SelectorKind selector_kind_from_name(const std::string& s) {
  if (s == "space_aware") return SelectorKind::SpaceAware;
  if (s == "implicit_mlp") return SelectorKind::ImplicitMlp;
  if (s == "explicit_mlp") return SelectorKind::ExplicitMlp;
  throw ParseError("unknown selector kind: " + s);
}

struct SelectorParams {
  SelectorKind kind = SelectorKind::SpaceAware;
  double tau = 1.0;
  int k = 8;
  int obs_dim = 0;
  int act_dim = 0;
  int embed_dim = 64;
  MlpParams phi;  // space-aware query encoder: [s_t; flat A_t] -> embed
  MlpParams psi;  // space-aware key encoder: candidate -> embed
  MlpParams net;  // implicit: [s_t; flat A_t; a^i] -> 1; explicit: [s_t; flat A_t] -> k
  NormStats stats;

  int input_dim() const { return obs_dim + k * act_dim; }

  std::vector<TensorRef> tensors() {
    if (kind == SelectorKind::SpaceAware) {
      auto out = mlp_tensors(phi, "phi");
      auto keys = mlp_tensors(psi, "psi");
      out.insert(out.end(), keys.begin(), keys.end());
      return out;
    }
    return mlp_tensors(net, "net");
  }
};

inline NormStats identity_stats(int obs_dim, int act_dim) {
  NormStats st;
  st.obs_mean.assign(obs_dim, 0.0);
  st.obs_std.assign(obs_dim, 1.0);
  st.act_mean.assign(act_dim, 0.0);
  st.act_std.assign(act_dim, 1.0);
  return st;
}

// Spec'd defaults: phi/psi [.. -> 128 -> 64] tanh, MLP selectors
// [.. -> 256 -> 128 -> head] relu.
inline SelectorParams make_selector(SelectorKind kind, int k, int obs_dim, int act_dim,
                                    const NormStats& stats, Rng& rng, double tau = 1.0,
                                    int embed_dim = 64) {
  SelectorParams sel;
  sel.kind = kind;
  sel.tau = tau;
  sel.k = k;
  sel.obs_dim = obs_dim;
  sel.act_dim = act_dim;
  sel.embed_dim = embed_dim;
  sel.stats = stats;
  const int in = sel.input_dim();
  switch (kind) {
    case SelectorKind::SpaceAware:
      sel.phi = make_mlp({in, 128, embed_dim}, {Activation::Tanh, Activation::Tanh}, rng);
      sel.psi = make_mlp({act_dim, 128, embed_dim}, {Activation::Tanh, Activation::Tanh}, rng);
      break;
    case SelectorKind::ImplicitMlp:
      sel.net = make_mlp(in + act_dim, {256, 128}, 1, Activation::ReLU, rng);
      break;
    case SelectorKind::ExplicitMlp:
      sel.net = make_mlp(in, {256, 128}, k, Activation::ReLU, rng);
      break;
  }
  return sel;
}

struct SelectorGrads {
  std::optional<MlpGrads> phi, psi, net;

  explicit SelectorGrads(const SelectorParams& p) {
    if (p.kind == SelectorKind::SpaceAware) {
      phi.emplace(p.phi);
      psi.emplace(p.psi);
    } else {
      net.emplace(p.net);
    }
  }

  void zero() {
    if (phi) phi->zero();
    if (psi) psi->zero();
    if (net) net->zero();
  }

  std::vector<TensorRef> tensors() {
    if (phi) {
      auto out = grad_tensors(*phi, "phi");
      auto keys = grad_tensors(*psi, "psi");
      out.insert(out.end(), keys.begin(), keys.end());
      return out;
    }
    return grad_tensors(*net, "net");
  }
};

// Forward caches for selector_backward.
struct ScoreTape {
  Vec selector_input;             // normalized [s_t; flat A_t]
  std::vector<Vec> cand_norm;     // normalized candidates
  MlpTape phi_tape;
  std::vector<MlpTape> psi_tapes;
  Vec query;
  std::vector<Vec> keys;
  std::vector<MlpTape> net_tapes;  // implicit: per candidate; explicit: single
};

// Raw scores per candidate: cosine similarities (space-aware, in [-1,1]),
// scalar net outputs (implicit), or logits (explicit). Masked entries are
// handled later by select_probs.
inline Vec selector_scores(const SelectorParams& sel, const Vec& s_t, const CandidateSet& cands,
                           ScoreTape* tape = nullptr) {
  require(cands.k() == sel.k, "selector_scores: candidate count != k");
  require(static_cast<int>(s_t.size()) == sel.obs_dim, "selector_scores: observation dim mismatch");
  const Vec s_norm = sel.stats.normalize_obs_frame(s_t);
  std::vector<Vec> cand_norm;
  cand_norm.reserve(cands.k());
  for (const auto& c : cands.candidates) cand_norm.push_back(sel.stats.normalize_action(c));

  Vec input(s_norm);
  for (const auto& c : cand_norm) input.insert(input.end(), c.begin(), c.end());
  if (tape) {
    tape->selector_input = input;
    tape->cand_norm = cand_norm;
    tape->psi_tapes.clear();
    tape->net_tapes.clear();
    tape->keys.clear();
  }

  Vec scores(sel.k, 0.0);
  switch (sel.kind) {
    case SelectorKind::SpaceAware: {
      MlpTape phi_tape;
      const Vec q = mlp_forward(sel.phi, input, &phi_tape);
      const double qn = norm2(q);
      for (int i = 0; i < sel.k; ++i) {
        MlpTape psi_tape;
        const Vec key = mlp_forward(sel.psi, cand_norm[i], &psi_tape);
        const double kn = norm2(key);
        // zero-norm embeddings score 0 instead of dividing by zero
        scores[i] = (qn > 0.0 && kn > 0.0) ? dot(q, key) / (qn * kn) : 0.0;
        if (tape) {
          tape->psi_tapes.push_back(std::move(psi_tape));
          tape->keys.push_back(key);
        }
      }
      if (tape) {
        tape->phi_tape = std::move(phi_tape);
        tape->query = q;
      }
      break;
    }
    case SelectorKind::ImplicitMlp: {
      for (int i = 0; i < sel.k; ++i) {
        Vec in(input);
        in.insert(in.end(), cand_norm[i].begin(), cand_norm[i].end());
        MlpTape t;
        scores[i] = mlp_forward(sel.net, in, &t)[0];
        if (tape) tape->net_tapes.push_back(std::move(t));
      }
      break;
    }
    case SelectorKind::ExplicitMlp: {
      MlpTape t;
      scores = mlp_forward(sel.net, input, &t);
      if (tape) tape->net_tapes.push_back(std::move(t));
      break;
    }
  }
  return scores;
}

// Accumulates d(loss)/d(params) given d(loss)/d(scores).
inline void selector_backward(const SelectorParams& sel, const ScoreTape& tape, const Vec& dscores,
                              SelectorGrads& grads) {
  require(static_cast<int>(dscores.size()) == sel.k, "selector_backward: dscores size mismatch");
  switch (sel.kind) {
    case SelectorKind::SpaceAware: {
      const Vec& q = tape.query;
      const double qn = norm2(q);
      Vec dq(q.size(), 0.0);
      for (int i = 0; i < sel.k; ++i) {
        if (dscores[i] == 0.0) continue;
        const Vec& key = tape.keys[i];
        const double kn = norm2(key);
        if (qn == 0.0 || kn == 0.0) continue;  // score pinned to 0
        const double qk = dot(q, key);
        const double inv = 1.0 / (qn * kn);
        Vec dkey(key.size());
        for (size_t j = 0; j < q.size(); ++j) {
          dq[j] += dscores[i] * (key[j] * inv - qk * q[j] / (qn * qn * qn * kn));
          dkey[j] = dscores[i] * (q[j] * inv - qk * key[j] / (kn * kn * kn * qn));
        }
        mlp_backward(sel.psi, tape.psi_tapes[i], dkey, *grads.psi);
      }
      mlp_backward(sel.phi, tape.phi_tape, dq, *grads.phi);
      break;
    }
    case SelectorKind::ImplicitMlp: {
      for (int i = 0; i < sel.k; ++i) {
        if (dscores[i] == 0.0) continue;
        mlp_backward(sel.net, tape.net_tapes[i], {dscores[i]}, *grads.net);
      }
      break;
    }
    case SelectorKind::ExplicitMlp: {
      mlp_backward(sel.net, tape.net_tapes[0], dscores, *grads.net);
      break;
    }
  }
}

// Scaled softmax over valid candidates; masked entries are exactly 0.
inline Vec select_probs(const Vec& scores, double tau, const std::vector<bool>& mask) {
  require(tau > 0.0, "select_probs: tau must be > 0");
  require(scores.size() == mask.size(), "select_probs: mask size mismatch");
  double best = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < scores.size(); ++i)
    if (mask[i]) best = std::max(best, scores[i] / tau);
  if (!std::isfinite(best)) throw ContractError("select_probs: all candidates masked");
  Vec probs(scores.size(), 0.0);
  double z = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!mask[i]) continue;
    probs[i] = std::exp(scores[i] / tau - best);
    z += probs[i];
  }
  for (double& p : probs) p /= z;
  return probs;
}

// Categorical draw; also returns ln P(chosen) for the policy gradient.
inline std::pair<int, double> sample_action(const Vec& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  int chosen = -1;
  for (size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    if (u < acc) {
      chosen = static_cast<int>(i);
      break;
    }
  }
  if (chosen < 0) {  // numerical tail
    for (int i = static_cast<int>(probs.size()) - 1; i >= 0; --i)
      if (probs[i] > 0.0) {
        chosen = i;
        break;
      }
  }
  return {chosen, std::log(probs[chosen])};
}

// Smallest index attaining the max (most recent candidate wins ties).
inline int argmax_action(const Vec& probs) {
  int best = 0;
  for (size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = static_cast<int>(i);
  return best;
}

// Selector checkpoints: nn-core format plus kind/tau metadata.
inline void save_selector(const std::string& base_path, const SelectorParams& sel) {
  nlohmann::json extra = {{"model", "selector"},
                          {"kind", selector_kind_name(sel.kind)},
                          {"tau", sel.tau},
                          {"k", sel.k},
                          {"obs_dim", sel.obs_dim},
                          {"act_dim", sel.act_dim},
                          {"embed_dim", sel.embed_dim},
                          {"obs_mean", sel.stats.obs_mean},
                          {"obs_std", sel.stats.obs_std},
                          {"act_mean", sel.stats.act_mean},
                          {"act_std", sel.stats.act_std}};
  std::vector<CheckpointEntry> entries;
  if (sel.kind == SelectorKind::SpaceAware) {
    entries = mlp_checkpoint_entries(sel.phi, "phi");
    auto keys = mlp_checkpoint_entries(sel.psi, "psi");
    entries.insert(entries.end(), keys.begin(), keys.end());
  } else {
    entries = mlp_checkpoint_entries(sel.net, "net");
  }
  save_checkpoint(base_path, entries, extra);
}

inline SelectorParams load_selector(const std::string& base_path) {
  const LoadedCheckpoint ck = load_checkpoint(base_path);
  SelectorParams sel;
  try {
    const auto& m = ck.manifest;
    sel.kind = selector_kind_from_name(m.at("kind").get<std::string>());
    sel.tau = m.at("tau").get<double>();
    sel.k = m.at("k").get<int>();
    sel.obs_dim = m.at("obs_dim").get<int>();
    sel.act_dim = m.at("act_dim").get<int>();
    sel.embed_dim = m.at("embed_dim").get<int>();
    sel.stats.obs_mean = m.at("obs_mean").get<Vec>();
    sel.stats.obs_std = m.at("obs_std").get<Vec>();
    sel.stats.act_mean = m.at("act_mean").get<Vec>();
    sel.stats.act_std = m.at("act_std").get<Vec>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("selector manifest: ") + e.what());
  }
  if (sel.kind == SelectorKind::SpaceAware) {
    sel.phi = mlp_from_checkpoint(ck, "phi");
    sel.psi = mlp_from_checkpoint(ck, "psi");
  } else {
    sel.net = mlp_from_checkpoint(ck, "net");
  }
  return sel;
}

// ---------------------------------------------------------------------------
// TAS execution
// ---------------------------------------------------------------------------

struct TasStep {
  Vec executed;
  int selected = 0;
  double log_prob = 0.0;
  Vec probs;
  Vec scores;
  CandidateSet cands;
};

inline ActionChunk to_chunk(const Vec& chunk_flat, int origin_t, int l, int act_dim) {
  ActionChunk ch;
  ch.origin_t = origin_t;
  for (int j = 0; j < l; ++j)
    ch.actions.push_back(Vec(chunk_flat.begin() + static_cast<size_t>(j) * act_dim,
                             chunk_flat.begin() + static_cast<size_t>(j + 1) * act_dim));
  return ch;
}

// Predict, cache, build candidates, score, pick. In train mode the index is
// sampled; in deploy mode argmax. `force` overrides the pick (tests and
// schedule replays).
inline TasStep tas_step(const ChunkPolicy& policy, const SelectorParams& sel, ActionCache& cache,
                        const std::vector<Vec>& history, int t, bool deploy, uint64_t episode_seed,
                        Rng* sample_rng, const std::function<int(int)>* force = nullptr) {
  const Vec chunk = detail::predict_at(policy, history, t, episode_seed);
  cache.push(to_chunk(chunk, t, policy.cfg.chunk_length, policy.act_dim));
  TasStep out;
  out.cands = candidates(cache, t);
  out.scores = selector_scores(sel, history[t], out.cands);
  out.probs = select_probs(out.scores, sel.tau, out.cands.valid);
  if (force) {
    out.selected = (*force)(t);
    require(out.selected >= 0 && out.selected < out.cands.k(), "tas_step: forced index out of range");
    out.log_prob = out.probs[out.selected] > 0.0 ? std::log(out.probs[out.selected])
                                                 : -std::numeric_limits<double>::infinity();
  } else if (deploy) {
    out.selected = argmax_action(out.probs);
    out.log_prob = std::log(out.probs[out.selected]);
  } else {
    require(sample_rng != nullptr, "tas_step: train mode needs a sampling rng");
    auto [idx, lp] = sample_action(out.probs, *sample_rng);
    out.selected = idx;
    out.log_prob = lp;
  }
  out.executed = out.cands.candidates[out.selected];
  return out;
}

// Per-step selection provenance for analytics.
struct SelectionTrace {
  std::vector<int> selected;
  std::vector<int> source_origin;
  std::vector<int> valid_count;
};

inline Episode run_tas_episode(const ChunkPolicy& policy, const SelectorParams& sel, Env& env,
                               uint64_t seed, bool deploy = true,
                               const std::function<int(int)>* force = nullptr,
                               SelectionTrace* trace = nullptr) {
  Episode ep;
  ep.seed = seed;
  ep.env_name = env.name();
  std::vector<Vec> history;
  history.push_back(env.reset(seed));
  ActionCache cache(sel.k);
  Rng sample_rng(derive_seed(seed, "tas.sample"));
  int t = 0;
  while (!env.done()) {
    const TasStep step = tas_step(policy, sel, cache, history, t, deploy, seed, &sample_rng, force);
    ep.observations.push_back(history.back());
    ep.actions.push_back(step.executed);
    ep.source_origin.push_back(t - step.selected);
    ep.source_row.push_back(step.selected);
    if (trace) {
      trace->selected.push_back(step.selected);
      trace->source_origin.push_back(t - step.selected);
      trace->valid_count.push_back(step.cands.valid_count());
    }
    StepResult res = env.step(step.executed);
    ep.episode_return += res.reward;
    ep.max_coverage = std::max(ep.max_coverage, res.coverage);
    ep.success = res.success;
    history.push_back(res.observation);
    ++t;
  }
  return ep;
}

}  // namespace tas
