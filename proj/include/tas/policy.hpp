#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tas/checkpoint.hpp"
#include "tas/dataset.hpp"
#include "tas/nn.hpp"

namespace tas {

enum class PolicyKind { Mlp, Cvae };

inline const char* policy_kind_name(PolicyKind k) { return k == PolicyKind::Mlp ? "mlp" : "cvae"; }

inline PolicyKind policy_kind_from_name(const std::string& s) {
  if (s == "mlp") return PolicyKind::Mlp;
  if (s == "cvae") return PolicyKind::Cvae;
  throw ParseError("unknown policy kind: " + s);
}

struct ChunkPolicyConfig {
  PolicyKind kind = PolicyKind::Mlp;
  int context_length = 2;  // c
  int chunk_length = 8;    // l
  std::vector<int> hidden = {128, 128};
  int latent_dim = 4;    // CVAE only
  double beta = 0.01;    // CVAE KL weight
  int epochs = 60;
  int batch_size = 64;
  double lr = 1e-3;

  void validate() const {
    require(context_length >= 1, "policy config: context_length must be >= 1");
    require(chunk_length >= 1, "policy config: chunk_length must be >= 1");
    require(latent_dim >= 1, "policy config: latent_dim must be >= 1");
  }
};

// Per-dimension z-scoring statistics; applied to each stacked frame.
struct NormStats {
  Vec obs_mean, obs_std;
  Vec act_mean, act_std;

  Vec normalize_obs_frame(const Vec& obs) const {
    Vec out(obs.size());
    for (size_t i = 0; i < obs.size(); ++i) out[i] = (obs[i] - obs_mean[i]) / obs_std[i];
    return out;
  }
  Vec normalize_context(const Vec& ctx) const {
    const size_t od = obs_mean.size();
    Vec out(ctx.size());
    for (size_t i = 0; i < ctx.size(); ++i) {
      const size_t d = i % od;
      out[i] = (ctx[i] - obs_mean[d]) / obs_std[d];
    }
    return out;
  }
  Vec normalize_chunk(const Vec& chunk) const {
    const size_t ad = act_mean.size();
    Vec out(chunk.size());
    for (size_t i = 0; i < chunk.size(); ++i) {
      const size_t d = i % ad;
      out[i] = (chunk[i] - act_mean[d]) / act_std[d];
    }
    return out;
  }
  Vec denormalize_chunk(const Vec& chunk_n) const {
    const size_t ad = act_mean.size();
    Vec out(chunk_n.size());
    for (size_t i = 0; i < chunk_n.size(); ++i) {
      const size_t d = i % ad;
      out[i] = chunk_n[i] * act_std[d] + act_mean[d];
    }
    return out;
  }
  Vec normalize_action(const Vec& a) const {
    Vec out(a.size());
    for (size_t i = 0; i < a.size(); ++i) out[i] = (a[i] - act_mean[i]) / act_std[i];
    return out;
  }
};

inline NormStats compute_norm_stats(const std::vector<Episode>& episodes) {
  require(!episodes.empty(), "compute_norm_stats: empty dataset");
  const size_t od = episodes[0].observations.at(0).size();
  const size_t ad = episodes[0].actions.at(0).size();
  NormStats st;
  st.obs_mean.assign(od, 0.0);
  st.obs_std.assign(od, 0.0);
  st.act_mean.assign(ad, 0.0);
  st.act_std.assign(ad, 0.0);
  size_t n = 0;
  for (const auto& ep : episodes) {
    for (const auto& o : ep.observations)
      for (size_t d = 0; d < od; ++d) st.obs_mean[d] += o[d];
    for (const auto& a : ep.actions)
      for (size_t d = 0; d < ad; ++d) st.act_mean[d] += a[d];
    n += ep.observations.size();
  }
  for (auto& v : st.obs_mean) v /= static_cast<double>(n);
  for (auto& v : st.act_mean) v /= static_cast<double>(n);
  for (const auto& ep : episodes) {
    for (const auto& o : ep.observations)
      for (size_t d = 0; d < od; ++d) st.obs_std[d] += (o[d] - st.obs_mean[d]) * (o[d] - st.obs_mean[d]);
    for (const auto& a : ep.actions)
      for (size_t d = 0; d < ad; ++d) st.act_std[d] += (a[d] - st.act_mean[d]) * (a[d] - st.act_mean[d]);
  }
  for (auto& v : st.obs_std) v = std::max(std::sqrt(v / static_cast<double>(n)), 1e-6);
  for (auto& v : st.act_std) v = std::max(std::sqrt(v / static_cast<double>(n)), 1e-6);
  return st;
}

// Action-chunk base policy pi(a_{t:t+l-1} | s_{t-c+1:t}). All network I/O is
// in normalized space; predict_chunk takes and returns raw env units.
struct ChunkPolicy {
  ChunkPolicyConfig cfg;
  NormStats stats;
  int obs_dim = 0;
  int act_dim = 0;
  MlpParams net;      // MLP kind
  MlpParams encoder;  // CVAE kind: [ctx; chunk] -> [mu; logvar]
  MlpParams decoder;  // CVAE kind: [ctx; z] -> chunk

  int context_dim() const { return cfg.context_length * obs_dim; }
  int chunk_dim() const { return cfg.chunk_length * act_dim; }

  // Flattened l x act_dim chunk in raw units. CVAE draws the latent from the
  // prior unless one is supplied.
  Vec predict_chunk(const Vec& context_raw, const Vec* latent = nullptr,
                    Rng* prior_rng = nullptr) const {
    require(static_cast<int>(context_raw.size()) == context_dim(),
            "predict_chunk: context shape mismatch");
    const Vec ctx = stats.normalize_context(context_raw);
    Vec chunk_n;
    if (cfg.kind == PolicyKind::Mlp) {
      chunk_n = mlp_forward(net, ctx);
    } else {
      Vec z(cfg.latent_dim, 0.0);
      if (latent) {
        require(static_cast<int>(latent->size()) == cfg.latent_dim,
                "predict_chunk: latent shape mismatch");
        z = *latent;
      } else if (prior_rng) {
        for (double& v : z) v = prior_rng->gaussian();
      }
      Vec in(ctx);
      in.insert(in.end(), z.begin(), z.end());
      chunk_n = mlp_forward(decoder, in);
    }
    return stats.denormalize_chunk(chunk_n);
  }
};

inline nlohmann::json policy_manifest_extra(const ChunkPolicy& p) {
  return {{"model", "chunk_policy"},
          {"kind", policy_kind_name(p.cfg.kind)},
          {"context_length", p.cfg.context_length},
          {"chunk_length", p.cfg.chunk_length},
          {"latent_dim", p.cfg.latent_dim},
          {"beta", p.cfg.beta},
          {"obs_dim", p.obs_dim},
          {"act_dim", p.act_dim},
          {"obs_mean", p.stats.obs_mean},
          {"obs_std", p.stats.obs_std},
          {"act_mean", p.stats.act_mean},
          {"act_std", p.stats.act_std}};
}

inline void save_policy(const std::string& base_path, const ChunkPolicy& p) {
  std::vector<CheckpointEntry> entries;
  if (p.cfg.kind == PolicyKind::Mlp) {
    entries = mlp_checkpoint_entries(p.net, "net");
  } else {
    entries = mlp_checkpoint_entries(p.encoder, "enc");
    auto dec = mlp_checkpoint_entries(p.decoder, "dec");
    entries.insert(entries.end(), dec.begin(), dec.end());
  }
  save_checkpoint(base_path, entries, policy_manifest_extra(p));
}

inline ChunkPolicy load_policy(const std::string& base_path) {
  const LoadedCheckpoint ck = load_checkpoint(base_path);
  ChunkPolicy p;
  const auto& m = ck.manifest;
  try {
    p.cfg.kind = policy_kind_from_name(m.at("kind").get<std::string>());
    p.cfg.context_length = m.at("context_length").get<int>();
    p.cfg.chunk_length = m.at("chunk_length").get<int>();
    p.cfg.latent_dim = m.at("latent_dim").get<int>();
    p.cfg.beta = m.at("beta").get<double>();
    p.obs_dim = m.at("obs_dim").get<int>();
    p.act_dim = m.at("act_dim").get<int>();
    p.stats.obs_mean = m.at("obs_mean").get<Vec>();
    p.stats.obs_std = m.at("obs_std").get<Vec>();
    p.stats.act_mean = m.at("act_mean").get<Vec>();
    p.stats.act_std = m.at("act_std").get<Vec>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("policy manifest: ") + e.what());
  }
  if (p.cfg.kind == PolicyKind::Mlp) {
    p.net = mlp_from_checkpoint(ck, "net");
  } else {
    p.encoder = mlp_from_checkpoint(ck, "enc");
    p.decoder = mlp_from_checkpoint(ck, "dec");
  }
  return p;
}

struct BcCurvePoint {
  int epoch = 0;
  double loss = 0.0;
};

// Behavioral cloning. MLP: mean-squared error on normalized chunks. CVAE:
// reconstruction MSE + beta * KL to the unit gaussian, reparameterized.
inline ChunkPolicy train_bc(const std::vector<Episode>& dataset, const ChunkPolicyConfig& cfg,
                            uint64_t seed, std::vector<BcCurvePoint>* curve = nullptr) {
  cfg.validate();
  require(!dataset.empty(), "train_bc: empty dataset");

  ChunkPolicy policy;
  policy.cfg = cfg;
  policy.obs_dim = static_cast<int>(dataset[0].observations.at(0).size());
  policy.act_dim = static_cast<int>(dataset[0].actions.at(0).size());
  policy.stats = compute_norm_stats(dataset);

  std::vector<ChunkPair> pairs;
  for (const auto& ep : dataset) {
    auto ps = make_chunks(ep, cfg.context_length, cfg.chunk_length);
    for (auto& pr : ps) {
      pr.context = policy.stats.normalize_context(pr.context);
      pr.chunk = policy.stats.normalize_chunk(pr.chunk);
      pairs.push_back(std::move(pr));
    }
  }
  require(!pairs.empty(), "train_bc: no chunk pairs (episodes shorter than chunk_length?)");

  Rng init_rng(derive_seed(seed, "bc.init"));
  Rng order_rng(derive_seed(seed, "bc.order"));
  Rng latent_rng(derive_seed(seed, "bc.latent"));

  const int ctx_dim = policy.context_dim();
  const int chunk_dim = policy.chunk_dim();

  Adam opt({cfg.lr, 0.9, 0.999, 1e-8});
  std::vector<size_t> order(pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  if (cfg.kind == PolicyKind::Mlp) {
    policy.net = make_mlp(ctx_dim, cfg.hidden, chunk_dim, Activation::ReLU, init_rng);
    MlpGrads grads(policy.net);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      order_rng.shuffle(order);
      double epoch_loss = 0.0;
      for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const size_t stop = std::min(order.size(), start + cfg.batch_size);
        grads.zero();
        double batch_loss = 0.0;
        for (size_t oi = start; oi < stop; ++oi) {
          const ChunkPair& pr = pairs[order[oi]];
          MlpTape tape;
          const Vec out = mlp_forward(policy.net, pr.context, &tape);
          Vec dout(out.size());
          double l = 0.0;
          for (size_t i = 0; i < out.size(); ++i) {
            const double e = out[i] - pr.chunk[i];
            l += e * e;
            dout[i] = 2.0 * e / static_cast<double>(out.size());
          }
          batch_loss += l / static_cast<double>(out.size());
          mlp_backward(policy.net, tape, dout, grads);
        }
        const double inv = 1.0 / static_cast<double>(stop - start);
        grads.scale(inv);
        epoch_loss += batch_loss;
        if (!std::isfinite(batch_loss))
          throw std::runtime_error("train_bc: NaN loss at epoch " + std::to_string(epoch));
        opt.step(mlp_tensors(policy.net, "net"), grad_tensors(grads, "net"));
      }
      if (curve) curve->push_back({epoch, epoch_loss / static_cast<double>(pairs.size())});
    }
  } else {
    policy.encoder =
        make_mlp(ctx_dim + chunk_dim, cfg.hidden, 2 * cfg.latent_dim, Activation::ReLU, init_rng);
    policy.decoder =
        make_mlp(ctx_dim + cfg.latent_dim, cfg.hidden, chunk_dim, Activation::ReLU, init_rng);
    MlpGrads enc_grads(policy.encoder), dec_grads(policy.decoder);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      order_rng.shuffle(order);
      double epoch_loss = 0.0;
      for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const size_t stop = std::min(order.size(), start + cfg.batch_size);
        enc_grads.zero();
        dec_grads.zero();
        double batch_loss = 0.0;
        for (size_t oi = start; oi < stop; ++oi) {
          const ChunkPair& pr = pairs[order[oi]];
          Vec enc_in(pr.context);
          enc_in.insert(enc_in.end(), pr.chunk.begin(), pr.chunk.end());
          MlpTape enc_tape;
          const Vec mv = mlp_forward(policy.encoder, enc_in, &enc_tape);
          const int L = cfg.latent_dim;
          Vec eps(L), z(L);
          for (int i = 0; i < L; ++i) {
            eps[i] = latent_rng.gaussian();
            z[i] = mv[i] + std::exp(0.5 * mv[L + i]) * eps[i];
          }
          Vec dec_in(pr.context);
          dec_in.insert(dec_in.end(), z.begin(), z.end());
          MlpTape dec_tape;
          const Vec recon = mlp_forward(policy.decoder, dec_in, &dec_tape);

          Vec drecon(recon.size());
          double recon_loss = 0.0;
          for (size_t i = 0; i < recon.size(); ++i) {
            const double e = recon[i] - pr.chunk[i];
            recon_loss += e * e;
            drecon[i] = 2.0 * e / static_cast<double>(recon.size());
          }
          recon_loss /= static_cast<double>(recon.size());
          double kl = 0.0;
          for (int i = 0; i < L; ++i)
            kl += -0.5 * (1.0 + mv[L + i] - mv[i] * mv[i] - std::exp(mv[L + i]));
          batch_loss += recon_loss + cfg.beta * kl;

          const Vec dec_in_grad = mlp_backward(policy.decoder, dec_tape, drecon, dec_grads);
          Vec dmv(2 * L, 0.0);
          for (int i = 0; i < L; ++i) {
            const double dz = dec_in_grad[ctx_dim + i];
            dmv[i] = dz + cfg.beta * mv[i];  // d/dmu of recon path + KL
            dmv[L + i] = dz * eps[i] * 0.5 * std::exp(0.5 * mv[L + i]) +
                         cfg.beta * (-0.5) * (1.0 - std::exp(mv[L + i]));
          }
          mlp_backward(policy.encoder, enc_tape, dmv, enc_grads);
        }
        const double inv = 1.0 / static_cast<double>(stop - start);
        enc_grads.scale(inv);
        dec_grads.scale(inv);
        epoch_loss += batch_loss;
        if (!std::isfinite(batch_loss))
          throw std::runtime_error("train_bc: NaN loss at epoch " + std::to_string(epoch));
        auto params = mlp_tensors(policy.encoder, "enc");
        auto dparams = grad_tensors(enc_grads, "enc");
        auto dec_params = mlp_tensors(policy.decoder, "dec");
        auto dec_dparams = grad_tensors(dec_grads, "dec");
        params.insert(params.end(), dec_params.begin(), dec_params.end());
        dparams.insert(dparams.end(), dec_dparams.begin(), dec_dparams.end());
        opt.step(params, dparams);
      }
      if (curve) curve->push_back({epoch, epoch_loss / static_cast<double>(pairs.size())});
    }
  }
  return policy;
}

}  // namespace tas
