// tas: desk-scale lab for temporal action selection on chunk policies.
// Single binary; every subcommand reads one JSON config, applies --set
// overrides, and writes deterministic outputs plus a resolved-config snapshot
// under io.out_dir.

#include <chrono>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "tas/analytics.hpp"
#include "tas/config.hpp"
#include "tas/train.hpp"

namespace {

constexpr const char* kVersion = "0.2.0";

struct CommandContext {
  tas::RunConfig cfg;
  tas::Json resolved;
  std::string command;
  int jobs = 1;
  std::vector<std::string> produced;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  std::string out(const std::string& rel) const { return cfg.io.out_dir + "/" + rel; }

  void track(const std::string& path) { produced.push_back(path); }

  void write_snapshot_and_manifest() {
    tas::write_text_file(out("resolved_config.json"), resolved.dump(2) + "\n");
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    tas::Json manifest = {{"command", command},
                          {"version", kVersion},
                          {"files", produced},
                          {"wall_clock_seconds", secs}};
    tas::write_text_file(out("run_manifest.json"), manifest.dump(2) + "\n");
  }
};

CommandContext load_context(const std::string& config_path,
                            const std::vector<std::string>& overrides, const std::string& command,
                            int jobs) {
  std::ifstream in(config_path);
  if (!in) throw tas::ConfigError("cannot open config file: " + config_path);
  tas::Json j;
  try {
    in >> j;
  } catch (const tas::Json::exception& e) {
    throw tas::ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  for (const auto& ov : overrides) tas::apply_override(j, ov);
  CommandContext ctx;
  ctx.cfg = tas::RunConfig::from_json(j);
  ctx.resolved = ctx.cfg.to_json();
  ctx.command = command;
  ctx.jobs = jobs;
  return ctx;
}

void require_artifact(const std::string& path) {
  if (!std::filesystem::exists(path))
    throw std::runtime_error("missing artifact: expected " + path);
}

void require_checkpoint(const std::string& base) {
  require_artifact(base + ".manifest.json");
  require_artifact(base + ".weights.bin");
}

std::string executor_label(const tas::ExecutorSpec& spec) {
  using K = tas::ExecutorSpec::Kind;
  switch (spec.kind) {
    case K::OpenLoop: return "open_loop_h" + std::to_string(spec.h);
    case K::ClosedLoop: return "closed_loop";
    case K::Ema: {
      std::ostringstream s;
      s << "ema_m" << spec.m;
      return s.str();
    }
    default: return "delayed_d" + std::to_string(spec.d);
  }
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_gen_demos(CommandContext& ctx) {
  auto env = ctx.cfg.make_env();
  const uint64_t seed = tas::derive_seed(ctx.cfg.master_seed, "demo-gen");
  auto demos = tas::generate_demos(*env, ctx.cfg.demos.imperfections, ctx.cfg.demos.n_episodes,
                                   ctx.cfg.demos.keep_failures, seed, ctx.jobs);
  if (demos.empty()) throw std::runtime_error("gen-demos: no successful episodes to store");
  tas::write_dataset(ctx.cfg.io.dataset, demos);
  ctx.track(ctx.cfg.io.dataset);

  double mean_len = 0.0;
  int successes = 0;
  for (const auto& ep : demos) {
    mean_len += ep.length();
    successes += ep.success ? 1 : 0;
  }
  mean_len /= static_cast<double>(demos.size());
  tas::Json stats = {{"episodes_attempted", ctx.cfg.demos.n_episodes},
                     {"episodes_stored", demos.size()},
                     {"successes", successes},
                     {"mean_length", mean_len}};
  tas::write_text_file(ctx.out("demo_stats.json"), stats.dump(2) + "\n");
  ctx.track(ctx.out("demo_stats.json"));
  std::cout << "gen-demos: stored " << demos.size() << " episodes (mean length " << mean_len
            << ") -> " << ctx.cfg.io.dataset << "\n";
  return 0;
}

int cmd_train_bc(CommandContext& ctx) {
  require_artifact(ctx.cfg.io.dataset);
  const auto dataset = tas::read_dataset(ctx.cfg.io.dataset);
  std::vector<tas::BcCurvePoint> curve;
  const uint64_t seed = tas::derive_seed(ctx.cfg.master_seed, "bc");
  tas::ChunkPolicy policy = tas::train_bc(dataset, ctx.cfg.policy, seed, &curve);
  tas::save_policy(ctx.cfg.io.policy, policy);
  ctx.track(ctx.cfg.io.policy + ".manifest.json");
  ctx.track(ctx.cfg.io.policy + ".weights.bin");

  std::ostringstream csv;
  csv << "epoch,loss\n" << std::setprecision(17);
  for (const auto& p : curve) csv << p.epoch << "," << p.loss << "\n";
  tas::write_text_file(ctx.out("bc_curve.csv"), csv.str());
  ctx.track(ctx.out("bc_curve.csv"));
  std::cout << "train-bc: " << dataset.size() << " episodes, final loss "
            << (curve.empty() ? 0.0 : curve.back().loss) << " -> " << ctx.cfg.io.policy << "\n";
  return 0;
}

int cmd_train_tas(CommandContext& ctx) {
  require_checkpoint(ctx.cfg.io.policy);
  const tas::ChunkPolicy policy = tas::load_policy(ctx.cfg.io.policy);
  auto env = ctx.cfg.make_env();
  const uint64_t seed = tas::derive_seed(ctx.cfg.master_seed, "tas-train");
  tas::Rng init(tas::derive_seed(seed, "selector.init"));
  tas::SelectorParams selector =
      tas::make_selector(ctx.cfg.selector.kind, ctx.cfg.selector.k, policy.obs_dim, policy.act_dim,
                         policy.stats, init, ctx.cfg.selector.tau, ctx.cfg.selector.embed_dim);
  auto ckpt = [&](long) { tas::save_selector(ctx.cfg.io.selector, selector); };
  const tas::TrainResult res = tas::train_tas(*env, policy, selector, ctx.cfg.ppo, seed, ckpt);
  tas::save_selector(ctx.cfg.io.selector, selector);
  ctx.track(ctx.cfg.io.selector + ".manifest.json");
  ctx.track(ctx.cfg.io.selector + ".weights.bin");
  tas::write_curve_csv(ctx.out("tas_curve.csv"), res.curve);
  ctx.track(ctx.out("tas_curve.csv"));
  std::cout << "train-tas: " << res.env_steps << " env steps, final eval SR " << res.final_eval_sr
            << " -> " << ctx.cfg.io.selector << "\n";
  return 0;
}

int cmd_train_finetune(CommandContext& ctx) {
  require_checkpoint(ctx.cfg.io.policy);
  tas::ChunkPolicy policy = tas::load_policy(ctx.cfg.io.policy);
  auto env = ctx.cfg.make_env();
  const uint64_t seed = tas::derive_seed(ctx.cfg.master_seed, "finetune");
  const std::string out_base = ctx.out("finetuned_policy");
  auto ckpt = [&](long) { tas::save_policy(out_base, policy); };
  const tas::TrainResult res =
      tas::finetune_base(*env, policy, ctx.cfg.ppo, seed, ckpt, ctx.cfg.finetune);
  tas::save_policy(out_base, policy);
  ctx.track(out_base + ".manifest.json");
  ctx.track(out_base + ".weights.bin");
  tas::write_curve_csv(ctx.out("finetune_curve.csv"), res.curve);
  ctx.track(ctx.out("finetune_curve.csv"));
  std::cout << "train-finetune: " << res.env_steps << " env steps, final eval SR "
            << res.final_eval_sr << " -> " << out_base << "\n";
  return 0;
}

int cmd_train_residual(CommandContext& ctx) {
  require_checkpoint(ctx.cfg.io.policy);
  const tas::ChunkPolicy policy = tas::load_policy(ctx.cfg.io.policy);
  auto env = ctx.cfg.make_env();
  const uint64_t seed = tas::derive_seed(ctx.cfg.master_seed, "residual");

  std::optional<tas::SelectorParams> selector;
  if (ctx.cfg.residual.base == tas::ResidualConfig::BaseKind::Tas) {
    require_checkpoint(ctx.cfg.io.selector);
    selector = tas::load_selector(ctx.cfg.io.selector);
  }
  tas::Rng init(tas::derive_seed(seed, "residual.init"));
  tas::ResidualPolicy residual = tas::make_residual_policy(
      ctx.cfg.residual, policy.stats, policy.obs_dim, policy.act_dim, env->action_limit(), init);

  auto ckpt = [&](long) { tas::save_residual(ctx.cfg.io.residual, residual); };
  const tas::TrainResult res =
      tas::train_residual(*env, policy, selector ? &*selector : nullptr, residual, ctx.cfg.residual,
                          ctx.cfg.ppo, seed, ckpt);
  tas::save_residual(ctx.cfg.io.residual, residual);
  ctx.track(ctx.cfg.io.residual + ".manifest.json");
  ctx.track(ctx.cfg.io.residual + ".weights.bin");
  if (ctx.cfg.residual.mode == tas::ResidualConfig::Mode::Joint) {
    tas::save_selector(ctx.out("selector_joint"), *selector);
    ctx.track(ctx.out("selector_joint.manifest.json"));
    ctx.track(ctx.out("selector_joint.weights.bin"));
  }
  tas::write_curve_csv(ctx.out("residual_curve.csv"), res.curve);
  ctx.track(ctx.out("residual_curve.csv"));
  std::cout << "train-residual: " << res.env_steps << " env steps, final eval SR "
            << res.final_eval_sr << " -> " << ctx.cfg.io.residual << "\n";
  return 0;
}

int cmd_train_sync_ablation(CommandContext& ctx) {
  require_checkpoint(ctx.cfg.io.policy);
  const tas::ChunkPolicy policy = tas::load_policy(ctx.cfg.io.policy);
  auto env = ctx.cfg.make_env();
  const uint64_t seed = tas::derive_seed(ctx.cfg.master_seed, "sync-ablation");
  tas::Rng init(tas::derive_seed(seed, "selector.init"));
  tas::SelectorParams selector =
      tas::make_selector(ctx.cfg.selector.kind, ctx.cfg.selector.k, policy.obs_dim, policy.act_dim,
                         policy.stats, init, ctx.cfg.selector.tau, ctx.cfg.selector.embed_dim);
  const std::string out_base = ctx.out("selector_sync");
  auto ckpt = [&](long) { tas::save_selector(out_base, selector); };
  const tas::TrainResult res =
      tas::train_sync_ablation(*env, policy, selector, ctx.cfg.ppo, seed, ckpt, ctx.cfg.sync);
  tas::save_selector(out_base, selector);
  ctx.track(out_base + ".manifest.json");
  ctx.track(out_base + ".weights.bin");
  tas::write_curve_csv(ctx.out("sync_curve.csv"), res.curve);
  ctx.track(ctx.out("sync_curve.csv"));
  std::cout << "train-sync-ablation: " << res.env_steps << " env steps, final eval SR "
            << res.final_eval_sr << " -> " << out_base << "\n";
  return 0;
}

tas::Controller make_controller(const CommandContext& ctx, const tas::ChunkPolicy& policy,
                                std::string& label) {
  const auto& ev = ctx.cfg.eval;
  if (ev.controller == "executor") {
    label = executor_label(ev.executor);
    const tas::ExecutorSpec spec = ev.executor;
    return [&policy, spec](tas::Env& env, uint64_t seed) {
      return tas::run_executor(policy, env, spec, seed);
    };
  }
  if (ev.controller == "tas") {
    label = "tas";
    auto selector = std::make_shared<tas::SelectorParams>(tas::load_selector(ctx.cfg.io.selector));
    return [&policy, selector](tas::Env& env, uint64_t seed) {
      return tas::run_tas_episode(policy, *selector, env, seed, true);
    };
  }
  if (ev.controller == "sync") {
    label = "sync";
    auto selector =
        std::make_shared<tas::SelectorParams>(tas::load_selector(ctx.out("selector_sync")));
    const double sigma = ctx.cfg.sync.perturb_std;
    return [&policy, selector, sigma](tas::Env& env, uint64_t seed) {
      return tas::run_sync_episode(policy, *selector, env, seed, true, sigma, nullptr, nullptr, 0.0);
    };
  }
  // residual
  label = "residual_" + ctx.cfg.eval.residual_mode_base;
  auto residual = std::make_shared<tas::ResidualPolicy>(tas::load_residual(ctx.cfg.io.residual));
  std::shared_ptr<tas::SelectorParams> selector;
  if (ctx.cfg.eval.residual_mode_base == "tas")
    selector = std::make_shared<tas::SelectorParams>(tas::load_selector(ctx.cfg.io.selector));
  return [&policy, residual, selector](tas::Env& env, uint64_t seed) {
    return tas::run_residual_episode(policy, selector ? selector.get() : nullptr, *residual, env,
                                     seed);
  };
}

int cmd_eval(CommandContext& ctx) {
  require_checkpoint(ctx.cfg.io.policy);
  const tas::ChunkPolicy policy = tas::load_policy(ctx.cfg.io.policy);
  if (ctx.cfg.eval.controller == "tas") require_checkpoint(ctx.cfg.io.selector);
  if (ctx.cfg.eval.controller == "residual") require_checkpoint(ctx.cfg.io.residual);
  if (ctx.cfg.eval.controller == "sync") require_checkpoint(ctx.out("selector_sync"));

  auto env = ctx.cfg.make_env();
  std::string label;
  const tas::Controller controller = make_controller(ctx, policy, label);
  const tas::EvalReport report =
      tas::eval_policy(*env, controller, ctx.cfg.eval.n_episodes, ctx.cfg.eval.seed, ctx.jobs);

  tas::write_text_file(ctx.out("eval_" + label + ".csv"), tas::eval_csv(report));
  ctx.track(ctx.out("eval_" + label + ".csv"));
  const tas::Json summary = tas::summary_json(label, report);
  tas::validate_summary(summary);
  tas::write_text_file(ctx.out("summary_" + label + ".json"), summary.dump(2) + "\n");
  ctx.track(ctx.out("summary_" + label + ".json"));

  if (ctx.cfg.env.name == "pusht2d" && report.n_episodes > 0) {
    auto svg_env = ctx.cfg.make_env();
    const tas::Episode ep =
        controller(*svg_env, tas::derive_seed(ctx.cfg.eval.seed, "eval.episode", 0));
    std::vector<tas::Vec> path;
    for (const auto& o : ep.observations) path.push_back({o[0], o[1]});
    tas::BlockPose final_block;
    if (!ep.observations.empty()) {
      const tas::Vec& last = ep.observations.back();
      final_block.pos = {last[2], last[3]};
      final_block.th = std::atan2(last[4], last[5]);
    }
    const auto* pt = dynamic_cast<const tas::PushT2D*>(svg_env.get());
    tas::write_text_file(ctx.out("trajectory_" + label + ".svg"),
                         tas::trajectory_svg(pt->config().geom, pt->goal(), final_block, path));
    ctx.track(ctx.out("trajectory_" + label + ".svg"));
  }
  std::cout << "eval[" << label << "]: SR " << report.sr << " MS " << report.ms << " over "
            << report.n_episodes << " episodes\n";
  return 0;
}

int cmd_sweep_delay(CommandContext& ctx) {
  require_checkpoint(ctx.cfg.io.policy);
  const tas::ChunkPolicy policy = tas::load_policy(ctx.cfg.io.policy);
  auto env = ctx.cfg.make_env();

  std::ostringstream combined;
  combined << "d,sr,sr_ci_lo,sr_ci_hi,ms,mean_return,mean_length\n" << std::setprecision(17);
  for (const int d : ctx.cfg.sweep.delays) {
    const tas::Controller controller = [&policy, d](tas::Env& e, uint64_t seed) {
      return tas::run_delayed(policy, e, d, seed);
    };
    const tas::EvalReport report =
        tas::eval_policy(*env, controller, ctx.cfg.eval.n_episodes, ctx.cfg.eval.seed, ctx.jobs);
    const std::string path = ctx.out("eval_delay_" + std::to_string(d) + ".csv");
    tas::write_text_file(path, tas::eval_csv(report));
    ctx.track(path);
    const tas::BinomCi ci = tas::binomial_ci95(report.sr, report.n_episodes);
    combined << d << "," << report.sr << "," << ci.lo << "," << ci.hi << "," << report.ms << ","
             << report.mean_return << "," << report.mean_length << "\n";
    std::cout << "sweep-delay d=" << d << ": SR " << report.sr << "\n";
  }
  tas::write_text_file(ctx.out("sweep_delay.csv"), combined.str());
  ctx.track(ctx.out("sweep_delay.csv"));
  return 0;
}

int cmd_analyze(CommandContext& ctx) {
  require_checkpoint(ctx.cfg.io.policy);
  require_checkpoint(ctx.cfg.io.selector);
  const tas::ChunkPolicy policy = tas::load_policy(ctx.cfg.io.policy);
  const tas::SelectorParams selector = tas::load_selector(ctx.cfg.io.selector);
  auto env = ctx.cfg.make_env();

  std::vector<std::vector<int>> traces;
  int attempted = 0;
  for (int i = 0; i < ctx.cfg.eval.n_episodes; ++i) {
    tas::SelectionTrace trace;
    const uint64_t seed = tas::derive_seed(ctx.cfg.eval.seed, "analyze.episode", i);
    const tas::Episode ep = tas::run_tas_episode(policy, selector, *env, seed, true, nullptr, &trace);
    ++attempted;
    if (ep.success) traces.push_back(trace.selected);
  }
  if (traces.empty()) throw std::runtime_error("analyze: no successful rollouts to align");

  const tas::SelectionHistograms hist = tas::selection_histograms(traces, selector.k, 100);
  tas::write_text_file(ctx.out("selection_histograms.csv"), tas::histogram_csv(hist));
  ctx.track(ctx.out("selection_histograms.csv"));

  tas::Json summary = {{"rollouts_attempted", attempted},
                       {"rollouts_successful", traces.size()},
                       {"medoid_trace", hist.medoid},
                       {"bins", hist.bins},
                       {"overall_index", hist.overall_index},
                       {"overall_pattern_ac_ar_ae", hist.overall_pattern}};
  tas::write_text_file(ctx.out("analyze_summary.json"), summary.dump(2) + "\n");
  ctx.track(ctx.out("analyze_summary.json"));
  std::cout << "analyze: " << traces.size() << "/" << attempted << " successful rollouts, P_AC "
            << hist.overall_pattern[0] << " P_AR " << hist.overall_pattern[1] << " P_AE "
            << hist.overall_pattern[2] << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporal action selection lab"};
  app.set_version_flag("--version", std::string("tas ") + kVersion);

  std::string config_path;
  std::vector<std::string> overrides;
  int jobs = 1;

  struct Sub {
    const char* name;
    const char* desc;
    int (*fn)(CommandContext&);
  };
  const std::vector<Sub> subs = {
      {"gen-demos", "generate scripted-expert demonstrations", cmd_gen_demos},
      {"train-bc", "behavioral-cloning training of the chunk policy", cmd_train_bc},
      {"train-tas", "train the temporal action selector with PPO", cmd_train_tas},
      {"train-finetune", "PPO fine-tune of the base policy (baseline)", cmd_train_finetune},
      {"train-residual", "residual RL on top of TAS or the vanilla policy", cmd_train_residual},
      {"train-sync-ablation", "synchronous-slate caching ablation", cmd_train_sync_ablation},
      {"eval", "evaluate a controller (SR/MS report)", cmd_eval},
      {"sweep-delay", "delay-parameter sweep with per-d reports", cmd_sweep_delay},
      {"analyze", "selection-behavior histograms over TAS rollouts", cmd_analyze},
  };

  std::map<std::string, int (*)(CommandContext&)> dispatch;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.desc);
    sub->add_option("-c,--config", config_path, "JSON run config")->required();
    sub->add_option("--set", overrides, "override a dotted config key, e.g. training.ppo.lr=1e-4");
    sub->add_option("-j,--jobs", jobs, "worker count for episode-parallel commands");
    dispatch[s.name] = s.fn;
  }
  app.require_subcommand(0, 1);

  CLI11_PARSE(app, argc, argv);

  std::string chosen;
  for (const auto& s : subs)
    if (app.get_subcommand(s.name)->parsed()) chosen = s.name;
  if (chosen.empty()) {
    std::cout << app.help() << "\n";
    return 0;
  }

  try {
    CommandContext ctx = load_context(config_path, overrides, chosen, jobs);
    const int rc = dispatch[chosen](ctx);
    ctx.write_snapshot_and_manifest();
    return rc;
  } catch (const tas::ConfigError& e) {
    std::cerr << "error (config): " << e.what() << "\n";
    return 2;
  } catch (const tas::ContractError& e) {
    std::cerr << "error (contract): " << e.what() << "\n";
    return 4;
  } catch (const tas::ParseError& e) {
    std::cerr << "error (parse): " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    std::cerr << "error (" << (msg.rfind("missing artifact", 0) == 0 ? "missing-artifact" : "runtime")
              << "): " << msg << "\n";
    return msg.rfind("missing artifact", 0) == 0 ? 3 : 5;
  }
}
