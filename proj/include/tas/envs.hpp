#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "tas/common.hpp"
#include "tas/rng.hpp"

namespace tas {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::sqrt(x * x + y * y); }
};

// Two noise channels per observation dimension: a per-episode systematic bias
// (drawn once at reset) and fresh per-timestep observation noise.
struct NoiseConfig {
  Vec systematic_std;
  Vec observation_std;
  uint64_t stream = 0;

  void validate(int obs_dim) const {
    require(static_cast<int>(systematic_std.size()) == obs_dim &&
                static_cast<int>(observation_std.size()) == obs_dim,
            "NoiseConfig: std vectors must match observation dimension");
    for (double s : systematic_std) require(s >= 0.0, "NoiseConfig: negative systematic std");
    for (double s : observation_std) require(s >= 0.0, "NoiseConfig: negative observation std");
  }

  static NoiseConfig zeros(int obs_dim) {
    NoiseConfig c;
    c.systematic_std.assign(obs_dim, 0.0);
    c.observation_std.assign(obs_dim, 0.0);
    return c;
  }
};

inline Vec draw_episode_bias(const NoiseConfig& cfg, uint64_t episode_seed) {
  Vec bias(cfg.systematic_std.size(), 0.0);
  for (size_t d = 0; d < bias.size(); ++d)
    bias[d] = cfg.systematic_std[d] * gaussian_at(cfg.stream, episode_seed, 0xb1a5ULL, d);
  return bias;
}

// obs = true + episode_bias + fresh per-timestep gaussian. The fresh draw is
// a pure function of (stream, episode seed, timestep, dim) so trajectories
// stay comparable across executors.
inline Vec inject_noise(const Vec& true_features, const NoiseConfig& cfg, const Vec& episode_bias,
                        uint64_t episode_seed, int timestep) {
  require(true_features.size() == cfg.observation_std.size() &&
              true_features.size() == episode_bias.size(),
          "inject_noise: dimension mismatch");
  Vec obs(true_features.size());
  for (size_t d = 0; d < obs.size(); ++d) {
    const double eps = cfg.observation_std[d] == 0.0
                           ? 0.0
                           : cfg.observation_std[d] *
                                 gaussian_at(cfg.stream ^ 0x0b5ULL, episode_seed,
                                             static_cast<uint64_t>(timestep), d);
    obs[d] = true_features[d] + episode_bias[d] + eps;
  }
  return obs;
}

struct StepResult {
  Vec observation;
  double reward = 0.0;
  bool done = false;
  double coverage = 0.0;  // PushT2D only
  bool success = false;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual std::string name() const = 0;
  virtual int obs_dim() const = 0;
  virtual int act_dim() const = 0;
  virtual double action_limit() const = 0;
  virtual int max_steps() const = 0;
  virtual Vec reset(uint64_t seed) = 0;
  virtual StepResult step(const Vec& action) = 0;
  virtual Vec true_features() const = 0;
  virtual bool done() const = 0;
  virtual int timestep() const = 0;
  virtual std::unique_ptr<Env> fresh() const = 0;  // new instance, same config
  virtual const NoiseConfig& noise() const = 0;
};

// ---------------------------------------------------------------------------
// PushT2D: circle pusher vs T-shaped block in the unit square, quasi-static
// contact, coverage metric against a fixed goal footprint.
// ---------------------------------------------------------------------------

struct PushTGeometry {
  double pusher_radius = 0.03;
  double bar_w = 0.12, bar_h = 0.04;    // horizontal top bar
  double stem_w = 0.04, stem_h = 0.12;  // vertical stem below the bar
  double a_max = 0.02;
  int max_steps = 300;
  double rot_resistance = 8.0;
  double contact_tol = 1e-3;
  int raster = 256;
  double success_coverage = 0.95;

  // local frame origin at the area centroid; bar bottom edge sits at y0
  double y0() const {
    const double ab = bar_w * bar_h;
    const double as = stem_w * stem_h;
    if (ab + as == 0.0) return 0.0;
    return (as * stem_h / 2.0 - ab * bar_h / 2.0) / (ab + as);
  }

  std::array<Vec2, 8> outline() const {
    const double b = y0();
    return {Vec2{-stem_w / 2, b - stem_h}, Vec2{stem_w / 2, b - stem_h},
            Vec2{stem_w / 2, b},           Vec2{bar_w / 2, b},
            Vec2{bar_w / 2, b + bar_h},    Vec2{-bar_w / 2, b + bar_h},
            Vec2{-bar_w / 2, b},           Vec2{-stem_w / 2, b}};
  }

  bool contains_local(const Vec2& q) const {
    const double b = y0();
    const bool in_bar = std::abs(q.x) <= bar_w / 2 && q.y >= b && q.y <= b + bar_h;
    const bool in_stem = stem_h > 0.0 && stem_w > 0.0 && std::abs(q.x) <= stem_w / 2 &&
                         q.y >= b - stem_h && q.y <= b;
    return in_bar || in_stem;
  }

  double outer_radius() const {
    double r = 0.0;
    for (const auto& v : outline()) r = std::max(r, v.norm());
    return r;
  }
};

struct BlockPose {
  Vec2 pos;
  double th = 0.0;

  Vec2 to_local(const Vec2& world) const {
    const Vec2 d = world - pos;
    const double c = std::cos(th), s = std::sin(th);
    return {c * d.x + s * d.y, -s * d.x + c * d.y};
  }
  Vec2 to_world(const Vec2& local) const {
    const double c = std::cos(th), s = std::sin(th);
    return {pos.x + c * local.x - s * local.y, pos.y + s * local.x + c * local.y};
  }
};

namespace detail {

inline Vec2 closest_on_segment(const Vec2& a, const Vec2& b, const Vec2& q) {
  const Vec2 ab = b - a;
  const double len2 = ab.dot(ab);
  if (len2 == 0.0) return a;
  const double t = clamp((q - a).dot(ab) / len2, 0.0, 1.0);
  return a + ab * t;
}

}  // namespace detail

struct ContactInfo {
  bool touching = false;
  double depth = 0.0;  // penetration of the circle into the block
  Vec2 block_disp;     // translation removing the penetration
  Vec2 contact_point;  // world frame
};

// Circle-vs-T penetration; the minimum translation is applied to the block.
inline ContactInfo circle_block_contact(const PushTGeometry& g, const BlockPose& pose,
                                        const Vec2& center, double radius) {
  ContactInfo info;
  const Vec2 q = pose.to_local(center);
  const auto verts = g.outline();
  double best = std::numeric_limits<double>::max();
  Vec2 best_p;
  for (size_t i = 0; i < verts.size(); ++i) {
    const Vec2 p = detail::closest_on_segment(verts[i], verts[(i + 1) % verts.size()], q);
    const double d = (q - p).norm();
    if (d < best) {
      best = d;
      best_p = p;
    }
  }
  const bool inside = g.contains_local(q);
  if (!inside && best >= radius) return info;

  // outward normal at the nearest boundary point, in local frame
  Vec2 n_local;
  if (best > 1e-12) {
    n_local = inside ? (best_p - q) * (1.0 / best) : (q - best_p) * (1.0 / best);
  } else {
    n_local = q.norm() > 1e-12 ? q * (1.0 / q.norm()) : Vec2{1.0, 0.0};
  }
  info.touching = true;
  info.depth = inside ? radius + best : radius - best;
  const double c = std::cos(pose.th), s = std::sin(pose.th);
  const Vec2 n_world{c * n_local.x - s * n_local.y, s * n_local.x + c * n_local.y};
  info.block_disp = n_world * (-info.depth);
  info.contact_point = pose.to_world(best_p);
  return info;
}

// Intersection-over-block-area on the fixed raster grid, restricted to the
// bounding box of the two footprints (identical result to the full grid).
inline double coverage(const PushTGeometry& g, const BlockPose& block, const BlockPose& goal) {
  const int G = g.raster;
  const double r0 = g.outer_radius();
  const double lox = std::max(0.0, std::min(block.pos.x, goal.pos.x) - r0);
  const double hix = std::min(1.0, std::max(block.pos.x, goal.pos.x) + r0);
  const double loy = std::max(0.0, std::min(block.pos.y, goal.pos.y) - r0);
  const double hiy = std::min(1.0, std::max(block.pos.y, goal.pos.y) + r0);
  const int ix0 = std::max(0, static_cast<int>(std::floor(lox * G)));
  const int ix1 = std::min(G - 1, static_cast<int>(std::ceil(hix * G)));
  const int iy0 = std::max(0, static_cast<int>(std::floor(loy * G)));
  const int iy1 = std::min(G - 1, static_cast<int>(std::ceil(hiy * G)));
  long block_cells = 0;
  long both_cells = 0;
  for (int iy = iy0; iy <= iy1; ++iy) {
    const double cy = (iy + 0.5) / G;
    for (int ix = ix0; ix <= ix1; ++ix) {
      const Vec2 p{(ix + 0.5) / G, cy};
      if (!g.contains_local(block.to_local(p))) continue;
      ++block_cells;
      if (g.contains_local(goal.to_local(p))) ++both_cells;
    }
  }
  if (block_cells == 0) return 0.0;
  return static_cast<double>(both_cells) / static_cast<double>(block_cells);
}

struct PushTConfig {
  PushTGeometry geom;
  NoiseConfig noise;  // sized for obs_dim = 6
  BlockPose goal{{0.5, 0.5}, 0.0};
  double init_radius_lo = 0.12;
  double init_radius_hi = 0.22;
  double init_theta_range = 0.015;

  PushTConfig() { noise = NoiseConfig::zeros(6); }
};

class PushT2D final : public Env {
 public:
  explicit PushT2D(PushTConfig cfg = {}) : cfg_(std::move(cfg)) { cfg_.noise.validate(obs_dim()); }

  std::string name() const override { return "pusht2d"; }
  int obs_dim() const override { return 6; }
  int act_dim() const override { return 2; }
  double action_limit() const override { return cfg_.geom.a_max; }
  int max_steps() const override { return cfg_.geom.max_steps; }
  bool done() const override { return done_; }
  int timestep() const override { return t_; }
  const NoiseConfig& noise() const override { return cfg_.noise; }
  std::unique_ptr<Env> fresh() const override { return std::make_unique<PushT2D>(cfg_); }

  const PushTConfig& config() const { return cfg_; }
  const Vec2& pusher() const { return pusher_; }
  const BlockPose& block() const { return block_; }
  const BlockPose& goal() const { return cfg_.goal; }

  Vec reset(uint64_t seed) override {
    seed_ = seed;
    Rng rng(derive_seed(seed, "pusht2d.reset"));
    const double ang = rng.uniform(0.0, 2.0 * M_PI);
    const double rad = rng.uniform(cfg_.init_radius_lo, cfg_.init_radius_hi);
    block_.pos = {clamp(cfg_.goal.pos.x + rad * std::cos(ang), 0.2, 0.8),
                  clamp(cfg_.goal.pos.y + rad * std::sin(ang), 0.2, 0.8)};
    block_.th = wrap_angle(cfg_.goal.th + rng.uniform(-cfg_.init_theta_range, cfg_.init_theta_range));
    // pusher spawns clear of the block
    for (int attempt = 0; attempt < 64; ++attempt) {
      pusher_ = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
      const auto c = circle_block_contact(cfg_.geom, block_, pusher_, cfg_.geom.pusher_radius + 0.01);
      if (!c.touching) break;
    }
    t_ = 0;
    done_ = false;
    success_ = false;
    coverage_ = coverage(cfg_.geom, block_, cfg_.goal);
    bias_ = draw_episode_bias(cfg_.noise, seed_);
    return inject_noise(true_features(), cfg_.noise, bias_, seed_, t_);
  }

  Vec true_features() const override {
    return {pusher_.x, pusher_.y, block_.pos.x, block_.pos.y, std::sin(block_.th), std::cos(block_.th)};
  }

  StepResult step(const Vec& action) override {
    require(!done_, "PushT2D::step called after episode end");
    require(action.size() == 2, "PushT2D::step: action must be 2D");
    const double ax = clamp(action[0], -cfg_.geom.a_max, cfg_.geom.a_max);
    const double ay = clamp(action[1], -cfg_.geom.a_max, cfg_.geom.a_max);
    pusher_.x = clamp(pusher_.x + ax, 0.0, 1.0);
    pusher_.y = clamp(pusher_.y + ay, 0.0, 1.0);
    resolve_contact();
    coverage_ = coverage(cfg_.geom, block_, cfg_.goal);
    t_ += 1;

    StepResult res;
    res.coverage = coverage_;
    const bool newly_successful = !success_ && coverage_ >= cfg_.geom.success_coverage;
    if (newly_successful) {
      success_ = true;
      res.reward = 1.0;
    }
    res.success = success_;
    if (success_ || t_ >= cfg_.geom.max_steps) done_ = true;
    res.done = done_;
    res.observation = inject_noise(true_features(), cfg_.noise, bias_, seed_, t_);
    return res;
  }

  double current_coverage() const { return coverage_; }

  // scripted-scenario hook: place pusher and block directly
  void set_state(const Vec2& pusher, const BlockPose& block) {
    require(!done_, "set_state: episode already done");
    pusher_ = pusher;
    block_ = block;
    coverage_ = coverage(cfg_.geom, block_, cfg_.goal);
  }

 private:
  void resolve_contact() {
    for (int iter = 0; iter < 16; ++iter) {
      const auto c = circle_block_contact(cfg_.geom, block_, pusher_, cfg_.geom.pusher_radius);
      if (!c.touching || c.depth <= cfg_.geom.contact_tol) break;
      block_.pos = block_.pos + c.block_disp;
      const Vec2 lever = c.contact_point - block_.pos;
      const double torque = lever.cross(c.block_disp);
      block_.th = wrap_angle(block_.th + torque / cfg_.geom.rot_resistance);
      block_.pos.x = clamp(block_.pos.x, 0.0, 1.0);
      block_.pos.y = clamp(block_.pos.y, 0.0, 1.0);
    }
    // if the block is wall-pinned the pusher yields instead
    const auto c = circle_block_contact(cfg_.geom, block_, pusher_, cfg_.geom.pusher_radius);
    if (c.touching && c.depth > cfg_.geom.contact_tol) {
      const double ux = -c.block_disp.x / std::max(c.depth, 1e-12);
      const double uy = -c.block_disp.y / std::max(c.depth, 1e-12);
      pusher_.x = clamp(pusher_.x + ux * c.depth, 0.0, 1.0);
      pusher_.y = clamp(pusher_.y + uy * c.depth, 0.0, 1.0);
    }
  }

  PushTConfig cfg_;
  Vec2 pusher_;
  BlockPose block_;
  Vec bias_;
  uint64_t seed_ = 0;
  int t_ = 0;
  bool done_ = false;
  bool success_ = false;
  double coverage_ = 0.0;
};

// ---------------------------------------------------------------------------
// NoisyReach: damped double integrator that must hold a target under the
// two-channel noise model.
// ---------------------------------------------------------------------------

struct ReachConfig {
  double a_max = 0.01;
  double damping = 0.9;
  double tolerance = 0.03;
  int hold_steps = 10;
  int max_steps = 200;
  double min_start_distance = 0.3;
  NoiseConfig noise;  // obs_dim = 6: pos(2), vel(2), target(2)

  ReachConfig() {
    noise.systematic_std = {0.01, 0.01, 0.005, 0.005, 0.01, 0.01};
    noise.observation_std = {0.01, 0.01, 0.005, 0.005, 0.01, 0.01};
  }
};

class NoisyReach final : public Env {
 public:
  explicit NoisyReach(ReachConfig cfg = {}) : cfg_(std::move(cfg)) { cfg_.noise.validate(obs_dim()); }

  std::string name() const override { return "noisy_reach"; }
  int obs_dim() const override { return 6; }
  int act_dim() const override { return 2; }
  double action_limit() const override { return cfg_.a_max; }
  int max_steps() const override { return cfg_.max_steps; }
  bool done() const override { return done_; }
  int timestep() const override { return t_; }
  const NoiseConfig& noise() const override { return cfg_.noise; }
  std::unique_ptr<Env> fresh() const override { return std::make_unique<NoisyReach>(cfg_); }

  const ReachConfig& config() const { return cfg_; }
  const Vec2& position() const { return pos_; }
  const Vec2& velocity() const { return vel_; }
  const Vec2& target() const { return target_; }
  int hold_counter() const { return hold_; }

  Vec reset(uint64_t seed) override {
    seed_ = seed;
    Rng rng(derive_seed(seed, "noisy_reach.reset"));
    for (int attempt = 0; attempt < 256; ++attempt) {
      pos_ = {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
      target_ = {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
      if ((pos_ - target_).norm() >= cfg_.min_start_distance) break;
    }
    vel_ = {0.0, 0.0};
    hold_ = 0;
    t_ = 0;
    done_ = false;
    success_ = false;
    bias_ = draw_episode_bias(cfg_.noise, seed_);
    return inject_noise(true_features(), cfg_.noise, bias_, seed_, t_);
  }

  Vec true_features() const override {
    return {pos_.x, pos_.y, vel_.x, vel_.y, target_.x, target_.y};
  }

  // scripted-scenario hook
  void set_state(const Vec2& pos, const Vec2& vel, const Vec2& target) {
    require(!done_, "set_state: episode already done");
    pos_ = pos;
    vel_ = vel;
    target_ = target;
    hold_ = 0;
  }

  StepResult step(const Vec& action) override {
    require(!done_, "NoisyReach::step called after episode end");
    require(action.size() == 2, "NoisyReach::step: action must be 2D");
    const double ax = clamp(action[0], -cfg_.a_max, cfg_.a_max);
    const double ay = clamp(action[1], -cfg_.a_max, cfg_.a_max);
    vel_.x = cfg_.damping * vel_.x + ax;
    vel_.y = cfg_.damping * vel_.y + ay;
    pos_.x = clamp(pos_.x + vel_.x, 0.0, 1.0);
    pos_.y = clamp(pos_.y + vel_.y, 0.0, 1.0);
    t_ += 1;

    if ((pos_ - target_).norm() <= cfg_.tolerance)
      hold_ += 1;
    else
      hold_ = 0;

    StepResult res;
    const bool newly_successful = !success_ && hold_ >= cfg_.hold_steps;
    if (newly_successful) {
      success_ = true;
      res.reward = 1.0;
    }
    res.success = success_;
    if (success_ || t_ >= cfg_.max_steps) done_ = true;
    res.done = done_;
    res.observation = inject_noise(true_features(), cfg_.noise, bias_, seed_, t_);
    return res;
  }

 private:
  ReachConfig cfg_;
  Vec2 pos_, vel_, target_;
  Vec bias_;
  uint64_t seed_ = 0;
  int t_ = 0;
  int hold_ = 0;
  bool done_ = false;
  bool success_ = false;
};

}  // namespace tas
