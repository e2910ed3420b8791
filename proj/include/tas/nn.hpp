#pragma once

#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "tas/common.hpp"
#include "tas/rng.hpp"

namespace tas {

enum class Activation { ReLU, Tanh, Identity };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Tanh: return "tanh";
    default: return "identity";
  }
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw ParseError("unknown activation: " + s);
}

// One dense layer: y = act(W x + b). W is rows x cols, bias has rows entries.
struct Layer {
  Mat weight;
  Vec bias;
  Activation act = Activation::Identity;
};

struct MlpParams {
  std::vector<Layer> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().weight.cols; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().weight.rows; }

  size_t param_count() const {
    size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }
};

// He-uniform for ReLU layers, Xavier-uniform otherwise, zero biases.
inline MlpParams make_mlp(const std::vector<int>& sizes, const std::vector<Activation>& acts, Rng& rng) {
  require(sizes.size() >= 2, "make_mlp: need at least input and output size");
  require(acts.size() == sizes.size() - 1, "make_mlp: one activation per layer");
  MlpParams p;
  for (size_t i = 0; i + 1 < sizes.size(); ++i) {
    const int fan_in = sizes[i];
    const int fan_out = sizes[i + 1];
    require(fan_in > 0 && fan_out > 0, "make_mlp: layer sizes must be positive");
    Layer l;
    l.weight = Mat(fan_out, fan_in);
    l.bias = Vec(fan_out, 0.0);
    l.act = acts[i];
    const double limit = (l.act == Activation::ReLU)
                             ? std::sqrt(6.0 / fan_in)
                             : std::sqrt(6.0 / (fan_in + fan_out));
    for (double& w : l.weight.data) w = rng.uniform(-limit, limit);
    p.layers.push_back(std::move(l));
  }
  return p;
}

// Convenience: input -> hidden... -> output with a uniform hidden activation
// and identity output head.
inline MlpParams make_mlp(int input, const std::vector<int>& hidden, int output, Activation hidden_act, Rng& rng) {
  std::vector<int> sizes;
  sizes.push_back(input);
  for (int h : hidden) sizes.push_back(h);
  sizes.push_back(output);
  std::vector<Activation> acts(sizes.size() - 1, hidden_act);
  acts.back() = Activation::Identity;
  return make_mlp(sizes, acts, rng);
}

// Activation record from a forward pass; consumed by mlp_backward.
struct MlpTape {
  Vec input;
  std::vector<Vec> pre;   // pre-activation per layer
  std::vector<Vec> post;  // activation output per layer
};

inline double apply_act(Activation a, double z) {
  switch (a) {
    case Activation::ReLU: return z > 0.0 ? z : 0.0;
    case Activation::Tanh: return std::tanh(z);
    default: return z;
  }
}

inline Vec mlp_forward(const MlpParams& p, const Vec& input, MlpTape* tape = nullptr) {
  require(!p.layers.empty(), "mlp_forward: empty network");
  require(static_cast<int>(input.size()) == p.input_dim(),
          "mlp_forward: input length does not match first layer");
  if (tape) {
    tape->input = input;
    tape->pre.clear();
    tape->post.clear();
  }
  Vec x = input;
  for (const auto& l : p.layers) {
    Vec z = matvec(l.weight, x);
    for (int r = 0; r < l.weight.rows; ++r) z[r] += l.bias[r];
    Vec a(z.size());
    for (size_t i = 0; i < z.size(); ++i) a[i] = apply_act(l.act, z[i]);
    if (tape) {
      tape->pre.push_back(z);
      tape->post.push_back(a);
    }
    x = std::move(a);
  }
  return x;
}

// Parameter-shaped gradient accumulator.
struct MlpGrads {
  std::vector<Mat> dweight;
  std::vector<Vec> dbias;

  explicit MlpGrads(const MlpParams& p) {
    for (const auto& l : p.layers) {
      dweight.emplace_back(l.weight.rows, l.weight.cols);
      dbias.emplace_back(l.bias.size(), 0.0);
    }
  }

  void zero() {
    for (auto& m : dweight) std::fill(m.data.begin(), m.data.end(), 0.0);
    for (auto& v : dbias) std::fill(v.begin(), v.end(), 0.0);
  }

  void scale(double s) {
    for (auto& m : dweight)
      for (double& x : m.data) x *= s;
    for (auto& v : dbias)
      for (double& x : v) x *= s;
  }
};

// Accumulates exact reverse-mode gradients into `grads`; returns d(loss)/d(input).
inline Vec mlp_backward(const MlpParams& p, const MlpTape& tape, const Vec& output_grad, MlpGrads& grads) {
  require(tape.pre.size() == p.layers.size() && tape.post.size() == p.layers.size(),
          "mlp_backward: tape does not match network");
  require(static_cast<int>(tape.input.size()) == p.input_dim(), "mlp_backward: stale tape");
  require(static_cast<int>(output_grad.size()) == p.output_dim(),
          "mlp_backward: output_grad length mismatch");
  Vec da = output_grad;
  for (int li = static_cast<int>(p.layers.size()) - 1; li >= 0; --li) {
    const Layer& l = p.layers[li];
    const Vec& z = tape.pre[li];
    const Vec& x = (li == 0) ? tape.input : tape.post[li - 1];
    Vec dz(da.size());
    switch (l.act) {
      case Activation::ReLU:
        for (size_t i = 0; i < da.size(); ++i) dz[i] = z[i] > 0.0 ? da[i] : 0.0;
        break;
      case Activation::Tanh:
        for (size_t i = 0; i < da.size(); ++i) {
          const double th = std::tanh(z[i]);
          dz[i] = da[i] * (1.0 - th * th);
        }
        break;
      default:
        dz = da;
        break;
    }
    Mat& dW = grads.dweight[li];
    Vec& db = grads.dbias[li];
    for (int r = 0; r < l.weight.rows; ++r) {
      const double g = dz[r];
      db[r] += g;
      double* drow = dW.data.data() + static_cast<size_t>(r) * dW.cols;
      for (int c = 0; c < l.weight.cols; ++c) drow[c] += g * x[c];
    }
    da = matvec_t(l.weight, dz);
  }
  return da;
}

// Non-owning view of one parameter tensor; composite models expose their
// trainables as a flat list of these.
struct TensorRef {
  std::string name;
  double* data = nullptr;
  size_t n = 0;
};

inline std::vector<TensorRef> mlp_tensors(MlpParams& p, const std::string& prefix) {
  std::vector<TensorRef> out;
  for (size_t i = 0; i < p.layers.size(); ++i) {
    out.push_back({prefix + ".w" + std::to_string(i), p.layers[i].weight.data.data(),
                   p.layers[i].weight.data.size()});
    out.push_back({prefix + ".b" + std::to_string(i), p.layers[i].bias.data(),
                   p.layers[i].bias.size()});
  }
  return out;
}

inline std::vector<TensorRef> grad_tensors(MlpGrads& g, const std::string& prefix) {
  std::vector<TensorRef> out;
  for (size_t i = 0; i < g.dweight.size(); ++i) {
    out.push_back({prefix + ".w" + std::to_string(i), g.dweight[i].data.data(),
                   g.dweight[i].data.size()});
    out.push_back({prefix + ".b" + std::to_string(i), g.dbias[i].data(), g.dbias[i].size()});
  }
  return out;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction. Moment buffers are laid out to mirror
// the tensor list handed to the first step() call.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  int64_t step_count() const { return step_count_; }
  AdamConfig& config() { return cfg_; }

  void step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads) {
    require(params.size() == grads.size(), "adam_step: parameter/gradient tensor count mismatch");
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.n, 0.0);
        v_.emplace_back(p.n, 0.0);
      }
    }
    require(m_.size() == params.size(), "adam_step: tensor count changed between steps");
    for (size_t ti = 0; ti < params.size(); ++ti) {
      require(params[ti].n == grads[ti].n && params[ti].n == m_[ti].size(),
              "adam_step: shape mismatch in tensor " + params[ti].name);
      for (size_t i = 0; i < grads[ti].n; ++i) {
        if (!std::isfinite(grads[ti].data[i]))
          throw ContractError("adam_step: non-finite gradient in tensor " + grads[ti].name);
      }
    }
    step_count_ += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (size_t ti = 0; ti < params.size(); ++ti) {
      double* p = params[ti].data;
      const double* g = grads[ti].data;
      Vec& m = m_[ti];
      Vec& v = v_[ti];
      for (size_t i = 0; i < params[ti].n; ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  int64_t step_count_ = 0;
  std::vector<Vec> m_;
  std::vector<Vec> v_;
};

// Central-difference gradient verification over randomly probed coordinates.
// `loss` must be deterministic; it is evaluated twice up front and the two
// values must agree bit-for-bit. Returns the max relative error
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double finite_diff_check(const std::function<double()>& loss,
                                const std::vector<TensorRef>& params,
                                const std::vector<TensorRef>& analytic_grads, int probes, Rng& rng,
                                double h = 1e-5) {
  require(params.size() == analytic_grads.size(), "finite_diff_check: tensor list mismatch");
  const double f0 = loss();
  const double f1 = loss();
  if (std::memcmp(&f0, &f1, sizeof(double)) != 0)
    throw ContractError("finite_diff_check: non-deterministic loss function");

  size_t total = 0;
  for (const auto& p : params) total += p.n;
  require(total > 0, "finite_diff_check: no parameters");

  double max_err = 0.0;
  for (int probe = 0; probe < probes; ++probe) {
    size_t flat = rng.uniform_int(total);
    size_t ti = 0;
    while (flat >= params[ti].n) {
      flat -= params[ti].n;
      ++ti;
    }
    double* coord = params[ti].data + flat;
    const double saved = *coord;
    *coord = saved + h;
    const double fp = loss();
    *coord = saved - h;
    const double fm = loss();
    *coord = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = analytic_grads[ti].data[flat];
    const double err = std::abs(analytic - numeric) /
                       std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    if (err > max_err) max_err = err;
  }
  return max_err;
}

}  // namespace tas
