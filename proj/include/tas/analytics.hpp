#pragma once

#include <atomic>
#include <functional>
#include <future>
#include <iomanip>
#include <sstream>

#include "tas/selector.hpp"

namespace tas {

// ---------------------------------------------------------------------------
// Evaluation protocol: SR / MS over seeded episodes
// ---------------------------------------------------------------------------

struct EvalRow {
  uint64_t seed = 0;
  int episode = 0;
  bool success = false;
  double max_coverage = 0.0;
  double episode_return = 0.0;
  int length = 0;
};

struct EvalReport {
  int n_episodes = 0;
  double sr = 0.0;           // successes / n
  double ms = 0.0;           // mean per-episode max coverage (PushT2D)
  double mean_return = 0.0;
  double mean_length = 0.0;
  std::vector<EvalRow> rows;
};

using Controller = std::function<Episode(Env&, uint64_t)>;

// Deterministic per seed list; parallel over episodes with index-ordered
// assembly so the result is independent of scheduling.
inline EvalReport eval_policy(const Env& proto, const Controller& controller, int n_episodes,
                              uint64_t eval_seed, int jobs = 1) {
  EvalReport report;
  report.n_episodes = n_episodes;
  report.rows.resize(n_episodes);
  jobs = std::max(1, jobs);
  std::atomic<int> next{0};
  auto work = [&]() {
    auto env = proto.fresh();
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n_episodes) break;
      const uint64_t seed = derive_seed(eval_seed, "eval.episode", i);
      const Episode ep = controller(*env, seed);
      report.rows[i] = {seed, i, ep.success, ep.max_coverage, ep.episode_return, ep.length()};
    }
  };
  if (jobs == 1) {
    work();
  } else {
    std::vector<std::future<void>> workers;
    for (int w = 0; w < jobs; ++w) workers.push_back(std::async(std::launch::async, work));
    for (auto& f : workers) f.get();
  }
  for (const auto& r : report.rows) {
    report.sr += r.success ? 1.0 : 0.0;
    report.ms += r.max_coverage;
    report.mean_return += r.episode_return;
    report.mean_length += r.length;
  }
  const double inv = 1.0 / std::max(1, n_episodes);
  report.sr *= inv;
  report.ms *= inv;
  report.mean_return *= inv;
  report.mean_length *= inv;
  return report;
}

// Wilson 95% score interval for a binomial proportion.
struct BinomCi {
  double lo = 0.0;
  double hi = 1.0;
};

inline BinomCi binomial_ci95(double p, int n) {
  if (n <= 0) return {0.0, 1.0};
  const double z = 1.959963984540054;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

// ---------------------------------------------------------------------------
// Transition patterns (AC: same chunk, AR: more recent, AE: earlier)
// ---------------------------------------------------------------------------

enum class TransitionPattern { AC, AR, AE };

inline TransitionPattern classify_transition(int prev_index, int current_index, int k) {
  require(prev_index >= 0 && prev_index <= k - 1 && current_index >= 0 && current_index <= k - 1,
          "classify_transition: index out of range");
  if (prev_index == k - 1) return TransitionPattern::AC;  // last candidate: defaults to AC
  if (current_index == prev_index + 1) return TransitionPattern::AC;
  if (current_index < prev_index + 1) return TransitionPattern::AR;
  return TransitionPattern::AE;
}

// ---------------------------------------------------------------------------
// Dynamic time warping with steps {(1,0),(0,1),(1,1)}
// ---------------------------------------------------------------------------

struct DtwResult {
  std::vector<std::pair<int, int>> path;  // monotone, (0,0) .. (n-1,m-1)
  double distance = 0.0;
};

template <typename T, typename CostFn>
DtwResult dtw_align(const std::vector<T>& a, const std::vector<T>& b, CostFn&& cost) {
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  require(n > 0 && m > 0, "dtw_align: empty input sequence");
  std::vector<double> dp(static_cast<size_t>(n) * m, 0.0);
  auto at = [&](int i, int j) -> double& { return dp[static_cast<size_t>(i) * m + j]; };
  at(0, 0) = cost(a[0], b[0]);
  for (int i = 1; i < n; ++i) at(i, 0) = cost(a[i], b[0]) + at(i - 1, 0);
  for (int j = 1; j < m; ++j) at(0, j) = cost(a[0], b[j]) + at(0, j - 1);
  for (int i = 1; i < n; ++i)
    for (int j = 1; j < m; ++j)
      at(i, j) = cost(a[i], b[j]) + std::min({at(i - 1, j - 1), at(i - 1, j), at(i, j - 1)});

  DtwResult res;
  res.distance = at(n - 1, m - 1);
  int i = n - 1, j = m - 1;
  res.path.push_back({i, j});
  while (i > 0 || j > 0) {
    if (i == 0) {
      --j;
    } else if (j == 0) {
      --i;
    } else {
      const double diag = at(i - 1, j - 1);
      const double up = at(i - 1, j);
      const double left = at(i, j - 1);
      if (diag <= up && diag <= left) {
        --i;
        --j;
      } else if (up <= left) {
        --i;
      } else {
        --j;
      }
    }
    res.path.push_back({i, j});
  }
  std::reverse(res.path.begin(), res.path.end());
  return res;
}

// DTW distance only (no path), cheaper for medoid search.
template <typename T, typename CostFn>
double dtw_distance(const std::vector<T>& a, const std::vector<T>& b, CostFn&& cost) {
  return dtw_align(a, b, cost).distance;
}

// ---------------------------------------------------------------------------
// Selection-behavior histograms over DTW-aligned rollouts
// ---------------------------------------------------------------------------

struct SelectionHistograms {
  int k = 0;
  int bins = 0;
  std::vector<Vec> p_index;    // bins x k, rows sum to 1
  std::vector<Vec> p_pattern;  // bins x 3 (AC, AR, AE), rows sum to 1
  Vec overall_index;           // k, unaligned frequencies
  Vec overall_pattern;         // 3
  int medoid = 0;
  int n_traces = 0;
};

// index sequences embedded as (normalized timestep, index) with L1 cost
struct IndexPoint {
  double t = 0.0;
  double idx = 0.0;
};

inline std::vector<IndexPoint> index_features(const std::vector<int>& seq) {
  std::vector<IndexPoint> out(seq.size());
  const double T = std::max<size_t>(1, seq.size() - 1);
  for (size_t i = 0; i < seq.size(); ++i)
    out[i] = {static_cast<double>(i) / T, static_cast<double>(seq[i])};
  return out;
}

inline double index_cost(const IndexPoint& a, const IndexPoint& b) {
  return std::abs(a.t - b.t) + std::abs(a.idx - b.idx);
}

// Align every trace to the medoid trace, bin the medoid axis to `bins`
// positions, and report per-bin index and transition distributions.
inline SelectionHistograms selection_histograms(const std::vector<std::vector<int>>& traces, int k,
                                                int bins = 100) {
  require(!traces.empty(), "selection_histograms: no successful traces");
  for (const auto& tr : traces) require(!tr.empty(), "selection_histograms: empty trace");

  SelectionHistograms out;
  out.k = k;
  out.bins = bins;
  out.n_traces = static_cast<int>(traces.size());

  std::vector<std::vector<IndexPoint>> feats;
  feats.reserve(traces.size());
  for (const auto& tr : traces) feats.push_back(index_features(tr));

  // medoid: minimum summed DTW distance to all other traces
  const int n = static_cast<int>(traces.size());
  Vec sums(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double d = dtw_distance(feats[i], feats[j], index_cost);
      sums[i] += d;
      sums[j] += d;
    }
  int medoid = 0;
  for (int i = 1; i < n; ++i)
    if (sums[i] < sums[medoid]) medoid = i;
  out.medoid = medoid;

  const int M = static_cast<int>(traces[medoid].size());
  // counts[bin][index], pattern_counts[bin][pattern]
  std::vector<Vec> counts(bins, Vec(k, 0.0));
  std::vector<Vec> pattern_counts(bins, Vec(3, 0.0));
  auto bin_of = [&](int medoid_pos) {
    return std::min(bins - 1, static_cast<int>(static_cast<long>(medoid_pos) * bins / M));
  };

  for (int ti = 0; ti < n; ++ti) {
    const auto align = dtw_align(feats[ti], feats[medoid], index_cost);
    for (const auto& [a_pos, m_pos] : align.path) {
      const int b = bin_of(m_pos);
      counts[b][traces[ti][a_pos]] += 1.0;
      if (a_pos > 0) {
        const TransitionPattern p = classify_transition(traces[ti][a_pos - 1], traces[ti][a_pos], k);
        pattern_counts[b][static_cast<int>(p)] += 1.0;
      }
    }
  }

  // bins beyond the medoid length inherit the nearest populated bin
  out.p_index.assign(bins, Vec(k, 0.0));
  out.p_pattern.assign(bins, Vec(3, 0.0));
  int last_pop = -1;
  for (int b = 0; b < bins; ++b) {
    double tot = 0.0, ptot = 0.0;
    for (double c : counts[b]) tot += c;
    for (double c : pattern_counts[b]) ptot += c;
    if (tot > 0.0) {
      for (int i = 0; i < k; ++i) out.p_index[b][i] = counts[b][i] / tot;
      last_pop = b;
    } else if (last_pop >= 0) {
      out.p_index[b] = out.p_index[last_pop];
    }
    if (ptot > 0.0) {
      for (int i = 0; i < 3; ++i) out.p_pattern[b][i] = pattern_counts[b][i] / ptot;
    } else if (last_pop >= 0 && b > 0) {
      out.p_pattern[b] = out.p_pattern[b - 1];
    } else {
      out.p_pattern[b][static_cast<int>(TransitionPattern::AC)] = 1.0;
    }
  }

  // dashed-line analogs: plain frequencies over all steps
  out.overall_index.assign(k, 0.0);
  out.overall_pattern.assign(3, 0.0);
  double steps = 0.0, pairs = 0.0;
  for (const auto& tr : traces) {
    for (size_t i = 0; i < tr.size(); ++i) {
      out.overall_index[tr[i]] += 1.0;
      ++steps;
      if (i > 0) {
        out.overall_pattern[static_cast<int>(classify_transition(tr[i - 1], tr[i], k))] += 1.0;
        ++pairs;
      }
    }
  }
  for (double& v : out.overall_index) v /= std::max(1.0, steps);
  for (double& v : out.overall_pattern) v /= std::max(1.0, pairs);
  return out;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

inline std::string eval_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "seed,episode,success,max_coverage,return,length\n";
  out << std::setprecision(17);
  for (const auto& r : report.rows)
    out << r.seed << "," << r.episode << "," << (r.success ? 1 : 0) << "," << r.max_coverage << ","
        << r.episode_return << "," << r.length << "\n";
  return out.str();
}

inline std::string histogram_csv(const SelectionHistograms& h) {
  std::ostringstream out;
  out << "bin";
  for (int i = 0; i < h.k; ++i) out << ",P_" << i;
  out << ",P_AC,P_AR,P_AE\n";
  out << std::setprecision(17);
  for (int b = 0; b < h.bins; ++b) {
    out << b;
    for (int i = 0; i < h.k; ++i) out << "," << h.p_index[b][i];
    out << "," << h.p_pattern[b][0] << "," << h.p_pattern[b][1] << "," << h.p_pattern[b][2] << "\n";
  }
  return out.str();
}

inline nlohmann::json summary_json(const std::string& label, const EvalReport& report) {
  const BinomCi ci = binomial_ci95(report.sr, report.n_episodes);
  return {{"label", label},
          {"n_episodes", report.n_episodes},
          {"sr", report.sr},
          {"sr_ci95", {ci.lo, ci.hi}},
          {"ms", report.ms},
          {"mean_return", report.mean_return},
          {"mean_length", report.mean_length}};
}

// Structural validation mirroring share/summary.schema.json.
inline void validate_summary(const nlohmann::json& j) {
  auto fail = [](const std::string& msg) { throw ParseError("summary schema: " + msg); };
  if (!j.is_object()) fail("root must be an object");
  for (const char* key : {"label", "n_episodes", "sr", "sr_ci95", "ms", "mean_return", "mean_length"})
    if (!j.contains(key)) fail(std::string("missing key ") + key);
  if (!j["label"].is_string()) fail("label must be a string");
  if (!j["n_episodes"].is_number_integer()) fail("n_episodes must be an integer");
  for (const char* key : {"sr", "ms", "mean_return", "mean_length"})
    if (!j[key].is_number()) fail(std::string(key) + " must be a number");
  if (!j["sr_ci95"].is_array() || j["sr_ci95"].size() != 2) fail("sr_ci95 must be a 2-array");
  const double sr = j["sr"].get<double>();
  if (sr < 0.0 || sr > 1.0) fail("sr out of [0,1]");
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

// Workspace-view SVG of a PushT2D rollout: goal footprint, final block pose,
// pusher path.
inline std::string trajectory_svg(const PushTGeometry& g, const BlockPose& goal,
                                  const BlockPose& final_block, const std::vector<Vec>& pusher_path) {
  std::ostringstream out;
  const int S = 512;
  auto X = [&](double v) { return v * S; };
  auto Y = [&](double v) { return (1.0 - v) * S; };
  auto poly = [&](const BlockPose& pose, const char* fill, const char* opacity) {
    out << "<polygon points=\"";
    for (const auto& v : g.outline()) {
      const Vec2 w = pose.to_world(v);
      out << X(w.x) << "," << Y(w.y) << " ";
    }
    out << "\" fill=\"" << fill << "\" fill-opacity=\"" << opacity << "\" stroke=\"black\"/>\n";
  };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << S << "\" height=\"" << S
      << "\" viewBox=\"0 0 " << S << " " << S << "\">\n";
  out << "<rect width=\"" << S << "\" height=\"" << S << "\" fill=\"white\" stroke=\"gray\"/>\n";
  poly(goal, "#7fbf7f", "0.4");
  poly(final_block, "#7f7fbf", "0.7");
  out << "<polyline fill=\"none\" stroke=\"#bf3f3f\" stroke-width=\"1.5\" points=\"";
  for (const auto& p : pusher_path) out << X(p[0]) << "," << Y(p[1]) << " ";
  out << "\"/>\n</svg>\n";
  return out.str();
}

}  // namespace tas
