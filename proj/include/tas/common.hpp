#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tas {

using Vec = std::vector<double>;

// Thrown when a caller violates a documented precondition.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on malformed files (checkpoints, datasets, configs).
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public ParseError {
 public:
  explicit ShapeError(const std::string& msg) : ParseError(msg) {}
};

class TruncationError : public ParseError {
 public:
  explicit TruncationError(const std::string& msg) : ParseError(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

// Row-major dense matrix. rows==0 or cols==0 is a valid empty matrix.
struct Mat {
  int rows = 0;
  int cols = 0;
  Vec data;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return data.size(); }
};

// y = M x
inline Vec matvec(const Mat& m, const Vec& x) {
  require(static_cast<int>(x.size()) == m.cols, "matvec: dimension mismatch");
  Vec y(m.rows, 0.0);
  for (int r = 0; r < m.rows; ++r) {
    double acc = 0.0;
    const double* row = m.data.data() + static_cast<size_t>(r) * m.cols;
    for (int c = 0; c < m.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

// y = M^T x
inline Vec matvec_t(const Mat& m, const Vec& x) {
  require(static_cast<int>(x.size()) == m.rows, "matvec_t: dimension mismatch");
  Vec y(m.cols, 0.0);
  for (int r = 0; r < m.rows; ++r) {
    const double* row = m.data.data() + static_cast<size_t>(r) * m.cols;
    const double xr = x[r];
    for (int c = 0; c < m.cols; ++c) y[c] += row[c] * xr;
  }
  return y;
}

inline double dot(const Vec& a, const Vec& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double clamp(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

inline double wrap_angle(double th) {
  // wrap to (-pi, pi]
  th = std::fmod(th, 2.0 * M_PI);
  if (th <= -M_PI) th += 2.0 * M_PI;
  if (th > M_PI) th -= 2.0 * M_PI;
  return th;
}

inline bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace tas
