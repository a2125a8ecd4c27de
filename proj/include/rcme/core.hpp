#pragma once

// Shared vector math, identifiers, and the error taxonomy used across the
// library. Everything operates on plain std::vector<double>; no BLAS, no
// expression templates. Dimensions are small (tens), loops are fine.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcme {

using Vec = std::vector<double>;

// Embedding identifier shared by node and instance vectors. Node ids occupy
// [0, node_count); instance ids start at node_count (see InstanceTable).
using EmbedId = std::int64_t;
using NodeId = std::int64_t;

inline constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// errors

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// geometry
struct DegenerateVector : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };

// taxonomy
struct ParseError : Error { using Error::Error; };
struct InconsistentDepth : Error { using Error::Error; };
struct NotALeaf : Error { using Error::Error; };
struct NoSibling : Error { using Error::Error; };
struct NegativeUnavailable : Error { using Error::Error; };

// losses
struct LengthMismatch : Error { using Error::Error; };
struct EmptyBatch : Error { using Error::Error; };

// trainer / io
struct NonFiniteLoss : Error { using Error::Error; };
struct LoadError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct SchemaError : Error { using Error::Error; };

// cli
struct ArgError : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// small vector helpers

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline Vec sub(const Vec& a, const Vec& b) {
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

inline Vec add(const Vec& a, const Vec& b) {
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

inline Vec scaled(const Vec& a, double f) {
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] * f;
  return r;
}

// y += f * x
inline void axpy(Vec& y, double f, const Vec& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += f * x[i];
}

inline bool all_finite(const Vec& a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

inline double clamp(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

// clip to [0,1] per the similarity clipping rule; gradient mask is open
// interval so the subgradient at both boundaries is 0.
inline double clip01(double x) { return clamp(x, 0.0, 1.0); }
inline bool clip01_active(double x) { return x > 0.0 && x < 1.0; }

}  // namespace rcme
