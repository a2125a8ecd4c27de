#pragma once

// Exterior-angle geometry. The central quantity is the root-anchored angle
//
//   Xi(a, b) = arccos( <a - T0, b - a> / (|a - T0| * |b - a|) )
//
// measured at a between the ray leaving the entailment root T0 and the ray
// toward b. Similarity is cos Xi. Both geometries share the formula; they
// differ only in where T0 lives (unit vector on the sphere vs the origin)
// and in the norm discipline of the embeddings.

#include <random>

#include "core.hpp"

namespace rcme {

enum class GeoMode { Radial, Euclidean };

struct GeometrySpec {
  GeoMode mode = GeoMode::Radial;
  int dim = 0;
  Vec root;                 // T0: unit-norm in Radial mode, zero in Euclidean
  double epsilon_r = 0.1;   // lower end of the root-distance range of psi
  double aperture_k = 0.1;  // K in psi = arcsin(K / r); requires K <= epsilon_r

  void validate() const {
    if (dim <= 0) throw DomainError("GeometrySpec: dim must be positive");
    if ((int)root.size() != dim) throw DomainError("GeometrySpec: root has wrong dim");
    if (!(epsilon_r > 0.0 && epsilon_r <= 1.0))
      throw DomainError("GeometrySpec: epsilon_r must be in (0,1]");
    if (!(aperture_k > 0.0 && aperture_k <= epsilon_r))
      throw DomainError("GeometrySpec: require 0 < aperture_k <= epsilon_r");
    if (mode == GeoMode::Radial) {
      if (std::abs(norm(root) - 1.0) > 1e-9)
        throw DomainError("GeometrySpec: radial root must be unit-norm");
    } else {
      for (double v : root)
        if (v != 0.0) throw DomainError("GeometrySpec: euclidean root must be the origin");
    }
  }

  static GeometrySpec radial(int dim, double epsilon_r = 0.1, double aperture_k = 0.1) {
    GeometrySpec g;
    g.mode = GeoMode::Radial;
    g.dim = dim;
    g.root.assign(dim, 0.0);
    g.root[0] = 1.0;  // fixed root direction e0
    g.epsilon_r = epsilon_r;
    g.aperture_k = aperture_k;
    return g;
  }

  static GeometrySpec euclidean(int dim, double epsilon_r = 0.1, double aperture_k = 0.1) {
    GeometrySpec g;
    g.mode = GeoMode::Euclidean;
    g.dim = dim;
    g.root.assign(dim, 0.0);
    g.epsilon_r = epsilon_r;
    g.aperture_k = aperture_k;
    return g;
  }
};

namespace detail {

constexpr double kDegenEps = 1e-12;

// Angle plus partials with respect to both endpoints. Where the arccos input
// was clamped the angle is flat, so those partials are exactly zero. The
// cosine partials (dca/dcb) carry the same masking; they feed the clipped
// similarity factors of the global entailment loss.
struct AngleGrad {
  double xi = 0.0;
  double cosv = 0.0;  // clamped cosine, equals cos(xi)
  Vec dxi_da, dxi_db;
  Vec dcos_da, dcos_db;
  bool root_anchor = false;  // anchor coincided with T0; convention applied
};

// root_convention: losses iterate full chains whose position 0 is T0 itself,
// where the exterior angle is 0/0. With the convention on, an anchor within kDegenEps of
// T0 yields Xi = pi/2, cos = 0 and zero partials, which reduces the affected
// loss terms to constants instead of poisoning the chain sum. The public ops
// keep the strict behaviour and throw.
inline AngleGrad angle_with_grad(const GeometrySpec& g, const Vec& a, const Vec& b,
                                 bool root_convention) {
  AngleGrad out;
  Vec u = sub(a, g.root);
  double nu = norm(u);
  if (nu < kDegenEps) {
    if (!root_convention)
      throw DegenerateVector("exterior_angle: anchor coincides with the root");
    out.xi = kPi / 2.0;
    out.cosv = 0.0;
    out.dxi_da.assign(a.size(), 0.0);
    out.dxi_db.assign(a.size(), 0.0);
    out.dcos_da.assign(a.size(), 0.0);
    out.dcos_db.assign(a.size(), 0.0);
    out.root_anchor = true;
    return out;
  }
  Vec w = sub(b, a);
  double nw = norm(w);
  if (nw < kDegenEps)
    throw DegenerateVector("exterior_angle: endpoints coincide");

  double raw = dot(u, w) / (nu * nw);
  double c = clamp(raw, -1.0, 1.0);
  out.cosv = c;
  out.xi = std::acos(c);

  out.dxi_da.assign(a.size(), 0.0);
  out.dxi_db.assign(a.size(), 0.0);
  out.dcos_da.assign(a.size(), 0.0);
  out.dcos_db.assign(a.size(), 0.0);
  if (raw <= -1.0 || raw >= 1.0) return out;  // flat in the clamp region

  // dc/du = w/(|u||w|) - c u/|u|^2 ; dc/dw = u/(|u||w|) - c w/|w|^2
  // u = a - T0, w = b - a  =>  d/da = dc/du - dc/dw, d/db = dc/dw.
  double inv = 1.0 / (nu * nw);
  for (std::size_t i = 0; i < a.size(); ++i) {
    double dcdu = w[i] * inv - c * u[i] / (nu * nu);
    double dcdw = u[i] * inv - c * w[i] / (nw * nw);
    out.dcos_da[i] = dcdu - dcdw;
    out.dcos_db[i] = dcdw;
  }
  double dxidc = -1.0 / std::sqrt(std::max(1.0 - c * c, 1e-18));
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.dxi_da[i] = dxidc * out.dcos_da[i];
    out.dxi_db[i] = dxidc * out.dcos_db[i];
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// public operations

inline double exterior_angle(const GeometrySpec& g, const Vec& a, const Vec& b) {
  return detail::angle_with_grad(g, a, b, /*root_convention=*/false).xi;
}

inline double similarity(const GeometrySpec& g, const Vec& a, const Vec& b) {
  return detail::angle_with_grad(g, a, b, /*root_convention=*/false).cosv;
}

inline double similarity_clipped(const GeometrySpec& g, const Vec& a, const Vec& b) {
  return clip01(similarity(g, a, b));
}

// Root distance r in [epsilon_r, 1]. Radial mode rescales the cosine
// separation from T0; Euclidean mode rescales the norm by a caller-supplied
// normalizer x_max (pass the max norm over the table). x_max is ignored in
// radial mode.
inline double root_distance(const GeometrySpec& g, const Vec& a, double x_max = 1.0) {
  if (g.mode == GeoMode::Radial) {
    double sep = (1.0 - dot(a, g.root)) / 2.0;  // 0 at T0, 1 at the antipode
    return g.epsilon_r + (1.0 - g.epsilon_r) * clamp(sep, 0.0, 1.0);
  }
  if (!(x_max > 0.0)) throw DomainError("root_distance: x_max must be positive");
  return clamp(norm(a) / x_max, g.epsilon_r, 1.0);
}

// Half-aperture psi = arcsin(K / r). Diagnostic only; never trained through.
inline double aperture(const GeometrySpec& g, const Vec& a, double x_max = 1.0) {
  double r = root_distance(g, a, x_max);
  double q = g.aperture_k / r;
  if (q > 1.0) throw DomainError("aperture: aperture_k / r exceeds 1");
  return std::asin(q);
}

inline Vec project_sphere(const Vec& v) {
  double n = norm(v);
  if (n < detail::kDegenEps) throw DegenerateVector("project_sphere: near-zero vector");
  return scaled(v, 1.0 / n);
}

// Spherical linear interpolation between unit vectors; falls back to the
// endpoint when the arc is degenerate. Used by the ordering walk.
inline Vec slerp(const Vec& a, const Vec& b, double t) {
  double c = clamp(dot(a, b), -1.0, 1.0);
  double omega = std::acos(c);
  if (omega < 1e-12) return b;
  double s = std::sin(omega);
  Vec r = scaled(a, std::sin((1.0 - t) * omega) / s);
  axpy(r, std::sin(t * omega) / s, b);
  return r;
}

}  // namespace rcme
