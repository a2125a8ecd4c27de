#pragma once

// The five loss terms. Every loss returns its value together with exact
// partial derivatives for each participating embedding, keyed by EmbedId.
// Gradients are taken with respect to the stored vectors exactly as they
// enter the formulas; the trainer's re-projection step is a constraint, not
// part of the differentiated graph.

#include <span>
#include <utility>

#include "geometry.hpp"

namespace rcme {

// Non-owning view of one embedding.
struct EmbRef {
  EmbedId id = -1;
  const Vec* v = nullptr;
};

struct LossParams {
  double alpha = kPi / 2.0;  // margin of the global entailment hinge
  double beta = 1.0;         // weight of the cross-modal term
  double temperature = 1.0;  // scale on the alignment inner products
  int batch_size = 32;       // B contrastive pairs per query
};

struct LossToggles {
  bool use_le = true;
  bool use_ge = true;
  bool use_cma = true;
  bool use_prior = false;
};

struct LossOutput {
  double value = 0.0;
  std::map<EmbedId, Vec> gradients;

  Vec& grad(EmbedId id, std::size_t dim) {
    auto it = gradients.find(id);
    if (it == gradients.end()) it = gradients.emplace(id, Vec(dim, 0.0)).first;
    return it->second;
  }

  // this += f * other
  void add_scaled(const LossOutput& other, double f) {
    value += f * other.value;
    for (const auto& [id, g] : other.gradients) {
      Vec& dst = grad(id, g.size());
      axpy(dst, f, g);
    }
  }
};

// ---------------------------------------------------------------------------
// local entailment: Xi(anchor, pos) - Xi(anchor, neg)

inline LossOutput local_entailment(const GeometrySpec& g, EmbRef anchor, EmbRef pos,
                                   EmbRef neg) {
  auto ap = detail::angle_with_grad(g, *anchor.v, *pos.v, /*root_convention=*/true);
  auto an = detail::angle_with_grad(g, *anchor.v, *neg.v, /*root_convention=*/true);
  LossOutput out;
  std::size_t d = anchor.v->size();
  out.value = ap.xi - an.xi;
  out.grad(anchor.id, d);
  out.grad(pos.id, d);
  out.grad(neg.id, d);
  axpy(out.grad(anchor.id, d), 1.0, ap.dxi_da);
  axpy(out.grad(anchor.id, d), -1.0, an.dxi_da);
  axpy(out.grad(pos.id, d), 1.0, ap.dxi_db);
  axpy(out.grad(neg.id, d), -1.0, an.dxi_db);
  return out;
}

// ---------------------------------------------------------------------------
// global entailment hinge:
//   max(0, Xi(grand, child) - arccos(clip01(S(parent,child)) * clip01(S(grand,parent))) + alpha)

inline LossOutput global_entailment(const GeometrySpec& g, EmbRef grand, EmbRef parent,
                                    EmbRef child, double alpha) {
  auto gc = detail::angle_with_grad(g, *grand.v, *child.v, /*root_convention=*/true);
  auto pc = detail::angle_with_grad(g, *parent.v, *child.v, /*root_convention=*/true);
  auto gp = detail::angle_with_grad(g, *grand.v, *parent.v, /*root_convention=*/true);

  double spc = clip01(pc.cosv);
  double sgp = clip01(gp.cosv);
  double q = spc * sgp;  // in [0,1]
  double acq = std::acos(clamp(q, 0.0, 1.0));
  double v = gc.xi - acq + alpha;

  LossOutput out;
  std::size_t d = grand.v->size();
  out.grad(grand.id, d);
  out.grad(parent.id, d);
  out.grad(child.id, d);
  if (v <= 0.0) return out;  // inactive hinge, subgradient 0 at the kink
  out.value = v;

  axpy(out.grad(grand.id, d), 1.0, gc.dxi_da);
  axpy(out.grad(child.id, d), 1.0, gc.dxi_db);

  // dv/dq = 1/sqrt(1-q^2); the clip masks kill the factor gradients outside
  // (0,1), and q = 1 is flat-guarded like the angle derivative.
  double dvdq = 1.0 / std::sqrt(std::max(1.0 - q * q, 1e-18));
  if (q >= 1.0) dvdq = 0.0;
  if (clip01_active(pc.cosv)) {
    double f = dvdq * sgp;
    axpy(out.grad(parent.id, d), f, pc.dcos_da);
    axpy(out.grad(child.id, d), f, pc.dcos_db);
  }
  if (clip01_active(gp.cosv)) {
    double f = dvdq * spc;
    axpy(out.grad(grand.id, d), f, gp.dcos_da);
    axpy(out.grad(parent.id, d), f, gp.dcos_db);
  }
  return out;
}

// ---------------------------------------------------------------------------
// combined entailment over one chain

namespace detail {

struct EntailmentParts {
  LossOutput le;  // sum over anchors p = 0..N-1
  LossOutput ge;  // sum over p = 1..N-1
};

inline EntailmentParts entailment_parts(const GeometrySpec& g, std::span<const EmbRef> chain,
                                        std::span<const EmbRef> negatives, double alpha) {
  std::size_t n1 = chain.size();
  if (n1 < 3) throw LengthMismatch("gle: chain must hold at least 3 ranks");
  std::size_t n = n1 - 1;
  if (negatives.size() != n)
    throw LengthMismatch("gle: need exactly one negative per anchor rank");
  EntailmentParts parts;
  for (std::size_t p = 0; p + 1 <= n; ++p)
    parts.le.add_scaled(local_entailment(g, chain[p], chain[p + 1], negatives[p]), 1.0);
  for (std::size_t p = 1; p + 1 <= n; ++p)
    parts.ge.add_scaled(global_entailment(g, chain[p - 1], chain[p], chain[p + 1], alpha), 1.0);
  return parts;
}

}  // namespace detail

inline LossOutput gle(const GeometrySpec& g, std::span<const EmbRef> chain,
                      std::span<const EmbRef> negatives, double alpha) {
  std::size_t n = chain.size() - 1;
  auto parts = detail::entailment_parts(g, chain, negatives, alpha);
  LossOutput out;
  if (n >= 2) out.add_scaled(parts.ge, 1.0 / (double)(n - 1));
  out.add_scaled(parts.le, 1.0 / (double)n);
  return out;
}

// ---------------------------------------------------------------------------
// cross-modal alignment, matched-pair form: the denominator sums the batch's
// matched products <T_m, I_m>, not cross products against the query. The
// cross_pairs flag switches to conventional InfoNCE pairing for comparison.

inline LossOutput cross_modal_alignment(EmbRef text, EmbRef image,
                                        std::span<const std::pair<EmbRef, EmbRef>> batch,
                                        double temperature, bool cross_pairs = false) {
  if (batch.empty()) throw EmptyBatch("cross_modal_alignment: B must be positive");
  if (!(temperature > 0.0)) throw DomainError("cross_modal_alignment: temperature must be positive");
  std::size_t d = text.v->size();
  std::size_t bsz = batch.size();

  double zpos = dot(*text.v, *image.v) / temperature;
  std::vector<double> z(bsz);
  for (std::size_t m = 0; m < bsz; ++m) {
    const auto& [tm, im] = batch[m];
    z[m] = (cross_pairs ? dot(*text.v, *im.v) : dot(*tm.v, *im.v)) / temperature;
  }

  double zmax = zpos;
  for (double v : z) zmax = std::max(zmax, v);
  double denom = std::exp(zpos - zmax);
  for (double v : z) denom += std::exp(v - zmax);

  LossOutput out;
  out.value = std::log(denom) + zmax - zpos;

  double sig_pos = std::exp(zpos - zmax) / denom;
  out.grad(text.id, d);
  out.grad(image.id, d);
  axpy(out.grad(text.id, d), (sig_pos - 1.0) / temperature, *image.v);
  axpy(out.grad(image.id, d), (sig_pos - 1.0) / temperature, *text.v);
  for (std::size_t m = 0; m < bsz; ++m) {
    const auto& [tm, im] = batch[m];
    double sig = std::exp(z[m] - zmax) / denom;
    if (cross_pairs) {
      axpy(out.grad(text.id, d), sig / temperature, *im.v);
      axpy(out.grad(im.id, d), sig / temperature, *text.v);
      out.grad(tm.id, d);  // participates with zero gradient in this pairing
    } else {
      axpy(out.grad(tm.id, d), sig / temperature, *im.v);
      axpy(out.grad(im.id, d), sig / temperature, *tm.v);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// prior preservation: -<current, frozen>; the frozen reference is data, not
// a differentiated input.

inline LossOutput prior_preservation(EmbRef current, const Vec& frozen_ref) {
  LossOutput out;
  out.value = -dot(*current.v, frozen_ref);
  Vec& g = out.grad(current.id, current.v->size());
  axpy(g, -1.0, frozen_ref);
  return out;
}

// ---------------------------------------------------------------------------
// full objective: L_GLE + beta * L_CMA, with per-term ablation
// toggles. The chain's leaf embedding is the text side of the CMA term.
// frozen_nodes supplies the prior references (indexed by node id) and may be
// null when the prior toggle is off; the prior averages over the chain's
// non-root nodes.

// Per-term values as they enter the total: le and ge are the chain-
// normalized averages, cma and prior are unweighted.
struct RcmeBreakdown {
  double le = 0.0, ge = 0.0, cma = 0.0, prior = 0.0;
};

inline LossOutput rcme(const GeometrySpec& g, std::span<const EmbRef> chain,
                       std::span<const EmbRef> negatives, EmbRef image,
                       std::span<const std::pair<EmbRef, EmbRef>> batch,
                       const LossParams& params, const LossToggles& toggles = {},
                       const std::vector<Vec>* frozen_nodes = nullptr,
                       double prior_weight = 1.0, bool cross_pairs = false,
                       RcmeBreakdown* breakdown = nullptr) {
  std::size_t n = chain.size() - 1;
  auto parts = detail::entailment_parts(g, chain, negatives, params.alpha);
  LossOutput out;
  if (toggles.use_ge && n >= 2) {
    out.add_scaled(parts.ge, 1.0 / (double)(n - 1));
    if (breakdown) breakdown->ge = parts.ge.value / (double)(n - 1);
  }
  if (toggles.use_le) {
    out.add_scaled(parts.le, 1.0 / (double)n);
    if (breakdown) breakdown->le = parts.le.value / (double)n;
  }
  if (toggles.use_cma && params.beta != 0.0) {
    LossOutput cma = cross_modal_alignment(chain.back(), image, batch, params.temperature,
                                           cross_pairs);
    if (breakdown) breakdown->cma = cma.value;
    out.add_scaled(cma, params.beta);
  }
  if (toggles.use_prior) {
    if (!frozen_nodes) throw LengthMismatch("rcme: prior enabled without frozen references");
    LossOutput prior;
    for (std::size_t p = 1; p <= n; ++p)
      prior.add_scaled(prior_preservation(chain[p], frozen_nodes->at((std::size_t)chain[p].id)),
                       1.0 / (double)n);
    if (breakdown) breakdown->prior = prior.value;
    out.add_scaled(prior, prior_weight);
  }
  return out;
}

}  // namespace rcme
