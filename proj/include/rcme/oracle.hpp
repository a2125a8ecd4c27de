#pragma once

// Brute-force cross-checks behind the CLI --oracle flag. These recompute the
// retrieval protocols with a deliberately different search structure
// (collect-all-then-select instead of streaming argmin) so selection logic,
// radius handling, and tie rules are exercised independently.

#include "eval.hpp"

namespace rcme {
namespace oracle {

inline NodeId select_best(std::vector<std::pair<double, NodeId>>& cand) {
  // highest score, ties toward the lowest id
  std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  return cand.empty() ? -1 : cand.front().second;
}

inline std::vector<NodeId> ordering_walk(const EmbeddingTable& emb, const Taxonomy& t,
                                         const Vec& query, const EvalConfig& cfg) {
  const GeometrySpec& g = emb.geo;
  std::vector<std::pair<double, NodeId>> cand;
  double qn = norm(query);
  for (NodeId id = 0; id < (NodeId)emb.size(); ++id) {
    if (id == t.root_id) continue;
    double nn = norm(emb[id]);
    if (nn < 1e-12) continue;
    cand.emplace_back(dot(query, emb[id]) / (qn * nn), id);
  }
  NodeId target = select_best(cand);
  if (target < 0) return {};

  std::vector<NodeId> raw;
  for (int k = 1; k <= cfg.steps; ++k) {
    double tk = (double)k / (double)cfg.steps;
    Vec p;
    double radius;
    if (g.mode == GeoMode::Radial) {
      double omega = std::acos(clamp(dot(g.root, emb[target]), -1.0, 1.0));
      if (omega < 1e-12) return {};
      p = slerp(g.root, emb[target], tk);
      radius = 1.0 - std::cos(omega / (double)cfg.steps);
    } else {
      double seg = norm(emb[target]);
      if (seg < 1e-12) return {};
      p = scaled(emb[target], tk);
      radius = seg / (double)cfg.steps;
    }
    std::vector<std::pair<double, NodeId>> in_ball;
    for (NodeId id = 0; id < (NodeId)emb.size(); ++id) {
      if (id == t.root_id) continue;
      double d = g.mode == GeoMode::Radial ? 1.0 - dot(emb[id], p) : norm(sub(emb[id], p));
      if (d <= radius) in_ball.emplace_back(-d, id);  // negate: nearest = highest score
    }
    NodeId hit = select_best(in_ball);
    if (hit >= 0) raw.push_back(hit);
  }
  std::vector<NodeId> out;
  for (NodeId id : raw)
    if (out.empty() || out.back() != id) out.push_back(id);
  return out;
}

inline std::optional<double> kendall_tau_d(const std::vector<NodeId>& retrieved,
                                           const Taxonomy& t) {
  std::size_t n = retrieved.size();
  if (n < 2) return std::nullopt;
  // explicit pair classification over (position, rank)
  long long concordant = 0, discordant = 0, tied_rank = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      int dp = (int)j - (int)i;  // > 0 always
      int dr = t.node(retrieved[j]).rank - t.node(retrieved[i]).rank;
      if (dr == 0) ++tied_rank;
      else if ((dp > 0 && dr > 0) || (dp < 0 && dr < 0)) ++concordant;
      else ++discordant;
    }
  long long n0 = (long long)(n * (n - 1) / 2);
  if (tied_rank == n0) return std::nullopt;
  return (double)(concordant - discordant) /
         std::sqrt((double)n0 * (double)(n0 - tied_rank));
}

inline NodeId zero_shot_classify(const EmbeddingTable& emb, const Taxonomy& t, const Vec& query,
                                 int rank) {
  std::vector<std::pair<double, NodeId>> cand;
  double qn = norm(query);
  for (NodeId id : t.by_rank[(std::size_t)rank]) {
    double nn = norm(emb[id]);
    double c = nn < 1e-12 || qn < 1e-12 ? 0.0 : dot(query, emb[id]) / (qn * nn);
    cand.emplace_back(c, id);
  }
  return select_best(cand);
}

inline double image_to_image_r1(const InstanceTable& inst, const Taxonomy& t, int rank) {
  std::size_t total = inst.size();
  std::size_t ipl = (std::size_t)inst.instances_per_leaf;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < total; ++q) {
    std::vector<std::pair<double, NodeId>> cand;
    double qn = norm(inst.vecs[q]);
    for (std::size_t o = 0; o < total; ++o) {
      if (o == q) continue;
      double on = norm(inst.vecs[o]);
      double c = qn < 1e-12 || on < 1e-12 ? 0.0 : dot(inst.vecs[q], inst.vecs[o]) / (qn * on);
      cand.emplace_back(c, (NodeId)o);
    }
    std::size_t best = (std::size_t)select_best(cand);
    NodeId qa = t.chain_of(inst.leaf_ids[q / ipl])[(std::size_t)rank];
    NodeId ba = t.chain_of(inst.leaf_ids[best / ipl])[(std::size_t)rank];
    if (qa == ba) ++hits;
  }
  return (double)hits / (double)total;
}

// Runs every cross-check over the evaluation protocol's own query stream.
// Returns a human-readable description of the first mismatch, empty on
// agreement.
inline std::string cross_check(const EmbeddingTable& emb, const InstanceTable& inst,
                               const Taxonomy& t, const EvalConfig& cfg) {
  Rng rng(cfg.seed);
  std::size_t leaf_count = t.leaves.size();
  std::vector<std::size_t> order(leaf_count);
  for (std::size_t i = 0; i < leaf_count; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t q = std::min<std::size_t>((std::size_t)cfg.queries, leaf_count);
  std::uniform_int_distribution<int> dk(0, inst.instances_per_leaf - 1);
  for (std::size_t i = 0; i < q; ++i) {
    const Vec& query = inst.at(order[i], dk(rng));
    auto fast = rcme::ordering_walk(emb, t, query, cfg);
    auto slow = oracle::ordering_walk(emb, t, query, cfg);
    if (fast != slow) return "ordering_walk mismatch at query " + std::to_string(i);
    auto ft = rcme::kendall_tau_d(fast, t);
    auto st = oracle::kendall_tau_d(slow, t);
    if (ft.has_value() != st.has_value() || (ft && *ft != *st))
      return "kendall_tau_d mismatch at query " + std::to_string(i);
  }
  for (int rank = 1; rank <= t.depth(); ++rank) {
    for (std::size_t l = 0; l < inst.leaf_ids.size(); ++l)
      for (int k = 0; k < inst.instances_per_leaf; ++k) {
        const Vec& query = inst.at(l, k);
        if (rcme::zero_shot_classify(emb, t, query, rank) !=
            oracle::zero_shot_classify(emb, t, query, rank))
          return "zero_shot_classify mismatch at rank " + std::to_string(rank);
      }
    if (rcme::image_to_image_r1(inst, t, rank) != oracle::image_to_image_r1(inst, t, rank))
      return "image_to_image_r1 mismatch at rank " + std::to_string(rank);
  }
  return "";
}

}  // namespace oracle
}  // namespace rcme
