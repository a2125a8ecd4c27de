#pragma once

// Evaluation protocols: the root-to-prediction ordering walk scored by
// Kendall's tau, hierarchical precision/recall, per-rank zero-shot
// classification, image-to-image R@1, and the Lemma-1 / transitivity
// verifiers. Everything here is read-only over the tables.

#include <optional>

#include "losses.hpp"
#include "tables.hpp"

namespace rcme {

struct EvalConfig {
  int steps = 50;        // points on the root-to-prediction segment
  int queries = 50;      // leaf queries sampled for the ordering metrics
  std::uint64_t seed = 1234;
};

struct EvalReport {
  double tau_d = 0.0;        // mean over queries where tau is defined
  int tau_defined = 0;       // number of such queries
  int query_count = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;  // means over all queries
  std::vector<double> per_rank_accuracy;  // index 0 = rank 1
  std::vector<double> image_r_at_1;       // index 0 = rank 1
  double lemma1_pass_rate = 0.0;
  double transitivity_rate = 0.0;
};

// ---------------------------------------------------------------------------
// ordering walk

// Walks `steps` equally spaced points from T0 toward the node nearest the
// query (cosine similarity; ties to the lowest id), retrieving at each point
// the nearest non-root node within a radius of one inter-point spacing,
// measured as cosine distance in radial mode and chord length in Euclidean
// mode. Consecutive duplicates collapse; empty points are skipped. The root
// itself is neither a walk target nor retrievable.
inline std::vector<NodeId> ordering_walk(const EmbeddingTable& emb, const Taxonomy& t,
                                         const Vec& query, const EvalConfig& cfg) {
  const GeometrySpec& g = emb.geo;
  NodeId target = -1;
  double best = -2.0;
  double qn = norm(query);
  if (qn < detail::kDegenEps) throw DegenerateVector("ordering_walk: zero query");
  for (NodeId id = 0; id < (NodeId)emb.size(); ++id) {
    if (id == t.root_id) continue;
    double nn = norm(emb[id]);
    if (nn < detail::kDegenEps) continue;
    double c = dot(query, emb[id]) / (qn * nn);
    if (c > best) {
      best = c;
      target = id;
    }
  }
  if (target < 0) return {};

  std::vector<NodeId> out;
  auto push = [&](NodeId id) {
    if (out.empty() || out.back() != id) out.push_back(id);
  };

  if (g.mode == GeoMode::Radial) {
    double omega = std::acos(clamp(dot(g.root, emb[target]), -1.0, 1.0));
    if (omega < 1e-12) return {};
    double radius = 1.0 - std::cos(omega / (double)cfg.steps);
    for (int k = 1; k <= cfg.steps; ++k) {
      Vec p = slerp(g.root, emb[target], (double)k / (double)cfg.steps);
      NodeId hit = -1;
      double hd = std::numeric_limits<double>::infinity();
      for (NodeId id = 0; id < (NodeId)emb.size(); ++id) {
        if (id == t.root_id) continue;
        double d = 1.0 - dot(emb[id], p);
        if (d <= radius && d < hd) {
          hd = d;
          hit = id;
        }
      }
      if (hit >= 0) push(hit);
    }
  } else {
    double seg = norm(emb[target]);
    if (seg < 1e-12) return {};
    double radius = seg / (double)cfg.steps;
    for (int k = 1; k <= cfg.steps; ++k) {
      Vec p = scaled(emb[target], (double)k / (double)cfg.steps);
      NodeId hit = -1;
      double hd = std::numeric_limits<double>::infinity();
      for (NodeId id = 0; id < (NodeId)emb.size(); ++id) {
        if (id == t.root_id) continue;
        double d = norm(sub(emb[id], p));
        if (d <= radius && d < hd) {
          hd = d;
          hit = id;
        }
      }
      if (hit >= 0) push(hit);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kendall's tau over (retrieval position, taxonomic rank), tie-adjusted
// (tau-b). Positions are strictly increasing so only rank ties occur.
// Undefined (nullopt) with fewer than two retrievals or all ranks tied.

inline std::optional<double> kendall_tau_d(const std::vector<NodeId>& retrieved,
                                           const Taxonomy& t) {
  std::size_t n = retrieved.size();
  if (n < 2) return std::nullopt;
  long long concordant = 0, discordant = 0, rank_ties = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      int ri = t.node(retrieved[i]).rank, rj = t.node(retrieved[j]).rank;
      if (ri == rj) ++rank_ties;
      else if (ri < rj) ++concordant;
      else ++discordant;
    }
  long long n0 = (long long)n * ((long long)n - 1) / 2;
  if (rank_ties == n0) return std::nullopt;
  double denom = std::sqrt((double)n0 * (double)(n0 - rank_ties));
  return (double)(concordant - discordant) / denom;
}

// ---------------------------------------------------------------------------
// hierarchical precision / recall over the unique retrieved set vs the
// query's ground-truth chain, root excluded on both sides.

struct PrF1 {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

inline PrF1 hierarchical_pr(const std::vector<NodeId>& retrieved,
                            const std::vector<NodeId>& ground_truth_chain,
                            NodeId root_id) {
  std::vector<NodeId> uniq;
  for (NodeId id : retrieved)
    if (id != root_id && std::find(uniq.begin(), uniq.end(), id) == uniq.end())
      uniq.push_back(id);
  std::size_t chain_n = 0, inter = 0;
  for (NodeId id : ground_truth_chain) {
    if (id == root_id) continue;
    ++chain_n;
    if (std::find(uniq.begin(), uniq.end(), id) != uniq.end()) ++inter;
  }
  PrF1 r;
  if (!uniq.empty()) r.precision = (double)inter / (double)uniq.size();
  if (chain_n) r.recall = (double)inter / (double)chain_n;
  r.f1 = (r.precision + r.recall) > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// per-rank zero-shot classification: argmax cosine over the rank's nodes,
// ties broken toward the lowest id.

inline NodeId zero_shot_classify(const EmbeddingTable& emb, const Taxonomy& t, const Vec& query,
                                 int rank) {
  if (rank < 1 || rank > t.depth()) throw DomainError("zero_shot_classify: rank out of range");
  NodeId best_id = -1;
  double best = -std::numeric_limits<double>::infinity();
  double qn = norm(query);
  for (NodeId id : t.by_rank[(std::size_t)rank]) {
    double nn = norm(emb[id]);
    double c = nn < detail::kDegenEps || qn < detail::kDegenEps
                   ? 0.0
                   : dot(query, emb[id]) / (qn * nn);
    if (c > best) {
      best = c;
      best_id = id;
    }
  }
  return best_id;
}

// ---------------------------------------------------------------------------
// image-to-image R@1: nearest other instance by cosine; a hit shares the
// query's ancestor at `rank`.

inline double image_to_image_r1(const InstanceTable& inst, const Taxonomy& t, int rank) {
  std::size_t total = inst.size();
  if (total < 2) throw DomainError("image_to_image_r1: need at least two instances");
  // ancestor of each dense leaf at `rank`
  std::vector<NodeId> anc(inst.leaf_ids.size());
  for (std::size_t l = 0; l < inst.leaf_ids.size(); ++l)
    anc[l] = t.chain_of(inst.leaf_ids[l])[(std::size_t)rank];
  std::size_t hits = 0;
  for (std::size_t q = 0; q < total; ++q) {
    double qn = norm(inst.vecs[q]);
    std::size_t best = total;
    double bestc = -std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < total; ++o) {
      if (o == q) continue;
      double on = norm(inst.vecs[o]);
      double c = qn < detail::kDegenEps || on < detail::kDegenEps
                     ? 0.0
                     : dot(inst.vecs[q], inst.vecs[o]) / (qn * on);
      if (c > bestc) {
        bestc = c;
        best = o;
      }
    }
    std::size_t ipl = (std::size_t)inst.instances_per_leaf;
    if (anc[q / ipl] == anc[best / ipl]) ++hits;
  }
  return (double)hits / (double)total;
}

// ---------------------------------------------------------------------------
// Lemma-1 verifier: root distance must grow down every edge. Radial mode
// checks the cosine consequence <child, T0> <= <parent, T0>; Euclidean mode
// checks |parent| <= |child|. Root edges count (they hold trivially).

inline double lemma1_verify(const EmbeddingTable& emb, const Taxonomy& t) {
  const GeometrySpec& g = emb.geo;
  std::size_t pass = 0, total = 0;
  for (const TaxNode& n : t.nodes) {
    if (n.rank == 0) continue;
    ++total;
    if (g.mode == GeoMode::Radial) {
      if (dot(emb[n.id], g.root) <= dot(emb[n.parent], g.root) + 1e-9) ++pass;
    } else {
      if (norm(emb[n.parent]) <= norm(emb[n.id]) + 1e-9) ++pass;
    }
  }
  return total ? (double)pass / (double)total : 0.0;
}

// Transitivity-bound satisfaction over every consecutive (grand, parent,
// child) triple,
// one triple per node of rank >= 2. Uses the same root-anchor convention as
// the losses so triples whose grandparent is T0 are well-defined.
inline double transitivity_rate(const EmbeddingTable& emb, const Taxonomy& t) {
  const GeometrySpec& g = emb.geo;
  std::size_t pass = 0, total = 0;
  for (const TaxNode& n : t.nodes) {
    if (n.rank < 2) continue;
    NodeId parent = n.parent;
    NodeId grand = t.node(parent).parent;
    double sgc = clip01(detail::angle_with_grad(g, emb[grand], emb[n.id], true).cosv);
    double sgp = clip01(detail::angle_with_grad(g, emb[grand], emb[parent], true).cosv);
    double spc = clip01(detail::angle_with_grad(g, emb[parent], emb[n.id], true).cosv);
    ++total;
    if (sgc >= sgp * spc - 1e-9) ++pass;
  }
  return total ? (double)pass / (double)total : 0.0;
}

// ---------------------------------------------------------------------------
// full report

// Ordering metrics use `cfg.queries` distinct leaves (all leaves when fewer)
// with one uniformly drawn instance each; classification and R@1 use every
// instance. The tau mean runs over the queries where tau is defined and is
// 0 when none are (an empty retrieval carries no ordering evidence).
inline EvalReport evaluate(const EmbeddingTable& emb, const InstanceTable& inst,
                           const Taxonomy& t, const EvalConfig& cfg) {
  EvalReport rep;
  Rng rng(cfg.seed);
  std::size_t leaf_count = t.leaves.size();
  std::vector<std::size_t> order(leaf_count);
  for (std::size_t i = 0; i < leaf_count; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t q = std::min<std::size_t>((std::size_t)cfg.queries, leaf_count);

  double tau_sum = 0.0, p_sum = 0.0, r_sum = 0.0;
  std::uniform_int_distribution<int> dk(0, inst.instances_per_leaf - 1);
  for (std::size_t i = 0; i < q; ++i) {
    std::size_t dense = order[i];
    const Vec& query = inst.at(dense, dk(rng));
    std::vector<NodeId> walk = ordering_walk(emb, t, query, cfg);
    if (auto tau = kendall_tau_d(walk, t)) {
      tau_sum += *tau;
      ++rep.tau_defined;
    }
    PrF1 pr = hierarchical_pr(walk, t.chain_of(t.leaves[dense]), t.root_id);
    p_sum += pr.precision;
    r_sum += pr.recall;
  }
  rep.query_count = (int)q;
  rep.tau_d = rep.tau_defined ? tau_sum / (double)rep.tau_defined : 0.0;
  if (q) {
    rep.precision = p_sum / (double)q;
    rep.recall = r_sum / (double)q;
    // harmonic of the stored means, keeping the report internally consistent
    rep.f1 = (rep.precision + rep.recall) > 0.0
                 ? 2.0 * rep.precision * rep.recall / (rep.precision + rep.recall)
                 : 0.0;
  }

  int n = t.depth();
  rep.per_rank_accuracy.assign((std::size_t)n, 0.0);
  rep.image_r_at_1.assign((std::size_t)n, 0.0);
  std::size_t total_inst = inst.size();
  for (int rank = 1; rank <= n; ++rank) {
    std::size_t hits = 0;
    for (std::size_t l = 0; l < inst.leaf_ids.size(); ++l) {
      NodeId truth = t.chain_of(inst.leaf_ids[l])[(std::size_t)rank];
      for (int k = 0; k < inst.instances_per_leaf; ++k)
        if (zero_shot_classify(emb, t, inst.at(l, k), rank) == truth) ++hits;
    }
    rep.per_rank_accuracy[(std::size_t)rank - 1] = total_inst ? (double)hits / (double)total_inst : 0.0;
    rep.image_r_at_1[(std::size_t)rank - 1] = image_to_image_r1(inst, t, rank);
  }

  rep.lemma1_pass_rate = lemma1_verify(emb, t);
  rep.transitivity_rate = transitivity_rate(emb, t);
  return rep;
}

// ---------------------------------------------------------------------------
// report serialization: flat key=value plus a per-rank table.

inline void write_report(const EvalReport& r, std::ostream& out) {
  out << "tau_d=" << detail::fmt_double(r.tau_d) << "\n";
  out << "tau_defined_queries=" << r.tau_defined << "\n";
  out << "query_count=" << r.query_count << "\n";
  out << "precision=" << detail::fmt_double(r.precision) << "\n";
  out << "recall=" << detail::fmt_double(r.recall) << "\n";
  out << "f1=" << detail::fmt_double(r.f1) << "\n";
  out << "lemma1_pass_rate=" << detail::fmt_double(r.lemma1_pass_rate) << "\n";
  out << "transitivity_rate=" << detail::fmt_double(r.transitivity_rate) << "\n";
  for (std::size_t i = 0; i < r.per_rank_accuracy.size(); ++i)
    out << "acc_rank_" << (i + 1) << "=" << detail::fmt_double(r.per_rank_accuracy[i]) << "\n";
  for (std::size_t i = 0; i < r.image_r_at_1.size(); ++i)
    out << "r1_rank_" << (i + 1) << "=" << detail::fmt_double(r.image_r_at_1[i]) << "\n";
}

inline void write_report_table(const EvalReport& r, std::ostream& out) {
  out << "rank\taccuracy\tr_at_1\n";
  for (std::size_t i = 0; i < r.per_rank_accuracy.size(); ++i)
    out << (i + 1) << "\t" << detail::fmt_double(r.per_rank_accuracy[i]) << "\t"
        << detail::fmt_double(r.image_r_at_1[i]) << "\n";
}

}  // namespace rcme
