#pragma once

// Rooted ranked-tree model plus ingestion and the sibling-of-parent hard
// negative mining. The tree is immutable after construction; node ids are
// dense indices assigned in first-seen record order, root id 0.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"

namespace rcme {

using Rng = std::mt19937_64;

struct TaxNode {
  NodeId id = -1;
  std::string label;
  int rank = 0;          // 0 = entailment root .. N = leaf rank
  NodeId parent = -1;    // -1 iff rank == 0
  std::vector<NodeId> children;
};

struct Taxonomy {
  std::vector<TaxNode> nodes;           // index == id
  std::vector<std::string> rank_names;  // N+1 entries, index 0 names the root rank
  NodeId root_id = 0;
  std::vector<NodeId> leaves;                    // rank-N nodes in id order
  std::vector<std::vector<NodeId>> by_rank;      // rank -> ids in id order

  int depth() const { return (int)rank_names.size() - 1; }  // N
  const TaxNode& node(NodeId id) const { return nodes.at((std::size_t)id); }

  // Unique root-to-leaf path; position j holds the rank-j ancestor.
  std::vector<NodeId> chain_of(NodeId leaf) const {
    if (leaf < 0 || leaf >= (NodeId)nodes.size() || node(leaf).rank != depth())
      throw NotALeaf("chain_of: node is not a leaf");
    std::vector<NodeId> chain((std::size_t)depth() + 1);
    NodeId cur = leaf;
    for (int r = depth(); r >= 0; --r) {
      chain[(std::size_t)r] = cur;
      cur = node(cur).parent;
    }
    return chain;
  }

  void finalize() {
    int n = depth();
    by_rank.assign((std::size_t)n + 1, {});
    for (const TaxNode& t : nodes) by_rank[(std::size_t)t.rank].push_back(t.id);
    leaves = by_rank[(std::size_t)n];
  }

  void validate() const {
    int n = depth();
    if (n < 2) throw ParseError("taxonomy: depth must be at least 2");
    if (by_rank[0].size() != 1 || by_rank[0][0] != root_id)
      throw ParseError("taxonomy: exactly one rank-0 node required");
    for (const TaxNode& t : nodes) {
      if (t.rank == 0) {
        if (t.parent != -1) throw ParseError("taxonomy: root cannot have a parent");
      } else {
        if (t.parent < 0) throw ParseError("taxonomy: non-root node without parent");
        if (node(t.parent).rank != t.rank - 1)
          throw ParseError("taxonomy: parent rank must be one less");
      }
    }
    for (int r = 0; r <= n; ++r) {
      std::map<std::string, int> seen;
      for (NodeId id : by_rank[(std::size_t)r])
        if (++seen[node(id).label] > 1)
          throw ParseError("taxonomy: duplicate label within rank: " + node(id).label);
    }
  }
};

// ---------------------------------------------------------------------------
// ingestion

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == delim) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

struct TaxBuilder {
  Taxonomy tax;
  std::map<std::vector<std::string>, NodeId> by_path;  // prefix path -> id
  std::map<std::vector<std::string>, int> leaf_seen;
  int record_depth = -1;  // N, fixed by the first record
  int duplicate_leaves = 0;

  void start() {
    TaxNode root;
    root.id = 0;
    root.rank = 0;
    root.label = "root";
    tax.nodes.push_back(root);
    tax.root_id = 0;
  }

  void add_record(const std::vector<std::string>& labels, std::size_t lineno) {
    if (labels.empty() || labels.size() < 2)
      throw ParseError("taxonomy record " + std::to_string(lineno) + ": too few labels");
    for (const std::string& l : labels)
      if (l.empty())
        throw ParseError("taxonomy record " + std::to_string(lineno) + ": empty label");
    if (record_depth < 0)
      record_depth = (int)labels.size();
    else if ((int)labels.size() != record_depth)
      throw InconsistentDepth("taxonomy record " + std::to_string(lineno) + ": expected " +
                              std::to_string(record_depth) + " labels, got " +
                              std::to_string(labels.size()));
    if (++leaf_seen[labels] > 1) {
      ++duplicate_leaves;
      std::cerr << "warning: duplicate leaf record at line " << lineno << ", deduplicated\n";
      return;
    }
    NodeId parent = tax.root_id;
    std::vector<std::string> prefix;
    for (std::size_t r = 0; r < labels.size(); ++r) {
      prefix.push_back(labels[r]);
      auto it = by_path.find(prefix);
      if (it != by_path.end()) {
        parent = it->second;
        continue;
      }
      TaxNode t;
      t.id = (NodeId)tax.nodes.size();
      t.label = labels[r];
      t.rank = (int)r + 1;
      t.parent = parent;
      tax.nodes[(std::size_t)parent].children.push_back(t.id);
      by_path[prefix] = t.id;
      tax.nodes.push_back(t);
      parent = t.id;
    }
  }

  Taxonomy finish(std::vector<std::string> rank_names) {
    if (record_depth < 0) throw ParseError("taxonomy: no records");
    if (rank_names.empty()) {
      rank_names.push_back("root");
      for (int r = 1; r <= record_depth; ++r) rank_names.push_back("rank" + std::to_string(r));
    }
    if ((int)rank_names.size() != record_depth + 1)
      throw InconsistentDepth("taxonomy: rank-name header length does not match records");
    tax.rank_names = std::move(rank_names);
    tax.nodes[0].label = tax.rank_names[0];
    tax.finalize();
    tax.validate();
    return std::move(tax);
  }
};

}  // namespace detail

// Path format: one leaf per line, labels for ranks 1..N joined by `delim`;
// optional "#ranks:" header declaring the N+1 rank names (root first).
inline Taxonomy ingest_paths(std::istream& in, char delim = '|') {
  detail::TaxBuilder b;
  b.start();
  std::vector<std::string> rank_names;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty()) continue;
    if (t.rfind("#ranks:", 0) == 0) {
      rank_names = detail::split(t.substr(7), delim);
      continue;
    }
    if (t[0] == '#') continue;
    b.add_record(detail::split(t, delim), lineno);
  }
  return b.finish(std::move(rank_names));
}

// Structured format: one JSON object per line, {"labels": ["a", ...]}.
inline Taxonomy ingest_jsonl(std::istream& in) {
  detail::TaxBuilder b;
  b.start();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(t);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("jsonl record " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("labels") || !j["labels"].is_array())
      throw ParseError("jsonl record " + std::to_string(lineno) + ": expected {\"labels\": [...]}");
    std::vector<std::string> labels;
    for (const auto& v : j["labels"]) {
      if (!v.is_string())
        throw ParseError("jsonl record " + std::to_string(lineno) + ": labels must be strings");
      labels.push_back(v.get<std::string>());
    }
    b.add_record(labels, lineno);
  }
  return b.finish({});
}

// Sniffs the format: a first non-blank, non-comment line starting with '{'
// selects the structured reader.
inline Taxonomy ingest_file(const std::string& path, char delim = '|') {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open taxonomy file: " + path);
  std::string line, first;
  std::streampos pos = f.tellg();
  while (std::getline(f, line)) {
    std::string t = detail::trim(line);
    if (!t.empty() && t[0] != '#') {
      first = t;
      break;
    }
  }
  f.clear();
  f.seekg(pos);
  if (!first.empty() && first[0] == '{') return ingest_jsonl(f);
  return ingest_paths(f, delim);
}

inline void write_taxonomy(const Taxonomy& t, std::ostream& out, char delim = '|') {
  out << "#ranks:";
  for (std::size_t i = 0; i < t.rank_names.size(); ++i)
    out << (i ? std::string(1, delim) : "") << t.rank_names[i];
  out << "\n";
  for (NodeId leaf : t.leaves) {
    std::vector<NodeId> chain = t.chain_of(leaf);
    for (std::size_t r = 1; r < chain.size(); ++r)
      out << (r > 1 ? std::string(1, delim) : "") << t.node(chain[r]).label;
    out << "\n";
  }
}

inline void write_taxonomy(const Taxonomy& t, const std::string& path, char delim = '|') {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write taxonomy file: " + path);
  write_taxonomy(t, f, delim);
}

// Balanced synthetic tree: `branching` children per node down to `depth`
// ranks below the root, labels n<rank>_<index>. Built through the ingestion
// path so node ids match a file round-trip exactly.
inline Taxonomy synth_taxonomy(int depth, int branching) {
  if (depth < 2) throw ArgError("synth: depth must be >= 2");
  if (branching < 2) throw ArgError("synth: branching must be >= 2 (negatives impossible)");
  std::ostringstream buf;
  buf << "#ranks:root";
  for (int r = 1; r <= depth; ++r) buf << "|rank" << r;
  buf << "\n";
  long long leaf_count = 1;
  for (int r = 0; r < depth; ++r) leaf_count *= branching;
  for (long long leaf = 0; leaf < leaf_count; ++leaf) {
    // index of the rank-r ancestor among rank-r nodes, leaf-major encoding
    long long idx = leaf;
    std::vector<long long> anc((std::size_t)depth + 1);
    for (int r = depth; r >= 1; --r) {
      anc[(std::size_t)r] = idx;
      idx /= branching;
    }
    for (int r = 1; r <= depth; ++r) buf << (r > 1 ? "|" : "") << "n" << r << "_" << anc[(std::size_t)r];
    buf << "\n";
  }
  std::istringstream in(buf.str());
  return ingest_paths(in, '|');
}

// ---------------------------------------------------------------------------
// negative mining

enum class NegativeMining { Hard, Random };

namespace detail {

template <typename T>
inline const T& pick(const std::vector<T>& v, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

// All rank-`rank` descendants of `node`.
inline void descendants_at_rank(const Taxonomy& t, NodeId node, int rank,
                                std::vector<NodeId>& out) {
  const TaxNode& n = t.node(node);
  if (n.rank == rank) {
    out.push_back(node);
    return;
  }
  if (n.rank > rank) return;
  for (NodeId c : n.children) descendants_at_rank(t, c, rank, out);
}

}  // namespace detail

// Fig.-3 mining: uniformly pick a sibling of the positive's parent, then
// uniformly pick one of that sibling's children. The result shares every
// ancestor above the parent rank and differs at the parent.
inline NodeId hard_negative(const Taxonomy& t, NodeId positive, Rng& rng) {
  const TaxNode& pos = t.node(positive);
  if (pos.rank < 2) throw NoSibling("hard_negative: positive has no grandparent");
  NodeId parent = pos.parent;
  NodeId grand = t.node(parent).parent;
  std::vector<NodeId> sibs;
  for (NodeId c : t.node(grand).children)
    if (c != parent) sibs.push_back(c);
  if (sibs.empty()) throw NoSibling("hard_negative: parent has no sibling");
  NodeId sib = detail::pick(sibs, rng);
  return detail::pick(t.node(sib).children, rng);
}

// One negative per rank 1..N for the given chain, entry j (0-based) holding
// the rank-(j+1) negative consumed by the anchor at rank j. Rank-1 entries
// have no grandparent; a uniformly sampled different rank-1 node is used.
// When a parent has no sibling the mining widens to the nearest ancestor
// with a second branch and samples a same-rank descendant from there; a
// fully linear taxonomy has no negatives at all and raises
// NegativeUnavailable.
inline std::vector<NodeId> negative_set(const Taxonomy& t, const std::vector<NodeId>& chain,
                                        Rng& rng, NegativeMining mode = NegativeMining::Hard) {
  int n = t.depth();
  if ((int)chain.size() != n + 1)
    throw LengthMismatch("negative_set: chain length must be depth + 1");
  std::vector<NodeId> out((std::size_t)n);
  for (int rank = 1; rank <= n; ++rank) {
    NodeId positive = chain[(std::size_t)rank];
    if (mode == NegativeMining::Random) {
      std::vector<NodeId> pool;
      for (NodeId id : t.by_rank[(std::size_t)rank])
        if (id != positive) pool.push_back(id);
      if (pool.empty())
        throw NegativeUnavailable("negative_set: single node at rank " + std::to_string(rank));
      out[(std::size_t)rank - 1] = detail::pick(pool, rng);
      continue;
    }
    if (rank >= 2) {
      try {
        out[(std::size_t)rank - 1] = hard_negative(t, positive, rng);
        continue;
      } catch (const NoSibling&) {
        // widen below
      }
    }
    // rank-1 rule and the no-sibling fallback share the same search: climb
    // to the nearest ancestor with a second branch and sample a same-rank
    // descendant from the branches not containing the positive's lineage.
    // Rank 1 starts at the root (a different rank-1 node); the fallback
    // starts at the grandparent so the pool never contains a node sharing
    // the positive's parent.
    NodeId from = rank >= 2 ? t.node(positive).parent : positive;
    NodeId anc = t.node(from).parent;
    std::vector<NodeId> pool;
    while (anc != -1) {
      for (NodeId c : t.node(anc).children)
        if (c != from) detail::descendants_at_rank(t, c, rank, pool);
      if (!pool.empty()) break;
      from = anc;
      anc = t.node(anc).parent;
    }
    if (pool.empty())
      throw NegativeUnavailable("negative_set: no negative exists at rank " +
                                std::to_string(rank));
    out[(std::size_t)rank - 1] = detail::pick(pool, rng);
  }
  return out;
}

}  // namespace rcme
