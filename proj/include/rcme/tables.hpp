#pragma once

// Trainable embedding storage plus the lossless text export format.
//
//   # rcme-tables v1
//   # dim=<d> geometry=<radial|euclidean> epsilon_r=<e> aperture_k=<k> instances_per_leaf=<p>
//   # ranks=root|rank1|...
//   <id>\t<node|instance>\t<rank>\t<label>\t<c0> <c1> ...
//
// Vectors print with %.17g so a round-trip reproduces every double bitwise;
// instance ids are "<leaf-id>:<index>".

#include <cinttypes>
#include <cstdio>
#include <fstream>

#include "geometry.hpp"
#include "taxonomy.hpp"

namespace rcme {

struct EmbeddingTable {
  GeometrySpec geo;
  std::vector<Vec> vecs;  // indexed by node id

  Vec& operator[](NodeId id) { return vecs[(std::size_t)id]; }
  const Vec& operator[](NodeId id) const { return vecs[(std::size_t)id]; }
  std::size_t size() const { return vecs.size(); }
};

struct InstanceTable {
  int instances_per_leaf = 4;
  std::vector<NodeId> leaf_ids;  // dense leaf order (ascending node id)
  std::vector<Vec> vecs;         // leaf-major: dense_leaf * instances_per_leaf + k

  std::size_t index(std::size_t dense_leaf, int k) const {
    return dense_leaf * (std::size_t)instances_per_leaf + (std::size_t)k;
  }
  Vec& at(std::size_t dense_leaf, int k) { return vecs[index(dense_leaf, k)]; }
  const Vec& at(std::size_t dense_leaf, int k) const { return vecs[index(dense_leaf, k)]; }
  std::size_t size() const { return vecs.size(); }

  // EmbedIds continue past the node ids.
  EmbedId embed_id(std::size_t node_count, std::size_t dense_leaf, int k) const {
    return (EmbedId)(node_count + index(dense_leaf, k));
  }
};

enum class InitMode { RandomSphere, FromFile };

// ---------------------------------------------------------------------------
// initialization

namespace detail {

inline Vec random_direction(int dim, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec v((std::size_t)dim);
  double n = 0.0;
  do {
    for (double& x : v) x = gauss(rng);
    n = norm(v);
  } while (n < 1e-9);
  return scaled(v, 1.0 / n);
}

inline Vec random_init_vec(const GeometrySpec& g, Rng& rng) {
  Vec v = random_direction(g.dim, rng);
  // euclidean embeddings start at norm 0.5 so norms have room to grow
  if (g.mode == GeoMode::Euclidean) for (double& x : v) x *= 0.5;
  return v;
}

}  // namespace detail

inline std::pair<EmbeddingTable, InstanceTable> random_tables(const Taxonomy& t,
                                                              const GeometrySpec& g,
                                                              int instances_per_leaf, Rng& rng) {
  g.validate();
  EmbeddingTable emb;
  emb.geo = g;
  emb.vecs.resize(t.nodes.size());
  for (std::size_t i = 0; i < t.nodes.size(); ++i)
    emb.vecs[i] = detail::random_init_vec(g, rng);
  emb.vecs[(std::size_t)t.root_id] = g.root;

  InstanceTable inst;
  inst.instances_per_leaf = instances_per_leaf;
  inst.leaf_ids = t.leaves;
  inst.vecs.resize(t.leaves.size() * (std::size_t)instances_per_leaf);
  for (std::size_t i = 0; i < inst.vecs.size(); ++i)
    inst.vecs[i] = detail::random_init_vec(g, rng);
  return {std::move(emb), std::move(inst)};
}

// ---------------------------------------------------------------------------
// export / import

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void export_tables(const Taxonomy& t, const EmbeddingTable& emb,
                          const InstanceTable& inst, std::ostream& out) {
  const GeometrySpec& g = emb.geo;
  out << "# rcme-tables v1\n";
  out << "# dim=" << g.dim << " geometry=" << (g.mode == GeoMode::Radial ? "radial" : "euclidean")
      << " epsilon_r=" << detail::fmt_double(g.epsilon_r)
      << " aperture_k=" << detail::fmt_double(g.aperture_k)
      << " instances_per_leaf=" << inst.instances_per_leaf << "\n";
  out << "# ranks=";
  for (std::size_t i = 0; i < t.rank_names.size(); ++i)
    out << (i ? "|" : "") << t.rank_names[i];
  out << "\n";
  for (std::size_t i = 0; i < emb.vecs.size(); ++i) {
    const TaxNode& n = t.node((NodeId)i);
    out << i << "\tnode\t" << n.rank << "\t" << n.label << "\t";
    for (int c = 0; c < g.dim; ++c)
      out << (c ? " " : "") << detail::fmt_double(emb.vecs[i][(std::size_t)c]);
    out << "\n";
  }
  for (std::size_t l = 0; l < inst.leaf_ids.size(); ++l) {
    const TaxNode& n = t.node(inst.leaf_ids[l]);
    for (int k = 0; k < inst.instances_per_leaf; ++k) {
      out << n.id << ":" << k << "\tinstance\t" << n.rank << "\t" << n.label << "\t";
      const Vec& v = inst.at(l, k);
      for (int c = 0; c < g.dim; ++c) out << (c ? " " : "") << detail::fmt_double(v[(std::size_t)c]);
      out << "\n";
    }
  }
}

inline void export_tables(const Taxonomy& t, const EmbeddingTable& emb,
                          const InstanceTable& inst, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write tables file: " + path);
  export_tables(t, emb, inst, f);
  if (!f) throw IoError("write failed: " + path);
}

struct ImportedTables {
  GeometrySpec geo;
  int instances_per_leaf = 0;
  std::vector<std::string> rank_names;
  // node rows keyed by id; instance rows keyed by (leaf id, index)
  std::vector<std::pair<TaxNode, Vec>> nodes;
  std::map<std::pair<NodeId, int>, Vec> instances;
};

inline ImportedTables import_tables(std::istream& in) {
  ImportedTables out;
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "# rcme-tables v1")
    throw SchemaError("tables: missing 'rcme-tables v1' header");
  if (!std::getline(in, line)) throw SchemaError("tables: missing meta header");
  {
    std::istringstream meta(line);
    std::string tok;
    meta >> tok;  // '#'
    if (tok != "#") throw SchemaError("tables: malformed meta header");
    int dim = -1;
    std::string mode;
    double eps = -1.0, apk = -1.0;
    int ipl = -1;
    while (meta >> tok) {
      std::size_t eq = tok.find('=');
      if (eq == std::string::npos) throw SchemaError("tables: malformed meta field " + tok);
      std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
      if (key == "dim") dim = std::stoi(val);
      else if (key == "geometry") mode = val;
      else if (key == "epsilon_r") eps = std::stod(val);
      else if (key == "aperture_k") apk = std::stod(val);
      else if (key == "instances_per_leaf") ipl = std::stoi(val);
      else throw SchemaError("tables: unknown meta field " + key);
    }
    if (dim <= 0 || ipl < 0 || eps < 0 || apk < 0 || (mode != "radial" && mode != "euclidean"))
      throw SchemaError("tables: incomplete meta header");
    out.geo = mode == "radial" ? GeometrySpec::radial(dim, eps, apk)
                               : GeometrySpec::euclidean(dim, eps, apk);
    out.instances_per_leaf = ipl;
  }
  if (!std::getline(in, line) || line.rfind("# ranks=", 0) != 0)
    throw SchemaError("tables: missing ranks header");
  out.rank_names = detail::split(line.substr(8), '|');

  std::size_t lineno = 3;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> cols = detail::split(line, '\t');
    if (cols.size() != 5)
      throw SchemaError("tables line " + std::to_string(lineno) + ": expected 5 columns");
    Vec v;
    {
      std::istringstream vs(cols[4]);
      double x;
      while (vs >> x) v.push_back(x);
      if ((int)v.size() != out.geo.dim)
        throw SchemaError("tables line " + std::to_string(lineno) + ": wrong vector dim");
    }
    int rank = std::stoi(cols[2]);
    if (cols[1] == "node") {
      TaxNode n;
      n.id = std::stoll(cols[0]);
      n.rank = rank;
      n.label = cols[3];
      out.nodes.emplace_back(std::move(n), std::move(v));
    } else if (cols[1] == "instance") {
      std::size_t colon = cols[0].find(':');
      if (colon == std::string::npos)
        throw SchemaError("tables line " + std::to_string(lineno) + ": bad instance id");
      NodeId leaf = std::stoll(cols[0].substr(0, colon));
      int k = std::stoi(cols[0].substr(colon + 1));
      out.instances[{leaf, k}] = std::move(v);
    } else {
      throw SchemaError("tables line " + std::to_string(lineno) + ": unknown kind " + cols[1]);
    }
  }
  return out;
}

inline ImportedTables import_tables(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open tables file: " + path);
  return import_tables(f);
}

// Re-binds an import against a taxonomy, validating ids, ranks, and labels.
inline std::pair<EmbeddingTable, InstanceTable> bind_tables(const ImportedTables& imp,
                                                            const Taxonomy& t) {
  if (imp.rank_names != t.rank_names)
    throw SchemaError("tables: rank names do not match the taxonomy");
  if (imp.nodes.size() != t.nodes.size())
    throw SchemaError("tables: node count does not match the taxonomy");
  EmbeddingTable emb;
  emb.geo = imp.geo;
  emb.vecs.resize(t.nodes.size());
  std::vector<bool> seen(t.nodes.size(), false);
  for (const auto& [n, v] : imp.nodes) {
    if (n.id < 0 || n.id >= (NodeId)t.nodes.size() || seen[(std::size_t)n.id])
      throw SchemaError("tables: bad or duplicate node id " + std::to_string(n.id));
    const TaxNode& ref = t.node(n.id);
    if (ref.rank != n.rank || ref.label != n.label)
      throw SchemaError("tables: node " + std::to_string(n.id) + " does not match the taxonomy");
    emb.vecs[(std::size_t)n.id] = v;
    seen[(std::size_t)n.id] = true;
  }
  InstanceTable inst;
  inst.instances_per_leaf = imp.instances_per_leaf;
  inst.leaf_ids = t.leaves;
  inst.vecs.resize(t.leaves.size() * (std::size_t)imp.instances_per_leaf);
  std::size_t expected = inst.vecs.size();
  if (imp.instances.size() != expected)
    throw SchemaError("tables: instance count does not match instances_per_leaf");
  for (std::size_t l = 0; l < t.leaves.size(); ++l)
    for (int k = 0; k < imp.instances_per_leaf; ++k) {
      auto it = imp.instances.find({t.leaves[l], k});
      if (it == imp.instances.end())
        throw SchemaError("tables: missing instance " + std::to_string(t.leaves[l]) + ":" +
                          std::to_string(k));
      inst.at(l, k) = it->second;
    }
  return {std::move(emb), std::move(inst)};
}

inline std::pair<EmbeddingTable, InstanceTable> load_tables(const std::string& path,
                                                            const Taxonomy& t) {
  try {
    return bind_tables(import_tables(path), t);
  } catch (const SchemaError& e) {
    throw LoadError(std::string("load_tables: ") + e.what());
  }
}

}  // namespace rcme
