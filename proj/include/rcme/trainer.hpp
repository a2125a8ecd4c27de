#pragma once

// Projected gradient training of the node and instance tables under the
// RCME objective. Plain Euclidean optimizer step followed by re-projection
// onto the sphere in radial mode; the root vector is never touched.

#include <thread>

#include "losses.hpp"
#include "tables.hpp"

namespace rcme {

enum class Optimizer { SGD, Momentum, Adam };
enum class Schedule { Constant, OneCycle };

struct TrainConfig {
  std::uint64_t seed = 0;
  int dim = 32;
  double learning_rate = 0.05;
  Optimizer optimizer = Optimizer::Adam;
  Schedule schedule = Schedule::OneCycle;
  int epochs = 1;
  int batch_size = 8;  // chains per sub-batch and the CMA contrast size B
  int accum = 2;       // sub-batches accumulated per optimizer step
  LossParams params;
  GeoMode geometry = GeoMode::Radial;
  double epsilon_r = 0.1;
  double aperture_k = 0.1;
  NegativeMining negative_mining = NegativeMining::Hard;
  InitMode init = InitMode::RandomSphere;
  std::string init_path;
  LossToggles toggles;
  double prior_weight = 1.0;
  bool cma_cross_pairs = false;
  int instances_per_leaf = 4;
  int threads = 1;

  void validate() const {
    if (learning_rate < 0.0) throw ArgError("train: learning_rate must be nonnegative");
    if (epochs < 1) throw ArgError("train: epochs must be >= 1");
    if (batch_size < 1 || accum < 1) throw ArgError("train: batch_size and accum must be >= 1");
    if (instances_per_leaf < 1) throw ArgError("train: instances_per_leaf must be >= 1");
    if (dim < 2) throw ArgError("train: dim must be >= 2");
    if (!(params.temperature > 0.0)) throw ArgError("train: temperature must be positive");
    if (params.alpha < 0.0 || params.alpha > kPi / 2.0 + 1e-12)
      throw ArgError("train: alpha must be in [0, pi/2]");
    if (params.beta < 0.0) throw ArgError("train: beta must be nonnegative");
    if (threads < 1) throw ArgError("train: threads must be >= 1");
  }

  GeometrySpec geometry_spec() const {
    return geometry == GeoMode::Radial ? GeometrySpec::radial(dim, epsilon_r, aperture_k)
                                       : GeometrySpec::euclidean(dim, epsilon_r, aperture_k);
  }
};

struct BatchExample {
  std::vector<NodeId> chain;
  std::vector<NodeId> negs;
  std::size_t leaf_dense = 0;  // query instance
  int inst_k = 0;
  std::vector<std::pair<std::size_t, int>> contrast;  // B other (dense leaf, k) pairs
};

struct TrainLogRow {
  long step = 0;
  double total = 0, le = 0, ge = 0, cma = 0, prior = 0, grad_norm = 0;
};

struct TrainResult {
  EmbeddingTable emb;
  InstanceTable inst;
  std::vector<TrainLogRow> log;
};

// ---------------------------------------------------------------------------

inline std::pair<EmbeddingTable, InstanceTable> init_tables(const Taxonomy& t,
                                                            const TrainConfig& cfg, Rng& rng) {
  if (cfg.init == InitMode::FromFile) {
    auto tables = load_tables(cfg.init_path, t);
    if (tables.first.geo.dim != cfg.dim)
      throw LoadError("init_tables: file dim does not match the configured dim");
    return tables;
  }
  return random_tables(t, cfg.geometry_spec(), cfg.instances_per_leaf, rng);
}

inline std::pair<EmbeddingTable, InstanceTable> init_tables(const Taxonomy& t,
                                                            const TrainConfig& cfg) {
  Rng rng(cfg.seed);
  return init_tables(t, cfg, rng);
}

// Samples one chain with negatives, one of its instances as the image side,
// and B other (leaf, instance) pairs, with replacement, never the query pair
// itself (small taxonomies cannot supply B distinct pairs).
inline BatchExample make_batch(const Taxonomy& t, const InstanceTable& inst,
                               const TrainConfig& cfg, Rng& rng) {
  std::size_t leaf_count = t.leaves.size();
  if (leaf_count * (std::size_t)inst.instances_per_leaf < 2)
    throw EmptyBatch("make_batch: need at least two instances");
  BatchExample ex;
  std::uniform_int_distribution<std::size_t> dleaf(0, leaf_count - 1);
  std::uniform_int_distribution<int> dk(0, inst.instances_per_leaf - 1);
  ex.leaf_dense = dleaf(rng);
  ex.inst_k = dk(rng);
  ex.chain = t.chain_of(t.leaves[ex.leaf_dense]);
  ex.negs = negative_set(t, ex.chain, rng, cfg.negative_mining);
  ex.contrast.reserve((std::size_t)cfg.params.batch_size);
  while ((int)ex.contrast.size() < cfg.params.batch_size) {
    std::size_t l = dleaf(rng);
    int k = dk(rng);
    if (l == ex.leaf_dense && k == ex.inst_k) continue;
    ex.contrast.emplace_back(l, k);
  }
  return ex;
}

namespace detail {

// learning-rate factor in [~0, 1]; OneCycle ramps cosine-shaped from 1/25 of
// the peak over the first 30% of steps, then anneals to 1e-4 of the peak.
inline double lr_factor(Schedule s, long step, long total_steps) {
  if (s == Schedule::Constant) return 1.0;
  double x = total_steps > 1 ? (double)step / (double)(total_steps - 1) : 1.0;
  constexpr double kStart = 1.0 / 25.0, kFinal = 1e-4, kPct = 0.3;
  if (x < kPct) {
    double u = x / kPct;
    return kStart + (1.0 - kStart) * 0.5 * (1.0 - std::cos(kPi * u));
  }
  double u = (x - kPct) / (1.0 - kPct);
  return kFinal + (1.0 - kFinal) * 0.5 * (1.0 + std::cos(kPi * u));
}

struct OptimizerState {
  std::vector<Vec> m, v;     // first/second moments (Momentum uses m only)
  std::vector<long> steps;   // per-id update counts for bias correction

  void ensure(std::size_t count, int dim) {
    if (m.size() >= count) return;
    m.resize(count, Vec((std::size_t)dim, 0.0));
    v.resize(count, Vec((std::size_t)dim, 0.0));
    steps.resize(count, 0);
  }
};

inline void apply_update(Optimizer opt, OptimizerState& st, EmbedId id, Vec& x, const Vec& g,
                         double lr) {
  std::size_t i = (std::size_t)id;
  switch (opt) {
    case Optimizer::SGD:
      axpy(x, -lr, g);
      break;
    case Optimizer::Momentum: {
      Vec& m = st.m[i];
      for (std::size_t c = 0; c < x.size(); ++c) {
        m[c] = 0.9 * m[c] + g[c];
        x[c] -= lr * m[c];
      }
      break;
    }
    case Optimizer::Adam: {
      constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      long tstep = ++st.steps[i];
      Vec& m = st.m[i];
      Vec& v = st.v[i];
      double c1 = 1.0 - std::pow(b1, (double)tstep);
      double c2 = 1.0 - std::pow(b2, (double)tstep);
      for (std::size_t c = 0; c < x.size(); ++c) {
        m[c] = b1 * m[c] + (1.0 - b1) * g[c];
        v[c] = b2 * v[c] + (1.0 - b2) * g[c] * g[c];
        x[c] -= lr * (m[c] / c1) / (std::sqrt(v[c] / c2) + eps);
      }
      break;
    }
  }
}

}  // namespace detail

inline TrainResult train(const Taxonomy& t, const TrainConfig& cfg) {
  cfg.validate();
  GeometrySpec geo = cfg.geometry_spec();
  Rng rng(cfg.seed);
  auto [emb, inst] = init_tables(t, cfg, rng);

  std::vector<Vec> frozen;
  if (cfg.toggles.use_prior) frozen = emb.vecs;

  std::size_t node_count = emb.size();
  std::size_t total_emb = node_count + inst.size();
  detail::OptimizerState opt_state;
  opt_state.ensure(total_emb, cfg.dim);

  long per_epoch =
      std::max<long>(1, ((long)t.leaves.size() + (long)cfg.batch_size * cfg.accum - 1) /
                            ((long)cfg.batch_size * cfg.accum));
  long total_steps = per_epoch * cfg.epochs;
  std::size_t per_step = (std::size_t)cfg.batch_size * (std::size_t)cfg.accum;

  TrainResult result;
  result.log.reserve((std::size_t)total_steps);

  std::vector<BatchExample> examples(per_step);
  std::vector<LossOutput> outs(per_step);
  std::vector<RcmeBreakdown> parts(per_step);

  auto eval_example = [&](std::size_t i) {
    const BatchExample& ex = examples[i];
    std::size_t n1 = ex.chain.size();
    std::vector<EmbRef> chain(n1), negs(ex.negs.size());
    for (std::size_t p = 0; p < n1; ++p) chain[p] = {ex.chain[p], &emb[ex.chain[p]]};
    for (std::size_t p = 0; p < ex.negs.size(); ++p) negs[p] = {ex.negs[p], &emb[ex.negs[p]]};
    EmbRef image{inst.embed_id(node_count, ex.leaf_dense, ex.inst_k),
                 &inst.at(ex.leaf_dense, ex.inst_k)};
    std::vector<std::pair<EmbRef, EmbRef>> batch;
    batch.reserve(ex.contrast.size());
    for (const auto& [l, k] : ex.contrast) {
      NodeId leaf = inst.leaf_ids[l];
      batch.emplace_back(EmbRef{leaf, &emb[leaf]},
                         EmbRef{inst.embed_id(node_count, l, k), &inst.at(l, k)});
    }
    parts[i] = {};
    outs[i] = rcme(geo, chain, negs, image, batch, cfg.params, cfg.toggles,
                   cfg.toggles.use_prior ? &frozen : nullptr, cfg.prior_weight,
                   cfg.cma_cross_pairs, &parts[i]);
  };

  for (long step = 0; step < total_steps; ++step) {
    for (std::size_t i = 0; i < per_step; ++i) examples[i] = make_batch(t, inst, cfg, rng);

    if (cfg.threads <= 1) {
      for (std::size_t i = 0; i < per_step; ++i) eval_example(i);
    } else {
      // loss evaluation is pure; merge order below stays fixed, so results
      // do not depend on the thread count
      std::vector<std::thread> pool;
      std::size_t nthreads = std::min<std::size_t>((std::size_t)cfg.threads, per_step);
      for (std::size_t w = 0; w < nthreads; ++w)
        pool.emplace_back([&, w] {
          for (std::size_t i = w; i < per_step; i += nthreads) eval_example(i);
        });
      for (auto& th : pool) th.join();
    }

    LossOutput merged;
    RcmeBreakdown terms;
    for (std::size_t i = 0; i < per_step; ++i) {
      merged.add_scaled(outs[i], 1.0 / (double)per_step);
      terms.le += parts[i].le / (double)per_step;
      terms.ge += parts[i].ge / (double)per_step;
      terms.cma += parts[i].cma / (double)per_step;
      terms.prior += parts[i].prior / (double)per_step;
    }

    double gnorm2 = 0.0;
    bool finite = std::isfinite(merged.value);
    for (const auto& [id, g] : merged.gradients) {
      if (!all_finite(g)) finite = false;
      gnorm2 += dot(g, g);
    }
    if (!finite)
      throw NonFiniteLoss("train: non-finite loss at step " + std::to_string(step) +
                          " (total=" + std::to_string(merged.value) +
                          " le=" + std::to_string(terms.le) + " ge=" + std::to_string(terms.ge) +
                          " cma=" + std::to_string(terms.cma) + ")");

    double lr = cfg.learning_rate * detail::lr_factor(cfg.schedule, step, total_steps);
    if (lr != 0.0) {
      for (const auto& [id, g] : merged.gradients) {
        if (id == t.root_id) continue;  // root is fixed
        Vec& x = id < (EmbedId)node_count ? emb.vecs[(std::size_t)id]
                                          : inst.vecs[(std::size_t)id - node_count];
        detail::apply_update(cfg.optimizer, opt_state, id, x, g, lr);
        if (geo.mode == GeoMode::Radial) x = project_sphere(x);
      }
    }

    result.log.push_back({step, merged.value, terms.le, terms.ge, terms.cma, terms.prior,
                          std::sqrt(gnorm2)});
  }

  result.emb = std::move(emb);
  result.inst = std::move(inst);
  return result;
}

inline void write_train_log(const std::vector<TrainLogRow>& log, std::ostream& out) {
  out << "step\ttotal\tle\tge\tcma\tprior\tgrad_norm\n";
  for (const TrainLogRow& r : log) {
    out << r.step << "\t" << detail::fmt_double(r.total) << "\t" << detail::fmt_double(r.le)
        << "\t" << detail::fmt_double(r.ge) << "\t" << detail::fmt_double(r.cma) << "\t"
        << detail::fmt_double(r.prior) << "\t" << detail::fmt_double(r.grad_norm) << "\n";
  }
}

inline void write_train_log(const std::vector<TrainLogRow>& log, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write train log: " + path);
  write_train_log(log, f);
}

}  // namespace rcme
