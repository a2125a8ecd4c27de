#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "oracles.hpp"
#include "rcme/losses.hpp"

using namespace rcme;
using Catch::Approx;

namespace {

const double kTol = 1e-9;

struct Flat {
  // flattens a set of embeddings for finite differencing and rebuilds them
  std::vector<Vec> vecs;
  std::size_t dim;

  oracles::V pack() const {
    oracles::V x;
    for (const Vec& v : vecs) x.insert(x.end(), v.begin(), v.end());
    return x;
  }
  std::vector<Vec> unpack(const oracles::V& x) const {
    std::vector<Vec> out(vecs.size(), Vec(dim));
    for (std::size_t i = 0; i < vecs.size(); ++i)
      for (std::size_t j = 0; j < dim; ++j) out[i][j] = x[i * dim + j];
    return out;
  }
};

// Gathers the analytic gradient in the same flat layout; ids are indices into
// Flat::vecs. skip marks coordinates excluded from the comparison (the root
// entry, where the anchor convention makes the loss non-smooth by design).
oracles::V flatten_grad(const LossOutput& out, std::size_t count, std::size_t dim) {
  oracles::V g(count * dim, 0.0);
  for (const auto& [id, vec] : out.gradients)
    for (std::size_t j = 0; j < dim; ++j) g[(std::size_t)id * dim + j] = vec[j];
  return g;
}

bool fd_matches(const std::function<double(const std::vector<Vec>&)>& f, const Flat& flat,
                const LossOutput& at, std::size_t skip_idx = SIZE_MAX) {
  auto wrap = [&](const oracles::V& x) { return f(flat.unpack(x)); };
  oracles::V fd = oracles::fd_gradient(wrap, flat.pack());
  oracles::V an = flatten_grad(at, flat.vecs.size(), flat.dim);
  if (skip_idx != SIZE_MAX)
    for (std::size_t j = 0; j < flat.dim; ++j) fd[skip_idx * flat.dim + j] = an[skip_idx * flat.dim + j];
  return oracles::grad_rel_err(an, fd) <= 1e-4;
}

Vec rand_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec v(dim);
  double n = 0;
  do {
    for (double& x : v) x = nd(rng);
    n = norm(v);
  } while (n < 1e-3);
  return scaled(v, 1.0 / n);
}

Vec rand_vec(std::mt19937_64& rng, int dim, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Vec v(dim);
  for (double& x : v) x = nd(rng);
  return v;
}

bool near_angle_boundary(const GeometrySpec& g, const Vec& a, const Vec& b) {
  return std::fabs(similarity(g, a, b)) > 1.0 - 1e-3;
}

}  // namespace

TEST_CASE("local entailment point examples", "[losses][trivial]") {
  GeometrySpec g = GeometrySpec::euclidean(2);
  Vec anchor = {1, 0}, pos = {2, 0}, neg = {1, 1};
  EmbRef ra{0, &anchor}, rp{1, &pos}, rn{2, &neg};
  CHECK(local_entailment(g, ra, rp, rp).value == Approx(0.0).margin(kTol));
  CHECK(local_entailment(g, ra, rp, rn).value == Approx(-kPi / 2).margin(kTol));
}

TEST_CASE("local entailment gradients match finite differences", "[losses][derived]") {
  std::mt19937_64 rng(21);
  int checked = 0;
  for (int trial = 0; checked < 20 && trial < 200; ++trial) {
    int dim = 3 + (int)(rng() % 3);
    GeometrySpec g = (trial % 2) ? GeometrySpec::euclidean(dim) : GeometrySpec::radial(dim);
    Flat flat;
    flat.dim = (std::size_t)dim;
    for (int i = 0; i < 3; ++i)
      flat.vecs.push_back(g.mode == GeoMode::Radial ? rand_unit(rng, dim) : rand_vec(rng, dim));
    if (near_angle_boundary(g, flat.vecs[0], flat.vecs[1]) ||
        near_angle_boundary(g, flat.vecs[0], flat.vecs[2]))
      continue;
    ++checked;
    auto f = [&](const std::vector<Vec>& v) {
      return local_entailment(g, {0, &v[0]}, {1, &v[1]}, {2, &v[2]}).value;
    };
    LossOutput at = local_entailment(g, {0, &flat.vecs[0]}, {1, &flat.vecs[1]}, {2, &flat.vecs[2]});
    CHECK(fd_matches(f, flat, at));
  }
  REQUIRE(checked >= 20);
}

TEST_CASE("global entailment collinear chain", "[losses][trivial]") {
  GeometrySpec g = GeometrySpec::euclidean(2);
  Vec grand = {1, 0}, parent = {2, 0}, child = {3, 0};
  EmbRef rg{0, &grand}, rp{1, &parent}, rc{2, &child};
  CHECK(global_entailment(g, rg, rp, rc, 0.0).value == Approx(0.0).margin(kTol));
  CHECK(global_entailment(g, rg, rp, rc, kPi / 2).value == Approx(kPi / 2).margin(kTol));
}

TEST_CASE("global entailment is a nonnegative hinge", "[losses][trivial]") {
  std::mt19937_64 rng(31);
  GeometrySpec g = GeometrySpec::radial(4);
  for (int i = 0; i < 100; ++i) {
    Vec a = rand_unit(rng, 4), b = rand_unit(rng, 4), c = rand_unit(rng, 4);
    CHECK(global_entailment(g, {0, &a}, {1, &b}, {2, &c}, 0.3).value >= 0.0);
  }
}

TEST_CASE("global entailment gradients match finite differences", "[losses][derived]") {
  std::mt19937_64 rng(41);
  int checked = 0;
  for (int trial = 0; checked < 20 && trial < 400; ++trial) {
    int dim = 3 + (int)(rng() % 3);
    GeometrySpec g = (trial % 2) ? GeometrySpec::euclidean(dim) : GeometrySpec::radial(dim);
    double alpha = (trial % 3) * 0.3;
    Flat flat;
    flat.dim = (std::size_t)dim;
    for (int i = 0; i < 3; ++i)
      flat.vecs.push_back(g.mode == GeoMode::Radial ? rand_unit(rng, dim) : rand_vec(rng, dim));
    const Vec &gr = flat.vecs[0], &pa = flat.vecs[1], &ch = flat.vecs[2];
    if (near_angle_boundary(g, gr, ch) || near_angle_boundary(g, pa, ch) ||
        near_angle_boundary(g, gr, pa))
      continue;
    // stay away from the hinge kink and the clip boundaries
    double sgp = similarity(g, gr, pa), spc = similarity(g, pa, ch);
    if (std::fabs(sgp) < 1e-3 || std::fabs(spc) < 1e-3) continue;
    double hinge = exterior_angle(g, gr, ch) - std::acos(clip01(spc) * clip01(sgp)) + alpha;
    if (std::fabs(hinge) < 1e-3) continue;
    ++checked;
    auto f = [&](const std::vector<Vec>& v) {
      return global_entailment(g, {0, &v[0]}, {1, &v[1]}, {2, &v[2]}, alpha).value;
    };
    LossOutput at = global_entailment(g, {0, &gr}, {1, &pa}, {2, &ch}, alpha);
    CHECK(fd_matches(f, flat, at));
  }
  REQUIRE(checked >= 20);
}

TEST_CASE("root-anchored terms follow the convention", "[losses][derived]") {
  GeometrySpec g = GeometrySpec::radial(3);
  std::mt19937_64 rng(7);
  Vec pos = rand_unit(rng, 3);
  Vec neg = {0, 0, 1};
  EmbRef rr{0, &g.root}, rp{1, &pos}, rn{2, &neg};
  LossOutput le = local_entailment(g, rr, rp, rn);
  CHECK(le.value == Approx(0.0).margin(kTol));  // pi/2 - pi/2
  for (const auto& [id, grad] : le.gradients)
    for (double x : grad) CHECK(x == 0.0);

  Vec child = {0, 1, 0};
  LossOutput ge = global_entailment(g, rr, rp, {2, &child}, 0.25);
  CHECK(ge.value == Approx(0.25).margin(kTol));  // pi/2 - acos(0) + alpha
  for (const auto& [id, grad] : ge.gradients)
    for (double x : grad) CHECK(x == 0.0);
}

TEST_CASE("gle bookkeeping at N = 2", "[losses][trivial]") {
  GeometrySpec g = GeometrySpec::euclidean(2);
  Vec root = {0, 0}, mid = {1, 0.2}, leaf = {2, 0.1};
  Vec neg1 = {1, -0.5}, neg2 = {2, -0.7};
  std::vector<EmbRef> chain = {{0, &root}, {1, &mid}, {2, &leaf}};
  std::vector<EmbRef> negs = {{3, &neg1}, {4, &neg2}};
  LossOutput whole = gle(g, chain, negs, 0.3);

  double ge_term = global_entailment(g, chain[0], chain[1], chain[2], 0.3).value;
  double le0 = local_entailment(g, chain[0], chain[1], negs[0]).value;
  double le1 = local_entailment(g, chain[1], chain[2], negs[1]).value;
  CHECK(whole.value == Approx(ge_term / 1.0 + (le0 + le1) / 2.0).margin(kTol));
}

TEST_CASE("gle with negatives equal to positives", "[losses][trivial]") {
  GeometrySpec g = GeometrySpec::euclidean(2);
  Vec root = {0, 0}, a = {1, 0.3}, b = {2, 0.44}, c = {3, 0.1};
  std::vector<EmbRef> chain = {{0, &root}, {1, &a}, {2, &b}, {3, &c}};
  std::vector<EmbRef> negs = {{1, &a}, {2, &b}, {3, &c}};
  double ge_avg = (global_entailment(g, chain[0], chain[1], chain[2], 0.2).value +
                   global_entailment(g, chain[1], chain[2], chain[3], 0.2).value) /
                  2.0;
  CHECK(gle(g, chain, negs, 0.2).value == Approx(ge_avg).margin(kTol));
}

TEST_CASE("gle equals the naive summation oracle", "[losses][derived]") {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 10; ++trial) {
    int dim = 4;
    bool euclid = trial % 2;
    GeometrySpec g = euclid ? GeometrySpec::euclidean(dim) : GeometrySpec::radial(dim);
    int n = 3 + (int)(rng() % 3);
    std::vector<Vec> store;
    store.push_back(euclid ? Vec(dim, 0.0) : g.root);
    for (int i = 0; i < n; ++i)
      store.push_back(euclid ? rand_vec(rng, dim) : rand_unit(rng, dim));
    std::vector<Vec> negstore;
    for (int i = 0; i < n; ++i)
      negstore.push_back(euclid ? rand_vec(rng, dim) : rand_unit(rng, dim));
    std::vector<EmbRef> chain, negs;
    for (int i = 0; i <= n; ++i) chain.push_back({i, &store[(std::size_t)i]});
    for (int i = 0; i < n; ++i) negs.push_back({n + 1 + i, &negstore[(std::size_t)i]});
    double expect = oracles::gle_value(store[0], store, negstore, 0.4);
    CHECK(gle(g, chain, negs, 0.4).value == Approx(expect).margin(1e-12));
  }
}

TEST_CASE("cma point examples", "[losses][trivial]") {
  // all inner products equal: softmax uniform over B+1 terms
  Vec t0 = {1, 0}, i0 = {1, 0}, t1 = {0, 1}, i1 = {0, 1}, t2 = {1, 0}, i2 = {1, 0};
  std::vector<std::pair<EmbRef, EmbRef>> batch = {{{2, &t1}, {3, &i1}}, {{4, &t2}, {5, &i2}}};
  LossOutput out = cross_modal_alignment({0, &t0}, {1, &i0}, batch, 1.0);
  CHECK(out.value == Approx(std::log(3.0)).margin(kTol));
  CHECK_THROWS_AS(cross_modal_alignment({0, &t0}, {1, &i0},
                                        std::span<const std::pair<EmbRef, EmbRef>>{}, 1.0),
                  EmptyBatch);
}

TEST_CASE("cma scalar arithmetic oracle", "[losses][derived]") {
  // B = 1, <pos>/tau = 10, <neg pair>/tau = -10
  Vec t0 = {10, 0}, i0 = {1, 0}, t1 = {-10, 0}, i1 = {1, 0};
  std::vector<std::pair<EmbRef, EmbRef>> batch = {{{2, &t1}, {3, &i1}}};
  LossOutput out = cross_modal_alignment({0, &t0}, {1, &i0}, batch, 1.0);
  CHECK(out.value == Approx(std::log(1.0 + std::exp(-20.0))).margin(kTol));
  CHECK(out.value == Approx(oracles::cma_value(10.0, {-10.0}, 1.0)).margin(kTol));
}

TEST_CASE("cma gradients match finite differences", "[losses][derived]") {
  std::mt19937_64 rng(61);
  for (int variant = 0; variant < 2; ++variant) {
    bool cross = variant == 1;
    for (int trial = 0; trial < 10; ++trial) {
      int dim = 3, B = 1 + (int)(rng() % 3);
      Flat flat;
      flat.dim = (std::size_t)dim;
      for (int i = 0; i < 2 * B + 2; ++i) flat.vecs.push_back(rand_vec(rng, dim));
      double tau = 0.5 + 0.5 * (double)(rng() % 3);
      auto build = [&](const std::vector<Vec>& v) {
        std::vector<std::pair<EmbRef, EmbRef>> batch;
        for (int m = 0; m < B; ++m)
          batch.push_back({{2 + 2 * m, &v[(std::size_t)(2 + 2 * m)]},
                           {3 + 2 * m, &v[(std::size_t)(3 + 2 * m)]}});
        return cross_modal_alignment({0, &v[0]}, {1, &v[1]}, batch, tau, cross);
      };
      auto f = [&](const std::vector<Vec>& v) { return build(v).value; };
      CHECK(fd_matches(f, flat, build(flat.vecs)));
    }
  }
}

TEST_CASE("prior preservation is exactly linear", "[losses][trivial]") {
  Vec cur = {1, 0}, frozen = {1, 0}, orth = {0, 1};
  CHECK(prior_preservation({0, &cur}, frozen).value == Approx(-1.0).margin(kTol));
  CHECK(prior_preservation({0, &cur}, orth).value == Approx(0.0).margin(kTol));
  LossOutput out = prior_preservation({0, &cur}, frozen);
  REQUIRE(out.gradients.count(0) == 1);
  for (std::size_t j = 0; j < frozen.size(); ++j)
    CHECK(out.gradients.at(0)[j] == -frozen[j]);
}

TEST_CASE("rcme composition", "[losses][derived]") {
  std::mt19937_64 rng(71);
  GeometrySpec g = GeometrySpec::radial(4);
  int n = 3, B = 2;
  std::vector<Vec> store;
  store.push_back(g.root);
  for (int i = 0; i < n; ++i) store.push_back(rand_unit(rng, 4));
  std::vector<Vec> negstore;
  for (int i = 0; i < n; ++i) negstore.push_back(rand_unit(rng, 4));
  Vec image = rand_unit(rng, 4);
  std::vector<Vec> batchstore;
  for (int i = 0; i < 2 * B; ++i) batchstore.push_back(rand_unit(rng, 4));

  std::vector<EmbRef> chain, negs;
  for (int i = 0; i <= n; ++i) chain.push_back({i, &store[(std::size_t)i]});
  for (int i = 0; i < n; ++i) negs.push_back({10 + i, &negstore[(std::size_t)i]});
  EmbRef img{20, &image};
  std::vector<std::pair<EmbRef, EmbRef>> batch;
  for (int m = 0; m < B; ++m)
    batch.push_back({{30 + 2 * m, &batchstore[(std::size_t)(2 * m)]},
                     {31 + 2 * m, &batchstore[(std::size_t)(2 * m + 1)]}});

  LossParams params;
  params.alpha = 0.2;

  params.beta = 0.0;
  CHECK(rcme::rcme(g, chain, negs, img, batch, params).value ==
        Approx(gle(g, chain, negs, params.alpha).value).margin(kTol));

  params.beta = 1.0;
  double apart = gle(g, chain, negs, params.alpha).value;
  double bpart = cross_modal_alignment(chain.back(), img, batch, params.temperature).value;
  CHECK(rcme::rcme(g, chain, negs, img, batch, params).value == Approx(apart + bpart).margin(1e-12));

  // Table-5 ablation toggles
  LossToggles t;
  t.use_le = false;
  t.use_ge = false;
  CHECK(rcme::rcme(g, chain, negs, img, batch, params, t).value == Approx(bpart).margin(1e-12));
  t = LossToggles{};
  t.use_cma = false;
  CHECK(rcme::rcme(g, chain, negs, img, batch, params, t).value == Approx(apart).margin(1e-12));
  t = LossToggles{};
  t.use_prior = true;
  std::vector<Vec> frozen(store.size(), Vec(4, 0.0));
  for (std::size_t i = 0; i < store.size(); ++i) frozen[i] = store[i];
  double prior_each = 0;
  for (int p = 1; p <= n; ++p) prior_each += -dot(store[(std::size_t)p], store[(std::size_t)p]);
  prior_each /= n;
  CHECK(rcme::rcme(g, chain, negs, img, batch, params, t, &frozen, 0.7).value ==
        Approx(apart + bpart + 0.7 * prior_each).margin(1e-12));
}

TEST_CASE("rcme gradients match finite differences", "[losses][derived]") {
  std::mt19937_64 rng(81);
  int checked = 0;
  for (int trial = 0; checked < 20 && trial < 200; ++trial) {
    int dim = 3, n = 3, B = 2;
    bool euclid = trial % 2;
    GeometrySpec g = euclid ? GeometrySpec::euclidean(dim) : GeometrySpec::radial(dim);
    Flat flat;
    flat.dim = (std::size_t)dim;
    flat.vecs.push_back(euclid ? Vec(dim, 0.0) : g.root);              // 0: root
    for (int i = 0; i < n; ++i)                                        // 1..n: chain
      flat.vecs.push_back(euclid ? rand_vec(rng, dim) : rand_unit(rng, dim));
    for (int i = 0; i < n; ++i)                                        // negatives
      flat.vecs.push_back(euclid ? rand_vec(rng, dim) : rand_unit(rng, dim));
    flat.vecs.push_back(euclid ? rand_vec(rng, dim) : rand_unit(rng, dim));  // image
    for (int i = 0; i < 2 * B; ++i)
      flat.vecs.push_back(euclid ? rand_vec(rng, dim) : rand_unit(rng, dim));

    LossParams params;
    params.alpha = 0.25;
    params.beta = 0.7;
    params.temperature = 0.8;

    auto build = [&](const std::vector<Vec>& v) {
      std::vector<EmbRef> chain, negs;
      for (int i = 0; i <= n; ++i) chain.push_back({i, &v[(std::size_t)i]});
      for (int i = 0; i < n; ++i) negs.push_back({n + 1 + i, &v[(std::size_t)(n + 1 + i)]});
      EmbRef img{2 * n + 1, &v[(std::size_t)(2 * n + 1)]};
      std::vector<std::pair<EmbRef, EmbRef>> batch;
      for (int m = 0; m < B; ++m)
        batch.push_back({{2 * n + 2 + 2 * m, &v[(std::size_t)(2 * n + 2 + 2 * m)]},
                         {2 * n + 3 + 2 * m, &v[(std::size_t)(2 * n + 3 + 2 * m)]}});
      return rcme::rcme(g, chain, negs, img, batch, params);
    };

    // skip configurations near any kink so FD is trustworthy; triples whose
    // grandparent is T0 contribute a constant by convention and need no screen
    bool neark = false;
    for (int p = 1; p + 1 <= n && !neark; ++p) {
      const Vec &gr = flat.vecs[(std::size_t)(p - 1)], &pa = flat.vecs[(std::size_t)p],
                &ch = flat.vecs[(std::size_t)(p + 1)];
      if (near_angle_boundary(g, pa, ch)) neark = true;
      if (p == 1) continue;
      double sgp = similarity(g, gr, pa), spc = similarity(g, pa, ch);
      if (std::fabs(sgp) < 1e-3 || std::fabs(spc) < 1e-3) neark = true;
      double hinge =
          exterior_angle(g, gr, ch) - std::acos(clip01(spc) * clip01(sgp)) + params.alpha;
      if (std::fabs(hinge) < 1e-3) neark = true;
      if (near_angle_boundary(g, gr, ch) || near_angle_boundary(g, gr, pa)) neark = true;
    }
    for (int p = 1; p < n && !neark; ++p)
      if (near_angle_boundary(g, flat.vecs[(std::size_t)p], flat.vecs[(std::size_t)(n + 1 + p)]))
        neark = true;
    if (neark) continue;
    ++checked;
    auto f = [&](const std::vector<Vec>& v) { return build(v).value; };
    CHECK(fd_matches(f, flat, build(flat.vecs), /*skip_idx=*/0));
  }
  REQUIRE(checked >= 20);
}
