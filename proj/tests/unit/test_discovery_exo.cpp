#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "../support.hpp"
#include "selcon/discovery_exo.hpp"

using namespace selcon;
using namespace selcon::testing;

namespace {

Features axis_features(Index h, Index w, Index d, const std::vector<Index>& axis_per_pixel) {
  Features f(h, w, d);
  for (Index p = 0; p < h * w; ++p) f.matrix()(p, axis_per_pixel[p]) = 1;
  return f;
}

Vec axis(Index d, Index k) {
  Vec v = Vec::Zero(d);
  v(k) = 1;
  return v;
}

}  // namespace

TEST_CASE("interaction_mask thresholds a plateau") {
  Map plateau = Map::Zero(4, 4);
  plateau.block(1, 1, 2, 2) = 1;
  const Map mask = interaction_mask(plateau, plateau, 0.6);
  CHECK((mask == plateau).all());
  CHECK((interaction_mask(plateau, Map::Zero(4, 4).eval(), 0.6) == 0).all());
  CHECK_THROWS_AS(interaction_mask(plateau, Map::Zero(3, 4).eval(), 0.6), DimensionError);
  CHECK_THROWS_AS(interaction_mask(plateau, plateau, 1.0), InputError);
}

TEST_CASE("interaction_mask stays on the object when only the CAM spills") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    Map object = Map::Zero(6, 6);
    object.block(1 + trial % 3, 2, 3, 3) = 1;
    const Map cam = random_map(rng, 6, 6, 0.3, 1.0);  // object and background
    const Map affinity = (object * random_map(rng, 6, 6, 0.5, 1.0)).eval();
    const Map mask = interaction_mask(cam, affinity, 0.3);
    CHECK((mask <= object).all());
    CHECK(mask.sum() > 0);
  }
}

TEST_CASE("interaction_mask is non-increasing in gamma1") {
  Rng rng(22);
  const Map c = random_map(rng, 5, 7), a = random_map(rng, 5, 7);
  Map prev = interaction_mask(c, a, 0.05);
  for (double g = 0.1; g < 1.0; g += 0.05) {
    const Map next = interaction_mask(c, a, g);
    CHECK((next <= prev).all());
    prev = next;
  }
}

TEST_CASE("sum combination differs from product") {
  Map c = Map::Zero(2, 2), a = Map::Zero(2, 2);
  c(0, 0) = 1;
  a(1, 1) = 1;
  CHECK((interaction_mask(c, a, 0.5) == 0).all());
  CHECK(interaction_mask(c, a, 0.5, MaskCombine::sum).sum() == 2);
}

TEST_CASE("kmeans recovers three separated Gaussian clusters") {
  Rng rng(23);
  RowMatrix<Real> means(3, 4);
  means << 0, 0, 0, 0, 5, 5, 0, 0, 0, 0, 5, -5;
  const Index per = 300;
  RowMatrix<Real> points(3 * per, 4);
  std::normal_distribution<double> n(0, 0.3);
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < per; ++i)
      for (Index k = 0; k < 4; ++k) points(c * per + i, k) = means(c, k) + n(rng);

  KMeansOptions opts;
  opts.seed = 7;
  const auto centroids = kmeans(points, opts);
  REQUIRE(centroids);
  for (Index c = 0; c < 3; ++c) {
    double best = 1e9;
    for (Index r = 0; r < 3; ++r) best = std::min(best, (centroids->row(r) - means.row(c)).norm());
    CHECK(best < 0.05);
  }
  const auto again = kmeans(points, opts);
  CHECK(*again == *centroids);
}

TEST_CASE("kmeans degenerate inputs") {
  RowMatrix<Real> same = RowMatrix<Real>::Ones(10, 3);
  CHECK_FALSE(kmeans(same, {}));
  CHECK_FALSE(kmeans(RowMatrix<Real>::Random(2, 3), {}));
  KMeansOptions bad;
  bad.clusters = 0;
  CHECK_THROWS_AS(kmeans(same, bad), InputError);
}

TEST_CASE("cluster_part_candidates pools masked pixels across views") {
  Rng rng(24);
  std::vector<Features> feats{random_features(rng, 3, 3, 4), random_features(rng, 3, 3, 4)};
  std::vector<Map> masks{Map::Zero(3, 3), Map::Zero(3, 3)};
  masks[0](0, 0) = 1;
  masks[1](2, 2) = 1;
  // Two pixels cannot feed three clusters.
  CHECK_FALSE(cluster_part_candidates(feats, masks, {}));
  masks[1](1, 1) = 1;
  KMeansOptions opts;
  const auto c = cluster_part_candidates(feats, masks, opts);
  REQUIRE(c);
  // With exactly K points every point is a centroid.
  for (const auto& [e, i, j] : {std::tuple{0, 0, 0}, {1, 2, 2}, {1, 1, 1}}) {
    double best = 1e9;
    for (Index r = 0; r < 3; ++r) best = std::min(best, (c->row(r) - feats[e].pixel(i, j)).norm());
    CHECK(best < 1e-12);
  }
}

TEST_CASE("part_similarity_map") {
  const Features f = axis_features(2, 2, 3, {0, 1, 1, 2});
  const Map s = part_similarity_map(axis(3, 0), f);
  CHECK(s(0, 0) == 1);
  CHECK(s.sum() == 1);
  Features g = axis_features(2, 2, 3, {1, 1, 2, 2});
  CHECK((part_similarity_map(axis(3, 0), g) == 0).all());
  CHECK_THROWS_AS(part_similarity_map(Vec::Zero(3), g), DegeneratePrototype);

  Rng rng(25);
  const Features r = random_features(rng, 3, 4, 5);
  const Vec c = random_vec(rng, 5);
  Map raw(3, 4);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 4; ++j) raw(i, j) = r.pixel(i, j).dot(c) / (r.pixel(i, j).norm() * c.norm());
  const Map oracle = (raw - raw.minCoeff()) / (raw.maxCoeff() - raw.minCoeff());
  CHECK((part_similarity_map(c, r) - oracle).abs().maxCoeff() < 1e-12);
}

TEST_CASE("piou") {
  Rng rng(26);
  const Map a = random_map(rng, 4, 4);
  CHECK(piou(a, a) == doctest::Approx(1.0));
  Map l = Map::Zero(2, 2), r = Map::Zero(2, 2);
  l(0, 0) = 1;
  r(1, 1) = 1;
  CHECK(piou(l, r) == 0);
  CHECK(piou(Map::Zero(2, 2).eval(), Map::Zero(2, 2).eval()) == 0);
  Map ref = Map::Zero(3, 3);
  ref.block(0, 0, 2, 3) = 1;
  CHECK(piou((0.5 * ref).eval(), ref) == doctest::Approx(0.5));

  for (int t = 0; t < 50; ++t) {
    const Map x = random_map(rng, 3, 5), y = random_map(rng, 3, 5);
    const double v = piou(x, y);
    CHECK(v == doctest::Approx(piou(y, x)).epsilon(1e-14));
    CHECK(v >= 0);
    CHECK(v <= 1);
  }
}

namespace {

// Ego grid 3x3: part pixels on axis 0, the rest on axes 1 and 2.
struct Concordant {
  Features ego = axis_features(3, 3, 4, {0, 0, 1, 0, 1, 1, 2, 2, 2});
  std::vector<Features> exo{axis_features(3, 3, 4, {0, 1, 1, 2, 2, 2, 3, 3, 3})};
  RowMatrix<Real> centroids;
  Map part = Map::Zero(3, 3);

  Concordant() {
    centroids.setZero(3, 4);
    centroids(0, 1) = 1;
    centroids(1, 0) = 2;  // reproduces the part
    centroids(2, 2) = 1;
    part(0, 0) = part(0, 1) = part(1, 0) = 1;
  }
};

}  // namespace

TEST_CASE("select_part picks the centroid reproducing the reference") {
  Concordant fx;
  const ReferenceMap ref{fx.part, ReferenceSource::dino_attention};
  const PartSelection sel = select_part(fx.centroids, fx.ego, fx.exo, ref, 0.6);
  REQUIRE(sel.reliable);
  CHECK(sel.best == 1);
  CHECK(sel.piou_scores[1] == doctest::Approx(1.0));
  CHECK(sel.piou_scores[0] < 0.6);
  CHECK(sel.prototype->vector() == axis(4, 0));
  CHECK((*sel.part_map_ego == fx.part).all());
  CHECK(sel.part_map_exo.size() == 1);
  CHECK(sel.part_map_exo[0](0, 0) == 1);
}

TEST_CASE("select_part rejects when no score exceeds alpha") {
  Concordant fx;
  Map ref = Map::Zero(3, 3);
  ref(2, 2) = 1;
  ref(0, 2) = 1;
  const PartSelection sel = select_part(fx.centroids, fx.ego, fx.exo, {ref, ReferenceSource::dino_attention}, 0.6);
  CHECK_FALSE(sel.reliable);
  CHECK_FALSE(sel.prototype);
  CHECK_FALSE(sel.part_map_ego);
  CHECK(sel.part_map_exo.empty());
  CHECK(sel.piou_scores.size() == 3);
  for (double s : sel.piou_scores) CHECK(s <= 0.6);

  // Exactly alpha is not enough.
  const PartSelection exact = select_part(fx.centroids, fx.ego, fx.exo, {fx.part, ReferenceSource::dino_attention}, 1.0);
  CHECK_FALSE(exact.reliable);
}

TEST_CASE("clip reference at 0.75 agrees with the attention reference") {
  Concordant fx;
  ObjectAffinity ego;
  ego.map = Map::Constant(3, 3, 0.3);
  ego.map(0, 0) = 1.0;
  ego.map(0, 1) = 0.9;
  ego.map(1, 0) = 0.8;
  ego.map(1, 1) = 0.75;  // strictly above is required
  const ReferenceMap clip = reference_from_clip_affinity(ego);
  CHECK(clip.source == ReferenceSource::clip_affinity);
  CHECK((clip.map == fx.part).all());
  const ReferenceMap attn = reference_from_attention((fx.part * 7 + 2).eval());
  const PartSelection a = select_part(fx.centroids, fx.ego, fx.exo, attn, 0.6);
  const PartSelection b = select_part(fx.centroids, fx.ego, fx.exo, clip, 0.6);
  CHECK(a.reliable);
  CHECK(b.reliable);
  CHECK(a.best == b.best);
}

TEST_CASE("discover_exo_part end to end on a planted scene") {
  Concordant fx;
  Rng rng(27);
  std::vector<Features> exo;
  std::vector<Map> cams, affs;
  for (int e = 0; e < 3; ++e) {
    // 4x4 exo grid: part pixels (axis 0) in the top-left 2x2, object body on axis 1, background on axis 2/3.
    std::vector<Index> ax{0, 0, 1, 3, 0, 0, 1, 3, 1, 1, 1, 3, 2, 2, 2, 3};
    Features f = axis_features(4, 4, 4, ax);
    std::normal_distribution<double> n(0, 0.01);
    for (Index k = 0; k < f.matrix().size(); ++k) f.matrix().data()[k] += n(rng);
    exo.push_back(f);
    Map obj = Map::Zero(4, 4);
    obj.block(0, 0, 3, 3) = 1;
    cams.push_back(Map::Ones(4, 4));
    affs.push_back(obj);
  }
  ExoDiscoveryParams params;
  params.gamma1 = 0.5;
  params.kmeans.seed = 3;
  const ReferenceMap ref{fx.part, ReferenceSource::dino_attention};
  const PartSelection sel = discover_exo_part(cams, affs, exo, fx.ego, ref, params);
  REQUIRE(sel.reliable);
  CHECK(sel.prototype->vector().dot(axis(4, 0)) > 0.99);
  const PartSelection again = discover_exo_part(cams, affs, exo, fx.ego, ref, params);
  CHECK(again.best == sel.best);
  CHECK(again.prototype->vector() == sel.prototype->vector());
  CHECK(again.piou_scores == sel.piou_scores);

  // Zero affinity everywhere: empty masks, unreliable, no throw.
  std::vector<Map> zero(3, Map::Zero(4, 4));
  const PartSelection none = discover_exo_part(cams, zero, exo, fx.ego, ref, params);
  CHECK_FALSE(none.reliable);
  CHECK_THROWS_AS(discover_exo_part(std::span<const Map>(cams).first(2), affs, exo, fx.ego, ref, params),
                  DimensionError);
}
