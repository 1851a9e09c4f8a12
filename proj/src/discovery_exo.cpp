#include "selcon/discovery_exo.hpp"

#include <algorithm>
#include <limits>
#include <random>

namespace selcon {

ReferenceMap reference_from_attention(const Map& attention) {
  return {minmax_normalize(attention), ReferenceSource::dino_attention};
}

ReferenceMap reference_from_clip_affinity(const ObjectAffinity& ego_affinity, Real threshold) {
  return {binarize(ego_affinity.map, threshold), ReferenceSource::clip_affinity};
}

Map interaction_mask(const Map& cam_exo, const Map& affinity_exo, Real gamma1,
                     MaskCombine combine) {
  require_same_grid(cam_exo, affinity_exo);
  if (!(gamma1 > 0 && gamma1 < 1)) throw InputError("gamma1 must lie in (0, 1)");
  const Map combined =
      combine == MaskCombine::product ? Map(cam_exo * affinity_exo) : Map(cam_exo + affinity_exo);
  return binarize(minmax_normalize(combined), gamma1);
}

std::optional<RowMatrix<Real>> kmeans(const RowMatrix<Real>& points, const KMeansOptions& options) {
  const Index n = points.rows();
  const Index k = options.clusters;
  if (k < 1) throw InputError("K must be positive");
  if (n < k) return std::nullopt;
  bool identical = true;
  for (Index i = 1; i < n && identical; ++i) identical = points.row(i) == points.row(0);
  if (identical) return std::nullopt;

  std::mt19937_64 rng(options.seed);
  RowMatrix<Real> centroids(k, points.cols());

  // k-means++ seeding
  centroids.row(0) = points.row(std::uniform_int_distribution<Index>(0, n - 1)(rng));
  Vec d2 = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (Index c = 1; c < k; ++c) {
    const Real total = d2.sum();
    Index pick = 0;
    if (total > 0) {
      Real r = std::uniform_real_distribution<Real>(0, total)(rng);
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        r -= d2(i);
        if (r < 0 && d2(i) > 0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::uniform_int_distribution<Index>(0, n - 1)(rng);
    }
    centroids.row(c) = points.row(pick);
    d2 = d2.cwiseMin((points.rowwise() - centroids.row(c)).rowwise().squaredNorm());
  }

  std::vector<Index> assign(n, 0);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    for (Index i = 0; i < n; ++i) {
      Real best = std::numeric_limits<Real>::infinity();
      for (Index c = 0; c < k; ++c) {
        const Real d = (points.row(i) - centroids.row(c)).squaredNorm();
        if (d < best) {
          best = d;
          assign[i] = c;
        }
      }
    }
    RowMatrix<Real> sums = RowMatrix<Real>::Zero(k, points.cols());
    std::vector<Index> counts(k, 0);
    for (Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += points.row(i);
      ++counts[assign[i]];
    }
    Real moved = 0;
    for (Index c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      const auto next = (sums.row(c) / Real(counts[c])).eval();
      moved = std::max(moved, (next - centroids.row(c)).norm());
      centroids.row(c) = next;
    }
    if (moved < options.tolerance) break;
  }
  return centroids;
}

std::optional<RowMatrix<Real>> cluster_part_candidates(std::span<const Features> features,
                                                       std::span<const Map> masks,
                                                       const KMeansOptions& options) {
  if (features.size() != masks.size()) throw DimensionError("one mask per exocentric view");
  if (features.empty()) return std::nullopt;
  Index total = 0;
  for (std::size_t e = 0; e < features.size(); ++e) {
    require_same_grid(features[e], masks[e]);
    total += (masks[e] > 0).count();
  }
  RowMatrix<Real> points(total, features.front().channels());
  Index row = 0;
  for (std::size_t e = 0; e < features.size(); ++e) {
    if (features[e].channels() != points.cols()) throw DimensionError("channel mismatch across views");
    const auto m = flat(masks[e]);
    for (Index p = 0; p < m.size(); ++p) {
      if (m(p) > 0) points.row(row++) = features[e].matrix().row(p);
    }
  }
  return kmeans(points, options);
}

Map part_similarity_map(const Vec& centroid, const Features& features) {
  if (!(centroid.norm() > kNormEpsilon)) throw DegeneratePrototype("zero part centroid");
  return minmax_normalize(cosine_map(features, centroid));
}

Real piou(const Map& sim, const Map& ref) {
  require_same_grid(sim, ref);
  const Real den = sim.max(ref).sum();
  if (!(den > 0)) return 0;
  return sim.min(ref).sum() / den;
}

PartSelection select_part(const RowMatrix<Real>& centroids, const Features& ego_features,
                          std::span<const Features> exo_features, const ReferenceMap& ref,
                          Real alpha) {
  PartSelection out;
  std::vector<Map> ego_maps;
  for (Index c = 0; c < centroids.rows(); ++c) {
    const Vec centroid = centroids.row(c).transpose();
    if (!(centroid.norm() > kNormEpsilon)) {
      out.piou_scores.push_back(0);
      ego_maps.emplace_back();
      continue;
    }
    ego_maps.push_back(part_similarity_map(centroid, ego_features));
    out.piou_scores.push_back(piou(ego_maps.back(), ref.map));
  }
  if (out.piou_scores.empty()) return out;
  const auto best_it = std::max_element(out.piou_scores.begin(), out.piou_scores.end());
  const int best = static_cast<int>(best_it - out.piou_scores.begin());
  out.best = best;
  if (!(*best_it > alpha)) return out;

  const Vec centroid = centroids.row(best).transpose();
  out.prototype = channel_normalize(centroid);
  out.part_map_ego = ego_maps[best];
  for (const auto& f : exo_features) out.part_map_exo.push_back(part_similarity_map(centroid, f));
  out.reliable = true;
  return out;
}

PartSelection discover_exo_part(std::span<const Map> cam_exo, std::span<const Map> affinity_exo,
                                std::span<const Features> exo_features,
                                const Features& ego_features, const ReferenceMap& ref,
                                const ExoDiscoveryParams& params) {
  if (cam_exo.size() != affinity_exo.size() || cam_exo.size() != exo_features.size()) {
    throw DimensionError("exocentric CAM, affinity and feature stacks differ in length");
  }
  std::vector<Map> masks;
  masks.reserve(cam_exo.size());
  for (std::size_t e = 0; e < cam_exo.size(); ++e) {
    masks.push_back(interaction_mask(cam_exo[e], affinity_exo[e], params.gamma1, params.combine));
  }
  const auto centroids = cluster_part_candidates(exo_features, masks, params.kmeans);
  if (!centroids) return {};
  return select_part(*centroids, ego_features, exo_features, ref, params.alpha);
}

}  // namespace selcon
