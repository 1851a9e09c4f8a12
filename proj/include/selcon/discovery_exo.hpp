#pragma once

// Part discovery in exocentric views: restrict the CAM to the interacting
// object, cluster the surviving DINO pixels, and keep the centroid whose
// egocentric similarity map agrees best with a reference saliency map.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "selcon/affinity.hpp"

namespace selcon {

enum class ReferenceSource { dino_attention, clip_affinity };

struct ReferenceMap {
  Map map;  // normalized
  ReferenceSource source = ReferenceSource::dino_attention;
};

inline constexpr Real kClipReferenceThreshold = 0.75;

ReferenceMap reference_from_attention(const Map& attention);
ReferenceMap reference_from_clip_affinity(const ObjectAffinity& ego_affinity,
                                          Real threshold = kClipReferenceThreshold);

enum class MaskCombine { product, sum };

struct PartSelection {
  bool reliable = false;
  std::optional<Unit> prototype;
  std::optional<Map> part_map_ego;
  std::vector<Map> part_map_exo;  // one per exocentric image when reliable
  std::vector<Real> piou_scores;
  int best = -1;
};

// Binary map: minmax_normalize(combine(C, A)) > gamma1.
Map interaction_mask(const Map& cam_exo, const Map& affinity_exo, Real gamma1,
                     MaskCombine combine = MaskCombine::product);

struct KMeansOptions {
  int clusters = 3;
  int max_iterations = 100;
  Real tolerance = 1e-6;
  std::uint64_t seed = 0;
};

// Lloyd's K-means with k-means++ seeding over the masked pixels of all views.
// Returns K x D centroids, or nullopt when fewer than K pixels survive the
// masks or every surviving pixel is identical.
std::optional<RowMatrix<Real>> cluster_part_candidates(std::span<const Features> features,
                                                       std::span<const Map> masks,
                                                       const KMeansOptions& options);

// Lower-level entry point on an N x D point set.
std::optional<RowMatrix<Real>> kmeans(const RowMatrix<Real>& points, const KMeansOptions& options);

Map part_similarity_map(const Vec& centroid, const Features& features);

// Soft IoU: sum(min) / sum(max), 0 on an empty union.
Real piou(const Map& sim, const Map& ref);

PartSelection select_part(const RowMatrix<Real>& centroids, const Features& ego_features,
                          std::span<const Features> exo_features, const ReferenceMap& ref,
                          Real alpha);

struct ExoDiscoveryParams {
  Real gamma1 = 0.6;
  Real alpha = 0.6;
  MaskCombine combine = MaskCombine::product;
  KMeansOptions kmeans;
};

// interaction_mask -> cluster_part_candidates -> select_part. Degenerate
// inputs yield an unreliable selection; this never throws on data.
PartSelection discover_exo_part(std::span<const Map> cam_exo, std::span<const Map> affinity_exo,
                                std::span<const Features> exo_features,
                                const Features& ego_features, const ReferenceMap& ref,
                                const ExoDiscoveryParams& params);

}  // namespace selcon
