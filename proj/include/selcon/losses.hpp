#pragma once

// Three-term training objective: selective prototypical contrast over the
// batch, selective pixel contrast inside each egocentric image, and the
// shared-classifier cross-entropy. Every loss returns its value together
// with the gradient with respect to the tensors that produced it.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "selcon/discovery_ego.hpp"
#include "selcon/discovery_exo.hpp"

namespace selcon {

// Norm(Pool(Z (.) M)).
Unit phi_plus(const Features& z, const Map& m);

// Norm(Pool(Z (.) (beta - M (.) C))).
Unit phi_minus(const Features& z, const Map& m, const Map& cam, Real beta);

// How a prototype was pooled: which view's features, with which weights,
// and the norm removed by normalization. Enough to backpropagate.
struct PoolTrace {
  int view = 0;  // 0 = egocentric, e + 1 = exocentric image e
  Map weights;
  Real norm = 0;
  Map cam_coeff;  // d weights / d CAM; empty when the CAM is not involved
};

struct PrototypePack {
  Unit anchor;
  std::vector<Unit> pos;  // indexed by view
  std::vector<Unit> neg;
  int label = 0;
  bool reliable = false;

  PoolTrace anchor_trace;
  std::vector<PoolTrace> pos_trace;
  std::vector<PoolTrace> neg_trace;
};

struct PackInputs {
  const Features* ego = nullptr;            // projected egocentric features
  std::span<const Features> exo;            // projected exocentric features
  const Map* ego_affinity = nullptr;        // normalized object affinity
  std::span<const Map> exo_affinity;
  std::span<const Map> cams;                // per view, ego first; normalized
  int label = 0;
};

// Part-level prototypes when the selection is reliable, object-level
// otherwise. A degenerate part-level pool demotes the instance to object
// level; nullopt when the object level degenerates too.
std::optional<PrototypePack> build_pack(const PackInputs& in, const PartSelection& selection,
                                        Real beta);

struct PrototypeSets {
  std::vector<Unit> positives;
  std::vector<Unit> negatives;
};

// Batch-wide positive/negative prototype sets for instance b.
PrototypeSets proto_sets(std::span<const PrototypePack> packs, std::size_t b);

struct PackGradient {
  Vec anchor;
  std::vector<Vec> pos;
  std::vector<Vec> neg;
};

struct ProtoLossResult {
  Real value = 0;
  int contributing = 0;
  std::vector<PackGradient> grads;  // aligned with the packs
};

// Mean over instances of the supervised-contrastive term with the instance
// anchor in both numerator and denominator.
ProtoLossResult proto_loss(std::span<const PrototypePack> packs, Real tau);

struct PackBackprop {
  std::vector<RowMatrix<Real>> features;  // dL/dZ per view
  std::vector<Map> cams;                  // dL/dC per view
};

// Gradients of a pack's views given dL/d(unit vectors).
// `features` holds the views in pack order (ego first).
PackBackprop backprop_pack(const PrototypePack& pack, const PackGradient& grad,
                           std::span<const Features* const> features);

struct PixelLossResult {
  Real value = 0;
  bool contributed = false;
  RowMatrix<Real> grad;  // dL/dF, same shape as the feature matrix
};

// Pixel contrast inside one image; rows are channel-normalized before the
// dot products. An empty positive set contributes nothing.
PixelLossResult pixel_loss(const Features& f, const PixelSets& sets, Real tau);

// Uniformly keeps at most `limit` indices of each set.
PixelSets subsample(const PixelSets& sets, std::size_t limit, std::uint64_t seed);

struct ClassificationLossResult {
  Real value = 0;
  std::vector<Vec> grads;  // per view, ego first
};

// Cross-entropy of `label`, averaged over the egocentric and exocentric views.
ClassificationLossResult classification_loss(std::span<const Vec> logits, int label);

struct LossCounts {
  int instances = 0;
  int proto = 0;
  int pixel = 0;
  int part_level_proto = 0;  // |I|
  int part_level_pixel = 0;  // |J|
  int pixel_skipped = 0;
};

struct LossReport {
  Real ce = 0;
  Real proto = 0;
  Real pix = 0;
  Real total = 0;
  LossCounts counts;
};

LossReport total_loss(Real ce, Real proto, Real pix, Real lambda1, Real lambda2,
                      LossCounts counts = {});

// Numerically stable log(sum(exp(x))).
Real log_sum_exp(const Vec& x);

}  // namespace selcon
