#pragma once

// Egocentric pixel discovery: the weakest per-image peak of the exocentric
// affinity stack separates affordance pixels from the rest of the ego image.

#include <optional>
#include <span>
#include <vector>

#include "selcon/affinity.hpp"

namespace selcon {

enum class PixelMode { part_level, object_level };

struct PixelSets {
  std::vector<Index> positives;  // flattened pixel indices, ascending
  std::vector<Index> negatives;
  PixelMode mode = PixelMode::object_level;
  std::optional<Real> rho;

  bool usable() const { return !positives.empty(); }
};

// min over views of the per-view spatial maximum.
Real compute_rho(std::span<const Map> exo_stack);

// Part level when some pixel of `rho_scale` exceeds rho; otherwise the
// object-level split of `normalized` at gamma2. Both comparisons are strict.
PixelSets build_pixel_sets(const Map& rho_scale, const Map& normalized, Real rho, Real gamma2);

inline PixelSets build_pixel_sets(const Map& affinity, Real rho, Real gamma2) {
  return build_pixel_sets(affinity, affinity, rho, gamma2);
}

// rho from the raw exocentric action similarities, compared against the raw
// egocentric similarity; the fallback uses the normalized egocentric map.
PixelSets discover_ego_pixels(const ObjectAffinity& ego, std::span<const ObjectAffinity> exo,
                              Real gamma2);

}  // namespace selcon
