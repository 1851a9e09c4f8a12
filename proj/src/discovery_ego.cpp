#include "selcon/discovery_ego.hpp"

namespace selcon {

Real compute_rho(std::span<const Map> exo_stack) {
  if (exo_stack.empty()) throw InputError("compute_rho: empty exocentric stack");
  Real rho = exo_stack.front().maxCoeff();
  for (const auto& m : exo_stack.subspan(1)) rho = std::min(rho, m.maxCoeff());
  return rho;
}

PixelSets build_pixel_sets(const Map& rho_scale, const Map& normalized, Real rho, Real gamma2) {
  require_same_grid(rho_scale, normalized);
  if (!(gamma2 > 0 && gamma2 < 1)) throw InputError("gamma2 must lie in (0, 1)");
  PixelSets sets;
  const bool part_level = (rho_scale > rho).any();
  const auto values = part_level ? flat(rho_scale) : flat(normalized);
  const Real threshold = part_level ? rho : gamma2;
  for (Index p = 0; p < values.size(); ++p) {
    (values(p) > threshold ? sets.positives : sets.negatives).push_back(p);
  }
  sets.mode = part_level ? PixelMode::part_level : PixelMode::object_level;
  if (part_level) sets.rho = rho;
  return sets;
}

PixelSets discover_ego_pixels(const ObjectAffinity& ego, std::span<const ObjectAffinity> exo,
                              Real gamma2) {
  std::vector<Map> raw;
  raw.reserve(exo.size());
  for (const auto& a : exo) raw.push_back(a.raw);
  return build_pixel_sets(ego.raw, ego.map, compute_rho(raw), gamma2);
}

}  // namespace selcon
