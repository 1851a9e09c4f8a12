#pragma once

// Desk-scale synthetic corpus with planted ground truth.
//
// Every ego scene holds a background, an object box and a part box inside
// it. DINO-space pixels carry orthonormal class latents (object, part,
// class-correlated background context, shared background, person) plus
// Gaussian noise; CLIP-space pixels align with the action text most
// strongly on the part. Exo scenes reuse the latents at a smaller extent
// next to a person, with occlusion dropout and a weaker part response, so
// the part is more salient in ego than in exo views.

#include <cstdint>

#include "selcon/affinity.hpp"
#include "selcon/cache.hpp"
#include "selcon/dataset.hpp"

namespace selcon {

struct SyntheticSpec {
  Index height = 12;
  Index width = 12;
  Index dino_dim = 32;
  Index clip_dim = 16;
  int classes = 4;
  int scenes = 200;
  int exo_per_scene = 3;
  double holdout_fraction = 0.2;

  Index object_min = 5;  // ego object box side range
  Index object_max = 7;
  Index part_size = 3;   // ego part box side
  Index exo_object_size = 4;
  Index exo_part_size = 2;

  double part_object_cosine = 0.5;  // DINO cosine between part and object latents
  double context_weight = 0.6;      // class context carried by background pixels
  double ego_object_clip = 0.7;     // CLIP cosine of non-part object pixels with the action text
  double exo_part_clip = 0.85;
  double exo_object_clip = 0.6;
  double occlusion = 0.2;           // exo object pixels replaced by the person
  double contact_mix = 0.35;        // person component at exo part pixels touching the person
  double attention_object = 0.5;    // reference attention on non-part object pixels
  double noise = 0.05;
  double gt_blur = 1.0;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  DatasetIndex index;
  FeatureCache cache;
};

// Validates the spec; throws InputError when it cannot be realized.
void validate(const SyntheticSpec& spec);

SyntheticData generate_synthetic(const SyntheticSpec& spec);

Map gaussian_blur(const Map& m, double sigma);

}  // namespace selcon
