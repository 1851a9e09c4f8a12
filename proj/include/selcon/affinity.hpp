#pragma once

// Object affinity maps from cached CLIP patch embeddings and prompt
// embeddings. No text encoding happens here; prompt embeddings come from
// the feature cache.

#include <string>
#include <string_view>
#include <vector>

#include "selcon/tensor.hpp"

namespace selcon {

using Real = double;
using Features = SpatialFeatures<Real>;
using Map = ScalarMap<Real>;
using Vec = Vector<Real>;
using Unit = UnitVector<Real>;

enum class View { ego, exo };

struct PromptEmbedding {
  std::string action_label;
  std::string action_prompt_text;
  std::string entity_prompt_text;
  Vec action_emb;
  Vec entity_emb;
};

struct ObjectAffinity {
  Map map;  // min-max normalized, entries in [0, 1]
  Map raw;  // action-prompt cosine similarity before normalization
  View view = View::ego;
  std::string instance_id;
};

struct ExoAffinityOptions {
  int window = 3;
  // Min-max normalize the two similarity maps before multiplying them.
  bool normalize_before_product = true;
};

// The 36 AGD20K affordance labels, underscores preserved.
const std::vector<std::string>& agd20k_actions();

// "catch" -> "an item to catch with"; labels already ending in "with" keep
// their ending. Underscores in labels read as spaces.
std::string compose_action_prompt(std::string_view action);

// "catch" -> "a person catch an item".
std::string compose_entity_prompt(std::string_view action);

// Builds a PromptEmbedding, normalizing both embeddings.
PromptEmbedding make_prompt(std::string_view action, const Vec& action_emb, const Vec& entity_emb);

// minmax_normalize of the per-pixel cosine with `text`.
Map cosine_affinity(const Features& patches, const Vec& text);

// k x k box mean over the valid (in-grid) neighbours of each pixel.
Map local_average_pool(const Map& m, int window);

ObjectAffinity ego_object_affinity(const Features& patches, const PromptEmbedding& prompt,
                                   std::string instance_id = {});

ObjectAffinity exo_object_affinity(const Features& patches, const PromptEmbedding& prompt,
                                   const ExoAffinityOptions& options = {},
                                   std::string instance_id = {});

}  // namespace selcon
