#include "selcon/affinity.hpp"

#include <algorithm>

namespace selcon {

namespace {

std::string spaced(std::string_view label) {
  std::string s(label);
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

bool ends_with_with(const std::string& s) {
  constexpr std::string_view suffix = "with";
  if (s.size() < suffix.size()) return false;
  if (s.compare(s.size() - suffix.size(), suffix.size(), suffix) != 0) return false;
  return s.size() == suffix.size() || s[s.size() - suffix.size() - 1] == ' ';
}

void require_label(std::string_view action) {
  if (action.empty()) throw InputError("empty action label");
}

}  // namespace

const std::vector<std::string>& agd20k_actions() {
  static const std::vector<std::string> actions = {
      "beat",    "boxing", "brush_with", "carry",     "catch",   "cut",        "cut_with",
      "drag",    "drink_with", "eat",    "hit",       "hold",    "jump",       "kick",
      "lie_on",  "lift",   "look_out",   "open",      "pack",    "peel",       "pick_up",
      "pour",    "push",   "ride",       "sip",       "sit_on",  "stick",      "stir",
      "swing",   "take_photo", "talk_on", "text_on",  "throw",   "type_on",    "wash",
      "write"};
  return actions;
}

std::string compose_action_prompt(std::string_view action) {
  require_label(action);
  const std::string label = spaced(action);
  if (ends_with_with(label)) return "an item to " + label;
  return "an item to " + label + " with";
}

std::string compose_entity_prompt(std::string_view action) {
  require_label(action);
  return "a person " + spaced(action) + " an item";
}

PromptEmbedding make_prompt(std::string_view action, const Vec& action_emb, const Vec& entity_emb) {
  PromptEmbedding p;
  p.action_label = std::string(action);
  p.action_prompt_text = compose_action_prompt(action);
  p.entity_prompt_text = compose_entity_prompt(action);
  p.action_emb = channel_normalize(action_emb).vector();
  p.entity_emb = channel_normalize(entity_emb).vector();
  return p;
}

Map cosine_affinity(const Features& patches, const Vec& text) {
  return minmax_normalize(cosine_map(patches, text));
}

Map local_average_pool(const Map& m, int window) {
  if (window < 1 || window % 2 == 0) throw InputError("pooling window must be odd and positive");
  if (window > std::min(m.rows(), m.cols())) throw InputError("pooling window exceeds map size");
  const Index r = window / 2;
  Map out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      const Index i0 = std::max<Index>(0, i - r), i1 = std::min<Index>(m.rows() - 1, i + r);
      const Index j0 = std::max<Index>(0, j - r), j1 = std::min<Index>(m.cols() - 1, j + r);
      const auto block = m.block(i0, j0, i1 - i0 + 1, j1 - j0 + 1);
      out(i, j) = block.sum() / Real(block.size());
    }
  }
  return out;
}

ObjectAffinity ego_object_affinity(const Features& patches, const PromptEmbedding& prompt,
                                   std::string instance_id) {
  ObjectAffinity a;
  a.raw = cosine_map(patches, prompt.action_emb);
  a.map = minmax_normalize(a.raw);
  a.view = View::ego;
  a.instance_id = std::move(instance_id);
  return a;
}

ObjectAffinity exo_object_affinity(const Features& patches, const PromptEmbedding& prompt,
                                   const ExoAffinityOptions& options, std::string instance_id) {
  ObjectAffinity a;
  a.raw = cosine_map(patches, prompt.action_emb);
  Map entity = cosine_map(patches, prompt.entity_emb);
  Map action = a.raw;
  if (options.normalize_before_product) {
    action = minmax_normalize(action);
    // A spatially constant entity response carries no location; it must not veto.
    entity = entity.maxCoeff() > entity.minCoeff() ? minmax_normalize(entity) : Map::Ones(entity.rows(), entity.cols());
  }
  a.map = minmax_normalize(Map(action * local_average_pool(entity, options.window)));
  a.view = View::exo;
  a.instance_id = std::move(instance_id);
  return a;
}

}  // namespace selcon
