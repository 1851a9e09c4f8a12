#include "selcon/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace selcon {

namespace {

struct Pooled {
  Unit unit;
  PoolTrace trace;
};

Pooled pool_normalize(const Features& z, const Map& weights, int view) {
  require_same_grid(z, weights);
  const Vec v = masked_pool(z, weights);
  Pooled out{channel_normalize(v), {view, weights, v.norm()}};
  return out;
}

Map ones_like(const Features& f) { return Map::Ones(f.height(), f.width()); }

Map negative_weights(const Map& m, const Map& cam, Real beta) {
  require_same_grid(m, cam);
  return beta - m * cam;
}

// Positive and negative prototypes of every view at one clue level.
struct ViewPrototypes {
  std::vector<Pooled> pos;
  std::vector<Pooled> neg;
};

ViewPrototypes view_prototypes(const PackInputs& in, const Map& ego_clue,
                               std::span<const Map> exo_clues, Real beta) {
  ViewPrototypes out;
  const std::size_t views = 1 + in.exo.size();
  for (std::size_t v = 0; v < views; ++v) {
    const Features& f = v == 0 ? *in.ego : in.exo[v - 1];
    const Map& clue = v == 0 ? ego_clue : exo_clues[v - 1];
    out.pos.push_back(pool_normalize(f, clue, static_cast<int>(v)));
    out.neg.push_back(pool_normalize(f, negative_weights(clue, in.cams[v], beta),
                                     static_cast<int>(v)));
    out.neg.back().trace.cam_coeff = -clue;
  }
  return out;
}

PrototypePack assemble(const Pooled& anchor, ViewPrototypes&& protos, int label, bool reliable) {
  PrototypePack pack;
  pack.anchor = anchor.unit;
  pack.anchor_trace = anchor.trace;
  for (auto& p : protos.pos) {
    pack.pos.push_back(p.unit);
    pack.pos_trace.push_back(std::move(p.trace));
  }
  for (auto& n : protos.neg) {
    pack.neg.push_back(n.unit);
    pack.neg_trace.push_back(std::move(n.trace));
  }
  pack.label = label;
  pack.reliable = reliable;
  return pack;
}

struct Member {
  std::size_t pack;
  bool positive;
  std::size_t view;
};

// Positives first, then negatives; both in (pack, view) order.
std::pair<std::vector<Member>, std::size_t> set_members(std::span<const PrototypePack> packs,
                                                        std::size_t b) {
  std::vector<Member> members;
  const int label = packs[b].label;
  for (std::size_t i = 0; i < packs.size(); ++i) {
    if (packs[i].label != label) continue;
    for (std::size_t v = 0; v < packs[i].pos.size(); ++v) members.push_back({i, true, v});
  }
  const std::size_t num_pos = members.size();
  for (std::size_t i = 0; i < packs.size(); ++i) {
    if (packs[i].label == label) {
      for (std::size_t v = 0; v < packs[i].neg.size(); ++v) members.push_back({i, false, v});
    } else {
      for (std::size_t v = 0; v < packs[i].pos.size(); ++v) members.push_back({i, true, v});
    }
  }
  return {members, num_pos};
}

const Unit& member_vector(std::span<const PrototypePack> packs, const Member& m) {
  return m.positive ? packs[m.pack].pos[m.view] : packs[m.pack].neg[m.view];
}

// Gradient through u = v / |v| followed by the linear pool.
void accumulate_pool_grad(const PoolTrace& trace, const Unit& u, const Vec& grad_u,
                          std::span<const Features* const> features, PackBackprop& out) {
  const Vec& uv = u.vector();
  const Vec grad_v = (grad_u - uv * uv.dot(grad_u)) / trace.norm;
  const Features& f = *features[trace.view];
  out.features[trace.view].noalias() += flat(trace.weights) * grad_v.transpose() / Real(f.pixels());
  if (trace.cam_coeff.size() > 0) {
    const Vec grad_w = f.matrix() * grad_v / Real(f.pixels());
    out.cams[trace.view] += trace.cam_coeff * unflatten<Real>(grad_w, f.height(), f.width());
  }
}

}  // namespace

Real log_sum_exp(const Vec& x) {
  const Real m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

Unit phi_plus(const Features& z, const Map& m) { return channel_normalize(masked_pool(z, m)); }

Unit phi_minus(const Features& z, const Map& m, const Map& cam, Real beta) {
  return channel_normalize(masked_pool(z, negative_weights(m, cam, beta)));
}

std::optional<PrototypePack> build_pack(const PackInputs& in, const PartSelection& selection,
                                        Real beta) {
  if (in.ego == nullptr || in.ego_affinity == nullptr) throw InputError("build_pack: missing ego inputs");
  if (in.exo.size() != in.exo_affinity.size() || in.cams.size() != in.exo.size() + 1) {
    throw DimensionError("build_pack: inconsistent view counts");
  }
  if (selection.reliable) {
    try {
      auto anchor = pool_normalize(*in.ego, *in.ego_affinity, 0);
      auto protos = view_prototypes(in, *selection.part_map_ego, selection.part_map_exo, beta);
      return assemble(anchor, std::move(protos), in.label, true);
    } catch (const DegeneratePrototype&) {
      // fall through to object level
    }
  }
  try {
    auto anchor = pool_normalize(*in.ego, ones_like(*in.ego), 0);
    auto protos = view_prototypes(in, *in.ego_affinity, in.exo_affinity, beta);
    return assemble(anchor, std::move(protos), in.label, false);
  } catch (const DegeneratePrototype&) {
    return std::nullopt;
  }
}

PrototypeSets proto_sets(std::span<const PrototypePack> packs, std::size_t b) {
  const auto [members, num_pos] = set_members(packs, b);
  PrototypeSets sets;
  for (std::size_t k = 0; k < members.size(); ++k) {
    (k < num_pos ? sets.positives : sets.negatives).push_back(member_vector(packs, members[k]));
  }
  return sets;
}

ProtoLossResult proto_loss(std::span<const PrototypePack> packs, Real tau) {
  if (!(tau > 0)) throw InputError("temperature must be positive");
  ProtoLossResult result;
  result.grads.resize(packs.size());
  for (std::size_t i = 0; i < packs.size(); ++i) {
    const Index d = packs[i].anchor.size();
    result.grads[i].anchor = Vec::Zero(d);
    result.grads[i].pos.assign(packs[i].pos.size(), Vec::Zero(d));
    result.grads[i].neg.assign(packs[i].neg.size(), Vec::Zero(d));
  }
  if (packs.empty()) return result;

  const Real scale = Real(1) / Real(packs.size());
  for (std::size_t b = 0; b < packs.size(); ++b) {
    const auto [members, num_pos] = set_members(packs, b);
    const Vec& z = packs[b].anchor.vector();
    Vec logits(static_cast<Index>(members.size()));
    for (std::size_t k = 0; k < members.size(); ++k) {
      logits(static_cast<Index>(k)) = z.dot(member_vector(packs, members[k]).vector()) / tau;
    }
    const Real lse = log_sum_exp(logits);
    const Real pos_mean = logits.head(static_cast<Index>(num_pos)).mean();
    result.value += scale * (lse - pos_mean);

    const Vec softmax = (logits.array() - lse).exp();
    Vec& grad_z = result.grads[b].anchor;
    for (std::size_t k = 0; k < members.size(); ++k) {
      const Real coeff = softmax(static_cast<Index>(k)) - (k < num_pos ? Real(1) / num_pos : Real(0));
      const Member& m = members[k];
      grad_z += scale * coeff / tau * member_vector(packs, m).vector();
      auto& slot = m.positive ? result.grads[m.pack].pos[m.view] : result.grads[m.pack].neg[m.view];
      slot += scale * coeff / tau * z;
    }
  }
  result.contributing = static_cast<int>(packs.size());
  return result;
}

PackBackprop backprop_pack(const PrototypePack& pack, const PackGradient& grad,
                           std::span<const Features* const> features) {
  if (features.size() != pack.pos.size()) throw DimensionError("backprop_pack: one feature map per view");
  PackBackprop out;
  for (const auto* f : features) {
    out.features.push_back(RowMatrix<Real>::Zero(f->pixels(), f->channels()));
    out.cams.push_back(Map::Zero(f->height(), f->width()));
  }
  accumulate_pool_grad(pack.anchor_trace, pack.anchor, grad.anchor, features, out);
  for (std::size_t v = 0; v < pack.pos.size(); ++v) {
    accumulate_pool_grad(pack.pos_trace[v], pack.pos[v], grad.pos[v], features, out);
    accumulate_pool_grad(pack.neg_trace[v], pack.neg[v], grad.neg[v], features, out);
  }
  return out;
}

PixelLossResult pixel_loss(const Features& f, const PixelSets& sets, Real tau) {
  if (!(tau > 0)) throw InputError("temperature must be positive");
  PixelLossResult result;
  result.grad = RowMatrix<Real>::Zero(f.pixels(), f.channels());
  if (sets.positives.empty()) return result;

  const Index np = static_cast<Index>(sets.positives.size());
  const Index n = np + static_cast<Index>(sets.negatives.size());
  RowMatrix<Real> units(n, f.channels());
  Vec norms(n);
  auto gather = [&](Index row, Index pixel) {
    const auto x = f.matrix().row(pixel);
    norms(row) = x.norm();
    units.row(row) = norms(row) > kNormEpsilon ? (x / norms(row)).eval() : RowMatrix<Real>::Zero(1, x.cols());
  };
  for (Index k = 0; k < np; ++k) gather(k, sets.positives[k]);
  for (Index k = np; k < n; ++k) gather(k, sets.negatives[k - np]);

  const RowMatrix<Real> logits = units.topRows(np) * units.transpose() / tau;  // np x n
  RowMatrix<Real> g(np, n);
  for (Index a = 0; a < np; ++a) {
    const Vec row = logits.row(a).transpose();
    const Real lse = log_sum_exp(row);
    result.value += (lse - row.head(np).mean()) / Real(np);
    g.row(a) = ((row.array() - lse).exp() / Real(np)).transpose();
    g.row(a).head(np).array() -= Real(1) / (Real(np) * Real(np));
  }

  RowMatrix<Real> grad_units = g.transpose() * units.topRows(np) / tau;  // as targets
  grad_units.topRows(np) += g * units / tau;                             // as anchors
  for (Index k = 0; k < n; ++k) {
    if (!(norms(k) > kNormEpsilon)) continue;
    const auto u = units.row(k);
    const Index pixel = k < np ? sets.positives[k] : sets.negatives[k - np];
    result.grad.row(pixel) += (grad_units.row(k) - u * u.dot(grad_units.row(k))) / norms(k);
  }
  result.contributed = true;
  return result;
}

PixelSets subsample(const PixelSets& sets, std::size_t limit, std::uint64_t seed) {
  PixelSets out = sets;
  std::mt19937_64 rng(seed);
  for (auto* s : {&out.positives, &out.negatives}) {
    if (s->size() <= limit) continue;
    std::shuffle(s->begin(), s->end(), rng);
    s->resize(limit);
    std::sort(s->begin(), s->end());
  }
  return out;
}

ClassificationLossResult classification_loss(std::span<const Vec> logits, int label) {
  if (logits.empty()) throw InputError("classification_loss: no views");
  ClassificationLossResult result;
  const Real scale = Real(1) / Real(logits.size());
  for (const auto& l : logits) {
    if (label < 0 || label >= l.size()) throw InputError("class label out of range");
    const Real lse = log_sum_exp(l);
    result.value += scale * (lse - l(label));
    Vec g = (l.array() - lse).exp();
    g(label) -= 1;
    result.grads.push_back(scale * g);
  }
  return result;
}

LossReport total_loss(Real ce, Real proto, Real pix, Real lambda1, Real lambda2, LossCounts counts) {
  LossReport r;
  r.ce = ce;
  r.proto = proto;
  r.pix = pix;
  r.total = ce + lambda1 * proto + lambda2 * pix;
  r.counts = counts;
  return r;
}

}  // namespace selcon
