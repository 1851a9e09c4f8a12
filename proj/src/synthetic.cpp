#include "selcon/synthetic.hpp"

#include <cmath>
#include <random>

#include "selcon/affinity.hpp"
#include "selcon/random.hpp"

namespace selcon {

namespace {

struct Box {
  Index top = 0, left = 0, rows = 0, cols = 0;
  bool contains(Index i, Index j) const {
    return i >= top && i < top + rows && j >= left && j < left + cols;
  }
};

struct Latents {
  Vec background, person;
  std::vector<Vec> object, part, context;
  Vec clip_background, entity;
  std::vector<Vec> text, clip_object;
};

Vec blend(const Vec& a, double ca, const Vec& b) { return ca * a + std::sqrt(1.0 - ca * ca) * b; }

Latents make_latents(const SyntheticSpec& s, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  auto orthonormal = [&](Index dim, Index count) {
    Eigen::MatrixXd g(dim, count);
    for (Index i = 0; i < g.size(); ++i) g.data()[i] = n01(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    return Eigen::MatrixXd(qr.householderQ() * Eigen::MatrixXd::Identity(dim, count));
  };
  const Index c = s.classes;
  const Eigen::MatrixXd dino = orthonormal(s.dino_dim, 2 + 3 * c);
  const Eigen::MatrixXd clip = orthonormal(s.clip_dim, 2 + 2 * c);
  Latents l;
  l.background = dino.col(0);
  l.person = dino.col(1);
  l.clip_background = clip.col(0);
  l.entity = clip.col(1);
  for (Index k = 0; k < c; ++k) {
    l.object.push_back(dino.col(2 + k));
    l.part.push_back(blend(dino.col(2 + k), s.part_object_cosine, dino.col(2 + c + k)));
    l.context.push_back(dino.col(2 + 2 * c + k));
    l.text.push_back(clip.col(2 + k));
    l.clip_object.push_back(clip.col(2 + c + k));
  }
  return l;
}

Box random_box(std::mt19937_64& rng, Index rows, Index cols, Index area_rows, Index area_cols,
               Index top0 = 0, Index left0 = 0) {
  std::uniform_int_distribution<Index> ti(0, area_rows - rows), tj(0, area_cols - cols);
  return {top0 + ti(rng), left0 + tj(rng), rows, cols};
}

class Scene {
 public:
  Scene(const SyntheticSpec& s, std::mt19937_64& rng)
      : spec_(s), rng_(rng), dino_(s.height, s.width, s.dino_dim), clip_(s.height, s.width, s.clip_dim) {}

  void set(Index i, Index j, const Vec& dino, const Vec& clip) {
    dino_.pixel(i, j) = noisy(dino).transpose();
    clip_.pixel(i, j) = noisy(clip).transpose();
  }

  Features& dino() { return dino_; }
  Features& clip() { return clip_; }

 private:
  Vec noisy(const Vec& v) {
    if (spec_.noise == 0) return v;
    std::normal_distribution<double> n(0.0, spec_.noise);
    Vec out = v;
    for (Index k = 0; k < out.size(); ++k) out(k) += n(rng_);
    return out;
  }

  const SyntheticSpec& spec_;
  std::mt19937_64& rng_;
  Features dino_, clip_;
};

}  // namespace

void validate(const SyntheticSpec& s) {
  auto fail = [](const std::string& why) { throw InputError("infeasible synthetic spec: " + why); };
  if (s.height < 4 || s.width < 4) fail("grid must be at least 4x4");
  if (s.classes < 1 || s.scenes < 1 || s.exo_per_scene < 1) fail("classes, scenes and E must be positive");
  if (s.dino_dim < 2 + 3 * s.classes) fail("dino_dim too small for orthogonal class latents");
  if (s.clip_dim < 2 + 2 * s.classes) fail("clip_dim too small for orthogonal text directions");
  if (s.object_min < 1 || s.object_min > s.object_max) fail("object size range is empty");
  if (s.object_max > std::min(s.height, s.width)) fail("object larger than the grid");
  if (s.part_size < 1 || s.part_size > s.object_min) fail("part larger than the object");
  if (s.exo_part_size < 1 || s.exo_part_size > s.exo_object_size) fail("exo part larger than the exo object");
  if (s.exo_object_size + 1 > s.height || s.exo_object_size + 3 > s.width) fail("exo object and person do not fit");
  if (!(s.holdout_fraction >= 0 && s.holdout_fraction < 1)) fail("holdout fraction must lie in [0, 1)");
  for (double c : {s.part_object_cosine, s.ego_object_clip, s.exo_part_clip, s.exo_object_clip}) {
    if (!(c >= 0 && c <= 1)) fail("cosine parameters must lie in [0, 1]");
  }
  if (!(s.noise >= 0) || !(s.occlusion >= 0 && s.occlusion <= 1)) fail("noise/occlusion out of range");
}

Map gaussian_blur(const Map& m, double sigma) {
  if (sigma <= 0) return m;
  const Index r = static_cast<Index>(std::ceil(3 * sigma));
  Vec kernel(2 * r + 1);
  for (Index k = -r; k <= r; ++k) kernel(k + r) = std::exp(-0.5 * (k * k) / (sigma * sigma));
  auto pass = [&](const Map& in, bool rows) {
    Map out = Map::Zero(in.rows(), in.cols());
    for (Index i = 0; i < in.rows(); ++i) {
      for (Index j = 0; j < in.cols(); ++j) {
        double acc = 0, wsum = 0;
        for (Index k = -r; k <= r; ++k) {
          const Index ii = rows ? i + k : i, jj = rows ? j : j + k;
          if (ii < 0 || jj < 0 || ii >= in.rows() || jj >= in.cols()) continue;
          acc += kernel(k + r) * in(ii, jj);
          wsum += kernel(k + r);
        }
        out(i, j) = acc / wsum;
      }
    }
    return out;
  };
  return pass(pass(m, true), false);
}

SyntheticData generate_synthetic(const SyntheticSpec& s) {
  validate(s);
  std::mt19937_64 rng(derive_seed(s.seed, "latents"));
  const Latents lat = make_latents(s, rng);
  const auto& all_actions = agd20k_actions();

  SyntheticData data;
  for (int c = 0; c < s.classes; ++c) {
    const std::string action = all_actions[(static_cast<std::size_t>(c) * 9) % all_actions.size()] +
                               (s.classes > 4 ? "_" + std::to_string(c) : "");
    data.index.actions.push_back(action);
    data.cache.put(cache_key_text(action, "action"), lat.text[c]);
    data.cache.put(cache_key_text(action, "entity"), Vec((lat.entity + 0.3 * lat.text[c]).normalized()));
  }

  const int test_begin = static_cast<int>(std::lround(s.scenes * (1.0 - s.holdout_fraction)));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int n = 0; n < s.scenes; ++n) {
    const int c = n % s.classes;
    InstanceRecord r;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene%04d", n);
    r.split = n < test_begin ? Split::train : Split::test;
    r.id = std::string("synthetic/") + to_string(r.split) + "/" + buf;
    r.action = data.index.actions[c];
    r.label = c;
    r.object = "object" + std::to_string(c);
    r.scenario = Scenario::seen;
    r.exo_count = s.exo_per_scene;
    r.exo_seed = derive_seed(s.seed, r.id);
    r.gt = "gt/" + r.id;
    std::mt19937_64 srng(r.exo_seed);

    // Egocentric view.
    std::uniform_int_distribution<Index> side(s.object_min, s.object_max);
    const Index oh = side(srng), ow = side(srng);
    const Box object = random_box(srng, oh, ow, s.height, s.width);
    const Box part = random_box(srng, s.part_size, s.part_size, oh, ow, object.top, object.left);
    Scene ego(s, srng);
    Map part_mask = Map::Zero(s.height, s.width), object_mask = part_mask, attn = part_mask;
    const Vec background = lat.background + s.context_weight * lat.context[c];
    const Vec ego_object_clip = blend(lat.text[c], s.ego_object_clip, lat.clip_object[c]);
    std::normal_distribution<double> attn_noise(0.0, s.noise);
    for (Index i = 0; i < s.height; ++i) {
      for (Index j = 0; j < s.width; ++j) {
        if (part.contains(i, j)) {
          ego.set(i, j, lat.part[c], lat.text[c]);
          part_mask(i, j) = object_mask(i, j) = attn(i, j) = 1;
        } else if (object.contains(i, j)) {
          ego.set(i, j, lat.object[c], ego_object_clip);
          object_mask(i, j) = 1;
          attn(i, j) = s.attention_object;
        } else {
          ego.set(i, j, background, lat.clip_background);
        }
        if (s.noise > 0) attn(i, j) = std::clamp(attn(i, j) + attn_noise(srng), 0.0, 1.0);
      }
    }
    data.cache.put(cache_key_ego(r.id, "dino"), ego.dino());
    data.cache.put(cache_key_ego(r.id, "clip"), ego.clip());
    data.cache.put(cache_key_ego(r.id, "attn"), attn);
    data.cache.put("mask/" + r.id + "/part", part_mask);
    data.cache.put("mask/" + r.id + "/object", object_mask);
    // Annotations live on the object surface: the blurred part is clipped to it.
    Map gt = gaussian_blur(part_mask, s.gt_blur) * object_mask;
    gt /= gt.maxCoeff();
    data.cache.put(r.gt, gt);

    // Exocentric views: small object, person on one side, part touching the person.
    const Vec exo_part_clip = blend(lat.text[c], s.exo_part_clip, lat.entity);
    const Vec exo_object_clip = blend(lat.text[c], s.exo_object_clip, lat.clip_object[c]);
    for (int e = 0; e < s.exo_per_scene; ++e) {
      const Index size = s.exo_object_size;
      const bool person_right = u01(srng) < 0.5;
      const Box obj = person_right ? random_box(srng, size, size, s.height - 1, s.width - 3)
                                   : random_box(srng, size, size, s.height - 1, s.width - 3, 0, 3);
      const Box person{obj.top, person_right ? obj.left + size : obj.left - 3, std::min(size + 1, s.height - obj.top), 3};
      std::uniform_int_distribution<Index> prow(0, size - s.exo_part_size);
      const Box exo_part{obj.top + prow(srng), person_right ? obj.left + size - s.exo_part_size : obj.left,
                         s.exo_part_size, s.exo_part_size};
      const Index contact_col = person_right ? obj.left + size - 1 : obj.left;
      Scene exo(s, srng);
      for (Index i = 0; i < s.height; ++i) {
        for (Index j = 0; j < s.width; ++j) {
          if (exo_part.contains(i, j)) {
            const Vec dino = j == contact_col ? Vec(lat.part[c] + s.contact_mix * lat.person) : lat.part[c];
            exo.set(i, j, dino, exo_part_clip);
          } else if (obj.contains(i, j)) {
            if (u01(srng) < s.occlusion) {
              exo.set(i, j, lat.person, lat.entity);
            } else {
              exo.set(i, j, lat.object[c], exo_object_clip);
            }
          } else if (person.contains(i, j)) {
            exo.set(i, j, lat.person, lat.entity);
          } else {
            exo.set(i, j, background, lat.clip_background);
          }
        }
      }
      data.cache.put(cache_key_exo(r.id, e, "dino"), exo.dino());
      data.cache.put(cache_key_exo(r.id, e, "clip"), exo.clip());
    }
    data.index.records.push_back(std::move(r));
  }
  return data;
}

}  // namespace selcon
