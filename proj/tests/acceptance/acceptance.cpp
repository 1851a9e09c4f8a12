// Acceptance checks. One line per criterion: "[PASS] name: detail" or
// "[FAIL] name: detail". Exit status is non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "../support.hpp"
#include "selcon/pipeline.hpp"
#include "selcon/synthetic.hpp"

using namespace selcon;
using namespace selcon::testing;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

void info(const std::string& name, const std::string& detail) {
  std::cout << "[INFO] " << name << ": " << detail << std::endl;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Norm-wise relative error of one gradient tensor.
double rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0, scale = 0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    diff = std::max(diff, std::abs(analytic[k] - numeric[k]));
    scale = std::max({scale, std::abs(analytic[k]), std::abs(numeric[k])});
  }
  return scale > 0 ? diff / scale : diff;
}

// Central differences of f over the entries of a buffer.
std::vector<double> numeric_grad(double* data, Index n, double h, const std::function<double()>& f) {
  std::vector<double> g(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) {
    const double x0 = data[k];
    data[k] = x0 + h;
    const double up = f();
    data[k] = x0 - h;
    const double down = f();
    data[k] = x0;
    g[static_cast<std::size_t>(k)] = (up - down) / (2 * h);
  }
  return g;
}

std::vector<double> as_vector(const double* data, Index n) { return std::vector<double>(data, data + n); }

struct PackFixture {
  Features ego;
  std::vector<Features> exo;
  Map ego_aff;
  std::vector<Map> exo_aff;
  std::vector<Map> cams;
  PartSelection selection;
  int label = 0;

  PackInputs inputs() const {
    PackInputs in;
    in.ego = &ego;
    in.exo = exo;
    in.ego_affinity = &ego_aff;
    in.exo_affinity = exo_aff;
    in.cams = cams;
    in.label = label;
    return in;
  }
};

PackFixture make_fixture(Rng& rng, Index hw, Index d, int exo_views, int label, bool reliable) {
  PackFixture fx;
  fx.ego = random_features(rng, hw, hw, d);
  fx.ego_aff = random_map(rng, hw, hw, 0.05, 1.0);
  fx.cams.push_back(random_map(rng, hw, hw));
  for (int e = 0; e < exo_views; ++e) {
    fx.exo.push_back(random_features(rng, hw, hw, d));
    fx.exo_aff.push_back(random_map(rng, hw, hw, 0.05, 1.0));
    fx.cams.push_back(random_map(rng, hw, hw));
  }
  fx.label = label;
  if (reliable) {
    fx.selection.reliable = true;
    fx.selection.prototype = random_unit(rng, d);
    fx.selection.part_map_ego = random_map(rng, hw, hw, 0.05, 1.0);
    for (int e = 0; e < exo_views; ++e) fx.selection.part_map_exo.push_back(random_map(rng, hw, hw, 0.05, 1.0));
  }
  return fx;
}

std::vector<PrototypePack> build_packs(const std::vector<PackFixture>& fxs, double beta) {
  std::vector<PrototypePack> packs;
  for (const auto& fx : fxs) packs.push_back(*build_pack(fx.inputs(), fx.selection, beta));
  return packs;
}

double proto_oracle(const std::vector<PrototypePack>& packs, double tau) {
  double total = 0;
  for (std::size_t b = 0; b < packs.size(); ++b) {
    std::vector<Vec> pos, all;
    for (const auto& p : packs)
      if (p.label == packs[b].label)
        for (const auto& u : p.pos) pos.push_back(u.vector());
    all = pos;
    for (const auto& p : packs) {
      if (p.label == packs[b].label) {
        for (const auto& u : p.neg) all.push_back(u.vector());
      } else {
        for (const auto& u : p.pos) all.push_back(u.vector());
      }
    }
    const Vec& z = packs[b].anchor.vector();
    long double den = 0;
    for (const auto& q : all) den += std::exp(static_cast<long double>(z.dot(q) / tau));
    long double term = 0;
    for (const auto& p : pos) term -= std::log(std::exp(static_cast<long double>(z.dot(p) / tau)) / den);
    total += static_cast<double>(term / pos.size());
  }
  return total / packs.size();
}

double pixel_oracle(const Features& f, const PixelSets& s, double tau) {
  std::vector<Vec> pos, all;
  for (Index p : s.positives) pos.push_back(f.matrix().row(p).normalized().transpose());
  all = pos;
  for (Index p : s.negatives) all.push_back(f.matrix().row(p).normalized().transpose());
  double total = 0;
  for (const auto& a : pos) {
    long double den = 0;
    for (const auto& q : all) den += std::exp(static_cast<long double>(a.dot(q) / tau));
    long double term = 0;
    for (const auto& p : pos) term -= std::log(std::exp(static_cast<long double>(a.dot(p) / tau)) / den);
    total += static_cast<double>(term / pos.size());
  }
  return total / pos.size();
}

PixelSets random_sets(Rng& rng, Index n) {
  PixelSets s;
  std::bernoulli_distribution coin(0.4);
  for (Index p = 0; p < n; ++p) (coin(rng) ? s.positives : s.negatives).push_back(p);
  if (s.positives.empty()) {
    s.positives.push_back(s.negatives.back());
    s.negatives.pop_back();
  }
  return s;
}

void gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1001);
  const double h = 1e-4, beta = 1.0, tau = 0.5;
  const Index hw = 4, dp = 8;
  double worst_proto = 0, worst_pixel = 0, worst_ce = 0;

  std::vector<PackFixture> fxs{make_fixture(rng, hw, dp, 2, 0, true), make_fixture(rng, hw, dp, 2, 0, false),
                               make_fixture(rng, hw, dp, 2, 1, true)};
  const auto packs = build_packs(fxs, beta);
  const ProtoLossResult res = proto_loss(packs, tau);
  auto loss = [&] { return proto_loss(build_packs(fxs, beta), tau).value; };
  for (std::size_t b = 0; b < fxs.size(); ++b) {
    std::vector<const Features*> feats{&fxs[b].ego};
    for (const auto& f : fxs[b].exo) feats.push_back(&f);
    const PackBackprop bp = backprop_pack(packs[b], res.grads[b], feats);
    for (std::size_t v = 0; v < feats.size(); ++v) {
      Features& f = v == 0 ? fxs[b].ego : fxs[b].exo[v - 1];
      const auto num = numeric_grad(f.matrix().data(), f.matrix().size(), h, loss);
      worst_proto = std::max(worst_proto, rel_error(as_vector(bp.features[v].data(), bp.features[v].size()), num));
      Map& c = fxs[b].cams[v];
      const auto numc = numeric_grad(c.data(), c.size(), h, loss);
      worst_proto = std::max(worst_proto, rel_error(as_vector(bp.cams[v].data(), bp.cams[v].size()), numc));
    }
  }

  for (int b = 0; b < 3; ++b) {
    Features f = random_features(rng, hw, hw, dp);
    const PixelSets s = random_sets(rng, hw * hw);
    const PixelLossResult r = pixel_loss(f, s, tau);
    const auto num = numeric_grad(f.matrix().data(), f.matrix().size(), h, [&] { return pixel_loss(f, s, tau).value; });
    worst_pixel = std::max(worst_pixel, rel_error(as_vector(r.grad.data(), r.grad.size()), num));
  }

  for (int b = 0; b < 3; ++b) {
    std::vector<Vec> logits{random_vec(rng, 36), random_vec(rng, 36), random_vec(rng, 36)};
    const auto r = classification_loss(logits, b);
    for (std::size_t v = 0; v < logits.size(); ++v) {
      const auto num = numeric_grad(logits[v].data(), logits[v].size(), h,
                                    [&] { return classification_loss(logits, b).value; });
      worst_ce = std::max(worst_ce, rel_error(as_vector(r.grads[v].data(), r.grads[v].size()), num));
    }
  }
  const double worst = std::max({worst_proto, worst_pixel, worst_ce});
  const double secs = seconds_since(t0);
  report("gradient fidelity", worst < 1e-4 && secs < 30,
         "max rel err proto " + fmt(worst_proto) + ", pixel " + fmt(worst_pixel) + ", ce " + fmt(worst_ce) +
             " (< 1e-4), " + fmt(secs) + " s (< 30 s)");
}

void head_chain_gradient() {
  // Loss gradients chained through the heads on real discovery clues.
  SyntheticSpec s;
  s.scenes = 12;
  s.height = s.width = 6;
  s.object_min = 3;
  s.object_max = 4;
  s.part_size = 2;
  s.exo_object_size = 3;
  s.exo_part_size = 1;
  s.dino_dim = 8;
  s.clip_dim = 12;
  s.classes = 2;
  s.exo_per_scene = 2;
  const SyntheticData data = generate_synthetic(s);
  RunConfig c;
  c.projection_dim = 8;
  c.exo_per_ego = 2;
  const auto train_records = select_split(data.index, Split::train);
  std::vector<InstanceData> inst;
  for (std::size_t k = 0; k < 3; ++k) inst.push_back(load_instance(data.cache, *train_records[k], c));
  std::vector<const InstanceData*> batch;
  for (const auto& d : inst) batch.push_back(&d);
  HeadParams p = init_params(7, 8, 8, 2);
  const BatchResult r = compute_batch(p, batch, c);
  double worst = 0;
  std::vector<RowMatrix<Real>*> ps;
  std::vector<const RowMatrix<Real>*> gs;
  p.for_each([&](const std::string&, RowMatrix<Real>& m) { ps.push_back(&m); });
  r.grads.for_each([&](const std::string&, const RowMatrix<Real>& m) { gs.push_back(&m); });
  for (std::size_t t = 0; t < ps.size(); ++t) {
    const auto num = numeric_grad(ps[t]->data(), ps[t]->size(), 1e-6,
                                  [&] { return compute_batch(p, batch, c).report.total; });
    worst = std::max(worst, rel_error(as_vector(gs[t]->data(), gs[t]->size()), num));
  }
  info("head chain gradient", "full objective through heads and CAM, max rel err " + fmt(worst));
}

void loss_oracles() {
  Rng rng(1002);
  double worst_proto = 0, worst_pixel = 0;
  for (int t = 0; t < 50; ++t) {
    std::vector<PackFixture> fxs;
    const int b = 1 + t % 4;
    for (int i = 0; i < b; ++i) fxs.push_back(make_fixture(rng, 4, 8, 1 + (t + i) % 3, i % 2, (t + i) % 2 == 0));
    const auto packs = build_packs(fxs, 1.0);
    worst_proto = std::max(worst_proto, std::abs(proto_loss(packs, 0.5).value - proto_oracle(packs, 0.5)));
    const Features f = random_features(rng, 5, 5, 8);
    const PixelSets s = random_sets(rng, 25);
    worst_pixel = std::max(worst_pixel, std::abs(pixel_loss(f, s, 0.5).value - pixel_oracle(f, s, 0.5)));
  }
  report("loss oracle equivalence", worst_proto < 1e-6 && worst_pixel < 1e-6,
         "50 fixtures, max |diff| proto " + fmt(worst_proto) + ", pixel " + fmt(worst_pixel) + " (< 1e-6)");
}

void rho_oracle() {
  Rng rng(1003);
  int mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<Map> stack;
    const int e = 1 + t % 5;
    for (int k = 0; k < e; ++k) stack.push_back(random_map(rng, 1 + t % 7, 1 + (t / 7) % 7));
    double oracle = 1e300;
    for (const auto& m : stack) {
      double mx = -1e300;
      for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) mx = std::max(mx, m(i, j));
      oracle = std::min(oracle, mx);
    }
    mismatches += compute_rho(stack) != oracle;
  }
  report("rho oracle", mismatches == 0, "1000 stacks, " + std::to_string(mismatches) + " mismatches");
}

void selection_semantics() {
  // 3x3 ego grid: part pixels on axis 0.
  auto axis_features = [](Index h, Index w, Index d, const std::vector<Index>& ax) {
    Features f(h, w, d);
    for (Index p = 0; p < h * w; ++p) f.matrix()(p, ax[p]) = 1;
    return f;
  };
  const Features ego = axis_features(3, 3, 4, {0, 0, 1, 0, 1, 1, 2, 2, 2});
  const std::vector<Features> exo{axis_features(3, 3, 4, {0, 1, 1, 2, 2, 2, 3, 3, 3})};
  RowMatrix<Real> centroids = RowMatrix<Real>::Zero(3, 4);
  centroids(0, 1) = 1;
  centroids(1, 0) = 1;
  centroids(2, 2) = 1;
  Map part = Map::Zero(3, 3);
  part(0, 0) = part(0, 1) = part(1, 0) = 1;

  Rng rng(1004);
  const Features z_ego = random_features(rng, 3, 3, 8);
  const std::vector<Features> z_exo{random_features(rng, 3, 3, 8)};
  const Map a_ego = random_map(rng, 3, 3, 0.1, 1.0);
  const std::vector<Map> a_exo{random_map(rng, 3, 3, 0.1, 1.0)};
  const std::vector<Map> cams{random_map(rng, 3, 3), random_map(rng, 3, 3)};
  PackInputs in;
  in.ego = &z_ego;
  in.exo = z_exo;
  in.ego_affinity = &a_ego;
  in.exo_affinity = a_exo;
  in.cams = cams;

  const PartSelection good = select_part(centroids, ego, exo, {part, ReferenceSource::dino_attention}, 0.6);
  const auto pa = build_pack(in, good, 1.0);
  const bool case_a = good.reliable && good.best == 1 && pa && pa->reliable &&
                      (pa->anchor.vector() - phi_plus(z_ego, a_ego).vector()).norm() < 1e-12 &&
                      (pa->pos[0].vector() - phi_plus(z_ego, *good.part_map_ego).vector()).norm() < 1e-12 &&
                      (pa->neg[1].vector() - phi_minus(z_exo[0], good.part_map_exo[0], cams[1], 1.0).vector()).norm() <
                          1e-12;

  Map off = Map::Zero(3, 3);
  off(2, 2) = off(0, 2) = 1;
  const PartSelection bad = select_part(centroids, ego, exo, {off, ReferenceSource::dino_attention}, 0.6);
  bool all_below = true;
  for (double s : bad.piou_scores) all_below = all_below && s <= 0.6;
  const auto pb = build_pack(in, bad, 1.0);
  const bool case_b = !bad.reliable && all_below && pb && !pb->reliable &&
                      (pb->anchor.vector() - phi_plus(z_ego, Map::Ones(3, 3).eval()).vector()).norm() < 1e-12 &&
                      (pb->pos[1].vector() - phi_plus(z_exo[0], a_exo[0]).vector()).norm() < 1e-12 &&
                      (pb->neg[0].vector() - phi_minus(z_ego, a_ego, cams[0], 1.0).vector()).norm() < 1e-12;

  // Alpha sweep over generator scenes with the untrained CAM.
  SyntheticSpec spec;
  spec.scenes = 60;
  const SyntheticData data = generate_synthetic(spec);
  RunConfig c;
  const HeadParams params = init_params(3, spec.dino_dim, 8, spec.classes);
  const auto records = select_split(data.index, Split::train);
  std::vector<InstanceData> inst;
  std::vector<std::vector<Map>> inst_cams;
  for (const auto* r : records) {
    inst.push_back(load_instance(data.cache, *r, c));
    std::vector<Map> cs;
    for (const auto& f : inst.back().exo_dino) cs.push_back(forward(f, r->label, params).cam_target);
    inst_cams.push_back(std::move(cs));
  }
  std::vector<int> sizes;
  bool monotone = true;
  for (int step = 0; step <= 10; ++step) {
    const double alpha = step / 10.0;
    int count = 0;
    for (std::size_t k = 0; k < inst.size(); ++k) {
      ExoDiscoveryParams p = exo_discovery_params(c, *records[k]);
      p.alpha = alpha;
      count += discover_exo_part(inst_cams[k], inst[k].exo_affinity_maps, inst[k].exo_dino, inst[k].ego_dino,
                                 inst[k].reference, p)
                   .reliable;
    }
    if (!sizes.empty() && count > sizes.back()) monotone = false;
    sizes.push_back(count);
  }
  const bool case_c = monotone && sizes.front() > sizes.back();
  std::string trace;
  for (int s : sizes) trace += (trace.empty() ? "" : ",") + std::to_string(s);
  report("selection semantics", case_a && case_b && case_c,
         std::string("(a) ") + (case_a ? "ok" : "broken") + ", (b) " + (case_b ? "ok" : "broken") +
             ", (c) |I| over alpha 0..1 = [" + trace + "]");
}

void prototype_invariants() {
  Rng rng(1005);
  double worst_norm = 0, worst_scale = 0;
  for (int t = 0; t < 40; ++t) {
    std::vector<PackFixture> fxs;
    for (int i = 0; i < 3; ++i) fxs.push_back(make_fixture(rng, 4, 8, 2, i % 2, (t + i) % 2 == 0));
    const auto packs = build_packs(fxs, 1.0);
    for (const auto& p : packs) {
      worst_norm = std::max(worst_norm, std::abs(p.anchor.vector().norm() - 1));
      for (const auto& u : p.pos) worst_norm = std::max(worst_norm, std::abs(u.vector().norm() - 1));
      for (const auto& u : p.neg) worst_norm = std::max(worst_norm, std::abs(u.vector().norm() - 1));
    }
    const double base = proto_loss(packs, 0.5).value;
    const double scale = 0.01 + 10.0 * (t % 5);
    auto scaled = fxs;
    for (auto& fx : scaled) {
      fx.ego.matrix() *= scale;
      for (auto& f : fx.exo) f.matrix() *= scale;
    }
    worst_scale = std::max(worst_scale, std::abs(proto_loss(build_packs(scaled, 1.0), 0.5).value - base));

    Features f = random_features(rng, 4, 4, 8);
    const PixelSets s = random_sets(rng, 16);
    const double pix = pixel_loss(f, s, 0.5).value;
    for (Index p = 0; p < 16; ++p) f.matrix().row(p) *= 0.1 + p;
    worst_scale = std::max(worst_scale, std::abs(pixel_loss(f, s, 0.5).value - pix));

    std::vector<Vec> logits{random_vec(rng, 10), random_vec(rng, 10)};
    const double ce = classification_loss(logits, 3).value;
    for (auto& l : logits) l.array() += scale;
    worst_scale = std::max(worst_scale, std::abs(classification_loss(logits, 3).value - ce));
  }
  report("prototype invariants", worst_norm < 1e-6 && worst_scale < 1e-6,
         "max | |u| - 1 | = " + fmt(worst_norm) + ", max loss change under positive rescaling " + fmt(worst_scale));
}

void metric_correctness() {
  Rng rng(1006);
  double kld_self = 0, sim_self = 0, affine = 0, kld_or = 0, sim_or = 0, nss_or = 0;
  bool disjoint_ok = true;
  for (int t = 0; t < 100; ++t) {
    const Map p = random_map(rng, 6, 7, 0.0, 1.0), g = random_map(rng, 6, 7, 0.0, 1.0);
    kld_self = std::max(kld_self, std::abs(kld(p, p)));
    sim_self = std::max(sim_self, std::abs(sim(p, p) - 1));
    const double a = 0.1 + t, b = t - 50.0;
    affine = std::max(affine, std::abs(nss((a * p + b).eval(), g) - nss(p, g)));

    long double ps = 0, gs = 0;
    for (Index k = 0; k < p.size(); ++k) {
      ps += p.data()[k];
      gs += g.data()[k];
    }
    long double kl = 0, si = 0;
    for (Index k = 0; k < p.size(); ++k) {
      const long double gk = g.data()[k] / gs, pk = p.data()[k] / ps;
      if (gk > 0) kl += gk * std::log(gk / (pk + 1e-12L));
      si += std::min(gk, pk);
    }
    kld_or = std::max(kld_or, std::abs(kld(p, g) - static_cast<double>(kl)));
    sim_or = std::max(sim_or, std::abs(sim(p, g) - static_cast<double>(si)));

    const double gmin = g.minCoeff(), gmax = g.maxCoeff();
    double mean = 0;
    for (Index k = 0; k < p.size(); ++k) mean += p.data()[k];
    mean /= p.size();
    double var = 0;
    for (Index k = 0; k < p.size(); ++k) var += (p.data()[k] - mean) * (p.data()[k] - mean);
    const double sd = std::sqrt(var / p.size());
    double acc = 0;
    int n = 0;
    for (Index k = 0; k < p.size(); ++k) {
      if ((g.data()[k] - gmin) / (gmax - gmin) > 0.1) {
        acc += (p.data()[k] - mean) / sd;
        ++n;
      }
    }
    nss_or = std::max(nss_or, std::abs(nss(p, g) - acc / n));

    Map l = Map::Zero(4, 4), r = Map::Zero(4, 4);
    l.topRows(2) = random_map(rng, 2, 4, 0.1, 1.0);
    r.bottomRows(2) = random_map(rng, 2, 4, 0.1, 1.0);
    disjoint_ok = disjoint_ok && sim(l, r) == 0;
  }
  const bool ok = kld_self < 1e-9 && sim_self < 1e-12 && disjoint_ok && affine < 1e-6 && kld_or < 1e-9 &&
                  sim_or < 1e-9 && nss_or < 1e-9;
  report("metric correctness", ok,
         "kld(p,p) " + fmt(kld_self) + ", |sim(p,p)-1| " + fmt(sim_self) + ", disjoint sim " +
             (disjoint_ok ? "0" : "nonzero") + ", nss affine drift " + fmt(affine) + ", oracle diffs kld " +
             fmt(kld_or) + " sim " + fmt(sim_or) + " nss " + fmt(nss_or) + " on 100 pairs");
}

void calibration() {
  Rng rng(1007);
  bool ok = true;
  for (int t = 0; t < 200; ++t) {
    const Map cam = random_map(rng, 5, 6);
    const Map aff = random_map(rng, 5, 6);
    const double gamma = 0.05 + 0.9 * (t % 10) / 10.0;
    const Map mask = binarize(aff, gamma);
    const Map out = calibrate(cam, aff, gamma);
    ok = ok && ((out * (1 - mask)) == 0).all() && (out <= cam).all() && (calibrate(out, aff, gamma) == out).all();
    // Binary affinity input.
    ok = ok && (calibrate(cam, mask, 0.5) == out).all();
  }
  report("calibration", ok, "200 random cases: zero outside the mask, never above the raw CAM, idempotent");
}

struct RunSummary {
  MetricsTable table;
  std::vector<EpochLog> logs;
};

RunSummary run(const RunConfig& c, const SyntheticData& data, const fs::path& dir) {
  RunSummary s;
  const TrainResult tr = train(c, data.cache, data.index, dir);
  const auto test = select_split(data.index, Split::test);
  s.table = evaluate(tr.checkpoint.params, data.cache, test, c);
  write_metrics(s.table, dir / "metrics.jsonl");
  s.logs = tr.logs;
  return s;
}

void end_to_end_and_determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticSpec spec;
  const SyntheticData data = generate_synthetic(spec);
  TempDir base_dir("acc-base"), full_dir("acc-full"), again_dir("acc-again");

  RunConfig baseline;
  baseline.max_steps = 200;
  baseline.validation_slice = 0;
  baseline.lambda1 = 0;
  baseline.lambda2 = 0;
  baseline.calibrate = false;
  RunConfig full = baseline;
  full.lambda1 = 1;
  full.lambda2 = 1;
  full.calibrate = true;

  const RunSummary b = run(baseline, data, base_dir.path());
  const RunSummary f = run(full, data, full_dir.path());

  SyntheticSpec quiet = spec;
  quiet.noise = 0;
  const SyntheticData clean = generate_synthetic(quiet);
  RunConfig dc;
  double iou_sum = 0, iou_min = 1;
  int n = 0;
  for (const auto& r : clean.index.records) {
    const InstanceData d = load_instance(clean.cache, r, dc);
    const PixelSets q = discover_ego_pixels(d.ego_affinity, d.exo_affinity, dc.gamma2);
    const Map part = clean.cache.map("mask/" + r.id + "/part");
    Map pos = Map::Zero(part.rows(), part.cols());
    for (Index p : q.positives) pos.data()[p] = 1;
    const double inter = (pos * part).sum(), uni = pos.max(part).sum();
    const double iou = uni > 0 ? inter / uni : 0;
    iou_sum += iou;
    iou_min = std::min(iou_min, iou);
    ++n;
  }
  const double iou_mean = iou_sum / n;
  const double secs = seconds_since(t0);

  const MetricTriple& bm = b.table.mean(false);
  const MetricTriple& fm = f.table.mean(true);
  const bool ok = fm.nss > bm.nss && fm.kld < bm.kld && iou_mean > 0.9 && secs < 300;
  report("end-to-end synthetic grounding", ok,
         "full+calibration KLD " + fmt(fm.kld) + " NSS " + fmt(fm.nss) + " vs classification-only KLD " +
             fmt(bm.kld) + " NSS " + fmt(bm.nss) + "; noiseless Q+ IoU mean " + fmt(iou_mean) + " min " +
             fmt(iou_min) + " over " + std::to_string(n) + " scenes; " + fmt(secs) + " s (< 300 s)");
  info("raw CAM comparison", "full objective without calibration KLD " + fmt(f.table.mean_raw.kld) + " NSS " +
                                 fmt(f.table.mean_raw.nss) + "; classification-only with calibration KLD " +
                                 fmt(b.table.mean_calibrated.kld) + " NSS " + fmt(b.table.mean_calibrated.nss));
  bool decreasing = true;
  std::string losses;
  for (std::size_t k = 0; k < f.logs.size(); ++k) {
    if (k > 0 && !(f.logs[k].mean.total < f.logs[k - 1].mean.total)) decreasing = false;
    losses += (losses.empty() ? "" : ",") + fmt(f.logs[k].mean.total);
  }
  info("full objective epoch-mean loss", std::string(decreasing ? "strictly decreasing" : "not monotone") + " [" +
                                             losses + "]");

  run(full, data, again_dir.path());
  const bool same_ckpt = slurp(full_dir / "checkpoint.bin") == slurp(again_dir / "checkpoint.bin");
  const bool same_metrics = slurp(full_dir / "metrics.jsonl") == slurp(again_dir / "metrics.jsonl");
  const bool same_logs = slurp(full_dir / "train_log.jsonl") == slurp(again_dir / "train_log.jsonl");
  report("determinism", same_ckpt && same_metrics && same_logs && !slurp(full_dir / "checkpoint.bin").empty(),
         std::string("checkpoint ") + (same_ckpt ? "identical" : "differs") + ", metric table " +
             (same_metrics ? "identical" : "differs") + ", train log " + (same_logs ? "identical" : "differs"));
}

void optional_integration() {
  const char* root = std::getenv("SELCON_AGD20K_CACHE");
  if (root == nullptr) {
    std::cout << "[SKIP] optional integration: set SELCON_AGD20K_CACHE to a data dir built by `selcon extract`"
              << std::endl;
    return;
  }
  try {
    const FeatureCache cache = FeatureCache::load(fs::path(root) / "cache");
    const DatasetIndex index = load_records(fs::path(root) / "records.json");
    RunConfig c;
    TempDir dir("acc-int");
    const TrainResult tr = train(c, cache, index, dir.path());
    const auto test = select_split(index, Split::test);
    const MetricTriple m = evaluate(tr.checkpoint.params, cache, test, c).mean(true);
    info("optional integration", "KLD " + fmt(m.kld) + " SIM " + fmt(m.sim) + " NSS " + fmt(m.nss));
  } catch (const Error& e) {
    report("optional integration", false, e.what());
  }
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void()>>> checks{
      {"gradient fidelity", gradient_fidelity},
      {"head chain gradient", head_chain_gradient},
      {"loss oracle equivalence", loss_oracles},
      {"rho oracle", rho_oracle},
      {"selection semantics", selection_semantics},
      {"prototype invariants", prototype_invariants},
      {"metric correctness", metric_correctness},
      {"calibration", calibration},
      {"end-to-end synthetic grounding", end_to_end_and_determinism},
      {"optional integration", optional_integration}};
  for (const auto& [name, fn] : checks) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(name, false, std::string("threw: ") + e.what());
    }
  }
  std::cout << (failures == 0 ? "all acceptance criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
