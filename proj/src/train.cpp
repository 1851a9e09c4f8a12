#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "selcon/pipeline.hpp"
#include "selcon/random.hpp"

namespace selcon {

PromptEmbedding load_prompt(const FeatureCache& cache, const std::string& action) {
  return make_prompt(action, cache.vector(cache_key_text(action, "action")),
                     cache.vector(cache_key_text(action, "entity")));
}

InstanceData load_instance(const FeatureCache& cache, const InstanceRecord& record,
                           const RunConfig& config) {
  if (record.exo_count < 1) throw InputError("record " + record.id + " has no exocentric partners");
  InstanceData d;
  d.record = &record;
  d.prompt = load_prompt(cache, record.action);
  d.ego_dino = cache.features(cache_key_ego(record.id, "dino"));
  d.ego_affinity = ego_object_affinity(cache.features(cache_key_ego(record.id, "clip")), d.prompt, record.id);
  const ExoAffinityOptions exo_options{config.affinity_window, config.normalize_before_product};
  for (int e = 0; e < record.exo_count; ++e) {
    d.exo_dino.push_back(cache.features(cache_key_exo(record.id, e, "dino")));
    d.exo_affinity.push_back(
        exo_object_affinity(cache.features(cache_key_exo(record.id, e, "clip")), d.prompt, exo_options, record.id));
    d.exo_affinity_maps.push_back(d.exo_affinity.back().map);
  }
  d.reference = config.reference_source == ReferenceSource::dino_attention
                    ? reference_from_attention(cache.map(cache_key_ego(record.id, "attn")))
                    : reference_from_clip_affinity(d.ego_affinity, config.clip_reference_threshold);
  d.pixel_sets = subsample(discover_ego_pixels(d.ego_affinity, d.exo_affinity, config.gamma2),
                           static_cast<std::size_t>(config.pixel_sample_limit),
                           derive_seed(config.seed, record.id + "/pixels"));
  return d;
}

ExoDiscoveryParams exo_discovery_params(const RunConfig& config, const InstanceRecord& record) {
  ExoDiscoveryParams p;
  p.gamma1 = config.gamma1;
  p.alpha = config.alpha;
  p.combine = config.mask_combine;
  p.kmeans.clusters = config.clusters;
  p.kmeans.seed = derive_seed(config.seed, record.id + "/kmeans");
  return p;
}

BatchResult compute_batch(const HeadParams& params, std::span<const InstanceData* const> batch,
                          const RunConfig& config) {
  if (batch.empty()) throw InputError("empty batch");
  const std::size_t n = batch.size();

  struct Views {
    std::vector<ForwardOutputs> out;
    std::vector<ForwardCache> cache;
  };
  std::vector<Views> views(n);
  std::vector<PrototypePack> packs;
  std::vector<std::size_t> pack_owner;
  std::vector<PixelLossResult> pixel(n);
  LossCounts counts;
  counts.instances = static_cast<int>(n);
  Real ce = 0;
  std::vector<std::vector<Vec>> ce_grads(n);

  for (std::size_t b = 0; b < n; ++b) {
    const InstanceData& d = *batch[b];
    const int label = d.record->label;
    const std::size_t num_views = 1 + d.exo_dino.size();
    views[b].out.reserve(num_views);
    views[b].cache.resize(num_views);
    for (std::size_t v = 0; v < num_views; ++v) {
      const Features& f = v == 0 ? d.ego_dino : d.exo_dino[v - 1];
      views[b].out.push_back(forward(f, label, params, &views[b].cache[v]));
    }

    std::vector<Vec> logits;
    for (const auto& o : views[b].out) logits.push_back(o.logits);
    auto cls = classification_loss(logits, label);
    ce += cls.value / Real(n);
    ce_grads[b] = std::move(cls.grads);

    if (config.lambda1 > 0) {
      std::vector<Map> cams;
      for (const auto& o : views[b].out) cams.push_back(o.cam_target);
      const std::span<const Map> exo_cams(cams.data() + 1, cams.size() - 1);
      const PartSelection selection =
          discover_exo_part(exo_cams, d.exo_affinity_maps, d.exo_dino, d.ego_dino, d.reference,
                            exo_discovery_params(config, *d.record));
      std::vector<Features> exo_proto;
      for (std::size_t v = 1; v < num_views; ++v) exo_proto.push_back(views[b].out[v].proto);
      PackInputs in;
      in.ego = &views[b].out[0].proto;
      in.exo = exo_proto;
      in.ego_affinity = &d.ego_affinity.map;
      in.exo_affinity = d.exo_affinity_maps;
      in.cams = cams;
      in.label = label;
      if (auto pack = build_pack(in, selection, config.beta)) {
        counts.part_level_proto += pack->reliable ? 1 : 0;
        packs.push_back(std::move(*pack));
        pack_owner.push_back(b);
      }
    }

    if (d.pixel_sets.mode == PixelMode::part_level) ++counts.part_level_pixel;
    if (config.lambda2 > 0) {
      if (d.pixel_sets.usable()) {
        pixel[b] = pixel_loss(views[b].out[0].pixel, d.pixel_sets, config.tau);
      } else {
        ++counts.pixel_skipped;
      }
    }
  }

  Real proto_value = 0;
  ProtoLossResult proto;
  if (!packs.empty()) {
    proto = proto_loss(packs, config.tau);
    proto_value = proto.value;
    counts.proto = proto.contributing;
  }
  const Real proto_scale = config.proto_mean_reduction ? Real(1) : Real(packs.size());

  Real pix_value = 0;
  for (const auto& p : pixel) {
    if (p.contributed) {
      pix_value += p.value;
      ++counts.pixel;
    }
  }
  if (counts.pixel > 0) pix_value /= Real(counts.pixel);

  BatchResult result;
  result.report = total_loss(ce, proto_scale * proto_value, pix_value, config.lambda1, config.lambda2, counts);
  result.grads = HeadParams::zeros_like(params);

  std::vector<std::optional<PackBackprop>> proto_grads(n);
  for (std::size_t k = 0; k < packs.size(); ++k) {
    const std::size_t b = pack_owner[k];
    std::vector<const Features*> feats;
    for (const auto& o : views[b].out) feats.push_back(&o.proto);
    PackBackprop bp = backprop_pack(packs[k], proto.grads[k], feats);
    for (auto& g : bp.features) g *= config.lambda1 * proto_scale;
    for (auto& g : bp.cams) g *= config.lambda1 * proto_scale;
    proto_grads[b] = std::move(bp);
  }
  const RowMatrix<Real> none;
  const Map no_cam;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t v = 0; v < views[b].out.size(); ++v) {
      const auto& bp = proto_grads[b];
      const RowMatrix<Real>& gp = bp ? bp->features[v] : none;
      const Map& gc = bp && !config.detach_cam ? bp->cams[v] : no_cam;
      RowMatrix<Real> gx;
      if (v == 0 && pixel[b].contributed) gx = pixel[b].grad * (config.lambda2 / Real(counts.pixel));
      backward(params, views[b].cache[v], gp, gx, ce_grads[b][v] / Real(n), result.grads, gc);
    }
  }
  return result;
}

nlohmann::ordered_json to_json(const EpochLog& log) {
  nlohmann::ordered_json j;
  j["epoch"] = log.epoch;
  j["steps"] = log.steps;
  j["loss"] = log.mean.total;
  j["ce"] = log.mean.ce;
  j["proto"] = log.mean.proto;
  j["pix"] = log.mean.pix;
  j["instances"] = log.instances;
  j["part_level_proto"] = log.part_level_proto;
  j["part_level_pixel"] = log.part_level_pixel;
  if (log.validation) {
    j["val_kld"] = log.validation->kld;
    j["val_sim"] = log.validation->sim;
    j["val_nss"] = log.validation->nss;
  }
  return j;
}

TrainResult train(const RunConfig& config, const FeatureCache& cache, const DatasetIndex& index,
                  const std::optional<std::filesystem::path>& out_dir,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  validate(config);
  const auto train_records = select_split(index, Split::train);
  if (train_records.empty()) throw InputError("no training records");

  std::vector<InstanceData> instances;
  instances.reserve(train_records.size());
  for (const auto* r : train_records) instances.push_back(load_instance(cache, *r, config));

  const auto test_records = select_split(index, Split::test);
  const std::vector<const InstanceRecord*> validation(
      test_records.begin(),
      test_records.begin() + std::min<std::size_t>(test_records.size(), config.validation_slice));

  const Index channels = instances.front().ego_dino.channels();
  Checkpoint ckpt;
  ckpt.params = init_params(derive_seed(config.seed, "init"), channels, config.projection_dim,
                            static_cast<Index>(index.actions.size()));
  ckpt.velocity = HeadParams::zeros_like(ckpt.params);
  ckpt.config_hash = fnv1a(std::to_string(config_hash(config)) + cache.hash_hex());
  std::mt19937_64 rng(derive_seed(config.seed, "batches"));
  const SgdOptions sgd{config.lr, config.weight_decay, config.momentum};

  std::ofstream log_stream;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    save_config(config, *out_dir / "effective_config.json");
    log_stream.open(*out_dir / "train_log.jsonl", std::ios::trunc);
  }

  auto dump_failure = [&](const std::string& why) {
    if (out_dir) {
      std::ostringstream os;
      os << rng;
      ckpt.rng_state = os.str();
      save_checkpoint(ckpt, *out_dir / "failure_state.bin");
    }
    throw NumericError(why);
  };

  TrainResult result;
  std::vector<std::size_t> order(instances.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.max_steps > 0 && ckpt.step >= static_cast<std::uint64_t>(config.max_steps)) break;
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      if (config.max_steps > 0 && ckpt.step >= static_cast<std::uint64_t>(config.max_steps)) break;
      std::vector<const InstanceData*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + config.batch_size); ++k) {
        batch.push_back(&instances[order[k]]);
      }
      BatchResult br;
      try {
        br = compute_batch(ckpt.params, batch, config);
        if (!std::isfinite(br.report.total)) throw NumericError("non-finite loss");
        sgd_step(ckpt.params, br.grads, ckpt.velocity, sgd);
      } catch (const NumericError& e) {
        dump_failure(std::string(e.what()) + " at step " + std::to_string(ckpt.step));
      }
      ++ckpt.step;
      ++log.steps;
      log.mean.ce += br.report.ce;
      log.mean.proto += br.report.proto;
      log.mean.pix += br.report.pix;
      log.mean.total += br.report.total;
      log.part_level_proto += br.report.counts.part_level_proto;
      log.part_level_pixel += br.report.counts.part_level_pixel;
      log.instances += br.report.counts.instances;
    }
    if (log.steps == 0) break;
    log.mean.ce /= log.steps;
    log.mean.proto /= log.steps;
    log.mean.pix /= log.steps;
    log.mean.total /= log.steps;
    if (!validation.empty()) {
      RunConfig quiet = config;
      log.validation = evaluate(ckpt.params, cache, validation, quiet).mean(config.calibrate);
    }
    if (log_stream) log_stream << to_json(log).dump() << "\n" << std::flush;
    if (on_epoch) on_epoch(log);
    result.logs.push_back(log);
  }
  if (result.logs.empty()) throw InputError("training ran zero steps");

  std::ostringstream os;
  os << rng;
  ckpt.rng_state = os.str();
  if (out_dir) save_checkpoint(ckpt, *out_dir / "checkpoint.bin");
  result.checkpoint = std::move(ckpt);
  return result;
}

}  // namespace selcon
