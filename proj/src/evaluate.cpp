#include <fstream>

#include "selcon/image.hpp"
#include "selcon/pipeline.hpp"

namespace selcon {

namespace {

MetricTriple score(const Map& pred, const Map& gt, const MetricConstants& c, bool& degenerate) {
  MetricTriple t;
  t.kld = kld(pred, gt, c);
  if (pred.sum() > 0) {
    t.sim = sim(pred, gt);
  } else {
    degenerate = true;
  }
  t.nss = nss(pred, gt, c);
  return t;
}

void accumulate(MetricTriple& acc, const MetricTriple& t) {
  acc.kld += t.kld;
  acc.sim += t.sim;
  acc.nss += t.nss;
}

void divide(MetricTriple& acc, double n) {
  acc.kld /= n;
  acc.sim /= n;
  acc.nss /= n;
}

nlohmann::ordered_json metric_json(const std::string& id, const std::string& action, const MetricTriple& cal,
                                   const MetricTriple& raw) {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["action"] = action;
  j["kld"] = cal.kld;
  j["sim"] = cal.sim;
  j["nss"] = cal.nss;
  j["kld_raw"] = raw.kld;
  j["sim_raw"] = raw.sim;
  j["nss_raw"] = raw.nss;
  return j;
}

}  // namespace

Map load_ground_truth(const FeatureCache& cache, const InstanceRecord& record, Index height, Index width) {
  Map gt;
  if (record.gt.rfind("gt/", 0) == 0) {
    gt = cache.map(record.gt);
  } else {
    gt = read_pgm(record.gt);
  }
  if (gt.rows() != height || gt.cols() != width) gt = resize_bilinear(gt, height, width);
  return gt;
}

MetricsTable evaluate(const HeadParams& params, const FeatureCache& cache,
                      std::span<const InstanceRecord* const> records, const RunConfig& config,
                      const std::optional<std::filesystem::path>& heatmap_dir) {
  MetricsTable table;
  const MetricConstants constants = config.metric_constants();
  if (heatmap_dir) std::filesystem::create_directories(*heatmap_dir);
  for (const InstanceRecord* r : records) {
    const bool has_gt = r->gt.rfind("gt/", 0) == 0 ? cache.contains(r->gt)
                                                   : !r->gt.empty() && std::filesystem::exists(r->gt);
    if (!has_gt) {
      ++table.skipped_missing_gt;
      continue;
    }
    const Features ego = cache.features(cache_key_ego(r->id, "dino"));
    const ForwardOutputs out = forward(ego, r->label, params);
    const Map gt = load_ground_truth(cache, *r, ego.height(), ego.width());
    const PromptEmbedding prompt = load_prompt(cache, r->action);
    const ObjectAffinity affinity = ego_object_affinity(cache.features(cache_key_ego(r->id, "clip")), prompt, r->id);
    const Map calibrated = calibrate(out.cam_target, affinity.map, config.gamma2);

    MetricRow row;
    row.id = r->id;
    row.action = r->action;
    bool degenerate = false;
    row.raw = score(out.cam_target, gt, constants, degenerate);
    row.calibrated = score(calibrated, gt, constants, degenerate);
    if (degenerate) ++table.degenerate_predictions;
    accumulate(table.mean_raw, row.raw);
    accumulate(table.mean_calibrated, row.calibrated);
    if (heatmap_dir) {
      write_pgm(*heatmap_dir / (file_stem(r->id) + ".pgm"), config.calibrate ? calibrated : out.cam_target);
    }
    table.rows.push_back(std::move(row));
  }
  if (!table.rows.empty()) {
    divide(table.mean_raw, double(table.rows.size()));
    divide(table.mean_calibrated, double(table.rows.size()));
  }
  std::sort(table.rows.begin(), table.rows.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return table;
}

void write_metrics(const MetricsTable& table, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot write " + path.string());
  for (const auto& row : table.rows) os << metric_json(row.id, row.action, row.calibrated, row.raw).dump() << "\n";
  auto mean = metric_json("__mean__", "", table.mean_calibrated, table.mean_raw);
  mean["count"] = table.rows.size();
  mean["skipped_missing_gt"] = table.skipped_missing_gt;
  mean["degenerate_predictions"] = table.degenerate_predictions;
  os << mean.dump() << "\n";
}

std::vector<DiscoveryRecord> discover(const HeadParams* params, const FeatureCache& cache,
                                      std::span<const InstanceRecord* const> records,
                                      const RunConfig& config,
                                      const std::optional<std::filesystem::path>& out_dir) {
  std::vector<DiscoveryRecord> result;
  for (const InstanceRecord* r : records) {
    if (r->exo_count < 1) continue;
    const InstanceData d = load_instance(cache, *r, config);
    std::vector<Map> cams;
    for (const auto& f : d.exo_dino) {
      cams.push_back(params ? forward(f, r->label, *params).cam_target
                            : Map::Ones(f.height(), f.width()).eval());
    }
    const PartSelection sel = discover_exo_part(cams, d.exo_affinity_maps, d.exo_dino, d.ego_dino, d.reference,
                                                exo_discovery_params(config, *r));
    const PixelSets full = discover_ego_pixels(d.ego_affinity, d.exo_affinity, config.gamma2);
    DiscoveryRecord rec;
    rec.id = r->id;
    rec.reliable = sel.reliable;
    rec.piou_scores = sel.piou_scores;
    rec.mode = full.mode;
    rec.rho = full.rho;
    rec.positives = full.positives.size();
    rec.positive_mask = Map::Zero(d.ego_dino.height(), d.ego_dino.width());
    for (Index p : full.positives) rec.positive_mask.data()[p] = 1;

    if (out_dir) {
      const auto dir = *out_dir / file_stem(r->id);
      std::filesystem::create_directories(dir);
      write_pgm(dir / "affinity_ego.pgm", d.ego_affinity.map);
      for (std::size_t e = 0; e < d.exo_affinity_maps.size(); ++e) {
        write_pgm(dir / ("affinity_exo_" + std::to_string(e) + ".pgm"), d.exo_affinity_maps[e]);
      }
      if (sel.reliable) {
        if (sel.part_map_ego) write_pgm(dir / "part_ego.pgm", *sel.part_map_ego);
        for (std::size_t e = 0; e < sel.part_map_exo.size(); ++e) {
          write_pgm(dir / ("part_exo_" + std::to_string(e) + ".pgm"), sel.part_map_exo[e]);
        }
      } else {
        std::ofstream(dir / "unreliable") << "max pIoU did not exceed alpha\n";
      }
      write_pgm(dir / "positives.pgm", rec.positive_mask);
      nlohmann::ordered_json j;
      j["id"] = r->id;
      j["reliable"] = rec.reliable;
      j["piou"] = rec.piou_scores;
      j["pixel_mode"] = rec.mode == PixelMode::part_level ? "part_level" : "object_level";
      if (rec.rho) j["rho"] = *rec.rho;
      j["positives"] = rec.positives;
      std::ofstream(dir / "summary.json") << j.dump(1) << "\n";
    }
    result.push_back(std::move(rec));
  }
  return result;
}

}  // namespace selcon
