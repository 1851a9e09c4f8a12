#pragma once

// Orchestration: per-instance clue preparation, the training loop,
// evaluation with optional calibration, discovery dumps and grid ablations.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selcon/cache.hpp"
#include "selcon/checkpoint.hpp"
#include "selcon/config.hpp"
#include "selcon/dataset.hpp"
#include "selcon/discovery_ego.hpp"
#include "selcon/discovery_exo.hpp"
#include "selcon/heads.hpp"
#include "selcon/losses.hpp"

namespace selcon {

// Frozen inputs of one ego/exo group and the clues that do not depend on
// the trainable heads.
struct InstanceData {
  const InstanceRecord* record = nullptr;
  Features ego_dino;
  std::vector<Features> exo_dino;
  PromptEmbedding prompt;
  ObjectAffinity ego_affinity;
  std::vector<ObjectAffinity> exo_affinity;
  std::vector<Map> exo_affinity_maps;
  ReferenceMap reference;
  PixelSets pixel_sets;  // subsampled
};

PromptEmbedding load_prompt(const FeatureCache& cache, const std::string& action);

// Reads every cache entry of the record and prepares its clues.
InstanceData load_instance(const FeatureCache& cache, const InstanceRecord& record,
                           const RunConfig& config);

ExoDiscoveryParams exo_discovery_params(const RunConfig& config, const InstanceRecord& record);

struct BatchResult {
  LossReport report;
  HeadParams grads;
};

// Forward, discovery, losses and backward over one batch. Pure given params.
BatchResult compute_batch(const HeadParams& params, std::span<const InstanceData* const> batch,
                          const RunConfig& config);

struct MetricTriple {
  double kld = 0;
  double sim = 0;
  double nss = 0;
};

struct EpochLog {
  int epoch = 0;
  int steps = 0;
  LossReport mean;
  int part_level_proto = 0;  // |I| summed over the epoch
  int part_level_pixel = 0;  // |J|
  int instances = 0;
  std::optional<MetricTriple> validation;
};

nlohmann::ordered_json to_json(const EpochLog& log);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> logs;
};

// Seeded end-to-end training over the train split. With `out_dir`, writes
// effective_config.json, train_log.jsonl and checkpoint.bin there.
TrainResult train(const RunConfig& config, const FeatureCache& cache, const DatasetIndex& index,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

struct MetricRow {
  std::string id;
  std::string action;
  MetricTriple calibrated;
  MetricTriple raw;
};

struct MetricsTable {
  std::vector<MetricRow> rows;  // sorted by id
  MetricTriple mean_calibrated;
  MetricTriple mean_raw;
  int skipped_missing_gt = 0;
  int degenerate_predictions = 0;

  // Means of the column the config asked for.
  const MetricTriple& mean(bool calibrated) const { return calibrated ? mean_calibrated : mean_raw; }
};

Map load_ground_truth(const FeatureCache& cache, const InstanceRecord& record, Index height, Index width);

// Forward ego -> CAM -> (calibrate) -> metrics for every record with GT.
MetricsTable evaluate(const HeadParams& params, const FeatureCache& cache,
                      std::span<const InstanceRecord* const> records, const RunConfig& config,
                      const std::optional<std::filesystem::path>& heatmap_dir = std::nullopt);

// One JSON object per line: id, action, kld, sim, nss (calibration on),
// kld_raw, sim_raw, nss_raw, then a "__mean__" summary row.
void write_metrics(const MetricsTable& table, const std::filesystem::path& path);

struct DiscoveryRecord {
  std::string id;
  bool reliable = false;
  std::vector<Real> piou_scores;
  PixelMode mode = PixelMode::object_level;
  std::optional<Real> rho;
  std::size_t positives = 0;
  Map positive_mask;
};

// Writes object affinity, exocentric part and Q+ maps per instance as PGM
// images; unreliable instances get an "unreliable" marker instead of part
// maps. Without params the CAM is taken as uniform.
std::vector<DiscoveryRecord> discover(const HeadParams* params, const FeatureCache& cache,
                                      std::span<const InstanceRecord* const> records,
                                      const RunConfig& config,
                                      const std::optional<std::filesystem::path>& out_dir);

// key -> candidate values; "gamma" sets gamma1 and gamma2 together.
using AblationGrid = std::vector<std::pair<std::string, std::vector<std::string>>>;

// "alpha=0.5,0.6;gamma=0.5,0.6"
AblationGrid parse_grid(const std::string& text);

struct AblationRow {
  std::map<std::string, std::string> point;
  bool reference = false;
  bool ok = false;
  std::string error;
  MetricTriple metrics;
  int part_level_proto = 0;
  int part_level_pixel = 0;
  int instances = 0;
  double final_loss = 0;
};

// Train + evaluate per grid point; the default configuration is always
// present as a reference row. Failing points are recorded, not fatal.
std::vector<AblationRow> ablate(const RunConfig& base, const AblationGrid& grid,
                                const FeatureCache& cache, const DatasetIndex& index);

void write_ablation(const std::vector<AblationRow>& rows, const std::filesystem::path& path);

}  // namespace selcon
