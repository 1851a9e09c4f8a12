#pragma once

// Flat run configuration. Every hyperparameter has exactly one key; the
// effective config (defaults merged with overrides) is written next to every
// run's outputs and reloads to an identical run.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "selcon/dataset.hpp"
#include "selcon/discovery_exo.hpp"
#include "selcon/metrics.hpp"

namespace selcon {

struct RunConfig {
  double alpha = 0.6;
  double gamma1 = 0.6;
  double gamma2 = 0.6;
  double beta = 1.0;
  double tau = 0.5;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  int exo_per_ego = 3;  // E
  int clusters = 3;     // K
  double lr = 1e-3;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  int batch_size = 8;
  int epochs = 15;
  int max_steps = 0;  // 0: no limit
  std::uint64_t seed = 0;
  int projection_dim = 128;
  ReferenceSource reference_source = ReferenceSource::dino_attention;
  double clip_reference_threshold = 0.75;
  double kld_epsilon = 1e-12;
  double fixation_threshold = 0.1;
  int affinity_window = 3;
  bool normalize_before_product = true;
  MaskCombine mask_combine = MaskCombine::product;
  int pixel_sample_limit = 256;
  bool proto_mean_reduction = true;
  bool detach_cam = false;  // stop the prototype loss gradient at the CAM
  bool calibrate = true;
  int validation_slice = 16;
  Scenario scenario = Scenario::seen;
  std::string data_dir;
  std::string out_dir = "runs/default";

  MetricConstants metric_constants() const { return {kld_epsilon, fixation_threshold}; }
};

// Epoch counts used for the two benchmark corpora.
inline constexpr int kEpochsAgd20k = 15;
inline constexpr int kEpochsHicoIif = 50;

nlohmann::ordered_json to_json(const RunConfig& c);
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});

// Applies one "key=value" override; the value is parsed according to the
// key's type. Unknown keys raise ConfigError.
void apply_override(RunConfig& c, const std::string& key, const std::string& value);

// Validates ranges (thresholds in (0,1), positive sizes, ...).
void validate(const RunConfig& c);

RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
void save_config(const RunConfig& c, const std::filesystem::path& path);

// Hash of everything that influences results (paths excluded).
std::uint64_t config_hash(const RunConfig& c);

}  // namespace selcon
