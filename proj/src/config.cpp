#include "selcon/config.hpp"

#include <fstream>

#include "selcon/random.hpp"

namespace selcon {

namespace {

const char* to_string(ReferenceSource r) {
  return r == ReferenceSource::dino_attention ? "dino_attention" : "clip_affinity";
}

ReferenceSource parse_reference(const std::string& s) {
  if (s == "dino_attention") return ReferenceSource::dino_attention;
  if (s == "clip_affinity") return ReferenceSource::clip_affinity;
  throw ConfigError("reference_source must be dino_attention or clip_affinity, got '" + s + "'");
}

const char* to_string(MaskCombine m) { return m == MaskCombine::product ? "product" : "sum"; }

MaskCombine parse_combine(const std::string& s) {
  if (s == "product") return MaskCombine::product;
  if (s == "sum") return MaskCombine::sum;
  throw ConfigError("mask_combine must be product or sum, got '" + s + "'");
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["alpha"] = c.alpha;
  j["gamma1"] = c.gamma1;
  j["gamma2"] = c.gamma2;
  j["beta"] = c.beta;
  j["tau"] = c.tau;
  j["lambda1"] = c.lambda1;
  j["lambda2"] = c.lambda2;
  j["exo_per_ego"] = c.exo_per_ego;
  j["clusters"] = c.clusters;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["momentum"] = c.momentum;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["max_steps"] = c.max_steps;
  j["seed"] = c.seed;
  j["projection_dim"] = c.projection_dim;
  j["reference_source"] = to_string(c.reference_source);
  j["clip_reference_threshold"] = c.clip_reference_threshold;
  j["kld_epsilon"] = c.kld_epsilon;
  j["fixation_threshold"] = c.fixation_threshold;
  j["affinity_window"] = c.affinity_window;
  j["normalize_before_product"] = c.normalize_before_product;
  j["mask_combine"] = to_string(c.mask_combine);
  j["pixel_sample_limit"] = c.pixel_sample_limit;
  j["proto_mean_reduction"] = c.proto_mean_reduction;
  j["detach_cam"] = c.detach_cam;
  j["calibrate"] = c.calibrate;
  j["validation_slice"] = c.validation_slice;
  j["scenario"] = to_string(c.scenario);
  j["data_dir"] = c.data_dir;
  j["out_dir"] = c.out_dir;
  return j;
}

RunConfig config_from_json(const nlohmann::json& j, RunConfig c) {
  if (!j.is_object()) throw ConfigError("config must be a flat key-value object");
  const auto known = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    if (value.is_object() || value.is_array()) throw ConfigError("config key '" + key + "' must be a scalar");
  }
  read(j, "alpha", c.alpha);
  read(j, "gamma1", c.gamma1);
  read(j, "gamma2", c.gamma2);
  read(j, "beta", c.beta);
  read(j, "tau", c.tau);
  read(j, "lambda1", c.lambda1);
  read(j, "lambda2", c.lambda2);
  read(j, "exo_per_ego", c.exo_per_ego);
  read(j, "clusters", c.clusters);
  read(j, "lr", c.lr);
  read(j, "weight_decay", c.weight_decay);
  read(j, "momentum", c.momentum);
  read(j, "batch_size", c.batch_size);
  read(j, "epochs", c.epochs);
  read(j, "max_steps", c.max_steps);
  read(j, "seed", c.seed);
  read(j, "projection_dim", c.projection_dim);
  if (j.contains("reference_source")) {
    std::string s;
    read(j, "reference_source", s);
    c.reference_source = parse_reference(s);
  }
  read(j, "clip_reference_threshold", c.clip_reference_threshold);
  read(j, "kld_epsilon", c.kld_epsilon);
  read(j, "fixation_threshold", c.fixation_threshold);
  read(j, "affinity_window", c.affinity_window);
  read(j, "normalize_before_product", c.normalize_before_product);
  if (j.contains("mask_combine")) {
    std::string s;
    read(j, "mask_combine", s);
    c.mask_combine = parse_combine(s);
  }
  read(j, "pixel_sample_limit", c.pixel_sample_limit);
  read(j, "proto_mean_reduction", c.proto_mean_reduction);
  read(j, "detach_cam", c.detach_cam);
  read(j, "calibrate", c.calibrate);
  read(j, "validation_slice", c.validation_slice);
  if (j.contains("scenario")) {
    std::string s;
    read(j, "scenario", s);
    try {
      c.scenario = parse_scenario(s);
    } catch (const InputError& e) {
      throw ConfigError(e.what());
    }
  }
  read(j, "data_dir", c.data_dir);
  read(j, "out_dir", c.out_dir);
  return c;
}

void apply_override(RunConfig& c, const std::string& key, const std::string& value) {
  const auto current = to_json(c);
  if (!current.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  nlohmann::json patch;
  const auto& slot = current.at(key);
  try {
    if (slot.is_string()) {
      patch[key] = value;
    } else if (slot.is_boolean()) {
      if (value != "true" && value != "false" && value != "1" && value != "0") {
        throw ConfigError("config key '" + key + "' expects true/false");
      }
      patch[key] = value == "true" || value == "1";
    } else if (slot.is_number_unsigned()) {
      patch[key] = std::stoull(value);
    } else if (slot.is_number_integer()) {
      patch[key] = std::stoll(value);
    } else {
      patch[key] = std::stod(value);
    }
  } catch (const std::logic_error&) {
    throw ConfigError("cannot parse '" + value + "' for config key '" + key + "'");
  }
  c = config_from_json(patch, c);
}

void validate(const RunConfig& c) {
  auto unit_open = [](double v, const char* name) {
    if (!(v > 0 && v < 1)) throw ConfigError(std::string(name) + " must lie in (0, 1)");
  };
  if (!(c.alpha >= 0 && c.alpha <= 1)) throw ConfigError("alpha must lie in [0, 1]");
  unit_open(c.gamma1, "gamma1");
  unit_open(c.gamma2, "gamma2");
  unit_open(c.clip_reference_threshold, "clip_reference_threshold");
  if (!(c.tau > 0)) throw ConfigError("tau must be positive");
  if (!(c.lambda1 >= 0) || !(c.lambda2 >= 0)) throw ConfigError("loss weights must be non-negative");
  if (c.exo_per_ego < 1 || c.clusters < 1) throw ConfigError("E and K must be positive");
  if (!(c.lr > 0)) throw ConfigError("lr must be positive");
  if (!(c.weight_decay >= 0) || !(c.momentum >= 0 && c.momentum < 1)) throw ConfigError("weight_decay/momentum out of range");
  if (c.batch_size < 1 || c.epochs < 1 || c.max_steps < 0) throw ConfigError("batch_size and epochs must be positive");
  if (c.projection_dim < 1) throw ConfigError("projection_dim must be positive");
  if (c.affinity_window < 1 || c.affinity_window % 2 == 0) throw ConfigError("affinity_window must be odd");
  if (c.pixel_sample_limit < 1) throw ConfigError("pixel_sample_limit must be positive");
  if (!(c.kld_epsilon > 0) || !(c.fixation_threshold >= 0 && c.fixation_threshold < 1)) {
    throw ConfigError("metric constants out of range");
  }
  if (c.validation_slice < 0) throw ConfigError("validation_slice must be non-negative");
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return config_from_json(j, base);
}

void save_config(const RunConfig& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << to_json(c).dump(1) << "\n";
}

std::uint64_t config_hash(const RunConfig& c) {
  auto j = to_json(c);
  j.erase("data_dir");
  j.erase("out_dir");
  return fnv1a(j.dump());
}

}  // namespace selcon
