#pragma once

// Instance records over AGD20K-style directory trees:
//
//   <root>/<Seen|Unseen>/trainset/egocentric/<action>/<object>/<image>
//   <root>/<Seen|Unseen>/trainset/exocentric/<action>/<object>/<image>
//   <root>/<Seen|Unseen>/testset/egocentric/<action>/<object>/<image>
//   <root>/<Seen|Unseen>/testset/GT/<action>/<object>/<stem>.{pgm,png}
//
// Each training egocentric image is paired with E exocentric images of the
// same action and object, sampled without replacement from a per-record seed.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace selcon {

enum class Split { train, test };
enum class Scenario { seen, unseen };

struct InstanceRecord {
  std::string id;  // also the cache key stem
  std::string action;
  int label = 0;
  std::string object;
  Split split = Split::train;
  Scenario scenario = Scenario::seen;
  std::string ego_image;
  std::vector<std::string> exo_images;
  int exo_count = 0;
  std::string gt;  // PGM path, or a cache key starting with "gt/"
  std::uint64_t exo_seed = 0;
};

struct DatasetIndex {
  std::vector<std::string> actions;  // label order
  std::vector<InstanceRecord> records;
  int skipped_missing_exo = 0;
  int skipped_missing_gt = 0;
};

const char* to_string(Split s);
const char* to_string(Scenario s);
Scenario parse_scenario(const std::string& s);

DatasetIndex scan_dataset(const std::filesystem::path& root, Scenario scenario, int exo_per_ego,
                          std::uint64_t seed);

// Escape hatch for trees with other conventions (e.g. HICO-IIF): one record
// per line, tab separated:
//   split  action  object  ego_path  gt_path_or_-  exo_path;exo_path;...
DatasetIndex scan_mapping_file(const std::filesystem::path& file, Scenario scenario,
                               int exo_per_ego, std::uint64_t seed);

void save_records(const std::filesystem::path& path, const DatasetIndex& index);
DatasetIndex load_records(const std::filesystem::path& path);

std::vector<const InstanceRecord*> select_split(const DatasetIndex& index, Split split);

// Filesystem-safe form of an instance id.
std::string file_stem(const std::string& id);

}  // namespace selcon
