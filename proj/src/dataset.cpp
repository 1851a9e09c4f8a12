#include "selcon/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "selcon/errors.hpp"
#include "selcon/random.hpp"

namespace fs = std::filesystem;

namespace selcon {

namespace {

bool is_image(const fs::path& p) {
  static const std::set<std::string> exts = {".jpg", ".jpeg", ".png", ".pgm", ".ppm", ".bmp"};
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return exts.count(e) > 0;
}

std::vector<fs::path> sorted_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) {
      out.push_back(entry.path());
    } else if (is_image(entry.path())) {
      throw InputError("malformed dataset tree: image " + entry.path().string() +
                       " where an action/object directory was expected");
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> sorted_images(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> sample_exo(std::vector<std::string> pool, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(static_cast<std::size_t>(count));
  return pool;
}

// Assigns labels from the sorted training actions and validates scenario rules.
void finalize(DatasetIndex& index, Scenario scenario) {
  std::set<std::string> actions;
  for (const auto& r : index.records) actions.insert(r.action);
  index.actions.assign(actions.begin(), actions.end());
  for (auto& r : index.records) {
    r.label = static_cast<int>(std::lower_bound(index.actions.begin(), index.actions.end(), r.action) -
                               index.actions.begin());
  }
  std::sort(index.records.begin(), index.records.end(),
            [](const InstanceRecord& a, const InstanceRecord& b) { return a.id < b.id; });
  if (scenario == Scenario::unseen) {
    std::set<std::string> train_objects, test_objects;
    for (const auto& r : index.records) {
      (r.split == Split::train ? train_objects : test_objects).insert(r.object);
    }
    for (const auto& o : test_objects) {
      if (train_objects.count(o)) {
        throw InputError("unseen scenario: object class '" + o + "' appears in both splits");
      }
    }
  }
}

void add_record(DatasetIndex& index, InstanceRecord r, const std::vector<std::string>& exo_pool,
                int exo_per_ego, std::uint64_t seed) {
  if (r.split == Split::train) {
    if (static_cast<int>(exo_pool.size()) < exo_per_ego) {
      ++index.skipped_missing_exo;
      return;
    }
    r.exo_seed = derive_seed(seed, r.id);
    r.exo_images = sample_exo(exo_pool, exo_per_ego, r.exo_seed);
    r.exo_count = exo_per_ego;
  } else if (r.gt.empty()) {
    ++index.skipped_missing_gt;
    return;
  }
  index.records.push_back(std::move(r));
}

}  // namespace

const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }
const char* to_string(Scenario s) { return s == Scenario::seen ? "seen" : "unseen"; }

Scenario parse_scenario(const std::string& s) {
  if (s == "seen" || s == "Seen") return Scenario::seen;
  if (s == "unseen" || s == "Unseen") return Scenario::unseen;
  throw InputError("unknown scenario '" + s + "'");
}

DatasetIndex scan_dataset(const fs::path& root, Scenario scenario, int exo_per_ego, std::uint64_t seed) {
  if (exo_per_ego < 1) throw InputError("E must be positive");
  if (!fs::is_directory(root)) throw InputError("dataset root " + root.string() + " is not a directory");
  DatasetIndex index;
  const fs::path base = root / (scenario == Scenario::seen ? "Seen" : "Unseen");
  if (!fs::exists(base)) {
    if (fs::is_empty(root)) return index;
    throw InputError("dataset root " + root.string() + " has no " + base.filename().string() + " directory");
  }
  for (const auto* split_dir : {"trainset", "testset"}) {
    const fs::path ego_root = base / split_dir / "egocentric";
    if (!fs::is_directory(ego_root)) throw InputError("missing " + ego_root.string());
  }

  const fs::path train = base / "trainset";
  for (const auto& action_dir : sorted_dirs(train / "egocentric")) {
    for (const auto& object_dir : sorted_dirs(action_dir)) {
      const std::string action = action_dir.filename().string();
      const std::string object = object_dir.filename().string();
      std::vector<std::string> pool;
      for (const auto& p : sorted_images(train / "exocentric" / action / object)) pool.push_back(p.string());
      for (const auto& img : sorted_images(object_dir)) {
        InstanceRecord r;
        r.id = "train/" + action + "/" + object + "/" + img.stem().string();
        r.action = action;
        r.object = object;
        r.split = Split::train;
        r.scenario = scenario;
        r.ego_image = img.string();
        add_record(index, std::move(r), pool, exo_per_ego, seed);
      }
    }
  }

  const fs::path test = base / "testset";
  for (const auto& action_dir : sorted_dirs(test / "egocentric")) {
    for (const auto& object_dir : sorted_dirs(action_dir)) {
      const std::string action = action_dir.filename().string();
      const std::string object = object_dir.filename().string();
      for (const auto& img : sorted_images(object_dir)) {
        InstanceRecord r;
        r.id = "test/" + action + "/" + object + "/" + img.stem().string();
        r.action = action;
        r.object = object;
        r.split = Split::test;
        r.scenario = scenario;
        r.ego_image = img.string();
        for (const auto* ext : {".pgm", ".png"}) {
          const fs::path gt = test / "GT" / action / object / (img.stem().string() + ext);
          if (fs::exists(gt)) {
            r.gt = gt.string();
            break;
          }
        }
        add_record(index, std::move(r), {}, exo_per_ego, seed);
      }
    }
  }
  finalize(index, scenario);
  if (index.skipped_missing_exo > 0 || index.skipped_missing_gt > 0) {
    std::cerr << "warning: skipped " << index.skipped_missing_exo << " records without " << exo_per_ego
              << " exocentric partners and " << index.skipped_missing_gt << " test records without GT\n";
  }
  return index;
}

DatasetIndex scan_mapping_file(const fs::path& file, Scenario scenario, int exo_per_ego,
                               std::uint64_t seed) {
  std::ifstream is(file);
  if (!is) throw InputError("cannot open mapping file " + file.string());
  DatasetIndex index;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() < 5) throw InputError(file.string() + ":" + std::to_string(line_no) + ": expected >= 5 fields");
    InstanceRecord r;
    if (fields[0] != "train" && fields[0] != "test") {
      throw InputError(file.string() + ":" + std::to_string(line_no) + ": split must be train or test");
    }
    r.split = fields[0] == "train" ? Split::train : Split::test;
    r.action = fields[1];
    r.object = fields[2];
    r.ego_image = fields[3];
    r.gt = fields[4] == "-" ? "" : fields[4];
    r.scenario = scenario;
    r.id = fields[0] + "/" + r.action + "/" + r.object + "/" + fs::path(r.ego_image).stem().string();
    std::vector<std::string> pool;
    if (fields.size() > 5) {
      std::stringstream es(fields[5]);
      while (std::getline(es, f, ';')) {
        if (!f.empty()) pool.push_back(f);
      }
    }
    add_record(index, std::move(r), pool, exo_per_ego, seed);
  }
  finalize(index, scenario);
  return index;
}

void save_records(const fs::path& path, const DatasetIndex& index) {
  nlohmann::ordered_json j;
  j["actions"] = index.actions;
  j["records"] = nlohmann::ordered_json::array();
  for (const auto& r : index.records) {
    j["records"].push_back({{"id", r.id},
                            {"action", r.action},
                            {"label", r.label},
                            {"object", r.object},
                            {"split", to_string(r.split)},
                            {"scenario", to_string(r.scenario)},
                            {"ego_image", r.ego_image},
                            {"exo_images", r.exo_images},
                            {"exo_count", r.exo_count},
                            {"exo_seed", r.exo_seed},
                            {"gt", r.gt}});
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(1) << "\n";
}

DatasetIndex load_records(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open records file " + path.string());
  DatasetIndex index;
  try {
    nlohmann::json j;
    is >> j;
    index.actions = j.at("actions").get<std::vector<std::string>>();
    for (const auto& jr : j.at("records")) {
      InstanceRecord r;
      r.id = jr.at("id").get<std::string>();
      r.action = jr.at("action").get<std::string>();
      r.label = jr.at("label").get<int>();
      r.object = jr.value("object", "");
      r.split = jr.at("split").get<std::string>() == "train" ? Split::train : Split::test;
      r.scenario = parse_scenario(jr.value("scenario", "seen"));
      r.ego_image = jr.value("ego_image", "");
      r.exo_images = jr.value("exo_images", std::vector<std::string>{});
      r.exo_count = jr.value("exo_count", 0);
      r.exo_seed = jr.value("exo_seed", std::uint64_t{0});
      r.gt = jr.value("gt", "");
      if (r.label < 0 || r.label >= static_cast<int>(index.actions.size())) {
        throw InputError("record " + r.id + " has an out-of-range label");
      }
      index.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed records file " + path.string() + ": " + e.what());
  }
  return index;
}

std::vector<const InstanceRecord*> select_split(const DatasetIndex& index, Split split) {
  std::vector<const InstanceRecord*> out;
  for (const auto& r : index.records) {
    if (r.split == split) out.push_back(&r);
  }
  return out;
}

std::string file_stem(const std::string& id) {
  std::string s = id;
  std::replace(s.begin(), s.end(), '/', '_');
  return s;
}

}  // namespace selcon
