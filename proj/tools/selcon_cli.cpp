#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "selcon/image.hpp"
#include "selcon/pipeline.hpp"
#include "selcon/synthetic.hpp"

namespace fs = std::filesystem;
using namespace selcon;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;

// Every RunConfig key becomes a flag; values are applied after --config.
struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> overrides;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "flat JSON config file");
    app->add_option("--set", overrides, "key=value override (repeatable)");
    const auto defaults = to_json(RunConfig{});
    for (const auto& [key, value] : defaults.items()) {
      std::string names = "--" + key;
      std::string dashed = key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      if (dashed != key) names += ",--" + dashed;
      std::string help = "default " + value.dump();
      if (key == "scenario") {
        app->add_option(names, values[key], help)->check(CLI::IsMember({"seen", "unseen"}));
      } else {
        app->add_option(names, values[key], help);
      }
    }
  }

  RunConfig resolve() const {
    RunConfig c = config_file.empty() ? RunConfig{} : load_config(config_file);
    for (const auto& [key, value] : values) {
      if (!value.empty()) apply_override(c, key, value);
    }
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
      apply_override(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    validate(c);
    return c;
  }
};

struct Corpus {
  FeatureCache cache;
  DatasetIndex index;
};

Corpus open_corpus(const RunConfig& c) {
  if (c.data_dir.empty()) throw InputError("--data-dir is required");
  const fs::path dir = c.data_dir;
  Corpus corpus{FeatureCache::load(dir / "cache"), load_records(dir / "records.json")};
  for (auto& r : corpus.index.records) {
    if (r.scenario != c.scenario) {
      throw InputError("records in " + dir.string() + " were built for scenario " + to_string(r.scenario));
    }
  }
  return corpus;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw InputError("split must be train or test");
}

void print_mean(const char* tag, const MetricTriple& m) {
  std::cout << tag << " kld=" << m.kld << " sim=" << m.sim << " nss=" << m.nss << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"Selective contrastive affordance grounding on cached frozen features"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "train the heads on a feature cache");
  ConfigFlags train_flags;
  train_flags.attach(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on held-out records");
  ConfigFlags eval_flags;
  eval_flags.attach(eval_cmd);
  std::string eval_ckpt, eval_split = "test";
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint (default <out-dir>/checkpoint.bin)");
  eval_cmd->add_option("--split", eval_split)->check(CLI::IsMember({"train", "test"}));

  auto* disc_cmd = app.add_subcommand("discover", "dump object, part and pixel clues as images");
  ConfigFlags disc_flags;
  disc_flags.attach(disc_cmd);
  std::string disc_ckpt, disc_split = "train";
  int disc_limit = 0;
  disc_cmd->add_option("--checkpoint", disc_ckpt, "optional checkpoint; uniform CAM without it");
  disc_cmd->add_option("--split", disc_split)->check(CLI::IsMember({"train", "test"}));
  disc_cmd->add_option("--limit", disc_limit, "dump at most N instances");

  auto* abl_cmd = app.add_subcommand("ablate", "train + evaluate over a parameter grid");
  ConfigFlags abl_flags;
  abl_flags.attach(abl_cmd);
  std::string grid_text;
  abl_cmd->add_option("--grid", grid_text, "e.g. \"alpha=0.5,0.6;gamma=0.5,0.6\"")->required();

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
  SyntheticSpec spec;
  std::string synth_out = "data/synthetic";
  synth_cmd->add_option("--out-dir,--out_dir", synth_out);
  synth_cmd->add_option("--seed", spec.seed);
  synth_cmd->add_option("--scenes", spec.scenes);
  synth_cmd->add_option("--classes", spec.classes);
  synth_cmd->add_option("--exo-per-scene,--exo_per_ego", spec.exo_per_scene);
  synth_cmd->add_option("--height", spec.height);
  synth_cmd->add_option("--width", spec.width);
  synth_cmd->add_option("--dino-dim", spec.dino_dim);
  synth_cmd->add_option("--clip-dim", spec.clip_dim);
  synth_cmd->add_option("--noise", spec.noise);
  synth_cmd->add_option("--occlusion", spec.occlusion);
  synth_cmd->add_option("--holdout", spec.holdout_fraction);
  std::string synth_scenario = "seen";
  synth_cmd->add_option("--scenario", synth_scenario)->check(CLI::IsMember({"seen"}));

  auto* extract_cmd = app.add_subcommand("extract", "index a dataset tree and build its feature cache (optional tool)");
  std::string ex_root, ex_mapping, ex_out, ex_backend = "models", ex_python = "python3", ex_script;
  std::string ex_scenario = "seen";
  int ex_exo = 3;
  std::uint64_t ex_seed = 0;
  extract_cmd->add_option("--dataset-root", ex_root, "AGD20K-style root");
  extract_cmd->add_option("--mapping-file", ex_mapping, "tab-separated record list instead of a tree");
  extract_cmd->add_option("--out-dir,--data-dir", ex_out, "output data dir (records.json + cache/)")->required();
  extract_cmd->add_option("--scenario", ex_scenario)->check(CLI::IsMember({"seen", "unseen"}));
  extract_cmd->add_option("--exo-per-ego,--exo_per_ego", ex_exo);
  extract_cmd->add_option("--seed", ex_seed);
  extract_cmd->add_option("--backend", ex_backend)->check(CLI::IsMember({"models", "random"}));
  extract_cmd->add_option("--python", ex_python);
  extract_cmd->add_option("--script", ex_script, "extraction script path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  if (*train_cmd) {
    const RunConfig c = train_flags.resolve();
    const Corpus corpus = open_corpus(c);
    const fs::path out = c.out_dir;
    const auto result = train(c, corpus.cache, corpus.index, out, [](const EpochLog& log) {
      std::cout << to_json(log).dump() << std::endl;
    });
    const auto test = select_split(corpus.index, Split::test);
    const MetricsTable table = evaluate(result.checkpoint.params, corpus.cache, test, c, out / "heatmaps");
    write_metrics(table, out / "metrics.jsonl");
    print_mean("calibrated", table.mean_calibrated);
    print_mean("raw", table.mean_raw);
    std::cout << "wrote " << (out / "checkpoint.bin").string() << "\n";
  } else if (*eval_cmd) {
    const RunConfig c = eval_flags.resolve();
    const Corpus corpus = open_corpus(c);
    const fs::path out = c.out_dir;
    const fs::path ckpt_path = eval_ckpt.empty() ? out / "checkpoint.bin" : fs::path(eval_ckpt);
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const auto records = select_split(corpus.index, parse_split(eval_split));
    const MetricsTable table = evaluate(ckpt.params, corpus.cache, records, c, out / "heatmaps");
    save_config(c, out / "effective_config.json");
    write_metrics(table, out / "metrics.jsonl");
    print_mean("calibrated", table.mean_calibrated);
    print_mean("raw", table.mean_raw);
    if (table.skipped_missing_gt > 0) std::cerr << "skipped " << table.skipped_missing_gt << " records without gt\n";
  } else if (*disc_cmd) {
    const RunConfig c = disc_flags.resolve();
    const Corpus corpus = open_corpus(c);
    std::optional<Checkpoint> ckpt;
    if (!disc_ckpt.empty()) ckpt = load_checkpoint(disc_ckpt);
    auto records = select_split(corpus.index, parse_split(disc_split));
    if (disc_limit > 0 && records.size() > static_cast<std::size_t>(disc_limit)) records.resize(disc_limit);
    const fs::path out = fs::path(c.out_dir) / "discover";
    save_config(c, fs::path(c.out_dir) / "effective_config.json");
    const auto dumps = discover(ckpt ? &ckpt->params : nullptr, corpus.cache, records, c, out);
    int reliable = 0, part_level = 0;
    for (const auto& d : dumps) {
      reliable += d.reliable;
      part_level += d.mode == PixelMode::part_level;
    }
    std::cout << "instances=" << dumps.size() << " reliable_parts=" << reliable
              << " part_level_pixels=" << part_level << " out=" << out.string() << "\n";
  } else if (*abl_cmd) {
    const RunConfig c = abl_flags.resolve();
    const AblationGrid grid = parse_grid(grid_text);
    const Corpus corpus = open_corpus(c);
    const auto rows = ablate(c, grid, corpus.cache, corpus.index);
    const fs::path out = fs::path(c.out_dir) / "ablation.jsonl";
    save_config(c, fs::path(c.out_dir) / "effective_config.json");
    write_ablation(rows, out);
    int failed = 0;
    for (const auto& r : rows) failed += !r.ok;
    std::cout << "points=" << rows.size() << " failed=" << failed << " out=" << out.string() << "\n";
  } else if (*synth_cmd) {
    const SyntheticData data = generate_synthetic(spec);
    const fs::path out = synth_out;
    data.cache.save(out / "cache");
    save_records(out / "records.json", data.index);
    std::cout << "records=" << data.index.records.size() << " cache_hash=" << data.cache.hash_hex()
              << " out=" << out.string() << "\n";
  } else if (*extract_cmd) {
    if (ex_root.empty() == ex_mapping.empty()) throw InputError("give exactly one of --dataset-root or --mapping-file");
    const Scenario scenario = parse_scenario(ex_scenario);
    const DatasetIndex index = ex_mapping.empty() ? scan_dataset(ex_root, scenario, ex_exo, ex_seed)
                                                  : scan_mapping_file(ex_mapping, scenario, ex_exo, ex_seed);
    const fs::path out = ex_out;
    save_records(out / "records.json", index);
    std::cout << "records=" << index.records.size() << " skipped_missing_exo=" << index.skipped_missing_exo
              << " skipped_missing_gt=" << index.skipped_missing_gt << "\n";
    fs::path script = ex_script;
    if (script.empty()) {
      if (const char* env = std::getenv("SELCON_EXTRACT_SCRIPT")) script = env;
      else script = fs::path(SELCON_SOURCE_DIR) / "tools" / "extract" / "extract_features.py";
    }
    if (!fs::exists(script)) throw InputError("extraction script not found: " + script.string());
    const std::string cmd = ex_python + " \"" + script.string() + "\" --records \"" + (out / "records.json").string() +
                            "\" --out \"" + (out / "cache").string() + "\" --backend " + ex_backend +
                            " --seed " + std::to_string(ex_seed);
    const int status = std::system(cmd.c_str());
    if (status != 0) throw InputError("extraction script failed with status " + std::to_string(status));
    const FeatureCache cache = FeatureCache::load(out / "cache");
    std::cout << "cache entries=" << cache.entries().size() << " hash=" << cache.hash_hex() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
}
