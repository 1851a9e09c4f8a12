#include <fstream>
#include <sstream>

#include "selcon/pipeline.hpp"

namespace selcon {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

void apply_point(RunConfig& c, const std::map<std::string, std::string>& point) {
  for (const auto& [key, value] : point) {
    if (key == "gamma") {
      apply_override(c, "gamma1", value);
      apply_override(c, "gamma2", value);
    } else {
      apply_override(c, key, value);
    }
  }
}

}  // namespace

AblationGrid parse_grid(const std::string& text) {
  AblationGrid grid;
  std::stringstream axes(text);
  std::string axis;
  while (std::getline(axes, axis, ';')) {
    axis = trim(axis);
    if (axis.empty()) continue;
    const auto eq = axis.find('=');
    if (eq == std::string::npos) throw ConfigError("grid axis '" + axis + "' lacks '='");
    const std::string key = trim(axis.substr(0, eq));
    std::vector<std::string> values;
    std::stringstream vs(axis.substr(eq + 1));
    std::string v;
    while (std::getline(vs, v, ',')) {
      v = trim(v);
      if (!v.empty()) values.push_back(v);
    }
    if (key.empty() || values.empty()) throw ConfigError("grid axis '" + axis + "' is empty");
    RunConfig probe;
    apply_point(probe, {{key, values.front()}});
    grid.emplace_back(key, std::move(values));
  }
  return grid;
}

std::vector<AblationRow> ablate(const RunConfig& base, const AblationGrid& grid,
                                const FeatureCache& cache, const DatasetIndex& index) {
  std::vector<std::map<std::string, std::string>> points{{}};
  for (const auto& [key, values] : grid) {
    std::vector<std::map<std::string, std::string>> next;
    for (const auto& p : points) {
      for (const auto& v : values) {
        auto q = p;
        q[key] = v;
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  }
  points.insert(points.begin(), std::map<std::string, std::string>{});
  if (points.size() > 1 && grid.empty()) points.pop_back();

  const auto test = select_split(index, Split::test);
  std::vector<AblationRow> rows;
  for (std::size_t k = 0; k < points.size(); ++k) {
    AblationRow row;
    row.point = points[k];
    row.reference = k == 0;
    try {
      RunConfig c = base;
      apply_point(c, row.point);
      validate(c);
      const TrainResult tr = train(c, cache, index);
      const MetricsTable table = evaluate(tr.checkpoint.params, cache, test, c);
      row.metrics = table.mean(c.calibrate);
      for (const auto& log : tr.logs) {
        row.part_level_proto += log.part_level_proto;
        row.part_level_pixel += log.part_level_pixel;
        row.instances += log.instances;
      }
      row.final_loss = tr.logs.back().mean.total;
      row.ok = true;
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot write " + path.string());
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["point"] = r.point;
    j["reference"] = r.reference;
    j["ok"] = r.ok;
    if (!r.ok) {
      j["error"] = r.error;
    } else {
      j["kld"] = r.metrics.kld;
      j["sim"] = r.metrics.sim;
      j["nss"] = r.metrics.nss;
      j["final_loss"] = r.final_loss;
      j["part_level_proto"] = r.part_level_proto;
      j["part_level_pixel"] = r.part_level_pixel;
      j["instances"] = r.instances;
    }
    os << j.dump() << "\n";
  }
}

}  // namespace selcon
