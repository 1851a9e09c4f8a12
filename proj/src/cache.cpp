#include "selcon/cache.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "selcon/random.hpp"

namespace selcon {

namespace {

static_assert(std::endian::native == std::endian::little, "cache payload is little-endian float32");

constexpr const char* kFormat = "selcon-feature-cache";

}  // namespace

Index CacheEntry::elements() const {
  Index n = 1;
  for (Index s : shape) n *= s;
  return n;
}

void FeatureCache::put(const std::string& name, std::vector<Index> shape, std::span<const float> values) {
  CacheEntry e;
  e.shape = std::move(shape);
  if (e.shape.empty()) throw DimensionError("cache entry " + name + " has no shape");
  for (Index s : e.shape) {
    if (s < 1) throw DimensionError("cache entry " + name + " has an empty dimension");
  }
  if (e.elements() != static_cast<Index>(values.size())) {
    throw DimensionError("cache entry " + name + ": shape does not match value count");
  }
  if (contains(name)) throw InputError("duplicate cache entry " + name);
  e.offset = payload_.size() * sizeof(float);
  payload_.insert(payload_.end(), values.begin(), values.end());
  entries_.emplace(name, std::move(e));
}

const CacheEntry& FeatureCache::entry(const std::string& name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end()) throw DataError("cache has no entry " + name);
  return it->second;
}

std::span<const float> FeatureCache::values(const std::string& name) const {
  const auto& e = entry(name);
  return {payload_.data() + e.offset / sizeof(float), static_cast<std::size_t>(e.elements())};
}

const CacheEntry& FeatureCache::expect_rank(const std::string& name, std::size_t rank) const {
  const auto& e = entry(name);
  if (e.shape.size() != rank) {
    throw DataError("cache entry " + name + " has rank " + std::to_string(e.shape.size()) +
                    ", expected " + std::to_string(rank));
  }
  return e;
}

std::uint64_t FeatureCache::hash() const {
  std::uint64_t h = fnv1a(kFormat);
  for (const auto& [name, e] : entries_) {
    h = fnv1a(name, h);
    for (Index s : e.shape) h = fnv1a(std::to_string(s) + ",", h);
    h = fnv1a(std::to_string(e.offset) + ";", h);
  }
  return fnv1a(std::string_view(reinterpret_cast<const char*>(payload_.data()),
                                payload_.size() * sizeof(float)),
               h);
}

std::string FeatureCache::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

void FeatureCache::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = 1;
  manifest["payload"] = "payload.bin";
  manifest["payload_bytes"] = payload_.size() * sizeof(float);
  manifest["entries"] = nlohmann::ordered_json::object();
  for (const auto& [name, e] : entries_) {
    manifest["entries"][name] = {{"shape", e.shape}, {"dtype", "float32"}, {"offset", e.offset}};
  }
  {
    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    if (!os) throw DataError("cannot write " + (dir / "manifest.json").string());
    os << manifest.dump(1) << "\n";
  }
  std::ofstream os(dir / "payload.bin", std::ios::binary | std::ios::trunc);
  os.write(reinterpret_cast<const char*>(payload_.data()),
           static_cast<std::streamsize>(payload_.size() * sizeof(float)));
  if (!os) throw DataError("cannot write " + (dir / "payload.bin").string());
}

FeatureCache FeatureCache::load(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream ms(manifest_path);
  if (!ms) throw DataError("cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    ms >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  FeatureCache cache;
  try {
    if (manifest.at("format").get<std::string>() != kFormat) throw DataError("not a feature cache manifest");
    const auto payload_path = dir / manifest.at("payload").get<std::string>();
    const auto declared = manifest.at("payload_bytes").get<std::uint64_t>();
    std::error_code ec;
    const auto actual = std::filesystem::file_size(payload_path, ec);
    if (ec) throw DataError("cannot stat payload " + payload_path.string());
    if (actual != declared || declared % sizeof(float) != 0) {
      throw DataError("payload " + payload_path.string() + " holds " + std::to_string(actual) +
                      " bytes, manifest declares " + std::to_string(declared));
    }
    cache.payload_.resize(declared / sizeof(float));
    std::ifstream ps(payload_path, std::ios::binary);
    if (!ps.read(reinterpret_cast<char*>(cache.payload_.data()), static_cast<std::streamsize>(declared))) {
      throw DataError("payload " + payload_path.string() + " is truncated");
    }
    for (const auto& [name, spec] : manifest.at("entries").items()) {
      if (spec.at("dtype").get<std::string>() != "float32") {
        throw DataError("cache entry " + name + " has unsupported dtype");
      }
      CacheEntry e;
      e.shape = spec.at("shape").get<std::vector<Index>>();
      e.offset = spec.at("offset").get<std::uint64_t>();
      if (e.shape.empty() || e.offset % sizeof(float) != 0) throw DataError("cache entry " + name + " is malformed");
      for (Index s : e.shape) {
        if (s < 1) throw DataError("cache entry " + name + " has an empty dimension");
      }
      const auto end = e.offset + static_cast<std::uint64_t>(e.elements()) * sizeof(float);
      if (end > declared) throw DataError("cache entry " + name + " extends past the payload");
      cache.entries_.emplace(name, std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  return cache;
}

std::string cache_key_ego(const std::string& id, const std::string& kind) { return "ego/" + id + "/" + kind; }

std::string cache_key_exo(const std::string& id, int e, const std::string& kind) {
  return "exo/" + id + "/" + std::to_string(e) + "/" + kind;
}

std::string cache_key_text(const std::string& action, const std::string& kind) {
  return "text/" + action + "/" + kind;
}

}  // namespace selcon
