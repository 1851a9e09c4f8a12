#pragma once

// Feature cache: the boundary between the frozen backbones and this library.
//
// On disk a cache is a directory holding
//   manifest.json  {"format": "selcon-feature-cache", "version": 1,
//                   "payload": "payload.bin", "payload_bytes": N,
//                   "entries": {name: {"shape": [...], "dtype": "float32", "offset": bytes}}}
//   payload.bin    little-endian float32 values of every entry, back to back
//
// Entry names: ego/{id}/dino, ego/{id}/clip, ego/{id}/attn, exo/{id}/{e}/dino,
// exo/{id}/{e}/clip, text/{action}/action, text/{action}/entity, plus
// gt/{id} and mask/{id}/{part|object} for generated data.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "selcon/tensor.hpp"

namespace selcon {

struct CacheEntry {
  std::vector<Index> shape;
  std::uint64_t offset = 0;  // bytes into the payload

  Index elements() const;
};

class FeatureCache {
 public:
  static FeatureCache load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  void put(const std::string& name, std::vector<Index> shape, std::span<const float> values);

  template <typename Scalar>
  void put(const std::string& name, const SpatialFeatures<Scalar>& f) {
    const RowMatrix<float> m = f.matrix().template cast<float>();
    put(name, {f.height(), f.width(), f.channels()}, std::span<const float>(m.data(), m.size()));
  }

  template <typename Scalar>
  void put(const std::string& name, const ScalarMap<Scalar>& m) {
    const ScalarMap<float> v = m.template cast<float>();
    put(name, {m.rows(), m.cols()}, std::span<const float>(v.data(), v.size()));
  }

  template <typename Scalar>
  void put(const std::string& name, const Vector<Scalar>& v) {
    const Vector<float> f = v.template cast<float>();
    put(name, {v.size()}, std::span<const float>(f.data(), f.size()));
  }

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const CacheEntry& entry(const std::string& name) const;
  const std::map<std::string, CacheEntry>& entries() const { return entries_; }
  std::span<const float> values(const std::string& name) const;

  template <typename Scalar = double>
  SpatialFeatures<Scalar> features(const std::string& name) const {
    const auto& e = expect_rank(name, 3);
    const auto v = values(name);
    const Eigen::Map<const RowMatrix<float>> m(v.data(), e.shape[0] * e.shape[1], e.shape[2]);
    return SpatialFeatures<Scalar>(e.shape[0], e.shape[1], m.template cast<Scalar>());
  }

  template <typename Scalar = double>
  ScalarMap<Scalar> map(const std::string& name) const {
    const auto& e = expect_rank(name, 2);
    const auto v = values(name);
    const Eigen::Map<const ScalarMap<float>> m(v.data(), e.shape[0], e.shape[1]);
    return m.template cast<Scalar>();
  }

  template <typename Scalar = double>
  Vector<Scalar> vector(const std::string& name) const {
    const auto& e = expect_rank(name, 1);
    const auto v = values(name);
    return Eigen::Map<const Vector<float>>(v.data(), e.shape[0]).template cast<Scalar>();
  }

  // FNV-1a over the manifest and payload; changes iff any entry changes.
  std::uint64_t hash() const;
  std::string hash_hex() const;

 private:
  const CacheEntry& expect_rank(const std::string& name, std::size_t rank) const;

  std::map<std::string, CacheEntry> entries_;
  std::vector<float> payload_;
};

std::string cache_key_ego(const std::string& id, const std::string& kind);
std::string cache_key_exo(const std::string& id, int e, const std::string& kind);
std::string cache_key_text(const std::string& action, const std::string& kind);

}  // namespace selcon
