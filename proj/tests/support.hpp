#pragma once

#include <atomic>
#include <fstream>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "selcon/affinity.hpp"

namespace selcon::testing {

using Rng = std::mt19937_64;

inline Features random_features(Rng& rng, Index h, Index w, Index d) {
  std::normal_distribution<double> n(0.0, 1.0);
  Features f(h, w, d);
  for (Index k = 0; k < f.matrix().size(); ++k) f.matrix().data()[k] = n(rng);
  return f;
}

inline Map random_map(Rng& rng, Index h, Index w, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Map m(h, w);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
  return m;
}

inline Vec random_vec(Rng& rng, Index d) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(d);
  for (Index k = 0; k < d; ++k) v(k) = n(rng);
  return v;
}

inline Unit random_unit(Rng& rng, Index d) { return channel_normalize(random_vec(rng, d)); }

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("selcon-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline void touch(const std::filesystem::path& p) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p) << "x";
}

}  // namespace selcon::testing
