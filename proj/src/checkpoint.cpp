#include "selcon/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

namespace selcon {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[8] = {'S', 'E', 'L', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ofstream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::ifstream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("checkpoint truncated");
  return v;
}

std::string get_string(std::ifstream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1ULL << 32)) throw DataError("checkpoint string length is implausible");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("checkpoint truncated");
  return s;
}

void put_tensors(std::ofstream& os, const std::string& prefix, const HeadParams& p) {
  p.for_each([&](const std::string& name, const RowMatrix<Real>& m) {
    put_string(os, prefix + name);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Real)));
  });
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, ckpt.config_hash);
  put<std::uint64_t>(os, ckpt.step);
  put_string(os, ckpt.rng_state);
  put<std::uint32_t>(os, 20);
  put_tensors(os, "params/", ckpt.params);
  put_tensors(os, "velocity/", ckpt.velocity);
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path.string() + " is not a checkpoint");
  }
  if (get<std::uint32_t>(is) != kCheckpointVersion) throw DataError("unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.config_hash = get<std::uint64_t>(is);
  ckpt.step = get<std::uint64_t>(is);
  ckpt.rng_state = get_string(is);
  const auto count = get<std::uint32_t>(is);
  std::map<std::string, RowMatrix<Real>> tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = get_string(is);
    const auto rows = get<std::uint64_t>(is);
    const auto cols = get<std::uint64_t>(is);
    if (rows * cols > (1ULL << 31)) throw DataError("tensor " + name + " is implausibly large");
    RowMatrix<Real> m(static_cast<Index>(rows), static_cast<Index>(cols));
    if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Real)))) {
      throw DataError("checkpoint truncated in tensor " + name);
    }
    tensors.emplace(name, std::move(m));
  }
  auto fill = [&](const std::string& prefix, HeadParams& p) {
    p.for_each([&](const std::string& name, RowMatrix<Real>& m) {
      const auto it = tensors.find(prefix + name);
      if (it == tensors.end()) throw DataError("checkpoint is missing tensor " + prefix + name);
      m = std::move(it->second);
    });
  };
  fill("params/", ckpt.params);
  fill("velocity/", ckpt.velocity);
  return ckpt;
}

}  // namespace selcon
