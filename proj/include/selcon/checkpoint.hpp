#pragma once

// Versioned binary checkpoint: named parameter and optimizer tensors, the
// hash of the config that produced them, the step counter and the RNG state.
// Doubles are stored as raw little-endian IEEE-754, so a round trip is exact.

#include <cstdint>
#include <filesystem>
#include <string>

#include "selcon/heads.hpp"

namespace selcon {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  HeadParams params;
  HeadParams velocity;
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
  std::string rng_state;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace selcon
