#pragma once

// Grayscale heatmap images as binary PGM (P5). Values are mapped from [0, 1]
// to 8 bits on write and back to [0, 1] on read; ASCII PGM (P2) and 16-bit
// maxvals are accepted on read.

#include <filesystem>

#include "selcon/affinity.hpp"

namespace selcon {

void write_pgm(const std::filesystem::path& path, const Map& m);
Map read_pgm(const std::filesystem::path& path);

}  // namespace selcon
