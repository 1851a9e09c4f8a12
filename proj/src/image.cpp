#include "selcon/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace selcon {

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string token(std::istream& is) {
  std::string t;
  char c;
  while (is.get(c)) {
    if (c == '#') {
      std::string ignored;
      std::getline(is, ignored);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!t.empty()) break;
      continue;
    }
    t.push_back(c);
  }
  return t;
}

long positive(const std::string& t, const std::filesystem::path& path) {
  try {
    const long v = std::stol(t);
    if (v > 0) return v;
  } catch (const std::exception&) {
  }
  throw DataError("malformed PGM header in " + path.string());
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Map& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << "P5\n" << m.cols() << " " << m.rows() << "\n255\n";
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      const double v = std::isfinite(m(i, j)) ? std::clamp(m(i, j), 0.0, 1.0) : 0.0;
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
}

Map read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  const std::string magic = token(is);
  if (magic != "P5" && magic != "P2") throw DataError(path.string() + " is not a PGM image");
  const long width = positive(token(is), path);
  const long height = positive(token(is), path);
  const long maxval = positive(token(is), path);
  if (maxval > 65535) throw DataError("unsupported PGM maxval in " + path.string());
  Map m(height, width);
  for (Index i = 0; i < height; ++i) {
    for (Index j = 0; j < width; ++j) {
      long v = 0;
      if (magic == "P2") {
        const std::string t = token(is);
        if (t.empty()) throw DataError(path.string() + " is truncated");
        v = std::stol(t);
      } else if (maxval < 256) {
        char c;
        if (!is.get(c)) throw DataError(path.string() + " is truncated");
        v = static_cast<unsigned char>(c);
      } else {
        char hi, lo;
        if (!is.get(hi) || !is.get(lo)) throw DataError(path.string() + " is truncated");
        v = (static_cast<unsigned char>(hi) << 8) | static_cast<unsigned char>(lo);
      }
      m(i, j) = static_cast<double>(v) / static_cast<double>(maxval);
    }
  }
  return m;
}

}  // namespace selcon
