#pragma once

// Dense spatial tensors shared by every stage of the grounding pipeline.
//
// A SpatialFeatures<S> stores an H x W grid of D-channel activations as an
// (H*W) x D row-major matrix, pixel (i, j) living on row i*W + j. ScalarMap<S>
// is an H x W row-major array, so flattening a map yields the same pixel
// order as the feature rows.

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <string>
#include <utility>

#include "selcon/errors.hpp"

namespace selcon {

using Index = Eigen::Index;

template <typename Scalar>
using ScalarMap = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kNormEpsilon = 1e-8;

template <typename Scalar>
class SpatialFeatures {
 public:
  using Matrix = RowMatrix<Scalar>;

  SpatialFeatures() = default;

  SpatialFeatures(Index height, Index width, Index channels)
      : height_(height), width_(width), data_(Matrix::Zero(height * width, channels)) {
    check_shape();
  }

  SpatialFeatures(Index height, Index width, Matrix data)
      : height_(height), width_(width), data_(std::move(data)) {
    check_shape();
    if (data_.rows() != height_ * width_) {
      std::ostringstream os;
      os << "feature matrix has " << data_.rows() << " rows, expected " << height_ << "x" << width_;
      throw DimensionError(os.str());
    }
  }

  Index height() const { return height_; }
  Index width() const { return width_; }
  Index channels() const { return data_.cols(); }
  Index pixels() const { return data_.rows(); }

  const Matrix& matrix() const { return data_; }
  Matrix& matrix() { return data_; }

  auto pixel(Index i, Index j) const { return data_.row(i * width_ + j); }
  auto pixel(Index i, Index j) { return data_.row(i * width_ + j); }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  SpatialFeatures<Other> cast() const {
    return SpatialFeatures<Other>(height_, width_, data_.template cast<Other>());
  }

  friend bool operator==(const SpatialFeatures& a, const SpatialFeatures& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.data_.rows() == b.data_.rows() &&
           a.data_.cols() == b.data_.cols() && a.data_ == b.data_;
  }

 private:
  void check_shape() const {
    if (height_ < 1 || width_ < 1 || data_.cols() < 1) {
      throw DimensionError("spatial features need H, W, D >= 1");
    }
  }

  Index height_ = 0;
  Index width_ = 0;
  Matrix data_;
};

// A D-vector with unit Euclidean norm. Only constructible through
// channel_normalize (or from an already-checked vector).
template <typename Scalar>
class UnitVector {
 public:
  UnitVector() = default;

  static UnitVector from_normalized(Vector<Scalar> v) {
    if (std::abs(v.norm() - Scalar(1)) > Scalar(1e-6)) {
      throw DegeneratePrototype("vector is not unit norm");
    }
    UnitVector u;
    u.data_ = std::move(v);
    return u;
  }

  const Vector<Scalar>& vector() const { return data_; }
  Index size() const { return data_.size(); }
  Scalar dot(const UnitVector& other) const { return data_.dot(other.data_); }

 private:
  Vector<Scalar> data_;
};

template <typename Scalar>
void require_same_grid(const SpatialFeatures<Scalar>& x, const ScalarMap<Scalar>& y) {
  if (x.height() != y.rows() || x.width() != y.cols()) {
    std::ostringstream os;
    os << "grid mismatch: features " << x.height() << "x" << x.width() << ", map " << y.rows()
       << "x" << y.cols();
    throw DimensionError(os.str());
  }
}

template <typename Scalar>
void require_same_grid(const ScalarMap<Scalar>& a, const ScalarMap<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream os;
    os << "grid mismatch: " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x" << b.cols();
    throw DimensionError(os.str());
  }
}

// Pixel values of a map in feature-row order.
template <typename Scalar>
Eigen::Map<const Vector<Scalar>> flat(const ScalarMap<Scalar>& m) {
  return Eigen::Map<const Vector<Scalar>>(m.data(), m.size());
}

template <typename Scalar>
ScalarMap<Scalar> unflatten(const Vector<Scalar>& v, Index height, Index width) {
  if (v.size() != height * width) throw DimensionError("cannot reshape vector onto grid");
  ScalarMap<Scalar> m(height, width);
  Eigen::Map<Vector<Scalar>>(m.data(), m.size()) = v;
  return m;
}

// out[i,j,k] = X[i,j,k] * Y[i,j]
template <typename Scalar>
SpatialFeatures<Scalar> broadcast_hadamard(const SpatialFeatures<Scalar>& x,
                                           const ScalarMap<Scalar>& y) {
  require_same_grid(x, y);
  return SpatialFeatures<Scalar>(x.height(), x.width(), flat(y).asDiagonal() * x.matrix());
}

// Spatial mean of Z (.) M over all H*W positions.
template <typename Scalar>
Vector<Scalar> masked_pool(const SpatialFeatures<Scalar>& z, const ScalarMap<Scalar>& m) {
  require_same_grid(z, m);
  return (z.matrix().transpose() * flat(m)) / Scalar(z.pixels());
}

template <typename Scalar>
UnitVector<Scalar> channel_normalize(const Vector<Scalar>& v) {
  const Scalar n = v.norm();
  if (!(n > Scalar(kNormEpsilon))) {
    throw DegeneratePrototype("cannot normalize a near-zero vector");
  }
  return UnitVector<Scalar>::from_normalized(v / n);
}

// (m - min) / (max - min); a constant map yields zeros.
template <typename Scalar>
ScalarMap<Scalar> minmax_normalize(const ScalarMap<Scalar>& m) {
  if (!m.allFinite()) throw InputError("minmax_normalize: non-finite input");
  const Scalar lo = m.minCoeff();
  const Scalar hi = m.maxCoeff();
  if (!(hi > lo)) return ScalarMap<Scalar>::Zero(m.rows(), m.cols());
  ScalarMap<Scalar> out = (m - lo) / (hi - lo);
  return out;
}

// 1 where m > threshold, else 0.
template <typename Scalar>
ScalarMap<Scalar> binarize(const ScalarMap<Scalar>& m, Scalar threshold) {
  return (m > threshold).template cast<Scalar>();
}

// Per-pixel cosine similarity between feature rows and a direction.
// Zero pixels get similarity 0.
template <typename Scalar>
ScalarMap<Scalar> cosine_map(const SpatialFeatures<Scalar>& f, const Vector<Scalar>& direction) {
  if (f.channels() != direction.size()) {
    throw DimensionError("cosine_map: channel count does not match direction");
  }
  const Scalar dn = direction.norm();
  Vector<Scalar> out(f.pixels());
  for (Index p = 0; p < f.pixels(); ++p) {
    const Scalar pn = f.matrix().row(p).norm();
    out(p) = (pn > Scalar(kNormEpsilon) && dn > Scalar(kNormEpsilon))
                 ? f.matrix().row(p).dot(direction) / (pn * dn)
                 : Scalar(0);
  }
  return unflatten(out, f.height(), f.width());
}

}  // namespace selcon
