#include "selcon/heads.hpp"

#include <cmath>
#include <random>

namespace selcon {

namespace {

RowMatrix<Real> row_normalize(const RowMatrix<Real>& y) {
  RowMatrix<Real> out(y.rows(), y.cols());
  for (Index r = 0; r < y.rows(); ++r) {
    const Real n = y.row(r).norm();
    if (n > kNormEpsilon) {
      out.row(r) = y.row(r) / n;
    } else {
      out.row(r).setZero();
    }
  }
  return out;
}

RowMatrix<Real> row_normalize_backward(const RowMatrix<Real>& y, const RowMatrix<Real>& grad) {
  RowMatrix<Real> out = RowMatrix<Real>::Zero(y.rows(), y.cols());
  for (Index r = 0; r < y.rows(); ++r) {
    const Real n = y.row(r).norm();
    if (!(n > kNormEpsilon)) continue;
    const auto u = (y.row(r) / n).eval();
    out.row(r) = (grad.row(r) - u * u.dot(grad.row(r))) / n;
  }
  return out;
}

void linear_backward(const RowMatrix<Real>& input, const RowMatrix<Real>& grad_out,
                     RowMatrix<Real>& grad_w, RowMatrix<Real>& grad_b) {
  grad_w.noalias() += input.transpose() * grad_out;
  grad_b += grad_out.colwise().sum();
}

RowMatrix<Real> uniform_weights(std::mt19937_64& rng, Index fan_in, Index rows, Index cols) {
  const Real bound = std::sqrt(Real(6) / Real(fan_in));
  std::uniform_real_distribution<Real> dist(-bound, bound);
  RowMatrix<Real> w(rows, cols);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return w;
}

}  // namespace

void HeadParams::for_each(const std::function<void(const std::string&, RowMatrix<Real>&)>& fn) {
  fn("conv1.weight", conv1_w);
  fn("conv1.bias", conv1_b);
  fn("conv2.weight", conv2_w);
  fn("conv2.bias", conv2_b);
  fn("proto_proj.weight", proto_w);
  fn("proto_proj.bias", proto_b);
  fn("pixel_proj.weight", pixel_w);
  fn("pixel_proj.bias", pixel_b);
  fn("classifier.weight", classifier_w);
  fn("classifier.bias", classifier_b);
}

void HeadParams::for_each(
    const std::function<void(const std::string&, const RowMatrix<Real>&)>& fn) const {
  const_cast<HeadParams*>(this)->for_each(
      [&](const std::string& name, RowMatrix<Real>& m) { fn(name, m); });
}

HeadParams HeadParams::zeros_like(const HeadParams& other) {
  HeadParams z = other;
  z.for_each([](const std::string&, RowMatrix<Real>& m) { m.setZero(); });
  return z;
}

Real HeadParams::squared_norm() const {
  Real s = 0;
  for_each([&](const std::string&, const RowMatrix<Real>& m) { s += m.squaredNorm(); });
  return s;
}

bool HeadParams::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const RowMatrix<Real>& m) { ok = ok && m.allFinite(); });
  return ok;
}

bool operator==(const HeadParams& a, const HeadParams& b) {
  std::vector<const RowMatrix<Real>*> lhs, rhs;
  a.for_each([&](const std::string&, const RowMatrix<Real>& m) { lhs.push_back(&m); });
  b.for_each([&](const std::string&, const RowMatrix<Real>& m) { rhs.push_back(&m); });
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    if (lhs[i]->rows() != rhs[i]->rows() || lhs[i]->cols() != rhs[i]->cols()) return false;
    if (*lhs[i] != *rhs[i]) return false;
  }
  return true;
}

HeadParams init_params(std::uint64_t seed, Index channels, Index projection_dim, Index classes) {
  if (channels < 1 || projection_dim < 1 || classes < 1) throw ConfigError("head dimensions must be positive");
  std::mt19937_64 rng(seed);
  HeadParams p;
  p.conv1_w = uniform_weights(rng, 9 * channels, 9 * channels, channels);
  p.conv1_b = RowMatrix<Real>::Zero(1, channels);
  p.conv2_w = uniform_weights(rng, 9 * channels, 9 * channels, channels);
  p.conv2_b = RowMatrix<Real>::Zero(1, channels);
  p.proto_w = uniform_weights(rng, channels, channels, projection_dim);
  p.proto_b = RowMatrix<Real>::Zero(1, projection_dim);
  p.pixel_w = uniform_weights(rng, channels, channels, projection_dim);
  p.pixel_b = RowMatrix<Real>::Zero(1, projection_dim);
  p.classifier_w = uniform_weights(rng, channels, channels, classes);
  p.classifier_b = RowMatrix<Real>::Zero(1, classes);
  return p;
}

RowMatrix<Real> im2col3x3(const RowMatrix<Real>& x, Index height, Index width) {
  const Index c = x.cols();
  RowMatrix<Real> cols = RowMatrix<Real>::Zero(height * width, 9 * c);
  for (Index i = 0; i < height; ++i) {
    for (Index j = 0; j < width; ++j) {
      for (Index di = -1; di <= 1; ++di) {
        for (Index dj = -1; dj <= 1; ++dj) {
          const Index ii = i + di, jj = j + dj;
          if (ii < 0 || jj < 0 || ii >= height || jj >= width) continue;
          const Index k = (di + 1) * 3 + (dj + 1);
          cols.block(i * width + j, k * c, 1, c) = x.row(ii * width + jj);
        }
      }
    }
  }
  return cols;
}

RowMatrix<Real> col2im3x3(const RowMatrix<Real>& cols, Index height, Index width, Index channels) {
  RowMatrix<Real> x = RowMatrix<Real>::Zero(height * width, channels);
  for (Index i = 0; i < height; ++i) {
    for (Index j = 0; j < width; ++j) {
      for (Index di = -1; di <= 1; ++di) {
        for (Index dj = -1; dj <= 1; ++dj) {
          const Index ii = i + di, jj = j + dj;
          if (ii < 0 || jj < 0 || ii >= height || jj >= width) continue;
          const Index k = (di + 1) * 3 + (dj + 1);
          x.row(ii * width + jj) += cols.block(i * width + j, k * channels, 1, channels);
        }
      }
    }
  }
  return x;
}

ForwardOutputs forward(const Features& f, int label, const HeadParams& params, ForwardCache* cache) {
  if (f.channels() != params.channels()) {
    throw ConfigError("feature channels (" + std::to_string(f.channels()) +
                      ") do not match head width (" + std::to_string(params.channels()) + ")");
  }
  if (label < 0 || label >= params.classes()) throw InputError("class label out of range");
  const Index h = f.height(), w = f.width();

  RowMatrix<Real> cols1 = im2col3x3(f.matrix(), h, w);
  RowMatrix<Real> pre = cols1 * params.conv1_w;
  pre.rowwise() += params.conv1_b.row(0);
  RowMatrix<Real> cols2 = im2col3x3(pre.cwiseMax(Real(0)), h, w);
  RowMatrix<Real> trunk = cols2 * params.conv2_w;
  trunk.rowwise() += params.conv2_b.row(0);

  RowMatrix<Real> proto_raw = trunk * params.proto_w;
  proto_raw.rowwise() += params.proto_b.row(0);
  RowMatrix<Real> pixel_raw = trunk * params.pixel_w;
  pixel_raw.rowwise() += params.pixel_b.row(0);

  ForwardOutputs out;
  out.cam_all = trunk * params.classifier_w;
  out.cam_all.rowwise() += params.classifier_b.row(0);
  if (!out.cam_all.allFinite() || !trunk.allFinite()) throw NumericError("non-finite activations in forward pass");
  out.logits = out.cam_all.colwise().mean().transpose();
  out.cam_target = minmax_normalize(unflatten<Real>(out.cam_all.col(label), h, w));
  out.proto = Features(h, w, row_normalize(proto_raw));
  out.pixel = Features(h, w, row_normalize(pixel_raw));

  if (cache != nullptr) {
    cache->cols1 = std::move(cols1);
    cache->pre_relu = std::move(pre);
    cache->cols2 = std::move(cols2);
    cache->trunk = std::move(trunk);
    cache->proto_raw = std::move(proto_raw);
    cache->pixel_raw = std::move(pixel_raw);
    cache->cam_label = out.cam_all.col(label);
    cache->label = label;
    cache->height = h;
    cache->width = w;
  }
  return out;
}

Vec minmax_backward(const Vec& x, const Vec& grad_out) {
  Index lo = 0, hi = 0;
  const Real range = x.maxCoeff(&hi) - x.minCoeff(&lo);
  if (!(range > 0)) return Vec::Zero(x.size());
  const Vec c = (x.array() - x(lo)) / range;
  Vec g = grad_out / range;
  g(lo) += grad_out.dot((c.array() - 1).matrix()) / range;
  g(hi) -= grad_out.dot(c) / range;
  return g;
}

void backward(const HeadParams& params, const ForwardCache& cache, const RowMatrix<Real>& grad_proto,
              const RowMatrix<Real>& grad_pixel, const Vec& grad_logits, HeadParams& grads,
              const Map& grad_cam) {
  const Index n = cache.trunk.rows();
  RowMatrix<Real> grad_trunk = RowMatrix<Real>::Zero(n, cache.trunk.cols());

  if (grad_proto.size() > 0) {
    const RowMatrix<Real> g = row_normalize_backward(cache.proto_raw, grad_proto);
    linear_backward(cache.trunk, g, grads.proto_w, grads.proto_b);
    grad_trunk.noalias() += g * params.proto_w.transpose();
  }
  if (grad_pixel.size() > 0) {
    const RowMatrix<Real> g = row_normalize_backward(cache.pixel_raw, grad_pixel);
    linear_backward(cache.trunk, g, grads.pixel_w, grads.pixel_b);
    grad_trunk.noalias() += g * params.pixel_w.transpose();
  }
  if (grad_logits.size() > 0) {
    const RowMatrix<Real> g = RowMatrix<Real>::Ones(n, 1) * grad_logits.transpose() / Real(n);
    linear_backward(cache.trunk, g, grads.classifier_w, grads.classifier_b);
    grad_trunk.noalias() += g * params.classifier_w.transpose();
  }
  if (grad_cam.size() > 0) {
    if (grad_cam.rows() != cache.height || grad_cam.cols() != cache.width) {
      throw DimensionError("backward: CAM gradient grid mismatch");
    }
    const Vec g = minmax_backward(cache.cam_label, flat(grad_cam));
    const int c = cache.label;
    grads.classifier_w.col(c).noalias() += cache.trunk.transpose() * g;
    grads.classifier_b(0, c) += g.sum();
    grad_trunk.noalias() += g * params.classifier_w.col(c).transpose();
  }

  linear_backward(cache.cols2, grad_trunk, grads.conv2_w, grads.conv2_b);
  const RowMatrix<Real> grad_relu =
      col2im3x3(grad_trunk * params.conv2_w.transpose(), cache.height, cache.width, params.channels());
  const RowMatrix<Real> grad_pre = (cache.pre_relu.array() > 0).select(grad_relu.array(), Real(0)).matrix();
  linear_backward(cache.cols1, grad_pre, grads.conv1_w, grads.conv1_b);
}

void sgd_step(HeadParams& params, const HeadParams& grads, HeadParams& velocity,
              const SgdOptions& options) {
  if (!(options.lr > 0)) throw ConfigError("learning rate must be positive");
  if (!grads.all_finite()) throw NumericError("non-finite gradient; SGD step rejected");
  std::vector<RowMatrix<Real>*> p, v;
  std::vector<const RowMatrix<Real>*> g;
  params.for_each([&](const std::string&, RowMatrix<Real>& m) { p.push_back(&m); });
  velocity.for_each([&](const std::string&, RowMatrix<Real>& m) { v.push_back(&m); });
  grads.for_each([&](const std::string&, const RowMatrix<Real>& m) { g.push_back(&m); });
  for (std::size_t i = 0; i < p.size(); ++i) {
    *v[i] = options.momentum * *v[i] + *g[i] + options.weight_decay * *p[i];
    *p[i] -= options.lr * *v[i];
  }
}

}  // namespace selcon
