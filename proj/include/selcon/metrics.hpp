#pragma once

// Heatmap calibration and the KLD / SIM / NSS saliency metrics.

#include <algorithm>
#include <cmath>
#include <string>

#include "selcon/tensor.hpp"

namespace selcon {

struct MetricConstants {
  double kld_epsilon = 1e-12;
  double fixation_threshold = 0.1;
};

enum class HeatmapRole { prediction, ground_truth };

template <typename Scalar>
struct Heatmap {
  ScalarMap<Scalar> map;
  HeatmapRole role = HeatmapRole::prediction;
};

// CAM restricted to pixels whose object affinity exceeds gamma.
template <typename Scalar>
ScalarMap<Scalar> calibrate(const ScalarMap<Scalar>& cam, const ScalarMap<Scalar>& affinity,
                            Scalar gamma) {
  require_same_grid(cam, affinity);
  if (!(gamma > 0 && gamma < 1)) throw InputError("calibration threshold must lie in (0, 1)");
  return cam * binarize(affinity, gamma);
}

namespace detail {

template <typename Scalar>
ScalarMap<Scalar> to_distribution(const ScalarMap<Scalar>& m, const char* what) {
  if ((m < 0).any() || !m.allFinite()) throw InputError(std::string(what) + " must be finite and non-negative");
  const Scalar mass = m.sum();
  if (!(mass > 0)) throw InputError(std::string(what) + " has zero mass");
  return m / mass;
}

}  // namespace detail

// sum gt * log(gt / (pred + eps)) over sum-normalized maps; a zero-mass
// prediction is scored as the all-zero distribution.
template <typename Scalar>
Scalar kld(const ScalarMap<Scalar>& pred, const ScalarMap<Scalar>& gt,
           const MetricConstants& c = {}) {
  require_same_grid(pred, gt);
  const ScalarMap<Scalar> q = detail::to_distribution(gt, "ground truth");
  if ((pred < 0).any() || !pred.allFinite()) throw InputError("prediction must be finite and non-negative");
  const Scalar mass = pred.sum();
  const ScalarMap<Scalar> p = mass > 0 ? ScalarMap<Scalar>(pred / mass)
                                       : ScalarMap<Scalar>::Zero(pred.rows(), pred.cols());
  const Scalar eps = static_cast<Scalar>(c.kld_epsilon);
  Scalar total = 0;
  for (Index i = 0; i < q.size(); ++i) {
    const Scalar g = q.data()[i];
    if (g > 0) total += g * std::log(g / (p.data()[i] + eps));
  }
  return total;
}

// Histogram intersection of the sum-normalized maps.
template <typename Scalar>
Scalar sim(const ScalarMap<Scalar>& pred, const ScalarMap<Scalar>& gt) {
  require_same_grid(pred, gt);
  return detail::to_distribution(pred, "prediction").min(detail::to_distribution(gt, "ground truth")).sum();
}

// Mean standardized prediction over ground-truth fixation pixels.
template <typename Scalar>
Scalar nss(const ScalarMap<Scalar>& pred, const ScalarMap<Scalar>& gt,
           const MetricConstants& c = {}) {
  require_same_grid(pred, gt);
  const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> fixations =
      minmax_normalize(gt) > static_cast<Scalar>(c.fixation_threshold);
  const Index count = fixations.count();
  if (count == 0) throw InputError("ground truth has no fixation pixels");
  const Scalar mean = pred.mean();
  const Scalar sd = std::sqrt((pred - mean).square().mean());
  if (!(sd > 0)) return 0;
  return fixations.select((pred - mean) / sd, Scalar(0)).sum() / Scalar(count);
}

// Bilinear resampling with pixel-centre alignment.
template <typename Scalar>
ScalarMap<Scalar> resize_bilinear(const ScalarMap<Scalar>& src, Index height, Index width) {
  if (height < 1 || width < 1 || src.size() == 0) throw DimensionError("resize to an empty grid");
  ScalarMap<Scalar> out(height, width);
  const Scalar sy = Scalar(src.rows()) / Scalar(height);
  const Scalar sx = Scalar(src.cols()) / Scalar(width);
  for (Index i = 0; i < height; ++i) {
    const Scalar y = std::clamp((i + Scalar(0.5)) * sy - Scalar(0.5), Scalar(0), Scalar(src.rows() - 1));
    const Index y0 = static_cast<Index>(std::floor(y));
    const Index y1 = std::min<Index>(y0 + 1, src.rows() - 1);
    const Scalar fy = y - Scalar(y0);
    for (Index j = 0; j < width; ++j) {
      const Scalar x = std::clamp((j + Scalar(0.5)) * sx - Scalar(0.5), Scalar(0), Scalar(src.cols() - 1));
      const Index x0 = static_cast<Index>(std::floor(x));
      const Index x1 = std::min<Index>(x0 + 1, src.cols() - 1);
      const Scalar fx = x - Scalar(x0);
      out(i, j) = (1 - fy) * ((1 - fx) * src(y0, x0) + fx * src(y0, x1)) +
                  fy * ((1 - fx) * src(y1, x0) + fx * src(y1, x1));
    }
  }
  return out;
}

}  // namespace selcon
