#pragma once

// Trainable heads on top of frozen backbone features.
//
//   F --conv3x3--> ReLU --conv3x3--> T --+-- linear + L2 norm --> F~ (prototype branch)
//                                        +-- linear + L2 norm --> F^ (pixel branch)
//                                        +-- 1x1 classifier ----> CAM --mean--> logits
//
// The classifier is a single parameter set used for every view.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "selcon/affinity.hpp"

namespace selcon {

struct HeadParams {
  RowMatrix<Real> conv1_w, conv1_b;  // (9 D) x D, 1 x D
  RowMatrix<Real> conv2_w, conv2_b;
  RowMatrix<Real> proto_w, proto_b;  // D x Dp, 1 x Dp
  RowMatrix<Real> pixel_w, pixel_b;
  RowMatrix<Real> classifier_w, classifier_b;  // D x classes, 1 x classes

  Index channels() const { return conv1_w.cols(); }
  Index projection_dim() const { return proto_w.cols(); }
  Index classes() const { return classifier_w.cols(); }

  // Visits every tensor in a fixed order with its stable name.
  void for_each(const std::function<void(const std::string&, RowMatrix<Real>&)>& fn);
  void for_each(const std::function<void(const std::string&, const RowMatrix<Real>&)>& fn) const;

  static HeadParams zeros_like(const HeadParams& other);
  Real squared_norm() const;
  bool all_finite() const;

  friend bool operator==(const HeadParams& a, const HeadParams& b);
};

// Fan-in scaled uniform weights (variance 2 / fan_in), zero biases.
HeadParams init_params(std::uint64_t seed, Index channels, Index projection_dim, Index classes);

struct ForwardOutputs {
  Features proto;            // F~
  Features pixel;            // F^
  Vec logits;                // spatial mean of the CAM per class
  RowMatrix<Real> cam_all;   // (H W) x classes
  Map cam_target;            // min-max normalized CAM of the label
};

// Intermediate activations kept for the backward pass.
struct ForwardCache {
  RowMatrix<Real> cols1, pre_relu, cols2, trunk;
  RowMatrix<Real> proto_raw, pixel_raw;
  Vec cam_label;  // CAM column of the label before min-max normalization
  int label = 0;
  Index height = 0, width = 0;
};

ForwardOutputs forward(const Features& f, int label, const HeadParams& params,
                       ForwardCache* cache = nullptr);

// Accumulates parameter gradients into `grads` given the upstream gradients
// of one forward pass. Empty upstream matrices mean "no gradient".
// `grad_cam` is the gradient with respect to cam_target.
void backward(const HeadParams& params, const ForwardCache& cache, const RowMatrix<Real>& grad_proto,
              const RowMatrix<Real>& grad_pixel, const Vec& grad_logits, HeadParams& grads,
              const Map& grad_cam = Map());

// Gradient of minmax_normalize(x) with respect to x; zero for a constant x.
Vec minmax_backward(const Vec& x, const Vec& grad_out);

// 3x3 zero-padded patch matrix: row p holds the 9 neighbours of pixel p,
// neighbour-major, each with all channels.
RowMatrix<Real> im2col3x3(const RowMatrix<Real>& x, Index height, Index width);
RowMatrix<Real> col2im3x3(const RowMatrix<Real>& cols, Index height, Index width, Index channels);

struct SgdOptions {
  Real lr = 1e-3;
  Real weight_decay = 5e-4;
  Real momentum = 0.9;
};

// In-place momentum SGD with L2 weight decay folded into the gradient:
//   v <- momentum * v + (g + wd * p);  p <- p - lr * v
// Non-finite gradients reject the step and leave params/velocity untouched.
void sgd_step(HeadParams& params, const HeadParams& grads, HeadParams& velocity,
              const SgdOptions& options);

}  // namespace selcon
