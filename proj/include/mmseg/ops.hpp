#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmseg/tensor.hpp"

namespace mmseg {

// Elementwise binary ops broadcast both operands with trailing-dimension
// alignment (numpy rules: aligned extents must match or be 1).
Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

Tensor relu(const Tensor& x);

/// While alive, every relu call on this thread folds the sign pattern of its
/// input into value(). Two evaluations with equal digests lie on the same
/// linear piece of every relu.
class ReluSignDigest {
 public:
  ReluSignDigest();
  ~ReluSignDigest();
  ReluSignDigest(const ReluSignDigest&) = delete;
  ReluSignDigest& operator=(const ReluSignDigest&) = delete;
  std::uint64_t value() const { return hash_; }

 private:
  friend Tensor relu(const Tensor& x);
  std::uint64_t hash_ = 14695981039346656037ull;
  ReluSignDigest* previous_;
};
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor silu(const Tensor& x);
/// Max-shifted softmax along `axis`.
Tensor softmax(const Tensor& x, Index axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Averages over every axis after the first `keep_axes`.
Tensor mean_trailing(const Tensor& x, Index keep_axes);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
/// out[i] = x.flat[indices[i]]; gradients scatter-add back.
Tensor gather(const Tensor& x, std::span<const Index> indices, Shape shape);
/// Concatenates along axis 0; trailing extents must agree.
Tensor concat(const std::vector<Tensor>& parts);
/// Rows [begin, end) along axis 0.
Tensor slice(const Tensor& x, Index begin, Index end);

/// x: C_in x D x H x W. weight: C_out x (C_in/groups) x kD x kH x kW with odd
/// kernel extents. bias (optional): C_out.
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              Index stride = 1, Index padding = 0, Index groups = 1);
Index conv_output_extent(Index in, Index kernel, Index stride, Index padding);

/// Nearest-neighbour factor-2 upsampling of a C x D x H x W volume.
Tensor upsample_nearest2(const Tensor& x);

/// Normalizes over `axis`; gain and bias have that axis' extent.
Tensor layer_norm(const Tensor& x, Index axis, const Tensor& gain,
                  const Tensor& bias, double eps = 1e-5);
/// Per-channel normalization over all trailing axes of a C x ... tensor;
/// gain and bias have length C.
Tensor instance_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                     double eps = 1e-5);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(const Tensor& x, double s) { return scale(x, s); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }
inline Tensor operator+(const Tensor& x, double s) { return add_scalar(x, s); }

}  // namespace mmseg
