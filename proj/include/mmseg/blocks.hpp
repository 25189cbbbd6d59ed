#pragma once

#include <random>
#include <vector>

#include "mmseg/parameters.hpp"
#include "mmseg/scan3d.hpp"
#include "mmseg/ssm.hpp"
#include "mmseg/tensor.hpp"

namespace mmseg {

/// Per-voxel affine map of a C x D x H x W volume: weight is C_out x C.
Tensor pointwise_linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Gated dual-path block:
///   y = out(silu(A(ln(x))) * ln_post(ss3d(dwconv(B(ln(x)))))) + x
struct MambaBlock {
  Tensor ln_gain, ln_bias;
  Tensor path_a_weight, path_a_bias;
  Tensor path_b_weight, path_b_bias;
  Tensor dw_weight, dw_bias;  // hidden x 1 x 3 x 3 x 3, depthwise
  SSMParams ssm;
  Tensor post_gain, post_bias;
  Tensor out_weight, out_bias;  // zero-initialized
  std::vector<ScanDirection> directions;

  Index channels() const { return ln_gain.numel(); }
  Index hidden() const { return path_a_weight.dim(0); }

  static MambaBlock init(Index channels, Index state_dim, const std::vector<ScanDirection>& directions,
                         std::mt19937_64& rng, Index expansion = 2);
  void collect(const std::string& prefix, ParameterList& out) const;
};

Tensor mamba_block(const Tensor& x, const MambaBlock& p);

/// y = relu(norm(conv(relu(norm(conv(x)))))) + shortcut(x), 3x3x3 convs with
/// per-channel normalization; the shortcut is a 1x1x1 conv when channel
/// counts differ.
struct ResBlock {
  Tensor conv1_weight, norm1_gain, norm1_bias;  // no conv bias: the norm removes it
  Tensor conv2_weight, norm2_gain, norm2_bias;
  Tensor shortcut_weight;  // undefined for identity shortcut

  Index in_channels() const { return conv1_weight.dim(1); }
  Index out_channels() const { return conv1_weight.dim(0); }

  static ResBlock init(Index in_channels, Index out_channels, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParameterList& out) const;
};

Tensor res_block(const Tensor& x, const ResBlock& p);

/// Stride-2 3x3x3 conv, C -> 2C.
struct Downsample {
  Tensor weight, bias;
  static Downsample init(Index channels, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParameterList& out) const;
};

Tensor downsample(const Tensor& x, const Downsample& p);

/// Nearest-neighbour x2 then 1x1x1 conv, C -> C/2.
struct Upsample {
  Tensor weight, bias;
  static Upsample init(Index channels, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParameterList& out) const;
};

Tensor upsample(const Tensor& x, const Upsample& p);

/// He-normal conv weight C_out x (C_in/groups) x k x k x k.
Tensor he_conv_weight(Index out_channels, Index in_per_group, Index kernel, std::mt19937_64& rng);

}  // namespace mmseg
