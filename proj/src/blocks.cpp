#include "mmseg/blocks.hpp"

#include <cmath>
#include <stdexcept>

#include "mmseg/ops.hpp"

namespace mmseg {

namespace {

Tensor linear_weight(Index out, Index in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return Tensor::uniform({out, in}, rng, -bound, bound, true);
}

Tensor zeros_param(Shape s) { return Tensor::zeros(std::move(s), true); }
Tensor ones_param(Shape s) { return Tensor::full(std::move(s), 1.0, true); }

void require_channels(const Tensor& x, Index c, const char* what) {
  if (x.rank() != 4 || x.dim(0) != c) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(c) +
                                " x D x H x W input, got " + to_string(x.shape()));
  }
}

}  // namespace

Tensor he_conv_weight(Index out_channels, Index in_per_group, Index kernel, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(in_per_group * kernel * kernel * kernel);
  return Tensor::randn({out_channels, in_per_group, kernel, kernel, kernel}, rng, std::sqrt(2.0 / fan_in), true);
}

Tensor pointwise_linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 4 || weight.rank() != 2 || weight.dim(1) != x.dim(0)) {
    throw std::invalid_argument("pointwise_linear: weight " + to_string(weight.shape()) + " cannot map input " +
                                to_string(x.shape()));
  }
  const Index c = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index out = weight.dim(0);
  Tensor y = matmul(weight, reshape(x, {c, d * h * w}));
  if (bias.defined()) y = add(y, reshape(bias, {out, 1}));
  return reshape(y, {out, d, h, w});
}

MambaBlock MambaBlock::init(Index channels, Index state_dim, const std::vector<ScanDirection>& directions,
                            std::mt19937_64& rng, Index expansion) {
  const Index hidden = channels * expansion;
  MambaBlock p;
  p.ln_gain = ones_param({channels});
  p.ln_bias = zeros_param({channels});
  p.path_a_weight = linear_weight(hidden, channels, rng);
  p.path_a_bias = zeros_param({hidden});
  p.path_b_weight = linear_weight(hidden, channels, rng);
  p.path_b_bias = zeros_param({hidden});
  p.dw_weight = he_conv_weight(hidden, 1, 3, rng);
  p.dw_bias = zeros_param({hidden});
  p.ssm = SSMParams::init(hidden, state_dim, rng);
  p.post_gain = ones_param({hidden});
  p.post_bias = zeros_param({hidden});
  p.out_weight = zeros_param({channels, hidden});
  p.out_bias = zeros_param({channels});
  p.directions = directions;
  return p;
}

void MambaBlock::collect(const std::string& prefix, ParameterList& out) const {
  add_parameter(out, prefix, "ln.gain", ln_gain, false);
  add_parameter(out, prefix, "ln.bias", ln_bias, false);
  add_parameter(out, prefix, "path_a.weight", path_a_weight);
  add_parameter(out, prefix, "path_a.bias", path_a_bias);
  add_parameter(out, prefix, "path_b.weight", path_b_weight);
  add_parameter(out, prefix, "path_b.bias", path_b_bias);
  add_parameter(out, prefix, "dwconv.weight", dw_weight);
  add_parameter(out, prefix, "dwconv.bias", dw_bias);
  add_parameter(out, prefix, "ssm.a_log", ssm.a_log);
  add_parameter(out, prefix, "ssm.delta_weight", ssm.delta_weight);
  add_parameter(out, prefix, "ssm.delta_bias", ssm.delta_bias);
  add_parameter(out, prefix, "ssm.b_weight", ssm.b_weight);
  add_parameter(out, prefix, "ssm.c_weight", ssm.c_weight);
  add_parameter(out, prefix, "post_ln.gain", post_gain, false);
  add_parameter(out, prefix, "post_ln.bias", post_bias, false);
  add_parameter(out, prefix, "out.weight", out_weight);
  add_parameter(out, prefix, "out.bias", out_bias);
}

Tensor mamba_block(const Tensor& x, const MambaBlock& p) {
  require_channels(x, p.channels(), "mamba_block");
  const Tensor normed = layer_norm(x, 0, p.ln_gain, p.ln_bias);
  const Tensor gate = silu(pointwise_linear(normed, p.path_a_weight, p.path_a_bias));
  Tensor scan = pointwise_linear(normed, p.path_b_weight, p.path_b_bias);
  scan = conv3d(scan, p.dw_weight, p.dw_bias, 1, 1, p.hidden());
  scan = ss3d(scan, p.ssm, p.directions);
  scan = layer_norm(scan, 0, p.post_gain, p.post_bias);
  return add(pointwise_linear(mul(gate, scan), p.out_weight, p.out_bias), x);
}

ResBlock ResBlock::init(Index in_channels, Index out_channels, std::mt19937_64& rng) {
  ResBlock p;
  p.conv1_weight = he_conv_weight(out_channels, in_channels, 3, rng);
  p.norm1_gain = ones_param({out_channels});
  p.norm1_bias = zeros_param({out_channels});
  p.conv2_weight = he_conv_weight(out_channels, out_channels, 3, rng);
  p.norm2_gain = ones_param({out_channels});
  p.norm2_bias = zeros_param({out_channels});
  if (in_channels != out_channels) p.shortcut_weight = he_conv_weight(out_channels, in_channels, 1, rng);
  return p;
}

void ResBlock::collect(const std::string& prefix, ParameterList& out) const {
  add_parameter(out, prefix, "conv1.weight", conv1_weight);
  add_parameter(out, prefix, "norm1.gain", norm1_gain, false);
  add_parameter(out, prefix, "norm1.bias", norm1_bias, false);
  add_parameter(out, prefix, "conv2.weight", conv2_weight);
  add_parameter(out, prefix, "norm2.gain", norm2_gain, false);
  add_parameter(out, prefix, "norm2.bias", norm2_bias, false);
  add_parameter(out, prefix, "shortcut.weight", shortcut_weight);
}

Tensor res_block(const Tensor& x, const ResBlock& p) {
  require_channels(x, p.in_channels(), "res_block");
  Tensor y = relu(instance_norm(conv3d(x, p.conv1_weight, Tensor(), 1, 1), p.norm1_gain, p.norm1_bias));
  y = relu(instance_norm(conv3d(y, p.conv2_weight, Tensor(), 1, 1), p.norm2_gain, p.norm2_bias));
  const Tensor shortcut = p.shortcut_weight.defined() ? conv3d(x, p.shortcut_weight, Tensor(), 1, 0) : x;
  return add(y, shortcut);
}

Downsample Downsample::init(Index channels, std::mt19937_64& rng) {
  return {he_conv_weight(2 * channels, channels, 3, rng), zeros_param({2 * channels})};
}

void Downsample::collect(const std::string& prefix, ParameterList& out) const {
  add_parameter(out, prefix, "weight", weight);
  add_parameter(out, prefix, "bias", bias);
}

Tensor downsample(const Tensor& x, const Downsample& p) {
  require_channels(x, p.weight.dim(1), "downsample");
  for (Index a = 1; a < 4; ++a) {
    if (x.dim(a) % 2 != 0) throw std::invalid_argument("downsample: odd spatial extent in " + to_string(x.shape()));
  }
  return conv3d(x, p.weight, p.bias, 2, 1);
}

Upsample Upsample::init(Index channels, std::mt19937_64& rng) {
  if (channels % 2 != 0) throw std::invalid_argument("upsample: channel count must be even");
  return {he_conv_weight(channels / 2, channels, 1, rng), zeros_param({channels / 2})};
}

void Upsample::collect(const std::string& prefix, ParameterList& out) const {
  add_parameter(out, prefix, "weight", weight);
  add_parameter(out, prefix, "bias", bias);
}

Tensor upsample(const Tensor& x, const Upsample& p) {
  require_channels(x, p.weight.dim(1), "upsample");
  // A 1x1x1 conv commutes with nearest upsampling; convolve at low resolution.
  return upsample_nearest2(conv3d(x, p.weight, p.bias, 1, 0));
}

}  // namespace mmseg
