#include "mmseg/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mmseg/ops.hpp"

namespace mmseg {

namespace {

void check_features(const std::vector<Tensor>& features) {
  if (features.empty()) throw std::invalid_argument("fusion: no modality features");
  const Shape& s = features.front().shape();
  if (s.size() != 4) throw std::invalid_argument("fusion: features must be C x D x H x W, got " + to_string(s));
  for (std::size_t m = 1; m < features.size(); ++m) {
    if (features[m].shape() != s) {
      throw std::invalid_argument("fusion: modality " + std::to_string(m) + " has shape " +
                                  to_string(features[m].shape()) + ", modality 0 has " + to_string(s));
    }
  }
}

Tensor two_layer(const Tensor& pooled, const Tensor& w1, const Tensor& w2) {
  if (pooled.numel() != w1.dim(1)) {
    throw std::invalid_argument("fusion: pooled descriptor has " + std::to_string(pooled.numel()) +
                                " entries, projection expects " + std::to_string(w1.dim(1)));
  }
  const Tensor column = reshape(pooled, {pooled.numel(), 1});
  const Tensor logits = matmul(w2, relu(matmul(w1, column)));
  return reshape(logits, {w2.dim(0)});
}

}  // namespace

Index FusionParams::hidden_width(Index modalities, Index channels) {
  return std::max<Index>(modalities * channels / 4, 8);
}

FusionParams FusionParams::init(Index modalities, Index channels, std::mt19937_64& rng) {
  const Index in = modalities * channels;
  const Index hidden = hidden_width(modalities, channels);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  FusionParams p;
  p.w1_mod = Tensor::uniform({hidden, in}, rng, -bound, bound, true);
  p.w2_mod = Tensor::zeros({modalities, hidden}, true);
  p.w1_ch = Tensor::uniform({hidden, in}, rng, -bound, bound, true);
  p.w2_ch = Tensor::zeros({channels, hidden}, true);
  return p;
}

void FusionParams::collect(const std::string& prefix, ParameterList& out) const {
  add_parameter(out, prefix, "w1_mod", w1_mod);
  add_parameter(out, prefix, "w2_mod", w2_mod);
  add_parameter(out, prefix, "w1_ch", w1_ch);
  add_parameter(out, prefix, "w2_ch", w2_ch);
}

Tensor concat_pool(const std::vector<Tensor>& features) {
  check_features(features);
  std::vector<Tensor> pooled;
  pooled.reserve(features.size());
  for (const auto& x : features) pooled.push_back(mean_trailing(x, 1));
  return concat(pooled);
}

Tensor modality_attention(const Tensor& pooled, const FusionParams& p) {
  return softmax(two_layer(pooled, p.w1_mod, p.w2_mod), 0);
}

Tensor channel_attention(const Tensor& pooled, const FusionParams& p) {
  return sigmoid(two_layer(pooled, p.w1_ch, p.w2_ch));
}

FusionWeights fusion_weights(const std::vector<Tensor>& features, const FusionParams& p) {
  check_features(features);
  if (static_cast<Index>(features.size()) != p.modalities() || features.front().dim(0) != p.channels()) {
    throw std::invalid_argument("fusion: parameters expect " + std::to_string(p.modalities()) + " modalities of " +
                                std::to_string(p.channels()) + " channels");
  }
  const Tensor pooled = concat_pool(features);
  return {modality_attention(pooled, p), channel_attention(pooled, p)};
}

std::vector<Tensor> apply_fusion_weights(const std::vector<Tensor>& features, const FusionWeights& w) {
  check_features(features);
  const Index c = features.front().dim(0);
  if (w.a_modality.numel() != static_cast<Index>(features.size()) || w.a_channel.numel() != c) {
    throw std::invalid_argument("fusion: weight lengths do not match the features");
  }
  const Tensor channel_gate = reshape(w.a_channel, {c, 1, 1, 1});
  std::vector<Tensor> out;
  out.reserve(features.size());
  for (std::size_t m = 0; m < features.size(); ++m) {
    const auto mi = static_cast<Index>(m);
    out.push_back(mul(slice(w.a_modality, mi, mi + 1), mul(channel_gate, features[m])));
  }
  return out;
}

std::vector<Tensor> bi_level_fuse(const std::vector<Tensor>& features, const FusionParams& p) {
  return apply_fusion_weights(features, fusion_weights(features, p));
}

Tensor merge_modalities(const std::vector<Tensor>& features) {
  check_features(features);
  Tensor total = features.front();
  for (std::size_t m = 1; m < features.size(); ++m) total = add(total, features[m]);
  return total;
}

}  // namespace mmseg
