#pragma once

#include <random>
#include <vector>

#include "mmseg/parameters.hpp"
#include "mmseg/tensor.hpp"

namespace mmseg {

/// Bi-level integration weights for M modalities of C channels each.
/// Projections act on the pooled M*C descriptor and carry no bias.
struct FusionParams {
  Tensor w1_mod;  // H_f x (M*C)
  Tensor w2_mod;  // M x H_f
  Tensor w1_ch;   // H_f x (M*C)
  Tensor w2_ch;   // C x H_f

  Index modalities() const { return w2_mod.dim(0); }
  Index channels() const { return w2_ch.dim(0); }
  Index hidden() const { return w1_mod.dim(0); }

  /// H_f = max(M*C/4, 8). Second-layer projections start at zero, giving
  /// uniform modality weights and 0.5 channel weights.
  static FusionParams init(Index modalities, Index channels, std::mt19937_64& rng);
  static Index hidden_width(Index modalities, Index channels);
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct FusionWeights {
  Tensor a_modality;  // M, sums to one
  Tensor a_channel;   // C, each in (0, 1)
};

/// Spatial mean of every (modality, channel), flattened modality-major.
Tensor concat_pool(const std::vector<Tensor>& features);
Tensor modality_attention(const Tensor& pooled, const FusionParams& p);
Tensor channel_attention(const Tensor& pooled, const FusionParams& p);
FusionWeights fusion_weights(const std::vector<Tensor>& features, const FusionParams& p);

/// out[m] = a_modality[m] * (a_channel (.) X[m]).
std::vector<Tensor> apply_fusion_weights(const std::vector<Tensor>& features, const FusionWeights& w);
std::vector<Tensor> bi_level_fuse(const std::vector<Tensor>& features, const FusionParams& p);

/// Elementwise sum over modalities.
Tensor merge_modalities(const std::vector<Tensor>& features);

}  // namespace mmseg
