#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmseg/blocks.hpp"
#include "mmseg/fusion.hpp"
#include "mmseg/parameters.hpp"
#include "mmseg/volume.hpp"

namespace mmseg {

enum class FusionMode { kBiLevel, kSum };

std::string to_string(FusionMode mode);
FusionMode fusion_mode_from_string(const std::string& s);

struct NetConfig {
  Index modalities = 2;
  Index base_channels = 8;
  Index levels = 3;
  Index num_classes = 3;
  Index state_dim = 8;
  Index scan_directions = 6;  // 2, 6 or 12
  Extents patch{16, 16, 16};
  bool mamba = true;  // Mamba blocks in the encoders and at the bottleneck
  FusionMode fusion = FusionMode::kBiLevel;

  void validate() const;
  std::vector<ScanDirection> directions() const;
  Index channels_at(Index level) const { return base_channels << level; }
  bool operator==(const NetConfig&) const = default;
};

void to_json(nlohmann::json& j, const NetConfig& c);
void from_json(const nlohmann::json& j, NetConfig& c);
/// Human-readable list of fields that differ, e.g. "modalities: expected 2, actual 3".
std::string describe_config_diff(const NetConfig& expected, const NetConfig& actual);

struct EncoderLevel {
  std::optional<MambaBlock> mamba;
  ResBlock res;
  std::optional<Downsample> down;
};

struct Encoder {
  Tensor stem_weight, stem_bias;
  std::vector<EncoderLevel> levels;
};

struct DecoderLevel {
  Upsample up;  // from level + 1
  ResBlock res;  // concat(up, skip) -> level channels
};

struct SegModel {
  NetConfig config;
  std::vector<Encoder> encoders;     // one per modality
  std::vector<FusionParams> fusion;  // one per level, bi-level mode only
  std::optional<MambaBlock> bottleneck;
  std::vector<DecoderLevel> decoder;  // decoder[l] produces level l
  Tensor head_weight, head_bias;

  static SegModel init(const NetConfig& config, std::uint64_t seed);
  /// Stable, name-ordered-by-construction parameter list.
  ParameterList parameters() const;
};

Index count_params(const SegModel& model);

/// Per-level features of modality `m`; input is 1 x D x H x W.
std::vector<Tensor> encode_modality(const SegModel& model, const Tensor& x, Index m);
/// Fused skip feature per level.
std::vector<Tensor> fuse_levels(const SegModel& model, const std::vector<std::vector<Tensor>>& per_modality);
/// Class logits num_classes x D x H x W.
Tensor forward(const SegModel& model, const std::vector<Tensor>& inputs);
Tensor forward(const SegModel& model, const ModalityVolumeSet& sample);

/// Voxelwise argmax; ties go to the lowest class index.
LabelVolume predict_mask(const Tensor& logits);

/// Binary container: magic, config JSON, named little-endian float64 arrays,
/// FNV-1a 64 checksum of everything before it.
void save_model(const SegModel& model, const std::filesystem::path& path);
SegModel load_model(const std::filesystem::path& path);
/// Loads and requires the stored config to equal `expected`.
SegModel load_model(const std::filesystem::path& path, const NetConfig& expected);

}  // namespace mmseg
