#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mmseg/tensor.hpp"

namespace mmseg {

/// Spatial extents in (depth, height, width) order.
using Extents = std::array<Index, 3>;
/// Voxel spacing in mm, (depth, height, width) order.
using Spacing = std::array<double, 3>;

inline Index voxel_count(const Extents& e) { return e[0] * e[1] * e[2]; }

/// Integer label per voxel, row-major with width fastest.
struct LabelVolume {
  Extents extents{0, 0, 0};
  std::vector<std::uint8_t> labels;

  std::uint8_t at(Index z, Index y, Index x) const {
    return labels[static_cast<std::size_t>((z * extents[1] + y) * extents[2] + x)];
  }
  bool operator==(const LabelVolume&) const = default;
};

/// One aligned multi-modal sample: M intensity volumes (each 1 x D x H x W,
/// values in [0, 1]) and a label mask.
struct ModalityVolumeSet {
  std::vector<Tensor> modalities;
  LabelVolume label;
  Spacing spacing{1.0, 1.0, 1.0};
  Index num_classes = 3;
  std::string sample_id;

  Extents extents() const { return label.extents; }
  Index modality_count() const { return static_cast<Index>(modalities.size()); }
};

}  // namespace mmseg
