#pragma once

#include <array>
#include <string>
#include <vector>

#include "mmseg/ssm.hpp"
#include "mmseg/tensor.hpp"

namespace mmseg {

enum class Axis : int { kDepth = 0, kHeight = 1, kWidth = 2 };

/// Raster traversal of a volume. `axis_order` lists axes from slowest to
/// fastest varying; `reversed` walks the same raster backwards.
struct ScanDirection {
  std::array<Axis, 3> axis_order{Axis::kDepth, Axis::kHeight, Axis::kWidth};
  bool reversed = false;

  std::string name() const;
  bool operator==(const ScanDirection&) const = default;
};

/// D-, H- and W-major rasters (cyclic axis orders), each forward and backward.
std::vector<ScanDirection> default_directions();
/// All six axis orders, forward and backward: closed under every axis
/// permutation of the volume.
std::vector<ScanDirection> all_axis_directions();
/// Forward and backward D-major raster only.
std::vector<ScanDirection> bidirectional_directions();

/// Flat voxel index (row-major D x H x W) visited at each step.
std::vector<Index> traversal_order(Index depth, Index height, Index width, const ScanDirection& dir);

/// C x D x H x W -> C x L with L = D*H*W.
Tensor serialize(const Tensor& volume, const ScanDirection& dir);
/// Inverse of serialize for the given extents.
Tensor deserialize(const Tensor& sequence, const ScanDirection& dir, Index depth, Index height, Index width);

/// Mean over directions of deserialize(selective_scan(serialize(x, dir))).
/// Parameters are shared across directions.
Tensor ss3d(const Tensor& volume, const SSMParams& ssm, const std::vector<ScanDirection>& dirs);

}  // namespace mmseg
