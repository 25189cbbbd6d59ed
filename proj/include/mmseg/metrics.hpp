#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmseg/volume.hpp"

namespace mmseg {

struct BinaryMask {
  Extents extents{0, 0, 0};
  std::vector<std::uint8_t> voxels;  // 0 or 1

  static BinaryMask empty(const Extents& e);
  Index count() const;
  void set(Index z, Index y, Index x, bool on = true) {
    voxels[static_cast<std::size_t>((z * extents[1] + y) * extents[2] + x)] = on ? 1 : 0;
  }
};

/// Voxels whose label is in `labels`.
BinaryMask binarize(const LabelVolume& volume, const std::vector<std::uint8_t>& labels);

/// 2|P and G| / (|P| + |G|); two empty masks score 1.
double dice(const BinaryMask& pred, const BinaryMask& truth);

/// Squared Euclidean distance (mm^2) from every voxel center to the nearest
/// voxel of `mask`; infinity when the mask is empty.
std::vector<double> squared_distance_transform(const BinaryMask& mask, const Spacing& spacing);

/// Symmetric Hausdorff distance in mm over voxel centers. nullopt when either
/// mask is empty.
std::optional<double> hausdorff(const BinaryMask& pred, const BinaryMask& truth, const Spacing& spacing = {1, 1, 1});
/// Max of the two directed q-th percentiles (q in [0, 100], linear
/// interpolation); q = 100 equals hausdorff().
std::optional<double> hausdorff_percentile(const BinaryMask& pred, const BinaryMask& truth, const Spacing& spacing,
                                           double q);

/// An evaluation class: the union of one or more labels.
struct ClassSpec {
  std::string name;
  std::vector<std::uint8_t> labels;
};

/// Foreground classes 1..num_classes-1, each on its own.
std::vector<ClassSpec> default_classes(Index num_classes);
std::vector<ClassSpec> classes_from_json(const nlohmann::json& j);

struct ClassMetrics {
  std::string name;
  double dice = 0.0;
  std::optional<double> hausdorff;  // mm
};

struct MetricReport {
  std::vector<ClassMetrics> classes;
  double mean_dice = 0.0;
  std::optional<double> mean_hausdorff;  // over classes with a defined distance
  Index hausdorff_undefined = 0;
};

MetricReport evaluate(const LabelVolume& pred, const LabelVolume& truth, const std::vector<ClassSpec>& classes,
                      Index num_classes, const Spacing& spacing = {1, 1, 1});
/// Class-wise averages over several reports that share a class list.
MetricReport average_reports(const std::vector<MetricReport>& reports);

nlohmann::json to_json(const MetricReport& report);
/// Rows of (method, report) laid out as Dice (%) columns then Hausdorff (mm)
/// columns, each ending in Mean.
std::string render_table(const std::vector<std::pair<std::string, MetricReport>>& rows);

}  // namespace mmseg
