#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmseg/volume.hpp"

namespace mmseg {

enum PhantomClass : std::uint8_t { kBackground = 0, kShell = 1, kCore = 2 };

struct PhantomSpec {
  Extents extents{16, 16, 16};
  Index num_samples = 20;
  std::uint64_t seed = 0;
  Index min_tumors = 1;
  Index max_tumors = 1;
  /// Tumor semi-axes in voxels.
  double min_radius = 4.0;
  double max_radius = 6.5;
  /// Core semi-axes as a fraction of the enclosing tumor's.
  double min_core_fraction = 0.45;
  double max_core_fraction = 0.7;
  double noise_sigma = 0.1;
  /// When set, modality 0 renders shell and core alike, so telling them
  /// apart needs modality 1.
  bool conjunction = true;
  Spacing spacing{1.0, 1.0, 1.0};

  void validate() const;
  bool operator==(const PhantomSpec&) const = default;
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

/// Noise-free mean intensity of class k in modality m: table[m][k].
using RenderingTable = std::array<std::array<double, 3>, 2>;
RenderingTable rendering_table(bool conjunction);

/// Seed for sample i, independent of how many samples are generated.
std::uint64_t sample_seed(std::uint64_t seed, Index i);
ModalityVolumeSet generate_sample(const PhantomSpec& spec, Index i);
std::vector<ModalityVolumeSet> generate_phantom(const PhantomSpec& spec);

/// Directory layout: header.json, modality_<m>.f32 (little-endian float32,
/// width fastest), label.u8.
void write_volume(const ModalityVolumeSet& sample, const std::filesystem::path& dir);
ModalityVolumeSet read_volume(const std::filesystem::path& dir);

/// One sample directory per entry, named by sample id.
void write_dataset(const std::vector<ModalityVolumeSet>& data, const std::filesystem::path& dir);
/// Every subdirectory holding a header.json, in name order.
std::vector<ModalityVolumeSet> read_dataset(const std::filesystem::path& dir);

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct DatasetSplit {
  std::vector<std::size_t> train, val, test;  // indices into the dataset
};

/// Seeded permutation; val and test get floor(n * fraction), train the rest.
DatasetSplit split(std::size_t dataset_size, const SplitFractions& fractions, std::uint64_t seed);

}  // namespace mmseg
