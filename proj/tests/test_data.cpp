#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "mmseg/data.hpp"

using namespace mmseg;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / ("mmseg_data_" + name);
  fs::remove_all(p);
  return p;
}

PhantomSpec small_spec(std::uint64_t seed = 7) {
  PhantomSpec s;
  s.num_samples = 4;
  s.seed = seed;
  return s;
}

void expect_same(const ModalityVolumeSet& a, const ModalityVolumeSet& b) {
  EXPECT_EQ(a.sample_id, b.sample_id);
  EXPECT_EQ(a.label, b.label);
  EXPECT_EQ(a.spacing, b.spacing);
  EXPECT_EQ(a.num_classes, b.num_classes);
  ASSERT_EQ(a.modalities.size(), b.modalities.size());
  for (std::size_t m = 0; m < a.modalities.size(); ++m) {
    EXPECT_EQ(a.modalities[m].shape(), b.modalities[m].shape());
    EXPECT_TRUE((a.modalities[m].values() == b.modalities[m].values()).all());
  }
}

}  // namespace

TEST(Phantom, DeterministicUnderSeed) {
  const auto a = generate_phantom(small_spec(7));
  const auto b = generate_phantom(small_spec(7));
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) expect_same(a[i], b[i]);
  const auto c = generate_phantom(small_spec(8));
  EXPECT_NE(a[0].label, c[0].label);
}

TEST(Phantom, SampleDoesNotDependOnDatasetSize) {
  PhantomSpec big = small_spec(3);
  big.num_samples = 9;
  const auto many = generate_phantom(big);
  expect_same(generate_sample(small_spec(3), 2), many[2]);
}

TEST(Phantom, EverySampleHasAllThreeClassesAndUnitRange) {
  PhantomSpec s = small_spec(11);
  s.num_samples = 20;
  for (const auto& sample : generate_phantom(s)) {
    std::set<int> labels(sample.label.labels.begin(), sample.label.labels.end());
    EXPECT_EQ(labels, (std::set<int>{0, 1, 2})) << sample.sample_id;
    ASSERT_EQ(sample.modalities.size(), 2u);
    for (const auto& m : sample.modalities) {
      EXPECT_EQ(m.shape(), (Shape{1, 16, 16, 16}));
      EXPECT_GE(m.values().minCoeff(), 0.0);
      EXPECT_LE(m.values().maxCoeff(), 1.0);
    }
  }
}

TEST(Phantom, NoiseFreeConjunctionRendering) {
  PhantomSpec s = small_spec(5);
  s.noise_sigma = 0.0;
  const RenderingTable table = rendering_table(true);
  const double background = table[0][kBackground];
  for (const auto& sample : generate_phantom(s)) {
    for (std::size_t i = 0; i < sample.label.labels.size(); ++i) {
      const auto idx = static_cast<Index>(i);
      const double m0 = sample.modalities[0].values()[idx];
      const double m1 = sample.modalities[1].values()[idx];
      if (sample.label.labels[i] == kShell) {
        EXPECT_GT(m0, background + 0.3);
        EXPECT_FLOAT_EQ(m1, table[1][kBackground]);
      }
      EXPECT_FLOAT_EQ(m0, table[0][sample.label.labels[i]]);
      EXPECT_FLOAT_EQ(m1, table[1][sample.label.labels[i]]);
    }
  }
}

TEST(Phantom, ConjunctionTableHidesShellFromEachModality) {
  const RenderingTable t = rendering_table(true);
  // Modality 1 alone: shell looks exactly like background.
  EXPECT_EQ(t[1][kShell], t[1][kBackground]);
  // Modality 0 alone: shell looks exactly like core.
  EXPECT_EQ(t[0][kShell], t[0][kCore]);
  // Jointly every class has a distinct signature.
  std::set<std::pair<double, double>> signatures;
  for (int k = 0; k < 3; ++k) signatures.insert({t[0][k], t[1][k]});
  EXPECT_EQ(signatures.size(), 3u);

  const RenderingTable plain = rendering_table(false);
  EXPECT_NE(plain[0][kShell], plain[0][kCore]);
}

TEST(Phantom, SpecValidation) {
  PhantomSpec s;
  s.extents = {16, 7, 16};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = PhantomSpec{};
  s.max_radius = 9.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = PhantomSpec{};
  s.min_radius = 7.0;
  s.max_radius = 5.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = PhantomSpec{};
  s.noise_sigma = -0.1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = PhantomSpec{};
  s.min_core_fraction = 0.01;
  s.max_core_fraction = 0.02;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  EXPECT_THROW(generate_phantom(s), std::invalid_argument);
}

TEST(Phantom, SpecJsonRoundTrip) {
  PhantomSpec s = small_spec(99);
  s.conjunction = false;
  s.spacing = {1.0, 0.5, 2.0};
  const nlohmann::json j = s;
  EXPECT_EQ(j.get<PhantomSpec>(), s);
}

TEST(VolumeIO, RoundTripIsExact) {
  const auto data = generate_phantom(small_spec(21));
  const fs::path dir = fresh_dir("roundtrip");
  write_dataset(data, dir);
  const auto back = read_dataset(dir);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) expect_same(back[i], data[i]);
}

TEST(VolumeIO, LabelOnlyVolume) {
  ModalityVolumeSet s = generate_sample(small_spec(22), 0);
  s.modalities.clear();
  const fs::path dir = fresh_dir("labels_only");
  write_volume(s, dir);
  expect_same(read_volume(dir), s);
}

TEST(VolumeIO, TruncatedPayloadNamesByteCounts) {
  const fs::path dir = fresh_dir("truncated");
  write_volume(generate_sample(small_spec(23), 0), dir);
  fs::resize_file(dir / "modality_1.f32", 100);
  try {
    read_volume(dir);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected 16384"), std::string::npos) << msg;
    EXPECT_NE(msg.find("got 100"), std::string::npos) << msg;
  }
}

TEST(VolumeIO, HeaderWithMoreModalitiesThanFiles) {
  const fs::path dir = fresh_dir("missing_modality");
  write_volume(generate_sample(small_spec(24), 0), dir);
  nlohmann::json header = nlohmann::json::parse(std::ifstream(dir / "header.json"));
  header["modalities"] = 3;
  std::ofstream(dir / "header.json") << header.dump();
  try {
    read_volume(dir);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("declares 3 modalities"), std::string::npos) << e.what();
  }
}

TEST(VolumeIO, UnknownDtypeAndBadLabels) {
  const fs::path dir = fresh_dir("dtype");
  write_volume(generate_sample(small_spec(25), 0), dir);
  nlohmann::json header = nlohmann::json::parse(std::ifstream(dir / "header.json"));
  header["dtype"] = "float16";
  std::ofstream(dir / "header.json") << header.dump();
  EXPECT_THROW(read_volume(dir), std::runtime_error);

  header["dtype"] = "float32";
  header["num_classes"] = 2;
  std::ofstream(dir / "header.json") << header.dump();
  EXPECT_THROW(read_volume(dir), std::runtime_error);
}

TEST(VolumeIO, EmptyOrMissingDatasetDirectory) {
  const fs::path dir = fresh_dir("empty");
  EXPECT_THROW(read_dataset(dir), std::runtime_error);
  fs::create_directories(dir);
  EXPECT_THROW(read_dataset(dir), std::runtime_error);
}

TEST(Split, PaperRatiosOnTenSamples) {
  const DatasetSplit s = split(10, {0.7, 0.1, 0.2}, 0);
  EXPECT_EQ(s.train.size(), 7u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_EQ(s.test.size(), 2u);
}

TEST(Split, DisjointExhaustiveAndDeterministic) {
  for (std::size_t n : {1u, 3u, 10u, 20u, 37u}) {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      const DatasetSplit s = split(n, {}, seed);
      std::vector<std::size_t> all;
      all.insert(all.end(), s.train.begin(), s.train.end());
      all.insert(all.end(), s.val.begin(), s.val.end());
      all.insert(all.end(), s.test.begin(), s.test.end());
      std::sort(all.begin(), all.end());
      ASSERT_EQ(all.size(), n);
      for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(all[i], i);
      const DatasetSplit again = split(n, {}, seed);
      EXPECT_EQ(again.train, s.train);
      EXPECT_EQ(again.test, s.test);
    }
  }
}

TEST(Split, SeedChangesMembershipNotSizes) {
  const DatasetSplit a = split(20, {}, 0);
  bool differs = false;
  for (std::uint64_t seed = 1; seed < 5; ++seed) {
    const DatasetSplit b = split(20, {}, seed);
    EXPECT_EQ(a.train.size(), b.train.size());
    EXPECT_EQ(a.val.size(), b.val.size());
    EXPECT_EQ(a.test.size(), b.test.size());
    differs = differs || a.test != b.test;
  }
  EXPECT_TRUE(differs);
}

TEST(Split, Errors) {
  EXPECT_THROW(split(0, {}, 0), std::invalid_argument);
  EXPECT_THROW(split(10, {0.7, 0.2, 0.2}, 0), std::invalid_argument);
  EXPECT_THROW(split(10, {1.1, -0.1, 0.0}, 0), std::invalid_argument);
}
