#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "mmseg/metrics.hpp"

using namespace mmseg;

namespace {

BinaryMask random_mask(const Extents& e, std::mt19937_64& rng, double p) {
  std::bernoulli_distribution on(p);
  BinaryMask m = BinaryMask::empty(e);
  for (auto& v : m.voxels) v = on(rng) ? 1 : 0;
  return m;
}

BinaryMask mask_from_bits(std::uint32_t bits, const Extents& e) {
  BinaryMask m = BinaryMask::empty(e);
  for (std::size_t i = 0; i < m.voxels.size(); ++i) m.voxels[i] = (bits >> i) & 1u;
  return m;
}

// All-pairs symmetric Hausdorff.
std::optional<double> brute_hausdorff(const BinaryMask& a, const BinaryMask& b, const Spacing& s) {
  std::vector<std::array<double, 3>> pa, pb;
  const Extents& e = a.extents;
  for (Index z = 0; z < e[0]; ++z)
    for (Index y = 0; y < e[1]; ++y)
      for (Index x = 0; x < e[2]; ++x) {
        const auto i = static_cast<std::size_t>((z * e[1] + y) * e[2] + x);
        const std::array<double, 3> p{z * s[0], y * s[1], x * s[2]};
        if (a.voxels[i]) pa.push_back(p);
        if (b.voxels[i]) pb.push_back(p);
      }
  if (pa.empty() || pb.empty()) return std::nullopt;
  auto directed = [](const auto& from, const auto& to) {
    double worst = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) {
        const double d = std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                                   (p[2] - q[2]) * (p[2] - q[2]));
        best = std::min(best, d);
      }
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(directed(pa, pb), directed(pb, pa));
}

double brute_dice(const BinaryMask& a, const BinaryMask& b) {
  double inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.voxels.size(); ++i) {
    inter += a.voxels[i] && b.voxels[i];
    na += a.voxels[i];
    nb += b.voxels[i];
  }
  return na + nb == 0 ? 1.0 : 2 * inter / (na + nb);
}

LabelVolume random_labels(const Extents& e, std::mt19937_64& rng, int classes) {
  std::uniform_int_distribution<int> d(0, classes - 1);
  LabelVolume v;
  v.extents = e;
  v.labels.resize(static_cast<std::size_t>(voxel_count(e)));
  for (auto& l : v.labels) l = static_cast<std::uint8_t>(d(rng));
  return v;
}

}  // namespace

TEST(Dice, Examples) {
  const Extents e{1, 1, 8};
  BinaryMask p = BinaryMask::empty(e), g = BinaryMask::empty(e);
  for (Index x : {0, 1, 2, 3}) p.set(0, 0, x);
  for (Index x : {1, 2, 3, 4, 5, 6}) g.set(0, 0, x);
  EXPECT_DOUBLE_EQ(dice(p, g), 0.6);
  EXPECT_EQ(dice(p, p), 1.0);
  BinaryMask q = BinaryMask::empty(e);
  q.set(0, 0, 7);
  EXPECT_EQ(dice(p, q), 0.0);
  EXPECT_EQ(dice(BinaryMask::empty(e), BinaryMask::empty(e)), 1.0);
  EXPECT_EQ(dice(BinaryMask::empty(e), q), 0.0);
}

TEST(Dice, ExtentMismatchThrows) {
  EXPECT_THROW(dice(BinaryMask::empty({2, 2, 2}), BinaryMask::empty({2, 2, 3})), std::invalid_argument);
}

TEST(Dice, SymmetricBoundedAndMatchesCounting) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const BinaryMask a = random_mask({4, 5, 3}, rng, 0.3), b = random_mask({4, 5, 3}, rng, 0.5);
    const double d = dice(a, b);
    EXPECT_EQ(d, dice(b, a));
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
    EXPECT_NEAR(d, brute_dice(a, b), 1e-15);
  }
}

TEST(Dice, AddingTruePositiveNeverLowersScoreExhaustive2Cubed) {
  const Extents e{2, 2, 2};
  for (std::uint32_t pb = 0; pb < 256; ++pb)
    for (std::uint32_t gb = 0; gb < 256; ++gb) {
      const BinaryMask p = mask_from_bits(pb, e), g = mask_from_bits(gb, e);
      const double base = dice(p, g);
      for (std::uint32_t v = 0; v < 8; ++v) {
        if (!((gb >> v) & 1u) || ((pb >> v) & 1u)) continue;
        ASSERT_GE(dice(mask_from_bits(pb | (1u << v), e), g), base);
      }
    }
}

TEST(Dice, AddingTruePositiveNeverLowersScoreOn3Cubed) {
  std::mt19937_64 rng(2);
  const Extents e{3, 3, 3};
  for (int trial = 0; trial < 300; ++trial) {
    const BinaryMask p = random_mask(e, rng, 0.3), g = random_mask(e, rng, 0.4);
    const double base = dice(p, g);
    for (std::size_t v = 0; v < 27; ++v) {
      if (!g.voxels[v] || p.voxels[v]) continue;
      BinaryMask q = p;
      q.voxels[v] = 1;
      ASSERT_GE(dice(q, g), base);
    }
  }
}

TEST(Hausdorff, Examples) {
  const Extents e{1, 5, 11};
  BinaryMask p = BinaryMask::empty(e), g = BinaryMask::empty(e);
  p.set(0, 0, 0);
  EXPECT_EQ(hausdorff(p, p).value(), 0.0);
  g.set(0, 4, 3);
  EXPECT_DOUBLE_EQ(hausdorff(p, g).value(), 5.0);
  BinaryMask h = BinaryMask::empty(e);
  h.set(0, 0, 0);
  h.set(0, 0, 10);
  EXPECT_DOUBLE_EQ(hausdorff(p, h).value(), 10.0);
  EXPECT_DOUBLE_EQ(hausdorff(h, p).value(), 10.0);
}

TEST(Hausdorff, UndefinedWhenEitherMaskIsEmpty) {
  const Extents e{2, 2, 2};
  BinaryMask p = BinaryMask::empty(e);
  p.set(1, 1, 1);
  EXPECT_FALSE(hausdorff(p, BinaryMask::empty(e)).has_value());
  EXPECT_FALSE(hausdorff(BinaryMask::empty(e), p).has_value());
  EXPECT_FALSE(hausdorff(BinaryMask::empty(e), BinaryMask::empty(e)).has_value());
}

TEST(Hausdorff, MatchesAllPairsOracleOn8Cubed) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> density(0.01, 0.5);
  for (int trial = 0; trial < 50; ++trial) {
    const BinaryMask a = random_mask({8, 8, 8}, rng, density(rng));
    const BinaryMask b = random_mask({8, 8, 8}, rng, density(rng));
    const auto want = brute_hausdorff(a, b, {1, 1, 1});
    const auto got = hausdorff(a, b);
    ASSERT_EQ(got.has_value(), want.has_value());
    if (want) {
      EXPECT_NEAR(*got, *want, 1e-12);
      EXPECT_EQ(*got, *hausdorff(b, a));
    }
  }
}

TEST(Hausdorff, AnisotropicSpacingMatchesOracle) {
  std::mt19937_64 rng(4);
  const Spacing s{2.5, 0.7, 1.3};
  for (int trial = 0; trial < 30; ++trial) {
    const BinaryMask a = random_mask({5, 6, 7}, rng, 0.05);
    const BinaryMask b = random_mask({5, 6, 7}, rng, 0.2);
    const auto want = brute_hausdorff(a, b, s);
    const auto got = hausdorff(a, b, s);
    ASSERT_EQ(got.has_value(), want.has_value());
    if (want) {
      EXPECT_NEAR(*got, *want, 1e-12);
    }
  }
}

TEST(Hausdorff, ZeroIffEqualExhaustive2Cubed) {
  const Extents e{2, 2, 2};
  for (std::uint32_t a = 1; a < 256; ++a)
    for (std::uint32_t b = 1; b < 256; ++b) {
      const double d = hausdorff(mask_from_bits(a, e), mask_from_bits(b, e)).value();
      ASSERT_EQ(d == 0.0, a == b) << a << " " << b;
    }
}

TEST(Hausdorff, ZeroIffEqualOnEverySingleVoxelEdit3Cubed) {
  // Any unequal pair differs in some voxel; every one-voxel edit of every
  // single-voxel and random base mask on 3^3 must give a positive distance.
  std::mt19937_64 rng(5);
  const Extents e{3, 3, 3};
  std::vector<BinaryMask> bases;
  for (std::size_t v = 0; v < 27; ++v) {
    BinaryMask m = BinaryMask::empty(e);
    m.voxels[v] = 1;
    bases.push_back(m);
  }
  for (int i = 0; i < 500; ++i) bases.push_back(random_mask(e, rng, 0.5));
  for (const auto& g : bases) {
    if (g.count() == 0) continue;
    ASSERT_EQ(hausdorff(g, g).value(), 0.0);
    for (std::size_t v = 0; v < 27; ++v) {
      BinaryMask p = g;
      p.voxels[v] ^= 1;
      if (p.count() == 0) continue;
      ASSERT_GT(hausdorff(p, g).value(), 0.0);
    }
  }
}

TEST(Hausdorff, PercentileIsBoundedByMaximum) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const BinaryMask a = random_mask({6, 6, 6}, rng, 0.2), b = random_mask({6, 6, 6}, rng, 0.2);
    const double full = hausdorff(a, b).value();
    EXPECT_DOUBLE_EQ(hausdorff_percentile(a, b, {1, 1, 1}, 100.0).value(), full);
    EXPECT_LE(hausdorff_percentile(a, b, {1, 1, 1}, 95.0).value(), full);
    EXPECT_LE(hausdorff_percentile(a, b, {1, 1, 1}, 50.0).value(), hausdorff_percentile(a, b, {1, 1, 1}, 95.0).value());
  }
}

TEST(DistanceTransform, EmptyMaskIsInfinite) {
  for (double d : squared_distance_transform(BinaryMask::empty({2, 3, 2}), {1, 1, 1})) EXPECT_TRUE(std::isinf(d));
}

TEST(Evaluate, PerfectPrediction) {
  std::mt19937_64 rng(7);
  const LabelVolume v = random_labels({6, 6, 6}, rng, 3);
  const MetricReport r = evaluate(v, v, default_classes(3), 3);
  ASSERT_EQ(r.classes.size(), 2u);
  for (const auto& c : r.classes) {
    EXPECT_EQ(c.dice, 1.0);
    EXPECT_EQ(c.hausdorff.value(), 0.0);
  }
  EXPECT_EQ(r.mean_dice, 1.0);
  EXPECT_EQ(r.mean_hausdorff.value(), 0.0);
}

TEST(Evaluate, CompositeClassMatchesUnionOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const LabelVolume p = random_labels({5, 5, 5}, rng, 4), g = random_labels({5, 5, 5}, rng, 4);
    const std::vector<ClassSpec> classes{{"whole", {1, 2, 3}}, {"core", {2, 3}}, {"enh", {3}}};
    const MetricReport r = evaluate(p, g, classes, 4);
    for (std::size_t c = 0; c < classes.size(); ++c) {
      BinaryMask pm = BinaryMask::empty(p.extents), gm = BinaryMask::empty(g.extents);
      for (std::size_t i = 0; i < p.labels.size(); ++i) {
        for (auto l : classes[c].labels) {
          if (p.labels[i] == l) pm.voxels[i] = 1;
          if (g.labels[i] == l) gm.voxels[i] = 1;
        }
      }
      EXPECT_NEAR(r.classes[c].dice, brute_dice(pm, gm), 1e-15);
      EXPECT_NEAR(r.classes[c].hausdorff.value(), brute_hausdorff(pm, gm, {1, 1, 1}).value(), 1e-12);
    }
    const double mean = (r.classes[0].dice + r.classes[1].dice + r.classes[2].dice) / 3.0;
    EXPECT_NEAR(r.mean_dice, mean, 1e-15);
  }
}

TEST(Evaluate, UndefinedHausdorffIsExcludedAndCounted) {
  LabelVolume g;
  g.extents = {2, 2, 2};
  g.labels = {0, 1, 1, 0, 0, 0, 0, 2};
  LabelVolume p = g;
  p.labels[7] = 0;  // class 2 missing from the prediction
  const MetricReport r = evaluate(p, g, default_classes(3), 3);
  EXPECT_EQ(r.hausdorff_undefined, 1);
  EXPECT_FALSE(r.classes[1].hausdorff.has_value());
  EXPECT_EQ(r.classes[1].dice, 0.0);
  EXPECT_EQ(r.mean_hausdorff.value(), 0.0);
  EXPECT_DOUBLE_EQ(r.mean_dice, 0.5);
  const nlohmann::json j = to_json(r);
  EXPECT_TRUE(j["classes"][1]["hausdorff_mm"].is_null());
  EXPECT_EQ(j["hausdorff_undefined"], 1);
}

TEST(Evaluate, UnknownLabelThrows) {
  LabelVolume g;
  g.extents = {1, 1, 2};
  g.labels = {0, 1};
  LabelVolume p = g;
  p.labels[1] = 5;
  EXPECT_THROW(evaluate(p, g, default_classes(3), 3), std::invalid_argument);
  EXPECT_THROW(evaluate(g, p, default_classes(3), 3), std::invalid_argument);
  LabelVolume q = g;
  q.extents = {1, 2, 1};
  EXPECT_THROW(evaluate(q, g, default_classes(3), 3), std::invalid_argument);
}

TEST(Evaluate, ClassesFromJson) {
  const auto classes = classes_from_json(nlohmann::json::parse(R"({"classes": [{"name": "WT", "labels": [1, 2]}]})"));
  ASSERT_EQ(classes.size(), 1u);
  EXPECT_EQ(classes[0].name, "WT");
  EXPECT_EQ(classes[0].labels, (std::vector<std::uint8_t>{1, 2}));
  EXPECT_THROW(classes_from_json(nlohmann::json::parse(R"({"classes": []})")), std::invalid_argument);
}

TEST(Evaluate, AverageAndTable) {
  std::mt19937_64 rng(9);
  std::vector<MetricReport> reports;
  for (int i = 0; i < 3; ++i) {
    const LabelVolume p = random_labels({4, 4, 4}, rng, 3), g = random_labels({4, 4, 4}, rng, 3);
    reports.push_back(evaluate(p, g, default_classes(3), 3));
  }
  const MetricReport mean = average_reports(reports);
  EXPECT_NEAR(mean.classes[0].dice, (reports[0].classes[0].dice + reports[1].classes[0].dice + reports[2].classes[0].dice) / 3,
              1e-15);
  const std::string table = render_table({{"method", mean}});
  EXPECT_NE(table.find("Dice Score"), std::string::npos);
  EXPECT_NE(table.find("Hausdorff Distance"), std::string::npos);
  EXPECT_NE(table.find("method"), std::string::npos);
}
