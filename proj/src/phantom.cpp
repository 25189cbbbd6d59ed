#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "mmseg/data.hpp"

namespace mmseg {

namespace {

constexpr int kMaxAttempts = 1000;

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> radii;

  bool contains(double z, double y, double x) const {
    const double a = (z - center[0]) / radii[0];
    const double b = (y - center[1]) / radii[1];
    const double c = (x - center[2]) / radii[2];
    return a * a + b * b + c * c <= 1.0;
  }
};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

LabelVolume draw_labels(const PhantomSpec& spec, std::mt19937_64& rng) {
  std::uniform_int_distribution<Index> count(spec.min_tumors, spec.max_tumors);
  std::uniform_real_distribution<double> radius(spec.min_radius, spec.max_radius);
  std::uniform_real_distribution<double> fraction(spec.min_core_fraction, spec.max_core_fraction);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  LabelVolume label{spec.extents, std::vector<std::uint8_t>(static_cast<std::size_t>(voxel_count(spec.extents)), kBackground)};
  const Index n = count(rng);
  for (Index t = 0; t < n; ++t) {
    Ellipsoid tumor;
    for (int a = 0; a < 3; ++a) {
      tumor.radii[a] = radius(rng);
      const double extent = static_cast<double>(spec.extents[static_cast<std::size_t>(a)]);
      std::uniform_real_distribution<double> center(tumor.radii[a], extent - 1.0 - tumor.radii[a]);
      tumor.center[a] = center(rng);
    }
    const double f = fraction(rng);
    // Core offset: a point of the ball of radius 1 - f in tumor-normalized
    // coordinates keeps the scaled core inside the tumor.
    std::array<double, 3> offset{};
    do {
      for (auto& o : offset) o = unit(rng);
    } while (offset[0] * offset[0] + offset[1] * offset[1] + offset[2] * offset[2] > 1.0);
    Ellipsoid core;
    for (int a = 0; a < 3; ++a) {
      core.radii[a] = f * tumor.radii[a];
      core.center[a] = tumor.center[a] + (1.0 - f) * offset[static_cast<std::size_t>(a)] * tumor.radii[a];
    }
    for (Index z = 0; z < spec.extents[0]; ++z)
      for (Index y = 0; y < spec.extents[1]; ++y)
        for (Index x = 0; x < spec.extents[2]; ++x) {
          auto& v = label.labels[static_cast<std::size_t>((z * spec.extents[1] + y) * spec.extents[2] + x)];
          const double pz = static_cast<double>(z), py = static_cast<double>(y), px = static_cast<double>(x);
          if (core.contains(pz, py, px)) v = kCore;
          else if (v != kCore && tumor.contains(pz, py, px)) v = kShell;
        }
  }
  return label;
}

bool has_all_classes(const LabelVolume& label) {
  std::array<bool, 3> seen{};
  for (std::uint8_t l : label.labels) seen[l] = true;
  return seen[0] && seen[1] && seen[2];
}

}  // namespace

void PhantomSpec::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("PhantomSpec: " + msg); };
  for (Index e : extents) {
    if (e < 8) fail("extents must be >= 8 per axis");
  }
  if (num_samples < 1) fail("num_samples must be >= 1");
  if (min_tumors < 1 || max_tumors < min_tumors) fail("tumor count range must satisfy 1 <= min <= max");
  if (!(min_radius >= 1.0) || max_radius < min_radius) fail("radius range must satisfy 1 <= min <= max");
  for (Index e : extents) {
    if (2.0 * max_radius > static_cast<double>(e - 1)) {
      fail("max_radius " + std::to_string(max_radius) + " does not fit extent " + std::to_string(e));
    }
  }
  if (!(min_core_fraction > 0.0) || max_core_fraction < min_core_fraction || !(max_core_fraction < 1.0)) {
    fail("core fraction range must satisfy 0 < min <= max < 1");
  }
  if (min_core_fraction * min_radius < 0.5) fail("smallest core (min_core_fraction * min_radius) is below half a voxel");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  for (double s : spacing) {
    if (!(s > 0.0)) fail("spacing must be positive");
  }
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  j = nlohmann::json{{"extents", s.extents},
                     {"num_samples", s.num_samples},
                     {"seed", s.seed},
                     {"min_tumors", s.min_tumors},
                     {"max_tumors", s.max_tumors},
                     {"min_radius", s.min_radius},
                     {"max_radius", s.max_radius},
                     {"min_core_fraction", s.min_core_fraction},
                     {"max_core_fraction", s.max_core_fraction},
                     {"noise_sigma", s.noise_sigma},
                     {"conjunction", s.conjunction},
                     {"spacing", s.spacing}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
  const PhantomSpec d;
  s.extents = j.value("extents", d.extents);
  s.num_samples = j.value("num_samples", d.num_samples);
  s.seed = j.value("seed", d.seed);
  s.min_tumors = j.value("min_tumors", d.min_tumors);
  s.max_tumors = j.value("max_tumors", d.max_tumors);
  s.min_radius = j.value("min_radius", d.min_radius);
  s.max_radius = j.value("max_radius", d.max_radius);
  s.min_core_fraction = j.value("min_core_fraction", d.min_core_fraction);
  s.max_core_fraction = j.value("max_core_fraction", d.max_core_fraction);
  s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  s.conjunction = j.value("conjunction", d.conjunction);
  s.spacing = j.value("spacing", d.spacing);
}

RenderingTable rendering_table(bool conjunction) {
  RenderingTable t;
  t[0] = conjunction ? std::array<double, 3>{0.1, 0.7, 0.7} : std::array<double, 3>{0.1, 0.55, 0.85};
  t[1] = {0.1, 0.1, 0.8};
  return t;
}

std::uint64_t sample_seed(std::uint64_t seed, Index i) {
  return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(i));
}

ModalityVolumeSet generate_sample(const PhantomSpec& spec, Index i) {
  spec.validate();
  std::mt19937_64 rng(sample_seed(spec.seed, i));
  LabelVolume label;
  int attempt = 0;
  do {
    if (++attempt > kMaxAttempts) {
      throw std::invalid_argument("PhantomSpec: could not place a tumor showing all classes after " +
                                  std::to_string(kMaxAttempts) + " attempts");
    }
    label = draw_labels(spec, rng);
  } while (!has_all_classes(label));

  const RenderingTable table = rendering_table(spec.conjunction);
  std::normal_distribution<double> noise(0.0, 1.0);
  ModalityVolumeSet out;
  out.spacing = spec.spacing;
  out.num_classes = 3;
  out.sample_id = "phantom_" + std::string(4 - std::min<std::size_t>(4, std::to_string(i).size()), '0') + std::to_string(i);
  const Index V = voxel_count(spec.extents);
  for (std::size_t m = 0; m < table.size(); ++m) {
    Tensor t = Tensor::zeros({1, spec.extents[0], spec.extents[1], spec.extents[2]});
    Array& v = t.mutable_values();
    for (Index k = 0; k < V; ++k) {
      const double mean = table[m][label.labels[static_cast<std::size_t>(k)]];
      const double value = std::clamp(mean + spec.noise_sigma * noise(rng), 0.0, 1.0);
      v[k] = static_cast<double>(static_cast<float>(value));
    }
    out.modalities.push_back(std::move(t));
  }
  out.label = std::move(label);
  return out;
}

std::vector<ModalityVolumeSet> generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  std::vector<ModalityVolumeSet> out;
  for (Index i = 0; i < spec.num_samples; ++i) out.push_back(generate_sample(spec, i));
  return out;
}

}  // namespace mmseg
