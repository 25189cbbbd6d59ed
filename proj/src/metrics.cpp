#include "mmseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mmseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_same_extents(const Extents& a, const Extents& b) {
  if (a != b) {
    throw std::invalid_argument("mask extents differ: (" + std::to_string(a[0]) + ", " + std::to_string(a[1]) + ", " +
                                std::to_string(a[2]) + ") vs (" + std::to_string(b[0]) + ", " + std::to_string(b[1]) +
                                ", " + std::to_string(b[2]) + ")");
  }
}

// Lower envelope of parabolas: d[q] = min_p (s (q - p))^2 + f[p].
void distance_1d(const std::vector<double>& f, double s, std::vector<double>& d, std::vector<Index>& v,
                 std::vector<double>& z) {
  const Index n = static_cast<Index>(f.size());
  d.assign(f.size(), kInf);
  v.assign(f.size(), 0);
  z.assign(f.size() + 1, 0.0);
  Index k = -1;
  const double s2 = s * s;
  for (Index q = 0; q < n; ++q) {
    if (f[static_cast<std::size_t>(q)] == kInf) continue;
    const double fq = f[static_cast<std::size_t>(q)] + s2 * static_cast<double>(q * q);
    double cross = -kInf;
    while (k >= 0) {
      const Index p = v[static_cast<std::size_t>(k)];
      const double fp = f[static_cast<std::size_t>(p)] + s2 * static_cast<double>(p * p);
      cross = (fq - fp) / (2.0 * s2 * static_cast<double>(q - p));
      if (cross > z[static_cast<std::size_t>(k)]) break;
      --k;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = k == 0 ? -kInf : cross;
    z[static_cast<std::size_t>(k + 1)] = kInf;
  }
  if (k < 0) return;
  Index j = 0;
  for (Index q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j + 1)] < static_cast<double>(q)) ++j;
    const Index p = v[static_cast<std::size_t>(j)];
    const double dq = s * static_cast<double>(q - p);
    d[static_cast<std::size_t>(q)] = dq * dq + f[static_cast<std::size_t>(p)];
  }
}

std::vector<double> directed_distances(const BinaryMask& from, const std::vector<double>& dt_to) {
  std::vector<double> out;
  for (std::size_t i = 0; i < from.voxels.size(); ++i) {
    if (from.voxels[i]) out.push_back(std::sqrt(dt_to[i]));
  }
  return out;
}

double percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  if (q >= 100.0) return values.back();
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace

BinaryMask BinaryMask::empty(const Extents& e) {
  return {e, std::vector<std::uint8_t>(static_cast<std::size_t>(voxel_count(e)), 0)};
}

Index BinaryMask::count() const {
  return static_cast<Index>(std::count(voxels.begin(), voxels.end(), std::uint8_t{1}));
}

BinaryMask binarize(const LabelVolume& volume, const std::vector<std::uint8_t>& labels) {
  BinaryMask m = BinaryMask::empty(volume.extents);
  for (std::size_t i = 0; i < volume.labels.size(); ++i) {
    m.voxels[i] = std::find(labels.begin(), labels.end(), volume.labels[i]) != labels.end() ? 1 : 0;
  }
  return m;
}

double dice(const BinaryMask& pred, const BinaryMask& truth) {
  check_same_extents(pred.extents, truth.extents);
  Index p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.voxels.size(); ++i) {
    p += pred.voxels[i];
    g += truth.voxels[i];
    both += pred.voxels[i] & truth.voxels[i];
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::vector<double> squared_distance_transform(const BinaryMask& mask, const Spacing& spacing) {
  const Index D = mask.extents[0], H = mask.extents[1], W = mask.extents[2];
  std::vector<double> dt(mask.voxels.size());
  for (std::size_t i = 0; i < dt.size(); ++i) dt[i] = mask.voxels[i] ? 0.0 : kInf;

  std::vector<double> line, out, z;
  std::vector<Index> v;
  auto pass = [&](Index n, double s, auto index_of, Index outer_a, Index outer_b) {
    line.resize(static_cast<std::size_t>(n));
    for (Index a = 0; a < outer_a; ++a)
      for (Index b = 0; b < outer_b; ++b) {
        for (Index q = 0; q < n; ++q) line[static_cast<std::size_t>(q)] = dt[static_cast<std::size_t>(index_of(a, b, q))];
        distance_1d(line, s, out, v, z);
        for (Index q = 0; q < n; ++q) dt[static_cast<std::size_t>(index_of(a, b, q))] = out[static_cast<std::size_t>(q)];
      }
  };
  pass(W, spacing[2], [&](Index z0, Index y, Index x) { return (z0 * H + y) * W + x; }, D, H);
  pass(H, spacing[1], [&](Index z0, Index x, Index y) { return (z0 * H + y) * W + x; }, D, W);
  pass(D, spacing[0], [&](Index y, Index x, Index z0) { return (z0 * H + y) * W + x; }, H, W);
  return dt;
}

std::optional<double> hausdorff_percentile(const BinaryMask& pred, const BinaryMask& truth, const Spacing& spacing,
                                           double q) {
  check_same_extents(pred.extents, truth.extents);
  if (q < 0.0 || q > 100.0) throw std::invalid_argument("hausdorff percentile must lie in [0, 100]");
  if (pred.count() == 0 || truth.count() == 0) return std::nullopt;
  const auto to_truth = directed_distances(pred, squared_distance_transform(truth, spacing));
  const auto to_pred = directed_distances(truth, squared_distance_transform(pred, spacing));
  return std::max(percentile(to_truth, q), percentile(to_pred, q));
}

std::optional<double> hausdorff(const BinaryMask& pred, const BinaryMask& truth, const Spacing& spacing) {
  return hausdorff_percentile(pred, truth, spacing, 100.0);
}

std::vector<ClassSpec> default_classes(Index num_classes) {
  std::vector<ClassSpec> out;
  for (Index k = 1; k < num_classes; ++k) out.push_back({"class" + std::to_string(k), {static_cast<std::uint8_t>(k)}});
  return out;
}

std::vector<ClassSpec> classes_from_json(const nlohmann::json& j) {
  std::vector<ClassSpec> out;
  for (const auto& item : j.at("classes")) {
    ClassSpec c;
    c.name = item.at("name").get<std::string>();
    for (int label : item.at("labels")) {
      if (label < 0 || label > 255) throw std::invalid_argument("class label out of range: " + std::to_string(label));
      c.labels.push_back(static_cast<std::uint8_t>(label));
    }
    out.push_back(std::move(c));
  }
  if (out.empty()) throw std::invalid_argument("class map defines no classes");
  return out;
}

MetricReport evaluate(const LabelVolume& pred, const LabelVolume& truth, const std::vector<ClassSpec>& classes,
                      Index num_classes, const Spacing& spacing) {
  check_same_extents(pred.extents, truth.extents);
  auto check_labels = [num_classes](const LabelVolume& v, const char* which) {
    for (std::uint8_t l : v.labels) {
      if (l >= num_classes) {
        throw std::invalid_argument(std::string("unknown label ") + std::to_string(l) + " in " + which + " volume (" +
                                    std::to_string(num_classes) + " classes)");
      }
    }
  };
  check_labels(pred, "predicted");
  check_labels(truth, "ground-truth");
  if (classes.empty()) throw std::invalid_argument("evaluate: no classes");

  MetricReport r;
  double hd_total = 0.0;
  Index hd_defined = 0;
  for (const auto& c : classes) {
    const BinaryMask p = binarize(pred, c.labels);
    const BinaryMask g = binarize(truth, c.labels);
    ClassMetrics m{c.name, dice(p, g), hausdorff(p, g, spacing)};
    r.mean_dice += m.dice;
    if (m.hausdorff) {
      hd_total += *m.hausdorff;
      ++hd_defined;
    } else {
      ++r.hausdorff_undefined;
    }
    r.classes.push_back(std::move(m));
  }
  r.mean_dice /= static_cast<double>(classes.size());
  if (hd_defined > 0) r.mean_hausdorff = hd_total / static_cast<double>(hd_defined);
  return r;
}

MetricReport average_reports(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("average_reports: no reports");
  const std::size_t k = reports.front().classes.size();
  MetricReport out;
  double hd_total = 0.0;
  Index hd_classes = 0;
  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics m{reports.front().classes[c].name, 0.0, std::nullopt};
    double hd = 0.0;
    Index n_hd = 0;
    for (const auto& r : reports) {
      if (r.classes.size() != k || r.classes[c].name != m.name) throw std::invalid_argument("average_reports: class lists differ");
      m.dice += r.classes[c].dice;
      if (r.classes[c].hausdorff) {
        hd += *r.classes[c].hausdorff;
        ++n_hd;
      } else {
        ++out.hausdorff_undefined;
      }
    }
    m.dice /= static_cast<double>(reports.size());
    if (n_hd > 0) {
      m.hausdorff = hd / static_cast<double>(n_hd);
      hd_total += *m.hausdorff;
      ++hd_classes;
    }
    out.mean_dice += m.dice;
    out.classes.push_back(std::move(m));
  }
  out.mean_dice /= static_cast<double>(k);
  if (hd_classes > 0) out.mean_hausdorff = hd_total / static_cast<double>(hd_classes);
  return out;
}

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : report.classes) {
    classes.push_back({{"name", c.name},
                       {"dice", c.dice},
                       {"hausdorff_mm", c.hausdorff ? nlohmann::json(*c.hausdorff) : nlohmann::json(nullptr)}});
  }
  return {{"classes", classes},
          {"mean_dice", report.mean_dice},
          {"mean_hausdorff_mm", report.mean_hausdorff ? nlohmann::json(*report.mean_hausdorff) : nlohmann::json(nullptr)},
          {"hausdorff_undefined", report.hausdorff_undefined}};
}

std::string render_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  if (rows.empty()) return {};
  std::vector<std::string> names;
  for (const auto& c : rows.front().second.classes) names.push_back(c.name);
  names.push_back("Mean");
  std::size_t method_width = 7;
  for (const auto& [method, _] : rows) method_width = std::max(method_width, method.size());
  std::size_t col = 8;
  for (const auto& n : names) col = std::max(col, n.size() + 1);

  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(method_width)) << "Methods";
  const std::string dice_title = "Dice Score (%, up)";
  const std::string hd_title = "Hausdorff Distance (mm, down)";
  const std::size_t group = col * names.size();
  os << " | " << std::setw(static_cast<int>(group)) << dice_title << " | " << hd_title << '\n';
  os << std::setw(static_cast<int>(method_width)) << "";
  os << " | ";
  for (const auto& n : names) os << std::right << std::setw(static_cast<int>(col)) << n;
  os << " | ";
  for (const auto& n : names) os << std::right << std::setw(static_cast<int>(col)) << n;
  os << '\n' << std::string(method_width + 6 + 2 * group, '-') << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& [method, r] : rows) {
    os << std::left << std::setw(static_cast<int>(method_width)) << method << " | " << std::right;
    for (const auto& c : r.classes) os << std::setw(static_cast<int>(col)) << 100.0 * c.dice;
    os << std::setw(static_cast<int>(col)) << 100.0 * r.mean_dice << " | ";
    for (const auto& c : r.classes) {
      if (c.hausdorff) os << std::setw(static_cast<int>(col)) << *c.hausdorff;
      else os << std::setw(static_cast<int>(col)) << "n/a";
    }
    if (r.mean_hausdorff) os << std::setw(static_cast<int>(col)) << *r.mean_hausdorff;
    else os << std::setw(static_cast<int>(col)) << "n/a";
    os << '\n';
  }
  return os.str();
}

}  // namespace mmseg
