#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "mmseg/data.hpp"

namespace mmseg {

namespace {

namespace fs = std::filesystem;

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void check_size(const fs::path& path, std::size_t actual, std::size_t expected) {
  if (actual != expected) {
    throw std::runtime_error("size mismatch in " + path.string() + ": expected " + std::to_string(expected) +
                             " bytes, got " + std::to_string(actual));
  }
}

std::string modality_file(std::size_t m) { return "modality_" + std::to_string(m) + ".f32"; }

}  // namespace

void write_volume(const ModalityVolumeSet& sample, const fs::path& dir) {
  const Extents e = sample.extents();
  const Index V = voxel_count(e);
  if (static_cast<Index>(sample.label.labels.size()) != V) throw std::invalid_argument("write_volume: label size mismatch");
  fs::create_directories(dir);
  nlohmann::json header{{"extents", e},
                        {"modalities", sample.modality_count()},
                        {"spacing", sample.spacing},
                        {"dtype", "float32"},
                        {"num_classes", sample.num_classes},
                        {"sample_id", sample.sample_id}};
  write_bytes(dir / "header.json", header.dump(2) + "\n");
  for (std::size_t m = 0; m < sample.modalities.size(); ++m) {
    const Tensor& t = sample.modalities[m];
    if (t.shape() != Shape{1, e[0], e[1], e[2]}) {
      throw std::invalid_argument("write_volume: modality " + std::to_string(m) + " has shape " + to_string(t.shape()));
    }
    std::string bytes(static_cast<std::size_t>(V) * 4, '\0');
    for (Index i = 0; i < V; ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(t.values()[i]));
      for (int b = 0; b < 4; ++b) bytes[static_cast<std::size_t>(4 * i + b)] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    write_bytes(dir / modality_file(m), bytes);
  }
  write_bytes(dir / "label.u8", std::string(sample.label.labels.begin(), sample.label.labels.end()));
}

ModalityVolumeSet read_volume(const fs::path& dir) {
  const fs::path header_path = dir / "header.json";
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(read_bytes(header_path));
  } catch (const nlohmann::json::exception& err) {
    throw std::runtime_error("malformed header " + header_path.string() + ": " + err.what());
  }
  const std::string dtype = header.at("dtype").get<std::string>();
  if (dtype != "float32") throw std::runtime_error("unknown dtype '" + dtype + "' in " + header_path.string());

  ModalityVolumeSet out;
  const auto e = header.at("extents").get<Extents>();
  for (Index x : e) {
    if (x < 1) throw std::runtime_error("non-positive extent in " + header_path.string());
  }
  const auto M = header.at("modalities").get<Index>();
  if (M < 0) throw std::runtime_error("negative modality count in " + header_path.string());
  out.spacing = header.value("spacing", Spacing{1.0, 1.0, 1.0});
  out.num_classes = header.at("num_classes").get<Index>();
  out.sample_id = header.value("sample_id", dir.filename().string());
  const Index V = voxel_count(e);

  for (Index m = 0; m < M; ++m) {
    const fs::path path = dir / modality_file(static_cast<std::size_t>(m));
    if (!fs::exists(path)) {
      throw std::runtime_error("header declares " + std::to_string(M) + " modalities but " + path.string() + " is missing");
    }
    const std::string bytes = read_bytes(path);
    check_size(path, bytes.size(), static_cast<std::size_t>(V) * 4);
    Tensor t = Tensor::zeros({1, e[0], e[1], e[2]});
    Array& v = t.mutable_values();
    for (Index i = 0; i < V; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[static_cast<std::size_t>(4 * i + b)])) << (8 * b);
      }
      v[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    out.modalities.push_back(std::move(t));
  }
  if (fs::exists(dir / modality_file(static_cast<std::size_t>(M)))) {
    throw std::runtime_error("header declares " + std::to_string(M) + " modalities but " +
                             (dir / modality_file(static_cast<std::size_t>(M))).string() + " exists");
  }

  const fs::path label_path = dir / "label.u8";
  const std::string labels = read_bytes(label_path);
  check_size(label_path, labels.size(), static_cast<std::size_t>(V));
  out.label.extents = e;
  out.label.labels.assign(labels.begin(), labels.end());
  for (std::uint8_t l : out.label.labels) {
    if (l >= out.num_classes) {
      throw std::runtime_error("label " + std::to_string(l) + " out of range in " + label_path.string());
    }
  }
  return out;
}

void write_dataset(const std::vector<ModalityVolumeSet>& data, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& s : data) {
    if (s.sample_id.empty()) throw std::invalid_argument("write_dataset: sample without id");
    write_volume(s, dir / s.sample_id);
  }
}

std::vector<ModalityVolumeSet> read_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "header.json")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<ModalityVolumeSet> out;
  for (const auto& d : dirs) out.push_back(read_volume(d));
  if (out.empty()) throw std::runtime_error("no samples found in " + dir.string());
  return out;
}

}  // namespace mmseg
