#include "mmseg/network.hpp"

#include <sstream>
#include <stdexcept>

#include "mmseg/ops.hpp"

namespace mmseg {

std::string to_string(FusionMode mode) { return mode == FusionMode::kBiLevel ? "bi-level" : "sum"; }

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "bi-level") return FusionMode::kBiLevel;
  if (s == "sum") return FusionMode::kSum;
  throw std::invalid_argument("unknown fusion mode '" + s + "' (expected bi-level or sum)");
}

void NetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("NetConfig: " + msg); };
  if (modalities < 1) fail("modalities must be >= 1");
  if (base_channels < 1) fail("base_channels must be >= 1");
  if (levels < 1) fail("levels must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (state_dim < 1) fail("state_dim must be >= 1");
  if (scan_directions != 2 && scan_directions != 6 && scan_directions != 12) fail("scan_directions must be 2, 6 or 12");
  const Index unit = Index{1} << (levels - 1);
  for (Index e : patch) {
    if (e < 1 || e % unit != 0) {
      fail("patch extents must be divisible by " + std::to_string(unit) + " for " + std::to_string(levels) + " levels");
    }
  }
}

std::vector<ScanDirection> NetConfig::directions() const {
  switch (scan_directions) {
    case 2: return bidirectional_directions();
    case 12: return all_axis_directions();
    default: return default_directions();
  }
}

void to_json(nlohmann::json& j, const NetConfig& c) {
  j = nlohmann::json{{"modalities", c.modalities},
                     {"base_channels", c.base_channels},
                     {"levels", c.levels},
                     {"num_classes", c.num_classes},
                     {"state_dim", c.state_dim},
                     {"scan_directions", c.scan_directions},
                     {"patch", c.patch},
                     {"mamba", c.mamba},
                     {"fusion", to_string(c.fusion)}};
}

void from_json(const nlohmann::json& j, NetConfig& c) {
  const NetConfig defaults;
  c.modalities = j.value("modalities", defaults.modalities);
  c.base_channels = j.value("base_channels", defaults.base_channels);
  c.levels = j.value("levels", defaults.levels);
  c.num_classes = j.value("num_classes", defaults.num_classes);
  c.state_dim = j.value("state_dim", defaults.state_dim);
  c.scan_directions = j.value("scan_directions", defaults.scan_directions);
  c.patch = j.value("patch", defaults.patch);
  c.mamba = j.value("mamba", defaults.mamba);
  c.fusion = fusion_mode_from_string(j.value("fusion", to_string(defaults.fusion)));
}

std::string describe_config_diff(const NetConfig& expected, const NetConfig& actual) {
  const nlohmann::json e = expected;
  const nlohmann::json a = actual;
  std::ostringstream os;
  bool first = true;
  for (const auto& [key, value] : e.items()) {
    if (a.at(key) != value) {
      os << (first ? "" : "; ") << key << ": expected " << value.dump() << ", actual " << a.at(key).dump();
      first = false;
    }
  }
  return os.str();
}

SegModel SegModel::init(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const auto dirs = config.directions();
  SegModel model;
  model.config = config;
  for (Index m = 0; m < config.modalities; ++m) {
    Encoder enc;
    enc.stem_weight = he_conv_weight(config.base_channels, 1, 3, rng);
    enc.stem_bias = Tensor::zeros({config.base_channels}, true);
    for (Index l = 0; l < config.levels; ++l) {
      const Index c = config.channels_at(l);
      EncoderLevel level{std::nullopt, ResBlock::init(c, c, rng), std::nullopt};
      if (config.mamba) level.mamba = MambaBlock::init(c, config.state_dim, dirs, rng);
      if (l + 1 < config.levels) level.down = Downsample::init(c, rng);
      enc.levels.push_back(std::move(level));
    }
    model.encoders.push_back(std::move(enc));
  }
  if (config.fusion == FusionMode::kBiLevel) {
    for (Index l = 0; l < config.levels; ++l) {
      model.fusion.push_back(FusionParams::init(config.modalities, config.channels_at(l), rng));
    }
  }
  const Index deepest = config.channels_at(config.levels - 1);
  if (config.mamba) model.bottleneck = MambaBlock::init(deepest, config.state_dim, dirs, rng);
  for (Index l = 0; l + 1 < config.levels; ++l) {
    const Index c = config.channels_at(l);
    model.decoder.push_back({Upsample::init(2 * c, rng), ResBlock::init(2 * c, c, rng)});
  }
  model.head_weight = Tensor::randn({config.num_classes, config.base_channels, 1, 1, 1}, rng,
                                    0.1 / std::sqrt(static_cast<double>(config.base_channels)), true);
  model.head_bias = Tensor::zeros({config.num_classes}, true);
  return model;
}

ParameterList SegModel::parameters() const {
  ParameterList out;
  for (std::size_t m = 0; m < encoders.size(); ++m) {
    const std::string p = "encoder" + std::to_string(m) + ".";
    add_parameter(out, p, "stem.weight", encoders[m].stem_weight);
    add_parameter(out, p, "stem.bias", encoders[m].stem_bias);
    for (std::size_t l = 0; l < encoders[m].levels.size(); ++l) {
      const auto& level = encoders[m].levels[l];
      const std::string q = p + "level" + std::to_string(l) + ".";
      if (level.mamba) level.mamba->collect(q + "mamba.", out);
      level.res.collect(q + "res.", out);
      if (level.down) level.down->collect(q + "down.", out);
    }
  }
  for (std::size_t l = 0; l < fusion.size(); ++l) fusion[l].collect("fusion" + std::to_string(l) + ".", out);
  if (bottleneck) bottleneck->collect("bottleneck.", out);
  for (std::size_t l = 0; l < decoder.size(); ++l) {
    const std::string q = "decoder" + std::to_string(l) + ".";
    decoder[l].up.collect(q + "up.", out);
    decoder[l].res.collect(q + "res.", out);
  }
  add_parameter(out, "", "head.weight", head_weight);
  add_parameter(out, "", "head.bias", head_bias);
  return out;
}

Index count_params(const SegModel& model) {
  Index n = 0;
  for (const auto& p : model.parameters()) n += p.tensor.numel();
  return n;
}

std::vector<Tensor> encode_modality(const SegModel& model, const Tensor& x, Index m) {
  const NetConfig& cfg = model.config;
  if (m < 0 || m >= cfg.modalities) throw std::out_of_range("encode_modality: modality index " + std::to_string(m));
  if (x.shape() != Shape{1, cfg.patch[0], cfg.patch[1], cfg.patch[2]}) {
    throw std::invalid_argument("encode_modality: expected input " +
                                to_string(Shape{1, cfg.patch[0], cfg.patch[1], cfg.patch[2]}) + ", got " +
                                to_string(x.shape()));
  }
  const Encoder& enc = model.encoders[static_cast<std::size_t>(m)];
  Tensor h = conv3d(x, enc.stem_weight, enc.stem_bias, 1, 1);
  std::vector<Tensor> features;
  for (const auto& level : enc.levels) {
    if (level.mamba) h = mamba_block(h, *level.mamba);
    h = res_block(h, level.res);
    features.push_back(h);
    if (level.down) h = downsample(h, *level.down);
  }
  return features;
}

std::vector<Tensor> fuse_levels(const SegModel& model, const std::vector<std::vector<Tensor>>& per_modality) {
  std::vector<Tensor> fused;
  for (Index l = 0; l < model.config.levels; ++l) {
    std::vector<Tensor> level;
    for (const auto& feats : per_modality) level.push_back(feats[static_cast<std::size_t>(l)]);
    if (model.config.fusion == FusionMode::kBiLevel) {
      fused.push_back(merge_modalities(bi_level_fuse(level, model.fusion[static_cast<std::size_t>(l)])));
    } else {
      fused.push_back(merge_modalities(level));
    }
  }
  return fused;
}

Tensor forward(const SegModel& model, const std::vector<Tensor>& inputs) {
  const NetConfig& cfg = model.config;
  if (static_cast<Index>(inputs.size()) != cfg.modalities) {
    throw std::invalid_argument("forward: model expects " + std::to_string(cfg.modalities) + " modalities, sample has " +
                                std::to_string(inputs.size()));
  }
  std::vector<std::vector<Tensor>> per_modality;
  for (Index m = 0; m < cfg.modalities; ++m) {
    per_modality.push_back(encode_modality(model, inputs[static_cast<std::size_t>(m)], m));
  }
  const std::vector<Tensor> skips = fuse_levels(model, per_modality);
  Tensor h = skips.back();
  if (model.bottleneck) h = mamba_block(h, *model.bottleneck);
  for (Index l = cfg.levels - 2; l >= 0; --l) {
    const DecoderLevel& dec = model.decoder[static_cast<std::size_t>(l)];
    h = res_block(concat({upsample(h, dec.up), skips[static_cast<std::size_t>(l)]}), dec.res);
  }
  return conv3d(h, model.head_weight, model.head_bias, 1, 0);
}

Tensor forward(const SegModel& model, const ModalityVolumeSet& sample) {
  return forward(model, sample.modalities);
}

LabelVolume predict_mask(const Tensor& logits) {
  if (logits.rank() != 4) throw std::invalid_argument("predict_mask: expected K x D x H x W logits");
  const Index K = logits.dim(0);
  if (K > 256) throw std::invalid_argument("predict_mask: more than 256 classes");
  LabelVolume out;
  out.extents = {logits.dim(1), logits.dim(2), logits.dim(3)};
  const Index V = voxel_count(out.extents);
  out.labels.assign(static_cast<std::size_t>(V), 0);
  const Array& v = logits.values();
  for (Index i = 0; i < V; ++i) {
    Index best = 0;
    for (Index k = 1; k < K; ++k) {
      if (v[k * V + i] > v[best * V + i]) best = k;
    }
    out.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace mmseg
