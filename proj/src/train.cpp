#include "mmseg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace mmseg {

using detail::make_result;
using detail::Node;

Tensor cross_entropy(const Tensor& logits, const LabelVolume& labels) {
  if (logits.rank() != 4) throw std::invalid_argument("cross_entropy: expected K x D x H x W logits, got " + to_string(logits.shape()));
  const Index K = logits.dim(0);
  const Extents e{logits.dim(1), logits.dim(2), logits.dim(3)};
  if (labels.extents != e) throw std::invalid_argument("cross_entropy: label extents differ from logits");
  const Index V = voxel_count(e);
  for (std::uint8_t l : labels.labels) {
    if (l >= K) throw std::invalid_argument("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(K) + ")");
  }
  const Array& z = logits.values();
  auto prob = std::make_shared<Array>(K * V);
  double total = 0.0;
  for (Index i = 0; i < V; ++i) {
    double mx = z[i];
    for (Index k = 1; k < K; ++k) mx = std::max(mx, z[k * V + i]);
    double s = 0.0;
    for (Index k = 0; k < K; ++k) s += std::exp(z[k * V + i] - mx);
    const double lse = mx + std::log(s);
    for (Index k = 0; k < K; ++k) (*prob)[k * V + i] = std::exp(z[k * V + i] - lse);
    total += lse - z[labels.labels[static_cast<std::size_t>(i)] * V + i];
  }
  Array value(1);
  value[0] = total / static_cast<double>(V);
  auto target = std::make_shared<std::vector<std::uint8_t>>(labels.labels);
  return make_result({}, std::move(value), {logits}, [prob, target, K, V](Node& self) {
    Array& g = self.inputs[0]->grad_buffer();
    const double scale = self.grad[0] / static_cast<double>(V);
    for (Index k = 0; k < K; ++k)
      for (Index i = 0; i < V; ++i) {
        const double onehot = (*target)[static_cast<std::size_t>(i)] == k ? 1.0 : 0.0;
        g[k * V + i] += scale * ((*prob)[k * V + i] - onehot);
      }
  });
}

void sgd_step(const ParameterList& params, double lr, double weight_decay) {
  if (!(lr >= 0.0)) throw std::invalid_argument("sgd_step: learning rate must be non-negative");
  for (const auto& p : params) {
    if (p.tensor.has_grad() && !p.tensor.grad().allFinite()) throw NonFiniteGradient(p.name);
  }
  for (const auto& p : params) {
    Tensor t = p.tensor;
    Array& w = t.mutable_values();
    const double wd = p.decay ? weight_decay : 0.0;
    if (t.has_grad()) w -= lr * (t.grad() + wd * w);
    else if (wd != 0.0) w -= lr * wd * w;
  }
}

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::kSingleModality: return "single-modality";
    case AblationMode::kSimpleFusion: return "simple-fusion";
    case AblationMode::kMambaEncoder: return "mamba-encoder";
    case AblationMode::kFull: return "full";
  }
  return "?";
}

AblationMode ablation_mode_from_string(const std::string& s) {
  for (AblationMode m : all_ablation_modes()) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown ablation mode '" + s +
                              "' (expected single-modality, simple-fusion, mamba-encoder or full)");
}

std::vector<AblationMode> all_ablation_modes() {
  return {AblationMode::kSingleModality, AblationMode::kSimpleFusion, AblationMode::kMambaEncoder, AblationMode::kFull};
}

NetConfig config_for_mode(NetConfig base, AblationMode mode) {
  switch (mode) {
    case AblationMode::kSingleModality:
      base.modalities = 1;
      base.mamba = false;
      base.fusion = FusionMode::kSum;
      break;
    case AblationMode::kSimpleFusion:
      base.mamba = false;
      base.fusion = FusionMode::kSum;
      break;
    case AblationMode::kMambaEncoder:
      base.mamba = true;
      base.fusion = FusionMode::kSum;
      break;
    case AblationMode::kFull:
      base.mamba = true;
      base.fusion = FusionMode::kBiLevel;
      break;
  }
  return base;
}

std::vector<Tensor> select_inputs(const ModalityVolumeSet& sample, AblationMode mode) {
  if (sample.modalities.empty()) throw std::invalid_argument("sample " + sample.sample_id + " has no modalities");
  if (mode == AblationMode::kSingleModality) return {sample.modalities.front()};
  return sample.modalities;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size != 1) throw std::invalid_argument("TrainConfig: only batch_size 1 is supported");
  if (checkpoint_every < 0 || max_steps < 0) throw std::invalid_argument("TrainConfig: negative cadence or step limit");
  net.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every},
                     {"checkpoint_path", c.checkpoint_path.string()},
                     {"max_steps", c.max_steps},
                     {"mode", to_string(c.mode)},
                     {"net", c.net},
                     {"split", {c.fractions.train, c.fractions.val, c.fractions.test}}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.seed = j.value("seed", d.seed);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.checkpoint_path = j.value("checkpoint_path", std::string());
  c.max_steps = j.value("max_steps", d.max_steps);
  c.mode = ablation_mode_from_string(j.value("mode", to_string(d.mode)));
  c.net = j.contains("net") ? j.at("net").get<NetConfig>() : d.net;
  if (j.contains("split")) {
    const auto s = j.at("split").get<std::array<double, 3>>();
    c.fractions = {s[0], s[1], s[2]};
  }
}

nlohmann::json to_json(const TrainLog& log, bool include_timing) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : log.epochs) {
    nlohmann::json item{{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"order_digest", e.order_digest}};
    if (e.validation) item["validation"] = to_json(*e.validation);
    epochs.push_back(std::move(item));
  }
  nlohmann::json j{{"step_losses", log.step_losses}, {"epochs", epochs}};
  if (include_timing) j["wall_clock_seconds"] = log.wall_clock_seconds;
  return j;
}

namespace {

std::uint64_t order_digest(const std::vector<std::size_t>& order) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t v : order) {
    for (int b = 0; b < 8; ++b) {
      h ^= (static_cast<std::uint64_t>(v) >> (8 * b)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::vector<Array> snapshot(const ParameterList& params) {
  std::vector<Array> out;
  for (const auto& p : params) out.push_back(p.tensor.values());
  return out;
}

void restore(const ParameterList& params, const std::vector<Array>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) Tensor(params[i].tensor).mutable_values() = values[i];
}

}  // namespace

TrainLog train(SegModel& model, const std::vector<ModalityVolumeSet>& train_set,
               const std::vector<ModalityVolumeSet>& val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const auto start = std::chrono::steady_clock::now();
  const ParameterList params = model.parameters();
  std::vector<Array> last_good = snapshot(params);
  auto abort = [&](const std::string& why) {
    restore(params, last_good);
    if (!cfg.checkpoint_path.empty()) save_model(model, cfg.checkpoint_path);
    throw TrainingAborted(why + "; parameters restored to the last checkpoint");
  };

  std::mt19937_64 rng(cfg.seed);
  TrainLog log;
  std::vector<std::size_t> order(train_set.size());
  Index step = 0;
  bool done = false;
  for (Index epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord record;
    record.epoch = epoch;
    record.order_digest = order_digest(order);
    double total = 0.0;
    Index seen = 0;
    for (std::size_t idx : order) {
      const ModalityVolumeSet& sample = train_set[idx];
      for (const auto& p : params) Tensor(p.tensor).zero_grad();
      Tensor loss = cross_entropy(forward(model, select_inputs(sample, cfg.mode)), sample.label);
      const double value = loss.item();
      if (!std::isfinite(value)) abort("non-finite loss at step " + std::to_string(step) + " (sample " + sample.sample_id + ")");
      backward(loss);
      try {
        sgd_step(params, cfg.learning_rate, cfg.weight_decay);
      } catch (const NonFiniteGradient& err) {
        abort(std::string(err.what()) + " at step " + std::to_string(step));
      }
      log.step_losses.push_back(value);
      total += value;
      ++seen;
      ++step;
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        done = true;
        break;
      }
    }
    record.mean_loss = total / static_cast<double>(seen);
    if (!val_set.empty()) record.validation = evaluate_model(model, val_set, cfg.mode, phantom_classes());
    log.epochs.push_back(std::move(record));
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      last_good = snapshot(params);
      if (!cfg.checkpoint_path.empty()) save_model(model, cfg.checkpoint_path);
    }
  }
  log.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

std::vector<ClassSpec> phantom_classes() { return {{"shell", {kShell}}, {"core", {kCore}}}; }

LabelVolume segment(const SegModel& model, const ModalityVolumeSet& sample, AblationMode mode) {
  NoGradGuard no_grad;
  return predict_mask(forward(model, select_inputs(sample, mode)));
}

MetricReport evaluate_model(const SegModel& model, const std::vector<ModalityVolumeSet>& samples, AblationMode mode,
                            const std::vector<ClassSpec>& classes) {
  std::vector<MetricReport> reports;
  for (const auto& s : samples) {
    reports.push_back(evaluate(segment(model, s, mode), s.label, classes, model.config.num_classes, s.spacing));
  }
  return average_reports(reports);
}

std::vector<AblationRow> run_ablation(const std::vector<ModalityVolumeSet>& dataset, const TrainConfig& cfg,
                                      const std::vector<AblationMode>& modes) {
  const DatasetSplit parts = split(dataset.size(), cfg.fractions, cfg.seed);
  auto pick = [&](const std::vector<std::size_t>& idx) {
    std::vector<ModalityVolumeSet> out;
    for (std::size_t i : idx) out.push_back(dataset[i]);
    return out;
  };
  const auto train_set = pick(parts.train);
  const auto val_set = pick(parts.val);
  const auto test_set = pick(parts.test);
  if (test_set.empty()) throw std::invalid_argument("run_ablation: test split is empty");

  std::vector<AblationRow> rows;
  for (AblationMode mode : modes) {
    TrainConfig c = cfg;
    c.mode = mode;
    c.net = config_for_mode(cfg.net, mode);
    SegModel model = SegModel::init(c.net, cfg.seed);
    const TrainLog log = train(model, train_set, val_set, c);
    rows.push_back({mode, evaluate_model(model, test_set, mode, phantom_classes()), count_params(model),
                    log.epochs.back().mean_loss});
  }
  return rows;
}

nlohmann::json to_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"mode", to_string(r.mode)},
                   {"parameters", r.parameters},
                   {"final_epoch_loss", r.final_loss},
                   {"test", to_json(r.test)}});
  }
  return nlohmann::json{{"rows", out}};
}

std::string render_ablation_table(const std::vector<AblationRow>& rows) {
  std::vector<std::pair<std::string, MetricReport>> table;
  for (const auto& r : rows) table.emplace_back(to_string(r.mode), r.test);
  return render_table(table);
}

}  // namespace mmseg
