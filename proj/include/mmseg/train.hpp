#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmseg/data.hpp"
#include "mmseg/metrics.hpp"
#include "mmseg/network.hpp"

namespace mmseg {

/// Mean over voxels of -log softmax(logits)[label]; logits K x D x H x W.
Tensor cross_entropy(const Tensor& logits, const LabelVolume& labels);

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& param)
      : std::runtime_error("non-finite gradient in parameter '" + param + "'"), param_(param) {}
  const std::string& parameter() const { return param_; }

 private:
  std::string param_;
};

/// w <- w - lr (g + wd w), with wd only on parameters flagged for decay.
/// Checks every gradient first and throws NonFiniteGradient without
/// touching any parameter.
void sgd_step(const ParameterList& params, double lr, double weight_decay);

enum class AblationMode { kSingleModality, kSimpleFusion, kMambaEncoder, kFull };

std::string to_string(AblationMode mode);
AblationMode ablation_mode_from_string(const std::string& s);
/// Table order: single-modality, simple-fusion, mamba-encoder, full.
std::vector<AblationMode> all_ablation_modes();

/// Network configuration for `mode` derived from `base` (patch, widths, depth).
NetConfig config_for_mode(NetConfig base, AblationMode mode);
/// The modalities `mode` feeds the network.
std::vector<Tensor> select_inputs(const ModalityVolumeSet& sample, AblationMode mode);

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  Index epochs = 50;
  Index batch_size = 1;
  std::uint64_t seed = 0;
  Index checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints
  std::filesystem::path checkpoint_path;
  Index max_steps = 0;  // 0: run every epoch to completion
  AblationMode mode = AblationMode::kFull;
  NetConfig net;
  SplitFractions fractions;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
  Index epoch = 0;
  double mean_loss = 0.0;
  std::optional<MetricReport> validation;
  std::uint64_t order_digest = 0;  // FNV-1a of the epoch's sample order
};

struct TrainLog {
  std::vector<double> step_losses;
  std::vector<EpochRecord> epochs;
  double wall_clock_seconds = 0.0;
};

/// Wall-clock time is left out unless asked for, so two identical runs
/// serialize identically.
nlohmann::json to_json(const TrainLog& log, bool include_timing = false);

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trains in place. Samples are visited in a seeded shuffle each epoch.
/// On a non-finite loss or gradient the parameters are restored to the last
/// checkpointed state (written to cfg.checkpoint_path when set) and
/// TrainingAborted is thrown.
TrainLog train(SegModel& model, const std::vector<ModalityVolumeSet>& train_set,
               const std::vector<ModalityVolumeSet>& val_set, const TrainConfig& cfg);

/// Shell and core, each on its own.
std::vector<ClassSpec> phantom_classes();
LabelVolume segment(const SegModel& model, const ModalityVolumeSet& sample, AblationMode mode);
/// Class-wise average over the samples.
MetricReport evaluate_model(const SegModel& model, const std::vector<ModalityVolumeSet>& samples, AblationMode mode,
                            const std::vector<ClassSpec>& classes);

struct AblationRow {
  AblationMode mode;
  MetricReport test;
  Index parameters = 0;
  double final_loss = 0.0;
};

/// Splits `dataset` with cfg.fractions and cfg.seed, then trains and tests
/// every mode from the same seed.
std::vector<AblationRow> run_ablation(const std::vector<ModalityVolumeSet>& dataset, const TrainConfig& cfg,
                                      const std::vector<AblationMode>& modes = all_ablation_modes());
nlohmann::json to_json(const std::vector<AblationRow>& rows);
std::string render_ablation_table(const std::vector<AblationRow>& rows);

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

/// Central finite-difference checks of every differentiable op and block,
/// plus a sampled check of `net` run on 8^3 patches.
std::vector<GradCheckCase> gradient_suite(std::uint64_t seed, NetConfig net = {});

}  // namespace mmseg
