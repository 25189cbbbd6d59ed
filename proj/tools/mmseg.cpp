#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "mmseg/data.hpp"
#include "mmseg/metrics.hpp"
#include "mmseg/network.hpp"
#include "mmseg/train.hpp"

namespace fs = std::filesystem;
using namespace mmseg;

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& err) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + err.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

bool is_sample_dir(const fs::path& p) { return fs::exists(p / "header.json"); }

// Single sample directory or a directory of samples.
std::vector<ModalityVolumeSet> read_samples(const fs::path& p) {
  if (is_sample_dir(p)) return {read_volume(p)};
  return read_dataset(p);
}

std::vector<Tensor> model_inputs(const SegModel& model, const ModalityVolumeSet& sample) {
  const auto m = static_cast<std::size_t>(model.config.modalities);
  if (sample.modalities.size() < m) {
    throw std::runtime_error("sample " + sample.sample_id + " has " + std::to_string(sample.modalities.size()) +
                             " modalities, model expects " + std::to_string(m));
  }
  return {sample.modalities.begin(), sample.modalities.begin() + static_cast<std::ptrdiff_t>(m)};
}

struct Options {
  std::optional<std::uint64_t> seed;
  fs::path spec, out, config, data, model, input, pred, gt, report, classes, log;
  double hd_percentile = 100.0;
};

int make_data(const Options& o) {
  PhantomSpec spec = o.spec.empty() ? PhantomSpec{} : read_json(o.spec).get<PhantomSpec>();
  if (o.seed) spec.seed = *o.seed;
  const auto data = generate_phantom(spec);
  write_dataset(data, o.out);
  write_json(o.out / "phantom_spec.json", spec);
  std::cout << "wrote " << data.size() << " samples to " << o.out.string() << '\n';
  return 0;
}

TrainConfig load_train_config(const Options& o) {
  TrainConfig cfg = o.config.empty() ? TrainConfig{} : read_json(o.config).get<TrainConfig>();
  if (o.seed) cfg.seed = *o.seed;
  return cfg;
}

int train_cmd(const Options& o) {
  TrainConfig cfg = load_train_config(o);
  cfg.net = config_for_mode(cfg.net, cfg.mode);
  const auto data = read_dataset(o.data);
  const DatasetSplit parts = split(data.size(), cfg.fractions, cfg.seed);
  std::vector<ModalityVolumeSet> train_set, val_set;
  for (std::size_t i : parts.train) train_set.push_back(data[i]);
  for (std::size_t i : parts.val) val_set.push_back(data[i]);
  if (cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0) cfg.checkpoint_path = o.out.string() + ".ckpt";

  SegModel model = SegModel::init(cfg.net, cfg.seed);
  const TrainLog log = train(model, train_set, val_set, cfg);
  save_model(model, o.out);
  const fs::path log_path = o.log.empty() ? fs::path(o.out.string() + ".log.json") : o.log;
  write_json(log_path, to_json(log));
  std::cout << "trained " << log.step_losses.size() << " steps, final loss " << log.step_losses.back() << '\n'
            << "model: " << o.out.string() << "\nlog: " << log_path.string() << '\n';
  return 0;
}

int segment_cmd(const Options& o) {
  const SegModel model = load_model(o.model);
  const ModalityVolumeSet sample = read_volume(o.input);
  LabelVolume mask;
  {
    NoGradGuard no_grad;
    mask = predict_mask(forward(model, model_inputs(model, sample)));
  }
  ModalityVolumeSet out;
  out.label = std::move(mask);
  out.spacing = sample.spacing;
  out.num_classes = model.config.num_classes;
  out.sample_id = sample.sample_id;
  write_volume(out, o.out);
  std::cout << "wrote mask for " << sample.sample_id << " to " << o.out.string() << '\n';
  return 0;
}

int evaluate_cmd(const Options& o) {
  const auto preds = read_samples(o.pred);
  const auto gts = read_samples(o.gt);
  if (preds.size() != gts.size()) {
    throw std::runtime_error("prediction count " + std::to_string(preds.size()) + " differs from ground-truth count " +
                             std::to_string(gts.size()));
  }
  const auto classes = o.classes.empty() ? default_classes(gts.front().num_classes) : classes_from_json(read_json(o.classes));
  std::vector<MetricReport> reports;
  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const Index k = std::max(preds[i].num_classes, gts[i].num_classes);
    MetricReport r = evaluate(preds[i].label, gts[i].label, classes, k, gts[i].spacing);
    if (o.hd_percentile < 100.0) {
      r.mean_hausdorff.reset();
      double total = 0.0;
      Index defined = 0;
      for (std::size_t c = 0; c < classes.size(); ++c) {
        auto& m = r.classes[c];
        m.hausdorff = hausdorff_percentile(binarize(preds[i].label, classes[c].labels),
                                           binarize(gts[i].label, classes[c].labels), gts[i].spacing, o.hd_percentile);
        if (m.hausdorff) {
          total += *m.hausdorff;
          ++defined;
        }
      }
      if (defined > 0) r.mean_hausdorff = total / static_cast<double>(defined);
    }
    samples.push_back({{"sample_id", gts[i].sample_id}, {"metrics", to_json(r)}});
    reports.push_back(std::move(r));
  }
  const MetricReport mean = average_reports(reports);
  nlohmann::json report = to_json(mean);
  report["hausdorff_percentile"] = o.hd_percentile;
  report["samples"] = samples;
  report["conventions"] = {{"empty_vs_empty_dice", 1.0}, {"empty_vs_nonempty_dice", 0.0},
                           {"hausdorff_with_empty_mask", "undefined, excluded from means"}};
  write_json(o.report, report);
  std::cout << render_table({{"prediction", mean}});
  return 0;
}

int gradcheck_cmd(const Options& o) {
  NetConfig net = o.config.empty() ? NetConfig{} : load_train_config(o).net;
  const auto cases = gradient_suite(o.seed.value_or(0), net);
  double worst = 0.0;
  bool ok = true;
  for (const auto& c : cases) {
    std::cout << std::left << std::setw(64) << c.name << ' ' << std::scientific << std::setprecision(3) << c.max_rel_error
              << "  (tol " << c.tolerance << ")  " << (c.passed() ? "ok" : "FAIL") << '\n';
    worst = std::max(worst, c.max_rel_error);
    ok = ok && c.passed();
  }
  std::cout << "max relative error: " << std::scientific << worst << '\n';
  if (!ok) {
    std::cerr << "error: gradcheck: tolerance exceeded\n";
    return 1;
  }
  return 0;
}

int ablate_cmd(const Options& o) {
  const TrainConfig cfg = load_train_config(o);
  const auto data = read_dataset(o.data);
  const auto rows = run_ablation(data, cfg);
  nlohmann::json j = to_json(rows);
  j["config"] = cfg;
  write_json(o.out, j);
  std::cout << render_ablation_table(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal 3D tumor segmentation: phantoms, training, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every random choice (overrides config files)");

  auto* make = app.add_subcommand("make-data", "Generate a synthetic phantom dataset");
  make->add_option("--spec", o.spec, "Phantom spec JSON")->check(CLI::ExistingFile);
  make->add_option("--out", o.out, "Output dataset directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", o.config, "Training config JSON")->check(CLI::ExistingFile);
  tr->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", o.out, "Output model file")->required();
  tr->add_option("--log", o.log, "Loss log JSON (default: <out>.log.json)");

  auto* seg = app.add_subcommand("segment", "Predict a label mask");
  seg->add_option("--model", o.model, "Model file")->required()->check(CLI::ExistingFile);
  seg->add_option("--input", o.input, "Sample directory")->required()->check(CLI::ExistingDirectory);
  seg->add_option("--out", o.out, "Output mask directory")->required();

  auto* ev = app.add_subcommand("evaluate", "Dice and Hausdorff of predictions against ground truth");
  ev->add_option("--pred", o.pred, "Predicted sample or dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--gt", o.gt, "Ground-truth sample or dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--report", o.report, "Output report JSON")->required();
  ev->add_option("--classes", o.classes, "Class map JSON: {\"classes\": [{\"name\", \"labels\"}]}")
      ->check(CLI::ExistingFile);
  ev->add_option("--hd-percentile", o.hd_percentile, "Hausdorff percentile (100 = maximum, 95 = HD95)")
      ->check(CLI::Range(0.0, 100.0));

  auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  gc->add_option("--config", o.config, "Training config JSON (its network is checked)")->check(CLI::ExistingFile);

  auto* ab = app.add_subcommand("ablate", "Train and test all four ablation modes");
  ab->add_option("--data", o.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ab->add_option("--out", o.out, "Output table JSON")->required();
  ab->add_option("--config", o.config, "Training config JSON")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    if (err.get_exit_code() == 0) return app.exit(err);
    std::cerr << app.help();
    std::cerr << "error: usage: " << err.what() << '\n';
    return 2;
  }
  if (*seed_opt) o.seed = seed;

  try {
    if (*make) return make_data(o);
    if (*tr) return train_cmd(o);
    if (*seg) return segment_cmd(o);
    if (*ev) return evaluate_cmd(o);
    if (*gc) return gradcheck_cmd(o);
    if (*ab) return ablate_cmd(o);
  } catch (const std::exception& err) {
    std::string msg = err.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error: " << app.get_subcommands().front()->get_name() << ": " << msg << '\n';
    return 1;
  }
  return 1;
}
