#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "selar/attribute_maps.hpp"
#include "selar/checkpoint.hpp"
#include "selar/evaluator.hpp"
#include "selar/feature_store.hpp"
#include "selar/trainer.hpp"

namespace selar::cli {

namespace fs = std::filesystem;

namespace {

// Human-readable numbers carry 4 significant digits.
std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string fmt_ratio(const std::optional<double>& v) { return v ? fmt4(*v) : "undefined"; }

std::string summary_line(const GzslMetrics& m) {
  return "U=" + fmt4(100.0 * m.acc_u) + " S=" + fmt4(100.0 * m.acc_s) +
         " H=" + fmt4(100.0 * m.h) + " S/U=" + fmt_ratio(m.s_over_u);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

fs::path with_suffix(const fs::path& path, const std::string& suffix) {
  return fs::path(path.string() + suffix);
}

Checkpoint make_checkpoint(const EmbeddingWeights& weights, const PoolingConfig& pooling,
                           const AttributeMatrix& attributes) {
  return {weights, pooling, normalize_attribute_rows(attributes)};
}

struct SynthArgs {
  std::string out;
  SynthSpec spec;
  std::uint64_t seed = 0;
};

// Same checks as validate_synth_spec, reported by flag name.
void check_synth_flags(const SynthSpec& s) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (s.spatial_size < 1) fail("--M must be at least 1");
  if (s.feature_depth < 1) fail("--D must be at least 1");
  if (s.num_attributes < 1) fail("--L must be at least 1");
  if (s.num_classes < 2) fail("--C must be at least 2");
  if (s.feature_depth < s.num_attributes) fail("--D must be at least --L");
  if (s.num_seen < 1) fail("--num-seen must be at least 1");
  if (s.num_seen >= s.num_classes) fail("--num-seen must be less than --C");
  if (s.per_class_count < 2) fail("--per-class must be at least 2");
  if (!(s.signal_strength > 0.0)) fail("--signal must be positive");
  if (!(s.noise_sigma >= 0.0)) fail("--noise must be non-negative");
}

int run_synth(const SynthArgs& a, std::ostream& out) {
  check_synth_flags(a.spec);
  const auto ds = synthesize_dataset(a.spec, a.seed);
  StoreInfo info;
  info.dataset_name = "synthetic-seed" + std::to_string(a.seed);
  const auto manifest = write_store(a.out, ds.features, ds.labels, ds.attributes, ds.splits, info);
  out << "wrote " << manifest.record_count << " records to " << a.out << " (M=" << manifest.spatial_size
      << " D=" << manifest.feature_depth << " L=" << manifest.num_attributes
      << " C=" << manifest.num_classes << ")\n";
  return 0;
}

int run_validate(const std::string& store_dir, std::ostream& out) {
  const auto store = validate_store(store_dir);
  const auto& m = store.manifest;
  out << "ok: " << m.dataset_name << " N=" << m.record_count << " M=" << m.spatial_size
      << " D=" << m.feature_depth << " L=" << m.num_attributes << " C=" << m.num_classes
      << " seen=" << store.splits.seen_class_ids.size()
      << " unseen=" << store.splits.unseen_class_ids.size()
      << " train=" << store.splits.train_indices.size()
      << " test_seen=" << store.splits.test_seen_indices.size()
      << " test_unseen=" << store.splits.test_unseen_indices.size() << '\n';
  return 0;
}

struct TrainArgs {
  std::string store;
  std::string config;
  std::string out;
};

int run_train(const TrainArgs& a, std::ostream& out) {
  const auto store = open_store(a.store);
  const auto cfg = load_train_config(a.config);
  TrainOptions options;
  options.on_epoch = [&](const EpochStats& e) {
    out << "epoch " << e.epoch << " loss=" << fmt4(e.loss)
        << " train_acc=" << fmt4(100.0 * e.train_accuracy) << '\n';
  };
  const auto result = train(store.features, store.splits, store.attributes, cfg, options);
  const auto checkpoint = make_checkpoint(result.weights, cfg.pooling, store.attributes);
  save_checkpoint(a.out, checkpoint);
  write_history_csv(with_suffix(a.out, ".history.csv"), result.history);

  const auto eval = evaluate_gzsl(checkpoint, store.features, store.splits, 0.0);
  write_text(with_suffix(a.out, ".metrics.json"), metrics_json(eval.metrics, 0.0));
  out << to_string(cfg.pooling) << ": " << summary_line(eval.metrics) << '\n';
  out << "checkpoint written to " << a.out << '\n';
  return 0;
}

struct EvalArgs {
  std::string store;
  std::string checkpoint;
  double gamma = 0.0;
  std::string json;
  std::string predictions;
};

int run_eval(const EvalArgs& a, std::ostream& out) {
  const auto store = open_store(a.store);
  const auto checkpoint = load_checkpoint(a.checkpoint);
  const auto eval = evaluate_gzsl(checkpoint, store.features, store.splits, a.gamma);
  out << to_string(checkpoint.pooling) << " gamma=" << fmt4(a.gamma) << ": "
      << summary_line(eval.metrics) << '\n';
  if (!a.json.empty()) write_text(a.json, metrics_json(eval.metrics, a.gamma));
  if (!a.predictions.empty()) write_predictions_csv(a.predictions, eval);
  return 0;
}

struct CalibrateArgs {
  std::string store;
  std::string checkpoint;
  double val_fraction = 0.2;
  std::size_t grid_steps = 41;
  std::uint64_t seed = 0;
  std::string sweep_csv;
};

int run_calibrate(const CalibrateArgs& a, std::ostream& out) {
  const auto store = open_store(a.store);
  const auto checkpoint = load_checkpoint(a.checkpoint);
  const auto parts = split_validation(store.splits, store.features.labels(), a.val_fraction, a.seed);

  std::vector<std::uint32_t> val_indices(parts.validation.test_seen_indices);
  val_indices.insert(val_indices.end(), parts.validation.test_unseen_indices.begin(),
                     parts.validation.test_unseen_indices.end());
  const auto spread = max_logit_spread(joint_logits(checkpoint, store.features, val_indices));
  const auto grid = make_gamma_grid(spread, a.grid_steps);
  const auto cal = calibrate(checkpoint, store.features, parts.validation, grid);

  out << "gamma      U(val)   S(val)   H(val)\n";
  for (const auto& p : cal.sweep) {
    char line[96];
    std::snprintf(line, sizeof(line), "%-10s %-8s %-8s %-8s\n", fmt4(p.gamma).c_str(),
                  fmt4(100.0 * p.metrics.acc_u).c_str(), fmt4(100.0 * p.metrics.acc_s).c_str(),
                  fmt4(100.0 * p.metrics.h).c_str());
    out << line;
  }
  if (!a.sweep_csv.empty()) {
    std::ofstream csv(a.sweep_csv);
    csv << "gamma,acc_u,acc_s,h\n";
    char line[128];
    for (const auto& p : cal.sweep) {
      std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g,%.17g\n", p.gamma, p.metrics.acc_u,
                    p.metrics.acc_s, p.metrics.h);
      csv << line;
    }
    if (!csv) throw std::runtime_error("cannot write " + a.sweep_csv);
  }
  const auto before = evaluate_gzsl(checkpoint, store.features, parts.remainder, 0.0);
  const auto after = evaluate_gzsl(checkpoint, store.features, parts.remainder, cal.gamma);
  out << "selected gamma=" << fmt4(cal.gamma) << " (validation H=" << fmt4(100.0 * cal.metrics_at_gamma.h)
      << ")\n";
  out << "test uncalibrated: " << summary_line(before.metrics) << '\n';
  out << "test calibrated:   " << summary_line(after.metrics) << '\n';
  return 0;
}

struct AblateArgs {
  std::string store;
  std::string config;
  std::size_t seeds = 5;
  std::string csv;
};

int run_ablate(const AblateArgs& a, std::ostream& out) {
  const auto store = open_store(a.store);
  const auto base = load_train_config(a.config);
  if (a.seeds < 1) throw std::invalid_argument("--seeds must be at least 1");

  const PoolingConfig configs[] = {
      {PoolMethod::kGap, PoolSpace::kVisual},    {PoolMethod::kGap, PoolSpace::kAttribute},
      {PoolMethod::kGap, PoolSpace::kClass},     {PoolMethod::kGmp, PoolSpace::kVisual},
      {PoolMethod::kGmp, PoolSpace::kAttribute}, {PoolMethod::kGmp, PoolSpace::kClass}};

  std::ostringstream csv;
  csv << "config,seed,acc_u,acc_s,h\n";
  std::vector<GzslMetrics> means;
  for (const auto& pooling : configs) {
    double u = 0.0, s = 0.0, h = 0.0;
    for (std::size_t k = 0; k < a.seeds; ++k) {
      auto cfg = base;
      cfg.pooling = pooling;
      cfg.seed = base.seed + k;
      const auto result = train(store.features, store.splits, store.attributes, cfg);
      const auto eval = evaluate_gzsl(make_checkpoint(result.weights, pooling, store.attributes),
                                      store.features, store.splits, 0.0);
      char line[160];
      std::snprintf(line, sizeof(line), "%s,%llu,%.17g,%.17g,%.17g\n", to_string(pooling).c_str(),
                    static_cast<unsigned long long>(cfg.seed), eval.metrics.acc_u,
                    eval.metrics.acc_s, eval.metrics.h);
      csv << line;
      u += eval.metrics.acc_u;
      s += eval.metrics.acc_s;
      h += eval.metrics.h;
    }
    const double n = static_cast<double>(a.seeds);
    GzslMetrics mean{u / n, s / n, h / n, std::nullopt};
    means.push_back(mean);
    char line[160];
    std::snprintf(line, sizeof(line), "%s,mean,%.17g,%.17g,%.17g\n", to_string(pooling).c_str(),
                  mean.acc_u, mean.acc_s, mean.h);
    csv << line;
  }

  const bool gap_consistent = means[0] == means[1] && means[1] == means[2];
  const struct {
    const char* type;
    const char* space;
    const GzslMetrics& m;
  } rows[] = {{"GAP", "visual, attribute, class", means[1]},
              {"GMP", "visual", means[3]},
              {"GMP", "attribute", means[4]},
              {"GMP", "class", means[5]}};
  out << "Type  Space                      U        S        H\n";
  for (const auto& r : rows) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-5s %-26s %-8s %-8s %-8s\n", r.type, r.space,
                  fmt4(100.0 * r.m.acc_u).c_str(), fmt4(100.0 * r.m.acc_s).c_str(),
                  fmt4(100.0 * r.m.h).c_str());
    out << line;
  }
  if (!gap_consistent) {
    out << "note: GAP metrics differ across spaces (visual H=" << fmt4(100.0 * means[0].h)
        << ", attribute H=" << fmt4(100.0 * means[1].h) << ", class H=" << fmt4(100.0 * means[2].h)
        << ")\n";
  }
  if (!a.csv.empty()) write_text(a.csv, csv.str());
  return 0;
}

struct MapsArgs {
  std::string store;
  std::string checkpoint;
  std::size_t index = 0;
  std::size_t topk = 4;
  std::string out;
};

int run_maps(const MapsArgs& a, std::ostream& out) {
  const auto store = open_store(a.store);
  const auto checkpoint = load_checkpoint(a.checkpoint);
  if (checkpoint.attributes.rows() != store.manifest.num_classes) {
    throw std::invalid_argument("checkpoint does not match the store's classes");
  }
  const auto features = store.features.get(a.index);
  const auto cls = store.features.label(a.index);
  ForwardOptions options;
  options.keep_local_semantic = true;
  const auto trace = forward(checkpoint.weights, checkpoint.attributes, features, checkpoint.pooling,
                             options);

  std::vector<Heatmap> maps;
  std::vector<std::string> labels;
  for (const auto l : top_attributes(store.attributes.row(cls), a.topk)) {
    maps.push_back(extract_aam(trace, l));
    labels.push_back("attribute_" + std::to_string(l));
  }
  maps.push_back(compute_cam(*trace.local_semantic, checkpoint.attributes.row(cls), cls));
  labels.push_back(store.manifest.class_names[cls]);
  const auto written = export_heatmap_grid(maps, labels, a.out);
  out << "wrote " << written.size() << " maps for image " << a.index << " ("
      << store.manifest.class_names[cls] << ") to " << a.out << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attribute-space embedding head for generalized zero-shot learning"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic localized-attribute store");
  synth_cmd->add_option("--out", synth.out, "Output store directory")->required();
  synth_cmd->add_option("--M", synth.spec.spatial_size, "Spatial grid size")->capture_default_str();
  synth_cmd->add_option("--D", synth.spec.feature_depth, "Feature channels")->capture_default_str();
  synth_cmd->add_option("--L", synth.spec.num_attributes, "Attributes")->capture_default_str();
  synth_cmd->add_option("--C", synth.spec.num_classes, "Classes")->capture_default_str();
  synth_cmd->add_option("--per-class", synth.spec.per_class_count, "Images per class")
      ->capture_default_str();
  synth_cmd->add_option("--num-seen", synth.spec.num_seen, "Seen classes")->capture_default_str();
  synth_cmd->add_option("--signal", synth.spec.signal_strength, "Planted signal strength")
      ->capture_default_str();
  synth_cmd->add_option("--noise", synth.spec.noise_sigma, "Noise standard deviation")
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Random seed")->capture_default_str();

  std::string validate_store_dir;
  auto* validate_cmd = app.add_subcommand("validate", "Check a store against its format");
  validate_cmd->add_option("--store", validate_store_dir, "Store directory")->required();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train an embedding head");
  train_cmd->add_option("--store", train_args.store, "Store directory")->required();
  train_cmd->add_option("--config", train_args.config, "Training config (JSON)")->required();
  train_cmd->add_option("--out", train_args.out, "Checkpoint path")->required();

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the test splits");
  eval_cmd->add_option("--store", eval_args.store, "Store directory")->required();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint path")->required();
  eval_cmd->add_option("--gamma", eval_args.gamma, "Offset subtracted from seen-class scores")
      ->capture_default_str();
  eval_cmd->add_option("--json", eval_args.json, "Write metrics JSON here");
  eval_cmd->add_option("--predictions", eval_args.predictions, "Write the prediction table here");

  CalibrateArgs cal_args;
  auto* cal_cmd = app.add_subcommand("calibrate", "Tune the seen-class score offset");
  cal_cmd->add_option("--store", cal_args.store, "Store directory")->required();
  cal_cmd->add_option("--checkpoint", cal_args.checkpoint, "Checkpoint path")->required();
  cal_cmd->add_option("--val-fraction", cal_args.val_fraction, "Share of test images held out")
      ->capture_default_str();
  cal_cmd->add_option("--grid-steps", cal_args.grid_steps, "Number of gamma values")
      ->capture_default_str();
  cal_cmd->add_option("--seed", cal_args.seed, "Validation split seed")->capture_default_str();
  cal_cmd->add_option("--sweep-csv", cal_args.sweep_csv, "Write the sweep here");

  AblateArgs ablate_args;
  auto* ablate_cmd = app.add_subcommand("ablate", "Pooling method x space ablation");
  ablate_cmd->add_option("--store", ablate_args.store, "Store directory")->required();
  ablate_cmd->add_option("--config", ablate_args.config, "Training config (JSON)")->required();
  ablate_cmd->add_option("--seeds", ablate_args.seeds, "Seeds per configuration")
      ->capture_default_str();
  ablate_cmd->add_option("--csv", ablate_args.csv, "Write per-seed metrics here");

  MapsArgs maps_args;
  auto* maps_cmd = app.add_subcommand("maps", "Export attribute and class activation maps");
  maps_cmd->add_option("--store", maps_args.store, "Store directory")->required();
  maps_cmd->add_option("--checkpoint", maps_args.checkpoint, "Checkpoint path")->required();
  maps_cmd->add_option("--index", maps_args.index, "Image index")->required();
  maps_cmd->add_option("--topk", maps_args.topk, "Top attributes of the true class")
      ->capture_default_str();
  maps_cmd->add_option("--out", maps_args.out, "Output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*synth_cmd) return run_synth(synth, out);
    if (*validate_cmd) return run_validate(validate_store_dir, out);
    if (*train_cmd) return run_train(train_args, out);
    if (*eval_cmd) return run_eval(eval_args, out);
    if (*cal_cmd) return run_calibrate(cal_args, out);
    if (*ablate_cmd) return run_ablate(ablate_args, out);
    if (*maps_cmd) return run_maps(maps_args, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace selar::cli
