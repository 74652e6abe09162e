// wildfire: data generation, training, evaluation and explanation reports.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wildfire/checkpoint.hpp"
#include "wildfire/dataio.hpp"
#include "wildfire/digest.hpp"
#include "wildfire/error.hpp"
#include "wildfire/io.hpp"
#include "wildfire/metrics.hpp"
#include "wildfire/models.hpp"
#include "wildfire/training.hpp"
#include "wildfire/xai.hpp"

#ifndef WILDFIRE_VERSION
#define WILDFIRE_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace wildfire;

namespace {

/// Bad flags or arguments detected after parsing; exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path default_out_dir() {
  const char* env = std::getenv("WILDFIRE_OUT_DIR");
  return env && *env ? fs::path(env) : fs::path("wildfire_out");
}

std::string file_digest(const fs::path& p) { return digest_hex(read_file(p)); }

class Manifest {
 public:
  Manifest(std::string command, std::string config_hash) : start_(std::chrono::steady_clock::now()) {
    j_["command"] = std::move(command);
    j_["config_hash"] = std::move(config_hash);
    j_["inputs"] = json::array();
    j_["outputs"] = json::array();
    j_["tool_version"] = std::string("wildfire ") + WILDFIRE_VERSION;
  }
  void input(const fs::path& p) { j_["inputs"].push_back({{"path", p.string()}, {"digest", file_digest(p)}}); }
  void put(const fs::path& p, std::string_view bytes) {
    fs::create_directories(p.parent_path().empty() ? fs::path(".") : p.parent_path());
    write_file_atomic(p, bytes);
    j_["outputs"].push_back({{"path", p.string()}, {"digest", digest_hex(bytes)}});
  }
  void record(const fs::path& p) { j_["outputs"].push_back({{"path", p.string()}, {"digest", file_digest(p)}}); }
  void write(const fs::path& path) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    j_["wall_clock_seconds"] = secs;
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    write_file_atomic(path, j_.dump(2) + "\n");
  }

 private:
  json j_;
  std::chrono::steady_clock::time_point start_;
};

Family family_arg(const std::string& name) {
  try {
    return parse_family(name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

DatasetContainer load_data(const fs::path& p) {
  if (!fs::exists(p)) throw UsageError("data file " + p.string() + " does not exist");
  return load_container(p);
}

// --- checkpoints ---------------------------------------------------------------------

fs::path meta_path(const fs::path& ckpt) { return fs::path(ckpt.string() + ".meta.json"); }

std::string checkpoint_meta(const TrainReport& r) {
  json j;
  j["spec"] = json::parse(r.spec.to_json());
  j["seed"] = r.config.seed;
  j["stats_digest"] = r.stats_digest;
  j["checkpoint_id"] = r.checkpoint_id;
  j["config"] = json::parse(r.config.to_json());
  return j.dump(2) + "\n";
}

struct LoadedModel {
  std::unique_ptr<ModelGraph> model;
  std::string stats_digest;
  TrainConfig config;
};

LoadedModel load_model(const fs::path& ckpt) {
  if (!fs::exists(ckpt)) throw UsageError("checkpoint " + ckpt.string() + " does not exist");
  if (!fs::exists(meta_path(ckpt))) throw std::runtime_error("checkpoint metadata " + meta_path(ckpt).string() + " is missing");
  const json meta = json::parse(read_file(meta_path(ckpt)));
  LoadedModel m;
  const ModelSpec spec = ModelSpec::from_json(meta.at("spec").dump());
  m.model = build_model(spec, meta.at("seed").get<std::uint64_t>());
  m.model->load_state(load_checkpoint(ckpt));
  m.model->freeze();
  m.stats_digest = meta.at("stats_digest").get<std::string>();
  m.config = TrainConfig::from_json(meta.at("config").dump());
  return m;
}

void require_same_stats(const LoadedModel& m, const DatasetContainer& data, const fs::path& ckpt) {
  if (m.stats_digest != data.stats.digest()) {
    throw std::runtime_error("normalization stats of " + ckpt.string() + " (" + m.stats_digest +
                             ") differ from the data's (" + data.stats.digest() + ")");
  }
}

// --- commands ------------------------------------------------------------------------

struct GenDataArgs {
  std::size_t count = 200;
  std::uint64_t seed = 0;
  bool separable = false, no_ignition = false;
  Index size = 64;
  std::string out;
};

int gen_data(const GenDataArgs& a) {
  if (a.count == 0) throw UsageError("--count must be at least 1");
  if (a.size < kInputSide) throw UsageError("--size must be at least 32");
  SynthConfig cfg;
  cfg.count = a.count;
  cfg.seed = a.seed;
  cfg.separable = a.separable;
  cfg.ignition = !a.no_ignition;
  cfg.height = cfg.width = a.size;
  const fs::path out = a.out.empty() ? default_out_dir() / "data.wfd" : fs::path(a.out);
  json flags{{"count", a.count}, {"seed", a.seed}, {"separable", a.separable}, {"ignition", cfg.ignition}, {"size", a.size}};
  Manifest m("gen-data", digest_hex(flags.dump()));
  const DatasetContainer data = synthesize_dataset(cfg);
  m.put(out, encode_container(data));
  m.put(fs::path(out.string() + ".stats.csv"), format_stats_csv(data.stats));
  m.write(fs::path(out.string() + ".manifest.json"));
  std::cout << out.string() << ": " << data.samples.size() << " samples, digest " << data.digest() << "\n";
  return 0;
}

struct TrainArgs {
  std::string model, spec, data, config, out;
  std::optional<std::uint64_t> seed;
  std::optional<double> fraction, lr, target_auc, target_auc_pr;
  std::optional<int> batch_size, max_epochs, patience;
  bool quiet = false;
};

int train_cmd(const TrainArgs& a) {
  if (a.model.empty() && a.spec.empty()) throw UsageError("give --model or --spec");
  ModelSpec spec;
  if (!a.spec.empty()) {
    try {
      spec = ModelSpec::from_json(read_file(a.spec));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    if (!a.model.empty() && family_arg(a.model) != spec.family) throw UsageError("--model disagrees with --spec family");
  } else {
    spec = ModelSpec::desk(family_arg(a.model));
  }
  TrainConfig cfg;
  if (!a.config.empty()) cfg = TrainConfig::from_json(read_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  if (a.fraction) cfg.fraction = *a.fraction;
  if (a.lr) cfg.adam.learning_rate = *a.lr;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.max_epochs) cfg.max_epochs = *a.max_epochs;
  if (a.patience) cfg.patience = *a.patience;
  if (a.target_auc) cfg.target_auc = *a.target_auc;
  if (a.target_auc_pr) cfg.target_auc_pr = *a.target_auc_pr;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const DatasetContainer data = load_data(a.data);
  const fs::path out = a.out.empty() ? default_out_dir() / "train" : fs::path(a.out);

  Manifest m("train", cfg.hash());
  m.input(a.data);
  const DataSplits splits = make_splits(data, cfg.fraction, cfg.split_seed);
  TrainHooks hooks;
  if (!a.quiet) {
    hooks.on_epoch = [](const EpochRecord& e) {
      std::fprintf(stderr, "epoch %d loss %.5f val auc %.4f auc-pr %.4f\n", e.epoch, e.train_loss, e.val_auc,
                   e.val_auc_pr);
    };
  }
  TrainResult r = train(spec, splits.train, splits.val, cfg, hooks);
  r.report.train_ids = ids_digest(splits.train_ids);
  r.report.val_ids = ids_digest(splits.val_ids);
  r.report.test_ids = ids_digest(splits.test_ids);
  if (!r.report.diverged) r.report.test = evaluate(*r.model, splits.test, cfg.threshold, cfg.batch_size);

  const fs::path ckpt = out / "checkpoint.pyc";
  m.put(ckpt, encode_checkpoint(r.model->state()));
  m.put(meta_path(ckpt), checkpoint_meta(r.report));
  m.put(out / "report.json", r.report.to_json());
  std::string ids;
  for (std::size_t id : splits.train_ids) ids += std::to_string(id) + "\n";
  m.put(out / "train_ids.txt", ids);
  m.write(out / "train.manifest.json");
  if (r.report.diverged) {
    std::cerr << "training diverged: " << r.report.divergence << " (report kept in " << out.string() << ")\n";
    return 1;
  }
  std::cout << out.string() << ": stopped after epoch " << r.report.stopped_epoch << " (" << r.report.stop_reason
            << "), best epoch " << r.report.best_epoch << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint, data, split = "test", out;
  std::optional<double> threshold;
};

int evaluate_cmd(const EvaluateArgs& a) {
  LoadedModel lm = load_model(a.checkpoint);
  const DatasetContainer data = load_data(a.data);
  require_same_stats(lm, data, a.checkpoint);
  DatasetContainer part;
  if (a.split == "all") {
    part = data;
  } else {
    DataSplits s = make_splits(data, 1.0, lm.config.split_seed);
    part = a.split == "train" ? std::move(s.train) : a.split == "val" ? std::move(s.val) : std::move(s.test);
  }
  const double thr = a.threshold.value_or(lm.config.threshold);
  if (!(thr > 0.0 && thr < 1.0)) throw UsageError("--threshold must lie in (0, 1)");
  const fs::path out = a.out.empty() ? default_out_dir() / "evaluate" : fs::path(a.out);
  Manifest m("evaluate", digest_hex(json{{"split", a.split}, {"threshold", thr}}.dump()));
  m.input(a.checkpoint);
  m.input(a.data);
  const MetricSummary s = evaluate(*lm.model, part, thr);
  m.put(out / "metrics.json", s.to_json() + "\n");
  const ConfusionCounts& c = s.counts;
  m.put(out / "confusion.csv", "actual,predicted_fire,predicted_no_fire\nfire," + std::to_string(c.tp) + "," +
                                  std::to_string(c.fn) + "\nno_fire," + std::to_string(c.fp) + "," +
                                  std::to_string(c.tn) + "\n");
  m.write(out / "evaluate.manifest.json");
  std::cout << s.to_json() << "\n";
  return 0;
}

struct CompareArgs {
  std::vector<std::string> reports;
  std::string mode = "auto", out;
};

int compare_cmd(const CompareArgs& a) {
  std::vector<TrainReport> reports;
  Manifest m("compare", digest_hex(a.mode));
  for (const auto& p : a.reports) {
    if (!fs::exists(p)) throw UsageError("report " + p + " does not exist");
    reports.push_back(TrainReport::from_json(read_file(p)));
    m.input(p);
  }
  for (const auto& r : reports) {
    if (r.test_ids != reports.front().test_ids) throw std::runtime_error("reports were evaluated on different test sets");
  }
  bool fractions = a.mode == "fractions";
  if (a.mode == "auto") {
    for (const auto& r : reports) fractions = fractions || r.config.fraction != reports.front().config.fraction;
  }
  auto outcome = [](const TrainReport& r) {
    RunOutcome o;
    o.seed = r.config.seed;
    o.ok = !r.diverged && r.test.has_value();
    o.failure = r.divergence;
    o.test = r.test;
    o.report = r;
    return o;
  };
  std::string table;
  if (fractions) {
    std::vector<FractionRow> rows;
    for (const auto& r : reports) {
      FractionRow row;
      row.fraction = r.config.fraction;
      row.spec = r.spec;
      row.run = outcome(r);
      row.train_ids = r.train_ids;
      row.test_ids = r.test_ids;
      rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const FractionRow& x, const FractionRow& y) {
      return x.fraction != y.fraction ? x.fraction < y.fraction : x.spec.family < y.spec.family;
    });
    table = format_fraction_table(rows);
  } else {
    std::map<Family, std::vector<RunOutcome>> by_family;
    std::map<Family, ModelSpec> specs;
    for (const auto& r : reports) {
      by_family[r.spec.family].push_back(outcome(r));
      specs[r.spec.family] = r.spec;
    }
    std::vector<SeedSummary> rows;
    for (auto& [f, runs] : by_family) rows.push_back(summarize_seeds(specs[f], std::move(runs)));
    table = format_seed_table(rows);
  }
  const fs::path out = a.out.empty() ? default_out_dir() / "compare" : fs::path(a.out);
  m.put(out / (fractions ? "fractions.csv" : "seeds.csv"), table);
  m.write(out / "compare.manifest.json");
  std::cout << table;
  return 0;
}

struct CostArgs {
  std::vector<std::string> models{"autoencoder", "resnet", "unet", "swin"};
  std::string scale = "desk", out;
};

int cost_cmd(const CostArgs& a) {
  std::vector<std::unique_ptr<ModelGraph>> graphs;
  for (const auto& name : a.models) {
    ModelSpec s = ModelSpec::desk(family_arg(name));
    if (a.scale == "paper") s.width = {1, 1};
    graphs.push_back(build_model(s, 0));
  }
  std::vector<ModelGraph*> ptrs;
  for (auto& g : graphs) ptrs.push_back(g.get());
  const auto rows = cost_report(ptrs);
  const fs::path out = a.out.empty() ? default_out_dir() / "cost" : fs::path(a.out);
  Manifest m("cost", digest_hex(a.scale));
  m.put(out / "cost.csv", format_cost_csv(rows));
  m.put(out / "cost_table.csv", format_cost_table(rows));
  m.write(out / "cost.manifest.json");
  std::cout << format_cost_csv(rows);
  return 0;
}

struct ExplainArgs {
  std::vector<std::string> checkpoints, untrained;
  std::string data, methods = "shap,gradcam,ig", out;
  std::size_t sample_id = 0;
  int ig_steps = kDefaultIgSteps;
};

int explain_cmd(const ExplainArgs& a) {
  if (a.checkpoints.empty() && a.untrained.empty()) throw UsageError("give --checkpoints or --untrained");
  ExplainMethods methods;
  try {
    methods = ExplainMethods::parse(a.methods);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (a.ig_steps < 1) throw UsageError("--ig-steps must be at least 1");
  const DatasetContainer data = load_data(a.data);
  if (a.sample_id >= data.samples.size()) {
    throw UsageError("--sample-id " + std::to_string(a.sample_id) + " outside the valid range [0, " +
                     std::to_string(data.samples.size()) + ")");
  }
  Manifest m("explain", digest_hex(json{{"methods", a.methods}, {"sample_id", a.sample_id}, {"ig_steps", a.ig_steps}}.dump()));
  m.input(a.data);
  std::vector<LoadedModel> loaded;
  std::vector<std::unique_ptr<ModelGraph>> fresh;
  std::vector<ExplainModel> models;
  for (const auto& p : a.checkpoints) {
    loaded.push_back(load_model(p));
    require_same_stats(loaded.back(), data, p);
    m.input(p);
  }
  for (auto& l : loaded) models.push_back({l.model.get(), true});
  for (const auto& name : a.untrained) {
    fresh.push_back(build_model(ModelSpec::desk(family_arg(name)), 0));
    fresh.back()->freeze();
    models.push_back({fresh.back().get(), false});
    std::cerr << "warning: " << family_label(fresh.back()->spec().family) << " is untrained\n";
  }
  const ExplanationBundle bundle = explain_sample(models, data, a.sample_id, methods, a.ig_steps);
  const fs::path out = a.out.empty() ? default_out_dir() / "explain" : fs::path(a.out);
  for (const auto& p : write_bundle(bundle, out)) m.record(p);
  m.write(out / ("sample_" + std::to_string(a.sample_id)) / "explain.manifest.json");
  std::cout << (out / ("sample_" + std::to_string(a.sample_id))).string() << "\n";
  return 0;
}

struct MatrixArgs {
  std::string data, measure = "pearson", out;
};

int feature_matrix_cmd(const MatrixArgs& a) {
  const DatasetContainer data = load_data(a.data);
  const auto measure = a.measure == "ssim" ? SimilarityMeasure::Ssim : SimilarityMeasure::Pearson;
  const fs::path out = a.out.empty() ? default_out_dir() / "feature_matrix" : fs::path(a.out);
  Manifest m("feature-matrix", digest_hex(a.measure));
  m.input(a.data);
  const std::string csv = format_matrix_csv(pairwise_matrix(data, measure));
  m.put(out / ("feature_matrix_" + a.measure + ".csv"), csv);
  m.write(out / ("feature-matrix_" + a.measure + ".manifest.json"));
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wildfire spread segmentation: synthetic data, training, metrics and explanations"};
  app.set_version_flag("--version", std::string("wildfire ") + WILDFIRE_VERSION);
  app.require_subcommand(1);
  std::function<int()> run;

  GenDataArgs gd;
  auto* c_gen = app.add_subcommand("gen-data", "Generate a synthetic dataset container");
  c_gen->add_option("--count", gd.count, "Number of samples")->capture_default_str();
  c_gen->add_option("--seed", gd.seed, "Generator seed")->capture_default_str();
  c_gen->add_option("--size", gd.size, "Source grid side (>= 32)")->capture_default_str();
  c_gen->add_flag("--separable", gd.separable, "Label is a threshold of one smooth feature");
  c_gen->add_flag("--no-ignition", gd.no_ignition, "Disable fire seeds");
  c_gen->add_option("--out", gd.out, "Output container path");
  c_gen->callback([&] { run = [&] { return gen_data(gd); }; });

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train one model and write a checkpoint and report");
  c_train->add_option("--model", tr.model, "autoencoder | resnet | unet | swin");
  c_train->add_option("--spec", tr.spec, "Model spec JSON file");
  c_train->add_option("--data", tr.data, "Dataset container")->required();
  c_train->add_option("--config", tr.config, "Training config JSON file");
  c_train->add_option("--seed", tr.seed, "Training seed");
  c_train->add_option("--fraction", tr.fraction, "Fraction of the training split");
  c_train->add_option("--lr", tr.lr, "Adam learning rate");
  c_train->add_option("--batch-size", tr.batch_size);
  c_train->add_option("--max-epochs", tr.max_epochs);
  c_train->add_option("--patience", tr.patience);
  c_train->add_option("--target-auc", tr.target_auc, "Stop once validation AUC reaches this");
  c_train->add_option("--target-auc-pr", tr.target_auc_pr, "Stop once validation AUC-PR reaches this");
  c_train->add_flag("--quiet", tr.quiet, "No per-epoch log");
  c_train->add_option("--out", tr.out, "Output directory");
  c_train->callback([&] { run = [&] { return train_cmd(tr); }; });

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset");
  c_eval->add_option("--checkpoint", ev.checkpoint)->required();
  c_eval->add_option("--data", ev.data)->required();
  c_eval->add_option("--split", ev.split, "test | val | train | all")
      ->check(CLI::IsMember({"test", "val", "train", "all"}))
      ->capture_default_str();
  c_eval->add_option("--threshold", ev.threshold, "Decision threshold (default from the checkpoint)");
  c_eval->add_option("--out", ev.out, "Output directory");
  c_eval->callback([&] { run = [&] { return evaluate_cmd(ev); }; });

  CompareArgs cmp;
  auto* c_cmp = app.add_subcommand("compare", "Aggregate training reports into a seed or fraction table");
  c_cmp->add_option("--reports", cmp.reports, "report.json files")->required()->expected(1, -1);
  c_cmp->add_option("--mode", cmp.mode, "auto | seeds | fractions")
      ->check(CLI::IsMember({"auto", "seeds", "fractions"}))
      ->capture_default_str();
  c_cmp->add_option("--out", cmp.out, "Output directory");
  c_cmp->callback([&] { run = [&] { return compare_cmd(cmp); }; });

  CostArgs cost;
  auto* c_cost = app.add_subcommand("cost", "Parameter and FLOP counts");
  c_cost->add_option("--models", cost.models, "Families to include")->delimiter(',')->capture_default_str();
  c_cost->add_option("--scale", cost.scale, "desk | paper")->check(CLI::IsMember({"desk", "paper"}))->capture_default_str();
  c_cost->add_option("--out", cost.out, "Output directory");
  c_cost->callback([&] { run = [&] { return cost_cmd(cost); }; });

  ExplainArgs ex;
  auto* c_ex = app.add_subcommand("explain", "Attribution bundle for one sample");
  c_ex->add_option("--checkpoints", ex.checkpoints, "Trained checkpoints")->delimiter(',');
  c_ex->add_option("--untrained", ex.untrained, "Families to explain at initialization")->delimiter(',');
  c_ex->add_option("--data", ex.data)->required();
  c_ex->add_option("--sample-id", ex.sample_id, "Zero-based sample index")->required();
  c_ex->add_option("--methods", ex.methods, "Comma list of shap, gradcam, ig")->capture_default_str();
  c_ex->add_option("--ig-steps", ex.ig_steps)->capture_default_str();
  c_ex->add_option("--out", ex.out, "Output directory");
  c_ex->callback([&] { run = [&] { return explain_cmd(ex); }; });

  MatrixArgs mx;
  auto* c_mx = app.add_subcommand("feature-matrix", "Pairwise feature similarity matrix");
  c_mx->add_option("--data", mx.data)->required();
  c_mx->add_option("--measure", mx.measure, "pearson | ssim")->check(CLI::IsMember({"pearson", "ssim"}))->capture_default_str();
  c_mx->add_option("--out", mx.out, "Output directory");
  c_mx->callback([&] { run = [&] { return feature_matrix_cmd(mx); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    return run();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
