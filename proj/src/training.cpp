#include "wildfire/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "wildfire/checkpoint.hpp"
#include "wildfire/digest.hpp"
#include "wildfire/error.hpp"
#include "wildfire/rng.hpp"

namespace wildfire {

using json = nlohmann::ordered_json;

void adam_step(std::span<float> param, std::span<const float> grad, AdamState& state, const AdamConfig& config) {
  if (param.size() != grad.size()) throw std::invalid_argument("adam_step: parameter/gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  if (state.m.size() != param.size()) throw std::invalid_argument("adam_step: state does not match parameter");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    param[i] = static_cast<float>(param[i] - config.learning_rate * mhat / (std::sqrt(vhat) + config.eps));
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), states_(params_.size()), config_(config) {}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    const std::span<float> g = p.grad_buffer();
    adam_step(p.data(), g, states_[i], config_);
    p.zero_grad();
  }
  ++steps_;
}

// --- config ------------------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (!(adam.learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) fail("beta1 must lie in [0,1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) fail("beta2 must lie in [0,1)");
  if (!(adam.eps > 0.0)) fail("adam_eps must be > 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (patience < 1) fail("patience must be >= 1");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (pos_weight && !(*pos_weight > 0.0)) fail("pos_weight must be > 0");
  if (!(fraction > 0.0 && fraction <= 1.0)) fail("fraction must lie in (0,1]");
  if (!(min_delta >= 0.0)) fail("min_delta must be >= 0");
  if (!(threshold > 0.0 && threshold < 1.0)) fail("threshold must lie in (0,1)");
}

namespace {

json config_json(const TrainConfig& c) {
  json j;
  j["learning_rate"] = c.adam.learning_rate;
  j["beta1"] = c.adam.beta1;
  j["beta2"] = c.adam.beta2;
  j["adam_eps"] = c.adam.eps;
  j["batch_size"] = c.batch_size;
  j["patience"] = c.patience;
  j["max_epochs"] = c.max_epochs;
  j["pos_weight"] = c.pos_weight ? json(*c.pos_weight) : json(nullptr);
  j["seed"] = c.seed;
  j["fraction"] = c.fraction;
  j["min_delta"] = c.min_delta;
  j["target_auc"] = c.target_auc ? json(*c.target_auc) : json(nullptr);
  j["target_auc_pr"] = c.target_auc_pr ? json(*c.target_auc_pr) : json(nullptr);
  j["threshold"] = c.threshold;
  j["split_seed"] = c.split_seed;
  return j;
}

TrainConfig config_from(const json& j) {
  TrainConfig c;
  if (!j.is_object()) throw std::invalid_argument("train config: expected a JSON object");
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  try {
    if (j.contains("learning_rate")) c.adam.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("beta1")) c.adam.beta1 = j.at("beta1").get<double>();
    if (j.contains("beta2")) c.adam.beta2 = j.at("beta2").get<double>();
    if (j.contains("adam_eps")) c.adam.eps = j.at("adam_eps").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("patience")) c.patience = j.at("patience").get<int>();
    if (j.contains("max_epochs")) c.max_epochs = j.at("max_epochs").get<int>();
    c.pos_weight = opt("pos_weight");
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("fraction")) c.fraction = j.at("fraction").get<double>();
    if (j.contains("min_delta")) c.min_delta = j.at("min_delta").get<double>();
    c.target_auc = opt("target_auc");
    c.target_auc_pr = opt("target_auc_pr");
    if (j.contains("threshold")) c.threshold = j.at("threshold").get<double>();
    if (j.contains("split_seed")) c.split_seed = j.at("split_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

json metrics_json(const MetricSummary& m) { return json::parse(m.to_json()); }

MetricSummary metrics_from(const json& j) {
  MetricSummary m;
  if (!j.at("auc").is_null()) m.auc = j.at("auc").get<double>();
  if (!j.at("auc_pr").is_null()) m.auc_pr = j.at("auc_pr").get<double>();
  m.precision = {j.at("precision").get<double>(), j.at("precision_degenerate").get<bool>()};
  m.recall = {j.at("recall").get<double>(), j.at("recall_degenerate").get<bool>()};
  m.threshold = j.at("threshold").get<double>();
  const auto& c = j.at("confusion");
  m.counts = {c.at("tp").get<std::uint64_t>(), c.at("fp").get<std::uint64_t>(), c.at("tn").get<std::uint64_t>(),
              c.at("fn").get<std::uint64_t>()};
  m.masked = j.at("masked_pixels").get<std::uint64_t>();
  return m;
}

}  // namespace

std::string TrainConfig::to_json() const { return config_json(*this).dump(2) + "\n"; }

TrainConfig TrainConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  return config_from(j);
}

std::string TrainConfig::hash() const { return digest_hex(config_json(*this).dump()); }

std::string TrainReport::to_json() const {
  json j;
  j["model"] = json::parse(spec.to_json());
  j["config"] = config_json(config);
  j["config_hash"] = config.hash();
  j["seed"] = config.seed;
  j["pos_weight"] = pos_weight;
  j["stats_digest"] = stats_digest;
  j["train_ids"] = train_ids;
  j["val_ids"] = val_ids;
  j["test_ids"] = test_ids;
  json epochs_j = json::array();
  for (const auto& e : epochs) {
    epochs_j.push_back({{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"val_auc", e.val_auc},
                        {"val_auc_pr", e.val_auc_pr},
                        {"val_precision", e.val_precision},
                        {"val_recall", e.val_recall},
                        {"improved", e.improved}});
  }
  j["epochs"] = std::move(epochs_j);
  j["best_epoch"] = best_epoch;
  j["best_val_auc_pr"] = best_val_auc_pr;
  j["stopped_epoch"] = stopped_epoch;
  j["stop_reason"] = stop_reason;
  j["diverged"] = diverged;
  j["divergence"] = divergence;
  j["checkpoint_id"] = checkpoint_id;
  j["test"] = test ? metrics_json(*test) : json(nullptr);
  return j.dump(2) + "\n";
}

TrainReport TrainReport::from_json(std::string_view text) {
  TrainReport r;
  try {
    const json j = json::parse(text);
    r.spec = ModelSpec::from_json(j.at("model").dump());
    r.config = config_from(j.at("config"));
    r.pos_weight = j.at("pos_weight").get<double>();
    r.stats_digest = j.at("stats_digest").get<std::string>();
    r.train_ids = j.at("train_ids").get<std::string>();
    r.val_ids = j.at("val_ids").get<std::string>();
    r.test_ids = j.at("test_ids").get<std::string>();
    for (const auto& e : j.at("epochs")) {
      r.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("val_auc").get<double>(),
                          e.at("val_auc_pr").get<double>(), e.at("val_precision").get<double>(),
                          e.at("val_recall").get<double>(), e.at("improved").get<bool>()});
    }
    r.best_epoch = j.at("best_epoch").get<int>();
    r.best_val_auc_pr = j.at("best_val_auc_pr").get<double>();
    r.stopped_epoch = j.at("stopped_epoch").get<int>();
    r.stop_reason = j.at("stop_reason").get<std::string>();
    r.diverged = j.at("diverged").get<bool>();
    r.divergence = j.at("divergence").get<std::string>();
    r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    if (!j.at("test").is_null()) r.test = metrics_from(j.at("test"));
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("train report: ") + e.what());
  }
  return r;
}

// --- data ---------------------------------------------------------------------

DataSplits make_splits(const DatasetContainer& data, double fraction, std::uint64_t split_seed) {
  const SplitIndices parts = split_indices(data.samples.size(), kSplitRatios, split_seed);
  DataSplits s;
  s.train_ids = fraction < 1.0 ? fraction_indices(parts.train, fraction, split_seed) : parts.train;
  if (s.train_ids.empty()) throw std::invalid_argument("fraction leaves no training samples");
  s.val_ids = parts.val;
  s.test_ids = parts.test;
  s.train = subset(data, s.train_ids, SplitTag::Train);
  s.val = subset(data, s.val_ids, SplitTag::Val);
  s.test = subset(data, s.test_ids, SplitTag::Test);
  return s;
}

double class_weight(const DatasetContainer& data) {
  std::uint64_t pos = 0, neg = 0;
  for (const auto& s : data.samples) {
    for (float y : s.label) {
      if (y == 1.0f) ++pos;
      else if (y == 0.0f) ++neg;
    }
  }
  if (pos == 0 || neg == 0) return 1.0;
  return static_cast<double>(neg) / static_cast<double>(pos);
}

Predictions predict(ModelGraph& model, const DatasetContainer& data, int batch_size) {
  Predictions p;
  const std::size_t n = data.samples.size();
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> ids(std::min(n - start, static_cast<std::size_t>(batch_size)));
    std::iota(ids.begin(), ids.end(), start);
    const Batch b = make_batch(data, ids, kEvalCropSeed);
    const Tensor probs = ops::sigmoid(model.forward(b.features, {.mode = ops::Mode::Eval}));
    p.probs.insert(p.probs.end(), probs.data().begin(), probs.data().end());
    p.labels.insert(p.labels.end(), b.labels.data().begin(), b.labels.data().end());
  }
  return p;
}

MetricSummary evaluate(ModelGraph& model, const DatasetContainer& data, double threshold, int batch_size) {
  const Predictions p = predict(model, data, batch_size);
  return summarize(p.probs, p.labels, threshold);
}

// --- training loop ------------------------------------------------------------------

namespace {

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(seed, name_key("shuffle") ^ static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::vector<NamedTensor> snapshot(const ModelGraph& model) {
  std::vector<NamedTensor> s = model.state();
  for (auto& t : s) t.value = t.value.detach();
  return s;
}

}  // namespace

TrainResult train(const ModelSpec& spec, const DatasetContainer& train_data, const DatasetContainer& val_data,
                  const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  spec.validate();
  if (train_data.samples.empty()) throw std::invalid_argument("train: empty training set");
  if (val_data.samples.empty()) throw std::invalid_argument("train: empty validation set");
  if (train_data.stats.digest() != val_data.stats.digest()) {
    throw std::invalid_argument("train: training and validation sets use different normalization stats");
  }
  const auto started = std::chrono::steady_clock::now();
  TrainResult result{build_model(spec, config.seed), {}};
  ModelGraph& model = *result.model;
  TrainReport& rep = result.report;
  rep.spec = spec;
  rep.config = config;
  rep.stats_digest = train_data.stats.digest();
  rep.pos_weight = config.pos_weight ? *config.pos_weight : class_weight(train_data);

  std::vector<Tensor> params;
  for (const auto& p : model.parameters()) params.push_back(p.value);
  Adam adam(params, config.adam);

  double best = -std::numeric_limits<double>::infinity();
  std::vector<NamedTensor> best_state = snapshot(model);
  int since_best = 0;
  std::uint64_t step = 0;
  const std::size_t n = train_data.samples.size();
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    const std::vector<std::size_t> order = shuffled(n, config.seed, epoch);
    const std::uint64_t crop_seed = mix64(config.seed ^ mix64(static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    try {
      for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t end = std::min(n, start + static_cast<std::size_t>(config.batch_size));
        const std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
        const Batch b = make_batch(train_data, ids, crop_seed);
        Tape tape;
        double value = 0.0;
        {
          TapeScope scope(tape);
          const Tensor logits = model.forward(b.features, {.mode = ops::Mode::Train, .step = step});
          const ops::LossResult loss = ops::masked_weighted_bce(logits, b.labels, static_cast<float>(rep.pos_weight));
          value = loss.loss.item();
          if (!std::isfinite(value)) throw NumericError("non-finite training loss");
          tape.backward(loss.loss);
        }
        adam.step();
        ++step;
        loss_sum += value;
        ++batches;
      }
    } catch (const NumericError& e) {
      rep.diverged = true;
      rep.divergence = "epoch " + std::to_string(epoch) + ": " + e.what();
      rep.stop_reason = "diverged";
      rep.stopped_epoch = epoch;
      break;
    }
    rec.train_loss = loss_sum / static_cast<double>(batches);
    const MetricSummary val = evaluate(model, val_data, config.threshold, config.batch_size);
    rec.val_auc = val.auc.value_or(0.0);
    rec.val_auc_pr = val.auc_pr.value_or(0.0);
    rec.val_precision = val.precision.value;
    rec.val_recall = val.recall.value;
    const double monitored = hooks.monitor ? hooks.monitor(epoch, rec.val_auc_pr) : rec.val_auc_pr;
    rec.val_auc_pr = monitored;
    if (monitored > best + config.min_delta) {
      best = monitored;
      rec.improved = true;
      rep.best_epoch = epoch;
      rep.best_val_auc_pr = monitored;
      best_state = snapshot(model);
      since_best = 0;
    } else {
      ++since_best;
    }
    rep.epochs.push_back(rec);
    rep.stopped_epoch = epoch;
    if (hooks.on_epoch) hooks.on_epoch(rec);
    const bool auc_ok = !config.target_auc || rec.val_auc >= *config.target_auc;
    const bool pr_ok = !config.target_auc_pr || rec.val_auc_pr >= *config.target_auc_pr;
    if ((config.target_auc || config.target_auc_pr) && auc_ok && pr_ok) {
      rep.stop_reason = "target";
      break;
    }
    if (since_best >= config.patience) {
      rep.stop_reason = "patience";
      break;
    }
    if (epoch == config.max_epochs) rep.stop_reason = "max_epochs";
  }
  model.load_state(best_state);
  rep.checkpoint_id = digest_hex(encode_checkpoint(model.state()));
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// --- experiments ---------------------------------------------------------------------

ErrorRate error_rate(std::span<const double> values) {
  ErrorRate e;
  if (values.empty()) {
    e.defined = false;
    return e;
  }
  const double n = static_cast<double>(values.size());
  e.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2 || e.mean == 0.0) {
    e.defined = false;
    return e;
  }
  double ss = 0.0;
  for (double v : values) ss += (v - e.mean) * (v - e.mean);
  e.rate = std::sqrt(ss / (n - 1.0)) / std::abs(e.mean) * 100.0;
  return e;
}

std::string format_error_rate(const ErrorRate& e) {
  char buf[64];
  if (e.defined) {
    std::snprintf(buf, sizeof buf, "%.4f ± %.2f%%", e.mean, e.rate);
  } else {
    std::snprintf(buf, sizeof buf, "%.4f ± n/a", e.mean);
  }
  return buf;
}

namespace {

RunOutcome run_once(const ModelSpec& spec, const DataSplits& splits, const TrainConfig& config) {
  RunOutcome out;
  out.seed = config.seed;
  try {
    TrainResult r = train(spec, splits.train, splits.val, config);
    r.report.train_ids = ids_digest(splits.train_ids);
    r.report.val_ids = ids_digest(splits.val_ids);
    r.report.test_ids = ids_digest(splits.test_ids);
    if (r.report.diverged) {
      out.failure = r.report.divergence;
    } else {
      r.report.test = evaluate(*r.model, splits.test, config.threshold, config.batch_size);
      out.test = r.report.test;
      out.ok = true;
    }
    out.report = std::move(r.report);
  } catch (const std::exception& e) {
    out.failure = e.what();
  }
  return out;
}

}  // namespace

SeedSummary summarize_seeds(const ModelSpec& spec, std::vector<RunOutcome> runs) {
  SeedSummary s;
  s.spec = spec;
  s.runs = std::move(runs);
  std::vector<double> auc, auc_pr, prec, rec;
  for (const auto& r : s.runs) {
    if (!r.ok || !r.test) continue;
    auc.push_back(r.test->auc.value_or(0.0));
    auc_pr.push_back(r.test->auc_pr.value_or(0.0));
    prec.push_back(r.test->precision.value);
    rec.push_back(r.test->recall.value);
  }
  s.auc = error_rate(auc);
  s.auc_pr = error_rate(auc_pr);
  s.precision = error_rate(prec);
  s.recall = error_rate(rec);
  return s;
}

SeedSummary seed_experiment(const ModelSpec& spec, const DatasetContainer& data, const TrainConfig& config,
                            int k_seeds) {
  if (k_seeds < 2) throw std::invalid_argument("seed_experiment: need at least 2 seeds");
  const DataSplits splits = make_splits(data, config.fraction, config.split_seed);
  std::vector<RunOutcome> runs;
  for (int k = 0; k < k_seeds; ++k) {
    TrainConfig c = config;
    c.seed = config.seed + static_cast<std::uint64_t>(k);
    runs.push_back(run_once(spec, splits, c));
  }
  return summarize_seeds(spec, std::move(runs));
}

std::string format_seed_table(const std::vector<SeedSummary>& rows) {
  std::string out =
      "Model,AUC ± error rate,AUC-PR ± error rate,Precision ± error rate,Recall ± error rate\n";
  for (const auto& r : rows) {
    out += std::string(family_label(r.spec.family));
    for (const ErrorRate* e : {&r.auc, &r.auc_pr, &r.precision, &r.recall}) out += "," + format_error_rate(*e);
    out += "\n";
  }
  return out;
}

std::vector<FractionRow> fraction_experiment(const ModelSpec& spec, const DatasetContainer& data,
                                             const TrainConfig& config, std::span<const double> fractions) {
  std::vector<FractionRow> rows;
  for (double f : fractions) {
    const bool allowed = std::any_of(kFractions.begin(), kFractions.end(), [f](double k) { return std::abs(k - f) < 1e-12; });
    if (!allowed) throw std::invalid_argument("fraction_experiment: fractions must come from {0.10,0.25,0.50,0.75,1.00}");
  }
  for (double f : fractions) {
    TrainConfig c = config;
    c.fraction = f;
    const DataSplits splits = make_splits(data, f, config.split_seed);
    FractionRow row;
    row.fraction = f;
    row.spec = spec;
    row.run = run_once(spec, splits, c);
    row.train_ids = ids_digest(splits.train_ids);
    row.test_ids = ids_digest(splits.test_ids);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_fraction_table(const std::vector<FractionRow>& rows) {
  std::string out = "Fraction,Model,AUC,AUC-PR,Precision,Recall\n";
  char buf[160];
  for (const auto& r : rows) {
    const std::string label(family_label(r.spec.family));
    if (!r.run.ok || !r.run.test) {
      std::snprintf(buf, sizeof buf, "%g%%,%s,failed,failed,failed,failed\n", r.fraction * 100.0, label.c_str());
    } else {
      const MetricSummary& m = *r.run.test;
      std::snprintf(buf, sizeof buf, "%g%%,%s,%.4f,%.4f,%.4f,%.4f\n", r.fraction * 100.0, label.c_str(),
                    m.auc.value_or(0.0), m.auc_pr.value_or(0.0), m.precision.value, m.recall.value);
    }
    out += buf;
  }
  return out;
}

}  // namespace wildfire
