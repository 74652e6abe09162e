#include "wildfire/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "wildfire/error.hpp"
#include "wildfire/models.hpp"

namespace wildfire {

namespace {

void require_same_length(std::span<const float> a, std::span<const float> b, const char* what) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(a.size()) + " scores vs " +
                                std::to_string(b.size()) + " labels");
  }
}

struct Scored {
  float score;
  bool positive;
};

std::vector<Scored> unmasked(std::span<const float> scores, std::span<const float> labels) {
  std::vector<Scored> out;
  out.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == -1.0f) continue;
    out.push_back({scores[i], labels[i] == 1.0f});
  }
  return out;
}

}  // namespace

ConfusionCounts confusion(std::span<const float> probs, std::span<const float> labels, double threshold) {
  require_same_length(probs, labels, "confusion");
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("confusion: threshold must lie in (0,1)");
  ConfusionCounts c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] == -1.0f) continue;
    const bool predicted = probs[i] > threshold;
    const bool actual = labels[i] == 1.0f;
    if (predicted && actual) ++c.tp;
    else if (predicted) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

Ratio precision(const ConfusionCounts& c) {
  const std::uint64_t d = c.tp + c.fp;
  if (d == 0) return {0.0, true};
  return {static_cast<double>(c.tp) / static_cast<double>(d), false};
}

Ratio recall(const ConfusionCounts& c) {
  const std::uint64_t d = c.tp + c.fn;
  if (d == 0) return {0.0, true};
  return {static_cast<double>(c.tp) / static_cast<double>(d), false};
}

double roc_auc(std::span<const float> scores, std::span<const float> labels) {
  require_same_length(scores, labels, "roc_auc");
  std::vector<Scored> v = unmasked(scores, labels);
  std::sort(v.begin(), v.end(), [](const Scored& a, const Scored& b) { return a.score < b.score; });
  // Walk tie groups in ascending order; each positive beats every negative
  // below its group and half of the negatives inside it.
  double pairs = 0.0;
  std::uint64_t neg_below = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    std::uint64_t gp = 0, gn = 0;
    while (j < v.size() && v[j].score == v[i].score) {
      (v[j].positive ? gp : gn) += 1;
      ++j;
    }
    pairs += static_cast<double>(gp) * (static_cast<double>(neg_below) + 0.5 * static_cast<double>(gn));
    neg_below += gn;
    pos += gp;
    neg += gn;
    i = j;
  }
  if (pos == 0 || neg == 0) {
    throw UndefinedMetricError("roc_auc: needs at least one positive and one negative unmasked pixel");
  }
  return pairs / (static_cast<double>(pos) * static_cast<double>(neg));
}

double pr_auc(std::span<const float> scores, std::span<const float> labels) {
  require_same_length(scores, labels, "pr_auc");
  std::vector<Scored> v = unmasked(scores, labels);
  std::stable_sort(v.begin(), v.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  std::uint64_t tp = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (!v[k].positive) continue;
    ++tp;
    sum += static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  if (tp == 0) throw UndefinedMetricError("pr_auc: no positive unmasked pixel");
  return sum / static_cast<double>(tp);
}

double pearson(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("pearson: inputs must be non-empty and equal in size");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw UndefinedMetricError("pearson: zero variance input");
  const double r = sab / std::sqrt(saa * sbb);
  return std::clamp(r, -1.0, 1.0);
}

namespace {

std::array<double, kSsimWindow * kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow * kSsimWindow> w{};
  const int h = kSsimWindow / 2;
  double total = 0.0;
  for (int y = -h; y <= h; ++y) {
    for (int x = -h; x <= h; ++x) {
      const double v = std::exp(-(x * x + y * y) / (2.0 * kSsimSigma * kSsimSigma));
      w[static_cast<std::size_t>((y + h) * kSsimWindow + (x + h))] = v;
      total += v;
    }
  }
  for (double& v : w) v /= total;
  return w;
}

}  // namespace

double ssim(std::span<const float> a, std::span<const float> b, Index height, Index width,
            double data_range) {
  if (static_cast<Index>(a.size()) != height * width || static_cast<Index>(b.size()) != height * width) {
    throw std::invalid_argument("ssim: grids must both be " + std::to_string(height) + "x" + std::to_string(width));
  }
  if (!(data_range > 0.0)) throw std::invalid_argument("ssim: data_range must be positive");
  if (height < kSsimWindow || width < kSsimWindow) {
    throw std::invalid_argument("ssim: 7x7 window larger than the " + std::to_string(height) + "x" +
                                std::to_string(width) + " grid");
  }
  static const auto w = gaussian_window();
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  double total = 0.0;
  Index count = 0;
  for (Index y = 0; y + kSsimWindow <= height; ++y) {
    for (Index x = 0; x + kSsimWindow <= width; ++x) {
      double mu1 = 0, mu2 = 0, e11 = 0, e22 = 0, e12 = 0;
      for (int dy = 0; dy < kSsimWindow; ++dy) {
        for (int dx = 0; dx < kSsimWindow; ++dx) {
          const double wt = w[static_cast<std::size_t>(dy * kSsimWindow + dx)];
          const std::size_t i = static_cast<std::size_t>((y + dy) * width + x + dx);
          const double va = a[i], vb = b[i];
          mu1 += wt * va;
          mu2 += wt * vb;
          e11 += wt * va * va;
          e22 += wt * vb * vb;
          e12 += wt * va * vb;
        }
      }
      const double s11 = e11 - mu1 * mu1, s22 = e22 - mu2 * mu2, s12 = e12 - mu1 * mu2;
      const double num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2);
      const double den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

FeatureMatrix pairwise_matrix(const DatasetContainer& data, SimilarityMeasure measure) {
  if (data.samples.empty()) throw std::invalid_argument("pairwise_matrix: empty container");
  const Index plane = data.height * data.width;
  const std::size_t n = data.samples.size();
  // Channel-major copies of the raw values.
  std::vector<std::vector<float>> pooled(kFeatureCount, std::vector<float>(n * static_cast<std::size_t>(plane)));
  for (int c = 0; c < kFeatureCount; ++c) {
    for (std::size_t s = 0; s < n; ++s) {
      std::copy_n(data.samples[s].feature(c), plane, pooled[static_cast<std::size_t>(c)].begin() + static_cast<std::ptrdiff_t>(s * plane));
    }
  }
  if (measure == SimilarityMeasure::Ssim) {
    for (auto& f : pooled) {
      const auto [lo, hi] = std::minmax_element(f.begin(), f.end());
      const float min = *lo, span = *hi - *lo;
      for (float& v : f) v = span > 0 ? (v - min) / span : 0.0f;
    }
  }
  FeatureMatrix m{};
  for (int i = 0; i < kFeatureCount; ++i) {
    m[i][i] = 1.0;
    for (int j = i + 1; j < kFeatureCount; ++j) {
      const auto& fi = pooled[static_cast<std::size_t>(i)];
      const auto& fj = pooled[static_cast<std::size_t>(j)];
      double v = 0.0;
      if (measure == SimilarityMeasure::Pearson) {
        v = pearson(fi, fj);
      } else {
        for (std::size_t s = 0; s < n; ++s) {
          const std::span<const float> a(fi.data() + s * plane, static_cast<std::size_t>(plane));
          const std::span<const float> b(fj.data() + s * plane, static_cast<std::size_t>(plane));
          v += ssim(a, b, data.height, data.width, 1.0);
        }
        v /= static_cast<double>(n);
      }
      m[i][j] = m[j][i] = v;
    }
  }
  return m;
}

std::string format_matrix_csv(const FeatureMatrix& m) {
  std::string out = "feature";
  for (auto name : kFeatureNames) out += "," + std::string(name);
  out += "\n";
  char buf[32];
  for (int i = 0; i < kFeatureCount; ++i) {
    out += kFeatureNames[static_cast<std::size_t>(i)];
    for (int j = 0; j < kFeatureCount; ++j) {
      std::snprintf(buf, sizeof buf, ",%.6f", m[i][j]);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

MetricSummary summarize(std::span<const float> probs, std::span<const float> labels, double threshold) {
  MetricSummary s;
  s.threshold = threshold;
  s.counts = confusion(probs, labels, threshold);
  s.masked = probs.size() - s.counts.total();
  s.precision = precision(s.counts);
  s.recall = recall(s.counts);
  try {
    s.auc = roc_auc(probs, labels);
  } catch (const UndefinedMetricError&) {
  }
  try {
    s.auc_pr = pr_auc(probs, labels);
  } catch (const UndefinedMetricError&) {
  }
  return s;
}

std::string MetricSummary::to_json() const {
  nlohmann::ordered_json j;
  j["auc"] = auc ? nlohmann::ordered_json(*auc) : nlohmann::ordered_json(nullptr);
  j["auc_pr"] = auc_pr ? nlohmann::ordered_json(*auc_pr) : nlohmann::ordered_json(nullptr);
  j["precision"] = precision.value;
  j["precision_degenerate"] = precision.degenerate;
  j["recall"] = recall.value;
  j["recall_degenerate"] = recall.degenerate;
  j["threshold"] = threshold;
  j["confusion"] = {{"tp", counts.tp}, {"fp", counts.fp}, {"tn", counts.tn}, {"fn", counts.fn}};
  j["masked_pixels"] = masked;
  return j.dump(2) + "\n";
}

std::vector<CostRow> cost_report(std::span<ModelGraph* const> graphs) {
  std::vector<CostRow> rows;
  for (ModelGraph* g : graphs) {
    if (g == nullptr) {
      rows.push_back({"empty", 0, 0});
      continue;
    }
    rows.push_back({std::string(family_label(g->spec().family)), g->param_count(), g->flop_estimate()});
  }
  return rows;
}

std::string format_cost_csv(const std::vector<CostRow>& rows) {
  std::string out = "Model,Params,FLOPs,Parameters (M),GFlops\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%llu,%llu,%.3f,%.3f\n", static_cast<unsigned long long>(r.params),
                  static_cast<unsigned long long>(r.flops), static_cast<double>(r.params) / 1e6,
                  static_cast<double>(r.flops) / 1e9);
    out += r.model + buf;
  }
  return out;
}

std::string format_cost_table(const std::vector<CostRow>& rows) {
  std::string out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-26s", "");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, " %12s", r.model.c_str());
    out += buf;
  }
  out += "\n";
  std::snprintf(buf, sizeof buf, "%-26s", "GFlops");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, " %12.3f", static_cast<double>(r.flops) / 1e9);
    out += buf;
  }
  out += "\n";
  std::snprintf(buf, sizeof buf, "%-26s", "Number of Parameters (M)");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, " %12.3f", static_cast<double>(r.params) / 1e6);
    out += buf;
  }
  out += "\n";
  return out;
}

}  // namespace wildfire
