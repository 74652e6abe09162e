#include "wildfire/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "wildfire/digest.hpp"
#include "wildfire/io.hpp"
#include "wildfire/rng.hpp"

namespace wildfire {

namespace {

constexpr std::string_view kMagic = "WFD1";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

float parse_float(const std::string& text, std::size_t line) {
  try {
    std::size_t used = 0;
    const float v = std::stof(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("stats csv line " + std::to_string(line) + ": bad number '" + text + "'");
  }
}

}  // namespace

int feature_index(std::string_view name) {
  for (int i = 0; i < kFeatureCount; ++i) {
    if (kFeatureNames[static_cast<std::size_t>(i)] == name) return i;
  }
  throw std::invalid_argument("unknown feature '" + std::string(name) + "'");
}

void FeatureStats::validate() const {
  for (int i = 0; i < kFeatureCount; ++i) {
    const auto& f = features[static_cast<std::size_t>(i)];
    const std::string name(kFeatureNames[static_cast<std::size_t>(i)]);
    if (!std::isfinite(f.min) || !std::isfinite(f.max) || !std::isfinite(f.mean) || !std::isfinite(f.std)) {
      throw std::invalid_argument("stats for " + name + " are not finite");
    }
    if (f.std <= 0.0f) throw std::invalid_argument("stats for " + name + ": std must be > 0");
    if (!(f.min <= f.mean && f.mean <= f.max)) {
      throw std::invalid_argument("stats for " + name + ": need min <= mean <= max");
    }
  }
}

std::string FeatureStats::digest() const {
  Digest d;
  for (const auto& f : features) {
    d.update_pod(f.min).update_pod(f.max).update_pod(f.mean).update_pod(f.std);
  }
  return d.hex();
}

FeatureStats parse_stats_csv(std::string_view text) {
  FeatureStats stats;
  std::array<bool, kFeatureCount> seen{};
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(trim(cell));
    if (header) {
      header = false;
      if (cells != std::vector<std::string>{"feature", "min", "max", "mean", "std"}) {
        throw std::invalid_argument("stats csv: header must be feature,min,max,mean,std");
      }
      continue;
    }
    if (cells.size() != 5) {
      throw std::invalid_argument("stats csv line " + std::to_string(line_no) + ": expected 5 fields");
    }
    const int idx = feature_index(cells[0]);
    if (seen[static_cast<std::size_t>(idx)]) throw std::invalid_argument("stats csv: duplicate row for " + cells[0]);
    seen[static_cast<std::size_t>(idx)] = true;
    stats.features[static_cast<std::size_t>(idx)] = {parse_float(cells[1], line_no), parse_float(cells[2], line_no),
                                                      parse_float(cells[3], line_no), parse_float(cells[4], line_no)};
  }
  for (int i = 0; i < kFeatureCount; ++i) {
    if (!seen[static_cast<std::size_t>(i)]) {
      throw std::invalid_argument("stats csv: missing row for " + std::string(kFeatureNames[static_cast<std::size_t>(i)]));
    }
  }
  stats.validate();
  return stats;
}

std::string format_stats_csv(const FeatureStats& stats) {
  std::ostringstream out;
  out.precision(9);
  out << "feature,min,max,mean,std\n";
  for (int i = 0; i < kFeatureCount; ++i) {
    const auto& f = stats.features[static_cast<std::size_t>(i)];
    out << kFeatureNames[static_cast<std::size_t>(i)] << ',' << f.min << ',' << f.max << ',' << f.mean << ','
        << f.std << '\n';
  }
  return out.str();
}

Sample::Sample(Index h, Index w)
    : height(h), width(w), features(static_cast<std::size_t>(kFeatureCount * h * w), 0.0f),
      label(static_cast<std::size_t>(h * w), 0.0f) {}

std::string_view split_name(SplitTag tag) {
  switch (tag) {
    case SplitTag::Train: return "train";
    case SplitTag::Val: return "val";
    case SplitTag::Test: return "test";
  }
  return "?";
}

std::string DatasetContainer::digest() const { return digest_hex(encode_container(*this)); }

std::string channel_order_digest() {
  Digest d;
  for (auto name : kFeatureNames) d.update(name).update(",");
  return d.update("label").hex();
}

std::string encode_container(const DatasetContainer& c) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(c.samples.size()));
  w.u32(static_cast<std::uint32_t>(c.height));
  w.u32(static_cast<std::uint32_t>(c.width));
  w.u32(kChannelCount);
  for (const auto& f : c.stats.features) {
    w.f32(f.min);
    w.f32(f.max);
    w.f32(f.mean);
    w.f32(f.std);
  }
  for (const auto& s : c.samples) {
    if (s.height != c.height || s.width != c.width) {
      throw DimensionError("encode_container: sample is " + std::to_string(s.height) + "x" +
                           std::to_string(s.width) + ", header says " + std::to_string(c.height) + "x" +
                           std::to_string(c.width));
    }
    w.f32s(s.features);
    w.f32s(s.label);
  }
  return w.take();
}

DatasetContainer decode_container(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.bytes(4, "magic") != kMagic) r.fail_at("bad container magic", 0);
  std::size_t at = r.offset();
  if (const auto v = r.u32("version"); v != kContainerVersion) {
    r.fail_at("unsupported container version " + std::to_string(v), at);
  }
  const std::uint32_t count = r.u32("sample count");
  at = r.offset();
  const std::uint32_t h = r.u32("height");
  if (h == 0 || h > 16384) r.fail_at("implausible height " + std::to_string(h), at);
  at = r.offset();
  const std::uint32_t w = r.u32("width");
  if (w == 0 || w > 16384) r.fail_at("implausible width " + std::to_string(w), at);
  at = r.offset();
  if (const auto ch = r.u32("channel count"); ch != kChannelCount) {
    r.fail_at("expected 13 channels, found " + std::to_string(ch), at);
  }
  DatasetContainer c;
  c.height = h;
  c.width = w;
  const std::size_t stats_at = r.offset();
  for (auto& f : c.stats.features) {
    f.min = r.f32("stats");
    f.max = r.f32("stats");
    f.mean = r.f32("stats");
    f.std = r.f32("stats");
  }
  try {
    c.stats.validate();
  } catch (const std::invalid_argument& e) {
    r.fail_at(std::string("invalid stats block: ") + e.what(), stats_at);
  }
  const std::uint64_t per_sample = static_cast<std::uint64_t>(kChannelCount) * h * w * sizeof(float);
  if (per_sample * count != r.remaining()) {
    r.fail("payload holds " + std::to_string(r.remaining()) + " bytes, header implies " +
           std::to_string(per_sample * count));
  }
  c.samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Sample s(h, w);
    r.f32s(s.features, "features");
    const std::size_t label_at = r.offset();
    r.f32s(s.label, "label");
    for (std::size_t p = 0; p < s.label.size(); ++p) {
      const float v = s.label[p];
      if (v != -1.0f && v != 0.0f && v != 1.0f) {
        r.fail_at("label value outside {-1,0,1}", label_at + p * sizeof(float));
      }
    }
    c.samples.push_back(std::move(s));
  }
  return c;
}

void save_container(const DatasetContainer& c, const std::filesystem::path& path) {
  write_file_atomic(path, encode_container(c));
}

DatasetContainer load_container(const std::filesystem::path& path) {
  return decode_container(read_file(path));
}

FeatureStats compute_stats(const std::vector<Sample>& samples) {
  FeatureStats stats;
  for (int c = 0; c < kFeatureCount; ++c) {
    double lo = INFINITY, hi = -INFINITY, sum = 0.0, n = 0.0;
    for (const auto& s : samples) {
      const float* p = s.feature(c);
      for (Index i = 0; i < s.plane(); ++i) {
        lo = std::min<double>(lo, p[i]);
        hi = std::max<double>(hi, p[i]);
        sum += p[i];
      }
      n += static_cast<double>(s.plane());
    }
    auto& f = stats.features[static_cast<std::size_t>(c)];
    if (n == 0.0) {
      f = FeatureRange{};
      continue;
    }
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& s : samples) {
      const float* p = s.feature(c);
      for (Index i = 0; i < s.plane(); ++i) ss += (p[i] - mean) * (p[i] - mean);
    }
    const double sd = std::sqrt(ss / n);
    f.min = static_cast<float>(lo);
    f.max = static_cast<float>(hi);
    f.mean = std::clamp(static_cast<float>(mean), f.min, f.max);
    f.std = sd > 0.0 ? static_cast<float>(sd) : 1.0f;
  }
  return stats;
}

Sample normalize(const Sample& sample, const FeatureStats& stats) {
  Sample out = sample;
  for (int c = 0; c < kFeatureCount; ++c) {
    if (c == kPreviousFireMask) continue;
    const auto& f = stats.features[static_cast<std::size_t>(c)];
    if (!(f.std > 0.0f)) {
      throw std::invalid_argument("normalize: std of " + std::string(kFeatureNames[static_cast<std::size_t>(c)]) +
                                  " must be > 0");
    }
    float* p = out.feature(c);
    for (Index i = 0; i < out.plane(); ++i) {
      const double x = std::clamp(p[i], f.min, f.max);
      p[i] = static_cast<float>((x - f.mean) / f.std);
    }
  }
  return out;
}

Crop random_crop(const Sample& sample, std::uint64_t seed, Index size) {
  if (sample.height < size || sample.width < size) {
    throw DimensionError("random_crop: source " + std::to_string(sample.height) + "x" +
                         std::to_string(sample.width) + " is smaller than crop " + std::to_string(size));
  }
  CounterRng rng(seed, "crop");
  Crop crop;
  crop.dy = static_cast<Index>(rng.below(static_cast<std::uint64_t>(sample.height - size + 1)));
  crop.dx = static_cast<Index>(rng.below(static_cast<std::uint64_t>(sample.width - size + 1)));
  crop.sample = Sample(size, size);
  auto copy_plane = [&](const float* src, float* dst) {
    for (Index i = 0; i < size; ++i) {
      std::copy_n(src + (i + crop.dy) * sample.width + crop.dx, size, dst + i * size);
    }
  };
  for (int c = 0; c < kFeatureCount; ++c) copy_plane(sample.feature(c), crop.sample.feature(c));
  copy_plane(sample.label.data(), crop.sample.label.data());
  return crop;
}

// ---------------------------------------------------------------------------
// synthetic generator

namespace {

struct Field {
  Index h, w;
  std::vector<double> v;
  double& at(Index i, Index j) { return v[static_cast<std::size_t>(i * w + j)]; }
  double at(Index i, Index j) const { return v[static_cast<std::size_t>(i * w + j)]; }
};

// Running-sum box blur along one axis with clamped borders.
void box_pass(std::vector<double>& v, Index len, Index stride, Index count, Index count_stride, Index r) {
  std::vector<double> line(static_cast<std::size_t>(len));
  for (Index k = 0; k < count; ++k) {
    double* base = v.data() + k * count_stride;
    for (Index i = 0; i < len; ++i) line[static_cast<std::size_t>(i)] = base[i * stride];
    auto get = [&](Index i) { return line[static_cast<std::size_t>(std::clamp<Index>(i, 0, len - 1))]; };
    double acc = 0.0;
    for (Index i = -r; i <= r; ++i) acc += get(i);
    for (Index i = 0; i < len; ++i) {
      base[i * stride] = acc / static_cast<double>(2 * r + 1);
      acc += get(i + r + 1) - get(i - r);
    }
  }
}

// Zero-mean, unit-variance smooth noise with correlation length ~sigma
// (three box passes approximate a Gaussian).
Field smooth_noise(CounterRng& rng, Index h, Index w, double sigma) {
  Field f{h, w, std::vector<double>(static_cast<std::size_t>(h * w))};
  for (auto& x : f.v) x = rng.normal();
  const Index r = std::max<Index>(1, static_cast<Index>(std::lround((std::sqrt(4.0 * sigma * sigma + 1.0) - 1.0) / 2.0)));
  for (int pass = 0; pass < 3; ++pass) {
    box_pass(f.v, w, 1, h, w, r);
    box_pass(f.v, h, w, w, 1, r);
  }
  double mean = std::accumulate(f.v.begin(), f.v.end(), 0.0) / static_cast<double>(f.v.size());
  double ss = 0.0;
  for (double x : f.v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(f.v.size()));
  for (auto& x : f.v) x = (x - mean) / (sd > 0.0 ? sd : 1.0);
  return f;
}

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

constexpr double kPi = 3.14159265358979323846;
constexpr double kErcThreshold = 75.0;  // separable mode

Sample synthesize_one(const SynthConfig& cfg, std::size_t index) {
  const Index h = cfg.height, w = cfg.width;
  CounterRng rng(cfg.seed ^ mix64(index + 1), "synth-sample");
  Field elev = smooth_noise(rng, h, w, 6.0);
  Field veg_own = smooth_noise(rng, h, w, 6.0);
  Field dir = smooth_noise(rng, h, w, 12.0);
  Field speed = smooth_noise(rng, h, w, 8.0);
  Field temp = smooth_noise(rng, h, w, 10.0);
  Field temp_range = smooth_noise(rng, h, w, 10.0);
  Field hum = smooth_noise(rng, h, w, 8.0);
  Field prec = smooth_noise(rng, h, w, 5.0);
  Field drought = smooth_noise(rng, h, w, 10.0);
  Field pop = smooth_noise(rng, h, w, 4.0);
  Field erc_own = smooth_noise(rng, h, w, 8.0);

  const double elev_base = rng.uniform(300.0, 2500.0);
  const double wind_base = rng.uniform(0.0, 360.0);
  const double speed_base = rng.uniform(2.0, 6.0);
  const double temp_base = rng.uniform(278.0, 292.0);
  const double drought_base = rng.uniform(-3.0, 1.0);

  Sample s(h, w);
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      const Index p = i * w + j;
      const double e = elev_base + 500.0 * elev.at(i, j);
      const double tmin = temp_base + 4.0 * temp.at(i, j) - 0.0065 * (e - elev_base);
      s.feature(kElevation)[p] = static_cast<float>(e);
      s.feature(kWindDirection)[p] = static_cast<float>(std::fmod(wind_base + 25.0 * dir.at(i, j) + 720.0, 360.0));
      s.feature(kWindVelocity)[p] = static_cast<float>(std::max(0.0, speed_base + 1.2 * speed.at(i, j)));
      s.feature(kMinTemp)[p] = static_cast<float>(tmin);
      s.feature(kMaxTemp)[p] = static_cast<float>(tmin + 13.0 + 2.0 * temp_range.at(i, j));
      s.feature(kHumidity)[p] = static_cast<float>(std::max(1e-4, 0.006 + 0.0015 * hum.at(i, j)));
      s.feature(kPrecipitation)[p] = static_cast<float>(std::max(0.0, 3.0 * (prec.at(i, j) - 1.0)));
      s.feature(kDrought)[p] = static_cast<float>(drought_base + 1.8 * drought.at(i, j));
      s.feature(kVegetation)[p] =
          static_cast<float>(0.45 + 0.15 * (0.95 * elev.at(i, j) + 0.31 * veg_own.at(i, j)));
      s.feature(kPopulationDensity)[p] = static_cast<float>(30.0 * std::exp(1.2 * pop.at(i, j)));
      s.feature(kErc)[p] = static_cast<float>(55.0 + 12.0 * (-0.6 * drought.at(i, j) + 0.8 * erc_own.at(i, j)));
    }
  }

  // Fire at t: a few irregular blobs.
  std::vector<std::uint8_t> burning(static_cast<std::size_t>(h * w), 0);
  if (cfg.ignition) {
    const int blobs = 2 + static_cast<int>(rng.below(5));
    for (int b = 0; b < blobs; ++b) {
      const double ci = rng.uniform(0.0, static_cast<double>(h));
      const double cj = rng.uniform(0.0, static_cast<double>(w));
      const double radius = rng.uniform(1.5, 5.0);
      for (Index i = 0; i < h; ++i) {
        for (Index j = 0; j < w; ++j) {
          const double d = std::hypot(static_cast<double>(i) - ci, static_cast<double>(j) - cj);
          if (d <= radius && rng.uniform() < 0.85) burning[static_cast<std::size_t>(i * w + j)] = 1;
        }
      }
    }
  }

  // One stochastic cellular-automaton step.
  std::vector<std::uint8_t> next(static_cast<std::size_t>(h * w), 0);
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      const Index p = i * w + j;
      if (burning[static_cast<std::size_t>(p)]) {
        next[static_cast<std::size_t>(p)] = rng.uniform() < 0.7 ? 1 : 0;
        continue;
      }
      const double base = -1.6 - 0.9 * drought.at(i, j) + 0.7 * veg_own.at(i, j) + 0.6 * speed.at(i, j) -
                          0.8 * hum.at(i, j) - 0.6 * std::max(0.0, prec.at(i, j));
      const double toward = (wind_base + 25.0 * dir.at(i, j)) * kPi / 180.0;
      double survive = 1.0;
      for (Index di = -1; di <= 1; ++di) {
        for (Index dj = -1; dj <= 1; ++dj) {
          if (di == 0 && dj == 0) continue;
          const Index ni = i + di, nj = j + dj;
          if (ni < 0 || nj < 0 || ni >= h || nj >= w || !burning[static_cast<std::size_t>(ni * w + nj)]) continue;
          // Alignment of the neighbour-to-cell direction with the wind heading.
          const double heading = std::atan2(static_cast<double>(-di), static_cast<double>(-dj));
          const double align = std::cos(heading - toward);
          survive *= 1.0 - logistic(base + 0.8 * align);
        }
      }
      if (survive < 1.0 && rng.uniform() < 1.0 - survive) next[static_cast<std::size_t>(p)] = 1;
    }
  }

  for (Index p = 0; p < h * w; ++p) {
    s.feature(kPreviousFireMask)[p] = burning[static_cast<std::size_t>(p)] ? 1.0f : 0.0f;
  }
  if (cfg.separable) {
    for (Index p = 0; p < h * w; ++p) {
      s.label[static_cast<std::size_t>(p)] = s.feature(kErc)[p] > kErcThreshold ? 1.0f : 0.0f;
      if (rng.uniform() < 0.02) s.label[static_cast<std::size_t>(p)] = -1.0f;
    }
    return s;
  }
  for (Index p = 0; p < h * w; ++p) s.label[static_cast<std::size_t>(p)] = next[static_cast<std::size_t>(p)];

  // Smoke near active fire makes some observations uncertain (-1), on both
  // the input mask and the label.
  auto near_fire = [&](Index i, Index j) {
    for (Index di = -2; di <= 2; ++di) {
      for (Index dj = -2; dj <= 2; ++dj) {
        const Index ni = i + di, nj = j + dj;
        if (ni < 0 || nj < 0 || ni >= h || nj >= w) continue;
        const auto q = static_cast<std::size_t>(ni * w + nj);
        if (burning[q] || next[q]) return true;
      }
    }
    return false;
  };
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      const Index p = i * w + j;
      if (!near_fire(i, j)) continue;
      if (!next[static_cast<std::size_t>(p)] && rng.uniform() < 0.3) s.label[static_cast<std::size_t>(p)] = -1.0f;
      if (!burning[static_cast<std::size_t>(p)] && rng.uniform() < 0.05) s.feature(kPreviousFireMask)[p] = -1.0f;
    }
  }
  return s;
}

}  // namespace

DatasetContainer synthesize_dataset(const SynthConfig& config) {
  if (config.count < 1) throw std::invalid_argument("synthesize_dataset: count must be >= 1");
  if (config.height < 1 || config.width < 1) throw std::invalid_argument("synthesize_dataset: empty grid");
  DatasetContainer c;
  c.height = config.height;
  c.width = config.width;
  c.samples.reserve(config.count);
  for (std::size_t i = 0; i < config.count; ++i) c.samples.push_back(synthesize_one(config, i));
  c.stats = compute_stats(c.samples);
  return c;
}

// ---------------------------------------------------------------------------
// splitting

namespace {

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed, std::string_view stream) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  CounterRng rng(seed, stream);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

}  // namespace

SplitIndices split_indices(std::size_t count, std::array<double, 3> ratios, std::uint64_t seed) {
  for (double r : ratios) {
    if (!(r >= 0.0)) throw std::invalid_argument("split: ratios must be non-negative");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw std::invalid_argument("split: ratios must sum to 1");
  }
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(count)));
  const auto n_val = std::min(count - n_train, static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(count))));
  const std::size_t n_test = count - n_train - n_val;
  if (n_train == 0 || n_val == 0 || n_test == 0) {
    throw std::invalid_argument("split: " + std::to_string(count) + " samples leave an empty split (" +
                                std::to_string(n_train) + "/" + std::to_string(n_val) + "/" + std::to_string(n_test) + ")");
  }
  const auto p = permutation(count, seed, "split");
  SplitIndices s;
  s.train.assign(p.begin(), p.begin() + static_cast<long>(n_train));
  s.val.assign(p.begin() + static_cast<long>(n_train), p.begin() + static_cast<long>(n_train + n_val));
  s.test.assign(p.begin() + static_cast<long>(n_train + n_val), p.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::vector<std::size_t> fraction_indices(const std::vector<std::size_t>& train, double p, std::uint64_t seed) {
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("fraction: p must be in (0, 1]");
  const auto keep = static_cast<std::size_t>(std::llround(p * static_cast<double>(train.size())));
  if (keep == 0) throw std::invalid_argument("fraction: p leaves an empty training set");
  const auto perm = permutation(train.size(), seed, "fraction");
  std::vector<std::size_t> positions(perm.begin(), perm.begin() + static_cast<long>(keep));
  std::sort(positions.begin(), positions.end());
  std::vector<std::size_t> out;
  out.reserve(keep);
  for (std::size_t pos : positions) out.push_back(train[pos]);
  return out;
}

DatasetContainer subset(const DatasetContainer& c, const std::vector<std::size_t>& ids, std::optional<SplitTag> tag) {
  DatasetContainer out;
  out.height = c.height;
  out.width = c.width;
  out.stats = c.stats;
  out.split = tag;
  out.samples.reserve(ids.size());
  for (std::size_t id : ids) {
    if (id >= c.samples.size()) throw std::out_of_range("subset: id " + std::to_string(id) + " out of range");
    out.samples.push_back(c.samples[id]);
  }
  return out;
}

std::string ids_digest(const std::vector<std::size_t>& ids) {
  Digest d;
  for (std::size_t id : ids) d.update_pod(static_cast<std::uint64_t>(id));
  return d.hex();
}

Batch make_batch(const DatasetContainer& c, const std::vector<std::size_t>& ids, std::uint64_t crop_seed, Index size) {
  const auto n = static_cast<Index>(ids.size());
  Batch b{Tensor({n, kFeatureCount, size, size}), Tensor({n, size, size})};
  const Index plane = size * size;
  for (Index k = 0; k < n; ++k) {
    const std::size_t id = ids[static_cast<std::size_t>(k)];
    const Crop crop = random_crop(c.samples.at(id), crop_seed ^ mix64(id + 1), size);
    const Sample norm = normalize(crop.sample, c.stats);
    std::copy(norm.features.begin(), norm.features.end(), b.features.ptr() + k * kFeatureCount * plane);
    std::copy(norm.label.begin(), norm.label.end(), b.labels.ptr() + k * plane);
  }
  return b;
}

}  // namespace wildfire
