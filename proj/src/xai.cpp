#include "wildfire/xai.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "wildfire/io.hpp"
#include "wildfire/rng.hpp"

namespace wildfire {

using json = nlohmann::ordered_json;

namespace {

constexpr Index kPathBatch = 16;

// Σ over rows of the scalar F = mean (or sum) of logits over `pixels`.
Tensor scalarize(const Tensor& logits, const std::vector<Index>& pixels, bool mean) {
  const Index n = logits.dim(0);
  const Index plane = logits.numel() / n;
  std::vector<float> weights(static_cast<std::size_t>(logits.numel()), 0.0f);
  if (pixels.empty()) {
    std::fill(weights.begin(), weights.end(), mean ? 1.0f / static_cast<float>(plane) : 1.0f);
  } else {
    const float w = mean ? 1.0f / static_cast<float>(pixels.size()) : 1.0f;
    for (Index r = 0; r < n; ++r) {
      for (Index p : pixels) weights[static_cast<std::size_t>(r * plane + p)] += w;
    }
  }
  return ops::weighted_sum(logits, weights);
}

double row_value(const Tensor& logits, Index row, const std::vector<Index>& pixels, bool mean) {
  const Index plane = logits.numel() / logits.dim(0);
  const float* p = logits.ptr() + row * plane;
  double s = 0.0;
  if (pixels.empty()) {
    for (Index i = 0; i < plane; ++i) s += p[i];
    return mean ? s / static_cast<double>(plane) : s;
  }
  for (Index i : pixels) s += p[i];
  return mean ? s / static_cast<double>(pixels.size()) : s;
}

void check_input(const Tensor& x, const char* op) {
  if (x.rank() != 4 || x.dim(1) != kFeatureCount) {
    throw DimensionError(std::string(op) + ": input must be [N,12,H,W], got " + shape_str(x.shape()));
  }
}

// Gradient of Σ_rows F(row) with respect to a batch of inputs.
Tensor input_gradient(const LogitFn& model, const Tensor& batch, const std::vector<Index>& pixels, bool mean,
                      Tensor* logits_out = nullptr) {
  Tensor x = batch.detach();
  x.set_requires_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    const Tensor logits = model(x);
    if (logits_out) *logits_out = logits.detach();
    tape.backward(scalarize(logits, pixels, mean));
  }
  return Tensor(x.shape(), x.grad());
}

}  // namespace

LogitFn logits_of(ModelGraph& model) {
  return [&model](const Tensor& x) { return model.forward(x, {.mode = ops::Mode::Eval}); };
}

// --- Shapley -------------------------------------------------------------------------

ShapleyResult exact_shapley(const Game& game) {
  const int n = game.players;
  if (n < 1) throw std::invalid_argument("exact_shapley: need at least one player");
  if (n > kMaxExactPlayers) {
    throw std::invalid_argument("exact_shapley: " + std::to_string(n) + " players need 2^" + std::to_string(n) +
                                " evaluations; use gradient_shap for more than 16 features");
  }
  const std::uint32_t count = 1u << n;
  std::vector<double> v(count);
  if (game.batch) {
    std::vector<std::uint32_t> masks(count);
    std::iota(masks.begin(), masks.end(), 0u);
    v = game.batch(masks);
    if (v.size() != count) throw std::logic_error("exact_shapley: batch returned the wrong number of values");
  } else {
    for (std::uint32_t s = 0; s < count; ++s) v[s] = game.value(s);
  }
  // w(s) = s!(n-s-1)!/n!
  std::vector<double> weight(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    weight[static_cast<std::size_t>(s)] =
        std::exp(std::lgamma(s + 1.0) + std::lgamma(n - s + 0.0) - std::lgamma(n + 1.0));
  }
  ShapleyResult r;
  r.method = "exact";
  r.evaluations = count;
  r.phi.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    const std::uint32_t bit = 1u << i;
    double acc = 0.0;
    for (std::uint32_t s = 0; s < count; ++s) {
      if (s & bit) continue;
      acc += weight[static_cast<std::size_t>(std::popcount(s))] * (v[s | bit] - v[s]);
    }
    r.phi[static_cast<std::size_t>(i)] = acc;
  }
  r.v_empty = v[0];
  r.v_full = v[count - 1];
  return r;
}

std::array<float, kFeatureCount> baseline_values(BaselinePolicy policy, const FeatureStats& stats) {
  std::array<float, kFeatureCount> b{};
  if (policy == BaselinePolicy::Zeros) return b;
  Sample one(1, 1);
  for (int c = 0; c < kFeatureCount; ++c) one.features[static_cast<std::size_t>(c)] = stats.features[static_cast<std::size_t>(c)].mean;
  const Sample norm = normalize(one, stats);
  for (int c = 0; c < kFeatureCount; ++c) b[static_cast<std::size_t>(c)] = norm.features[static_cast<std::size_t>(c)];
  return b;
}

ValueFunction::ValueFunction(LogitFn model, Tensor input, std::vector<Index> pixels,
                             std::array<float, kFeatureCount> baseline)
    : model_(std::move(model)), input_(input.detach()), pixels_(std::move(pixels)), baseline_(baseline) {
  check_input(input_, "ValueFunction");
  if (input_.dim(0) != 1) throw DimensionError("ValueFunction: expects a single sample");
}

double ValueFunction::operator()(std::uint32_t coalition) const {
  const std::uint32_t one[] = {coalition};
  return evaluate(one)[0];
}

std::vector<double> ValueFunction::evaluate(std::span<const std::uint32_t> coalitions) const {
  const Index plane = input_.dim(2) * input_.dim(3);
  const Index stride = kFeatureCount * plane;
  std::vector<double> out;
  out.reserve(coalitions.size());
  const Index total = static_cast<Index>(coalitions.size());
  constexpr Index kChunk = 64;
  for (Index start = 0; start < total; start += kChunk) {
    const Index n = std::min(kChunk, total - start);
    Tensor batch({n, kFeatureCount, input_.dim(2), input_.dim(3)});
    for (Index r = 0; r < n; ++r) {
      const std::uint32_t s = coalitions[static_cast<std::size_t>(start + r)];
      for (int c = 0; c < kFeatureCount; ++c) {
        float* dst = batch.ptr() + r * stride + c * plane;
        if (s & (1u << c)) {
          std::copy_n(input_.ptr() + c * plane, plane, dst);
        } else {
          std::fill_n(dst, plane, baseline_[static_cast<std::size_t>(c)]);
        }
      }
    }
    const Tensor logits = model_(batch);
    for (Index r = 0; r < n; ++r) out.push_back(row_value(logits, r, pixels_, true));
  }
  return out;
}

Game ValueFunction::game() const {
  return {kFeatureCount, [this](std::uint32_t s) { return (*this)(s); },
          [this](std::span<const std::uint32_t> s) { return evaluate(s); }};
}

GradientShapResult gradient_shap(const LogitFn& model, const Tensor& samples, const Tensor& background, int n_draws,
                                 std::uint64_t seed, const std::vector<Index>& pixels) {
  if (n_draws < 1) throw std::invalid_argument("gradient_shap: n_draws must be >= 1");
  check_input(samples, "gradient_shap");
  check_input(background, "gradient_shap background");
  if (background.dim(0) < 1) throw std::invalid_argument("gradient_shap: background is empty");
  if (background.dim(2) != samples.dim(2) || background.dim(3) != samples.dim(3)) {
    throw DimensionError("gradient_shap: background and samples differ in extent");
  }
  const Index n = samples.dim(0), nb = background.dim(0);
  const Index plane = samples.dim(2) * samples.dim(3);
  const Index stride = kFeatureCount * plane;
  CounterRng rng(seed, "gradient_shap");
  std::vector<Index> perm(static_cast<std::size_t>(nb));
  std::iota(perm.begin(), perm.end(), 0);
  for (Index i = nb; i > 1; --i) std::swap(perm[static_cast<std::size_t>(i - 1)], perm[rng.below(static_cast<std::uint64_t>(i))]);

  GradientShapResult res;
  res.draws = n_draws;
  std::array<double, kFeatureCount> abs_sum{}, signed_sum{};
  for (Index s = 0; s < n; ++s) {
    const float* x = samples.ptr() + s * stride;
    std::vector<double> attr(static_cast<std::size_t>(stride), 0.0);
    for (int d0 = 0; d0 < n_draws; d0 += static_cast<int>(kPathBatch)) {
      const Index m = std::min<Index>(kPathBatch, n_draws - d0);
      Tensor batch({m, kFeatureCount, samples.dim(2), samples.dim(3)});
      std::vector<Index> bg_rows(static_cast<std::size_t>(m));
      for (Index r = 0; r < m; ++r) {
        const Index bg = perm[static_cast<std::size_t>((d0 + r) % nb)];
        bg_rows[static_cast<std::size_t>(r)] = bg;
        const float lambda = static_cast<float>(rng.uniform());
        const float* xb = background.ptr() + bg * stride;
        float* dst = batch.ptr() + r * stride;
        for (Index i = 0; i < stride; ++i) dst[i] = xb[i] + lambda * (x[i] - xb[i]);
      }
      const Tensor g = input_gradient(model, batch, pixels, true);
      for (Index r = 0; r < m; ++r) {
        const float* xb = background.ptr() + bg_rows[static_cast<std::size_t>(r)] * stride;
        const float* gr = g.ptr() + r * stride;
        for (Index i = 0; i < stride; ++i) attr[static_cast<std::size_t>(i)] += (static_cast<double>(x[i]) - xb[i]) * gr[i];
      }
    }
    for (int c = 0; c < kFeatureCount; ++c) {
      double a = 0.0, t = 0.0;
      for (Index p = 0; p < plane; ++p) {
        const double v = attr[static_cast<std::size_t>(c * plane + p)] / n_draws;
        a += std::abs(v);
        t += v;
      }
      abs_sum[static_cast<std::size_t>(c)] += a / static_cast<double>(plane);
      signed_sum[static_cast<std::size_t>(c)] += t;
    }
  }
  for (int c = 0; c < kFeatureCount; ++c) {
    res.mean_abs[static_cast<std::size_t>(c)] = abs_sum[static_cast<std::size_t>(c)] / static_cast<double>(n);
    res.totals[static_cast<std::size_t>(c)] = signed_sum[static_cast<std::size_t>(c)] / static_cast<double>(n);
    res.ranking.emplace_back(std::string(kFeatureNames[static_cast<std::size_t>(c)]), res.mean_abs[static_cast<std::size_t>(c)]);
  }
  std::stable_sort(res.ranking.begin(), res.ranking.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return res;
}

// --- Grad-CAM ---------------------------------------------------------------------------

std::vector<float> bilinear_resize(std::span<const float> grid, Index h, Index w, Index out_h, Index out_w) {
  if (static_cast<Index>(grid.size()) != h * w || h < 1 || w < 1) throw std::invalid_argument("bilinear_resize: bad grid");
  if (h == out_h && w == out_w) return {grid.begin(), grid.end()};
  std::vector<float> out(static_cast<std::size_t>(out_h * out_w));
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (Index y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const Index y0 = static_cast<Index>(std::floor(fy));
    const Index y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (Index x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const Index x0 = static_cast<Index>(std::floor(fx));
      const Index x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - static_cast<double>(x0);
      const double top = grid[static_cast<std::size_t>(y0 * w + x0)] * (1 - tx) + grid[static_cast<std::size_t>(y0 * w + x1)] * tx;
      const double bot = grid[static_cast<std::size_t>(y1 * w + x0)] * (1 - tx) + grid[static_cast<std::size_t>(y1 * w + x1)] * tx;
      out[static_cast<std::size_t>(y * out_w + x)] = static_cast<float>(top * (1 - ty) + bot * ty);
    }
  }
  return out;
}

CamHeatmap cam_from_gradients(const Tensor& activation, const Tensor& gradient, Index out_size) {
  if (activation.rank() != 3 || activation.shape() != gradient.shape()) {
    throw DimensionError("cam: activation and gradient must both be [C,H,W]");
  }
  CamHeatmap cam;
  const Index channels = activation.dim(0);
  cam.height = activation.dim(1);
  cam.width = activation.dim(2);
  cam.out_size = out_size;
  const Index plane = cam.height * cam.width;
  std::vector<double> combined(static_cast<std::size_t>(plane), 0.0);
  for (Index k = 0; k < channels; ++k) {
    const float* a = activation.ptr() + k * plane;
    const float* g = gradient.ptr() + k * plane;
    double s = 0.0;
    for (Index i = 0; i < plane; ++i) s += g[i];
    const double w = s / static_cast<double>(plane);
    cam.weights.push_back(static_cast<float>(w));
    std::vector<float> map(static_cast<std::size_t>(plane));
    for (Index i = 0; i < plane; ++i) {
      const double v = w * a[i];
      combined[static_cast<std::size_t>(i)] += v;
      map[static_cast<std::size_t>(i)] = static_cast<float>(std::max(v, 0.0));
    }
    cam.channels_up.push_back(bilinear_resize(map, cam.height, cam.width, out_size, out_size));
    cam.channels.push_back(std::move(map));
  }
  cam.combined.resize(static_cast<std::size_t>(plane));
  for (Index i = 0; i < plane; ++i) {
    cam.combined[static_cast<std::size_t>(i)] = static_cast<float>(std::max(combined[static_cast<std::size_t>(i)], 0.0));
  }
  cam.combined_up = bilinear_resize(cam.combined, cam.height, cam.width, out_size, out_size);
  return cam;
}

std::vector<Index> default_pixel_set(std::span<const float> logits) {
  std::vector<Index> m;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (logits[i] > 0.0f) m.push_back(static_cast<Index>(i));  // sigmoid(z) > 0.5
  }
  if (m.empty()) {
    m.resize(logits.size());
    std::iota(m.begin(), m.end(), Index{0});
  }
  return m;
}

CamHeatmap seg_grad_cam(ModelGraph& model, const Tensor& input, std::vector<Index> pixels) {
  check_input(input, "seg_grad_cam");
  if (input.dim(0) != 1) throw DimensionError("seg_grad_cam: expects a single sample");
  ActivationProbe probe;
  const Tensor logits = model.forward(input, {.mode = ops::Mode::Eval, .probe = &probe});
  if (!probe.activation.defined()) throw std::invalid_argument("seg_grad_cam: model has no first convolution");
  if (probe.activation.dim(1) != kStemChannels) {
    throw std::invalid_argument("seg_grad_cam: first convolution has " + std::to_string(probe.activation.dim(1)) +
                                " channels, expected 16");
  }
  if (pixels.empty()) pixels = default_pixel_set(logits.data());
  ActivationProbe replay;
  replay.replace = probe.activation.detach();
  replay.replace.set_requires_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    const Tensor y = model.forward(input, {.mode = ops::Mode::Eval, .probe = &replay});
    tape.backward(scalarize(y, pixels, false));
  }
  const Shape chw{kStemChannels, probe.activation.dim(2), probe.activation.dim(3)};
  CamHeatmap cam = cam_from_gradients(probe.activation.view(chw), Tensor(chw, replay.replace.grad()));
  cam.pixels = std::move(pixels);
  return cam;
}

// --- Integrated Gradients ----------------------------------------------------------------

PcrResult pcr(std::span<const double> gamma) {
  if (gamma.size() != static_cast<std::size_t>(kFeatureCount)) throw std::invalid_argument("pcr: expects 12 totals");
  PcrResult r;
  double total = 0.0;
  for (double g : gamma) total += std::max(g, 0.0);
  if (!(total > 0.0)) {
    r.degenerate = true;
    return r;
  }
  for (std::size_t i = 0; i < gamma.size(); ++i) r.ratios[i] = std::max(gamma[i], 0.0) / total;
  return r;
}

IgAttribution integrated_gradients(const LogitFn& model, const Tensor& input, int steps) {
  if (steps < 1) throw std::invalid_argument("integrated_gradients: steps must be >= 1");
  check_input(input, "integrated_gradients");
  if (input.dim(0) != 1) throw DimensionError("integrated_gradients: expects a single sample");
  const Index stride = input.numel();
  const Index plane = stride / kFeatureCount;
  std::vector<double> grad_sum(static_cast<std::size_t>(stride), 0.0);
  for (int t0 = 0; t0 < steps; t0 += static_cast<int>(kPathBatch)) {
    const Index m = std::min<Index>(kPathBatch, steps - t0);
    Tensor batch({m, kFeatureCount, input.dim(2), input.dim(3)});
    for (Index r = 0; r < m; ++r) {
      const float lambda = static_cast<float>((static_cast<double>(t0 + r) + 0.5) / steps);
      float* dst = batch.ptr() + r * stride;
      for (Index i = 0; i < stride; ++i) dst[i] = lambda * input.ptr()[i];
    }
    const Tensor g = input_gradient(model, batch, {}, false);
    for (Index r = 0; r < m; ++r) {
      for (Index i = 0; i < stride; ++i) grad_sum[static_cast<std::size_t>(i)] += g.ptr()[r * stride + i];
    }
  }
  IgAttribution ig;
  ig.steps = steps;
  ig.attributions.resize(static_cast<std::size_t>(stride));
  double total = 0.0;
  for (Index i = 0; i < stride; ++i) {
    const double a = static_cast<double>(input.ptr()[i]) * grad_sum[static_cast<std::size_t>(i)] / steps;
    ig.attributions[static_cast<std::size_t>(i)] = static_cast<float>(a);
    ig.gamma[static_cast<std::size_t>(i / plane)] += a;
    total += a;
  }
  Tensor ends({2, kFeatureCount, input.dim(2), input.dim(3)});
  std::copy_n(input.ptr(), stride, ends.ptr() + stride);
  const Tensor logits = model(ends);
  ig.f_baseline = row_value(logits, 0, {}, false);
  ig.f_input = row_value(logits, 1, {}, false);
  ig.gap = std::abs(total - (ig.f_input - ig.f_baseline));
  ig.pcr = pcr(ig.gamma);
  return ig;
}

// --- bundles -----------------------------------------------------------------------------

ExplainMethods ExplainMethods::parse(std::string_view list) {
  ExplainMethods m{false, false, false};
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const std::size_t comma = std::min(list.find(',', pos), list.size());
    const std::string_view item = list.substr(pos, comma - pos);
    if (item == "shap") m.shap = true;
    else if (item == "gradcam") m.gradcam = true;
    else if (item == "ig") m.ig = true;
    else throw std::invalid_argument("unknown explanation method '" + std::string(item) + "' (expected shap, gradcam, ig)");
    pos = comma + 1;
  }
  return m;
}

Batch explain_input(const DatasetContainer& data, std::size_t id) {
  if (id >= data.samples.size()) {
    throw std::out_of_range("sample id " + std::to_string(id) + " outside [0, " + std::to_string(data.samples.size()) + ")");
  }
  return make_batch(data, {id}, kEvalCropSeed);
}

ExplanationBundle explain_sample(std::span<const ExplainModel> models, const DatasetContainer& data, std::size_t id,
                                 const ExplainMethods& methods, int ig_steps) {
  const Batch in = explain_input(data, id);
  ExplanationBundle b;
  b.sample_id = id;
  b.side = kInputSide;
  for (const ExplainModel& em : models) {
    ModelGraph& model = *em.model;
    ModelPanel panel;
    panel.model = std::string(family_label(model.spec().family));
    panel.trained = em.trained;
    const Tensor logits = model.forward(in.features, {.mode = ops::Mode::Eval});
    for (float z : logits.data()) panel.prediction.push_back(z > 0.0f ? 1.0f : 0.0f);
    const std::vector<Index> m = default_pixel_set(logits.data());
    if (methods.gradcam) panel.cam = seg_grad_cam(model, in.features, m);
    if (methods.ig) panel.ig = integrated_gradients(logits_of(model), in.features, ig_steps);
    if (methods.shap) {
      const ValueFunction vf(logits_of(model), in.features, m, baseline_values(BaselinePolicy::Zeros, data.stats));
      panel.shap = exact_shapley(vf.game());
    }
    b.panels.push_back(std::move(panel));
  }
  return b;
}

std::string encode_pgm(std::span<const float> grid, Index height, Index width) {
  if (static_cast<Index>(grid.size()) != height * width) throw std::invalid_argument("encode_pgm: size mismatch");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  const auto [lo, hi] = std::minmax_element(grid.begin(), grid.end());
  const double min = grid.empty() ? 0.0 : *lo, span = grid.empty() ? 0.0 : *hi - min;
  for (float v : grid) {
    const double s = span > 0.0 ? (v - min) / span : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(s * 255.0))));
  }
  return out;
}

std::string pgm_sidecar(std::span<const float> grid, Index height, Index width) {
  const auto [lo, hi] = std::minmax_element(grid.begin(), grid.end());
  json j;
  j["width"] = width;
  j["height"] = height;
  j["min"] = grid.empty() ? 0.0 : static_cast<double>(*lo);
  j["max"] = grid.empty() ? 0.0 : static_cast<double>(*hi);
  return j.dump(2) + "\n";
}

namespace {

std::string slug(std::string_view label) {
  std::string s;
  for (char c : label) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return s;
}

}  // namespace

std::vector<std::filesystem::path> write_bundle(const ExplanationBundle& bundle, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<fs::path> written;
  const fs::path root = dir / ("sample_" + std::to_string(bundle.sample_id));
  fs::create_directories(root);
  auto put = [&](const fs::path& p, std::string_view bytes) {
    write_file_atomic(p, bytes);
    written.push_back(p);
  };
  auto put_pgm = [&](const fs::path& stem, std::span<const float> grid, Index side) {
    put(fs::path(stem.string() + ".pgm"), encode_pgm(grid, side, side));
    put(fs::path(stem.string() + ".json"), pgm_sidecar(grid, side, side));
  };
  json index;
  index["sample_id"] = bundle.sample_id;
  index["models"] = json::array();
  char buf[64];
  for (const ModelPanel& p : bundle.panels) {
    const fs::path md = root / slug(p.model);
    fs::create_directories(md);
    json mj;
    mj["model"] = p.model;
    mj["trained"] = p.trained;
    if (!p.trained) mj["warning"] = "model has not been trained";
    mj["predicted_positive"] = std::count(p.prediction.begin(), p.prediction.end(), 1.0f);
    if (p.cam) {
      // Images only accompany the heatmap panel.
      put_pgm(md / "prediction", p.prediction, bundle.side);
      mj["prediction"] = "prediction.pgm";
      json ch = json::array();
      for (std::size_t k = 0; k < p.cam->channels_up.size(); ++k) {
        std::snprintf(buf, sizeof buf, "cam_channel_%02zu", k);
        put_pgm(md / buf, p.cam->channels_up[k], p.cam->out_size);
        ch.push_back(std::string(buf) + ".pgm");
      }
      put_pgm(md / "cam_combined", p.cam->combined_up, p.cam->out_size);
      mj["cam_channels"] = std::move(ch);
      mj["cam_combined"] = "cam_combined.pgm";
      mj["cam_weights"] = p.cam->weights;
      mj["cam_pixels"] = p.cam->pixels.size();
    }
    if (p.ig) {
      std::string csv = "feature,gamma,pcr\n";
      for (int c = 0; c < kFeatureCount; ++c) {
        std::snprintf(buf, sizeof buf, ",%.9g,%.6f\n", p.ig->gamma[static_cast<std::size_t>(c)],
                      p.ig->pcr.ratios[static_cast<std::size_t>(c)]);
        csv += std::string(kFeatureNames[static_cast<std::size_t>(c)]) + buf;
      }
      put(md / "ig_pcr.csv", csv);
      mj["ig_pcr"] = "ig_pcr.csv";
      mj["ig_steps"] = p.ig->steps;
      mj["ig_gap"] = p.ig->gap;
      mj["ig_f_input"] = p.ig->f_input;
      mj["ig_f_baseline"] = p.ig->f_baseline;
      mj["pcr_degenerate"] = p.ig->pcr.degenerate;
    }
    if (p.shap) {
      std::string csv = "feature,shapley\n";
      for (int c = 0; c < kFeatureCount; ++c) {
        std::snprintf(buf, sizeof buf, ",%.9g\n", p.shap->phi[static_cast<std::size_t>(c)]);
        csv += std::string(kFeatureNames[static_cast<std::size_t>(c)]) + buf;
      }
      put(md / "shapley.csv", csv);
      mj["shapley"] = "shapley.csv";
      mj["shapley_v_empty"] = p.shap->v_empty;
      mj["shapley_v_full"] = p.shap->v_full;
    }
    index["models"].push_back(std::move(mj));
  }
  put(root / "bundle.json", index.dump(2) + "\n");
  return written;
}

}  // namespace wildfire
