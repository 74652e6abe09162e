#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <set>

#include "support/pgm.hpp"
#include "support/xai_models.hpp"
#include "wildfire/io.hpp"
#include "wildfire/xai.hpp"

using namespace wildfire;
using xai_models::Linear;
using xai_models::Readout;
using xai_models::random_input;

namespace {

// Average of marginal contributions over all n! orderings.
std::vector<double> permutation_shapley(int n, const std::function<double(std::uint32_t)>& v) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> phi(static_cast<std::size_t>(n), 0.0);
  double count = 0.0;
  do {
    std::uint32_t s = 0;
    for (int i : order) {
      phi[static_cast<std::size_t>(i)] += v(s | (1u << i)) - v(s);
      s |= 1u << i;
    }
    count += 1.0;
  } while (std::next_permutation(order.begin(), order.end()));
  for (double& p : phi) p /= count;
  return phi;
}

Game table_game(int n, std::vector<double> values) {
  return {n, [values](std::uint32_t s) { return values[s]; }, {}};
}

}  // namespace

TEST(ExactShapley, AdditiveGame) {
  const std::vector<double> c{0.5, -1.25, 2.0, 0.0, 3.5};
  Game g{5, [&](std::uint32_t s) {
           double v = 0;
           for (int i = 0; i < 5; ++i) if (s & (1u << i)) v += c[static_cast<std::size_t>(i)];
           return v;
         }, {}};
  const ShapleyResult r = exact_shapley(g);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(r.phi[static_cast<std::size_t>(i)], c[static_cast<std::size_t>(i)], 1e-12);
  EXPECT_EQ(r.evaluations, 32u);
}

TEST(ExactShapley, TwoPlayerSplit) {
  const ShapleyResult r = exact_shapley(table_game(2, {0.0, 1.0, 1.0, 3.0}));
  EXPECT_DOUBLE_EQ(r.phi[0], 1.5);
  EXPECT_DOUBLE_EQ(r.phi[1], 1.5);
}

TEST(ExactShapley, MatchesPermutationOracle) {
  CounterRng rng(9, "games");
  for (int t = 0; t < 20; ++t) {
    std::vector<double> v(16);
    for (double& x : v) x = rng.uniform(-5.0, 5.0);
    const ShapleyResult r = exact_shapley(table_game(4, v));
    const auto oracle = permutation_shapley(4, [&](std::uint32_t s) { return v[s]; });
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(r.phi[static_cast<std::size_t>(i)], oracle[static_cast<std::size_t>(i)], 1e-10);
    const double total = std::accumulate(r.phi.begin(), r.phi.end(), 0.0);
    EXPECT_NEAR(total, v[15] - v[0], 1e-6 * std::max(1.0, std::abs(v[15] - v[0])));
  }
}

TEST(ExactShapley, SymmetryAndNullPlayer) {
  // Player 0 and 1 interchangeable, player 3 contributes nothing.
  CounterRng rng(4, "sym");
  std::vector<double> base(16);
  for (double& x : base) x = rng.uniform(-1.0, 1.0);
  std::vector<double> v(16);
  for (std::uint32_t s = 0; s < 16; ++s) {
    std::uint32_t key = s & ~(1u << 3);
    if ((key & 3u) == 1u) key = (key & ~3u) | 2u;  // {0} and {1} map to the same value
    v[s] = base[key];
  }
  const ShapleyResult r = exact_shapley(table_game(4, v));
  EXPECT_NEAR(r.phi[0], r.phi[1], 1e-10);
  EXPECT_NEAR(r.phi[3], 0.0, 1e-10);
}

TEST(ExactShapley, RefusesLargeGames) {
  Game g{17, [](std::uint32_t) { return 0.0; }, {}};
  try {
    exact_shapley(g);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("gradient_shap"), std::string::npos);
  }
}

TEST(ValueFunction, LinearModelGivesAdditiveShapley) {
  const Linear lin(5);
  const Tensor x = random_input(8);
  const std::vector<Index> pixels{0, 33, 500, 1023};
  const ValueFunction vf(lin.fn(), x, pixels, {});
  const ShapleyResult r = exact_shapley(vf.game());
  for (int c = 0; c < kFeatureCount; ++c) {
    double expected = 0.0;
    for (Index p : pixels) expected += lin.w[static_cast<std::size_t>(c)] * x.ptr()[c * 1024 + p];
    expected /= static_cast<double>(pixels.size());
    EXPECT_NEAR(r.phi[static_cast<std::size_t>(c)], expected, 1e-5);
  }
  EXPECT_NEAR(r.v_empty, lin.b, 1e-6);
}

TEST(ValueFunction, BaselinePolicies) {
  SynthConfig cfg;
  cfg.count = 4;
  const auto data = synthesize_dataset(cfg);
  const auto zeros = baseline_values(BaselinePolicy::Zeros, data.stats);
  const auto means = baseline_values(BaselinePolicy::FeatureMean, data.stats);
  for (int c = 0; c < kFeatureCount; ++c) EXPECT_EQ(zeros[static_cast<std::size_t>(c)], 0.0f);
  EXPECT_NEAR(means[kElevation], 0.0f, 1e-6);
  EXPECT_NEAR(means[kPreviousFireMask], data.stats.features[kPreviousFireMask].mean, 1e-6);
}

TEST(GradientShap, LinearModelZeroBackground) {
  const Linear lin(6);
  const Tensor x = random_input(10);
  const Tensor bg = Tensor::zeros({1, kFeatureCount, kInputSide, kInputSide});
  const GradientShapResult g = gradient_shap(lin.fn(), x, bg, 8, 1);
  for (int c = 0; c < kFeatureCount; ++c) {
    double expected = 0.0;
    for (Index p = 0; p < 1024; ++p) expected += lin.w[static_cast<std::size_t>(c)] * x.ptr()[c * 1024 + p];
    expected /= 1024.0;
    EXPECT_NEAR(g.totals[static_cast<std::size_t>(c)], expected, 1e-6);
  }
  std::set<std::string> names;
  for (const auto& [name, score] : g.ranking) names.insert(name);
  EXPECT_EQ(names.size(), 12u);
  for (std::size_t i = 1; i < g.ranking.size(); ++i) EXPECT_GE(g.ranking[i - 1].second, g.ranking[i].second);
}

TEST(GradientShap, DeterministicAndValidated) {
  auto model = build_model(ModelSpec::desk(Family::UNet), 2);
  model->freeze();
  const Tensor x = random_input(1);
  const Tensor bg = random_input(2, 3);
  const auto a = gradient_shap(logits_of(*model), x, bg, 4, 7);
  const auto b = gradient_shap(logits_of(*model), x, bg, 4, 7);
  EXPECT_EQ(a.mean_abs, b.mean_abs);
  EXPECT_THROW(gradient_shap(logits_of(*model), x, bg, 0, 7), std::invalid_argument);
}

TEST(GradCam, ConstantGradientGivesReluOfActivation) {
  Readout model({1.0f});
  const Tensor x = random_input(3);
  std::vector<Index> all(1024);
  std::iota(all.begin(), all.end(), Index{0});
  const CamHeatmap cam = seg_grad_cam(model, x, all);
  ActivationProbe probe;
  model.forward(x, {.probe = &probe});
  EXPECT_EQ(cam.weights[0], 1.0f);
  for (int k = 1; k < 16; ++k) EXPECT_EQ(cam.weights[static_cast<std::size_t>(k)], 0.0f);
  for (Index i = 0; i < 1024; ++i) EXPECT_EQ(cam.combined[static_cast<std::size_t>(i)], std::max(probe.activation[i], 0.0f));
  EXPECT_EQ(cam.channels.size(), 16u);
  EXPECT_EQ(cam.combined_up, cam.combined);
}

TEST(GradCam, CombinedMapIsNotSumOfChannelMaps) {
  Readout model({1.0f, -1.0f});
  const Tensor x = random_input(4);
  std::vector<Index> all(1024);
  std::iota(all.begin(), all.end(), Index{0});
  const CamHeatmap cam = seg_grad_cam(model, x, all);
  double diff = 0.0;
  for (std::size_t i = 0; i < cam.combined.size(); ++i) {
    double sum = 0.0;
    for (const auto& ch : cam.channels) sum += ch[i];
    diff = std::max(diff, std::abs(sum - cam.combined[i]));
    EXPECT_GE(cam.combined[i], 0.0f);
  }
  EXPECT_GT(diff, 1e-3);
}

TEST(GradCam, WeightsMatchFiniteDifferences) {
  for (Family f : kAllFamilies) {
    auto model = build_model(ModelSpec::desk(f), 12);
    model->freeze();
    const Tensor x = random_input(21);
    const CamHeatmap cam = seg_grad_cam(*model, x);
    ActivationProbe probe;
    model->forward(x, {.probe = &probe});
    const Tensor a = probe.activation.detach();
    auto y = [&](Index k, float eps) {
      ActivationProbe p;
      p.replace = a.clone();
      for (Index i = 0; i < 1024; ++i) p.replace.ptr()[k * 1024 + i] += eps;
      const Tensor out = model->forward(x, {.probe = &p});
      double s = 0.0;
      for (Index i : cam.pixels) s += out.ptr()[i];
      return s;
    };
    double num = 0.0, den = 0.0;
    const float eps = 1e-3f;  // larger steps cross ReLU kinks
    for (Index k = 0; k < 16; ++k) {
      const double fd = (y(k, eps) - y(k, -eps)) / (2.0 * eps * 1024.0);
      num += (fd - cam.weights[static_cast<std::size_t>(k)]) * (fd - cam.weights[static_cast<std::size_t>(k)]);
      den += fd * fd;
    }
    EXPECT_LE(std::sqrt(num / den), 1e-2) << family_label(f);
  }
}

TEST(GradCam, DefaultPixelSetFallsBackToAll) {
  std::vector<float> z(16, -1.0f);
  EXPECT_EQ(default_pixel_set(z).size(), 16u);
  z[3] = 0.5f;
  EXPECT_EQ(default_pixel_set(z), std::vector<Index>{3});
}

TEST(Bilinear, IdentityAndConstant) {
  const std::vector<float> g{1, 2, 3, 4};
  EXPECT_EQ(bilinear_resize(g, 2, 2, 2, 2), g);
  const std::vector<float> c(9, 2.5f);
  for (float v : bilinear_resize(c, 3, 3, 8, 8)) EXPECT_FLOAT_EQ(v, 2.5f);
  const auto up = bilinear_resize(g, 2, 2, 4, 4);
  EXPECT_FLOAT_EQ(up[0], 1.0f);
  EXPECT_FLOAT_EQ(up[15], 4.0f);
}

TEST(Pcr, Examples) {
  std::vector<double> g(12, 0.0);
  g[0] = 2;
  g[1] = -1;
  PcrResult r = pcr(g);
  EXPECT_EQ(r.ratios[0], 1.0);
  EXPECT_EQ(r.ratios[1], 0.0);
  g = std::vector<double>(12, 0.0);
  g[0] = 1;
  g[1] = 1;
  g[2] = 2;
  r = pcr(g);
  EXPECT_EQ(r.ratios[0], 0.25);
  EXPECT_EQ(r.ratios[2], 0.5);
  EXPECT_FALSE(r.degenerate);
  r = pcr(std::vector<double>(12, -1.0));
  EXPECT_TRUE(r.degenerate);
  for (double v : r.ratios) EXPECT_EQ(v, 0.0);
}

TEST(IntegratedGradients, LinearModelIsExact) {
  const Linear lin(7);
  const Tensor x = random_input(5);
  for (int m : {1, 3, 32}) {
    const IgAttribution ig = integrated_gradients(lin.fn(), x, m);
    for (Index i = 0; i < x.numel(); ++i) {
      const double expected = static_cast<double>(lin.w[static_cast<std::size_t>(i / 1024)]) * x.ptr()[i];
      EXPECT_NEAR(ig.attributions[static_cast<std::size_t>(i)], expected, 1e-6 * std::max(1.0, std::abs(expected)));
    }
    EXPECT_LE(ig.gap, 1e-3 * std::abs(ig.f_input - ig.f_baseline));
  }
}

TEST(IntegratedGradients, BaselineInputHasNoAttribution) {
  auto model = build_model(ModelSpec::desk(Family::UNet), 4);
  model->freeze();
  const Tensor x = Tensor::zeros({1, kFeatureCount, kInputSide, kInputSide});
  const IgAttribution ig = integrated_gradients(logits_of(*model), x, 8);
  for (float a : ig.attributions) EXPECT_EQ(a, 0.0f);
  EXPECT_TRUE(ig.pcr.degenerate);
  EXPECT_THROW(integrated_gradients(logits_of(*model), x, 0), std::invalid_argument);
}

TEST(IntegratedGradients, GapShrinksWithSteps) {
  // Smooth nonlinear model: midpoint error falls roughly as 1/m^2.
  const Linear lin(8);
  const LogitFn base = lin.fn();
  const LogitFn f = [base](const Tensor& x) { return ops::gelu(base(x)); };
  const Tensor x = random_input(6);
  double prev = std::numeric_limits<double>::infinity();
  for (int m : {2, 4, 8, 16}) {
    const double gap = integrated_gradients(f, x, m).gap;
    EXPECT_LT(gap, prev) << m;
    prev = gap;
  }
  EXPECT_LE(prev, 1e-2 * std::abs(integrated_gradients(f, x, 16).f_input));
}

TEST(ExplainMethods, Parse) {
  const auto m = ExplainMethods::parse("ig");
  EXPECT_FALSE(m.shap);
  EXPECT_FALSE(m.gradcam);
  EXPECT_TRUE(m.ig);
  EXPECT_THROW(ExplainMethods::parse("ig,lime"), std::invalid_argument);
}

TEST(Pgm, ParsesWithIndependentReader) {
  const std::vector<float> grid{0.0f, 0.5f, 1.0f, 2.0f, -1.0f, 0.25f};
  const std::string bytes = encode_pgm(grid, 2, 3);
  const pgm::Image img = pgm::parse(bytes);
  EXPECT_EQ(img.width, 3);
  EXPECT_EQ(img.height, 2);
  EXPECT_EQ(img.maxval, 255);
  EXPECT_EQ(img.pixels[3], 255);
  EXPECT_EQ(img.pixels[4], 0);
  const std::vector<float> flat(4, 7.0f);
  for (int v : pgm::parse(encode_pgm(flat, 2, 2)).pixels) EXPECT_EQ(v, 0);
}

TEST(ExplainSample, BundleStructureAndDeterminism) {
  SynthConfig cfg;
  cfg.count = 3;
  cfg.seed = 5;
  const auto data = synthesize_dataset(cfg);
  auto unet = build_model(ModelSpec::desk(Family::UNet), 1);
  unet->freeze();
  const ExplainModel models[] = {{unet.get(), false}};
  ExplainMethods methods;
  methods.shap = false;
  const auto bundle = explain_sample(models, data, 2, methods, 8);
  ASSERT_EQ(bundle.panels.size(), 1u);
  const auto& p = bundle.panels[0];
  ASSERT_TRUE(p.cam.has_value());
  EXPECT_EQ(p.cam->channels_up.size(), 16u);
  EXPECT_EQ(p.cam->combined_up.size(), 1024u);
  EXPECT_EQ(p.prediction.size(), 1024u);
  ASSERT_TRUE(p.ig.has_value());
  EXPECT_EQ(p.ig->gamma.size(), 12u);
  EXPECT_FALSE(p.trained);

  namespace fs = std::filesystem;
  const fs::path a = fs::temp_directory_path() / "wf_bundle_a", b = fs::temp_directory_path() / "wf_bundle_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const auto wa = write_bundle(bundle, a);
  const auto wb = write_bundle(explain_sample(models, data, 2, methods, 8), b);
  ASSERT_EQ(wa.size(), wb.size());
  std::size_t pgms = 0;
  for (std::size_t i = 0; i < wa.size(); ++i) {
    EXPECT_EQ(read_file(wa[i]), read_file(wb[i])) << wa[i];
    if (wa[i].extension() == ".pgm") ++pgms;
  }
  EXPECT_EQ(pgms, 16u + 1u + 1u);  // channels, combined, prediction
  const std::string pcr_csv = read_file(a / "sample_2" / "unet" / "ig_pcr.csv");
  EXPECT_EQ(std::count(pcr_csv.begin(), pcr_csv.end(), '\n'), 13);
  EXPECT_NE(read_file(a / "sample_2" / "bundle.json").find("\"warning\""), std::string::npos);
  EXPECT_THROW(explain_input(data, 3), std::out_of_range);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(ExplainSample, IgOnlyBundleHasNoImages) {
  SynthConfig cfg;
  cfg.count = 3;
  const auto data = synthesize_dataset(cfg);
  auto unet = build_model(ModelSpec::desk(Family::UNet), 1);
  unet->freeze();
  const ExplainModel models[] = {{unet.get(), true}};
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "wf_bundle_ig";
  fs::remove_all(dir);
  const auto written = write_bundle(explain_sample(models, data, 1, ExplainMethods::parse("ig"), 8), dir);
  for (const auto& p : written) EXPECT_NE(p.extension(), ".pgm") << p;
  EXPECT_TRUE(fs::exists(dir / "sample_1" / "unet" / "ig_pcr.csv"));
  EXPECT_EQ(read_file(dir / "sample_1" / "bundle.json").find("\"warning\""), std::string::npos);
  fs::remove_all(dir);
}
