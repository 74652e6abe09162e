#include "wildfire/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "wildfire/rng.hpp"

namespace wildfire {

using ops::Mode;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// spec

std::string_view family_key(Family f) {
  switch (f) {
    case Family::Autoencoder: return "autoencoder";
    case Family::ResEncoderDecoder: return "resnet";
    case Family::UNet: return "unet";
    case Family::SwinUNet: return "swin";
  }
  return "?";
}

std::string_view family_label(Family f) {
  switch (f) {
    case Family::Autoencoder: return "Autoencoder";
    case Family::ResEncoderDecoder: return "ResNet";
    case Family::UNet: return "UNet";
    case Family::SwinUNet: return "Swin";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  static const std::map<std::string, Family> aliases = {
      {"autoencoder", Family::Autoencoder},     {"resnet", Family::ResEncoderDecoder},
      {"resencoderdecoder", Family::ResEncoderDecoder}, {"unet", Family::UNet},
      {"swin", Family::SwinUNet},               {"swinunet", Family::SwinUNet},
      {"swin-unet", Family::SwinUNet}};
  if (auto it = aliases.find(lower); it != aliases.end()) return it->second;
  throw std::invalid_argument("unknown model '" + std::string(name) +
                              "'; expected one of: autoencoder, resnet, unet, swin");
}

Index Width::scale(Index base) const {
  if (num <= 0 || den <= 0) throw std::invalid_argument("width multiplier must be positive");
  if ((base * num) % den != 0 || base * num / den < 1) {
    throw std::invalid_argument("width " + str() + " maps base width " + std::to_string(base) +
                                " to a non-integer or zero channel count");
  }
  return base * num / den;
}

std::string Width::str() const {
  return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
}

Width Width::parse(std::string_view text) {
  const std::string t(text);
  try {
    if (auto slash = t.find('/'); slash != std::string::npos) {
      Width w{std::stoll(t.substr(0, slash)), std::stoll(t.substr(slash + 1))};
      if (w.num <= 0 || w.den <= 0) throw std::invalid_argument("non-positive");
      const auto g = std::gcd(w.num, w.den);
      return {w.num / g, w.den / g};
    }
    const double v = std::stod(t);
    if (!(v > 0.0)) throw std::invalid_argument("non-positive");
    for (std::int64_t den = 1; den <= 1024; ++den) {
      const double n = v * static_cast<double>(den);
      if (std::abs(n - std::round(n)) < 1e-9 && std::round(n) >= 1.0) {
        const auto num = static_cast<std::int64_t>(std::llround(n));
        const auto g = std::gcd(num, den);
        return {num / g, den / g};
      }
    }
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("bad width multiplier '" + t + "' (use a positive rational such as 1/4)");
}

ModelSpec ModelSpec::desk(Family f) {
  ModelSpec s;
  s.family = f;
  switch (f) {
    case Family::Autoencoder: s.width = {1, 1}; break;
    case Family::ResEncoderDecoder:
      s.width = {1, 4};
      s.blocks = {1, 1, 1, 1};
      break;
    case Family::UNet: s.width = {1, 4}; break;
    case Family::SwinUNet: s.width = {1, 4}; break;
  }
  return s;
}

void ModelSpec::validate() const {
  if (width.num <= 0 || width.den <= 0) throw std::invalid_argument("width multiplier must be positive");
  if (window < 1 || heads < 1 || mlp_ratio < 1) throw std::invalid_argument("window, heads and mlp_ratio must be >= 1");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw std::invalid_argument("dropout must be in [0, 1)");
  if (family == Family::ResEncoderDecoder) {
    if (blocks.size() != 4) throw std::invalid_argument("resnet needs 4 stage block counts");
    for (int b : blocks) {
      if (b < 1) throw std::invalid_argument("resnet block counts must be >= 1");
    }
  }
}

std::string ModelSpec::to_json() const {
  json j;
  j["family"] = std::string(family_key(family));
  j["width_multiplier"] = width.str();
  j["window"] = window;
  j["heads"] = heads;
  j["dropout"] = dropout;
  j["blocks"] = blocks;
  j["mlp_ratio"] = mlp_ratio;
  j["shift_windows"] = shift_windows;
  return j.dump();
}

ModelSpec ModelSpec::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("model spec: ") + e.what());
  }
  if (!j.is_object() || !j.contains("family")) throw std::invalid_argument("model spec: missing 'family'");
  ModelSpec s = desk(parse_family(j.at("family").get<std::string>()));
  try {
    if (j.contains("width_multiplier")) {
      const auto& w = j.at("width_multiplier");
      s.width = Width::parse(w.is_string() ? w.get<std::string>() : w.dump());
    }
    if (j.contains("window")) s.window = j.at("window").get<int>();
    if (j.contains("heads")) s.heads = j.at("heads").get<int>();
    if (j.contains("dropout")) s.dropout = j.at("dropout").get<float>();
    if (j.contains("blocks")) s.blocks = j.at("blocks").get<std::vector<int>>();
    if (j.contains("mlp_ratio")) s.mlp_ratio = j.at("mlp_ratio").get<int>();
    if (j.contains("shift_windows")) s.shift_windows = j.at("shift_windows").get<bool>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("model spec: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// graph base

ModelGraph::ModelGraph(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
  spec_.validate();
}

Tensor ModelGraph::forward(const Tensor& x, const ForwardOptions& options) {
  if (x.rank() != 4 || x.dim(1) != 12 || x.dim(2) != kInputSide || x.dim(3) != kInputSide) {
    throw DimensionError("model input must be [N,12,32,32], got " + shape_str(x.shape()));
  }
  if (frozen_ && options.mode == Mode::Train) throw std::logic_error("frozen graph cannot run in train mode");
  Tensor y = forward_impl(x, options);
  if (y.shape() != Shape{x.dim(0), 1, kInputSide, kInputSide}) {
    throw DimensionError("model produced " + shape_str(y.shape()));
  }
  return y;
}

std::vector<NamedTensor> ModelGraph::state() const {
  std::vector<NamedTensor> out = params_;
  out.insert(out.end(), buffers_.begin(), buffers_.end());
  return out;
}

void ModelGraph::load_state(const std::vector<NamedTensor>& state) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : state) by_name[t.name] = &t.value;
  for (auto* list : {&params_, &buffers_}) {
    for (auto& [name, value] : *list) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw std::invalid_argument("checkpoint lacks tensor '" + name + "'");
      if (it->second->shape() != value.shape()) {
        throw DimensionError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second->shape()) +
                             ", model expects " + shape_str(value.shape()));
      }
      std::copy(it->second->data().begin(), it->second->data().end(), value.data().begin());
    }
  }
  if (by_name.size() != params_.size() + buffers_.size()) {
    throw std::invalid_argument("checkpoint holds tensors the model does not define");
  }
}

std::uint64_t ModelGraph::param_count() const {
  std::uint64_t n = 0;
  for (const auto& p : params_) n += static_cast<std::uint64_t>(p.value.numel());
  return n;
}

std::uint64_t ModelGraph::flop_estimate() {
  FlopCounter counter;
  forward(Tensor::zeros({1, 12, kInputSide, kInputSide}), {});
  return counter.total();
}

void ModelGraph::freeze() {
  for (auto& p : params_) {
    p.value.set_requires_grad(false);
    p.value.zero_grad();
  }
  frozen_ = true;
}

Tensor ModelGraph::add_param(const std::string& name, Shape shape, double bound) {
  for (const auto& p : params_) {
    if (p.name == name) throw std::logic_error("duplicate parameter name " + name);
  }
  Tensor t(std::move(shape));
  if (bound > 0.0) {
    CounterRng rng(seed_, layer_index_);
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  }
  t.set_requires_grad();
  params_.push_back({name, t});
  return t;
}

Tensor ModelGraph::add_fixed(std::vector<NamedTensor>& into, const std::string& name, Shape shape, float fill) {
  Tensor t(std::move(shape), fill);
  into.push_back({name, t});
  return t;
}

Conv ModelGraph::conv(const std::string& name, Index cin, Index cout, int k, int stride, bool bias) {
  ++layer_index_;
  if (first_conv_.empty()) first_conv_ = name + ".weight";
  Conv c;
  c.weight = add_param(name + ".weight", {cout, cin, k, k}, std::sqrt(6.0 / static_cast<double>(cin * k * k)));
  if (bias) c.bias = add_param(name + ".bias", {cout}, 0.0);
  c.stride = stride;
  c.pad = (k - 1) / 2;
  return c;
}

ConvT ModelGraph::conv_t(const std::string& name, Index cin, Index cout, int k) {
  ++layer_index_;
  ConvT c;
  // Each output pixel of a k×k, stride-k transposed conv sees cin inputs.
  c.weight = add_param(name + ".weight", {cin, cout, k, k}, std::sqrt(6.0 / static_cast<double>(cin)));
  c.bias = add_param(name + ".bias", {cout}, 0.0);
  c.stride = k;
  return c;
}

Norm ModelGraph::norm(const std::string& name, Index channels) {
  Norm n;
  n.gamma = add_param(name + ".gamma", {channels}, 0.0);
  std::fill(n.gamma.data().begin(), n.gamma.data().end(), 1.0f);
  n.beta = add_param(name + ".beta", {channels}, 0.0);
  n.stats.mean = add_fixed(buffers_, name + ".running_mean", {channels}, 0.0f);
  n.stats.var = add_fixed(buffers_, name + ".running_var", {channels}, 1.0f);
  return n;
}

Dense ModelGraph::dense(const std::string& name, Index din, Index dout, bool bias) {
  ++layer_index_;
  Dense d;
  d.weight = add_param(name + ".weight", {din, dout}, std::sqrt(6.0 / static_cast<double>(din)));
  if (bias) d.bias = add_param(name + ".bias", {dout}, 0.0);
  return d;
}

LayerNorm ModelGraph::layer_norm(const std::string& name, Index dim) {
  LayerNorm n;
  n.gamma = add_param(name + ".gamma", {dim}, 0.0);
  std::fill(n.gamma.data().begin(), n.gamma.data().end(), 1.0f);
  n.beta = add_param(name + ".beta", {dim}, 0.0);
  return n;
}

Tensor ModelGraph::stem(const Conv& c, const Tensor& x, const ForwardOptions& options) const {
  Tensor a = ops::relu(c(x));
  if (options.probe) {
    if (options.probe->replace.defined()) {
      if (options.probe->replace.shape() != a.shape()) {
        throw DimensionError("probe replacement must have shape " + shape_str(a.shape()));
      }
      a = options.probe->replace;
    }
    options.probe->activation = a;
  }
  return a;
}

std::uint64_t ModelGraph::dropout_key(std::uint64_t step, int site) const {
  return mix64(mix64(seed_ ^ 0xD50F0A7ULL) ^ mix64(step) ^ static_cast<std::uint64_t>(site));
}

Tensor Bottleneck::operator()(const Tensor& x, Mode mode) const {
  Tensor h = ops::relu(reduce_norm(reduce(x), mode));
  h = ops::relu(spatial_norm(spatial(h), mode));
  h = expand_norm(expand(h), mode);
  Tensor s = projected ? shortcut_norm(shortcut(x), mode) : x;
  return ops::relu(ops::add(h, s));
}

namespace {

Tensor zero_like(const Tensor& t) { return Tensor::zeros(t.shape()); }

// ---------------------------------------------------------------------------
// Autoencoder

class AutoencoderGraph final : public ModelGraph {
 public:
  AutoencoderGraph(const ModelSpec& spec, std::uint64_t seed) : ModelGraph(spec, seed) {
    stem_ = conv("stem", 12, kStemChannels, 3);
    const Index widths[] = {64, 128, 256, 256, 256};
    Index cin = kStemChannels;
    for (int i = 0; i < 5; ++i) {
      const Index c = spec.width.scale(widths[i]);
      encoder_.push_back(conv("enc" + std::to_string(i), cin, c, 3));
      enc_channels_.push_back(c);
      cin = c;
    }
    // Mirror the encoder: 2->4->8->16->32 with the channel count each
    // encoder level had at that resolution.
    for (int i = 3; i >= 0; --i) {
      const Index c = enc_channels_[static_cast<std::size_t>(i)];
      decoder_.push_back(conv_t("dec" + std::to_string(3 - i), cin, c));
      cin = c;
    }
    head_ = conv("head", cin, 1, 3);
  }
  bool has_encoder_decoder_skips() const override { return false; }

 protected:
  Tensor forward_impl(const Tensor& x, const ForwardOptions& o) override {
    Tensor h = stem(stem_, x, o);
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      h = ops::relu(encoder_[i](h));
      if (i < 4) h = ops::maxpool2d(h);  // 32 -> 2; no pool at the 2×2 bottleneck
    }
    for (const auto& up : decoder_) h = ops::relu(up(h));
    return head_(h);
  }

 private:
  Conv stem_, head_;
  std::vector<Conv> encoder_;
  std::vector<Index> enc_channels_;
  std::vector<ConvT> decoder_;
};

// ---------------------------------------------------------------------------
// ResNet-style encoder-decoder

class ResEncoderDecoderGraph final : public ModelGraph {
 public:
  ResEncoderDecoderGraph(const ModelSpec& spec, std::uint64_t seed) : ModelGraph(spec, seed) {
    stem_ = conv("stem", 12, kStemChannels, 3);
    const Index base = spec.width.scale(64);
    entry_ = conv("entry", kStemChannels, base, 3, 1, false);
    entry_norm_ = norm("entry_bn", base);
    const Index mids[] = {64, 128, 256, 512};
    Index cin = base;
    for (int s = 0; s < 4; ++s) {
      const Index mid = spec.width.scale(mids[s]);
      const Index out = 4 * mid;
      for (int b = 0; b < spec.blocks[static_cast<std::size_t>(s)]; ++b) {
        const int stride = (s > 0 && b == 0) ? 2 : 1;
        const std::string p = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
        Bottleneck blk;
        blk.reduce = conv(p + ".reduce", cin, mid, 1, 1, false);
        blk.reduce_norm = norm(p + ".reduce_bn", mid);
        blk.spatial = conv(p + ".spatial", mid, mid, 3, stride, false);
        blk.spatial_norm = norm(p + ".spatial_bn", mid);
        blk.expand = conv(p + ".expand", mid, out, 1, 1, false);
        blk.expand_norm = norm(p + ".expand_bn", out);
        if (stride != 1 || cin != out) {
          blk.projected = true;
          blk.shortcut = conv(p + ".shortcut", cin, out, 1, stride, false);
          blk.shortcut_norm = norm(p + ".shortcut_bn", out);
        }
        blocks_.push_back(blk);
        cin = out;
      }
    }
    // Autoencoder-style decoder from the 4×4 encoder output.
    const Index dec[] = {256, 128, 64};
    for (int i = 0; i < 3; ++i) {
      const Index c = spec.width.scale(dec[i]);
      decoder_.push_back(conv_t("dec" + std::to_string(i), cin, c));
      cin = c;
    }
    head_ = conv("head", cin, 1, 3);
  }
  bool has_encoder_decoder_skips() const override { return false; }
  const std::vector<Bottleneck>& blocks() const { return blocks_; }

 protected:
  Tensor forward_impl(const Tensor& x, const ForwardOptions& o) override {
    Tensor h = stem(stem_, x, o);
    h = ops::relu(entry_norm_(entry_(h), o.mode));
    for (const auto& b : blocks_) h = b(h, o.mode);
    for (const auto& up : decoder_) h = ops::relu(up(h));
    return head_(h);
  }

 private:
  Conv stem_, entry_, head_;
  Norm entry_norm_;
  std::vector<Bottleneck> blocks_;
  std::vector<ConvT> decoder_;
};

// ---------------------------------------------------------------------------
// UNet

class UNetGraph final : public ModelGraph {
 public:
  UNetGraph(const ModelSpec& spec, std::uint64_t seed) : ModelGraph(spec, seed) {
    stem_ = conv("stem", 12, kStemChannels, 3);
    const Index widths[] = {32, 64, 128, 256, 512};
    Index cin = kStemChannels;
    for (int l = 0; l < 5; ++l) {
      const Index c = spec.width.scale(widths[l]);
      channels_.push_back(c);
      down_.push_back(level("down" + std::to_string(l), cin, c));
      cin = c;
    }
    for (int l = 3; l >= 0; --l) {
      const Index c = channels_[static_cast<std::size_t>(l)];
      ups_.push_back(conv_t("up" + std::to_string(l) + ".transpose", cin, c));
      up_levels_.push_back(level("up" + std::to_string(l), 2 * c, c));
      cin = c;
    }
    head_ = conv("head", cin, 1, 1);
  }
  bool has_encoder_decoder_skips() const override { return true; }

 protected:
  struct Level {
    Conv c1, c2;
    Norm n1, n2;
  };
  Level level(const std::string& name, Index cin, Index cout) {
    Level l;
    l.c1 = conv(name + ".conv1", cin, cout, 3, 1, false);
    l.n1 = norm(name + ".bn1", cout);
    l.c2 = conv(name + ".conv2", cout, cout, 3, 1, false);
    l.n2 = norm(name + ".bn2", cout);
    return l;
  }
  static Tensor run(const Level& l, const Tensor& x, Mode mode) {
    Tensor h = ops::relu(l.n1(l.c1(x), mode));
    return ops::relu(l.n2(l.c2(h), mode));
  }

  Tensor forward_impl(const Tensor& x, const ForwardOptions& o) override {
    Tensor h = stem(stem_, x, o);
    std::vector<Tensor> skips;
    for (int l = 0; l < 5; ++l) {
      h = run(down_[static_cast<std::size_t>(l)], h, o.mode);
      if (l >= 3) h = ops::dropout(h, spec().dropout, dropout_key(o.step, l), o.mode);
      if (l < 4) {
        skips.push_back(h);
        h = ops::maxpool2d(h);
      }
    }
    for (int i = 0; i < 4; ++i) {
      const int l = 3 - i;
      h = ups_[static_cast<std::size_t>(i)](h);
      Tensor skip = o.ablate_skip == l ? zero_like(skips[static_cast<std::size_t>(l)]) : skips[static_cast<std::size_t>(l)];
      h = run(up_levels_[static_cast<std::size_t>(i)], ops::concat({h, skip}, 1), o.mode);
    }
    return head_(h);
  }

 private:
  Conv stem_, head_;
  std::vector<Index> channels_;
  std::vector<Level> down_, up_levels_;
  std::vector<ConvT> ups_;
};

// ---------------------------------------------------------------------------
// Swin-UNet

class SwinUNetGraph final : public ModelGraph {
 public:
  SwinUNetGraph(const ModelSpec& spec, std::uint64_t seed) : ModelGraph(spec, seed) {
    stem_ = conv("stem", 12, kStemChannels, 3);
    const Index c = spec.width.scale(128);
    embed_ = conv("patch_embed", kStemChannels, c, 2, 2);
    embed_.pad = 0;
    embed_norm_ = layer_norm("patch_embed_ln", c);
    for (int l = 0; l < 4; ++l) {
      sides_.push_back(kInputSide / 2 >> l);
      dims_.push_back(c << l);
      if (dims_.back() % spec.heads != 0) {
        throw DimensionError("swin: stage dim " + std::to_string(dims_.back()) + " not divisible by heads " +
                             std::to_string(spec.heads));
      }
      const Index window = std::min<Index>(spec.window, sides_.back());
      if (sides_.back() % window != 0) {
        throw DimensionError("swin: token grid " + std::to_string(sides_.back()) + " not divisible by window " +
                             std::to_string(window));
      }
    }
    for (int l = 0; l < 4; ++l) {
      encoder_.push_back(stage("enc" + std::to_string(l), l));
      if (l < 3) merges_.push_back(dense("enc" + std::to_string(l) + ".merge", 4 * dims_[l], 2 * dims_[l], false).weight);
    }
    for (int l = 2; l >= 0; --l) {
      const std::string p = "dec" + std::to_string(l);
      expands_.push_back(dense(p + ".expand", dims_[l + 1], 2 * dims_[l + 1], false).weight);
      reduces_.push_back(dense(p + ".reduce", 2 * dims_[l], dims_[l]));
      decoder_.push_back(stage(p, l));
    }
    final_expand_ = dense("final.expand", c, 2 * c, false).weight;
    final_norm_ = layer_norm("final.ln", c / 2);
    head_ = dense("head", c / 2, 1);
  }
  bool has_encoder_decoder_skips() const override { return true; }

 private:
  struct Block {
    LayerNorm ln1, ln2;
    ops::AttentionWeights attn;
    Dense fc1, fc2;
    Index window = 0, shift = 0;
  };
  using Stage = std::vector<Block>;

  Stage stage(const std::string& name, int level) {
    const Index d = dims_[static_cast<std::size_t>(level)];
    const Index side = sides_[static_cast<std::size_t>(level)];
    const Index window = std::min<Index>(spec().window, side);
    Stage s;
    for (int b = 0; b < 2; ++b) {
      const std::string p = name + ".block" + std::to_string(b);
      Block blk;
      blk.ln1 = layer_norm(p + ".ln1", d);
      const Dense qkv = dense(p + ".qkv", d, 3 * d);
      const Dense proj = dense(p + ".proj", d, d);
      blk.attn = {qkv.weight, qkv.bias, proj.weight, proj.bias};
      blk.ln2 = layer_norm(p + ".ln2", d);
      blk.fc1 = dense(p + ".fc1", d, spec().mlp_ratio * d);
      blk.fc2 = dense(p + ".fc2", spec().mlp_ratio * d, d);
      blk.window = window;
      // Odd blocks shift by half a window when the grid holds more than one.
      blk.shift = (b % 2 == 1 && spec().shift_windows && side > window) ? window / 2 : 0;
      s.push_back(blk);
    }
    return s;
  }

  Tensor run(const Stage& s, Tensor h, int level) const {
    const Index side = sides_[static_cast<std::size_t>(level)];
    for (const auto& b : s) {
      h = ops::add(h, ops::window_attention(b.ln1(h), side, spec().heads, b.window, b.shift, b.attn));
      h = ops::add(h, b.fc2(ops::gelu(b.fc1(b.ln2(h)))));
    }
    return h;
  }

  Tensor forward_impl(const Tensor& x, const ForwardOptions& o) override {
    Tensor a = stem(stem_, x, o);
    Tensor h = embed_norm_(ops::nchw_to_tokens(embed_(a)));
    std::vector<Tensor> skips;
    for (int l = 0; l < 4; ++l) {
      h = run(encoder_[static_cast<std::size_t>(l)], h, l);
      if (l < 3) {
        skips.push_back(h);
        h = ops::patch_merge(h, sides_[static_cast<std::size_t>(l)], merges_[static_cast<std::size_t>(l)]);
      }
    }
    for (int i = 0; i < 3; ++i) {
      const int l = 2 - i;
      h = ops::patch_expand(h, sides_[static_cast<std::size_t>(l + 1)], expands_[static_cast<std::size_t>(i)]);
      Tensor skip = o.ablate_skip == l ? zero_like(skips[static_cast<std::size_t>(l)]) : skips[static_cast<std::size_t>(l)];
      h = reduces_[static_cast<std::size_t>(i)](ops::concat({h, skip}, 2));
      h = run(decoder_[static_cast<std::size_t>(i)], h, l);
    }
    h = ops::patch_expand(h, sides_[0], final_expand_);
    h = head_(final_norm_(h));
    return ops::tokens_to_nchw(h, kInputSide, kInputSide);
  }

  Conv stem_, embed_;
  LayerNorm embed_norm_, final_norm_;
  std::vector<Index> sides_, dims_;
  std::vector<Stage> encoder_, decoder_;
  std::vector<Tensor> merges_, expands_;
  std::vector<Dense> reduces_;
  Tensor final_expand_;
  Dense head_;
};

}  // namespace

std::unique_ptr<ModelGraph> build_autoencoder(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.family != Family::Autoencoder) throw std::invalid_argument("spec is not an autoencoder");
  return std::make_unique<AutoencoderGraph>(spec, seed);
}
std::unique_ptr<ModelGraph> build_res_encoder_decoder(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.family != Family::ResEncoderDecoder) throw std::invalid_argument("spec is not a resnet");
  return std::make_unique<ResEncoderDecoderGraph>(spec, seed);
}
std::unique_ptr<ModelGraph> build_unet(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.family != Family::UNet) throw std::invalid_argument("spec is not a unet");
  return std::make_unique<UNetGraph>(spec, seed);
}
std::unique_ptr<ModelGraph> build_swin_unet(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.family != Family::SwinUNet) throw std::invalid_argument("spec is not a swin-unet");
  return std::make_unique<SwinUNetGraph>(spec, seed);
}

std::unique_ptr<ModelGraph> build_model(const ModelSpec& spec, std::uint64_t seed) {
  switch (spec.family) {
    case Family::Autoencoder: return build_autoencoder(spec, seed);
    case Family::ResEncoderDecoder: return build_res_encoder_decoder(spec, seed);
    case Family::UNet: return build_unet(spec, seed);
    case Family::SwinUNet: return build_swin_unet(spec, seed);
  }
  throw std::invalid_argument("unknown family");
}

std::vector<Bottleneck> residual_blocks(const ModelGraph& graph) {
  if (const auto* g = dynamic_cast<const ResEncoderDecoderGraph*>(&graph)) return g->blocks();
  return {};
}

}  // namespace wildfire
