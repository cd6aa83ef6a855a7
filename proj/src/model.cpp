#include "thermosynth/model.hpp"

#include "thermosynth/ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace thermosynth {
namespace {

struct ParamSpec {
  std::string name;
  Shape shape;
  bool bias;
};

class Layout {
 public:
  void conv(const std::string& name, int out, int in, int k) {
    specs_.push_back({name + ".w", {out, in, k, k}, false});
    specs_.push_back({name + ".b", {1, out, 1, 1}, true});
  }
  void dense(const std::string& name, int out, int in) {
    specs_.push_back({name + ".w", {out, in, 1, 1}, false});
    specs_.push_back({name + ".b", {1, out, 1, 1}, true});
  }
  void resblock(const std::string& name, int in, int out) {
    conv(name + ".conv1", out, in, 3);
    conv(name + ".conv2", out, out, 3);
    if (in != out) conv(name + ".skip", out, in, 1);
  }
  [[nodiscard]] const std::vector<ParamSpec>& specs() const { return specs_; }

 private:
  std::vector<ParamSpec> specs_;
};

Layout generator_layout(const ModelConfig& cfg) {
  Layout l;
  const auto& ch = cfg.generator_channels;
  const int s = cfg.semantic_channels;
  l.dense("dense", ch[0] * cfg.heatmap_height * cfg.heatmap_width, kLatentDim);
  l.conv("sem.in", s, 1, 3);
  l.resblock("sem.res0", s, s);
  for (int k = 1; k <= kUpsamplingStages; ++k) {
    const std::string sem = "sem.up" + std::to_string(k);
    l.resblock(sem, s, s);
    const std::string blk = "block" + std::to_string(k);
    l.conv(blk + ".spade1.gamma", ch[k - 1], s, 3);
    l.conv(blk + ".spade1.beta", ch[k - 1], s, 3);
    l.conv(blk + ".conv1", ch[k], ch[k - 1], 3);
    l.conv(blk + ".spade2.gamma", ch[k], s, 3);
    l.conv(blk + ".spade2.beta", ch[k], s, 3);
    l.conv(blk + ".conv2", ch[k], ch[k], 3);
    if (ch[k - 1] != ch[k]) l.conv(blk + ".skip", ch[k], ch[k - 1], 1);
  }
  l.conv("to_rgb", 3, ch[3], 3);
  return l;
}

Layout downsampling_backbone(const std::array<int, 4>& ch) {
  Layout l;
  l.conv("in", ch[0], 3, 3);
  for (int k = 1; k <= kUpsamplingStages; ++k) l.resblock("down" + std::to_string(k), ch[k - 1], ch[k]);
  return l;
}

Layout discriminator_layout(const ModelConfig& cfg) {
  Layout l = downsampling_backbone(cfg.discriminator_channels);
  l.dense("score", 1, cfg.discriminator_channels[3]);
  l.conv("heatmap", 1, cfg.discriminator_channels[3], 3);
  return l;
}

Layout encoder_layout(const ModelConfig& cfg) {
  Layout l = downsampling_backbone(cfg.encoder_channels);
  l.dense("code", kLatentDim, cfg.encoder_channels[3]);
  return l;
}

template <typename Scalar>
ParameterSet<Scalar> initialize(const Layout& layout, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ParameterSet<Scalar> ps;
  for (const auto& spec : layout.specs()) {
    Tensor<Scalar> value(spec.shape);
    if (!spec.bias) {
      const double std = 1.0 / std::sqrt(static_cast<double>(spec.shape.sample_size()));
      for (std::size_t i = 0; i < value.size(); ++i) value[i] = static_cast<Scalar>(std * normal(rng));
    }
    ps.add(spec.name, std::move(value));
  }
  return ps;
}

template <typename Scalar>
void check_layout(const Layout& layout, const ParameterSet<Scalar>& ps, const char* net) {
  if (ps.size() != layout.specs().size()) {
    throw ShapeError(std::string(net) + ": expected " + std::to_string(layout.specs().size()) +
                     " parameters, got " + std::to_string(ps.size()));
  }
  for (const auto& spec : layout.specs()) {
    if (!ps.contains(spec.name)) throw ShapeError(std::string(net) + ": missing " + spec.name);
    require_shape(ps.at(spec.name).value.shape(), spec.shape, (std::string(net) + "/" + spec.name).c_str());
  }
}

// Binds named parameters of a (possibly const) set onto a tape.
template <typename Scalar, typename PS>
struct Net {
  using Var = typename Tape<Scalar>::Var;
  Tape<Scalar>& t;
  PS& ps;

  Var p(const std::string& name) { return t.parameter(ps.at(name)); }

  Var conv(const std::string& name, Var x, int stride = 1) {
    const int k = ps.at(name + ".w").value.shape().h;
    return ops::conv2d(t, x, p(name + ".w"), p(name + ".b"), stride, k / 2);
  }
  Var dense(const std::string& name, Var x) {
    return ops::linear(t, x, p(name + ".w"), p(name + ".b"));
  }
  Var lrelu(Var x) { return ops::leaky_relu(t, x, Scalar(0.2)); }

  Var skip_or_identity(const std::string& name, Var x) {
    return ps.contains(name + ".skip.w") ? conv(name + ".skip", x) : x;
  }

  // conv-LReLU-conv residual block at constant resolution (pre-activation).
  Var resblock(const std::string& name, Var x) {
    Var y = conv(name + ".conv2", lrelu(conv(name + ".conv1", lrelu(x))));
    return ops::add(t, y, skip_or_identity(name, x));
  }

  // Residual block halving resolution: strided second conv, pooled skip.
  Var resblock_down(const std::string& name, Var x) {
    Var y = conv(name + ".conv2", lrelu(conv(name + ".conv1", lrelu(x))), 2);
    return ops::add(t, y, skip_or_identity(name, ops::avg_pool(t, x, 2)));
  }

  Var spade(const std::string& name, Var feature, Var semantic) {
    return spade_modulate(t, feature, conv(name + ".gamma", semantic), conv(name + ".beta", semantic));
  }

  Var backbone(Var image) {
    Var f = conv("in", image);
    for (int k = 1; k <= kUpsamplingStages; ++k) f = resblock_down("down" + std::to_string(k), f);
    return lrelu(f);
  }
};

void require_positive(int v, const char* what) {
  if (v < 1) throw std::invalid_argument(std::string("model config: ") + what + " must be >= 1");
}

}  // namespace

void ModelConfig::validate() const {
  require_positive(heatmap_height, "heatmap_height");
  require_positive(heatmap_width, "heatmap_width");
  require_positive(semantic_channels, "semantic_channels");
  for (int c : generator_channels) require_positive(c, "generator_channels");
  for (int c : discriminator_channels) require_positive(c, "discriminator_channels");
  for (int c : encoder_channels) require_positive(c, "encoder_channels");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"heatmap_height", c.heatmap_height},
                     {"heatmap_width", c.heatmap_width},
                     {"generator_channels", c.generator_channels},
                     {"semantic_channels", c.semantic_channels},
                     {"discriminator_channels", c.discriminator_channels},
                     {"encoder_channels", c.encoder_channels}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const char* kKeys[] = {"heatmap_height",         "heatmap_width",
                                "generator_channels",     "semantic_channels",
                                "discriminator_channels", "encoder_channels"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys)) {
      throw std::invalid_argument("model config: unknown key '" + key + "'");
    }
  }
  ModelConfig d;
  c.heatmap_height = j.value("heatmap_height", d.heatmap_height);
  c.heatmap_width = j.value("heatmap_width", d.heatmap_width);
  c.generator_channels = j.value("generator_channels", d.generator_channels);
  c.semantic_channels = j.value("semantic_channels", d.semantic_channels);
  c.discriminator_channels = j.value("discriminator_channels", d.discriminator_channels);
  c.encoder_channels = j.value("encoder_channels", d.encoder_channels);
  c.validate();
}

template <typename Scalar>
Tensor<Scalar> sample_latents(int count, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<Scalar> z(Shape{count, kLatentDim, 1, 1});
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<Scalar>(normal(rng));
  return z;
}

template <typename Scalar>
typename Tape<Scalar>::Var spade_modulate(Tape<Scalar>& t, typename Tape<Scalar>::Var feature,
                                          typename Tape<Scalar>::Var gamma,
                                          typename Tape<Scalar>::Var beta) {
  require_shape(t.shape(gamma), t.shape(feature), "spade gamma");
  require_shape(t.shape(beta), t.shape(feature), "spade beta");
  auto normalized = ops::instance_norm(t, feature);
  return ops::add(t, ops::mul(t, normalized, ops::add_scalar(t, gamma, Scalar(1))), beta);
}

template <typename Scalar>
ParameterSet<Scalar> init_generator_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return initialize<Scalar>(generator_layout(cfg), seed);
}
template <typename Scalar>
ParameterSet<Scalar> init_discriminator_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return initialize<Scalar>(discriminator_layout(cfg), seed);
}
template <typename Scalar>
ParameterSet<Scalar> init_encoder_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return initialize<Scalar>(encoder_layout(cfg), seed);
}

// ---- Generator ----

template <typename Scalar>
Generator<Scalar>::Generator(const ModelConfig& config, std::uint64_t seed)
    : config_(config), params_(init_generator_params<Scalar>(config, seed)) {}

template <typename Scalar>
Generator<Scalar>::Generator(const ModelConfig& config, ParameterSet<Scalar> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  check_layout(generator_layout(config_), params_, "generator");
}

template <typename Scalar>
template <typename PS>
typename Generator<Scalar>::Var Generator<Scalar>::build(Tape<Scalar>& t, PS& ps,
                                                         const ModelConfig& cfg, Var z,
                                                         Var heatmap) {
  require_shape(t.shape(heatmap), cfg.heatmap_shape(t.shape(heatmap).n), "generator heatmap");
  require_shape(t.shape(z), cfg.latent_shape(t.shape(heatmap).n), "generator latent");
  Net<Scalar, PS> net{t, ps};
  const int n = t.shape(z).n;

  Var sem = net.resblock("sem.res0", net.conv("sem.in", heatmap));
  Var f = ops::reshape(t, net.dense("dense", z),
                       Shape{n, cfg.generator_channels[0], cfg.heatmap_height, cfg.heatmap_width});
  for (int k = 1; k <= kUpsamplingStages; ++k) {
    const std::string blk = "block" + std::to_string(k);
    sem = net.resblock("sem.up" + std::to_string(k), ops::upsample_nearest2x(t, sem));
    f = ops::upsample_nearest2x(t, f);
    Var a = net.conv(blk + ".conv1", net.lrelu(net.spade(blk + ".spade1", f, sem)));
    Var b = net.conv(blk + ".conv2", net.lrelu(net.spade(blk + ".spade2", a, sem)));
    f = ops::add(t, b, net.skip_or_identity(blk, f));
  }
  // float tanh rounds to +-1 for large inputs; keep the output strictly inside (-1, 1).
  return ops::scale(t, ops::tanh(t, net.conv("to_rgb", net.lrelu(f))), std::nextafter(Scalar(1), Scalar(0)));
}

template <typename Scalar>
typename Generator<Scalar>::Var Generator<Scalar>::forward(Tape<Scalar>& t, Var z, Var heatmap) {
  return build(t, params_, config_, z, heatmap);
}

template <typename Scalar>
typename Generator<Scalar>::Var Generator<Scalar>::forward(Tape<Scalar>& t, Var z, Var heatmap) const {
  return build(t, params_, config_, z, heatmap);
}

template <typename Scalar>
Tensor<Scalar> Generator<Scalar>::operator()(const Tensor<Scalar>& z,
                                             const Tensor<Scalar>& heatmap) const {
  Tape<Scalar> t;
  Var zv = t.constant(z);
  Var hv = t.constant(heatmap);
  return t.value(build(t, params_, config_, zv, hv));
}

// ---- Discriminator ----

template <typename Scalar>
Discriminator<Scalar>::Discriminator(const ModelConfig& config, std::uint64_t seed)
    : config_(config), params_(init_discriminator_params<Scalar>(config, seed)) {}

template <typename Scalar>
Discriminator<Scalar>::Discriminator(const ModelConfig& config, ParameterSet<Scalar> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  check_layout(discriminator_layout(config_), params_, "discriminator");
}

template <typename Scalar>
template <typename PS>
typename Discriminator<Scalar>::Vars Discriminator<Scalar>::build(Tape<Scalar>& t, PS& ps,
                                                                  const ModelConfig& cfg,
                                                                  Var image) {
  require_shape(t.shape(image), cfg.rgb_shape(t.shape(image).n), "discriminator input");
  Net<Scalar, PS> net{t, ps};
  Var f = net.backbone(image);
  Var pooled = ops::spatial_mean(t, f);
  return Vars{net.dense("score", pooled), net.conv("heatmap", f), pooled};
}

template <typename Scalar>
typename Discriminator<Scalar>::Vars Discriminator<Scalar>::forward(Tape<Scalar>& t, Var image) {
  return build(t, params_, config_, image);
}

template <typename Scalar>
DiscriminatorOutput<Scalar> Discriminator<Scalar>::operator()(const Tensor<Scalar>& image) const {
  Tape<Scalar> t;
  Vars v = build(t, params_, config_, t.constant(image));
  return {t.value(v.score), t.value(v.heatmap), t.value(v.features)};
}

// ---- Encoder ----

template <typename Scalar>
Encoder<Scalar>::Encoder(const ModelConfig& config, std::uint64_t seed)
    : config_(config), params_(init_encoder_params<Scalar>(config, seed)) {}

template <typename Scalar>
Encoder<Scalar>::Encoder(const ModelConfig& config, ParameterSet<Scalar> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  check_layout(encoder_layout(config_), params_, "encoder");
}

template <typename Scalar>
template <typename PS>
typename Encoder<Scalar>::Var Encoder<Scalar>::build(Tape<Scalar>& t, PS& ps,
                                                     const ModelConfig& cfg, Var image) {
  require_shape(t.shape(image), cfg.rgb_shape(t.shape(image).n), "encoder input");
  Net<Scalar, PS> net{t, ps};
  return net.dense("code", ops::spatial_mean(t, net.backbone(image)));
}

template <typename Scalar>
typename Encoder<Scalar>::Var Encoder<Scalar>::forward(Tape<Scalar>& t, Var image) {
  return build(t, params_, config_, image);
}

template <typename Scalar>
Tensor<Scalar> Encoder<Scalar>::operator()(const Tensor<Scalar>& image) const {
  Tape<Scalar> t;
  return t.value(build(t, params_, config_, t.constant(image)));
}

#define THERMOSYNTH_INSTANTIATE_MODEL(S)                                                      \
  template Tensor<S> sample_latents<S>(int, std::mt19937_64&);                               \
  template Tape<S>::Var spade_modulate<S>(Tape<S>&, Tape<S>::Var, Tape<S>::Var, Tape<S>::Var); \
  template ParameterSet<S> init_generator_params<S>(const ModelConfig&, std::uint64_t);      \
  template ParameterSet<S> init_discriminator_params<S>(const ModelConfig&, std::uint64_t);  \
  template ParameterSet<S> init_encoder_params<S>(const ModelConfig&, std::uint64_t);        \
  template class Generator<S>;                                                               \
  template class Discriminator<S>;                                                           \
  template class Encoder<S>;

THERMOSYNTH_INSTANTIATE_MODEL(float)
THERMOSYNTH_INSTANTIATE_MODEL(double)

}  // namespace thermosynth
