#pragma once

// Generator, discriminator and inversion encoder of the thermal-conditioned GAN.
//
// Generator: z -> dense -> (c0, Hh, Wh), then three SPADE ResBlocks that each
// upsample 2x. The heatmap drives a semantic branch (conv, ResBlock, then three
// upsampling ResBlocks) that produces one modulation map per generator stage.
// Discriminator and encoder share a layout (three strided ResBlocks down to
// (Hh, Wh)) but never share parameters.

#include "thermosynth/tape.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <random>
#include <string>

namespace thermosynth {

inline constexpr int kLatentDim = 256;
inline constexpr int kUpsamplingStages = 3;
inline constexpr int kScaleFactor = 1 << kUpsamplingStages;

struct ModelConfig {
  int heatmap_height = 12;
  int heatmap_width = 16;
  std::array<int, 4> generator_channels{256, 128, 64, 32};
  int semantic_channels = 64;
  std::array<int, 4> discriminator_channels{32, 64, 128, 256};
  std::array<int, 4> encoder_channels{32, 64, 128, 256};

  [[nodiscard]] int rgb_height() const { return kScaleFactor * heatmap_height; }
  [[nodiscard]] int rgb_width() const { return kScaleFactor * heatmap_width; }
  [[nodiscard]] Shape heatmap_shape(int n = 1) const {
    return {n, 1, heatmap_height, heatmap_width};
  }
  [[nodiscard]] Shape rgb_shape(int n = 1) const { return {n, 3, rgb_height(), rgb_width()}; }
  [[nodiscard]] Shape latent_shape(int n = 1) const { return {n, kLatentDim, 1, 1}; }

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Draw N(0,1) latent codes.
template <typename Scalar>
Tensor<Scalar> sample_latents(int count, std::mt19937_64& rng);

/// SPADE modulation: instance_norm(feature) * (1 + gamma) + beta.
template <typename Scalar>
typename Tape<Scalar>::Var spade_modulate(Tape<Scalar>& t, typename Tape<Scalar>::Var feature,
                                          typename Tape<Scalar>::Var gamma,
                                          typename Tape<Scalar>::Var beta);

template <typename Scalar>
class Generator {
 public:
  using Var = typename Tape<Scalar>::Var;

  Generator(const ModelConfig& config, std::uint64_t seed);
  Generator(const ModelConfig& config, ParameterSet<Scalar> params);

  /// Differentiable forward; gradients flow into parameters with requires_grad.
  Var forward(Tape<Scalar>& t, Var z, Var heatmap);
  /// Parameters bind read-only; gradients still flow to z and heatmap.
  Var forward(Tape<Scalar>& t, Var z, Var heatmap) const;
  /// Inference: z (n,256,1,1), heatmap (n,1,Hh,Wh) -> image (n,3,8Hh,8Wh) in (-1,1).
  [[nodiscard]] Tensor<Scalar> operator()(const Tensor<Scalar>& z,
                                          const Tensor<Scalar>& heatmap) const;

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  ParameterSet<Scalar>& params() { return params_; }
  [[nodiscard]] const ParameterSet<Scalar>& params() const { return params_; }

 private:
  template <typename PS>
  static Var build(Tape<Scalar>& t, PS& ps, const ModelConfig& cfg, Var z, Var heatmap);

  ModelConfig config_;
  ParameterSet<Scalar> params_;
};

template <typename Scalar>
struct DiscriminatorOutput {
  Tensor<Scalar> score;     // (n, 1, 1, 1)
  Tensor<Scalar> heatmap;   // (n, 1, Hh, Wh), unclamped
  Tensor<Scalar> features;  // (n, d3, 1, 1), pooled backbone features
};

template <typename Scalar>
class Discriminator {
 public:
  using Var = typename Tape<Scalar>::Var;
  struct Vars {
    Var score;
    Var heatmap;
    Var features;
  };

  Discriminator(const ModelConfig& config, std::uint64_t seed);
  Discriminator(const ModelConfig& config, ParameterSet<Scalar> params);

  Vars forward(Tape<Scalar>& t, Var image);
  [[nodiscard]] DiscriminatorOutput<Scalar> operator()(const Tensor<Scalar>& image) const;

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  ParameterSet<Scalar>& params() { return params_; }
  [[nodiscard]] const ParameterSet<Scalar>& params() const { return params_; }

 private:
  template <typename PS>
  static Vars build(Tape<Scalar>& t, PS& ps, const ModelConfig& cfg, Var image);

  ModelConfig config_;
  ParameterSet<Scalar> params_;
};

template <typename Scalar>
class Encoder {
 public:
  using Var = typename Tape<Scalar>::Var;

  Encoder(const ModelConfig& config, std::uint64_t seed);
  Encoder(const ModelConfig& config, ParameterSet<Scalar> params);

  Var forward(Tape<Scalar>& t, Var image);
  /// image (n,3,8Hh,8Wh) -> codes (n,256,1,1)
  [[nodiscard]] Tensor<Scalar> operator()(const Tensor<Scalar>& image) const;

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  ParameterSet<Scalar>& params() { return params_; }
  [[nodiscard]] const ParameterSet<Scalar>& params() const { return params_; }

 private:
  template <typename PS>
  static Var build(Tape<Scalar>& t, PS& ps, const ModelConfig& cfg, Var image);

  ModelConfig config_;
  ParameterSet<Scalar> params_;
};

/// Parameter layouts with fan-in scaled Gaussian weights and zero biases.
template <typename Scalar>
ParameterSet<Scalar> init_generator_params(const ModelConfig& cfg, std::uint64_t seed);
template <typename Scalar>
ParameterSet<Scalar> init_discriminator_params(const ModelConfig& cfg, std::uint64_t seed);
template <typename Scalar>
ParameterSet<Scalar> init_encoder_params(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace thermosynth
