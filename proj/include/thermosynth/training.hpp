#pragma once

// Two-phase training: GAN phase (G, D) then inversion phase (I, optionally D)
// with G frozen. All run state (step counters, Adam moments, EMA shadows)
// lives in the ModelBundle, so a saved bundle is also a resumable checkpoint.

#include "thermosynth/bundle.hpp"
#include "thermosynth/data.hpp"
#include "thermosynth/losses.hpp"

#include <functional>
#include <iosfwd>
#include <optional>

namespace thermosynth {

enum class Phase { gan, inversion };

std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

struct TrainConfig {
  Phase phase = Phase::gan;
  double lr_d = 2e-4;
  double lr_g = 5e-5;  // generator in the GAN phase, encoder in the inversion phase
  double beta1 = 0.0;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch = 128;
  int epochs = 400;
  int steps = 0;  // when > 0, overrides epochs as the total step budget
  int update_ratio = 1;
  double ema_decay = 0.999;
  std::uint64_t seed = 0;
  bool train_discriminator = true;  // inversion phase only
  int r1_interval = 1;              // lazy R1: penalty every k-th D-step, scaled by k
  double r1_delta = 1e-2;
  LossConfig loss;

  static TrainConfig defaults(Phase phase);
  void validate() const;
  [[nodiscard]] int total_steps(int batches_per_epoch) const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys take the defaults of the phase named in the JSON; unknown keys throw.
void from_json(const nlohmann::json& j, TrainConfig& c);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(Phase phase, int step, const std::string& term, double value);
  [[nodiscard]] int step() const { return step_; }
  [[nodiscard]] const std::string& term() const { return term_; }

 private:
  int step_;
  std::string term_;
};

// ---- primitives ----

/// shadow <- decay * shadow + (1 - decay) * params, evaluated as
/// params + decay * (shadow - params) so a constant sequence is an exact fixed point.
template <typename DS, typename DP>
void ema_update(Eigen::ArrayBase<DS>& shadow, const Eigen::ArrayBase<DP>& params, double decay) {
  using Scalar = typename DS::Scalar;
  detail::require_same_extent(shadow, params, "ema_update");
  shadow = params + Scalar(decay) * (shadow - params);
}

template <typename Scalar>
void ema_update(ParameterSet<Scalar>& shadow, const ParameterSet<Scalar>& params, double decay) {
  if (decay < 0.0 || decay >= 1.0) throw ConfigError("ema decay must be in [0, 1)");
  if (shadow.size() != params.size()) throw ShapeError("ema_update: parameter set size mismatch");
  for (auto& [name, s] : shadow) {
    const auto& p = params.at(name);
    require_shape(s.value.shape(), p.value.shape(), name.c_str());
    auto a = s.value.vec().array();
    ema_update(a, p.value.vec().array(), decay);
  }
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every parameter with requires_grad.
/// First/second moments live in `state` under "<prefix>/m/<name>" and
/// "<prefix>/v/<name>"; `step` is the 1-based update count of this optimizer.
void adam_step(ParameterSet<float>& params, std::map<std::string, TensorF>& state,
               const std::string& prefix, std::int64_t step, const AdamConfig& cfg);

// ---- phases ----

struct StepRecord {
  Phase phase = Phase::gan;
  int step = 0;
  int epoch = 0;
  std::vector<std::pair<std::string, double>> losses;  // in logging order
};

nlohmann::ordered_json to_json(const StepRecord& r);

struct TrainOptions {
  std::ostream* history = nullptr;  // JSON-lines, one record per step
  std::function<void(const StepRecord&)> on_step;
  /// Return once this many steps of the phase are done (simulated interruption).
  std::optional<int> stop_at;
};

/// Runs (or resumes) the GAN phase on `bundle`. Resuming requires the same
/// config apart from the step budget.
void train_gan(const std::vector<PairedSample>& samples, ModelBundle& bundle, const TrainConfig& cfg,
               const TrainOptions& opts = {});

/// Runs (or resumes) the inversion phase; the EMA generator is the frozen G.
void train_inversion(const std::vector<PairedSample>& samples, ModelBundle& bundle,
                     const TrainConfig& cfg, const TrainOptions& opts = {});

/// Completed steps of a phase recorded in the bundle.
int completed_steps(const ModelBundle& bundle, Phase phase);

/// Mean pixel L1 between x and G_ema(I(x), h_x) over the dataset.
double inversion_l1(const std::vector<PairedSample>& samples, const ModelBundle& bundle,
                    bool use_ema = true, int batch = 16);

// ---- latent code set ----

struct LatentEntry {
  std::string sample_id;
  SampleMeta meta;
  std::vector<float> code;  // kLatentDim values
};

struct LatentCodeSet {
  std::vector<LatentEntry> entries;

  [[nodiscard]] std::size_t size() const { return entries.size(); }
  /// Index of `sample_id`, or nullopt.
  [[nodiscard]] std::optional<std::size_t> find(const std::string& sample_id) const;
  /// (1, 256, 1, 1) tensor of entry `index`.
  [[nodiscard]] TensorF code_tensor(std::size_t index) const;

  void save(const std::filesystem::path& path) const;
  static LatentCodeSet load(const std::filesystem::path& path);
};

void to_json(nlohmann::json& j, const LatentCodeSet& s);
void from_json(const nlohmann::json& j, LatentCodeSet& s);

/// Encodes every sample with the EMA encoder.
LatentCodeSet build_latent_set(const std::vector<PairedSample>& samples, const ModelBundle& bundle);

}  // namespace thermosynth
