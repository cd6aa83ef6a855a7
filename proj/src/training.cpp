#include "thermosynth/training.hpp"

#include "thermosynth/ops.hpp"
#include "thermosynth/random.hpp"

#include <cmath>
#include <fstream>
#include <ostream>

namespace thermosynth {

std::string to_string(Phase p) { return p == Phase::gan ? "gan" : "inversion"; }

Phase phase_from_string(const std::string& s) {
  if (s == "gan") return Phase::gan;
  if (s == "inversion") return Phase::inversion;
  throw ConfigError("unknown training phase '" + s + "' (expected gan|inversion)");
}

TrainConfig TrainConfig::defaults(Phase phase) {
  TrainConfig c;
  c.phase = phase;
  if (phase == Phase::inversion) {
    c.epochs = 50;
    c.ema_decay = 0.99;
  }
  return c;
}

void TrainConfig::validate() const {
  if (!(lr_d > 0) || !(lr_g > 0)) throw ConfigError("learning rates must be > 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("adam betas must be in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be > 0");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (epochs < 1 && steps < 1) throw ConfigError("need epochs >= 1 or steps >= 1");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (update_ratio < 1) throw ConfigError("update_ratio must be >= 1");
  if (ema_decay < 0 || ema_decay >= 1) throw ConfigError("ema_decay must be in [0, 1)");
  if (r1_interval < 1) throw ConfigError("r1_interval must be >= 1");
  if (!(r1_delta > 0)) throw ConfigError("r1_delta must be > 0");
  loss.validate();
}

int TrainConfig::total_steps(int batches_per_epoch) const {
  return steps > 0 ? steps : epochs * batches_per_epoch;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"phase", to_string(c.phase)},
                     {"lr_d", c.lr_d},
                     {"lr_g", c.lr_g},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"batch", c.batch},
                     {"epochs", c.epochs},
                     {"steps", c.steps},
                     {"update_ratio", c.update_ratio},
                     {"ema_decay", c.ema_decay},
                     {"seed", c.seed},
                     {"train_discriminator", c.train_discriminator},
                     {"r1_interval", c.r1_interval},
                     {"r1_delta", c.r1_delta},
                     {"loss", c.loss}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const char* kKeys[] = {"phase", "lr_d", "lr_g", "beta1", "beta2", "adam_eps",
                                "batch", "epochs", "steps", "update_ratio", "ema_decay",
                                "seed", "train_discriminator", "r1_interval", "r1_delta", "loss"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys)) {
      throw ConfigError("train config: unknown key '" + key + "'");
    }
  }
  const TrainConfig d = TrainConfig::defaults(phase_from_string(j.value("phase", std::string("gan"))));
  c.phase = d.phase;
  c.lr_d = j.value("lr_d", d.lr_d);
  c.lr_g = j.value("lr_g", d.lr_g);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.batch = j.value("batch", d.batch);
  c.epochs = j.value("epochs", d.epochs);
  c.steps = j.value("steps", d.steps);
  c.update_ratio = j.value("update_ratio", d.update_ratio);
  c.ema_decay = j.value("ema_decay", d.ema_decay);
  c.seed = j.value("seed", d.seed);
  c.train_discriminator = j.value("train_discriminator", d.train_discriminator);
  c.r1_interval = j.value("r1_interval", d.r1_interval);
  c.r1_delta = j.value("r1_delta", d.r1_delta);
  c.loss = j.contains("loss") ? j.at("loss").get<LossConfig>() : d.loss;
  c.validate();
}

TrainingDiverged::TrainingDiverged(Phase phase, int step, const std::string& term, double value)
    : std::runtime_error(to_string(phase) + " training diverged at step " + std::to_string(step) + ": " +
                         term + " = " + std::to_string(value)),
      step_(step),
      term_(term) {}

void adam_step(ParameterSet<float>& params, std::map<std::string, TensorF>& state,
               const std::string& prefix, std::int64_t step, const AdamConfig& cfg) {
  if (step < 1) throw std::invalid_argument("adam_step: step is 1-based");
  const float b1 = static_cast<float>(cfg.beta1);
  const float b2 = static_cast<float>(cfg.beta2);
  const float c1 = static_cast<float>(1.0 - std::pow(cfg.beta1, static_cast<double>(step)));
  const float c2 = static_cast<float>(1.0 - std::pow(cfg.beta2, static_cast<double>(step)));
  const float lr = static_cast<float>(cfg.lr);
  const float eps = static_cast<float>(cfg.eps);
  for (auto& [name, p] : params) {
    if (!p.requires_grad) continue;
    auto& m = state.try_emplace(prefix + "/m/" + name, p.value.shape()).first->second;
    auto& v = state.try_emplace(prefix + "/v/" + name, p.value.shape()).first->second;
    require_shape(m.shape(), p.value.shape(), name.c_str());
    const auto g = p.grad.vec().array();
    m.vec().array() = b1 * m.vec().array() + (1.0f - b1) * g;
    v.vec().array() = b2 * v.vec().array() + (1.0f - b2) * g.square();
    p.value.vec().array() -= lr * (m.vec().array() / c1) / ((v.vec().array() / c2).sqrt() + eps);
  }
}

nlohmann::ordered_json to_json(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["phase"] = to_string(r.phase);
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  for (const auto& [name, value] : r.losses) j[name] = value;
  return j;
}

namespace {

using V = Tape<float>::Var;

const char* step_key(Phase p) { return p == Phase::gan ? "gan_step" : "inversion_step"; }

int meta_int(const nlohmann::json& meta, const std::string& key) {
  return meta.contains(key) ? meta.at(key).get<int>() : 0;
}

/// Update counter of one optimizer; stored in meta so resumed runs keep bias correction.
std::int64_t next_optimizer_step(ModelBundle& b, const std::string& name) {
  auto& counts = b.meta["optimizer_steps"];
  const std::int64_t n = counts.contains(name) ? counts.at(name).get<std::int64_t>() + 1 : 1;
  counts[name] = n;
  return n;
}

/// The stored config of an interrupted phase must match apart from its budget.
void check_resume(ModelBundle& b, const TrainConfig& cfg) {
  const std::string key = to_string(cfg.phase) + "_config";
  nlohmann::json now = cfg;
  if (meta_int(b.meta, step_key(cfg.phase)) > 0 && b.meta.contains(key)) {
    nlohmann::json before = b.meta.at(key);
    for (auto* j : {&before, &now}) {
      j->erase("steps");
      j->erase("epochs");
    }
    if (before != now) throw ConfigError("cannot resume " + to_string(cfg.phase) + " phase with a different config");
  }
  b.meta[key] = cfg;
}

class Recorder {
 public:
  Recorder(Phase phase, int step, int epoch) { rec_.phase = phase, rec_.step = step, rec_.epoch = epoch; }

  void add(const std::string& name, double value) {
    if (!std::isfinite(value)) throw TrainingDiverged(rec_.phase, rec_.step, name, value);
    rec_.losses.emplace_back(name, value);
  }

  void emit(const TrainOptions& opts) const {
    if (opts.history) *opts.history << to_json(rec_).dump() << '\n' << std::flush;
    if (opts.on_step) opts.on_step(rec_);
  }

 private:
  StepRecord rec_;
};

/// Per-batch tensors plus the epoch plan cache shared by both phases.
class BatchSource {
 public:
  BatchSource(const std::vector<PairedSample>& samples, const TrainConfig& cfg)
      : samples_(samples),
        loader_(samples, cfg.batch, derive_seed(cfg.seed, {static_cast<std::uint64_t>(cfg.phase), 0x10ad})) {}

  [[nodiscard]] int batches_per_epoch() const { return loader_.batches_per_epoch(); }

  Batch at(int step) {
    const int bpe = loader_.batches_per_epoch();
    const int epoch = step / bpe;
    if (epoch != cached_epoch_) {
      plan_ = loader_.epoch_plan(epoch);
      cached_epoch_ = epoch;
    }
    return make_batch(samples_, plan_[static_cast<std::size_t>(step % bpe)]);
  }

 private:
  const std::vector<PairedSample>& samples_;
  MinibatchLoader loader_;
  int cached_epoch_ = -1;
  std::vector<std::vector<int>> plan_;
};

/// One discriminator update on (real, fake) pairs sharing conditioning heatmaps.
void discriminator_step(ModelBundle& b, const Batch& batch, const TensorF& fake, const TrainConfig& cfg,
                        const std::string& opt_name, Recorder& rec) {
  auto& d = b.discriminator;
  d.params().set_requires_grad(true);
  d.params().zero_grad();
  const float eps = static_cast<float>(cfg.loss.epsilon);
  const float lrec = static_cast<float>(cfg.loss.lambda_rec);

  Tape<float> t;
  auto real = d.forward(t, t.constant(batch.rgb));
  auto gen = d.forward(t, t.constant(fake));
  V adv = loss_ops::discriminator_hinge(t, real.score, gen.score);
  V rec_real = loss_ops::masked_hinge_l1(t, real.heatmap, batch.heatmap, batch.mask_reduced, eps);
  V rec_fake = loss_ops::masked_hinge_l1(t, gen.heatmap, batch.heatmap, batch.mask_reduced, eps);
  V total = ops::add(t, adv, ops::scale(t, ops::add(t, rec_real, rec_fake), lrec));
  t.backward(total);

  const std::int64_t n = next_optimizer_step(b, opt_name);
  double r1 = 0.0;
  if ((n - 1) % cfg.r1_interval == 0 && cfg.loss.lambda_gp > 0) {
    const Scorer<float> scorer = [&d](Tape<float>& tape, V x) { return d.forward(tape, x).score; };
    const float lambda = static_cast<float>(cfg.loss.lambda_gp * cfg.r1_interval);
    r1 = r1_penalty_backward(scorer, batch.rgb, lambda, static_cast<float>(cfg.r1_delta)) / cfg.r1_interval;
  }

  rec.add("d_adv", t.value(adv)[0]);
  rec.add("d_rec_real", t.value(rec_real)[0]);
  rec.add("d_rec_fake", t.value(rec_fake)[0]);
  rec.add("d_r1", r1);
  adam_step(d.params(), b.state, "adam/" + opt_name, n, {cfg.lr_d, cfg.beta1, cfg.beta2, cfg.adam_eps});
}

void gan_step(ModelBundle& b, const Batch& batch, const TrainConfig& cfg, int step, Recorder& rec) {
  std::mt19937_64 rng(derive_seed(cfg.seed, {0x6761, static_cast<std::uint64_t>(step)}));
  const int n = batch.rgb.shape().n;

  for (int k = 0; k < cfg.update_ratio; ++k) {
    const TensorF z = sample_latents<float>(n, rng);
    const TensorF fake = b.generator(z, batch.heatmap);
    discriminator_step(b, batch, fake, cfg, "gan/discriminator", rec);
  }

  auto& g = b.generator;
  g.params().set_requires_grad(true);
  g.params().zero_grad();
  b.discriminator.params().set_requires_grad(false);
  Tape<float> t;
  V x = g.forward(t, t.constant(sample_latents<float>(n, rng)), t.constant(batch.heatmap));
  auto dv = b.discriminator.forward(t, x);
  V adv = loss_ops::generator_adversarial(t, dv.score);
  V hrec = loss_ops::masked_hinge_l1(t, dv.heatmap, batch.heatmap, batch.mask_reduced,
                                     static_cast<float>(cfg.loss.epsilon));
  V total = ops::add(t, adv, ops::scale(t, hrec, static_cast<float>(cfg.loss.lambda_rec)));
  t.backward(total);
  b.discriminator.params().set_requires_grad(true);

  rec.add("g_adv", t.value(adv)[0]);
  rec.add("g_rec", t.value(hrec)[0]);
  adam_step(g.params(), b.state, "adam/gan/generator", next_optimizer_step(b, "gan/generator"),
            {cfg.lr_g, cfg.beta1, cfg.beta2, cfg.adam_eps});
  ema_update(b.generator_ema.params(), g.params(), cfg.ema_decay);
}

void inversion_step(ModelBundle& b, const Batch& batch, const TrainConfig& cfg, Recorder& rec) {
  const Generator<float>& frozen = b.generator_ema;
  if (cfg.train_discriminator) {
    for (int k = 0; k < cfg.update_ratio; ++k) {
      const TensorF fake = frozen(b.encoder(batch.rgb), batch.heatmap);
      discriminator_step(b, batch, fake, cfg, "inversion/discriminator", rec);
    }
  }

  auto& enc = b.encoder;
  enc.params().set_requires_grad(true);
  enc.params().zero_grad();
  b.discriminator.params().set_requires_grad(false);
  Tape<float> t;
  V code = enc.forward(t, t.constant(batch.rgb));
  // Frozen G binds read-only: gradients reach the code, never G's parameters.
  V x_hat = frozen.forward(t, code, t.constant(batch.heatmap));
  V l1 = loss_ops::l1_reconstruction(t, x_hat, batch.rgb);
  V total = ops::scale(t, l1, static_cast<float>(cfg.loss.lambda_inv));
  V fm{};
  if (cfg.loss.feature_matching) {
    const TensorF real_features = b.discriminator(batch.rgb).features;
    fm = loss_ops::l1_reconstruction(t, b.discriminator.forward(t, x_hat).features, real_features);
    total = ops::add(t, total, ops::scale(t, fm, static_cast<float>(cfg.loss.lambda_fm)));
  }
  t.backward(total);
  b.discriminator.params().set_requires_grad(true);

  rec.add("inv_l1", t.value(l1)[0]);
  if (cfg.loss.feature_matching) rec.add("inv_fm", t.value(fm)[0]);
  adam_step(enc.params(), b.state, "adam/inversion/encoder", next_optimizer_step(b, "inversion/encoder"),
            {cfg.lr_g, cfg.beta1, cfg.beta2, cfg.adam_eps});
  ema_update(b.encoder_ema.params(), enc.params(), cfg.ema_decay);
}

template <typename StepFn>
void run_phase(const std::vector<PairedSample>& samples, ModelBundle& b, const TrainConfig& cfg,
               const TrainOptions& opts, StepFn&& fn) {
  cfg.validate();
  if (samples.empty()) throw ConfigError("training dataset is empty");
  const Shape expected = b.config.rgb_shape();
  if (samples.front().rgb.values.shape() != expected) {
    throw DimensionError("dataset images " + samples.front().rgb.values.shape().str() +
                         " do not match model " + expected.str());
  }
  check_resume(b, cfg);
  BatchSource source(samples, cfg);
  const int bpe = source.batches_per_epoch();
  const int total = cfg.total_steps(bpe);
  const int stop = opts.stop_at ? std::min(*opts.stop_at, total) : total;
  for (int step = meta_int(b.meta, step_key(cfg.phase)); step < stop; ++step) {
    Recorder rec(cfg.phase, step, step / bpe);
    fn(source.at(step), step, rec);
    b.meta[step_key(cfg.phase)] = step + 1;
    rec.emit(opts);
  }
}

}  // namespace

int completed_steps(const ModelBundle& bundle, Phase phase) { return meta_int(bundle.meta, step_key(phase)); }

void train_gan(const std::vector<PairedSample>& samples, ModelBundle& bundle, const TrainConfig& cfg,
               const TrainOptions& opts) {
  if (cfg.phase != Phase::gan) throw ConfigError("train_gan needs a gan-phase config");
  run_phase(samples, bundle, cfg, opts,
            [&](const Batch& batch, int step, Recorder& rec) { gan_step(bundle, batch, cfg, step, rec); });
}

void train_inversion(const std::vector<PairedSample>& samples, ModelBundle& bundle, const TrainConfig& cfg,
                     const TrainOptions& opts) {
  if (cfg.phase != Phase::inversion) throw ConfigError("train_inversion needs an inversion-phase config");
  if (completed_steps(bundle, Phase::gan) == 0) {
    throw ConfigError("bundle has no trained generator; run the GAN phase first");
  }
  run_phase(samples, bundle, cfg, opts,
            [&](const Batch& batch, int, Recorder& rec) { inversion_step(bundle, batch, cfg, rec); });
}

double inversion_l1(const std::vector<PairedSample>& samples, const ModelBundle& bundle, bool use_ema, int batch) {
  if (samples.empty()) throw ConfigError("dataset is empty");
  const Encoder<float>& enc = use_ema ? bundle.encoder_ema : bundle.encoder;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t first = 0; first < samples.size(); first += static_cast<std::size_t>(batch)) {
    std::vector<int> idx;
    for (std::size_t i = first; i < std::min(samples.size(), first + batch); ++i) idx.push_back(static_cast<int>(i));
    const Batch b = make_batch(samples, idx);
    const TensorF x_hat = bundle.generator_ema(enc(b.rgb), b.heatmap);
    sum += (x_hat.vec() - b.rgb.vec()).cwiseAbs().template cast<double>().sum();
    count += x_hat.size();
  }
  return sum / static_cast<double>(count);
}

// ---- latent code set ----

std::optional<std::size_t> LatentCodeSet::find(const std::string& sample_id) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].sample_id == sample_id) return i;
  }
  return std::nullopt;
}

TensorF LatentCodeSet::code_tensor(std::size_t index) const {
  const auto& c = entries.at(index).code;
  TensorF t(Shape{1, kLatentDim, 1, 1});
  std::copy(c.begin(), c.end(), t.data());
  return t;
}

void to_json(nlohmann::json& j, const LatentCodeSet& s) {
  nlohmann::json codes = nlohmann::json::array();
  for (const auto& e : s.entries) codes.push_back({{"id", e.sample_id}, {"meta", e.meta}, {"code", e.code}});
  j = nlohmann::json{{"format", "thermosynth-latents"}, {"version", 1}, {"latent_dim", kLatentDim}, {"codes", codes}};
}

void from_json(const nlohmann::json& j, LatentCodeSet& s) {
  if (j.value("format", std::string()) != "thermosynth-latents") throw DatasetError("", "not a latent code file");
  if (j.value("version", 0) != 1) throw DatasetError("", "unsupported latent code file version");
  if (j.value("latent_dim", 0) != kLatentDim) throw DimensionError("latent code file has wrong latent_dim");
  s.entries.clear();
  for (const auto& c : j.at("codes")) {
    LatentEntry e{c.at("id").get<std::string>(), c.at("meta").get<SampleMeta>(), c.at("code").get<std::vector<float>>()};
    if (static_cast<int>(e.code.size()) != kLatentDim) throw DimensionError("latent code " + e.sample_id + " has wrong length");
    s.entries.push_back(std::move(e));
  }
}

void LatentCodeSet::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DatasetError("", "cannot write " + path.string());
  out << nlohmann::json(*this).dump() << '\n';
}

LatentCodeSet LatentCodeSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("", "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in).get<LatentCodeSet>();
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("", path.string() + ": " + e.what());
  }
}

LatentCodeSet build_latent_set(const std::vector<PairedSample>& samples, const ModelBundle& bundle) {
  if (completed_steps(bundle, Phase::inversion) == 0) {
    throw ConfigError("bundle has no trained inversion encoder; run the inversion phase first");
  }
  LatentCodeSet set;
  for (const auto& s : samples) {
    const TensorF code = bundle.encoder_ema(s.rgb.values);
    set.entries.push_back({s.sample_id, s.meta, std::vector<float>(code.data(), code.data() + code.size())});
  }
  return set;
}

}  // namespace thermosynth
