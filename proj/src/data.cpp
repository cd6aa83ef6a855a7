#include "thermosynth/data.hpp"

#include "thermosynth/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

namespace thermosynth {
namespace fs = std::filesystem;

// ---- configs ----

void PreprocessConfig::validate() const {
  if (heatmap_height < 1 || heatmap_width < 1) throw ConfigError("heatmap extent must be >= 1");
  if (!(thermal_min < thermal_max)) throw ConfigError("thermal range requires t_min < t_max");
  if (blur_kernel < 1 || blur_kernel % 2 == 0) throw ConfigError("blur kernel must be odd and positive");
  if (!(noise_std >= 0)) throw ConfigError("noise std must be >= 0");
  if (!(mask_threshold >= 0 && mask_threshold < 1)) throw ConfigError("mask threshold must be in [0, 1)");
  if (!(frame_rate > 0)) throw ConfigError("frame rate must be positive");
}

void to_json(nlohmann::json& j, const PreprocessConfig& c) {
  j = nlohmann::json{{"heatmap_height", c.heatmap_height},
                     {"heatmap_width", c.heatmap_width},
                     {"rgb_height", c.rgb_height()},
                     {"rgb_width", c.rgb_width()},
                     {"thermal_range", {c.thermal_min, c.thermal_max}},
                     {"rgb_range", {0.0, 255.0}},
                     {"blur_kernel", c.blur_kernel},
                     {"noise_std", c.noise_std},
                     {"noise_seed", c.noise_seed},
                     {"mask_threshold", c.mask_threshold},
                     {"frame_rate", c.frame_rate}};
}

void from_json(const nlohmann::json& j, PreprocessConfig& c) {
  PreprocessConfig d;
  c.heatmap_height = j.value("heatmap_height", d.heatmap_height);
  c.heatmap_width = j.value("heatmap_width", d.heatmap_width);
  if (j.contains("thermal_range")) {
    c.thermal_min = j.at("thermal_range").at(0).get<double>();
    c.thermal_max = j.at("thermal_range").at(1).get<double>();
  }
  c.blur_kernel = j.value("blur_kernel", d.blur_kernel);
  c.noise_std = j.value("noise_std", d.noise_std);
  c.noise_seed = j.value("noise_seed", d.noise_seed);
  c.mask_threshold = j.value("mask_threshold", d.mask_threshold);
  c.frame_rate = j.value("frame_rate", d.frame_rate);
  if (j.contains("rgb_height") && j.at("rgb_height").get<int>() != c.rgb_height()) {
    throw ConfigError("rgb_height must be 8 x heatmap_height");
  }
  if (j.contains("rgb_width") && j.at("rgb_width").get<int>() != c.rgb_width()) {
    throw ConfigError("rgb_width must be 8 x heatmap_width");
  }
  c.validate();
}

void to_json(nlohmann::json& j, const SampleMeta& m) {
  j = nlohmann::json{{"person_id", m.person_id}, {"clothing", m.clothing}, {"environment", m.environment}};
}
void from_json(const nlohmann::json& j, SampleMeta& m) {
  m.person_id = j.value("person_id", 0);
  m.clothing = j.value("clothing", std::string());
  m.environment = j.value("environment", std::string());
}

// ---- image operations ----

Plane pixel_average(const Plane& raw, int target_h, int target_w) {
  const auto h = static_cast<int>(raw.rows());
  const auto w = static_cast<int>(raw.cols());
  if (target_h < 1 || target_w < 1 || h % target_h != 0 || w % target_w != 0) {
    throw DimensionError("pixel_average: " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not an integer multiple of " + std::to_string(target_h) + "x" +
                         std::to_string(target_w));
  }
  const int fh = h / target_h;
  const int fw = w / target_w;
  Plane out(target_h, target_w);
  for (int y = 0; y < target_h; ++y) {
    for (int x = 0; x < target_w; ++x) {
      out(y, x) = static_cast<float>(
          raw.block(y * fh, x * fw, fh, fw).cast<double>().sum() / (static_cast<double>(fh) * fw));
    }
  }
  return out;
}

namespace {

int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

}  // namespace

Plane gaussian_blur(const Plane& raw, int kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("blur kernel must be odd and positive");
  if (kernel_size == 1) return raw;
  const int r = kernel_size / 2;
  const double sigma = 0.3 * ((kernel_size - 1) * 0.5 - 1) + 0.8;
  std::vector<double> k(kernel_size);
  for (int i = -r; i <= r; ++i) k[i + r] = std::exp(-(i * i) / (2 * sigma * sigma));
  const double total = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= total;

  const auto h = static_cast<int>(raw.rows());
  const auto w = static_cast<int>(raw.cols());
  Plane tmp(h, w);
  Plane out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * raw(y, reflect101(x + i, w));
      tmp(y, x) = static_cast<float>(acc);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp(reflect101(y + i, h), x);
      out(y, x) = static_cast<float>(acc);
    }
  }
  return out;
}

Plane normalize_range(const Plane& v, double lo, double hi) {
  if (!(lo < hi)) throw ConfigError("normalize_range requires lo < hi");
  return ((v.cast<double>().max(lo).min(hi) - lo) * (2.0 / (hi - lo)) - 1.0).cast<float>();
}

Plane denormalize_range(const Plane& v, double lo, double hi) {
  if (!(lo < hi)) throw ConfigError("denormalize_range requires lo < hi");
  return ((v.cast<double>() + 1.0) * ((hi - lo) / 2.0) + lo).cast<float>();
}

RgbImage preprocess_rgb(const TensorF& raw, int target_h, int target_w) {
  const Shape s = raw.shape();
  if (s.n != 1 || s.c != 3) throw DimensionError("preprocess_rgb: expected (1,3,H,W), got " + s.str());
  RgbImage out{TensorF(Shape{1, 3, target_h, target_w})};
  for (int c = 0; c < 3; ++c) {
    Eigen::Map<const Plane> channel(raw.data() + c * s.plane(), s.h, s.w);
    Plane p = normalize_range(pixel_average(channel, target_h, target_w), 0.0, 255.0);
    std::copy(p.data(), p.data() + p.size(), out.values.data() + c * target_h * target_w);
  }
  return out;
}

Heatmap preprocess_thermal(const Plane& raw, int blur_kernel, double noise_std, int target_h,
                           int target_w, double t_min, double t_max, std::uint64_t noise_seed) {
  if (!(t_min < t_max)) throw ConfigError("thermal range requires t_min < t_max");
  if (!(noise_std >= 0)) throw ConfigError("noise std must be >= 0");
  if (!raw.allFinite()) throw DimensionError("thermal frame contains non-finite values");
  Plane v = gaussian_blur(raw, blur_kernel);
  if (noise_std > 0) {
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> normal(0.0, noise_std);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] += static_cast<float>(normal(rng));
  }
  Plane p = normalize_range(pixel_average(v, target_h, target_w), t_min, t_max);
  Heatmap out{TensorF(Shape{1, 1, target_h, target_w})};
  std::copy(p.data(), p.data() + p.size(), out.values.data());
  return out;
}

Heatmap preprocess_thermal(const Plane& raw, const PreprocessConfig& cfg, std::uint64_t noise_seed) {
  return preprocess_thermal(raw, cfg.blur_kernel, cfg.noise_std, cfg.heatmap_height,
                            cfg.heatmap_width, cfg.thermal_min, cfg.thermal_max, noise_seed);
}

Plane resize_mask(const Plane& mask, int heatmap_h, int heatmap_w, double threshold) {
  if (mask.rows() != 8 * heatmap_h || mask.cols() != 8 * heatmap_w) {
    throw DimensionError("resize_mask: mask " + std::to_string(mask.rows()) + "x" +
                         std::to_string(mask.cols()) + " is not 8x the heatmap extent");
  }
  Plane means = pixel_average(mask, heatmap_h, heatmap_w);
  return (means.cast<double>() > threshold).cast<float>();
}

// ---- raw tensor files ----

void write_f32(const fs::path& path, const float* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      auto bits = std::bit_cast<std::uint32_t>(data[i]);
      bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<float> read_f32(const fs::path& path, std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != expected_count * sizeof(float)) {
    throw std::runtime_error(path.string() + ": expected " + std::to_string(expected_count * 4) +
                             " bytes, found " + std::to_string(bytes));
  }
  in.seekg(0);
  std::vector<float> v(expected_count);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
  if constexpr (std::endian::native != std::endian::little) {
    for (float& f : v) {
      auto bits = std::bit_cast<std::uint32_t>(f);
      bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
      f = std::bit_cast<float>(bits);
    }
  }
  return v;
}

// ---- manifest ----

void to_json(nlohmann::json& j, const TensorRef& r) { j = nlohmann::json{{"path", r.path}, {"shape", r.shape}}; }
void from_json(const nlohmann::json& j, TensorRef& r) {
  r.path = j.at("path").get<std::string>();
  r.shape = j.at("shape").get<std::vector<int>>();
}

namespace {

constexpr const char* kDatasetFormat = "thermosynth-dataset";
constexpr int kDatasetVersion = 1;

std::size_t element_count(const TensorRef& r) {
  std::size_t n = 1;
  for (int d : r.shape) n *= static_cast<std::size_t>(d);
  return n;
}

void require_ref_shape(const ManifestEntry& e, const TensorRef& r, std::vector<int> want, const char* what) {
  if (r.shape != want) {
    std::string w;
    for (int d : want) w += std::to_string(d) + " ";
    throw DatasetError(e.sample_id, std::string(what) + " shape mismatch, expected [" + w + "]");
  }
}

}  // namespace

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json je{{"sample_id", e.sample_id}, {"rgb", e.rgb}, {"thermal", e.thermal}, {"meta", e.meta}};
    if (e.mask) je["mask"] = *e.mask;
    entries.push_back(std::move(je));
  }
  j = nlohmann::json{{"format", kDatasetFormat},
                     {"version", kDatasetVersion},
                     {"stage", m.stage == DatasetStage::raw ? "raw" : "preprocessed"},
                     {"config", m.config},
                     {"entries", std::move(entries)}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  if (j.value("format", std::string()) != kDatasetFormat) throw DatasetError("", "not a dataset manifest");
  if (j.value("version", 0) != kDatasetVersion) throw DatasetError("", "unsupported manifest version");
  const auto stage = j.at("stage").get<std::string>();
  if (stage == "raw") {
    m.stage = DatasetStage::raw;
  } else if (stage == "preprocessed") {
    m.stage = DatasetStage::preprocessed;
  } else {
    throw DatasetError("", "unknown stage '" + stage + "'");
  }
  m.config = j.at("config").get<PreprocessConfig>();
  m.entries.clear();
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.sample_id = je.at("sample_id").get<std::string>();
    e.rgb = je.at("rgb").get<TensorRef>();
    e.thermal = je.at("thermal").get<TensorRef>();
    if (je.contains("mask")) e.mask = je.at("mask").get<TensorRef>();
    if (je.contains("meta")) e.meta = je.at("meta").get<SampleMeta>();
    m.entries.push_back(std::move(e));
  }
}

DatasetManifest DatasetManifest::load(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DatasetError("", "cannot open " + (dir / "manifest.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("", std::string("manifest parse error: ") + e.what());
  }
  auto m = j.get<DatasetManifest>();
  m.root = dir;
  return m;
}

void DatasetManifest::save(const fs::path& dir) const {
  fs::create_directories(dir);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << nlohmann::json(*this).dump(2) << "\n";
}

void DatasetManifest::validate() const {
  config.validate();
  if (entries.empty()) throw DatasetError("", "manifest has no entries");
  const int hx = config.rgb_height();
  const int wx = config.rgb_width();
  for (const auto& e : entries) {
    if (e.rgb.shape.size() != 3 || e.rgb.shape[2] != 3) throw DatasetError(e.sample_id, "rgb must be [H, W, 3]");
    if (e.thermal.shape.size() != 2) throw DatasetError(e.sample_id, "thermal must be [H, W]");
    if (stage == DatasetStage::preprocessed) {
      require_ref_shape(e, e.rgb, {hx, wx, 3}, "rgb");
      require_ref_shape(e, e.thermal, {config.heatmap_height, config.heatmap_width}, "thermal");
    } else {
      if (e.rgb.shape[0] % hx != 0 || e.rgb.shape[1] % wx != 0) {
        throw DatasetError(e.sample_id, "raw rgb extent is not a multiple of the model extent");
      }
      if (e.thermal.shape[0] % config.heatmap_height != 0 || e.thermal.shape[1] % config.heatmap_width != 0) {
        throw DatasetError(e.sample_id, "raw thermal extent is not a multiple of the heatmap extent");
      }
    }
    if (e.mask) require_ref_shape(e, *e.mask, {hx, wx}, "mask");
    for (const TensorRef* r : {&e.rgb, &e.thermal, e.mask ? &*e.mask : nullptr}) {
      if (!r) continue;
      const fs::path p = root / r->path;
      if (!fs::exists(p)) throw DatasetError(e.sample_id, "missing file " + p.string());
      if (fs::file_size(p) != element_count(*r) * sizeof(float)) {
        throw DatasetError(e.sample_id, "file size mismatch for " + p.string());
      }
    }
  }
}

namespace {

TensorF hwc_to_chw(const std::vector<float>& hwc, int h, int w) {
  TensorF out(Shape{1, 3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out(0, c, y, x) = hwc[(static_cast<std::size_t>(y) * w + x) * 3 + c];
  return out;
}

std::vector<float> chw_to_hwc(const TensorF& t) {
  const Shape s = t.shape();
  std::vector<float> out(static_cast<std::size_t>(s.h) * s.w * 3);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < 3; ++c) out[(static_cast<std::size_t>(y) * s.w + x) * 3 + c] = t(0, c, y, x);
  return out;
}

Plane read_plane(const fs::path& p, const TensorRef& r) {
  auto v = read_f32(p, element_count(r));
  return Eigen::Map<Plane>(v.data(), r.shape[0], r.shape[1]);
}

}  // namespace

std::vector<PairedSample> load_dataset(const DatasetManifest& manifest) {
  manifest.config.validate();
  const auto& cfg = manifest.config;
  std::vector<PairedSample> out;
  out.reserve(manifest.entries.size());
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    try {
      PairedSample s;
      s.sample_id = e.sample_id;
      s.meta = e.meta;
      auto rgb = read_f32(manifest.root / e.rgb.path, element_count(e.rgb));
      TensorF rgb_chw = hwc_to_chw(rgb, e.rgb.shape.at(0), e.rgb.shape.at(1));
      Plane thermal = read_plane(manifest.root / e.thermal.path, e.thermal);
      if (manifest.stage == DatasetStage::raw) {
        s.rgb = preprocess_rgb(rgb_chw, cfg.rgb_height(), cfg.rgb_width());
        s.heatmap = preprocess_thermal(thermal, cfg, derive_seed(cfg.noise_seed, {i}));
      } else {
        if (rgb_chw.shape() != Shape{1, 3, cfg.rgb_height(), cfg.rgb_width()} ||
            thermal.rows() != cfg.heatmap_height || thermal.cols() != cfg.heatmap_width) {
          throw DimensionError("preprocessed tensors do not match the config extent");
        }
        if ((rgb_chw.vec().array().abs() > 1.0f).any() || (thermal.abs() > 1.0f).any()) {
          throw DimensionError("preprocessed values outside [-1, 1]");
        }
        s.rgb.values = std::move(rgb_chw);
        s.heatmap.values = TensorF(Shape{1, 1, cfg.heatmap_height, cfg.heatmap_width});
        std::copy(thermal.data(), thermal.data() + thermal.size(), s.heatmap.values.data());
      }
      if (e.mask) {
        s.mask = read_plane(manifest.root / e.mask->path, *e.mask);
        if (((*s.mask != 0.0f) && (*s.mask != 1.0f)).any()) throw DimensionError("mask is not binary");
        s.mask_reduced = resize_mask(*s.mask, cfg.heatmap_height, cfg.heatmap_width, cfg.mask_threshold);
      } else {
        s.mask_reduced = Plane::Ones(cfg.heatmap_height, cfg.heatmap_width);
      }
      out.push_back(std::move(s));
    } catch (const DatasetError&) {
      throw;
    } catch (const std::exception& ex) {
      throw DatasetError(e.sample_id, ex.what());
    }
  }
  return out;
}

DatasetManifest write_preprocessed(const DatasetManifest& manifest, const fs::path& out_dir) {
  auto samples = load_dataset(manifest);
  DatasetManifest m;
  m.stage = DatasetStage::preprocessed;
  m.config = manifest.config;
  m.root = out_dir;
  fs::create_directories(out_dir / "rgb");
  fs::create_directories(out_dir / "thermal");
  const int hx = m.config.rgb_height();
  const int wx = m.config.rgb_width();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    ManifestEntry e;
    e.sample_id = s.sample_id;
    e.meta = s.meta;
    e.rgb = {"rgb/" + s.sample_id + ".f32", {hx, wx, 3}};
    e.thermal = {"thermal/" + s.sample_id + ".f32", {m.config.heatmap_height, m.config.heatmap_width}};
    auto hwc = chw_to_hwc(s.rgb.values);
    write_f32(out_dir / e.rgb.path, hwc.data(), hwc.size());
    write_f32(out_dir / e.thermal.path, s.heatmap.values.data(), s.heatmap.values.size());
    if (s.mask) {
      fs::create_directories(out_dir / "mask");
      e.mask = TensorRef{"mask/" + s.sample_id + ".f32", {hx, wx}};
      write_f32(out_dir / e.mask->path, s.mask->data(), static_cast<std::size_t>(s.mask->size()));
    }
    m.entries.push_back(std::move(e));
  }
  m.save(out_dir);
  return m;
}

// ---- minibatches ----

Batch make_batch(const std::vector<PairedSample>& samples, const std::vector<int>& indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
  const Shape rs = samples.at(indices[0]).rgb.values.shape();
  const Shape hs = samples.at(indices[0]).heatmap.values.shape();
  const int b = static_cast<int>(indices.size());
  Batch batch{indices, TensorF(Shape{b, 3, rs.h, rs.w}), TensorF(Shape{b, 1, hs.h, hs.w}),
              TensorF(Shape{b, 1, hs.h, hs.w})};
  for (int k = 0; k < b; ++k) {
    const auto& s = samples.at(indices[k]);
    batch.rgb.vec().segment(k * rs.sample_size(), rs.sample_size()) = s.rgb.values.vec();
    batch.heatmap.vec().segment(k * hs.sample_size(), hs.sample_size()) = s.heatmap.values.vec();
    batch.mask_reduced.vec().segment(k * hs.sample_size(), hs.sample_size()) =
        Eigen::Map<const Eigen::VectorXf>(s.mask_reduced.data(), s.mask_reduced.size());
  }
  return batch;
}

MinibatchLoader::MinibatchLoader(const std::vector<PairedSample>& samples, int batch_size,
                                 std::uint64_t seed)
    : samples_(&samples), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (samples.empty()) throw ConfigError("dataset is empty");
}

int MinibatchLoader::batches_per_epoch() const {
  const int n = static_cast<int>(samples_->size());
  return (n + batch_size_ - 1) / batch_size_;
}

std::vector<std::vector<int>> MinibatchLoader::epoch_plan(int epoch) const {
  std::vector<int> order(samples_->size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed_, {0x5348554646ULL, static_cast<std::uint64_t>(epoch)}));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> plan;
  for (std::size_t first = 0; first < order.size(); first += batch_size_) {
    const std::size_t last = std::min(order.size(), first + batch_size_);
    plan.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(first),
                      order.begin() + static_cast<std::ptrdiff_t>(last));
  }
  return plan;
}

std::vector<Batch> MinibatchLoader::epoch(int epoch) const {
  std::vector<Batch> out;
  for (const auto& idx : epoch_plan(epoch)) out.push_back(make_batch(*samples_, idx));
  return out;
}

}  // namespace thermosynth
