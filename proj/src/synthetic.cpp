#include "thermosynth/data.hpp"

#include "thermosynth/random.hpp"

#include <array>
#include <cmath>
#include <algorithm>
#include <cstdio>
#include <map>

namespace thermosynth {
namespace fs = std::filesystem;

namespace {

constexpr double kHeadTemp = 35.0;
constexpr double kTorsoTemp = 32.5;

const std::map<std::string, std::array<float, 3>>& clothing_colors() {
  static const std::map<std::string, std::array<float, 3>> colors{
      {"red", {200.f, 40.f, 45.f}}, {"green", {40.f, 160.f, 70.f}}, {"navy", {35.f, 45.f, 120.f}}};
  return colors;
}

const std::map<std::string, std::array<float, 3>>& environment_colors() {
  static const std::map<std::string, std::array<float, 3>> colors{
      {"summer", {215.f, 195.f, 150.f}}, {"winter", {120.f, 150.f, 190.f}}};
  return colors;
}

constexpr std::array<std::array<float, 3>, 2> kSkin{{{235.f, 195.f, 165.f}, {140.f, 95.f, 65.f}}};

}  // namespace

const std::vector<std::string>& clothing_palette() {
  static const std::vector<std::string> names{"red", "green", "navy"};
  return names;
}

const std::vector<std::string>& environment_palette() {
  static const std::vector<std::string> names{"summer", "winter"};
  return names;
}

std::array<float, 3> environment_color(const std::string& environment) {
  return environment_colors().at(environment);
}

Plane render_silhouette(const PersonPose& pose, int h, int w, Plane* part) {
  Plane cover = Plane::Zero(h, w);
  if (part) *part = Plane::Zero(h, w);
  // Units: frame height = 1; pixels are square.
  const double aspect = static_cast<double>(w) / h;
  const double cx = pose.center_x * aspect;
  const double r = pose.head_radius;
  const double sw = pose.shoulder_half_width * aspect;
  const double shoulder_y = pose.head_y + 1.1 * r;
  const double round = 0.6 * r;
  for (int y = 0; y < h; ++y) {
    const double py = (y + 0.5) / h;
    for (int x = 0; x < w; ++x) {
      const double px = (x + 0.5) / h;
      const double dx = px - cx;
      const double dy = py - pose.head_y;
      int label = 0;
      if (dx * dx + dy * dy <= r * r) {
        label = 1;
      } else if (py >= pose.head_y && py <= shoulder_y + round && std::abs(dx) <= 0.4 * r) {
        label = 2;  // neck
      } else if (py >= shoulder_y) {
        double half = sw;
        if (py < shoulder_y + round) {
          const double t = (shoulder_y + round - py) / round;
          half = sw * std::sqrt(std::max(0.0, 1.0 - t * t));
        }
        if (std::abs(dx) <= half) label = 2;
      }
      if (label == 0 && pose.arm != 0) {
        const double ax = cx + pose.arm * (sw - 0.3 * r);
        if (std::abs(px - ax) <= 0.3 * r && py >= pose.head_y - 1.3 * r && py <= shoulder_y + 0.5 * r) {
          label = 2;
        }
      }
      if (label != 0) {
        cover(y, x) = 1.0f;
        if (part) (*part)(y, x) = static_cast<float>(label);
      }
    }
  }
  return cover;
}

PersonPose random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PersonPose p;
  p.center_x = 0.22 + 0.56 * u(rng);
  p.head_y = 0.25 + 0.2 * u(rng);
  p.head_radius = 0.09 + 0.04 * u(rng);
  p.shoulder_half_width = 0.13 + 0.07 * u(rng);
  const double a = u(rng);
  p.arm = a < 0.2 ? -1 : (a > 0.8 ? 1 : 0);
  return p;
}

Plane render_thermal(const PersonPose& pose, int h, int w, double ambient_c) {
  Plane part;
  render_silhouette(pose, h, w, &part);
  Plane t(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float label = part(y, x);
      const double wall = ambient_c + 0.6 * (static_cast<double>(y) / h - 0.5);
      t(y, x) = static_cast<float>(label == 1.0f ? kHeadTemp : (label == 2.0f ? kTorsoTemp : wall));
    }
  }
  return t;
}

void SyntheticConfig::validate() const {
  if (count < 1) throw ConfigError("synthetic dataset count must be >= 1");
  if (heatmap_height < 1 || heatmap_width < 1) throw ConfigError("heatmap extent must be >= 1");
  if (thermal_scale < 1 || rgb_scale < 1) throw ConfigError("scales must be >= 1");
  preprocess.validate();
}

void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  PreprocessConfig pre = c.preprocess;  // written with the extent actually used
  pre.heatmap_height = c.heatmap_height;
  pre.heatmap_width = c.heatmap_width;
  j = nlohmann::json{{"count", c.count},
                     {"seed", c.seed},
                     {"heatmap_height", c.heatmap_height},
                     {"heatmap_width", c.heatmap_width},
                     {"thermal_scale", c.thermal_scale},
                     {"rgb_scale", c.rgb_scale},
                     {"preprocess", pre}};
}

void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  SyntheticConfig d;
  for (const auto& [key, value] : j.items()) {
    static const std::array<const char*, 7> keys{"count", "seed", "heatmap_height", "heatmap_width",
                                                 "thermal_scale", "rgb_scale", "preprocess"};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError("synthetic config: unknown key '" + key + "'");
    }
  }
  c.count = j.value("count", d.count);
  c.seed = j.value("seed", d.seed);
  c.heatmap_height = j.value("heatmap_height", d.heatmap_height);
  c.heatmap_width = j.value("heatmap_width", d.heatmap_width);
  c.thermal_scale = j.value("thermal_scale", d.thermal_scale);
  c.rgb_scale = j.value("rgb_scale", d.rgb_scale);
  nlohmann::json pre = j.value("preprocess", nlohmann::json::object());
  pre["heatmap_height"] = c.heatmap_height;
  pre["heatmap_width"] = c.heatmap_width;
  pre.erase("rgb_height");
  pre.erase("rgb_width");
  c.preprocess = pre.get<PreprocessConfig>();
  c.validate();
}

RenderedPair render_pair(const SyntheticConfig& cfg, const PersonPose& pose, const SampleMeta& meta,
                         double ambient_c, double lighting) {
  const int hx = 8 * cfg.heatmap_height;
  const int wx = 8 * cfg.heatmap_width;
  const int hr = hx * cfg.rgb_scale;
  const int wr = wx * cfg.rgb_scale;

  Plane part;
  render_silhouette(pose, hr, wr, &part);
  const auto& bg = environment_colors().at(meta.environment);
  const auto& cloth = clothing_colors().at(meta.clothing);
  const auto& skin = kSkin.at(static_cast<std::size_t>(meta.person_id) % kSkin.size());
  RenderedPair out;
  out.rgb_raw = TensorF(Shape{1, 3, hr, wr});
  for (int y = 0; y < hr; ++y) {
    const double shade = lighting * (1.05 - 0.1 * static_cast<double>(y) / hr);
    for (int x = 0; x < wr; ++x) {
      const float label = part(y, x);
      const auto& color = label == 1.0f ? skin : (label == 2.0f ? cloth : bg);
      for (int c = 0; c < 3; ++c) {
        out.rgb_raw(0, c, y, x) = static_cast<float>(std::clamp(color[c] * shade, 0.0, 255.0));
      }
    }
  }
  out.thermal_raw = render_thermal(pose, cfg.heatmap_height * cfg.thermal_scale,
                                   cfg.heatmap_width * cfg.thermal_scale, ambient_c);
  out.mask = render_silhouette(pose, hx, wx);
  return out;
}

DatasetManifest generate_synthetic_dataset(const SyntheticConfig& input, const fs::path& dir) {
  SyntheticConfig cfg = input;
  cfg.preprocess.heatmap_height = cfg.heatmap_height;
  cfg.preprocess.heatmap_width = cfg.heatmap_width;
  cfg.validate();
  std::error_code ec;
  fs::create_directories(dir / "rgb", ec);
  fs::create_directories(dir / "thermal", ec);
  fs::create_directories(dir / "mask", ec);
  if (ec || !fs::is_directory(dir)) {
    throw DatasetError("", "cannot create output directory " + dir.string());
  }

  DatasetManifest m;
  m.stage = DatasetStage::raw;
  m.config = cfg.preprocess;
  m.root = dir;
  std::mt19937_64 rng(derive_seed(cfg.seed, {0x53594e5448ULL}));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto& clothes = clothing_palette();
  const auto& envs = environment_palette();
  const int settings = 2 * static_cast<int>(envs.size() * clothes.size());
  char id[16];
  for (int i = 0; i < cfg.count; ++i) {
    std::snprintf(id, sizeof(id), "s%05d", i);
    const int setting = i % settings;
    SampleMeta meta{setting / static_cast<int>(envs.size() * clothes.size()),
                    clothes[setting % clothes.size()], envs[(setting / clothes.size()) % envs.size()]};
    const PersonPose pose = random_pose(rng);
    const double ambient = 20.0 + 6.0 * u(rng);
    const double lighting = 0.92 + 0.16 * u(rng);
    RenderedPair pair = render_pair(cfg, pose, meta, ambient, lighting);

    ManifestEntry e;
    e.sample_id = id;
    e.meta = meta;
    const Shape rs = pair.rgb_raw.shape();
    e.rgb = {std::string("rgb/") + id + ".f32", {rs.h, rs.w, 3}};
    e.thermal = {std::string("thermal/") + id + ".f32",
                 {static_cast<int>(pair.thermal_raw.rows()), static_cast<int>(pair.thermal_raw.cols())}};
    e.mask = TensorRef{std::string("mask/") + id + ".f32",
                       {static_cast<int>(pair.mask.rows()), static_cast<int>(pair.mask.cols())}};
    std::vector<float> hwc(static_cast<std::size_t>(rs.h) * rs.w * 3);
    for (int y = 0; y < rs.h; ++y)
      for (int x = 0; x < rs.w; ++x)
        for (int c = 0; c < 3; ++c) hwc[(static_cast<std::size_t>(y) * rs.w + x) * 3 + c] = pair.rgb_raw(0, c, y, x);
    try {
      write_f32(dir / e.rgb.path, hwc.data(), hwc.size());
      write_f32(dir / e.thermal.path, pair.thermal_raw.data(), static_cast<std::size_t>(pair.thermal_raw.size()));
      write_f32(dir / e.mask->path, pair.mask.data(), static_cast<std::size_t>(pair.mask.size()));
    } catch (const std::exception& ex) {
      throw DatasetError(e.sample_id, ex.what());
    }
    m.entries.push_back(std::move(e));
  }
  m.save(dir);
  return m;
}

}  // namespace thermosynth
