#include "thermosynth/evaluation.hpp"

#include "thermosynth/image_io.hpp"
#include "thermosynth/random.hpp"

#include <algorithm>
#include <cmath>

namespace thermosynth {
namespace {

TensorF repeat_sample(const TensorF& x, int count) {
  const Shape s = x.shape();
  if (s.n != 1) throw ShapeError("expected a single sample, got " + s.str());
  TensorF out(Shape{count, s.c, s.h, s.w});
  for (int n = 0; n < count; ++n) out.vec().segment(n * s.sample_size(), s.sample_size()) = x.vec();
  return out;
}

void blit(GridResult& grid, int row, int col, const TensorF& image, int h, int w) {
  const Shape s = image.shape();
  Plane* planes[3] = {&grid.image_r, &grid.image_g, &grid.image_b};
  for (int c = 0; c < 3; ++c) {
    const int src_c = s.c == 1 ? 0 : c;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const float v = image(0, src_c, y * s.h / h, x * s.w / w);
        (*planes[c])(row * h + y, col * w + x) = std::clamp((v + 1.0f) * 0.5f, 0.0f, 1.0f);
      }
    }
  }
}

double color_distance(const std::array<float, 3>& a, const std::array<float, 3>& b) {
  double d = 0.0;
  for (int c = 0; c < 3; ++c) d += (a[c] - b[c]) * static_cast<double>(a[c] - b[c]);
  return std::sqrt(d);
}

}  // namespace

GridResult disentanglement_grid(const Generator<float>& g, const std::vector<TensorF>& codes,
                                const std::vector<TensorF>& heatmaps, const std::vector<TensorF>& code_sources) {
  if (codes.empty() || heatmaps.empty()) throw std::invalid_argument("disentanglement_grid: need k, n >= 1");
  if (!code_sources.empty() && code_sources.size() != codes.size()) {
    throw std::invalid_argument("disentanglement_grid: one source image per code expected");
  }
  const ModelConfig& cfg = g.config();
  const int k = static_cast<int>(codes.size());
  const int n = static_cast<int>(heatmaps.size());
  for (const auto& h : heatmaps) require_shape(h.shape(), cfg.heatmap_shape(), "grid heatmap");
  const TensorF h_all = concat_batch(heatmaps);

  const int th = cfg.rgb_height();
  const int tw = cfg.rgb_width();
  GridResult grid;
  grid.rows = k + 1;
  grid.cols = n + 1;
  grid.image_r = Plane::Ones(grid.rows * th, grid.cols * tw);
  grid.image_g = grid.image_r;
  grid.image_b = grid.image_r;

  for (int j = 0; j < n; ++j) blit(grid, 0, j + 1, heatmaps[j], th, tw);
  for (int i = 0; i < k; ++i) {
    require_shape(codes[i].shape(), cfg.latent_shape(), "grid code");
    const TensorF row = g(repeat_sample(codes[i], n), h_all);
    std::vector<TensorF> cells;
    for (int j = 0; j < n; ++j) {
      cells.push_back(row.slice(j, 1));
      blit(grid, i + 1, j + 1, cells.back(), th, tw);
    }
    if (!code_sources.empty()) blit(grid, i + 1, 0, code_sources[i], th, tw);
    grid.cells.push_back(std::move(cells));
  }
  return grid;
}

void write_grid_png(const GridResult& grid, const std::filesystem::path& path) {
  Rgb8 img{static_cast<int>(grid.image_r.cols()), static_cast<int>(grid.image_r.rows()), {}};
  img.pixels.reserve(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (const Plane* p : {&grid.image_r, &grid.image_g, &grid.image_b}) {
        img.pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp((*p)(y, x), 0.0f, 1.0f) * 255.0f)));
      }
    }
  }
  write_file(path, encode_png(img));
}

std::array<float, 3> border_color(const TensorF& image) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("border_color: expected (1, 3, H, W), got " + s.str());
  std::array<float, 3> out{};
  for (int c = 0; c < 3; ++c) {
    std::vector<float> v;
    for (int x = 0; x < s.w; ++x) {
      v.push_back(image(0, c, 0, x));
      v.push_back(image(0, c, s.h - 1, x));
    }
    for (int y = 1; y + 1 < s.h; ++y) {
      v.push_back(image(0, c, y, 0));
      v.push_back(image(0, c, y, s.w - 1));
    }
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
    out[c] = v[v.size() / 2];
  }
  return out;
}

std::optional<std::array<double, 2>> foreground_centroid(const TensorF& image, double threshold) {
  const auto bg = border_color(image);
  const Shape s = image.shape();
  Eigen::MatrixXf dist(s.h, s.w);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      float d = 0.0f;
      for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(image(0, c, y, x) - bg[c]));
      dist(y, x) = d;
    }
  }
  const double cut = std::max(threshold, 0.5 * static_cast<double>(dist.maxCoeff()));
  double sx = 0.0, sy = 0.0;
  long count = 0;
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      if (dist(y, x) > cut) {
        sx += x;
        sy += y;
        ++count;
      }
    }
  }
  if (count == 0) return std::nullopt;
  return std::array<double, 2>{sx / count, sy / count};
}

TensorF shift_heatmap(const TensorF& heatmap, int dx) {
  const Shape s = heatmap.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("shift_heatmap: expected (1, 1, H, W), got " + s.str());
  TensorF out(s);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) out(0, 0, y, x) = heatmap(0, 0, y, std::clamp(x - dx, 0, s.w - 1));
  }
  return out;
}

namespace {

// Heat-weighted mean column of the cells warmer than the frame mean.
double warm_column(const TensorF& heatmap) {
  const Shape s = heatmap.shape();
  const double mean = heatmap.vec().mean();
  double sx = 0.0, sw = 0.0;
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      const double w = std::max(0.0, heatmap(0, 0, y, x) - mean);
      sx += w * x;
      sw += w;
    }
  }
  return sw > 0.0 ? sx / sw : 0.5 * (s.w - 1);
}

}  // namespace

ProbeResult disentanglement_probes(const Generator<float>& g, const LatentCodeSet& codes,
                                   const std::vector<PairedSample>& samples, int probes, int shift,
                                   std::uint64_t seed) {
  if (probes < 1 || shift < 1) throw std::invalid_argument("disentanglement_probes: probes and shift must be >= 1");
  if (samples.size() < 2) throw std::invalid_argument("disentanglement_probes: need at least two samples");
  std::mt19937_64 rng(derive_seed(seed, {0x9b0be}));
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  ProbeResult r;
  for (int p = 0; p < probes; ++p) {
    const PairedSample& a = samples[pick(rng)];
    const auto code_index = codes.find(a.sample_id);
    if (!code_index) throw std::invalid_argument("no latent code for sample " + a.sample_id);
    const TensorF code = codes.code_tensor(*code_index);

    // Same code, heatmap moved towards the wider side of the blob.
    const int dx = warm_column(a.heatmap.values) < 0.5 * (a.heatmap.values.shape().w - 1) ? shift : -shift;
    const TensorF base = g(code, a.heatmap.values);
    const TensorF moved = g(code, shift_heatmap(a.heatmap.values, dx));
    const auto c0 = foreground_centroid(base);
    const auto c1 = foreground_centroid(moved);
    if (c0 && c1 && ((*c1)[0] - (*c0)[0]) * dx > 0) ++r.centroid_follows;

    // Same code, heatmap of a sample from another environment.
    const PairedSample* donor = nullptr;
    for (int tries = 0; tries < 64 && !donor; ++tries) {
      const PairedSample& b = samples[pick(rng)];
      if (b.meta.environment != a.meta.environment) donor = &b;
    }
    if (!donor) donor = &samples[(pick(rng) + 1) % samples.size()];
    const auto swapped = border_color(g(code, donor->heatmap.values));
    if (color_distance(swapped, border_color(a.rgb.values)) < color_distance(swapped, border_color(donor->rgb.values))) {
      ++r.background_follows_code;
    }
    ++r.probes;
  }
  return r;
}

}  // namespace thermosynth
