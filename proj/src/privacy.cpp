#include "thermosynth/evaluation.hpp"

#include "thermosynth/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include <unistd.h>

namespace thermosynth {

double box_iou(const Detection& a, const Detection& b) {
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  const double uni = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::string privacy_degree(double accuracy) {
  if (accuracy >= 0.5) return "Low";
  if (accuracy >= 0.1) return "Medium";
  return "High";
}

BlobDetector::BlobDetector(double delta_c, int min_cells) : delta_c_(delta_c), min_cells_(min_cells) {
  if (delta_c <= 0.0 || min_cells < 1) throw ConfigError("blob detector: delta_c > 0 and min_cells >= 1 required");
}

std::vector<Detection> BlobDetector::detect(const Plane& t) const {
  const int h = static_cast<int>(t.rows());
  const int w = static_cast<int>(t.cols());
  std::vector<float> values(t.data(), t.data() + t.size());
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2), values.end());
  const double threshold = values[values.size() / 2] + delta_c_;

  std::vector<int> label(static_cast<std::size_t>(h) * w, -1);
  std::vector<Detection> out;
  std::vector<std::pair<int, int>> stack;
  for (int y0 = 0; y0 < h; ++y0) {
    for (int x0 = 0; x0 < w; ++x0) {
      if (t(y0, x0) <= threshold || label[y0 * w + x0] >= 0) continue;
      int cells = 0, xmin = x0, xmax = x0, ymin = y0, ymax = y0;
      double excess = 0.0;
      stack.assign(1, {y0, x0});
      label[y0 * w + x0] = static_cast<int>(out.size());
      while (!stack.empty()) {
        const auto [y, x] = stack.back();
        stack.pop_back();
        ++cells;
        excess += t(y, x) - threshold;
        xmin = std::min(xmin, x), xmax = std::max(xmax, x);
        ymin = std::min(ymin, y), ymax = std::max(ymax, y);
        const std::array<std::pair<int, int>, 4> next{{{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}}};
        for (const auto& [ny, nx] : next) {
          if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
          if (t(ny, nx) <= threshold || label[ny * w + nx] >= 0) continue;
          label[ny * w + nx] = label[y0 * w + x0];
          stack.emplace_back(ny, nx);
        }
      }
      if (cells < min_cells_) continue;
      out.push_back({static_cast<double>(xmin) / w, static_cast<double>(ymin) / h,
                     static_cast<double>(xmax + 1) / w, static_cast<double>(ymax + 1) / h,
                     std::min(1.0, excess / cells / delta_c_)});
    }
  }
  return out;
}

ExternalDetector::ExternalDetector(std::string command) : command_(std::move(command)) {}

bool ExternalDetector::available() const {
  if (command_.empty()) return false;
  const std::string program = command_.substr(0, command_.find(' '));
  if (program.find('/') != std::string::npos) return std::filesystem::exists(program);
  const char* path = std::getenv("PATH");
  std::stringstream dirs(path ? path : "");
  for (std::string dir; std::getline(dirs, dir, ':');) {
    if (!dir.empty() && std::filesystem::exists(std::filesystem::path(dir) / program)) return true;
  }
  return false;
}

std::vector<Detection> ExternalDetector::detect(const Plane& t) const {
  const auto frame = std::filesystem::temp_directory_path() / ("thermosynth_frame_" + std::to_string(::getpid()) + ".csv");
  {
    std::ofstream out(frame);
    for (int y = 0; y < t.rows(); ++y) {
      for (int x = 0; x < t.cols(); ++x) out << (x ? "," : "") << t(y, x);
      out << '\n';
    }
  }
  const std::string cmd = command_ + " '" + frame.string() + "'";
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
  if (!pipe) throw std::runtime_error("cannot run detector: " + command_);
  std::vector<Detection> dets;
  std::string text;
  std::array<char, 512> buf{};
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe.get())) text += buf.data();
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    std::istringstream in(line);
    Detection d;
    if (in >> d.x0 >> d.y0 >> d.x1 >> d.y1 >> d.confidence) dets.push_back(d);
  }
  std::filesystem::remove(frame);
  return dets;
}

std::vector<PrivacyRow> privacy_harness(const std::vector<LabeledFrame>& frames,
                                        const std::vector<Resolution>& resolutions, const Detector& detector,
                                        double iou) {
  std::vector<PrivacyRow> rows;
  const bool usable = detector.available();
  for (const auto& res : resolutions) {
    PrivacyRow row{res, std::nullopt, "skipped"};
    if (usable) {
      long persons = 0, matched = 0;
      for (const auto& f : frames) {
        const Plane low = pixel_average(f.thermal_celsius, res.height, res.width);
        auto dets = detector.detect(low);
        std::vector<bool> used(dets.size(), false);
        for (const auto& gt : f.persons) {
          ++persons;
          int best = -1;
          double best_iou = iou;
          for (std::size_t k = 0; k < dets.size(); ++k) {
            const double v = box_iou(gt, dets[k]);
            if (!used[k] && v >= best_iou) best = static_cast<int>(k), best_iou = v;
          }
          if (best >= 0) used[static_cast<std::size_t>(best)] = true, ++matched;
        }
      }
      row.accuracy = persons ? static_cast<double>(matched) / persons : 0.0;
      row.degree = privacy_degree(*row.accuracy);
    }
    rows.push_back(row);
  }
  return rows;
}

void write_privacy_csv(const std::vector<PrivacyRow>& rows, std::ostream& out) {
  out << "resolution,accuracy,degree\n";
  for (const auto& r : rows) {
    out << r.resolution.str() << ',';
    if (r.accuracy) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * *r.accuracy);
      out << buf;
    } else {
      out << "skipped";
    }
    out << ',' << r.degree << '\n';
  }
}

std::vector<LabeledFrame> synthetic_privacy_scenes(const PrivacySceneConfig& cfg) {
  if (cfg.count < 1 || cfg.width < 1 || cfg.height < 1 || cfg.person_min_px < 4 || cfg.person_max_px < cfg.person_min_px) {
    throw ConfigError("privacy scene config out of range");
  }
  std::mt19937_64 rng(derive_seed(cfg.seed, {0x9217}));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.2);
  std::vector<LabeledFrame> frames;
  for (int i = 0; i < cfg.count; ++i) {
    LabeledFrame f;
    const double ambient = 20.0 + 6.0 * u(rng);
    f.thermal_celsius = Plane(cfg.height, cfg.width);
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        f.thermal_celsius(y, x) = static_cast<float>(ambient + 0.8 * (static_cast<double>(y) / cfg.height - 0.5) + noise(rng));
      }
    }
    const int people = 1 + static_cast<int>(u(rng) * 2.0);
    for (int p = 0; p < people; ++p) {
      const double hp = cfg.person_min_px + (cfg.person_max_px - cfg.person_min_px) * u(rng);
      const double r = 0.14 * hp;
      const double half_w = 0.22 * hp;
      // Each person occupies its own horizontal slot so boxes never overlap.
      const double slot = static_cast<double>(cfg.width) / people;
      const double cx = slot * p + half_w + 1.0 + (slot - 2.0 * half_w - 2.0) * u(rng);
      const double top = 1.0 + (cfg.height - hp - 2.0) * u(rng);
      double x0 = cfg.width, x1 = 0, y0 = cfg.height, y1 = 0;
      for (int y = 0; y < cfg.height; ++y) {
        for (int x = 0; x < cfg.width; ++x) {
          const double px = x + 0.5, py = y + 0.5;
          const double hy = top + r;
          const bool head = (px - cx) * (px - cx) + (py - hy) * (py - hy) <= r * r;
          const double by = top + 2.0 * r + 0.5 * (hp - 2.0 * r);
          const double bh = 0.5 * (hp - 2.0 * r);
          const bool body = bh > 0 && std::pow((px - cx) / half_w, 2) + std::pow((py - by) / bh, 2) <= 1.0;
          if (!head && !body) continue;
          f.thermal_celsius(y, x) = static_cast<float>((head ? 35.0 : 31.5) + noise(rng));
          x0 = std::min(x0, static_cast<double>(x)), x1 = std::max(x1, x + 1.0);
          y0 = std::min(y0, static_cast<double>(y)), y1 = std::max(y1, y + 1.0);
        }
      }
      if (x1 > x0) f.persons.push_back({x0 / cfg.width, y0 / cfg.height, x1 / cfg.width, y1 / cfg.height, 1.0});
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace thermosynth
