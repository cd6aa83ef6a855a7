#include "thermosynth/evaluation.hpp"

#include <chrono>
#include <fstream>
#include <thread>

namespace thermosynth {

std::vector<ThroughputRow> throughput_bench(const Generator<float>& g, const std::vector<int>& batch_sizes,
                                            int warmup, int iterations) {
  if (iterations < 1 || warmup < 0) throw std::invalid_argument("throughput_bench: iterations >= 1, warmup >= 0");
  const ModelConfig& cfg = g.config();
  std::mt19937_64 rng(1);
  std::vector<ThroughputRow> rows;
  for (int b : batch_sizes) {
    if (b < 1) throw std::invalid_argument("throughput_bench: batch sizes must be >= 1");
    const TensorF z = sample_latents<float>(b, rng);
    TensorF h(cfg.heatmap_shape(b));
    h.vec().setRandom();
    for (int i = 0; i < warmup; ++i) (void)g(z, h);
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < iterations; ++i) (void)g(z, h);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / iterations;
    rows.push_back({b, secs, b / secs});
  }
  return rows;
}

std::string hardware_description() {
  std::ifstream in("/proc/cpuinfo");
  std::string model = "unknown cpu";
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      model = line.substr(line.find(':') + 2);
      break;
    }
  }
  return model + ", " + std::to_string(std::thread::hardware_concurrency()) + " hardware threads";
}

}  // namespace thermosynth
