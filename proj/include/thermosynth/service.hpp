#pragma once

// Online phase: a synthesis loop turns thermal frames plus the selected latent
// code into RGB frames, fanned out to subscribers with latest-value delivery.
// The HTTP/WebSocket front end lives in server.hpp.

#include "thermosynth/bundle.hpp"
#include "thermosynth/data.hpp"
#include "thermosynth/image_io.hpp"
#include "thermosynth/training.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

namespace thermosynth {

/// 16-byte little-endian prefix of every WebSocket frame message:
/// bytes 0-3 sequence number (u32), 4-7 code index (u32),
/// 8-15 capture timestamp in microseconds since the Unix epoch (u64).
struct FrameHeader {
  std::uint32_t seq = 0;
  std::uint32_t code_index = 0;
  std::uint64_t timestamp_us = 0;

  static constexpr std::size_t kSize = 16;
  [[nodiscard]] std::array<std::uint8_t, kSize> encode() const;
  static FrameHeader decode(const std::uint8_t* bytes, std::size_t size);
  friend bool operator==(const FrameHeader&, const FrameHeader&) = default;
};

struct Frame {
  FrameHeader header;
  std::string code_id;
  int source_index = 0;         // position of the thermal frame in its source
  TensorF image;                // (1, 3, Hx, Wx) generator output
  std::vector<std::uint8_t> encoded;
  double latency_ms = 0.0;      // thermal frame ready -> encoded

  /// Header followed by the encoded image: the WebSocket payload.
  [[nodiscard]] std::vector<std::uint8_t> message() const;
};

using FramePtr = std::shared_ptr<const Frame>;

struct ThermalFrame {
  int index = 0;
  TensorF heatmap;  // (1, 1, Hh, Wh), preprocessed
};

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  /// Blocks until a frame is available; nullopt once the source is exhausted.
  virtual std::optional<ThermalFrame> next() = 0;
  /// Native frame rate, if the source has one.
  [[nodiscard]] virtual std::optional<double> frame_rate() const { return std::nullopt; }
  /// Unblocks next() for shutdown.
  virtual void close() {}
};

/// Preprocessed heatmaps of a dataset manifest, in manifest order.
class ReplaySource final : public FrameSource {
 public:
  ReplaySource(const DatasetManifest& manifest, bool loop);
  ReplaySource(std::vector<TensorF> heatmaps, bool loop, std::optional<double> rate = std::nullopt);
  std::optional<ThermalFrame> next() override;
  [[nodiscard]] std::optional<double> frame_rate() const override { return rate_; }
  void close() override { closed_ = true; }
  [[nodiscard]] std::size_t size() const { return heatmaps_.size(); }

 private:
  std::vector<TensorF> heatmaps_;
  bool loop_;
  std::optional<double> rate_;
  std::size_t pos_ = 0;
  std::atomic<bool> closed_{false};
};

/// Stand-in for a sensor driver: raw frames in degrees Celsius are pushed by
/// the caller and preprocessed with `config` (noise seeded per frame index).
class LiveSource final : public FrameSource {
 public:
  explicit LiveSource(PreprocessConfig config, std::uint64_t noise_seed = 0);
  void push(const Plane& thermal_celsius);
  std::optional<ThermalFrame> next() override;
  [[nodiscard]] std::optional<double> frame_rate() const override { return config_.frame_rate; }
  void close() override;

 private:
  PreprocessConfig config_;
  std::uint64_t noise_seed_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<ThermalFrame> queue_;
  int pushed_ = 0;
  bool closed_ = false;
};

/// Latest-value slot: publishing replaces any frame not yet taken, so a slow
/// reader only ever sees the newest frame and memory stays bounded.
class Subscriber {
 public:
  explicit Subscriber(std::function<void()> notify = {}) : notify_(std::move(notify)) {}

  void publish(FramePtr frame);
  /// Takes the pending frame, if any.
  FramePtr take();
  /// Waits up to `timeout` for a pending frame.
  FramePtr wait(std::chrono::milliseconds timeout);
  /// Frames replaced before they were taken.
  [[nodiscard]] std::uint64_t dropped() const;
  [[nodiscard]] bool pending() const;

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  FramePtr slot_;
  std::uint64_t dropped_ = 0;
  std::function<void()> notify_;
};

struct ServiceConfig {
  std::optional<double> fps;  // pacing; defaults to the source rate, 0 = unpaced
  ImageCodec codec = ImageCodec::jpeg;
  int jpeg_quality = 90;
  std::size_t initial_code = 0;
};

struct SessionStats {
  std::uint64_t frames_out = 0;
  double current_fps = 0.0;
  double last_latency_ms = 0.0;
  std::string active_code_id;
  std::size_t subscribers = 0;
  bool running = false;
};

class Session {
 public:
  /// Throws ConfigError on an empty or mismatched latent set.
  Session(const ModelBundle& bundle, LatentCodeSet codes, std::unique_ptr<FrameSource> source,
          ServiceConfig config = {});
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  void start();
  /// Stops the loop and closes the source; idempotent.
  void stop();
  /// Blocks until the source is exhausted or stop() was called; rethrows a
  /// failure of the synthesis loop.
  void wait();

  /// Switches the code used from the next frame on; returns false when `id`
  /// is already active. Unknown ids throw std::invalid_argument.
  bool select_code(const std::string& id);
  bool select_code(std::size_t index);
  [[nodiscard]] std::size_t active_code() const { return active_.load(); }

  [[nodiscard]] const LatentCodeSet& codes() const { return codes_; }
  [[nodiscard]] SessionStats stats() const;
  [[nodiscard]] double pacing_fps() const { return fps_; }

  std::shared_ptr<Subscriber> subscribe(std::function<void()> notify = {});
  void unsubscribe(const std::shared_ptr<Subscriber>& s);

  /// Called on the synthesis thread for every frame, before fan-out.
  void set_observer(std::function<void(const FramePtr&)> observer);

 private:
  void loop();
  FramePtr synthesize(const ThermalFrame& t, std::uint32_t seq);

  Generator<float> generator_;
  LatentCodeSet codes_;
  std::vector<TensorF> code_tensors_;
  std::unique_ptr<FrameSource> source_;
  ServiceConfig config_;
  double fps_ = 0.0;

  std::atomic<std::size_t> active_{0};
  std::atomic<bool> stop_{false};
  std::atomic<bool> started_{false};
  std::thread thread_;

  mutable std::mutex mutex_;  // guards everything below
  std::condition_variable done_cv_;
  bool done_ = false;
  std::exception_ptr error_;
  std::vector<std::shared_ptr<Subscriber>> subscribers_;
  std::function<void(const FramePtr&)> observer_;
  std::uint64_t frames_out_ = 0;
  double last_latency_ms_ = 0.0;
  std::deque<std::chrono::steady_clock::time_point> recent_;
};

}  // namespace thermosynth
