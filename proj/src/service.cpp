#include "thermosynth/service.hpp"

#include "thermosynth/random.hpp"

#include <algorithm>

namespace thermosynth {

namespace {

template <typename T>
void put_le(std::uint8_t* out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

template <typename T>
T get_le(const std::uint8_t* in) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in[i]) << (8 * i);
  return v;
}

std::uint64_t now_us() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::system_clock::now().time_since_epoch())
          .count());
}

}  // namespace

std::array<std::uint8_t, FrameHeader::kSize> FrameHeader::encode() const {
  std::array<std::uint8_t, kSize> out{};
  put_le(out.data(), seq);
  put_le(out.data() + 4, code_index);
  put_le(out.data() + 8, timestamp_us);
  return out;
}

FrameHeader FrameHeader::decode(const std::uint8_t* bytes, std::size_t size) {
  if (size < kSize) throw std::invalid_argument("frame message shorter than its 16-byte header");
  return {get_le<std::uint32_t>(bytes), get_le<std::uint32_t>(bytes + 4), get_le<std::uint64_t>(bytes + 8)};
}

std::vector<std::uint8_t> Frame::message() const {
  const auto h = header.encode();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  out.insert(out.end(), encoded.begin(), encoded.end());
  return out;
}

// ---- sources ----

ReplaySource::ReplaySource(const DatasetManifest& manifest, bool loop)
    : loop_(loop), rate_(manifest.config.frame_rate) {
  for (auto& s : load_dataset(manifest)) heatmaps_.push_back(std::move(s.heatmap.values));
  if (heatmaps_.empty()) throw DatasetError("", "replay manifest has no frames");
}

ReplaySource::ReplaySource(std::vector<TensorF> heatmaps, bool loop, std::optional<double> rate)
    : heatmaps_(std::move(heatmaps)), loop_(loop), rate_(rate) {
  if (heatmaps_.empty()) throw std::invalid_argument("replay source needs at least one frame");
}

std::optional<ThermalFrame> ReplaySource::next() {
  if (closed_) return std::nullopt;
  if (pos_ >= heatmaps_.size()) {
    if (!loop_) return std::nullopt;
    pos_ = 0;
  }
  const std::size_t i = pos_++;
  return ThermalFrame{static_cast<int>(i), heatmaps_[i]};
}

LiveSource::LiveSource(PreprocessConfig config, std::uint64_t noise_seed)
    : config_(std::move(config)), noise_seed_(noise_seed) {
  config_.validate();
}

void LiveSource::push(const Plane& thermal_celsius) {
  std::unique_lock lock(mutex_);
  if (closed_) throw std::logic_error("push on a closed live source");
  const int index = pushed_++;
  lock.unlock();
  Heatmap h = preprocess_thermal(thermal_celsius, config_, derive_seed(noise_seed_, {static_cast<std::uint64_t>(index)}));
  lock.lock();
  queue_.push_back({index, std::move(h.values)});
  cv_.notify_one();
}

std::optional<ThermalFrame> LiveSource::next() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return closed_ || !queue_.empty(); });
  if (queue_.empty()) return std::nullopt;
  ThermalFrame f = std::move(queue_.front());
  queue_.pop_front();
  return f;
}

void LiveSource::close() {
  std::lock_guard lock(mutex_);
  closed_ = true;
  cv_.notify_all();
}

// ---- subscribers ----

void Subscriber::publish(FramePtr frame) {
  {
    std::lock_guard lock(mutex_);
    if (slot_) ++dropped_;
    slot_ = std::move(frame);
  }
  cv_.notify_all();
  if (notify_) notify_();
}

FramePtr Subscriber::take() {
  std::lock_guard lock(mutex_);
  return std::exchange(slot_, nullptr);
}

FramePtr Subscriber::wait(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  cv_.wait_for(lock, timeout, [&] { return slot_ != nullptr; });
  return std::exchange(slot_, nullptr);
}

std::uint64_t Subscriber::dropped() const {
  std::lock_guard lock(mutex_);
  return dropped_;
}

bool Subscriber::pending() const {
  std::lock_guard lock(mutex_);
  return slot_ != nullptr;
}

// ---- session ----

Session::Session(const ModelBundle& bundle, LatentCodeSet codes, std::unique_ptr<FrameSource> source,
                 ServiceConfig config)
    : generator_(bundle.generator_ema), codes_(std::move(codes)), source_(std::move(source)), config_(config) {
  if (codes_.size() == 0) throw ConfigError("latent code set is empty");
  if (!source_) throw ConfigError("no frame source");
  for (std::size_t i = 0; i < codes_.size(); ++i) code_tensors_.push_back(codes_.code_tensor(i));
  if (config_.initial_code >= codes_.size()) throw ConfigError("initial code index out of range");
  active_ = config_.initial_code;
  fps_ = config_.fps.value_or(source_->frame_rate().value_or(0.0));
  if (!(fps_ >= 0.0)) throw ConfigError("fps must be >= 0");
}

Session::~Session() { stop(); }

void Session::start() {
  if (thread_.joinable()) throw std::logic_error("session already started");
  started_ = true;
  thread_ = std::thread([this] { loop(); });
}

void Session::stop() {
  stop_ = true;
  if (source_) source_->close();
  if (thread_.joinable()) thread_.join();
}

void Session::wait() {
  std::unique_lock lock(mutex_);
  done_cv_.wait(lock, [&] { return done_; });
  if (error_) std::rethrow_exception(error_);
}

bool Session::select_code(std::size_t index) {
  if (index >= codes_.size()) throw std::invalid_argument("unknown code index " + std::to_string(index));
  return active_.exchange(index) != index;
}

bool Session::select_code(const std::string& id) {
  const auto index = codes_.find(id);
  if (!index) throw std::invalid_argument("unknown code id '" + id + "'");
  return select_code(*index);
}

SessionStats Session::stats() const {
  std::lock_guard lock(mutex_);
  SessionStats s;
  s.frames_out = frames_out_;
  s.last_latency_ms = last_latency_ms_;
  s.active_code_id = codes_.entries[active_.load()].sample_id;
  s.subscribers = subscribers_.size();
  s.running = started_ && !done_;
  if (recent_.size() >= 2) {
    const double span = std::chrono::duration<double>(recent_.back() - recent_.front()).count();
    if (span > 0.0) s.current_fps = static_cast<double>(recent_.size() - 1) / span;
  }
  return s;
}

std::shared_ptr<Subscriber> Session::subscribe(std::function<void()> notify) {
  auto s = std::make_shared<Subscriber>(std::move(notify));
  std::lock_guard lock(mutex_);
  subscribers_.push_back(s);
  return s;
}

void Session::unsubscribe(const std::shared_ptr<Subscriber>& s) {
  std::lock_guard lock(mutex_);
  std::erase(subscribers_, s);
}

void Session::set_observer(std::function<void(const FramePtr&)> observer) {
  std::lock_guard lock(mutex_);
  observer_ = std::move(observer);
}

FramePtr Session::synthesize(const ThermalFrame& t, std::uint32_t seq) {
  const auto ready = std::chrono::steady_clock::now();
  auto f = std::make_shared<Frame>();
  // One read of the active index per frame: a frame never mixes codes.
  const std::size_t code = active_.load();
  f->header = {seq, static_cast<std::uint32_t>(code), now_us()};
  f->code_id = codes_.entries[code].sample_id;
  f->source_index = t.index;
  f->image = generator_(code_tensors_[code], t.heatmap);
  const Rgb8 rgb = to_rgb8(f->image);
  f->encoded = config_.codec == ImageCodec::png ? encode_png(rgb) : encode_jpeg(rgb, config_.jpeg_quality);
  f->latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - ready).count();
  return f;
}

void Session::loop() {
  using clock = std::chrono::steady_clock;
  const auto interval = fps_ > 0.0 ? std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / fps_))
                                   : clock::duration::zero();
  auto deadline = clock::now();
  std::uint32_t seq = 0;
  try {
    while (!stop_) {
      auto thermal = source_->next();
      if (!thermal || stop_) break;
      require_shape(thermal->heatmap.shape(), generator_.config().heatmap_shape(), "thermal frame");
      FramePtr frame = synthesize(*thermal, seq++);

      std::vector<std::shared_ptr<Subscriber>> subs;
      std::function<void(const FramePtr&)> observer;
      {
        std::lock_guard lock(mutex_);
        ++frames_out_;
        last_latency_ms_ = frame->latency_ms;
        recent_.push_back(clock::now());
        while (recent_.size() > 2 && recent_.back() - recent_.front() > std::chrono::seconds(2)) recent_.pop_front();
        subs = subscribers_;
        observer = observer_;
      }
      if (observer) observer(frame);
      for (auto& s : subs) s->publish(frame);

      if (interval > clock::duration::zero()) {
        deadline += interval;
        // Fell more than a frame behind: resynchronise instead of bursting.
        if (clock::now() > deadline + interval) deadline = clock::now();
        std::this_thread::sleep_until(deadline);
      }
    }
  } catch (...) {
    std::lock_guard lock(mutex_);
    error_ = std::current_exception();
  }
  std::lock_guard lock(mutex_);
  done_ = true;
  done_cv_.notify_all();
}

}  // namespace thermosynth
