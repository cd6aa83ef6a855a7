#include "thermosynth/bundle.hpp"

#include "thermosynth/random.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace thermosynth {
namespace {

constexpr char kMagic[8] = {'T', 'S', 'B', 'U', 'N', 'D', 'L', 'E'};

static_assert(std::endian::native == std::endian::little,
              "bundle IO assumes a little-endian host");

template <typename T>
void put(std::vector<char>& out, T v) {
  const auto* p = reinterpret_cast<const char*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::vector<char>& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw BundleError("bundle truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

struct Entry {
  std::string name;
  const TensorF* tensor;
};

void collect(std::vector<Entry>& out, const std::string& group, const ParameterSet<float>& ps) {
  for (const auto& [name, p] : ps) out.push_back({group + "/" + name, &p.value});
}

ParameterSet<float> extract(std::map<std::string, TensorF>& tensors, const std::string& group) {
  ParameterSet<float> ps;
  const std::string prefix = group + "/";
  for (auto it = tensors.lower_bound(prefix); it != tensors.end() && it->first.rfind(prefix, 0) == 0;) {
    ps.add(it->first.substr(prefix.size()), std::move(it->second));
    it = tensors.erase(it);
  }
  if (ps.size() == 0) throw BundleError("bundle has no '" + group + "' parameters");
  return ps;
}

}  // namespace

ModelBundle ModelBundle::create(const ModelConfig& config, std::uint64_t seed) {
  Generator<float> g(config, derive_seed(seed, {1}));
  Discriminator<float> d(config, derive_seed(seed, {2}));
  Encoder<float> e(config, derive_seed(seed, {3}));
  return ModelBundle{config, g, g, d, e, e, {}, nlohmann::json::object()};
}

std::vector<char> ModelBundle::serialize() const {
  std::vector<Entry> entries;
  collect(entries, "generator", generator.params());
  collect(entries, "generator_ema", generator_ema.params());
  collect(entries, "discriminator", discriminator.params());
  collect(entries, "encoder", encoder.params());
  collect(entries, "encoder_ema", encoder_ema.params());
  for (const auto& [name, t] : state) entries.push_back({"state/" + name, &t});

  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    const Shape s = e.tensor->shape();
    tensors.push_back({{"name", e.name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}, {"count", e.tensor->size()}});
    offset += e.tensor->size() * sizeof(float);
  }
  nlohmann::json header{{"format_version", kBundleVersion}, {"model", config}, {"meta", meta}, {"tensors", tensors}};
  const std::string text = header.dump();

  std::vector<char> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, kBundleVersion);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& e : entries) {
    const auto* p = reinterpret_cast<const char*>(e.tensor->data());
    out.insert(out.end(), p, p + e.tensor->size() * sizeof(float));
  }
  return out;
}

ModelBundle ModelBundle::deserialize(const std::vector<char>& bytes, const std::optional<ModelConfig>& expected) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw BundleError("not a model bundle");
  std::size_t pos = 8;
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kBundleVersion) {
    throw BundleError("unsupported bundle version " + std::to_string(version) + " (expected " +
                      std::to_string(kBundleVersion) + ")");
  }
  const auto header_len = get<std::uint64_t>(bytes, pos);
  if (pos + header_len > bytes.size()) throw BundleError("bundle header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw BundleError(std::string("bundle header: ") + e.what());
  }
  pos += header_len;
  if (header.value("format_version", 0u) != kBundleVersion) throw BundleError("bundle header version mismatch");

  ModelConfig config;
  try {
    config = header.at("model").get<ModelConfig>();
  } catch (const std::exception& e) {
    throw BundleError(std::string("bundle model config: ") + e.what());
  }
  if (expected && !(*expected == config)) {
    throw BundleError("bundle architecture " + nlohmann::json(config).dump() +
                      " does not match expected " + nlohmann::json(*expected).dump());
  }

  std::map<std::string, TensorF> tensors;
  const std::size_t blob_start = pos;
  for (const auto& t : header.at("tensors")) {
    const auto shape = t.at("shape").get<std::array<int, 4>>();
    const Shape s{shape[0], shape[1], shape[2], shape[3]};
    const auto offset = t.at("offset").get<std::uint64_t>();
    const auto count = t.at("count").get<std::uint64_t>();
    if (count != s.size()) throw BundleError("tensor " + t.at("name").get<std::string>() + ": count/shape mismatch");
    if (blob_start + offset + count * sizeof(float) > bytes.size()) throw BundleError("tensor data truncated");
    TensorF v(s);
    std::memcpy(v.data(), bytes.data() + blob_start + offset, count * sizeof(float));
    tensors.emplace(t.at("name").get<std::string>(), std::move(v));
  }

  try {
    Generator<float> g(config, extract(tensors, "generator"));
    Generator<float> ge(config, extract(tensors, "generator_ema"));
    Discriminator<float> d(config, extract(tensors, "discriminator"));
    Encoder<float> e(config, extract(tensors, "encoder"));
    Encoder<float> ee(config, extract(tensors, "encoder_ema"));
    std::map<std::string, TensorF> state;
    for (auto& [name, t] : tensors) {
      if (name.rfind("state/", 0) != 0) throw BundleError("unexpected tensor group: " + name);
      state.emplace(name.substr(6), std::move(t));
    }
    return ModelBundle{config, std::move(g), std::move(ge), std::move(d), std::move(e), std::move(ee),
                       std::move(state), header.value("meta", nlohmann::json::object())};
  } catch (const ShapeError& e) {
    throw BundleError(std::string("bundle parameter layout: ") + e.what());
  }
}

void ModelBundle::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw BundleError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw BundleError("write failed: " + path.string());
}

ModelBundle ModelBundle::load(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BundleError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes, expected);
}

}  // namespace thermosynth
