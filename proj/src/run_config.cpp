#include "thermosynth/run_config.hpp"

#include <fstream>
#include <set>

namespace thermosynth {

namespace {

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + ": expected a JSON object");
  std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!keys.count(key)) throw ConfigError(what + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

EvalConfig eval_from_json(const nlohmann::json& j) {
  check_keys(j, {"test_fraction", "draws", "seed", "extractor_seed"}, "eval config");
  EvalConfig c;
  read(j, "test_fraction", c.test_fraction);
  read(j, "draws", c.draws);
  read(j, "seed", c.seed);
  read(j, "extractor_seed", c.extractor_seed);
  if (c.test_fraction < 0.0 || c.test_fraction >= 1.0) throw ConfigError("eval.test_fraction must be in [0, 1)");
  if (c.draws < 1) throw ConfigError("eval.draws must be >= 1");
  return c;
}

GridConfig grid_from_json(const nlohmann::json& j) {
  check_keys(j, {"codes", "heatmaps", "seed"}, "grid config");
  GridConfig c;
  read(j, "codes", c.codes);
  read(j, "heatmaps", c.heatmaps);
  read(j, "seed", c.seed);
  if (c.codes < 1 || c.heatmaps < 1) throw ConfigError("grid.codes and grid.heatmaps must be >= 1");
  return c;
}

PrivacyConfig privacy_from_json(const nlohmann::json& j) {
  check_keys(j, {"scenes", "resolutions", "detector", "delta_c", "min_cells", "iou"}, "privacy config");
  PrivacyConfig c;
  if (j.contains("scenes")) {
    const auto& s = j["scenes"];
    check_keys(s, {"count", "width", "height", "person_min_px", "person_max_px", "seed"}, "privacy.scenes config");
    read(s, "count", c.scenes.count);
    read(s, "width", c.scenes.width);
    read(s, "height", c.scenes.height);
    read(s, "person_min_px", c.scenes.person_min_px);
    read(s, "person_max_px", c.scenes.person_max_px);
    read(s, "seed", c.scenes.seed);
  }
  read(j, "resolutions", c.resolutions);
  read(j, "detector", c.detector);
  read(j, "delta_c", c.delta_c);
  read(j, "min_cells", c.min_cells);
  read(j, "iou", c.iou);
  for (const auto& r : c.resolutions) parse_resolution(r);
  if (c.iou <= 0.0 || c.iou > 1.0) throw ConfigError("privacy.iou must be in (0, 1]");
  return c;
}

BenchConfig bench_from_json(const nlohmann::json& j) {
  check_keys(j, {"batch_sizes", "warmup", "iterations"}, "bench config");
  BenchConfig c;
  read(j, "batch_sizes", c.batch_sizes);
  read(j, "warmup", c.warmup);
  read(j, "iterations", c.iterations);
  if (c.batch_sizes.empty() || c.iterations < 1 || c.warmup < 0) throw ConfigError("bench config out of range");
  for (int b : c.batch_sizes) {
    if (b < 1) throw ConfigError("bench.batch_sizes must be >= 1");
  }
  return c;
}

}  // namespace

Resolution parse_resolution(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    Resolution r{std::stoi(s.substr(0, x), &used), 0};
    if (used != x) throw std::invalid_argument(s);
    r.height = std::stoi(s.substr(x + 1), &used);
    if (used != s.size() - x - 1 || r.width < 1 || r.height < 1) throw std::invalid_argument(s);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("resolution '" + s + "' is not of the form <width>x<height>");
  }
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  check_keys(j, {"seed", "synthetic", "model", "gan", "inversion", "eval", "grid", "privacy", "bench"}, "config");
  RunConfig c;
  try {
    if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("synthetic")) c.synthetic = j["synthetic"].get<SyntheticConfig>();
    if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
    if (j.contains("gan")) {
      nlohmann::json g = j["gan"];
      if (!g.contains("phase")) g["phase"] = "gan";
      c.gan = g.get<TrainConfig>();
    }
    if (j.contains("inversion")) {
      nlohmann::json i = j["inversion"];
      if (!i.contains("phase")) i["phase"] = "inversion";
      c.inversion = i.get<TrainConfig>();
    }
    if (j.contains("eval")) c.eval = eval_from_json(j["eval"]);
    if (j.contains("grid")) c.grid = grid_from_json(j["grid"]);
    if (j.contains("privacy")) c.privacy = privacy_from_json(j["privacy"]);
    if (j.contains("bench")) c.bench = bench_from_json(j["bench"]);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.gan.phase != Phase::gan) throw ConfigError("gan section must have phase \"gan\"");
  if (c.inversion.phase != Phase::inversion) throw ConfigError("inversion section must have phase \"inversion\"");
  if (c.seed) {
    c.synthetic.seed = c.gan.seed = c.inversion.seed = *c.seed;
    c.eval.seed = c.grid.seed = c.privacy.scenes.seed = *c.seed;
  }
  return c;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  j["synthetic"] = synthetic;
  j["model"] = model;
  j["gan"] = gan;
  j["inversion"] = inversion;
  j["eval"] = {{"test_fraction", eval.test_fraction},
               {"draws", eval.draws},
               {"seed", eval.seed},
               {"extractor_seed", eval.extractor_seed}};
  j["grid"] = {{"codes", grid.codes}, {"heatmaps", grid.heatmaps}, {"seed", grid.seed}};
  j["privacy"] = {{"scenes",
                   {{"count", privacy.scenes.count},
                    {"width", privacy.scenes.width},
                    {"height", privacy.scenes.height},
                    {"person_min_px", privacy.scenes.person_min_px},
                    {"person_max_px", privacy.scenes.person_max_px},
                    {"seed", privacy.scenes.seed}}},
                  {"resolutions", privacy.resolutions},
                  {"detector", privacy.detector},
                  {"delta_c", privacy.delta_c},
                  {"min_cells", privacy.min_cells},
                  {"iou", privacy.iou}};
  j["bench"] = {{"batch_sizes", bench.batch_sizes}, {"warmup", bench.warmup}, {"iterations", bench.iterations}};
  return j;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override '" + assignment + "': '" + key + "' is not inside an object");
      *node = nlohmann::json::object();
    }
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

nlohmann::json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  if (j.is_object() && j.contains("resolved_config")) return j["resolved_config"];
  return j;
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides,
                         std::optional<std::uint64_t> seed) {
  nlohmann::json doc = file ? load_config_file(*file) : nlohmann::json::object();
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& o : overrides) apply_override(doc, o);
  if (seed) doc["seed"] = *seed;
  return RunConfig::from_json(doc);
}

}  // namespace thermosynth
