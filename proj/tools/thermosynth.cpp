// thermosynth: command-line entry point for the whole pipeline.
//
// Every subcommand accepts --config FILE, --seed N, --manifest FILE and trailing
// key=value overrides (e.g. gan.steps=100). A run manifest with the resolved
// configuration is written next to the primary output unless --manifest says
// otherwise. Failures print {"error": {"type", "message"}} on stderr.

#include "thermosynth/bundle.hpp"
#include "thermosynth/evaluation.hpp"
#include "thermosynth/random.hpp"
#include "thermosynth/run_config.hpp"
#include "thermosynth/server.hpp"
#include "thermosynth/service.hpp"
#include "thermosynth/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <numeric>

using namespace thermosynth;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string manifest;
  std::vector<std::string> overrides;

  RunConfig resolve() const {
    return resolve_config(config.empty() ? std::nullopt : std::optional<fs::path>(config), overrides, seed);
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config file (or a run manifest)");
  app->add_option("--seed", c.seed, "Seed copied into every section of the config");
  app->add_option("--manifest", c.manifest, "Where to write the run manifest");
  app->add_option("overrides", c.overrides, "Config overrides, dotted.key=value");
}

std::vector<std::string> g_argv;

void write_manifest(const Common& common, const std::string& sub, const RunConfig& cfg, std::uint64_t seed,
                    const json& inputs, const json& outputs, const fs::path& default_path) {
  const fs::path path = common.manifest.empty() ? default_path : fs::path(common.manifest);
  if (path.empty()) return;
  json m;
  m["tool"] = "thermosynth";
  m["subcommand"] = sub;
  m["seed"] = seed;
  m["argv"] = g_argv;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["resolved_config"] = cfg.to_json();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write run manifest " + path.string());
  out << m.dump(2) << '\n';
}

fs::path sibling(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw std::runtime_error(std::string(what) + " not found: " + path);
}

std::vector<PairedSample> load_samples(const std::string& dir) {
  require_file(dir, "dataset");
  return load_dataset(DatasetManifest::load(dir));
}

ModelBundle load_bundle(const std::string& path, const ModelConfig& expected) {
  require_file(path, "bundle");
  return ModelBundle::load(path, expected);
}

void print(const json& j) { std::cout << j.dump() << std::endl; }

std::ofstream open_history(const fs::path& path, bool append) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write history " + path.string());
  return out;
}

json fid_json(const FidReport& r) {
  return {{"fid", r.value},
          {"dim", r.dim},
          {"real_count", r.real_count},
          {"generated_count", r.generated_count},
          {"rank_deficient", r.rank_deficient}};
}

std::atomic<bool> g_interrupted{false};
extern "C" void on_signal(int) { g_interrupted = true; }

}  // namespace

int main(int argc, char** argv) {
  g_argv.assign(argv, argv + argc);
  CLI::App app{"Thermal-to-RGB synthesis pipeline"};
  app.require_subcommand(1);

  Common common;
  std::string data, out, bundle_path, latents_path, history, resume_from, real_dir, fake_dir, replay, encode = "jpeg",
                                                                                                   address = "127.0.0.1",
                                                                                                   code;
  bool loop = false;
  unsigned short port = 8080;
  std::optional<double> fps;

  auto* synth = app.add_subcommand("synth-data", "Write the procedural paired dataset");
  synth->add_option("--out", out, "Dataset directory")->required();

  auto* prep = app.add_subcommand("preprocess", "Write a preprocessed copy of a raw dataset");
  prep->add_option("--data", data, "Raw dataset directory")->required();
  prep->add_option("--out", out, "Output directory")->required();

  auto* gan = app.add_subcommand("train-gan", "GAN phase: train G and D");
  gan->add_option("--data", data, "Dataset directory")->required();
  gan->add_option("--out", out, "Output bundle")->required();
  gan->add_option("--resume-from", resume_from, "Bundle of an interrupted run of the same config");
  gan->add_option("--history", history, "JSON-lines loss history (default <out>.history.jsonl)");

  auto* inv = app.add_subcommand("train-inversion", "Inversion phase: train the encoder against the frozen G");
  inv->add_option("--data", data, "Dataset directory")->required();
  inv->add_option("--bundle", bundle_path, "Bundle after the GAN phase (or an interrupted inversion run)")->required();
  inv->add_option("--out", out, "Output bundle")->required();
  inv->add_option("--history", history, "JSON-lines loss history (default <out>.history.jsonl)");

  auto* lat = app.add_subcommand("build-latents", "Encode every dataset image into the latent code set");
  lat->add_option("--data", data, "Dataset directory")->required();
  lat->add_option("--bundle", bundle_path, "Trained bundle")->required();
  lat->add_option("--out", out, "Latent code set (JSON)")->required();

  auto* fid = app.add_subcommand("eval-fid", "FID with the lightweight feature extractor");
  fid->add_option("--data", data, "Dataset compared against generated images");
  fid->add_option("--bundle", bundle_path, "Bundle whose EMA generator is evaluated");
  fid->add_option("--real", real_dir, "First dataset (compare two datasets directly)");
  fid->add_option("--fake", fake_dir, "Second dataset");
  fid->add_option("--out", out, "Also write the report JSON here");

  auto* grid = app.add_subcommand("grid", "Disentanglement grid: codes x heatmaps");
  grid->add_option("--data", data, "Dataset directory")->required();
  grid->add_option("--bundle", bundle_path, "Trained bundle")->required();
  grid->add_option("--latents", latents_path, "Latent code set")->required();
  grid->add_option("--out", out, "Output PNG")->required();

  auto* priv = app.add_subcommand("privacy", "Detection accuracy versus thermal resolution");
  priv->add_option("--out", out, "CSV output (also printed)");

  auto* bench = app.add_subcommand("bench", "Generator throughput");
  bench->add_option("--bundle", bundle_path, "Bundle (default: freshly initialized model from the config)");
  bench->add_option("--out", out, "Also write the report JSON here");

  auto* serve = app.add_subcommand("serve", "Stream synthesized frames over HTTP/WebSocket");
  serve->add_option("--bundle", bundle_path, "Trained bundle")->required();
  serve->add_option("--latents", latents_path, "Latent code set")->required();
  serve->add_option("--replay", replay, "Dataset directory replayed as the thermal stream")->required();
  serve->add_flag("--loop", loop, "Restart the replay at the end");
  serve->add_option("--port", port, "TCP port (0 picks a free one)");
  serve->add_option("--address", address, "Listen address");
  serve->add_option("--fps", fps, "Pacing (default: the dataset frame rate; 0 = unpaced)");
  serve->add_option("--encode", encode, "Frame encoding")->check(CLI::IsMember({"jpeg", "png"}));
  serve->add_option("--code", code, "Initially active code id");

  for (auto* sub : {synth, prep, gan, inv, lat, fid, grid, priv, bench, serve}) add_common(sub, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", {{"type", "UsageError"}, {"message", e.what()}}}}.dump() << std::endl;
    return 2;
  }

  try {
    const RunConfig cfg = common.resolve();
    const json cfg_inputs = {{"config", common.config}, {"overrides", common.overrides}};

    if (*synth) {
      const DatasetManifest m = generate_synthetic_dataset(cfg.synthetic, out);
      print({{"samples", m.entries.size()}, {"dir", out}});
      write_manifest(common, "synth-data", cfg, cfg.synthetic.seed, cfg_inputs, {{"dataset", out}},
                     fs::path(out) / "synth-data.run.json");
    } else if (*prep) {
      require_file(data, "dataset");
      const DatasetManifest m = write_preprocessed(DatasetManifest::load(data), out);
      print({{"samples", m.entries.size()}, {"dir", out}});
      json in = cfg_inputs;
      in["data"] = data;
      write_manifest(common, "preprocess", cfg, m.config.noise_seed, in, {{"dataset", out}},
                     fs::path(out) / "preprocess.run.json");
    } else if (*gan) {
      const auto samples = load_samples(data);
      ModelBundle b = resume_from.empty() ? ModelBundle::create(cfg.model, cfg.gan.seed)
                                          : load_bundle(resume_from, cfg.model);
      const fs::path hist = history.empty() ? sibling(out, ".history.jsonl") : fs::path(history);
      auto hs = open_history(hist, !resume_from.empty());
      TrainOptions opts;
      opts.history = &hs;
      train_gan(samples, b, cfg.gan, opts);
      if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
      b.save(out);
      print({{"phase", "gan"}, {"steps", completed_steps(b, Phase::gan)}, {"bundle", out}, {"history", hist}});
      json in = cfg_inputs;
      in["data"] = data;
      in["resume_from"] = resume_from;
      write_manifest(common, "train-gan", cfg, cfg.gan.seed, in, {{"bundle", out}, {"history", hist}},
                     sibling(out, ".run.json"));
    } else if (*inv) {
      const auto samples = load_samples(data);
      ModelBundle b = load_bundle(bundle_path, cfg.model);
      const fs::path hist = history.empty() ? sibling(out, ".history.jsonl") : fs::path(history);
      auto hs = open_history(hist, completed_steps(b, Phase::inversion) > 0);
      TrainOptions opts;
      opts.history = &hs;
      train_inversion(samples, b, cfg.inversion, opts);
      if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
      b.save(out);
      print({{"phase", "inversion"},
             {"steps", completed_steps(b, Phase::inversion)},
             {"reconstruction_l1", inversion_l1(samples, b)},
             {"bundle", out},
             {"history", hist}});
      json in = cfg_inputs;
      in["data"] = data;
      in["bundle"] = bundle_path;
      write_manifest(common, "train-inversion", cfg, cfg.inversion.seed, in, {{"bundle", out}, {"history", hist}},
                     sibling(out, ".run.json"));
    } else if (*lat) {
      const auto samples = load_samples(data);
      const ModelBundle b = load_bundle(bundle_path, cfg.model);
      const LatentCodeSet set = build_latent_set(samples, b);
      set.save(out);
      print({{"codes", set.size()}, {"latents", out}});
      json in = cfg_inputs;
      in["data"] = data;
      in["bundle"] = bundle_path;
      write_manifest(common, "build-latents", cfg, cfg.inversion.seed, in, {{"latents", out}},
                     sibling(out, ".run.json"));
    } else if (*fid) {
      const RandomConvExtractor extractor(cfg.eval.extractor_seed);
      const auto warn = [](const std::string& w) {
        std::cerr << json{{"warning", w}}.dump() << std::endl;
      };
      FidReport r;
      json in = cfg_inputs;
      if (!real_dir.empty() || !fake_dir.empty()) {
        if (real_dir.empty() || fake_dir.empty()) throw UsageError("eval-fid: --real and --fake go together");
        r = dataset_fid(stack_images(load_samples(real_dir)), stack_images(load_samples(fake_dir)), extractor, warn);
        in["real"] = real_dir;
        in["fake"] = fake_dir;
      } else {
        if (data.empty() || bundle_path.empty()) throw UsageError("eval-fid: give --data and --bundle, or --real and --fake");
        auto samples = load_samples(data);
        if (cfg.eval.test_fraction > 0.0) {
          const auto [train, test] =
              train_test_split(static_cast<int>(samples.size()), cfg.eval.test_fraction, cfg.eval.seed);
          std::vector<PairedSample> held;
          for (int i : test) held.push_back(samples[i]);
          samples = std::move(held);
        }
        const ModelBundle b = load_bundle(bundle_path, cfg.model);
        r = dataset_fid(stack_images(samples),
                        generate_for_heatmaps(b.generator_ema, samples, cfg.eval.seed, cfg.eval.draws), extractor,
                        warn);
        in["data"] = data;
        in["bundle"] = bundle_path;
      }
      const json report = fid_json(r);
      print(report);
      if (!out.empty()) {
        std::ofstream(out) << report.dump(2) << '\n';
        write_manifest(common, "eval-fid", cfg, cfg.eval.seed, in, {{"report", out}}, sibling(out, ".run.json"));
      } else {
        write_manifest(common, "eval-fid", cfg, cfg.eval.seed, in, json::object(), {});
      }
    } else if (*grid) {
      const auto samples = load_samples(data);
      const ModelBundle b = load_bundle(bundle_path, cfg.model);
      require_file(latents_path, "latent code set");
      const LatentCodeSet codes = LatentCodeSet::load(latents_path);
      std::mt19937_64 rng(derive_seed(cfg.grid.seed, {0x671d}));
      std::vector<std::size_t> code_order(codes.size());
      std::iota(code_order.begin(), code_order.end(), 0);
      std::shuffle(code_order.begin(), code_order.end(), rng);
      std::vector<std::size_t> heat_order(samples.size());
      std::iota(heat_order.begin(), heat_order.end(), 0);
      std::shuffle(heat_order.begin(), heat_order.end(), rng);
      const auto k = std::min<std::size_t>(cfg.grid.codes, codes.size());
      const auto n = std::min<std::size_t>(cfg.grid.heatmaps, samples.size());

      std::vector<TensorF> zs, hs, sources;
      json code_ids = json::array(), heat_ids = json::array();
      bool have_sources = true;
      for (std::size_t i = 0; i < k; ++i) {
        const auto& entry = codes.entries[code_order[i]];
        zs.push_back(codes.code_tensor(code_order[i]));
        code_ids.push_back(entry.sample_id);
        const auto src = std::find_if(samples.begin(), samples.end(),
                                      [&](const PairedSample& s) { return s.sample_id == entry.sample_id; });
        if (src == samples.end()) {
          have_sources = false;
        } else {
          sources.push_back(src->rgb.values);
        }
      }
      for (std::size_t j = 0; j < n; ++j) {
        hs.push_back(samples[heat_order[j]].heatmap.values);
        heat_ids.push_back(samples[heat_order[j]].sample_id);
      }
      if (!have_sources) sources.clear();
      const GridResult g = disentanglement_grid(b.generator_ema, zs, hs, sources);
      if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
      write_grid_png(g, out);
      print({{"rows", g.rows}, {"cols", g.cols}, {"codes", code_ids}, {"heatmaps", heat_ids}, {"png", out}});
      json in = cfg_inputs;
      in["data"] = data;
      in["bundle"] = bundle_path;
      in["latents"] = latents_path;
      write_manifest(common, "grid", cfg, cfg.grid.seed, in, {{"png", out}}, sibling(out, ".run.json"));
    } else if (*priv) {
      std::vector<Resolution> resolutions;
      for (const auto& r : cfg.privacy.resolutions) resolutions.push_back(parse_resolution(r));
      std::unique_ptr<Detector> detector;
      if (cfg.privacy.detector == "blob") {
        detector = std::make_unique<BlobDetector>(cfg.privacy.delta_c, cfg.privacy.min_cells);
      } else {
        detector = std::make_unique<ExternalDetector>(cfg.privacy.detector);
        if (!detector->available()) {
          std::cerr << json{{"warning", "detector unavailable, rows skipped: " + cfg.privacy.detector}}.dump()
                    << std::endl;
        }
      }
      const auto rows =
          privacy_harness(synthetic_privacy_scenes(cfg.privacy.scenes), resolutions, *detector, cfg.privacy.iou);
      write_privacy_csv(rows, std::cout);
      if (!out.empty()) {
        std::ofstream csv(out);
        write_privacy_csv(rows, csv);
      }
      write_manifest(common, "privacy", cfg, cfg.privacy.scenes.seed, cfg_inputs, {{"csv", out}},
                     out.empty() ? fs::path() : sibling(out, ".run.json"));
    } else if (*bench) {
      const ModelBundle b =
          bundle_path.empty() ? ModelBundle::create(cfg.model, cfg.gan.seed) : load_bundle(bundle_path, cfg.model);
      const auto rows = throughput_bench(b.generator_ema, cfg.bench.batch_sizes, cfg.bench.warmup,
                                         cfg.bench.iterations);
      json report{{"hardware", hardware_description()}, {"rows", json::array()}};
      for (const auto& r : rows) {
        report["rows"].push_back({{"batch", r.batch}, {"seconds_per_batch", r.seconds_per_batch}, {"fps", r.fps}});
      }
      report["reference_fps"] = {{"single_input", 11.7}, {"batched", 389.0}};
      print(report);
      json in = cfg_inputs;
      in["bundle"] = bundle_path;
      if (!out.empty()) {
        std::ofstream(out) << report.dump(2) << '\n';
        write_manifest(common, "bench", cfg, cfg.gan.seed, in, {{"report", out}}, sibling(out, ".run.json"));
      } else {
        write_manifest(common, "bench", cfg, cfg.gan.seed, in, json::object(), {});
      }
    } else if (*serve) {
      const ModelBundle b = load_bundle(bundle_path, cfg.model);
      require_file(latents_path, "latent code set");
      LatentCodeSet codes = LatentCodeSet::load(latents_path);
      require_file(replay, "replay dataset");
      ServiceConfig sc;
      sc.fps = fps;
      sc.codec = codec_from_string(encode);
      if (!code.empty()) {
        const auto idx = codes.find(code);
        if (!idx) throw ConfigError("unknown code id '" + code + "'");
        sc.initial_code = *idx;
      }
      Session session(b, std::move(codes), std::make_unique<ReplaySource>(DatasetManifest::load(replay), loop), sc);
      Server server(session, address, port);
      server.start();
      json in = cfg_inputs;
      in["bundle"] = bundle_path;
      in["latents"] = latents_path;
      in["replay"] = replay;
      write_manifest(common, "serve", cfg, cfg.gan.seed, in, json::object(), {});
      print({{"event", "listening"}, {"address", address}, {"port", server.port()}, {"fps", session.pacing_fps()}});
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      session.start();
      while (!g_interrupted) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        if (!session.stats().running) break;
      }
      session.stop();
      server.stop();
      session.wait();
      const SessionStats s = session.stats();
      print({{"event", "stopped"}, {"frames_out", s.frames_out}, {"active_code_id", s.active_code_id}});
    }
    return 0;
  } catch (const std::exception& e) {
    std::string type = "RuntimeError";
    int status = 1;
    if (dynamic_cast<const UsageError*>(&e)) {
      type = "UsageError", status = 2;
    } else if (dynamic_cast<const ConfigError*>(&e)) {
      type = "ConfigError", status = 2;
    } else if (dynamic_cast<const DatasetError*>(&e)) {
      type = "DatasetError", status = 3;
    } else if (dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const ShapeError*>(&e)) {
      type = "DimensionError", status = 3;
    } else if (dynamic_cast<const BundleError*>(&e)) {
      type = "BundleError", status = 3;
    } else if (dynamic_cast<const TrainingDiverged*>(&e)) {
      type = "TrainingDiverged", status = 4;
    } else if (dynamic_cast<const std::invalid_argument*>(&e)) {
      type = "InvalidArgument", status = 2;
    }
    std::cerr << json{{"error", {{"type", type}, {"message", e.what()}}}}.dump() << std::endl;
    return status;
  }
}
