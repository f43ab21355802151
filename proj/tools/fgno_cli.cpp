// Command-line driver: synthetic data generation, self-supervised
// pretraining, linear probing, clean-vs-noisy ablation, resolution sweep,
// and report consolidation. Exit codes: 0 success, 2 usage/config error,
// 3 runtime error.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "fgno/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fgno;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

// Raised for bad configuration / usage as opposed to runtime failures.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config field '" + key + "': " + e.what());
  }
}

// flag > FGNO_SEED environment variable > config file > 0
uint64_t resolve_seed(const std::optional<uint64_t>& flag, const json& cfg) {
  if (flag) return *flag;
  if (const char* env = std::getenv("FGNO_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("FGNO_SEED is not an unsigned integer: '" + std::string(env) + "'");
    }
  }
  return get_or<uint64_t>(cfg, "seed", 0);
}

SynthConfig parse_synth(const json& cfg) {
  if (!cfg.contains("synth")) throw ConfigError("config needs a 'synth' section");
  const json& s = cfg.at("synth");
  SynthConfig sc;
  sc.mode = mode_from_string(get_or<std::string>(s, "mode", "classification"));
  sc.num_classes = get_or(s, "num_classes", sc.num_classes);
  sc.num_windows = get_or(s, "num_windows", sc.num_windows);
  sc.sampling_rate_hz = get_or(s, "sampling_rate_hz", sc.sampling_rate_hz);
  sc.window_seconds = get_or(s, "window_seconds", sc.window_seconds);
  sc.signal_amplitude = get_or(s, "signal_amplitude", sc.signal_amplitude);
  sc.noise_amplitude = get_or(s, "noise_amplitude", sc.noise_amplitude);
  sc.amplitude_jitter = get_or(s, "amplitude_jitter", sc.amplitude_jitter);
  sc.freq_band_fraction = get_or(s, "freq_band_fraction", sc.freq_band_fraction);
  sc.burst_prob = get_or(s, "burst_prob", sc.burst_prob);
  sc.burst_scale = get_or(s, "burst_scale", sc.burst_scale);
  sc.burst_len_samples = get_or(s, "burst_len_samples", sc.burst_len_samples);
  sc.burst_kind = get_or(s, "burst_kind", sc.burst_kind);
  sc.tone_gate_min_duty = get_or(s, "tone_gate_min_duty", sc.tone_gate_min_duty);
  sc.tone_gate_len_samples = get_or(s, "tone_gate_len_samples", sc.tone_gate_len_samples);
  sc.distractor_max_duty = get_or(s, "distractor_max_duty", sc.distractor_max_duty);
  sc.distractor_len_samples = get_or(s, "distractor_len_samples", sc.distractor_len_samples);
  sc.name = get_or(s, "name", sc.name);
  try {
    sc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return sc;
}

PipelineConfig parse_pipeline(const json& cfg) {
  PipelineConfig pc;
  if (cfg.contains("pipeline")) {
    const json& p = cfg.at("pipeline");
    int nperseg = get_or(p, "nperseg", pc.window.nperseg);
    int noverlap = get_or(p, "noverlap", pc.window.noverlap);
    pc.window = WindowSpec{nperseg, noverlap};
    pc.log_magnitude = get_or(p, "log_magnitude", pc.log_magnitude);
    pc.freq_crop = get_or(p, "freq_crop", pc.freq_crop);
  }
  return pc;
}

ModelConfig parse_model(const json& cfg, int freq_bins, int frames) {
  ModelConfig mc;
  mc.num_layers = 4;
  mc.d_model = 64;
  mc.num_heads = 4;
  mc.d_ff = 128;
  mc.time_embed_dim = 16;
  if (cfg.contains("model")) {
    const json& m = cfg.at("model");
    mc.num_layers = get_or(m, "num_layers", mc.num_layers);
    mc.d_model = get_or(m, "d_model", mc.d_model);
    mc.num_heads = get_or(m, "num_heads", mc.num_heads);
    mc.d_ff = get_or(m, "d_ff", mc.d_ff);
    mc.dropout = get_or(m, "dropout", mc.dropout);
    mc.time_embed_dim = get_or(m, "time_embed_dim", mc.time_embed_dim);
    mc.time_inject = get_or(m, "time_inject", mc.time_inject);
  }
  mc.freq_bins = freq_bins;
  mc.max_frames = frames;
  try {
    mc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return mc;
}

TrainConfig parse_train(const json& cfg, uint64_t seed) {
  TrainConfig tc;
  if (cfg.contains("train")) {
    const json& t = cfg.at("train");
    tc.epochs = get_or(t, "epochs", tc.epochs);
    tc.batch_size = get_or(t, "batch_size", tc.batch_size);
    tc.learning_rate = get_or(t, "learning_rate", tc.learning_rate);
    tc.schedule_kind = get_or(t, "schedule", tc.schedule_kind);
    tc.s_min = get_or(t, "s_min", tc.s_min);
    tc.s_max = get_or(t, "s_max", tc.s_max);
    tc.mask_ratio = get_or(t, "mask_ratio", tc.mask_ratio);
    tc.grad_clip_norm = get_or(t, "grad_clip_norm", tc.grad_clip_norm);
    tc.checkpoint_every_epochs = get_or(t, "checkpoint_every_epochs", 0);
  }
  tc.seed = seed;
  try {
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return tc;
}

std::string require_dataset(const json& cfg) {
  std::string path = get_or<std::string>(cfg, "dataset", "");
  if (path.empty()) throw ConfigError("config needs a 'dataset' path");
  if (!fs::exists(fs::path(path) / "manifest.json"))
    throw ConfigError("dataset path '" + path + "' has no manifest.json");
  return path;
}

std::string require_checkpoint(const json& cfg) {
  std::string path = get_or<std::string>(cfg, "checkpoint", "");
  if (path.empty()) throw ConfigError("config needs a 'checkpoint' path");
  if (!fs::exists(fs::path(path) / "header.json"))
    throw ConfigError("checkpoint path '" + path + "' has no header.json");
  return path;
}

// Every command writes the resolved configuration it actually ran with.
void write_resolved(const fs::path& out, json cfg, uint64_t seed,
                    const std::string& command) {
  cfg["seed"] = seed;
  cfg["command"] = command;
  fs::create_directories(out);
  std::ofstream f((out / "config.json").string());
  if (!f) throw std::runtime_error("cannot write config copy in " + out.string());
  f << cfg.dump(2) << "\n";
}

struct ProbeOptions {
  std::vector<int> layers;       // empty = all
  std::vector<double> times;     // empty = default ninths
  std::string metric = "loss";
  double fraction = 1.0;
  int layer = 0;                 // fixed cell, ablate / sweep
  double flow_time = -1.0;
};

ProbeOptions parse_probe(const json& cfg) {
  ProbeOptions po;
  if (cfg.contains("probe")) {
    const json& p = cfg.at("probe");
    po.layers = get_or(p, "grid_layers", po.layers);
    po.times = get_or(p, "grid_times", po.times);
    po.metric = get_or(p, "metric", po.metric);
    po.fraction = get_or(p, "fraction", po.fraction);
    po.layer = get_or(p, "layer", po.layer);
    po.flow_time = get_or(p, "flow_time", po.flow_time);
  }
  return po;
}

struct LoadedRun {
  DatasetMeta meta;
  Prepared prep;
  FlowModel<float> model;
};

LoadedRun load_run(const json& cfg) {
  std::string data_dir = require_dataset(cfg);
  std::string ckpt_dir = require_checkpoint(cfg);
  auto [meta, windows] = load_dataset(data_dir);
  PipelineConfig pc = parse_pipeline(cfg);
  auto model = FlowModel<float>::load_checkpoint(ckpt_dir);
  auto prep = prepare_dataset(meta, windows, pc);
  if (model.config().freq_bins != prep.freq_bins || model.config().max_frames < prep.frames)
    throw ConfigError("checkpoint geometry (" + std::to_string(model.config().freq_bins) +
                      " bins) does not match the dataset (" + std::to_string(prep.freq_bins) +
                      " bins, " + std::to_string(prep.frames) + " frames)");
  return {meta, std::move(prep), std::move(model)};
}

// selects the fixed cell for ablate / res-sweep: explicit config first,
// then a prior grid result
std::pair<int, double> resolve_cell(const json& cfg, const ProbeOptions& po) {
  if (po.layer >= 1 && po.flow_time >= 0.0) return {po.layer, po.flow_time};
  std::string grid_path = get_or<std::string>(cfg, "grid_result", "");
  if (!grid_path.empty()) {
    std::ifstream f(grid_path);
    if (!f) throw ConfigError("cannot open grid_result '" + grid_path + "'");
    json g = json::parse(f);
    return {g.at("selected_layer").get<int>(), g.at("selected_flow_time").get<double>()};
  }
  throw ConfigError("need probe.layer and probe.flow_time, or a 'grid_result' path");
}

int cmd_gen_synth(const json& cfg, const std::string& out, uint64_t seed) {
  SynthConfig sc = parse_synth(cfg);
  auto windows = synth_dataset(sc, seed);
  DatasetMeta meta{sc.name, sc.mode, sc.mode == TaskMode::classification ? sc.num_classes : 0,
                   sc.sampling_rate_hz, sc.window_seconds};
  save_dataset(out, meta, windows);
  write_resolved(out, cfg, seed, "gen-synth");
  std::cout << "wrote " << windows.size() << " windows to " << out << "\n";
  return 0;
}

int cmd_pretrain(const json& cfg, const std::string& out, uint64_t seed,
                 const std::string& method) {
  if (method != "fgno" && method != "mae")
    throw ConfigError("method must be 'fgno' or 'mae', got '" + method + "'");
  std::string data_dir = require_dataset(cfg);
  auto [meta, windows] = load_dataset(data_dir);
  PipelineConfig pc = parse_pipeline(cfg);
  auto prep = prepare_dataset(meta, windows, pc);
  ModelConfig mc = parse_model(cfg, prep.freq_bins, prep.frames);
  TrainConfig tc = parse_train(cfg, seed);
  fs::create_directories(out);
  tc.checkpoint_dir = (fs::path(out) / "checkpoint").string();

  FlowModel<float> model(mc, seed);
  TrainLog log = (method == "fgno") ? train_flow(model, prep.ssl_train, prep.ssl_val, tc)
                                    : train_mae(model, prep.ssl_train, prep.ssl_val, tc);
  if (tc.epochs == 0) model.save_checkpoint(tc.checkpoint_dir);
  log.write_csv((fs::path(out) / "train_log.csv").string());
  json resolved = cfg;
  resolved["method"] = method;
  resolved["model"] = mc.to_json();
  write_resolved(out, resolved, seed, "pretrain");
  double last = log.records.empty() ? 0.0 : log.records.back().loss;
  std::cout << "pretrain(" << method << "): " << log.records.size()
            << " log records, final loss " << last << "\n";
  return 0;
}

int cmd_probe(const json& cfg, const std::string& out, uint64_t seed) {
  LoadedRun run = load_run(cfg);
  ProbeOptions po = parse_probe(cfg);
  ValMetric metric = val_metric_from_string(po.metric);

  ProbeData data = run.prep.probe;
  long full_rows = static_cast<long>(data.train.phis.size());
  if (po.fraction < 1.0)
    data.train = subsample_split(data.train, data.mode, po.fraction, seed);

  std::vector<int> layers = po.layers.empty() ? all_layers(run.model.config()) : po.layers;
  std::vector<double> times = po.times.empty() ? default_grid_times() : po.times;

  ModelFeatureExtractor ex(run.model);
  GridSearchResult res = grid_search(ex, data, layers, times, metric);

  fs::create_directories(out);
  json j = res.to_json();
  j["label_fraction"] = po.fraction;
  j["full_train_rows"] = full_rows;
  std::ofstream f((fs::path(out) / "grid.json").string());
  f << j.dump(2) << "\n";
  res.write_matrix_csv((fs::path(out) / "grid_matrix.csv").string());
  write_resolved(out, cfg, seed, "probe");
  std::cout << "probe: best layer " << res.best_layer << ", s " << res.best_time << ", val "
            << res.best_val << ", test " << res.test_metric << " (" << res.train_rows
            << " train rows)\n";
  return 0;
}

int cmd_ablate(const json& cfg, const std::string& out, uint64_t seed, int noise_seeds) {
  LoadedRun run = load_run(cfg);
  ProbeOptions po = parse_probe(cfg);
  auto [layer, s] = resolve_cell(cfg, po);
  ValMetric metric = val_metric_from_string(po.metric);
  if (noise_seeds < 2) throw ConfigError("--noise-seeds must be >= 2");

  auto rep = ablate_clean_noisy(run.model, run.prep.probe, layer, s, metric, noise_seeds, seed);
  fs::create_directories(out);
  std::ofstream f((fs::path(out) / "ablation.json").string());
  f << rep.to_json().dump(2) << "\n";
  write_resolved(out, cfg, seed, "ablate");
  std::cout << "ablate(l=" << layer << ", s=" << s << "): clean " << rep.clean()
            << " (std " << rep.clean_std() << "), noisy " << rep.noisy_mean() << " (std "
            << rep.noisy_std() << ", " << noise_seeds << " seeds)\n";
  return 0;
}

int cmd_res_sweep(const json& cfg, const std::string& out, uint64_t seed,
                  std::vector<int> factors) {
  std::string data_dir = require_dataset(cfg);
  std::string ckpt_dir = require_checkpoint(cfg);
  auto [meta, windows] = load_dataset(data_dir);
  PipelineConfig pc = parse_pipeline(cfg);
  auto model = FlowModel<float>::load_checkpoint(ckpt_dir);
  ProbeOptions po = parse_probe(cfg);
  auto [layer, s] = resolve_cell(cfg, po);
  ValMetric metric = val_metric_from_string(po.metric);
  if (factors.empty()) factors = {1, 2, 4};

  auto rows = resolution_sweep(model, meta, windows, pc, factors, layer, s, metric);
  fs::create_directories(out);
  std::ofstream f((fs::path(out) / "sweep.csv").string());
  f << "factor,metric,skipped\n";
  for (const auto& r : rows) {
    if (r.skipped) {
      f << r.factor << ",,1\n";
      std::cerr << "warning: factor " << r.factor << " skipped (window too short)\n";
    } else {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", r.metric);
      f << r.factor << "," << buf << ",0\n";
    }
  }
  write_resolved(out, cfg, seed, "res-sweep");
  std::cout << "res-sweep: " << rows.size() << " factors written\n";
  return 0;
}

int cmd_report(const std::string& out, std::vector<std::string> run_dirs) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  std::sort(run_dirs.begin(), run_dirs.end());
  fs::create_directories(out);
  std::vector<std::string> missing;
  std::ofstream summary((fs::path(out) / "report.csv").string());
  summary << "run,artifact,selected_layer,selected_flow_time,metric,val,test\n";

  for (const auto& dir : run_dirs) {
    std::string tag = fs::path(dir).filename().string();
    if (tag.empty()) tag = fs::path(dir).parent_path().filename().string();
    bool found = false;
    for (const char* name : {"grid_matrix.csv", "sweep.csv", "train_log.csv"}) {
      fs::path src = fs::path(dir) / name;
      if (fs::exists(src)) {
        fs::copy_file(src, fs::path(out) / (tag + "_" + name),
                      fs::copy_options::overwrite_existing);
        found = true;
      }
    }
    fs::path grid = fs::path(dir) / "grid.json";
    if (fs::exists(grid)) {
      std::ifstream f(grid.string());
      json g = json::parse(f);
      summary << tag << ",grid," << g.at("selected_layer").get<int>() << ","
              << g.at("selected_flow_time").get<double>() << ","
              << g.at("metric").get<std::string>() << ","
              << g.at("selected_val_metric").get<double>() << ","
              << g.at("test_metric").get<double>() << "\n";
      found = true;
    }
    if (!found) missing.push_back(dir);
  }
  if (!missing.empty()) {
    std::ofstream mf((fs::path(out) / "missing.txt").string());
    for (const auto& m : missing) {
      mf << m << "\n";
      std::cerr << "warning: no artifacts in " << m << "\n";
    }
  }
  std::cout << "report: " << run_dirs.size() - missing.size() << " runs consolidated into "
            << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flow-guided neural operator experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, method = "fgno";
  std::optional<uint64_t> seed_flag;
  int noise_seeds = 10;
  std::vector<int> factors;
  std::vector<std::string> run_dirs;

  auto add_common = [&](CLI::App* cmd, bool needs_config = true) {
    if (needs_config)
      cmd->add_option("--config", config_path, "JSON config file")->required();
    cmd->add_option("--out", out_dir, "output directory")->required();
    cmd->add_option("--seed", seed_flag, "global seed (overrides FGNO_SEED and config)");
  };

  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic dataset");
  add_common(gen);
  auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining");
  add_common(pre);
  pre->add_option("--method", method, "fgno (flow matching) or mae (masked autoencoder)");
  auto* probe = app.add_subcommand("probe", "grid-search linear probe");
  add_common(probe);
  auto* ablate = app.add_subcommand("ablate", "clean vs noisy feature extraction");
  add_common(ablate);
  ablate->add_option("--noise-seeds", noise_seeds, "number of noisy extraction seeds");
  auto* sweep = app.add_subcommand("res-sweep", "input resolution sweep");
  add_common(sweep);
  sweep->add_option("--factors", factors, "downsampling factors");
  auto* report = app.add_subcommand("report", "consolidate run artifacts");
  add_common(report, /*needs_config=*/false);
  report->add_option("runs", run_dirs, "run directories to merge");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (report->parsed()) return cmd_report(out_dir, run_dirs);
    json cfg = load_config(config_path);
    uint64_t seed = resolve_seed(seed_flag, cfg);
    if (gen->parsed()) return cmd_gen_synth(cfg, out_dir, seed);
    if (pre->parsed()) return cmd_pretrain(cfg, out_dir, seed, method);
    if (probe->parsed()) return cmd_probe(cfg, out_dir, seed);
    if (ablate->parsed()) return cmd_ablate(cfg, out_dir, seed, noise_seeds);
    if (sweep->parsed()) return cmd_res_sweep(cfg, out_dir, seed, factors);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
