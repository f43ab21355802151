#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgno/rng.hpp"
#include "fgno/signal.hpp"

namespace fgno {

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}
inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split tag '" + s + "'");
}

enum class TaskMode { classification, regression };

inline std::string to_string(TaskMode m) {
  return m == TaskMode::classification ? "classification" : "regression";
}
inline TaskMode mode_from_string(const std::string& s) {
  if (s == "classification") return TaskMode::classification;
  if (s == "regression") return TaskMode::regression;
  throw std::invalid_argument("mode must be 'classification' or 'regression', got '" + s + "'");
}

// One labeled window: the raw segment plus either a class index or a real
// regression target.
struct LabeledWindow {
  TimeSeries series;
  int class_label = -1;       // classification
  double target = 0.0;        // regression
  Split split = Split::train;
};

struct SynthConfig {
  TaskMode mode = TaskMode::classification;
  int num_classes = 2;
  int num_windows = 2000;
  double sampling_rate_hz = 64.0;
  double window_seconds = 5.0;
  double signal_amplitude = 1.0;
  double noise_amplitude = 1.0;
  double amplitude_jitter = 0.2;   // relative, uniform
  double freq_band_fraction = 1.0;  // class tones use this fraction of the band
  // Artifact bursts: each segment of burst_len_samples is hit with
  // probability burst_prob at burst_scale times the base noise amplitude.
  // "white" adds broadband noise over the segment; "step" adds a constant
  // level shift (baseline-jump artifact). Off by default.
  double burst_prob = 0.0;
  double burst_scale = 6.0;
  int burst_len_samples = 16;
  std::string burst_kind = "white";
  // Intermittent class tones (classification only): each gate segment of
  // tone_gate_len_samples carries the tone with a per-window duty drawn
  // uniformly from [tone_gate_min_duty, 1]. 1 = tone always on.
  double tone_gate_min_duty = 1.0;
  int tone_gate_len_samples = 32;
  // Transient distractor tone (classification only): short bursts at
  // another class's frequency; the per-window burst rate is drawn
  // uniformly from [0, distractor_max_duty]. Off by default.
  double distractor_max_duty = 0.0;
  int distractor_len_samples = 16;
  std::string name = "synth";

  void validate() const {
    if (mode == TaskMode::classification && num_classes < 2)
      throw std::invalid_argument("SynthConfig: classification needs num_classes >= 2");
    if (num_windows < 1) throw std::invalid_argument("SynthConfig: num_windows must be >= 1");
    if (sampling_rate_hz <= 0 || window_seconds <= 0)
      throw std::invalid_argument("SynthConfig: rate and window_seconds must be positive");
    if (noise_amplitude < 0 || signal_amplitude <= 0)
      throw std::invalid_argument("SynthConfig: bad amplitude");
    if (burst_prob < 0 || burst_prob > 1 || burst_scale < 0 || burst_len_samples < 1)
      throw std::invalid_argument("SynthConfig: bad burst parameters");
    if (burst_kind != "white" && burst_kind != "step")
      throw std::invalid_argument("SynthConfig: burst_kind must be 'white' or 'step'");
    if (tone_gate_min_duty <= 0 || tone_gate_min_duty > 1 || tone_gate_len_samples < 1)
      throw std::invalid_argument("SynthConfig: bad tone gate parameters");
    if (distractor_max_duty < 0 || distractor_max_duty > 1 || distractor_len_samples < 1)
      throw std::invalid_argument("SynthConfig: bad distractor parameters");
    if (freq_band_fraction <= 0 || freq_band_fraction > 1)
      throw std::invalid_argument("SynthConfig: freq_band_fraction must be in (0, 1]");
  }

  // Class tones sit at evenly spaced frequencies within the lowest
  // freq_band_fraction of the band below Nyquist.
  double class_frequency(int c) const {
    return freq_band_fraction * sampling_rate_hz * (c + 1) / (2.0 * (num_classes + 1));
  }
};

namespace detail {

// Largest-remainder allocation of n into 80/10/10.
inline std::array<long, 3> split_counts(long n) {
  const double frac[3] = {0.8, 0.1, 0.1};
  std::array<long, 3> cnt{};
  std::array<double, 3> rem{};
  long used = 0;
  for (int i = 0; i < 3; ++i) {
    double exact = frac[i] * n;
    cnt[i] = static_cast<long>(std::floor(exact));
    rem[i] = exact - cnt[i];
    used += cnt[i];
  }
  while (used < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++cnt[best];
    rem[best] = -1;
    ++used;
  }
  return cnt;
}

}  // namespace detail

// Deterministic synthetic dataset. Classification: sinusoid-plus-noise
// with class-specific dominant frequency. Regression: amplitude-modulated
// sinusoid whose target is the true mean envelope amplitude. Window i is
// generated from sub-seed (seed XOR i), so generation order does not
// matter. Splits are 80/10/10, per class, class counts balanced within 1.
inline std::vector<LabeledWindow> synth_dataset(const SynthConfig& cfg, uint64_t seed) {
  cfg.validate();
  long n_samples = static_cast<long>(std::llround(cfg.window_seconds * cfg.sampling_rate_hz));
  std::vector<LabeledWindow> out(cfg.num_windows);

  for (int i = 0; i < cfg.num_windows; ++i) {
    Rng rng = Rng::sub(seed, static_cast<uint64_t>(i));
    LabeledWindow& w = out[i];
    w.series.sampling_rate = cfg.sampling_rate_hz;
    w.series.channel_id = "synth";
    w.series.samples.resize(n_samples);

    double phase = rng.uniform(0.0, 2.0 * M_PI);
    double amp = cfg.signal_amplitude *
                 (1.0 + cfg.amplitude_jitter * rng.uniform(-1.0, 1.0));

    if (cfg.mode == TaskMode::classification) {
      int c = i % cfg.num_classes;
      double f = cfg.class_frequency(c);
      w.class_label = c;
      // tone gate: per-window duty, per-segment on/off, at least one active
      std::vector<char> gate;
      if (cfg.tone_gate_min_duty < 1.0) {
        long n_seg = (n_samples + cfg.tone_gate_len_samples - 1) / cfg.tone_gate_len_samples;
        double duty = rng.uniform(cfg.tone_gate_min_duty, 1.0);
        gate.resize(n_seg);
        bool any = false;
        for (long g = 0; g < n_seg; ++g) {
          gate[g] = rng.uniform(0.0, 1.0) < duty;
          any |= static_cast<bool>(gate[g]);
        }
        if (!any) gate[0] = 1;
      }
      for (long k = 0; k < n_samples; ++k) {
        double t = k / cfg.sampling_rate_hz;
        bool on = gate.empty() || gate[k / cfg.tone_gate_len_samples];
        w.series.samples[k] = (on ? amp * std::sin(2.0 * M_PI * f * t + phase) : 0.0) +
                              cfg.noise_amplitude * rng.normal();
      }
      // transient interference at another class's tone frequency
      if (cfg.distractor_max_duty > 0.0 && cfg.num_classes > 1) {
        int other = (c + 1 + static_cast<int>(rng.uniform(0.0, cfg.num_classes - 1))) %
                    cfg.num_classes;
        double fd = cfg.class_frequency(std::min(other, cfg.num_classes - 1));
        double amp_d = cfg.signal_amplitude *
                       (1.0 + cfg.amplitude_jitter * rng.uniform(-1.0, 1.0));
        double rate = rng.uniform(0.0, cfg.distractor_max_duty);
        for (long start = 0; start < n_samples; start += cfg.distractor_len_samples) {
          if (rng.uniform(0.0, 1.0) >= rate) continue;
          double ph = rng.uniform(0.0, 2.0 * M_PI);
          long end = std::min<long>(n_samples, start + cfg.distractor_len_samples);
          for (long k = start; k < end; ++k) {
            double t = k / cfg.sampling_rate_hz;
            w.series.samples[k] += amp_d * std::sin(2.0 * M_PI * fd * t + ph);
          }
        }
      }
    } else {
      double carrier = cfg.class_frequency(0);
      double mod_freq = rng.uniform(0.2, 0.6);
      double mod_phase = rng.uniform(0.0, 2.0 * M_PI);
      double mod_depth = rng.uniform(0.0, 0.8);
      double envelope_sum = 0.0;
      for (long k = 0; k < n_samples; ++k) {
        double t = k / cfg.sampling_rate_hz;
        double env = amp * (1.0 + mod_depth * std::sin(2.0 * M_PI * mod_freq * t + mod_phase));
        envelope_sum += env;
        w.series.samples[k] = env * std::sin(2.0 * M_PI * carrier * t + phase) +
                              cfg.noise_amplitude * rng.normal();
      }
      w.target = envelope_sum / n_samples;
    }

    if (cfg.burst_prob > 0.0 && cfg.noise_amplitude > 0.0) {
      double burst_amp = cfg.burst_scale * cfg.noise_amplitude;
      for (long start = 0; start < n_samples; start += cfg.burst_len_samples) {
        if (rng.uniform(0.0, 1.0) >= cfg.burst_prob) continue;
        long end = std::min<long>(n_samples, start + cfg.burst_len_samples);
        if (cfg.burst_kind == "step") {
          double level = burst_amp * rng.normal();
          for (long k = start; k < end; ++k) w.series.samples[k] += level;
        } else {
          for (long k = start; k < end; ++k) w.series.samples[k] += burst_amp * rng.normal();
        }
      }
    }
  }

  // Per-class split assignment keeps class counts balanced within 1 in
  // every split. Windows were laid out class-interleaved, so within-class
  // order is the global order.
  int groups = (cfg.mode == TaskMode::classification) ? cfg.num_classes : 1;
  for (int g = 0; g < groups; ++g) {
    std::vector<int> idx;
    for (int i = g; i < cfg.num_windows; i += groups) idx.push_back(i);
    auto cnt = detail::split_counts(static_cast<long>(idx.size()));
    for (size_t j = 0; j < idx.size(); ++j) {
      Split s = (static_cast<long>(j) < cnt[0])            ? Split::train
                : (static_cast<long>(j) < cnt[0] + cnt[1]) ? Split::val
                                                           : Split::test;
      out[idx[j]].split = s;
    }
  }
  return out;
}

// ---- manifest I/O --------------------------------------------------------
//
// A dataset directory holds manifest.json plus one raw little-endian
// float32 file per window (the window's samples, in order). Labels live in
// the manifest entries. Layout:
//
//   manifest.json:
//     { "name": str, "mode": "classification"|"regression",
//       "num_classes": int, "sampling_rate_hz": number,
//       "window_seconds": number,
//       "entries": [ {"file": str, "label": number, "split": str}, ... ] }
//   windows/wNNNNNN.f32

static_assert(sizeof(float) == 4, "float32 layout assumed");

inline void write_f32_le(const std::string& path, const std::vector<float>& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!f) throw std::runtime_error("short write to " + path);
}

inline std::vector<float> read_f32_le(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot read " + path);
  auto bytes = static_cast<size_t>(f.tellg());
  if (bytes % sizeof(float) != 0)
    throw std::runtime_error(path + ": size not a multiple of 4 bytes");
  std::vector<float> data(bytes / sizeof(float));
  f.seekg(0);
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
  if (!f) throw std::runtime_error("short read from " + path);
  return data;
}

struct DatasetMeta {
  std::string name;
  TaskMode mode = TaskMode::classification;
  int num_classes = 0;
  double sampling_rate_hz = 0.0;
  double window_seconds = 0.0;
};

inline void save_dataset(const std::string& dir, const DatasetMeta& meta,
                         const std::vector<LabeledWindow>& windows) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "windows");
  nlohmann::json entries = nlohmann::json::array();
  for (size_t i = 0; i < windows.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "windows/w%06zu.f32", i);
    const auto& w = windows[i];
    std::vector<float> buf(w.series.samples.begin(), w.series.samples.end());
    write_f32_le((fs::path(dir) / name).string(), buf);
    double label = (meta.mode == TaskMode::classification)
                       ? static_cast<double>(w.class_label)
                       : w.target;
    entries.push_back({{"file", name}, {"label", label}, {"split", to_string(w.split)}});
  }
  nlohmann::json manifest = {
      {"name", meta.name},
      {"mode", to_string(meta.mode)},
      {"num_classes", meta.num_classes},
      {"sampling_rate_hz", meta.sampling_rate_hz},
      {"window_seconds", meta.window_seconds},
      {"entries", entries},
  };
  std::ofstream f((fs::path(dir) / "manifest.json").string());
  if (!f) throw std::runtime_error("cannot write manifest in " + dir);
  f << manifest.dump(2) << "\n";
}

inline std::pair<DatasetMeta, std::vector<LabeledWindow>> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream f((fs::path(dir) / "manifest.json").string());
  if (!f) throw std::runtime_error("no manifest.json in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(f);

  DatasetMeta meta;
  meta.name = manifest.at("name").get<std::string>();
  meta.mode = mode_from_string(manifest.at("mode").get<std::string>());
  meta.num_classes = manifest.at("num_classes").get<int>();
  meta.sampling_rate_hz = manifest.at("sampling_rate_hz").get<double>();
  meta.window_seconds = manifest.at("window_seconds").get<double>();

  std::vector<LabeledWindow> windows;
  for (const auto& e : manifest.at("entries")) {
    LabeledWindow w;
    auto buf = read_f32_le((fs::path(dir) / e.at("file").get<std::string>()).string());
    w.series.samples.assign(buf.begin(), buf.end());
    w.series.sampling_rate = meta.sampling_rate_hz;
    double label = e.at("label").get<double>();
    if (meta.mode == TaskMode::classification) {
      w.class_label = static_cast<int>(std::llround(label));
      if (w.class_label < 0 || w.class_label >= meta.num_classes)
        throw std::runtime_error(dir + ": class label out of range");
    } else {
      w.target = label;
    }
    w.split = split_from_string(e.at("split").get<std::string>());
    windows.push_back(std::move(w));
  }
  return {meta, windows};
}

}  // namespace fgno
