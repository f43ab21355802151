#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgno/dataset.hpp"
#include "fgno/flow.hpp"
#include "fgno/model.hpp"
#include "fgno/pretrain.hpp"
#include "fgno/probe.hpp"
#include "fgno/signal.hpp"

namespace fgno {

struct PipelineConfig {
  WindowSpec window{64, 48};
  bool log_magnitude = false;  // log1p on magnitudes before normalization
  int freq_crop = 0;           // 0 = keep all bins, else keep the lowest N
};

inline Spectrogram window_spectrogram(const TimeSeries& series, const PipelineConfig& cfg) {
  Spectrogram sg = stft_magnitude(series, cfg.window);
  if (cfg.freq_crop > 0 && cfg.freq_crop < sg.freq_bins()) {
    Spectrogram cropped = sg;
    cropped.magnitudes = Tensor<double>({cfg.freq_crop, sg.frames()});
    for (int b = 0; b < cfg.freq_crop; ++b)
      for (int t = 0; t < sg.frames(); ++t)
        cropped.magnitudes.at(b, t) = sg.magnitudes.at(b, t);
    sg = std::move(cropped);
  }
  if (cfg.log_magnitude)
    for (auto& x : sg.magnitudes.v) x = std::log1p(x);
  return sg;
}

// Dataset windows turned into per-split normalized grids. Normalization
// statistics come from the training split only; the self-supervised views
// expose spectrograms without labels.
struct Prepared {
  DatasetMeta meta;
  NormStats stats;
  ProbeData probe;
  std::vector<Tensor<float>> ssl_train, ssl_val;
  int freq_bins = 0;
  int frames = 0;
};

inline Prepared prepare_dataset(const DatasetMeta& meta,
                                const std::vector<LabeledWindow>& windows,
                                const PipelineConfig& cfg) {
  Prepared out;
  out.meta = meta;
  out.probe.mode = meta.mode;
  out.probe.num_classes = meta.num_classes;

  std::vector<Spectrogram> sgs(windows.size());
  std::vector<Spectrogram> train_sgs;
  for (size_t i = 0; i < windows.size(); ++i) {
    sgs[i] = window_spectrogram(windows[i].series, cfg);
    if (windows[i].split == Split::train) train_sgs.push_back(sgs[i]);
  }
  if (train_sgs.empty()) throw std::invalid_argument("prepare_dataset: empty training split");
  out.stats = normalize_fit(train_sgs);
  out.freq_bins = sgs[0].freq_bins();
  out.frames = sgs[0].frames();

  for (size_t i = 0; i < windows.size(); ++i) {
    Tensor<double> grid = normalize_apply(sgs[i], out.stats).magnitudes;
    ProbeSplit* split = nullptr;
    switch (windows[i].split) {
      case Split::train: split = &out.probe.train; break;
      case Split::val: split = &out.probe.val; break;
      case Split::test: split = &out.probe.test; break;
    }
    if (windows[i].split == Split::train) out.ssl_train.push_back(grid.cast<float>());
    if (windows[i].split == Split::val) out.ssl_val.push_back(grid.cast<float>());
    split->phis.push_back(std::move(grid));
    split->class_labels.push_back(windows[i].class_label);
    split->targets.push_back(windows[i].target);
  }
  return out;
}

inline ProbeSplit subsample_split(const ProbeSplit& split, TaskMode mode, double fraction,
                                  uint64_t seed) {
  SubsampleResult sel = (mode == TaskMode::classification)
                            ? subsample_labels(split.class_labels, fraction, seed)
                            : subsample_uniform(split.phis.size(), fraction, seed);
  ProbeSplit out;
  for (size_t i : sel.indices) {
    out.phis.push_back(split.phis[i]);
    out.class_labels.push_back(split.class_labels[i]);
    out.targets.push_back(split.targets[i]);
  }
  return out;
}

enum class Pooling { mean, max };

inline std::vector<double> pool_with(const Tensor<double>& z, Pooling p) {
  return p == Pooling::mean ? pool_features(z) : pool_features_max(z);
}

// Clean-input extraction from a frozen model: deterministic by
// construction.
class ModelFeatureExtractor final : public FeatureExtractor {
 public:
  explicit ModelFeatureExtractor(FlowModel<float>& model, Pooling pooling = Pooling::mean)
      : model_(model), pooling_(pooling) {}

  int num_layers() const override { return model_.config().num_layers; }

  std::vector<std::vector<double>> layers_at(const Tensor<double>& phi, double s) override {
    auto taps = model_.all_layer_taps(phi.cast<float>(), s);
    std::vector<std::vector<double>> out;
    out.reserve(taps.size());
    for (const auto& t : taps) out.push_back(pool_with(t.cast<double>(), pooling_));
    return out;
  }

 private:
  FlowModel<float>& model_;
  Pooling pooling_;
};

// Noisy-path extraction: each window is corrupted with noise from
// (run_seed XOR window counter) before the forward pass.
class NoisyModelFeatureExtractor final : public FeatureExtractor {
 public:
  NoisyModelFeatureExtractor(FlowModel<float>& model, uint64_t run_seed,
                             VarianceSchedule sch = {}, Pooling pooling = Pooling::mean)
      : model_(model), run_seed_(run_seed), sch_(sch), pooling_(pooling) {}

  int num_layers() const override { return model_.config().num_layers; }

  std::vector<std::vector<double>> layers_at(const Tensor<double>& phi, double s) override {
    Rng rng = Rng::sub(run_seed_, counter_++);
    Tensor<float> f = phi.cast<float>();
    Tensor<float> eps(f.shape);
    for (auto& x : eps.v) x = static_cast<float>(rng.normal());
    Tensor<float> g = interpolate(f, eps, s, sch_);
    auto taps = model_.all_layer_taps(g, s);
    std::vector<std::vector<double>> out;
    out.reserve(taps.size());
    for (const auto& t : taps) out.push_back(pool_with(t.cast<double>(), pooling_));
    return out;
  }

 private:
  FlowModel<float>& model_;
  uint64_t run_seed_;
  uint64_t counter_ = 0;
  VarianceSchedule sch_;
  Pooling pooling_;
};

inline std::vector<double> default_grid_times() {
  std::vector<double> s;
  for (int k = 0; k <= 9; ++k) s.push_back(k / 9.0);
  return s;
}
inline std::vector<int> all_layers(const ModelConfig& cfg) {
  std::vector<int> l;
  for (int i = 1; i <= cfg.num_layers; ++i) l.push_back(i);
  return l;
}

// Probe metric at one fixed (layer, flow time) cell using the given
// extractor for both head fitting and evaluation (on the validation
// split).
inline double probe_at(FeatureExtractor& extractor, const ProbeData& data, int layer, double s,
                       ValMetric metric, const HeadConfig& head_cfg = {}) {
  auto extract = [&](const ProbeSplit& split) {
    std::vector<std::vector<double>> feats;
    for (const auto& phi : split.phis) feats.push_back(extractor.layers_at(phi, s)[layer - 1]);
    return feats;
  };
  auto train_feats = extract(data.train);
  ProbeHead head = (data.mode == TaskMode::classification)
                       ? fit_head_classification(train_feats, data.train.class_labels,
                                                 data.num_classes, head_cfg)
                       : fit_head_regression(train_feats, data.train.targets, head_cfg);
  return detail::score_split(head, extract(data.val), data.val, data.mode, metric);
}

// Clean-vs-noisy comparison at one cell: the clean metric re-evaluated
// `clean_reruns` times (identical by construction) and the noisy metric
// across `num_noise_seeds` independent noise streams.
struct CleanNoisyReport {
  int layer = 0;
  double flow_time = 0.0;
  std::vector<double> clean_values;
  std::vector<double> noisy_values;

  double clean() const { return clean_values.at(0); }
  double clean_std() const { return stddev(clean_values); }
  double noisy_mean() const {
    double s = 0;
    for (double v : noisy_values) s += v;
    return s / noisy_values.size();
  }
  double noisy_std() const { return stddev(noisy_values); }

  // shifted two-pass variance: exact 0 for identical values (no rounding
  // from mean(x, x, x) != x)
  static double stddev(const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x - v[0];
    m /= v.size();
    double s = 0;
    for (double x : v) s += (x - v[0] - m) * (x - v[0] - m);
    return std::sqrt(s / v.size());
  }

  nlohmann::json to_json() const {
    return {{"layer", layer},
            {"flow_time", flow_time},
            {"clean_values", clean_values},
            {"clean_std", clean_std()},
            {"noisy_values", noisy_values},
            {"noisy_mean", noisy_mean()},
            {"noisy_std", noisy_std()}};
  }
};

inline CleanNoisyReport ablate_clean_noisy(FlowModel<float>& model, const ProbeData& data,
                                           int layer, double s, ValMetric metric,
                                           int num_noise_seeds, uint64_t seed,
                                           int clean_reruns = 3,
                                           const HeadConfig& head_cfg = {}) {
  if (num_noise_seeds < 2)
    throw std::invalid_argument("ablate_clean_noisy: need at least 2 noise seeds");
  CleanNoisyReport rep;
  rep.layer = layer;
  rep.flow_time = s;
  for (int r = 0; r < clean_reruns; ++r) {
    ModelFeatureExtractor ex(model);
    rep.clean_values.push_back(probe_at(ex, data, layer, s, metric, head_cfg));
  }
  for (int r = 0; r < num_noise_seeds; ++r) {
    NoisyModelFeatureExtractor ex(model, Rng::splitmix64(seed) + r);
    rep.noisy_values.push_back(probe_at(ex, data, layer, s, metric, head_cfg));
  }
  return rep;
}

// Resolution sweep: downsample raw windows, recompute the STFT with the
// window geometry scaled by 1/factor (window duration and frame count
// held), zero-pad the frequency axis back to the base bin count,
// renormalize on the factor's training split, and probe at the fixed
// (layer, flow time) cell.
struct SweepRow {
  int factor = 1;
  bool skipped = false;
  double metric = 0.0;
};

inline std::vector<SweepRow> resolution_sweep(FlowModel<float>& model, const DatasetMeta& meta,
                                              const std::vector<LabeledWindow>& windows,
                                              const PipelineConfig& base_cfg,
                                              const std::vector<int>& factors, int layer,
                                              double s, ValMetric metric,
                                              const HeadConfig& head_cfg = {}) {
  std::vector<SweepRow> rows;
  int base_bins = base_cfg.window.freq_bins();
  for (int factor : factors) {
    SweepRow row;
    row.factor = factor;
    int nperseg = base_cfg.window.nperseg / factor;
    int hop = std::max(1, base_cfg.window.hop() / factor);
    if (factor < 1 || nperseg < 2) {
      row.skipped = true;
      rows.push_back(row);
      continue;
    }
    PipelineConfig cfg = base_cfg;
    cfg.window = WindowSpec{nperseg, nperseg - hop};

    std::vector<LabeledWindow> down(windows.size());
    for (size_t i = 0; i < windows.size(); ++i) {
      down[i] = windows[i];
      down[i].series = downsample(windows[i].series, factor);
    }
    // build spectrograms at the reduced geometry, pad back to base bins
    std::vector<Spectrogram> sgs(down.size()), train_sgs;
    for (size_t i = 0; i < down.size(); ++i) {
      sgs[i] = zero_pad_frequency(window_spectrogram(down[i].series, cfg), base_bins);
      if (down[i].split == Split::train) train_sgs.push_back(sgs[i]);
    }
    NormStats stats = normalize_fit(train_sgs);
    ProbeData data;
    data.mode = meta.mode;
    data.num_classes = meta.num_classes;
    for (size_t i = 0; i < down.size(); ++i) {
      ProbeSplit* split = down[i].split == Split::train ? &data.train
                          : down[i].split == Split::val ? &data.val
                                                        : &data.test;
      split->phis.push_back(normalize_apply(sgs[i], stats).magnitudes);
      split->class_labels.push_back(down[i].class_label);
      split->targets.push_back(down[i].target);
    }
    ModelFeatureExtractor ex(model);
    row.metric = probe_at(ex, data, layer, s, metric, head_cfg);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace fgno
