#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgno/dataset.hpp"
#include "fgno/rng.hpp"
#include "fgno/tensor.hpp"

namespace fgno {

// Mean over the T time-frame tokens of a T x d feature grid.
inline std::vector<double> pool_features(const Tensor<double>& z) {
  if (z.shape.size() != 2 || z.rows() < 1)
    throw std::invalid_argument("pool_features: expected non-empty T x d grid, got " +
                                shape_str(z.shape));
  int t = z.rows(), d = z.cols();
  std::vector<double> out(d, 0.0);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j) out[j] += z.at(i, j);
  for (auto& x : out) x /= t;
  return out;
}

inline std::vector<double> pool_features_max(const Tensor<double>& z) {
  if (z.shape.size() != 2 || z.rows() < 1)
    throw std::invalid_argument("pool_features_max: expected non-empty T x d grid");
  int t = z.rows(), d = z.cols();
  std::vector<double> out(z.v.begin(), z.v.begin() + d);
  for (int i = 1; i < t; ++i)
    for (int j = 0; j < d; ++j) out[j] = std::max(out[j], z.at(i, j));
  return out;
}

// ---- metrics -------------------------------------------------------------

// Rank-formulation AUROC: probability a random positive outscores a random
// negative, ties counted one half.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auroc: " + std::to_string(scores.size()) + " scores vs " +
                                std::to_string(labels.size()) + " labels");
  size_t n = scores.size();
  long n_pos = std::count(labels.begin(), labels.end(), 1);
  long n_neg = static_cast<long>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auroc: both classes must be present");
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  // average ranks over tie groups, then rank-sum of positives
  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    double avg_rank = 0.5 * ((i + 1) + j);  // ranks are 1-based
    for (size_t k = i; k < j; ++k)
      if (labels[idx[k]] == 1) pos_rank_sum += avg_rank;
    i = j;
  }
  return (pos_rank_sum - 0.5 * n_pos * (n_pos + 1)) / (static_cast<double>(n_pos) * n_neg);
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& labels) {
  if (pred.size() != labels.size())
    throw std::invalid_argument("accuracy: length mismatch");
  if (pred.empty()) throw std::invalid_argument("accuracy: empty input");
  long hit = 0;
  for (size_t i = 0; i < pred.size(); ++i) hit += (pred[i] == labels[i]);
  return static_cast<double>(hit) / pred.size();
}

// Unweighted mean of per-class F1 over K classes; a class with zero
// precision+recall (including absent classes) contributes 0.
inline double macro_f1(const std::vector<int>& pred, const std::vector<int>& labels, int k) {
  if (pred.size() != labels.size()) throw std::invalid_argument("macro_f1: length mismatch");
  if (k < 2) throw std::invalid_argument("macro_f1: need K >= 2");
  double total = 0.0;
  for (int c = 0; c < k; ++c) {
    long tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == c && labels[i] == c) ++tp;
      else if (pred[i] == c) ++fp;
      else if (labels[i] == c) ++fn;
    }
    double p = (tp + fp > 0) ? static_cast<double>(tp) / (tp + fp) : 0.0;
    double r = (tp + fn > 0) ? static_cast<double>(tp) / (tp + fn) : 0.0;
    total += (p + r > 0) ? 2.0 * p * r / (p + r) : 0.0;
  }
  return total / k;
}

inline double rmse(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size()) throw std::invalid_argument("rmse: length mismatch");
  if (pred.empty()) throw std::invalid_argument("rmse: empty input");
  double s = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double d = pred[i] - target[i];
    s += d * d;
  }
  return std::sqrt(s / pred.size());
}

// ---- probing head --------------------------------------------------------

struct HeadConfig {
  double lambda = 1e-4;   // L2 penalty
  int max_iters = 2000;
  double grad_tol = 1e-6;
};

// Linear head on frozen features. Classification is multinomial logistic
// regression fit by full-batch gradient descent; regression is ridge in
// closed form. Features are standardized with statistics from the fitting
// set, kept with the head.
struct ProbeHead {
  TaskMode mode = TaskMode::classification;
  int num_classes = 0;
  int d_feat = 0;
  std::vector<double> weights;  // K x d (classification) or d (regression)
  std::vector<double> bias;     // K or 1
  std::vector<double> feat_mean, feat_std;

  std::vector<double> standardize(const std::vector<double>& x) const {
    std::vector<double> z(x.size());
    for (size_t j = 0; j < x.size(); ++j) z[j] = (x[j] - feat_mean[j]) / feat_std[j];
    return z;
  }

  std::vector<double> logits(const std::vector<double>& x) const {
    auto z = standardize(x);
    std::vector<double> out(num_classes);
    for (int c = 0; c < num_classes; ++c) {
      double s = bias[c];
      for (int j = 0; j < d_feat; ++j) s += weights[static_cast<size_t>(c) * d_feat + j] * z[j];
      out[c] = s;
    }
    return out;
  }
  std::vector<double> probabilities(const std::vector<double>& x) const {
    auto lg = logits(x);
    double mx = *std::max_element(lg.begin(), lg.end());
    double sum = 0.0;
    for (auto& v : lg) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : lg) v /= sum;
    return lg;
  }
  int predict_class(const std::vector<double>& x) const {
    auto lg = logits(x);
    return static_cast<int>(std::max_element(lg.begin(), lg.end()) - lg.begin());
  }
  // score of class 1, for AUROC on binary tasks
  double positive_score(const std::vector<double>& x) const { return probabilities(x)[1]; }

  double predict_reg(const std::vector<double>& x) const {
    auto z = standardize(x);
    double s = bias[0];
    for (int j = 0; j < d_feat; ++j) s += weights[j] * z[j];
    return s;
  }
};

namespace detail {

inline void fit_standardizer(const std::vector<std::vector<double>>& x, ProbeHead& head) {
  size_t n = x.size(), d = x[0].size();
  head.d_feat = static_cast<int>(d);
  head.feat_mean.assign(d, 0.0);
  head.feat_std.assign(d, 0.0);
  for (const auto& row : x)
    for (size_t j = 0; j < d; ++j) head.feat_mean[j] += row[j];
  for (auto& m : head.feat_mean) m /= n;
  for (const auto& row : x)
    for (size_t j = 0; j < d; ++j) {
      double dd = row[j] - head.feat_mean[j];
      head.feat_std[j] += dd * dd;
    }
  for (auto& s : head.feat_std) s = std::max(std::sqrt(s / n), 1e-8);
}

// Largest eigenvalue of (Z^T Z / n) by power iteration; deterministic start.
inline double top_eigenvalue(const std::vector<std::vector<double>>& z) {
  size_t n = z.size(), d = z[0].size();
  std::vector<double> v(d, 1.0 / std::sqrt(static_cast<double>(d)));
  double lam = 0.0;
  for (int it = 0; it < 50; ++it) {
    std::vector<double> zv(n, 0.0);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < d; ++j) zv[i] += z[i][j] * v[j];
    std::vector<double> w(d, 0.0);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < d; ++j) w[j] += z[i][j] * zv[i];
    for (auto& x : w) x /= n;
    double norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
    if (norm < 1e-300) return 1.0;
    lam = norm;
    for (size_t j = 0; j < d; ++j) v[j] = w[j] / norm;
  }
  return lam;
}

// Cholesky solve of (A) x = b for symmetric positive definite A (d x d).
inline std::vector<double> spd_solve(std::vector<double> a, std::vector<double> b, int d) {
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[static_cast<size_t>(i) * d + j];
      for (int k = 0; k < j; ++k)
        s -= a[static_cast<size_t>(i) * d + k] * a[static_cast<size_t>(j) * d + k];
      if (i == j) {
        if (s <= 0) throw std::runtime_error("spd_solve: matrix not positive definite");
        a[static_cast<size_t>(i) * d + j] = std::sqrt(s);
      } else {
        a[static_cast<size_t>(i) * d + j] = s / a[static_cast<size_t>(j) * d + j];
      }
    }
  }
  for (int i = 0; i < d; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= a[static_cast<size_t>(i) * d + k] * b[k];
    b[i] = s / a[static_cast<size_t>(i) * d + i];
  }
  for (int i = d - 1; i >= 0; --i) {
    double s = b[i];
    for (int k = i + 1; k < d; ++k) s -= a[static_cast<size_t>(k) * d + i] * b[k];
    b[i] = s / a[static_cast<size_t>(i) * d + i];
  }
  return b;
}

}  // namespace detail

inline ProbeHead fit_head_classification(const std::vector<std::vector<double>>& features,
                                         const std::vector<int>& labels, int num_classes,
                                         const HeadConfig& cfg = {}) {
  if (features.size() < 2) throw std::invalid_argument("fit_head: need >= 2 samples");
  if (features.size() != labels.size())
    throw std::invalid_argument("fit_head: feature/label length mismatch");
  std::vector<int> present(num_classes, 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw std::invalid_argument("fit_head: label out of range");
    present[y] = 1;
  }
  if (std::accumulate(present.begin(), present.end(), 0) < 2)
    throw std::invalid_argument("fit_head: training set contains a single class");

  ProbeHead head;
  head.mode = TaskMode::classification;
  head.num_classes = num_classes;
  detail::fit_standardizer(features, head);
  size_t n = features.size();
  int d = head.d_feat;
  std::vector<std::vector<double>> z(n);
  for (size_t i = 0; i < n; ++i) z[i] = head.standardize(features[i]);

  head.weights.assign(static_cast<size_t>(num_classes) * d, 0.0);
  head.bias.assign(num_classes, 0.0);
  // gradient-descent step size from the logistic-loss Lipschitz bound
  double lr = 1.0 / (0.5 * detail::top_eigenvalue(z) + cfg.lambda + 0.5);

  std::vector<double> gw(head.weights.size()), gb(num_classes), p(num_classes);
  for (int it = 0; it < cfg.max_iters; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (size_t i = 0; i < n; ++i) {
      double mx = -1e300;
      for (int c = 0; c < num_classes; ++c) {
        double s = head.bias[c];
        for (int j = 0; j < d; ++j) s += head.weights[static_cast<size_t>(c) * d + j] * z[i][j];
        p[c] = s;
        mx = std::max(mx, s);
      }
      double sum = 0.0;
      for (auto& v : p) {
        v = std::exp(v - mx);
        sum += v;
      }
      for (int c = 0; c < num_classes; ++c) {
        double r = p[c] / sum - (labels[i] == c ? 1.0 : 0.0);
        gb[c] += r;
        for (int j = 0; j < d; ++j) gw[static_cast<size_t>(c) * d + j] += r * z[i][j];
      }
    }
    double gnorm_sq = 0.0;
    for (size_t k = 0; k < gw.size(); ++k) {
      gw[k] = gw[k] / n + cfg.lambda * head.weights[k];
      gnorm_sq += gw[k] * gw[k];
    }
    for (int c = 0; c < num_classes; ++c) {
      gb[c] /= n;
      gnorm_sq += gb[c] * gb[c];
    }
    if (std::sqrt(gnorm_sq) < cfg.grad_tol) break;
    for (size_t k = 0; k < gw.size(); ++k) head.weights[k] -= lr * gw[k];
    for (int c = 0; c < num_classes; ++c) head.bias[c] -= lr * gb[c];
  }
  return head;
}

inline ProbeHead fit_head_regression(const std::vector<std::vector<double>>& features,
                                     const std::vector<double>& targets,
                                     const HeadConfig& cfg = {}) {
  if (features.size() < 2) throw std::invalid_argument("fit_head: need >= 2 samples");
  if (features.size() != targets.size())
    throw std::invalid_argument("fit_head: feature/target length mismatch");
  ProbeHead head;
  head.mode = TaskMode::regression;
  head.num_classes = 0;
  detail::fit_standardizer(features, head);
  size_t n = features.size();
  int d = head.d_feat;

  // ridge on standardized features, centered targets; closed form
  double ymean = std::accumulate(targets.begin(), targets.end(), 0.0) / n;
  std::vector<double> gram(static_cast<size_t>(d) * d, 0.0), xty(d, 0.0);
  for (size_t i = 0; i < n; ++i) {
    auto z = head.standardize(features[i]);
    double yc = targets[i] - ymean;
    for (int a = 0; a < d; ++a) {
      xty[a] += z[a] * yc;
      for (int b = 0; b <= a; ++b) gram[static_cast<size_t>(a) * d + b] += z[a] * z[b];
    }
  }
  for (int a = 0; a < d; ++a)
    for (int b = a + 1; b < d; ++b)
      gram[static_cast<size_t>(a) * d + b] = gram[static_cast<size_t>(b) * d + a];
  for (auto& g : gram) g /= n;
  for (auto& x : xty) x /= n;
  for (int a = 0; a < d; ++a) gram[static_cast<size_t>(a) * d + a] += cfg.lambda;

  head.weights = detail::spd_solve(std::move(gram), std::move(xty), d);
  double b0 = ymean;  // standardized features have zero mean on the fit set
  head.bias = {b0};
  return head;
}

// Stratified subsample preserving class proportions (classification) or a
// uniform subsample (regression). Keeps at least one sample per present
// class even when the fraction would eliminate it; `deviated` reports that
// case. Deterministic per seed.
struct SubsampleResult {
  std::vector<size_t> indices;
  bool deviated = false;
};

inline SubsampleResult subsample_labels(const std::vector<int>& labels, double fraction,
                                        uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw std::invalid_argument("subsample_labels: fraction must be in (0, 1]");
  size_t n = labels.size();
  SubsampleResult res;
  if (fraction == 1.0) {
    res.indices.resize(n);
    std::iota(res.indices.begin(), res.indices.end(), size_t{0});
    return res;
  }
  std::map<int, std::vector<size_t>> by_class;
  for (size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);

  // largest-remainder allocation of the global target across classes
  long target = std::max<long>(1, std::lround(fraction * n));
  std::vector<std::pair<int, double>> rem;
  std::map<int, long> take;
  long used = 0;
  for (auto& [c, idx] : by_class) {
    double exact = fraction * idx.size();
    take[c] = static_cast<long>(std::floor(exact));
    rem.push_back({c, exact - take[c]});
    used += take[c];
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (auto& [c, r] : rem) {
    if (used >= target) break;
    ++take[c];
    ++used;
  }
  for (auto& [c, idx] : by_class) {
    if (take[c] == 0) {
      take[c] = 1;
      res.deviated = true;
    }
    take[c] = std::min<long>(take[c], static_cast<long>(idx.size()));
  }
  Rng rng(seed);
  for (auto& [c, idx] : by_class) {
    std::vector<size_t> pool = idx;
    std::shuffle(pool.begin(), pool.end(), rng.engine());
    pool.resize(take[c]);
    res.indices.insert(res.indices.end(), pool.begin(), pool.end());
  }
  std::sort(res.indices.begin(), res.indices.end());
  return res;
}

inline SubsampleResult subsample_uniform(size_t n, double fraction, uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw std::invalid_argument("subsample_uniform: fraction must be in (0, 1]");
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  if (fraction == 1.0) return {idx, false};
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  idx.resize(std::max<size_t>(1, static_cast<size_t>(std::lround(fraction * n))));
  std::sort(idx.begin(), idx.end());
  return {idx, false};
}

// ---- grid search ---------------------------------------------------------

// Pooled features for every backbone layer at flow time s. The real
// implementation wraps the frozen model; tests may stub it.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual int num_layers() const = 0;
  virtual std::vector<std::vector<double>> layers_at(const Tensor<double>& phi, double s) = 0;
};

enum class ValMetric { loss, auroc, accuracy, rmse };

inline std::string to_string(ValMetric m) {
  switch (m) {
    case ValMetric::loss: return "loss";
    case ValMetric::auroc: return "auroc";
    case ValMetric::accuracy: return "accuracy";
    default: return "rmse";
  }
}
inline ValMetric val_metric_from_string(const std::string& s) {
  if (s == "loss") return ValMetric::loss;
  if (s == "auroc") return ValMetric::auroc;
  if (s == "accuracy") return ValMetric::accuracy;
  if (s == "rmse") return ValMetric::rmse;
  throw std::invalid_argument("unknown metric '" + s + "'");
}
inline bool metric_higher_is_better(ValMetric m) {
  return m == ValMetric::auroc || m == ValMetric::accuracy;
}

// One split's probing data: normalized spectrogram grids plus labels.
struct ProbeSplit {
  std::vector<Tensor<double>> phis;
  std::vector<int> class_labels;     // classification
  std::vector<double> targets;       // regression
};

struct ProbeData {
  TaskMode mode = TaskMode::classification;
  int num_classes = 0;
  ProbeSplit train, val, test;
};

struct GridSearchResult {
  std::vector<int> layers;
  std::vector<double> times;
  std::vector<std::vector<double>> val_metric;  // layers x times
  ValMetric metric = ValMetric::loss;
  bool higher_is_better = false;
  int best_layer = -1;
  double best_time = -1.0;
  double best_val = 0.0;
  double test_metric = 0.0;
  long train_rows = 0;

  nlohmann::json to_json() const {
    return {{"layers", layers},
            {"flow_times", times},
            {"metric", to_string(metric)},
            {"higher_is_better", higher_is_better},
            {"val_metric_matrix", val_metric},
            {"selected_layer", best_layer},
            {"selected_flow_time", best_time},
            {"selected_val_metric", best_val},
            {"test_metric", test_metric},
            {"train_rows", train_rows}};
  }

  // rows = layers, columns = flow times; heatmap-ready
  void write_matrix_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "layer";
    char buf[64];
    for (double s : times) {
      std::snprintf(buf, sizeof(buf), "%.17g", s);
      f << ",s=" << buf;
    }
    f << "\n";
    for (size_t li = 0; li < layers.size(); ++li) {
      f << layers[li];
      for (size_t si = 0; si < times.size(); ++si) {
        std::snprintf(buf, sizeof(buf), "%.17g", val_metric[li][si]);
        f << "," << buf;
      }
      f << "\n";
    }
  }
};

namespace detail {

struct HeadScore {
  ProbeHead head;
  double metric;
};

inline double score_split(const ProbeHead& head, const std::vector<std::vector<double>>& feats,
                          const ProbeSplit& split, TaskMode mode, ValMetric metric) {
  if (mode == TaskMode::classification) {
    switch (metric) {
      case ValMetric::auroc: {
        std::vector<double> scores;
        for (const auto& x : feats) scores.push_back(head.positive_score(x));
        return auroc(scores, split.class_labels);
      }
      case ValMetric::accuracy: {
        std::vector<int> preds;
        for (const auto& x : feats) preds.push_back(head.predict_class(x));
        return accuracy(preds, split.class_labels);
      }
      case ValMetric::loss: {
        double ll = 0.0;
        for (size_t i = 0; i < feats.size(); ++i) {
          auto p = head.probabilities(feats[i]);
          ll -= std::log(std::max(p[split.class_labels[i]], 1e-15));
        }
        return ll / feats.size();
      }
      default:
        throw std::invalid_argument("rmse metric on a classification task");
    }
  }
  std::vector<double> preds;
  for (const auto& x : feats) preds.push_back(head.predict_reg(x));
  if (metric == ValMetric::rmse || metric == ValMetric::loss)
    return rmse(preds, split.targets);
  throw std::invalid_argument("classification metric on a regression task");
}

}  // namespace detail

// Grid search over (layer, flow time): fit a head on clean-input train
// features, score on validation, pick the val-optimal cell (ties broken by
// smallest layer then smallest time), then refit and report the test
// metric for the selected cell only. Test features are extracted only
// after selection.
inline GridSearchResult grid_search(FeatureExtractor& extractor, const ProbeData& data,
                                    const std::vector<int>& layers,
                                    const std::vector<double>& times, ValMetric metric,
                                    const HeadConfig& head_cfg = {}) {
  if (layers.empty() || times.empty())
    throw std::invalid_argument("grid_search: empty layer or time set");
  for (int l : layers)
    if (l < 1 || l > extractor.num_layers())
      throw std::invalid_argument("grid_search: layer " + std::to_string(l) + " out of range");

  GridSearchResult res;
  res.layers = layers;
  res.times = times;
  res.metric = metric;
  res.higher_is_better = metric_higher_is_better(metric);
  res.train_rows = static_cast<long>(data.train.phis.size());
  res.val_metric.assign(layers.size(), std::vector<double>(times.size(), 0.0));

  // cache: per time index, per window, per layer (extractor layers are 1-based)
  auto extract_split = [&](const ProbeSplit& split, double s) {
    std::vector<std::vector<std::vector<double>>> feats;
    feats.reserve(split.phis.size());
    for (const auto& phi : split.phis) feats.push_back(extractor.layers_at(phi, s));
    return feats;
  };

  std::vector<std::vector<std::vector<std::vector<double>>>> train_cache(times.size()),
      val_cache(times.size());

  auto fit_for = [&](const std::vector<std::vector<double>>& train_feats) {
    if (data.mode == TaskMode::classification)
      return fit_head_classification(train_feats, data.train.class_labels, data.num_classes,
                                     head_cfg);
    return fit_head_regression(train_feats, data.train.targets, head_cfg);
  };
  auto layer_feats = [](const std::vector<std::vector<std::vector<double>>>& cache, int layer) {
    std::vector<std::vector<double>> out;
    out.reserve(cache.size());
    for (const auto& w : cache) out.push_back(w[layer - 1]);
    return out;
  };

  bool have_best = false;
  size_t best_li = 0, best_si = 0;
  for (size_t si = 0; si < times.size(); ++si) {
    train_cache[si] = extract_split(data.train, times[si]);
    val_cache[si] = extract_split(data.val, times[si]);
  }
  for (size_t li = 0; li < layers.size(); ++li) {
    for (size_t si = 0; si < times.size(); ++si) {
      try {
        ProbeHead head = fit_for(layer_feats(train_cache[si], layers[li]));
        double m = detail::score_split(head, layer_feats(val_cache[si], layers[li]), data.val,
                                       data.mode, metric);
        res.val_metric[li][si] = m;
        bool better = !have_best ||
                      (res.higher_is_better ? m > res.best_val : m < res.best_val);
        if (better) {
          have_best = true;
          best_li = li;
          best_si = si;
          res.best_val = m;
        }
      } catch (const std::exception& e) {
        throw std::runtime_error("grid_search cell (layer " + std::to_string(layers[li]) +
                                 ", s " + std::to_string(times[si]) + "): " + e.what());
      }
    }
  }
  res.best_layer = layers[best_li];
  res.best_time = times[best_si];

  // test features only for the winning cell
  ProbeHead head = fit_for(layer_feats(train_cache[best_si], res.best_layer));
  auto test_cache = extract_split(data.test, res.best_time);
  res.test_metric = detail::score_split(head, layer_feats(test_cache, res.best_layer),
                                        data.test, data.mode, metric);
  return res;
}

}  // namespace fgno
