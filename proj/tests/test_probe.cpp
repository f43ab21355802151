#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fgno/probe.hpp"

using namespace fgno;

namespace {

// brute-force pairwise AUROC, ties one half
double auroc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0;
  long pairs = 0;
  for (size_t i = 0; i < s.size(); ++i)
    for (size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j]) wins += 1;
      else if (s[i] == s[j]) wins += 0.5;
    }
  return wins / pairs;
}

}  // namespace

TEST_CASE("pooling examples") {
  Tensor<double> z({2, 3}, {1, 2, 3, 5, 6, 7});
  CHECK(pool_features(z) == std::vector<double>{3, 4, 5});
  CHECK(pool_features_max(z) == std::vector<double>{5, 6, 7});
  CHECK_THROWS_AS(pool_features(Tensor<double>({3})), std::invalid_argument);
  CHECK_THROWS_AS(pool_features(Tensor<double>({0, 3})), std::invalid_argument);
}

TEST_CASE("auroc hand-worked examples") {
  CHECK(auroc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == doctest::Approx(0.75));
  CHECK(auroc({0.1, 0.2, 0.3, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
  CHECK(auroc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == doctest::Approx(0.0));
  CHECK(auroc({0.5, 0.5}, {0, 1}) == doctest::Approx(0.5));          // full tie
  CHECK(auroc({0.3, 0.3, 0.7}, {0, 1, 1}) == doctest::Approx(0.75));  // partial tie
  CHECK_THROWS_AS(auroc({0.1, 0.2}, {1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(auroc({0.1}, {0, 1}), std::invalid_argument);
}

TEST_CASE("auroc matches the pairwise oracle on random instances with heavy ties") {
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    int n = 2 + static_cast<int>(rng.uniform_int(30));
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.uniform_int(6)) / 5.0;  // few levels => many ties
      y[i] = static_cast<int>(rng.uniform_int(2));
    }
    y[0] = 0;
    y[1] = 1;  // ensure both classes
    CHECK(auroc(s, y) == doctest::Approx(auroc_pairs(s, y)).epsilon(1e-12));
  }
}

TEST_CASE("accuracy and macro F1 examples") {
  CHECK(accuracy({0, 1, 1, 0}, {0, 1, 0, 0}) == doctest::Approx(0.75));
  CHECK_THROWS_AS(accuracy({}, {}), std::invalid_argument);

  // class 2 absent from labels and predicted once: contributes zero
  CHECK(macro_f1({0, 0, 1, 2}, {0, 1, 1, 1}, 3) ==
        doctest::Approx((2.0 / 3.0 + 0.5 + 0.0) / 3.0));
  CHECK(macro_f1({0, 1}, {0, 1}, 2) == doctest::Approx(1.0));
  CHECK(macro_f1({1, 0}, {0, 1}, 2) == doctest::Approx(0.0));
  CHECK_THROWS_AS(macro_f1({0}, {0}, 1), std::invalid_argument);
}

TEST_CASE("rmse examples") {
  CHECK(rmse({1, 2, 3}, {1, 2, 3}) == doctest::Approx(0.0));
  CHECK(rmse({0, 0}, {3, 4}) == doctest::Approx(std::sqrt(12.5)));
  CHECK_THROWS_AS(rmse({1}, {1, 2}), std::invalid_argument);
}

TEST_CASE("classification head separates gaussian blobs") {
  Rng rng(7);
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    int c = i % 2;
    x.push_back({(c ? 3.0 : -3.0) + rng.normal(), rng.normal()});
    y.push_back(c);
  }
  auto head = fit_head_classification(x, y, 2);
  std::vector<int> preds;
  std::vector<double> scores;
  for (const auto& xi : x) {
    preds.push_back(head.predict_class(xi));
    scores.push_back(head.positive_score(xi));
    auto p = head.probabilities(xi);
    CHECK(p[0] + p[1] == doctest::Approx(1.0));
  }
  CHECK(accuracy(preds, y) > 0.97);
  CHECK(auroc(scores, y) > 0.99);

  // refit is deterministic
  auto head2 = fit_head_classification(x, y, 2);
  CHECK(head.weights == head2.weights);
  CHECK(head.bias == head2.bias);
}

TEST_CASE("classification head input validation") {
  std::vector<std::vector<double>> x{{0.0}, {1.0}};
  CHECK_THROWS_AS(fit_head_classification(x, {0, 0}, 2), std::invalid_argument);  // one class
  CHECK_THROWS_AS(fit_head_classification(x, {0, 2}, 2), std::invalid_argument);  // range
  CHECK_THROWS_AS(fit_head_classification(x, {0}, 2), std::invalid_argument);     // mismatch
  CHECK_THROWS_AS(fit_head_classification({{0.0}}, {0}, 2), std::invalid_argument);
}

TEST_CASE("three-class head") {
  Rng rng(8);
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  double cx[3] = {-4, 0, 4};
  for (int i = 0; i < 300; ++i) {
    int c = i % 3;
    x.push_back({cx[c] + 0.5 * rng.normal(), 0.5 * rng.normal()});
    y.push_back(c);
  }
  auto head = fit_head_classification(x, y, 3);
  std::vector<int> preds;
  for (const auto& xi : x) preds.push_back(head.predict_class(xi));
  CHECK(accuracy(preds, y) > 0.97);
  CHECK(macro_f1(preds, y, 3) > 0.97);
}

TEST_CASE("regression head recovers a noiseless linear map") {
  Rng rng(9);
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (int i = 0; i < 100; ++i) {
    double a = rng.normal(), b = rng.normal();
    x.push_back({a, b});
    y.push_back(2.0 * a - b + 0.5);
  }
  HeadConfig cfg;
  cfg.lambda = 1e-10;
  auto head = fit_head_regression(x, y, cfg);
  std::vector<double> preds;
  for (const auto& xi : x) preds.push_back(head.predict_reg(xi));
  CHECK(rmse(preds, y) < 1e-6);

  // heavy ridge shrinks toward the mean predictor
  HeadConfig heavy;
  heavy.lambda = 1e6;
  auto shrunk = fit_head_regression(x, y, heavy);
  for (double w : shrunk.weights) CHECK(std::abs(w) < 1e-3);
}

TEST_CASE("stratified subsampling") {
  std::vector<int> labels;
  for (int i = 0; i < 100; ++i) labels.push_back(i < 80 ? 0 : 1);  // 80/20

  auto all = subsample_labels(labels, 1.0, 0);
  CHECK(all.indices.size() == 100);
  CHECK_FALSE(all.deviated);

  auto half = subsample_labels(labels, 0.5, 1);
  CHECK(half.indices.size() == 50);
  long c1 = 0;
  for (auto i : half.indices) c1 += labels[i];
  CHECK(c1 == 10);  // proportions preserved

  auto again = subsample_labels(labels, 0.5, 1);
  CHECK(again.indices == half.indices);
  auto other = subsample_labels(labels, 0.5, 2);
  CHECK(other.indices != half.indices);

  // tiny fraction keeps the minority class alive and reports the deviation
  auto tiny = subsample_labels(labels, 0.02, 3);
  long minority = 0;
  for (auto i : tiny.indices) minority += labels[i];
  CHECK(minority >= 1);
  CHECK(tiny.deviated);

  CHECK_THROWS_AS(subsample_labels(labels, 0.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(subsample_labels(labels, 1.5, 0), std::invalid_argument);
}

TEST_CASE("uniform subsampling") {
  auto r = subsample_uniform(40, 0.25, 5);
  CHECK(r.indices.size() == 10);
  for (auto i : r.indices) CHECK(i < 40);
  CHECK(std::set<size_t>(r.indices.begin(), r.indices.end()).size() == 10);
  CHECK(subsample_uniform(40, 0.25, 5).indices == r.indices);
  CHECK(subsample_uniform(7, 1.0, 0).indices.size() == 7);
}

TEST_CASE("metric name round trips") {
  for (auto m : {ValMetric::loss, ValMetric::auroc, ValMetric::accuracy, ValMetric::rmse})
    CHECK(val_metric_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(val_metric_from_string("f1"), std::invalid_argument);
  CHECK(metric_higher_is_better(ValMetric::auroc));
  CHECK_FALSE(metric_higher_is_better(ValMetric::rmse));
}

namespace {

// Stub extractor driven by per-cell noise levels. Each window phi is a
// 2 x 1 grid: phi[0] = class label, phi[1] = window id. Features for layer
// l at time s are the label plus deterministic pseudo-noise of magnitude
// noise[l-1][time index], so lower noise means a higher AUROC. Also logs
// every (id, s) query for the call-contract checks.
struct StubExtractor : FeatureExtractor {
  std::vector<std::vector<double>> noise;  // layers x times
  std::vector<double> time_grid;
  mutable std::vector<std::pair<int, double>> calls;

  int num_layers() const override { return static_cast<int>(noise.size()); }
  std::vector<std::vector<double>> layers_at(const Tensor<double>& phi, double s) override {
    calls.push_back({static_cast<int>(phi.v[1]), s});
    size_t si = 0;
    while (si < time_grid.size() && time_grid[si] != s) ++si;
    std::vector<std::vector<double>> out;
    for (size_t l = 0; l < noise.size(); ++l) {
      // deterministic pseudo-noise keyed on (id, layer)
      uint64_t h = Rng::splitmix64(static_cast<uint64_t>(phi.v[1]) * 31 + l);
      double u = static_cast<double>(h % 10000) / 10000.0 - 0.5;
      out.push_back({phi.v[0] + noise[l][si] * u});
    }
    return out;
  }
};

ProbeData stub_data(int n_train, int n_val, int n_test) {
  ProbeData data;
  data.mode = TaskMode::classification;
  data.num_classes = 2;
  int id = 0;
  auto fill = [&](ProbeSplit& split, int n) {
    for (int i = 0; i < n; ++i) {
      split.phis.push_back(Tensor<double>({2, 1}, {static_cast<double>(i % 2),
                                                   static_cast<double>(id++)}));
      split.class_labels.push_back(i % 2);
    }
  };
  fill(data.train, n_train);
  fill(data.val, n_val);
  fill(data.test, n_test);
  return data;
}

}  // namespace

TEST_CASE("grid search selects the best cell and defers test extraction") {
  StubExtractor ex;
  ex.time_grid = {0.0, 0.5, 1.0};
  ex.noise = {{3.0, 3.0, 3.0},
              {3.0, 0.1, 3.0},   // clear winner at (layer 2, s = 0.5)
              {3.0, 1.0, 3.0}};
  auto data = stub_data(40, 20, 20);

  auto res = grid_search(ex, data, {1, 2, 3}, ex.time_grid, ValMetric::auroc);
  CHECK(res.best_layer == 2);
  CHECK(res.best_time == 0.5);
  CHECK(res.val_metric.size() == 3);
  CHECK(res.val_metric[0].size() == 3);
  CHECK(res.best_val == res.val_metric[1][1]);
  for (size_t li = 0; li < 3; ++li)
    for (size_t si = 0; si < 3; ++si)
      CHECK(res.val_metric[li][si] <= res.best_val);
  CHECK(res.best_val > 0.99);
  CHECK(res.test_metric > 0.99);
  CHECK(res.train_rows == 40);

  // test windows (ids 60..79) are queried only at the winning time, once each
  std::vector<int> test_hits;
  for (auto& [id, s] : ex.calls)
    if (id >= 60) {
      CHECK(s == 0.5);
      test_hits.push_back(id);
    }
  CHECK(test_hits.size() == 20);
}

TEST_CASE("grid search breaks ties by smallest layer then smallest time") {
  StubExtractor ex;
  ex.time_grid = {0.0, 0.5, 1.0};
  ex.noise = {{3.0, 3.0, 3.0},
              {3.0, 0.0, 0.0},   // exact ties: noiseless cells score identically
              {0.0, 3.0, 3.0}};
  auto data = stub_data(40, 20, 10);

  auto res = grid_search(ex, data, {1, 2, 3}, ex.time_grid, ValMetric::auroc);
  // (2, 0.5), (2, 1.0) and (3, 0.0) all tie at the top; smallest layer wins,
  // then the smallest time within it
  CHECK(res.val_metric[1][1] == res.val_metric[1][2]);
  CHECK(res.val_metric[1][1] == res.val_metric[2][0]);
  CHECK(res.best_layer == 2);
  CHECK(res.best_time == 0.5);
}

TEST_CASE("grid search honors lower-is-better metrics and validates input") {
  StubExtractor ex;
  ex.time_grid = {0.0, 1.0};
  ex.noise = {{3.0, 0.1}};
  auto data = stub_data(40, 20, 10);

  auto res = grid_search(ex, data, {1}, ex.time_grid, ValMetric::loss);
  CHECK_FALSE(res.higher_is_better);
  CHECK(res.best_time == 1.0);
  CHECK(res.best_val < res.val_metric[0][0]);

  CHECK_THROWS_AS(grid_search(ex, data, {}, ex.time_grid, ValMetric::loss),
                  std::invalid_argument);
  CHECK_THROWS_AS(grid_search(ex, data, {2}, ex.time_grid, ValMetric::loss),
                  std::invalid_argument);
}

TEST_CASE("grid search errors carry the failing cell coordinates") {
  StubExtractor ex;
  ex.time_grid = {0.25};
  ex.noise = {{1.0}};
  auto data = stub_data(10, 4, 4);
  for (auto& y : data.train.class_labels) y = 0;  // single-class train set
  try {
    grid_search(ex, data, {1}, ex.time_grid, ValMetric::auroc);
    FAIL("expected a throw");
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("layer 1") != std::string::npos);
    CHECK(msg.find("0.25") != std::string::npos);
  }
}

TEST_CASE("grid result serialization") {
  GridSearchResult res;
  res.layers = {1, 2};
  res.times = {0.0, 0.5};
  res.metric = ValMetric::auroc;
  res.higher_is_better = true;
  res.val_metric = {{0.7, 0.8}, {0.9, 0.6}};
  res.best_layer = 2;
  res.best_time = 0.0;
  res.best_val = 0.9;
  res.test_metric = 0.85;
  res.train_rows = 100;

  auto j = res.to_json();
  CHECK(j.at("selected_layer") == 2);
  CHECK(j.at("selected_flow_time") == 0.0);
  CHECK(j.at("metric") == "auroc");
  CHECK(j.at("val_metric_matrix")[1][0] == 0.9);
  CHECK(j.at("test_metric") == 0.85);

  auto path = (std::filesystem::temp_directory_path() / "fgno_test_grid.csv").string();
  res.write_matrix_csv(path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "layer,s=0,s=0.5");
  std::getline(f, line);
  CHECK(line.substr(0, 2) == "1,");
  std::getline(f, line);
  CHECK(line.substr(0, 2) == "2,");
  std::filesystem::remove(path);
}
