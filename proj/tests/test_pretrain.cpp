#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fgno/pretrain.hpp"

using namespace fgno;

namespace {

ModelConfig tiny_config(int frames = 6) {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.d_model = 16;
  cfg.num_heads = 2;
  cfg.d_ff = 24;
  cfg.dropout = 0.1;
  cfg.freq_bins = 5;
  cfg.max_frames = frames;
  cfg.time_embed_dim = 8;
  return cfg;
}

std::vector<Tensor<float>> toy_grids(int n, int f, int t, uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor<float>> out;
  for (int i = 0; i < n; ++i) {
    Tensor<float> g({f, t});
    // structured data: one hot row per grid plus small noise
    int hot = i % f;
    for (int r = 0; r < f; ++r)
      for (int c = 0; c < t; ++c)
        g.at(r, c) = static_cast<float>((r == hot ? 2.0 : 0.0) + 0.1 * rng.normal());
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  TrainConfig bad = cfg;
  bad.epochs = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.learning_rate = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.mask_ratio = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("flow training is deterministic under a fixed seed") {
  auto data = toy_grids(12, 5, 6, 1);
  auto val = toy_grids(4, 5, 6, 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3;
  cfg.seed = 42;

  FlowModel<float> m1(tiny_config(), 7), m2(tiny_config(), 7);
  auto log1 = train_flow(m1, data, val, cfg);
  auto log2 = train_flow(m2, data, val, cfg);

  REQUIRE(log1.records.size() == log2.records.size());
  for (size_t i = 0; i < log1.records.size(); ++i) {
    CHECK(log1.records[i].loss == log2.records[i].loss);
    CHECK(log1.records[i].split == log2.records[i].split);
  }
  auto p1 = m1.parameters(), p2 = m2.parameters();
  for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i]->value.v == p2[i]->value.v);

  // a different seed gives a different trajectory
  FlowModel<float> m3(tiny_config(), 7);
  TrainConfig cfg3 = cfg;
  cfg3.seed = 43;
  auto log3 = train_flow(m3, data, val, cfg3);
  CHECK(log3.records.front().loss != log1.records.front().loss);
}

TEST_CASE("flow training reduces the loss on structured data") {
  auto data = toy_grids(16, 5, 6, 3);
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.batch_size = 8;
  cfg.learning_rate = 3e-3;
  cfg.seed = 1;

  FlowModel<float> model(tiny_config(), 9);
  auto log = train_flow(model, data, {}, cfg);

  double first = 0, last = 0;
  int n = 0;
  for (const auto& r : log.records)
    if (r.split == "train") {
      if (r.epoch == 1) first += r.loss, ++n;
      if (r.epoch == cfg.epochs) last += r.loss;
    }
  CHECK(last / n < 0.7 * (first / n));
  for (const auto& r : log.records) CHECK(std::isfinite(r.loss));
}

TEST_CASE("log structure: steps are global, one val record per epoch") {
  auto data = toy_grids(10, 5, 6, 4);
  auto val = toy_grids(3, 5, 6, 5);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = 0;
  FlowModel<float> model(tiny_config(), 11);
  auto log = train_flow(model, data, val, cfg);

  int steps_per_epoch = (10 + cfg.batch_size - 1) / cfg.batch_size;
  long expect_train = static_cast<long>(steps_per_epoch) * cfg.epochs;
  long train_count = 0, val_count = 0, max_step = 0;
  for (const auto& r : log.records) {
    if (r.split == "train") {
      ++train_count;
      CHECK(r.step == train_count);  // strictly increasing global step
    } else {
      ++val_count;
    }
    max_step = std::max(max_step, r.step);
  }
  CHECK(train_count == expect_train);
  CHECK(val_count == cfg.epochs);
  CHECK(max_step == expect_train);
}

TEST_CASE("zero epochs yields an empty log; empty train set throws") {
  auto data = toy_grids(4, 5, 6, 6);
  TrainConfig cfg;
  cfg.epochs = 0;
  FlowModel<float> model(tiny_config(), 13);
  CHECK(train_flow(model, data, {}, cfg).records.empty());
  CHECK(train_mae(model, data, {}, cfg).records.empty());
  cfg.epochs = 1;
  CHECK_THROWS_AS(train_flow(model, {}, {}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(train_mae(model, {}, {}, cfg), std::invalid_argument);
}

TEST_CASE("divergence aborts with diagnostics instead of emitting NaNs") {
  auto data = toy_grids(8, 5, 6, 7);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e18;  // guaranteed blow-up
  cfg.seed = 2;
  FlowModel<float> model(tiny_config(), 15);
  CHECK_THROWS_WITH_AS(train_flow(model, data, {}, cfg),
                       doctest::Contains("training aborted"), std::runtime_error);
}

TEST_CASE("checkpoint cadence writes a loadable final checkpoint") {
  auto dir = std::filesystem::temp_directory_path() / "fgno_test_train_ckpt";
  std::filesystem::remove_all(dir);
  auto data = toy_grids(8, 5, 6, 8);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3;
  cfg.seed = 3;
  cfg.checkpoint_dir = dir.string();
  FlowModel<float> model(tiny_config(), 17);
  train_flow(model, data, {}, cfg);

  auto back = FlowModel<float>::load_checkpoint(dir.string());
  auto pa = model.parameters(), pb = back.parameters();
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value.v == pb[i]->value.v);
  std::filesystem::remove_all(dir);
}

TEST_CASE("random_mask masks round(ratio*T) whole columns") {
  Rng rng(9);
  Tensor<float> sg({4, 10});
  for (long i = 0; i < sg.numel(); ++i) sg.v[i] = static_cast<float>(i + 1);

  for (double ratio : {0.25, 0.5, 0.75}) {
    auto [masked, ind] = random_mask(sg, ratio, rng);
    int expect_cols = static_cast<int>(std::llround(ratio * 10));
    int masked_cols = 0;
    for (int c = 0; c < 10; ++c) {
      bool col_masked = ind.at(0, c) == 1.0f;
      for (int r = 0; r < 4; ++r) {
        CHECK(ind.at(r, c) == (col_masked ? 1.0f : 0.0f));  // whole columns
        if (col_masked) CHECK(masked.at(r, c) == 0.0f);
        else CHECK(masked.at(r, c) == sg.at(r, c));
      }
      masked_cols += col_masked;
    }
    CHECK(masked_cols == expect_cols);
  }
  CHECK_THROWS_AS(random_mask(sg, 0.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(random_mask(sg, 1.0, rng), std::invalid_argument);

  Rng a(10), b(10);
  auto ma = random_mask(sg, 0.5, a), mb = random_mask(sg, 0.5, b);
  CHECK(ma.second.v == mb.second.v);
}

TEST_CASE("MAE training is deterministic and reduces the loss") {
  auto data = toy_grids(16, 5, 6, 11);
  auto val = toy_grids(4, 5, 6, 12);
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.batch_size = 8;
  cfg.learning_rate = 3e-3;
  cfg.mask_ratio = 0.5;
  cfg.seed = 5;

  FlowModel<float> m1(tiny_config(), 19), m2(tiny_config(), 19);
  auto log1 = train_mae(m1, data, val, cfg);
  auto log2 = train_mae(m2, data, val, cfg);
  REQUIRE(log1.records.size() == log2.records.size());
  for (size_t i = 0; i < log1.records.size(); ++i)
    CHECK(log1.records[i].loss == log2.records[i].loss);

  double first = 0, last = 0;
  int n = 0;
  for (const auto& r : log1.records)
    if (r.split == "train") {
      if (r.epoch == 1) first += r.loss, ++n;
      if (r.epoch == cfg.epochs) last += r.loss;
    }
  CHECK(last / n < 0.7 * (first / n));
}

TEST_CASE("csv log round-trips losses at full precision") {
  TrainLog log;
  log.add(1, 1, "train", 1.0 / 3.0);
  log.add(2, 1, "train", 0.1234567890123456789);
  log.add(2, 1, "val", 2.5e-17);
  auto path = (std::filesystem::temp_directory_path() / "fgno_test_log.csv").string();
  log.write_csv(path);

  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "step,epoch,split,loss");
  size_t i = 0;
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string step, epoch, split, loss;
    std::getline(ss, step, ',');
    std::getline(ss, epoch, ',');
    std::getline(ss, split, ',');
    std::getline(ss, loss, ',');
    CHECK(std::stol(step) == log.records[i].step);
    CHECK(split == log.records[i].split);
    CHECK(std::stod(loss) == log.records[i].loss);  // bit-exact via %.17g
    ++i;
  }
  CHECK(i == log.records.size());
  std::filesystem::remove(path);
}
