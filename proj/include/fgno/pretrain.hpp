#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgno/autograd.hpp"
#include "fgno/flow.hpp"
#include "fgno/model.hpp"
#include "fgno/rng.hpp"

namespace fgno {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 1e-4;
  uint64_t seed = 0;
  std::string schedule_kind = "linear";
  double s_min = kDefaultSMin;
  double s_max = kDefaultSMax;
  double mask_ratio = 0.5;        // MAE only
  double grad_clip_norm = 1.0;
  int checkpoint_every_epochs = 0;  // 0 = final checkpoint only
  std::string checkpoint_dir;       // empty = no checkpoints written

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (learning_rate <= 0) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (mask_ratio <= 0.0 || mask_ratio >= 1.0)
      throw std::invalid_argument("TrainConfig: mask_ratio must be in (0, 1)");
  }
};

struct TrainRecord {
  long step;
  int epoch;
  std::string split;  // "train" or "val"
  double loss;
};

struct TrainLog {
  std::vector<TrainRecord> records;

  void add(long step, int epoch, const std::string& split, double loss) {
    records.push_back({step, epoch, split, loss});
  }
  void write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "step,epoch,split,loss\n";
    char buf[64];
    for (const auto& r : records) {
      std::snprintf(buf, sizeof(buf), "%.17g", r.loss);
      f << r.step << "," << r.epoch << "," << r.split << "," << buf << "\n";
    }
  }
};

namespace detail {

[[noreturn]] inline void abort_on_nan(long step, double lr, double loss, size_t batch) {
  throw std::runtime_error("training aborted: non-finite loss " + std::to_string(loss) +
                           " at step " + std::to_string(step) + " (lr " + std::to_string(lr) +
                           ", batch of " + std::to_string(batch) + ")");
}

inline void maybe_checkpoint(const TrainConfig& cfg, int epoch, int total_epochs, auto& model) {
  if (cfg.checkpoint_dir.empty()) return;
  bool last = (epoch == total_epochs);
  bool cadence = cfg.checkpoint_every_epochs > 0 && epoch % cfg.checkpoint_every_epochs == 0;
  if (last || cadence) model.save_checkpoint(cfg.checkpoint_dir);
}

}  // namespace detail

// Flow-matching pretraining. Self-supervised: sees spectrograms only. Per
// step, samples a batch of clean grids, per-item flow times and noise,
// regresses the model onto the target field, and takes a clipped Adam
// step. Validation uses a fixed held-out (s, epsilon) set drawn once so
// per-epoch validation losses are comparable.
template <typename T>
TrainLog train_flow(FlowModel<T>& model, const std::vector<Tensor<T>>& train,
                    const std::vector<Tensor<T>>& val, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train_flow: empty training set");
  VarianceSchedule sch = VarianceSchedule::by_name(cfg.schedule_kind);
  TrainLog log;
  if (cfg.epochs == 0) return log;

  Rng rng(cfg.seed);
  Rng val_rng(Rng::splitmix64(cfg.seed) ^ 0x76616cULL);
  FlowBatch<T> val_batch;
  {
    std::vector<const Tensor<T>*> ptrs;
    for (const auto& t : val) ptrs.push_back(&t);
    if (!ptrs.empty()) val_batch = make_flow_batch(ptrs, val_rng, sch, cfg.s_min, cfg.s_max);
  }

  Adam<T> opt(model.parameters(), cfg.learning_rate);
  auto params = model.parameters();
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});
  long step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const Tensor<T>*> ptrs;
      for (size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
        ptrs.push_back(&train[order[i]]);
      FlowBatch<T> batch = make_flow_batch(ptrs, rng, sch, cfg.s_min, cfg.s_max);

      Tape<T> tape;
      auto fwd = [&](Tape<T>& tp, const Tensor<T>& g, double s) {
        return model.forward(tp, g, s, /*train=*/true, &rng).output;
      };
      auto loss_var = fm_loss<T>(tape, fwd, batch);
      double loss = static_cast<double>(tape.val(loss_var).v[0]);
      if (!std::isfinite(loss))
        detail::abort_on_nan(step, cfg.learning_rate, loss, batch.size());
      tape.backward(loss_var);
      clip_global_norm(params, cfg.grad_clip_norm);
      opt.step();
      log.add(++step, epoch, "train", loss);
    }
    if (val_batch.size() > 0) {
      double vloss = 0.0;
      for (size_t i = 0; i < val_batch.size(); ++i) {
        Tensor<T> pred = model.velocity(val_batch.g[i], val_batch.s[i]);
        double se = 0.0;
        for (long k = 0; k < pred.numel(); ++k) {
          double d = static_cast<double>(pred.v[k]) - static_cast<double>(val_batch.v[i].v[k]);
          se += d * d;
        }
        vloss += se / pred.numel();
      }
      log.add(step, epoch, "val", vloss / val_batch.size());
    }
    detail::maybe_checkpoint(cfg, epoch, cfg.epochs, model);
  }
  return log;
}

// Zeroes round(ratio * T) time-frame columns chosen uniformly without
// replacement. Returns the masked grid and a 0/1 indicator of masked
// positions.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> random_mask(const Tensor<T>& sg, double ratio, Rng& rng) {
  if (ratio <= 0.0 || ratio >= 1.0)
    throw std::invalid_argument("random_mask: ratio must be in (0, 1)");
  if (sg.shape.size() != 2)
    throw std::invalid_argument("random_mask: expected rank-2 grid, got " + shape_str(sg.shape));
  int f = sg.rows(), frames = sg.cols();
  int k = static_cast<int>(std::llround(ratio * frames));
  std::vector<int> cols(frames);
  std::iota(cols.begin(), cols.end(), 0);
  std::shuffle(cols.begin(), cols.end(), rng.engine());
  Tensor<T> masked = sg;
  Tensor<T> indicator = Tensor<T>::zeros(sg.shape);
  for (int j = 0; j < k; ++j) {
    int c = cols[j];
    for (int b = 0; b < f; ++b) {
      masked.at(b, c) = T(0);
      indicator.at(b, c) = T(1);
    }
  }
  return {std::move(masked), std::move(indicator)};
}

// MAE baseline: same backbone, inputs masked at a fixed ratio, MSE on
// masked positions only. The model's output projection serves as the
// shallow linear reconstruction head and is never tapped for features.
// Time conditioning is held at s = 1 (the clean end of the path).
template <typename T>
TrainLog train_mae(FlowModel<T>& model, const std::vector<Tensor<T>>& train,
                   const std::vector<Tensor<T>>& val, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train_mae: empty training set");
  TrainLog log;
  if (cfg.epochs == 0) return log;
  constexpr double kMaeTime = 1.0;

  Rng rng(cfg.seed);
  Rng val_rng(Rng::splitmix64(cfg.seed) ^ 0x76616cULL);
  // fixed validation masks
  std::vector<std::pair<Tensor<T>, Tensor<T>>> val_masked;
  for (const auto& sg : val) val_masked.push_back(random_mask(sg, cfg.mask_ratio, val_rng));

  Adam<T> opt(model.parameters(), cfg.learning_rate);
  auto params = model.parameters();
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});
  long step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      Tape<T> tape;
      typename Tape<T>::Var total = -1;
      size_t count = 0;
      for (size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        const Tensor<T>& phi = train[order[i]];
        auto [masked, indicator] = random_mask(phi, cfg.mask_ratio, rng);
        auto fw = model.forward(tape, masked, kMaeTime, /*train=*/true, &rng);
        auto li = tape.masked_mse(fw.output, phi, indicator);
        total = (count == 0) ? li : tape.add(total, li);
        ++count;
      }
      auto loss_var = tape.scale(total, static_cast<T>(1.0 / count));
      double loss = static_cast<double>(tape.val(loss_var).v[0]);
      if (!std::isfinite(loss)) detail::abort_on_nan(step, cfg.learning_rate, loss, count);
      tape.backward(loss_var);
      clip_global_norm(params, cfg.grad_clip_norm);
      opt.step();
      log.add(++step, epoch, "train", loss);
    }
    if (!val_masked.empty()) {
      double vloss = 0.0;
      for (size_t i = 0; i < val_masked.size(); ++i) {
        Tape<T> tape;
        auto fw = model.forward(tape, val_masked[i].first, kMaeTime, false, nullptr);
        auto li = tape.masked_mse(fw.output, val[i], val_masked[i].second);
        vloss += static_cast<double>(tape.val(li).v[0]);
      }
      log.add(step, epoch, "val", vloss / val_masked.size());
    }
    detail::maybe_checkpoint(cfg, epoch, cfg.epochs, model);
  }
  return log;
}

}  // namespace fgno
