#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fgno/autograd.hpp"
#include "fgno/flow.hpp"
#include "fgno/rng.hpp"
#include "fgno/tensor.hpp"

namespace fgno {

struct ModelConfig {
  int num_layers = 6;
  int d_model = 768;
  int num_heads = 12;
  int d_ff = 3072;
  double dropout = 0.1;
  int freq_bins = 132;
  int max_frames = 196;
  int time_embed_dim = 32;
  // "concat": time embedding concatenated to each token before the input
  // lift (widens the lift). "add": projected to d_model and added after
  // the lift.
  std::string time_inject = "concat";

  void validate() const {
    if (num_layers < 1) throw std::invalid_argument("ModelConfig: num_layers must be >= 1");
    if (d_model % num_heads != 0)
      throw std::invalid_argument("ModelConfig: d_model " + std::to_string(d_model) +
                                  " not divisible by num_heads " + std::to_string(num_heads));
    if (freq_bins < 1 || max_frames < 1 || d_ff < 1)
      throw std::invalid_argument("ModelConfig: non-positive dimension");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
      throw std::invalid_argument("ModelConfig: time_embed_dim must be even and >= 2");
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::invalid_argument("ModelConfig: dropout must be in [0, 1)");
    if (time_inject != "concat" && time_inject != "add")
      throw std::invalid_argument("ModelConfig: time_inject must be 'concat' or 'add'");
  }

  nlohmann::json to_json() const {
    return {{"num_layers", num_layers},   {"d_model", d_model},
            {"num_heads", num_heads},     {"d_ff", d_ff},
            {"dropout", dropout},         {"freq_bins", freq_bins},
            {"max_frames", max_frames},   {"time_embed_dim", time_embed_dim},
            {"time_inject", time_inject}};
  }
  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.num_layers = j.at("num_layers").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.freq_bins = j.at("freq_bins").get<int>();
    c.max_frames = j.at("max_frames").get<int>();
    c.time_embed_dim = j.at("time_embed_dim").get<int>();
    c.time_inject = j.at("time_inject").get<std::string>();
    c.validate();
    return c;
  }

  // FNV-1a over the canonical JSON dump; guards checkpoint loads.
  uint64_t hash() const {
    std::string s = to_json().dump();
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }
};

// Sinusoidal features of the flow time s: interleaved sin/cos over
// geometrically spaced frequencies, base-10^4 convention.
template <typename T>
Tensor<T> time_embed(double s, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw std::invalid_argument("time_embed: dim must be even and >= 2, got " +
                                std::to_string(dim));
  Tensor<T> e({dim});
  int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    double omega = std::pow(10000.0, -static_cast<double>(k) / half);
    e.v[2 * k] = static_cast<T>(std::sin(s * omega));
    e.v[2 * k + 1] = static_cast<T>(std::cos(s * omega));
  }
  return e;
}

// Time-conditioned transformer u_theta(s, g) over spectrogram frames.
// Tokens are time frames (columns of the F x T input). Pre-norm blocks,
// GELU feed-forward, learned positional embedding over frames. Tap l is
// the post-block residual stream after block l.
template <typename T>
class FlowModel {
 public:
  using Var = typename Tape<T>::Var;

  struct ForwardVars {
    Var output;              // F x T, same shape as input
    std::vector<Var> taps;   // L entries, each T x d_model
  };

  FlowModel(ModelConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(init_seed);
    int d = cfg_.d_model, f = cfg_.freq_bins, te = cfg_.time_embed_dim;
    int lift_in = (cfg_.time_inject == "concat") ? f + te : f;

    params_.reserve(param_count_for(cfg_));
    add_matrix("lift.w", lift_in, d, rng);
    add_bias("lift.b", d);
    if (cfg_.time_inject == "add") {
      add_matrix("time_proj.w", te, d, rng);
      add_bias("time_proj.b", d);
    }
    add_uniform("pos", {cfg_.max_frames, d}, 0.02, rng);
    for (int l = 0; l < cfg_.num_layers; ++l) {
      std::string p = "block" + std::to_string(l) + ".";
      add_ones(p + "ln1.gamma", d);
      add_bias(p + "ln1.beta", d);
      for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
        add_matrix(p + w, d, d, rng);
      for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
        add_bias(p + b, d);
      add_ones(p + "ln2.gamma", d);
      add_bias(p + "ln2.beta", d);
      add_matrix(p + "ff.w1", d, cfg_.d_ff, rng);
      add_bias(p + "ff.b1", cfg_.d_ff);
      add_matrix(p + "ff.w2", cfg_.d_ff, d, rng);
      add_bias(p + "ff.b2", d);
    }
    add_matrix("proj.w", d, f, rng);
    add_bias("proj.b", f);
  }

  const ModelConfig& config() const { return cfg_; }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }
  Parameter<T>& param(const std::string& name) { return params_[index_.at(name)]; }

  long num_parameters() const {
    long n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }
  static long param_count_for(const ModelConfig& cfg) {
    // number of parameter tensors, for the reserve above
    return 5 + (cfg.time_inject == "add" ? 2 : 0) + 16L * cfg.num_layers;
  }

  ForwardVars forward(Tape<T>& tape, const Tensor<T>& input, double s, bool train = false,
                      Rng* dropout_rng = nullptr) {
    if (input.shape.size() != 2 || input.rows() != cfg_.freq_bins)
      throw std::invalid_argument("forward: expected " + std::to_string(cfg_.freq_bins) +
                                  " frequency bins, got input " + shape_str(input.shape));
    int frames = input.cols();
    if (frames > cfg_.max_frames)
      throw std::invalid_argument("forward: " + std::to_string(frames) +
                                  " frames exceeds max_frames " +
                                  std::to_string(cfg_.max_frames));
    if (s < 0.0 || s > 1.0)
      throw std::invalid_argument("forward: flow time must be in [0, 1]");

    int d = cfg_.d_model;
    auto drop = [&](Var x) { return tape.dropout(x, cfg_.dropout, train, dropout_rng); };

    Var tokens = tape.transpose(tape.constant(input));  // T x F
    Tensor<T> te = time_embed<T>(s, cfg_.time_embed_dim);
    Var x;
    if (cfg_.time_inject == "concat") {
      Tensor<T> te_rows({frames, cfg_.time_embed_dim});
      for (int i = 0; i < frames; ++i)
        for (int j = 0; j < cfg_.time_embed_dim; ++j) te_rows.at(i, j) = te.v[j];
      Var wide = tape.concat({tokens, tape.constant(std::move(te_rows))}, 1);
      x = tape.add_rowvec(tape.matmul(wide, tape.leaf(param("lift.w"))),
                          tape.leaf(param("lift.b")));
    } else {
      x = tape.add_rowvec(tape.matmul(tokens, tape.leaf(param("lift.w"))),
                          tape.leaf(param("lift.b")));
      Var te_row = tape.matmul(tape.constant(Tensor<T>({1, cfg_.time_embed_dim}, te.v)),
                               tape.leaf(param("time_proj.w")));
      Var te_vec = tape.add(tape.reshape(te_row, {d}), tape.leaf(param("time_proj.b")));
      x = tape.add_rowvec(x, te_vec);
    }
    x = tape.add(x, tape.slice_rows(tape.leaf(param("pos")), 0, frames));
    x = drop(x);

    std::vector<Var> taps;
    int heads = cfg_.num_heads, dh = d / heads;
    T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    for (int l = 0; l < cfg_.num_layers; ++l) {
      std::string p = "block" + std::to_string(l) + ".";
      // attention sublayer
      Var h = tape.layer_norm(x, tape.leaf(param(p + "ln1.gamma")),
                              tape.leaf(param(p + "ln1.beta")));
      Var q = tape.add_rowvec(tape.matmul(h, tape.leaf(param(p + "attn.wq"))),
                              tape.leaf(param(p + "attn.bq")));
      Var k = tape.add_rowvec(tape.matmul(h, tape.leaf(param(p + "attn.wk"))),
                              tape.leaf(param(p + "attn.bk")));
      Var v = tape.add_rowvec(tape.matmul(h, tape.leaf(param(p + "attn.wv"))),
                              tape.leaf(param(p + "attn.bv")));
      std::vector<Var> head_outs;
      for (int hd = 0; hd < heads; ++hd) {
        Var qh = tape.slice_cols(q, hd * dh, (hd + 1) * dh);
        Var kh = tape.slice_cols(k, hd * dh, (hd + 1) * dh);
        Var vh = tape.slice_cols(v, hd * dh, (hd + 1) * dh);
        Var scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), att_scale);
        Var attn = tape.softmax_rows(scores);
        head_outs.push_back(tape.matmul(attn, vh));
      }
      Var o = tape.concat(head_outs, 1);
      o = tape.add_rowvec(tape.matmul(o, tape.leaf(param(p + "attn.wo"))),
                          tape.leaf(param(p + "attn.bo")));
      x = tape.add(x, drop(o));
      // feed-forward sublayer
      Var h2 = tape.layer_norm(x, tape.leaf(param(p + "ln2.gamma")),
                               tape.leaf(param(p + "ln2.beta")));
      Var ff = tape.gelu(tape.add_rowvec(tape.matmul(h2, tape.leaf(param(p + "ff.w1"))),
                                         tape.leaf(param(p + "ff.b1"))));
      ff = tape.add_rowvec(tape.matmul(ff, tape.leaf(param(p + "ff.w2"))),
                           tape.leaf(param(p + "ff.b2")));
      x = tape.add(x, drop(ff));
      taps.push_back(x);
    }

    Var out = tape.add_rowvec(tape.matmul(x, tape.leaf(param("proj.w"))),
                              tape.leaf(param("proj.b")));
    return {tape.transpose(out), taps};
  }

  // Deterministic clean-input feature extraction: eval-mode forward on the
  // uncorrupted grid, conditioned on s; returns tap l (1-based).
  Tensor<T> extract_features(const Tensor<T>& phi, int layer, double s) {
    check_layer(layer);
    Tape<T> tape;
    auto fw = forward(tape, phi, s, /*train=*/false, nullptr);
    return tape.val(fw.taps[layer - 1]);
  }

  // All L taps from one clean-input eval-mode forward.
  std::vector<Tensor<T>> all_layer_taps(const Tensor<T>& phi, double s) {
    Tape<T> tape;
    auto fw = forward(tape, phi, s, /*train=*/false, nullptr);
    std::vector<Tensor<T>> out;
    out.reserve(fw.taps.size());
    for (auto t : fw.taps) out.push_back(tape.val(t));
    return out;
  }

  // Noisy-path extraction: corrupts phi to g = s*phi + sigma(s)*eps with
  // seeded noise, then taps layer l.
  Tensor<T> extract_features_noisy(const Tensor<T>& phi, int layer, double s,
                                   uint64_t noise_seed,
                                   const VarianceSchedule& sch = VarianceSchedule{}) {
    check_layer(layer);
    Rng rng(noise_seed);
    Tensor<T> eps(phi.shape);
    for (auto& x : eps.v) x = static_cast<T>(rng.normal());
    Tensor<T> g = interpolate(phi, eps, s, sch);
    Tape<T> tape;
    auto fw = forward(tape, g, s, /*train=*/false, nullptr);
    return tape.val(fw.taps[layer - 1]);
  }

  // Eval-mode velocity prediction, for ODE integration.
  Tensor<T> velocity(const Tensor<T>& g, double s) {
    Tape<T> tape;
    auto fw = forward(tape, g, s, /*train=*/false, nullptr);
    return tape.val(fw.output);
  }

  // ---- checkpointing -----------------------------------------------------
  //
  // Directory layout: header.json (format version, config, config hash,
  // parameter names/shapes/files) + one raw little-endian blob per
  // parameter under params/. Round-trips bit-exactly.

  void save_checkpoint(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "params");
    nlohmann::json plist = nlohmann::json::array();
    for (size_t i = 0; i < params_.size(); ++i) {
      char file[32];
      std::snprintf(file, sizeof(file), "params/p%04zu.bin", i);
      const auto& p = params_[i];
      std::ofstream f((fs::path(dir) / file).string(), std::ios::binary);
      if (!f) throw std::runtime_error("cannot write " + std::string(file) + " in " + dir);
      f.write(reinterpret_cast<const char*>(p.value.v.data()),
              static_cast<std::streamsize>(p.value.v.size() * sizeof(T)));
      plist.push_back({{"name", p.name}, {"shape", p.value.shape}, {"file", file}});
    }
    nlohmann::json header = {
        {"format_version", 1},
        {"dtype", dtype_name()},
        {"config", cfg_.to_json()},
        {"config_hash", cfg_.hash()},
        {"params", plist},
    };
    std::ofstream f((fs::path(dir) / "header.json").string());
    if (!f) throw std::runtime_error("cannot write header.json in " + dir);
    f << header.dump(2) << "\n";
  }

  static FlowModel load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream hf((fs::path(dir) / "header.json").string());
    if (!hf) throw std::runtime_error("no header.json in " + dir);
    nlohmann::json header = nlohmann::json::parse(hf);
    if (header.at("format_version").get<int>() != 1)
      throw std::runtime_error(dir + ": unsupported checkpoint format version");
    if (header.at("dtype").get<std::string>() != dtype_name())
      throw std::runtime_error(dir + ": checkpoint dtype " +
                               header.at("dtype").get<std::string>() + ", expected " +
                               dtype_name());
    ModelConfig cfg = ModelConfig::from_json(header.at("config"));
    if (header.at("config_hash").get<uint64_t>() != cfg.hash())
      throw std::runtime_error(dir + ": config hash mismatch, refusing to load");
    FlowModel model(cfg, /*init_seed=*/0);
    const auto& plist = header.at("params");
    if (plist.size() != model.params_.size())
      throw std::runtime_error(dir + ": parameter count mismatch");
    for (const auto& e : plist) {
      auto& p = model.param(e.at("name").get<std::string>());
      if (p.value.shape != e.at("shape").get<std::vector<int>>())
        throw std::runtime_error(dir + ": shape mismatch for " + p.name);
      std::ifstream f((fs::path(dir) / e.at("file").get<std::string>()).string(),
                      std::ios::binary);
      if (!f) throw std::runtime_error(dir + ": missing blob for " + p.name);
      f.read(reinterpret_cast<char*>(p.value.v.data()),
             static_cast<std::streamsize>(p.value.v.size() * sizeof(T)));
      if (f.gcount() != static_cast<std::streamsize>(p.value.v.size() * sizeof(T)))
        throw std::runtime_error(dir + ": short blob for " + p.name);
    }
    return model;
  }

  static uint64_t checkpoint_config_hash(const std::string& dir) {
    std::ifstream hf((std::filesystem::path(dir) / "header.json").string());
    if (!hf) throw std::runtime_error("no header.json in " + dir);
    return nlohmann::json::parse(hf).at("config_hash").get<uint64_t>();
  }

 private:
  static const char* dtype_name() {
    if constexpr (sizeof(T) == 4) return "float32";
    else return "float64";
  }
  void check_layer(int layer) const {
    if (layer < 1 || layer > cfg_.num_layers)
      throw std::invalid_argument("layer " + std::to_string(layer) + " out of range [1, " +
                                  std::to_string(cfg_.num_layers) + "]");
  }

  void add_param(std::string name, Tensor<T> t) {
    index_[name] = params_.size();
    params_.emplace_back(std::move(name), std::move(t));
  }
  // Scaled-uniform fan-in init, gain 1.
  void add_matrix(std::string name, int in, int out, Rng& rng) {
    Tensor<T> t({in, out});
    double a = std::sqrt(1.0 / in);
    for (auto& x : t.v) x = static_cast<T>(rng.uniform(-a, a));
    add_param(std::move(name), std::move(t));
  }
  void add_uniform(std::string name, std::vector<int> shape, double a, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& x : t.v) x = static_cast<T>(rng.uniform(-a, a));
    add_param(std::move(name), std::move(t));
  }
  void add_bias(std::string name, int n) { add_param(std::move(name), Tensor<T>({n})); }
  void add_ones(std::string name, int n) {
    add_param(std::move(name), Tensor<T>::full({n}, T(1)));
  }

  ModelConfig cfg_;
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace fgno
