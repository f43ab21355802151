#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgno/autograd.hpp"
#include "fgno/rng.hpp"
#include "fgno/tensor.hpp"

namespace fgno {

// Monotonically decreasing noise schedule with sigma(0) = 1, sigma(1) = 0.
// "linear" is the default: sigma(s) = 1 - s, sigma'(s) = -1, which makes
// the regression target s-independent (phi - epsilon).
struct VarianceSchedule {
  std::string kind = "linear";

  double sigma(double s) const {
    if (kind == "linear") return 1.0 - s;
    throw std::invalid_argument("unknown schedule kind '" + kind + "'");
  }
  double sigma_prime(double s) const {
    (void)s;
    if (kind == "linear") return -1.0;
    throw std::invalid_argument("unknown schedule kind '" + kind + "'");
  }
  static VarianceSchedule by_name(const std::string& name) {
    VarianceSchedule sch{name};
    sch.sigma(0.0);  // validates the name
    return sch;
  }
};

constexpr double kDefaultSigmaFloor = 1e-6;
constexpr double kDefaultSMin = 0.0;
constexpr double kDefaultSMax = 0.995;

// g = s*phi + sigma(s)*epsilon
template <typename T>
Tensor<T> interpolate(const Tensor<T>& phi, const Tensor<T>& epsilon, double s,
                      const VarianceSchedule& sch) {
  check_same_shape(phi, epsilon, "interpolate");
  if (s < 0.0 || s > 1.0)
    throw std::invalid_argument("interpolate: s must be in [0, 1], got " + std::to_string(s));
  T sv = static_cast<T>(s), sig = static_cast<T>(sch.sigma(s));
  Tensor<T> g = phi;
  for (long i = 0; i < g.numel(); ++i) g.v[i] = sv * phi.v[i] + sig * epsilon.v[i];
  return g;
}

// v = (sigma'(s)/sigma(s)) * (g - s*phi) + phi
template <typename T>
Tensor<T> target_field(const Tensor<T>& g, const Tensor<T>& phi, double s,
                       const VarianceSchedule& sch,
                       double sigma_floor = kDefaultSigmaFloor) {
  check_same_shape(g, phi, "target_field");
  double sig = sch.sigma(s);
  if (sig <= sigma_floor)
    throw std::domain_error("target_field: sigma(" + std::to_string(s) + ") = " +
                            std::to_string(sig) + " at or below floor " +
                            std::to_string(sigma_floor));
  T ratio = static_cast<T>(sch.sigma_prime(s) / sig);
  T sv = static_cast<T>(s);
  Tensor<T> v = phi;
  for (long i = 0; i < v.numel(); ++i)
    v.v[i] = ratio * (g.v[i] - sv * phi.v[i]) + phi.v[i];
  return v;
}

inline double sample_flow_time(Rng& rng, double s_min = kDefaultSMin,
                               double s_max = kDefaultSMax) {
  if (!(s_min >= 0.0 && s_min < s_max && s_max <= 1.0))
    throw std::invalid_argument("sample_flow_time: need 0 <= s_min < s_max <= 1, got [" +
                                std::to_string(s_min) + ", " + std::to_string(s_max) + "]");
  return rng.uniform(s_min, s_max);
}

// One training batch: clean grids, matched noise, per-sample flow times,
// interpolants and targets.
template <typename T>
struct FlowBatch {
  std::vector<Tensor<T>> phi;
  std::vector<Tensor<T>> epsilon;
  std::vector<double> s;
  std::vector<Tensor<T>> g;
  std::vector<Tensor<T>> v;

  size_t size() const { return phi.size(); }
};

template <typename T>
FlowBatch<T> make_flow_batch(const std::vector<const Tensor<T>*>& phis, Rng& rng,
                             const VarianceSchedule& sch, double s_min = kDefaultSMin,
                             double s_max = kDefaultSMax) {
  FlowBatch<T> b;
  for (const Tensor<T>* phi : phis) {
    Tensor<T> eps(phi->shape);
    for (auto& x : eps.v) x = static_cast<T>(rng.normal());
    double s = sample_flow_time(rng, s_min, s_max);
    b.g.push_back(interpolate(*phi, eps, s, sch));
    b.v.push_back(target_field(b.g.back(), *phi, s, sch));
    b.phi.push_back(*phi);
    b.epsilon.push_back(std::move(eps));
    b.s.push_back(s);
  }
  return b;
}

// Model callable recording its forward pass on the tape: (tape, g, s) -> Var.
template <typename T>
using TapeField = std::function<typename Tape<T>::Var(Tape<T>&, const Tensor<T>&, double)>;

// Mean over the batch of per-sample MSE between prediction and target.
template <typename T>
typename Tape<T>::Var fm_loss(Tape<T>& tape, const TapeField<T>& model, const FlowBatch<T>& batch) {
  if (batch.size() == 0) throw std::invalid_argument("fm_loss: empty batch");
  typename Tape<T>::Var total = -1;
  for (size_t i = 0; i < batch.size(); ++i) {
    auto pred = model(tape, batch.g[i], batch.s[i]);
    auto li = tape.mse(pred, tape.constant(batch.v[i]));
    total = (i == 0) ? li : tape.add(total, li);
  }
  return tape.scale(total, static_cast<T>(1.0 / batch.size()));
}

// Plain (no-tape) velocity field for integration.
template <typename T>
using VelocityField = std::function<Tensor<T>(const Tensor<T>&, double)>;

// Explicit Euler on dg/ds = u(s, g). Exact for s-independent fields.
template <typename T>
Tensor<T> euler_integrate(const VelocityField<T>& field, const Tensor<T>& g0, double s_start,
                          double s_end, int steps) {
  if (steps < 1) throw std::invalid_argument("euler_integrate: steps must be >= 1");
  if (!(s_start < s_end))
    throw std::invalid_argument("euler_integrate: need s_start < s_end");
  double ds = (s_end - s_start) / steps;
  Tensor<T> g = g0;
  for (int k = 0; k < steps; ++k) {
    double s = s_start + k * ds;
    Tensor<T> u = field(g, s);
    check_same_shape(g, u, "euler_integrate");
    for (long i = 0; i < g.numel(); ++i) g.v[i] += static_cast<T>(ds) * u.v[i];
  }
  return g;
}

}  // namespace fgno
