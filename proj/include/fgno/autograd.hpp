#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fgno/rng.hpp"
#include "fgno/tensor.hpp"

namespace fgno {

// Named trainable tensor. Gradients accumulate here during backward and
// are zeroed by the optimizer step.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> val)
      : name(std::move(n)), value(std::move(val)), grad(Tensor<T>::zeros(value.shape)) {}

  void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), T(0)); }
};

// Reverse-mode tape. Ops append nodes; node indices only ever reference
// earlier nodes, so reverse creation order is a valid reverse topological
// order for backward.
template <typename T>
class Tape {
 public:
  using Var = int;

  const Tensor<T>& val(Var x) const { return nodes_[x].value; }
  const Tensor<T>& grad(Var x) const { return nodes_[x].grad; }

  Var leaf(Parameter<T>& p) {
    Var id = push(p.value);
    nodes_[id].param = &p;
    return id;
  }
  Var constant(Tensor<T> t) { return push(std::move(t)); }

  // ---- arithmetic -------------------------------------------------------

  Var add(Var a, Var b) {
    check_same_shape(val(a), val(b), "add");
    Tensor<T> out = val(a);
    for (long i = 0; i < out.numel(); ++i) out.v[i] += val(b).v[i];
    Var id = push(std::move(out));
    set_back(id, [this, id, a, b] {
      accumulate(a, nodes_[id].grad.v);
      accumulate(b, nodes_[id].grad.v);
    });
    return id;
  }

  Var sub(Var a, Var b) {
    check_same_shape(val(a), val(b), "sub");
    Tensor<T> out = val(a);
    for (long i = 0; i < out.numel(); ++i) out.v[i] -= val(b).v[i];
    Var id = push(std::move(out));
    set_back(id, [this, id, a, b] {
      accumulate(a, nodes_[id].grad.v);
      const auto& g = nodes_[id].grad.v;
      auto& gb = grad_buf(b);
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
    return id;
  }

  Var mul(Var a, Var b) {
    check_same_shape(val(a), val(b), "mul");
    Tensor<T> out = val(a);
    for (long i = 0; i < out.numel(); ++i) out.v[i] *= val(b).v[i];
    Var id = push(std::move(out));
    set_back(id, [this, id, a, b] {
      const auto& g = nodes_[id].grad.v;
      auto& ga = grad_buf(a);
      auto& gb = grad_buf(b);
      const auto& av = val(a).v;
      const auto& bv = val(b).v;
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * bv[i];
        gb[i] += g[i] * av[i];
      }
    });
    return id;
  }

  Var scale(Var a, T c) {
    Tensor<T> out = val(a);
    for (auto& x : out.v) x *= c;
    Var id = push(std::move(out));
    set_back(id, [this, id, a, c] {
      const auto& g = nodes_[id].grad.v;
      auto& ga = grad_buf(a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
    return id;
  }

  // A: m x n, bias: vector of length n, broadcast over rows.
  Var add_rowvec(Var a, Var bias) {
    const auto& A = val(a);
    const auto& b = val(bias);
    if (A.shape.size() != 2 || b.numel() != A.cols())
      throw std::invalid_argument("add_rowvec: shape mismatch " + shape_str(A.shape) +
                                  " vs " + shape_str(b.shape));
    Tensor<T> out = A;
    int m = A.rows(), n = A.cols();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out.v[static_cast<size_t>(i) * n + j] += b.v[j];
    Var id = push(std::move(out));
    set_back(id, [this, id, a, bias, m, n] {
      const auto& g = nodes_[id].grad.v;
      accumulate(a, g);
      auto& gb = grad_buf(bias);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gb[j] += g[static_cast<size_t>(i) * n + j];
    });
    return id;
  }

  Var matmul(Var a, Var b) {
    const auto& A = val(a);
    const auto& B = val(b);
    if (A.shape.size() != 2 || B.shape.size() != 2 || A.cols() != B.rows())
      throw std::invalid_argument("matmul: shape mismatch " + shape_str(A.shape) +
                                  " vs " + shape_str(B.shape));
    int m = A.rows(), k = A.cols(), n = B.cols();
    Tensor<T> out({m, n});
    matmul_raw(A.v.data(), B.v.data(), out.v.data(), m, k, n);
    Var id = push(std::move(out));
    set_back(id, [this, id, a, b, m, k, n] {
      const auto& g = nodes_[id].grad.v;        // m x n
      const auto& Av = val(a).v;
      const auto& Bv = val(b).v;
      auto& ga = grad_buf(a);
      auto& gb = grad_buf(b);
      // dA += g * B^T
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          T gij = g[static_cast<size_t>(i) * n + j];
          if (gij == T(0)) continue;
          for (int p = 0; p < k; ++p)
            ga[static_cast<size_t>(i) * k + p] += gij * Bv[static_cast<size_t>(p) * n + j];
        }
      // dB += A^T * g
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          T aip = Av[static_cast<size_t>(i) * k + p];
          if (aip == T(0)) continue;
          for (int j = 0; j < n; ++j)
            gb[static_cast<size_t>(p) * n + j] += aip * g[static_cast<size_t>(i) * n + j];
        }
    });
    return id;
  }

  Var transpose(Var a) {
    const auto& A = val(a);
    if (A.shape.size() != 2)
      throw std::invalid_argument("transpose: expected rank-2, got " + shape_str(A.shape));
    int m = A.rows(), n = A.cols();
    Tensor<T> out({n, m});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out.at(j, i) = A.at(i, j);
    Var id = push(std::move(out));
    set_back(id, [this, id, a, m, n] {
      const auto& g = nodes_[id].grad;  // n x m
      auto& ga = grad_buf(a);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ga[static_cast<size_t>(i) * n + j] += g.at(j, i);
    });
    return id;
  }

  Var reshape(Var a, std::vector<int> sh) {
    if (Tensor<T>::numel_of(sh) != val(a).numel())
      throw std::invalid_argument("reshape: " + shape_str(val(a).shape) + " to " +
                                  shape_str(sh) + " changes element count");
    Tensor<T> out(std::move(sh), val(a).v);
    Var id = push(std::move(out));
    set_back(id, [this, id, a] { accumulate(a, nodes_[id].grad.v); });
    return id;
  }

  // Rank-2 concat along axis 0 (rows) or 1 (cols).
  Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
    int m0 = val(parts[0]).rows(), n0 = val(parts[0]).cols();
    int total = 0;
    for (Var p : parts) {
      const auto& t = val(p);
      if (t.shape.size() != 2 ||
          (axis == 0 ? t.cols() != n0 : t.rows() != m0))
        throw std::invalid_argument("concat: incompatible shapes " +
                                    shape_str(val(parts[0]).shape) + " vs " +
                                    shape_str(t.shape));
      total += (axis == 0) ? t.rows() : t.cols();
    }
    Tensor<T> out(axis == 0 ? std::vector<int>{total, n0} : std::vector<int>{m0, total});
    int off = 0;
    for (Var p : parts) {
      const auto& t = val(p);
      if (axis == 0) {
        std::copy(t.v.begin(), t.v.end(), out.v.begin() + static_cast<size_t>(off) * n0);
        off += t.rows();
      } else {
        for (int i = 0; i < m0; ++i)
          for (int j = 0; j < t.cols(); ++j) out.at(i, off + j) = t.at(i, j);
        off += t.cols();
      }
    }
    Var id = push(std::move(out));
    std::vector<Var> ps = parts;
    set_back(id, [this, id, ps, axis, m0, n0] {
      const auto& g = nodes_[id].grad;
      int off = 0;
      for (Var p : ps) {
        const auto& t = val(p);
        auto& gp = grad_buf(p);
        if (axis == 0) {
          for (long i = 0; i < t.numel(); ++i)
            gp[i] += g.v[static_cast<size_t>(off) * n0 + i];
          off += t.rows();
        } else {
          for (int i = 0; i < m0; ++i)
            for (int j = 0; j < t.cols(); ++j)
              gp[static_cast<size_t>(i) * t.cols() + j] += g.at(i, off + j);
          off += t.cols();
        }
      }
    });
    return id;
  }

  // Columns [c0, c1) of a rank-2 tensor.
  Var slice_cols(Var a, int c0, int c1) {
    const auto& A = val(a);
    if (A.shape.size() != 2 || c0 < 0 || c1 > A.cols() || c0 >= c1)
      throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + ", " +
                                  std::to_string(c1) + ") for " + shape_str(A.shape));
    int m = A.rows(), n = A.cols(), w = c1 - c0;
    Tensor<T> out({m, w});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j) out.at(i, j) = A.at(i, c0 + j);
    Var id = push(std::move(out));
    set_back(id, [this, id, a, c0, m, n, w] {
      const auto& g = nodes_[id].grad;
      auto& ga = grad_buf(a);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) ga[static_cast<size_t>(i) * n + c0 + j] += g.at(i, j);
    });
    return id;
  }

  Var slice_rows(Var a, int r0, int r1) {
    const auto& A = val(a);
    if (A.shape.size() != 2 || r0 < 0 || r1 > A.rows() || r0 >= r1)
      throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + ", " +
                                  std::to_string(r1) + ") for " + shape_str(A.shape));
    int n = A.cols(), h = r1 - r0;
    Tensor<T> out({h, n});
    std::copy(A.v.begin() + static_cast<size_t>(r0) * n,
              A.v.begin() + static_cast<size_t>(r1) * n, out.v.begin());
    Var id = push(std::move(out));
    set_back(id, [this, id, a, r0, n] {
      const auto& g = nodes_[id].grad;
      auto& ga = grad_buf(a);
      for (long i = 0; i < g.numel(); ++i) ga[static_cast<size_t>(r0) * n + i] += g.v[i];
    });
    return id;
  }

  // ---- reductions -------------------------------------------------------

  Var sum_all(Var a) {
    T s = std::accumulate(val(a).v.begin(), val(a).v.end(), T(0));
    Var id = push(Tensor<T>::scalar(s));
    set_back(id, [this, id, a] {
      T g = nodes_[id].grad.v[0];
      auto& ga = grad_buf(a);
      for (auto& x : ga) x += g;
    });
    return id;
  }

  Var mean_all(Var a) {
    long n = val(a).numel();
    return scale(sum_all(a), T(1) / static_cast<T>(n));
  }

  // Rank-2 reduction over the given axis; result is a vector (rank-1).
  Var sum_axis(Var a, int axis) {
    const auto& A = val(a);
    if (A.shape.size() != 2 || (axis != 0 && axis != 1))
      throw std::invalid_argument("sum_axis: expected rank-2 and axis 0/1, got " +
                                  shape_str(A.shape));
    int m = A.rows(), n = A.cols();
    Tensor<T> out({axis == 0 ? n : m});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out.v[axis == 0 ? j : i] += A.at(i, j);
    Var id = push(std::move(out));
    set_back(id, [this, id, a, axis, m, n] {
      const auto& g = nodes_[id].grad.v;
      auto& ga = grad_buf(a);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<size_t>(i) * n + j] += g[axis == 0 ? j : i];
    });
    return id;
  }

  Var mean_axis(Var a, int axis) {
    int d = (axis == 0) ? val(a).rows() : val(a).cols();
    return scale(sum_axis(a, axis), T(1) / static_cast<T>(d));
  }

  // ---- nonlinearities ---------------------------------------------------

  // Row-wise softmax of a rank-2 tensor.
  Var softmax_rows(Var a) {
    const auto& A = val(a);
    if (A.shape.size() != 2)
      throw std::invalid_argument("softmax_rows: expected rank-2, got " + shape_str(A.shape));
    int m = A.rows(), n = A.cols();
    Tensor<T> out({m, n});
    for (int i = 0; i < m; ++i) {
      T mx = A.at(i, 0);
      for (int j = 1; j < n; ++j) mx = std::max(mx, A.at(i, j));
      T z = T(0);
      for (int j = 0; j < n; ++j) {
        out.at(i, j) = std::exp(A.at(i, j) - mx);
        z += out.at(i, j);
      }
      for (int j = 0; j < n; ++j) out.at(i, j) /= z;
    }
    Var id = push(std::move(out));
    set_back(id, [this, id, a, m, n] {
      const auto& y = nodes_[id].value;
      const auto& g = nodes_[id].grad;
      auto& ga = grad_buf(a);
      for (int i = 0; i < m; ++i) {
        T dot = T(0);
        for (int j = 0; j < n; ++j) dot += g.at(i, j) * y.at(i, j);
        for (int j = 0; j < n; ++j)
          ga[static_cast<size_t>(i) * n + j] += y.at(i, j) * (g.at(i, j) - dot);
      }
    });
    return id;
  }

  // Layer norm over the last axis of a rank-2 tensor, learned scale/shift.
  Var layer_norm(Var a, Var gamma, Var beta, T eps = T(1e-5)) {
    const auto& A = val(a);
    if (A.shape.size() != 2 || val(gamma).numel() != A.cols() || val(beta).numel() != A.cols())
      throw std::invalid_argument("layer_norm: shape mismatch " + shape_str(A.shape) +
                                  " with scale " + shape_str(val(gamma).shape));
    int m = A.rows(), n = A.cols();
    Tensor<T> out({m, n});
    auto xhat = std::make_shared<Tensor<T>>(std::vector<int>{m, n});
    auto rstd = std::make_shared<std::vector<T>>(m);
    const auto& gm = val(gamma).v;
    const auto& bt = val(beta).v;
    for (int i = 0; i < m; ++i) {
      T mu = T(0);
      for (int j = 0; j < n; ++j) mu += A.at(i, j);
      mu /= n;
      T var = T(0);
      for (int j = 0; j < n; ++j) {
        T d = A.at(i, j) - mu;
        var += d * d;
      }
      var /= n;
      T rs = T(1) / std::sqrt(var + eps);
      (*rstd)[i] = rs;
      for (int j = 0; j < n; ++j) {
        T xh = (A.at(i, j) - mu) * rs;
        xhat->at(i, j) = xh;
        out.at(i, j) = gm[j] * xh + bt[j];
      }
    }
    Var id = push(std::move(out));
    set_back(id, [this, id, a, gamma, beta, xhat, rstd, m, n] {
      const auto& g = nodes_[id].grad;
      const auto& gm = val(gamma).v;
      auto& ga = grad_buf(a);
      auto& gg = grad_buf(gamma);
      auto& gb = grad_buf(beta);
      for (int i = 0; i < m; ++i) {
        T mean_dxh = T(0), mean_dxh_xh = T(0);
        for (int j = 0; j < n; ++j) {
          T dxh = g.at(i, j) * gm[j];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xhat->at(i, j);
          gg[j] += g.at(i, j) * xhat->at(i, j);
          gb[j] += g.at(i, j);
        }
        mean_dxh /= n;
        mean_dxh_xh /= n;
        for (int j = 0; j < n; ++j) {
          T dxh = g.at(i, j) * gm[j];
          ga[static_cast<size_t>(i) * n + j] +=
              (*rstd)[i] * (dxh - mean_dxh - xhat->at(i, j) * mean_dxh_xh);
        }
      }
    });
    return id;
  }

  Var gelu(Var a) {
    Tensor<T> out = val(a);
    for (auto& x : out.v) {
      double xd = static_cast<double>(x);
      x = static_cast<T>(0.5 * xd * (1.0 + std::erf(xd / std::sqrt(2.0))));
    }
    Var id = push(std::move(out));
    set_back(id, [this, id, a] {
      const auto& g = nodes_[id].grad.v;
      const auto& x = val(a).v;
      auto& ga = grad_buf(a);
      constexpr double inv_sqrt2pi = 0.3989422804014327;
      for (size_t i = 0; i < g.size(); ++i) {
        double xd = static_cast<double>(x[i]);
        double cdf = 0.5 * (1.0 + std::erf(xd / std::sqrt(2.0)));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
        ga[i] += g[i] * static_cast<T>(cdf + xd * pdf);
      }
    });
    return id;
  }

  // Inverted dropout. Identity at eval time or rate 0.
  Var dropout(Var a, double rate, bool train, Rng* rng) {
    if (rate < 0.0 || rate >= 1.0)
      throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    if (!train || rate == 0.0) return a;
    if (!rng) throw std::invalid_argument("dropout: training mode needs an rng");
    Tensor<T> out = val(a);
    auto mask = std::make_shared<std::vector<T>>(out.v.size());
    T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (size_t i = 0; i < out.v.size(); ++i) {
      T m = (rng->uniform(0.0, 1.0) < rate) ? T(0) : keep_scale;
      (*mask)[i] = m;
      out.v[i] *= m;
    }
    Var id = push(std::move(out));
    set_back(id, [this, id, a, mask] {
      const auto& g = nodes_[id].grad.v;
      auto& ga = grad_buf(a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
    });
    return id;
  }

  // ---- losses -----------------------------------------------------------

  Var mse(Var pred, Var target) {
    check_same_shape(val(pred), val(target), "mse");
    long n = val(pred).numel();
    T s = T(0);
    for (long i = 0; i < n; ++i) {
      T d = val(pred).v[i] - val(target).v[i];
      s += d * d;
    }
    Var id = push(Tensor<T>::scalar(s / static_cast<T>(n)));
    set_back(id, [this, id, pred, target, n] {
      T g = nodes_[id].grad.v[0] * T(2) / static_cast<T>(n);
      const auto& p = val(pred).v;
      const auto& t = val(target).v;
      auto& gp = grad_buf(pred);
      auto& gt = grad_buf(target);
      for (long i = 0; i < n; ++i) {
        T d = g * (p[i] - t[i]);
        gp[i] += d;
        gt[i] -= d;
      }
    });
    return id;
  }

  // MSE restricted to positions where mask != 0; normalized by the count
  // of masked elements. Target and mask are constants.
  Var masked_mse(Var pred, const Tensor<T>& target, const Tensor<T>& mask) {
    check_same_shape(val(pred), target, "masked_mse");
    check_same_shape(val(pred), mask, "masked_mse");
    long n = val(pred).numel(), cnt = 0;
    T s = T(0);
    for (long i = 0; i < n; ++i) {
      if (mask.v[i] == T(0)) continue;
      T d = val(pred).v[i] - target.v[i];
      s += d * d;
      ++cnt;
    }
    if (cnt == 0) throw std::invalid_argument("masked_mse: empty mask");
    auto tgt = std::make_shared<Tensor<T>>(target);
    auto msk = std::make_shared<Tensor<T>>(mask);
    Var id = push(Tensor<T>::scalar(s / static_cast<T>(cnt)));
    set_back(id, [this, id, pred, tgt, msk, n, cnt] {
      T g = nodes_[id].grad.v[0] * T(2) / static_cast<T>(cnt);
      const auto& p = val(pred).v;
      auto& gp = grad_buf(pred);
      for (long i = 0; i < n; ++i)
        if (msk->v[i] != T(0)) gp[i] += g * (p[i] - tgt->v[i]);
    });
    return id;
  }

  // ---- backward ---------------------------------------------------------

  void backward(Var loss) {
    if (val(loss).numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  shape_str(val(loss).shape));
    grad_buf(loss)[0] = T(1);
    for (int i = loss; i >= 0; --i) {
      auto& node = nodes_[i];
      if (node.grad.v.empty()) continue;  // not reachable from the loss
      if (node.back) node.back();
      if (node.param) {
        for (long k = 0; k < node.grad.numel(); ++k)
          node.param->grad.v[k] += node.grad.v[k];
      }
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // lazily allocated
    std::function<void()> back;
    Parameter<T>* param = nullptr;
  };

  Var push(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr});
    return static_cast<Var>(nodes_.size() - 1);
  }
  void set_back(Var id, std::function<void()> fn) { nodes_[id].back = std::move(fn); }

  std::vector<T>& grad_buf(Var x) {
    auto& node = nodes_[x];
    if (node.grad.v.empty()) node.grad = Tensor<T>::zeros(node.value.shape);
    return node.grad.v;
  }
  void accumulate(Var x, const std::vector<T>& g) {
    auto& gb = grad_buf(x);
    for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  }

  static void matmul_raw(const T* A, const T* B, T* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
      T* crow = C + static_cast<size_t>(i) * n;
      for (int p = 0; p < k; ++p) {
        T a = A[static_cast<size_t>(i) * k + p];
        if (a == T(0)) continue;
        const T* brow = B + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
      }
    }
  }

  std::vector<Node> nodes_;
};

// ---- optimizer ----------------------------------------------------------

template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.push_back(Tensor<T>::zeros(p->value.shape));
      v_.push_back(Tensor<T>::zeros(p->value.shape));
    }
  }

  // Standard bias-corrected Adam update; zeroes gradients afterwards.
  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, t_);
    double bc2 = 1.0 - std::pow(b2_, t_);
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      auto& p = *params_[pi];
      for (long i = 0; i < p.value.numel(); ++i) {
        double g = static_cast<double>(p.grad.v[i]);
        double m = b1_ * static_cast<double>(m_[pi].v[i]) + (1.0 - b1_) * g;
        double v = b2_ * static_cast<double>(v_[pi].v[i]) + (1.0 - b2_) * g * g;
        m_[pi].v[i] = static_cast<T>(m);
        v_[pi].v[i] = static_cast<T>(v);
        double mh = m / bc1;
        double vh = v / bc2;
        p.value.v[i] -= static_cast<T>(lr_ * mh / (std::sqrt(vh) + eps_));
      }
      p.zero_grad();
    }
  }

  long step_count() const { return t_; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> m_, v_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

// Scales all gradients so the global L2 norm is at most max_norm.
template <typename T>
inline double clip_global_norm(const std::vector<Parameter<T>*>& params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params)
    for (T g : p->grad.v) sq += static_cast<double>(g) * static_cast<double>(g);
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    T s = static_cast<T>(max_norm / norm);
    for (auto* p : params)
      for (auto& g : p->grad.v) g *= s;
  }
  return norm;
}

}  // namespace fgno
