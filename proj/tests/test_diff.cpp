#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "fgno/autograd.hpp"
#include "fgno/rng.hpp"

using namespace fgno;
using Var = Tape<double>::Var;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.v) v = scale * rng.normal();
  return t;
}

// Central finite differences against the tape gradients, h = 1e-5.
double gradcheck(std::vector<Parameter<double>*> params,
                 const std::function<Var(Tape<double>&)>& build, double h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  Tape<double> tape;
  Var loss = build(tape);
  tape.backward(loss);
  double max_rel = 0.0;
  for (auto* p : params) {
    for (long i = 0; i < p->value.numel(); ++i) {
      double keep = p->value.v[i];
      p->value.v[i] = keep + h;
      Tape<double> tp;
      double fp = tp.val(build(tp)).v[0];
      p->value.v[i] = keep - h;
      Tape<double> tm;
      double fm = tm.val(build(tm)).v[0];
      p->value.v[i] = keep;
      double numeric = (fp - fm) / (2.0 * h);
      double analytic = p->grad.v[i];
      double rel = std::abs(analytic - numeric) /
                   std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace

TEST_CASE("softmax of a constant row is uniform") {
  Tape<double> t;
  auto y = t.softmax_rows(t.constant(Tensor<double>({1, 4})));
  for (double v : t.val(y).v) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("matmul with identity") {
  Rng rng(1);
  Tape<double> t;
  auto a = random_tensor({3, 3}, rng);
  Tensor<double> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  auto out = t.matmul(t.constant(a), t.constant(eye));
  for (long i = 0; i < a.numel(); ++i) CHECK(t.val(out).v[i] == doctest::Approx(a.v[i]));
}

TEST_CASE("mse of equal tensors is zero") {
  Rng rng(2);
  Tape<double> t;
  auto x = random_tensor({4, 5}, rng);
  CHECK(t.val(t.mse(t.constant(x), t.constant(x))).v[0] == 0.0);
}

TEST_CASE("shape mismatch errors carry both shapes") {
  Tape<double> t;
  auto a = t.constant(Tensor<double>({2, 3}));
  auto b = t.constant(Tensor<double>({3, 3}));
  try {
    t.add(a, b);
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[3, 3]") != std::string::npos);
  }
}

TEST_CASE("backward of linear function gives the coefficient") {
  Rng rng(3);
  Parameter<double> w("w", random_tensor({6}, rng));
  auto x = random_tensor({6}, rng);
  Tape<double> t;
  auto loss = t.sum_all(t.mul(t.leaf(w), t.constant(x)));
  t.backward(loss);
  for (int i = 0; i < 6; ++i) CHECK(w.grad.v[i] == doctest::Approx(x.v[i]));
}

TEST_CASE("backward of mse against zero gives 2w/n") {
  Rng rng(4);
  Parameter<double> w("w", random_tensor({8}, rng));
  Tape<double> t;
  auto loss = t.mse(t.leaf(w), t.constant(Tensor<double>({8})));
  t.backward(loss);
  for (int i = 0; i < 8; ++i) CHECK(w.grad.v[i] == doctest::Approx(2.0 * w.value.v[i] / 8.0));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape<double> t;
  auto a = t.constant(Tensor<double>({2, 2}));
  CHECK_THROWS_AS(t.backward(a), std::invalid_argument);
}

TEST_CASE("gradient check: every differentiable primitive") {
  Rng rng(5);
  Parameter<double> A("A", random_tensor({3, 4}, rng));
  Parameter<double> B("B", random_tensor({4, 5}, rng));
  Parameter<double> C("C", random_tensor({3, 4}, rng));
  Parameter<double> bias("bias", random_tensor({4}, rng));
  Parameter<double> gamma("gamma", random_tensor({4}, rng, 0.5));
  Parameter<double> beta("beta", random_tensor({4}, rng, 0.5));
  auto target = random_tensor({3, 4}, rng);
  gamma.value.v[0] += 1.0;  // keep scale away from zero

  auto check = [&](const char* name, std::vector<Parameter<double>*> ps,
                   std::function<Var(Tape<double>&)> build) {
    INFO(name);
    CHECK(gradcheck(std::move(ps), build) < 1e-4);
  };

  check("matmul", {&A, &B}, [&](Tape<double>& t) {
    return t.mse(t.matmul(t.leaf(A), t.leaf(B)), t.constant(Tensor<double>({3, 5})));
  });
  check("add/sub/mul", {&A, &C}, [&](Tape<double>& t) {
    auto s = t.add(t.leaf(A), t.leaf(C));
    auto d = t.sub(s, t.mul(t.leaf(A), t.leaf(C)));
    return t.mse(d, t.constant(target));
  });
  check("add_rowvec", {&A, &bias}, [&](Tape<double>& t) {
    return t.mse(t.add_rowvec(t.leaf(A), t.leaf(bias)), t.constant(target));
  });
  check("transpose+reshape", {&A}, [&](Tape<double>& t) {
    auto tr = t.transpose(t.leaf(A));
    return t.mse(t.reshape(tr, {3, 4}), t.constant(target));
  });
  check("concat+slice", {&A, &C}, [&](Tape<double>& t) {
    auto cat = t.concat({t.leaf(A), t.leaf(C)}, 1);       // 3 x 8
    auto sl = t.slice_cols(cat, 2, 6);                    // 3 x 4
    auto rows = t.slice_rows(t.concat({sl, sl}, 0), 1, 4);  // 3 x 4
    return t.mse(rows, t.constant(target));
  });
  check("sum/mean axis", {&A}, [&](Tape<double>& t) {
    auto s0 = t.sum_axis(t.leaf(A), 0);   // 4
    auto m1 = t.mean_axis(t.leaf(A), 1);  // 3
    return t.add(t.mse(s0, t.constant(Tensor<double>({4}))),
                 t.mse(m1, t.constant(Tensor<double>({3}))));
  });
  check("softmax", {&A}, [&](Tape<double>& t) {
    return t.mse(t.softmax_rows(t.leaf(A)), t.constant(target));
  });
  check("layer_norm", {&A, &gamma, &beta}, [&](Tape<double>& t) {
    return t.mse(t.layer_norm(t.leaf(A), t.leaf(gamma), t.leaf(beta)), t.constant(target));
  });
  check("gelu", {&A}, [&](Tape<double>& t) {
    return t.mse(t.gelu(t.leaf(A)), t.constant(target));
  });
  check("scale+mean_all", {&A}, [&](Tape<double>& t) {
    return t.scale(t.mean_all(t.leaf(A)), 3.25);
  });
  check("masked_mse", {&A}, [&](Tape<double>& t) {
    Tensor<double> mask({3, 4});
    for (int i = 0; i < 3; ++i) mask.at(i, i) = 1.0;
    return t.masked_mse(t.leaf(A), target, mask);
  });
}

TEST_CASE("gradient check: two-layer network") {
  Rng rng(6);
  Parameter<double> w1("w1", random_tensor({5, 7}, rng, 0.5));
  Parameter<double> b1("b1", random_tensor({7}, rng, 0.1));
  Parameter<double> w2("w2", random_tensor({7, 3}, rng, 0.5));
  Parameter<double> b2("b2", random_tensor({3}, rng, 0.1));
  auto x = random_tensor({4, 5}, rng);
  auto y = random_tensor({4, 3}, rng);
  auto build = [&](Tape<double>& t) {
    auto h = t.gelu(t.add_rowvec(t.matmul(t.constant(x), t.leaf(w1)), t.leaf(b1)));
    auto out = t.add_rowvec(t.matmul(h, t.leaf(w2)), t.leaf(b2));
    return t.mse(out, t.constant(y));
  };
  CHECK(gradcheck({&w1, &b1, &w2, &b2}, build) < 1e-4);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(7);
  Tape<double> t;
  auto y = t.softmax_rows(t.constant(random_tensor({6, 9}, rng, 3.0)));
  for (int i = 0; i < 6; ++i) {
    double s = 0;
    for (int j = 0; j < 9; ++j) s += t.val(y).at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("layer_norm normalizes before scale/shift") {
  Rng rng(8);
  Parameter<double> gamma("g", Tensor<double>::full({10}, 1.0));
  Parameter<double> beta("b", Tensor<double>({10}));
  Tape<double> t;
  auto y = t.layer_norm(t.constant(random_tensor({5, 10}, rng, 2.0)), t.leaf(gamma),
                        t.leaf(beta));
  for (int i = 0; i < 5; ++i) {
    double mean = 0, var = 0;
    for (int j = 0; j < 10; ++j) mean += t.val(y).at(i, j);
    mean /= 10;
    for (int j = 0; j < 10; ++j) {
      double d = t.val(y).at(i, j) - mean;
      var += d * d;
    }
    var /= 10;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);  // eps in the denominator shifts variance slightly
  }
}

TEST_CASE("dropout identities") {
  Rng rng(9);
  auto x = random_tensor({4, 6}, rng);
  Tape<double> t;
  Rng drop_rng(1);
  auto eval_out = t.dropout(t.constant(x), 0.7, /*train=*/false, nullptr);
  CHECK(t.val(eval_out).v == x.v);
  auto rate0 = t.dropout(t.constant(x), 0.0, /*train=*/true, &drop_rng);
  CHECK(t.val(rate0).v == x.v);
  CHECK_THROWS_AS(t.dropout(t.constant(x), 1.0, true, &drop_rng), std::invalid_argument);
}

TEST_CASE("dropout backward matches its forward mask") {
  Rng rng(10);
  auto x = random_tensor({3, 5}, rng);
  x.v.assign(x.v.size(), 1.0);
  Parameter<double> w("w", x);
  Tape<double> t;
  Rng drop_rng(77);
  auto y = t.dropout(t.leaf(w), 0.5, true, &drop_rng);
  auto loss = t.sum_all(y);
  t.backward(loss);
  // gradient must equal the realized mask (0 or 1/(1-rate))
  for (long i = 0; i < w.value.numel(); ++i) {
    double m = t.val(y).v[i];  // value = mask since input is all-ones
    CHECK(w.grad.v[i] == doctest::Approx(m));
  }
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  Rng rng(11);
  Parameter<double> w("w", random_tensor({5}, rng));
  auto before = w.value.v;
  Adam<double> opt({&w}, 0.01);
  opt.step();
  CHECK(w.value.v == before);
}

TEST_CASE("adam first step is a signed lr-scale move") {
  // hand-evaluated recurrence at t=1: update = -lr * g / (|g| + eps')
  Parameter<double> w("w", Tensor<double>({3}, {1.0, -2.0, 0.5}));
  w.grad = Tensor<double>({3}, {0.3, -0.7, 4.0});
  double lr = 0.01;
  Adam<double> opt({&w}, lr);
  auto g = w.grad.v;
  opt.step();
  for (int i = 0; i < 3; ++i) {
    double expect = (i == 0 ? 1.0 : (i == 1 ? -2.0 : 0.5)) -
                    lr * g[i] / (std::abs(g[i]) + 1e-8);
    CHECK(w.value.v[i] == doctest::Approx(expect).epsilon(1e-6));
    CHECK(w.grad.v[i] == 0.0);  // zeroed after the step
  }
}

TEST_CASE("adam determinism") {
  auto run = [] {
    Rng rng(12);
    Parameter<double> w("w", Tensor<double>({4}, {0.1, 0.2, 0.3, 0.4}));
    Adam<double> opt({&w}, 0.05);
    for (int i = 0; i < 20; ++i) {
      Tape<double> t;
      auto loss = t.mse(t.leaf(w), t.constant(Tensor<double>({4}, {1, 1, 1, 1})));
      t.backward(loss);
      opt.step();
    }
    return w.value.v;
  };
  CHECK(run() == run());
}
