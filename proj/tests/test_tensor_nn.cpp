#include <doctest.h>

#include <cmath>
#include <limits>

#include "pgvae/nn.hpp"
#include "test_support.hpp"

using namespace pgvae;
using testing::Gen;

namespace {

template <typename T>
std::vector<nn::ParamRef<T>> params_of(nn::Conv2d<T>& c) {
  std::vector<nn::ParamRef<T>> out;
  c.collect(out);
  return out;
}

template <typename T>
std::vector<nn::ParamRef<T>> params_of(nn::Linear<T>& l) {
  std::vector<nn::ParamRef<T>> out;
  l.collect(out);
  return out;
}

// Straight loop convolution with zero padding.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int stride,
                          int pad) {
  const int n = x.shape().n, ci = x.shape().c, h = x.shape().h, wd = x.shape().w;
  const int co = w.shape().n, k = w.shape().h;
  const int ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor<double> y({n, co, ho, wo});
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < co; ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = b.at(0, o, 0, 0);
          for (int i = 0; i < ci; ++i)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += w.at(o, i, ky, kx) * x.at(s, i, iy, ix);
              }
          y.at(s, o, oy, ox) = acc;
        }
  return y;
}

// Scalar objective sum(y * probe), whose gradient wrt y is probe.
double dot(const Tensor<double>& y, const Tensor<double>& probe) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * probe[i];
  return s;
}

}  // namespace

TEST_CASE("tensor indexing is NCHW and reshape keeps the payload") {
  Tensor<float> t({2, 3, 4, 5});
  t.at(1, 2, 3, 4) = 7.0f;
  CHECK(t[((1 * 3 + 2) * 4 + 3) * 5 + 4] == 7.0f);
  CHECK(t.sample(1).size() == 60u);
  const auto r = t.reshaped({2, 60, 1, 1});
  CHECK(r.at(1, 59, 0, 0) == 7.0f);
  CHECK_THROWS_AS(t.reshaped({2, 61, 1, 1}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>({1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
}

TEST_CASE("conv2d forward matches a direct loop for several geometries") {
  Gen g(1);
  struct Geo {
    int in, out, k, stride, pad, h;
  };
  for (const Geo geo : {Geo{1, 3, 3, 1, 1, 7}, Geo{2, 4, 3, 2, 1, 8}, Geo{3, 2, 1, 1, 0, 5}, Geo{2, 2, 3, 2, 1, 5}}) {
    nn::Conv2d<double> conv("c", geo.in, geo.out, geo.k, geo.stride, geo.pad);
    conv.init(g.engine());
    auto params = params_of(conv);
    for (auto& v : params[1].value->values()) v = g.uniform(-0.5, 0.5);
    const auto x = g.tensor<double>({2, geo.in, geo.h, geo.h});
    const auto y = conv.forward(x);
    const auto ref = naive_conv(x, *params[0].value, *params[1].value, geo.stride, geo.pad);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d gradients match central differences") {
  Gen g(2);
  nn::Conv2d<double> conv("c", 2, 3, 3, 2, 1);
  conv.init(g.engine());
  auto params = params_of(conv);
  auto x = g.tensor<double>({2, 2, 6, 6});
  const auto probe = g.tensor<double>({2, 3, 3, 3});
  conv.zero_grad();
  const auto dx = conv.backward(x, probe);
  const auto f = [&] { return dot(conv.forward(x), probe); };
  CHECK(testing::max_gradient_error(x, dx, f) < 1e-6);
  CHECK(testing::max_gradient_error(*params[0].value, *params[0].grad, f) < 1e-6);
  CHECK(testing::max_gradient_error(*params[1].value, *params[1].grad, f) < 1e-6);

  const auto dx_only = conv.backward_input(x, probe);
  for (std::size_t i = 0; i < dx.size(); ++i) CHECK(dx_only[i] == doctest::Approx(dx[i]).epsilon(1e-12));
}

TEST_CASE("conv2d backward accumulates until zero_grad") {
  Gen g(3);
  nn::Conv2d<double> conv("c", 1, 2, 3, 1, 1);
  conv.init(g.engine());
  auto params = params_of(conv);
  const auto x = g.tensor<double>({1, 1, 4, 4});
  const auto probe = g.tensor<double>({1, 2, 4, 4});
  conv.zero_grad();
  conv.backward(x, probe);
  const Tensor<double> once = *params[0].grad;
  conv.backward(x, probe);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK((*params[0].grad)[i] == doctest::Approx(2 * once[i]));
  conv.zero_grad();
  for (double v : params[0].grad->values()) CHECK(v == 0.0);
}

TEST_CASE("linear layer gradients match central differences") {
  Gen g(4);
  nn::Linear<double> lin("l", 6, 4);
  lin.init(g.engine());
  auto params = params_of(lin);
  for (auto& v : params[1].value->values()) v = g.uniform(-1, 1);
  auto x = g.tensor<double>({3, 6, 1, 1});
  const auto probe = g.tensor<double>({3, 4, 1, 1});
  const auto y = lin.forward(x);
  for (int s = 0; s < 3; ++s)
    for (int o = 0; o < 4; ++o) {
      double ref = params[1].value->at(0, o, 0, 0);
      for (int i = 0; i < 6; ++i) ref += params[0].value->at(o, i, 0, 0) * x.at(s, i, 0, 0);
      CHECK(y.at(s, o, 0, 0) == doctest::Approx(ref).epsilon(1e-12));
    }
  lin.zero_grad();
  const auto dx = lin.backward(x, probe);
  const auto f = [&] { return dot(lin.forward(x), probe); };
  CHECK(testing::max_gradient_error(x, dx, f) < 1e-6);
  CHECK(testing::max_gradient_error(*params[0].value, *params[0].grad, f) < 1e-6);
  CHECK(testing::max_gradient_error(*params[1].value, *params[1].grad, f) < 1e-6);
}

TEST_CASE("he-uniform init stays within its bound") {
  Gen g(5);
  nn::Conv2d<float> conv("c", 8, 16, 3, 1, 1);
  conv.init(g.engine());
  std::vector<nn::ParamRef<float>> p;
  conv.collect(p);
  const double bound = std::sqrt(6.0 / (1.04 * 72));
  double max_abs = 0.0;
  for (float v : p[0].value->values()) max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
  CHECK(max_abs <= bound);
  CHECK(max_abs > 0.8 * bound);
  for (float v : p[1].value->values()) CHECK(v == 0.0f);
}

TEST_CASE("elementwise activations and their gradients") {
  Gen g(6);
  auto x = g.tensor<double>({2, 3, 4, 4}, -3, 3);
  const auto probe = g.tensor<double>({2, 3, 4, 4});

  const auto lr = nn::leaky_relu(x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(lr[i] == (x[i] > 0 ? x[i] : 0.2 * x[i]));
  auto dl = nn::leaky_relu_backward(x, probe);
  CHECK(testing::max_gradient_error(x, dl, [&] { return dot(nn::leaky_relu(x), probe); }) < 1e-6);

  const auto th = nn::tanh(x);
  auto dt = nn::tanh_backward(th, probe);
  CHECK(testing::max_gradient_error(x, dt, [&] { return dot(nn::tanh(x), probe); }) < 1e-5);

  const auto sg = nn::sigmoid(x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(sg[i] == doctest::Approx(1.0 / (1.0 + std::exp(-x[i]))));
  auto ds = nn::sigmoid_backward(sg, probe);
  CHECK(testing::max_gradient_error(x, ds, [&] { return dot(nn::sigmoid(x), probe); }) < 1e-5);
}

TEST_CASE("upsample and channel concat are adjoint to their backward passes") {
  Gen g(7);
  auto x = g.tensor<double>({2, 3, 4, 5});
  const auto up = nn::upsample2x(x);
  REQUIRE(up.shape() == Shape{2, 3, 8, 10});
  CHECK(up.at(1, 2, 7, 9) == x.at(1, 2, 3, 4));
  CHECK(up.at(0, 1, 2, 3) == x.at(0, 1, 1, 1));
  const auto probe = g.tensor<double>({2, 3, 8, 10});
  auto dx = nn::upsample2x_backward(probe);
  CHECK(testing::max_gradient_error(x, dx, [&] { return dot(nn::upsample2x(x), probe); }) < 1e-6);

  const auto a = g.tensor<double>({2, 2, 3, 3});
  const auto b = g.tensor<double>({2, 3, 3, 3});
  const auto cat = nn::concat_channels(a, b);
  REQUIRE(cat.shape() == Shape{2, 5, 3, 3});
  CHECK(cat.at(1, 1, 2, 2) == a.at(1, 1, 2, 2));
  CHECK(cat.at(1, 4, 0, 1) == b.at(1, 2, 0, 1));
  const auto [da, db] = nn::split_channels(cat, 2);
  CHECK(da.storage() == a.storage());
  CHECK(db.storage() == b.storage());
}

TEST_CASE("adam applies the bias-corrected update") {
  Tensor<float> w({1, 1, 1, 2}, std::vector<float>{1.0f, -2.0f});
  Tensor<float> grad({1, 1, 1, 2}, std::vector<float>{0.5f, -0.25f});
  std::vector<nn::ParamRef<float>> params{{"w", &w, &grad}};
  nn::Adam opt({0.1, 0.5, 0.999, 1e-8}, params);
  opt.step(params);
  // First step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
  CHECK(w[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(-2.0 + 0.1).epsilon(1e-6));
  CHECK(opt.steps() == 1);

  opt.step(params);
  const double m = 0.5 * (0.5 * 0.5) + 0.5 * 0.5, v = 0.999 * (0.001 * 0.25) + 0.001 * 0.25;
  const double expected = 0.9 - 0.1 * (m / (1 - 0.25)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(w[0] == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("adam refuses non-finite gradients without touching any weight") {
  Tensor<float> a({1, 1, 1, 2}, 1.0f), b({1, 1, 1, 2}, 2.0f);
  Tensor<float> ga({1, 1, 1, 2}, 0.1f), gb({1, 1, 1, 2}, 0.1f);
  gb[1] = std::numeric_limits<float>::quiet_NaN();
  std::vector<nn::ParamRef<float>> params{{"a", &a, &ga}, {"b", &b, &gb}};
  nn::Adam opt({}, params);
  CHECK_THROWS_AS(opt.step(params), nn::NonFiniteError);
  CHECK(a[0] == 1.0f);
  CHECK(b[0] == 2.0f);
  CHECK(opt.steps() == 0);
}

TEST_CASE("gradient clipping rescales to the global norm") {
  Tensor<float> w({1, 1, 1, 2}), g1({1, 1, 1, 2}, std::vector<float>{3.0f, 0.0f});
  Tensor<float> v({1, 1, 1, 1}), g2({1, 1, 1, 1}, std::vector<float>{4.0f});
  std::vector<nn::ParamRef<float>> params{{"w", &w, &g1}, {"v", &v, &g2}};
  nn::clip_gradients(params, 10.0);
  CHECK(g1[0] == 3.0f);
  nn::clip_gradients(params, 1.0);
  CHECK(g1[0] == doctest::Approx(0.6));
  CHECK(g2[0] == doctest::Approx(0.8));
}
