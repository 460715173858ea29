#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "core/rng.hpp"
#include "nn/adamw.hpp"
#include "nn/modules.hpp"

using namespace miscal;
using nn::Tensor;

namespace {

void fill_random(Tensor& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (float& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
}

// double-precision reference convolution (naive loops)
std::vector<double> oracle_conv_forward(const Tensor& x, const Tensor& w, const float* bias,
                                        int stride, int pad, int oh, int ow) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wid = x.dim(3);
  const int cout = w.dim(0), k = w.dim(2);
  std::vector<double> out(static_cast<std::size_t>(n) * cout * oh * ow, 0.0);
  for (int i = 0; i < n; ++i)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double s = bias ? bias[co] : 0.0;
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wid) continue;
                const double xv =
                    x.data[((static_cast<std::size_t>(i) * cin + ci) * h + iy) * wid + ix];
                const double wv =
                    w.data[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx];
                s += xv * wv;
              }
          out[((static_cast<std::size_t>(i) * cout + co) * oh + oy) * ow + ox] = s;
        }
  return out;
}

// reference gradients by explicit accumulation over the forward dependency
void oracle_conv_backward(const Tensor& x, const Tensor& w, const Tensor& gout, int stride,
                          int pad, std::vector<double>& dw, std::vector<double>& dx,
                          std::vector<double>& db) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wid = x.dim(3);
  const int cout = w.dim(0), k = w.dim(2);
  const int oh = gout.dim(2), ow = gout.dim(3);
  dw.assign(w.numel(), 0.0);
  dx.assign(x.numel(), 0.0);
  db.assign(static_cast<std::size_t>(cout), 0.0);
  for (int i = 0; i < n; ++i)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double g =
              gout.data[((static_cast<std::size_t>(i) * cout + co) * oh + oy) * ow + ox];
          db[static_cast<std::size_t>(co)] += g;
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wid) continue;
                const std::size_t xi =
                    ((static_cast<std::size_t>(i) * cin + ci) * h + iy) * wid + ix;
                const std::size_t wi =
                    ((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx;
                dw[wi] += g * x.data[xi];
                dx[xi] += g * w.data[wi];
              }
        }
}

double max_rel_err(const std::vector<float>& got, const std::vector<double>& want) {
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double denom = std::max(1.0, std::abs(want[i]));
    worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_CASE("Conv2d forward matches the naive double-precision oracle") {
  Rng rng(101);
  for (const auto& [stride, pad, bias] : std::vector<std::tuple<int, int, bool>>{
           {1, 1, false}, {2, 1, true}, {2, 3, false}}) {
    const int k = pad == 3 ? 7 : 3;
    nn::Conv2d conv(3, 5, k, stride, pad, bias);
    conv.init_kaiming(rng);
    if (bias) fill_random(conv.bias, rng, -0.5, 0.5);
    Tensor x({2, 3, 9, 11});
    fill_random(x, rng);
    const Tensor y = conv.forward(x, false);
    const auto want = oracle_conv_forward(x, conv.weight, bias ? conv.bias.ptr() : nullptr,
                                          stride, pad, y.dim(2), y.dim(3));
    CHECK(max_rel_err(y.data, want) < 1e-5);
  }
}

TEST_CASE("Conv2d backward matches the naive gradient oracle") {
  Rng rng(202);
  nn::Conv2d conv(4, 6, 3, 2, 1, true);
  conv.init_kaiming(rng);
  fill_random(conv.bias, rng, -0.2, 0.2);
  Tensor x({3, 4, 8, 10});
  fill_random(x, rng);
  const Tensor y = conv.forward(x, true);
  Tensor gout(y.shape);
  fill_random(gout, rng);
  const Tensor gin = conv.backward(gout);

  std::vector<double> dw, dx, db;
  oracle_conv_backward(x, conv.weight, gout, 2, 1, dw, dx, db);
  CHECK(max_rel_err(conv.weight_grad.data, dw) < 1e-4);
  CHECK(max_rel_err(gin.data, dx) < 1e-4);
  CHECK(max_rel_err(conv.bias_grad.data, db) < 1e-4);
}

TEST_CASE("Conv2d gradients accumulate across calls until zeroed") {
  Rng rng(203);
  nn::Conv2d conv(2, 3, 3, 1, 1, false);
  conv.init_kaiming(rng);
  Tensor x({1, 2, 5, 5});
  fill_random(x, rng);
  Tensor gout({1, 3, 5, 5});
  fill_random(gout, rng);
  (void)conv.forward(x, true);
  (void)conv.backward(gout);
  const Tensor once = conv.weight_grad;
  (void)conv.forward(x, true);
  (void)conv.backward(gout);
  for (std::size_t i = 0; i < once.numel(); ++i)
    CHECK(conv.weight_grad.data[i] == doctest::Approx(2.0f * once.data[i]).epsilon(1e-4));
}

TEST_CASE("BatchNorm2d: train-mode forward normalizes with batch statistics") {
  Rng rng(301);
  nn::BatchNorm2d bn(3);
  fill_random(bn.gamma, rng, 0.5, 1.5);
  fill_random(bn.beta, rng, -0.5, 0.5);
  Tensor x({4, 3, 5, 6});
  fill_random(x, rng, -2.0, 3.0);
  const Tensor y = bn.forward(x, true);

  const int n = 4, c = 3, h = 5, w = 6;
  const double m = static_cast<double>(n) * h * w;
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) {
          const double v = x.data[((static_cast<std::size_t>(i) * c + ch) * h + yy) * w + xx];
          sum += v;
          sumsq += v * v;
        }
    const double mean = sum / m;
    const double var = sumsq / m - mean * mean;
    const double invstd = 1.0 / std::sqrt(var + 1e-5);
    for (int i = 0; i < n; ++i)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) {
          const std::size_t at = ((static_cast<std::size_t>(i) * c + ch) * h + yy) * w + xx;
          const double want = bn.gamma.data[ch] * (x.data[at] - mean) * invstd + bn.beta.data[ch];
          CHECK(y.data[at] == doctest::Approx(want).epsilon(1e-4));
        }
  }
}

TEST_CASE("BatchNorm2d backward matches finite differences") {
  // values and step chosen exactly representable in binary so the finite
  // difference is clean
  Rng rng(302);
  nn::BatchNorm2d bn(2);
  Tensor x({2, 2, 3, 3});
  for (float& v : x.data)
    v = static_cast<float>(static_cast<int>(rng.uniform_int(64)) - 32) / 16.0f;
  Tensor gout({2, 2, 3, 3});
  fill_random(gout, rng);

  (void)bn.forward(x, true);
  const Tensor gin = bn.backward(gout);

  const float h = 1.0f / 256.0f;
  for (std::size_t probe : {0ul, 7ul, 17ul, 35ul}) {
    Tensor xp = x, xm = x;
    xp.data[probe] += h;
    xm.data[probe] -= h;
    nn::BatchNorm2d bn_p(2), bn_m(2);
    bn_p.gamma = bn.gamma;
    bn_p.beta = bn.beta;
    bn_m.gamma = bn.gamma;
    bn_m.beta = bn.beta;
    const Tensor yp = bn_p.forward(xp, true);
    const Tensor ym = bn_m.forward(xm, true);
    double lp = 0.0, lm = 0.0;
    for (std::size_t i = 0; i < yp.numel(); ++i) {
      lp += static_cast<double>(yp.data[i]) * gout.data[i];
      lm += static_cast<double>(ym.data[i]) * gout.data[i];
    }
    const double fd = (lp - lm) / (2.0 * h);
    CHECK(gin.data[probe] == doctest::Approx(fd).epsilon(5e-3));
  }
}

TEST_CASE("BatchNorm2d eval mode uses running statistics") {
  nn::BatchNorm2d bn(1);
  Tensor x({2, 1, 2, 2});
  for (std::size_t i = 0; i < x.numel(); ++i) x.data[i] = static_cast<float>(i);
  (void)bn.forward(x, true);  // updates running stats once
  const Tensor y = bn.forward(x, false);
  const double mean = bn.running_mean.data[0];
  const double invstd = 1.0 / std::sqrt(bn.running_var.data[0] + 1e-5);
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(y.data[i] == doctest::Approx((x.data[i] - mean) * invstd).epsilon(1e-5));
}

TEST_CASE("MaxPool2d forward/backward against a hand-checked window") {
  nn::MaxPool2d pool(3, 2, 1);
  Tensor x({1, 1, 4, 4});
  // row-major 4x4: max of each 3x3 window (stride 2, pad 1)
  const float vals[16] = {1, 5, 2, 0, 3, 4, 1, 1, 0, 2, 9, 2, 7, 1, 3, 8};
  std::copy(vals, vals + 16, x.data.begin());
  const Tensor y = pool.forward(x, true);
  REQUIRE(y.shape == std::vector<int>{1, 1, 2, 2});
  CHECK(y.data[0] == 5.0f);
  CHECK(y.data[1] == 5.0f);
  CHECK(y.data[2] == 7.0f);
  CHECK(y.data[3] == 9.0f);

  Tensor gout({1, 1, 2, 2});
  gout.data = {1.0f, 2.0f, 4.0f, 8.0f};
  const Tensor gin = pool.backward(gout);
  CHECK(gin.data[1] == 3.0f);   // value 5 receives both windows
  CHECK(gin.data[12] == 4.0f);  // value 7
  CHECK(gin.data[10] == 8.0f);  // value 9
}

TEST_CASE("Linear forward/backward against manual arithmetic") {
  nn::Linear lin(3, 2);
  lin.weight.data = {1, 2, 3, 4, 5, 6};
  lin.bias.data = {0.5f, -0.5f};
  Tensor x({2, 3});
  x.data = {1, 0, -1, 2, 1, 0};
  const Tensor y = lin.forward(x, true);
  CHECK(y.data[0] == doctest::Approx(1 - 3 + 0.5));
  CHECK(y.data[1] == doctest::Approx(4 - 6 - 0.5));
  CHECK(y.data[2] == doctest::Approx(2 + 2 + 0.5));
  CHECK(y.data[3] == doctest::Approx(8 + 5 - 0.5));

  Tensor gout({2, 2});
  gout.data = {1, 0, 0, 1};
  const Tensor gin = lin.backward(gout);
  // dx row0 = W row0; row1 = W row1
  CHECK(gin.data[0] == 1.0f);
  CHECK(gin.data[1] == 2.0f);
  CHECK(gin.data[2] == 3.0f);
  CHECK(gin.data[3] == 4.0f);
  CHECK(gin.data[4] == 5.0f);
  CHECK(gin.data[5] == 6.0f);
  // dW = goutᵀ x
  CHECK(lin.weight_grad.data[0] == 1.0f);   // (out0, in0) <- x[0]
  CHECK(lin.weight_grad.data[3] == 2.0f);   // (out1, in0) <- x[1][0]
  CHECK(lin.bias_grad.data[0] == 1.0f);
  CHECK(lin.bias_grad.data[1] == 1.0f);
}

TEST_CASE("GlobalAvgPool averages and spreads gradient evenly") {
  nn::GlobalAvgPool gap;
  Tensor x({1, 2, 2, 2});
  x.data = {1, 2, 3, 4, 10, 20, 30, 40};
  const Tensor y = gap.forward(x, true);
  CHECK(y.data[0] == doctest::Approx(2.5));
  CHECK(y.data[1] == doctest::Approx(25.0));
  Tensor gout({1, 2});
  gout.data = {4.0f, 8.0f};
  const Tensor gin = gap.backward(gout);
  CHECK(gin.data[0] == 1.0f);
  CHECK(gin.data[4] == 2.0f);
}

TEST_CASE("ReLU masks gradients by the sign of the output") {
  nn::ReLU relu;
  Tensor x({1, 1, 1, 4});
  x.data = {-1.0f, 0.0f, 2.0f, -3.0f};
  const Tensor y = relu.forward(x, true);
  CHECK(y.data == std::vector<float>{0, 0, 2, 0});
  Tensor gout({1, 1, 1, 4});
  gout.data = {1, 1, 1, 1};
  const Tensor gin = relu.backward(gout);
  CHECK(gin.data == std::vector<float>{0, 0, 1, 0});
}

TEST_CASE("AdamW single step matches hand-computed update") {
  nn::Conv2d conv(1, 1, 1, 1, 0, false);
  conv.weight.data = {2.0f};
  conv.weight_grad.data = {0.5f};
  std::vector<nn::TensorRef> params;
  conv.visit("w", [&params](const nn::TensorRef& r) { params.push_back(r); });
  nn::AdamW opt(params);
  opt.step(0.1, 0.01);

  // t=1: m=0.05, v=2.5e-4 -> mhat=0.5, vhat=2.5e-1... with bias correction
  const double m = 0.1 * 0.5, v = 0.001 * 0.25;
  const double mhat = m / (1.0 - 0.9);
  const double vhat = v / (1.0 - 0.999);
  const double want = 2.0 - 0.1 * (mhat / (std::sqrt(vhat) + 1e-8) + 0.01 * 2.0);
  CHECK(conv.weight.data[0] == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("AdamW decoupled weight decay shrinks weights with zero gradient") {
  nn::Conv2d conv(1, 1, 1, 1, 0, false);
  conv.weight.data = {1.0f};
  conv.weight_grad.data = {0.0f};
  std::vector<nn::TensorRef> params;
  conv.visit("w", [&params](const nn::TensorRef& r) { params.push_back(r); });
  nn::AdamW opt(params);
  opt.step(0.1, 0.5);
  CHECK(conv.weight.data[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-6));
}

TEST_CASE("bce_with_logits agrees with clamped bce on probabilities") {
  Tensor logits({3, 1});
  logits.data = {0.0f, 2.0f, -1.5f};
  const std::vector<int> labels = {1, 0, 1};
  Tensor grad;
  const double loss = nn::bce_with_logits(logits, labels, &grad);

  double want = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.data[i])));
    want += nn::bce_loss(p, labels[i]);
  }
  want /= 3.0;
  CHECK(loss == doctest::Approx(want).epsilon(1e-9));
  // dL/dz = (p - y)/n
  const double p0 = 0.5;
  CHECK(grad.data[0] == doctest::Approx((p0 - 1.0) / 3.0).epsilon(1e-6));
}
