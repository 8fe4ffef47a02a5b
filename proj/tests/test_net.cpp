#include <catch2/catch_amalgamated.hpp>

#include "cloakforge/net.hpp"
#include "cloakforge/rng.hpp"

using namespace cloakforge;
using namespace cloakforge::det;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

// reference conv written with an independent loop structure
Tensor conv_reference(const Conv2d& conv, const Tensor& x) {
  const int ih = x.dim(0), iw = x.dim(1), ic = conv.in_ch;
  const int pad = conv.ksize / 2;
  const int oh = (ih + 2 * pad - conv.ksize) / conv.stride + 1;
  const int ow = (iw + 2 * pad - conv.ksize) / conv.stride + 1;
  Tensor y({oh, ow, conv.out_ch});
  for (int co = 0; co < conv.out_ch; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = conv.b[co];
        for (int ci = 0; ci < ic; ++ci)
          for (int ky = 0; ky < conv.ksize; ++ky)
            for (int kx = 0; kx < conv.ksize; ++kx) {
              int sy = oy * conv.stride + ky - pad;
              int sx = ox * conv.stride + kx - pad;
              if (sy < 0 || sy >= ih || sx < 0 || sx >= iw) continue;
              acc += x.at(sy, sx, ci) *
                     conv.w[((size_t(co) * conv.ksize + ky) * conv.ksize + kx) * ic + ci];
            }
        y.at(oy, ox, co) = acc;
      }
  return y;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("conv forward matches a straightforward reference") {
  Rng rng(100);
  for (int trial = 0; trial < 10; ++trial) {
    Conv2d conv;
    int ic = static_cast<int>(rng.uniform_int(1, 4));
    int oc = static_cast<int>(rng.uniform_int(1, 5));
    int k = rng.uniform() < 0.5 ? 1 : 3;
    int stride = rng.uniform() < 0.5 ? 1 : 2;
    conv.configure(ic, oc, k, stride, rng);
    for (size_t i = 0; i < conv.b.size(); ++i) conv.b[i] = rng.uniform(-0.5, 0.5);
    Tensor x = random_tensor({static_cast<int>(rng.uniform_int(4, 9)),
                              static_cast<int>(rng.uniform_int(4, 9)), ic},
                             rng);
    Tensor y = conv.forward(x);
    Tensor ref = conv_reference(conv, x);
    REQUIRE(y.same_shape(ref));
    for (size_t i = 0; i < y.size(); ++i)
      REQUIRE_THAT(y[i], Catch::Matchers::WithinAbs(ref[i], 1e-12));
  }
}

TEST_CASE("conv backward matches central finite differences") {
  Rng rng(101);
  Conv2d conv;
  conv.configure(2, 3, 3, 2, rng);
  Tensor x = random_tensor({5, 5, 2}, rng);
  Tensor r = random_tensor(conv.forward(x).shape(), rng);  // loss = <y, r>

  conv.zero_grad();
  Tensor dx = conv.backward(x, r, true);

  const double h = 1e-6;
  auto loss = [&]() { return dot(conv.forward(x), r); };
  for (size_t i = 0; i < conv.w.size(); ++i) {
    double keep = conv.w[i];
    conv.w[i] = keep + h;
    double lp = loss();
    conv.w[i] = keep - h;
    double lm = loss();
    conv.w[i] = keep;
    REQUIRE_THAT(conv.dw[i], Catch::Matchers::WithinAbs((lp - lm) / (2 * h), 1e-5));
  }
  for (size_t i = 0; i < conv.b.size(); ++i) {
    double keep = conv.b[i];
    conv.b[i] = keep + h;
    double lp = loss();
    conv.b[i] = keep - h;
    double lm = loss();
    conv.b[i] = keep;
    REQUIRE_THAT(conv.db[i], Catch::Matchers::WithinAbs((lp - lm) / (2 * h), 1e-5));
  }
  for (size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + h;
    double lp = loss();
    x[i] = keep - h;
    double lm = loss();
    x[i] = keep;
    REQUIRE_THAT(dx[i], Catch::Matchers::WithinAbs((lp - lm) / (2 * h), 1e-5));
  }
}

TEST_CASE("linear backward matches central finite differences") {
  Rng rng(102);
  Linear lin;
  lin.configure(7, 4, rng);
  Tensor x = random_tensor({7}, rng);
  Tensor r = random_tensor({4}, rng);
  lin.zero_grad();
  Tensor dx = lin.backward(x, r);
  const double h = 1e-6;
  auto loss = [&]() { return dot(lin.forward(x), r); };
  for (size_t i = 0; i < lin.w.size(); ++i) {
    double keep = lin.w[i];
    lin.w[i] = keep + h;
    double lp = loss();
    lin.w[i] = keep - h;
    double lm = loss();
    lin.w[i] = keep;
    REQUIRE_THAT(lin.dw[i], Catch::Matchers::WithinAbs((lp - lm) / (2 * h), 1e-6));
  }
  for (size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + h;
    double lp = loss();
    x[i] = keep - h;
    double lm = loss();
    x[i] = keep;
    REQUIRE_THAT(dx[i], Catch::Matchers::WithinAbs((lp - lm) / (2 * h), 1e-6));
  }
}

TEST_CASE("relu zeroes gradients where the preactivation is non-positive") {
  Tensor pre({4});
  pre[0] = -1;
  pre[1] = 0;
  pre[2] = 0.5;
  pre[3] = 2;
  Tensor dy({4}, 1.0);
  Tensor dx = relu_backward(pre, dy);
  REQUIRE(dx[0] == 0);
  REQUIRE(dx[1] == 0);
  REQUIRE(dx[2] == 1);
  REQUIRE(dx[3] == 1);
}

TEST_CASE("adam descends a quadratic and is deterministic") {
  auto run = [] {
    Tensor p({3});
    p[0] = 5;
    p[1] = -4;
    p[2] = 2;
    Tensor g({3});
    Adam adam(0.1);
    for (int it = 0; it < 200; ++it) {
      for (int i = 0; i < 3; ++i) g[i] = 2 * p[i];  // d/dp of sum p^2
      adam.step({&p}, {&g});
    }
    return p;
  };
  Tensor a = run(), b = run();
  REQUIRE(a == b);
  for (int i = 0; i < 3; ++i) REQUIRE(std::abs(a[i]) < 1e-2);
}

TEST_CASE("image_to_tensor normalizes to [0,1]") {
  Image img(2, 1);
  img.set(0, 0, RGB{0, 128, 255});
  img.set(1, 0, RGB{51, 0, 102});
  Tensor t = image_to_tensor(img);
  REQUIRE(t.shape() == std::vector<int>{1, 2, 3});
  REQUIRE(t.at(0, 0, 0) == 0.0);
  REQUIRE(t.at(0, 0, 2) == 1.0);
  REQUIRE_THAT(t.at(0, 1, 0), Catch::Matchers::WithinAbs(0.2, 1e-12));
}
