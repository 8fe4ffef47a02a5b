#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "cloakforge/image.hpp"
#include "cloakforge/rng.hpp"
#include "cloakforge/tensor.hpp"

namespace cloakforge::det {

inline Tensor image_to_tensor(const Image& img) {
  Tensor t({img.height(), img.width(), 3});
  const uint8_t* src = img.data();
  double* dst = t.data();
  for (size_t i = 0; i < t.size(); ++i) dst[i] = src[i] / 255.0;
  return t;
}

// 2-d convolution over HWC tensors, square kernel (1 or 3), zero padding
// k/2. Weights are [out_ch][k][k][in_ch]; the inner dot product runs over
// the contiguous channel axis.
struct Conv2d {
  int in_ch = 0, out_ch = 0, ksize = 3, stride = 1;
  Tensor w, b, dw, db;

  void configure(int in_channels, int out_channels, int kernel, int s, Rng& rng) {
    in_ch = in_channels;
    out_ch = out_channels;
    ksize = kernel;
    stride = s;
    w = Tensor({out_ch, ksize, ksize, in_ch});
    b = Tensor({out_ch});
    dw = Tensor({out_ch, ksize, ksize, in_ch});
    db = Tensor({out_ch});
    double std = std::sqrt(2.0 / (ksize * ksize * in_ch));
    for (size_t i = 0; i < w.size(); ++i) w[i] = rng.normal() * std;
  }

  Tensor forward(const Tensor& x) const {
    const int ih = x.dim(0), iw = x.dim(1);
    const int pad = ksize / 2;
    const int oh = (ih + 2 * pad - ksize) / stride + 1;
    const int ow = (iw + 2 * pad - ksize) / stride + 1;
    Tensor y({oh, ow, out_ch});
    const double* xp = x.data();
    const double* wp = w.data();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double* out = y.data() + (static_cast<size_t>(oy) * ow + ox) * out_ch;
        for (int co = 0; co < out_ch; ++co) out[co] = b[co];
        for (int ky = 0; ky < ksize; ++ky) {
          const int sy = oy * stride + ky - pad;
          if (sy < 0 || sy >= ih) continue;
          for (int kx = 0; kx < ksize; ++kx) {
            const int sx = ox * stride + kx - pad;
            if (sx < 0 || sx >= iw) continue;
            const double* in = xp + (static_cast<size_t>(sy) * iw + sx) * in_ch;
            for (int co = 0; co < out_ch; ++co) {
              const double* wrow = wp + ((static_cast<size_t>(co) * ksize + ky) * ksize + kx) * in_ch;
              double acc = 0;
              for (int ci = 0; ci < in_ch; ++ci) acc += in[ci] * wrow[ci];
              out[co] += acc;
            }
          }
        }
      }
    }
    return y;
  }

  // Accumulates dw/db and returns dL/dx (skipped when need_dx is false,
  // e.g. for the first layer whose input is the image).
  Tensor backward(const Tensor& x, const Tensor& dy, bool need_dx = true) {
    const int ih = x.dim(0), iw = x.dim(1);
    const int oh = dy.dim(0), ow = dy.dim(1);
    const int pad = ksize / 2;
    Tensor dx;
    if (need_dx) dx = Tensor({ih, iw, in_ch});
    const double* xp = x.data();
    const double* wp = w.data();
    double* dwp = dw.data();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double* g = dy.data() + (static_cast<size_t>(oy) * ow + ox) * out_ch;
        for (int co = 0; co < out_ch; ++co) db[co] += g[co];
        for (int ky = 0; ky < ksize; ++ky) {
          const int sy = oy * stride + ky - pad;
          if (sy < 0 || sy >= ih) continue;
          for (int kx = 0; kx < ksize; ++kx) {
            const int sx = ox * stride + kx - pad;
            if (sx < 0 || sx >= iw) continue;
            const double* in = xp + (static_cast<size_t>(sy) * iw + sx) * in_ch;
            double* din = need_dx ? dx.data() + (static_cast<size_t>(sy) * iw + sx) * in_ch
                                  : nullptr;
            for (int co = 0; co < out_ch; ++co) {
              const double gc = g[co];
              if (gc == 0.0) continue;
              const size_t woff = ((static_cast<size_t>(co) * ksize + ky) * ksize + kx) * in_ch;
              const double* wrow = wp + woff;
              double* dwrow = dwp + woff;
              for (int ci = 0; ci < in_ch; ++ci) {
                dwrow[ci] += gc * in[ci];
                if (din) din[ci] += gc * wrow[ci];
              }
            }
          }
        }
      }
    }
    return dx;
  }

  void zero_grad() {
    dw.zero();
    db.zero();
  }
};

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (size_t i = 0; i < y.size(); ++i)
    if (y[i] < 0) y[i] = 0;
  return y;
}

inline Tensor relu_backward(const Tensor& pre, const Tensor& dy) {
  Tensor dx = dy;
  for (size_t i = 0; i < dx.size(); ++i)
    if (pre[i] <= 0) dx[i] = 0;
  return dx;
}

struct Linear {
  int in_dim = 0, out_dim = 0;
  Tensor w, b, dw, db;  // w is [out, in]

  void configure(int in, int out, Rng& rng) {
    in_dim = in;
    out_dim = out;
    w = Tensor({out, in});
    b = Tensor({out});
    dw = Tensor({out, in});
    db = Tensor({out});
    double std = std::sqrt(2.0 / in);
    for (size_t i = 0; i < w.size(); ++i) w[i] = rng.normal() * std;
  }

  Tensor forward(const Tensor& x) const {
    Tensor y({out_dim});
    for (int o = 0; o < out_dim; ++o) {
      double acc = b[o];
      const double* wrow = w.data() + static_cast<size_t>(o) * in_dim;
      for (int i = 0; i < in_dim; ++i) acc += wrow[i] * x[i];
      y[o] = acc;
    }
    return y;
  }

  Tensor backward(const Tensor& x, const Tensor& dy) {
    Tensor dx({in_dim});
    for (int o = 0; o < out_dim; ++o) {
      const double g = dy[o];
      db[o] += g;
      const double* wrow = w.data() + static_cast<size_t>(o) * in_dim;
      double* dwrow = dw.data() + static_cast<size_t>(o) * in_dim;
      for (int i = 0; i < in_dim; ++i) {
        dwrow[i] += g * x[i];
        dx[i] += g * wrow[i];
      }
    }
    return dx;
  }

  void zero_grad() {
    dw.zero();
    db.zero();
  }
};

// Plain Adam over explicit parameter/gradient tensor lists. State order is
// tied to the registration order, which the caller keeps stable.
struct Adam {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int t = 0;
  std::vector<Tensor> m, v;

  explicit Adam(double learning_rate = 1e-3) : lr(learning_rate) {}

  void step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads) {
    if (params.size() != grads.size()) throw ShapeError("adam: params/grads mismatch");
    if (m.empty()) {
      for (auto* p : params) {
        m.emplace_back(p->shape());
        v.emplace_back(p->shape());
      }
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (size_t k = 0; k < params.size(); ++k) {
      Tensor& p = *params[k];
      const Tensor& g = *grads[k];
      for (size_t i = 0; i < p.size(); ++i) {
        m[k][i] = beta1 * m[k][i] + (1 - beta1) * g[i];
        v[k][i] = beta2 * v[k][i] + (1 - beta2) * g[i] * g[i];
        p[i] -= lr * (m[k][i] / bc1) / (std::sqrt(v[k][i] / bc2) + eps);
      }
    }
  }
};

inline void softmax_row(const double* logits, double* probs, int n) {
  double mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double sum = 0;
  for (int i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (int i = 0; i < n; ++i) probs[i] /= sum;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace cloakforge::det
