#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace oracle {

Knn knn_bruteforce(const std::vector<double>& x, std::size_t n, std::size_t d, std::size_t k, std::size_t dilation) {
  Knn out;
  std::vector<std::vector<std::size_t>> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        double diff = x[i * d + t] - x[j * d + t];
        s += diff * diff;
      }
      cand.emplace_back(s, j);
    }
    std::sort(cand.begin(), cand.end());
    for (std::size_t r = 0; r < cand.size() && rows[i].size() < k; r += dilation) rows[i].push_back(cand[r].second);
  }
  out.neighbors = rows.empty() ? 0 : rows[0].size();
  for (auto& r : rows) out.indices.insert(out.indices.end(), r.begin(), r.end());
  return out;
}

std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m, std::size_t k,
                           std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * n + j] += a[i * k + t] * b[t * n + j];
  return c;
}

std::vector<double> conv2d(const std::vector<double>& x, std::size_t batch, std::size_t channels, std::size_t h,
                           std::size_t w, const std::vector<double>& weight, std::size_t out_channels,
                           std::size_t kernel, const std::vector<double>& bias, std::size_t stride,
                           std::size_t padding) {
  const std::size_t oh = (h + 2 * padding - kernel) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kernel) / stride + 1;
  std::vector<double> y(batch * out_channels * oh * ow);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < out_channels; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double s = bias[o];
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t ky = 0; ky < kernel; ++ky)
              for (std::size_t kx = 0; kx < kernel; ++kx) {
                long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                s += x[((b * channels + c) * h + iy) * w + ix] * weight[((o * channels + c) * kernel + ky) * kernel + kx];
              }
          y[((b * out_channels + o) * oh + oy) * ow + ox] = s;
        }
  return y;
}

std::vector<double> squash(const std::vector<double>& s) {
  double sq = 0.0;
  for (double v : s) sq += v * v;
  std::vector<double> out(s.size(), 0.0);
  if (sq == 0.0) return out;
  const double scale = sq / (1.0 + sq) / std::sqrt(sq);
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] * scale;
  return out;
}

std::vector<double> routing(const std::vector<double>& u_hat, std::size_t m, std::size_t c, std::size_t d,
                            std::size_t iterations, std::vector<std::vector<double>>* couplings) {
  std::vector<double> logits(m * c, 0.0);
  std::vector<double> v(c * d, 0.0);
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<double> coup(m * c);
    for (std::size_t i = 0; i < m; ++i) {
      double mx = logits[i * c];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits[i * c + j]);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) z += std::exp(logits[i * c + j] - mx);
      for (std::size_t j = 0; j < c; ++j) coup[i * c + j] = std::exp(logits[i * c + j] - mx) / z;
    }
    if (couplings) couplings->push_back(coup);
    for (std::size_t j = 0; j < c; ++j) {
      std::vector<double> s(d, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t t = 0; t < d; ++t) s[t] += coup[i * c + j] * u_hat[(i * c + j) * d + t];
      auto sq = squash(s);
      std::copy(sq.begin(), sq.end(), v.begin() + static_cast<long>(j * d));
    }
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        double agree = 0.0;
        for (std::size_t t = 0; t < d; ++t) agree += u_hat[(i * c + j) * d + t] * v[j * d + t];
        logits[i * c + j] += agree;
      }
  }
  return v;
}

std::vector<double> adamw(std::vector<double> w, const std::vector<std::vector<double>>& grads, double lr,
                          double beta1, double beta2, double eps, double weight_decay) {
  std::vector<double> m(w.size(), 0.0), v(w.size(), 0.0);
  double t = 0.0;
  for (const auto& g : grads) {
    t += 1.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] *= 1.0 - lr * weight_decay;
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      double mh = m[i] / (1.0 - std::pow(beta1, t));
      double vh = v[i] / (1.0 - std::pow(beta2, t));
      w[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  return w;
}

}  // namespace oracle
