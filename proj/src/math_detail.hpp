// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

// Internal numeric kernels shared by the batched forward, the backward pass
// and the incremental decoding path. Both paths must run the exact same
// scalar operation sequence per row so their outputs agree bit for bit.

#pragma once

#include <cmath>
#include <span>

namespace slidemask::detail {

constexpr double kNormEps = 1e-8;
constexpr double kGeluA = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluB = 0.044715;
constexpr double kRopeBase = 10000.0;

inline double gelu(double u) {
  return 0.5 * u * (1.0 + std::tanh(kGeluA * (u + kGeluB * u * u * u)));
}

inline double gelu_grad(double u) {
  const double z = kGeluA * (u + kGeluB * u * u * u);
  const double th = std::tanh(z);
  return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluA * (1.0 + 3.0 * kGeluB * u * u);
}

// y[0..out) = W[out x in] * x + b
inline void matvec(std::span<const double> w, std::span<const double> b,
                   std::span<const double> x, std::span<double> y) {
  const size_t out = y.size(), in = x.size();
  for (size_t o = 0; o < out; ++o) {
    double acc = b.empty() ? 0.0 : b[o];
    const double* row = w.data() + o * in;
    for (size_t i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

// dW += dy (x) x, db += dy, dx += W^T dy
inline void matvec_backward(std::span<const double> w, std::span<const double> x,
                            std::span<const double> dy, std::span<double> dw,
                            std::span<double> db, std::span<double> dx) {
  const size_t out = dy.size(), in = x.size();
  for (size_t o = 0; o < out; ++o) {
    const double g = dy[o];
    if (!db.empty()) db[o] += g;
    double* dwrow = dw.data() + o * in;
    const double* wrow = w.data() + o * in;
    for (size_t i = 0; i < in; ++i) {
      dwrow[i] += g * x[i];
      dx[i] += wrow[i] * g;
    }
  }
}

// y = gain (.) x / rms(x); returns rms for the backward pass.
inline double rmsnorm(std::span<const double> x, std::span<const double> gain,
                      std::span<double> y) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double r = std::sqrt(ss / static_cast<double>(x.size()) + kNormEps);
  for (size_t i = 0; i < x.size(); ++i) y[i] = gain[i] * x[i] / r;
  return r;
}

inline void rmsnorm_backward(std::span<const double> x, std::span<const double> gain, double r,
                             std::span<const double> dy, std::span<double> dgain,
                             std::span<double> dx) {
  const size_t d = x.size();
  double s = 0.0;
  for (size_t i = 0; i < d; ++i) {
    dgain[i] += dy[i] * x[i] / r;
    s += dy[i] * gain[i] * x[i];
  }
  const double r3 = r * r * r;
  for (size_t i = 0; i < d; ++i) {
    dx[i] += gain[i] * dy[i] / r - x[i] * s / (static_cast<double>(d) * r3);
  }
}

inline void rope_rotate(std::span<double> vec, int position) {
  const size_t pairs = vec.size() / 2;
  for (size_t i = 0; i < pairs; ++i) {
    const double freq = std::pow(
        kRopeBase, -2.0 * static_cast<double>(i) / static_cast<double>(vec.size()));
    const double theta = static_cast<double>(position) * freq;
    const double c = std::cos(theta), s = std::sin(theta);
    const double a = vec[2 * i], b = vec[2 * i + 1];
    vec[2 * i] = a * c - b * s;
    vec[2 * i + 1] = a * s + b * c;
  }
}

inline void rope_rotate_backward(std::span<double> dvec, int position) {
  const size_t pairs = dvec.size() / 2;
  for (size_t i = 0; i < pairs; ++i) {
    const double freq = std::pow(
        kRopeBase, -2.0 * static_cast<double>(i) / static_cast<double>(dvec.size()));
    const double theta = static_cast<double>(position) * freq;
    const double c = std::cos(theta), s = std::sin(theta);
    const double da = dvec[2 * i], db = dvec[2 * i + 1];
    dvec[2 * i] = da * c + db * s;
    dvec[2 * i + 1] = -da * s + db * c;
  }
}

inline double logsumexp(std::span<const double> v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

/// Softmax over scores (max-subtracted) followed by the weighted value sum.
/// `keys`/`values` are accessors by visible index; shared by the batched and
/// incremental attention paths.
template <typename KeyAt, typename ValueAt>
inline void attention_row(std::span<const double> query, size_t visible_count, KeyAt key_at,
                          ValueAt value_at, double inv_sqrt_dh, std::span<double> alpha,
                          std::span<double> out) {
  const size_t dh = query.size();
  double max_score = -1e300;
  for (size_t idx = 0; idx < visible_count; ++idx) {
    const double* kp = key_at(idx);
    double acc = 0.0;
    for (size_t i = 0; i < dh; ++i) acc += query[i] * kp[i];
    alpha[idx] = acc * inv_sqrt_dh;
    max_score = std::max(max_score, alpha[idx]);
  }
  double z = 0.0;
  for (size_t idx = 0; idx < visible_count; ++idx) {
    alpha[idx] = std::exp(alpha[idx] - max_score);
    z += alpha[idx];
  }
  for (size_t idx = 0; idx < visible_count; ++idx) alpha[idx] /= z;
  for (size_t i = 0; i < dh; ++i) out[i] = 0.0;
  for (size_t idx = 0; idx < visible_count; ++idx) {
    const double* vp = value_at(idx);
    const double a = alpha[idx];
    for (size_t i = 0; i < dh; ++i) out[i] += a * vp[i];
  }
}

}  // namespace slidemask::detail
