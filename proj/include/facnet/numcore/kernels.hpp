#pragma once

// Forward and adjoint kernels for the fixed operation set used by the model.
// Every kernel is a pure function of its arguments.

#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "facnet/numcore/matrix.hpp"

namespace facnet {

/// Floor applied to vector norms in cosine similarity.
inline constexpr double kCosineEps = 1e-8;

namespace detail {

template <typename T>
void require_no_nan(const Matrix<T>& m, const char* where) {
  if (m.has_nan()) throw InputError(std::string(where) + ": NaN in input");
}

template <typename T>
std::vector<T> row_norms(const Matrix<T>& m) {
  std::vector<T> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    T acc = 0;
    for (T v : m.row(r)) acc += v * v;
    out[r] = std::sqrt(acc);
  }
  return out;
}

}  // namespace detail

/// out(i,j) = scale * <A_i, B_j> / (max(|A_i|, eps) * max(|B_j|, eps)).
template <typename T>
Matrix<T> cosine_rows(const Matrix<T>& a, const Matrix<T>& b, T scale) {
  if (a.cols() != b.cols() || a.cols() == 0) {
    throw ContractError("cosine_rows: column mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
  if (!(scale > 0)) throw ContractError("cosine_rows: scale must be positive");
  detail::require_no_nan(a, "cosine_rows");
  detail::require_no_nan(b, "cosine_rows");

  const T eps = static_cast<T>(kCosineEps);
  auto na = detail::row_norms(a);
  auto nb = detail::row_norms(b);
  Matrix<T> dots(a.rows(), b.rows());
  detail::as_eigen(dots).noalias() = detail::as_eigen(a) * detail::as_eigen(b).transpose();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T da = std::max(na[i], eps);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      dots(i, j) = scale * dots(i, j) / (da * std::max(nb[j], eps));
    }
  }
  return dots;
}

template <typename T>
struct CosineGrads {
  Matrix<T> da;
  Matrix<T> db;
};

/// Adjoint of cosine_rows given upstream gradient `g` and the forward output `out`.
template <typename T>
CosineGrads<T> cosine_rows_backward(const Matrix<T>& a, const Matrix<T>& b, T scale, const Matrix<T>& out,
                                    const Matrix<T>& g) {
  const T eps = static_cast<T>(kCosineEps);
  auto na = detail::row_norms(a);
  auto nb = detail::row_norms(b);
  const std::size_t m = a.rows(), n = b.rows(), d = a.cols();

  // coef(i,j) = g(i,j) * scale / (na_i * nb_j)
  Matrix<T> coef(m, n);
  std::vector<T> ga_out(m, T{0}), gb_out(n, T{0});
  for (std::size_t i = 0; i < m; ++i) {
    const T da = std::max(na[i], eps);
    for (std::size_t j = 0; j < n; ++j) {
      coef(i, j) = g(i, j) * scale / (da * std::max(nb[j], eps));
      ga_out[i] += g(i, j) * out(i, j);
      gb_out[j] += g(i, j) * out(i, j);
    }
  }

  CosineGrads<T> grads{Matrix<T>(m, d), Matrix<T>(n, d)};
  detail::as_eigen(grads.da).noalias() = detail::as_eigen(coef) * detail::as_eigen(b);
  detail::as_eigen(grads.db).noalias() = detail::as_eigen(coef).transpose() * detail::as_eigen(a);
  for (std::size_t i = 0; i < m; ++i) {
    if (na[i] <= eps) continue;
    const T s = ga_out[i] / (na[i] * na[i]);
    auto row = grads.da.row(i);
    auto src = a.row(i);
    for (std::size_t k = 0; k < d; ++k) row[k] -= s * src[k];
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (nb[j] <= eps) continue;
    const T s = gb_out[j] / (nb[j] * nb[j]);
    auto row = grads.db.row(j);
    auto src = b.row(j);
    for (std::size_t k = 0; k < d; ++k) row[k] -= s * src[k];
  }
  return grads;
}

/// softmax(tau * s) with max subtraction. Entries that underflow are floored
/// at the smallest normal value so every probability stays positive.
template <typename T>
std::vector<T> softmax_temp(std::span<const T> s, T tau) {
  if (s.empty()) throw ContractError("softmax_temp: empty input");
  if (!(tau > 0)) throw ContractError("softmax_temp: tau must be positive");
  T peak = -std::numeric_limits<T>::infinity();
  for (T v : s) {
    if (std::isnan(v)) throw InputError("softmax_temp: NaN in input");
    peak = std::max(peak, v);
  }
  std::vector<T> out(s.size());
  T total = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out[i] = std::exp(tau * (s[i] - peak));
    total += out[i];
  }
  for (auto& v : out) v = std::max(v / total, std::numeric_limits<T>::min());
  return out;
}

/// Column-wise softmax over rows: out(·,c) = softmax_temp(x(·,c), tau).
template <typename T>
Matrix<T> softmax_columns(const Matrix<T>& x, T tau) {
  if (x.rows() == 0) throw ContractError("softmax_columns: no rows");
  Matrix<T> out(x.rows(), x.cols());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    auto col = x.column_values(c);
    auto sm = softmax_temp<T>(col, tau);
    for (std::size_t r = 0; r < x.rows(); ++r) out(r, c) = sm[r];
  }
  return out;
}

template <typename T>
Matrix<T> softmax_columns_backward(const Matrix<T>& y, T tau, const Matrix<T>& g) {
  Matrix<T> gx(y.rows(), y.cols());
  for (std::size_t c = 0; c < y.cols(); ++c) {
    T dot = 0;
    for (std::size_t r = 0; r < y.rows(); ++r) dot += g(r, c) * y(r, c);
    for (std::size_t r = 0; r < y.rows(); ++r) gx(r, c) = tau * y(r, c) * (g(r, c) - dot);
  }
  return gx;
}

namespace detail {

// cols(t, m*d_in + i) = x(t + m - k/2, i), zero outside [0, T).
template <typename T>
Matrix<T> im2col(const Matrix<T>& x, std::size_t k) {
  const std::size_t steps = x.rows(), d = x.cols(), half = k / 2;
  Matrix<T> cols(steps, k * d);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t m = 0; m < k; ++m) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + m) - static_cast<std::ptrdiff_t>(half);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
      auto in = x.row(static_cast<std::size_t>(src));
      std::copy(in.begin(), in.end(), cols.row(t).begin() + static_cast<std::ptrdiff_t>(m * d));
    }
  }
  return cols;
}

template <typename T>
Matrix<T> col2im(const Matrix<T>& cols, std::size_t k, std::size_t d) {
  const std::size_t steps = cols.rows(), half = k / 2;
  Matrix<T> x(steps, d);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t m = 0; m < k; ++m) {
      const std::ptrdiff_t dst = static_cast<std::ptrdiff_t>(t + m) - static_cast<std::ptrdiff_t>(half);
      if (dst < 0 || dst >= static_cast<std::ptrdiff_t>(steps)) continue;
      auto out = x.row(static_cast<std::size_t>(dst));
      auto in = cols.row(t);
      for (std::size_t i = 0; i < d; ++i) out[i] += in[m * d + i];
    }
  }
  return x;
}

}  // namespace detail

/// Same-length 1-D convolution over time with zero padding and stride 1.
///
/// `w` is d_out × (k·d_in); entry (o, m·d_in + i) weights input channel i at
/// temporal offset m − k/2. `b` is 1 × d_out.
template <typename T>
Matrix<T> temporal_conv(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b, std::size_t k) {
  if (x.rows() == 0) throw InputError("temporal_conv: empty sequence");
  if (k % 2 == 0) throw ContractError("temporal_conv: kernel size must be odd");
  if (w.cols() != k * x.cols()) {
    throw ContractError("temporal_conv: kernel " + w.shape_string() + " does not match input width " +
                        std::to_string(x.cols()) + " with k=" + std::to_string(k));
  }
  if (b.rows() != 1 || b.cols() != w.rows()) throw ContractError("temporal_conv: bias shape " + b.shape_string());
  detail::require_no_nan(x, "temporal_conv");

  Matrix<T> out(x.rows(), w.rows());
  auto o = detail::as_eigen(out);
  if (k == 1) {
    o.noalias() = detail::as_eigen(x) * detail::as_eigen(w).transpose();
  } else {
    const auto cols = detail::im2col(x, k);
    o.noalias() = detail::as_eigen(cols) * detail::as_eigen(w).transpose();
  }
  o.rowwise() += detail::as_eigen(b).row(0);
  return out;
}

template <typename T>
struct ConvGrads {
  Matrix<T> dx;
  Matrix<T> dw;
  Matrix<T> db;
};

template <typename T>
ConvGrads<T> temporal_conv_backward(const Matrix<T>& x, const Matrix<T>& w, std::size_t k, const Matrix<T>& g,
                                    bool need_dx) {
  ConvGrads<T> grads{Matrix<T>(), Matrix<T>(w.rows(), w.cols()), Matrix<T>(1, w.rows())};
  const auto cols = k == 1 ? x : detail::im2col(x, k);
  detail::as_eigen(grads.dw).noalias() = detail::as_eigen(g).transpose() * detail::as_eigen(cols);
  detail::as_eigen(grads.db).noalias() = detail::as_eigen(g).colwise().sum();
  if (need_dx) {
    Matrix<T> gcols(x.rows(), w.cols());
    detail::as_eigen(gcols).noalias() = detail::as_eigen(g) * detail::as_eigen(w);
    grads.dx = k == 1 ? std::move(gcols) : detail::col2im(gcols, k, x.cols());
  }
  return grads;
}

/// A^T B for A: T×K and B: T×D, giving K×D.
template <typename T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows()) throw ContractError("matmul_tn: row mismatch " + a.shape_string() + " vs " + b.shape_string());
  Matrix<T> out(a.cols(), b.cols());
  detail::as_eigen(out).noalias() = detail::as_eigen(a).transpose() * detail::as_eigen(b);
  return out;
}

/// out(k) = sum_t a(t,k) * b(t,k), returned as a K×1 column.
template <typename T>
Matrix<T> column_dot(const Matrix<T>& a, const Matrix<T>& b) {
  a.require_same_shape(b, "column_dot");
  Matrix<T> out(a.cols(), 1);
  for (std::size_t t = 0; t < a.rows(); ++t) {
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, 0) += a(t, c) * b(t, c);
  }
  return out;
}

}  // namespace facnet
