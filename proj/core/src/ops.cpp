// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#include "moectc/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "moectc/errors.hpp"

namespace moectc {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::RowVectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;

std::int64_t last_dim(const Tensor& t) {
  if (t.rank() == 0) throw ConfigError("operation needs at least one axis");
  return t.shape().back();
}

std::int64_t leading_rows(const Tensor& t) {
  const auto d = last_dim(t);
  return d == 0 ? 0 : t.size() / d;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  }
}

void require_rank3(const Tensor& t, const char* op) {
  if (t.rank() != 3) throw ConfigError(std::string(op) + ": expected [B,T,D], got " + shape_string(t.shape()));
}

void check_lengths(const Tensor& h, std::span<const std::int64_t> lengths, const char* op) {
  if (static_cast<std::int64_t>(lengths.size()) != h.dim(0)) {
    throw ConfigError(std::string(op) + ": lengths size does not match batch");
  }
  for (auto len : lengths) {
    if (len <= 0) throw InputError(std::string(op) + ": zero-length sequence");
    if (len > h.dim(1)) throw InputError(std::string(op) + ": length exceeds padded time axis");
  }
}

}  // namespace

Tensor softmax(const Tensor& logits) {
  Tensor out(logits.shape());
  const auto n = last_dim(logits);
  const auto rows = leading_rows(logits);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* x = logits.data() + r * n;
    double* y = out.data() + r * n;
    const double m = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::int64_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - m));
    for (std::int64_t j = 0; j < n; ++j) y[j] /= z;
  }
  return out;
}

Tensor log_sum_exp(const Tensor& logits) {
  const auto n = last_dim(logits);
  const auto rows = leading_rows(logits);
  Shape shape(logits.shape().begin(), logits.shape().end() - 1);
  Tensor out(shape);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* x = logits.data() + r * n;
    const double m = *std::max_element(x, x + n);
    if (!std::isfinite(m)) {
      out[r] = m;
      continue;
    }
    double z = 0.0;
    for (std::int64_t j = 0; j < n; ++j) z += std::exp(x[j] - m);
    out[r] = m + std::log(z);
  }
  return out;
}

Tensor log_softmax(const Tensor& logits) {
  const auto n = last_dim(logits);
  const Tensor lse = log_sum_exp(logits);
  Tensor out(logits.shape());
  for (std::int64_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse[i / n];
  return out;
}

namespace ops {

Var affine(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (wv.rank() != 2 || bv.rank() != 1 || last_dim(xv) != wv.dim(0) || wv.dim(1) != bv.dim(0)) {
    throw ConfigError("affine: shapes do not conform: x " + shape_string(xv.shape()) + ", W " +
                      shape_string(wv.shape()) + ", b " + shape_string(bv.shape()));
  }
  const auto din = wv.dim(0);
  const auto dout = wv.dim(1);
  const auto rows = leading_rows(xv);
  Shape out_shape = xv.shape();
  out_shape.back() = dout;
  Tensor y(out_shape);
  ConstMatMap X(xv.data(), rows, din);
  ConstMatMap W(wv.data(), din, dout);
  MatMap Y(y.data(), rows, dout);
  Y.noalias() = X * W;
  Y.rowwise() += ConstVecMap(bv.data(), dout);

  return make_op(std::move(y), {x, weight, bias}, [rows, din, dout](Node& n) {
    ConstMatMap dY(n.grad.data(), rows, dout);
    const Tensor& xval = n.parents[0]->value();
    const Tensor& wval = n.parents[1]->value();
    if (n.parents[0]->requires_grad) {
      MatMap dX(n.parents[0]->grad_buffer().data(), rows, din);
      dX.noalias() += dY * ConstMatMap(wval.data(), din, dout).transpose();
    }
    if (n.parents[1]->requires_grad) {
      MatMap dW(n.parents[1]->grad_buffer().data(), din, dout);
      dW.noalias() += ConstMatMap(xval.data(), rows, din).transpose() * dY;
    }
    if (n.parents[2]->requires_grad) {
      VecMap db(n.parents[2]->grad_buffer().data(), dout);
      db += dY.colwise().sum();
    }
  });
}

Var relu(const Var& x) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::int64_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return make_op(std::move(y), {x}, [](Node& n) {
    const Tensor& xin = n.parents[0]->value();
    Tensor& dx = n.parents[0]->grad_buffer();
    for (std::int64_t i = 0; i < xin.size(); ++i) {
      if (xin[i] > 0.0) dx[i] += n.grad[i];
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& shift, double eps) {
  const Tensor& xv = x.value();
  const auto d = last_dim(xv);
  if (d < 1) throw ConfigError("layer_norm: empty feature axis");
  if (gain.value().shape() != Shape{d} || shift.value().shape() != Shape{d}) {
    throw ConfigError("layer_norm: gain/shift must be [D]");
  }
  const auto rows = leading_rows(xv);
  Tensor y(xv.shape());
  auto normed = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  const double* g = gain.value().data();
  const double* s = shift.value().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mean = 0.0;
    for (std::int64_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    for (std::int64_t j = 0; j < d; ++j) {
      const double xhat = (xr[j] - mean) * is;
      (*normed)[r * d + j] = xhat;
      y[r * d + j] = xhat * g[j] + s[j];
    }
  }
  return make_op(std::move(y), {x, gain, shift}, [rows, d, normed, inv_std](Node& n) {
    const double* gv = n.parents[1]->value().data();
    const double* dy = n.grad.data();
    if (n.parents[1]->requires_grad) {
      Tensor& dg = n.parents[1]->grad_buffer();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < d; ++j) dg[j] += dy[r * d + j] * (*normed)[r * d + j];
    }
    if (n.parents[2]->requires_grad) {
      Tensor& ds = n.parents[2]->grad_buffer();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < d; ++j) ds[j] += dy[r * d + j];
    }
    if (n.parents[0]->requires_grad) {
      Tensor& dx = n.parents[0]->grad_buffer();
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::int64_t r = 0; r < rows; ++r) {
        double sum_dxhat = 0.0;
        double sum_dxhat_xhat = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
          const double dxhat = dy[r * d + j] * gv[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * (*normed)[r * d + j];
        }
        const double is = (*inv_std)[static_cast<std::size_t>(r)];
        for (std::int64_t j = 0; j < d; ++j) {
          const double dxhat = dy[r * d + j] * gv[j];
          dx[r * d + j] += is * (dxhat - inv_d * sum_dxhat - (*normed)[r * d + j] * inv_d * sum_dxhat_xhat);
        }
      }
    }
  });
}

Var softmax(const Var& logits) {
  Tensor y = moectc::softmax(logits.value());
  const auto n = last_dim(y);
  return make_op(y, {logits}, [y, n](Node& node) {
    Tensor& dx = node.parents[0]->grad_buffer();
    const auto rows = leading_rows(y);
    for (std::int64_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::int64_t j = 0; j < n; ++j) dot += node.grad[r * n + j] * y[r * n + j];
      for (std::int64_t j = 0; j < n; ++j) dx[r * n + j] += y[r * n + j] * (node.grad[r * n + j] - dot);
    }
  });
}

Var log_softmax(const Var& logits) {
  Tensor y = moectc::log_softmax(logits.value());
  const auto n = last_dim(y);
  return make_op(y, {logits}, [y, n](Node& node) {
    Tensor& dx = node.parents[0]->grad_buffer();
    const auto rows = leading_rows(y);
    for (std::int64_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::int64_t j = 0; j < n; ++j) total += node.grad[r * n + j];
      for (std::int64_t j = 0; j < n; ++j) dx[r * n + j] += node.grad[r * n + j] - std::exp(y[r * n + j]) * total;
    }
  });
}

Var log_sum_exp(const Var& logits) {
  Tensor y = moectc::log_sum_exp(logits.value());
  const auto n = last_dim(logits.value());
  return make_op(y, {logits}, [y, n](Node& node) {
    const Tensor& x = node.parents[0]->value();
    Tensor& dx = node.parents[0]->grad_buffer();
    for (std::int64_t r = 0; r < y.size(); ++r) {
      for (std::int64_t j = 0; j < n; ++j) dx[r * n + j] += node.grad[r] * std::exp(x[r * n + j] - y[r]);
    }
  });
}

Var mean_pool_time(const Var& h, std::span<const std::int64_t> lengths) {
  const Tensor& hv = h.value();
  require_rank3(hv, "mean_pool_time");
  check_lengths(hv, lengths, "mean_pool_time");
  const auto B = hv.dim(0), T = hv.dim(1), D = hv.dim(2);
  Tensor y({B, D});
  std::vector<std::int64_t> lens(lengths.begin(), lengths.end());
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t t = 0; t < lens[static_cast<std::size_t>(b)]; ++t)
      for (std::int64_t d = 0; d < D; ++d) y.at(b, d) += hv.at(b, t, d);
    const double inv = 1.0 / static_cast<double>(lens[static_cast<std::size_t>(b)]);
    for (std::int64_t d = 0; d < D; ++d) y.at(b, d) *= inv;
  }
  return make_op(std::move(y), {h}, [B, T, D, lens](Node& n) {
    Tensor& dh = n.parents[0]->grad_buffer();
    for (std::int64_t b = 0; b < B; ++b) {
      const auto len = lens[static_cast<std::size_t>(b)];
      const double inv = 1.0 / static_cast<double>(len);
      for (std::int64_t t = 0; t < len; ++t)
        for (std::int64_t d = 0; d < D; ++d) dh[(b * T + t) * D + d] += n.grad[b * D + d] * inv;
    }
  });
}

Var depthwise_conv_time(const Var& x, const Var& kernel, const Var& bias, std::span<const std::int64_t> lengths) {
  const Tensor& xv = x.value();
  require_rank3(xv, "depthwise_conv_time");
  check_lengths(xv, lengths, "depthwise_conv_time");
  const auto B = xv.dim(0), T = xv.dim(1), D = xv.dim(2);
  const Tensor& kv = kernel.value();
  if (kv.rank() != 2 || kv.dim(1) != D || kv.dim(0) % 2 == 0) {
    throw ConfigError("depthwise_conv_time: kernel must be [K odd, D]");
  }
  if (bias.value().shape() != Shape{D}) throw ConfigError("depthwise_conv_time: bias must be [D]");
  const auto K = kv.dim(0);
  const auto half = K / 2;
  std::vector<std::int64_t> lens(lengths.begin(), lengths.end());
  Tensor y(xv.shape());
  const double* bv = bias.value().data();
  for (std::int64_t b = 0; b < B; ++b) {
    const auto len = lens[static_cast<std::size_t>(b)];
    for (std::int64_t t = 0; t < len; ++t) {
      double* yr = y.data() + (b * T + t) * D;
      for (std::int64_t d = 0; d < D; ++d) yr[d] = bv[d];
      for (std::int64_t k = 0; k < K; ++k) {
        const auto src = t + k - half;
        if (src < 0 || src >= len) continue;
        const double* xr = xv.data() + (b * T + src) * D;
        const double* kr = kv.data() + k * D;
        for (std::int64_t d = 0; d < D; ++d) yr[d] += kr[d] * xr[d];
      }
    }
  }
  return make_op(std::move(y), {x, kernel, bias}, [B, T, D, K, half, lens](Node& n) {
    const Tensor& xin = n.parents[0]->value();
    const Tensor& kin = n.parents[1]->value();
    const bool need_x = n.parents[0]->requires_grad;
    const bool need_k = n.parents[1]->requires_grad;
    const bool need_b = n.parents[2]->requires_grad;
    Tensor* dx = need_x ? &n.parents[0]->grad_buffer() : nullptr;
    Tensor* dk = need_k ? &n.parents[1]->grad_buffer() : nullptr;
    Tensor* db = need_b ? &n.parents[2]->grad_buffer() : nullptr;
    for (std::int64_t b = 0; b < B; ++b) {
      const auto len = lens[static_cast<std::size_t>(b)];
      for (std::int64_t t = 0; t < len; ++t) {
        const double* dy = n.grad.data() + (b * T + t) * D;
        if (db) {
          for (std::int64_t d = 0; d < D; ++d) (*db)[d] += dy[d];
        }
        for (std::int64_t k = 0; k < K; ++k) {
          const auto src = t + k - half;
          if (src < 0 || src >= len) continue;
          const auto xo = (b * T + src) * D;
          for (std::int64_t d = 0; d < D; ++d) {
            if (dk) (*dk)[k * D + d] += dy[d] * xin[xo + d];
            if (dx) (*dx)[xo + d] += dy[d] * kin[k * D + d];
          }
        }
      }
    }
  });
}

Var stack_frames(const Var& x, int factor) {
  const Tensor& xv = x.value();
  require_rank3(xv, "stack_frames");
  if (factor < 1) throw ConfigError("stack_frames: factor must be >= 1");
  const auto B = xv.dim(0), T = xv.dim(1), D = xv.dim(2);
  const auto To = (T + factor - 1) / factor;
  Tensor y({B, To, D * factor});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t t = 0; t < T; ++t)
      for (std::int64_t d = 0; d < D; ++d) y[(b * To + t / factor) * D * factor + (t % factor) * D + d] = xv.at(b, t, d);
  return make_op(std::move(y), {x}, [B, T, D, To, factor](Node& n) {
    Tensor& dx = n.parents[0]->grad_buffer();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t d = 0; d < D; ++d)
          dx[(b * T + t) * D + d] += n.grad[(b * To + t / factor) * D * factor + (t % factor) * D + d];
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  y.add_(b.value());
  return make_op(std::move(y), {a, b}, [](Node& n) {
    for (auto& p : n.parents) {
      if (p->requires_grad) p->grad_buffer().add_(n.grad);
    }
  });
}

Var add_n(std::span<const Var> terms) {
  if (terms.empty()) throw ConfigError("add_n: no terms");
  Tensor y = terms[0].value();
  for (std::size_t i = 1; i < terms.size(); ++i) {
    require_same_shape(y, terms[i].value(), "add_n");
    y.add_(terms[i].value());
  }
  return make_op(std::move(y), std::vector<Var>(terms.begin(), terms.end()), [](Node& n) {
    for (auto& p : n.parents) {
      if (p->requires_grad) p->grad_buffer().add_(n.grad);
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor y = x.value();
  for (auto& v : y.values()) v *= factor;
  return make_op(std::move(y), {x}, [factor](Node& n) {
    Tensor& dx = n.parents[0]->grad_buffer();
    for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] += factor * n.grad[i];
  });
}

Var scale_by_entry(const Var& x, const Var& s, std::int64_t index) {
  if (index < 0 || index >= s.value().size()) throw ConfigError("scale_by_entry: index out of range");
  const double factor = s.value()[index];
  Tensor y = x.value();
  for (auto& v : y.values()) v *= factor;
  return make_op(std::move(y), {x, s}, [index, factor](Node& n) {
    const Tensor& xin = n.parents[0]->value();
    if (n.parents[0]->requires_grad) {
      Tensor& dx = n.parents[0]->grad_buffer();
      for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] += factor * n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      double dot = 0.0;
      for (std::int64_t i = 0; i < xin.size(); ++i) dot += xin[i] * n.grad[i];
      n.parents[1]->grad_buffer()[index] += dot;
    }
  });
}

Var pick(const Var& x, std::int64_t index) {
  if (index < 0 || index >= x.value().size()) throw ConfigError("pick: index out of range");
  return make_op(Tensor::scalar(x.value()[index]), {x},
                 [index](Node& n) { n.parents[0]->grad_buffer()[index] += n.grad[0]; });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return make_op(Tensor::scalar(total), {x}, [](Node& n) {
    Tensor& dx = n.parents[0]->grad_buffer();
    for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] += n.grad[0];
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return make_op(std::move(y), {x}, [](Node& n) {
    Tensor& dx = n.parents[0]->grad_buffer();
    for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] += n.grad[i];
  });
}

Var select_batch(const Var& x, std::int64_t i) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || i < 0 || i >= xv.dim(0)) throw ConfigError("select_batch: index out of range");
  Shape shape = xv.shape();
  shape[0] = 1;
  const auto stride = shape_size(shape);
  std::vector<double> data(xv.data() + i * stride, xv.data() + (i + 1) * stride);
  return make_op(Tensor(std::move(shape), std::move(data)), {x}, [i, stride](Node& n) {
    Tensor& dx = n.parents[0]->grad_buffer();
    for (std::int64_t k = 0; k < stride; ++k) dx[i * stride + k] += n.grad[k];
  });
}

Var stack_batch(std::span<const Var> rows) {
  if (rows.empty()) throw ConfigError("stack_batch: no rows");
  Shape inner = rows[0].value().shape();
  if (inner.empty()) throw ConfigError("stack_batch: rows need a leading axis");
  std::int64_t total = 0;
  std::vector<double> data;
  std::vector<std::int64_t> offsets;
  for (const auto& r : rows) {
    const Tensor& v = r.value();
    if (v.rank() != static_cast<int>(inner.size()) || !std::equal(inner.begin() + 1, inner.end(), v.shape().begin() + 1)) {
      throw ConfigError("stack_batch: trailing shapes differ");
    }
    offsets.push_back(static_cast<std::int64_t>(data.size()));
    data.insert(data.end(), v.values().begin(), v.values().end());
    total += v.dim(0);
  }
  inner[0] = total;
  return make_op(Tensor(inner, std::move(data)), std::vector<Var>(rows.begin(), rows.end()), [offsets](Node& n) {
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      auto& p = n.parents[k];
      if (!p->requires_grad) continue;
      Tensor& dp = p->grad_buffer();
      for (std::int64_t j = 0; j < dp.size(); ++j) dp[j] += n.grad[offsets[k] + j];
    }
  });
}

}  // namespace ops
}  // namespace moectc
