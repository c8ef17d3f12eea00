#include "limn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "limn/error.hpp"

namespace limn::ops {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m x k] += g[m x n] * b[k x n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      ci[p] += s;
    }
  }
}

// c[k x n] += a[m x k]^T * g[m x n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

Tensor like(const Tensor& x) { return Tensor::zeros(x.shape()); }

Tensor matrix_out(std::size_t r, std::size_t c) { return Tensor::zeros({r, c}); }

template <typename Fwd, typename Deriv>
Tensor unary(Graph& g, const Tensor& x, Fwd fwd, Deriv deriv) {
  Tensor out = like(x);
  auto xd = x.data();
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < xd.size(); ++i) od[i] = fwd(xd[i]);
  g.record(out, {&x}, [x, out, deriv]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto go = out.grad();
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * deriv(xd[i], od[i]);
  });
  return out;
}

}  // namespace

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, "matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out = matrix_out(m, n);
  gemm_nn(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
  g.record(out, {&a, &b}, [a, b, out, m, k, n]() mutable {
    const double* go = out.grad().data();
    if (a.requires_grad()) gemm_nt(go, b.data().data(), a.mutable_grad().data(), m, n, k);
    if (b.requires_grad()) gemm_tn(a.data().data(), go, b.mutable_grad().data(), m, k, n);
  });
  return out;
}

Tensor transpose(Graph& g, const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = matrix_out(n, m);
  auto ad = a.data();
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) od[j * m + i] = ad[i * n + j];
  g.record(out, {&a}, [a, out, m, n]() mutable {
    if (!a.requires_grad()) return;
    auto ga = a.mutable_grad();
    auto go = out.grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
  });
  return out;
}

namespace {
Tensor binary(Graph& g, const Tensor& a, const Tensor& b, int op, const char* name) {
  require(a.size() == b.size() && a.rows() == b.rows(),
          std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = like(a);
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    if (op == 0) od[i] = ad[i] + bd[i];
    else if (op == 1) od[i] = ad[i] - bd[i];
    else od[i] = ad[i] * bd[i];
  }
  g.record(out, {&a, &b}, [a, b, out, op]() mutable {
    auto go = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      if (op == 2) {
        auto bd = b.data();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bd[i];
      } else {
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
      }
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      if (op == 2) {
        auto ad = a.data();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * ad[i];
      } else {
        const double sign = op == 1 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += sign * go[i];
      }
    }
  });
  return out;
}
}  // namespace

Tensor add(Graph& g, const Tensor& a, const Tensor& b) { return binary(g, a, b, 0, "add"); }
Tensor sub(Graph& g, const Tensor& a, const Tensor& b) { return binary(g, a, b, 1, "sub"); }
Tensor mul(Graph& g, const Tensor& a, const Tensor& b) { return binary(g, a, b, 2, "mul"); }

Tensor scale(Graph& g, const Tensor& a, double c) {
  return unary(g, a, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Tensor add_row_vector(Graph& g, const Tensor& x, const Tensor& b) {
  const std::size_t m = x.rows(), n = x.cols();
  require(b.size() == n, "add_row_vector: bias length " + std::to_string(b.size()) + " != " + std::to_string(n));
  Tensor out = like(x);
  auto xd = x.data();
  auto bd = b.data();
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) od[i * n + j] = xd[i * n + j] + bd[j];
  g.record(out, {&x, &b}, [x, b, out, m, n]() mutable {
    auto go = out.grad();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
    }
  });
  return out;
}

Tensor add_col_vector(Graph& g, const Tensor& x, const Tensor& b) {
  const std::size_t m = x.rows(), n = x.cols();
  require(b.size() == m, "add_col_vector: bias length " + std::to_string(b.size()) + " != " + std::to_string(m));
  Tensor out = like(x);
  auto xd = x.data();
  auto bd = b.data();
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) od[i * n + j] = xd[i * n + j] + bd[i];
  g.record(out, {&x, &b}, [x, b, out, m, n]() mutable {
    auto go = out.grad();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[i] += go[i * n + j];
    }
  });
  return out;
}

Tensor relu(Graph& g, const Tensor& x) {
  return unary(g, x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(Graph& g, const Tensor& x) {
  return unary(g, x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(Graph& g, const Tensor& x) {
  return unary(g, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax_rows(Graph& g, const Tensor& x, const std::vector<bool>& key_mask) {
  const std::size_t m = x.rows(), n = x.cols();
  if (!key_mask.empty()) {
    require(key_mask.size() == n, "softmax_rows: mask length " + std::to_string(key_mask.size()) +
                                      " != columns " + std::to_string(n));
    if (std::count(key_mask.begin(), key_mask.end(), false) == 0)
      throw InvalidArgument("softmax_rows: every column masked");
  }
  const std::vector<bool>& mask = key_mask;
  auto masked = [&mask](std::size_t j) { return !mask.empty() && mask[j]; };
  Tensor out = like(x);
  auto xd = x.data();
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = xd.data() + i * n;
    double* oi = od.data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (!masked(j)) mx = std::max(mx, xi[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      oi[j] = masked(j) ? 0.0 : std::exp(xi[j] - mx);
      s += oi[j];
    }
    for (std::size_t j = 0; j < n; ++j) oi[j] /= s;
  }
  g.record(out, {&x}, [x, out, m, n]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto go = out.grad();
    auto y = out.data();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[i * n + j] * go[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (go[i * n + j] - dot);
    }
  });
  return out;
}

Tensor layer_norm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t m = x.rows(), d = x.cols();
  require(d >= 2, "layer_norm: normalized axis must have at least 2 entries");
  require(gain.size() == d && bias.size() == d, "layer_norm: gain/bias length must equal " + std::to_string(d));
  Tensor out = like(x);
  std::vector<double> xhat(m * d), inv_std(m);
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = xd.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xi[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (xi[j] - mean) * inv_std[i];
      od[i * d + j] = gd[j] * xhat[i * d + j] + bd[j];
    }
  }
  g.record(out, {&x, &gain, &bias},
           [x, gain, bias, out, m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
             auto go = out.grad();
             auto gd = gain.data();
             if (gain.requires_grad()) {
               auto gg = gain.mutable_grad();
               for (std::size_t i = 0; i < m; ++i)
                 for (std::size_t j = 0; j < d; ++j) gg[j] += go[i * d + j] * xhat[i * d + j];
             }
             if (bias.requires_grad()) {
               auto gb = bias.mutable_grad();
               for (std::size_t i = 0; i < m; ++i)
                 for (std::size_t j = 0; j < d; ++j) gb[j] += go[i * d + j];
             }
             if (!x.requires_grad()) return;
             auto gx = x.mutable_grad();
             const double inv_d = 1.0 / static_cast<double>(d);
             for (std::size_t i = 0; i < m; ++i) {
               double mean_dx = 0.0, mean_dx_xhat = 0.0;
               for (std::size_t j = 0; j < d; ++j) {
                 const double dxh = go[i * d + j] * gd[j];
                 mean_dx += dxh;
                 mean_dx_xhat += dxh * xhat[i * d + j];
               }
               mean_dx *= inv_d;
               mean_dx_xhat *= inv_d;
               for (std::size_t j = 0; j < d; ++j) {
                 const double dxh = go[i * d + j] * gd[j];
                 gx[i * d + j] += inv_std[i] * (dxh - mean_dx - xhat[i * d + j] * mean_dx_xhat);
               }
             }
           });
  return out;
}

Tensor l2_normalize_columns(Graph& g, const Tensor& x, double eps) {
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = like(x);
  std::vector<double> denom(n);
  std::vector<bool> clamped(n);
  auto xd = x.data();
  auto od = out.mutable_data();
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += xd[i * n + j] * xd[i * n + j];
    const double norm = std::sqrt(s);
    clamped[j] = norm < eps;
    denom[j] = clamped[j] ? eps : norm;
    for (std::size_t i = 0; i < m; ++i) od[i * n + j] = xd[i * n + j] / denom[j];
  }
  g.record(out, {&x}, [x, out, m, n, denom = std::move(denom), clamped = std::move(clamped)]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto go = out.grad();
    auto y = out.data();
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      if (!clamped[j])
        for (std::size_t i = 0; i < m; ++i) dot += y[i * n + j] * go[i * n + j];
      for (std::size_t i = 0; i < m; ++i) gx[i * n + j] += (go[i * n + j] - y[i * n + j] * dot) / denom[j];
    }
  });
  return out;
}

Tensor pool(Graph& g, const Tensor& x, PoolKind kind, double p) {
  const std::size_t c = x.rows(), n = x.cols();
  Tensor out = Tensor::zeros({c});
  auto xd = x.data();
  auto od = out.mutable_data();
  std::vector<std::size_t> argmax;
  if (kind == PoolKind::kGem) {
    if (!(p >= 1.0) || !std::isfinite(p)) throw DomainError("gem pooling requires a finite exponent p >= 1");
    for (double v : xd)
      if (v < 0.0) throw DomainError("gem pooling requires non-negative inputs");
  }
  if (kind == PoolKind::kMax) argmax.resize(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* xc = xd.data() + ch * n;
    switch (kind) {
      case PoolKind::kMax: {
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i)
          if (xc[i] > xc[best]) best = i;
        argmax[ch] = best;
        od[ch] = xc[best];
        break;
      }
      case PoolKind::kAvg: {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += xc[i];
        od[ch] = s / static_cast<double>(n);
        break;
      }
      case PoolKind::kGem: {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += std::pow(xc[i], p);
        od[ch] = std::pow(s / static_cast<double>(n), 1.0 / p);
        break;
      }
    }
  }
  g.record(out, {&x}, [x, out, c, n, kind, p, argmax = std::move(argmax)]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto go = out.grad();
    auto xd = x.data();
    auto y = out.data();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t ch = 0; ch < c; ++ch) {
      switch (kind) {
        case PoolKind::kMax:
          gx[ch * n + argmax[ch]] += go[ch];
          break;
        case PoolKind::kAvg:
          for (std::size_t i = 0; i < n; ++i) gx[ch * n + i] += go[ch] * inv_n;
          break;
        case PoolKind::kGem:
          // d y / d x_i = (x_i / y)^(p-1) / n, zero when the channel is all zero
          if (y[ch] > 0.0)
            for (std::size_t i = 0; i < n; ++i)
              gx[ch * n + i] += go[ch] * inv_n * std::pow(xd[ch * n + i] / y[ch], p - 1.0);
          break;
      }
    }
  });
  return out;
}

Tensor im2col(Graph& g, const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t pad) {
  require(x.ndim() == 3, "im2col: expected C x H x W input, got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  require(kernel >= 1 && stride >= 1 && h + 2 * pad >= kernel && w + 2 * pad >= kernel,
          "im2col: kernel does not fit input " + shape_str(x.shape()));
  const std::size_t ho = (h + 2 * pad - kernel) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kernel) / stride + 1;
  const std::size_t rows = c * kernel * kernel, cols = ho * wo;
  // src[r * cols + col] is the flat input index, or -1 for padding
  std::vector<long> src(rows * cols, -1);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ki = 0; ki < kernel; ++ki)
      for (std::size_t kj = 0; kj < kernel; ++kj) {
        const std::size_t r = (ch * kernel + ki) * kernel + kj;
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
            const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
            src[r * cols + oy * wo + ox] = static_cast<long>((ch * h + iy) * w + ix);
          }
      }
  Tensor out = matrix_out(rows, cols);
  auto xd = x.data();
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < src.size(); ++i)
    if (src[i] >= 0) od[i] = xd[static_cast<std::size_t>(src[i])];
  g.record(out, {&x}, [x, out, src = std::move(src)]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto go = out.grad();
    for (std::size_t i = 0; i < src.size(); ++i)
      if (src[i] >= 0) gx[static_cast<std::size_t>(src[i])] += go[i];
  });
  return out;
}

Tensor embedding(Graph& g, const Tensor& table, std::span<const int> ids) {
  const std::size_t v = table.rows(), e = table.cols(), k = ids.size();
  require(k >= 1, "embedding: empty id sequence");
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw InvalidArgument("embedding: token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(v));
  std::vector<int> idv(ids.begin(), ids.end());
  Tensor out = matrix_out(e, k);
  auto td = table.data();
  auto od = out.mutable_data();
  for (std::size_t t = 0; t < k; ++t)
    for (std::size_t j = 0; j < e; ++j) od[j * k + t] = td[static_cast<std::size_t>(idv[t]) * e + j];
  g.record(out, {&table}, [table, out, e, k, idv = std::move(idv)]() mutable {
    if (!table.requires_grad()) return;
    auto gt = table.mutable_grad();
    auto go = out.grad();
    for (std::size_t t = 0; t < k; ++t)
      for (std::size_t j = 0; j < e; ++j) gt[static_cast<std::size_t>(idv[t]) * e + j] += go[j * k + t];
  });
  return out;
}

Tensor slice_rows(Graph& g, const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t n = x.cols();
  require(begin < end && end <= x.rows(), "slice_rows: bad range");
  Tensor out = matrix_out(end - begin, n);
  auto xd = x.data();
  std::copy(xd.begin() + static_cast<long>(begin * n), xd.begin() + static_cast<long>(end * n),
            out.mutable_data().begin());
  g.record(out, {&x}, [x, out, begin, n]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto go = out.grad();
    for (std::size_t i = 0; i < go.size(); ++i) gx[begin * n + i] += go[i];
  });
  return out;
}

Tensor slice_cols(Graph& g, const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t m = x.rows(), n = x.cols(), w = end - begin;
  require(begin < end && end <= n, "slice_cols: bad range");
  Tensor out = matrix_out(m, w);
  auto xd = x.data();
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) od[i * w + j] = xd[i * n + begin + j];
  g.record(out, {&x}, [x, out, m, n, w, begin]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto go = out.grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * n + begin + j] += go[i * w + j];
  });
  return out;
}

Tensor concat_cols(Graph& g, const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.rows() == m, "concat_cols: row counts differ (" + std::to_string(p.rows()) + " vs " +
                               std::to_string(m) + ")");
    total += p.cols();
  }
  Tensor out = matrix_out(m, total);
  auto od = out.mutable_data();
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    auto pd = p.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) od[i * total + off + j] = pd[i * w + j];
    off += w;
  }
  g.record(out, parts, [parts, out, m, total]() mutable {
    auto go = out.grad();
    std::size_t off = 0;
    for (auto& p : parts) {
      const std::size_t w = p.cols();
      if (p.requires_grad()) {
        auto gp = p.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += go[i * total + off + j];
      }
      off += w;
    }
  });
  return out;
}

Tensor concat_rows(Graph& g, const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.cols() == n, "concat_rows: column counts differ");
    total += p.rows();
  }
  Tensor out = matrix_out(total, n);
  auto od = out.mutable_data();
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), od.begin() + static_cast<long>(off));
    off += p.size();
  }
  g.record(out, parts, [parts, out]() mutable {
    auto go = out.grad();
    std::size_t off = 0;
    for (auto& p : parts) {
      if (p.requires_grad()) {
        auto gp = p.mutable_grad();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go[off + i];
      }
      off += p.size();
    }
  });
  return out;
}

Tensor reshape(Graph& g, const Tensor& x, Shape shape) {
  require(shape_numel(shape) == x.size(), "reshape: element count changes " + shape_str(x.shape()) + " -> " +
                                              shape_str(shape));
  Tensor out = Tensor::from(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  g.record(out, {&x}, [x, out]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto go = out.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
  });
  return out;
}

Tensor flatten_columns(Graph& g, const Tensor& x) {
  const std::size_t d = x.rows(), u = x.cols();
  Tensor out = matrix_out(1, d * u);
  auto xd = x.data();
  auto od = out.mutable_data();
  for (std::size_t k = 0; k < u; ++k)
    for (std::size_t i = 0; i < d; ++i) od[k * d + i] = xd[i * u + k];
  g.record(out, {&x}, [x, out, d, u]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto go = out.grad();
    for (std::size_t k = 0; k < u; ++k)
      for (std::size_t i = 0; i < d; ++i) gx[i * u + k] += go[k * d + i];
  });
  return out;
}

Tensor mean_columns(Graph& g, const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = matrix_out(m, 1);
  auto xd = x.data();
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += xd[i * n + j];
    od[i] = s / static_cast<double>(n);
  }
  g.record(out, {&x}, [x, out, m, n]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto go = out.grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += go[i] / static_cast<double>(n);
  });
  return out;
}

Tensor sum_squares(Graph& g, const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  Tensor out = Tensor::scalar(s);
  g.record(out, {&x}, [x, out]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    const double go = out.grad()[0];
    auto xd = x.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * xd[i] * go;
  });
  return out;
}

Tensor cross_entropy_rows(Graph& g, const Tensor& logits, std::span<const std::size_t> targets) {
  const std::size_t b = logits.rows(), c = logits.cols();
  require(targets.size() == b, "cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " +
                                   std::to_string(b) + " rows");
  for (auto t : targets)
    if (t >= c) throw InvalidArgument("cross_entropy_rows: target index out of range");
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  std::vector<double> prob(b * c);
  auto ld = logits.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* li = ld.data() + i * c;
    const double mx = *std::max_element(li, li + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      prob[i * c + j] = std::exp(li[j] - mx);
      s += prob[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) prob[i * c + j] /= s;
    loss += (mx + std::log(s)) - li[tg[i]];
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(b));
  g.record(out, {&logits}, [logits, out, b, c, tg = std::move(tg), prob = std::move(prob)]() mutable {
    if (!logits.requires_grad()) return;
    auto gl = logits.mutable_grad();
    const double go = out.grad()[0] / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < c; ++j)
        gl[i * c + j] += go * (prob[i * c + j] - (j == tg[i] ? 1.0 : 0.0));
  });
  return out;
}

}  // namespace limn::ops
