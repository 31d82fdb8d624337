#include "dslab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace dslab {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw Error(msg);
}

bool tracked(const Tensor& t) { return t.defined() && t.requires_grad(); }

bool taping(std::initializer_list<const Tensor*> ins) {
  if (Graph::current() == nullptr) return false;
  for (const Tensor* t : ins) {
    if (t && tracked(*t)) return true;
  }
  return false;
}

std::vector<std::shared_ptr<TensorData>> node_inputs(
    std::initializer_list<const Tensor*> ins) {
  std::vector<std::shared_ptr<TensorData>> out;
  for (const Tensor* t : ins) {
    if (t && t->defined()) out.push_back(t->ptr());
  }
  return out;
}

// c[m, n] += a[m, k] * b[k, n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m, n] += a[m, k] * b[n, k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// c[m, n] += a[k, m]^T * b[k, n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

struct ConvDims {
  std::size_t N, Ci, H, W, Co, kh, kw, Ho, Wo;
  int stride, pad;
  std::size_t patch() const { return Ci * kh * kw; }
  std::size_t out_hw() const { return Ho * Wo; }
};

// Unpacks one sample into a [Ci*kh*kw, Ho*Wo] patch matrix; out-of-bounds
// taps read as zero.
void im2col(const double* x, const ConvDims& d, double* col) {
  const std::size_t hw = d.out_hw();
  for (std::size_t c = 0; c < d.Ci; ++c) {
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        double* row = col + ((c * d.kh + ki) * d.kw + kj) * hw;
        for (std::size_t oh = 0; oh < d.Ho; ++oh) {
          const long ih = static_cast<long>(oh) * d.stride +
                          static_cast<long>(ki) - d.pad;
          const bool hin = ih >= 0 && ih < static_cast<long>(d.H);
          for (std::size_t ow = 0; ow < d.Wo; ++ow) {
            const long iw = static_cast<long>(ow) * d.stride +
                            static_cast<long>(kj) - d.pad;
            row[oh * d.Wo + ow] =
                (hin && iw >= 0 && iw < static_cast<long>(d.W))
                    ? x[(c * d.H + ih) * d.W + iw]
                    : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col.
void col2im_add(const double* col, const ConvDims& d, double* dx) {
  const std::size_t hw = d.out_hw();
  for (std::size_t c = 0; c < d.Ci; ++c) {
    for (std::size_t ki = 0; ki < d.kh; ++ki) {
      for (std::size_t kj = 0; kj < d.kw; ++kj) {
        const double* row = col + ((c * d.kh + ki) * d.kw + kj) * hw;
        for (std::size_t oh = 0; oh < d.Ho; ++oh) {
          const long ih = static_cast<long>(oh) * d.stride +
                          static_cast<long>(ki) - d.pad;
          if (ih < 0 || ih >= static_cast<long>(d.H)) continue;
          for (std::size_t ow = 0; ow < d.Wo; ++ow) {
            const long iw = static_cast<long>(ow) * d.stride +
                            static_cast<long>(kj) - d.pad;
            if (iw < 0 || iw >= static_cast<long>(d.W)) continue;
            dx[(c * d.H + ih) * d.W + iw] += row[oh * d.Wo + ow];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.defined() && b.defined(), "matmul: undefined input");
  require(a.rank() == 2 && b.rank() == 2,
          "matmul: expected rank-2 inputs, got " + shape_str(a.shape()) +
              " and " + shape_str(b.shape()));
  require(a.dim(1) == b.dim(0),
          "matmul: inner dimensions disagree, " + shape_str(a.shape()) +
              " vs " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor y({m, n});
  gemm_nn(a.values().data(), b.values().data(), y.values().data(), m, k, n);
  if (taping({&a, &b})) {
    auto ad = a.ptr(), bd = b.ptr(), yd = y.ptr();
    Graph::current()->record("matmul", node_inputs({&a, &b}), yd, [=] {
      const double* dy = yd->grad.data();
      if (double* da = grad_sink(*ad)) gemm_nt(dy, bd->values.data(), da, m, n, k);
      if (double* db = grad_sink(*bd)) gemm_tn(ad->values.data(), dy, db, k, m, n);
    });
  }
  return y;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int padding) {
  require(x.defined() && w.defined(), "conv2d: undefined input");
  require(x.rank() == 4, "conv2d: input must be NCHW, got " + shape_str(x.shape()));
  require(w.rank() == 4, "conv2d: kernel must be [out, in, kh, kw], got " +
                             shape_str(w.shape()));
  require(x.dim(1) == w.dim(1),
          "conv2d: channel mismatch, input " + shape_str(x.shape()) +
              " vs kernel " + shape_str(w.shape()));
  require(stride == 1 || stride == 2,
          "conv2d: unsupported stride " + std::to_string(stride));
  require(padding >= 0, "conv2d: negative padding");
  ConvDims d;
  d.N = x.dim(0);
  d.Ci = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.Co = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad = padding;
  const long ho = (static_cast<long>(d.H) + 2L * padding - static_cast<long>(d.kh)) / stride + 1;
  const long wo = (static_cast<long>(d.W) + 2L * padding - static_cast<long>(d.kw)) / stride + 1;
  require(ho >= 1 && wo >= 1, "conv2d: kernel " + shape_str(w.shape()) +
                                  " does not fit input " + shape_str(x.shape()) +
                                  " with padding " + std::to_string(padding));
  d.Ho = static_cast<std::size_t>(ho);
  d.Wo = static_cast<std::size_t>(wo);
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == d.Co,
            "conv2d: bias shape " + shape_str(bias.shape()) +
                " does not match " + std::to_string(d.Co) + " output channels");
  }

  const std::size_t K = d.patch(), hw = d.out_hw();
  Tensor y({d.N, d.Co, d.Ho, d.Wo});
  std::vector<double> col(K * hw);
  const double* xv = x.values().data();
  double* yv = y.values().data();
  for (std::size_t n = 0; n < d.N; ++n) {
    im2col(xv + n * d.Ci * d.H * d.W, d, col.data());
    gemm_nn(w.values().data(), col.data(), yv + n * d.Co * hw, d.Co, K, hw);
  }
  if (bias.defined()) {
    for (std::size_t n = 0; n < d.N; ++n) {
      for (std::size_t c = 0; c < d.Co; ++c) {
        double* row = yv + (n * d.Co + c) * hw;
        const double b = bias[c];
        for (std::size_t i = 0; i < hw; ++i) row[i] += b;
      }
    }
  }

  if (taping({&x, &w, &bias})) {
    auto xd = x.ptr(), wd = w.ptr(), yd = y.ptr();
    auto bd = bias.defined() ? bias.ptr() : nullptr;
    // The patch matrix is rebuilt per sample in backward rather than cached,
    // trading a second im2col for O(batch) less live memory.
    Graph::current()->record("conv2d", node_inputs({&x, &w, &bias}), yd, [=] {
      const std::size_t K2 = d.patch(), hw2 = d.out_hw();
      double* dx = grad_sink(*xd);
      double* dw = grad_sink(*wd);
      double* db = bd ? grad_sink(*bd) : nullptr;
      const double* dy = yd->grad.data();
      std::vector<double> col2(K2 * hw2);
      std::vector<double> dcol;
      if (dx) dcol.resize(K2 * hw2);
      for (std::size_t n = 0; n < d.N; ++n) {
        const double* dyn = dy + n * d.Co * hw2;
        if (dw) {
          im2col(xd->values.data() + n * d.Ci * d.H * d.W, d, col2.data());
          gemm_nt(dyn, col2.data(), dw, d.Co, hw2, K2);
        }
        if (dx) {
          std::fill(dcol.begin(), dcol.end(), 0.0);
          gemm_tn(wd->values.data(), dyn, dcol.data(), K2, d.Co, hw2);
          col2im_add(dcol.data(), d, dx + n * d.Ci * d.H * d.W);
        }
        if (db) {
          for (std::size_t c = 0; c < d.Co; ++c) {
            double acc = 0.0;
            const double* row = dyn + c * hw2;
            for (std::size_t i = 0; i < hw2; ++i) acc += row[i];
            db[c] += acc;
          }
        }
      }
    });
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.defined() && b.defined(), "add: undefined input");
  require(a.shape() == b.shape(), "add: shape mismatch, " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  Tensor y(a.shape());
  const std::size_t n = y.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
  if (taping({&a, &b})) {
    auto ad = a.ptr(), bd = b.ptr(), yd = y.ptr();
    Graph::current()->record("add", node_inputs({&a, &b}), yd, [=] {
      const double* dy = yd->grad.data();
      if (double* da = grad_sink(*ad)) {
        for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (double* db = grad_sink(*bd)) {
        for (std::size_t i = 0; i < n; ++i) db[i] += dy[i];
      }
    });
  }
  return y;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts[0].shape();
  require(axis < first.size(), "concat: axis " + std::to_string(axis) +
                                   " out of range for shape " + shape_str(first));
  Shape out_shape = first;
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    require(s.size() == first.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i == axis) continue;
      require(s[i] == first[i], "concat: shape mismatch at dim " +
                                    std::to_string(i) + ", " + shape_str(first) +
                                    " vs " + shape_str(s));
    }
    out_shape[axis] += s[axis];
  }

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];

  Tensor y(out_shape);
  double* yv = y.values().data();
  const std::size_t out_row = out_shape[axis] * inner;
  std::size_t offset = 0;  // in units of inner, within an outer slice
  std::vector<std::size_t> offsets(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) {
    offsets[p] = offset;
    const std::size_t rows = parts[p].dim(axis);
    const double* xv = parts[p].values().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::memcpy(yv + o * out_row + offset * inner, xv + o * rows * inner,
                  rows * inner * sizeof(double));
    }
    offset += rows;
  }

  bool any_tracked = false;
  for (const Tensor& t : parts) any_tracked |= tracked(t);
  if (Graph::current() && any_tracked) {
    std::vector<std::shared_ptr<TensorData>> ins;
    std::vector<std::size_t> rows(parts.size());
    for (std::size_t p = 0; p < parts.size(); ++p) {
      ins.push_back(parts[p].ptr());
      rows[p] = parts[p].dim(axis);
    }
    auto yd = y.ptr();
    auto ins_copy = ins;
    Graph::current()->record("concat", std::move(ins), yd,
                             [yd, ins_copy, offsets, rows, outer, inner, out_row] {
      const double* dy = yd->grad.data();
      for (std::size_t p = 0; p < ins_copy.size(); ++p) {
        double* dx = grad_sink(*ins_copy[p]);
        if (!dx) continue;
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = dy + o * out_row + offsets[p] * inner;
          double* dst = dx + o * rows[p] * inner;
          for (std::size_t i = 0; i < rows[p] * inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return y;
}

Tensor relu(const Tensor& x) {
  require(x.defined(), "relu: undefined input");
  Tensor y(x.shape());
  const std::size_t n = y.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (taping({&x})) {
    auto xd = x.ptr(), yd = y.ptr();
    Graph::current()->record("relu", node_inputs({&x}), yd, [=] {
      double* dx = grad_sink(*xd);
      if (!dx) return;
      const double* dy = yd->grad.data();
      const double* xv = xd->values.data();
      for (std::size_t i = 0; i < n; ++i) {
        if (xv[i] > 0.0) dx[i] += dy[i];
      }
    });
  }
  return y;
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, bool training, bool update_running) {
  require(x.defined() && gamma.defined() && beta.defined(),
          "batchnorm2d: undefined input");
  require(x.rank() == 4, "batchnorm2d: input must be NCHW, got " + shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(gamma.rank() == 1 && gamma.dim(0) == C &&
              beta.rank() == 1 && beta.dim(0) == C,
          "batchnorm2d: scale/shift must be [" + std::to_string(C) + "]");
  if (state.running_mean.empty()) {
    state.running_mean.assign(C, 0.0);
    state.running_var.assign(C, 1.0);
  }
  require(state.running_mean.size() == C && state.running_var.size() == C,
          "batchnorm2d: state tracks " + std::to_string(state.running_mean.size()) +
              " channels, input has " + std::to_string(C));

  const std::size_t hw = H * W;
  const std::size_t M = N * hw;  // elements per channel
  const double* xv = x.values().data();
  Tensor y(x.shape());
  double* yv = y.values().data();

  std::vector<double> mu(C), inv(C);
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* row = xv + (n * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += row[i];
      }
      const double mean = s / static_cast<double>(M);
      double v = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* row = xv + (n * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double dlt = row[i] - mean;
          v += dlt * dlt;
        }
      }
      const double var = v / static_cast<double>(M);
      mu[c] = mean;
      inv[c] = 1.0 / std::sqrt(var + state.eps);
      if (update_running) {
        state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] +
                                state.momentum * mean;
        state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] +
                               state.momentum * var;
      }
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = state.running_mean[c];
      inv[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* row = xv + (n * C + c) * hw;
      double* out = yv + (n * C + c) * hw;
      const double g = gamma[c], b = beta[c], m = mu[c], iv = inv[c];
      for (std::size_t i = 0; i < hw; ++i) out[i] = g * (row[i] - m) * iv + b;
    }
  }

  if (taping({&x, &gamma, &beta})) {
    auto xd = x.ptr(), gd = gamma.ptr(), bd = beta.ptr(), yd = y.ptr();
    if (training) {
      Graph::current()->record("batchnorm2d", node_inputs({&x, &gamma, &beta}),
                               yd, [=] {
        const double* dy = yd->grad.data();
        const double* xv2 = xd->values.data();
        double* dx = grad_sink(*xd);
        double* dg = grad_sink(*gd);
        double* db = grad_sink(*bd);
        for (std::size_t c = 0; c < C; ++c) {
          const double m = mu[c], iv = inv[c];
          double s1 = 0.0, s2 = 0.0;  // sum dy, sum dy * xhat
          for (std::size_t n = 0; n < N; ++n) {
            const double* dyr = dy + (n * C + c) * hw;
            const double* xr = xv2 + (n * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              s1 += dyr[i];
              s2 += dyr[i] * (xr[i] - m) * iv;
            }
          }
          if (dg) dg[c] += s2;
          if (db) db[c] += s1;
          if (dx) {
            const double g = gd->values[c];
            const double scale = g * iv / static_cast<double>(M);
            for (std::size_t n = 0; n < N; ++n) {
              const double* dyr = dy + (n * C + c) * hw;
              const double* xr = xv2 + (n * C + c) * hw;
              double* dxr = dx + (n * C + c) * hw;
              for (std::size_t i = 0; i < hw; ++i) {
                const double xh = (xr[i] - m) * iv;
                dxr[i] += scale * (static_cast<double>(M) * dyr[i] - s1 - xh * s2);
              }
            }
          }
        }
      });
    } else {
      Graph::current()->record("batchnorm2d", node_inputs({&x, &gamma, &beta}),
                               yd, [=] {
        const double* dy = yd->grad.data();
        const double* xv2 = xd->values.data();
        double* dx = grad_sink(*xd);
        double* dg = grad_sink(*gd);
        double* db = grad_sink(*bd);
        for (std::size_t c = 0; c < C; ++c) {
          const double m = mu[c], iv = inv[c], g = gd->values[c];
          for (std::size_t n = 0; n < N; ++n) {
            const double* dyr = dy + (n * C + c) * hw;
            const double* xr = xv2 + (n * C + c) * hw;
            double* dxr = dx ? dx + (n * C + c) * hw : nullptr;
            for (std::size_t i = 0; i < hw; ++i) {
              if (dg) dg[c] += dyr[i] * (xr[i] - m) * iv;
              if (db) db[c] += dyr[i];
              if (dxr) dxr[i] += dyr[i] * g * iv;
            }
          }
        }
      });
    }
  }
  return y;
}

Tensor global_avg_pool(const Tensor& x) {
  require(x.defined(), "global_avg_pool: undefined input");
  require(x.rank() == 4,
          "global_avg_pool: input must be NCHW, got " + shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y({N, C});
  const double* xv = x.values().data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* row = xv + (n * C + c) * hw;
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += row[i];
      y[n * C + c] = s / static_cast<double>(hw);
    }
  }
  if (taping({&x})) {
    auto xd = x.ptr(), yd = y.ptr();
    Graph::current()->record("global_avg_pool", node_inputs({&x}), yd, [=] {
      double* dx = grad_sink(*xd);
      if (!dx) return;
      const double* dy = yd->grad.data();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
          const double g = dy[n * C + c] / static_cast<double>(hw);
          double* row = dx + (n * C + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) row[i] += g;
        }
      }
    });
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.defined() && w.defined(), "linear: undefined input");
  require(x.rank() == 2 && w.rank() == 2,
          "linear: expected rank-2 input and weight, got " +
              shape_str(x.shape()) + " and " + shape_str(w.shape()));
  require(x.dim(1) == w.dim(1), "linear: input width " + shape_str(x.shape()) +
                                    " does not match weight " + shape_str(w.shape()));
  const std::size_t N = x.dim(0), D = x.dim(1), C = w.dim(0);
  if (b.defined()) {
    require(b.rank() == 1 && b.dim(0) == C,
            "linear: bias shape " + shape_str(b.shape()) + " does not match " +
                std::to_string(C) + " outputs");
  }
  Tensor y({N, C});
  gemm_nt(x.values().data(), w.values().data(), y.values().data(), N, D, C);
  if (b.defined()) {
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) y[n * C + c] += b[c];
    }
  }
  if (taping({&x, &w, &b})) {
    auto xd = x.ptr(), wd = w.ptr(), yd = y.ptr();
    auto bd = b.defined() ? b.ptr() : nullptr;
    Graph::current()->record("linear", node_inputs({&x, &w, &b}), yd, [=] {
      const double* dy = yd->grad.data();
      if (double* dx = grad_sink(*xd)) gemm_nn(dy, wd->values.data(), dx, N, C, D);
      if (double* dw = grad_sink(*wd)) gemm_tn(dy, xd->values.data(), dw, C, N, D);
      if (bd) {
        if (double* db = grad_sink(*bd)) {
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t c = 0; c < C; ++c) db[c] += dy[n * C + c];
          }
        }
      }
    });
  }
  return y;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require(logits.defined(), "softmax_cross_entropy: undefined input");
  require(logits.rank() == 2, "softmax_cross_entropy: logits must be [batch, classes], got " +
                                  shape_str(logits.shape()));
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  require(labels.size() == N,
          "softmax_cross_entropy: " + std::to_string(labels.size()) +
              " labels for batch of " + std::to_string(N));
  const double* lv = logits.values().data();
  std::vector<double> probs(N * C);
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const int label = labels[n];
    require(label >= 0 && static_cast<std::size_t>(label) < C,
            "softmax_cross_entropy: label " + std::to_string(label) +
                " outside [0, " + std::to_string(C) + ") at row " + std::to_string(n));
    const double* row = lv + n * C;
    double mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double se = 0.0;
    for (std::size_t c = 0; c < C; ++c) se += std::exp(row[c] - mx);
    const double lse = mx + std::log(se);
    total += lse - row[label];
    for (std::size_t c = 0; c < C; ++c) probs[n * C + c] = std::exp(row[c] - lse);
  }
  Tensor y = Tensor::scalar(total / static_cast<double>(N));
  if (taping({&logits})) {
    auto xd = logits.ptr(), yd = y.ptr();
    std::vector<int> labels_copy(labels.begin(), labels.end());
    Graph::current()->record("softmax_cross_entropy", node_inputs({&logits}), yd,
                             [xd, yd, probs = std::move(probs),
                              labels_copy = std::move(labels_copy), N, C] {
      double* dx = grad_sink(*xd);
      if (!dx) return;
      const double g = yd->grad[0] / static_cast<double>(N);
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
          const double onehot =
              static_cast<std::size_t>(labels_copy[n]) == c ? 1.0 : 0.0;
          dx[n * C + c] += g * (probs[n * C + c] - onehot);
        }
      }
    });
  }
  return y;
}

Tensor scalar_mul(const Tensor& x, double s) {
  require(x.defined(), "scalar_mul: undefined input");
  Tensor y(x.shape());
  const std::size_t n = y.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = s * x[i];
  if (taping({&x})) {
    auto xd = x.ptr(), yd = y.ptr();
    Graph::current()->record("scalar_mul", node_inputs({&x}), yd, [=] {
      double* dx = grad_sink(*xd);
      if (!dx) return;
      const double* dy = yd->grad.data();
      for (std::size_t i = 0; i < n; ++i) dx[i] += s * dy[i];
    });
  }
  return y;
}

Tensor gate_mul(const Tensor& x, const Tensor& gate) {
  require(x.defined() && gate.defined(), "gate_mul: undefined input");
  require(gate.numel() == 1, "gate_mul: gate must hold one element, got shape " +
                                 shape_str(gate.shape()));
  const double g = gate[0];
  Tensor y(x.shape());
  const std::size_t n = y.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = g * x[i];
  if (taping({&x, &gate})) {
    auto xd = x.ptr(), gd = gate.ptr(), yd = y.ptr();
    Graph::current()->record("gate_mul", node_inputs({&x, &gate}), yd, [=] {
      const double* dy = yd->grad.data();
      if (double* dx = grad_sink(*xd)) {
        const double gv = gd->values[0];
        for (std::size_t i = 0; i < n; ++i) dx[i] += gv * dy[i];
      }
      if (double* dg = grad_sink(*gd)) {
        double acc = 0.0;
        const double* xv = xd->values.data();
        for (std::size_t i = 0; i < n; ++i) acc += dy[i] * xv[i];
        dg[0] += acc;
      }
    });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  require(x.defined(), "sum: undefined input");
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor y = Tensor::scalar(s);
  if (taping({&x})) {
    auto xd = x.ptr(), yd = y.ptr();
    Graph::current()->record("sum", node_inputs({&x}), yd, [=] {
      double* dx = grad_sink(*xd);
      if (!dx) return;
      const double g = yd->grad[0];
      for (std::size_t i = 0; i < xd->values.size(); ++i) dx[i] += g;
    });
  }
  return y;
}

Tensor weighted_sum(const Tensor& x, std::span<const double> coeffs) {
  require(x.defined(), "weighted_sum: undefined input");
  require(coeffs.size() == x.numel(),
          "weighted_sum: " + std::to_string(coeffs.size()) +
              " coefficients for " + std::to_string(x.numel()) + " elements");
  double s = 0.0;
  for (std::size_t i = 0; i < coeffs.size(); ++i) s += coeffs[i] * x[i];
  Tensor y = Tensor::scalar(s);
  if (taping({&x})) {
    auto xd = x.ptr(), yd = y.ptr();
    std::vector<double> cc(coeffs.begin(), coeffs.end());
    Graph::current()->record("weighted_sum", node_inputs({&x}), yd,
                             [xd, yd, cc = std::move(cc)] {
      double* dx = grad_sink(*xd);
      if (!dx) return;
      const double g = yd->grad[0];
      for (std::size_t i = 0; i < cc.size(); ++i) dx[i] += g * cc[i];
    });
  }
  return y;
}

std::vector<int> argmax_rows(const Tensor& scores) {
  require(scores.defined() && scores.rank() == 2,
          "argmax_rows: expected [rows, cols]");
  const std::size_t N = scores.dim(0), C = scores.dim(1);
  std::vector<int> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    const double* row = scores.values().data() + n * C;
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[n] = static_cast<int>(best);
  }
  return out;
}

}  // namespace dslab
