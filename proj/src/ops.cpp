#include "kws/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace kws::ops {

namespace {

template <typename T>
using NodeT = detail::Node<T>;

template <typename T>
void check_finite(const std::vector<T>& values, const char* op) {
  for (T v : values) {
    if (!std::isfinite(v)) throw std::domain_error(std::string("non-finite value produced by ") + op);
  }
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor argument");
}

// Wraps freshly computed values into a graph node. The backward closure is
// attached only if some input participates in differentiation.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, const char* op,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(NodeT<T>&)> backward) {
  check_finite(values, op);
  auto out = Tensor<T>::from(std::move(shape), std::move(values));
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || (in.defined() && in.requires_grad());
  }
  if (needs_grad) {
    auto node = out.node();
    node->requires_grad = true;
    node->op = op;
    for (const auto& in : inputs) {
      if (in.defined()) node->inputs.push_back(in.node());
    }
    node->backward = std::move(backward);
  } else {
    out.node()->op = op;
  }
  return out;
}

// Grad buffer of input `i` if that input wants one, else nullptr.
template <typename T>
T* input_grad(NodeT<T>& self, std::size_t i) {
  auto& in = *self.inputs[i];
  return in.requires_grad ? in.ensure_grad().data() : nullptr;
}

int to_int(std::int64_t v) { return static_cast<int>(v); }

template <typename T>
void im2col(const T* x, int channels, int height, int width, int k, int stride, int pad, int out_h,
            int out_w, T* col) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col + ((c * k + ki) * k + kj) * plane;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki;
          T* dst = row + oh * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = x + (c * height + ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kj;
            dst[ow] = (iw >= 0 && iw < width) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int channels, int height, int width, int k, int stride, int pad,
                int out_h, int out_w, T* x) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + ((c * k + ki) * k + kj) * plane;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= height) continue;
          T* dst = x + (c * height + ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < width) dst[iw] += row[oh * out_w + ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <>
void gemm<float>(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a,
                 int lda, const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <>
void gemm<double>(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
                  int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  require_defined(x, "conv2d");
  require_defined(w, "conv2d");
  if (x.rank() != 4 || w.rank() != 4) throw std::invalid_argument("conv2d: expected rank-4 input and weight");
  const int batch = to_int(x.dim(0)), cin = to_int(x.dim(1)), height = to_int(x.dim(2)),
            width = to_int(x.dim(3));
  const int cout = to_int(w.dim(0)), k = to_int(w.dim(2));
  if (w.dim(1) != cin || w.dim(3) != k) {
    throw std::invalid_argument("conv2d: weight " + shape_to_string(w.shape()) + " incompatible with input " +
                                shape_to_string(x.shape()));
  }
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
  const int out_h = (height + 2 * pad - k) / stride + 1;
  const int out_w = (width + 2 * pad - k) / stride + 1;
  if (height + 2 * pad < k || width + 2 * pad < k || out_h < 1 || out_w < 1) {
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  }
  const int plane = out_h * out_w;
  const int patch = cin * k * k;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  std::vector<T> out(static_cast<std::size_t>(batch) * cout * plane);
  std::vector<T> col(direct ? 0 : static_cast<std::size_t>(patch) * plane);
  const T* xd = x.data().data();
  const T* wd = w.data().data();
  for (int b = 0; b < batch; ++b) {
    const T* xb = xd + static_cast<std::size_t>(b) * cin * height * width;
    const T* cb = xb;
    if (!direct) {
      im2col(xb, cin, height, width, k, stride, pad, out_h, out_w, col.data());
      cb = col.data();
    }
    gemm<T>(false, false, cout, plane, patch, T(1), wd, patch, cb, plane, T(0),
            out.data() + static_cast<std::size_t>(b) * cout * plane, plane);
  }

  return make_result<T>(
      {batch, cout, out_h, out_w}, std::move(out), "conv2d", {x, w},
      [=](NodeT<T>& self) {
        const T* gy = self.grad.data();
        const auto& xn = *self.inputs[0];
        const auto& wn = *self.inputs[1];
        T* gx = input_grad(self, 0);
        T* gw = input_grad(self, 1);
        std::vector<T> col_buf(direct ? 0 : static_cast<std::size_t>(patch) * plane);
        std::vector<T> gcol(gx && !direct ? static_cast<std::size_t>(patch) * plane : 0);
        for (int b = 0; b < batch; ++b) {
          const T* xb = xn.data.data() + static_cast<std::size_t>(b) * cin * height * width;
          const T* gyb = gy + static_cast<std::size_t>(b) * cout * plane;
          if (gw) {
            const T* cb = xb;
            if (!direct) {
              im2col(xb, cin, height, width, k, stride, pad, out_h, out_w, col_buf.data());
              cb = col_buf.data();
            }
            gemm<T>(false, true, cout, patch, plane, T(1), gyb, plane, cb, plane, T(1), gw, patch);
          }
          if (gx) {
            T* gxb = gx + static_cast<std::size_t>(b) * cin * height * width;
            if (direct) {
              gemm<T>(true, false, patch, plane, cout, T(1), wn.data.data(), patch, gyb, plane, T(1), gxb,
                      plane);
            } else {
              gemm<T>(true, false, patch, plane, cout, T(1), wn.data.data(), patch, gyb, plane, T(0),
                      gcol.data(), plane);
              col2im_add(gcol.data(), cin, height, width, k, stride, pad, out_h, out_w, gxb);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int kernel, int stride) {
  require_defined(x, "avg_pool2d");
  if (x.rank() != 4) throw std::invalid_argument("avg_pool2d: expected rank-4 input");
  const int batch = to_int(x.dim(0)), channels = to_int(x.dim(1)), height = to_int(x.dim(2)),
            width = to_int(x.dim(3));
  if (kernel < 1 || stride < 1) throw std::invalid_argument("avg_pool2d: bad kernel/stride");
  if (kernel > height || kernel > width) throw std::invalid_argument("avg_pool2d: window larger than input");
  const int out_h = (height - kernel) / stride + 1;
  const int out_w = (width - kernel) / stride + 1;
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  const int planes = batch * channels;

  std::vector<T> out(static_cast<std::size_t>(planes) * out_h * out_w);
  const T* xd = x.data().data();
  for (int p = 0; p < planes; ++p) {
    const T* src = xd + static_cast<std::size_t>(p) * height * width;
    T* dst = out.data() + static_cast<std::size_t>(p) * out_h * out_w;
    for (int oh = 0; oh < out_h; ++oh) {
      for (int ow = 0; ow < out_w; ++ow) {
        T acc = 0;
        for (int i = 0; i < kernel; ++i)
          for (int j = 0; j < kernel; ++j) acc += src[(oh * stride + i) * width + ow * stride + j];
        dst[oh * out_w + ow] = acc * inv;
      }
    }
  }
  return make_result<T>({batch, channels, out_h, out_w}, std::move(out), "avg_pool2d", {x},
                        [=](NodeT<T>& self) {
                          T* gx = input_grad(self, 0);
                          if (!gx) return;
                          for (int p = 0; p < planes; ++p) {
                            const T* gy = self.grad.data() + static_cast<std::size_t>(p) * out_h * out_w;
                            T* dst = gx + static_cast<std::size_t>(p) * height * width;
                            for (int oh = 0; oh < out_h; ++oh)
                              for (int ow = 0; ow < out_w; ++ow) {
                                const T g = gy[oh * out_w + ow] * inv;
                                for (int i = 0; i < kernel; ++i)
                                  for (int j = 0; j < kernel; ++j)
                                    dst[(oh * stride + i) * width + ow * stride + j] += g;
                              }
                          }
                        });
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormStats<T>& stats, Mode mode) {
  require_defined(x, "batch_norm2d");
  if (x.rank() != 4) throw std::invalid_argument("batch_norm2d: expected rank-4 input");
  const int batch = to_int(x.dim(0)), channels = to_int(x.dim(1));
  const int plane = to_int(x.dim(2) * x.dim(3));
  if (gamma.numel() != channels || beta.numel() != channels ||
      static_cast<int>(stats.running_mean.size()) != channels ||
      static_cast<int>(stats.running_var.size()) != channels) {
    throw std::invalid_argument("batch_norm2d: channel count mismatch");
  }
  const T eps = static_cast<T>(kBatchNormEps);
  const T momentum = static_cast<T>(kBatchNormMomentum);
  const std::int64_t count = static_cast<std::int64_t>(batch) * plane;
  const T* xd = x.data().data();
  const T* gd = gamma.data().data();
  const T* bd = beta.data().data();

  std::vector<T> mean(channels), inv_std(channels);
  if (mode == Mode::train) {
    for (int c = 0; c < channels; ++c) {
      double s = 0;
      for (int b = 0; b < batch; ++b) {
        const T* p = xd + (static_cast<std::size_t>(b) * channels + c) * plane;
        for (int i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double v = 0;
      for (int b = 0; b < batch; ++b) {
        const T* p = xd + (static_cast<std::size_t>(b) * channels + c) * plane;
        for (int i = 0; i < plane; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const double var = v / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : var;
      stats.running_mean[c] = (T(1) - momentum) * stats.running_mean[c] + momentum * static_cast<T>(mu);
      stats.running_var[c] = (T(1) - momentum) * stats.running_var[c] + momentum * static_cast<T>(unbiased);
    }
  } else {
    for (int c = 0; c < channels; ++c) {
      mean[c] = stats.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(stats.running_var[c] + eps);
    }
  }

  std::vector<T> xhat(x.data().size());
  std::vector<T> out(x.data().size());
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * plane;
      for (int i = 0; i < plane; ++i) {
        const T h = (xd[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = gd[c] * h + bd[c];
      }
    }
  }

  return make_result<T>(
      x.shape(), std::move(out), "batch_norm2d", {x, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](NodeT<T>& self) {
        const T* gy = self.grad.data();
        T* gx = input_grad(self, 0);
        T* gg = input_grad(self, 1);
        T* gb = input_grad(self, 2);
        const T* gam = self.inputs[1]->data.data();
        for (int c = 0; c < channels; ++c) {
          double sum_g = 0, sum_gh = 0;
          for (int b = 0; b < batch; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * plane;
            for (int i = 0; i < plane; ++i) {
              sum_g += gy[off + i];
              sum_gh += gy[off + i] * xhat[off + i];
            }
          }
          if (gg) gg[c] += static_cast<T>(sum_gh);
          if (gb) gb[c] += static_cast<T>(sum_g);
          if (!gx) continue;
          const T scale_c = gam[c] * inv_std[c];
          if (mode == Mode::train) {
            const T mean_g = static_cast<T>(sum_g / static_cast<double>(count));
            const T mean_gh = static_cast<T>(sum_gh / static_cast<double>(count));
            for (int b = 0; b < batch; ++b) {
              const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * plane;
              for (int i = 0; i < plane; ++i)
                gx[off + i] += scale_c * (gy[off + i] - mean_g - xhat[off + i] * mean_gh);
            }
          } else {
            for (int b = 0; b < batch; ++b) {
              const std::size_t off = (static_cast<std::size_t>(b) * channels + c) * plane;
              for (int i = 0; i < plane; ++i) gx[off + i] += scale_c * gy[off + i];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  require_defined(x, "relu");
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v = v > T(0) ? v : T(0);
  return make_result<T>(x.shape(), std::move(out), "relu", {x}, [](NodeT<T>& self) {
    T* gx = input_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.data.size(); ++i)
      if (self.data[i] > T(0)) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_result<T>(a.shape(), std::move(out), "add", {a, b}, [](NodeT<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      T* g = input_grad(self, k);
      if (!g) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return make_result<T>(a.shape(), std::move(out), "mul", {a, b}, [](NodeT<T>& self) {
    const auto& ad = self.inputs[0]->data;
    const auto& bd = self.inputs[1]->data;
    T* ga = input_grad(self, 0);
    T* gb = input_grad(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (ga) ga[i] += self.grad[i] * bd[i];
      if (gb) gb[i] += self.grad[i] * ad[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, const Tensor<T>& s) {
  require_defined(x, "scale");
  require_defined(s, "scale");
  if (s.numel() != 1) throw std::invalid_argument("scale: factor must have one element");
  const T f = s.data()[0];
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v *= f;
  return make_result<T>(x.shape(), std::move(out), "scale", {x, s}, [](NodeT<T>& self) {
    const auto& xd = self.inputs[0]->data;
    const T f = self.inputs[1]->data[0];
    T* gx = input_grad(self, 0);
    T* gs = input_grad(self, 1);
    double acc = 0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (gx) gx[i] += self.grad[i] * f;
      acc += static_cast<double>(self.grad[i]) * xd[i];
    }
    if (gs) gs[0] += static_cast<T>(acc);
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  require_defined(x, "sum");
  double acc = 0;
  for (T v : x.data()) acc += v;
  return make_result<T>({1}, {static_cast<T>(acc)}, "sum", {x}, [](NodeT<T>& self) {
    T* gx = input_grad(self, 0);
    if (!gx) return;
    const T g = self.grad[0];
    const std::size_t n = self.inputs[0]->data.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_defined(x, "linear");
  require_defined(w, "linear");
  if (w.rank() != 2) throw std::invalid_argument("linear: weight must be rank 2");
  const int in = to_int(w.dim(1)), out_f = to_int(w.dim(0));
  if (x.dim(-1) != in) {
    throw std::invalid_argument("linear: input " + shape_to_string(x.shape()) + " incompatible with weight " +
                                shape_to_string(w.shape()));
  }
  if (b.defined() && b.numel() != out_f) throw std::invalid_argument("linear: bias size mismatch");
  const int rows = to_int(x.numel() / in);
  Shape shape = x.shape();
  shape.back() = out_f;
  std::vector<T> out(static_cast<std::size_t>(rows) * out_f, T(0));
  if (b.defined()) {
    for (int r = 0; r < rows; ++r) std::copy(b.data().begin(), b.data().end(), out.begin() + r * out_f);
  }
  gemm<T>(false, true, rows, out_f, in, T(1), x.data().data(), in, w.data().data(), in,
          b.defined() ? T(1) : T(0), out.data(), out_f);

  const bool has_bias = b.defined();
  return make_result<T>(std::move(shape), std::move(out), "linear", {x, w, b}, [=](NodeT<T>& self) {
    const T* gy = self.grad.data();
    const auto& xd = self.inputs[0]->data;
    const auto& wd = self.inputs[1]->data;
    if (T* gx = input_grad(self, 0)) gemm<T>(false, false, rows, in, out_f, T(1), gy, out_f, wd.data(), in, T(1), gx, in);
    if (T* gw = input_grad(self, 1)) gemm<T>(true, false, out_f, in, rows, T(1), gy, out_f, xd.data(), in, T(1), gw, in);
    if (has_bias) {
      if (T* gb = input_grad(self, 2)) {
        for (int r = 0; r < rows; ++r)
          for (int o = 0; o < out_f; ++o) gb[o] += gy[r * out_f + o];
      }
    }
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() < 2) throw std::invalid_argument("matmul: left operand must have rank >= 2");
  if (b.rank() == 2) {
    const int k = to_int(b.dim(0)), n = to_int(b.dim(1));
    if (a.dim(-1) != k) {
      throw std::invalid_argument("matmul: shape mismatch " + shape_to_string(a.shape()) + " x " +
                                  shape_to_string(b.shape()));
    }
    const int rows = to_int(a.numel() / k);
    Shape shape = a.shape();
    shape.back() = n;
    std::vector<T> out(static_cast<std::size_t>(rows) * n);
    gemm<T>(false, false, rows, n, k, T(1), a.data().data(), k, b.data().data(), n, T(0), out.data(), n);
    return make_result<T>(std::move(shape), std::move(out), "matmul", {a, b}, [=](NodeT<T>& self) {
      const T* gy = self.grad.data();
      if (T* ga = input_grad(self, 0))
        gemm<T>(false, true, rows, k, n, T(1), gy, n, self.inputs[1]->data.data(), n, T(1), ga, k);
      if (T* gb = input_grad(self, 1))
        gemm<T>(true, false, k, n, rows, T(1), self.inputs[0]->data.data(), k, gy, n, T(1), gb, n);
    });
  }
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_to_string(a.shape()) + " x " +
                                shape_to_string(b.shape()));
  }
  const int batch = to_int(a.dim(0)), m = to_int(a.dim(1)), k = to_int(a.dim(2)), n = to_int(b.dim(2));
  std::vector<T> out(static_cast<std::size_t>(batch) * m * n);
  for (int i = 0; i < batch; ++i) {
    gemm<T>(false, false, m, n, k, T(1), a.data().data() + static_cast<std::size_t>(i) * m * k, k,
            b.data().data() + static_cast<std::size_t>(i) * k * n, n, T(0),
            out.data() + static_cast<std::size_t>(i) * m * n, n);
  }
  return make_result<T>({batch, m, n}, std::move(out), "bmm", {a, b}, [=](NodeT<T>& self) {
    T* ga = input_grad(self, 0);
    T* gb = input_grad(self, 1);
    const T* ad = self.inputs[0]->data.data();
    const T* bd = self.inputs[1]->data.data();
    for (int i = 0; i < batch; ++i) {
      const T* gy = self.grad.data() + static_cast<std::size_t>(i) * m * n;
      if (ga)
        gemm<T>(false, true, m, k, n, T(1), gy, n, bd + static_cast<std::size_t>(i) * k * n, n, T(1),
                ga + static_cast<std::size_t>(i) * m * k, k);
      if (gb)
        gemm<T>(true, false, k, n, m, T(1), ad + static_cast<std::size_t>(i) * m * k, k, gy, n, T(1),
                gb + static_cast<std::size_t>(i) * k * n, n);
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_defined(x, "transpose");
  if (x.rank() != 2 && x.rank() != 3) throw std::invalid_argument("transpose: rank must be 2 or 3");
  const int batch = x.rank() == 3 ? to_int(x.dim(0)) : 1;
  const int rows = to_int(x.dim(-2)), cols = to_int(x.dim(-1));
  std::vector<T> out(x.data().size());
  const T* xd = x.data().data();
  for (int b = 0; b < batch; ++b) {
    const std::size_t off = static_cast<std::size_t>(b) * rows * cols;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) out[off + c * rows + r] = xd[off + r * cols + c];
  }
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  return make_result<T>(std::move(shape), std::move(out), "transpose", {x}, [=](NodeT<T>& self) {
    T* gx = input_grad(self, 0);
    if (!gx) return;
    for (int b = 0; b < batch; ++b) {
      const std::size_t off = static_cast<std::size_t>(b) * rows * cols;
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) gx[off + r * cols + c] += self.grad[off + c * rows + r];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                                shape_to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), "reshape", {x}, [](NodeT<T>& self) {
    T* gx = input_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  require_defined(x, "softmax");
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::out_of_range("softmax: axis out of range");
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  const std::int64_t len = x.dim(axis);
  std::vector<T> out(x.data().size());
  const T* xd = x.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::size_t base = static_cast<std::size_t>(o * len * inner + in);
      T mx = xd[base];
      for (std::int64_t j = 1; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      T z = 0;
      for (std::int64_t j = 0; j < len; ++j) {
        const T e = std::exp(xd[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      const T inv = T(1) / z;
      for (std::int64_t j = 0; j < len; ++j) out[base + j * inner] *= inv;
    }
  }
  return make_result<T>(x.shape(), std::move(out), "softmax", {x}, [=](NodeT<T>& self) {
    T* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t in = 0; in < inner; ++in) {
        const std::size_t base = static_cast<std::size_t>(o * len * inner + in);
        T dot = 0;
        for (std::int64_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::int64_t j = 0; j < len; ++j)
          gx[base + j * inner] += y[base + j * inner] * (g[base + j * inner] - dot);
      }
    }
  });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_defined(x, "global_avg_pool");
  if (x.rank() != 4) throw std::invalid_argument("global_avg_pool: expected rank-4 input");
  const int planes = to_int(x.dim(0) * x.dim(1));
  const int plane = to_int(x.dim(2) * x.dim(3));
  std::vector<T> out(planes);
  const T* xd = x.data().data();
  for (int p = 0; p < planes; ++p) {
    T acc = 0;
    for (int i = 0; i < plane; ++i) acc += xd[static_cast<std::size_t>(p) * plane + i];
    out[p] = acc / static_cast<T>(plane);
  }
  return make_result<T>({x.dim(0), x.dim(1)}, std::move(out), "global_avg_pool", {x}, [=](NodeT<T>& self) {
    T* gx = input_grad(self, 0);
    if (!gx) return;
    for (int p = 0; p < planes; ++p) {
      const T g = self.grad[p] / static_cast<T>(plane);
      for (int i = 0; i < plane; ++i) gx[static_cast<std::size_t>(p) * plane + i] += g;
    }
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_defined(logits, "cross_entropy");
  if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be (B,C)");
  const int batch = to_int(logits.dim(0)), classes = to_int(logits.dim(1));
  if (static_cast<int>(labels.size()) != batch) throw std::invalid_argument("cross_entropy: label count mismatch");
  std::vector<int> targets(labels.begin(), labels.end());
  for (int t : targets) {
    if (t < 0 || t >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(t) + " outside [0," +
                              std::to_string(classes) + ")");
    }
  }
  std::vector<T> probs(logits.data().size());
  const T* z = logits.data().data();
  double loss = 0;
  for (int b = 0; b < batch; ++b) {
    const T* row = z + static_cast<std::size_t>(b) * classes;
    const T mx = *std::max_element(row, row + classes);
    double s = 0;
    for (int c = 0; c < classes; ++c) s += std::exp(static_cast<double>(row[c] - mx));
    const double lse = static_cast<double>(mx) + std::log(s);
    loss += lse - row[targets[b]];
    for (int c = 0; c < classes; ++c)
      probs[static_cast<std::size_t>(b) * classes + c] = static_cast<T>(std::exp(row[c] - lse));
  }
  loss /= batch;
  return make_result<T>({1}, {static_cast<T>(loss)}, "cross_entropy", {logits},
                        [=, probs = std::move(probs), targets = std::move(targets)](NodeT<T>& self) {
                          T* gz = input_grad(self, 0);
                          if (!gz) return;
                          const T g = self.grad[0] / static_cast<T>(batch);
                          for (int b = 0; b < batch; ++b)
                            for (int c = 0; c < classes; ++c) {
                              const std::size_t i = static_cast<std::size_t>(b) * classes + c;
                              gz[i] += g * (probs[i] - (c == targets[b] ? T(1) : T(0)));
                            }
                        });
}

#define KWS_INSTANTIATE_OPS(T)                                                                    \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, int, int);                        \
  template Tensor<T> avg_pool2d(const Tensor<T>&, int, int);                                      \
  template Tensor<T> batch_norm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                  BatchNormStats<T>&, Mode);                                      \
  template Tensor<T> relu(const Tensor<T>&);                                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> scale(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sum(const Tensor<T>&);                                                       \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> transpose(const Tensor<T>&);                                                 \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                            \
  template Tensor<T> softmax(const Tensor<T>&, int);                                              \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                           \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);

KWS_INSTANTIATE_OPS(float)
KWS_INSTANTIATE_OPS(double)

}  // namespace kws::ops
