#include "sslseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "sslseg/errors.hpp"
#include "sslseg/parallel.hpp"

namespace sslseg {

namespace {

void require_4d(const char* op, const TensorPtr& t) {
  if (t->shape.size() != 4)
    throw dimension_error(std::string(op) + ": expected a 4-d tensor, got " +
                          shape_str(t->shape));
}

void require_same_shape(const char* op, const TensorPtr& a,
                        const TensorPtr& b) {
  if (a->shape != b->shape)
    throw dimension_error(std::string(op) + ": shape mismatch " +
                          shape_str(a->shape) + " vs " + shape_str(b->shape));
}

}  // namespace

TensorPtr conv2d(Tape& tape, const TensorPtr& input, const TensorPtr& kernel,
                 int stride, int padding, int dilation) {
  require_4d("conv2d", input);
  require_4d("conv2d", kernel);
  if (stride < 1 || padding < 0 || dilation < 1)
    throw dimension_error("conv2d: stride/dilation must be >= 1 and padding >= 0");
  const int N = input->dim(0), C = input->dim(1), H = input->dim(2),
            W = input->dim(3);
  const int K = kernel->dim(0), KC = kernel->dim(1), kh = kernel->dim(2),
            kw = kernel->dim(3);
  if (KC != C)
    throw dimension_error("conv2d: kernel expects " + std::to_string(KC) +
                          " input channels, input has " + std::to_string(C));
  if (kh % 2 == 0 || kw % 2 == 0)
    throw dimension_error("conv2d: kernel extents must be odd, got " +
                          shape_str(kernel->shape));
  const int eh = (kh - 1) * dilation + 1;
  const int ew = (kw - 1) * dilation + 1;
  if (H + 2 * padding < eh || W + 2 * padding < ew)
    throw dimension_error("conv2d: effective kernel " + std::to_string(eh) +
                          "x" + std::to_string(ew) +
                          " exceeds padded input " + shape_str(input->shape));
  const int OH = (H + 2 * padding - eh) / stride + 1;
  const int OW = (W + 2 * padding - ew) / stride + 1;

  auto out = make_tensor({N, K, OH, OW});
  const double* iv = input->values.data();
  const double* kv = kernel->values.data();
  double* ov = out->values.data();

  // Valid output-column range for one kernel column offset dx:
  // ix = ox*stride + dx must land in [0, W).
  auto col_range = [stride](int dx, int limit, int count, int& lo, int& hi) {
    lo = dx < 0 ? (-dx + stride - 1) / stride : 0;
    hi = std::min(count - 1, (limit - 1 - dx) / stride);
  };

  parallel_for(N, [&](int n) {
    const double* in_n = iv + static_cast<long>(n) * C * H * W;
    double* out_n = ov + static_cast<long>(n) * K * OH * OW;
    for (int k = 0; k < K; ++k) {
      double* out_k = out_n + static_cast<long>(k) * OH * OW;
      const double* k_k = kv + static_cast<long>(k) * C * kh * kw;
      for (int c = 0; c < C; ++c) {
        const double* in_c = in_n + static_cast<long>(c) * H * W;
        const double* k_c = k_k + static_cast<long>(c) * kh * kw;
        for (int r = 0; r < kh; ++r) {
          const int dy = r * dilation - padding;
          for (int s = 0; s < kw; ++s) {
            const double wv = k_c[r * kw + s];
            const int dx = s * dilation - padding;
            int lo, hi;
            col_range(dx, W, OW, lo, hi);
            for (int oy = 0; oy < OH; ++oy) {
              const int iy = oy * stride + dy;
              if (iy < 0 || iy >= H) continue;
              const double* irow = in_c + static_cast<long>(iy) * W;
              double* orow = out_k + static_cast<long>(oy) * OW;
              for (int ox = lo; ox <= hi; ++ox)
                orow[ox] += wv * irow[ox * stride + dx];
            }
          }
        }
      }
    }
  });

  const bool needs_grad = input->requires_grad || kernel->requires_grad;
  finish_op(tape, "conv2d", out, needs_grad,
            [input, kernel, out, stride, padding, dilation, col_range]() {
    if (!out->has_grad()) return;
    const int N = input->dim(0), C = input->dim(1), H = input->dim(2),
              W = input->dim(3);
    const int K = kernel->dim(0), kh = kernel->dim(2), kw = kernel->dim(3);
    const int OH = out->dim(2), OW = out->dim(3);
    const double* gv = out->grad.data();
    const double* kv = kernel->values.data();
    const double* iv = input->values.data();

    if (input->requires_grad) {
      input->ensure_grad();
      double* div = input->grad.data();
      parallel_for(N, [&](int n) {
        const double* g_n = gv + static_cast<long>(n) * K * OH * OW;
        double* di_n = div + static_cast<long>(n) * C * H * W;
        for (int k = 0; k < K; ++k) {
          const double* g_k = g_n + static_cast<long>(k) * OH * OW;
          const double* k_k = kv + static_cast<long>(k) * C * kh * kw;
          for (int c = 0; c < C; ++c) {
            double* di_c = di_n + static_cast<long>(c) * H * W;
            const double* k_c = k_k + static_cast<long>(c) * kh * kw;
            for (int r = 0; r < kh; ++r) {
              const int dy = r * dilation - padding;
              for (int s = 0; s < kw; ++s) {
                const double wv = k_c[r * kw + s];
                const int dx = s * dilation - padding;
                int lo, hi;
                col_range(dx, W, OW, lo, hi);
                for (int oy = 0; oy < OH; ++oy) {
                  const int iy = oy * stride + dy;
                  if (iy < 0 || iy >= H) continue;
                  double* drow = di_c + static_cast<long>(iy) * W;
                  const double* grow = g_k + static_cast<long>(oy) * OW;
                  for (int ox = lo; ox <= hi; ++ox)
                    drow[ox * stride + dx] += wv * grow[ox];
                }
              }
            }
          }
        }
      });
    }

    if (kernel->requires_grad) {
      kernel->ensure_grad();
      // Per-sample partials merged in sample order keep the reduction
      // identical for any worker count.
      const std::size_t ksize = kernel->values.size();
      std::vector<std::vector<double>> partial(static_cast<std::size_t>(N));
      parallel_for(N, [&](int n) {
        std::vector<double>& p = partial[static_cast<std::size_t>(n)];
        p.assign(ksize, 0.0);
        const double* in_n = iv + static_cast<long>(n) * C * H * W;
        const double* g_n = gv + static_cast<long>(n) * K * OH * OW;
        for (int k = 0; k < K; ++k) {
          const double* g_k = g_n + static_cast<long>(k) * OH * OW;
          for (int c = 0; c < C; ++c) {
            const double* in_c = in_n + static_cast<long>(c) * H * W;
            for (int r = 0; r < kh; ++r) {
              const int dy = r * dilation - padding;
              for (int s = 0; s < kw; ++s) {
                const int dx = s * dilation - padding;
                int lo, hi;
                col_range(dx, W, OW, lo, hi);
                double acc = 0.0;
                for (int oy = 0; oy < OH; ++oy) {
                  const int iy = oy * stride + dy;
                  if (iy < 0 || iy >= H) continue;
                  const double* irow = in_c + static_cast<long>(iy) * W;
                  const double* grow = g_k + static_cast<long>(oy) * OW;
                  for (int ox = lo; ox <= hi; ++ox)
                    acc += irow[ox * stride + dx] * grow[ox];
                }
                p[static_cast<std::size_t>(
                    ((k * C + c) * kh + r) * kw + s)] = acc;
              }
            }
          }
        }
      });
      double* dkv = kernel->grad.data();
      for (int n = 0; n < N; ++n) {
        const std::vector<double>& p = partial[static_cast<std::size_t>(n)];
        for (std::size_t i = 0; i < ksize; ++i) dkv[i] += p[i];
      }
    }
  });
  return out;
}

TensorPtr add_channel_bias(Tape& tape, const TensorPtr& x,
                           const TensorPtr& bias) {
  require_4d("add_channel_bias", x);
  if (bias->shape.size() != 1 || bias->dim(0) != x->dim(1))
    throw dimension_error("add_channel_bias: bias " + shape_str(bias->shape) +
                          " does not match channels of " +
                          shape_str(x->shape));
  const int N = x->dim(0), C = x->dim(1);
  const long plane = static_cast<long>(x->dim(2)) * x->dim(3);
  auto out = make_tensor(x->shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const long base = (static_cast<long>(n) * C + c) * plane;
      const double b = bias->values[static_cast<std::size_t>(c)];
      for (long i = 0; i < plane; ++i)
        out->values[static_cast<std::size_t>(base + i)] =
            x->values[static_cast<std::size_t>(base + i)] + b;
    }
  finish_op(tape, "add_channel_bias", out,
            x->requires_grad || bias->requires_grad, [x, bias, out]() {
    if (!out->has_grad()) return;
    const int N = x->dim(0), C = x->dim(1);
    const long plane = static_cast<long>(x->dim(2)) * x->dim(3);
    if (x->requires_grad) {
      x->ensure_grad();
      for (std::size_t i = 0; i < x->grad.size(); ++i)
        x->grad[i] += out->grad[i];
    }
    if (bias->requires_grad) {
      bias->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const long base = (static_cast<long>(n) * C + c) * plane;
          double acc = 0.0;
          for (long i = 0; i < plane; ++i)
            acc += out->grad[static_cast<std::size_t>(base + i)];
          bias->grad[static_cast<std::size_t>(c)] += acc;
        }
    }
  });
  return out;
}

TensorPtr relu(Tape& tape, const TensorPtr& x) {
  auto out = make_tensor(x->shape);
  for (std::size_t i = 0; i < x->values.size(); ++i)
    out->values[i] = x->values[i] > 0.0 ? x->values[i] : 0.0;
  finish_op(tape, "relu", out, x->requires_grad, [x, out]() {
    if (!out->has_grad() || !x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < x->grad.size(); ++i)
      if (x->values[i] > 0.0) x->grad[i] += out->grad[i];
  });
  return out;
}

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  require_same_shape("add", a, b);
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->values.size(); ++i)
    out->values[i] = a->values[i] + b->values[i];
  finish_op(tape, "add", out, a->requires_grad || b->requires_grad,
            [a, b, out]() {
    if (!out->has_grad()) return;
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < a->grad.size(); ++i)
        a->grad[i] += out->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < b->grad.size(); ++i)
        b->grad[i] += out->grad[i];
    }
  });
  return out;
}

TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  require_same_shape("mul", a, b);
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->values.size(); ++i)
    out->values[i] = a->values[i] * b->values[i];
  finish_op(tape, "mul", out, a->requires_grad || b->requires_grad,
            [a, b, out]() {
    if (!out->has_grad()) return;
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < a->grad.size(); ++i)
        a->grad[i] += b->values[i] * out->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < b->grad.size(); ++i)
        b->grad[i] += a->values[i] * out->grad[i];
    }
  });
  return out;
}

TensorPtr log(Tape& tape, const TensorPtr& x) {
  auto out = make_tensor(x->shape);
  for (std::size_t i = 0; i < x->values.size(); ++i) {
    if (x->values[i] <= 0.0)
      throw domain_error("log: input must be positive, got " +
                         std::to_string(x->values[i]));
    out->values[i] = std::log(x->values[i]);
  }
  finish_op(tape, "log", out, x->requires_grad, [x, out]() {
    if (!out->has_grad() || !x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < x->grad.size(); ++i)
      x->grad[i] += out->grad[i] / x->values[i];
  });
  return out;
}

TensorPtr exp(Tape& tape, const TensorPtr& x) {
  auto out = make_tensor(x->shape);
  for (std::size_t i = 0; i < x->values.size(); ++i)
    out->values[i] = std::exp(x->values[i]);
  finish_op(tape, "exp", out, x->requires_grad, [x, out]() {
    if (!out->has_grad() || !x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < x->grad.size(); ++i)
      x->grad[i] += out->values[i] * out->grad[i];
  });
  return out;
}

TensorPtr sum(Tape& tape, const TensorPtr& x) {
  auto out = make_tensor(Shape{1});
  double acc = 0.0;
  for (double v : x->values) acc += v;
  out->values[0] = acc;
  finish_op(tape, "sum", out, x->requires_grad, [x, out]() {
    if (!out->has_grad() || !x->requires_grad) return;
    x->ensure_grad();
    const double g = out->grad[0];
    for (std::size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
  });
  return out;
}

TensorPtr scale(Tape& tape, const TensorPtr& x, double factor) {
  auto out = make_tensor(x->shape);
  for (std::size_t i = 0; i < x->values.size(); ++i)
    out->values[i] = factor * x->values[i];
  finish_op(tape, "scale", out, x->requires_grad, [x, out, factor]() {
    if (!out->has_grad() || !x->requires_grad) return;
    x->ensure_grad();
    for (std::size_t i = 0; i < x->grad.size(); ++i)
      x->grad[i] += factor * out->grad[i];
  });
  return out;
}

TensorPtr softmax_channel(Tape& tape, const TensorPtr& x) {
  require_4d("softmax_channel", x);
  const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);
  if (C < 2)
    throw dimension_error("softmax_channel: need at least 2 channels, got " +
                          std::to_string(C));
  auto out = make_tensor(x->shape);
  const long plane = static_cast<long>(H) * W;
  for (int n = 0; n < N; ++n) {
    const long base = static_cast<long>(n) * C * plane;
    for (long p = 0; p < plane; ++p) {
      double mx = x->values[static_cast<std::size_t>(base + p)];
      for (int c = 1; c < C; ++c)
        mx = std::max(mx, x->values[static_cast<std::size_t>(
                             base + c * plane + p)]);
      double denom = 0.0;
      for (int c = 0; c < C; ++c) {
        const double e = std::exp(
            x->values[static_cast<std::size_t>(base + c * plane + p)] - mx);
        out->values[static_cast<std::size_t>(base + c * plane + p)] = e;
        denom += e;
      }
      for (int c = 0; c < C; ++c)
        out->values[static_cast<std::size_t>(base + c * plane + p)] /= denom;
    }
  }
  finish_op(tape, "softmax_channel", out, x->requires_grad, [x, out]() {
    if (!out->has_grad() || !x->requires_grad) return;
    x->ensure_grad();
    const int N = x->dim(0), C = x->dim(1);
    const long plane = static_cast<long>(x->dim(2)) * x->dim(3);
    for (int n = 0; n < N; ++n) {
      const long base = static_cast<long>(n) * C * plane;
      for (long p = 0; p < plane; ++p) {
        double dot = 0.0;
        for (int c = 0; c < C; ++c) {
          const std::size_t i =
              static_cast<std::size_t>(base + c * plane + p);
          dot += out->grad[i] * out->values[i];
        }
        for (int c = 0; c < C; ++c) {
          const std::size_t i =
              static_cast<std::size_t>(base + c * plane + p);
          x->grad[i] += out->values[i] * (out->grad[i] - dot);
        }
      }
    }
  });
  return out;
}

namespace {

// Half-pixel-center source coordinate with edge clamping; shared by the
// forward gather and the backward scatter so they stay exact mirrors.
struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<double> f;  // weight of i1
};

LerpAxis lerp_axis(int in_size, int out_size) {
  LerpAxis ax;
  ax.i0.resize(static_cast<std::size_t>(out_size));
  ax.i1.resize(static_cast<std::size_t>(out_size));
  ax.f.resize(static_cast<std::size_t>(out_size));
  const double ratio = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double s = (o + 0.5) * ratio - 0.5;
    if (s < 0.0) s = 0.0;
    if (s > in_size - 1) s = in_size - 1;
    const int lo = static_cast<int>(std::floor(s));
    ax.i0[static_cast<std::size_t>(o)] = lo;
    ax.i1[static_cast<std::size_t>(o)] = std::min(lo + 1, in_size - 1);
    ax.f[static_cast<std::size_t>(o)] = s - lo;
  }
  return ax;
}

}  // namespace

TensorPtr resize_bilinear(Tape& tape, const TensorPtr& x, int out_h,
                          int out_w) {
  require_4d("resize_bilinear", x);
  if (out_h < 1 || out_w < 1)
    throw dimension_error("resize_bilinear: target size must be positive, got " +
                          std::to_string(out_h) + "x" + std::to_string(out_w));
  const int N = x->dim(0), C = x->dim(1), H = x->dim(2), W = x->dim(3);

  if (out_h == H && out_w == W) {
    auto out = make_tensor(x->shape, x->values);
    finish_op(tape, "resize_bilinear", out, x->requires_grad, [x, out]() {
      if (!out->has_grad() || !x->requires_grad) return;
      x->ensure_grad();
      for (std::size_t i = 0; i < x->grad.size(); ++i)
        x->grad[i] += out->grad[i];
    });
    return out;
  }

  auto ay = std::make_shared<LerpAxis>(lerp_axis(H, out_h));
  auto ax = std::make_shared<LerpAxis>(lerp_axis(W, out_w));
  auto out = make_tensor({N, C, out_h, out_w});
  const long planes = static_cast<long>(N) * C;
  const double* xv = x->values.data();
  double* ov = out->values.data();
  parallel_for(static_cast<int>(planes), [&](int pc) {
    const double* src = xv + static_cast<long>(pc) * H * W;
    double* dst = ov + static_cast<long>(pc) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const int y0 = ay->i0[static_cast<std::size_t>(oy)];
      const int y1 = ay->i1[static_cast<std::size_t>(oy)];
      const double fy = ay->f[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const int x0 = ax->i0[static_cast<std::size_t>(ox)];
        const int x1 = ax->i1[static_cast<std::size_t>(ox)];
        const double fx = ax->f[static_cast<std::size_t>(ox)];
        const double top = src[y0 * W + x0] * (1.0 - fx) + src[y0 * W + x1] * fx;
        const double bot = src[y1 * W + x0] * (1.0 - fx) + src[y1 * W + x1] * fx;
        dst[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
      }
    }
  });
  finish_op(tape, "resize_bilinear", out, x->requires_grad,
            [x, out, ay, ax, out_h, out_w]() {
    if (!out->has_grad() || !x->requires_grad) return;
    x->ensure_grad();
    const int H = x->dim(2), W = x->dim(3);
    const long planes = static_cast<long>(x->dim(0)) * x->dim(1);
    const double* gv = out->grad.data();
    double* dv = x->grad.data();
    parallel_for(static_cast<int>(planes), [&](int pc) {
      const double* g = gv + static_cast<long>(pc) * out_h * out_w;
      double* d = dv + static_cast<long>(pc) * H * W;
      for (int oy = 0; oy < out_h; ++oy) {
        const int y0 = ay->i0[static_cast<std::size_t>(oy)];
        const int y1 = ay->i1[static_cast<std::size_t>(oy)];
        const double fy = ay->f[static_cast<std::size_t>(oy)];
        for (int ox = 0; ox < out_w; ++ox) {
          const int x0 = ax->i0[static_cast<std::size_t>(ox)];
          const int x1 = ax->i1[static_cast<std::size_t>(ox)];
          const double fx = ax->f[static_cast<std::size_t>(ox)];
          const double up = g[oy * out_w + ox];
          d[y0 * W + x0] += up * (1.0 - fy) * (1.0 - fx);
          d[y0 * W + x1] += up * (1.0 - fy) * fx;
          d[y1 * W + x0] += up * fy * (1.0 - fx);
          d[y1 * W + x1] += up * fy * fx;
        }
      }
    });
  });
  return out;
}

}  // namespace sslseg
