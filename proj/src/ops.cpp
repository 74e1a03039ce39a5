#include "ulw/ops.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "ulw/errors.hpp"
#include "ulw/kernels.hpp"

namespace ulw::ops {

std::vector<double> gaussian_taps(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw ParameterError(fmt::format("Gaussian size must be odd, got {}", size));
  if (!(sigma > 0.0)) throw ParameterError(fmt::format("Gaussian sigma must be positive, got {}", sigma));
  std::vector<double> taps(static_cast<std::size_t>(size));
  const double centre = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - centre;
    taps[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += taps[static_cast<std::size_t>(i)];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

void valid_filter(const double* in, std::size_t h, std::size_t w, const std::vector<double>& taps, double* out) {
  const auto& kt = kernels::active();
  const std::size_t k = taps.size(), oh = h - k + 1, ow = w - k + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t t = 0; t < k; ++t) kt.axpy(taps[t], in + y * w + t, rows.data() + y * ow, ow);
  }
  std::fill(out, out + oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t t = 0; t < k; ++t) kt.axpy(taps[t], rows.data() + (y + t) * ow, out + y * ow, ow);
  }
}

void valid_filter_adjoint(const double* grad, std::size_t h, std::size_t w, const std::vector<double>& taps,
                          double* out) {
  const auto& kt = kernels::active();
  const std::size_t k = taps.size(), oh = h - k + 1, ow = w - k + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t t = 0; t < k; ++t) kt.axpy(taps[t], grad + y * ow, rows.data() + (y + t) * ow, ow);
  }
  std::fill(out, out + h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t t = 0; t < k; ++t) kt.axpy(taps[t], rows.data() + y * ow, out + y * w + t, ow);
  }
}

namespace {

struct ConvDims {
  std::size_t cin, cout, h, w, oh, ow, k;
  std::size_t rows() const { return cin * k * k; }
  std::size_t cols() const { return oh * ow; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& weight, ConvGeometry g) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws.c != xs.c || ws.h != g.kernel || ws.w != g.kernel) {
    throw DimensionError(fmt::format("conv2d: weight {} does not fit input {} with kernel {}", ws.str(), xs.str(),
                                     g.kernel));
  }
  if (xs.h + 2 * g.pad < g.kernel || xs.w + 2 * g.pad < g.kernel) {
    throw DimensionError(fmt::format("conv2d: input {} smaller than kernel {}", xs.str(), g.kernel));
  }
  return {xs.c, ws.n, xs.h, xs.w, g.out_extent(xs.h), g.out_extent(xs.w), g.kernel};
}

bool is_pointwise(ConvGeometry g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

// col[(ci, ky, kx), (oy, ox)] = x[ci, oy*s - p + ky, ox*s - p + kx], zero outside.
void im2col(const double* x, const ConvDims& d, ConvGeometry g, double* col) {
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    const double* plane = x + ci * d.h * d.w;
    for (std::size_t ky = 0; ky < d.k; ++ky) {
      for (std::size_t kx = 0; kx < d.k; ++kx) {
        double* row = col + ((ci * d.k + ky) * d.k + kx) * d.cols();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          double* out = row + oy * d.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) {
            std::fill(out, out + d.ow, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * d.w;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvDims& d, ConvGeometry g, double* x) {
  std::fill(x, x + d.cin * d.h * d.w, 0.0);
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    double* plane = x + ci * d.h * d.w;
    for (std::size_t ky = 0; ky < d.k; ++ky) {
      for (std::size_t kx = 0; kx < d.k; ++kx) {
        const double* row = col + ((ci * d.k + ky) * d.k + kx) * d.cols();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * d.w;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(d.w)) dst[ix] += row[oy * d.ow + ox];
          }
        }
      }
    }
  }
}

void transpose(const double* src, std::size_t rows, std::size_t cols, double* dst) {
  constexpr std::size_t B = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += B) {
    for (std::size_t c0 = 0; c0 < cols; c0 += B) {
      const std::size_t r1 = std::min(rows, r0 + B), c1 = std::min(cols, c0 + B);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, ConvGeometry g) {
  const ConvDims d = conv_dims(x, weight, g);
  const auto& kt = kernels::active();
  const std::size_t n = x.shape().n;
  Tensor y(Shape{n, d.cout, d.oh, d.ow});
  std::vector<double> col(is_pointwise(g) ? 0 : d.rows() * d.cols());
  for (std::size_t s = 0; s < n; ++s) {
    double* out = y.sample(s);
    if (bias) {
      for (std::size_t co = 0; co < d.cout; ++co) std::fill(out + co * d.cols(), out + (co + 1) * d.cols(), (*bias)[co]);
    }
    const double* b = x.sample(s);
    if (!is_pointwise(g)) {
      im2col(x.sample(s), d, g, col.data());
      b = col.data();
    }
    kt.gemm(d.cout, d.cols(), d.rows(), weight.data(), d.rows(), b, d.cols(), out, d.cols());
  }
  return y;
}

Tensor conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, ConvGeometry g, Tensor& dweight,
                       Tensor* dbias, bool need_dx) {
  const ConvDims d = conv_dims(x, weight, g);
  const auto& kt = kernels::active();
  const std::size_t n = x.shape().n;
  const std::size_t kr = d.rows(), nc = d.cols();
  Tensor dx = need_dx ? Tensor(x.shape()) : Tensor();

  std::vector<double> col(is_pointwise(g) ? 0 : kr * nc);
  std::vector<double> dy_t(nc * d.cout);
  std::vector<double> dw_t(kr * d.cout, 0.0);
  std::vector<double> w_t(need_dx ? kr * d.cout : 0);
  if (need_dx) transpose(weight.data(), d.cout, kr, w_t.data());
  std::vector<double> dcol(need_dx && !is_pointwise(g) ? kr * nc : 0);

  for (std::size_t s = 0; s < n; ++s) {
    const double* gy = dy.sample(s);
    if (dbias) {
      for (std::size_t co = 0; co < d.cout; ++co) {
        double acc = 0.0;
        for (std::size_t i = 0; i < nc; ++i) acc += gy[co * nc + i];
        (*dbias)[co] += acc;
      }
    }
    const double* cols = x.sample(s);
    if (!is_pointwise(g)) {
      im2col(x.sample(s), d, g, col.data());
      cols = col.data();
    }
    // dW^T (kr x cout) += col (kr x nc) * dy^T (nc x cout)
    transpose(gy, d.cout, nc, dy_t.data());
    kt.gemm(kr, d.cout, nc, cols, nc, dy_t.data(), d.cout, dw_t.data(), d.cout);
    if (need_dx) {
      // dcol (kr x nc) = W^T (kr x cout) * dy (cout x nc)
      if (is_pointwise(g)) {
        kt.gemm(kr, nc, d.cout, w_t.data(), d.cout, gy, nc, dx.sample(s), nc);
      } else {
        std::fill(dcol.begin(), dcol.end(), 0.0);
        kt.gemm(kr, nc, d.cout, w_t.data(), d.cout, gy, nc, dcol.data(), nc);
        col2im(dcol.data(), d, g, dx.sample(s));
      }
    }
  }
  for (std::size_t co = 0; co < d.cout; ++co) {
    for (std::size_t r = 0; r < kr; ++r) dweight[co * kr + r] += dw_t[r * d.cout + co];
  }
  return dx;
}

Tensor conv_transpose2x2(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws.n != xs.c || ws.h != 2 || ws.w != 2) {
    throw DimensionError(fmt::format("conv_transpose2x2: weight {} does not fit input {}", ws.str(), xs.str()));
  }
  const auto& kt = kernels::active();
  const std::size_t cin = xs.c, cout = ws.c, hw = xs.plane(), zr = cout * 4;
  std::vector<double> w_t(zr * cin);
  transpose(weight.data(), cin, zr, w_t.data());
  std::vector<double> z(zr * hw);
  Tensor y(Shape{xs.n, cout, xs.h * 2, xs.w * 2});
  for (std::size_t s = 0; s < xs.n; ++s) {
    std::fill(z.begin(), z.end(), 0.0);
    kt.gemm(zr, hw, cin, w_t.data(), cin, x.sample(s), hw, z.data(), hw);
    for (std::size_t co = 0; co < cout; ++co) {
      double* out = y.plane(s, co);
      const std::size_t ow = xs.w * 2;
      for (std::size_t tap = 0; tap < 4; ++tap) {
        const std::size_t dy = tap / 2, dx = tap % 2;
        const double* zrow = z.data() + (co * 4 + tap) * hw;
        for (std::size_t i = 0; i < xs.h; ++i) {
          for (std::size_t j = 0; j < xs.w; ++j) out[(2 * i + dy) * ow + 2 * j + dx] = zrow[i * xs.w + j] + bias[co];
        }
      }
    }
  }
  return y;
}

Tensor conv_transpose2x2_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, Tensor& dweight,
                                  Tensor& dbias) {
  const Shape& xs = x.shape();
  const auto& kt = kernels::active();
  const std::size_t cin = xs.c, cout = weight.shape().c, hw = xs.plane(), zr = cout * 4;
  const std::size_t ow = xs.w * 2;
  std::vector<double> dz(zr * hw), dz_t(hw * zr);
  Tensor dx(xs);
  for (std::size_t s = 0; s < xs.n; ++s) {
    for (std::size_t co = 0; co < cout; ++co) {
      const double* g = dy.plane(s, co);
      double acc = 0.0;
      for (std::size_t i = 0; i < dy.shape().plane(); ++i) acc += g[i];
      dbias[co] += acc;
      for (std::size_t tap = 0; tap < 4; ++tap) {
        const std::size_t oy = tap / 2, ox = tap % 2;
        double* zrow = dz.data() + (co * 4 + tap) * hw;
        for (std::size_t i = 0; i < xs.h; ++i) {
          for (std::size_t j = 0; j < xs.w; ++j) zrow[i * xs.w + j] = g[(2 * i + oy) * ow + 2 * j + ox];
        }
      }
    }
    // dW (cin x zr) += x (cin x hw) * dz^T (hw x zr)
    transpose(dz.data(), zr, hw, dz_t.data());
    kt.gemm(cin, zr, hw, x.sample(s), hw, dz_t.data(), zr, dweight.data(), zr);
    // dx (cin x hw) = W (cin x zr) * dz (zr x hw)
    kt.gemm(cin, hw, zr, weight.data(), zr, dz.data(), hw, dx.sample(s), hw);
  }
  return dx;
}

Tensor max_pool2x2(const Tensor& x, std::vector<std::uint32_t>& argmax) {
  const Shape& s = x.shape();
  if (s.h % 2 || s.w % 2) throw DimensionError(fmt::format("max_pool2x2 needs even extents, got {}", s.str()));
  Tensor y(Shape{s.n, s.c, s.h / 2, s.w / 2});
  argmax.assign(y.size(), 0);
  const std::size_t oh = s.h / 2, ow = s.w / 2;
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const double* in = x.data() + p * s.plane();
    double* out = y.data() + p * oh * ow;
    std::uint32_t* arg = argmax.data() + p * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = 2 * i * s.w + 2 * j;
        for (std::size_t off : {2 * i * s.w + 2 * j + 1, (2 * i + 1) * s.w + 2 * j, (2 * i + 1) * s.w + 2 * j + 1}) {
          if (in[off] > in[best]) best = off;
        }
        out[i * ow + j] = in[best];
        arg[i * ow + j] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return y;
}

Tensor max_pool2x2_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, const Shape& x_shape) {
  Tensor dx(x_shape);
  const std::size_t per = dy.shape().plane();
  for (std::size_t p = 0; p < x_shape.n * x_shape.c; ++p) {
    double* g = dx.data() + p * x_shape.plane();
    for (std::size_t i = 0; i < per; ++i) g[argmax[p * per + i]] += dy[p * per + i];
  }
  return dx;
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "leaky_relu") return Activation::leaky_relu;
  throw ConfigurationError(fmt::format("unknown activation '{}' (expected relu or leaky_relu)", name));
}

std::string_view activation_name(Activation a) { return a == Activation::relu ? "relu" : "leaky_relu"; }

namespace {
constexpr double kLeakySlope = 0.01;
}

Tensor activate(const Tensor& pre, Activation a) {
  Tensor y(pre.shape());
  const double neg = a == Activation::relu ? 0.0 : kLeakySlope;
  for (std::size_t i = 0; i < pre.size(); ++i) y[i] = pre[i] > 0.0 ? pre[i] : neg * pre[i];
  return y;
}

Tensor activate_backward(const Tensor& pre, const Tensor& dy, Activation a) {
  Tensor dx(pre.shape());
  const double neg = a == Activation::relu ? 0.0 : kLeakySlope;
  for (std::size_t i = 0; i < pre.size(); ++i) dx[i] = pre[i] > 0.0 ? dy[i] : neg * dy[i];
  return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw DimensionError(fmt::format("concat_channels: {} vs {}", sa.str(), sb.str()));
  }
  Tensor y(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (std::size_t s = 0; s < sa.n; ++s) {
    std::copy(a.sample(s), a.sample(s) + sa.c * sa.plane(), y.sample(s));
    std::copy(b.sample(s), b.sample(s) + sb.c * sb.plane(), y.sample(s) + sa.c * sa.plane());
  }
  return y;
}

void split_channels(const Tensor& d, std::size_t channels_a, Tensor& da, Tensor& db) {
  const Shape& s = d.shape();
  da = Tensor(Shape{s.n, channels_a, s.h, s.w});
  db = Tensor(Shape{s.n, s.c - channels_a, s.h, s.w});
  const std::size_t na = channels_a * s.plane(), nb = (s.c - channels_a) * s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy(d.sample(n), d.sample(n) + na, da.sample(n));
    std::copy(d.sample(n) + na, d.sample(n) + na + nb, db.sample(n));
  }
}

namespace {

void check_depthwise(const Tensor& x, const Tensor& kernel) {
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (ks.n != xs.c || ks.c != 1 || ks.h != ks.w || ks.h % 2 == 0) {
    throw DimensionError(fmt::format("depthwise kernel {} does not fit input {}", ks.str(), xs.str()));
  }
  if (ks.h / 2 >= xs.h || ks.w / 2 >= xs.w) {
    throw DimensionError(fmt::format("reflect padding {} needs input larger than {}", ks.h / 2, xs.str()));
  }
}

}  // namespace

Tensor depthwise_conv_reflect(const Tensor& x, const Tensor& kernel) {
  check_depthwise(x, kernel);
  const Shape& s = x.shape();
  const std::size_t k = kernel.shape().h;
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  Tensor y(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* in = x.plane(n, c);
      const double* kw = kernel.plane(c, 0);
      double* out = y.plane(n, c);
      for (std::size_t oy = 0; oy < s.h; ++oy) {
        for (std::size_t ox = 0; ox < s.w; ++ox) {
          double acc = 0.0;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::size_t iy = reflect(static_cast<std::ptrdiff_t>(oy + ky) - pad, s.h);
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::size_t ix = reflect(static_cast<std::ptrdiff_t>(ox + kx) - pad, s.w);
              acc += kw[ky * k + kx] * in[iy * s.w + ix];
            }
          }
          out[oy * s.w + ox] = acc;
        }
      }
    }
  }
  return y;
}

Tensor depthwise_conv_reflect_backward(const Tensor& x, const Tensor& kernel, const Tensor& dy, Tensor& dkernel) {
  check_depthwise(x, kernel);
  const Shape& s = x.shape();
  const std::size_t k = kernel.shape().h;
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  Tensor dx(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* in = x.plane(n, c);
      const double* kw = kernel.plane(c, 0);
      const double* g = dy.plane(n, c);
      double* gk = dkernel.plane(c, 0);
      double* gx = dx.plane(n, c);
      for (std::size_t oy = 0; oy < s.h; ++oy) {
        for (std::size_t ox = 0; ox < s.w; ++ox) {
          const double go = g[oy * s.w + ox];
          if (go == 0.0) continue;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::size_t iy = reflect(static_cast<std::ptrdiff_t>(oy + ky) - pad, s.h);
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::size_t ix = reflect(static_cast<std::ptrdiff_t>(ox + kx) - pad, s.w);
              gk[ky * k + kx] += go * in[iy * s.w + ix];
              gx[iy * s.w + ix] += go * kw[ky * k + kx];
            }
          }
        }
      }
    }
  }
  return dx;
}

}  // namespace ulw::ops
