#include "ulw/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include <fmt/format.h>

#include "ulw/errors.hpp"
#include "ulw/kernels.hpp"
#include "ulw/ops.hpp"

namespace ulw::metrics {

void SSIMConfig::validate() const {
  if (window_size < 3 || window_size % 2 == 0) {
    throw ParameterError(fmt::format("SSIM window size must be odd and >= 3, got {}", window_size));
  }
  if (!(window_sigma > 0.0)) throw ParameterError("SSIM window sigma must be positive");
  if (!(k1 > 0.0 && k2 > 0.0 && dynamic_range > 0.0)) throw ParameterError("SSIM constants must be positive");
}

std::vector<double> SSIMConfig::window_1d() const { return ops::gaussian_taps(window_size, window_sigma); }

double mse(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "mse");
  if (x.empty()) throw DimensionError("mse of empty tensors");
  return kernels::active().sum_sq_diff(x.data(), y.data(), x.size()) / static_cast<double>(x.size());
}

double psnr_from_mse(double mse_value, double max_val) {
  if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / mse_value);
}

double psnr(const Tensor& x, const Tensor& y, double max_val) { return psnr_from_mse(mse(x, y), max_val); }

double ssim(const Tensor& x, const Tensor& y, const SSIMConfig& cfg) { return ssim(x, y, cfg, nullptr); }

// Per plane, with m = G*x, e = G*(x^2), e_xy = G*(xy) over the valid region:
//   S = A1 A2 / (B1 B2),  A1 = 2 mx my + C1,  A2 = 2 (exy - mx my) + C2,
//   B1 = mx^2 + my^2 + C1,  B2 = (exx - mx^2) + (eyy - my^2) + C2.
// The gradient is pulled back through the three filtered maps that depend on
// x with the adjoint of the valid filter.
double ssim(const Tensor& x, const Tensor& y, const SSIMConfig& cfg, Tensor* grad_x) {
  require_same_shape(x, y, "ssim");
  cfg.validate();
  const Shape& s = x.shape();
  const auto ws = static_cast<std::size_t>(cfg.window_size);
  if (s.h < ws || s.w < ws) {
    throw DimensionError(fmt::format("ssim: image {}x{} is smaller than the {}x{} window", s.w, s.h, ws, ws));
  }
  const std::vector<double> taps = cfg.window_1d();
  const double c1 = cfg.c1(), c2 = cfg.c2();
  const std::size_t oh = s.h - ws + 1, ow = s.w - ws + 1, on = oh * ow;
  const double count = static_cast<double>(s.n * s.c * on);

  if (grad_x) *grad_x = Tensor(s);
  std::vector<double> xx(s.plane()), yy(s.plane()), xy(s.plane());
  std::vector<double> mx(on), my(on), exx(on), eyy(on), exy(on);
  std::vector<double> gm(on), gxx(on), gxy(on), back(s.plane());
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* px = x.plane(n, c);
      const double* py = y.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        xx[i] = px[i] * px[i];
        yy[i] = py[i] * py[i];
        xy[i] = px[i] * py[i];
      }
      ops::valid_filter(px, s.h, s.w, taps, mx.data());
      ops::valid_filter(py, s.h, s.w, taps, my.data());
      ops::valid_filter(xx.data(), s.h, s.w, taps, exx.data());
      ops::valid_filter(yy.data(), s.h, s.w, taps, eyy.data());
      ops::valid_filter(xy.data(), s.h, s.w, taps, exy.data());
      double plane_sum = 0.0;
      for (std::size_t i = 0; i < on; ++i) {
        const double a1 = 2.0 * mx[i] * my[i] + c1;
        const double a2 = 2.0 * (exy[i] - mx[i] * my[i]) + c2;
        const double b1 = mx[i] * mx[i] + my[i] * my[i] + c1;
        const double b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + c2;
        const double den = b1 * b2;
        const double value = a1 * a2 / den;
        plane_sum += value;
        if (grad_x) {
          const double scale = 1.0 / count;
          gm[i] = scale * ((2.0 * my[i] * a2 - 2.0 * my[i] * a1) / den - value * (2.0 * mx[i] / b1 - 2.0 * mx[i] / b2));
          gxx[i] = scale * (-value / b2);
          gxy[i] = scale * (2.0 * a1 / den);
        }
      }
      total += plane_sum;
      if (grad_x) {
        double* g = grad_x->plane(n, c);
        ops::valid_filter_adjoint(gm.data(), s.h, s.w, taps, back.data());
        for (std::size_t i = 0; i < s.plane(); ++i) g[i] = back[i];
        ops::valid_filter_adjoint(gxx.data(), s.h, s.w, taps, back.data());
        for (std::size_t i = 0; i < s.plane(); ++i) g[i] += 2.0 * px[i] * back[i];
        ops::valid_filter_adjoint(gxy.data(), s.h, s.w, taps, back.data());
        for (std::size_t i = 0; i < s.plane(); ++i) g[i] += py[i] * back[i];
      }
    }
  }
  return total / count;
}

namespace {

// IEC 61966-2-1 linear-RGB -> XYZ. The reference white is the image of RGB
// (1, 1, 1) so white lands on a* = b* = 0.
constexpr double kM[3][3] = {{0.4124, 0.3576, 0.1805}, {0.2126, 0.7152, 0.0722}, {0.0193, 0.1192, 0.9505}};
constexpr double kWhite[3] = {kM[0][0] + kM[0][1] + kM[0][2], kM[1][0] + kM[1][1] + kM[1][2],
                              kM[2][0] + kM[2][1] + kM[2][2]};

double srgb_decode(double v) { return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4); }

double lab_f(double t) {
  constexpr double d = 6.0 / 29.0;
  return t > d * d * d ? std::cbrt(t) : t / (3.0 * d * d) + 4.0 / 29.0;
}

constexpr double deg(double rad) { return rad * 180.0 / std::numbers::pi; }
constexpr double rad(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

LabColor srgb_to_lab(double r, double g, double b) {
  const double lin[3] = {srgb_decode(r), srgb_decode(g), srgb_decode(b)};
  double xyz[3];
  for (int i = 0; i < 3; ++i) xyz[i] = (kM[i][0] * lin[0] + kM[i][1] * lin[1] + kM[i][2] * lin[2]) / kWhite[i];
  const double fx = lab_f(xyz[0]), fy = lab_f(xyz[1]), fz = lab_f(xyz[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

std::vector<LabColor> srgb_to_lab(const ImageBatch& batch) {
  const Shape& s = batch.shape();
  if (s.c != 3) throw DimensionError(fmt::format("srgb_to_lab needs 3 channels, got {}", s.c));
  std::vector<LabColor> out;
  out.reserve(s.n * s.plane());
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* r = batch.plane(n, 0);
    const double* g = batch.plane(n, 1);
    const double* b = batch.plane(n, 2);
    for (std::size_t i = 0; i < s.plane(); ++i) out.push_back(srgb_to_lab(r[i], g[i], b[i]));
  }
  return out;
}

double ciede2000(const LabColor& c1, const LabColor& c2) {
  constexpr double pow25_7 = 6103515625.0;  // 25^7
  const double cab1 = std::hypot(c1.a, c1.b);
  const double cab2 = std::hypot(c2.a, c2.b);
  const double cab_mean7 = std::pow(0.5 * (cab1 + cab2), 7);
  const double g = 0.5 * (1.0 - std::sqrt(cab_mean7 / (cab_mean7 + pow25_7)));
  const double a1 = (1.0 + g) * c1.a;
  const double a2 = (1.0 + g) * c2.a;
  const double cp1 = std::hypot(a1, c1.b);
  const double cp2 = std::hypot(a2, c2.b);
  auto hue = [](double b, double a) {
    if (a == 0.0 && b == 0.0) return 0.0;
    const double h = deg(std::atan2(b, a));
    return h < 0.0 ? h + 360.0 : h;
  };
  const double hp1 = hue(c1.b, a1);
  const double hp2 = hue(c2.b, a2);

  const double dl = c2.L - c1.L;
  const double dc = cp2 - cp1;
  const double cprod = cp1 * cp2;
  double dh = 0.0;
  if (cprod != 0.0) {
    dh = hp2 - hp1;
    if (dh > 180.0)
      dh -= 360.0;
    else if (dh < -180.0)
      dh += 360.0;
  }
  const double dH = 2.0 * std::sqrt(cprod) * std::sin(rad(dh) / 2.0);

  const double l_mean = 0.5 * (c1.L + c2.L);
  const double c_mean = 0.5 * (cp1 + cp2);
  double h_mean = hp1 + hp2;
  if (cprod != 0.0) {
    if (std::abs(hp1 - hp2) <= 180.0)
      h_mean *= 0.5;
    else if (h_mean < 360.0)
      h_mean = 0.5 * (h_mean + 360.0);
    else
      h_mean = 0.5 * (h_mean - 360.0);
  }

  const double t = 1.0 - 0.17 * std::cos(rad(h_mean - 30.0)) + 0.24 * std::cos(rad(2.0 * h_mean)) +
                   0.32 * std::cos(rad(3.0 * h_mean + 6.0)) - 0.20 * std::cos(rad(4.0 * h_mean - 63.0));
  const double dtheta = 30.0 * std::exp(-std::pow((h_mean - 275.0) / 25.0, 2));
  const double c_mean7 = std::pow(c_mean, 7);
  const double rc = 2.0 * std::sqrt(c_mean7 / (c_mean7 + pow25_7));
  const double l50 = (l_mean - 50.0) * (l_mean - 50.0);
  const double sl = 1.0 + 0.015 * l50 / std::sqrt(20.0 + l50);
  const double sc = 1.0 + 0.045 * c_mean;
  const double sh = 1.0 + 0.015 * c_mean * t;
  const double rt = -std::sin(rad(2.0 * dtheta)) * rc;

  const double tl = dl / sl, tc = dc / sc, th = dH / sh;
  return std::sqrt(std::max(0.0, tl * tl + tc * tc + th * th + rt * tc * th));
}

double ciede2000_image(const ImageBatch& x, const ImageBatch& y) {
  require_same_shape(x, y, "ciede2000_image");
  const auto lx = srgb_to_lab(x);
  const auto ly = srgb_to_lab(y);
  if (lx.empty()) throw DimensionError("ciede2000_image of empty images");
  double sum = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) sum += ciede2000(lx[i], ly[i]);
  return sum / static_cast<double>(lx.size());
}

MetricRecord evaluate_pair(const ImageBatch& pred, const ImageBatch& target, std::string id) {
  MetricRecord r;
  r.id = std::move(id);
  r.mse = mse(pred, target);
  r.psnr_db = psnr_from_mse(r.mse);
  r.ssim = ssim(pred, target);
  r.ciede2000 = ciede2000_image(pred, target);
  return r;
}

Aggregate aggregate(std::span<const MetricRecord> records) {
  if (records.empty()) throw AggregationError("cannot aggregate an empty list of metric records");
  Aggregate out;
  out.count = records.size();
  out.mean.id = "mean";
  double psnr_sum = 0.0;
  std::size_t finite = 0;
  for (const auto& r : records) {
    out.mean.ssim += r.ssim;
    out.mean.mse += r.mse;
    out.mean.ciede2000 += r.ciede2000;
    if (std::isinf(r.psnr_db) && r.psnr_db > 0) {
      ++out.psnr_infinite;
    } else {
      psnr_sum += r.psnr_db;
      ++finite;
    }
  }
  const auto n = static_cast<double>(records.size());
  out.mean.ssim /= n;
  out.mean.mse /= n;
  out.mean.ciede2000 /= n;
  out.mean.psnr_db = finite ? psnr_sum / static_cast<double>(finite) : std::numeric_limits<double>::infinity();
  return out;
}

std::string format_value(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{}", v);
}

void write_metrics_csv(std::ostream& out, std::span<const MetricRecord> records) {
  out << "id,ssim,psnr_db,mse,ciede2000\n";
  for (const auto& r : records) {
    out << r.id << ',' << format_value(r.ssim) << ',' << format_value(r.psnr_db) << ',' << format_value(r.mse) << ','
        << format_value(r.ciede2000) << '\n';
  }
}

}  // namespace ulw::metrics
