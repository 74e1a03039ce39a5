#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ulw/tensor.hpp"

namespace ulw::metrics {

/// Gaussian-windowed SSIM parameters. Images are assumed to live in [0, L].
struct SSIMConfig {
  int window_size = 11;
  double window_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const;  // ParameterError
  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
  /// Normalised 1-D taps; the 2-D window is their outer product.
  std::vector<double> window_1d() const;
};

struct LabColor {
  double L = 0.0, a = 0.0, b = 0.0;
  bool operator==(const LabColor&) const = default;
};

struct MetricRecord {
  std::string id;
  double ssim = 0.0;
  double psnr_db = 0.0;
  double mse = 0.0;
  double ciede2000 = 0.0;
};

/// Mean of (x - y)^2 over every element.
double mse(const Tensor& x, const Tensor& y);

/// 10 log10(max^2 / mse); +inf when mse == 0.
double psnr(const Tensor& x, const Tensor& y, double max_val = 1.0);
double psnr_from_mse(double mse_value, double max_val = 1.0);

/// Mean SSIM over every valid (unpadded) window position, channel and sample.
double ssim(const Tensor& x, const Tensor& y, const SSIMConfig& cfg = {});

/// As ssim(), and when `grad_x` is non-null writes d(mean SSIM)/dx into it.
double ssim(const Tensor& x, const Tensor& y, const SSIMConfig& cfg, Tensor* grad_x);

/// sRGB (D65, 2 degree observer) to CIELAB for a single colour in [0, 1]^3.
LabColor srgb_to_lab(double r, double g, double b);

/// Per-pixel conversion, ordered (n, y, x).
std::vector<LabColor> srgb_to_lab(const ImageBatch& batch);

/// CIEDE2000 colour difference with kL = kC = kH = 1.
double ciede2000(const LabColor& c1, const LabColor& c2);

/// Mean per-pixel CIEDE2000 between two RGB batches.
double ciede2000_image(const ImageBatch& x, const ImageBatch& y);

/// All four metrics with default configs.
MetricRecord evaluate_pair(const ImageBatch& pred, const ImageBatch& target, std::string id = {});

struct Aggregate {
  MetricRecord mean;
  std::size_t count = 0;
  /// Records whose +inf PSNR was left out of the PSNR mean.
  std::size_t psnr_infinite = 0;
};

/// Field-wise arithmetic means. Throws AggregationError on an empty list.
Aggregate aggregate(std::span<const MetricRecord> records);

/// Shortest round-trip decimal; "inf" for +infinity.
std::string format_value(double v);

/// CSV with header `id,ssim,psnr_db,mse,ciede2000`.
void write_metrics_csv(std::ostream& out, std::span<const MetricRecord> records);

}  // namespace ulw::metrics
