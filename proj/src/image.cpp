#include "ulw/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "ulw/digest.hpp"
#include "ulw/errors.hpp"

namespace ulw::image {
namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index * 0x100000001b3ULL + stream));
}

std::uint8_t quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

}  // namespace

ImageBatch load_image(const fs::path& path) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw IoError(fmt::format("image file not found: {}", path.string()));

  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw FormatError(fmt::format("{}: not a decodable PNG ({})", path.string(), img.message));
  }
  const auto native = img.format;
  auto reject = [&](std::string why) {
    png_image_free(&img);
    throw FormatError(fmt::format("{}: {}", path.string(), why));
  };
  if (native & PNG_FORMAT_FLAG_LINEAR) reject("bit depth is 16, expected 8");
  if (!(native & PNG_FORMAT_FLAG_COLOR)) {
    reject(fmt::format("channel count is {}, expected 3 (RGB)", (native & PNG_FORMAT_FLAG_ALPHA) ? 2 : 1));
  }
  if (native & PNG_FORMAT_FLAG_ALPHA) reject("channel count is 4 (RGBA), expected 3 (RGB)");

  img.format = PNG_FORMAT_RGB;
  const std::size_t h = img.height, w = img.width;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    throw FormatError(fmt::format("{}: decode failed ({})", path.string(), img.message));
  }
  Tensor out(Shape{1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.at(0, c, y, x) = buf[(y * w + x) * 3 + c] / 255.0;
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_png(const ImageBatch& img) {
  const Shape& s = img.shape();
  if (s.n < 1 || s.c != 3) throw DimensionError(fmt::format("cannot encode {} as RGB", s.str()));
  std::vector<png_byte> pixels(s.h * s.w * 3);
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) pixels[(y * s.w + x) * 3 + c] = quantize(img.at(0, c, y, x));
    }
  }
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(s.w);
  pi.height = static_cast<png_uint_32>(s.h);
  pi.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(fmt::format("PNG encode failed: {}", pi.message));
  }
  std::vector<std::uint8_t> bytes(size);
  if (!png_image_write_to_memory(&pi, bytes.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(fmt::format("PNG encode failed: {}", pi.message));
  }
  bytes.resize(size);
  return bytes;
}

void save_image(const ImageBatch& img, const fs::path& path) {
  const auto bytes = encode_png(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError(fmt::format("write failed: {}", path.string()));
}

PairedDataset::PairedDataset(std::vector<PairedSample> samples, std::string manifest_path)
    : samples_(std::move(samples)), manifest_path_(std::move(manifest_path)) {
  if (samples_.empty()) throw DatasetError("paired dataset must be nonempty");
  std::set<std::string> seen;
  for (const auto& s : samples_) {
    if (!seen.insert(s.id).second) throw ManifestError(fmt::format("duplicate sample id '{}'", s.id));
    if (s.smoky.shape() != s.clean.shape()) {
      throw PairingError(fmt::format("sample '{}': smoky {} and clean {} differ in shape", s.id,
                                     s.smoky.shape().str(), s.clean.shape().str()));
    }
  }
}

PairedDataset load_paired_dataset(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError(fmt::format("cannot open manifest {}", manifest.string()));
  const fs::path base = manifest.parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path q(p);
    return q.is_absolute() ? q : base / q;
  };

  std::vector<PairedSample> samples;
  std::set<std::string> ids;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
    if (fields.size() != 3) {
      throw ManifestError(fmt::format("{}:{}: expected 3 tab-separated fields, got {}", manifest.string(), lineno,
                                      fields.size()));
    }
    if (!ids.insert(fields[0]).second) {
      throw ManifestError(fmt::format("{}:{}: duplicate id '{}'", manifest.string(), lineno, fields[0]));
    }
    PairedSample s{fields[0], load_image(resolve(fields[1])), load_image(resolve(fields[2]))};
    if (s.smoky.shape() != s.clean.shape()) {
      throw PairingError(fmt::format("sample '{}': smoky is {}x{} but clean is {}x{}", s.id, s.smoky.shape().w,
                                     s.smoky.shape().h, s.clean.shape().w, s.clean.shape().h));
    }
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw DatasetError(fmt::format("manifest {} lists no samples", manifest.string()));
  return PairedDataset(std::move(samples), manifest.string());
}

fs::path write_paired_dataset(const PairedDataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "smoky");
  fs::create_directories(dir / "clean");
  const fs::path manifest = dir / "manifest.tsv";
  std::ofstream out(manifest);
  if (!out) throw IoError(fmt::format("cannot write {}", manifest.string()));
  out << "# id\tsmoky\tclean\n";
  for (const auto& s : ds.samples()) {
    const std::string name = s.id + ".png";
    save_image(s.smoky, dir / "smoky" / name);
    save_image(s.clean, dir / "clean" / name);
    out << s.id << "\tsmoky/" << name << "\tclean/" << name << "\n";
  }
  return manifest;
}

std::string dataset_fingerprint(const PairedDataset& ds) {
  Sha256 h;
  for (const auto& s : ds.samples()) {
    h.update(s.id);
    h.update("\0", 1);
    for (const Tensor* t : {&s.smoky, &s.clean}) {
      const Shape& sh = t->shape();
      const std::uint64_t dims[4] = {sh.n, sh.c, sh.h, sh.w};
      h.update(dims, sizeof dims);
      h.update(t->data(), t->size() * sizeof(double));
    }
  }
  return h.hex_digest();
}

void SmokeParams::validate() const {
  for (double a : atmosphere) {
    if (!(a >= 0.0 && a <= 1.0)) throw ParameterError(fmt::format("atmospheric colour component {} outside [0, 1]", a));
  }
  if (!(t_min >= 0.0 && t_min <= t_max && t_max <= 1.0)) {
    throw ParameterError(fmt::format("transmittance range [{}, {}] must satisfy 0 <= t_min <= t_max <= 1", t_min, t_max));
  }
  if (noise_scale < 1) throw ParameterError(fmt::format("noise_scale must be a positive integer, got {}", noise_scale));
}

Tensor value_noise(std::size_t height, std::size_t width, int scale, Rng& rng) {
  const auto s = static_cast<std::size_t>(scale);
  const std::size_t gh = height / s + 2, gw = width / s + 2;
  std::vector<double> lattice(gh * gw);
  for (auto& v : lattice) v = rng.uniform();
  Tensor out(Shape{1, 1, height, width});
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t iy = y / s;
    const double ty = smoothstep(static_cast<double>(y % s) / scale);
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t ix = x / s;
      const double tx = smoothstep(static_cast<double>(x % s) / scale);
      const double v00 = lattice[iy * gw + ix], v01 = lattice[iy * gw + ix + 1];
      const double v10 = lattice[(iy + 1) * gw + ix], v11 = lattice[(iy + 1) * gw + ix + 1];
      const double top = v00 + (v01 - v00) * tx;
      const double bottom = v10 + (v11 - v10) * tx;
      out.at(0, 0, y, x) = top + (bottom - top) * ty;
    }
  }
  return out;
}

namespace {

Tensor transmittance_from(std::size_t height, std::size_t width, const SmokeParams& p, Rng& rng) {
  Tensor t = value_noise(height, width, p.noise_scale, rng);
  for (double& v : t.values()) v = std::clamp(p.t_min + (p.t_max - p.t_min) * v, p.t_min, p.t_max);
  return t;
}

}  // namespace

Tensor transmittance_field(std::size_t height, std::size_t width, const SmokeParams& params) {
  params.validate();
  Rng rng(params.seed);
  return transmittance_from(height, width, params, rng);
}

ImageBatch synth_smoke(const ImageBatch& clean, const SmokeParams& params) {
  params.validate();
  check_image_batch(clean);
  const Shape& s = clean.shape();
  Rng rng(params.seed);
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    const Tensor t = transmittance_from(s.h, s.w, params, rng);
    for (std::size_t c = 0; c < 3; ++c) {
      const double a = params.atmosphere[c];
      const double* src = clean.plane(n, c);
      double* dst = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        dst[i] = std::clamp(t[i] * src[i] + (1.0 - t[i]) * a, 0.0, 1.0);
      }
    }
  }
  return out;
}

ImageBatch synth_clean(std::size_t height, std::size_t width, std::uint64_t seed) {
  Rng rng(splitmix64(seed));
  const double base[3] = {rng.uniform(0.55, 0.85), rng.uniform(0.18, 0.38), rng.uniform(0.18, 0.36)};
  const int coarse = static_cast<int>(std::max<std::size_t>(8, std::min(height, width) / 4));
  const Tensor shade = value_noise(height, width, coarse, rng);
  const Tensor texture = value_noise(height, width, 3, rng);

  struct Vessel {
    double cos_a, sin_a, offset, amplitude, period, phase, width, darkness;
  };
  std::vector<Vessel> vessels(2 + rng.below(3));
  const double extent = static_cast<double>(std::max(height, width));
  for (auto& v : vessels) {
    const double angle = rng.uniform(0.0, std::numbers::pi);
    v = {std::cos(angle),          std::sin(angle),         rng.uniform(-0.5, 0.5) * extent,
         rng.uniform(2.0, 8.0),    rng.uniform(16.0, 48.0), rng.uniform(0.0, 2.0 * std::numbers::pi),
         rng.uniform(0.8, 2.0),    rng.uniform(0.3, 0.6)};
  }
  struct Highlight {
    double cy, cx, radius, intensity;
  };
  std::vector<Highlight> highlights(1 + rng.below(2));
  for (auto& hl : highlights) {
    hl = {rng.uniform(0.0, static_cast<double>(height)), rng.uniform(0.0, static_cast<double>(width)),
          rng.uniform(1.5, 4.0), rng.uniform(0.5, 0.9)};
  }

  Tensor out(Shape{1, 3, height, width});
  const double cy0 = 0.5 * static_cast<double>(height), cx0 = 0.5 * static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double fy = static_cast<double>(y) - cy0, fx = static_cast<double>(x) - cx0;
      const double lum = 0.65 + 0.45 * shade.at(0, 0, y, x);
      const double fine = 0.12 * (texture.at(0, 0, y, x) - 0.5);
      double rgb[3];
      for (int c = 0; c < 3; ++c) rgb[c] = base[c] * lum + fine;
      for (const auto& v : vessels) {
        const double u = fx * v.cos_a + fy * v.sin_a;
        const double w = -fx * v.sin_a + fy * v.cos_a;
        const double centre = v.offset + v.amplitude * std::sin(2.0 * std::numbers::pi * u / v.period + v.phase);
        const double d = (w - centre) / v.width;
        const double k = v.darkness * std::exp(-d * d);
        rgb[0] *= 1.0 - 0.6 * k;
        rgb[1] *= 1.0 - k;
        rgb[2] *= 1.0 - 0.8 * k;
      }
      for (const auto& hl : highlights) {
        const double dy = static_cast<double>(y) - hl.cy, dx = static_cast<double>(x) - hl.cx;
        const double k = hl.intensity * std::exp(-(dy * dy + dx * dx) / (2.0 * hl.radius * hl.radius));
        for (double& v : rgb) v += (1.0 - v) * k;
      }
      for (std::size_t c = 0; c < 3; ++c) out.at(0, c, y, x) = std::clamp(rgb[c], 0.0, 1.0);
    }
  }
  return out;
}

PairedDataset make_synthetic_dataset(const SyntheticSpec& spec) {
  spec.smoke.validate();
  if (spec.pairs == 0) throw DatasetError("synthetic dataset needs at least one pair");
  std::vector<PairedSample> samples;
  samples.reserve(spec.pairs);
  for (std::size_t i = 0; i < spec.pairs; ++i) {
    ImageBatch clean = synth_clean(spec.height, spec.width, mix_seed(spec.seed, i, 1));
    SmokeParams smoke = spec.smoke;
    smoke.seed = mix_seed(spec.seed ^ spec.smoke.seed, i, 2);
    ImageBatch smoky = synth_smoke(clean, smoke);
    samples.push_back({fmt::format("synth_{:04d}", i), std::move(smoky), std::move(clean)});
  }
  return PairedDataset(std::move(samples), "synthetic");
}

std::array<std::size_t, 3> split_sizes(std::size_t count, SplitFractions f) {
  const double fr[3] = {f.train, f.val, f.test};
  for (double v : fr) {
    if (!std::isfinite(v) || v <= 0.0) throw ParameterError(fmt::format("split fraction {} must be positive", v));
  }
  if (std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-9) {
    throw ParameterError(fmt::format("split fractions sum to {}, expected 1", fr[0] + fr[1] + fr[2]));
  }
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double quota = static_cast<double>(count) * fr[i];
    sizes[i] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    rem[i] = quota - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < count; ++k, ++assigned) ++sizes[order[k % 3]];
  return sizes;
}

DatasetSplit split_dataset(const PairedDataset& ds, SplitFractions fractions, std::uint64_t seed) {
  const auto sizes = split_sizes(ds.size(), fractions);
  for (std::size_t i = 0; i < 3; ++i) {
    if (sizes[i] == 0) {
      throw DatasetError(fmt::format("{} samples cannot fill a {}/{}/{} split without an empty part", ds.size(),
                                     fractions.train, fractions.val, fractions.test));
    }
  }
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

  auto take = [&](std::size_t first, std::size_t count) {
    std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(first),
                                 perm.begin() + static_cast<std::ptrdiff_t>(first + count));
    std::sort(idx.begin(), idx.end());
    std::vector<PairedSample> part;
    for (auto i : idx) part.push_back(ds[i]);
    return PairedDataset(std::move(part), ds.manifest_path());
  };
  return DatasetSplit{take(0, sizes[0]), take(sizes[0], sizes[1]), take(sizes[0] + sizes[1], sizes[2])};
}

}  // namespace ulw::image
