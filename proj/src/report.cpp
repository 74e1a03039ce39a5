#include "ulw/report.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ulw/errors.hpp"

namespace ulw::report {
namespace {

// Rows in table order; throws unless the report holds each variant once.
std::vector<harness::AblationRow> ordered_rows(const harness::AblationReport& report) {
  std::vector<harness::AblationRow> out;
  for (harness::Variant v : harness::kVariants) {
    const auto n = std::count_if(report.rows.begin(), report.rows.end(),
                                 [&](const harness::AblationRow& r) { return r.variant == v; });
    if (n != 1) {
      throw ReportError(fmt::format("report must contain variant {} exactly once, found {}",
                                    harness::variant_name(v), n));
    }
    out.push_back(*std::find_if(report.rows.begin(), report.rows.end(),
                                [&](const harness::AblationRow& r) { return r.variant == v; }));
  }
  if (report.rows.size() != out.size()) throw ReportError("report has rows beyond the four variants");
  return out;
}

std::array<std::string, 4> metric_cells(const metrics::MetricRecord& m) {
  return {format_metric(m.ssim), format_metric(m.psnr_db), format_metric(m.mse), format_metric(m.ciede2000)};
}

}  // namespace

std::string format_metric(double v) {
  if (std::isinf(v) && v > 0) return "inf";
  return fmt::format("{:.4f}", v);
}

std::string render_markdown(const harness::AblationReport& report) {
  const auto rows = ordered_rows(report);
  std::string out = fmt::format("| Methods | {} |\n", fmt::join(kMetricHeaders, " | "));
  out += "|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    out += fmt::format("| {} | {} |\n", harness::variant_label(r.variant), fmt::join(metric_cells(r.mean), " | "));
  }
  out += fmt::format("\nConfig hash: `{}`\nDataset fingerprint: `{}`\n", report.config_hash,
                     report.dataset_fingerprint);
  return out;
}

std::string render_csv(const harness::AblationReport& report) {
  const auto rows = ordered_rows(report);
  std::string out = fmt::format("variant,Methods,{}\n", fmt::join(kMetricHeaders, ","));
  for (const auto& r : rows) {
    out += fmt::format("{},{},{}\n", harness::variant_name(r.variant), harness::variant_label(r.variant),
                       fmt::join(metric_cells(r.mean), ","));
  }
  return out;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

ImageBatch compose_grid(const std::vector<std::vector<ImageBatch>>& rows, std::size_t gutter) {
  if (rows.empty() || rows.front().empty()) throw ReportError("image grid needs at least one tile");
  const std::size_t cols = rows.front().size();
  const Shape tile = rows.front().front().shape();
  for (const auto& row : rows) {
    if (row.size() != cols) throw ReportError("image grid rows have different lengths");
    for (const auto& t : row) {
      if (t.shape() != tile || tile.n != 1 || tile.c != 3) {
        throw ReportError(fmt::format("image grid tile {} does not match {}", t.shape().str(), tile.str()));
      }
    }
  }
  const std::size_t gh = rows.size() * tile.h + (rows.size() + 1) * gutter;
  const std::size_t gw = cols * tile.w + (cols + 1) * gutter;
  Tensor grid(Shape{1, 3, gh, gw});
  std::fill(grid.values().begin(), grid.values().end(), 1.0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const Tensor& t = rows[r][c];
      const std::size_t y0 = gutter + r * (tile.h + gutter);
      const std::size_t x0 = gutter + c * (tile.w + gutter);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t y = 0; y < tile.h; ++y) {
          for (std::size_t x = 0; x < tile.w; ++x) {
            grid.at(0, ch, y0 + y, x0 + x) = std::clamp(t.at(0, ch, y, x), 0.0, 1.0);
          }
        }
      }
    }
  }
  return grid;
}

ImageBatch ablation_grid(const std::map<harness::Variant, const network::ModelParams*>& models,
                         const std::vector<image::PairedSample>& samples) {
  std::vector<std::vector<ImageBatch>> rows(kGridRows.size());
  for (const auto& s : samples) {
    rows[0].push_back(s.smoky);
    rows[1].push_back(s.clean);
  }
  for (std::size_t r = 2; r < kGridRows.size(); ++r) {
    const harness::Variant v = harness::parse_variant(kGridRows[r]);
    const auto it = models.find(v);
    if (it == models.end() || it->second == nullptr) {
      throw ReportError(fmt::format("image grid is missing variant {}", kGridRows[r]));
    }
    for (const auto& s : samples) rows[r].push_back(network::model_forward(*it->second, s.smoky));
  }
  return compose_grid(rows);
}

}  // namespace ulw::report
