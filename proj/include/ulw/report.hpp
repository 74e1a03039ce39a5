#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ulw/harness.hpp"

// Ablation tables and qualitative image grids.
namespace ulw::report {

/// Column headers after "Methods", in table order.
inline constexpr std::array<std::string_view, 4> kMetricHeaders{"SSIM ↑", "PSNR ↑", "MSE ↓", "CIEDE-2000 ↓"};

/// Four fixed decimals; "inf" for an infinite PSNR.
std::string format_metric(double v);

/// Markdown table with one row per variant followed by the config hash and
/// dataset fingerprint. Nothing is bolded. Throws ReportError unless every
/// variant appears exactly once.
std::string render_markdown(const harness::AblationReport& report);

/// `variant,Methods,SSIM ↑,PSNR ↑,MSE ↓,CIEDE-2000 ↓`, one row per variant.
std::string render_csv(const harness::AblationReport& report);

void write_text(const std::filesystem::path& path, std::string_view text);

/// Grid row keys, top to bottom: the inputs, then the variants.
inline constexpr std::array<std::string_view, 6> kGridRows{"smoky",        "clean",
                                                          "no_wiener",    "no_ssim_loss",
                                                          "no_perceptual_loss", "full_ulw"};

/// Tiles laid out row-major with a white gutter; every tile is one
/// (1, 3, H, W) image of a common size, clamped to [0, 1] on placement.
ImageBatch compose_grid(const std::vector<std::vector<ImageBatch>>& rows, std::size_t gutter = 2);

/// Rows in kGridRows order, one column per sample. Throws ReportError when a
/// variant's parameters are missing.
ImageBatch ablation_grid(const std::map<harness::Variant, const network::ModelParams*>& models,
                         const std::vector<image::PairedSample>& samples);

}  // namespace ulw::report
