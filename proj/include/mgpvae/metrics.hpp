#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mgpvae::metrics {

inline constexpr double kPsnrCap = 99.0;

double mse(std::span<const float> a, std::span<const float> b);

/// Peak defaults to max - min of the reference. Identical volumes (mse = 0)
/// report the cap; values above it are clamped to it.
double psnr(std::span<const float> reference, std::span<const float> estimate,
            std::optional<double> peak = std::nullopt);
double dynamic_range(std::span<const float> reference);

/// One imputed cell scored against its held-out ground truth.
struct MetricRow {
  std::size_t patient = 0;
  std::size_t modality = 0;
  std::size_t n_present = 0;  // present modalities of the patient when imputing
  double peak = 0.0;
  double mse_mgp = 0.0, psnr_mgp = 0.0;
  double mse_interp = 0.0, psnr_interp = 0.0;
  double mse_mean = 0.0, psnr_mean = 0.0;
};

std::string row_header();
std::string format_row(const MetricRow& row);
/// Throws ValidationError mentioning `line_number` on malformed input.
MetricRow parse_row(const std::string& line, std::size_t line_number);
/// Parses a stream of rows; blank lines and '#' comments are skipped.
std::vector<MetricRow> parse_rows(const std::string& text);

struct GroupSummary {
  std::string modality;  // index, or "all"
  std::size_t n_present = 0;
  std::size_t count = 0;
  double mean_psnr_mgp = 0.0, median_psnr_mgp = 0.0;
  double mean_psnr_interp = 0.0, median_psnr_interp = 0.0;
  double mean_psnr_mean = 0.0, median_psnr_mean = 0.0;
  double mean_mse_mgp = 0.0, mean_mse_interp = 0.0, mean_mse_mean = 0.0;
};

/// Mean PSNR with more present modalities against the next-smaller count.
struct MonotonicityCheck {
  std::size_t more_present = 0, fewer_present = 0;
  double psnr_more = 0.0, psnr_fewer = 0.0;
  bool holds() const { return psnr_more >= psnr_fewer; }
};

struct Report {
  std::vector<GroupSummary> groups;  // per (modality, n_present), then per n_present over all modalities
  std::vector<MonotonicityCheck> monotonicity;
  bool empty() const { return groups.empty(); }
};

/// Order-independent: rows are sorted before any summation.
Report report(std::vector<MetricRow> rows);

std::string format_table(const Report& report);
std::string format_structured(const Report& report);

}  // namespace mgpvae::metrics
