#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nlden/metrics.hpp"

namespace nlden {

/// One evaluated image: input and two methods (a = backbone only,
/// b = backbone with noise-level embedding) against the same reference.
struct MetricsRow {
  std::string image_id;
  double psnr_input = 0.0;
  double psnr_a = 0.0;
  double psnr_b = 0.0;
  double ssim_input = 0.0;
  double ssim_a = 0.0;
  double ssim_b = 0.0;
};

inline constexpr std::string_view kMetricsCsvHeader =
    "image_id,psnr_input,psnr_a,psnr_b,ssim_input,ssim_a,ssim_b";

MetricsRow mean_row(std::span<const MetricsRow> rows);

/// Header, one line per row, then the "Mean" row.
std::string metrics_csv(std::span<const MetricsRow> rows);

/// Parses CSV with the metrics header. A trailing "Mean" row is ignored.
std::vector<MetricsRow> parse_metrics_csv(std::string_view text);

struct EvaluationReport {
  std::vector<MetricsRow> rows;
  MetricsRow mean;
  std::optional<PairedTestResult> psnr_test;  // a vs b
  std::optional<PairedTestResult> ssim_test;
  std::vector<std::string> notes;
  std::optional<Interval> psnr_gain_ci;  // b - a
  std::optional<Interval> ssim_gain_ci;
  BoxSummary psnr_gain_box;
  BoxSummary ssim_gain_box;
};

EvaluationReport build_report(std::vector<MetricsRow> rows);

std::string report_json(const EvaluationReport& report);
std::string box_json(const EvaluationReport& report);

}  // namespace nlden
