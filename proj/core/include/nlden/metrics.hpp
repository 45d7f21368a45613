#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nlden/volume.hpp"

namespace nlden {

/// Returned by psnr() for identical volumes.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 20 log10(peak / RMSE); peak defaults to max(reference).
double psnr(const Volume& pred, const Volume& ref, std::optional<double> fixed_peak = std::nullopt);
double psnr(std::span<const float> pred, std::span<const float> ref,
            std::optional<double> fixed_peak = std::nullopt);

struct SsimOptions {
  double sigma = 1.5;
  std::size_t radius = 3;  // window edge 2 * radius + 1
  double k1 = 0.01;
  double k2 = 0.03;
  /// Dynamic range; when unset: max(ref) - min(ref), else max(ref), else 1.
  std::optional<double> dynamic_range;
};

/// Mean local SSIM over window positions that lie fully inside the volume.
double ssim3d(const Volume& pred, const Volume& ref, const SsimOptions& options = {});

/// Normalized 1D Gaussian window used by ssim3d.
std::vector<double> ssim_window(double sigma, std::size_t radius);

struct PairedTestResult {
  std::size_t n = 0;
  double mean_diff = 0.0;
  double sd_diff = 0.0;
  double t_stat = 0.0;
  std::size_t df = 0;
  double p_two_sided = 1.0;
};

/// Paired t-test on d = b - a.
PairedTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// Two-sided tail probability P(|T| >= |t|) of Student's t with `df` degrees
/// of freedom, via the regularized incomplete beta function.
double student_t_two_sided_p(double t, double df);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// mean +/- z * sd / sqrt(n) with the normal quantile z (normality assumed).
Interval delta_ci(std::span<const double> deltas, double level = 0.95);

struct BoxSummary {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double whisker_lo = 0.0;
  double whisker_hi = 0.0;
  std::vector<double> outliers;
};

/// Quartiles by linear interpolation of order statistics; whiskers at the
/// most extreme points within 1.5 IQR of the quartiles.
BoxSummary box_summary(std::span<const double> values);

/// Linear-interpolation quantile of already sorted values, q in [0, 1].
double sorted_quantile(std::span<const double> sorted, double q);

}  // namespace nlden
