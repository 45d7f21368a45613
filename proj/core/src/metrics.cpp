#include "nlden/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "nlden/error.hpp"

namespace nlden {
namespace {

void blur_valid_axis(std::vector<double>& data, std::array<std::size_t, 3>& dims, std::size_t axis,
                     const std::vector<double>& w) {
  const std::size_t k = w.size();
  std::array<std::size_t, 3> od = dims;
  od[axis] = dims[axis] - k + 1;
  std::vector<double> out(od[0] * od[1] * od[2]);
  const std::size_t step = axis == 0 ? 1 : (axis == 1 ? dims[0] : dims[0] * dims[1]);
  for (std::size_t z = 0; z < od[2]; ++z) {
    for (std::size_t y = 0; y < od[1]; ++y) {
      for (std::size_t x = 0; x < od[0]; ++x) {
        const std::size_t src = x + dims[0] * (y + dims[1] * z);
        double acc = 0.0;
        for (std::size_t t = 0; t < k; ++t) acc += w[t] * data[src + t * step];
        out[x + od[0] * (y + od[1] * z)] = acc;
      }
    }
  }
  data = std::move(out);
  dims = od;
}

}  // namespace

double psnr(std::span<const float> pred, std::span<const float> ref, std::optional<double> fixed_peak) {
  if (pred.size() != ref.size() || ref.empty()) throw Error(ErrorKind::Metric, "psnr: size mismatch");
  const double peak = fixed_peak ? *fixed_peak : static_cast<double>(*std::max_element(ref.begin(), ref.end()));
  if (!(peak > 0.0)) throw Error(ErrorKind::Metric, "psnr: reference peak must be positive");
  double sse = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(ref[i]);
    sse += d * d;
  }
  if (sse == 0.0) return kPsnrIdentical;
  const double mse = sse / static_cast<double>(ref.size());
  return 20.0 * std::log10(peak / std::sqrt(mse));
}

double psnr(const Volume& pred, const Volume& ref, std::optional<double> fixed_peak) {
  if (pred.dims() != ref.dims()) throw Error(ErrorKind::Metric, "psnr: volume dims differ");
  return psnr(pred.values(), ref.values(), fixed_peak);
}

std::vector<double> ssim_window(double sigma, std::size_t radius) {
  std::vector<double> w(2 * radius + 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double x = static_cast<double>(i) - static_cast<double>(radius);
    w[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

double ssim3d(const Volume& pred, const Volume& ref, const SsimOptions& options) {
  if (pred.dims() != ref.dims()) throw Error(ErrorKind::Metric, "ssim: volume dims differ");
  const std::size_t win = 2 * options.radius + 1;
  const Dims& d = ref.dims();
  if (d.nx < win || d.ny < win || d.nz < win) {
    throw Error(ErrorKind::Metric, "ssim: volume smaller than the " + std::to_string(win) + "^3 window");
  }
  double range = 0.0;
  if (options.dynamic_range) {
    range = *options.dynamic_range;
  } else {
    const auto [lo, hi] = std::minmax_element(ref.values().begin(), ref.values().end());
    range = static_cast<double>(*hi) - static_cast<double>(*lo);
    if (!(range > 0.0)) range = *hi;
    if (!(range > 0.0)) range = 1.0;
  }
  if (!(range > 0.0)) throw Error(ErrorKind::Metric, "ssim: dynamic range must be positive");
  const double c1 = (options.k1 * range) * (options.k1 * range);
  const double c2 = (options.k2 * range) * (options.k2 * range);

  const auto w = ssim_window(options.sigma, options.radius);
  const std::size_t n = ref.size();
  std::vector<double> mx(n), my(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pred.values()[i];
    const double y = ref.values()[i];
    mx[i] = x;
    my[i] = y;
    xx[i] = x * x;
    yy[i] = y * y;
    xy[i] = x * y;
  }
  std::array<std::size_t, 3> out_dims{};
  for (std::vector<double>* field : {&mx, &my, &xx, &yy, &xy}) {
    std::array<std::size_t, 3> dims{d.nx, d.ny, d.nz};
    for (std::size_t axis = 0; axis < 3; ++axis) blur_valid_axis(*field, dims, axis, w);
    out_dims = dims;
  }
  const std::size_t m = out_dims[0] * out_dims[1] * out_dims[2];
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double vx = xx[i] - mx[i] * mx[i];
    const double vy = yy[i] - my[i] * my[i];
    const double cxy = xy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(m);
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw Error(ErrorKind::Parameter, "degrees of freedom must be positive");
  if (!std::isfinite(t)) return 0.0;
  const double x = df / (df + t * t);
  return boost::math::ibeta(df / 2.0, 0.5, x);
}

PairedTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::Parameter, "paired t-test: lengths differ");
  if (a.size() < 2) throw Error(ErrorKind::Parameter, "paired t-test needs n >= 2");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = b[i] - a[i];
    sum += d[i];
  }
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0)) throw Error(ErrorKind::DegenerateDifferences, "all paired differences are equal");
  PairedTestResult r;
  r.n = n;
  r.mean_diff = mean;
  r.sd_diff = sd;
  r.t_stat = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.df = n - 1;
  r.p_two_sided = student_t_two_sided_p(r.t_stat, static_cast<double>(r.df));
  return r;
}

Interval delta_ci(std::span<const double> deltas, double level) {
  if (deltas.size() < 2) throw Error(ErrorKind::Parameter, "confidence interval needs n >= 2");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::Parameter, "level must lie in (0, 1)");
  const double n = static_cast<double>(deltas.size());
  double sum = 0.0;
  for (double v : deltas) sum += v;
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : deltas) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double z = boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + level / 2.0);
  const double half = z * sd / std::sqrt(n);
  return {mean - half, mean + half};
}

double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorKind::Parameter, "quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

BoxSummary box_summary(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorKind::Parameter, "box summary of an empty sample");
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  BoxSummary b;
  b.min = s.front();
  b.max = s.back();
  b.q1 = sorted_quantile(s, 0.25);
  b.median = sorted_quantile(s, 0.5);
  b.q3 = sorted_quantile(s, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo_fence = b.q1 - 1.5 * iqr;
  const double hi_fence = b.q3 + 1.5 * iqr;
  b.whisker_lo = b.q1;
  b.whisker_hi = b.q3;
  bool lo_set = false;
  for (double v : s) {
    if (v < lo_fence || v > hi_fence) {
      b.outliers.push_back(v);
      continue;
    }
    if (!lo_set) {
      b.whisker_lo = v;
      lo_set = true;
    }
    b.whisker_hi = v;
  }
  return b;
}

}  // namespace nlden
