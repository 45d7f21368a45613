#pragma once

// Straightforward reference implementations used as test oracles. They are
// deliberately naive and share no code with the library.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace oracle {

/// Zero-padded "same" cross-correlation, one 7-deep loop nest.
/// Layout: in [ci][z][y][x], weight [co][ci][kz][ky][kx].
inline std::vector<double> conv3d(const std::vector<double>& in, std::size_t ci_n, std::size_t d,
                                  std::size_t h, std::size_t w, const std::vector<double>& weight,
                                  const std::vector<double>& bias, std::size_t co_n, std::size_t k) {
  const long r = static_cast<long>(k / 2);
  std::vector<double> out(co_n * d * h * w, 0.0);
  for (std::size_t co = 0; co < co_n; ++co)
    for (std::size_t z = 0; z < d; ++z)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double s = bias[co];
          for (std::size_t ci = 0; ci < ci_n; ++ci)
            for (std::size_t kz = 0; kz < k; ++kz)
              for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const long zz = static_cast<long>(z + kz) - r;
                  const long yy = static_cast<long>(y + ky) - r;
                  const long xx = static_cast<long>(x + kx) - r;
                  if (zz < 0 || yy < 0 || xx < 0 || zz >= static_cast<long>(d) || yy >= static_cast<long>(h) ||
                      xx >= static_cast<long>(w))
                    continue;
                  s += weight[(((co * ci_n + ci) * k + kz) * k + ky) * k + kx] *
                       in[((ci * d + static_cast<std::size_t>(zz)) * h + static_cast<std::size_t>(yy)) * w +
                          static_cast<std::size_t>(xx)];
                }
          out[((co * d + z) * h + y) * w + x] = s;
        }
  return out;
}

/// Central difference of f at x[i].
inline double central_difference(const std::function<double()>& f, double& xi, double step) {
  const double keep = xi;
  xi = keep + step;
  const double up = f();
  xi = keep - step;
  const double down = f();
  xi = keep;
  return (up - down) / (2.0 * step);
}

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline std::vector<float> random_floats(std::size_t n, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(n);
  for (float& x : v) x = u(rng);
  return v;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace oracle
