/*
 * Copyright 2026 The Marktrace Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MARKTRACE_PERLIN_H_
#define MARKTRACE_PERLIN_H_

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <vector>

#include "absl/status/status.h"
#include "absl/strings/str_cat.h"
#include "marktrace/rng.h"

namespace marktrace {

// Parameters of the sine-mapped octave noise. Wavelengths are in pixels,
// delta is the L-infinity budget in intensity units.
struct PerlinParams {
  double wavelength_x = 0.0;
  double wavelength_y = 0.0;
  int octaves = 1;
  double sine_periodicity = 1.0;
  double delta = 8.0 / 255.0;

  friend bool operator==(const PerlinParams&, const PerlinParams&) = default;
};

inline constexpr int kMaxOctaves = 8;

inline absl::Status ValidatePerlinParams(const PerlinParams& p) {
  if (!(p.wavelength_x > 0) || !(p.wavelength_y > 0)) {
    return absl::InvalidArgumentError("perlin wavelengths must be positive");
  }
  if (p.octaves < 1 || p.octaves > kMaxOctaves) {
    return absl::InvalidArgumentError(
        absl::StrCat("perlin octaves must be in [1, ", kMaxOctaves, "], got ",
                     p.octaves));
  }
  if (!(p.sine_periodicity > 0)) {
    return absl::InvalidArgumentError("perlin sine periodicity must be positive");
  }
  if (!(p.delta > 0) || p.delta > 1) {
    return absl::InvalidArgumentError(
        absl::StrCat("perlin delta must be in (0, 1], got ", p.delta));
  }
  return absl::OkStatus();
}

// Sampling ranges for per-image parameter draws.
inline constexpr double kMinWavelength = 10.0;
inline constexpr double kMaxWavelength = 180.0;
inline constexpr int kMaxRandomOctaves = 4;
inline constexpr double kMinSinePeriodicity = 4.0;
inline constexpr double kMaxSinePeriodicity = 32.0;

// Draw order is part of the reproducibility contract: lambda_x, lambda_y,
// octaves, sine periodicity.
inline PerlinParams RandomPerlinParams(Rng& rng, double delta) {
  PerlinParams p;
  p.wavelength_x = rng.Uniform(kMinWavelength, kMaxWavelength);
  p.wavelength_y = rng.Uniform(kMinWavelength, kMaxWavelength);
  p.octaves = 1 + static_cast<int>(rng.UniformInt(kMaxRandomOctaves));
  p.sine_periodicity = rng.Uniform(kMinSinePeriodicity, kMaxSinePeriodicity);
  p.delta = delta;
  return p;
}

// Classic 2D gradient noise: seeded 256-entry permutation, eight gradient
// directions, quintic fade. Zero at every integer lattice point.
class GradientNoise2D {
 public:
  explicit GradientNoise2D(std::uint64_t seed) {
    std::array<std::uint8_t, 256> base;
    std::iota(base.begin(), base.end(), 0);
    Rng rng(seed);
    rng.Shuffle(base);
    for (int i = 0; i < 512; ++i) perm_[i] = base[i & 255];
  }

  double operator()(double x, double y) const {
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const int xi = static_cast<int>(static_cast<std::int64_t>(fx) & 255);
    const int yi = static_cast<int>(static_cast<std::int64_t>(fy) & 255);
    const double dx = x - fx;
    const double dy = y - fy;
    const double u = Fade(dx);
    const double v = Fade(dy);

    const int aa = perm_[perm_[xi] + yi];
    const int ab = perm_[perm_[xi] + yi + 1];
    const int ba = perm_[perm_[xi + 1] + yi];
    const int bb = perm_[perm_[xi + 1] + yi + 1];

    const double x1 = Lerp(u, Grad(aa, dx, dy), Grad(ba, dx - 1, dy));
    const double x2 = Lerp(u, Grad(ab, dx, dy - 1), Grad(bb, dx - 1, dy - 1));
    return Lerp(v, x1, x2);
  }

 private:
  static double Fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }
  static double Lerp(double t, double a, double b) { return a + t * (b - a); }
  static double Grad(int hash, double x, double y) {
    switch (hash & 7) {
      case 0: return x + y;
      case 1: return -x + y;
      case 2: return x - y;
      case 3: return -x - y;
      case 4: return x;
      case 5: return -x;
      case 6: return y;
      default: return -y;
    }
  }

  std::array<int, 512> perm_{};
};

// Single-channel field in [-1, 1], row-major.
struct ScalarField {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int y, int x) const {
    return values[static_cast<std::size_t>(y) * width + x];
  }
  friend bool operator==(const ScalarField&, const ScalarField&) = default;
};

// Octave sum S(x, y) = sum_n p(x 2^(n-1) / lambda_x, y 2^(n-1) / lambda_y),
// unit gain per octave, mapped through sin(2 pi phi S). x is the column.
inline ScalarField PerlinField(const PerlinParams& params, std::uint64_t seed,
                               int height, int width) {
  const GradientNoise2D noise(seed);
  ScalarField field{height, width,
                    std::vector<double>(static_cast<std::size_t>(height) * width)};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double sum = 0.0;
      double scale = 1.0;
      for (int n = 1; n <= params.octaves; ++n) {
        sum += noise(x * scale / params.wavelength_x,
                     y * scale / params.wavelength_y);
        scale *= 2.0;
      }
      field.values[static_cast<std::size_t>(y) * width + x] =
          std::sin(sum * 2.0 * std::numbers::pi * params.sine_periodicity);
    }
  }
  return field;
}

}  // namespace marktrace

#endif  // MARKTRACE_PERLIN_H_
