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

#ifndef MARKTRACE_STRIPES_H_
#define MARKTRACE_STRIPES_H_

#include <algorithm>
#include <array>
#include <cstdint>
#include <string_view>
#include <utility>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "marktrace/image.h"
#include "marktrace/rng.h"

namespace marktrace {

inline constexpr int kNumStripes = 16;
inline constexpr int kPaletteSize = 11;
inline constexpr int kPaletteVersion = 1;

struct PaletteColor {
  std::string_view name;
  std::uint8_t r, g, b;
};

// Version 1 palette. Changing any entry requires bumping kPaletteVersion.
inline constexpr std::array<PaletteColor, kPaletteSize> kPalette = {{
    {"red", 255, 0, 0},
    {"green", 0, 255, 0},
    {"blue", 0, 0, 255},
    {"yellow", 255, 255, 0},
    {"cyan", 0, 255, 255},
    {"magenta", 255, 0, 255},
    {"orange", 255, 165, 0},
    {"purple", 128, 0, 128},
    {"white", 255, 255, 255},
    {"black", 0, 0, 0},
    {"gray", 128, 128, 128},
}};

// Sixteen vertical stripes, each an index into kPalette.
struct StripePattern {
  std::array<std::uint8_t, kNumStripes> colors{};

  friend bool operator==(const StripePattern&, const StripePattern&) = default;
  friend auto operator<=>(const StripePattern&, const StripePattern&) = default;
};

inline absl::Status ValidateStripePattern(const StripePattern& pattern) {
  for (std::uint8_t index : pattern.colors) {
    if (index >= kPaletteSize) {
      return absl::InvalidArgumentError(
          absl::StrCat("stripe color index ", index, " outside palette"));
    }
  }
  return absl::OkStatus();
}

inline StripePattern RandomStripePattern(std::uint64_t seed) {
  Rng rng(seed);
  StripePattern pattern;
  for (auto& index : pattern.colors) {
    index = static_cast<std::uint8_t>(rng.UniformInt(kPaletteSize));
  }
  return pattern;
}

// Renders the pattern as equal-width vertical bands of floor(width / 16)
// columns; the last band also takes the width % 16 leftover columns.
inline absl::StatusOr<Image> RenderStripes(const StripePattern& pattern,
                                           int height, int width) {
  if (width < kNumStripes) {
    return absl::InvalidArgumentError(absl::StrCat(
        "stripe feature needs width >= ", kNumStripes, ", got ", width));
  }
  if (height <= 0) {
    return absl::InvalidArgumentError(absl::StrCat("bad height ", height));
  }
  if (absl::Status s = ValidateStripePattern(pattern); !s.ok()) return s;
  const int band = width / kNumStripes;
  Image img(height, width);
  for (int x = 0; x < width; ++x) {
    const int stripe = std::min(x / band, kNumStripes - 1);
    const PaletteColor& color = kPalette[pattern.colors[stripe]];
    for (int y = 0; y < height; ++y) {
      img.at(y, x, 0) = color.r / 255.0;
      img.at(y, x, 1) = color.g / 255.0;
      img.at(y, x, 2) = color.b / 255.0;
    }
  }
  return img;
}

inline absl::StatusOr<std::pair<StripePattern, Image>> GenerateStripeFeature(
    std::uint64_t seed, int height, int width) {
  StripePattern pattern = RandomStripePattern(seed);
  absl::StatusOr<Image> img = RenderStripes(pattern, height, width);
  if (!img.ok()) return img.status();
  return std::make_pair(pattern, *std::move(img));
}

}  // namespace marktrace

#endif  // MARKTRACE_STRIPES_H_
