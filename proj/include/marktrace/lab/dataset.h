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

#ifndef MARKTRACE_LAB_DATASET_H_
#define MARKTRACE_LAB_DATASET_H_

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "marktrace/image.h"
#include "marktrace/rng.h"

namespace marktrace::lab {

struct SyntheticConfig {
  int num_classes = 10;
  int per_class = 100;
  int height = 32;
  int width = 32;
  std::uint64_t seed = 0;
  // Per-pixel Gaussian noise added to the class prototype.
  double pixel_noise = 0.05;
  // Side of the coarse random grid that is upsampled into a prototype.
  int prototype_grid = 4;
  // Prototype intensities span 0.5 +/- contrast / 2.
  double prototype_contrast = 0.05;
};

struct LabeledImage {
  Image image;
  int label = 0;
  std::optional<std::string> owner;
};

struct SyntheticDataset {
  int num_classes = 0;
  std::vector<Image> prototypes;
  // Grouped by class: per_class samples of class 0, then class 1, ...
  std::vector<LabeledImage> samples;
  std::uint64_t seed = 0;
};

namespace dataset_internal {

// Bilinear upsampling of a grid x grid x 3 array of uniform draws.
inline Image LowFrequencyImage(Rng& rng, int grid, int height, int width,
                               double contrast) {
  std::vector<double> coarse(static_cast<std::size_t>(grid) * grid * 3);
  for (double& v : coarse) v = 0.5 + contrast * (rng.Uniform() - 0.5);
  auto at = [&](int gy, int gx, int c) {
    return coarse[(static_cast<std::size_t>(gy) * grid + gx) * 3 + c];
  };
  Image img(height, width);
  for (int y = 0; y < height; ++y) {
    const double fy = (y + 0.5) / height * (grid - 1);
    const int y0 = std::min(static_cast<int>(fy), grid - 2);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = (x + 0.5) / width * (grid - 1);
      const int x0 = std::min(static_cast<int>(fx), grid - 2);
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = at(y0, x0, c) * (1 - tx) + at(y0, x0 + 1, c) * tx;
        const double bottom = at(y0 + 1, x0, c) * (1 - tx) + at(y0 + 1, x0 + 1, c) * tx;
        img.at(y, x, c) = top * (1 - ty) + bottom * ty;
      }
    }
  }
  return img;
}

}  // namespace dataset_internal

// Class prototypes are blurred random images; each sample is its prototype
// plus N(0, pixel_noise^2) per entry, clamped to [0, 1].
inline absl::StatusOr<SyntheticDataset> GenerateSynthetic(const SyntheticConfig& cfg) {
  if (cfg.num_classes < 2) {
    return absl::InvalidArgumentError(
        absl::StrCat("need at least 2 classes, got ", cfg.num_classes));
  }
  if (cfg.per_class < 0 || cfg.height <= 0 || cfg.width <= 0 ||
      cfg.prototype_grid < 2 || cfg.pixel_noise < 0) {
    return absl::InvalidArgumentError("invalid synthetic dataset configuration");
  }
  SyntheticDataset ds;
  ds.num_classes = cfg.num_classes;
  ds.seed = cfg.seed;
  Rng proto_rng(DeriveSeed(cfg.seed, "prototypes"));
  while (static_cast<int>(ds.prototypes.size()) < cfg.num_classes) {
    Image proto = dataset_internal::LowFrequencyImage(
        proto_rng, cfg.prototype_grid, cfg.height, cfg.width, cfg.prototype_contrast);
    if (std::find(ds.prototypes.begin(), ds.prototypes.end(), proto) ==
        ds.prototypes.end()) {
      ds.prototypes.push_back(std::move(proto));
    }
  }
  Rng noise_rng(DeriveSeed(cfg.seed, "samples"));
  ds.samples.reserve(static_cast<std::size_t>(cfg.num_classes) * cfg.per_class);
  for (int label = 0; label < cfg.num_classes; ++label) {
    for (int i = 0; i < cfg.per_class; ++i) {
      Image img = ds.prototypes[label];
      if (cfg.pixel_noise > 0) {
        for (double& v : img.data) {
          v = std::clamp(v + noise_rng.Normal(0.0, cfg.pixel_noise), 0.0, 1.0);
        }
      }
      ds.samples.push_back({std::move(img), label, std::nullopt});
    }
  }
  return ds;
}

}  // namespace marktrace::lab

#endif  // MARKTRACE_LAB_DATASET_H_
