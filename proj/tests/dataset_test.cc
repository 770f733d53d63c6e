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

#include "marktrace/lab/dataset.h"

#include <cmath>

#include "gtest/gtest.h"

namespace marktrace::lab {
namespace {

SyntheticConfig SmallConfig() {
  SyntheticConfig cfg;
  cfg.num_classes = 4;
  cfg.per_class = 6;
  cfg.height = 16;
  cfg.width = 16;
  cfg.seed = 99;
  return cfg;
}

TEST(DatasetTest, SameSeedSameDataset) {
  auto a = GenerateSynthetic(SmallConfig());
  auto b = GenerateSynthetic(SmallConfig());
  ASSERT_TRUE(a.ok() && b.ok());
  ASSERT_EQ(a->samples.size(), b->samples.size());
  for (std::size_t i = 0; i < a->samples.size(); ++i) {
    EXPECT_EQ(a->samples[i].image, b->samples[i].image);
    EXPECT_EQ(a->samples[i].label, b->samples[i].label);
  }
  SyntheticConfig other = SmallConfig();
  other.seed = 100;
  EXPECT_NE(GenerateSynthetic(other)->samples[0].image, a->samples[0].image);
}

TEST(DatasetTest, ZeroNoiseGivesIdenticalClassSamples) {
  SyntheticConfig cfg = SmallConfig();
  cfg.num_classes = 2;
  cfg.pixel_noise = 0.0;
  auto ds = GenerateSynthetic(cfg);
  ASSERT_TRUE(ds.ok());
  for (const auto& s : ds->samples) EXPECT_EQ(s.image, ds->prototypes[s.label]);
}

TEST(DatasetTest, CountsLabelsAndRanges) {
  SyntheticConfig cfg;
  cfg.seed = 1;
  auto ds = GenerateSynthetic(cfg);
  ASSERT_TRUE(ds.ok());
  EXPECT_EQ(ds->samples.size(), 1000u);
  std::vector<int> per_label(10, 0);
  for (const auto& s : ds->samples) {
    ASSERT_GE(s.label, 0);
    ASSERT_LT(s.label, 10);
    ++per_label[s.label];
    EXPECT_FALSE(s.owner.has_value());
    for (double v : s.image.data) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
  for (int c : per_label) EXPECT_EQ(c, 100);
}

TEST(DatasetTest, PrototypesDistinctAndWithinContrast) {
  SyntheticConfig cfg = SmallConfig();
  cfg.num_classes = 10;
  cfg.prototype_contrast = 0.2;
  auto ds = GenerateSynthetic(cfg);
  ASSERT_TRUE(ds.ok());
  for (std::size_t i = 0; i < ds->prototypes.size(); ++i) {
    for (double v : ds->prototypes[i].data) {
      EXPECT_GE(v, 0.4 - 1e-12);
      EXPECT_LE(v, 0.6 + 1e-12);
    }
    for (std::size_t j = i + 1; j < ds->prototypes.size(); ++j) {
      EXPECT_NE(ds->prototypes[i], ds->prototypes[j]);
    }
  }
}

TEST(DatasetTest, PixelNoiseHasConfiguredScale) {
  SyntheticConfig cfg = SmallConfig();
  cfg.per_class = 20;
  auto ds = GenerateSynthetic(cfg);
  ASSERT_TRUE(ds.ok());
  double sq = 0.0;
  long n = 0;
  for (const auto& s : ds->samples) {
    for (std::size_t i = 0; i < s.image.size(); ++i) {
      const double d = s.image.data[i] - ds->prototypes[s.label].data[i];
      sq += d * d;
      ++n;
    }
  }
  EXPECT_NEAR(std::sqrt(sq / n), cfg.pixel_noise, 0.002);
}

TEST(DatasetTest, RejectsSingleClass) {
  SyntheticConfig cfg = SmallConfig();
  cfg.num_classes = 1;
  EXPECT_EQ(GenerateSynthetic(cfg).status().code(), absl::StatusCode::kInvalidArgument);
}

}  // namespace
}  // namespace marktrace::lab
