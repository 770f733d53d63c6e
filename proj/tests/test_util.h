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

#ifndef MARKTRACE_TESTS_TEST_UTIL_H_
#define MARKTRACE_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <unistd.h>
#include <vector>

#include "marktrace/image.h"
#include "marktrace/rng.h"

namespace marktrace::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("marktrace_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Image RandomImage(Rng& rng, int height, int width) {
  Image img(height, width);
  for (double& v : img.data) v = rng.Uniform();
  return img;
}

// Exhaustive ROC oracle: evaluates the rule "member iff score >= t" at every
// distinct score and at +/-inf, independently of the sweep implementation.
struct BruteForceRoc {
  double auc = 0.0;
  double fpr_at_full_tpr = 0.0;
  std::vector<std::pair<double, double>> points;  // (fpr, tpr)

  double TprAtFpr(double f) const {
    double best = 0.0;
    for (const auto& [fpr, tpr] : points) {
      if (fpr <= f) best = std::max(best, tpr);
    }
    return best;
  }
};

inline BruteForceRoc BruteForceRocMetrics(const std::vector<double>& members,
                                          const std::vector<double>& nonmembers) {
  BruteForceRoc out;
  std::set<double> thresholds(members.begin(), members.end());
  thresholds.insert(nonmembers.begin(), nonmembers.end());
  thresholds.insert(std::numeric_limits<double>::infinity());
  thresholds.insert(-std::numeric_limits<double>::infinity());
  double best_full_tpr_fpr = 1.0;
  for (double t : thresholds) {
    const auto tp = std::count_if(members.begin(), members.end(),
                                  [&](double s) { return s >= t; });
    const auto fp = std::count_if(nonmembers.begin(), nonmembers.end(),
                                  [&](double s) { return s >= t; });
    const double tpr = static_cast<double>(tp) / static_cast<double>(members.size());
    const double fpr = static_cast<double>(fp) / static_cast<double>(nonmembers.size());
    out.points.emplace_back(fpr, tpr);
    if (tp == static_cast<long>(members.size())) {
      best_full_tpr_fpr = std::min(best_full_tpr_fpr, fpr);
    }
  }
  out.fpr_at_full_tpr = best_full_tpr_fpr;
  double wins = 0.0;
  for (double m : members) {
    for (double n : nonmembers) {
      if (m > n) wins += 1.0;
      else if (m == n) wins += 0.5;
    }
  }
  out.auc = wins / (static_cast<double>(members.size()) *
                    static_cast<double>(nonmembers.size()));
  return out;
}

}  // namespace marktrace::testing

#endif  // MARKTRACE_TESTS_TEST_UTIL_H_
