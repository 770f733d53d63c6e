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

#ifndef MARKTRACE_AUDIT_H_
#define MARKTRACE_AUDIT_H_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"

namespace marktrace {

inline constexpr double kLossEpsilon = 1e-12;
inline constexpr double kLogitEpsilon = 1e-9;
inline constexpr double kProbSumTolerance = 1e-4;

enum class Membership { kMember, kNonmember, kUnknown };

inline std::string_view MembershipName(Membership m) {
  switch (m) {
    case Membership::kMember: return "member";
    case Membership::kNonmember: return "nonmember";
    case Membership::kUnknown: return "unknown";
  }
  return "unknown";
}

inline absl::StatusOr<Membership> ParseMembership(std::string_view name) {
  if (name == "member") return Membership::kMember;
  if (name == "nonmember") return Membership::kNonmember;
  if (name == "unknown") return Membership::kUnknown;
  return absl::InvalidArgumentError(absl::StrCat("unknown membership '", std::string(name), "'"));
}

// -ln(max(probs[label], 1e-12)).
inline absl::StatusOr<double> CrossEntropyLoss(std::span<const double> probs,
                                               std::size_t label) {
  if (probs.empty()) return absl::InvalidArgumentError("empty probability vector");
  if (label >= probs.size()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "label ", label, " out of range for ", probs.size(), " classes"));
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0) {
      return absl::InvalidArgumentError(
          absl::StrCat("probability entry ", p, " is not in [0, inf)"));
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kProbSumTolerance) {
    return absl::InvalidArgumentError(
        absl::StrCat("probabilities sum to ", sum, ", expected 1"));
  }
  return -std::log(std::max(probs[label], kLossEpsilon));
}

// Top-1 proxy loss: 0 when the prediction is correct, 1 otherwise.
inline double LabelOnlyLoss(std::size_t predicted_label, std::size_t true_label) {
  return predicted_label == true_label ? 0.0 : 1.0;
}

struct UserLossSet {
  std::string user_id;
  std::vector<double> losses;
  Membership ground_truth = Membership::kUnknown;

  double AverageLoss() const {
    return std::accumulate(losses.begin(), losses.end(), 0.0) /
           static_cast<double>(losses.size());
  }
};

inline absl::Status ValidateUserLossSet(const UserLossSet& user) {
  if (user.losses.empty()) {
    return absl::InvalidArgumentError(
        absl::StrCat("user '", user.user_id, "' has no losses"));
  }
  for (double l : user.losses) {
    if (!std::isfinite(l) || l < 0.0) {
      return absl::InvalidArgumentError(
          absl::StrCat("user '", user.user_id, "' has invalid loss ", l));
    }
  }
  return absl::OkStatus();
}

// Nonmember users from the out-world. Users may hold different sample counts.
struct CalibrationSet {
  std::vector<UserLossSet> users;
};

// Order-statistic threshold: sort ascending, return a[floor(alpha * n)], or
// +inf when that index is past the end. Counting values strictly below the
// result therefore never exceeds floor(alpha * n).
inline absl::StatusOr<double> PercentileThreshold(std::vector<double> values,
                                                  double alpha) {
  if (values.empty()) {
    return absl::InvalidArgumentError("cannot derive a threshold from no values");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    return absl::InvalidArgumentError(
        absl::StrCat("alpha must be in [0, 1], got ", alpha));
  }
  std::sort(values.begin(), values.end());
  const double scaled = std::floor(alpha * static_cast<double>(values.size()));
  if (scaled >= static_cast<double>(values.size())) {
    return std::numeric_limits<double>::infinity();
  }
  return values[static_cast<std::size_t>(scaled)];
}

inline absl::StatusOr<double> DeriveThreshold(const CalibrationSet& cal,
                                              double alpha) {
  if (cal.users.empty()) {
    return absl::InvalidArgumentError("calibration set is empty");
  }
  std::vector<double> averages;
  averages.reserve(cal.users.size());
  for (const auto& user : cal.users) {
    if (absl::Status s = ValidateUserLossSet(user); !s.ok()) return s;
    averages.push_back(user.AverageLoss());
  }
  return PercentileThreshold(std::move(averages), alpha);
}

// Member iff the average loss is strictly below c; ties are nonmembers.
inline Membership AuditUser(const UserLossSet& target, double c) {
  return target.AverageLoss() < c ? Membership::kMember : Membership::kNonmember;
}

struct AuditOutcome {
  double alpha = 0.0;
  double threshold_c = 0.0;
  std::map<std::string, Membership> verdicts;
  std::map<std::string, double> avg_losses;
};

inline absl::StatusOr<AuditOutcome> AuditUsers(const CalibrationSet& cal,
                                               std::span<const UserLossSet> targets,
                                               double alpha) {
  absl::StatusOr<double> c = DeriveThreshold(cal, alpha);
  if (!c.ok()) return c.status();
  AuditOutcome outcome;
  outcome.alpha = alpha;
  outcome.threshold_c = *c;
  for (const auto& target : targets) {
    if (absl::Status s = ValidateUserLossSet(target); !s.ok()) return s;
    outcome.verdicts[target.user_id] = AuditUser(target, *c);
    outcome.avg_losses[target.user_id] = target.AverageLoss();
  }
  return outcome;
}

// One sample's loss, the unit of instance-based auditing.
struct SampleLoss {
  std::string sample_id;
  double loss = 0.0;
  Membership ground_truth = Membership::kUnknown;
};

struct InstanceAuditOutcome {
  double alpha = 0.0;
  double threshold_c = 0.0;
  std::vector<Membership> verdicts;  // parallel to the target samples
};

// Per-sample variant: the same percentile rule over individual calibration
// losses, applied to each target sample.
inline absl::StatusOr<InstanceAuditOutcome> InstanceAudit(
    std::span<const SampleLoss> calibration, std::span<const SampleLoss> targets,
    double alpha) {
  if (targets.empty()) return absl::InvalidArgumentError("no target samples");
  std::vector<double> cal_losses;
  cal_losses.reserve(calibration.size());
  for (const auto& s : calibration) cal_losses.push_back(s.loss);
  absl::StatusOr<double> c = PercentileThreshold(std::move(cal_losses), alpha);
  if (!c.ok()) return c.status();
  InstanceAuditOutcome outcome;
  outcome.alpha = alpha;
  outcome.threshold_c = *c;
  outcome.verdicts.reserve(targets.size());
  for (const auto& t : targets) {
    outcome.verdicts.push_back(t.loss < *c ? Membership::kMember
                                           : Membership::kNonmember);
  }
  return outcome;
}

// A point on the ROC curve for the rule "member iff score >= threshold".
struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocMetrics {
  double auc = 0.0;
  double fpr_at_full_tpr = 0.0;
  // Sorted by decreasing threshold, from +inf down to -inf.
  std::vector<RocPoint> curve;

  // Largest TPR over thresholds whose FPR does not exceed max_fpr.
  double TprAtFpr(double max_fpr) const {
    double best = 0.0;
    for (const auto& p : curve) {
      if (p.fpr <= max_fpr) best = std::max(best, p.tpr);
    }
    return best;
  }
};

// Scores follow "higher is more member-like"; for losses pass -average_loss.
inline absl::StatusOr<RocMetrics> ComputeRocMetrics(std::span<const double> members,
                                                    std::span<const double> nonmembers) {
  if (members.empty() || nonmembers.empty()) {
    return absl::InvalidArgumentError(
        "ROC metrics need at least one member and one nonmember score");
  }
  std::vector<double> pos(members.begin(), members.end());
  std::vector<double> neg(nonmembers.begin(), nonmembers.end());
  std::sort(pos.begin(), pos.end(), std::greater<>());
  std::sort(neg.begin(), neg.end(), std::greater<>());
  const double np = static_cast<double>(pos.size());
  const double nn = static_cast<double>(neg.size());

  RocMetrics m;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  m.curve.push_back({kInf, 0.0, 0.0});
  std::size_t i = 0, j = 0;
  double auc_sum = 0.0;  // pairs won plus half of ties, in pair units
  while (i < pos.size() || j < neg.size()) {
    double t;
    if (j >= neg.size() || (i < pos.size() && pos[i] >= neg[j])) {
      t = pos[i];
    } else {
      t = neg[j];
    }
    std::size_t tp_here = 0, fp_here = 0;
    while (i < pos.size() && pos[i] == t) ++i, ++tp_here;
    while (j < neg.size() && neg[j] == t) ++j, ++fp_here;
    // Members at this score beat every nonmember strictly below it.
    const std::size_t neg_below = neg.size() - j;
    auc_sum += static_cast<double>(tp_here) *
               (static_cast<double>(neg_below) + 0.5 * static_cast<double>(fp_here));
    m.curve.push_back({t, static_cast<double>(j) / nn, static_cast<double>(i) / np});
  }
  m.curve.push_back({-kInf, 1.0, 1.0});
  m.auc = auc_sum / (np * nn);

  const double weakest_member = pos.back();
  const auto at_or_above = std::count_if(
      neg.begin(), neg.end(), [&](double s) { return s >= weakest_member; });
  m.fpr_at_full_tpr = static_cast<double>(at_or_above) / nn;
  return m;
}

// Losses are mapped to p = exp(-loss) clamped to [1e-9, 1 - 1e-9], then to
// ln(p / (1 - p)). 1 - p is evaluated as -expm1(-loss) so that losses near
// zero do not lose precision to cancellation.
inline double LogitTransform(double loss) {
  double p = std::exp(-loss);
  double q = -std::expm1(-loss);
  if (q < kLogitEpsilon) {
    p = 1.0 - kLogitEpsilon;
    q = kLogitEpsilon;
  } else if (p < kLogitEpsilon) {
    p = kLogitEpsilon;
    q = 1.0 - kLogitEpsilon;
  }
  return std::log(p) - std::log(q);
}

}  // namespace marktrace

#endif  // MARKTRACE_AUDIT_H_
