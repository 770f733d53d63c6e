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

#ifndef MARKTRACE_REPORT_H_
#define MARKTRACE_REPORT_H_

#include <array>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "marktrace/audit.h"
#include "marktrace/records.h"

namespace marktrace {

enum class AuditMode { kSet, kInstance };

inline std::string_view AuditModeName(AuditMode m) {
  return m == AuditMode::kSet ? "set" : "instance";
}

inline absl::StatusOr<AuditMode> ParseAuditMode(std::string_view name) {
  if (name == "set") return AuditMode::kSet;
  if (name == "instance") return AuditMode::kInstance;
  return absl::InvalidArgumentError(absl::StrCat("unknown audit mode '", std::string(name), "'"));
}

struct FprLevel {
  double fpr;
  std::string_view key;
};

// FPR levels reported under "tpr_at_fpr".
inline constexpr std::array<FprLevel, 4> kReportedFprLevels = {{
    {0.0, "0.0"}, {0.001, "0.001"}, {0.01, "0.01"}, {0.1, "0.1"}}};

// JSON has no infinity; an unbounded threshold is written as "inf".
inline nlohmann::json ThresholdToJson(double c) {
  if (std::isinf(c)) return c > 0 ? "inf" : "-inf";
  return c;
}

inline nlohmann::json RocMetricsToJson(const RocMetrics& m) {
  nlohmann::json tpr;
  for (const auto& level : kReportedFprLevels) {
    tpr[std::string(level.key)] = m.TprAtFpr(level.fpr);
  }
  return {{"auc", m.auc}, {"fpr_at_full_tpr", m.fpr_at_full_tpr}, {"tpr_at_fpr", tpr}};
}

// ROC inputs from ground truth; scores are negated losses.
struct LabeledScores {
  std::vector<double> members;
  std::vector<double> nonmembers;

  void Add(Membership gt, double loss) {
    if (gt == Membership::kMember) members.push_back(-loss);
    if (gt == Membership::kNonmember) nonmembers.push_back(-loss);
  }
  std::optional<RocMetrics> Metrics() const {
    if (members.empty() || nonmembers.empty()) return std::nullopt;
    absl::StatusOr<RocMetrics> m = ComputeRocMetrics(members, nonmembers);
    if (!m.ok()) return std::nullopt;
    return *std::move(m);
  }
};

inline LabeledScores SetScores(const GroupedLosses& g) {
  LabeledScores s;
  for (const auto& u : g.calibration.users) s.Add(u.ground_truth, u.AverageLoss());
  for (const auto& u : g.targets) s.Add(u.ground_truth, u.AverageLoss());
  return s;
}

inline LabeledScores InstanceScores(const GroupedLosses& g) {
  LabeledScores s;
  for (const auto& x : g.calibration_samples) s.Add(x.ground_truth, x.loss);
  for (const auto& x : g.target_samples) s.Add(x.ground_truth, x.loss);
  return s;
}

// Runs the audit over grouped records and renders the JSON report. Metrics
// are included whenever both members and nonmembers carry ground truth.
inline absl::StatusOr<nlohmann::json> BuildAuditReport(const GroupedLosses& g,
                                                       AuditMode mode,
                                                       LossMode loss_mode,
                                                       double alpha) {
  if (g.calibration.users.empty()) {
    return absl::FailedPreconditionError("no calibration records");
  }
  nlohmann::json report;
  report["mode"] = std::string(AuditModeName(mode));
  report["loss"] = std::string(LossModeName(loss_mode));
  report["alpha"] = alpha;
  report["num_calibration_users"] = g.calibration.users.size();
  report["num_target_users"] = g.targets.size();

  std::optional<RocMetrics> metrics;
  if (mode == AuditMode::kSet) {
    absl::StatusOr<AuditOutcome> outcome = AuditUsers(g.calibration, g.targets, alpha);
    if (!outcome.ok()) return outcome.status();
    report["threshold_c"] = ThresholdToJson(outcome->threshold_c);
    nlohmann::json verdicts = nlohmann::json::object();
    nlohmann::json averages = nlohmann::json::object();
    for (const auto& [user, verdict] : outcome->verdicts) {
      verdicts[user] = std::string(MembershipName(verdict));
      averages[user] = outcome->avg_losses.at(user);
    }
    report["verdicts"] = std::move(verdicts);
    report["avg_losses"] = std::move(averages);
    metrics = SetScores(g).Metrics();
  } else {
    absl::StatusOr<InstanceAuditOutcome> outcome =
        InstanceAudit(g.calibration_samples, g.target_samples, alpha);
    if (!outcome.ok()) return outcome.status();
    report["threshold_c"] = ThresholdToJson(outcome->threshold_c);
    nlohmann::json verdicts = nlohmann::json::object();
    for (std::size_t i = 0; i < g.target_samples.size(); ++i) {
      verdicts[g.target_samples[i].sample_id] =
          std::string(MembershipName(outcome->verdicts[i]));
    }
    report["verdicts"] = std::move(verdicts);
    metrics = InstanceScores(g).Metrics();
  }
  if (metrics) report["metrics"] = RocMetricsToJson(*metrics);
  return report;
}

// CSV of per-user average losses and their logit transform.
inline void WriteLossHistogramCsv(std::ostream& out, const GroupedLosses& g) {
  out << "user_id,split,ground_truth,avg_loss,logit\n";
  auto emit = [&](const UserLossSet& u, Split split) {
    const double avg = u.AverageLoss();
    out << u.user_id << ',' << SplitName(split) << ','
        << MembershipName(u.ground_truth) << ',' << nlohmann::json(avg).dump()
        << ',' << nlohmann::json(LogitTransform(avg)).dump() << '\n';
  };
  for (const auto& u : g.targets) emit(u, Split::kAuditTarget);
  for (const auto& u : g.calibration.users) emit(u, Split::kCalibration);
}

}  // namespace marktrace

#endif  // MARKTRACE_REPORT_H_
