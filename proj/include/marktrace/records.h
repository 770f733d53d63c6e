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

#ifndef MARKTRACE_RECORDS_H_
#define MARKTRACE_RECORDS_H_

#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "marktrace/audit.h"

namespace marktrace {

enum class Split { kAuditTarget, kCalibration };

inline std::string_view SplitName(Split s) {
  return s == Split::kAuditTarget ? "audit_target" : "calibration";
}

enum class LossMode { kCrossEntropy, kLabelOnly };

inline std::string_view LossModeName(LossMode m) {
  return m == LossMode::kCrossEntropy ? "cross-entropy" : "label-only";
}

inline absl::StatusOr<LossMode> ParseLossMode(std::string_view name) {
  if (name == "cross-entropy") return LossMode::kCrossEntropy;
  if (name == "label-only") return LossMode::kLabelOnly;
  return absl::InvalidArgumentError(absl::StrCat("unknown loss mode '", std::string(name), "'"));
}

// One line of the loss-record JSONL wire format. Exactly one of `probs` and
// `predicted_label` is present.
struct LossRecord {
  std::string user_id;
  std::string sample_id;
  int true_label = 0;
  std::optional<std::vector<double>> probs;
  std::optional<int> predicted_label;
  Split split = Split::kAuditTarget;
  Membership ground_truth = Membership::kUnknown;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

inline nlohmann::json LossRecordToJson(const LossRecord& r) {
  nlohmann::json j;
  j["user_id"] = r.user_id;
  j["sample_id"] = r.sample_id;
  j["true_label"] = r.true_label;
  if (r.probs) j["probs"] = *r.probs;
  if (r.predicted_label) j["predicted_label"] = *r.predicted_label;
  j["split"] = std::string(SplitName(r.split));
  j["ground_truth"] = std::string(MembershipName(r.ground_truth));
  return j;
}

inline absl::StatusOr<LossRecord> LossRecordFromJson(const nlohmann::json& j) {
  if (!j.is_object()) return absl::InvalidArgumentError("record is not an object");
  LossRecord r;
  try {
    r.user_id = j.at("user_id").get<std::string>();
    r.sample_id = j.at("sample_id").get<std::string>();
    r.true_label = j.at("true_label").get<int>();
    if (j.contains("probs") && !j.at("probs").is_null()) {
      r.probs = j.at("probs").get<std::vector<double>>();
    }
    if (j.contains("predicted_label") && !j.at("predicted_label").is_null()) {
      r.predicted_label = j.at("predicted_label").get<int>();
    }
    const std::string split = j.at("split").get<std::string>();
    if (split == "audit_target") {
      r.split = Split::kAuditTarget;
    } else if (split == "calibration") {
      r.split = Split::kCalibration;
    } else {
      return absl::InvalidArgumentError(absl::StrCat("unknown split '", split, "'"));
    }
    absl::StatusOr<Membership> gt =
        ParseMembership(j.at("ground_truth").get<std::string>());
    if (!gt.ok()) return gt.status();
    r.ground_truth = *gt;
  } catch (const nlohmann::json::exception& e) {
    return absl::InvalidArgumentError(e.what());
  }
  if (r.probs.has_value() == r.predicted_label.has_value()) {
    return absl::InvalidArgumentError(
        "record must carry exactly one of 'probs' and 'predicted_label'");
  }
  if (r.true_label < 0 || (r.predicted_label && *r.predicted_label < 0)) {
    return absl::InvalidArgumentError("labels must be non-negative");
  }
  return r;
}

// Parses JSONL; blank lines are skipped. Errors name the 1-based line.
inline absl::StatusOr<std::vector<LossRecord>> ReadLossRecords(std::istream& in) {
  std::vector<LossRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      return absl::InvalidArgumentError(
          absl::StrCat("line ", line_no, ": invalid JSON"));
    }
    absl::StatusOr<LossRecord> r = LossRecordFromJson(j);
    if (!r.ok()) {
      return absl::InvalidArgumentError(
          absl::StrCat("line ", line_no, ": ", r.status().message()));
    }
    records.push_back(*std::move(r));
  }
  return records;
}

inline void WriteLossRecords(std::ostream& out, std::span<const LossRecord> records) {
  for (const auto& r : records) out << LossRecordToJson(r).dump() << '\n';
}

// Loss of one record under the given mode. A record whose payload does not
// match the mode is rejected rather than silently converted.
inline absl::StatusOr<double> RecordLoss(const LossRecord& r, LossMode mode) {
  if (mode == LossMode::kLabelOnly) {
    if (r.probs || !r.predicted_label) {
      return absl::InvalidArgumentError(absl::StrCat(
          "sample '", r.sample_id, "': label-only mode needs predicted_label "
          "and no probs"));
    }
    return LabelOnlyLoss(static_cast<std::size_t>(*r.predicted_label),
                         static_cast<std::size_t>(r.true_label));
  }
  if (!r.probs) {
    return absl::InvalidArgumentError(absl::StrCat(
        "sample '", r.sample_id, "': cross-entropy mode needs probs"));
  }
  return CrossEntropyLoss(*r.probs, static_cast<std::size_t>(r.true_label));
}

// Records grouped into users (per split, in first-appearance order) and into
// flat per-sample lists.
struct GroupedLosses {
  CalibrationSet calibration;
  std::vector<UserLossSet> targets;
  std::vector<SampleLoss> calibration_samples;
  std::vector<SampleLoss> target_samples;
};

inline absl::StatusOr<GroupedLosses> GroupRecords(std::span<const LossRecord> records,
                                                  LossMode mode) {
  GroupedLosses g;
  std::map<std::string, std::size_t> cal_index, target_index;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const LossRecord& r = records[i];
    absl::StatusOr<double> loss = RecordLoss(r, mode);
    if (!loss.ok()) {
      return absl::InvalidArgumentError(
          absl::StrCat("record ", i + 1, ": ", loss.status().message()));
    }
    const bool is_cal = r.split == Split::kCalibration;
    auto& index = is_cal ? cal_index : target_index;
    auto& users = is_cal ? g.calibration.users : g.targets;
    auto [it, inserted] = index.try_emplace(r.user_id, users.size());
    if (inserted) users.push_back({r.user_id, {}, r.ground_truth});
    UserLossSet& user = users[it->second];
    if (user.ground_truth != r.ground_truth) {
      return absl::InvalidArgumentError(absl::StrCat(
          "record ", i + 1, ": user '", r.user_id, "' has inconsistent ground truth"));
    }
    user.losses.push_back(*loss);
    (is_cal ? g.calibration_samples : g.target_samples)
        .push_back({r.sample_id, *loss, r.ground_truth});
  }
  return g;
}

}  // namespace marktrace

#endif  // MARKTRACE_RECORDS_H_
