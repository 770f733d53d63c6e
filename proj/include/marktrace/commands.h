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

#ifndef MARKTRACE_COMMANDS_H_
#define MARKTRACE_COMMANDS_H_

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "marktrace/image.h"
#include "marktrace/lab/scenario.h"
#include "marktrace/marking.h"
#include "marktrace/records.h"
#include "marktrace/report.h"
#include "marktrace/stripes.h"

// Implementations of the CLI subcommands. Each takes fully-resolved options,
// writes machine outputs to files, a short summary to `log`, and the resolved
// options next to its outputs.
namespace marktrace::commands {

namespace fs = std::filesystem;

// 0 success, 1 runtime or I/O failure, 2 usage or validation failure.
inline int ExitCodeFor(const absl::Status& status) {
  if (status.ok()) return 0;
  switch (status.code()) {
    case absl::StatusCode::kInvalidArgument:
    case absl::StatusCode::kFailedPrecondition:
    case absl::StatusCode::kOutOfRange:
      return 2;
    default:
      return 1;
  }
}

inline absl::Status WriteJsonFile(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) return absl::UnavailableError(absl::StrCat("cannot write ", path.string()));
  return absl::OkStatus();
}

inline absl::StatusOr<nlohmann::json> ReadJsonFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return absl::NotFoundError(absl::StrCat("cannot read ", path.string()));
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    return absl::InvalidArgumentError(absl::StrCat(path.string(), ": invalid JSON"));
  }
  return j;
}

// Resolved configuration for a file output lives at "<file>.config.json".
inline fs::path ConfigPathFor(const fs::path& output) {
  return fs::path(output.string() + ".config.json");
}

// --- gen-ood ----------------------------------------------------------------

struct GenOodOptions {
  std::uint64_t seed = 0;
  int height = 32;
  int width = 32;
  fs::path out;
  // Defaults to the output path with a .json extension.
  std::optional<fs::path> pattern_out;

  nlohmann::json ToJson() const {
    return {{"command", "gen-ood"},
            {"seed", seed},
            {"height", height},
            {"width", width},
            {"out", out.string()},
            {"pattern_out", PatternPath().string()}};
  }
  fs::path PatternPath() const {
    return pattern_out ? *pattern_out : fs::path(out).replace_extension(".json");
  }
};

inline absl::Status GenOod(const GenOodOptions& opts, std::ostream& log) {
  if (opts.out.empty()) return absl::InvalidArgumentError("--out is required");
  absl::StatusOr<std::pair<StripePattern, Image>> feature =
      GenerateStripeFeature(opts.seed, opts.height, opts.width);
  if (!feature.ok()) return feature.status();
  if (absl::Status s = SaveImage(feature->second, opts.out); !s.ok()) return s;

  nlohmann::json palette = nlohmann::json::array();
  for (const auto& c : kPalette) {
    palette.push_back({{"name", std::string(c.name)}, {"rgb", {c.r, c.g, c.b}}});
  }
  nlohmann::json record = {{"palette_version", kPaletteVersion},
                           {"palette", palette},
                           {"seed", opts.seed},
                           {"height", opts.height},
                           {"width", opts.width},
                           {"orientation", "vertical"},
                           {"stripe", StripePatternToJson(feature->first)}};
  if (absl::Status s = WriteJsonFile(opts.PatternPath(), record); !s.ok()) return s;
  if (absl::Status s = WriteJsonFile(ConfigPathFor(opts.out), opts.ToJson()); !s.ok()) {
    return s;
  }
  log << "wrote " << opts.out.string() << " (" << opts.height << "x" << opts.width
      << ", pattern " << StripePatternToJson(feature->first).dump() << ")\n";
  return absl::OkStatus();
}

// --- mark -------------------------------------------------------------------

struct MarkOptions {
  fs::path in_dir;
  fs::path out_dir;
  std::optional<fs::path> spec;
  Ablation ablation = Ablation::kFull;
  int threads = 1;

  nlohmann::json ToJson() const {
    return {{"command", "mark"},
            {"in_dir", in_dir.string()},
            {"out_dir", out_dir.string()},
            {"spec", spec ? nlohmann::json(spec->string()) : nlohmann::json()},
            {"ablation", std::string(AblationName(ablation))},
            {"threads", threads}};
  }
};

inline bool IsImageFile(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".ppm";
}

// Marks every PNG/PPM in in_dir (sorted by file name) and writes
// out_dir/<stem>.png plus out_dir/manifest.json. Image ids are file stems.
inline absl::Status MarkDirectory(const MarkOptions& opts, std::ostream& log) {
  if (opts.in_dir.empty() || opts.out_dir.empty()) {
    return absl::InvalidArgumentError("--in-dir and --out-dir are required");
  }
  if (opts.threads < 1) return absl::InvalidArgumentError("--threads must be >= 1");
  std::error_code ec;
  if (!fs::is_directory(opts.in_dir, ec)) {
    return absl::NotFoundError(absl::StrCat("input directory ", opts.in_dir.string(),
                                            " does not exist"));
  }
  MarkSpec spec;
  if (opts.spec) {
    absl::StatusOr<nlohmann::json> j = ReadJsonFile(*opts.spec);
    if (!j.ok()) return j.status();
    // A manifest written by an earlier run nests the spec under "spec".
    const nlohmann::json& body = j->contains("spec") ? j->at("spec") : *j;
    absl::StatusOr<MarkSpec> parsed = MarkSpecFromJson(body);
    if (!parsed.ok()) return parsed.status();
    spec = *parsed;
  }
  spec = ApplyAblation(spec, opts.ablation);
  if (spec.blends() && !spec.stripe && !spec.stripe_seed && !spec.ood_image) {
    spec.stripe_seed = DeriveSeed(spec.master_seed, "stripe");
  }
  absl::StatusOr<Marker> marker = Marker::Create(spec);
  if (!marker.ok()) return marker.status();

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(opts.in_dir, ec)) {
    if (entry.is_regular_file() && IsImageFile(entry.path())) files.push_back(entry.path());
  }
  if (ec) return absl::UnavailableError(absl::StrCat("cannot list ", opts.in_dir.string()));
  std::sort(files.begin(), files.end());
  std::vector<std::string> ids;
  std::vector<Image> images;
  std::set<std::string> seen;
  for (const auto& f : files) {
    std::string id = f.stem().string();
    if (!seen.insert(id).second) {
      return absl::InvalidArgumentError(
          absl::StrCat("two input files share the image id '", id, "'"));
    }
    absl::StatusOr<Image> img = LoadImage(f);
    if (!img.ok()) return img.status();
    ids.push_back(std::move(id));
    images.push_back(*std::move(img));
  }
  absl::StatusOr<std::vector<MarkResult>> results =
      marker->MarkBatch(images, ids, opts.threads);
  if (!results.ok()) return results.status();

  fs::create_directories(opts.out_dir, ec);
  if (ec) return absl::UnavailableError(absl::StrCat("cannot create ", opts.out_dir.string()));
  std::vector<ImageMarkRecord> records;
  for (const auto& r : *results) {
    if (absl::Status s = SaveImage(r.image, opts.out_dir / (r.record.image_id + ".png"));
        !s.ok()) {
      return s;
    }
    records.push_back(r.record);
  }
  nlohmann::json manifest = MarkManifestToJson(marker->spec(), records);
  manifest["ablation"] = std::string(AblationName(opts.ablation));
  if (absl::Status s = WriteJsonFile(opts.out_dir / "manifest.json", manifest); !s.ok()) {
    return s;
  }
  if (absl::Status s = WriteJsonFile(opts.out_dir / "run_config.json", opts.ToJson());
      !s.ok()) {
    return s;
  }
  log << "marked " << records.size() << " image(s) into " << opts.out_dir.string()
      << " (ablation " << AblationName(opts.ablation) << ")\n";
  return absl::OkStatus();
}

// --- audit ------------------------------------------------------------------

struct AuditOptions {
  fs::path records;
  double alpha = 0.0;
  AuditMode mode = AuditMode::kSet;
  LossMode loss = LossMode::kCrossEntropy;
  fs::path report;
  std::optional<fs::path> histogram;

  nlohmann::json ToJson() const {
    return {{"command", "audit"},
            {"records", records.string()},
            {"alpha", alpha},
            {"mode", std::string(AuditModeName(mode))},
            {"loss", std::string(LossModeName(loss))},
            {"report", report.string()},
            {"histogram", histogram ? nlohmann::json(histogram->string()) : nlohmann::json()}};
  }
};

inline absl::Status Audit(const AuditOptions& opts, std::ostream& log) {
  if (opts.records.empty() || opts.report.empty()) {
    return absl::InvalidArgumentError("--records and --report are required");
  }
  if (!(opts.alpha >= 0.0 && opts.alpha <= 1.0)) {
    return absl::InvalidArgumentError("--alpha must be in [0, 1]");
  }
  std::ifstream in(opts.records);
  if (!in) return absl::NotFoundError(absl::StrCat("cannot read ", opts.records.string()));
  absl::StatusOr<std::vector<LossRecord>> records = ReadLossRecords(in);
  if (!records.ok()) return records.status();
  absl::StatusOr<GroupedLosses> grouped = GroupRecords(*records, opts.loss);
  if (!grouped.ok()) return grouped.status();
  absl::StatusOr<nlohmann::json> report =
      BuildAuditReport(*grouped, opts.mode, opts.loss, opts.alpha);
  if (!report.ok()) return report.status();
  if (absl::Status s = WriteJsonFile(opts.report, *report); !s.ok()) return s;
  if (opts.histogram) {
    std::ofstream csv(*opts.histogram);
    WriteLossHistogramCsv(csv, *grouped);
    if (!csv) {
      return absl::UnavailableError(absl::StrCat("cannot write ", opts.histogram->string()));
    }
  }
  if (absl::Status s = WriteJsonFile(ConfigPathFor(opts.report), opts.ToJson()); !s.ok()) {
    return s;
  }
  int flagged = 0;
  for (const auto& [id, verdict] : report->at("verdicts").items()) {
    if (verdict == "member") ++flagged;
  }
  log << AuditModeName(opts.mode) << " audit: " << report->at("verdicts").size()
      << " target(s), " << flagged << " flagged as member, threshold "
      << report->at("threshold_c").dump() << '\n';
  if (report->contains("metrics")) {
    const auto& m = report->at("metrics");
    log << "auc " << m.at("auc").dump() << ", tpr@0%fpr "
        << m.at("tpr_at_fpr").at("0.0").dump() << ", fpr@100%tpr "
        << m.at("fpr_at_full_tpr").dump() << '\n';
  }
  return absl::OkStatus();
}

// --- simulate ---------------------------------------------------------------

struct SimulateOptions {
  std::optional<fs::path> scenario;
  std::uint64_t seed = lab::kCommittedScenarioSeed;
  fs::path out_dir;
  bool write_images = true;

  nlohmann::json ToJson() const {
    return {{"command", "simulate"},
            {"scenario", scenario ? nlohmann::json(scenario->string()) : nlohmann::json()},
            {"seed", seed},
            {"out_dir", out_dir.string()},
            {"write_images", write_images}};
  }
};

inline absl::Status Simulate(const SimulateOptions& opts, std::ostream& log) {
  if (opts.out_dir.empty()) return absl::InvalidArgumentError("--out-dir is required");
  lab::Scenario scenario;
  if (opts.scenario) {
    absl::StatusOr<nlohmann::json> j = ReadJsonFile(*opts.scenario);
    if (!j.ok()) return j.status();
    absl::StatusOr<lab::Scenario> parsed = lab::ScenarioFromJson(*j);
    if (!parsed.ok()) return parsed.status();
    scenario = *parsed;
  }
  auto run = lab::RunScenario(scenario, opts.seed);
  if (!run.ok()) return run.status();
  const auto& [prep, result] = *run;
  if (absl::Status s = lab::WriteScenarioBundle(prep, result, opts.out_dir, opts.write_images);
      !s.ok()) {
    return s;
  }
  if (absl::Status s = WriteJsonFile(opts.out_dir / "run_config.json", opts.ToJson());
      !s.ok()) {
    return s;
  }
  log << "scenario seed " << opts.seed << ": holdout accuracy " << prep.holdout_accuracy
      << ", member/nonmember marked accuracy " << prep.member_accuracy << "/"
      << prep.nonmember_accuracy << '\n'
      << "set MI: tpr@0%fpr " << result.set_roc.TprAtFpr(0.0) << ", fpr@100%tpr "
      << result.set_roc.fpr_at_full_tpr << ", auc " << result.set_roc.auc << '\n'
      << "instance MI: fpr@100%tpr " << result.instance_roc.fpr_at_full_tpr << '\n'
      << "bundle written to " << opts.out_dir.string() << '\n';
  return absl::OkStatus();
}

}  // namespace marktrace::commands

#endif  // MARKTRACE_COMMANDS_H_
