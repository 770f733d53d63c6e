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

#ifndef MARKTRACE_LAB_SCENARIO_H_
#define MARKTRACE_LAB_SCENARIO_H_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "marktrace/audit.h"
#include "marktrace/image.h"
#include "marktrace/lab/dataset.h"
#include "marktrace/lab/model.h"
#include "marktrace/marking.h"
#include "marktrace/records.h"
#include "marktrace/report.h"
#include "marktrace/rng.h"

namespace marktrace::lab {

// Where Gaussian output noise is added. kLogits perturbs the pre-softmax
// scores and re-normalizes through softmax; kProbabilities perturbs the
// probability vector, clamps negatives to zero and renormalizes.
enum class NoiseSpace { kLogits, kProbabilities };

struct OutputDefense {
  enum class Kind { kNone, kGaussian, kLabelOnly };
  Kind kind = Kind::kNone;
  double sigma = 0.0;
  NoiseSpace space = NoiseSpace::kLogits;

  static OutputDefense None() { return {}; }
  static OutputDefense Gaussian(double sigma, NoiseSpace space = NoiseSpace::kLogits) {
    return {Kind::kGaussian, sigma, space};
  }
  static OutputDefense LabelOnly() { return {Kind::kLabelOnly, 0.0, NoiseSpace::kLogits}; }

  friend bool operator==(const OutputDefense&, const OutputDefense&) = default;
};

// Seed of the committed default scenario; the test suites and the simulate
// command's default use it.
inline constexpr std::uint64_t kCommittedScenarioSeed = 42;

struct Scenario {
  int num_member_users = 5;
  int num_nonmember_users = 100;
  int k = 10;
  // Template for every user's marking; stripe and seed fields are replaced
  // per user.
  MarkSpec marking;
  Ablation ablation = Ablation::kFull;
  double inclusion_fraction = 1.0;
  bool calibration_contamination = false;
  OutputDefense output_defense;
  double alpha = 0.0;
  bool nonmember_with_replacement = true;

  // Synthetic data and toy model.
  int num_classes = 10;
  int train_size = 2000;
  int holdout_size = 1000;
  int image_size = 32;
  int model_image_size = 16;
  double pixel_noise = 0.05;
  double prototype_contrast = 0.05;
  Architecture architecture = Architecture::kMlp;
  int hidden_width = 256;
  int epochs = 30;
  double learning_rate = 0.05;
  int batch_size = 32;
  double momentum = 0.9;

  int IncludedPerUser() const {
    return static_cast<int>(std::floor(inclusion_fraction * k + 1e-9));
  }

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

inline absl::Status ValidateScenario(const Scenario& s) {
  if (s.num_member_users < 1 || s.num_nonmember_users < 1 || s.k < 1) {
    return absl::InvalidArgumentError("need at least one member user, one "
                                      "nonmember user and k >= 1");
  }
  if (!(s.inclusion_fraction > 0.0 && s.inclusion_fraction <= 1.0)) {
    return absl::InvalidArgumentError(absl::StrCat(
        "inclusion_fraction must be in (0, 1], got ", s.inclusion_fraction));
  }
  if (s.IncludedPerUser() < 1) {
    return absl::InvalidArgumentError(absl::StrCat(
        "inclusion_fraction * k = ", s.inclusion_fraction * s.k, " < 1"));
  }
  if (!(s.alpha >= 0.0 && s.alpha <= 1.0)) {
    return absl::InvalidArgumentError("alpha must be in [0, 1]");
  }
  if (s.output_defense.kind == OutputDefense::Kind::kGaussian &&
      !(s.output_defense.sigma >= 0.0)) {
    return absl::InvalidArgumentError("gaussian defense needs sigma >= 0");
  }
  if (s.num_classes < 2 || s.train_size < 1 || s.holdout_size < 1 ||
      s.image_size < 16 || s.model_image_size < 1 ||
      s.model_image_size > s.image_size) {
    return absl::InvalidArgumentError("invalid dataset dimensions");
  }
  if (s.epochs < 0 || !(s.learning_rate > 0) || s.batch_size < 1 ||
      s.momentum < 0 || s.momentum >= 1 || s.hidden_width < 1) {
    return absl::InvalidArgumentError("invalid training hyperparameters");
  }
  return ValidateMarkSpec(s.marking);
}

// ---------------------------------------------------------------------------
// Scenario JSON. Every field is written; on read, absent fields keep their
// defaults.

inline nlohmann::json OutputDefenseToJson(const OutputDefense& d) {
  switch (d.kind) {
    case OutputDefense::Kind::kNone:
      return {{"kind", "none"}};
    case OutputDefense::Kind::kLabelOnly:
      return {{"kind", "label_only"}};
    case OutputDefense::Kind::kGaussian:
      return {{"kind", "gaussian"},
              {"sigma", d.sigma},
              {"space", d.space == NoiseSpace::kLogits ? "logits" : "probabilities"}};
  }
  return nullptr;
}

inline absl::StatusOr<OutputDefense> OutputDefenseFromJson(const nlohmann::json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "none") return OutputDefense::None();
    if (kind == "label_only") return OutputDefense::LabelOnly();
    if (kind == "gaussian") {
      OutputDefense d = OutputDefense::Gaussian(j.at("sigma").get<double>());
      if (j.contains("space")) {
        const std::string space = j.at("space").get<std::string>();
        if (space == "logits") {
          d.space = NoiseSpace::kLogits;
        } else if (space == "probabilities") {
          d.space = NoiseSpace::kProbabilities;
        } else {
          return absl::InvalidArgumentError(absl::StrCat("unknown noise space '", space, "'"));
        }
      }
      return d;
    }
    return absl::InvalidArgumentError(absl::StrCat("unknown defense '", kind, "'"));
  } catch (const nlohmann::json::exception& e) {
    return absl::InvalidArgumentError(absl::StrCat("output_defense: ", e.what()));
  }
}

inline nlohmann::json ScenarioToJson(const Scenario& s) {
  nlohmann::json marking = MarkSpecToJson(s.marking);
  return {
      {"num_member_users", s.num_member_users},
      {"num_nonmember_users", s.num_nonmember_users},
      {"k", s.k},
      {"marking", marking},
      {"ablation", std::string(AblationName(s.ablation))},
      {"inclusion_fraction", s.inclusion_fraction},
      {"calibration_contamination", s.calibration_contamination},
      {"output_defense", OutputDefenseToJson(s.output_defense)},
      {"alpha", s.alpha},
      {"nonmember_with_replacement", s.nonmember_with_replacement},
      {"num_classes", s.num_classes},
      {"train_size", s.train_size},
      {"holdout_size", s.holdout_size},
      {"image_size", s.image_size},
      {"model_image_size", s.model_image_size},
      {"pixel_noise", s.pixel_noise},
      {"prototype_contrast", s.prototype_contrast},
      {"architecture", std::string(ArchitectureName(s.architecture))},
      {"hidden_width", s.hidden_width},
      {"epochs", s.epochs},
      {"learning_rate", s.learning_rate},
      {"batch_size", s.batch_size},
      {"momentum", s.momentum},
  };
}

inline absl::StatusOr<Scenario> ScenarioFromJson(const nlohmann::json& j) {
  if (!j.is_object()) return absl::InvalidArgumentError("scenario must be a JSON object");
  Scenario s;
  try {
    auto read = [&](const char* key, auto& field) {
      if (j.contains(key) && !j.at(key).is_null()) {
        field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
      }
    };
    read("num_member_users", s.num_member_users);
    read("num_nonmember_users", s.num_nonmember_users);
    read("k", s.k);
    read("inclusion_fraction", s.inclusion_fraction);
    read("calibration_contamination", s.calibration_contamination);
    read("alpha", s.alpha);
    read("nonmember_with_replacement", s.nonmember_with_replacement);
    read("num_classes", s.num_classes);
    read("train_size", s.train_size);
    read("holdout_size", s.holdout_size);
    read("image_size", s.image_size);
    read("model_image_size", s.model_image_size);
    read("pixel_noise", s.pixel_noise);
    read("prototype_contrast", s.prototype_contrast);
    read("hidden_width", s.hidden_width);
    read("epochs", s.epochs);
    read("learning_rate", s.learning_rate);
    read("batch_size", s.batch_size);
    read("momentum", s.momentum);
    if (j.contains("marking")) {
      absl::StatusOr<MarkSpec> marking = MarkSpecFromJson(j.at("marking"));
      if (!marking.ok()) return marking.status();
      s.marking = *marking;
    }
    if (j.contains("ablation")) {
      absl::StatusOr<Ablation> a = ParseAblation(j.at("ablation").get<std::string>());
      if (!a.ok()) return a.status();
      s.ablation = *a;
    }
    if (j.contains("output_defense")) {
      absl::StatusOr<OutputDefense> d = OutputDefenseFromJson(j.at("output_defense"));
      if (!d.ok()) return d.status();
      s.output_defense = *d;
    }
    if (j.contains("architecture")) {
      absl::StatusOr<Architecture> a =
          ParseArchitecture(j.at("architecture").get<std::string>());
      if (!a.ok()) return a.status();
      s.architecture = *a;
    }
  } catch (const nlohmann::json::exception& e) {
    return absl::InvalidArgumentError(absl::StrCat("scenario: ", e.what()));
  }
  if (absl::Status st = ValidateScenario(s); !st.ok()) return st;
  return s;
}

// ---------------------------------------------------------------------------

// A sample queried against the model during the audit.
struct EvalSample {
  std::string user_id;
  std::string sample_id;
  int label = 0;
  Split split = Split::kAuditTarget;
  Membership ground_truth = Membership::kUnknown;
  Eigen::VectorXd features;
};

// Queries the model and renders wire-format records. Each sample is
// evaluated on its own and its Gaussian noise is drawn from a stream keyed by
// (seed, sample_id), so a record does not depend on evaluation order or on
// the other samples in the call.
inline std::vector<LossRecord> EvaluateLosses(const ToyModel& model,
                                              std::span<const EvalSample> samples,
                                              const OutputDefense& defense,
                                              std::uint64_t seed) {
  std::vector<LossRecord> records;
  records.reserve(samples.size());
  for (const EvalSample& s : samples) {
    const Eigen::MatrixXd logits = model.Logits(s.features);
    const Eigen::VectorXd probs = Softmax(logits).col(0);
    LossRecord r{s.user_id, s.sample_id, s.label, std::nullopt, std::nullopt,
                 s.split, s.ground_truth};
    if (defense.kind == OutputDefense::Kind::kLabelOnly) {
      Eigen::Index best = 0;
      probs.maxCoeff(&best);
      r.predicted_label = static_cast<int>(best);
    } else if (defense.kind == OutputDefense::Kind::kGaussian && defense.sigma > 0) {
      Rng rng(DeriveSeed(seed, s.sample_id));
      Eigen::VectorXd p;
      if (defense.space == NoiseSpace::kLogits) {
        Eigen::MatrixXd noisy = logits;
        for (Eigen::Index c = 0; c < noisy.rows(); ++c) {
          noisy(c, 0) += rng.Normal(0.0, defense.sigma);
        }
        p = Softmax(noisy).col(0);
      } else {
        p = probs;
        for (Eigen::Index c = 0; c < p.size(); ++c) {
          p(c) = std::max(0.0, p(c) + rng.Normal(0.0, defense.sigma));
        }
        const double total = p.sum();
        if (total > 0) {
          p /= total;
        } else {
          p.setConstant(1.0 / static_cast<double>(p.size()));
        }
      }
      r.probs = std::vector<double>(p.data(), p.data() + p.size());
    } else {
      r.probs = std::vector<double>(probs.data(), probs.data() + probs.size());
    }
    records.push_back(std::move(r));
  }
  return records;
}

// Marking decisions of one simulated user.
struct UserMarking {
  std::string user_id;
  Membership role = Membership::kUnknown;
  MarkSpec spec;
  std::vector<ImageMarkRecord> images;
};

struct MarkedImage {
  std::string image_id;
  Image image;
};

// Everything up to and including training; the audit stage can be rerun on
// it with different output defenses.
struct PreparedScenario {
  Scenario scenario;
  std::uint64_t seed = 0;
  ToyModel model;
  std::vector<double> train_losses;
  int train_set_size = 0;
  std::vector<EvalSample> eval_samples;
  std::vector<UserMarking> users;
  std::vector<MarkedImage> marked_images;
  double holdout_accuracy = 0.0;
  double member_accuracy = 0.0;     // on members' marked samples
  double nonmember_accuracy = 0.0;  // on nonmembers' marked samples
};

struct ScenarioResult {
  std::vector<LossRecord> records;
  AuditOutcome outcome;
  RocMetrics set_roc;
  RocMetrics instance_roc;
  double mean_member_avg_loss = 0.0;
  double stddev_member_avg_loss = 0.0;
  double mean_nonmember_avg_loss = 0.0;
  nlohmann::json metrics;
};

namespace scenario_internal {

inline std::string UserId(std::string_view role, int index) {
  return absl::StrFormat("%s-%04d", std::string(role), index);
}

inline std::string SampleId(std::string_view user_id, int index) {
  return absl::StrFormat("%s-s%03d", std::string(user_id), index);
}

inline double Accuracy(const ToyModel& model, const Eigen::MatrixXd& inputs,
                       std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  const Eigen::MatrixXd logits = model.Logits(inputs);
  int correct = 0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    Eigen::Index best = 0;
    logits.col(j).maxCoeff(&best);
    if (best == labels[static_cast<std::size_t>(j)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

inline Eigen::MatrixXd Stack(const std::vector<Eigen::VectorXd>& cols) {
  Eigen::MatrixXd m(cols.empty() ? 0 : cols.front().size(),
                    static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = cols[i];
  return m;
}

}  // namespace scenario_internal

// Builds the synthetic world, marks every user's samples, and trains the
// model on base data plus the included member samples (and, with
// calibration contamination, the nonmember users' unmarked originals).
inline absl::StatusOr<PreparedScenario> PrepareScenario(const Scenario& s,
                                                        std::uint64_t seed) {
  using scenario_internal::SampleId;
  using scenario_internal::UserId;
  if (absl::Status st = ValidateScenario(s); !st.ok()) return st;

  const int members_per_class =
      (s.num_member_users + s.num_classes - 1) / s.num_classes * s.k;
  const int pool_per_class =
      (s.train_size + s.holdout_size + s.num_classes - 1) / s.num_classes;
  SyntheticConfig data_cfg;
  data_cfg.num_classes = s.num_classes;
  data_cfg.per_class = members_per_class + pool_per_class;
  data_cfg.height = s.image_size;
  data_cfg.width = s.image_size;
  data_cfg.seed = DeriveSeed(seed, "dataset");
  data_cfg.pixel_noise = s.pixel_noise;
  data_cfg.prototype_contrast = s.prototype_contrast;
  absl::StatusOr<SyntheticDataset> data = GenerateSynthetic(data_cfg);
  if (!data.ok()) return data.status();

  // Member user i owns k fresh samples of class i mod num_classes; the
  // remaining samples of every class form the shared pool.
  std::vector<std::vector<int>> member_samples(s.num_member_users);
  std::vector<int> pool;
  for (int c = 0; c < s.num_classes; ++c) {
    const int base = c * data_cfg.per_class;
    int next = base;
    for (int u = c; u < s.num_member_users; u += s.num_classes) {
      for (int j = 0; j < s.k; ++j) member_samples[u].push_back(next++);
    }
    for (int i = base + members_per_class; i < base + data_cfg.per_class; ++i) {
      pool.push_back(i);
    }
  }
  Rng split_rng(DeriveSeed(seed, "split"));
  split_rng.Shuffle(pool);
  pool.resize(static_cast<std::size_t>(s.train_size + s.holdout_size));
  const std::vector<int> train_idx(pool.begin(), pool.begin() + s.train_size);
  const std::vector<int> holdout_idx(pool.begin() + s.train_size, pool.end());

  const int ms = s.model_image_size;
  auto features = [&](const Image& img) {
    return Featurize(ResizeArea(img, ms, ms));
  };

  PreparedScenario prep;
  prep.scenario = s;
  prep.seed = seed;
  std::vector<Eigen::VectorXd> train_x;
  std::vector<int> train_y;
  for (int i : train_idx) {
    train_x.push_back(features(data->samples[i].image));
    train_y.push_back(data->samples[i].label);
  }

  // Marks `indices` for one user and records everything.
  auto mark_user = [&](std::string_view role, int index, Membership gt,
                       const std::vector<int>& indices,
                       Split split) -> absl::Status {
    UserMarking user;
    user.user_id = UserId(role, index);
    user.role = gt;
    user.spec = s.marking;
    user.spec.stripe.reset();
    user.spec.ood_image.reset();
    user.spec.stripe_seed = DeriveSeed(seed, absl::StrCat(user.user_id, "/stripe"));
    user.spec.master_seed = DeriveSeed(seed, absl::StrCat(user.user_id, "/mark"));
    user.spec = ApplyAblation(user.spec, s.ablation);
    if (user.spec.blends()) {
      user.spec.stripe = RandomStripePattern(*user.spec.stripe_seed);
    }
    absl::StatusOr<Marker> marker = Marker::Create(user.spec);
    if (!marker.ok()) return marker.status();
    for (std::size_t j = 0; j < indices.size(); ++j) {
      const std::string sample_id = SampleId(user.user_id, static_cast<int>(j));
      absl::StatusOr<MarkResult> marked =
          marker->Mark(data->samples[indices[j]].image, sample_id);
      if (!marked.ok()) return marked.status();
      const int label = data->samples[indices[j]].label;
      Eigen::VectorXd x = features(marked->image);
      if (gt == Membership::kMember && static_cast<int>(j) < s.IncludedPerUser()) {
        train_x.push_back(x);
        train_y.push_back(label);
      }
      prep.eval_samples.push_back(
          {user.user_id, sample_id, label, split, gt, std::move(x)});
      user.images.push_back(marked->record);
      prep.marked_images.push_back({sample_id, std::move(marked->image)});
    }
    prep.users.push_back(std::move(user));
    return absl::OkStatus();
  };

  for (int u = 0; u < s.num_member_users; ++u) {
    if (absl::Status st = mark_user("member", u, Membership::kMember,
                                    member_samples[u],
                                    Split::kAuditTarget);
        !st.ok()) {
      return st;
    }
  }
  // Nonmember users draw k samples from the whole holdout set, so their
  // samples span classes.
  Rng draw_rng(DeriveSeed(seed, "nonmember-draws"));
  for (int u = 0; u < s.num_nonmember_users; ++u) {
    std::vector<int> chosen;
    if (s.nonmember_with_replacement) {
      for (int j = 0; j < s.k; ++j) {
        chosen.push_back(holdout_idx[draw_rng.UniformInt(holdout_idx.size())]);
      }
    } else {
      if (static_cast<int>(holdout_idx.size()) < s.k) {
        return absl::FailedPreconditionError(absl::StrCat(
            "holdout has only ", holdout_idx.size(), " samples; cannot draw ",
            s.k, " without replacement"));
      }
      std::vector<int> candidates = holdout_idx;
      draw_rng.Shuffle(candidates);
      chosen.assign(candidates.begin(), candidates.begin() + s.k);
    }
    if (absl::Status st = mark_user("nonmember", u, Membership::kNonmember,
                                    chosen, Split::kCalibration);
        !st.ok()) {
      return st;
    }
    if (s.calibration_contamination) {
      for (int i : chosen) {
        train_x.push_back(features(data->samples[i].image));
        train_y.push_back(data->samples[i].label);
      }
    }
  }

  ModelConfig model_cfg;
  model_cfg.architecture = s.architecture;
  model_cfg.input_dim = ms * ms * Image::kChannels;
  model_cfg.hidden_width = s.hidden_width;
  model_cfg.num_classes = s.num_classes;
  absl::StatusOr<ToyModel> init = ToyModel::Create(model_cfg, DeriveSeed(seed, "model-init"));
  if (!init.ok()) return init.status();
  TrainConfig train_cfg;
  train_cfg.epochs = s.epochs;
  train_cfg.learning_rate = s.learning_rate;
  train_cfg.batch_size = s.batch_size;
  train_cfg.momentum = s.momentum;
  train_cfg.seed = DeriveSeed(seed, "train");
  const Eigen::MatrixXd train_inputs = scenario_internal::Stack(train_x);
  absl::StatusOr<TrainResult> trained = Train(*std::move(init), train_inputs, train_y, train_cfg);
  if (!trained.ok()) return trained.status();
  prep.model = std::move(trained->model);
  prep.train_losses = std::move(trained->epoch_losses);
  prep.train_set_size = static_cast<int>(train_y.size());

  std::vector<Eigen::VectorXd> hold_x;
  std::vector<int> hold_y;
  for (int i : holdout_idx) {
    hold_x.push_back(features(data->samples[i].image));
    hold_y.push_back(data->samples[i].label);
  }
  prep.holdout_accuracy =
      scenario_internal::Accuracy(prep.model, scenario_internal::Stack(hold_x), hold_y);
  for (Membership role : {Membership::kMember, Membership::kNonmember}) {
    std::vector<Eigen::VectorXd> xs;
    std::vector<int> ys;
    for (const auto& e : prep.eval_samples) {
      if (e.ground_truth != role) continue;
      xs.push_back(e.features);
      ys.push_back(e.label);
    }
    const double acc =
        scenario_internal::Accuracy(prep.model, scenario_internal::Stack(xs), ys);
    (role == Membership::kMember ? prep.member_accuracy : prep.nonmember_accuracy) = acc;
  }
  return prep;
}

// Queries the trained model under `defense`, audits the member users against
// the nonmember calibration users and computes all metrics.
inline absl::StatusOr<ScenarioResult> EvaluateScenario(const PreparedScenario& prep,
                                                       const OutputDefense& defense) {
  ScenarioResult result;
  result.records = EvaluateLosses(prep.model, prep.eval_samples, defense,
                                  DeriveSeed(prep.seed, "output-defense"));
  const LossMode mode = defense.kind == OutputDefense::Kind::kLabelOnly
                            ? LossMode::kLabelOnly
                            : LossMode::kCrossEntropy;
  absl::StatusOr<GroupedLosses> grouped = GroupRecords(result.records, mode);
  if (!grouped.ok()) return grouped.status();
  absl::StatusOr<AuditOutcome> outcome =
      AuditUsers(grouped->calibration, grouped->targets, prep.scenario.alpha);
  if (!outcome.ok()) return outcome.status();
  result.outcome = *std::move(outcome);

  const LabeledScores set_scores = SetScores(*grouped);
  const LabeledScores instance_scores = InstanceScores(*grouped);
  absl::StatusOr<RocMetrics> set_roc =
      ComputeRocMetrics(set_scores.members, set_scores.nonmembers);
  absl::StatusOr<RocMetrics> instance_roc =
      ComputeRocMetrics(instance_scores.members, instance_scores.nonmembers);
  if (!set_roc.ok()) return set_roc.status();
  if (!instance_roc.ok()) return instance_roc.status();
  result.set_roc = *std::move(set_roc);
  result.instance_roc = *std::move(instance_roc);

  std::vector<double> member_avgs, nonmember_avgs;
  for (double s : set_scores.members) member_avgs.push_back(-s);
  for (double s : set_scores.nonmembers) nonmember_avgs.push_back(-s);
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  result.mean_member_avg_loss = mean(member_avgs);
  result.mean_nonmember_avg_loss = mean(nonmember_avgs);
  double var = 0.0;
  for (double v : member_avgs) {
    var += (v - result.mean_member_avg_loss) * (v - result.mean_member_avg_loss);
  }
  result.stddev_member_avg_loss = std::sqrt(var / static_cast<double>(member_avgs.size()));

  int flagged = 0;
  for (const auto& [user, verdict] : result.outcome.verdicts) {
    if (verdict == Membership::kMember) ++flagged;
  }
  result.metrics = {
      {"seed", prep.seed},
      {"output_defense", OutputDefenseToJson(defense)},
      {"loss", std::string(LossModeName(mode))},
      {"alpha", prep.scenario.alpha},
      {"threshold_c", ThresholdToJson(result.outcome.threshold_c)},
      {"members_flagged", flagged},
      {"set", RocMetricsToJson(result.set_roc)},
      {"instance", RocMetricsToJson(result.instance_roc)},
      {"mean_member_avg_loss", result.mean_member_avg_loss},
      {"stddev_member_avg_loss", result.stddev_member_avg_loss},
      {"mean_nonmember_avg_loss", result.mean_nonmember_avg_loss},
      {"holdout_accuracy", prep.holdout_accuracy},
      {"member_marked_accuracy", prep.member_accuracy},
      {"nonmember_marked_accuracy", prep.nonmember_accuracy},
      {"train_set_size", prep.train_set_size},
      {"final_train_loss", prep.train_losses.empty() ? 0.0 : prep.train_losses.back()},
  };
  return result;
}

inline absl::StatusOr<std::pair<PreparedScenario, ScenarioResult>> RunScenario(
    const Scenario& s, std::uint64_t seed) {
  absl::StatusOr<PreparedScenario> prep = PrepareScenario(s, seed);
  if (!prep.ok()) return prep.status();
  absl::StatusOr<ScenarioResult> result = EvaluateScenario(*prep, s.output_defense);
  if (!result.ok()) return result.status();
  return std::make_pair(*std::move(prep), *std::move(result));
}

inline nlohmann::json AuditOutcomeToJson(const AuditOutcome& o) {
  nlohmann::json verdicts = nlohmann::json::object();
  for (const auto& [user, v] : o.verdicts) verdicts[user] = std::string(MembershipName(v));
  return {{"alpha", o.alpha},
          {"threshold_c", ThresholdToJson(o.threshold_c)},
          {"verdicts", verdicts},
          {"avg_losses", o.avg_losses}};
}

// Run directory layout:
//   scenario.json  resolved scenario and seed
//   manifest.json  per-user marking specs and per-image records
//   model.bin      checkpoint
//   records.jsonl  loss records
//   audit.json     audit outcome
//   metrics.json   metrics
//   images/        marked images as PNG, named by sample id
inline absl::Status WriteScenarioBundle(const PreparedScenario& prep,
                                        const ScenarioResult& result,
                                        const std::filesystem::path& dir,
                                        bool write_images = true) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) return absl::UnavailableError(absl::StrCat("cannot create ", dir.string()));
  auto write_json = [&](const char* name, const nlohmann::json& j) -> absl::Status {
    std::ofstream out(dir / name);
    out << j.dump(2) << '\n';
    if (!out) return absl::UnavailableError(absl::StrCat("cannot write ", name));
    return absl::OkStatus();
  };
  nlohmann::json scenario = ScenarioToJson(prep.scenario);
  scenario["seed"] = prep.seed;
  if (absl::Status st = write_json("scenario.json", scenario); !st.ok()) return st;

  nlohmann::json users = nlohmann::json::array();
  for (const auto& u : prep.users) {
    nlohmann::json entry = MarkManifestToJson(u.spec, u.images);
    entry["user_id"] = u.user_id;
    entry["role"] = std::string(MembershipName(u.role));
    users.push_back(std::move(entry));
  }
  nlohmann::json manifest = {{"users", users}};
  if (absl::Status st = write_json("manifest.json", manifest); !st.ok()) return st;
  if (absl::Status st = write_json("audit.json", AuditOutcomeToJson(result.outcome));
      !st.ok()) {
    return st;
  }
  if (absl::Status st = write_json("metrics.json", result.metrics); !st.ok()) return st;
  {
    std::ofstream out(dir / "records.jsonl");
    WriteLossRecords(out, result.records);
    if (!out) return absl::UnavailableError("cannot write records.jsonl");
  }
  if (absl::Status st = SaveModel(prep.model, dir / "model.bin"); !st.ok()) return st;
  if (write_images) {
    for (const auto& m : prep.marked_images) {
      if (absl::Status st = SaveImage(m.image, dir / "images" / (m.image_id + ".png"));
          !st.ok()) {
        return st;
      }
    }
  }
  return absl::OkStatus();
}

}  // namespace marktrace::lab

#endif  // MARKTRACE_LAB_SCENARIO_H_
