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

#include "marktrace/lab/scenario.h"

#include <fstream>
#include <set>
#include <string>

#include "gtest/gtest.h"
#include "test_util.h"

namespace marktrace::lab {
namespace {

using ::marktrace::testing::TempDir;

// A scenario small enough to train in well under a second.
Scenario SmallScenario() {
  Scenario s;
  s.num_member_users = 3;
  s.num_nonmember_users = 8;
  s.k = 4;
  s.num_classes = 3;
  s.train_size = 60;
  s.holdout_size = 30;
  s.image_size = 16;
  s.model_image_size = 8;
  s.hidden_width = 16;
  s.epochs = 3;
  return s;
}

// --- Scenario config -------------------------------------------------------

TEST(ScenarioConfigTest, JsonRoundTrip) {
  Scenario s = SmallScenario();
  s.ablation = Ablation::kNoiseOnly;
  s.inclusion_fraction = 0.5;
  s.calibration_contamination = true;
  s.output_defense = OutputDefense::Gaussian(1.5, NoiseSpace::kProbabilities);
  s.alpha = 0.01;
  s.nonmember_with_replacement = false;
  s.architecture = Architecture::kLinear;
  s.marking.blend_m = 0.6;
  for (const Scenario& in : {Scenario{}, s}) {
    auto back = ScenarioFromJson(nlohmann::json::parse(ScenarioToJson(in).dump()));
    ASSERT_TRUE(back.ok()) << back.status();
    EXPECT_EQ(*back, in);
  }
}

TEST(ScenarioConfigTest, AbsentFieldsKeepDefaults) {
  auto s = ScenarioFromJson(nlohmann::json::parse(R"({"k": 7, "output_defense": {"kind": "label_only"}})"));
  ASSERT_TRUE(s.ok());
  Scenario expected;
  expected.k = 7;
  expected.output_defense = OutputDefense::LabelOnly();
  EXPECT_EQ(*s, expected);
}

TEST(ScenarioConfigTest, InvalidScenariosRejected) {
  for (const char* text :
       {R"({"inclusion_fraction": 0})", R"({"inclusion_fraction": 1.5})",
        R"({"inclusion_fraction": 0.05, "k": 10})", R"({"k": 0})",
        R"({"output_defense": {"kind": "gaussian", "sigma": -1}})",
        R"({"output_defense": {"kind": "dp"}})", R"({"ablation": "half"})",
        R"({"architecture": "cnn"})", R"({"k": "ten"})", R"({"model_image_size": 64})"}) {
    EXPECT_EQ(ScenarioFromJson(nlohmann::json::parse(text)).status().code(),
              absl::StatusCode::kInvalidArgument)
        << text;
  }
}

TEST(ScenarioConfigTest, IncludedPerUserFloorsFraction) {
  Scenario s;
  s.k = 10;
  s.inclusion_fraction = 0.3;
  EXPECT_EQ(s.IncludedPerUser(), 3);
  s.inclusion_fraction = 0.7;
  EXPECT_EQ(s.IncludedPerUser(), 7);
  s.k = 25;
  s.inclusion_fraction = 1.0;
  EXPECT_EQ(s.IncludedPerUser(), 25);
}

// --- Preparation -----------------------------------------------------------

TEST(ScenarioPrepTest, TrainSetCompositionAndIds) {
  Scenario s = SmallScenario();
  s.inclusion_fraction = 0.5;
  auto prep = PrepareScenario(s, 5);
  ASSERT_TRUE(prep.ok()) << prep.status();
  EXPECT_EQ(prep->train_set_size, 60 + 3 * 2);
  EXPECT_EQ(prep->users.size(), 11u);
  EXPECT_EQ(prep->eval_samples.size(), 11u * 4);
  EXPECT_EQ(prep->marked_images.size(), 11u * 4);
  EXPECT_EQ(prep->users[0].user_id, "member-0000");
  EXPECT_EQ(prep->users[3].user_id, "nonmember-0000");
  EXPECT_EQ(prep->eval_samples[1].sample_id, "member-0000-s001");
  std::set<std::uint64_t> stripe_seeds;
  for (const auto& u : prep->users) {
    EXPECT_EQ(u.images.size(), 4u);
    ASSERT_TRUE(u.spec.stripe_seed.has_value());
    stripe_seeds.insert(*u.spec.stripe_seed);
  }
  EXPECT_EQ(stripe_seeds.size(), 11u);
  for (int u = 0; u < 3; ++u) {
    for (int j = 0; j < 4; ++j) EXPECT_EQ(prep->eval_samples[u * 4 + j].label, u % 3);
  }

  s.calibration_contamination = true;
  auto contaminated = PrepareScenario(s, 5);
  ASSERT_TRUE(contaminated.ok());
  EXPECT_EQ(contaminated->train_set_size, 60 + 3 * 2 + 8 * 4);
}

TEST(ScenarioPrepTest, NonmemberSamplesSpanClasses) {
  Scenario s = SmallScenario();
  s.num_nonmember_users = 20;
  auto prep = PrepareScenario(s, 6);
  ASSERT_TRUE(prep.ok());
  int mixed = 0;
  for (std::size_t u = 3; u < prep->users.size(); ++u) {
    std::set<int> labels;
    for (const auto& e : prep->eval_samples) {
      if (e.user_id == prep->users[u].user_id) labels.insert(e.label);
    }
    mixed += labels.size() > 1;
  }
  EXPECT_GT(mixed, 15);
}

TEST(ScenarioPrepTest, WithoutReplacementNeedsEnoughHoldout) {
  Scenario s = SmallScenario();
  s.nonmember_with_replacement = false;
  EXPECT_TRUE(PrepareScenario(s, 1).ok());
  s.k = 40;
  s.holdout_size = 30;
  EXPECT_EQ(PrepareScenario(s, 1).status().code(), absl::StatusCode::kFailedPrecondition);
}

TEST(ScenarioPrepTest, AblationReachesEveryUser) {
  Scenario s = SmallScenario();
  s.ablation = Ablation::kNone;
  auto prep = PrepareScenario(s, 2);
  ASSERT_TRUE(prep.ok());
  for (const auto& u : prep->users) {
    EXPECT_FALSE(u.spec.blends());
    EXPECT_FALSE(u.spec.perlin.has_value());
  }
}

TEST(ScenarioPrepTest, DeterministicGivenSeed) {
  auto a = RunScenario(SmallScenario(), 11);
  auto b = RunScenario(SmallScenario(), 11);
  auto c = RunScenario(SmallScenario(), 12);
  ASSERT_TRUE(a.ok() && b.ok() && c.ok());
  EXPECT_EQ(a->second.records, b->second.records);
  EXPECT_EQ(a->first.model, b->first.model);
  EXPECT_EQ(a->second.metrics.dump(), b->second.metrics.dump());
  EXPECT_NE(a->second.records, c->second.records);
}

// --- Output defenses -------------------------------------------------------

TEST(OutputDefenseTest, ZeroSigmaIsIdentity) {
  auto prep = PrepareScenario(SmallScenario(), 3);
  ASSERT_TRUE(prep.ok());
  const auto plain = EvaluateLosses(prep->model, prep->eval_samples, OutputDefense::None(), 9);
  for (NoiseSpace space : {NoiseSpace::kLogits, NoiseSpace::kProbabilities}) {
    EXPECT_EQ(EvaluateLosses(prep->model, prep->eval_samples,
                             OutputDefense::Gaussian(0.0, space), 9),
              plain);
  }
}

TEST(OutputDefenseTest, GaussianNoiseKeepsProbabilityVectors) {
  auto prep = PrepareScenario(SmallScenario(), 3);
  ASSERT_TRUE(prep.ok());
  const auto plain = EvaluateLosses(prep->model, prep->eval_samples, OutputDefense::None(), 9);
  for (NoiseSpace space : {NoiseSpace::kLogits, NoiseSpace::kProbabilities}) {
    const auto noisy = EvaluateLosses(prep->model, prep->eval_samples,
                                      OutputDefense::Gaussian(1.0, space), 9);
    ASSERT_EQ(noisy.size(), plain.size());
    EXPECT_NE(noisy, plain);
    for (const auto& r : noisy) {
      ASSERT_TRUE(r.probs.has_value());
      double sum = 0.0;
      for (double p : *r.probs) {
        EXPECT_GE(p, 0.0);
        sum += p;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
      EXPECT_TRUE(RecordLoss(r, LossMode::kCrossEntropy).ok());
    }
    // Noise is keyed by sample id, not by position.
    std::vector<EvalSample> reversed(prep->eval_samples.rbegin(), prep->eval_samples.rend());
    auto again = EvaluateLosses(prep->model, reversed, OutputDefense::Gaussian(1.0, space), 9);
    std::reverse(again.begin(), again.end());
    ASSERT_EQ(again.size(), noisy.size());
    for (std::size_t i = 0; i < noisy.size(); ++i) {
      EXPECT_EQ(again[i].sample_id, noisy[i].sample_id);
      ASSERT_EQ(again[i].probs->size(), noisy[i].probs->size());
      for (std::size_t c = 0; c < noisy[i].probs->size(); ++c) {
        EXPECT_EQ((*again[i].probs)[c], (*noisy[i].probs)[c]) << noisy[i].sample_id << " " << c;
      }
    }
  }
}

TEST(OutputDefenseTest, LabelOnlyEmitsArgmax) {
  auto prep = PrepareScenario(SmallScenario(), 4);
  ASSERT_TRUE(prep.ok());
  const auto plain = EvaluateLosses(prep->model, prep->eval_samples, OutputDefense::None(), 1);
  const auto labels =
      EvaluateLosses(prep->model, prep->eval_samples, OutputDefense::LabelOnly(), 1);
  int correct = 0;
  for (std::size_t i = 0; i < plain.size(); ++i) {
    ASSERT_FALSE(labels[i].probs.has_value());
    ASSERT_TRUE(labels[i].predicted_label.has_value());
    const auto& p = *plain[i].probs;
    const int argmax = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    EXPECT_EQ(*labels[i].predicted_label, argmax);
    if (argmax == plain[i].true_label) {
      ++correct;
      EXPECT_EQ(*RecordLoss(labels[i], LossMode::kLabelOnly), 0.0);
    }
  }
  EXPECT_GT(correct, 0);
}

// --- Committed default scenario ----------------------------------------------

class DefaultScenarioTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    auto p = PrepareScenario(Scenario{}, kCommittedScenarioSeed);
    ASSERT_TRUE(p.ok()) << p.status();
    prep_ = new PreparedScenario(*std::move(p));
  }
  static void TearDownTestSuite() {
    delete prep_;
    prep_ = nullptr;
  }
  static ScenarioResult Evaluate(const OutputDefense& d) {
    auto r = EvaluateScenario(*prep_, d);
    EXPECT_TRUE(r.ok()) << r.status();
    return *std::move(r);
  }
  static PreparedScenario* prep_;
};

PreparedScenario* DefaultScenarioTest::prep_ = nullptr;

TEST_F(DefaultScenarioTest, SetAuditFlagsEveryMemberAtZeroFpr) {
  const ScenarioResult r = Evaluate(OutputDefense::None());
  EXPECT_EQ(r.set_roc.TprAtFpr(0.0), 1.0);
  EXPECT_EQ(r.set_roc.fpr_at_full_tpr, 0.0);
  for (const auto& [user, verdict] : r.outcome.verdicts) {
    EXPECT_EQ(verdict, Membership::kMember) << user;
  }
  EXPECT_EQ(r.outcome.verdicts.size(), 5u);
}

TEST_F(DefaultScenarioTest, InstanceAuditHasFalsePositives) {
  const ScenarioResult r = Evaluate(OutputDefense::None());
  EXPECT_GT(r.instance_roc.fpr_at_full_tpr, 0.0);
  EXPECT_GT(r.instance_roc.fpr_at_full_tpr, r.set_roc.fpr_at_full_tpr);
}

TEST_F(DefaultScenarioTest, SeparationMarginExceedsTenMemberStddevs) {
  const ScenarioResult r = Evaluate(OutputDefense::None());
  EXPECT_LT(r.mean_member_avg_loss, r.mean_nonmember_avg_loss);
  EXPECT_GE(r.mean_nonmember_avg_loss - r.mean_member_avg_loss,
            10.0 * r.stddev_member_avg_loss);
}

TEST_F(DefaultScenarioTest, GaussianNoiseRaisesMemberLossButKeepsOrdering) {
  const ScenarioResult clean = Evaluate(OutputDefense::None());
  const ScenarioResult noisy = Evaluate(OutputDefense::Gaussian(3.0));
  EXPECT_GT(noisy.mean_member_avg_loss, clean.mean_member_avg_loss);
  EXPECT_LT(noisy.mean_member_avg_loss, noisy.mean_nonmember_avg_loss);
  EXPECT_EQ(noisy.set_roc.fpr_at_full_tpr, 0.0);
}

TEST_F(DefaultScenarioTest, LabelOnlyStillFlagsEveryMember) {
  const ScenarioResult r = Evaluate(OutputDefense::LabelOnly());
  EXPECT_EQ(r.set_roc.TprAtFpr(0.0), 1.0);
  EXPECT_EQ(prep_->member_accuracy, 1.0);
  EXPECT_LT(prep_->nonmember_accuracy, 0.5);
}

TEST_F(DefaultScenarioTest, BundleIsComplete) {
  const ScenarioResult r = Evaluate(OutputDefense::None());
  TempDir dir("bundle");
  ASSERT_TRUE(WriteScenarioBundle(*prep_, r, dir.path(), /*write_images=*/false).ok());
  for (const char* name : {"scenario.json", "manifest.json", "audit.json", "metrics.json",
                           "records.jsonl", "model.bin"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
  }
  auto model = LoadModel(dir / "model.bin");
  ASSERT_TRUE(model.ok());
  EXPECT_EQ(*model, prep_->model);
  std::ifstream in(dir / "records.jsonl");
  auto records = ReadLossRecords(in);
  ASSERT_TRUE(records.ok());
  EXPECT_EQ(*records, r.records);
  std::ifstream scen(dir / "scenario.json");
  const nlohmann::json sj = nlohmann::json::parse(scen);
  EXPECT_EQ(sj["seed"], kCommittedScenarioSeed);
  EXPECT_EQ(*ScenarioFromJson(sj), Scenario{});
}

TEST(ScenarioVariantsTest, ContaminatedCalibrationStillFlagsEveryMember) {
  Scenario s;
  s.calibration_contamination = true;
  auto run = RunScenario(s, kCommittedScenarioSeed);
  ASSERT_TRUE(run.ok()) << run.status();
  EXPECT_EQ(run->second.set_roc.TprAtFpr(0.0), 1.0);
}

TEST(ScenarioVariantsTest, PartialInclusionWeakensMembership) {
  Scenario full;
  Scenario partial;
  partial.inclusion_fraction = 0.3;
  auto a = RunScenario(full, kCommittedScenarioSeed);
  auto b = RunScenario(partial, kCommittedScenarioSeed);
  ASSERT_TRUE(a.ok() && b.ok());
  EXPECT_GE(b->second.set_roc.fpr_at_full_tpr, a->second.set_roc.fpr_at_full_tpr);
  EXPECT_GT(b->second.mean_member_avg_loss, a->second.mean_member_avg_loss);
  EXPECT_EQ(b->first.train_set_size, 2000 + 5 * 3);
}

}  // namespace
}  // namespace marktrace::lab
