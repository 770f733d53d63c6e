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

#ifndef MARKTRACE_TESTS_GRADIENT_CHECK_H_
#define MARKTRACE_TESTS_GRADIENT_CHECK_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "marktrace/lab/model.h"
#include "marktrace/rng.h"

namespace marktrace::testing {

struct GradientCheckResult {
  long parameters = 0;
  double max_relative_error = 0.0;
  double max_abs_gradient = 0.0;
};

// Denominator floor for the relative error, which is otherwise undefined when
// both gradients vanish (parameters feeding dead ReLU units).
inline constexpr double kGradientFloor = 1e-10;

// Compares ToyModel::Backward against central finite differences with step h
// for every weight and bias of a randomly initialised model on random data.
inline GradientCheckResult CheckGradients(const lab::ModelConfig& cfg, int batch,
                                          std::uint64_t seed, double h = 1e-4) {
  lab::ToyModel model = *lab::ToyModel::Create(cfg, seed);
  Rng rng(seed ^ 0x5eedULL);
  Eigen::MatrixXd inputs(cfg.input_dim, batch);
  for (Eigen::Index i = 0; i < inputs.size(); ++i) inputs.data()[i] = rng.Uniform(-0.5, 0.5);
  // Give the bias parameters non-trivial values as well.
  for (lab::Layer& l : model.mutable_layers()) {
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = rng.Normal(0.0, 0.1);
  }
  std::vector<int> labels(batch);
  for (int& y : labels) y = static_cast<int>(rng.UniformInt(cfg.num_classes));

  const lab::ToyModel::LossAndGradient analytic = model.Backward(inputs, labels);
  GradientCheckResult result;
  auto check = [&](double& param, double grad) {
    const double saved = param;
    param = saved + h;
    const double up = model.Loss(inputs, labels);
    param = saved - h;
    const double down = model.Loss(inputs, labels);
    param = saved;
    const double numeric = (up - down) / (2 * h);
    const double diff = std::abs(numeric - grad);
    const double scale = std::max(std::abs(numeric), std::abs(grad));
    const double rel = diff / std::max(scale, kGradientFloor);
    result.max_relative_error = std::max(result.max_relative_error, rel);
    result.max_abs_gradient = std::max(result.max_abs_gradient, std::abs(grad));
    ++result.parameters;
  };
  std::span<lab::Layer> layers = model.mutable_layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (Eigen::Index k = 0; k < layers[i].weights.size(); ++k) {
      check(layers[i].weights.data()[k], analytic.gradients[i].weights.data()[k]);
    }
    for (Eigen::Index k = 0; k < layers[i].bias.size(); ++k) {
      check(layers[i].bias[k], analytic.gradients[i].bias[k]);
    }
  }
  return result;
}

// The 3-class model over 8x8x3 inputs used by the gradient criterion.
inline lab::ModelConfig GradientCheckConfig(lab::Architecture arch) {
  lab::ModelConfig cfg;
  cfg.architecture = arch;
  cfg.input_dim = 8 * 8 * 3;
  cfg.hidden_width = 32;
  cfg.num_classes = 3;
  return cfg;
}

}  // namespace marktrace::testing

#endif  // MARKTRACE_TESTS_GRADIENT_CHECK_H_
