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

#ifndef MARKTRACE_LAB_MODEL_H_
#define MARKTRACE_LAB_MODEL_H_

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string_view>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "marktrace/image.h"
#include "marktrace/rng.h"

namespace marktrace::lab {

enum class Architecture { kLinear, kMlp };

inline std::string_view ArchitectureName(Architecture a) {
  return a == Architecture::kLinear ? "linear" : "mlp";
}

inline absl::StatusOr<Architecture> ParseArchitecture(std::string_view name) {
  if (name == "linear") return Architecture::kLinear;
  if (name == "mlp") return Architecture::kMlp;
  return absl::InvalidArgumentError(absl::StrCat("unknown architecture '", std::string(name), "'"));
}

struct ModelConfig {
  Architecture architecture = Architecture::kMlp;
  int input_dim = 16 * 16 * 3;
  int hidden_width = 256;
  int num_classes = 10;
};

// Affine layer y = W x + b. W is out x in.
struct Layer {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;

  friend bool operator==(const Layer& a, const Layer& b) {
    return a.weights == b.weights && a.bias == b.bias;
  }
};

// Flattens an image into a centered feature vector (v - 0.5), in the image's
// own row-major channel-interleaved order.
inline Eigen::VectorXd Featurize(const Image& img) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(img.size()));
  for (std::size_t i = 0; i < img.size(); ++i) {
    x(static_cast<Eigen::Index>(i)) = img.data[i] - 0.5;
  }
  return x;
}

// Column-wise softmax with max subtraction.
inline Eigen::MatrixXd Softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double peak = logits.col(j).maxCoeff();
    out.col(j) = (logits.col(j).array() - peak).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

// Softmax classifier: a single affine layer, or affine-ReLU-affine.
class ToyModel {
 public:
  ToyModel() = default;

  static absl::StatusOr<ToyModel> Create(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.input_dim <= 0 || cfg.num_classes < 2 ||
        (cfg.architecture == Architecture::kMlp && cfg.hidden_width <= 0)) {
      return absl::InvalidArgumentError("invalid model configuration");
    }
    Rng rng(seed);
    ToyModel model;
    if (cfg.architecture == Architecture::kLinear) {
      model.layers_.push_back(RandomLayer(rng, cfg.num_classes, cfg.input_dim));
    } else {
      model.layers_.push_back(RandomLayer(rng, cfg.hidden_width, cfg.input_dim));
      model.layers_.push_back(RandomLayer(rng, cfg.num_classes, cfg.hidden_width));
    }
    return model;
  }

  static absl::StatusOr<ToyModel> FromLayers(std::vector<Layer> layers) {
    if (layers.empty() || layers.size() > 2) {
      return absl::InvalidArgumentError("model needs one or two layers");
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].bias.size() != layers[i].weights.rows() ||
          (i > 0 && layers[i].weights.cols() != layers[i - 1].weights.rows())) {
        return absl::InvalidArgumentError("inconsistent layer shapes");
      }
    }
    ToyModel model;
    model.layers_ = std::move(layers);
    return model;
  }

  int input_dim() const { return static_cast<int>(layers_.front().weights.cols()); }
  int num_classes() const { return static_cast<int>(layers_.back().weights.rows()); }
  std::span<const Layer> layers() const { return layers_; }
  std::span<Layer> mutable_layers() { return layers_; }

  // Inputs are column vectors: input_dim x batch.
  Eigen::MatrixXd Logits(const Eigen::MatrixXd& inputs) const {
    Eigen::MatrixXd act = inputs;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Eigen::MatrixXd z = layers_[i].weights * act;
      z.colwise() += layers_[i].bias;
      if (i + 1 < layers_.size()) z = z.cwiseMax(0.0);
      act = std::move(z);
    }
    return act;
  }

  Eigen::MatrixXd Probabilities(const Eigen::MatrixXd& inputs) const {
    return Softmax(Logits(inputs));
  }

  // Mean cross-entropy over the batch and its gradient for every layer.
  struct LossAndGradient {
    double loss = 0.0;
    std::vector<Layer> gradients;
  };

  LossAndGradient Backward(const Eigen::MatrixXd& inputs,
                           std::span<const int> labels) const {
    const Eigen::Index batch = inputs.cols();
    std::vector<Eigen::MatrixXd> acts;  // input of each layer
    acts.reserve(layers_.size());
    Eigen::MatrixXd act = inputs;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      acts.push_back(act);
      Eigen::MatrixXd z = layers_[i].weights * act;
      z.colwise() += layers_[i].bias;
      if (i + 1 < layers_.size()) z = z.cwiseMax(0.0);
      act = std::move(z);
    }
    // act now holds the logits.
    LossAndGradient out;
    Eigen::MatrixXd delta(act.rows(), batch);
    for (Eigen::Index j = 0; j < batch; ++j) {
      const double peak = act.col(j).maxCoeff();
      Eigen::VectorXd e = (act.col(j).array() - peak).exp().matrix();
      const double denom = e.sum();
      const int y = labels[static_cast<std::size_t>(j)];
      out.loss += std::log(denom) - (act(y, j) - peak);
      delta.col(j) = e / denom;
      delta(y, j) -= 1.0;
    }
    out.loss /= static_cast<double>(batch);
    delta /= static_cast<double>(batch);

    out.gradients.resize(layers_.size());
    for (std::size_t i = layers_.size(); i-- > 0;) {
      out.gradients[i].weights = delta * acts[i].transpose();
      out.gradients[i].bias = delta.rowwise().sum();
      if (i > 0) {
        Eigen::MatrixXd back = layers_[i].weights.transpose() * delta;
        // ReLU mask: acts[i] is the post-activation output of layer i-1.
        delta = (acts[i].array() > 0.0).select(back, 0.0);
      }
    }
    return out;
  }

  double Loss(const Eigen::MatrixXd& inputs, std::span<const int> labels) const {
    const Eigen::MatrixXd logits = Logits(inputs);
    double total = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double peak = logits.col(j).maxCoeff();
      const double lse = std::log((logits.col(j).array() - peak).exp().sum()) + peak;
      total += lse - logits(labels[static_cast<std::size_t>(j)], j);
    }
    return total / static_cast<double>(logits.cols());
  }

  friend bool operator==(const ToyModel&, const ToyModel&) = default;

 private:
  // He-normal weights, zero biases.
  static Layer RandomLayer(Rng& rng, int out, int in) {
    Layer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    const double scale = std::sqrt(2.0 / in);
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
        layer.weights(r, c) = scale * rng.Normal();
      }
    }
    return layer;
  }

  std::vector<Layer> layers_;
};

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 0.1;
  int batch_size = 32;
  double momentum = 0.0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ToyModel model;
  std::vector<double> epoch_losses;  // mean minibatch loss per epoch
};

// Minibatch SGD (optionally with heavy-ball momentum) on softmax
// cross-entropy. The shuffle stream comes from cfg.seed, so the result is
// bit-reproducible for a given binary.
inline absl::StatusOr<TrainResult> Train(ToyModel model, const Eigen::MatrixXd& inputs,
                                         std::span<const int> labels,
                                         const TrainConfig& cfg) {
  const auto n = static_cast<std::size_t>(inputs.cols());
  if (n == 0 || labels.size() != n) {
    return absl::InvalidArgumentError("training data is empty or mislabeled");
  }
  if (cfg.epochs < 0 || !(cfg.learning_rate > 0) || cfg.batch_size <= 0 ||
      cfg.momentum < 0 || cfg.momentum >= 1) {
    return absl::InvalidArgumentError("invalid training hyperparameters");
  }
  if (inputs.rows() != model.input_dim()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "input dim ", inputs.rows(), " does not match model ", model.input_dim()));
  }
  for (int y : labels) {
    if (y < 0 || y >= model.num_classes()) {
      return absl::InvalidArgumentError(absl::StrCat("label ", y, " out of range"));
    }
  }
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<Layer> velocity;
  for (const Layer& l : model.layers()) {
    velocity.push_back({Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()),
                        Eigen::VectorXd::Zero(l.bias.size())});
  }
  TrainResult result;
  Eigen::MatrixXd batch_inputs;
  std::vector<int> batch_labels;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.Shuffle(order);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      batch_inputs.resize(inputs.rows(), static_cast<Eigen::Index>(end - start));
      batch_labels.resize(end - start);
      for (std::size_t k = start; k < end; ++k) {
        batch_inputs.col(static_cast<Eigen::Index>(k - start)) =
            inputs.col(static_cast<Eigen::Index>(order[k]));
        batch_labels[k - start] = labels[order[k]];
      }
      ToyModel::LossAndGradient lg = model.Backward(batch_inputs, batch_labels);
      if (!std::isfinite(lg.loss)) {
        return absl::InternalError(
            absl::StrCat("training diverged at epoch ", epoch, ": loss ", lg.loss));
      }
      loss_sum += lg.loss;
      ++batches;
      std::span<Layer> layers = model.mutable_layers();
      for (std::size_t i = 0; i < layers.size(); ++i) {
        velocity[i].weights = cfg.momentum * velocity[i].weights + lg.gradients[i].weights;
        velocity[i].bias = cfg.momentum * velocity[i].bias + lg.gradients[i].bias;
        layers[i].weights -= cfg.learning_rate * velocity[i].weights;
        layers[i].bias -= cfg.learning_rate * velocity[i].bias;
      }
    }
    const double epoch_loss = loss_sum / batches;
    if (!std::isfinite(epoch_loss)) {
      return absl::InternalError(absl::StrCat("training diverged at epoch ", epoch));
    }
    result.epoch_losses.push_back(epoch_loss);
  }
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint: 16-byte header (8-byte magic, u32 version, u32 layer count),
// then per layer u32 rows, u32 cols, rows*cols f64 weights row-major and rows
// f64 biases. All integers and floats little-endian.

inline constexpr std::array<char, 8> kCheckpointMagic = {'M', 'T', 'R', 'K',
                                                         'T', 'O', 'Y', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace model_internal {

inline void PutU32(std::vector<char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void PutF64(std::vector<char>& buf, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, sizeof v);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::vector<char>& buf) : buf_(buf) {}
  bool U32(std::uint32_t& v) {
    if (pos_ + 4 > buf_.size()) return false;
    v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return true;
  }
  bool F64(double& d) {
    if (pos_ + 8 > buf_.size()) return false;
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    std::memcpy(&d, &v, sizeof d);
    pos_ += 8;
    return true;
  }
  bool Done() const { return pos_ == buf_.size(); }

 private:
  const std::vector<char>& buf_;
  std::size_t pos_ = kCheckpointMagic.size();
};

}  // namespace model_internal

inline std::vector<char> SerializeModel(const ToyModel& model) {
  std::vector<char> buf(kCheckpointMagic.begin(), kCheckpointMagic.end());
  model_internal::PutU32(buf, kCheckpointVersion);
  model_internal::PutU32(buf, static_cast<std::uint32_t>(model.layers().size()));
  for (const Layer& l : model.layers()) {
    model_internal::PutU32(buf, static_cast<std::uint32_t>(l.weights.rows()));
    model_internal::PutU32(buf, static_cast<std::uint32_t>(l.weights.cols()));
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) {
        model_internal::PutF64(buf, l.weights(r, c));
      }
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) model_internal::PutF64(buf, l.bias(r));
  }
  return buf;
}

inline absl::StatusOr<ToyModel> DeserializeModel(const std::vector<char>& buf) {
  if (buf.size() < 16 || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(),
                                     buf.begin())) {
    return absl::DataLossError("not a model checkpoint");
  }
  model_internal::Reader reader(buf);
  std::uint32_t version = 0, count = 0;
  reader.U32(version);
  reader.U32(count);
  if (version != kCheckpointVersion) {
    return absl::UnimplementedError(absl::StrCat("checkpoint version ", version));
  }
  if (count == 0 || count > 2) {
    return absl::DataLossError(absl::StrCat("bad layer count ", count));
  }
  std::vector<Layer> layers(count);
  for (Layer& l : layers) {
    std::uint32_t rows = 0, cols = 0;
    if (!reader.U32(rows) || !reader.U32(cols) || rows == 0 || cols == 0 ||
        static_cast<std::uint64_t>(rows) * cols > buf.size()) {
      return absl::DataLossError("truncated checkpoint");
    }
    l.weights.resize(rows, cols);
    l.bias.resize(rows);
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) {
        if (!reader.F64(l.weights(r, c))) return absl::DataLossError("truncated checkpoint");
      }
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) {
      if (!reader.F64(l.bias(r))) return absl::DataLossError("truncated checkpoint");
    }
  }
  if (!reader.Done()) return absl::DataLossError("trailing bytes in checkpoint");
  return ToyModel::FromLayers(std::move(layers));
}

inline absl::Status SaveModel(const ToyModel& model, const std::filesystem::path& path) {
  const std::vector<char> buf = SerializeModel(model);
  std::ofstream out(path, std::ios::binary);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) return absl::UnavailableError(absl::StrCat("cannot write ", path.string()));
  return absl::OkStatus();
}

inline absl::StatusOr<ToyModel> LoadModel(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return absl::NotFoundError(absl::StrCat("cannot read ", path.string()));
  std::vector<char> buf((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  return DeserializeModel(buf);
}

}  // namespace marktrace::lab

#endif  // MARKTRACE_LAB_MODEL_H_
