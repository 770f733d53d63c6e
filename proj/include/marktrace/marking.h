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

#ifndef MARKTRACE_MARKING_H_
#define MARKTRACE_MARKING_H_

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"
#include "marktrace/image.h"
#include "marktrace/perlin.h"
#include "marktrace/rng.h"
#include "marktrace/stripes.h"

namespace marktrace {

inline constexpr double kDefaultBlendRatio = 0.7;
inline constexpr double kDefaultDelta = 8.0 / 255.0;

// m * x + (1 - m) * ood, elementwise.
inline absl::StatusOr<Image> Blend(const Image& x, const Image& ood, double m) {
  if (!x.SameShape(ood)) {
    return absl::InvalidArgumentError(
        absl::StrCat("blend: shape mismatch ", x.height, "x", x.width, " vs ",
                     ood.height, "x", ood.width));
  }
  if (!(m >= 0.0 && m <= 1.0)) {
    return absl::InvalidArgumentError(
        absl::StrCat("blend ratio must be in [0, 1], got ", m));
  }
  Image out(x.height, x.width);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    out.data[i] = m * x.data[i] + (1.0 - m) * ood.data[i];
  }
  return out;
}

// delta * G, the additive perturbation before clamping.
inline ScalarField PerlinPerturbation(const PerlinParams& params,
                                      std::uint64_t seed, int height, int width) {
  ScalarField field = PerlinField(params, seed, height, width);
  for (double& v : field.values) v *= params.delta;
  return field;
}

// clamp(x + delta * G, 0, 1) with G replicated over the three channels.
inline absl::StatusOr<Image> InjectPerlin(const Image& x,
                                          const PerlinParams& params,
                                          std::uint64_t seed) {
  if (absl::Status s = ValidatePerlinParams(params); !s.ok()) return s;
  const ScalarField noise = PerlinPerturbation(params, seed, x.height, x.width);
  Image out(x.height, x.width);
  for (int y = 0; y < x.height; ++y) {
    for (int col = 0; col < x.width; ++col) {
      const double d = noise.at(y, col);
      for (int c = 0; c < Image::kChannels; ++c) {
        out.at(y, col, c) = std::clamp(x.at(y, col, c) + d, 0.0, 1.0);
      }
    }
  }
  return out;
}

enum class Ablation { kFull, kBlendOnly, kNoiseOnly, kNone };

inline std::string_view AblationName(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kBlendOnly: return "blend-only";
    case Ablation::kNoiseOnly: return "noise-only";
    case Ablation::kNone: return "none";
  }
  return "full";
}

inline absl::StatusOr<Ablation> ParseAblation(std::string_view name) {
  for (Ablation a : {Ablation::kFull, Ablation::kBlendOnly,
                     Ablation::kNoiseOnly, Ablation::kNone}) {
    if (AblationName(a) == name) return a;
  }
  return absl::InvalidArgumentError(absl::StrCat("unknown ablation '", std::string(name), "'"));
}

struct PerlinSpec {
  double delta = kDefaultDelta;
  // When absent, parameters are drawn per image from the image's stream.
  std::optional<PerlinParams> fixed;

  friend bool operator==(const PerlinSpec&, const PerlinSpec&) = default;
};

// Everything needed to reproduce a marking run. The OOD feature is, in order
// of precedence, an explicit stripe pattern, a pattern generated from
// stripe_seed, or an external OOD image. A blend ratio of exactly 1 skips
// blending; an absent perlin spec skips noise injection.
struct MarkSpec {
  std::optional<StripePattern> stripe;
  std::optional<std::uint64_t> stripe_seed;
  std::optional<std::string> ood_image;
  double blend_m = kDefaultBlendRatio;
  std::optional<PerlinSpec> perlin = PerlinSpec{};
  std::uint64_t master_seed = 0;

  bool blends() const { return blend_m != 1.0; }

  friend bool operator==(const MarkSpec&, const MarkSpec&) = default;
};

inline MarkSpec ApplyAblation(MarkSpec spec, Ablation ablation) {
  if (ablation == Ablation::kNoiseOnly || ablation == Ablation::kNone) {
    spec.blend_m = 1.0;
  }
  if (ablation == Ablation::kBlendOnly || ablation == Ablation::kNone) {
    spec.perlin.reset();
  }
  return spec;
}

inline absl::Status ValidateMarkSpec(const MarkSpec& spec) {
  if (!(spec.blend_m >= 0.0 && spec.blend_m <= 1.0)) {
    return absl::InvalidArgumentError(
        absl::StrCat("blend_m must be in [0, 1], got ", spec.blend_m));
  }
  if (spec.stripe) {
    if (absl::Status s = ValidateStripePattern(*spec.stripe); !s.ok()) return s;
  }
  if (spec.perlin) {
    if (!(spec.perlin->delta > 0) || spec.perlin->delta > 1) {
      return absl::InvalidArgumentError(
          absl::StrCat("delta must be in (0, 1], got ", spec.perlin->delta));
    }
    if (spec.perlin->fixed) {
      PerlinParams p = *spec.perlin->fixed;
      p.delta = spec.perlin->delta;
      if (absl::Status s = ValidatePerlinParams(p); !s.ok()) return s;
    }
  }
  return absl::OkStatus();
}

// Per-image record of every derived quantity.
struct ImageMarkRecord {
  std::string image_id;
  std::uint64_t image_seed = 0;
  std::optional<std::uint64_t> noise_seed;
  std::optional<PerlinParams> perlin;

  friend bool operator==(const ImageMarkRecord&, const ImageMarkRecord&) = default;
};

struct MarkResult {
  Image image;
  ImageMarkRecord record;
};

// Applies a resolved MarkSpec. Construct with Create(), which resolves the
// OOD feature (generating or loading it) once per run.
class Marker {
 public:
  static absl::StatusOr<Marker> Create(MarkSpec spec) {
    if (absl::Status s = ValidateMarkSpec(spec); !s.ok()) return s;
    Marker marker;
    if (spec.blends()) {
      if (!spec.stripe && spec.stripe_seed) {
        spec.stripe = RandomStripePattern(*spec.stripe_seed);
      }
      if (!spec.stripe) {
        if (!spec.ood_image) {
          return absl::FailedPreconditionError(
              "blending requested but no OOD feature (stripe pattern, stripe "
              "seed or OOD image) was given");
        }
        absl::StatusOr<Image> ood = LoadImage(*spec.ood_image);
        if (!ood.ok()) return ood.status();
        marker.ood_image_ = *std::move(ood);
      }
    }
    marker.spec_ = std::move(spec);
    return marker;
  }

  const MarkSpec& spec() const { return spec_; }

  absl::StatusOr<MarkResult> Mark(const Image& x, std::string_view image_id) const {
    MarkResult result;
    result.record.image_id = std::string(image_id);
    result.record.image_seed = DeriveSeed(spec_.master_seed, image_id);
    Image current = x;
    if (spec_.blends()) {
      absl::StatusOr<Image> ood = OodFeature(x.height, x.width);
      if (!ood.ok()) return ood.status();
      absl::StatusOr<Image> blended = Blend(current, *ood, spec_.blend_m);
      if (!blended.ok()) return blended.status();
      current = *std::move(blended);
    }
    if (spec_.perlin) {
      Rng rng(result.record.image_seed);
      PerlinParams params;
      if (spec_.perlin->fixed) {
        params = *spec_.perlin->fixed;
        params.delta = spec_.perlin->delta;
      } else {
        params = RandomPerlinParams(rng, spec_.perlin->delta);
      }
      const std::uint64_t noise_seed = rng.NextU64();
      absl::StatusOr<Image> noisy = InjectPerlin(current, params, noise_seed);
      if (!noisy.ok()) return noisy.status();
      current = *std::move(noisy);
      result.record.perlin = params;
      result.record.noise_seed = noise_seed;
    }
    result.image = std::move(current);
    return result;
  }

  // Marks a batch with up to `threads` workers. Output depends only on the
  // inputs, not on the worker count or scheduling.
  absl::StatusOr<std::vector<MarkResult>> MarkBatch(
      std::span<const Image> images, std::span<const std::string> ids,
      int threads = 1) const {
    if (images.size() != ids.size()) {
      return absl::InvalidArgumentError("MarkBatch: images/ids size mismatch");
    }
    std::vector<absl::StatusOr<MarkResult>> slots(images.size());
    const std::size_t workers = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::max(threads, 1)), 1,
        std::max<std::size_t>(images.size(), 1));
    auto work = [&](std::size_t first) {
      for (std::size_t i = first; i < images.size(); i += workers) {
        slots[i] = Mark(images[i], ids[i]);
      }
    };
    if (workers == 1) {
      work(0);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    }
    std::vector<MarkResult> out;
    out.reserve(slots.size());
    for (auto& slot : slots) {
      if (!slot.ok()) return slot.status();
      out.push_back(*std::move(slot));
    }
    return out;
  }

 private:
  Marker() = default;

  absl::StatusOr<Image> OodFeature(int height, int width) const {
    if (spec_.stripe) return RenderStripes(*spec_.stripe, height, width);
    if (!ood_image_.SameShape(Image(height, width))) {
      return absl::InvalidArgumentError(absl::StrCat(
          "OOD image is ", ood_image_.height, "x", ood_image_.width,
          ", target is ", height, "x", width));
    }
    return ood_image_;
  }

  MarkSpec spec_;
  Image ood_image_;
};

// ---------------------------------------------------------------------------
// Manifest serialization. nlohmann::json stores objects in sorted key order
// and prints doubles with round-trip precision, so dump() is canonical.

inline nlohmann::json PerlinParamsToJson(const PerlinParams& p) {
  return {{"wavelength_x", p.wavelength_x},
          {"wavelength_y", p.wavelength_y},
          {"octaves", p.octaves},
          {"sine_periodicity", p.sine_periodicity},
          {"delta", p.delta}};
}

inline nlohmann::json StripePatternToJson(const StripePattern& pattern) {
  nlohmann::json colors = nlohmann::json::array();
  for (std::uint8_t c : pattern.colors) colors.push_back(c);
  return colors;
}

inline nlohmann::json MarkSpecToJson(const MarkSpec& spec) {
  nlohmann::json j;
  j["palette_version"] = kPaletteVersion;
  j["seed_rule"] = std::string(kSeedRule);
  j["master_seed"] = spec.master_seed;
  j["blend_m"] = spec.blend_m;
  j["stripe"] = spec.stripe ? StripePatternToJson(*spec.stripe) : nlohmann::json();
  j["stripe_seed"] = spec.stripe_seed ? nlohmann::json(*spec.stripe_seed) : nlohmann::json();
  j["ood_image"] = spec.ood_image ? nlohmann::json(*spec.ood_image) : nlohmann::json();
  if (spec.perlin) {
    nlohmann::json perlin;
    perlin["delta"] = spec.perlin->delta;
    perlin["fixed"] = spec.perlin->fixed ? PerlinParamsToJson(*spec.perlin->fixed)
                                         : nlohmann::json();
    j["perlin"] = std::move(perlin);
  } else {
    j["perlin"] = nullptr;
  }
  return j;
}

namespace marking_internal {

template <typename T>
absl::StatusOr<T> Field(const nlohmann::json& j, std::string_view key) {
  auto it = j.find(key);
  if (it == j.end()) {
    return absl::InvalidArgumentError(absl::StrCat("missing field '", std::string(key), "'"));
  }
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    return absl::InvalidArgumentError(
        absl::StrCat("field '", std::string(key), "': ", e.what()));
  }
}

inline bool Present(const nlohmann::json& j, std::string_view key) {
  auto it = j.find(key);
  return it != j.end() && !it->is_null();
}

}  // namespace marking_internal

inline absl::StatusOr<PerlinParams> PerlinParamsFromJson(const nlohmann::json& j) {
  using marking_internal::Field;
  PerlinParams p;
  auto wx = Field<double>(j, "wavelength_x");
  auto wy = Field<double>(j, "wavelength_y");
  auto oct = Field<int>(j, "octaves");
  auto phi = Field<double>(j, "sine_periodicity");
  if (!wx.ok()) return wx.status();
  if (!wy.ok()) return wy.status();
  if (!oct.ok()) return oct.status();
  if (!phi.ok()) return phi.status();
  p.wavelength_x = *wx;
  p.wavelength_y = *wy;
  p.octaves = *oct;
  p.sine_periodicity = *phi;
  if (marking_internal::Present(j, "delta")) {
    auto delta = Field<double>(j, "delta");
    if (!delta.ok()) return delta.status();
    p.delta = *delta;
  }
  return p;
}

// Fields that are absent take their defaults; explicit nulls disable the
// corresponding optional component.
inline absl::StatusOr<MarkSpec> MarkSpecFromJson(const nlohmann::json& j) {
  using marking_internal::Field;
  using marking_internal::Present;
  if (!j.is_object()) return absl::InvalidArgumentError("mark spec must be an object");
  MarkSpec spec;
  if (Present(j, "palette_version")) {
    auto version = Field<int>(j, "palette_version");
    if (!version.ok()) return version.status();
    if (*version != kPaletteVersion) {
      return absl::InvalidArgumentError(
          absl::StrCat("unsupported palette_version ", *version));
    }
  }
  if (Present(j, "master_seed")) {
    auto seed = Field<std::uint64_t>(j, "master_seed");
    if (!seed.ok()) return seed.status();
    spec.master_seed = *seed;
  }
  if (Present(j, "blend_m")) {
    auto m = Field<double>(j, "blend_m");
    if (!m.ok()) return m.status();
    spec.blend_m = *m;
  }
  if (Present(j, "stripe")) {
    auto colors = Field<std::vector<int>>(j, "stripe");
    if (!colors.ok()) return colors.status();
    if (colors->size() != kNumStripes) {
      return absl::InvalidArgumentError(
          absl::StrCat("stripe needs ", kNumStripes, " entries, got ", colors->size()));
    }
    StripePattern pattern;
    for (int i = 0; i < kNumStripes; ++i) {
      if ((*colors)[i] < 0 || (*colors)[i] >= kPaletteSize) {
        return absl::InvalidArgumentError(
            absl::StrCat("stripe color index ", (*colors)[i], " outside palette"));
      }
      pattern.colors[i] = static_cast<std::uint8_t>((*colors)[i]);
    }
    spec.stripe = pattern;
  }
  if (Present(j, "stripe_seed")) {
    auto seed = Field<std::uint64_t>(j, "stripe_seed");
    if (!seed.ok()) return seed.status();
    spec.stripe_seed = *seed;
  }
  if (Present(j, "ood_image")) {
    auto path = Field<std::string>(j, "ood_image");
    if (!path.ok()) return path.status();
    spec.ood_image = *path;
  }
  if (j.contains("perlin")) {
    const nlohmann::json& pj = j.at("perlin");
    if (pj.is_null()) {
      spec.perlin.reset();
    } else {
      PerlinSpec perlin;
      if (Present(pj, "delta")) {
        auto delta = Field<double>(pj, "delta");
        if (!delta.ok()) return delta.status();
        perlin.delta = *delta;
      }
      if (Present(pj, "fixed")) {
        auto fixed = PerlinParamsFromJson(pj.at("fixed"));
        if (!fixed.ok()) return fixed.status();
        perlin.fixed = *fixed;
      }
      spec.perlin = perlin;
    }
  }
  if (absl::Status s = ValidateMarkSpec(spec); !s.ok()) return s;
  return spec;
}

inline nlohmann::json ImageMarkRecordToJson(const ImageMarkRecord& r) {
  nlohmann::json j;
  j["image_id"] = r.image_id;
  j["image_seed"] = r.image_seed;
  j["noise_seed"] = r.noise_seed ? nlohmann::json(*r.noise_seed) : nlohmann::json();
  j["perlin"] = r.perlin ? PerlinParamsToJson(*r.perlin) : nlohmann::json();
  return j;
}

// Manifest for one marking run: the resolved spec plus one entry per image.
inline nlohmann::json MarkManifestToJson(const MarkSpec& resolved,
                                         std::span<const ImageMarkRecord> records) {
  nlohmann::json j;
  j["spec"] = MarkSpecToJson(resolved);
  nlohmann::json images = nlohmann::json::array();
  for (const auto& r : records) images.push_back(ImageMarkRecordToJson(r));
  j["images"] = std::move(images);
  return j;
}

}  // namespace marktrace

#endif  // MARKTRACE_MARKING_H_
