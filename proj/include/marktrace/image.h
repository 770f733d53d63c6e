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

#ifndef MARKTRACE_IMAGE_H_
#define MARKTRACE_IMAGE_H_

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"

namespace marktrace {

// H x W x 3 raster of intensities in [0, 1], row-major, channels interleaved.
struct Image {
  static constexpr int kChannels = 3;

  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h),
        width(w),
        data(static_cast<std::size_t>(h) * w * kChannels, fill) {}

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * kChannels + c;
  }
  double& at(int y, int x, int c) { return data[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data[index(y, x, c)]; }

  std::size_t size() const { return data.size(); }
  bool SameShape(const Image& other) const {
    return height == other.height && width == other.width;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

inline std::uint8_t QuantizeToByte(double v) {
  const double scaled = std::round(v * 255.0);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

namespace image_internal {

inline constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G',
                                                  0x0D, 0x0A, 0x1A, 0x0A};

inline bool HasPngSignature(const std::vector<std::uint8_t>& bytes) {
  return bytes.size() >= 8 && std::equal(std::begin(kPngSignature),
                                         std::end(kPngSignature), bytes.begin());
}

inline absl::StatusOr<Image> DecodePng(const std::vector<std::uint8_t>& bytes,
                                       const std::string& name) {
  // IHDR is always the first chunk: 8-byte signature, 4-byte length, "IHDR",
  // width, height, then bit depth and color type.
  if (bytes.size() < 33 || std::string(bytes.begin() + 12, bytes.begin() + 16) != "IHDR") {
    return absl::DataLossError(absl::StrCat(name, ": truncated PNG header"));
  }
  const int bit_depth = bytes[24];
  const int color_type = bytes[25];
  if (bit_depth != 8) {
    return absl::UnimplementedError(
        absl::StrCat(name, ": unsupported PNG bit depth ", bit_depth));
  }
  if (color_type != 0 && color_type != 2 && color_type != 3 &&
      color_type != 4 && color_type != 6) {
    return absl::DataLossError(
        absl::StrCat(name, ": invalid PNG color type ", color_type));
  }

  png_image png;
  std::fill_n(reinterpret_cast<char*>(&png), sizeof(png), 0);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    std::string message = png.message;
    png_image_free(&png);
    return absl::DataLossError(absl::StrCat(name, ": ", message));
  }
  // Reading into RGBA keeps 8-bit samples verbatim; alpha is dropped below.
  png.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, rgba.data(), 0, nullptr)) {
    std::string message = png.message;
    png_image_free(&png);
    return absl::DataLossError(absl::StrCat(name, ": ", message));
  }
  Image img(static_cast<int>(png.height), static_cast<int>(png.width));
  const std::size_t pixels = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t p = 0; p < pixels; ++p) {
    for (int c = 0; c < Image::kChannels; ++c) {
      img.data[p * 3 + c] = rgba[p * 4 + c] / 255.0;
    }
  }
  return img;
}

// Binary PPM (P6) with maxval 255. Comments in the header are skipped.
inline absl::StatusOr<Image> DecodePpm(const std::vector<std::uint8_t>& bytes,
                                       const std::string& name) {
  std::size_t pos = 2;
  auto next_token = [&]() -> long {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    long value = -1;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = (value < 0 ? 0 : value * 10) + (bytes[pos] - '0');
      if (value > (1L << 24)) return -1;
      ++pos;
    }
    return value;
  };
  const long width = next_token();
  const long height = next_token();
  const long maxval = next_token();
  if (width <= 0 || height <= 0 || maxval <= 0 || pos >= bytes.size() ||
      !std::isspace(bytes[pos])) {
    return absl::DataLossError(absl::StrCat(name, ": malformed PPM header"));
  }
  if (maxval != 255) {
    return absl::UnimplementedError(
        absl::StrCat(name, ": unsupported PPM maxval ", maxval));
  }
  ++pos;
  const std::size_t count = static_cast<std::size_t>(width) * height * 3;
  if (bytes.size() - pos < count) {
    return absl::DataLossError(absl::StrCat(name, ": truncated PPM payload"));
  }
  Image img(static_cast<int>(height), static_cast<int>(width));
  for (std::size_t i = 0; i < count; ++i) img.data[i] = bytes[pos + i] / 255.0;
  return img;
}

inline std::vector<std::uint8_t> ToBytes(const Image& img) {
  std::vector<std::uint8_t> bytes(img.size());
  std::transform(img.data.begin(), img.data.end(), bytes.begin(), QuantizeToByte);
  return bytes;
}

}  // namespace image_internal

// Loads an 8-bit PNG (gray, RGB, palette, with or without alpha) or a binary
// PPM. Error codes: NOT_FOUND when the file cannot be read, UNIMPLEMENTED for
// an unsupported bit depth, INVALID_ARGUMENT when the payload is not an image,
// DATA_LOSS for a corrupt image.
inline absl::StatusOr<Image> LoadImage(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    return absl::NotFoundError(absl::StrCat("cannot read ", path.string()));
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) {
    return absl::NotFoundError(absl::StrCat("cannot read ", path.string()));
  }
  if (image_internal::HasPngSignature(bytes)) {
    return image_internal::DecodePng(bytes, path.string());
  }
  if (bytes.size() >= 3 && bytes[0] == 'P' && bytes[1] == '6' &&
      std::isspace(bytes[2])) {
    return image_internal::DecodePpm(bytes, path.string());
  }
  return absl::InvalidArgumentError(
      absl::StrCat(path.string(), ": not a PNG or P6 PPM file"));
}

// Writes an 8-bit RGB PNG; each intensity becomes round(v * 255) clamped.
inline absl::Status SaveImage(const Image& img, const std::filesystem::path& path) {
  if (img.height <= 0 || img.width <= 0) {
    return absl::InvalidArgumentError("cannot save an empty image");
  }
  std::vector<std::uint8_t> bytes = image_internal::ToBytes(img);
  png_image png;
  std::fill_n(reinterpret_cast<char*>(&png), sizeof(png), 0);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    std::string message = png.message;
    png_image_free(&png);
    return absl::UnavailableError(
        absl::StrCat("cannot write ", path.string(), ": ", message));
  }
  return absl::OkStatus();
}

// Binary PPM writer, used for byte-exact fixtures.
inline absl::Status SavePpm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    return absl::UnavailableError(absl::StrCat("cannot write ", path.string()));
  }
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<std::uint8_t> bytes = image_internal::ToBytes(img);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    return absl::UnavailableError(absl::StrCat("cannot write ", path.string()));
  }
  return absl::OkStatus();
}

inline absl::StatusOr<double> Mse(const Image& a, const Image& b) {
  if (!a.SameShape(b)) {
    return absl::InvalidArgumentError(
        absl::StrCat("mse: shape mismatch ", a.height, "x", a.width, " vs ",
                     b.height, "x", b.width));
  }
  if (a.data.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.data.size());
}

// SSIM with an 8x8 uniform window at stride 1, C1 = 0.01^2 and C2 = 0.03^2
// for unit dynamic range. Local maps are averaged per channel, then the three
// channel scores are averaged.
inline constexpr int kSsimWindow = 8;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

inline absl::StatusOr<double> Ssim(const Image& a, const Image& b) {
  if (!a.SameShape(b)) {
    return absl::InvalidArgumentError(
        absl::StrCat("ssim: shape mismatch ", a.height, "x", a.width, " vs ",
                     b.height, "x", b.width));
  }
  if (std::min(a.height, a.width) < kSsimWindow) {
    return absl::InvalidArgumentError(absl::StrCat(
        "ssim: image ", a.height, "x", a.width, " smaller than the ",
        kSsimWindow, "x", kSsimWindow, " window"));
  }
  constexpr double n = kSsimWindow * kSsimWindow;
  const int rows = a.height - kSsimWindow + 1;
  const int cols = a.width - kSsimWindow + 1;
  double total = 0.0;
  for (int c = 0; c < Image::kChannels; ++c) {
    double channel_sum = 0.0;
    for (int y0 = 0; y0 < rows; ++y0) {
      for (int x0 = 0; x0 < cols; ++x0) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (int y = y0; y < y0 + kSsimWindow; ++y) {
          for (int x = x0; x < x0 + kSsimWindow; ++x) {
            const double va = a.at(y, x, c);
            const double vb = b.at(y, x, c);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        }
        const double mu_a = sa / n;
        const double mu_b = sb / n;
        const double var_a = std::max(0.0, saa / n - mu_a * mu_a);
        const double var_b = std::max(0.0, sbb / n - mu_b * mu_b);
        const double cov = sab / n - mu_a * mu_b;
        channel_sum += ((2 * mu_a * mu_b + kSsimC1) * (2 * cov + kSsimC2)) /
                       ((mu_a * mu_a + mu_b * mu_b + kSsimC1) *
                        (var_a + var_b + kSsimC2));
      }
    }
    total += channel_sum / (static_cast<double>(rows) * cols);
  }
  return total / Image::kChannels;
}

// Area-average downsampling to (out_height, out_width). Each output pixel is
// the mean of the input pixels its footprint covers, weighted by overlap.
inline Image ResizeArea(const Image& src, int out_height, int out_width) {
  Image dst(out_height, out_width);
  const double sy = static_cast<double>(src.height) / out_height;
  const double sx = static_cast<double>(src.width) / out_width;
  for (int oy = 0; oy < out_height; ++oy) {
    const double y_lo = oy * sy, y_hi = (oy + 1) * sy;
    for (int ox = 0; ox < out_width; ++ox) {
      const double x_lo = ox * sx, x_hi = (ox + 1) * sx;
      double acc[3] = {0, 0, 0};
      double weight = 0;
      for (int y = static_cast<int>(y_lo); y < src.height && y < y_hi; ++y) {
        const double wy = std::min<double>(y + 1, y_hi) - std::max<double>(y, y_lo);
        if (wy <= 0) continue;
        for (int x = static_cast<int>(x_lo); x < src.width && x < x_hi; ++x) {
          const double wx = std::min<double>(x + 1, x_hi) - std::max<double>(x, x_lo);
          if (wx <= 0) continue;
          for (int c = 0; c < 3; ++c) acc[c] += wy * wx * src.at(y, x, c);
          weight += wy * wx;
        }
      }
      for (int c = 0; c < 3; ++c) dst.at(oy, ox, c) = acc[c] / weight;
    }
  }
  return dst;
}

}  // namespace marktrace

#endif  // MARKTRACE_IMAGE_H_
