#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "codeinv/tensor.hpp"

namespace codeinv {

/// Per-channel constants subtracted from 0..255 RGB values before the network sees them.
struct Preprocess {
  std::array<double, 3> mean{123.68, 116.779, 103.939};

  friend bool operator==(const Preprocess&, const Preprocess&) = default;
};

/// 8-bit interleaved RGB raster, the on-disk side of every image.
struct Rgb8Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  std::uint8_t& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

/// A 3 x H x W image in model input space (mean-subtracted RGB).
struct ImageBuffer {
  Tensor3 pixels;
  Preprocess preprocess;
  std::string colorspace = "RGB";

  int height() const { return pixels.height(); }
  int width() const { return pixels.width(); }
};

/// Wraps preprocessed pixels, checking the 3-channel, non-empty layout.
ImageBuffer make_image(Tensor3 pixels, Preprocess preprocess = {});

ImageBuffer preprocess(const Rgb8Image& image, const Preprocess& pre);
/// Adds the means back, rounds and saturates to 0..255.
Rgb8Image deprocess(const ImageBuffer& image);

/// Lower and upper preprocessed value of channel c, i.e. [-mean, 255 - mean].
std::array<double, 2> pixel_range(const Preprocess& pre, int c);

/// Reads PNG or JPEG; throws std::runtime_error when unreadable.
Rgb8Image read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Rgb8Image& image);
/// Area-interpolated resize; throws std::invalid_argument for a zero-area target.
Rgb8Image resize(const Rgb8Image& image, int width, int height);

/// Target extent that keeps `image`'s aspect ratio while matching `area` pixels.
std::array<int, 2> area_matched_size(const Rgb8Image& image, long long area);

}  // namespace codeinv
