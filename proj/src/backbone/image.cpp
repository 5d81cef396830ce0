#include "codeinv/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace codeinv {
namespace {

cv::Mat to_mat(const Rgb8Image& image) {
  cv::Mat rgb(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.rgb.data()));
  return rgb;
}

Rgb8Image from_rgb_mat(const cv::Mat& rgb) {
  Rgb8Image out;
  out.width = rgb.cols;
  out.height = rgb.rows;
  out.rgb.resize(static_cast<std::size_t>(rgb.cols) * rgb.rows * 3);
  for (int y = 0; y < rgb.rows; ++y)
    std::copy_n(rgb.ptr<std::uint8_t>(y), rgb.cols * 3, out.rgb.begin() + static_cast<std::ptrdiff_t>(y) * rgb.cols * 3);
  return out;
}

}  // namespace

ImageBuffer make_image(Tensor3 pixels, Preprocess preprocess) {
  if (pixels.channels() != 3) throw std::invalid_argument("image must have 3 channels, got " + pixels.shape().str());
  if (pixels.height() < 1 || pixels.width() < 1) throw std::invalid_argument("image has zero extent");
  return ImageBuffer{std::move(pixels), preprocess, "RGB"};
}

ImageBuffer preprocess(const Rgb8Image& image, const Preprocess& pre) {
  Tensor3 pixels(Shape3{3, image.height, image.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) pixels.at(c, y, x) = image.at(y, x, c) - pre.mean[c];
  return make_image(std::move(pixels), pre);
}

Rgb8Image deprocess(const ImageBuffer& image) {
  Rgb8Image out;
  out.width = image.width();
  out.height = image.height();
  out.rgb.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        const double v = std::round(image.pixels.at(c, y, x) + image.preprocess.mean[c]);
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
  return out;
}

std::array<double, 2> pixel_range(const Preprocess& pre, int c) { return {-pre.mean[c], 255.0 - pre.mean[c]}; }

Rgb8Image read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read image '" + path.string() + "'");
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return from_rgb_mat(rgb);
}

void write_png(const std::filesystem::path& path, const Rgb8Image& image) {
  cv::Mat bgr;
  cv::cvtColor(to_mat(image), bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr, {cv::IMWRITE_PNG_COMPRESSION, 6}))
    throw std::runtime_error("cannot write '" + path.string() + "'");
}

Rgb8Image resize(const Rgb8Image& image, int width, int height) {
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("degenerate resize target " + std::to_string(width) + "x" + std::to_string(height));
  if (width == image.width && height == image.height) return image;
  cv::Mat out;
  const bool shrinking = width < image.width && height < image.height;
  cv::resize(to_mat(image), out, cv::Size(width, height), 0, 0, shrinking ? cv::INTER_AREA : cv::INTER_CUBIC);
  return from_rgb_mat(out);
}

std::array<int, 2> area_matched_size(const Rgb8Image& image, long long area) {
  if (image.width <= 0 || image.height <= 0 || area <= 0) throw std::invalid_argument("zero-area resize");
  const double scale = std::sqrt(static_cast<double>(area) / (static_cast<double>(image.width) * image.height));
  const int w = static_cast<int>(std::lround(image.width * scale));
  const int h = static_cast<int>(std::lround(image.height * scale));
  if (w <= 0 || h <= 0) throw std::invalid_argument("zero-area resize");
  return {w, h};
}

}  // namespace codeinv
