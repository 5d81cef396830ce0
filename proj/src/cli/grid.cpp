#include <opencv2/imgproc.hpp>

#include "codeinv/cli.hpp"

namespace codeinv::cli {
namespace {

constexpr int kLabelBand = 14;  // pixels reserved above columns and left of rows
constexpr int kRowLabelWidth = 64;
const cv::Scalar kBackground(255, 255, 255);
const cv::Scalar kInk(0, 0, 0);

void put_label(cv::Mat& canvas, const std::string& text, cv::Rect box) {
  int baseline = 0;
  double scale = 0.8;
  cv::Size size = cv::getTextSize(text, cv::FONT_HERSHEY_PLAIN, scale, 1, &baseline);
  if (size.width > box.width) {
    scale *= static_cast<double>(box.width) / size.width;
    size = cv::getTextSize(text, cv::FONT_HERSHEY_PLAIN, scale, 1, &baseline);
  }
  const cv::Point origin(box.x + std::max(0, (box.width - size.width) / 2),
                         box.y + std::max(size.height, (box.height + size.height) / 2));
  cv::putText(canvas, text, origin, cv::FONT_HERSHEY_PLAIN, scale, kInk, 1, cv::LINE_8);
}

}  // namespace

Rgb8Image contact_sheet(const GridSpec& spec, std::span<const Rgb8Image> cells) {
  const std::size_t rows = spec.rows.size(), cols = spec.cols.size();
  if (rows == 0 || cols == 0) throw std::invalid_argument("grid needs at least one row and one column");
  if (cells.size() != rows * cols)
    throw std::invalid_argument("grid is " + std::to_string(rows) + "x" + std::to_string(cols) + " but got " +
                                std::to_string(cells.size()) + " images");
  if (spec.cell_width < 1 || spec.cell_height < 1) throw std::invalid_argument("grid cell size must be positive");
  if (spec.gap < 0) throw std::invalid_argument("grid gap must be non-negative");

  const int left = spec.labels ? kRowLabelWidth : 0;
  const int top = spec.labels ? kLabelBand : 0;
  const int width = left + static_cast<int>(cols) * (spec.cell_width + spec.gap) + spec.gap;
  const int height = top + static_cast<int>(rows) * (spec.cell_height + spec.gap) + spec.gap;
  cv::Mat canvas(height, width, CV_8UC3, kBackground);

  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      Rgb8Image cell = cells[r * cols + c];
      if (cell.width != spec.cell_width || cell.height != spec.cell_height)
        cell = resize(cell, spec.cell_width, spec.cell_height);
      const cv::Mat src(cell.height, cell.width, CV_8UC3, cell.rgb.data());
      const int x = left + spec.gap + static_cast<int>(c) * (spec.cell_width + spec.gap);
      const int y = top + spec.gap + static_cast<int>(r) * (spec.cell_height + spec.gap);
      src.copyTo(canvas(cv::Rect(x, y, spec.cell_width, spec.cell_height)));
    }
  }

  if (spec.labels) {
    for (std::size_t c = 0; c < cols; ++c) {
      const int x = left + spec.gap + static_cast<int>(c) * (spec.cell_width + spec.gap);
      put_label(canvas, spec.cols[c], cv::Rect(x, 0, spec.cell_width, kLabelBand));
    }
    for (std::size_t r = 0; r < rows; ++r) {
      const int y = top + spec.gap + static_cast<int>(r) * (spec.cell_height + spec.gap);
      put_label(canvas, spec.rows[r], cv::Rect(0, y, kRowLabelWidth, spec.cell_height));
    }
  }

  Rgb8Image out;
  out.width = width;
  out.height = height;
  out.rgb.assign(canvas.data, canvas.data + canvas.total() * canvas.elemSize());
  return out;
}

}  // namespace codeinv::cli
