#include "codeinv/tensor.hpp"

#include <algorithm>
#include <numeric>

namespace codeinv {

std::string Shape3::str() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

Tensor3::Tensor3(Shape3 shape, double fill) : shape_(shape) {
  if (shape.channels < 0 || shape.height < 0 || shape.width < 0)
    throw std::invalid_argument("negative tensor extent " + shape.str());
  data_.assign(shape.size(), fill);
}

Tensor3::Tensor3(Shape3 shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape.size())
    throw std::invalid_argument("tensor of shape " + shape.str() + " given " +
                                std::to_string(data_.size()) + " values");
}

std::span<double> Tensor3::channel(int c) {
  return std::span<double>(data_).subspan(static_cast<std::size_t>(c) * shape_.plane(), shape_.plane());
}

std::span<const double> Tensor3::channel(int c) const {
  return std::span<const double>(data_).subspan(static_cast<std::size_t>(c) * shape_.plane(),
                                                shape_.plane());
}

void Tensor3::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor3::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor3::squared_norm() const {
  return std::inner_product(data_.begin(), data_.end(), data_.begin(), 0.0);
}

}  // namespace codeinv
