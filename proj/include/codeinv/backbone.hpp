#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "codeinv/image.hpp"
#include "codeinv/layers.hpp"
#include "codeinv/tensor.hpp"

namespace codeinv {

/// Activation block of one layer for one image.
struct Code {
  LayerId layer;
  Tensor3 values;
  std::string source;  // which image or modifier produced it
};

using CodeMap = std::map<LayerId, Code>;
using CodeGradients = std::map<LayerId, Tensor3>;

/// Scalar function of layer codes. Must add d(loss)/d(code) into the zero-initialised
/// gradient tensors it is handed and return the loss.
using CodeLoss = std::function<double(const CodeMap& codes, CodeGradients& grads)>;

struct Evaluation {
  double loss = 0.0;
  Tensor3 gradient;  // same shape as the image
};

/// 3x3, stride 1, pad 1 convolution parameters. kernel is out x in x 3 x 3.
struct ConvParams {
  int out_channels = 0;
  int in_channels = 0;
  std::vector<double> kernel;
  std::vector<double> bias;
};

struct Layer {
  LayerId id;
  ConvParams conv;  // empty unless id.kind() == conv
};

/// Raised when a weights file does not describe the expected architecture.
class WeightsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed convolutional trunk. Immutable after construction, so one instance can be shared by
/// concurrent evaluations; every call owns its own scratch buffers.
class Backbone {
 public:
  Backbone(std::string name, std::vector<Layer> layers, Preprocess preprocess, std::string checksum = {});

  const std::string& name() const { return name_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const Preprocess& preprocess() const { return preprocess_; }
  /// SHA-256 of the weights file this backbone came from; empty for generated networks.
  const std::string& checksum() const { return checksum_; }

  int count(LayerKind kind) const;
  /// Total number of convolution filters (sum of output channels).
  int filter_count() const;
  bool has_layer(LayerId id) const;
  int channels(LayerId id) const;
  Shape3 output_shape(LayerId id, int height, int width) const;
  /// Smallest input height/width for which `id` is computed without losing spatial extent.
  int min_input_extent(LayerId id) const;

  /// One forward pass serving every requested layer.
  CodeMap extract_codes(const ImageBuffer& image, std::span<const LayerId> layers) const;

  /// Forward to the deepest requested layer, apply `loss`, back-propagate to the pixels.
  /// Network parameters are frozen; only the input gradient is formed.
  Evaluation evaluate(const ImageBuffer& image, std::span<const LayerId> layers, const CodeLoss& loss) const;

 private:
  std::size_t position(LayerId id) const;
  std::size_t deepest(std::span<const LayerId> layers, int height, int width) const;

  std::string name_;
  std::vector<Layer> layers_;
  Preprocess preprocess_;
  std::string checksum_;
};

/// Layer table of the VGG-19 trunk with empty parameters; conv entries carry channel counts.
std::vector<Layer> vgg19_layout();

/// Loads a trunk written by save_weights (or the torchvision converter) and checks it against
/// the VGG-19 layout. Throws std::runtime_error for I/O and WeightsError for a wrong layout.
Backbone load_backbone(const std::filesystem::path& weights_path);

/// Writes the conv parameters of `backbone` in the binary weights format.
void save_weights(const Backbone& backbone, const std::filesystem::path& path);

/// VGG-19 layout with He-normal weights drawn from `seed`. Stands in for the pretrained
/// network wherever only structure matters.
Backbone make_random_vgg19(std::uint64_t seed);

/// Small conv+relu network for numerical oracles. `widths` lists the output channels of
/// conv1_1, conv1_2 and conv2_1 (1 to 3 entries, each 1..8); a pool1 sits before conv2_1.
Backbone build_toy_backbone(std::uint64_t seed, std::vector<int> widths = {4, 6, 8});

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace codeinv
