#pragma once

#include <array>
#include <compare>
#include <string>
#include <string_view>
#include <vector>

namespace codeinv {

enum class LayerKind { conv, relu, pool };

std::string_view to_string(LayerKind kind);

/// Name of one layer of the VGG-19 convolutional trunk (conv*_*, relu*_*, pool*).
///
/// Ordered by depth, so a std::map keyed by LayerId iterates shallow to deep.
/// Construction from a string rejects anything outside the 37 trunk names.
class LayerId {
 public:
  static constexpr int kTrunkSize = 37;

  explicit LayerId(std::string_view name);

  /// Position in the VGG-19 trunk, 0 = conv1_1, 36 = pool5.
  static LayerId at_depth(int depth);
  static const std::vector<LayerId>& all();

  int depth() const { return depth_; }
  std::string_view name() const;
  std::string str() const { return std::string(name()); }
  LayerKind kind() const;
  /// 1-based block number (the digit after conv/relu/pool).
  int block() const;

  friend auto operator<=>(const LayerId&, const LayerId&) = default;

 private:
  explicit LayerId(int depth) : depth_(depth) {}
  int depth_ = 0;
};

/// Number of 3x3 convolutions in each VGG-19 block.
inline constexpr std::array<int, 5> kVgg19BlockConvs = {2, 2, 4, 4, 4};
/// Output channels of every convolution in each VGG-19 block.
inline constexpr std::array<int, 5> kVgg19BlockWidths = {64, 128, 256, 512, 512};

/// Parses a comma separated list such as "relu1_1,relu2_1".
std::vector<LayerId> parse_layer_list(std::string_view csv);

}  // namespace codeinv
