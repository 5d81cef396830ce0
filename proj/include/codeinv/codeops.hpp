#pragma once

// Pure code-space operators. None of them mutates its inputs.

#include <cstdint>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "codeinv/backbone.hpp"

namespace codeinv {

/// Non-negative weights summing to one, one per channel.
struct RealloVector {
  std::vector<double> v;
  std::uint64_t seed = 0;
};

/// Per-channel energy (sum over all spatial positions) of a code.
struct StyleDescriptor {
  LayerId layer;
  std::vector<double> sums;
  std::size_t spatial_size = 0;  // M*N of the source code
};

/// Inner products of flattened channels.
struct GramDescriptor {
  LayerId layer;
  int channels = 0;
  std::vector<double> matrix;  // channels x channels, row-major
  std::size_t spatial_size = 0;

  double at(int i, int j) const { return matrix[static_cast<std::size_t>(i) * channels + j]; }
};

/// Enhances one feature map to the channel-sum map and zeroes the rest.
struct FmiModifier {
  int channel = 0;
};

/// Redistributes channel energies according to a simplex vector.
struct ReallocationModifier {
  RealloVector vector;
};

using CodeModifier = std::variant<FmiModifier, ReallocationModifier>;

/// 1 x M x N map of channel sums at each position.
Tensor3 channel_sum_map(const Code& code);

/// Channel l becomes the channel-sum map, every other channel is zero.
/// Throws std::out_of_range unless 0 <= l < C.
Code fmi_modify(const Code& code, int l);

/// Flat Dirichlet draw (normalised exponential variates). Throws for C < 1.
RealloVector sample_simplex(int channels, std::uint64_t seed);

struct Reallocation {
  Code code;
  /// Channels whose input total fell under the epsilon guard; they stay zero and
  /// the energy v assigned to them is dropped.
  std::vector<int> degenerate_channels;
};

/// Relative threshold under which a channel total counts as zero.
inline constexpr double kDegenerateChannelFraction = 1e-12;

/// Scales channel c so its total becomes v_c times the grand total of the code.
/// Throws std::invalid_argument when v and the code disagree on channel count.
Reallocation random_reallocate(const Code& code, const RealloVector& v);

/// The reallocation vector that reproduces `code` exactly: each channel's share of the total.
RealloVector energy_shares(const Code& code);

StyleDescriptor style_descriptor(const Code& code);
GramDescriptor gram_descriptor(const Code& code);

void to_json(nlohmann::json& j, const RealloVector& v);
void to_json(nlohmann::json& j, const StyleDescriptor& d);
void to_json(nlohmann::json& j, const GramDescriptor& d);
void to_json(nlohmann::json& j, const CodeModifier& m);
RealloVector reallo_vector_from_json(const nlohmann::json& j);

}  // namespace codeinv
