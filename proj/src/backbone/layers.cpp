#include "codeinv/layers.hpp"

#include <algorithm>
#include <stdexcept>

namespace codeinv {
namespace {

struct TrunkEntry {
  std::string name;
  LayerKind kind;
  int block;
};

std::vector<TrunkEntry> make_trunk() {
  std::vector<TrunkEntry> trunk;
  for (int b = 0; b < static_cast<int>(kVgg19BlockConvs.size()); ++b) {
    const std::string block = std::to_string(b + 1);
    for (int i = 1; i <= kVgg19BlockConvs[b]; ++i) {
      const std::string suffix = block + "_" + std::to_string(i);
      trunk.push_back({"conv" + suffix, LayerKind::conv, b + 1});
      trunk.push_back({"relu" + suffix, LayerKind::relu, b + 1});
    }
    trunk.push_back({"pool" + block, LayerKind::pool, b + 1});
  }
  return trunk;
}

const std::vector<TrunkEntry>& trunk() {
  static const std::vector<TrunkEntry> table = make_trunk();
  return table;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::pool: return "pool";
  }
  return "?";
}

LayerId::LayerId(std::string_view name) {
  const auto& table = trunk();
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table[i].name == name) {
      depth_ = static_cast<int>(i);
      return;
    }
  }
  throw std::invalid_argument("unknown layer '" + std::string(name) + "'");
}

LayerId LayerId::at_depth(int depth) {
  if (depth < 0 || depth >= kTrunkSize)
    throw std::out_of_range("layer depth " + std::to_string(depth) + " outside the trunk");
  return LayerId(depth);
}

const std::vector<LayerId>& LayerId::all() {
  static const std::vector<LayerId> ids = [] {
    std::vector<LayerId> out;
    for (int i = 0; i < kTrunkSize; ++i) out.push_back(LayerId(i));
    return out;
  }();
  return ids;
}

std::string_view LayerId::name() const { return trunk()[depth_].name; }
LayerKind LayerId::kind() const { return trunk()[depth_].kind; }
int LayerId::block() const { return trunk()[depth_].block; }

std::vector<LayerId> parse_layer_list(std::string_view csv) {
  std::vector<LayerId> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto end = std::min(csv.find(',', start), csv.size());
    auto token = csv.substr(start, end - start);
    while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
    while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
    if (!token.empty()) out.emplace_back(token);
    start = end + 1;
  }
  return out;
}

}  // namespace codeinv
