#include "codeinv/codeops.hpp"

#include <numeric>
#include <random>
#include <stdexcept>

#include <Eigen/Core>

namespace codeinv {

Tensor3 channel_sum_map(const Code& code) {
  const Tensor3& x = code.values;
  Tensor3 out(Shape3{1, x.height(), x.width()});
  auto dst = out.values();
  for (int c = 0; c < x.channels(); ++c) {
    const auto src = x.channel(c);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  return out;
}

Code fmi_modify(const Code& code, int l) {
  if (l < 0 || l >= code.values.channels())
    throw std::out_of_range("filter " + std::to_string(l) + " out of range for " + code.layer.str() + " with " +
                            std::to_string(code.values.channels()) + " channels");
  Code out{code.layer, Tensor3(code.values.shape()), "fmi(" + code.source + ", " + std::to_string(l) + ")"};
  const Tensor3 sums = channel_sum_map(code);
  const auto src = sums.values();
  std::copy(src.begin(), src.end(), out.values.channel(l).begin());
  return out;
}

RealloVector sample_simplex(int channels, std::uint64_t seed) {
  if (channels < 1) throw std::invalid_argument("simplex dimension must be at least 1");
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> exponential(1.0);
  RealloVector out{std::vector<double>(channels), seed};
  for (double& x : out.v) x = exponential(rng);
  const double total = std::accumulate(out.v.begin(), out.v.end(), 0.0);
  for (double& x : out.v) x /= total;
  return out;
}

Reallocation random_reallocate(const Code& code, const RealloVector& v) {
  const Tensor3& x = code.values;
  if (static_cast<int>(v.v.size()) != x.channels())
    throw std::invalid_argument("reallocation vector has " + std::to_string(v.v.size()) + " entries, " +
                                code.layer.str() + " has " + std::to_string(x.channels()) + " channels");
  std::vector<double> totals(x.channels());
  for (int c = 0; c < x.channels(); ++c) {
    const auto ch = x.channel(c);
    totals[c] = std::accumulate(ch.begin(), ch.end(), 0.0);
  }
  const double grand = std::accumulate(totals.begin(), totals.end(), 0.0);
  const double eps = kDegenerateChannelFraction * grand;

  Reallocation out{Code{code.layer, Tensor3(x.shape()), "realloc(" + code.source + ", seed " + std::to_string(v.seed) + ")"},
                   {}};
  for (int c = 0; c < x.channels(); ++c) {
    if (!(totals[c] > eps)) {
      out.degenerate_channels.push_back(c);
      continue;
    }
    const double scale = v.v[c] / totals[c] * grand;
    const auto src = x.channel(c);
    auto dst = out.code.values.channel(c);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * scale;
  }
  return out;
}

RealloVector energy_shares(const Code& code) {
  const StyleDescriptor d = style_descriptor(code);
  const double grand = std::accumulate(d.sums.begin(), d.sums.end(), 0.0);
  RealloVector out{d.sums, 0};
  if (grand > 0.0)
    for (double& x : out.v) x /= grand;
  return out;
}

StyleDescriptor style_descriptor(const Code& code) {
  StyleDescriptor d{code.layer, std::vector<double>(code.values.channels()), code.values.shape().plane()};
  for (int c = 0; c < code.values.channels(); ++c) {
    const auto ch = code.values.channel(c);
    d.sums[c] = std::accumulate(ch.begin(), ch.end(), 0.0);
  }
  return d;
}

GramDescriptor gram_descriptor(const Code& code) {
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const int c = code.values.channels();
  const auto plane = static_cast<Eigen::Index>(code.values.shape().plane());
  GramDescriptor d{code.layer, c, std::vector<double>(static_cast<std::size_t>(c) * c), code.values.shape().plane()};
  const Eigen::Map<const RowMatrix> f(code.values.data(), c, plane);
  Eigen::Map<RowMatrix> g(d.matrix.data(), c, c);
  g.noalias() = f * f.transpose();
  // the product is symmetric in exact arithmetic; make it so bit-for-bit
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < i; ++j) g(j, i) = g(i, j);
  return d;
}

void to_json(nlohmann::json& j, const RealloVector& v) { j = {{"v", v.v}, {"seed", v.seed}}; }

void to_json(nlohmann::json& j, const StyleDescriptor& d) {
  j = {{"layer", d.layer.str()}, {"kind", "channel_sum"}, {"sums", d.sums}, {"spatial_size", d.spatial_size}};
}

void to_json(nlohmann::json& j, const GramDescriptor& d) {
  j = {{"layer", d.layer.str()},
       {"kind", "gram"},
       {"channels", d.channels},
       {"matrix", d.matrix},
       {"spatial_size", d.spatial_size}};
}

void to_json(nlohmann::json& j, const CodeModifier& m) {
  std::visit(
      [&j](const auto& mod) {
        using T = std::decay_t<decltype(mod)>;
        if constexpr (std::is_same_v<T, FmiModifier>)
          j = {{"kind", "fmi"}, {"channel", mod.channel}};
        else
          j = {{"kind", "reallocation"}, {"v", mod.vector.v}, {"seed", mod.vector.seed}};
      },
      m);
}

RealloVector reallo_vector_from_json(const nlohmann::json& j) {
  return RealloVector{j.at("v").get<std::vector<double>>(), j.at("seed").get<std::uint64_t>()};
}

}  // namespace codeinv
