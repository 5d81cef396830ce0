#include "codeinv/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <Eigen/Core>
#include <openssl/evp.h>

namespace codeinv {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

constexpr char kMagic[8] = {'C', 'I', 'N', 'V', 'W', 'T', 'S', '1'};

// Unrolls every 3x3 neighbourhood (zero padded) into a column: (in*9) x (h*w).
RowMatrix im2col(const Tensor3& in) {
  const int h = in.height(), w = in.width();
  RowMatrix col = RowMatrix::Zero(static_cast<Eigen::Index>(in.channels()) * 9, static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < in.channels(); ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        double* row = col.row((c * 3 + ky) * 3 + kx).data();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
          const double* src = in.channel(c).data() + static_cast<std::size_t>(sy) * w;
          double* dst = row + static_cast<std::size_t>(y) * w;
          for (int x = x0; x < x1; ++x) dst[x] = src[x + kx - 1];
        }
      }
  return col;
}

void col2im(const RowMatrix& col, Tensor3& out) {
  const int h = out.height(), w = out.width();
  for (int c = 0; c < out.channels(); ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = col.row((c * 3 + ky) * 3 + kx).data();
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
          double* dst = out.channel(c).data() + static_cast<std::size_t>(sy) * w;
          const double* src = row + static_cast<std::size_t>(y) * w;
          for (int x = x0; x < x1; ++x) dst[x + kx - 1] += src[x];
        }
      }
}

Tensor3 conv_forward(const Tensor3& in, const ConvParams& p) {
  const RowMatrix col = im2col(in);
  Tensor3 out(Shape3{p.out_channels, in.height(), in.width()});
  const ConstMatrixMap kernel(p.kernel.data(), p.out_channels, static_cast<Eigen::Index>(p.in_channels) * 9);
  MatrixMap result(out.data(), p.out_channels, static_cast<Eigen::Index>(in.shape().plane()));
  result.noalias() = kernel * col;
  for (int o = 0; o < p.out_channels; ++o) result.row(o).array() += p.bias[o];
  return out;
}

Tensor3 conv_backward(const Tensor3& grad_out, const ConvParams& p) {
  const ConstMatrixMap kernel(p.kernel.data(), p.out_channels, static_cast<Eigen::Index>(p.in_channels) * 9);
  const ConstMatrixMap g(grad_out.data(), p.out_channels, static_cast<Eigen::Index>(grad_out.shape().plane()));
  const RowMatrix col = kernel.transpose() * g;
  Tensor3 grad_in(Shape3{p.in_channels, grad_out.height(), grad_out.width()});
  col2im(col, grad_in);
  return grad_in;
}

Tensor3 relu_forward(Tensor3 in) {
  for (double& v : in.values()) v = v > 0.0 ? v : 0.0;
  return in;
}

Tensor3 relu_backward(Tensor3 grad_out, const Tensor3& out) {
  auto g = grad_out.values();
  const auto o = out.values();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(o[i] > 0.0)) g[i] = 0.0;
  return grad_out;
}

// 2x2 stride-2 max pooling with ceil-mode output extent; argmax holds flat input indices.
Tensor3 pool_forward(const Tensor3& in, std::vector<std::size_t>& argmax) {
  const int oh = (in.height() + 1) / 2, ow = (in.width() + 1) / 2;
  Tensor3 out(Shape3{in.channels(), oh, ow});
  argmax.resize(out.size());
  std::size_t k = 0;
  for (int c = 0; c < in.channels(); ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x, ++k) {
        double best = -INFINITY;
        std::size_t best_index = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int sy = 2 * y + dy, sx = 2 * x + dx;
            if (sy >= in.height() || sx >= in.width()) continue;
            const double v = in.at(c, sy, sx);
            if (v > best) {
              best = v;
              best_index = (static_cast<std::size_t>(c) * in.height() + sy) * in.width() + sx;
            }
          }
        out.values()[k] = best;
        argmax[k] = best_index;
      }
  return out;
}

Tensor3 pool_backward(const Tensor3& grad_out, Shape3 in_shape, const std::vector<std::size_t>& argmax) {
  Tensor3 grad_in(in_shape);
  const auto g = grad_out.values();
  auto dst = grad_in.values();
  for (std::size_t k = 0; k < g.size(); ++k) dst[argmax[k]] += g[k];
  return grad_in;
}

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw WeightsError("weights file truncated reading " + what);
  return value;
}

std::vector<double> read_floats(std::ifstream& in, std::size_t n, const std::string& what) {
  std::vector<float> buffer(n);
  if (!in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(n * sizeof(float))))
    throw WeightsError("weights file truncated reading " + what);
  return {buffer.begin(), buffer.end()};
}

void fill_he_normal(ConvParams& p, std::mt19937_64& rng, double bias_sigma) {
  std::normal_distribution<double> weight(0.0, std::sqrt(2.0 / (p.in_channels * 9.0)));
  std::normal_distribution<double> bias(0.0, 1.0);
  p.kernel.resize(static_cast<std::size_t>(p.out_channels) * p.in_channels * 9);
  for (double& v : p.kernel) v = weight(rng);
  p.bias.resize(p.out_channels);
  for (double& v : p.bias) v = bias_sigma * bias(rng);
}

}  // namespace

Backbone::Backbone(std::string name, std::vector<Layer> layers, Preprocess preprocess, std::string checksum)
    : name_(std::move(name)), layers_(std::move(layers)), preprocess_(preprocess), checksum_(std::move(checksum)) {
  if (layers_.empty()) throw std::invalid_argument("backbone without layers");
  int channels = 3;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& layer = layers_[i];
    if (i > 0 && !(layers_[i - 1].id < layer.id))
      throw std::invalid_argument("backbone layers out of trunk order at " + layer.id.str());
    if (layer.id.kind() != LayerKind::conv) continue;
    const ConvParams& p = layer.conv;
    if (p.in_channels != channels)
      throw WeightsError(layer.id.str() + " expects " + std::to_string(channels) + " input channels, has " +
                         std::to_string(p.in_channels));
    if (p.kernel.size() != static_cast<std::size_t>(p.out_channels) * p.in_channels * 9 ||
        p.bias.size() != static_cast<std::size_t>(p.out_channels))
      throw WeightsError(layer.id.str() + " parameter count does not match a 3x3 kernel");
    channels = p.out_channels;
  }
}

int Backbone::count(LayerKind kind) const {
  return static_cast<int>(std::count_if(layers_.begin(), layers_.end(), [kind](const Layer& l) { return l.id.kind() == kind; }));
}

int Backbone::filter_count() const {
  int total = 0;
  for (const Layer& l : layers_)
    if (l.id.kind() == LayerKind::conv) total += l.conv.out_channels;
  return total;
}

bool Backbone::has_layer(LayerId id) const {
  return std::any_of(layers_.begin(), layers_.end(), [id](const Layer& l) { return l.id == id; });
}

std::size_t Backbone::position(LayerId id) const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].id == id) return i;
  throw std::invalid_argument("layer " + id.str() + " is not part of backbone " + name_);
}

int Backbone::channels(LayerId id) const {
  const std::size_t end = position(id);
  int channels = 3;
  for (std::size_t i = 0; i <= end; ++i)
    if (layers_[i].id.kind() == LayerKind::conv) channels = layers_[i].conv.out_channels;
  return channels;
}

Shape3 Backbone::output_shape(LayerId id, int height, int width) const {
  const std::size_t end = position(id);
  for (std::size_t i = 0; i <= end; ++i)
    if (layers_[i].id.kind() == LayerKind::pool) {
      height = (height + 1) / 2;
      width = (width + 1) / 2;
    }
  return Shape3{channels(id), height, width};
}

int Backbone::min_input_extent(LayerId id) const {
  const std::size_t end = position(id);
  int extent = 1;
  for (std::size_t i = 0; i <= end; ++i)
    if (layers_[i].id.kind() == LayerKind::pool) extent *= 2;
  return extent;
}

std::size_t Backbone::deepest(std::span<const LayerId> layers, int height, int width) const {
  if (layers.empty()) throw std::invalid_argument("no layers requested");
  std::size_t last = 0;
  for (LayerId id : layers) last = std::max(last, position(id));
  const int need = min_input_extent(layers_[last].id);
  if (height < need || width < need)
    throw std::invalid_argument("image " + std::to_string(height) + "x" + std::to_string(width) + " is too small for " +
                                layers_[last].id.str() + " (needs at least " + std::to_string(need) + "x" +
                                std::to_string(need) + ")");
  return last;
}

CodeMap Backbone::extract_codes(const ImageBuffer& image, std::span<const LayerId> layers) const {
  const std::size_t last = deepest(layers, image.height(), image.width());
  CodeMap codes;
  Tensor3 x = image.pixels;
  std::vector<std::size_t> argmax;
  for (std::size_t i = 0; i <= last; ++i) {
    const Layer& layer = layers_[i];
    switch (layer.id.kind()) {
      case LayerKind::conv: x = conv_forward(x, layer.conv); break;
      case LayerKind::relu: x = relu_forward(std::move(x)); break;
      case LayerKind::pool: x = pool_forward(x, argmax); break;
    }
    if (std::find(layers.begin(), layers.end(), layer.id) != layers.end())
      codes.emplace(layer.id, Code{layer.id, x, "image"});
  }
  return codes;
}

Evaluation Backbone::evaluate(const ImageBuffer& image, std::span<const LayerId> layers, const CodeLoss& loss) const {
  const std::size_t last = deepest(layers, image.height(), image.width());

  std::vector<Tensor3> outputs(last + 1);
  std::vector<std::vector<std::size_t>> argmax(last + 1);
  CodeMap codes;
  CodeGradients grads;
  for (std::size_t i = 0; i <= last; ++i) {
    const Layer& layer = layers_[i];
    const Tensor3& in = i == 0 ? image.pixels : outputs[i - 1];
    switch (layer.id.kind()) {
      case LayerKind::conv: outputs[i] = conv_forward(in, layer.conv); break;
      case LayerKind::relu: outputs[i] = relu_forward(in); break;
      case LayerKind::pool: outputs[i] = pool_forward(in, argmax[i]); break;
    }
    if (std::find(layers.begin(), layers.end(), layer.id) != layers.end()) {
      codes.emplace(layer.id, Code{layer.id, outputs[i], "image"});
      grads.emplace(layer.id, Tensor3(outputs[i].shape()));
    }
  }

  Evaluation result;
  result.loss = loss(codes, grads);

  Tensor3 g = std::move(grads.at(layers_[last].id));
  for (std::size_t i = last + 1; i-- > 0;) {
    const Layer& layer = layers_[i];
    if (i != last) {
      if (auto it = grads.find(layer.id); it != grads.end()) {
        auto dst = g.values();
        const auto src = it->second.values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
    const Shape3 in_shape = i == 0 ? image.pixels.shape() : outputs[i - 1].shape();
    switch (layer.id.kind()) {
      case LayerKind::conv: g = conv_backward(g, layer.conv); break;
      case LayerKind::relu: g = relu_backward(std::move(g), outputs[i]); break;
      case LayerKind::pool: g = pool_backward(g, in_shape, argmax[i]); break;
    }
    outputs[i] = Tensor3();
  }
  result.gradient = std::move(g);
  return result;
}

std::vector<Layer> vgg19_layout() {
  std::vector<Layer> layers;
  int channels = 3;
  for (LayerId id : LayerId::all()) {
    Layer layer{id, {}};
    if (id.kind() == LayerKind::conv) {
      layer.conv.in_channels = channels;
      layer.conv.out_channels = kVgg19BlockWidths[id.block() - 1];
      channels = layer.conv.out_channels;
    }
    layers.push_back(std::move(layer));
  }
  return layers;
}

Backbone load_backbone(const std::filesystem::path& weights_path) {
  std::ifstream in(weights_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weights file '" + weights_path.string() + "'");

  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw WeightsError("'" + weights_path.string() + "' is not a codeinv weights file");

  Preprocess pre;
  for (double& m : pre.mean) m = read_pod<double>(in, "preprocessing means");

  std::vector<Layer> layers = vgg19_layout();
  const auto conv_count = read_pod<std::uint32_t>(in, "layer count");
  const auto expected = static_cast<std::uint32_t>(
      std::count_if(layers.begin(), layers.end(), [](const Layer& l) { return l.id.kind() == LayerKind::conv; }));
  if (conv_count != expected)
    throw WeightsError("weights file holds " + std::to_string(conv_count) + " convolutions, VGG-19 has " +
                       std::to_string(expected));

  for (Layer& layer : layers) {
    if (layer.id.kind() != LayerKind::conv) continue;
    const auto name_length = read_pod<std::uint32_t>(in, "layer name");
    if (name_length > 64) throw WeightsError("corrupt layer name length");
    std::string name(name_length, '\0');
    if (!in.read(name.data(), name_length)) throw WeightsError("weights file truncated reading layer name");
    if (name != layer.id.name())
      throw WeightsError("expected parameters for " + layer.id.str() + ", found '" + name + "'");
    std::uint32_t dims[4];
    for (auto& d : dims) d = read_pod<std::uint32_t>(in, layer.id.str() + " shape");
    ConvParams& p = layer.conv;
    if (dims[0] != static_cast<std::uint32_t>(p.out_channels) || dims[1] != static_cast<std::uint32_t>(p.in_channels) ||
        dims[2] != 3 || dims[3] != 3)
      throw WeightsError("shape mismatch at " + layer.id.str() + ": stored " + std::to_string(dims[0]) + "x" +
                         std::to_string(dims[1]) + "x" + std::to_string(dims[2]) + "x" + std::to_string(dims[3]) +
                         ", expected " + std::to_string(p.out_channels) + "x" + std::to_string(p.in_channels) + "x3x3");
    p.kernel = read_floats(in, static_cast<std::size_t>(p.out_channels) * p.in_channels * 9, layer.id.str() + " kernel");
    p.bias = read_floats(in, p.out_channels, layer.id.str() + " bias");
  }
  return Backbone("vgg19", std::move(layers), pre, sha256_file(weights_path));
}

void save_weights(const Backbone& backbone, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write weights file '" + path.string() + "'");
  out.write(kMagic, sizeof(kMagic));
  for (double m : backbone.preprocess().mean) write_pod(out, m);
  write_pod(out, static_cast<std::uint32_t>(backbone.count(LayerKind::conv)));
  for (const Layer& layer : backbone.layers()) {
    if (layer.id.kind() != LayerKind::conv) continue;
    const std::string name = layer.id.str();
    write_pod(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    for (std::uint32_t d : {static_cast<std::uint32_t>(layer.conv.out_channels),
                            static_cast<std::uint32_t>(layer.conv.in_channels), 3u, 3u})
      write_pod(out, d);
    for (double v : layer.conv.kernel) write_pod(out, static_cast<float>(v));
    for (double v : layer.conv.bias) write_pod(out, static_cast<float>(v));
  }
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

Backbone make_random_vgg19(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Layer> layers = vgg19_layout();
  for (Layer& layer : layers)
    if (layer.id.kind() == LayerKind::conv) fill_he_normal(layer.conv, rng, 0.0);
  return Backbone("vgg19-random", std::move(layers), Preprocess{});
}

Backbone build_toy_backbone(std::uint64_t seed, std::vector<int> widths) {
  if (widths.empty() || widths.size() > 3) throw std::invalid_argument("toy backbone takes 1 to 3 conv widths");
  std::mt19937_64 rng(seed);
  static const char* const kConvNames[] = {"conv1_1", "conv1_2", "conv2_1"};
  std::vector<Layer> layers;
  int channels = 3;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] < 1 || widths[i] > 8) throw std::invalid_argument("toy conv width must be in 1..8");
    if (i == 2) layers.push_back(Layer{LayerId("pool1"), {}});
    const LayerId conv(kConvNames[i]);
    Layer layer{conv, {}};
    layer.conv.in_channels = channels;
    layer.conv.out_channels = widths[i];
    fill_he_normal(layer.conv, rng, 0.1);
    channels = widths[i];
    layers.push_back(std::move(layer));
    layers.push_back(Layer{LayerId::at_depth(conv.depth() + 1), {}});
  }
  return Backbone("toy-" + std::to_string(seed), std::move(layers), Preprocess{});
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buffer(1 << 16);
  while (in) {
    in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buffer.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_DigestFinal_ex(ctx, digest, &length);
  EVP_MD_CTX_free(ctx);
  static const char* const hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

}  // namespace codeinv
