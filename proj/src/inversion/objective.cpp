#include "codeinv/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Core>

namespace codeinv {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_relu(LayerId layer) {
  if (layer.kind() != LayerKind::relu)
    throw std::invalid_argument("modified code inversion needs a relu layer, got " + layer.str());
}

double data_weight(const Objective& objective) {
  double total = 0.0;
  for (const auto& t : objective.terms)
    if (t.kind != TermKind::tv_prior && t.kind != TermKind::l2_prior) total += t.weight;
  return total;
}

void append_priors(Objective& objective, PriorWeights priors) {
  if (priors.tv < 0.0 || priors.l2 < 0.0) throw std::invalid_argument("prior weights must be non-negative");
  const double scale = data_weight(objective);
  if (priors.tv > 0.0) objective.terms.push_back({TermKind::tv_prior, std::nullopt, priors.tv * scale, {}, "tv", false});
  if (priors.l2 > 0.0) objective.terms.push_back({TermKind::l2_prior, std::nullopt, priors.l2 * scale, {}, "l2", false});
}

Code extract_one(const Backbone& backbone, const ImageBuffer& image, LayerId layer, const std::string& source) {
  const LayerId request[] = {layer};
  Code code = backbone.extract_codes(image, request).at(layer);
  code.source = source;
  return code;
}

double code_match(const ObjectiveTerm& term, const Tensor3& x, Tensor3& grad) {
  const auto& target = std::get<Code>(term.target).values;
  const auto xs = x.values();
  const auto ts = target.values();
  auto gs = grad.values();
  double loss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double d = xs[i] - ts[i];
    loss += d * d;
    gs[i] += 2.0 * term.weight * d;
  }
  return term.weight * loss;
}

double style_sum(const ObjectiveTerm& term, const Tensor3& x, Tensor3& grad) {
  const auto& target = std::get<StyleDescriptor>(term.target);
  const double own_scale = term.normalize ? 1.0 / static_cast<double>(x.shape().plane()) : 1.0;
  const double target_scale = term.normalize ? 1.0 / static_cast<double>(target.spatial_size) : 1.0;
  double loss = 0.0;
  for (int c = 0; c < x.channels(); ++c) {
    const auto ch = x.channel(c);
    const double d = std::accumulate(ch.begin(), ch.end(), 0.0) * own_scale - target.sums[c] * target_scale;
    loss += d * d;
    const double g = 2.0 * term.weight * d * own_scale;
    for (double& v : grad.channel(c)) v += g;
  }
  return term.weight * loss;
}

double gram_match(const ObjectiveTerm& term, const Tensor3& x, Tensor3& grad) {
  const auto& target = std::get<GramDescriptor>(term.target);
  const int c = x.channels();
  const auto plane = static_cast<Eigen::Index>(x.shape().plane());
  const double own_scale = term.normalize ? 1.0 / static_cast<double>(plane) : 1.0;
  const double target_scale = term.normalize ? 1.0 / static_cast<double>(target.spatial_size) : 1.0;
  const double size = term.normalize ? 1.0 : static_cast<double>(plane);
  const double norm = 1.0 / (4.0 * c * c * size * size);

  const Eigen::Map<const RowMatrix> f(x.data(), c, plane);
  const Eigen::Map<const RowMatrix> a(target.matrix.data(), c, c);
  const RowMatrix diff = (f * f.transpose()) * own_scale - a * target_scale;
  Eigen::Map<RowMatrix> g(grad.data(), c, plane);
  // d/dF ||s F F^T - A||^2 = 4 s (s F F^T - A) F for symmetric A
  g.noalias() += (4.0 * term.weight * norm * own_scale) * (diff * f);
  return term.weight * norm * diff.squaredNorm();
}

void tv_gradient(const Tensor3& x, double weight, Tensor3& grad) {
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < x.height(); ++y)
      for (int i = 0; i < x.width(); ++i) {
        if (i + 1 < x.width()) {
          const double d = x.at(c, y, i + 1) - x.at(c, y, i);
          grad.at(c, y, i + 1) += 2.0 * weight * d;
          grad.at(c, y, i) -= 2.0 * weight * d;
        }
        if (y + 1 < x.height()) {
          const double d = x.at(c, y + 1, i) - x.at(c, y, i);
          grad.at(c, y + 1, i) += 2.0 * weight * d;
          grad.at(c, y, i) -= 2.0 * weight * d;
        }
      }
}

Objective build_style_objective(const Backbone& backbone, const ImageBuffer& content, const ImageBuffer& style,
                                const StyleTransferOptions& options, TermKind style_kind) {
  if (options.alpha < 0.0 || options.beta < 0.0) throw std::invalid_argument("alpha and beta must be non-negative");
  if (options.style_layers.empty()) throw std::invalid_argument("at least one style layer is required");

  Objective objective;
  objective.terms.push_back({TermKind::code_match, options.content_layer, options.alpha,
                             extract_one(backbone, content, options.content_layer, "content"),
                             "content:" + options.content_layer.str(), false});

  const CodeMap style_codes = backbone.extract_codes(style, options.style_layers);
  const double share = options.beta / static_cast<double>(options.style_layers.size());
  for (LayerId layer : options.style_layers) {
    Code code = style_codes.at(layer);
    code.source = "style";
    ObjectiveTerm term{style_kind, layer, share, {}, "style:" + layer.str(), options.normalize_style};
    if (style_kind == TermKind::style_sum)
      term.target = style_descriptor(code);
    else
      term.target = gram_descriptor(code);
    objective.terms.push_back(std::move(term));
  }
  append_priors(objective, options.priors);
  return objective;
}

}  // namespace

std::string_view to_string(TermKind kind) {
  switch (kind) {
    case TermKind::code_match: return "code_match";
    case TermKind::style_sum: return "style_sum";
    case TermKind::gram_match: return "gram_match";
    case TermKind::tv_prior: return "tv_prior";
    case TermKind::l2_prior: return "l2_prior";
  }
  return "?";
}

std::vector<LayerId> Objective::layers() const {
  std::vector<LayerId> out;
  for (const auto& t : terms)
    if (t.layer && t.weight > 0.0) out.push_back(*t.layer);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::string> Objective::labels() const {
  std::vector<std::string> out;
  for (const auto& t : terms) out.push_back(t.label);
  return out;
}

void Objective::check(const Backbone& backbone, int height, int width) const {
  bool has_data = false;
  for (const auto& t : terms) {
    if (!(t.weight >= 0.0) || !std::isfinite(t.weight))
      throw std::invalid_argument("term '" + t.label + "' has invalid weight");
    if (t.kind == TermKind::tv_prior || t.kind == TermKind::l2_prior) continue;
    has_data = true;
    if (!t.layer) throw std::invalid_argument("term '" + t.label + "' has no layer");
    const Shape3 shape = backbone.output_shape(*t.layer, height, width);
    switch (t.kind) {
      case TermKind::code_match:
        if (std::get<Code>(t.target).values.shape() != shape)
          throw std::invalid_argument("target of '" + t.label + "' has shape " +
                                      std::get<Code>(t.target).values.shape().str() + ", image yields " + shape.str());
        break;
      case TermKind::style_sum:
        if (static_cast<int>(std::get<StyleDescriptor>(t.target).sums.size()) != shape.channels)
          throw std::invalid_argument("descriptor of '" + t.label + "' has the wrong channel count");
        break;
      case TermKind::gram_match:
        if (std::get<GramDescriptor>(t.target).channels != shape.channels)
          throw std::invalid_argument("Gram target of '" + t.label + "' has the wrong channel count");
        break;
      default: break;
    }
  }
  if (!has_data) throw std::invalid_argument("objective has no data term");
}

ObjectiveValue objective_gradient(const Backbone& backbone, const ImageBuffer& image, const Objective& objective) {
  ObjectiveValue value;
  value.per_term.assign(objective.terms.size(), 0.0);
  const std::vector<LayerId> layers = objective.layers();

  const CodeLoss data_loss = [&](const CodeMap& codes, CodeGradients& grads) {
    double total = 0.0;
    for (std::size_t i = 0; i < objective.terms.size(); ++i) {
      const ObjectiveTerm& term = objective.terms[i];
      if (!term.layer || term.weight == 0.0) continue;
      const Tensor3& x = codes.at(*term.layer).values;
      Tensor3& g = grads.at(*term.layer);
      double loss = 0.0;
      switch (term.kind) {
        case TermKind::code_match: loss = code_match(term, x, g); break;
        case TermKind::style_sum: loss = style_sum(term, x, g); break;
        case TermKind::gram_match: loss = gram_match(term, x, g); break;
        default: break;
      }
      value.per_term[i] = loss;
      total += loss;
    }
    return total;
  };

  if (layers.empty()) {
    value.total = 0.0;
    value.gradient = Tensor3(image.pixels.shape());
  } else {
    Evaluation eval = backbone.evaluate(image, layers, data_loss);
    value.total = eval.loss;
    value.gradient = std::move(eval.gradient);
  }

  for (std::size_t i = 0; i < objective.terms.size(); ++i) {
    const ObjectiveTerm& term = objective.terms[i];
    if (term.weight == 0.0) continue;
    if (term.kind == TermKind::tv_prior) {
      value.per_term[i] = term.weight * tv_prior(image.pixels);
      tv_gradient(image.pixels, term.weight, value.gradient);
    } else if (term.kind == TermKind::l2_prior) {
      value.per_term[i] = term.weight * l2_prior(image.pixels);
      auto g = value.gradient.values();
      const auto x = image.pixels.values();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += 2.0 * term.weight * x[k];
    } else {
      continue;
    }
    value.total += value.per_term[i];
  }
  if (!std::isfinite(value.total)) throw std::runtime_error("objective is not finite");
  return value;
}

double tv_prior(const Tensor3& pixels) {
  double total = 0.0;
  for (int c = 0; c < pixels.channels(); ++c)
    for (int y = 0; y < pixels.height(); ++y)
      for (int x = 0; x < pixels.width(); ++x) {
        if (x + 1 < pixels.width()) total += std::pow(pixels.at(c, y, x + 1) - pixels.at(c, y, x), 2);
        if (y + 1 < pixels.height()) total += std::pow(pixels.at(c, y + 1, x) - pixels.at(c, y, x), 2);
      }
  return total;
}

double l2_prior(const Tensor3& pixels) { return pixels.squared_norm(); }

Objective build_inversion_objective(const Backbone& backbone, const ImageBuffer& image, LayerId layer,
                                    PriorWeights priors) {
  Objective objective;
  objective.terms.push_back(
      {TermKind::code_match, layer, 1.0, extract_one(backbone, image, layer, "image"), "code:" + layer.str(), false});
  append_priors(objective, priors);
  return objective;
}

Objective build_fmi_objective(const Backbone& backbone, const ImageBuffer& image, LayerId layer, int l,
                              PriorWeights priors) {
  require_relu(layer);
  Objective objective;
  objective.terms.push_back({TermKind::code_match, layer, 1.0, fmi_modify(extract_one(backbone, image, layer, "image"), l),
                             "fmi:" + layer.str(), false});
  objective.modifier = FmiModifier{l};
  append_priors(objective, priors);
  return objective;
}

Objective build_random_objective(const Backbone& backbone, const ImageBuffer& image, LayerId layer,
                                 const RealloVector& v, PriorWeights priors) {
  require_relu(layer);
  Reallocation modified = random_reallocate(extract_one(backbone, image, layer, "image"), v);
  Objective objective;
  if (!modified.degenerate_channels.empty())
    objective.warnings.push_back(std::to_string(modified.degenerate_channels.size()) + " dead channel(s) at " +
                                 layer.str() + " kept at zero; their share of energy is dropped");
  objective.terms.push_back(
      {TermKind::code_match, layer, 1.0, std::move(modified.code), "realloc:" + layer.str(), false});
  objective.modifier = ReallocationModifier{v};
  append_priors(objective, priors);
  return objective;
}

Objective build_pmci_objective(const Backbone& backbone, const ImageBuffer& content, const ImageBuffer& style,
                               const StyleTransferOptions& options) {
  return build_style_objective(backbone, content, style, options, TermKind::style_sum);
}

Objective build_gram_objective(const Backbone& backbone, const ImageBuffer& content, const ImageBuffer& style,
                               const StyleTransferOptions& options) {
  return build_style_objective(backbone, content, style, options, TermKind::gram_match);
}

double style_distance(const Backbone& backbone, const ImageBuffer& image, const StyleDescriptor& target) {
  const StyleDescriptor own = style_descriptor(extract_one(backbone, image, target.layer, "image"));
  double total = 0.0;
  for (std::size_t c = 0; c < own.sums.size(); ++c) total += std::pow(own.sums[c] - target.sums[c], 2);
  return total;
}

}  // namespace codeinv
