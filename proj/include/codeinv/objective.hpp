#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "codeinv/backbone.hpp"
#include "codeinv/codeops.hpp"

namespace codeinv {

enum class TermKind { code_match, style_sum, gram_match, tv_prior, l2_prior };

std::string_view to_string(TermKind kind);

using TermTarget = std::variant<std::monostate, Code, StyleDescriptor, GramDescriptor>;

/// One weighted summand of an objective.
///
///   code_match  w * ||code(X) - target||_F^2
///   style_sum   w * ||code(X) 1 - target sums||^2
///   gram_match  w / (4 C^2 (MN)^2) * ||G(code(X)) - target Gram||_F^2
///   tv_prior    w * sum of squared horizontal and vertical neighbour differences
///   l2_prior    w * ||X||_F^2
///
/// With `normalize` set, style_sum compares sums divided by each side's spatial size and
/// gram_match compares Gram matrices divided by spatial size.
struct ObjectiveTerm {
  TermKind kind = TermKind::code_match;
  std::optional<LayerId> layer;
  double weight = 1.0;
  TermTarget target;
  std::string label;
  bool normalize = false;
};

/// Prior weights, relative to the summed weight of the data terms.
struct PriorWeights {
  double tv = 1e-4;
  double l2 = 0.0;
};

inline constexpr PriorWeights kNoPriors{0.0, 0.0};

struct Objective {
  std::vector<ObjectiveTerm> terms;
  std::optional<CodeModifier> modifier;
  std::vector<std::string> warnings;

  /// Layers the data terms read, deduplicated, shallow to deep.
  std::vector<LayerId> layers() const;
  std::vector<std::string> labels() const;
  /// Throws std::invalid_argument if the objective is malformed or its targets do not fit
  /// an image of the given size on `backbone`.
  void check(const Backbone& backbone, int height, int width) const;
};

struct ObjectiveValue {
  double total = 0.0;
  std::vector<double> per_term;  // weighted contribution of each term, same order as Objective::terms
  Tensor3 gradient;
};

/// Loss and pixel gradient of `objective` at `image`. Throws std::runtime_error when the
/// loss is not finite.
ObjectiveValue objective_gradient(const Backbone& backbone, const ImageBuffer& image, const Objective& objective);

double tv_prior(const Tensor3& pixels);
double l2_prior(const Tensor3& pixels);

/// Plain code inversion: match the unmodified code of `image` at `layer`.
Objective build_inversion_objective(const Backbone& backbone, const ImageBuffer& image, LayerId layer,
                                    PriorWeights priors);

/// Match the code with feature map l enhanced to the channel-sum map and the rest zeroed.
Objective build_fmi_objective(const Backbone& backbone, const ImageBuffer& image, LayerId layer, int l,
                              PriorWeights priors);

/// Match the code with channel energies redistributed by v.
Objective build_random_objective(const Backbone& backbone, const ImageBuffer& image, LayerId layer,
                                 const RealloVector& v, PriorWeights priors);

struct StyleTransferOptions {
  LayerId content_layer{"relu2_2"};
  std::vector<LayerId> style_layers{LayerId("relu1_1"), LayerId("relu2_1"), LayerId("relu3_1"), LayerId("relu4_1"),
                                    LayerId("relu5_1")};
  double alpha = 10.0;
  double beta = 1.0;
  PriorWeights priors;
  bool normalize_style = false;
};

/// Content code at content_layer (weight alpha) plus channel-sum style terms, beta split
/// equally across style layers.
Objective build_pmci_objective(const Backbone& backbone, const ImageBuffer& content, const ImageBuffer& style,
                               const StyleTransferOptions& options);

/// As build_pmci_objective with Gram-matrix style terms.
Objective build_gram_objective(const Backbone& backbone, const ImageBuffer& content, const ImageBuffer& style,
                               const StyleTransferOptions& options);

/// Squared distance between the channel-sum descriptors of `image` and `target`'s layer.
double style_distance(const Backbone& backbone, const ImageBuffer& image, const StyleDescriptor& target);

}  // namespace codeinv
