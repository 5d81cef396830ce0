#include "doctest.h"

#include "codeinv/objective.hpp"
#include "oracles.hpp"

using namespace codeinv;

namespace {

StyleTransferOptions toy_style_options(double alpha, double beta) {
  StyleTransferOptions o;
  o.content_layer = LayerId("relu1_2");
  o.style_layers = {LayerId("relu1_1"), LayerId("relu2_1")};
  o.alpha = alpha;
  o.beta = beta;
  o.priors = kNoPriors;
  return o;
}

void check_gradient(const Backbone& toy, const Objective& objective, std::uint64_t seed) {
  const ImageBuffer x = oracle::random_image(8, 8, seed);
  const ObjectiveValue analytic = objective_gradient(toy, x, objective);
  CHECK(analytic.total == doctest::Approx(oracle::reference_loss(toy, x, objective)).epsilon(1e-10));
  const Tensor3 fd = oracle::finite_difference_gradient(toy, x, objective);
  const double err = oracle::relative_error(analytic.gradient, fd);
  CAPTURE(seed);
  CHECK(err < 1e-4);
}

}  // namespace

TEST_CASE("priors") {
  CHECK(tv_prior(Tensor3(Shape3{3, 4, 4}, 7.0)) == 0.0);
  CHECK(l2_prior(Tensor3(Shape3{3, 4, 4})) == 0.0);
  CHECK(tv_prior(Tensor3(Shape3{1, 1, 2}, {2.0, 5.0})) == 9.0);
  CHECK(tv_prior(Tensor3(Shape3{1, 2, 1}, {2.0, 5.0})) == 9.0);
  CHECK(l2_prior(Tensor3(Shape3{1, 1, 2}, {3.0, 4.0})) == 25.0);
}

TEST_CASE("FMI objective") {
  const Backbone vgg = make_random_vgg19(5);
  const ImageBuffer img = oracle::random_image(32, 32, 1);
  const Objective obj = build_fmi_objective(vgg, img, LayerId("relu5_2"), 0, kNoPriors);
  REQUIRE(obj.terms.size() == 1);
  const Tensor3& target = std::get<Code>(obj.terms[0].target).values;
  int zero_channels = 0;
  for (int c = 0; c < target.channels(); ++c) {
    const auto ch = target.channel(c);
    zero_channels += std::all_of(ch.begin(), ch.end(), [](double v) { return v == 0.0; });
  }
  CHECK(zero_channels >= 511);
  for (int c = 1; c < target.channels(); ++c)
    for (double v : target.channel(c)) REQUIRE(v == 0.0);

  CHECK_THROWS_AS(build_fmi_objective(vgg, img, LayerId("relu1_2"), 64, kNoPriors), std::out_of_range);
  CHECK_THROWS_AS(build_fmi_objective(vgg, img, LayerId("conv1_2"), 0, kNoPriors), std::invalid_argument);

  const Objective with_tv = build_fmi_objective(vgg, img, LayerId("relu1_2"), 3, PriorWeights{});
  REQUIRE(with_tv.terms.size() == 2);
  CHECK(with_tv.terms[1].kind == TermKind::tv_prior);
  CHECK(with_tv.terms[1].weight == doctest::Approx(1e-4));
}

TEST_CASE("FMI on a single-channel layer is plain code inversion with zero loss at the source") {
  const Backbone toy = build_toy_backbone(3, {1, 4});
  const ImageBuffer img = oracle::random_image(8, 8, 2);
  const Objective fmi = build_fmi_objective(toy, img, LayerId("relu1_1"), 0, kNoPriors);
  const Objective plain = build_inversion_objective(toy, img, LayerId("relu1_1"), kNoPriors);
  CHECK(std::get<Code>(fmi.terms[0].target).values == std::get<Code>(plain.terms[0].target).values);
  CHECK(objective_gradient(toy, img, fmi).total == 0.0);
  const ImageBuffer other = oracle::random_image(8, 8, 3);
  CHECK(objective_gradient(toy, other, fmi).total == objective_gradient(toy, other, plain).total);
}

TEST_CASE("perfect code match gives zero loss and gradient") {
  const Backbone vgg = make_random_vgg19(6);
  const ImageBuffer img = oracle::random_image(32, 32, 4);
  const Objective obj = build_inversion_objective(vgg, img, LayerId("relu2_2"), kNoPriors);
  const ObjectiveValue v = objective_gradient(vgg, img, obj);
  CHECK(v.total == 0.0);
  CHECK(v.gradient.squared_norm() == 0.0);
  CHECK(objective_gradient(vgg, oracle::random_image(32, 32, 5), obj).total > 0.0);
}

TEST_CASE("random reallocation objective") {
  const Backbone toy = build_toy_backbone(7);
  const ImageBuffer img = oracle::random_image(8, 8, 6);
  const RealloVector v = sample_simplex(6, 7);
  const Objective obj = build_random_objective(toy, img, LayerId("relu1_2"), v, kNoPriors);
  REQUIRE(obj.modifier.has_value());
  CHECK(std::get<ReallocationModifier>(*obj.modifier).vector.seed == 7);
  CHECK(std::get<ReallocationModifier>(*obj.modifier).vector.v == v.v);
  CHECK_THROWS_AS(build_random_objective(toy, img, LayerId("relu1_2"), sample_simplex(5, 1), kNoPriors),
                  std::invalid_argument);

  const LayerId request[] = {LayerId("relu1_2")};
  const RealloVector shares = energy_shares(toy.extract_codes(img, request).at(LayerId("relu1_2")));
  const Objective identity = build_random_objective(toy, img, LayerId("relu1_2"), shares, kNoPriors);
  CHECK(objective_gradient(toy, img, identity).total < 1e-18);
}

TEST_CASE("style objectives: weights, reductions and identities") {
  const Backbone toy = build_toy_backbone(8);
  const ImageBuffer content = oracle::random_image(8, 8, 10);
  const ImageBuffer style = oracle::random_image(8, 8, 11);

  const Objective pmci = build_pmci_objective(toy, content, style, toy_style_options(10.0, 1.0));
  REQUIRE(pmci.terms.size() == 3);
  CHECK(pmci.terms[0].kind == TermKind::code_match);
  CHECK(pmci.terms[0].weight == 10.0);
  CHECK(pmci.terms[1].kind == TermKind::style_sum);
  CHECK(pmci.terms[1].weight == 0.5);
  CHECK(pmci.terms[2].weight == 0.5);

  // same image on both sides: every term vanishes at the content image
  CHECK(objective_gradient(toy, content, build_pmci_objective(toy, content, content, toy_style_options(10, 1))).total ==
        0.0);
  CHECK(objective_gradient(toy, content, build_gram_objective(toy, content, content, toy_style_options(10, 1))).total ==
        0.0);

  // beta = 0 reduces both families to content reconstruction
  const ImageBuffer x = oracle::random_image(8, 8, 12);
  StyleTransferOptions no_style = toy_style_options(1.0, 0.0);
  no_style.content_layer = LayerId("relu1_2");
  const double pmci0 = objective_gradient(toy, x, build_pmci_objective(toy, content, style, no_style)).total;
  const double gram0 = objective_gradient(toy, x, build_gram_objective(toy, content, style, no_style)).total;
  const double plain = objective_gradient(toy, x, build_inversion_objective(toy, content, LayerId("relu1_2"), kNoPriors)).total;
  CHECK(pmci0 == gram0);
  CHECK(pmci0 == plain);

  CHECK_THROWS_AS(build_pmci_objective(toy, content, style, toy_style_options(-1, 1)), std::invalid_argument);
  StyleTransferOptions empty = toy_style_options(1, 1);
  empty.style_layers.clear();
  CHECK_THROWS_AS(build_pmci_objective(toy, content, style, empty), std::invalid_argument);

  const Backbone vgg = make_random_vgg19(1);
  StyleTransferOptions deep;
  deep.priors = kNoPriors;
  CHECK_THROWS_AS(build_pmci_objective(vgg, oracle::random_image(32, 32, 1), oracle::random_image(12, 12, 1), deep),
                  std::invalid_argument);
}

TEST_CASE("objective shape checks") {
  const Backbone toy = build_toy_backbone(9);
  const Objective obj = build_inversion_objective(toy, oracle::random_image(8, 8, 1), LayerId("relu2_1"), kNoPriors);
  CHECK_NOTHROW(obj.check(toy, 8, 8));
  CHECK_THROWS_AS(obj.check(toy, 10, 8), std::invalid_argument);
  Objective priors_only;
  priors_only.terms.push_back({TermKind::tv_prior, std::nullopt, 1.0, {}, "tv", false});
  CHECK_THROWS_AS(priors_only.check(toy, 8, 8), std::invalid_argument);
}

TEST_CASE("analytic gradients match central differences for every objective family") {
  const Backbone toy = build_toy_backbone(12);
  const ImageBuffer source = oracle::random_image(8, 8, 100);
  const ImageBuffer style = oracle::random_image(8, 8, 101);
  const PriorWeights priors{1e-2, 1e-3};

  StyleTransferOptions opts = toy_style_options(10.0, 1.0);
  opts.priors = priors;
  StyleTransferOptions normalized = opts;
  normalized.normalize_style = true;

  const std::vector<std::pair<std::string, Objective>> families = {
      {"fmi", build_fmi_objective(toy, source, LayerId("relu2_1"), 2, priors)},
      {"random", build_random_objective(toy, source, LayerId("relu1_2"), sample_simplex(6, 3), priors)},
      {"pmci", build_pmci_objective(toy, source, style, opts)},
      {"gram", build_gram_objective(toy, source, style, opts)},
      {"pmci-normalized", build_pmci_objective(toy, source, style, normalized)},
      {"gram-normalized", build_gram_objective(toy, source, style, normalized)},
  };
  for (const auto& [name, objective] : families) {
    CAPTURE(name);
    for (std::uint64_t point = 0; point < 5; ++point) check_gradient(toy, objective, 1000 + point);
  }
}
