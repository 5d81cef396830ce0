#include "doctest.h"

#include <fstream>

#include "codeinv/optimize.hpp"
#include "oracles.hpp"

using namespace codeinv;

namespace {

OptimizerConfig toy_config(std::uint64_t seed = 1) {
  OptimizerConfig cfg;
  cfg.max_iters = 300;
  cfg.seed = seed;
  cfg.noise_sigma = 30.0;
  return cfg;
}

}  // namespace

TEST_CASE("init_image") {
  const ImageBuffer a = init_image(InitMode::noise, 6, 7, 3, 10.0);
  const ImageBuffer b = init_image(InitMode::noise, 6, 7, 3, 10.0);
  CHECK(a.pixels == b.pixels);
  CHECK(a.pixels.shape() == Shape3{3, 6, 7});
  CHECK(init_image(InitMode::noise, 6, 7, 3, 0.0).pixels.squared_norm() == 0.0);
  const ImageBuffer content = oracle::random_image(6, 7, 1);
  CHECK(init_image(InitMode::content, 6, 7, 0, 1.0, &content).pixels == content.pixels);
  CHECK_THROWS_AS(init_image(InitMode::content, 6, 8, 0, 1.0, &content), std::invalid_argument);
  CHECK_THROWS_AS(init_image(InitMode::content, 6, 7, 0, 1.0, nullptr), std::invalid_argument);
  CHECK(parse_init_mode("content") == InitMode::content);
  CHECK_THROWS_AS(parse_step_rule("adam"), std::invalid_argument);
}

TEST_CASE("config validation") {
  OptimizerConfig cfg;
  cfg.max_iters = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = OptimizerConfig{};
  cfg.tolerance = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("toy FMI inversion drives the loss under 1% of its start, monotonically") {
  const Backbone toy = build_toy_backbone(0);
  const ImageBuffer source = oracle::random_image(8, 8, 42);
  const Objective obj = build_fmi_objective(toy, source, LayerId("relu1_2"), 1, kNoPriors);
  const RunResult run = optimize(toy, obj, toy_config(), source);
  REQUIRE_FALSE(run.failed());
  CHECK(run.final_loss() <= 0.01 * run.initial_loss());
  CHECK(run.trace.size() <= 301);
  for (std::size_t i = 1; i < run.trace.size(); ++i) {
    CHECK(run.trace[i].total <= run.trace[i - 1].total);
    CHECK(run.trace[i].iteration == static_cast<int>(i));
  }
}

TEST_CASE("fixed-step rule never ends above its start") {
  const Backbone toy = build_toy_backbone(0);
  const ImageBuffer source = oracle::random_image(8, 8, 42);
  const Objective obj = build_random_objective(toy, source, LayerId("relu1_2"), sample_simplex(6, 1), PriorWeights{});
  OptimizerConfig cfg = toy_config();
  cfg.step_rule = StepRule::fixed;
  cfg.learning_rate = 10.0;
  cfg.max_iters = 50;
  const RunResult run = optimize(toy, obj, cfg, source);
  CHECK(run.final_loss() <= run.initial_loss());
  for (std::size_t i = 1; i < run.trace.size(); ++i) CHECK(run.trace[i].total <= run.trace[i - 1].total);
}

TEST_CASE("zero objective returns immediately") {
  const Backbone toy = build_toy_backbone(3, {1, 4});
  const ImageBuffer source = oracle::random_image(8, 8, 2);
  const Objective obj = build_fmi_objective(toy, source, LayerId("relu1_1"), 0, kNoPriors);
  OptimizerConfig cfg = toy_config();
  cfg.init = InitMode::content;
  const RunResult run = optimize(toy, obj, cfg, source);
  CHECK(run.converged);
  CHECK(run.trace.size() == 1);
  CHECK(run.final_loss() == 0.0);
  CHECK(run.image.pixels == source.pixels);
}

TEST_CASE("seeded runs are reproducible") {
  const Backbone toy = build_toy_backbone(5);
  const ImageBuffer content = oracle::random_image(8, 8, 7);
  const ImageBuffer style = oracle::random_image(8, 8, 8);
  StyleTransferOptions opts;
  opts.content_layer = LayerId("relu1_2");
  opts.style_layers = {LayerId("relu1_1"), LayerId("relu2_1")};
  const Objective obj = build_gram_objective(toy, content, style, opts);
  OptimizerConfig cfg = toy_config(9);
  cfg.max_iters = 40;
  const RunResult a = optimize(toy, obj, cfg, content);
  const RunResult b = optimize(toy, obj, cfg, content);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].total == b.trace[i].total);
    CHECK(a.trace[i].terms == b.trace[i].terms);
  }
  CHECK(a.image.pixels == b.image.pixels);
  cfg.seed = 10;
  CHECK(optimize(toy, obj, cfg, content).image.pixels != a.image.pixels);
}

TEST_CASE("pixel bounds are respected") {
  const Backbone toy = build_toy_backbone(0);
  const ImageBuffer source = oracle::random_image(8, 8, 42, 80.0);
  const Objective obj = build_fmi_objective(toy, source, LayerId("relu2_1"), 0, kNoPriors);
  const RunResult run = optimize(toy, obj, toy_config(), source);
  for (int c = 0; c < 3; ++c) {
    const auto [lo, hi] = pixel_range(run.image.preprocess, c);
    for (double v : run.image.pixels.channel(c)) {
      CHECK(v >= lo);
      CHECK(v <= hi);
    }
  }
}

TEST_CASE("trace CSV and manifest fragment") {
  const Backbone toy = build_toy_backbone(0);
  const ImageBuffer source = oracle::random_image(8, 8, 1);
  const Objective obj = build_fmi_objective(toy, source, LayerId("relu1_2"), 0, PriorWeights{});
  OptimizerConfig cfg = toy_config();
  cfg.max_iters = 5;
  const RunResult run = optimize(toy, obj, cfg, source);
  const auto path = std::filesystem::temp_directory_path() / "codeinv_trace.csv";
  write_trace_csv(path, run);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "iteration,total,fmi:relu1_2,tv");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == static_cast<int>(run.trace.size()));
  CHECK(run.manifest["optimizer"]["seed"] == 1);
  CHECK(run.manifest["final_terms"].contains("tv"));
  CHECK(run.manifest["status"] == std::string(to_string(run.status)));
}
