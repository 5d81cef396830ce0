#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "codeinv/objective.hpp"

namespace codeinv {

enum class StepRule { lbfgs, fixed };
enum class InitMode { noise, content };

std::string_view to_string(StepRule rule);
std::string_view to_string(InitMode mode);
StepRule parse_step_rule(std::string_view text);
InitMode parse_init_mode(std::string_view text);

struct OptimizerConfig {
  int max_iters = 200;
  StepRule step_rule = StepRule::lbfgs;
  int history = 10;             // L-BFGS curvature pairs
  double learning_rate = 1.0;   // initial step of the fixed rule
  InitMode init = InitMode::noise;
  std::uint64_t seed = 0;
  double noise_sigma = 10.0;    // preprocessed units (0..255 scale)
  double tolerance = 1e-5;      // relative loss change over `window` iterations
  int window = 10;
  bool bound_pixels = true;     // clamp to the representable 8-bit range
  int max_backtracks = 40;

  void validate() const;
};

void to_json(nlohmann::json& j, const OptimizerConfig& cfg);

struct TraceEntry {
  int iteration = 0;
  double total = 0.0;
  std::vector<double> terms;
};

enum class RunStatus { converged, max_iters, diverged, no_descent };

std::string_view to_string(RunStatus status);

struct RunResult {
  ImageBuffer image;
  std::vector<TraceEntry> trace;
  std::vector<std::string> term_labels;
  bool converged = false;
  RunStatus status = RunStatus::max_iters;
  std::string message;
  double wall_seconds = 0.0;
  /// Optimizer config, status, initial/final losses and per-term final losses.
  nlohmann::json manifest;

  double initial_loss() const { return trace.front().total; }
  double final_loss() const { return trace.back().total; }
  bool failed() const { return status == RunStatus::diverged || status == RunStatus::no_descent; }
};

/// Starting image. Noise draws i.i.d. N(0, sigma^2) pixels from `seed`; content copies `content`.
ImageBuffer init_image(InitMode mode, int height, int width, std::uint64_t seed, double sigma,
                       const ImageBuffer* content = nullptr, Preprocess preprocess = {});

/// Minimises `objective` over pixels, starting from init_image(cfg.init, ...) sized like
/// `reference` (which is also the content for InitMode::content).
///
/// Every accepted step is appended to the trace; recorded losses never increase. The run
/// stops after max_iters steps, when the loss changes by less than `tolerance` (relative)
/// over `window` steps, or when the loss or its gradient is exactly zero. A non-finite loss or
/// a direction along which no decrease is found ends the run with converged=false and the
/// last good image.
RunResult optimize(const Backbone& backbone, const Objective& objective, const OptimizerConfig& cfg,
                   const ImageBuffer& reference);

/// Same, from an explicit starting image.
RunResult optimize_from(const Backbone& backbone, const Objective& objective, const OptimizerConfig& cfg,
                        ImageBuffer start);

/// iteration,total,<one column per term>
void write_trace_csv(const std::filesystem::path& path, const RunResult& result);

}  // namespace codeinv
