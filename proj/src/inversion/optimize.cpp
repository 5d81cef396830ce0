#include "codeinv/optimize.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <utility>

#include <Eigen/Core>

namespace codeinv {
namespace {

using Vector = Eigen::VectorXd;
using VectorMap = Eigen::Map<Vector>;
using ConstVectorMap = Eigen::Map<const Vector>;

ConstVectorMap as_vector(const Tensor3& t) { return {t.data(), static_cast<Eigen::Index>(t.size())}; }
VectorMap as_vector(Tensor3& t) { return {t.data(), static_cast<Eigen::Index>(t.size())}; }

void project(ImageBuffer& image) {
  for (int c = 0; c < image.pixels.channels(); ++c) {
    const auto [lo, hi] = pixel_range(image.preprocess, c);
    for (double& v : image.pixels.channel(c)) v = std::clamp(v, lo, hi);
  }
}

std::optional<ObjectiveValue> try_evaluate(const Backbone& backbone, const ImageBuffer& image,
                                           const Objective& objective) {
  try {
    return objective_gradient(backbone, image, objective);
  } catch (const std::runtime_error&) {
    return std::nullopt;
  }
}

struct CurvaturePair {
  Vector s, y;
  double rho;
};

// Two-loop recursion: returns -H g for the implicit inverse Hessian H.
Vector lbfgs_direction(const Vector& g, const std::deque<CurvaturePair>& history) {
  Vector q = g;
  std::vector<double> alpha(history.size());
  for (std::size_t i = history.size(); i-- > 0;) {
    alpha[i] = history[i].rho * history[i].s.dot(q);
    q -= alpha[i] * history[i].y;
  }
  const CurvaturePair& last = history.back();
  q *= last.s.dot(last.y) / last.y.squaredNorm();
  for (std::size_t i = 0; i < history.size(); ++i) {
    const double beta = history[i].rho * history[i].y.dot(q);
    q += (alpha[i] - beta) * history[i].s;
  }
  return -q;
}

TraceEntry entry(int iteration, const ObjectiveValue& v) { return {iteration, v.total, v.per_term}; }

}  // namespace

std::string_view to_string(StepRule rule) { return rule == StepRule::lbfgs ? "lbfgs" : "fixed"; }
std::string_view to_string(InitMode mode) { return mode == InitMode::noise ? "noise" : "content"; }

StepRule parse_step_rule(std::string_view text) {
  if (text == "lbfgs") return StepRule::lbfgs;
  if (text == "fixed") return StepRule::fixed;
  throw std::invalid_argument("unknown step rule '" + std::string(text) + "' (lbfgs|fixed)");
}

InitMode parse_init_mode(std::string_view text) {
  if (text == "noise") return InitMode::noise;
  if (text == "content") return InitMode::content;
  throw std::invalid_argument("unknown init mode '" + std::string(text) + "' (noise|content)");
}

std::string_view to_string(RunStatus status) {
  switch (status) {
    case RunStatus::converged: return "converged";
    case RunStatus::max_iters: return "max_iters";
    case RunStatus::diverged: return "diverged";
    case RunStatus::no_descent: return "no_descent";
  }
  return "?";
}

void OptimizerConfig::validate() const {
  if (max_iters < 1) throw std::invalid_argument("max_iters must be at least 1");
  if (!(tolerance > 0.0)) throw std::invalid_argument("tolerance must be positive");
  if (window < 1) throw std::invalid_argument("convergence window must be at least 1");
  if (history < 1) throw std::invalid_argument("L-BFGS history must be at least 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise sigma must be non-negative");
  if (max_backtracks < 1) throw std::invalid_argument("max_backtracks must be at least 1");
}

void to_json(nlohmann::json& j, const OptimizerConfig& cfg) {
  j = {{"max_iters", cfg.max_iters},     {"step_rule", to_string(cfg.step_rule)}, {"history", cfg.history},
       {"learning_rate", cfg.learning_rate}, {"init", to_string(cfg.init)},      {"seed", cfg.seed},
       {"noise_sigma", cfg.noise_sigma}, {"tolerance", cfg.tolerance},         {"window", cfg.window},
       {"bound_pixels", cfg.bound_pixels}, {"max_backtracks", cfg.max_backtracks}};
}

ImageBuffer init_image(InitMode mode, int height, int width, std::uint64_t seed, double sigma,
                       const ImageBuffer* content, Preprocess preprocess) {
  if (mode == InitMode::content) {
    if (!content) throw std::invalid_argument("content initialisation needs a content image");
    if (content->height() != height || content->width() != width)
      throw std::invalid_argument("content image is " + std::to_string(content->height()) + "x" +
                                  std::to_string(content->width()) + ", expected " + std::to_string(height) + "x" +
                                  std::to_string(width));
    return *content;
  }
  if (height < 1 || width < 1) throw std::invalid_argument("initial image needs positive extent");
  Tensor3 pixels(Shape3{3, height, width});
  if (sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    for (double& v : pixels.values()) v = noise(rng);
  }
  return make_image(std::move(pixels), preprocess);
}

RunResult optimize(const Backbone& backbone, const Objective& objective, const OptimizerConfig& cfg,
                   const ImageBuffer& reference) {
  return optimize_from(backbone, objective, cfg,
                       init_image(cfg.init, reference.height(), reference.width(), cfg.seed, cfg.noise_sigma,
                                  &reference, reference.preprocess));
}

RunResult optimize_from(const Backbone& backbone, const Objective& objective, const OptimizerConfig& cfg,
                        ImageBuffer start) {
  cfg.validate();
  objective.check(backbone, start.height(), start.width());
  const auto started = std::chrono::steady_clock::now();

  RunResult result;
  result.term_labels = objective.labels();
  ImageBuffer x = std::move(start);
  if (cfg.bound_pixels) project(x);

  auto finish = [&](RunStatus status, std::string message) {
    result.status = status;
    result.converged = status == RunStatus::converged;
    result.message = std::move(message);
    result.image = std::move(x);
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    nlohmann::json terms = nlohmann::json::object();
    for (std::size_t i = 0; i < result.term_labels.size(); ++i)
      terms[result.term_labels[i]] = result.trace.back().terms.empty() ? 0.0 : result.trace.back().terms[i];
    result.manifest = {{"optimizer", cfg},
                       {"status", to_string(result.status)},
                       {"converged", result.converged},
                       {"message", result.message},
                       {"iterations", result.trace.back().iteration},
                       {"initial_loss", result.initial_loss()},
                       {"final_loss", result.final_loss()},
                       {"final_terms", terms},
                       {"wall_seconds", result.wall_seconds}};
    return std::move(result);
  };

  std::optional<ObjectiveValue> current = try_evaluate(backbone, x, objective);
  if (!current) {
    result.trace.push_back({0, NAN, {}});
    return finish(RunStatus::diverged, "loss is not finite at the initial image");
  }
  result.trace.push_back(entry(0, *current));
  if (current->total == 0.0 || current->gradient.squared_norm() == 0.0)
    return finish(RunStatus::converged, "initial image is stationary");

  std::deque<CurvaturePair> history;
  double fixed_step = cfg.learning_rate;

  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    const ConstVectorMap g = as_vector(std::as_const(current->gradient));
    const ConstVectorMap xv = as_vector(std::as_const(x.pixels));

    std::optional<ObjectiveValue> accepted;
    ImageBuffer trial = x;
    bool stalled = false;

    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      Vector d;
      double step;
      if (cfg.step_rule == StepRule::lbfgs && !history.empty()) {
        d = lbfgs_direction(g, history);
        step = 1.0;
        if (d.dot(g) >= 0.0) {
          history.clear();
          continue;
        }
      } else {
        d = -g;
        step = cfg.step_rule == StepRule::fixed ? fixed_step : 1.0 / g.lpNorm<Eigen::Infinity>();
      }

      stalled = false;
      for (int k = 0; k < cfg.max_backtracks; ++k, step *= 0.5) {
        as_vector(trial.pixels) = xv + step * d;
        if (cfg.bound_pixels) project(trial);
        const Vector moved = as_vector(trial.pixels) - xv;
        if (moved.lpNorm<Eigen::Infinity>() == 0.0) {
          stalled = true;
          break;
        }
        auto value = try_evaluate(backbone, trial, objective);
        if (value && value->total <= current->total + 1e-4 * g.dot(moved)) {
          accepted = std::move(value);
          if (cfg.step_rule == StepRule::fixed) fixed_step = step;
          break;
        }
      }
      if (!accepted) history.clear();
      if (!accepted && cfg.step_rule == StepRule::fixed) break;
    }

    if (!accepted) {
      if (stalled) return finish(RunStatus::converged, "no representable step decreases the loss");
      // loss already at rounding level of where it started: nothing left to descend
      if (current->total <= std::numeric_limits<double>::epsilon() * result.initial_loss())
        return finish(RunStatus::converged, "loss reduced to rounding level");
      return finish(RunStatus::no_descent, "line search found no decreasing step");
    }

    if (cfg.step_rule == StepRule::lbfgs) {
      CurvaturePair pair{as_vector(trial.pixels) - xv, as_vector(accepted->gradient) - g, 0.0};
      const double sy = pair.s.dot(pair.y);
      if (sy > 1e-10 * pair.s.norm() * pair.y.norm()) {
        pair.rho = 1.0 / sy;
        history.push_back(std::move(pair));
        if (static_cast<int>(history.size()) > cfg.history) history.pop_front();
      }
    }

    x = std::move(trial);
    current = std::move(accepted);
    result.trace.push_back(entry(iter, *current));

    if (current->total == 0.0 || current->gradient.squared_norm() == 0.0)
      return finish(RunStatus::converged, "reached a stationary point");
    if (static_cast<int>(result.trace.size()) > cfg.window) {
      const double before = result.trace[result.trace.size() - 1 - cfg.window].total;
      if ((before - current->total) <= cfg.tolerance * std::abs(before))
        return finish(RunStatus::converged, "relative loss change below tolerance");
    }
  }
  return finish(RunStatus::max_iters, "iteration budget exhausted");
}

void write_trace_csv(const std::filesystem::path& path, const RunResult& result) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "iteration,total";
  for (const auto& label : result.term_labels) out << ',' << label;
  out << '\n';
  out.precision(17);
  for (const TraceEntry& e : result.trace) {
    out << e.iteration << ',' << e.total;
    for (double t : e.terms) out << ',' << t;
    out << '\n';
  }
}

}  // namespace codeinv
