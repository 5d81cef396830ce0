#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <thread>

#include "codeinv/cli.hpp"
#include "codeinv/codeops.hpp"
#include "codeinv/optimize.hpp"

namespace codeinv::cli {
namespace {

using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

constexpr const char* kManifestName = "manifest.json";

// One (layer, filter-or-seed) cell of a command.
struct Job {
  LayerId layer;
  std::string column;  // grid column label
  std::string stem;    // image name without extension
  std::string trace;   // trace file name
  std::function<Objective()> objective;
  nlohmann::json record;
};

struct JobOutcome {
  RunResult run;
  Rgb8Image image;
};

std::uint64_t parse_seed(const std::string& text, const std::string& spec) {
  try {
    std::size_t used = 0;
    const unsigned long long seed = std::stoull(text, &used);
    if (used == text.size()) return seed;
  } catch (const std::exception&) {
  }
  throw UsageError("bad seed in weights spec '" + spec + "'");
}

OptimizerConfig optimizer_config(const Config& c) {
  OptimizerConfig cfg;
  cfg.max_iters = c.at("iters").get<int>();
  cfg.step_rule = parse_step_rule(c.at("step_rule").get<std::string>());
  cfg.history = c.at("history").get<int>();
  cfg.learning_rate = c.at("learning_rate").get<double>();
  cfg.init = parse_init_mode(c.at("init").get<std::string>());
  cfg.seed = c.at("seed").get<std::uint64_t>();
  cfg.noise_sigma = c.at("noise_sigma").get<double>();
  cfg.tolerance = c.at("tolerance").get<double>();
  cfg.bound_pixels = c.at("bound_pixels").get<bool>();
  cfg.validate();
  return cfg;
}

PriorWeights prior_weights(const Config& c) { return {c.at("tv_weight").get<double>(), c.at("l2_weight").get<double>()}; }

std::vector<LayerId> layer_list(const Config& c, const char* key) {
  std::vector<LayerId> out;
  for (const auto& name : c.at(key)) out.emplace_back(name.get<std::string>());
  return out;
}

std::string required_path(const Config& c, const char* key, Command command) {
  const std::string path = c.at(key).get<std::string>();
  if (path.empty()) throw UsageError(std::string(to_string(command)) + " needs --" + key);
  return path;
}

// Reads an input file, records its hash, and resizes to size x size when size > 0.
Rgb8Image load_input(const std::string& path, int size, nlohmann::json& inputs, const char* role) {
  Rgb8Image image = read_image(path);
  inputs[role] = {{"path", path}, {"sha256", sha256_file(path)}, {"width", image.width}, {"height", image.height}};
  if (size > 0 && (image.width != size || image.height != size)) image = resize(image, size, size);
  return image;
}

void check_layers(const Backbone& backbone, std::span<const LayerId> layers, int height, int width) {
  if (layers.empty()) throw UsageError("no layers requested");
  for (LayerId id : layers) {
    if (!backbone.has_layer(id)) throw UsageError("layer " + id.str() + " is not part of backbone " + backbone.name());
    const int need = backbone.min_input_extent(id);
    if (std::min(height, width) < need)
      throw UsageError("a " + std::to_string(height) + "x" + std::to_string(width) + " image is too small for " +
                       id.str() + " (needs at least " + std::to_string(need) + " pixels per side)");
  }
}

nlohmann::json backbone_record(const BackboneHandle& h) {
  return {{"spec", h.spec}, {"name", h.backbone->name()}, {"checksum", h.checksum}};
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

// Runs every job, `jobs` at a time. Results do not depend on the degree of parallelism: each
// job owns its state and only reads the shared backbone.
std::vector<JobOutcome> run_jobs(const Backbone& backbone, std::vector<Job>& jobs, const OptimizerConfig& cfg,
                                 const ImageBuffer& reference, int parallel, const fs::path& out, std::ostream& log) {
  std::vector<JobOutcome> outcomes(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;

  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        Job& job = jobs[i];
        const Objective objective = job.objective();
        RunResult run = optimize(backbone, objective, cfg, reference);
        Rgb8Image image = deprocess(run.image);
        write_png(out / (job.stem + ".png"), image);
        write_trace_csv(out / job.trace, run);

        nlohmann::json& r = job.record;
        r["output"] = job.stem + ".png";
        r["trace"] = job.trace;
        for (const char* key : {"status", "message", "iterations", "initial_loss", "final_loss", "final_terms",
                                "wall_seconds"})
          r[key] = run.manifest[key];
        r["warnings"] = objective.warnings;
        {
          std::lock_guard lock(log_mutex);
          log << job.stem << ": loss " << run.initial_loss() << " -> " << run.final_loss() << " ("
              << to_string(run.status) << ", " << run.trace.back().iteration << " iterations)\n";
          for (const auto& w : objective.warnings) log << job.stem << ": warning: " << w << '\n';
        }
        outcomes[i] = {std::move(run), std::move(image)};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  const int threads = std::max(1, std::min<int>(parallel, static_cast<int>(jobs.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return outcomes;
}

struct GridRun {
  std::string command;
  std::vector<LayerId> layers;
  std::vector<std::string> columns;
  std::vector<Job> jobs;
};

CommandResult finish_grid_command(const Config& config, const BackboneHandle& handle, GridRun& grid,
                                  const ImageBuffer& source, nlohmann::json inputs, nlohmann::json seeds,
                                  Clock::time_point started, std::ostream& log) {
  const OptimizerConfig cfg = optimizer_config(config);
  const fs::path out = config.at("out").get<std::string>();
  fs::create_directories(out);

  std::vector<JobOutcome> outcomes =
      run_jobs(*handle.backbone, grid.jobs, cfg, source, config.at("jobs").get<int>(), out, log);

  GridSpec spec;
  for (LayerId id : grid.layers) spec.rows.push_back(id.str());
  spec.cols = grid.columns;
  spec.cell_width = source.width();
  spec.cell_height = source.height();
  spec.labels = config.at("grid_labels").get<bool>();
  std::vector<Rgb8Image> cells;
  for (const auto& o : outcomes) cells.push_back(o.image);
  write_png(out / "grid.png", contact_sheet(spec, cells));

  CommandResult result;
  nlohmann::json runs = nlohmann::json::array();
  nlohmann::json outputs = nlohmann::json::array();
  for (std::size_t i = 0; i < grid.jobs.size(); ++i) {
    runs.push_back(grid.jobs[i].record);
    outputs.push_back(grid.jobs[i].record["output"]);
    result.failed = result.failed || outcomes[i].run.failed();
  }
  nlohmann::json optimizer;
  to_json(optimizer, cfg);
  result.manifest = {{"command", grid.command},
                     {"config", config},
                     {"backbone", backbone_record(handle)},
                     {"inputs", std::move(inputs)},
                     {"seeds", std::move(seeds)},
                     {"optimizer", optimizer},
                     {"runs", std::move(runs)},
                     {"outputs", std::move(outputs)},
                     {"grid", {{"path", "grid.png"}, {"rows", spec.rows}, {"cols", spec.cols}}},
                     {"failed", result.failed},
                     {"wall_seconds", std::chrono::duration<double>(Clock::now() - started).count()}};
  result.manifest_path = out / kManifestName;
  write_json(result.manifest_path, result.manifest);
  return result;
}

CommandResult run_fmi(const Config& config, std::ostream& log) {
  const auto started = Clock::now();
  const BackboneHandle handle = open_backbone(config.at("weights").get<std::string>());
  const Backbone& backbone = *handle.backbone;
  nlohmann::json inputs;
  const ImageBuffer source = preprocess(
      load_input(required_path(config, "image", Command::fmi), config.at("size").get<int>(), inputs, "image"),
      backbone.preprocess());

  GridRun grid{"fmi", layer_list(config, "layers"), {}, {}};
  check_layers(backbone, grid.layers, source.height(), source.width());
  const std::vector<int> filters = config.at("filters").get<std::vector<int>>();
  if (filters.empty()) throw UsageError("fmi needs at least one filter index");
  for (LayerId id : grid.layers) {
    if (id.kind() != LayerKind::relu) throw UsageError("fmi layers must be relu layers, got " + id.str());
    for (int f : filters)
      if (f < 0 || f >= backbone.channels(id))
        throw UsageError("filter " + std::to_string(f) + " is out of range for " + id.str() + ", which has " +
                         std::to_string(backbone.channels(id)) + " channels");
  }
  for (int f : filters) grid.columns.push_back("filter " + std::to_string(f));

  const PriorWeights priors = prior_weights(config);
  for (LayerId id : grid.layers) {
    for (int f : filters) {
      const std::string suffix = id.str() + "_" + std::to_string(f);
      grid.jobs.push_back({id, "filter " + std::to_string(f), "fmi_" + suffix, "trace_" + suffix + ".csv",
                           [&backbone, &source, id, f, priors] {
                             return build_fmi_objective(backbone, source, id, f, priors);
                           },
                           {{"layer", id.str()}, {"filter", f}}});
    }
  }
  nlohmann::json seeds = {{"optimizer", config.at("seed")}};
  return finish_grid_command(config, handle, grid, source, std::move(inputs), std::move(seeds), started, log);
}

CommandResult run_random_style(const Config& config, std::ostream& log) {
  const auto started = Clock::now();
  const BackboneHandle handle = open_backbone(config.at("weights").get<std::string>());
  const Backbone& backbone = *handle.backbone;
  nlohmann::json inputs;
  const ImageBuffer source = preprocess(load_input(required_path(config, "image", Command::random_style),
                                                   config.at("size").get<int>(), inputs, "image"),
                                        backbone.preprocess());

  GridRun grid{"random-style", layer_list(config, "layers"), {}, {}};
  check_layers(backbone, grid.layers, source.height(), source.width());
  const std::vector<std::uint64_t> seeds = config.at("seeds").get<std::vector<std::uint64_t>>();
  if (seeds.empty()) throw UsageError("random-style needs at least one seed");
  for (std::uint64_t s : seeds) grid.columns.push_back("seed " + std::to_string(s));

  const PriorWeights priors = prior_weights(config);
  for (LayerId id : grid.layers) {
    for (std::uint64_t s : seeds) {
      const RealloVector v = sample_simplex(backbone.channels(id), s);
      const std::string suffix = id.str() + "_" + std::to_string(s);
      nlohmann::json record = {{"layer", id.str()}, {"seed", s}, {"reallocation", v}};
      grid.jobs.push_back({id, "seed " + std::to_string(s), "random-style_" + suffix, "trace_" + suffix + ".csv",
                           [&backbone, &source, id, v, priors] {
                             return build_random_objective(backbone, source, id, v, priors);
                           },
                           std::move(record)});
    }
  }
  nlohmann::json seed_record = {{"optimizer", config.at("seed")}, {"reallocation", seeds}};
  return finish_grid_command(config, handle, grid, source, std::move(inputs), std::move(seed_record), started, log);
}

CommandResult run_style_transfer(const Config& config, std::ostream& log) {
  const auto started = Clock::now();
  const BackboneHandle handle = open_backbone(config.at("weights").get<std::string>());
  const Backbone& backbone = *handle.backbone;
  nlohmann::json inputs;
  const Rgb8Image content_rgb = load_input(required_path(config, "content", Command::style_transfer),
                                           config.at("size").get<int>(), inputs, "content");
  Rgb8Image style_rgb = load_input(required_path(config, "style", Command::style_transfer), 0, inputs, "style");
  const std::string resize_rule = config.at("style_resize").get<std::string>();
  if (resize_rule == "area") {
    const auto [w, h] = area_matched_size(style_rgb, static_cast<long long>(content_rgb.width) * content_rgb.height);
    style_rgb = resize(style_rgb, w, h);
  } else if (resize_rule == "content") {
    style_rgb = resize(style_rgb, content_rgb.width, content_rgb.height);
  }
  const ImageBuffer content = preprocess(content_rgb, backbone.preprocess());
  const ImageBuffer style = preprocess(style_rgb, backbone.preprocess());

  StyleTransferOptions opts;
  try {
    opts.content_layer = LayerId(config.at("content_layer").get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("content_layer: ") + e.what());
  }
  opts.style_layers = layer_list(config, "style_layers");
  opts.alpha = config.at("alpha").get<double>();
  opts.beta = config.at("beta").get<double>();
  opts.priors = prior_weights(config);
  opts.normalize_style = config.at("normalize_style").get<bool>();
  check_layers(backbone, std::span(&opts.content_layer, 1), content.height(), content.width());
  check_layers(backbone, opts.style_layers, style.height(), style.width());
  const bool gram = config.at("mode") == "gram";

  const OptimizerConfig cfg = optimizer_config(config);
  const fs::path out = config.at("out").get<std::string>();
  fs::create_directories(out);
  const std::string suffix = opts.content_layer.str() + "_" + std::to_string(cfg.seed);
  std::vector<Job> jobs;
  jobs.push_back({opts.content_layer, "", "style-transfer_" + suffix, "trace_" + suffix + ".csv",
                  [&] {
                    return gram ? build_gram_objective(backbone, content, style, opts)
                                : build_pmci_objective(backbone, content, style, opts);
                  },
                  {{"layer", opts.content_layer.str()}, {"seed", cfg.seed}, {"mode", config.at("mode")}}});
  std::vector<JobOutcome> outcomes = run_jobs(backbone, jobs, cfg, content, 1, out, log);
  const RunResult& run = outcomes.front().run;

  // Target descriptors of the style image and the descriptors the result actually has.
  const CodeMap style_codes = backbone.extract_codes(style, opts.style_layers);
  const CodeMap result_codes = backbone.extract_codes(run.image, opts.style_layers);
  const ImageBuffer start = init_image(cfg.init, content.height(), content.width(), cfg.seed, cfg.noise_sigma,
                                       &content, content.preprocess);
  nlohmann::json descriptors = nlohmann::json::array();
  for (LayerId id : opts.style_layers) {
    const StyleDescriptor target = style_descriptor(style_codes.at(id));
    nlohmann::json entry = {{"layer", id.str()},
                            {"target", target},
                            {"result", style_descriptor(result_codes.at(id))},
                            {"initial_distance", style_distance(backbone, start, target)},
                            {"final_distance", style_distance(backbone, run.image, target)}};
    if (gram) {
      entry["target_gram"] = gram_descriptor(style_codes.at(id));
      entry["result_gram"] = gram_descriptor(result_codes.at(id));
    }
    descriptors.push_back(std::move(entry));
  }

  CommandResult result;
  result.failed = run.failed();
  nlohmann::json optimizer;
  to_json(optimizer, cfg);
  inputs["style"]["resized_to"] = {style.width(), style.height()};
  result.manifest = {{"command", "style-transfer"},
                     {"config", config},
                     {"backbone", backbone_record(handle)},
                     {"inputs", std::move(inputs)},
                     {"seeds", {{"optimizer", cfg.seed}}},
                     {"optimizer", optimizer},
                     {"runs", {jobs.front().record}},
                     {"outputs", {jobs.front().record["output"]}},
                     {"descriptors", std::move(descriptors)},
                     {"failed", result.failed},
                     {"wall_seconds", std::chrono::duration<double>(Clock::now() - started).count()}};
  result.manifest_path = out / kManifestName;
  write_json(result.manifest_path, result.manifest);
  return result;
}

CommandResult run_inspect(const Config& config, std::ostream& log) {
  const auto started = Clock::now();
  const BackboneHandle handle = open_backbone(config.at("weights").get<std::string>());
  const Backbone& backbone = *handle.backbone;
  nlohmann::json inputs;
  const ImageBuffer image = preprocess(
      load_input(required_path(config, "image", Command::inspect), config.at("size").get<int>(), inputs, "image"),
      backbone.preprocess());
  std::vector<LayerId> layers = layer_list(config, "layers");
  if (layers.empty())
    for (LayerId id : LayerId::all())
      if (id.kind() == LayerKind::relu && backbone.has_layer(id)) layers.push_back(id);
  check_layers(backbone, layers, image.height(), image.width());

  nlohmann::json report = inspect_report(backbone, image, layers);
  report["backbone"] = backbone_record(handle);
  report["inputs"] = inputs;

  CommandResult result;
  const std::string out = config.at("out").get<std::string>();
  if (out.empty()) {
    log << report.dump(2) << '\n';
    result.manifest = report;
    return result;
  }
  fs::create_directories(out);
  write_json(fs::path(out) / "inspect.json", report);
  result.manifest = {{"command", "inspect"},
                     {"config", config},
                     {"backbone", backbone_record(handle)},
                     {"inputs", std::move(inputs)},
                     {"outputs", {"inspect.json"}},
                     {"failed", false},
                     {"wall_seconds", std::chrono::duration<double>(Clock::now() - started).count()}};
  result.manifest_path = fs::path(out) / kManifestName;
  write_json(result.manifest_path, result.manifest);
  log << "wrote " << (fs::path(out) / "inspect.json").string() << '\n';
  return result;
}

CommandResult run_fetch(const Config& config, std::ostream& log) {
  FetchRequest request;
  request.url = config.at("url").get<std::string>();
  request.sha256 = config.at("sha256").get<std::string>();
  request.cache_dir = config.at("cache_dir").get<std::string>();
  if (const std::string output = config.at("output").get<std::string>(); !output.empty()) request.output = output;
  const fs::path path = fetch_weights(request, log);
  CommandResult result;
  result.manifest = {{"command", "fetch-weights"}, {"config", config}, {"path", path.string()},
                     {"sha256", sha256_file(path)}};
  log << path.string() << '\n';
  return result;
}

}  // namespace

BackboneHandle open_backbone(const std::string& spec) {
  if (spec.empty()) throw UsageError("no weights given: pass --weights or set CODEINV_WEIGHTS");
  BackboneHandle h;
  h.spec = spec;
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string seed_text = colon == std::string::npos ? "0" : spec.substr(colon + 1);
  if ((kind == "toy" || kind == "random-vgg19") && !fs::exists(spec)) {
    const std::uint64_t seed = parse_seed(seed_text, spec);
    h.backbone = std::make_shared<const Backbone>(kind == "toy" ? build_toy_backbone(seed) : make_random_vgg19(seed));
    h.checksum = "generated:" + kind + ":" + std::to_string(seed);
    return h;
  }
  h.backbone = std::make_shared<const Backbone>(load_backbone(spec));
  h.checksum = h.backbone->checksum();
  return h;
}

nlohmann::json inspect_report(const Backbone& backbone, const ImageBuffer& image, std::span<const LayerId> layers) {
  const CodeMap codes = backbone.extract_codes(image, layers);
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [id, code] : codes) {
    const Shape3 s = code.values.shape();
    nlohmann::json entry = {{"layer", id.str()}, {"shape", {s.channels, s.height, s.width}}};
    if (id.kind() != LayerKind::conv) {
      const StyleDescriptor d = style_descriptor(code);
      entry["channel_sums"] = d.sums;
      entry["spatial_size"] = d.spatial_size;
      entry["total"] = code.values.sum();
      int dead = 0;
      for (double v : d.sums) dead += v == 0.0;
      entry["dead_channels"] = dead;
      if (code.values.sum() > 0.0) entry["energy_shares"] = energy_shares(code).v;
    }
    entries.push_back(std::move(entry));
  }
  return {{"image", {{"height", image.height()}, {"width", image.width()}}}, {"layers", std::move(entries)}};
}

CommandResult run_command(Command command, const Config& resolved, std::ostream& log) {
  switch (command) {
    case Command::fmi: return run_fmi(resolved, log);
    case Command::random_style: return run_random_style(resolved, log);
    case Command::style_transfer: return run_style_transfer(resolved, log);
    case Command::inspect: return run_inspect(resolved, log);
    case Command::fetch_weights: return run_fetch(resolved, log);
  }
  throw UsageError("unknown command");
}

CommandResult replay_manifest(const fs::path& manifest_path, const std::optional<fs::path>& out, std::ostream& log) {
  std::ifstream in(manifest_path);
  if (!in) throw UsageError("cannot read manifest '" + manifest_path.string() + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("manifest '" + manifest_path.string() + "': " + e.what());
  }
  if (!manifest.contains("command") || !manifest.contains("config"))
    throw UsageError("'" + manifest_path.string() + "' is not a run manifest");
  const Command command = parse_command(manifest["command"].get<std::string>());
  Config overrides = Config::object();
  if (out) overrides["out"] = out->string();
  const Config sources[] = {manifest["config"], overrides};
  const Config config = resolve_config(command, sources);

  if (manifest.contains("backbone")) {
    const BackboneHandle h = open_backbone(config.at("weights").get<std::string>());
    const std::string recorded = manifest["backbone"]["checksum"].get<std::string>();
    if (h.checksum != recorded)
      throw std::runtime_error("weights checksum " + h.checksum + " differs from the recorded " + recorded);
  }
  const nlohmann::json inputs = manifest.value("inputs", nlohmann::json::object());
  for (const auto& [role, input] : inputs.items()) {
    const std::string path = input.at("path").get<std::string>();
    if (sha256_file(path) != input.at("sha256").get<std::string>())
      throw std::runtime_error("input '" + path + "' (" + role + ") changed since the manifest was written");
  }
  log << "replaying " << to_string(command) << " from " << manifest_path.string() << '\n';
  return run_command(command, config, log);
}

}  // namespace codeinv::cli
