#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "codeinv/cli.hpp"

using namespace codeinv::cli;

namespace {

const std::map<std::string, std::string> kHelp = {
    {"weights", "weights file, or toy[:seed] / random-vgg19[:seed] for smoke runs (env CODEINV_WEIGHTS)"},
    {"size", "resize inputs to size x size pixels (0 keeps the original size)"},
    {"iters", "maximum optimizer iterations per run"},
    {"init", "starting image: noise or content"},
    {"seed", "seed of the noise initialisation"},
    {"tv_weight", "total-variation weight relative to the data terms"},
    {"l2_weight", "pixel L2 weight relative to the data terms"},
    {"out", "output directory"},
    {"jobs", "independent runs to execute concurrently"},
    {"step_rule", "lbfgs or fixed"},
    {"learning_rate", "initial step of the fixed step rule"},
    {"noise_sigma", "standard deviation of the noise initialisation"},
    {"tolerance", "relative loss change that ends a run"},
    {"history", "L-BFGS memory"},
    {"bound_pixels", "clamp pixels to the 8-bit range (true/false)"},
    {"grid_labels", "draw row and column labels on grid.png (true/false)"},
    {"image", "input image (PNG or JPEG)"},
    {"layers", "comma-separated layer names"},
    {"filters", "comma-separated feature map indices"},
    {"seeds", "comma-separated reallocation seeds"},
    {"content", "content image"},
    {"style", "style image"},
    {"mode", "style statistic: channel_sum or gram"},
    {"alpha", "content weight"},
    {"beta", "total style weight, split equally over style layers"},
    {"content_layer", "layer whose code is kept"},
    {"style_layers", "comma-separated style layers"},
    {"style_resize", "area, content or none"},
    {"normalize_style", "divide style statistics by spatial size (true/false)"},
    {"url", "where to download the weights from"},
    {"sha256", "expected SHA-256 of the download"},
    {"cache_dir", "download cache"},
    {"output", "also copy the weights here"},
};

const std::map<Command, std::string> kAbout = {
    {Command::fmi, "feature map inversion: one image per (layer, feature map)"},
    {Command::random_style, "invert codes whose channel energies were randomly reallocated"},
    {Command::style_transfer, "content code plus channel-sum (or Gram) style statistics"},
    {Command::inspect, "report code shapes and channel sums as JSON"},
    {Command::fetch_weights, "download and verify a VGG-19 weights file"},
};

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Invert and edit VGG-19 activation codes."};
  app.require_subcommand(1);

  struct Parsed {
    CLI::App* sub;
    std::string config_file;
    std::map<std::string, std::string> values;
  };
  std::map<Command, Parsed> commands;
  for (const auto& [command, about] : kAbout) {
    Parsed& p = commands[command];
    p.sub = app.add_subcommand(std::string(to_string(command)), about);
    p.sub->add_option("--config", p.config_file, "flat JSON config file (flags win over it)");
    const Config defaults = default_config(command);
    for (const auto& [key, fallback] : defaults.items()) {
      const std::string shown = fallback.is_string() ? fallback.get<std::string>() : fallback.dump();
      p.sub->add_option(flag_name(key), p.values[key], kHelp.at(key) + " [" + shown + "]");
    }
  }

  std::string manifest;
  std::optional<std::string> replay_out;
  CLI::App* replay = app.add_subcommand("replay", "re-run the command recorded in a manifest");
  replay->add_option("manifest", manifest, "manifest.json of an earlier run")->required();
  replay->add_option("--out", replay_out, "write outputs here instead of the recorded directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    CommandResult result;
    if (replay->parsed()) {
      std::optional<std::filesystem::path> out;
      if (replay_out) out = *replay_out;
      result = replay_manifest(manifest, out, std::cout);
    } else {
      for (auto& [command, p] : commands) {
        if (!p.sub->parsed()) continue;
        std::vector<Config> sources;
        if (!p.config_file.empty()) sources.push_back(read_config_file(p.config_file));
        Config flags = Config::object();
        for (const auto& [key, value] : p.values)
          if (p.sub->count(flag_name(key)) > 0) flags[key] = value;
        sources.push_back(std::move(flags));
        result = run_command(command, resolve_config(command, sources), std::cout);
      }
    }
    if (!result.manifest_path.empty()) std::cout << "manifest: " << result.manifest_path.string() << '\n';
    if (result.failed) {
      std::cerr << "error: at least one run failed to descend; see the manifest\n";
      return kExitFailure;
    }
    return kExitOk;
  } catch (const std::invalid_argument& e) {  // includes UsageError
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
