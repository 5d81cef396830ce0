#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "codeinv/backbone.hpp"

namespace codeinv::cli {

enum class Command { fmi, random_style, style_transfer, inspect, fetch_weights };

std::string_view to_string(Command command);
Command parse_command(std::string_view text);

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/// Bad flag, config key or value. Reported with exit code 1.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat key/value document. Keys are the long flag names with '-' replaced by '_'.
using Config = nlohmann::json;

Config default_config(Command command);

/// Reads a JSON config file; throws UsageError if it is not a flat object.
Config read_config_file(const std::filesystem::path& path);

/// Defaults, then each source in order, later keys winning. Unknown keys and ill-typed values
/// throw UsageError. List-valued keys accept arrays or comma-separated strings; input paths
/// are made absolute so the result can be replayed from any directory.
Config resolve_config(Command command, std::span<const Config> sources);

/// A backbone plus how it was obtained.
struct BackboneHandle {
  std::shared_ptr<const Backbone> backbone;
  std::string spec;      // what the user asked for
  std::string checksum;  // file SHA-256, or "generated:<spec>"
};

/// `spec` is a weights file path, "toy[:seed]" or "random-vgg19[:seed]". The two generated
/// networks exist for tests and smoke runs; their outputs mean nothing.
BackboneHandle open_backbone(const std::string& spec);

struct CommandResult {
  nlohmann::json manifest;
  std::filesystem::path manifest_path;  // empty for commands that write no manifest
  bool failed = false;                  // some run diverged or found no descent
};

/// Executes a resolved config, writing images, traces, grid and manifest.json to its out
/// directory (inspect prints its report to `log` unless an out directory is set).
CommandResult run_command(Command command, const Config& resolved, std::ostream& log);

/// Re-runs the command recorded in a manifest. Refuses to run when the weights or input
/// hashes differ from the recorded ones.
CommandResult replay_manifest(const std::filesystem::path& manifest,
                              const std::optional<std::filesystem::path>& out, std::ostream& log);

/// Shapes, channel sums and energy shares of `layers` for one image.
nlohmann::json inspect_report(const Backbone& backbone, const ImageBuffer& image, std::span<const LayerId> layers);

/// Contact sheet layout: rows outer, cols inner.
struct GridSpec {
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  int cell_width = 0;
  int cell_height = 0;
  bool labels = true;
  int gap = 2;
};

/// Tiles `cells` (row-major, rows.size() * cols.size() of them) into one image, resizing
/// cells that do not match the cell size.
Rgb8Image contact_sheet(const GridSpec& spec, std::span<const Rgb8Image> cells);

struct FetchRequest {
  std::string url;
  std::string sha256;  // expected digest; empty skips verification
  std::filesystem::path cache_dir;
  std::optional<std::filesystem::path> output;  // copy destination
};

/// $CODEINV_CACHE, else $XDG_CACHE_HOME/codeinv, else ~/.cache/codeinv.
std::filesystem::path default_cache_dir();

/// Downloads into the cache unless a file with the expected digest is already there, checks
/// the digest and that the file loads as VGG-19, and returns the cached path.
std::filesystem::path fetch_weights(const FetchRequest& request, std::ostream& log);

}  // namespace codeinv::cli
