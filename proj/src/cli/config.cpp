#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "codeinv/cli.hpp"
#include "codeinv/optimize.hpp"

namespace codeinv::cli {
namespace {

enum class KeyType { text, path, weights, integer, number, boolean, layers, integers, choice };

struct KeySpec {
  KeyType type;
  nlohmann::json fallback;
  std::vector<std::string> choices{};
};

using KeyTable = std::map<std::string, KeySpec>;

nlohmann::json layer_names(std::initializer_list<const char*> names) {
  nlohmann::json out = nlohmann::json::array();
  for (const char* n : names) out.push_back(n);
  return out;
}

std::string env_or(const char* name, std::string fallback) {
  const char* value = std::getenv(name);
  return value && *value ? value : fallback;
}

void add_optimizer_keys(KeyTable& t) {
  t["weights"] = {KeyType::weights, env_or("CODEINV_WEIGHTS", "")};
  t["size"] = {KeyType::integer, 224};
  t["iters"] = {KeyType::integer, 200};
  t["init"] = {KeyType::choice, "noise", {"noise", "content"}};
  t["seed"] = {KeyType::integer, 0};
  t["tv_weight"] = {KeyType::number, 1e-4};
  t["l2_weight"] = {KeyType::number, 0.0};
  t["out"] = {KeyType::path, "out"};
  t["jobs"] = {KeyType::integer, 1};
  t["step_rule"] = {KeyType::choice, "lbfgs", {"lbfgs", "fixed"}};
  t["learning_rate"] = {KeyType::number, 1.0};
  t["noise_sigma"] = {KeyType::number, 10.0};
  t["tolerance"] = {KeyType::number, 1e-5};
  t["history"] = {KeyType::integer, 10};
  t["bound_pixels"] = {KeyType::boolean, true};
  t["grid_labels"] = {KeyType::boolean, true};
}

KeyTable key_table(Command command) {
  KeyTable t;
  switch (command) {
    case Command::fmi:
      add_optimizer_keys(t);
      t["image"] = {KeyType::path, ""};
      t["layers"] = {KeyType::layers, layer_names({"relu1_2", "relu2_2", "relu3_2", "relu4_2", "relu5_2"})};
      t["filters"] = {KeyType::integers, {0, 1, 2, 3, 4}};
      break;
    case Command::random_style:
      add_optimizer_keys(t);
      t["image"] = {KeyType::path, ""};
      t["layers"] = {KeyType::layers, layer_names({"relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1"})};
      t["seeds"] = {KeyType::integers, {0, 1}};
      break;
    case Command::style_transfer:
      add_optimizer_keys(t);
      t["init"].fallback = "content";
      t["content"] = {KeyType::path, ""};
      t["style"] = {KeyType::path, ""};
      t["mode"] = {KeyType::choice, "channel_sum", {"channel_sum", "gram"}};
      t["alpha"] = {KeyType::number, 10.0};
      t["beta"] = {KeyType::number, 1.0};
      t["content_layer"] = {KeyType::text, "relu2_2"};
      t["style_layers"] = {KeyType::layers, layer_names({"relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1"})};
      t["style_resize"] = {KeyType::choice, "area", {"area", "content", "none"}};
      t["normalize_style"] = {KeyType::boolean, false};
      break;
    case Command::inspect:
      t["weights"] = {KeyType::weights, env_or("CODEINV_WEIGHTS", "")};
      t["image"] = {KeyType::path, ""};
      t["layers"] = {KeyType::layers, nlohmann::json::array()};  // empty: every relu layer
      t["size"] = {KeyType::integer, 0};                         // 0: keep the image's own size
      t["out"] = {KeyType::path, ""};
      break;
    case Command::fetch_weights:
      t["url"] = {KeyType::text, ""};
      t["sha256"] = {KeyType::text, ""};
      t["cache_dir"] = {KeyType::path, default_cache_dir().string()};
      t["output"] = {KeyType::path, ""};
      break;
  }
  return t;
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    out.push_back(item.substr(first, item.find_last_not_of(" \t") - first + 1));
  }
  return out;
}

long long parse_integer(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  long long value = 0;
  try {
    value = std::stoll(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw UsageError(key + ": '" + text + "' is not an integer");
  return value;
}

nlohmann::json coerce(const std::string& key, const KeySpec& spec, const nlohmann::json& value) {
  auto wrong = [&](const char* expected) {
    return UsageError(key + ": expected " + std::string(expected) + ", got " + value.dump());
  };
  switch (spec.type) {
    case KeyType::text:
    case KeyType::weights:
    case KeyType::path:
    case KeyType::choice: {
      if (!value.is_string()) throw wrong("a string");
      std::string s = value.get<std::string>();
      if (spec.type == KeyType::choice &&
          std::find(spec.choices.begin(), spec.choices.end(), s) == spec.choices.end()) {
        std::string allowed;
        for (const auto& c : spec.choices) allowed += (allowed.empty() ? "" : "|") + c;
        throw UsageError(key + ": '" + s + "' is not one of " + allowed);
      }
      const bool file_like = spec.type == KeyType::path ||
                             (spec.type == KeyType::weights && std::filesystem::exists(s));
      if (file_like && !s.empty()) s = std::filesystem::absolute(s).lexically_normal().string();
      return s;
    }
    case KeyType::integer:
      if (value.is_number_integer()) return value;
      if (value.is_string()) return parse_integer(key, value.get<std::string>());
      throw wrong("an integer");
    case KeyType::number:
      if (value.is_number()) return value.get<double>();
      if (value.is_string()) {
        try {
          std::size_t used = 0;
          const double d = std::stod(value.get<std::string>(), &used);
          if (used == value.get<std::string>().size()) return d;
        } catch (const std::exception&) {
        }
      }
      throw wrong("a number");
    case KeyType::boolean:
      if (value.is_boolean()) return value;
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw wrong("true or false");
    case KeyType::layers: {
      std::vector<std::string> names;
      if (value.is_string()) {
        names = split_csv(value.get<std::string>());
      } else if (value.is_array()) {
        for (const auto& v : value) {
          if (!v.is_string()) throw wrong("layer names");
          names.push_back(v.get<std::string>());
        }
      } else {
        throw wrong("a list of layer names");
      }
      nlohmann::json out = nlohmann::json::array();
      for (const auto& n : names) {
        try {
          out.push_back(LayerId(n).name());
        } catch (const std::invalid_argument& e) {
          throw UsageError(key + ": " + e.what());
        }
      }
      return out;
    }
    case KeyType::integers: {
      nlohmann::json out = nlohmann::json::array();
      if (value.is_string()) {
        for (const auto& item : split_csv(value.get<std::string>())) out.push_back(parse_integer(key, item));
      } else if (value.is_array()) {
        for (const auto& v : value) {
          if (!v.is_number_integer()) throw wrong("integers");
          out.push_back(v);
        }
      } else {
        throw wrong("a list of integers");
      }
      return out;
    }
  }
  return value;
}

void check_ranges(const Config& c) {
  auto at_least = [&](const char* key, long long low) {
    if (c.contains(key) && c[key].get<long long>() < low)
      throw UsageError(std::string(key) + " must be at least " + std::to_string(low));
  };
  at_least("size", 0);
  at_least("iters", 1);
  at_least("jobs", 1);
  at_least("history", 1);
  at_least("seed", 0);
  for (const char* key : {"tv_weight", "l2_weight", "noise_sigma", "alpha", "beta"})
    if (c.contains(key) && !(c[key].get<double>() >= 0.0)) throw UsageError(std::string(key) + " must be non-negative");
  for (const char* key : {"learning_rate", "tolerance"})
    if (c.contains(key) && !(c[key].get<double>() > 0.0)) throw UsageError(std::string(key) + " must be positive");
  if (c.contains("seeds"))
    for (const auto& s : c["seeds"])
      if (s.get<long long>() < 0) throw UsageError("seeds must be non-negative");
}

}  // namespace

std::string_view to_string(Command command) {
  switch (command) {
    case Command::fmi: return "fmi";
    case Command::random_style: return "random-style";
    case Command::style_transfer: return "style-transfer";
    case Command::inspect: return "inspect";
    case Command::fetch_weights: return "fetch-weights";
  }
  return "?";
}

Command parse_command(std::string_view text) {
  for (Command c : {Command::fmi, Command::random_style, Command::style_transfer, Command::inspect,
                    Command::fetch_weights})
    if (to_string(c) == text) return c;
  throw UsageError("unknown command '" + std::string(text) + "'");
}

Config default_config(Command command) {
  Config out = Config::object();
  for (const auto& [key, spec] : key_table(command)) out[key] = spec.fallback;
  return out;
}

Config read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path.string() + "'");
  Config c;
  try {
    c = Config::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError("config file '" + path.string() + "': " + e.what());
  }
  if (!c.is_object()) throw UsageError("config file '" + path.string() + "' must hold a JSON object");
  for (const auto& [key, value] : c.items())
    if (value.is_object()) throw UsageError("config file '" + path.string() + "': key '" + key + "' is nested");
  return c;
}

Config resolve_config(Command command, std::span<const Config> sources) {
  const KeyTable table = key_table(command);
  Config out = Config::object();
  for (const auto& [key, spec] : table) out[key] = coerce(key, spec, spec.fallback);
  for (const Config& source : sources) {
    if (!source.is_object()) throw UsageError("config source must be an object");
    for (const auto& [raw_key, value] : source.items()) {
      std::string key = raw_key;
      std::replace(key.begin(), key.end(), '-', '_');
      const auto it = table.find(key);
      if (it == table.end())
        throw UsageError("unknown key '" + raw_key + "' for " + std::string(to_string(command)));
      out[key] = coerce(key, it->second, value);
    }
  }
  check_ranges(out);
  return out;
}

}  // namespace codeinv::cli
