#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "heliofit/evalkit.hpp"
#include "heliofit/fitter.hpp"
#include "heliofit/transport.hpp"

namespace heliofit::service {

struct ServiceSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;      ///< served at "/" when set
  std::string data_dir;        ///< job store and uploads; in-memory when empty
  std::size_t max_upload_bytes = 64u << 20;
  std::size_t queue_depth = 16;
  int preview_size = 128;      ///< dome size used by /api/relight
  int threads = 4;             ///< HTTP worker threads
};

struct AppConfig {
  ServiceSettings service;
  FitConfig fit;
  SceneSpec scene;
  CloudConfig cloud;

  /// Throws ConfigError when a value is out of range.
  void validate() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Returns the value of an environment variable, if set.
using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_env();

/// Parses TOML sections [service], [fit], [scene] and [cloud]. A variable
/// HELIOFIT_<SECTION>_<KEY> overrides the matching key; vectors are written
/// as "x,y,z". Unknown keys and malformed values throw ConfigError.
AppConfig parse_config(std::string_view toml_text, const EnvLookup& env = process_env());
AppConfig load_config(const std::optional<std::filesystem::path>& file, const EnvLookup& env = process_env());

}  // namespace heliofit::service
