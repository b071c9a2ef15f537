#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

#include "heliofit/evalkit.hpp"
#include "heliofit/fitter.hpp"
#include "heliofit/service/config.hpp"
#include "heliofit/transport.hpp"

namespace heliofit::service {

/// Transport matrices for one scene, built on first use per environment
/// geometry and shared afterwards.
class TransportCache {
 public:
  struct Entry {
    explicit Entry(TransportMatrix m) : matrix(std::move(m)), op(matrix) {}
    TransportMatrix matrix;
    TransportOperator op;
  };

  explicit TransportCache(SceneSpec scene) : scene_(scene) {}

  const SceneSpec& scene() const { return scene_; }
  std::shared_ptr<const Entry> get(const EnvGeometry& env);
  /// Adds a loaded matrix. Throws std::invalid_argument when its scene hash
  /// differs from the cached scene.
  void insert(TransportMatrix m);

 private:
  using Key = std::tuple<int, int, int>;
  SceneSpec scene_;
  std::mutex mutex_;
  std::map<Key, std::shared_ptr<const Entry>> entries_;
};

/// fit() followed by the record bookkeeping shared by the CLI and the
/// service: id, coverage and weather bin of the input.
FitResult run_fit(const HdrImage& img, const FitMetadata& meta, const AppConfig& cfg, TransportCache& cache,
                  const std::string& id);

struct Preset {
  std::string name;  ///< weather category name
  LMParams params;
};

/// One parameter set per weather bin, in su, ms, pc, mc, oc, ss order.
const std::vector<Preset>& presets();

}  // namespace heliofit::service
