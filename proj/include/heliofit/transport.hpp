#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "heliofit/geometry.hpp"
#include "heliofit/image.hpp"

namespace heliofit {

/// Canonical relighting scene: a Lambertian sphere resting on a Lambertian
/// ground plane (z = plane_height, normal +z), seen by a pinhole camera.
struct SceneSpec {
  Vec3 sphere_center{0.0, 0.0, 1.0};
  double sphere_radius = 1.0;
  double plane_height = 0.0;
  double albedo = 0.8;
  Vec3 camera_position{5.0 * 0.8660254037844387, 0.0, 1.0 + 5.0 * 0.5};  // 30° elevation, 5 units away
  Vec3 camera_target{0.0, 0.0, 1.0};
  double fov_deg = 45.0;  ///< vertical field of view
  int width = 64;
  int height = 64;

  /// Throws std::invalid_argument for degenerate scenes.
  void validate() const;
  /// FNV-1a hash of every field; stored in transport files.
  std::uint64_t hash() const;
};

enum class RowKind : std::uint8_t { background = 0, plane = 1, sphere = 2 };

/// Sparse light-transport operator mapping environment pixels to rendered
/// pixels (CSR layout, one row per render pixel).
struct TransportMatrix {
  int render_width = 0;
  int render_height = 0;
  EnvGeometry env;
  std::uint64_t scene_hash = 0;
  std::vector<std::uint64_t> row_offsets;  ///< rows() + 1 entries
  std::vector<std::uint32_t> columns;      ///< env pixel indices
  std::vector<float> weights;
  std::vector<RowKind> row_kinds;

  std::size_t rows() const { return row_kinds.size(); }
  std::size_t cols() const { return env.pixel_count(); }
  std::size_t nnz() const { return weights.size(); }
  double row_sum(std::size_t row) const;
};

TransportMatrix build_transport(const SceneSpec& scene, const EnvGeometry& env);
inline TransportMatrix build_transport(const SceneSpec& scene, int env_size) {
  return build_transport(scene, EnvGeometry{env_size, env_size, Projection::skyangular});
}

/// render[p] = Σ_q w[p][q] · env[q]. Throws std::invalid_argument when the
/// environment geometry differs from the matrix.
HdrImage apply_transport(const TransportMatrix& t, const HdrImage& env);

/// Mean absolute difference over render pixels and channels.
double render_loss_l1(const HdrImage& env_a, const HdrImage& env_b, const TransportMatrix& t);

/// Orthographic mirror ball seen from straight above; reflections that point
/// below the horizon are black.
HdrImage render_mirror_sphere(const HdrImage& env, int size);

/// Binary "HFTM" container; see docs/transport_format.md.
void save_transport(const std::filesystem::path& path, const TransportMatrix& t);
TransportMatrix load_transport(const std::filesystem::path& path);

/// Transport matrix re-encoded for repeated application: plane rows share
/// one dense base row and keep only their (sparse, non-negative) occlusion
/// deficit, other rows stay in CSR form. Application matches the plain
/// matrix up to float rounding.
class TransportOperator {
 public:
  explicit TransportOperator(const TransportMatrix& t);

  std::size_t rows() const { return row_count_; }
  std::size_t cols() const { return col_count_; }
  std::size_t stored_entries() const { return values_.size() + base_support_.size(); }

  /// out[p·k + j] = Σ_q w[p][q] · x[q·k + j] for j < k (interleaved vectors).
  void apply(std::span<const double> x, int k, std::span<double> out) const;

  /// Adjoint: out[q·k + j] = Σ_p w[p][q] · y[p·k + j].
  void apply_adjoint(std::span<const double> y, int k, std::span<double> out) const;

  /// Projects a piecewise-linear basis over env pixels: column q contributes
  /// (1 - frac[q]) to node lower[q] and frac[q] to node lower[q] + 1.
  /// Returns a rows() × (nodes) row-major matrix. Columns whose lower index
  /// is >= nodes - 1 are rejected.
  std::vector<double> project_hat_basis(std::span<const std::uint32_t> lower, std::span<const double> frac,
                                        std::size_t nodes) const;

 private:
  // Each row is a list of runs of consecutive env pixels; values are stored
  // back to back in run order.
  struct Run {
    std::uint32_t start;
    std::uint32_t length;
  };

  std::size_t row_count_ = 0;
  std::size_t col_count_ = 0;
  std::vector<float> base_;                  // shared plane row, dense over env pixels
  std::vector<std::uint32_t> base_support_;  // env pixels where base_ > 0
  std::vector<std::uint8_t> plane_row_;      // rows that add the base row
  std::vector<std::uint64_t> run_offsets_;   // per row, into runs_
  std::vector<std::uint64_t> value_offsets_; // per row, into values_
  std::vector<Run> runs_;
  std::vector<float> values_;  // signed: +w for direct rows, -(base - w) for plane rows
};

}  // namespace heliofit
