#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "heliofit/image.hpp"
#include "heliofit/sky_model.hpp"
#include "heliofit/transport.hpp"

namespace heliofit {

struct RegularizationConfig {
  double floor = 1e-4;             ///< minimum channel mean of either color
  double ceiling = 1e6;            ///< maximum channel mean of either color
  double chroma_tolerance_deg = 15.0;
  double penalty_factor = 10.0;    ///< penalty = factor × data loss when first violated
};

struct FitConfig {
  ParamRanges ranges;
  double kappa_step = 0.1;   ///< coarse κ step
  double fine_scale = 0.1;   ///< fine κ step = kappa_step × fine_scale
  double coarse_step = 2.0;  ///< β and t step in both grid stages
  int iterations = 1000;     ///< Adam steps per optimization stage
  int patience = 200;        ///< stop a stage after this many steps without improvement; 0 disables
  double min_improvement = 1e-7;  ///< relative loss decrease that counts as improvement

  double learning_rate = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  double smoothing_weight = 1.0;
  double rendering_weight = 1.0;
  RegularizationConfig regularization;

  double sun_mask_deg = 30.0;
  double zenith_cutoff_deg = 80.0;
  int blur_kernel = 5;
  double sun_patch_deg = 5.0;
  double sun_search_deg = 10.0;
  bool refine_sun = true;

  /// Solve the two colors per channel (non-negative least squares) at every
  /// grid point instead of holding the initial mean color fixed.
  bool grid_solve_colors = true;

  /// Grid stages project the sun term through a piecewise-linear basis in
  /// the angle to the sun with this many intervals; 0 projects every map
  /// through the full transport.
  int grid_sun_intervals = 512;

  /// Throws std::invalid_argument when a range is empty or a step is not positive.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

struct AdamHyper {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update; returns the parameter deltas.
std::vector<double> adam_step(AdamState& state, const std::vector<double>& grads, const AdamHyper& h);

// ---------------------------------------------------------------------------
// Building blocks

/// Number of violated conditions: per color, one for a channel mean outside
/// [floor, ceiling] and one for a chromaticity farther than the tolerance
/// from every allowed axis (gray and red; blue too for the sky).
int color_violations(const ColorRGB& sun, const ColorRGB& sky, const RegularizationConfig& cfg);

/// penalty × color_violations(...).
double color_regularization(const ColorRGB& sun, const ColorRGB& sky, const RegularizationConfig& cfg,
                            double penalty);

/// Angle in degrees between the normalized color and the axis; 90 for black.
double chroma_angle_deg(const ColorRGB& c, const ColorRGB& axis);

/// Brightest patch (disk of cfg.sun_patch_deg, solid-angle weighted mean
/// luminance). With a prior only patch centers within cfg.sun_search_deg of
/// it compete. Ties go to the smallest zenith, then the smallest azimuth.
/// The winner is refined to the centroid of its pixels above half its peak.
/// Throws std::invalid_argument when the image has no valid pixel.
Direction locate_sun(const HdrImage& img, std::optional<Direction> prior, const FitConfig& cfg = {});

struct InitialColors {
  ColorRGB sun;
  ColorRGB sky;
  bool fallback = false;  ///< the sun mask covered every valid pixel
};

/// Solid-angle weighted mean of the valid pixels outside the sun disk.
InitialColors init_colors(const HdrImage& img, const Direction& sun, double mask_deg = 30.0);

/// Mean absolute difference over valid pixels and channels between the
/// candidate and the box-blurred target.
double smoothing_loss_l1(const HdrImage& candidate, const HdrImage& target, int kernel = 5);

// ---------------------------------------------------------------------------
// Objective

struct LossTerms {
  double smoothing = 0.0;
  double rendering = 0.0;
  double regularization = 0.0;
  double data = 0.0;   ///< weighted smoothing + rendering
  double total = 0.0;  ///< data + regularization
};

/// Gradient of the data loss with respect to the nine free parameters:
/// sun rgb, sky rgb, κ, β, t.
using ParamGradient = std::array<double, 9>;

struct GridSample {
  double kappa = 0.0;
  double beta = 0.0;
  double turbidity = 0.0;
  ColorRGB sun_color;
  ColorRGB sky_color;
  double loss = 0.0;
};

struct GridResult {
  GridSample best;
  std::vector<GridSample> samples;  ///< every evaluated point, in scan order
};

struct StageResult {
  LMParams params;        ///< best-so-far
  LossTerms loss;         ///< at params
  LossTerms initial_loss;
  std::vector<double> trace;  ///< total loss after every step
  bool converged = false;     ///< stopped early by the patience rule
  double penalty = 0.0;       ///< latched regularization penalty (0 if never violated)
};

/// A target sky prepared for fitting with a fixed sun direction: blurred
/// target, its render, and per-pixel geometry relative to the sun.
class FitProblem {
 public:
  FitProblem(const HdrImage& target, const TransportOperator& op, const EnvGeometry& transport_env,
             const Direction& sun, const FitConfig& cfg);
  ~FitProblem();
  FitProblem(const FitProblem&) = delete;
  FitProblem& operator=(const FitProblem&) = delete;

  const FitConfig& config() const;
  const Direction& sun() const;

  /// Data loss terms (regularization left at zero); fills grad when given.
  LossTerms evaluate(const LMParams& p, ParamGradient* grad = nullptr) const;

  /// Scans every (κ, β, t) in the given lists in κ-major order. Colors come
  /// from `colors` or, with cfg.grid_solve_colors, from a per-channel
  /// non-negative least-squares solve. The first strict minimum wins.
  GridResult scan(const std::vector<double>& kappas, const std::vector<double>& betas,
                  const std::vector<double>& turbidities, const InitialColors& colors) const;

 private:
  friend StageResult optimize_colors(const FitProblem&, const LMParams&);
  friend StageResult optimize_all(const FitProblem&, const LMParams&, double);

  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Grid values min, min + step, ... up to max (inclusive, 1e-9 slack).
std::vector<double> grid_values(double min, double max, double step);

GridResult grid_search_coarse(const FitProblem& problem, const InitialColors& colors);
GridResult grid_search_fine(const FitProblem& problem, const InitialColors& colors, const GridSample& coarse);

/// Step 3: Adam on the six colors with the scattering parameters frozen.
StageResult optimize_colors(const FitProblem& problem, const LMParams& start);

/// Step 4: Adam on colors, κ, β and t with the sun frozen; κ, β, t are
/// projected back into their ranges after every step.
StageResult optimize_all(const FitProblem& problem, const LMParams& start, double penalty = 0.0);

// ---------------------------------------------------------------------------
// Orchestration

enum class SunSource { explicit_direction, geolocation, image_search };

struct FitMetadata {
  std::optional<Direction> sun;  ///< takes precedence over geolocation
  std::optional<double> latitude_deg;
  std::optional<double> longitude_deg;
  std::optional<std::string> timestamp_utc;
};

struct FitFlags {
  bool rejected_zenith = false;
  bool color_init_fallback = false;
  bool converged_colors = false;
  bool converged_all = false;
  SunSource sun_source = SunSource::image_search;
};

struct FitResult {
  std::string id;
  LMParams params;
  Direction sun_prior;
  LossTerms final_loss;
  double coarse_loss = 0.0;
  double fine_loss = 0.0;
  LossTerms colors_loss;  ///< best after step 3
  std::vector<double> trace_colors;
  std::vector<double> trace_all;
  FitFlags flags;
  std::optional<double> coverage;  ///< filled by evalkit
  std::optional<std::string> weather_bin;
};

/// Runs the full pipeline. `op` must be built for the image geometry.
/// Skies whose sun lies beyond the zenith cutoff come back flagged with
/// only the sun direction set.
FitResult fit(const HdrImage& img, const FitMetadata& meta, const TransportOperator& op,
              const EnvGeometry& transport_env, const FitConfig& cfg = {});

/// One JSON object, no trailing newline. Keys are stable and sorted.
std::string to_jsonl(const FitResult& r);
/// Parses a record written by to_jsonl. Throws std::invalid_argument.
FitResult fit_result_from_json(const std::string& line);

std::string_view to_string(SunSource s);

}  // namespace heliofit
