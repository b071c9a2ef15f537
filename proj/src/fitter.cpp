#include "heliofit/fitter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "heliofit/envmap.hpp"
#include "heliofit/projection.hpp"
#include "heliofit/solar.hpp"

namespace heliofit {

namespace {

constexpr double kMinCosZenith = 0.01;  // same clamp as perez_distribution

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

void FitConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid fit config: " + what); };
  if (!(ranges.kappa_min <= ranges.kappa_max)) fail("empty kappa range");
  if (!(ranges.beta_min <= ranges.beta_max)) fail("empty beta range");
  if (!(ranges.turbidity_min <= ranges.turbidity_max)) fail("empty turbidity range");
  if (ranges.turbidity_min < 2.0 || ranges.turbidity_max > 20.0) fail("turbidity range must lie in [2, 20]");
  if (ranges.kappa_min < 0.0 || ranges.beta_min < 0.0) fail("kappa and beta must be non-negative");
  if (!(kappa_step > 0.0) || !(coarse_step > 0.0)) fail("grid steps must be positive");
  if (!(fine_scale > 0.0 && fine_scale <= 1.0)) fail("fine scale must lie in (0, 1]");
  if (iterations < 0) fail("iterations must be non-negative");
  if (patience < 0) fail("patience must be non-negative");
  if (!(learning_rate > 0.0)) fail("learning rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("Adam decay rates");
  if (!(adam_epsilon > 0.0)) fail("Adam epsilon must be positive");
  if (smoothing_weight < 0.0 || rendering_weight < 0.0) fail("loss weights must be non-negative");
  if (blur_kernel < 1 || blur_kernel % 2 == 0) fail("blur kernel must be odd and positive");
  if (grid_sun_intervals < 0) fail("grid_sun_intervals must be non-negative");
  if (!(sun_patch_deg > 0.0) || !(sun_search_deg >= 0.0)) fail("sun search radii");
  if (!(sun_mask_deg >= 0.0)) fail("sun mask radius");
}

// ---------------------------------------------------------------------------

std::vector<double> adam_step(AdamState& s, const std::vector<double>& g, const AdamHyper& h) {
  if (s.m.size() != g.size()) {
    if (s.step != 0) throw std::invalid_argument("Adam gradient size changed between steps");
    s.m.assign(g.size(), 0.0);
    s.v.assign(g.size(), 0.0);
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(s.step));
  std::vector<double> delta(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    s.m[i] = h.beta1 * s.m[i] + (1.0 - h.beta1) * g[i];
    s.v[i] = h.beta2 * s.v[i] + (1.0 - h.beta2) * g[i] * g[i];
    const double m_hat = s.m[i] / c1;
    const double v_hat = s.v[i] / c2;
    delta[i] = -h.learning_rate * m_hat / (std::sqrt(v_hat) + h.epsilon);
  }
  return delta;
}

// ---------------------------------------------------------------------------

double chroma_angle_deg(const ColorRGB& c, const ColorRGB& axis) {
  const Vec3 a{c.r, c.g, c.b};
  const Vec3 b{axis.r, axis.g, axis.b};
  if (length(a) == 0.0 || length(b) == 0.0) return 90.0;
  return rad_to_deg(angle_between(a, b));
}

int color_violations(const ColorRGB& sun, const ColorRGB& sky, const RegularizationConfig& cfg) {
  static const ColorRGB kGray{1.0, 1.0, 1.0}, kRed{1.0, 0.0, 0.0}, kBlue{0.0, 0.0, 1.0};
  auto check = [&](const ColorRGB& c, bool allow_blue) {
    int n = 0;
    const double m = c.mean();
    if (!c.finite() || m < cfg.floor || m > cfg.ceiling) ++n;
    const double tol = cfg.chroma_tolerance_deg;
    const bool near_axis = chroma_angle_deg(c, kGray) <= tol || chroma_angle_deg(c, kRed) <= tol ||
                           (allow_blue && chroma_angle_deg(c, kBlue) <= tol);
    if (!near_axis) ++n;
    return n;
  };
  return check(sun, false) + check(sky, true);
}

double color_regularization(const ColorRGB& sun, const ColorRGB& sky, const RegularizationConfig& cfg,
                            double penalty) {
  return penalty * color_violations(sun, sky, cfg);
}

// ---------------------------------------------------------------------------

namespace {

struct PatchIndex {
  DomeTable dome;
  std::vector<double> luminance;
  double bin_width = 0.0;
  std::vector<std::vector<std::uint32_t>> bins;  // valid-list indices bucketed by zenith

  PatchIndex(const HdrImage& img, double patch_rad) : dome(make_dome_table(img.geometry())) {
    luminance.reserve(dome.valid_pixels.size());
    for (std::size_t i : dome.valid_pixels) luminance.push_back(img.at(i).luminance());
    bin_width = std::max(patch_rad, 1e-3);
    bins.resize(static_cast<std::size_t>(kPi / bin_width) + 2);
    for (std::size_t k = 0; k < dome.valid_pixels.size(); ++k) {
      bins[bin_of(dome.zenith[k])].push_back(static_cast<std::uint32_t>(k));
    }
  }

  std::size_t bin_of(double zenith) const {
    return std::min(bins.size() - 1, static_cast<std::size_t>(std::max(0.0, zenith) / bin_width));
  }

  template <typename F>
  void for_each_within(std::size_t center, double radius, F&& f) const {
    const double cos_r = std::cos(radius);
    const std::size_t b = bin_of(dome.zenith[center]);
    const std::size_t lo = b == 0 ? 0 : b - 1;
    const std::size_t hi = std::min(bins.size() - 1, b + 1);
    const Vec3& c = dome.directions[center];
    for (std::size_t bb = lo; bb <= hi; ++bb) {
      for (std::uint32_t k : bins[bb]) {
        if (dot(dome.directions[k], c) >= cos_r) f(k);
      }
    }
  }
};

}  // namespace

Direction locate_sun(const HdrImage& img, std::optional<Direction> prior, const FitConfig& cfg) {
  if (img.projection() == Projection::camera) throw std::invalid_argument("locate_sun needs a sky image");
  const double patch = deg_to_rad(cfg.sun_patch_deg);
  const PatchIndex index(img, patch);
  const auto& dome = index.dome;
  if (dome.valid_pixels.empty()) throw std::invalid_argument("image has no valid pixels");

  const double window = deg_to_rad(cfg.sun_search_deg);
  const Vec3 prior_vec = prior ? prior->to_vector() : Vec3{};
  std::vector<std::size_t> candidates;
  for (std::size_t k = 0; k < dome.valid_pixels.size(); ++k) {
    if (!prior || angle_between(dome.directions[k], prior_vec) <= window) candidates.push_back(k);
  }
  if (candidates.empty()) {
    // Window smaller than a pixel (or outside the dome): nearest pixel to the prior.
    const std::size_t q = nearest_pixel(img.geometry(), *prior);
    candidates.push_back(static_cast<std::size_t>(
        std::lower_bound(dome.valid_pixels.begin(), dome.valid_pixels.end(), q) - dome.valid_pixels.begin()));
  }

  std::vector<double> score(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double num = 0.0, den = 0.0;
    index.for_each_within(candidates[i], patch, [&](std::size_t k) {
      num += dome.solid_angle[k] * index.luminance[k];
      den += dome.solid_angle[k];
    });
    score[i] = den > 0.0 ? num / den : 0.0;
  }
  const double top = *std::max_element(score.begin(), score.end());
  const double tie = 1e-9 * std::max(1.0, std::abs(top));
  std::size_t best = candidates.size();
  Direction best_dir;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (score[i] < top - tie) continue;
    const Direction d = Direction::from_vector(dome.directions[candidates[i]]);
    if (best == candidates.size() || d.zenith < best_dir.zenith - 1e-12 ||
        (std::abs(d.zenith - best_dir.zenith) <= 1e-12 && d.azimuth < best_dir.azimuth)) {
      best = i;
      best_dir = d;
    }
  }

  // Sub-pixel refinement: weighted centroid of the bright core of the patch.
  const std::size_t center = candidates[best];
  double peak = 0.0;
  index.for_each_within(center, patch, [&](std::size_t k) { peak = std::max(peak, index.luminance[k]); });
  if (!(peak > 0.0)) return best_dir;
  Vec3 acc;
  index.for_each_within(center, patch, [&](std::size_t k) {
    if (index.luminance[k] >= 0.5 * peak) acc = acc + dome.directions[k] * (dome.solid_angle[k] * index.luminance[k]);
  });
  if (length(acc) == 0.0) return best_dir;
  const Direction refined = Direction::from_vector(acc);
  if (prior && angle_between(refined, *prior) > window) return best_dir;
  return refined;
}

InitialColors init_colors(const HdrImage& img, const Direction& sun, double mask_deg) {
  if (img.projection() == Projection::camera) throw std::invalid_argument("init_colors needs a sky image");
  const DomeTable dome = make_dome_table(img.geometry());
  if (dome.valid_pixels.empty()) throw std::invalid_argument("image has no valid pixels");
  const Vec3 s = sun.to_vector();
  const double mask = deg_to_rad(mask_deg);
  auto mean = [&](bool masked) {
    ColorRGB acc;
    double w = 0.0;
    for (std::size_t k = 0; k < dome.valid_pixels.size(); ++k) {
      if (masked && angle_between(dome.directions[k], s) <= mask) continue;
      acc = acc + img.at(dome.valid_pixels[k]) * dome.solid_angle[k];
      w += dome.solid_angle[k];
    }
    return std::pair{acc, w};
  };
  InitialColors out;
  auto [acc, w] = mean(true);
  if (!(w > 0.0)) {
    std::tie(acc, w) = mean(false);
    out.fallback = true;
  }
  out.sun = out.sky = acc / w;
  return out;
}

double smoothing_loss_l1(const HdrImage& candidate, const HdrImage& target, int kernel) {
  if (candidate.geometry() != target.geometry()) throw std::invalid_argument("image geometries differ");
  const HdrImage blurred = box_blur(target, kernel);
  const auto a = candidate.data();
  const auto b = blurred.data();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < target.pixel_count(); ++i) {
    if (!target.valid(i)) continue;
    for (int c = 0; c < 3; ++c) sum += std::abs(static_cast<double>(a[3 * i + c]) - b[3 * i + c]);
    n += 3;
  }
  if (n == 0) throw std::invalid_argument("image has no valid pixels");
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------

namespace {

/// Scalar basis maps over the valid pixels; the dome is
/// sun_color ⊗ sun + sky_color ⊗ sky.
struct Maps {
  std::vector<double> sun, sky;
  std::vector<double> d_sun_kappa, d_sun_beta, d_sky_t;
};

struct ColorPair {
  std::array<double, 3> sun{}, sky{};
};

ColorPair to_pair(const ColorRGB& sun, const ColorRGB& sky) {
  return {{sun.r, sun.g, sun.b}, {sky.r, sky.g, sky.b}};
}

}  // namespace

struct FitProblem::Impl {
  FitConfig cfg;
  Direction sun;
  const TransportOperator& op;
  std::size_t env_pixels = 0;
  std::size_t render_pixels = 0;

  std::vector<std::size_t> valid;     // env pixel index per valid entry
  std::vector<double> cos_view;       // clamped cos of the view zenith
  std::vector<double> gamma;          // angle to the sun
  std::vector<double> cos2_gamma;
  std::vector<double> blurred;        // 3 per valid entry
  std::vector<double> render_target;  // 3 per render pixel
  std::vector<double> sun_node_gamma;  // basis nodes, γ = π·(b / intervals)²
  std::vector<double> sun_basis;       // render_pixels × nodes

  Impl(const HdrImage& target, const TransportOperator& o, const EnvGeometry& env, const Direction& s,
       const FitConfig& c)
      : cfg(c), sun(s), op(o) {
    cfg.validate();
    if (target.geometry() != env) throw std::invalid_argument("target geometry does not match the transport");
    if (o.cols() != env.pixel_count()) throw std::invalid_argument("transport operator width mismatch");
    env_pixels = env.pixel_count();
    render_pixels = o.rows();
    const DomeTable dome = make_dome_table(env);
    if (dome.valid_pixels.empty()) throw std::invalid_argument("target has no valid pixels");
    valid = dome.valid_pixels;
    const Vec3 sv = sun.to_vector();
    const HdrImage blur = box_blur(target, cfg.blur_kernel);
    for (std::size_t k = 0; k < valid.size(); ++k) {
      cos_view.push_back(std::max(std::cos(dome.zenith[k]), kMinCosZenith));
      const double g = angle_between(dome.directions[k], sv);
      gamma.push_back(g);
      cos2_gamma.push_back(std::cos(g) * std::cos(g));
      const ColorRGB b = blur.at(valid[k]);
      blurred.insert(blurred.end(), {b.r, b.g, b.b});
    }
    std::vector<double> x(3 * env_pixels);
    const auto data = target.data();
    std::copy(data.begin(), data.end(), x.begin());
    render_target.resize(3 * render_pixels);
    op.apply(x, 3, render_target);

    if (cfg.grid_sun_intervals > 0) {
      const auto n = static_cast<std::size_t>(cfg.grid_sun_intervals);
      for (std::size_t b = 0; b <= n; ++b) {
        const double u = static_cast<double>(b) / static_cast<double>(n);
        sun_node_gamma.push_back(kPi * u * u);
      }
      std::vector<std::uint32_t> lower(env_pixels, 0);
      std::vector<double> frac(env_pixels, 0.0);
      for (std::size_t k = 0; k < valid.size(); ++k) {
        const double pos = std::sqrt(std::clamp(gamma[k] / kPi, 0.0, 1.0)) * static_cast<double>(n);
        const auto lo = std::min(static_cast<std::size_t>(pos), n - 1);
        lower[valid[k]] = static_cast<std::uint32_t>(lo);
        frac[valid[k]] = pos - static_cast<double>(lo);
      }
      sun_basis = op.project_hat_basis(lower, frac, n + 1);
    }
  }

  std::size_t nv() const { return valid.size(); }

  void sun_map(double kappa, double beta, std::vector<double>& s, std::vector<double>* dk,
               std::vector<double>* db) const {
    s.resize(nv());
    if (dk) dk->resize(nv());
    if (db) db->resize(nv());
    for (std::size_t k = 0; k < nv(); ++k) {
      const double g = gamma[k];
      double e, inv_g;
      if (g > 0.0) {
        e = std::exp(-kappa / g);
        inv_g = 1.0 / g;
      } else {
        e = kappa > 0.0 ? 0.0 : 1.0;
        inv_g = 0.0;
      }
      const double v = std::exp(-beta * e);
      s[k] = v;
      if (dk) (*dk)[k] = v * beta * e * inv_g;
      if (db) (*db)[k] = -v * e;
    }
  }

  void sky_map(double t, std::vector<double>& m, std::vector<double>* dt) const {
    const PerezCoefficients k = preetham_coefficients(t);
    const PerezCoefficients s = preetham_coefficient_slopes();
    // Normalizer F(0, sun zenith) = G0 · Hs.
    const double eb0 = std::exp(k.b);
    const double g0 = 1.0 + k.a * eb0;
    const double g0p = s.a * eb0 + k.a * eb0 * s.b;
    const double sz = sun.zenith;
    const double ed0 = std::exp(k.d * sz);
    const double cs2 = std::cos(sz) * std::cos(sz);
    const double hs = 1.0 + k.c * ed0 + k.e * cs2;
    const double hsp = s.c * ed0 + k.c * ed0 * s.d * sz + s.e * cs2;
    const double norm = g0 * hs;
    const double norm_log_dt = g0p / g0 + hsp / hs;
    m.resize(nv());
    if (dt) dt->resize(nv());
    for (std::size_t i = 0; i < nv(); ++i) {
      const double eb = std::exp(k.b / cos_view[i]);
      const double g = 1.0 + k.a * eb;
      const double ed = std::exp(k.d * gamma[i]);
      const double h = 1.0 + k.c * ed + k.e * cos2_gamma[i];
      const double v = g * h / norm;
      m[i] = v;
      if (dt) {
        const double gp = s.a * eb + k.a * eb * s.b / cos_view[i];
        const double hp = s.c * ed + k.c * ed * s.d * gamma[i] + s.e * cos2_gamma[i];
        (*dt)[i] = v * (gp / g + hp / h - norm_log_dt);
      }
    }
  }

  /// Applies the transport to n scalar maps over the valid pixels; returns
  /// out[j][p] for render pixel p.
  std::vector<std::vector<double>> project(const std::vector<const std::vector<double>*>& maps) const {
    constexpr std::size_t kBlock = 16;
    std::vector<std::vector<double>> out(maps.size(), std::vector<double>(render_pixels));
    for (std::size_t first = 0; first < maps.size(); first += kBlock) {
      const std::size_t n = std::min(kBlock, maps.size() - first);
      const int k = static_cast<int>(n);
      std::vector<double> x(env_pixels * n, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const auto& m = *maps[first + j];
        for (std::size_t i = 0; i < nv(); ++i) x[valid[i] * n + j] = m[i];
      }
      std::vector<double> y(render_pixels * n);
      op.apply(x, k, y);
      for (std::size_t j = 0; j < n; ++j) {
        auto& dst = out[first + j];
        for (std::size_t p = 0; p < render_pixels; ++p) dst[p] = y[p * n + j];
      }
    }
    return out;
  }

  struct ColorEval {
    LossTerms loss;
    std::array<double, 3> g_sun{}, g_sky{};
    std::vector<double> dome_sun, dome_sky;      // d(data)/d(map value) over valid pixels
    std::vector<double> render_sun, render_sky;  // d(data)/d(projected map) over render pixels
  };

  /// Data loss for fixed basis maps and their projections.
  ColorEval color_eval(const std::vector<double>& s, const std::vector<double>& k, const std::vector<double>& ts,
                       const std::vector<double>& tk, const ColorPair& c, bool grad, bool map_grad) const {
    ColorEval r;
    const double ws = cfg.smoothing_weight / (3.0 * static_cast<double>(nv()));
    const double wr = cfg.rendering_weight / (3.0 * static_cast<double>(render_pixels));
    if (map_grad) {
      r.dome_sun.resize(nv());
      r.dome_sky.resize(nv());
      r.render_sun.resize(render_pixels);
      r.render_sky.resize(render_pixels);
    }
    double smooth = 0.0;
    for (std::size_t i = 0; i < nv(); ++i) {
      double gs = 0.0, gk = 0.0;
      for (int ch = 0; ch < 3; ++ch) {
        const double d = c.sun[ch] * s[i] + c.sky[ch] * k[i] - blurred[3 * i + ch];
        smooth += std::abs(d);
        if (grad) {
          const double sd = ws * sign(d);
          r.g_sun[ch] += sd * s[i];
          r.g_sky[ch] += sd * k[i];
          gs += sd * c.sun[ch];
          gk += sd * c.sky[ch];
        }
      }
      if (map_grad) {
        r.dome_sun[i] = gs;
        r.dome_sky[i] = gk;
      }
    }
    double rend = 0.0;
    for (std::size_t p = 0; p < render_pixels; ++p) {
      double gs = 0.0, gk = 0.0;
      for (int ch = 0; ch < 3; ++ch) {
        const double d = c.sun[ch] * ts[p] + c.sky[ch] * tk[p] - render_target[3 * p + ch];
        rend += std::abs(d);
        if (grad) {
          const double sd = wr * sign(d);
          r.g_sun[ch] += sd * ts[p];
          r.g_sky[ch] += sd * tk[p];
          gs += sd * c.sun[ch];
          gk += sd * c.sky[ch];
        }
      }
      if (map_grad) {
        r.render_sun[p] = gs;
        r.render_sky[p] = gk;
      }
    }
    r.loss.smoothing = smooth / (3.0 * static_cast<double>(nv()));
    r.loss.rendering = rend / (3.0 * static_cast<double>(render_pixels));
    r.loss.data = cfg.smoothing_weight * r.loss.smoothing + cfg.rendering_weight * r.loss.rendering;
    r.loss.total = r.loss.data;
    return r;
  }

  LossTerms evaluate(const LMParams& p, ParamGradient* grad) const {
    Maps m;
    const bool g = grad != nullptr;
    sun_map(p.kappa, p.beta, m.sun, g ? &m.d_sun_kappa : nullptr, g ? &m.d_sun_beta : nullptr);
    sky_map(p.turbidity, m.sky, g ? &m.d_sky_t : nullptr);
    const auto proj = project({&m.sun, &m.sky});
    const ColorEval ce = color_eval(m.sun, m.sky, proj[0], proj[1], to_pair(p.sun_color, p.sky_color), g, g);
    if (!g) return ce.loss;

    std::vector<double> y(2 * render_pixels), u(2 * env_pixels);
    for (std::size_t q = 0; q < render_pixels; ++q) {
      y[2 * q] = ce.render_sun[q];
      y[2 * q + 1] = ce.render_sky[q];
    }
    op.apply_adjoint(y, 2, u);
    double gk = 0.0, gb = 0.0, gt = 0.0;
    for (std::size_t i = 0; i < nv(); ++i) {
      const double ws = u[2 * valid[i]] + ce.dome_sun[i];
      const double wk = u[2 * valid[i] + 1] + ce.dome_sky[i];
      gk += ws * m.d_sun_kappa[i];
      gb += ws * m.d_sun_beta[i];
      gt += wk * m.d_sky_t[i];
    }
    *grad = {ce.g_sun[0], ce.g_sun[1], ce.g_sun[2], ce.g_sky[0], ce.g_sky[1], ce.g_sky[2], gk, gb, gt};
    return ce.loss;
  }
};

FitProblem::FitProblem(const HdrImage& target, const TransportOperator& op, const EnvGeometry& env,
                       const Direction& sun, const FitConfig& cfg)
    : impl_(std::make_unique<Impl>(target, op, env, sun, cfg)) {}

FitProblem::~FitProblem() = default;

const FitConfig& FitProblem::config() const { return impl_->cfg; }
const Direction& FitProblem::sun() const { return impl_->sun; }

LossTerms FitProblem::evaluate(const LMParams& p, ParamGradient* grad) const { return impl_->evaluate(p, grad); }

namespace {

// min over a, b >= 0 of a²·g11 + 2ab·g12 + b²·g22 - 2(a·h1 + b·h2)
std::pair<double, double> nnls2(double g11, double g12, double g22, double h1, double h2) {
  auto cost = [&](double a, double b) { return a * a * g11 + 2.0 * a * b * g12 + b * b * g22 - 2.0 * (a * h1 + b * h2); };
  const double det = g11 * g22 - g12 * g12;
  if (det > 1e-14 * g11 * g22) {
    const double a = (h1 * g22 - h2 * g12) / det;
    const double b = (h2 * g11 - h1 * g12) / det;
    if (a >= 0.0 && b >= 0.0) return {a, b};
  }
  std::pair<double, double> best{0.0, 0.0};
  double best_cost = 0.0;
  if (g11 > 0.0) {
    const double a = std::max(0.0, h1 / g11);
    if (cost(a, 0.0) < best_cost) best = {a, 0.0}, best_cost = cost(a, 0.0);
  }
  if (g22 > 0.0) {
    const double b = std::max(0.0, h2 / g22);
    if (cost(0.0, b) < best_cost) best = {0.0, b}, best_cost = cost(0.0, b);
  }
  return best;
}

double dotv(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

GridResult FitProblem::scan(const std::vector<double>& kappas, const std::vector<double>& betas,
                            const std::vector<double>& turbidities, const InitialColors& colors) const {
  const Impl& im = *impl_;
  const std::size_t nk = kappas.size(), nb = betas.size(), nt = turbidities.size();
  if (nk == 0 || nb == 0 || nt == 0) throw std::invalid_argument("empty grid");

  std::vector<std::vector<double>> sun_maps(nk * nb), sky_maps(nt);
  for (std::size_t a = 0; a < nk; ++a) {
    for (std::size_t b = 0; b < nb; ++b) im.sun_map(kappas[a], betas[b], sun_maps[a * nb + b], nullptr, nullptr);
  }
  for (std::size_t c = 0; c < nt; ++c) im.sky_map(turbidities[c], sky_maps[c], nullptr);

  std::vector<const std::vector<double>*> ptrs;
  std::vector<std::vector<double>> sun_proj;
  if (im.sun_basis.empty()) {
    for (const auto& m : sun_maps) ptrs.push_back(&m);
    sun_proj = im.project(ptrs);
    ptrs.clear();
  } else {
    const std::size_t nodes = im.sun_node_gamma.size();
    std::vector<double> f(nodes);
    sun_proj.assign(nk * nb, std::vector<double>(im.render_pixels));
    for (std::size_t a = 0; a < nk; ++a) {
      for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t n = 0; n < nodes; ++n) f[n] = sun_falloff(im.sun_node_gamma[n], betas[b], kappas[a]);
        auto& dst = sun_proj[a * nb + b];
        for (std::size_t p = 0; p < im.render_pixels; ++p) {
          const double* row = im.sun_basis.data() + p * nodes;
          double acc = 0.0;
          for (std::size_t n = 0; n < nodes; ++n) acc += row[n] * f[n];
          dst[p] = acc;
        }
      }
    }
  }
  for (const auto& m : sky_maps) ptrs.push_back(&m);
  const auto sky_proj = im.project(ptrs);

  // Least-squares moments for the color solve; the dome and render terms are
  // weighted like their L1 counterparts.
  const double wd = im.cfg.smoothing_weight / static_cast<double>(im.nv());
  const double wr = im.cfg.rendering_weight / static_cast<double>(im.render_pixels);
  const bool solve = im.cfg.grid_solve_colors;
  std::vector<double> sun_sq(nk * nb), sky_sq(nt);
  std::vector<std::array<double, 3>> sun_rhs(nk * nb), sky_rhs(nt);
  if (solve) {
    auto moments = [&](const std::vector<double>& m, const std::vector<double>& tm, double& sq,
                       std::array<double, 3>& rhs) {
      sq = wd * dotv(m, m) + wr * dotv(tm, tm);
      for (int ch = 0; ch < 3; ++ch) {
        double d = 0.0, r = 0.0;
        for (std::size_t i = 0; i < im.nv(); ++i) d += m[i] * im.blurred[3 * i + ch];
        for (std::size_t p = 0; p < im.render_pixels; ++p) r += tm[p] * im.render_target[3 * p + ch];
        rhs[ch] = wd * d + wr * r;
      }
    };
    for (std::size_t j = 0; j < nk * nb; ++j) moments(sun_maps[j], sun_proj[j], sun_sq[j], sun_rhs[j]);
    for (std::size_t c = 0; c < nt; ++c) moments(sky_maps[c], sky_proj[c], sky_sq[c], sky_rhs[c]);
  }

  GridResult result;
  result.samples.reserve(nk * nb * nt);
  const ColorPair fixed = to_pair(colors.sun, colors.sky);
  bool have_best = false;
  for (std::size_t a = 0; a < nk; ++a) {
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t j = a * nb + b;
      for (std::size_t c = 0; c < nt; ++c) {
        ColorPair cp = fixed;
        if (solve) {
          const double g12 = wd * dotv(sun_maps[j], sky_maps[c]) + wr * dotv(sun_proj[j], sky_proj[c]);
          for (int ch = 0; ch < 3; ++ch) {
            std::tie(cp.sun[ch], cp.sky[ch]) = nnls2(sun_sq[j], g12, sky_sq[c], sun_rhs[j][ch], sky_rhs[c][ch]);
          }
        }
        const auto ce = im.color_eval(sun_maps[j], sky_maps[c], sun_proj[j], sky_proj[c], cp, false, false);
        GridSample s{kappas[a],
                     betas[b],
                     turbidities[c],
                     {cp.sun[0], cp.sun[1], cp.sun[2]},
                     {cp.sky[0], cp.sky[1], cp.sky[2]},
                     ce.loss.data};
        if (!have_best || s.loss < result.best.loss) {
          result.best = s;
          have_best = true;
        }
        result.samples.push_back(s);
      }
    }
  }
  return result;
}

std::vector<double> grid_values(double min, double max, double step) {
  if (!(step > 0.0) || !(min <= max)) throw std::invalid_argument("bad grid specification");
  const auto n = static_cast<std::size_t>(std::floor((max - min) / step + 1e-9));
  std::vector<double> v;
  v.reserve(n + 1);
  for (std::size_t i = 0; i <= n; ++i) v.push_back(std::min(max, min + static_cast<double>(i) * step));
  return v;
}

GridResult grid_search_coarse(const FitProblem& problem, const InitialColors& colors) {
  const FitConfig& c = problem.config();
  return problem.scan(grid_values(c.ranges.kappa_min, c.ranges.kappa_max, c.kappa_step),
                      grid_values(c.ranges.beta_min, c.ranges.beta_max, c.coarse_step),
                      grid_values(c.ranges.turbidity_min, c.ranges.turbidity_max, c.coarse_step), colors);
}

GridResult grid_search_fine(const FitProblem& problem, const InitialColors& colors, const GridSample& coarse) {
  const FitConfig& c = problem.config();
  const double step = c.kappa_step * c.fine_scale;
  const auto half = static_cast<long>(std::lround(1.0 / c.fine_scale));
  std::vector<double> kappas;
  for (long j = -half; j <= half; ++j) {
    // j = 0 reproduces the coarse value bit for bit.
    const double k = coarse.kappa + static_cast<double>(j) * step;
    if (k < c.ranges.kappa_min - 1e-12 || k > c.ranges.kappa_max + 1e-12) continue;
    kappas.push_back(std::clamp(k, c.ranges.kappa_min, c.ranges.kappa_max));
  }
  return problem.scan(kappas, grid_values(c.ranges.beta_min, c.ranges.beta_max, c.coarse_step),
                      grid_values(c.ranges.turbidity_min, c.ranges.turbidity_max, c.coarse_step), colors);
}

// ---------------------------------------------------------------------------

namespace {

// Colors are optimized as logarithms so a fixed learning rate acts as a
// relative step regardless of radiance scale.
double log_color(double c, double channel_max) {
  const double floor = channel_max > 0.0 ? 1e-6 * channel_max : 1e-12;
  return std::log(std::max(c, floor));
}

std::array<double, 6> color_vector(const LMParams& p) {
  return {p.sun_color.r, p.sun_color.g, p.sun_color.b, p.sky_color.r, p.sky_color.g, p.sky_color.b};
}

struct AdamRun {
  std::vector<double> best_z;
  LossTerms best_loss;
  LossTerms initial_loss;
  std::vector<double> trace;
  bool converged = false;
};

/// Runs Adam; eval(z, grad_z) returns the full loss terms at z.
template <typename Eval, typename Project>
AdamRun run_adam(std::vector<double> z, const FitConfig& cfg, Eval&& eval, Project&& project) {
  AdamRun run;
  const AdamHyper hyper{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon};
  AdamState state(z.size());
  std::vector<double> grad(z.size());
  run.best_z = z;
  run.initial_loss = run.best_loss = eval(z, nullptr);
  if (cfg.iterations == 0) return run;
  double reference = run.best_loss.total;
  int since = 0;
  run.trace.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int it = 0; it < cfg.iterations; ++it) {
    const LossTerms l = eval(z, &grad);
    run.trace.push_back(l.total);
    if (l.total < run.best_loss.total) {
      run.best_loss = l;
      run.best_z = z;
    }
    if (l.total < reference * (1.0 - cfg.min_improvement)) {
      reference = l.total;
      since = 0;
    } else if (cfg.patience > 0 && ++since >= cfg.patience) {
      run.converged = true;
      break;
    }
    const auto delta = adam_step(state, grad, hyper);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += delta[i];
    project(z);
  }
  return run;
}

struct Latch {
  const RegularizationConfig& cfg;
  double penalty;

  void apply(LossTerms& l, const ColorRGB& sun, const ColorRGB& sky) {
    const int n = color_violations(sun, sky, cfg);
    if (n > 0 && penalty == 0.0) penalty = cfg.penalty_factor * l.data;
    l.regularization = penalty * n;
    l.total = l.data + l.regularization;
  }
};

}  // namespace

StageResult optimize_colors(const FitProblem& problem, const LMParams& start) {
  const auto& im = *problem.impl_;
  std::vector<double> s, k;
  im.sun_map(start.kappa, start.beta, s, nullptr, nullptr);
  im.sky_map(start.turbidity, k, nullptr);
  const auto proj = im.project({&s, &k});

  const auto c0 = color_vector(start);
  const double sun_max = std::max({c0[0], c0[1], c0[2]});
  const double sky_max = std::max({c0[3], c0[4], c0[5]});
  std::vector<double> z(6);
  for (int i = 0; i < 6; ++i) z[i] = log_color(c0[i], i < 3 ? sun_max : sky_max);

  Latch latch{im.cfg.regularization, 0.0};
  auto eval = [&](const std::vector<double>& zz, std::vector<double>* grad) {
    ColorPair cp;
    for (int i = 0; i < 3; ++i) {
      cp.sun[i] = std::exp(zz[i]);
      cp.sky[i] = std::exp(zz[3 + i]);
    }
    auto ce = im.color_eval(s, k, proj[0], proj[1], cp, grad != nullptr, false);
    latch.apply(ce.loss, {cp.sun[0], cp.sun[1], cp.sun[2]}, {cp.sky[0], cp.sky[1], cp.sky[2]});
    if (grad) {
      for (int i = 0; i < 3; ++i) {
        (*grad)[i] = ce.g_sun[i] * cp.sun[i];
        (*grad)[3 + i] = ce.g_sky[i] * cp.sky[i];
      }
    }
    return ce.loss;
  };
  const AdamRun run = run_adam(z, im.cfg, eval, [](std::vector<double>&) {});

  StageResult r;
  r.params = start;
  r.params.sun_color = {std::exp(run.best_z[0]), std::exp(run.best_z[1]), std::exp(run.best_z[2])};
  r.params.sky_color = {std::exp(run.best_z[3]), std::exp(run.best_z[4]), std::exp(run.best_z[5])};
  if (im.cfg.iterations == 0) r.params = start;
  r.loss = run.best_loss;
  r.initial_loss = run.initial_loss;
  r.trace = run.trace;
  r.converged = run.converged;
  r.penalty = latch.penalty;
  return r;
}

StageResult optimize_all(const FitProblem& problem, const LMParams& start, double penalty) {
  const auto& im = *problem.impl_;
  const ParamRanges& rg = im.cfg.ranges;
  const auto c0 = color_vector(start);
  const double sun_max = std::max({c0[0], c0[1], c0[2]});
  const double sky_max = std::max({c0[3], c0[4], c0[5]});
  std::vector<double> z(9);
  for (int i = 0; i < 6; ++i) z[i] = log_color(c0[i], i < 3 ? sun_max : sky_max);
  z[6] = std::clamp(start.kappa, rg.kappa_min, rg.kappa_max);
  z[7] = std::clamp(start.beta, rg.beta_min, rg.beta_max);
  z[8] = std::clamp(start.turbidity, rg.turbidity_min, rg.turbidity_max);

  auto to_params = [&](const std::vector<double>& zz) {
    LMParams p = start;
    p.sun_color = {std::exp(zz[0]), std::exp(zz[1]), std::exp(zz[2])};
    p.sky_color = {std::exp(zz[3]), std::exp(zz[4]), std::exp(zz[5])};
    p.kappa = zz[6];
    p.beta = zz[7];
    p.turbidity = zz[8];
    return p;
  };

  Latch latch{im.cfg.regularization, penalty};
  auto eval = [&](const std::vector<double>& zz, std::vector<double>* grad) {
    const LMParams p = to_params(zz);
    ParamGradient g{};
    LossTerms l = im.evaluate(p, grad ? &g : nullptr);
    latch.apply(l, p.sun_color, p.sky_color);
    if (grad) {
      const auto c = color_vector(p);
      for (int i = 0; i < 6; ++i) (*grad)[i] = g[i] * c[i];
      for (int i = 6; i < 9; ++i) (*grad)[i] = g[i];
    }
    return l;
  };
  auto project = [&](std::vector<double>& zz) {
    zz[6] = std::clamp(zz[6], rg.kappa_min, rg.kappa_max);
    zz[7] = std::clamp(zz[7], rg.beta_min, rg.beta_max);
    zz[8] = std::clamp(zz[8], rg.turbidity_min, rg.turbidity_max);
  };
  const AdamRun run = run_adam(z, im.cfg, eval, project);

  StageResult r;
  r.params = im.cfg.iterations == 0 ? start : to_params(run.best_z);
  r.loss = run.best_loss;
  r.initial_loss = run.initial_loss;
  r.trace = run.trace;
  r.converged = run.converged;
  r.penalty = latch.penalty;
  return r;
}

// ---------------------------------------------------------------------------

std::string_view to_string(SunSource s) {
  switch (s) {
    case SunSource::explicit_direction: return "explicit";
    case SunSource::geolocation: return "geolocation";
    case SunSource::image_search: return "image";
  }
  return "image";
}

FitResult fit(const HdrImage& img, const FitMetadata& meta, const TransportOperator& op,
              const EnvGeometry& transport_env, const FitConfig& cfg) {
  cfg.validate();
  if (img.projection() == Projection::camera) throw std::invalid_argument("fit needs a sky image");
  if (!img.all_finite()) throw std::invalid_argument("image contains non-finite values");
  FitResult r;

  std::optional<Direction> prior;
  if (meta.sun) {
    prior = meta.sun;
    r.flags.sun_source = SunSource::explicit_direction;
  } else if (meta.latitude_deg && meta.longitude_deg && meta.timestamp_utc) {
    prior = solar_position(*meta.latitude_deg, *meta.longitude_deg, *meta.timestamp_utc);
    r.flags.sun_source = SunSource::geolocation;
  }
  const double cutoff = deg_to_rad(cfg.zenith_cutoff_deg);
  if (prior && prior->zenith > cutoff) {
    r.sun_prior = *prior;
    r.params.sun = *prior;
    r.flags.rejected_zenith = true;
    return r;
  }
  const Direction sun = prior && !cfg.refine_sun ? *prior : locate_sun(img, prior, cfg);
  r.sun_prior = prior.value_or(sun);
  r.params.sun = sun;
  if (sun.zenith > cutoff) {
    r.flags.rejected_zenith = true;
    return r;
  }

  const InitialColors colors = init_colors(img, sun, cfg.sun_mask_deg);
  r.flags.color_init_fallback = colors.fallback;
  const FitProblem problem(img, op, transport_env, sun, cfg);

  const GridResult coarse = grid_search_coarse(problem, colors);
  const GridResult fine = grid_search_fine(problem, colors, coarse.best);
  r.coarse_loss = coarse.best.loss;
  r.fine_loss = fine.best.loss;

  LMParams start;
  start.sun = sun;
  start.kappa = fine.best.kappa;
  start.beta = fine.best.beta;
  start.turbidity = fine.best.turbidity;
  start.sun_color = fine.best.sun_color;
  start.sky_color = fine.best.sky_color;

  const StageResult s3 = optimize_colors(problem, start);
  const StageResult s4 = optimize_all(problem, s3.params, s3.penalty);
  r.colors_loss = s3.loss;
  r.trace_colors = s3.trace;
  r.trace_all = s4.trace;
  r.flags.converged_colors = s3.converged;
  r.flags.converged_all = s4.converged;
  r.final_loss = s4.loss;
  r.params = s4.params;
  // Losses stay in stored units; colors are reported in original radiance.
  const double scale = img.exposure_scale();
  r.params.sun_color = r.params.sun_color * scale;
  r.params.sky_color = r.params.sky_color * scale;
  return r;
}

}  // namespace heliofit
