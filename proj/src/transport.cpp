#include "heliofit/transport.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>

#include "heliofit/hdr_io.hpp"
#include "heliofit/projection.hpp"
#include "parallel.hpp"

namespace heliofit {

namespace {

constexpr int kSuperSamples = 4;  // per axis, for env pixels straddling the sphere silhouette

struct Hit {
  RowKind kind = RowKind::background;
  Vec3 point;
  Vec3 normal;
};

struct Camera {
  Vec3 origin, forward, right, up;
  double tan_half_fov = 0.0;
  double aspect = 1.0;

  Vec3 ray(const SceneSpec& s, int px, int py) const {
    const double sx = (2.0 * (px + 0.5) / s.width - 1.0) * tan_half_fov * aspect;
    const double sy = (1.0 - 2.0 * (py + 0.5) / s.height) * tan_half_fov;
    return normalize(forward + right * sx + up * sy);
  }
};

Camera make_camera(const SceneSpec& s) {
  Camera cam;
  cam.origin = s.camera_position;
  cam.forward = normalize(s.camera_target - s.camera_position);
  Vec3 world_up{0.0, 0.0, 1.0};
  if (length(cross(cam.forward, world_up)) < 1e-9) world_up = {0.0, 1.0, 0.0};
  cam.right = normalize(cross(cam.forward, world_up));
  cam.up = cross(cam.right, cam.forward);
  cam.tan_half_fov = std::tan(deg_to_rad(s.fov_deg) * 0.5);
  cam.aspect = static_cast<double>(s.width) / s.height;
  return cam;
}

Hit trace(const SceneSpec& s, const Vec3& o, const Vec3& d) {
  Hit hit;
  double best = std::numeric_limits<double>::infinity();

  const Vec3 oc = o - s.sphere_center;
  const double b = dot(oc, d);
  const double c = dot(oc, oc) - s.sphere_radius * s.sphere_radius;
  const double disc = b * b - c;
  if (disc >= 0.0) {
    const double t = -b - std::sqrt(disc);
    if (t > 1e-9) {
      best = t;
      hit.kind = RowKind::sphere;
      hit.point = o + d * t;
      hit.normal = (hit.point - s.sphere_center) / s.sphere_radius;
    }
  }
  if (d.z < 0.0) {
    const double t = (s.plane_height - o.z) / d.z;
    if (t > 1e-9 && t < best) {
      hit.kind = RowKind::plane;
      hit.point = o + d * t;
      hit.normal = {0.0, 0.0, 1.0};
    }
  }
  return hit;
}

// Sub-pixel direction for supersampling; nullopt outside the dome.
std::optional<Direction> sub_direction(const EnvGeometry& g, std::size_t pixel, int sx, int sy) {
  const int x = static_cast<int>(pixel % g.width);
  const int y = static_cast<int>(pixel / g.width);
  const double u = (x + (sx + 0.5) / kSuperSamples) / g.width;
  const double v = (y + (sy + 0.5) / kSuperSamples) / g.height;
  return g.projection == Projection::skyangular ? skyangular_to_direction(u, v) : equirect_to_direction(u, v);
}

double projection_jacobian(const EnvGeometry& g, double theta) {
  if (g.projection == Projection::skyangular) return kPi * kPi * (theta > 0.0 ? std::sin(theta) / theta : 1.0);
  return kPi * kPi * std::sin(theta);
}

struct RowEntries {
  RowKind kind = RowKind::background;
  std::vector<std::uint32_t> cols;
  std::vector<float> weights;
};

template <typename T>
void put(std::ofstream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), sizeof(T));
  } else {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
}

template <typename T>
void put_array(std::ofstream& out, const std::vector<T>& v) {
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
  } else {
    for (const T& x : v) put(out, x);
  }
}

template <typename T>
T get(std::ifstream& in) {
  std::array<char, sizeof(T)> bytes{};
  if (!in.read(bytes.data(), sizeof(T))) throw HdrIoError(HdrIoError::Kind::truncated, "transport file truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

template <typename T>
void get_array(std::ifstream& in, std::vector<T>& v, std::size_t n) {
  v.resize(n);
  if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)))) {
    throw HdrIoError(HdrIoError::Kind::truncated, "transport file truncated");
  }
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    for (T& x : v) {
      auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(x);
      std::reverse(bytes.begin(), bytes.end());
      x = std::bit_cast<T>(bytes);
    }
  }
}

constexpr std::array<char, 4> kMagic = {'H', 'F', 'T', 'M'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void SceneSpec::validate() const {
  auto fail = [](const char* what) { throw std::invalid_argument(std::string("invalid scene: ") + what); };
  if (!(sphere_radius > 0.0)) fail("sphere radius must be positive");
  if (!(albedo > 0.0 && albedo <= 1.0)) fail("albedo must lie in (0, 1]");
  if (sphere_center.z - sphere_radius < plane_height - 1e-9) fail("sphere must rest on or above the plane");
  if (!(fov_deg > 0.0 && fov_deg < 180.0)) fail("field of view must lie in (0, 180) degrees");
  if (width <= 0 || height <= 0) fail("render size must be positive");
  if (length(camera_position - sphere_center) <= sphere_radius) fail("camera is inside the sphere");
  if (camera_position.z <= plane_height) fail("camera must be above the ground plane");
  if (length(camera_target - camera_position) < 1e-9) fail("camera target coincides with its position");
}

std::uint64_t SceneSpec::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix_bytes = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  auto mix = [&](double v) { mix_bytes(&v, sizeof v); };
  for (const Vec3& v : {sphere_center, camera_position, camera_target}) {
    mix(v.x);
    mix(v.y);
    mix(v.z);
  }
  mix(sphere_radius);
  mix(plane_height);
  mix(albedo);
  mix(fov_deg);
  const std::int64_t dims[2] = {width, height};
  mix_bytes(dims, sizeof dims);
  return h;
}

double TransportMatrix::row_sum(std::size_t row) const {
  double s = 0.0;
  for (auto k = row_offsets[row]; k < row_offsets[row + 1]; ++k) s += weights[k];
  return s;
}

TransportMatrix build_transport(const SceneSpec& scene, const EnvGeometry& env) {
  scene.validate();
  if (env.projection == Projection::camera) throw std::invalid_argument("environment must be a sky projection");
  const Camera cam = make_camera(scene);
  const DomeTable dome = make_dome_table(env);
  const double pitch = env.projection == Projection::skyangular ? kPi / env.width : kTwoPi / env.width;
  const double boundary_margin = 1.5 * pitch * 0.7071067811865476;
  const double scale = scene.albedo / kPi;

  const std::size_t rows = static_cast<std::size_t>(scene.width) * scene.height;
  std::vector<RowEntries> entries(rows);

  detail::parallel_for(rows, [&](std::size_t p) {
    const int px = static_cast<int>(p % scene.width);
    const int py = static_cast<int>(p / scene.width);
    const Vec3 dir = cam.ray(scene, px, py);
    const Hit hit = trace(scene, cam.origin, dir);
    RowEntries& row = entries[p];
    row.kind = hit.kind;
    if (hit.kind == RowKind::background) {
      row.cols.push_back(static_cast<std::uint32_t>(nearest_pixel(env, Direction::from_vector(dir))));
      row.weights.push_back(1.0f);
      return;
    }

    // Sphere silhouette as seen from a plane point; sphere points are never
    // occluded from the upper hemisphere.
    bool occluder = false;
    Vec3 to_center;
    double cap_angle = 0.0;
    if (hit.kind == RowKind::plane) {
      const Vec3 v = scene.sphere_center - hit.point;
      const double dist = length(v);
      if (dist > scene.sphere_radius) {
        occluder = true;
        to_center = v / dist;
        cap_angle = std::asin(std::min(1.0, scene.sphere_radius / dist));
      }
    }

    row.cols.reserve(dome.valid_pixels.size());
    row.weights.reserve(dome.valid_pixels.size());
    for (std::size_t k = 0; k < dome.valid_pixels.size(); ++k) {
      const Vec3& w = dome.directions[k];
      double weight = 0.0;
      const double center_angle = occluder ? angle_between(w, to_center) : kPi;
      if (occluder && std::abs(center_angle - cap_angle) < boundary_margin) {
        const double sub_area = 1.0 / (static_cast<double>(env.width) * env.height * kSuperSamples * kSuperSamples);
        for (int sy = 0; sy < kSuperSamples; ++sy) {
          for (int sx = 0; sx < kSuperSamples; ++sx) {
            const auto sd = sub_direction(env, dome.valid_pixels[k], sx, sy);
            if (!sd) continue;
            const Vec3 sv = sd->to_vector();
            const double cosine = dot(hit.normal, sv);
            if (cosine <= 0.0 || angle_between(sv, to_center) < cap_angle) continue;
            weight += cosine * projection_jacobian(env, sd->zenith) * sub_area;
          }
        }
      } else if (!occluder || center_angle >= cap_angle) {
        weight = std::max(0.0, dot(hit.normal, w)) * dome.solid_angle[k];
      }
      if (weight > 0.0) {
        row.cols.push_back(static_cast<std::uint32_t>(dome.valid_pixels[k]));
        row.weights.push_back(static_cast<float>(scale * weight));
      }
    }
  });

  TransportMatrix t;
  t.render_width = scene.width;
  t.render_height = scene.height;
  t.env = env;
  t.scene_hash = scene.hash();
  t.row_offsets.reserve(rows + 1);
  t.row_offsets.push_back(0);
  t.row_kinds.reserve(rows);
  std::size_t total = 0;
  for (const auto& r : entries) total += r.cols.size();
  t.columns.reserve(total);
  t.weights.reserve(total);
  for (auto& r : entries) {
    t.columns.insert(t.columns.end(), r.cols.begin(), r.cols.end());
    t.weights.insert(t.weights.end(), r.weights.begin(), r.weights.end());
    t.row_offsets.push_back(t.columns.size());
    t.row_kinds.push_back(r.kind);
    r = RowEntries{};
  }
  return t;
}

HdrImage apply_transport(const TransportMatrix& t, const HdrImage& env) {
  if (env.geometry() != t.env) throw std::invalid_argument("environment geometry does not match transport matrix");
  HdrImage out(t.render_width, t.render_height, Projection::camera);
  const auto src = env.data();
  auto dst = out.data();
  detail::parallel_for(t.rows(), [&](std::size_t p) {
    double acc[3] = {0.0, 0.0, 0.0};
    for (auto k = t.row_offsets[p]; k < t.row_offsets[p + 1]; ++k) {
      const double w = t.weights[k];
      const std::size_t q = 3 * static_cast<std::size_t>(t.columns[k]);
      acc[0] += w * src[q];
      acc[1] += w * src[q + 1];
      acc[2] += w * src[q + 2];
    }
    for (int c = 0; c < 3; ++c) dst[3 * p + c] = static_cast<float>(acc[c]);
  });
  return out;
}

double render_loss_l1(const HdrImage& env_a, const HdrImage& env_b, const TransportMatrix& t) {
  const HdrImage ra = apply_transport(t, env_a);
  const HdrImage rb = apply_transport(t, env_b);
  const auto a = ra.data();
  const auto b = rb.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(static_cast<double>(a[i]) - b[i]);
  return sum / static_cast<double>(a.size());
}

HdrImage render_mirror_sphere(const HdrImage& env, int size) {
  if (size <= 0) throw std::invalid_argument("mirror sphere size must be positive");
  if (env.projection() == Projection::camera) throw std::invalid_argument("mirror sphere needs a sky environment");
  HdrImage out(size, size, Projection::camera);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double nx = 2.0 * (x + 0.5) / size - 1.0;
      const double ny = 2.0 * (y + 0.5) / size - 1.0;
      const double r2 = nx * nx + ny * ny;
      if (r2 > 1.0) continue;
      const double nz = std::sqrt(1.0 - r2);
      // View direction (0, 0, -1) reflected about the normal.
      const Vec3 refl{2.0 * nz * nx, 2.0 * nz * ny, 2.0 * nz * nz - 1.0};
      if (refl.z < 0.0) continue;
      out.set(x, y, sample_bilinear(env, Direction::from_vector(refl)));
    }
  }
  return out;
}

void save_transport(const std::filesystem::path& path, const TransportMatrix& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw HdrIoError(HdrIoError::Kind::open_failed, "cannot create " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.render_width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.render_height));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.env.width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.env.height));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.env.projection));
  put<std::uint32_t>(out, 0);
  put<std::uint64_t>(out, t.scene_hash);
  put<std::uint64_t>(out, t.rows());
  put<std::uint64_t>(out, t.nnz());
  put_array(out, t.row_offsets);
  put_array(out, t.columns);
  put_array(out, t.weights);
  std::vector<std::uint8_t> kinds(t.rows());
  std::transform(t.row_kinds.begin(), t.row_kinds.end(), kinds.begin(),
                 [](RowKind k) { return static_cast<std::uint8_t>(k); });
  put_array(out, kinds);
  if (!out) throw HdrIoError(HdrIoError::Kind::write_failed, "failed writing " + path.string());
}

TransportMatrix load_transport(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw HdrIoError(HdrIoError::Kind::open_failed, "cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4)) throw HdrIoError(HdrIoError::Kind::truncated, "transport file truncated");
  if (magic != kMagic) throw HdrIoError(HdrIoError::Kind::unsupported_format, "not an HFTM transport file");
  if (get<std::uint32_t>(in) != kVersion) {
    throw HdrIoError(HdrIoError::Kind::unsupported_format, "unsupported transport file version");
  }
  TransportMatrix t;
  t.render_width = static_cast<int>(get<std::uint32_t>(in));
  t.render_height = static_cast<int>(get<std::uint32_t>(in));
  t.env.width = static_cast<int>(get<std::uint32_t>(in));
  t.env.height = static_cast<int>(get<std::uint32_t>(in));
  const auto proj = get<std::uint32_t>(in);
  if (proj > static_cast<std::uint32_t>(Projection::camera)) {
    throw HdrIoError(HdrIoError::Kind::malformed_header, "bad projection code in transport file");
  }
  t.env.projection = static_cast<Projection>(proj);
  (void)get<std::uint32_t>(in);
  t.scene_hash = get<std::uint64_t>(in);
  const auto rows = get<std::uint64_t>(in);
  const auto nnz = get<std::uint64_t>(in);
  if (rows != static_cast<std::uint64_t>(t.render_width) * static_cast<std::uint64_t>(t.render_height)) {
    throw HdrIoError(HdrIoError::Kind::malformed_header, "transport row count does not match render size");
  }
  if (nnz > rows * t.env.pixel_count()) throw HdrIoError(HdrIoError::Kind::malformed_header, "bad nnz");
  get_array(in, t.row_offsets, rows + 1);
  get_array(in, t.columns, nnz);
  get_array(in, t.weights, nnz);
  std::vector<std::uint8_t> kinds;
  get_array(in, kinds, rows);
  t.row_kinds.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    if (kinds[i] > 2) throw HdrIoError(HdrIoError::Kind::corrupt_payload, "bad row kind");
    t.row_kinds[i] = static_cast<RowKind>(kinds[i]);
  }
  if (t.row_offsets.front() != 0 || t.row_offsets.back() != nnz ||
      !std::is_sorted(t.row_offsets.begin(), t.row_offsets.end())) {
    throw HdrIoError(HdrIoError::Kind::corrupt_payload, "bad row offsets");
  }
  const auto env_pixels = t.env.pixel_count();
  if (std::any_of(t.columns.begin(), t.columns.end(), [&](std::uint32_t c) { return c >= env_pixels; })) {
    throw HdrIoError(HdrIoError::Kind::corrupt_payload, "column index out of range");
  }
  return t;
}

// ---------------------------------------------------------------------------

TransportOperator::TransportOperator(const TransportMatrix& t) : row_count_(t.rows()), col_count_(t.cols()) {
  base_.assign(col_count_, 0.0f);
  for (std::size_t p = 0; p < t.rows(); ++p) {
    if (t.row_kinds[p] != RowKind::plane) continue;
    for (auto k = t.row_offsets[p]; k < t.row_offsets[p + 1]; ++k) {
      base_[t.columns[k]] = std::max(base_[t.columns[k]], t.weights[k]);
    }
  }
  for (std::size_t q = 0; q < col_count_; ++q) {
    if (base_[q] > 0.0f) base_support_.push_back(static_cast<std::uint32_t>(q));
  }

  plane_row_.assign(row_count_, 0);
  run_offsets_.push_back(0);
  value_offsets_.push_back(0);
  auto push = [this](std::uint32_t q, float w) {
    if (!runs_.empty() && runs_.size() > run_offsets_.back() &&
        runs_.back().start + runs_.back().length == q) {
      ++runs_.back().length;
    } else {
      runs_.push_back({q, 1});
    }
    values_.push_back(w);
  };
  std::vector<float> dense(col_count_, 0.0f);
  for (std::size_t p = 0; p < t.rows(); ++p) {
    if (t.row_kinds[p] != RowKind::plane) {
      for (auto k = t.row_offsets[p]; k < t.row_offsets[p + 1]; ++k) push(t.columns[k], t.weights[k]);
    } else {
      plane_row_[p] = 1;
      for (auto k = t.row_offsets[p]; k < t.row_offsets[p + 1]; ++k) dense[t.columns[k]] = t.weights[k];
      for (std::uint32_t q : base_support_) {
        const float d = base_[q] - dense[q];
        if (d > 0.0f) push(q, -d);
      }
      for (auto k = t.row_offsets[p]; k < t.row_offsets[p + 1]; ++k) dense[t.columns[k]] = 0.0f;
    }
    run_offsets_.push_back(runs_.size());
    value_offsets_.push_back(values_.size());
  }
}

namespace {

struct RunView {
  const std::uint64_t* run_offsets;
  const std::uint64_t* value_offsets;
  const std::uint32_t* starts;  // strided by 2 (start, length)
  const float* values;
};

template <int K>
void forward_rows(const RunView& v, const double* x, const std::uint8_t* plane_row, const double* base_dot,
                  std::size_t rows, double* out) {
  detail::parallel_for(rows, [&](std::size_t p) {
    // Four interleaved partial sums break the add dependency chain.
    std::array<std::array<double, K>, 4> acc{};
    const float* w = v.values + v.value_offsets[p];
    for (auto r = v.run_offsets[p]; r < v.run_offsets[p + 1]; ++r) {
      const std::uint32_t start = v.starts[2 * r];
      const std::uint32_t len = v.starts[2 * r + 1];
      const double* xq = x + static_cast<std::size_t>(start) * K;
      std::uint32_t i = 0;
      for (; i + 4 <= len; i += 4) {
        for (int u = 0; u < 4; ++u) {
          for (int j = 0; j < K; ++j) acc[u][j] += static_cast<double>(w[i + u]) * xq[(i + u) * K + j];
        }
      }
      for (; i < len; ++i) {
        for (int j = 0; j < K; ++j) acc[0][j] += static_cast<double>(w[i]) * xq[i * K + j];
      }
      w += len;
    }
    for (int j = 0; j < K; ++j) {
      const double sum = (acc[0][j] + acc[1][j]) + (acc[2][j] + acc[3][j]);
      out[p * K + j] = (plane_row[p] ? base_dot[j] : 0.0) + sum;
    }
  });
}

void forward_rows_any(const RunView& v, const double* x, const std::uint8_t* plane_row, const double* base_dot,
                      std::size_t rows, int k, double* out) {
  detail::parallel_for(rows, [&](std::size_t p) {
    double* dst = out + p * k;
    for (int j = 0; j < k; ++j) dst[j] = plane_row[p] ? base_dot[j] : 0.0;
    const float* w = v.values + v.value_offsets[p];
    for (auto r = v.run_offsets[p]; r < v.run_offsets[p + 1]; ++r) {
      const std::uint32_t len = v.starts[2 * r + 1];
      const double* xq = x + static_cast<std::size_t>(v.starts[2 * r]) * k;
      for (std::uint32_t i = 0; i < len; ++i) {
        for (int j = 0; j < k; ++j) dst[j] += static_cast<double>(w[i]) * xq[i * k + j];
      }
      w += len;
    }
  });
}

// Serial scatter keeps the summation order fixed.
template <int K>
void adjoint_rows(const RunView& v, const double* y, std::size_t rows, double* out) {
  for (std::size_t p = 0; p < rows; ++p) {
    std::array<double, K> yp;
    std::copy_n(y + p * K, K, yp.begin());
    const float* w = v.values + v.value_offsets[p];
    for (auto r = v.run_offsets[p]; r < v.run_offsets[p + 1]; ++r) {
      const std::uint32_t len = v.starts[2 * r + 1];
      double* dst = out + static_cast<std::size_t>(v.starts[2 * r]) * K;
      for (std::uint32_t i = 0; i < len; ++i) {
        for (int j = 0; j < K; ++j) dst[i * K + j] += static_cast<double>(w[i]) * yp[j];
      }
      w += len;
    }
  }
}

void adjoint_rows_any(const RunView& v, const double* y, std::size_t rows, int k, double* out) {
  for (std::size_t p = 0; p < rows; ++p) {
    const double* yp = y + p * k;
    const float* w = v.values + v.value_offsets[p];
    for (auto r = v.run_offsets[p]; r < v.run_offsets[p + 1]; ++r) {
      const std::uint32_t len = v.starts[2 * r + 1];
      double* dst = out + static_cast<std::size_t>(v.starts[2 * r]) * k;
      for (std::uint32_t i = 0; i < len; ++i) {
        for (int j = 0; j < k; ++j) dst[i * k + j] += static_cast<double>(w[i]) * yp[j];
      }
      w += len;
    }
  }
}

}  // namespace

void TransportOperator::apply(std::span<const double> x, int k, std::span<double> out) const {
  if (k <= 0 || x.size() != col_count_ * static_cast<std::size_t>(k) ||
      out.size() != row_count_ * static_cast<std::size_t>(k)) {
    throw std::invalid_argument("TransportOperator::apply: size mismatch");
  }
  std::vector<double> base_dot(k, 0.0);
  for (std::uint32_t q : base_support_) {
    const double w = base_[q];
    const double* xq = x.data() + static_cast<std::size_t>(q) * k;
    for (int j = 0; j < k; ++j) base_dot[j] += w * xq[j];
  }
  static_assert(sizeof(Run) == 2 * sizeof(std::uint32_t));
  const RunView v{run_offsets_.data(), value_offsets_.data(), reinterpret_cast<const std::uint32_t*>(runs_.data()),
                  values_.data()};
  switch (k) {
    case 1: return forward_rows<1>(v, x.data(), plane_row_.data(), base_dot.data(), row_count_, out.data());
    case 2: return forward_rows<2>(v, x.data(), plane_row_.data(), base_dot.data(), row_count_, out.data());
    case 3: return forward_rows<3>(v, x.data(), plane_row_.data(), base_dot.data(), row_count_, out.data());
    case 4: return forward_rows<4>(v, x.data(), plane_row_.data(), base_dot.data(), row_count_, out.data());
    default: return forward_rows_any(v, x.data(), plane_row_.data(), base_dot.data(), row_count_, k, out.data());
  }
}

void TransportOperator::apply_adjoint(std::span<const double> y, int k, std::span<double> out) const {
  if (k <= 0 || y.size() != row_count_ * static_cast<std::size_t>(k) ||
      out.size() != col_count_ * static_cast<std::size_t>(k)) {
    throw std::invalid_argument("TransportOperator::apply_adjoint: size mismatch");
  }
  std::fill(out.begin(), out.end(), 0.0);
  std::vector<double> plane_sum(k, 0.0);
  for (std::size_t p = 0; p < row_count_; ++p) {
    if (!plane_row_[p]) continue;
    for (int j = 0; j < k; ++j) plane_sum[j] += y[p * k + j];
  }
  for (std::uint32_t q : base_support_) {
    const double w = base_[q];
    for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(q) * k + j] = w * plane_sum[j];
  }
  const RunView v{run_offsets_.data(), value_offsets_.data(), reinterpret_cast<const std::uint32_t*>(runs_.data()),
                  values_.data()};
  switch (k) {
    case 1: return adjoint_rows<1>(v, y.data(), row_count_, out.data());
    case 2: return adjoint_rows<2>(v, y.data(), row_count_, out.data());
    case 3: return adjoint_rows<3>(v, y.data(), row_count_, out.data());
    case 4: return adjoint_rows<4>(v, y.data(), row_count_, out.data());
    default: return adjoint_rows_any(v, y.data(), row_count_, k, out.data());
  }
}

std::vector<double> TransportOperator::project_hat_basis(std::span<const std::uint32_t> lower,
                                                        std::span<const double> frac, std::size_t nodes) const {
  if (lower.size() != col_count_ || frac.size() != col_count_ || nodes < 2) {
    throw std::invalid_argument("TransportOperator::project_hat_basis: size mismatch");
  }
  for (std::uint32_t l : lower) {
    if (l + 1 >= nodes) throw std::invalid_argument("TransportOperator::project_hat_basis: node out of range");
  }
  std::vector<double> base_row(nodes, 0.0);
  for (std::uint32_t q : base_support_) {
    base_row[lower[q]] += base_[q] * (1.0 - frac[q]);
    base_row[lower[q] + 1] += base_[q] * frac[q];
  }
  std::vector<double> out(row_count_ * nodes, 0.0);
  detail::parallel_for(row_count_, [&](std::size_t p) {
    double* dst = out.data() + p * nodes;
    if (plane_row_[p]) std::copy(base_row.begin(), base_row.end(), dst);
    const float* w = values_.data() + value_offsets_[p];
    for (auto r = run_offsets_[p]; r < run_offsets_[p + 1]; ++r) {
      const Run run = runs_[r];
      for (std::uint32_t i = 0; i < run.length; ++i) {
        const std::size_t q = run.start + i;
        dst[lower[q]] += w[i] * (1.0 - frac[q]);
        dst[lower[q] + 1] += w[i] * frac[q];
      }
      w += run.length;
    }
  });
  return out;
}

}  // namespace heliofit
