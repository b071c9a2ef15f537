#include "heliofit/hdr_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <vector>

namespace heliofit {

namespace {

using Kind = HdrIoError::Kind;

Projection infer_projection(int w, int h) {
  if (w == h) return Projection::skyangular;
  if (w == 4 * h) return Projection::equirect_hemisphere;
  return Projection::camera;
}

// Minimal cursor over the raw byte buffer.
class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool at_end() const { return pos_ >= bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t pos() const { return pos_; }

  void skip_whitespace() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
  }

  std::string_view token() {
    skip_whitespace();
    const std::size_t start = pos_;
    while (!at_end() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    return bytes_.substr(start, pos_ - start);
  }

  // Returns nullopt when no newline terminates the line.
  std::optional<std::string_view> line() {
    const std::size_t nl = bytes_.find('\n', pos_);
    if (nl == std::string_view::npos) return std::nullopt;
    auto out = bytes_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return out;
  }

  unsigned char byte() { return static_cast<unsigned char>(bytes_[pos_++]); }
  void advance(std::size_t n) { pos_ += n; }
  const char* here() const { return bytes_.data() + pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

constexpr int kMaxDimension = 1 << 15;

HdrImage decode_pfm(std::string_view bytes, std::optional<Projection> projection) {
  Reader rd(bytes);
  const auto magic = rd.token();
  const bool color = magic == "PF";
  if (!color && magic != "Pf") throw HdrIoError(Kind::malformed_header, "bad PFM magic");
  int w = 0, h = 0;
  double scale = 0.0;
  if (!parse_number(rd.token(), w) || !parse_number(rd.token(), h)) {
    throw HdrIoError(Kind::malformed_header, "bad PFM dimensions");
  }
  if (!parse_number(rd.token(), scale) || scale == 0.0 || !std::isfinite(scale)) {
    throw HdrIoError(Kind::malformed_header, "bad PFM scale");
  }
  if (w <= 0 || h <= 0 || w > kMaxDimension || h > kMaxDimension) {
    throw HdrIoError(Kind::malformed_header, "PFM dimensions out of range");
  }
  if (rd.at_end() || !std::isspace(static_cast<unsigned char>(*rd.here()))) {
    throw HdrIoError(Kind::truncated, "PFM header not terminated");
  }
  rd.advance(1);

  const int channels = color ? 3 : 1;
  const std::size_t count = static_cast<std::size_t>(w) * h * channels;
  if (rd.remaining() < count * 4) throw HdrIoError(Kind::truncated, "PFM payload truncated");

  const bool little = scale < 0.0;
  const bool swap = little != (std::endian::native == std::endian::little);
  const auto proj = projection.value_or(infer_projection(w, h));
  if (proj == Projection::skyangular && w != h) {
    throw HdrIoError(Kind::unsupported_format, "skyangular images must be square");
  }
  HdrImage img(w, h, proj);
  auto out = img.data();
  const char* src = rd.here();
  for (int row = 0; row < h; ++row) {
    const int y = h - 1 - row;  // bottom-up
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        std::uint32_t bits;
        std::memcpy(&bits, src, 4);
        src += 4;
        if (swap) bits = __builtin_bswap32(bits);
        const float v = std::bit_cast<float>(bits);
        const std::size_t i = img.index(x, y);
        if (color) {
          out[3 * i + c] = v;
        } else {
          out[3 * i] = out[3 * i + 1] = out[3 * i + 2] = v;
        }
      }
    }
  }
  return img;
}

bool read_rle_scanline(Reader& rd, int w, std::vector<unsigned char>& line) {
  // New-style RLE: four bytes 2 2 hi lo, then each component run-length encoded.
  for (int c = 0; c < 4; ++c) {
    int x = 0;
    while (x < w) {
      if (rd.at_end()) throw HdrIoError(Kind::truncated, "RGBE scanline truncated");
      int count = rd.byte();
      if (count > 128) {
        count -= 128;
        if (count == 0 || x + count > w) throw HdrIoError(Kind::corrupt_payload, "bad RGBE run length");
        if (rd.at_end()) throw HdrIoError(Kind::truncated, "RGBE scanline truncated");
        const unsigned char v = rd.byte();
        for (int k = 0; k < count; ++k) line[4 * (x + k) + c] = v;
      } else {
        if (count == 0 || x + count > w) throw HdrIoError(Kind::corrupt_payload, "bad RGBE literal length");
        if (rd.remaining() < static_cast<std::size_t>(count)) throw HdrIoError(Kind::truncated, "RGBE scanline truncated");
        for (int k = 0; k < count; ++k) line[4 * (x + k) + c] = rd.byte();
      }
      x += count;
    }
  }
  return true;
}

HdrImage decode_rgbe(std::string_view bytes, std::optional<Projection> projection) {
  Reader rd(bytes);
  auto first = rd.line();
  if (!first || first->substr(0, 2) != "#?") throw HdrIoError(Kind::malformed_header, "missing #? magic");

  std::optional<Projection> declared;
  bool blank_seen = false;
  while (auto line = rd.line()) {
    if (line->empty()) {
      blank_seen = true;
      break;
    }
    if (line->rfind("FORMAT=", 0) == 0) {
      if (line->substr(7) != "32-bit_rle_rgbe") {
        throw HdrIoError(Kind::unsupported_format, "unsupported RGBE pixel format " + std::string(line->substr(7)));
      }
    } else if (line->rfind("PROJECTION=", 0) == 0) {
      try {
        declared = projection_from_string(line->substr(11));
      } catch (const std::invalid_argument&) {
        throw HdrIoError(Kind::malformed_header, "unknown PROJECTION value");
      }
    }
  }
  if (!blank_seen) throw HdrIoError(Kind::truncated, "RGBE header not terminated");

  auto res_line = rd.line();
  if (!res_line) throw HdrIoError(Kind::truncated, "missing RGBE resolution line");
  std::istringstream res{std::string(*res_line)};
  std::string ya, xa;
  int h = 0, w = 0;
  if (!(res >> ya >> h >> xa >> w)) throw HdrIoError(Kind::malformed_header, "bad RGBE resolution line");
  if (ya != "-Y" || xa != "+X") throw HdrIoError(Kind::unsupported_format, "only -Y/+X scan order is supported");
  if (w <= 0 || h <= 0 || w > kMaxDimension || h > kMaxDimension) {
    throw HdrIoError(Kind::malformed_header, "RGBE dimensions out of range");
  }

  const auto proj = projection.value_or(declared.value_or(infer_projection(w, h)));
  if (proj == Projection::skyangular && w != h) {
    throw HdrIoError(Kind::unsupported_format, "skyangular images must be square");
  }
  HdrImage img(w, h, proj);
  std::vector<unsigned char> line(4 * static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    const bool rle_width = w >= 8 && w <= 0x7fff;
    bool rle = false;
    if (rle_width && rd.remaining() >= 4) {
      const auto* p = reinterpret_cast<const unsigned char*>(rd.here());
      rle = p[0] == 2 && p[1] == 2 && (p[2] & 0x80) == 0;
      if (rle && ((p[2] << 8) | p[3]) != w) throw HdrIoError(Kind::corrupt_payload, "RGBE scanline width mismatch");
    }
    if (rle) {
      rd.advance(4);
      read_rle_scanline(rd, w, line);
    } else {
      if (rd.remaining() < line.size()) throw HdrIoError(Kind::truncated, "RGBE payload truncated");
      for (auto& b : line) b = rd.byte();
    }
    for (int x = 0; x < w; ++x) {
      const Rgbe px{line[4 * x], line[4 * x + 1], line[4 * x + 2], line[4 * x + 3]};
      img.set(x, y, rgbe_to_float(px));
    }
  }
  return img;
}

void write_rle_bytes(std::string& out, const unsigned char* data, int n) {
  constexpr int kMinRun = 4;
  int cur = 0;
  while (cur < n) {
    int beg_run = cur;
    int run = 0;
    int old_run = 0;
    while (run < kMinRun && beg_run < n) {
      beg_run += run;
      old_run = run;
      run = 1;
      while (beg_run + run < n && run < 127 && data[beg_run] == data[beg_run + run]) ++run;
    }
    if (old_run > 1 && old_run == beg_run - cur) {
      out.push_back(static_cast<char>(128 + old_run));
      out.push_back(static_cast<char>(data[cur]));
      cur = beg_run;
    }
    while (cur < beg_run) {
      const int literal = std::min(beg_run - cur, 128);
      out.push_back(static_cast<char>(literal));
      out.append(reinterpret_cast<const char*>(data + cur), literal);
      cur += literal;
    }
    if (run >= kMinRun) {
      out.push_back(static_cast<char>(128 + run));
      out.push_back(static_cast<char>(data[beg_run]));
      cur += run;
    }
  }
}

}  // namespace

Rgbe float_to_rgbe(double r, double g, double b) {
  r = std::max(r, 0.0);
  g = std::max(g, 0.0);
  b = std::max(b, 0.0);
  const double v = std::max({r, g, b});
  if (!(v > 1e-32)) return {};
  int e = 0;
  const double m = std::frexp(v, &e);
  if (e + 128 > 255) return {255, 255, 255, 255};
  if (e + 128 < 1) return {};
  const double scale = m * 256.0 / v;
  auto q = [scale](double c) { return static_cast<unsigned char>(std::min(255.0, c * scale)); };
  return {q(r), q(g), q(b), static_cast<unsigned char>(e + 128)};
}

ColorRGB rgbe_to_float(const Rgbe& px) {
  if (px.e == 0) return {};
  const double f = std::ldexp(1.0, static_cast<int>(px.e) - (128 + 8));
  return {(px.r + 0.5) * f, (px.g + 0.5) * f, (px.b + 0.5) * f};
}

std::optional<HdrFormat> format_from_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".pfm") return HdrFormat::pfm;
  if (ext == ".hdr" || ext == ".rgbe" || ext == ".pic") return HdrFormat::rgbe;
  return std::nullopt;
}

HdrImage decode_hdr(std::string_view bytes, std::optional<Projection> projection) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == 'F' || bytes[1] == 'f')) {
    return decode_pfm(bytes, projection);
  }
  if (bytes.size() >= 2 && bytes[0] == '#' && bytes[1] == '?') return decode_rgbe(bytes, projection);
  throw HdrIoError(Kind::unsupported_format, "unrecognized image format (expected PFM or Radiance RGBE)");
}

HdrImage read_hdr(const std::filesystem::path& path, std::optional<Projection> projection) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw HdrIoError(Kind::open_failed, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_hdr(bytes, projection);
}

std::string encode_pfm(const HdrImage& img) {
  std::string out = "PF\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n-1.0\n";
  const std::size_t header = out.size();
  out.resize(header + 12 * img.pixel_count());
  char* dst = out.data() + header;
  const auto data = img.data();
  for (int row = 0; row < img.height(); ++row) {
    const int y = img.height() - 1 - row;
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        auto bits = std::bit_cast<std::uint32_t>(data[3 * img.index(x, y) + c]);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        std::memcpy(dst, &bits, 4);
        dst += 4;
      }
    }
  }
  return out;
}

std::string encode_rgbe(const HdrImage& img) {
  const int w = img.width();
  const int h = img.height();
  std::string out = "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\nPROJECTION=" + std::string(to_string(img.projection())) +
                    "\n\n-Y " + std::to_string(h) + " +X " + std::to_string(w) + "\n";
  std::vector<unsigned char> planes(4 * static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    if (w < 8 || w > 0x7fff) {
      for (int x = 0; x < w; ++x) {
        const auto c = img.at(x, y);
        const Rgbe px = float_to_rgbe(c.r, c.g, c.b);
        out.push_back(static_cast<char>(px.r));
        out.push_back(static_cast<char>(px.g));
        out.push_back(static_cast<char>(px.b));
        out.push_back(static_cast<char>(px.e));
      }
      continue;
    }
    for (int x = 0; x < w; ++x) {
      const auto c = img.at(x, y);
      const Rgbe px = float_to_rgbe(c.r, c.g, c.b);
      planes[x] = px.r;
      planes[w + x] = px.g;
      planes[2 * w + x] = px.b;
      planes[3 * w + x] = px.e;
    }
    out.push_back(2);
    out.push_back(2);
    out.push_back(static_cast<char>(w >> 8));
    out.push_back(static_cast<char>(w & 0xff));
    for (int c = 0; c < 4; ++c) write_rle_bytes(out, planes.data() + c * w, w);
  }
  return out;
}

void write_hdr(const std::filesystem::path& path, const HdrImage& img, std::optional<HdrFormat> format) {
  const auto fmt = format ? format : format_from_extension(path);
  if (!fmt) throw HdrIoError(Kind::unsupported_format, "cannot infer HDR format from " + path.string());
  const std::string bytes = *fmt == HdrFormat::pfm ? encode_pfm(img) : encode_rgbe(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw HdrIoError(Kind::open_failed, "cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw HdrIoError(Kind::write_failed, "failed writing " + path.string());
}

}  // namespace heliofit
