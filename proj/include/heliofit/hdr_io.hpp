#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "heliofit/image.hpp"

namespace heliofit {

enum class HdrFormat { pfm, rgbe };

class HdrIoError : public std::runtime_error {
 public:
  enum class Kind { open_failed, write_failed, malformed_header, truncated, corrupt_payload, unsupported_format };

  HdrIoError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Picks the format from the file extension (.pfm, .hdr, .rgbe); nullopt if unknown.
std::optional<HdrFormat> format_from_extension(const std::filesystem::path& path);

/// Decodes PFM ("PF"/"Pf") or Radiance RGBE ("#?") bytes. The projection is
/// taken from `projection` when given, else from a PROJECTION= header line
/// (RGBE), else inferred from the aspect ratio.
HdrImage decode_hdr(std::string_view bytes, std::optional<Projection> projection = std::nullopt);
HdrImage read_hdr(const std::filesystem::path& path, std::optional<Projection> projection = std::nullopt);

std::string encode_pfm(const HdrImage& img);
std::string encode_rgbe(const HdrImage& img);

/// Writes by extension unless a format is given. Throws HdrIoError.
void write_hdr(const std::filesystem::path& path, const HdrImage& img, std::optional<HdrFormat> format = std::nullopt);

/// RGBE pixel codec (Radiance convention: truncating encode, mid-point decode).
struct Rgbe {
  unsigned char r = 0, g = 0, b = 0, e = 0;
};
Rgbe float_to_rgbe(double r, double g, double b);
ColorRGB rgbe_to_float(const Rgbe& px);

}  // namespace heliofit
