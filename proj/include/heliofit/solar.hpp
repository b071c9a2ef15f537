#pragma once

#include <cstdint>
#include <string_view>

#include "heliofit/geometry.hpp"

namespace heliofit {

/// Seconds since 1970-01-01T00:00:00Z.
using UnixSeconds = double;

/// Parses "YYYY-MM-DDTHH:MM[:SS[.fff]][Z|±HH:MM]"; a missing zone means UTC.
/// Throws std::invalid_argument on malformed or out-of-range fields.
UnixSeconds parse_utc_timestamp(std::string_view text);

/// Sun direction in the dome frame (+x north, +y east, azimuth clockwise
/// from north when seen from above) using the Astronomical Almanac
/// low-precision ephemeris. Latitude in degrees north, longitude in degrees
/// east. Zenith > π/2 means the sun is below the horizon.
Direction solar_position(double latitude_deg, double longitude_deg, UnixSeconds timestamp);
Direction solar_position(double latitude_deg, double longitude_deg, std::string_view timestamp);

}  // namespace heliofit
