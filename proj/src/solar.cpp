#include "heliofit/solar.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>
#include <string>

namespace heliofit {

namespace {

std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool leap(std::int64_t y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

unsigned days_in_month(std::int64_t y, unsigned m) {
  static constexpr unsigned kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return m == 2 && leap(y) ? 29 : kDays[m - 1];
}

class Cursor {
 public:
  explicit Cursor(std::string_view s) : s_(s) {}

  int digits(std::size_t n, const char* field) {
    if (pos_ + n > s_.size()) fail(field);
    int v = 0;
    const auto* first = s_.data() + pos_;
    auto [ptr, ec] = std::from_chars(first, first + n, v);
    if (ec != std::errc{} || ptr != first + n) fail(field);
    pos_ += n;
    return v;
  }
  bool accept(char c) {
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c, const char* field) {
    if (!accept(c)) fail(field);
  }
  bool done() const { return pos_ == s_.size(); }
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }

  double fraction() {
    double scale = 0.1, v = 0.0;
    std::size_t n = 0;
    while (pos_ < s_.size() && s_[pos_] >= '0' && s_[pos_] <= '9') {
      v += scale * (s_[pos_++] - '0');
      scale *= 0.1;
      ++n;
    }
    if (n == 0) fail("fractional seconds");
    return v;
  }

  [[noreturn]] void fail(const char* field) const {
    throw std::invalid_argument("invalid timestamp '" + std::string(s_) + "': bad " + field);
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

UnixSeconds parse_utc_timestamp(std::string_view text) {
  Cursor c(text);
  const int year = c.digits(4, "year");
  c.expect('-', "date separator");
  const int month = c.digits(2, "month");
  c.expect('-', "date separator");
  const int day = c.digits(2, "day");
  if (!c.accept('T')) c.expect(' ', "date/time separator");
  const int hour = c.digits(2, "hour");
  c.expect(':', "time separator");
  const int minute = c.digits(2, "minute");
  double second = 0.0;
  if (c.accept(':')) {
    second = c.digits(2, "second");
    if (c.accept('.')) second += c.fraction();
  }
  int offset_min = 0;
  if (c.accept('Z')) {
  } else if (c.peek() == '+' || c.peek() == '-') {
    const int sign = c.accept('-') ? -1 : (c.accept('+'), 1);
    const int oh = c.digits(2, "zone hour");
    c.accept(':');
    const int om = c.digits(2, "zone minute");
    if (oh > 14 || om > 59) c.fail("zone offset");
    offset_min = sign * (oh * 60 + om);
  }
  if (!c.done()) c.fail("trailing characters");
  if (month < 1 || month > 12) c.fail("month");
  if (day < 1 || static_cast<unsigned>(day) > days_in_month(year, static_cast<unsigned>(month))) c.fail("day");
  if (hour > 23) c.fail("hour");
  if (minute > 59) c.fail("minute");
  if (second >= 61.0) c.fail("second");

  const auto days = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
  return static_cast<double>(days) * 86400.0 + hour * 3600.0 + minute * 60.0 + second - offset_min * 60.0;
}

Direction solar_position(double latitude_deg, double longitude_deg, UnixSeconds timestamp) {
  if (!(latitude_deg >= -90.0 && latitude_deg <= 90.0)) throw std::invalid_argument("latitude out of range");
  if (!std::isfinite(longitude_deg)) throw std::invalid_argument("longitude must be finite");

  // Days since J2000.0 (2000-01-01 12:00 TT, UTC used as an approximation).
  const double n = timestamp / 86400.0 - 10957.5;
  const double mean_lon = std::fmod(280.460 + 0.9856474 * n, 360.0);
  const double mean_anom = deg_to_rad(std::fmod(357.528 + 0.9856003 * n, 360.0));
  const double ecl_lon = deg_to_rad(mean_lon + 1.915 * std::sin(mean_anom) + 0.020 * std::sin(2.0 * mean_anom));
  const double obliquity = deg_to_rad(23.439 - 0.0000004 * n);

  const double ra = std::atan2(std::cos(obliquity) * std::sin(ecl_lon), std::cos(ecl_lon));
  const double dec = std::asin(std::sin(obliquity) * std::sin(ecl_lon));

  const double gmst_hours = std::fmod(6.697375 + 0.0657098242 * n + 24.0 * std::fmod(n + 0.5, 1.0), 24.0);
  const double lmst = deg_to_rad(gmst_hours * 15.0 + longitude_deg);
  const double hour_angle = lmst - ra;

  const double lat = deg_to_rad(latitude_deg);
  const double cos_zenith =
      std::sin(lat) * std::sin(dec) + std::cos(lat) * std::cos(dec) * std::cos(hour_angle);
  const double zenith = std::acos(std::clamp(cos_zenith, -1.0, 1.0));

  // Azimuth from north towards east.
  const double az = std::atan2(-std::cos(dec) * std::sin(hour_angle),
                               std::sin(dec) * std::cos(lat) - std::cos(dec) * std::sin(lat) * std::cos(hour_angle));
  return Direction::make(zenith, az);
}

Direction solar_position(double latitude_deg, double longitude_deg, std::string_view timestamp) {
  return solar_position(latitude_deg, longitude_deg, parse_utc_timestamp(timestamp));
}

}  // namespace heliofit
