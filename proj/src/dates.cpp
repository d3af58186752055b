#include "flowcast/dates.hpp"

#include <cstdio>

#include "flowcast/errors.hpp"

namespace flowcast {

namespace {
bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

unsigned days_in_month(int y, unsigned m) {
  static const unsigned lengths[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (m == 2 && is_leap(y)) return 29;
  return lengths[m - 1];
}
}  // namespace

CivilDate parse_date(const std::string& iso) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  if (std::sscanf(iso.c_str(), "%d-%u-%u%c", &y, &m, &d, &tail) != 3) {
    throw DataError("invalid ISO date '" + iso + "'");
  }
  if (m < 1 || m > 12 || d < 1 || d > days_in_month(y, m)) {
    throw DataError("invalid ISO date '" + iso + "'");
  }
  return {y, m, d};
}

std::string format_date(const CivilDate& d) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", d.year, d.month, d.day);
  return buf;
}

// Howard Hinnant's civil-days algorithms.
std::int64_t days_from_civil(const CivilDate& cd) {
  int y = cd.year;
  const unsigned m = cd.month, d = cd.day;
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

CivilDate civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp + (mp < 10 ? 3 : -9);
  return {static_cast<int>(y + (m <= 2)), m, d};
}

std::string date_plus_days(const std::string& iso, std::int64_t offset) {
  return format_date(civil_from_days(days_from_civil(parse_date(iso)) + offset));
}

}  // namespace flowcast
