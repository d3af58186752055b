#pragma once

#include <cstdint>
#include <string>

namespace flowcast {

/// Proleptic Gregorian calendar day helpers for ISO-8601 dates.
struct CivilDate {
  int year = 1970;
  unsigned month = 1;
  unsigned day = 1;
};

/// Parses "YYYY-MM-DD"; throws DataError on malformed or invalid dates.
CivilDate parse_date(const std::string& iso);
std::string format_date(const CivilDate& d);

/// Days since 1970-01-01.
std::int64_t days_from_civil(const CivilDate& d);
CivilDate civil_from_days(std::int64_t days);

/// ISO date `offset` days after `iso`.
std::string date_plus_days(const std::string& iso, std::int64_t offset);

}  // namespace flowcast
