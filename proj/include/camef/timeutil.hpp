#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include "camef/common.hpp"

namespace camef::timeutil {

// Civil-calendar conversions (proleptic Gregorian), UTC epoch seconds.

inline std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    y = static_cast<int>(yy + (m <= 2));
}

inline std::int64_t utc_seconds(int y, int mo, int d, int h = 0, int mi = 0, int s = 0) {
    return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + s;
}

/// Day of week, 0 = Sunday.
inline int weekday(std::int64_t days) {
    return static_cast<int>(((days % 7) + 11) % 7);
}

inline int nth_weekday_of_month(int year, int month, int wday, int nth) {
    std::int64_t first = days_from_civil(year, month, 1);
    int w = weekday(first);
    int day = 1 + ((wday - w + 7) % 7) + (nth - 1) * 7;
    return day;
}

inline int last_weekday_of_month(int year, int month, int wday) {
    static const int mdays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    int last = mdays[month - 1];
    if (month == 2 && ((year % 4 == 0 && year % 100 != 0) || year % 400 == 0)) last = 29;
    std::int64_t d = days_from_civil(year, month, last);
    int w = weekday(d);
    return last - ((w - wday + 7) % 7);
}

/// True when US Eastern daylight saving time is in effect on the given civil
/// date. 2007+: second Sunday of March through first Sunday of November;
/// earlier years: first Sunday of April through last Sunday of October.
inline bool us_eastern_dst(int y, int m, int d) {
    int start_m, start_d, end_m, end_d;
    if (y >= 2007) {
        start_m = 3;
        start_d = nth_weekday_of_month(y, 3, 0, 2);
        end_m = 11;
        end_d = nth_weekday_of_month(y, 11, 0, 1);
    } else {
        start_m = 4;
        start_d = nth_weekday_of_month(y, 4, 0, 1);
        end_m = 10;
        end_d = last_weekday_of_month(y, 10, 0);
    }
    std::int64_t day = days_from_civil(y, m, d);
    return day >= days_from_civil(y, start_m, start_d) &&
           day < days_from_civil(y, end_m, end_d);
}

/// Eastern local wall clock to UTC epoch seconds (EST -5h, EDT -4h).
inline std::int64_t eastern_to_utc(int y, int mo, int d, int h, int mi) {
    int offset_hours = us_eastern_dst(y, mo, d) ? 4 : 5;
    return utc_seconds(y, mo, d, h + offset_hours, mi, 0);
}

inline std::string format_rfc3339(std::int64_t t) {
    std::int64_t days = t >= 0 ? t / 86400 : (t - 86399) / 86400;
    std::int64_t sod = t - days * 86400;
    int y, m, d;
    civil_from_days(days, y, m, d);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", y, m, d,
                  static_cast<int>(sod / 3600), static_cast<int>((sod / 60) % 60),
                  static_cast<int>(sod % 60));
    return buf;
}

inline std::int64_t parse_rfc3339(const std::string& s) {
    int y, mo, d, h, mi, sec;
    if (std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%dZ", &y, &mo, &d, &h, &mi, &sec) != 6)
        throw ParseError("bad RFC 3339 timestamp: " + s);
    return utc_seconds(y, mo, d, h, mi, sec);
}

}  // namespace camef::timeutil
