#pragma once

#include <string>
#include <vector>

namespace ctqa {

/// Format with up to `digits` significant digits, shortest form ("%.6g"
/// style). -0 normalizes to 0 so output stays byte-deterministic across
/// arithmetic routes.
std::string fmt_sig(double v, int digits = 6);

/// Fixed decimals ("%.1f" style), used for percent displays.
std::string fmt_fixed(double v, int decimals);

/// Split one CSV record on commas. Fields in this project's schemas never
/// contain commas or quotes, so no quoting layer is needed; a stray quote
/// is the caller's data error.
std::vector<std::string> split_csv_row(const std::string& line);

double parse_double_field(const std::string& field, const std::string& context);
long long parse_int_field(const std::string& field, const std::string& context);

} // namespace ctqa
