#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace calxfer::textio {

/// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

/// Fixed 17 significant digits, used by the model files.
std::string format_double17(double value);

/// Parses a full token as a double; nullopt on any trailing garbage.
std::optional<double> parse_double(std::string_view token);

std::string_view trim(std::string_view s);

/// Splits on commas without any quoting rules (none of our formats quote).
std::vector<std::string_view> split_commas(std::string_view line);

/// Reads a whole file, dropping a UTF-8 BOM, and splits it into lines with
/// LF or CRLF endings.
std::vector<std::string> read_lines(const std::string& path);

}  // namespace calxfer::textio
