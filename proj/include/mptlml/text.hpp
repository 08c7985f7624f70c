#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace mptlml {

// Shortest decimal string that parses back to the same double.
std::string format_double(double v);

// Whole-field parse; rejects trailing garbage and empty input.
bool parse_double(std::string_view text, double& out);

// Splits on commas; no quoting (none of the formats here need it).
std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace mptlml
