#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace soh::detail {

std::vector<std::string_view> split_fields(std::string_view line, char sep = ',');
std::string_view trim(std::string_view s);
std::optional<double> to_double(std::string_view s);
std::optional<long long> to_integer(std::string_view s);

/// Shortest text that reads back to the same double.
std::string format_double(double v);

/// Writes through a temporary sibling file and renames it into place.
void write_atomic(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& writer);

}  // namespace soh::detail
