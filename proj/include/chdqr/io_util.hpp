#pragma once

#include <string>

namespace chdqr {

// Writes via a temp file in the same directory, then renames into place.
void atomic_write_text(const std::string& path, const std::string& content);

// Formats with 4 significant digits (result tables).
std::string sig4(double v);

}  // namespace chdqr
