#include "chdqr/io_util.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "chdqr/error.hpp"

namespace chdqr {

void atomic_write_text(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw DataError("rename " + tmp.string() + " -> " + path + ": " +
                          ec.message());
}

std::string sig4(double v) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream oss;
  oss.precision(4);
  oss << v;
  return oss.str();
}

}  // namespace chdqr
