#pragma once

#include <string>

namespace cxrage {

// Writes to <path>.tmp then renames into place, so readers never observe a
// partial file. Throws std::runtime_error naming the path on failure.
void atomic_write_file(const std::string& path, const std::string& contents);

std::string read_file(const std::string& path);

}  // namespace cxrage
