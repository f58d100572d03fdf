#pragma once

#include <string>

namespace man {

// Shortest round-trip decimal form of a double. Used for all CSV output so
// reports are byte-stable across runs.
std::string format_double(double v);

void ensure_directory(const std::string& path);

}  // namespace man
