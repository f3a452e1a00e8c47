#pragma once

// chmm_lab command-line front end.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace chmm {

/// Runs the CLI; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

struct IniEntry {
  std::string key;
  std::string value;
  int line = 0;
};

/// Flat `key = value` file; `#` and `;` start comments. Appends problems to `errors`.
std::vector<IniEntry> read_ini(const std::filesystem::path& path, std::vector<std::string>& errors);

}  // namespace chmm
