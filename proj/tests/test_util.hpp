#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

namespace test_util {

// Fresh per-process directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "chronoscope_tests" /
                   (name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace test_util
