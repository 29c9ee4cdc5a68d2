#include "binary_io.hpp"

#include <filesystem>
#include <fstream>

namespace chronoscope::detail {

std::vector<char> read_file(const std::string& path) {
  if (!std::filesystem::exists(path)) throw FileNotFound(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace chronoscope::detail
