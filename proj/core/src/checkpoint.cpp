#include <algorithm>

#include "binary_io.hpp"
#include "chronoscope/encoders.hpp"

namespace chronoscope {

namespace {
constexpr std::string_view kMagic = "VTCK1";
}

void write_checkpoint(const std::filesystem::path& path, const ConfigDigest& digest,
                      const std::vector<NamedTensor>& tensors) {
  detail::ByteWriter w;
  w.put_bytes(kMagic);
  for (std::uint8_t b : digest) w.put(b);
  for (const auto& nt : tensors) {
    w.put(static_cast<std::uint32_t>(nt.name.size()));
    w.put_bytes(nt.name);
    w.put(static_cast<std::uint32_t>(nt.tensor.rank()));
    for (std::size_t d : nt.tensor.shape()) w.put(static_cast<std::uint32_t>(d));
    std::vector<float> payload(nt.tensor.data().begin(), nt.tensor.data().end());
    w.put_floats(payload);
  }
  detail::write_file(path.string(), w.bytes());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::vector<char> bytes = detail::read_file(path.string());
  detail::ByteReader r(bytes);
  if (r.get_bytes(kMagic.size(), "magic") != kMagic) throw FormatError("bad checkpoint magic", 0);
  Checkpoint ck;
  for (auto& b : ck.digest) b = r.get<std::uint8_t>("config digest");
  while (!r.at_end()) {
    const auto name_len = r.get<std::uint32_t>("name length");
    std::string name = r.get_bytes(name_len, "tensor name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) r.fail("implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.get<std::uint32_t>("dimension");
      if (d == 0) r.fail("zero dimension in tensor '" + name + "'");
    }
    std::vector<float> payload(shape_numel(shape));
    r.get_floats(payload, "tensor payload");
    ck.tensors.push_back({std::move(name), Tensor::from_data(shape, std::vector<double>(payload.begin(), payload.end()))});
  }
  return ck;
}

}  // namespace chronoscope
