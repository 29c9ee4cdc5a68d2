#include "binary_io.hpp"
#include "chronoscope/synthvid.hpp"

namespace chronoscope {

namespace {
constexpr std::string_view kMagic = "VTDS1";
constexpr std::string_view kTrailer = "META";
}  // namespace

void write_dataset(const Dataset& d, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.put_bytes(kMagic);
  w.put(static_cast<std::uint32_t>(d.clips.size()));
  for (const auto& c : d.clips) {
    if (c.pixels.size() != std::size_t{c.length} * c.frame_size()) {
      throw InvalidArgument("write_dataset: clip pixel count does not match its geometry");
    }
    if (c.class_id && *c.class_id >= static_cast<int>(d.class_names.size())) {
      throw InvalidArgument("write_dataset: class id " + std::to_string(*c.class_id) + " has no class name");
    }
    w.put(c.length);
    w.put(c.height);
    w.put(c.width);
    w.put(static_cast<std::uint8_t>(c.arrow));
    w.put(static_cast<std::int16_t>(c.class_id.value_or(-1)));
    w.put(c.seed);
    w.put_floats(c.pixels);
  }
  w.put_bytes(kTrailer);
  w.put(static_cast<std::uint8_t>(d.split));
  w.put(d.version);
  w.put(static_cast<std::uint32_t>(d.class_names.size()));
  for (const auto& n : d.class_names) {
    w.put(static_cast<std::uint32_t>(n.size()));
    w.put_bytes(n);
  }
  for (const auto& c : d.clips) w.put(c.fps);
  for (std::uint8_t b : d.config_digest) w.put(b);
  detail::write_file(path.string(), w.bytes());
}

Dataset read_dataset(const std::filesystem::path& path) {
  const std::vector<char> bytes = detail::read_file(path.string());
  detail::ByteReader r(bytes);
  if (r.get_bytes(std::min(kMagic.size(), r.remaining()), "magic") != kMagic) {
    throw FormatError("bad dataset magic", 0);
  }
  Dataset d;
  const auto count = r.get<std::uint32_t>("clip count");
  d.clips.reserve(std::min<std::size_t>(count, 1u << 16));
  for (std::uint32_t i = 0; i < count; ++i) {
    VideoClip c;
    c.length = r.get<std::uint32_t>("clip length");
    c.height = r.get<std::uint16_t>("clip height");
    c.width = r.get<std::uint16_t>("clip width");
    const auto arrow = r.get<std::uint8_t>("arrow");
    if (arrow > 1) r.fail("invalid arrow byte " + std::to_string(arrow));
    c.arrow = static_cast<Arrow>(arrow);
    const auto cls = r.get<std::int16_t>("class id");
    if (cls < -1) r.fail("invalid class id " + std::to_string(cls));
    if (cls >= 0) c.class_id = cls;
    c.seed = r.get<std::uint64_t>("seed");
    const std::size_t n = std::size_t{c.length} * c.frame_size();
    if (n * sizeof(float) > r.remaining()) {
      throw FormatError("truncated file while reading pixel payload", r.offset());
    }
    c.pixels.resize(n);
    r.get_floats(c.pixels, "pixel payload");
    d.clips.push_back(std::move(c));
  }
  if (r.get_bytes(kTrailer.size(), "metadata tag") != kTrailer) {
    throw FormatError("bad metadata tag", r.offset() - kTrailer.size());
  }
  const auto split = r.get<std::uint8_t>("split");
  if (split > 2) r.fail("invalid split byte " + std::to_string(split));
  d.split = static_cast<Split>(split);
  const std::size_t version_at = r.offset();
  d.version = r.get<std::uint32_t>("version");
  if (d.version != Dataset::kFormatVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(d.version), version_at);
  }
  const auto names = r.get<std::uint32_t>("class name count");
  for (std::uint32_t i = 0; i < names; ++i) {
    const auto len = r.get<std::uint32_t>("class name length");
    d.class_names.push_back(r.get_bytes(len, "class name"));
  }
  for (auto& c : d.clips) {
    c.fps = r.get<double>("fps");
    if (c.class_id && *c.class_id >= static_cast<int>(d.class_names.size())) {
      r.fail("class id " + std::to_string(*c.class_id) + " has no class name");
    }
  }
  for (auto& b : d.config_digest) b = r.get<std::uint8_t>("config digest");
  if (!r.at_end()) r.fail("trailing bytes after dataset");
  return d;
}

}  // namespace chronoscope
