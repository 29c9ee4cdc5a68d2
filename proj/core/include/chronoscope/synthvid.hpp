#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace chronoscope {

enum class Arrow : std::uint8_t { kBackward = 0, kForward = 1 };

// T_raw single-channel frames stored row-major as float32 in [0, 1].
struct VideoClip {
  std::uint32_t length = 0;  // T_raw
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::vector<float> pixels;
  double fps = 12.0;
  Arrow arrow = Arrow::kForward;
  std::optional<std::int16_t> class_id;
  std::uint64_t seed = 0;

  std::size_t frame_size() const { return std::size_t{height} * width; }
  std::span<const float> frame(std::size_t t) const;
  std::span<float> frame(std::size_t t);

  bool operator==(const VideoClip&) const = default;
};

VideoClip reverse_clip(const VideoClip& clip);

// --- physics --------------------------------------------------------------------

struct BallState {
  double x = 0.0;  // horizontal, pixels
  double z = 0.0;  // height above the floor (asym) or vertical position (sym)
  double vx = 0.0;
  double vz = 0.0;
};

struct BallPhysics {
  double gravity = 0.0;      // px / step^2
  double damping = 1.0;      // velocity factor applied once per step
  double restitution = 1.0;  // normal-velocity factor at each wall/floor hit
  double x_min = 1.5, x_max = 13.5;
  double z_min = 0.0, z_max = 12.0;
  bool reflect_top = false;  // sym box reflects on every side

  double energy(const BallState& s) const;
};

// Damped ball under gravity with inelastic bounces (time-asymmetric).
BallPhysics asym_physics();
// Undamped elastic ball in a box (time-symmetric).
BallPhysics sym_physics();

// Advances one frame step: exact ballistic flight between collisions, then
// damping. Energy never increases.
BallState advance(const BallState& s, const BallPhysics& physics);

struct Trajectory {
  std::vector<BallState> states;  // one per frame
  BallPhysics physics;
};

Trajectory simulate_asym(std::uint64_t seed, std::size_t length);
Trajectory simulate_sym(std::uint64_t seed, std::size_t length);

// Frame row/column of a ball state (rows grow downward, floor at the bottom).
std::array<double, 2> ball_pixel(const BallState& s, const BallPhysics& physics);

// --- generators ------------------------------------------------------------------

constexpr std::size_t kFrameSide = 16;
constexpr std::size_t kMinClipLength = 16;

VideoClip gen_asym_clip(std::uint64_t seed, std::size_t length = 48, double fps = 12.0);
VideoClip gen_sym_clip(std::uint64_t seed, std::size_t length = 48, double fps = 12.0);

enum class TemplateClass : std::int16_t {
  kMoveInto = 0,
  kTakeOut = 1,  // reverse of kMoveInto
  kPretendMoveInto = 2,
  kCover = 3,
  kUncover = 4,  // reverse of kCover
  kPushPast = 5,
  kPushBack = 6,  // reverse of kPushPast
  kHoldStill = 7,
};
constexpr std::size_t kNumTemplateClasses = 8;

const std::vector<std::string>& template_class_names();
// Partner whose clips are exact temporal reversals, if any.
std::optional<TemplateClass> reverse_partner(TemplateClass c);

VideoClip gen_template_clip(std::uint64_t seed, int class_id, std::size_t length = 48, double fps = 12.0);

// --- datasets ---------------------------------------------------------------------

enum class GeneratorKind { kAsym, kSym, kTemplate };
std::string_view generator_name(GeneratorKind k);
GeneratorKind parse_generator(std::string_view name);

enum class Split : std::uint8_t { kTrain = 0, kTest = 1, kUnspecified = 2 };

struct Dataset {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::vector<VideoClip> clips;
  std::vector<std::string> class_names;
  Split split = Split::kUnspecified;
  std::uint32_t version = kFormatVersion;
  std::array<std::uint8_t, 32> config_digest{};

  bool operator==(const Dataset&) const = default;
};

struct GenerateOptions {
  GeneratorKind kind = GeneratorKind::kAsym;
  std::uint64_t seed_begin = 0;  // clip i uses seed seed_begin + i
  std::size_t count = 0;
  std::size_t length = 48;
  double fps = 12.0;
  Split split = Split::kUnspecified;
  std::size_t threads = 1;
};

// Template datasets cycle class ids so classes stay balanced.
Dataset generate_dataset(const GenerateOptions& opts);

// "VTDS1", u32 clip count, per clip: u32 T_raw, u16 H, u16 W, u8 arrow,
// i16 class id (-1 = none), u64 seed, f32 pixels; then a metadata trailer
// ("META", u8 split, u32 version, class names, per-clip fps, config digest).
void write_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace chronoscope
