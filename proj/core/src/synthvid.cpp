#include "chronoscope/synthvid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <thread>

#include "chronoscope/errors.hpp"

namespace chronoscope {

std::span<const float> VideoClip::frame(std::size_t t) const {
  if (t >= length) throw InvalidArgument("frame index " + std::to_string(t) + " >= clip length " + std::to_string(length));
  return std::span<const float>(pixels).subspan(t * frame_size(), frame_size());
}

std::span<float> VideoClip::frame(std::size_t t) {
  if (t >= length) throw InvalidArgument("frame index " + std::to_string(t) + " >= clip length " + std::to_string(length));
  return std::span<float>(pixels).subspan(t * frame_size(), frame_size());
}

VideoClip reverse_clip(const VideoClip& clip) {
  VideoClip out = clip;
  const std::size_t fs = clip.frame_size();
  for (std::size_t t = 0; t < clip.length; ++t) {
    const auto src = clip.frame(clip.length - 1 - t);
    std::copy(src.begin(), src.end(), out.pixels.begin() + static_cast<std::ptrdiff_t>(t * fs));
  }
  out.arrow = clip.arrow == Arrow::kForward ? Arrow::kBackward : Arrow::kForward;
  return out;
}

// --- physics ------------------------------------------------------------------------

double BallPhysics::energy(const BallState& s) const {
  return 0.5 * (s.vx * s.vx + s.vz * s.vz) + gravity * (s.z - z_min);
}

BallPhysics asym_physics() {
  BallPhysics p;
  p.gravity = 0.05;
  p.damping = 0.98;
  p.restitution = 0.8;
  return p;
}

BallPhysics sym_physics() {
  BallPhysics p;
  p.reflect_top = true;
  return p;
}

namespace {

// Below this upward speed after a floor hit the ball is considered resting.
constexpr double kRestSpeed = 1e-4;

enum class Event { kNone, kLeft, kRight, kFloor, kTop };

}  // namespace

BallState advance(const BallState& start, const BallPhysics& P) {
  BallState s = start;
  double remaining = 1.0;
  const double g = P.gravity;
  for (int iter = 0; remaining > 0.0 && iter < 256; ++iter) {
    const bool resting = g > 0.0 && s.z <= P.z_min && s.vz == 0.0;
    double t_hit = std::numeric_limits<double>::infinity();
    Event ev = Event::kNone;
    if (s.vx > 0.0) {
      t_hit = (P.x_max - s.x) / s.vx;
      ev = Event::kRight;
    } else if (s.vx < 0.0) {
      t_hit = (P.x_min - s.x) / s.vx;
      ev = Event::kLeft;
    }
    if (!resting) {
      double t_floor = std::numeric_limits<double>::infinity();
      const double height = std::max(0.0, s.z - P.z_min);
      if (g > 0.0) {
        t_floor = height == 0.0 && s.vz <= 0.0 ? 0.0 : (s.vz + std::sqrt(s.vz * s.vz + 2.0 * g * height)) / g;
      } else if (s.vz < 0.0) {
        t_floor = -height / s.vz;
      }
      if (t_floor < t_hit) {
        t_hit = t_floor;
        ev = Event::kFloor;
      }
      if (P.reflect_top && s.vz > 0.0 && g == 0.0) {
        const double t_top = (P.z_max - s.z) / s.vz;
        if (t_top < t_hit) {
          t_hit = t_top;
          ev = Event::kTop;
        }
      }
    }
    const double dt = std::min(std::max(t_hit, 0.0), remaining);
    s.x += s.vx * dt;
    if (!resting) {
      s.z += s.vz * dt - 0.5 * g * dt * dt;
      s.vz -= g * dt;
    }
    remaining -= dt;
    if (t_hit > dt) break;  // no collision inside this step
    switch (ev) {
      case Event::kLeft:
        s.x = P.x_min;
        s.vx = -P.restitution * s.vx;
        break;
      case Event::kRight:
        s.x = P.x_max;
        s.vx = -P.restitution * s.vx;
        break;
      case Event::kFloor:
        s.z = P.z_min;
        s.vz = -P.restitution * s.vz;
        if (g > 0.0 && s.vz < kRestSpeed) s.vz = 0.0;
        break;
      case Event::kTop:
        s.z = P.z_max;
        s.vz = -P.restitution * s.vz;
        break;
      case Event::kNone:
        break;
    }
  }
  s.x = std::clamp(s.x, P.x_min, P.x_max);
  s.z = std::clamp(s.z, P.z_min, P.z_max);
  s.vx *= P.damping;
  s.vz *= P.damping;
  return s;
}

namespace {

Trajectory run(const BallPhysics& physics, BallState s, std::size_t length) {
  Trajectory tr{{}, physics};
  tr.states.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    tr.states.push_back(s);
    s = advance(s, physics);
  }
  return tr;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

Trajectory simulate_asym(std::uint64_t seed, std::size_t length) {
  const BallPhysics P = asym_physics();
  std::mt19937_64 rng(seed);
  BallState s;
  s.x = uniform(rng, P.x_min, P.x_max);
  s.z = uniform(rng, 2.0, 10.0);
  const double speed = uniform(rng, 0.5, 1.0);
  s.vx = rng() & 1 ? speed : -speed;
  // apex stays below the top of the frame
  const double vz_cap = std::sqrt(2.0 * P.gravity * (P.z_max - 0.5 - s.z));
  s.vz = uniform(rng, -vz_cap, vz_cap);
  return run(P, s, length);
}

Trajectory simulate_sym(std::uint64_t seed, std::size_t length) {
  const BallPhysics P = sym_physics();
  std::mt19937_64 rng(seed);
  BallState s;
  s.x = uniform(rng, P.x_min, P.x_max);
  s.z = uniform(rng, P.z_min, P.z_max);
  const double speed = uniform(rng, 0.4, 1.0);
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  s.vx = speed * std::cos(angle);
  s.vz = speed * std::sin(angle);
  return run(P, s, length);
}

std::array<double, 2> ball_pixel(const BallState& s, const BallPhysics& physics) {
  return {physics.z_max + physics.x_min - s.z, s.x};
}

// --- rendering -------------------------------------------------------------------

namespace {

constexpr double kBallSigma = 1.0;

VideoClip blank_clip(std::uint64_t seed, std::size_t length, double fps) {
  if (length < kMinClipLength) {
    throw InvalidArgument("clip length " + std::to_string(length) + " < " + std::to_string(kMinClipLength));
  }
  VideoClip c;
  c.length = static_cast<std::uint32_t>(length);
  c.height = c.width = static_cast<std::uint16_t>(kFrameSide);
  c.pixels.assign(length * kFrameSide * kFrameSide, 0.0f);
  c.fps = fps;
  c.seed = seed;
  return c;
}

// Pixel centres sit at integer coordinates; each shape is splatted with a
// smooth profile so sub-pixel motion changes intensities continuously.
template <class Profile>
void splat(std::span<float> frame, double row, double col, double alpha, Profile profile) {
  for (std::size_t r = 0; r < kFrameSide; ++r) {
    for (std::size_t c = 0; c < kFrameSide; ++c) {
      const double dist = std::hypot(static_cast<double>(r) - row, static_cast<double>(c) - col);
      const double v = std::clamp(alpha * profile(dist), 0.0, 1.0);
      float& px = frame[r * kFrameSide + c];
      px = std::max(px, static_cast<float>(v));
    }
  }
}

auto gaussian(double sigma, double amplitude) {
  return [=](double d) { return amplitude * std::exp(-d * d / (2.0 * sigma * sigma)); };
}

auto ring(double radius, double width, double amplitude) {
  return [=](double d) { return amplitude * std::exp(-(d - radius) * (d - radius) / (2.0 * width * width)); };
}

auto disc(double radius, double amplitude) {
  return [=](double d) { return amplitude / (1.0 + std::exp((d - radius) / 0.5)); };
}

VideoClip render_ball(const Trajectory& tr, std::uint64_t seed, double fps) {
  VideoClip c = blank_clip(seed, tr.states.size(), fps);
  for (std::size_t t = 0; t < tr.states.size(); ++t) {
    const auto [row, col] = ball_pixel(tr.states[t], tr.physics);
    splat(c.frame(t), row, col, 1.0, gaussian(kBallSigma, 1.0));
  }
  return c;
}

double smoothstep(double e0, double e1, double x) {
  const double u = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

}  // namespace

VideoClip gen_asym_clip(std::uint64_t seed, std::size_t length, double fps) {
  if (length < kMinClipLength) throw InvalidArgument("gen_asym_clip: length must be >= 16");
  return render_ball(simulate_asym(seed, length), seed, fps);
}

VideoClip gen_sym_clip(std::uint64_t seed, std::size_t length, double fps) {
  if (length < kMinClipLength) throw InvalidArgument("gen_sym_clip: length must be >= 16");
  return render_ball(simulate_sym(seed, length), seed, fps);
}

// --- templates -------------------------------------------------------------------

const std::vector<std::string>& template_class_names() {
  static const std::vector<std::string> names{"move_into", "take_out",  "pretend_move_into", "cover",
                                              "uncover",   "push_past", "push_back",         "hold_still"};
  return names;
}

std::optional<TemplateClass> reverse_partner(TemplateClass c) {
  switch (c) {
    case TemplateClass::kMoveInto:
      return TemplateClass::kTakeOut;
    case TemplateClass::kTakeOut:
      return TemplateClass::kMoveInto;
    case TemplateClass::kCover:
      return TemplateClass::kUncover;
    case TemplateClass::kUncover:
      return TemplateClass::kCover;
    case TemplateClass::kPushPast:
      return TemplateClass::kPushBack;
    case TemplateClass::kPushBack:
      return TemplateClass::kPushPast;
    default:
      return std::nullopt;
  }
}

namespace {

struct Scene {
  double cx, cy;          // container centre (row, col)
  double radius;          // container radius
  double obj_sigma;
  double dir_r, dir_c;    // unit approach direction (from container outward)
  double start_dist;
  double u0, u1;          // motion window as a fraction of the clip
};

Scene jitter_scene(std::mt19937_64& rng) {
  Scene s;
  s.cx = uniform(rng, 6.0, 9.0);
  s.cy = uniform(rng, 6.0, 9.0);
  s.radius = uniform(rng, 2.4, 3.0);
  s.obj_sigma = uniform(rng, 0.8, 1.05);
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  s.dir_r = std::sin(angle);
  s.dir_c = std::cos(angle);
  s.start_dist = uniform(rng, 5.5, 6.5);
  s.u0 = uniform(rng, 0.05, 0.2);
  s.u1 = uniform(rng, 0.7, 0.9);
  return s;
}

// Renders the forward member of a template pair (or a self-paired class).
void render_template(VideoClip& clip, TemplateClass base, std::mt19937_64& rng) {
  const Scene s = jitter_scene(rng);
  const double last = static_cast<double>(clip.length - 1);
  for (std::size_t t = 0; t < clip.length; ++t) {
    const double u = static_cast<double>(t) / last;
    auto frame = clip.frame(t);
    switch (base) {
      case TemplateClass::kMoveInto: {
        // object travels into the container and disappears inside it
        const double d = s.start_dist * (1.0 - smoothstep(s.u0, s.u1, u));
        splat(frame, s.cx, s.cy, 1.0, ring(s.radius, 0.55, 0.6));
        splat(frame, s.cx + s.dir_r * d, s.cy + s.dir_c * d, smoothstep(0.0, s.radius, d),
              gaussian(s.obj_sigma, 1.0));
        break;
      }
      case TemplateClass::kPretendMoveInto: {
        // approach to the rim, linger, then back out; the object never enters
        const double in = smoothstep(s.u0, 0.4, u);
        const double out = smoothstep(0.6, s.u1, u);
        const double stop = s.radius + 0.8;
        const double d = s.start_dist - (s.start_dist - stop) * (in - out);
        splat(frame, s.cx, s.cy, 1.0, ring(s.radius, 0.55, 0.6));
        splat(frame, s.cx + s.dir_r * d, s.cy + s.dir_c * d, 1.0, gaussian(s.obj_sigma, 1.0));
        break;
      }
      case TemplateClass::kCover: {
        // a solid cover slides over the resting object and hides it
        const double d = s.start_dist * (1.0 - smoothstep(s.u0, s.u1, u));
        const double orow = s.cx, ocol = s.cy;
        splat(frame, orow, ocol, smoothstep(0.0, s.radius, d), gaussian(s.obj_sigma, 1.0));
        splat(frame, orow + s.dir_r * d, ocol + s.dir_c * d, 1.0, disc(s.radius * 0.8, 0.55));
        break;
      }
      case TemplateClass::kPushPast: {
        // object crosses the container from left to right
        const double p = smoothstep(s.u0, s.u1, u);
        const double col = s.cy - s.start_dist + 2.0 * s.start_dist * p;
        splat(frame, s.cx, s.cy, 1.0, ring(s.radius, 0.55, 0.6));
        splat(frame, s.cx, std::clamp(col, 0.5, 14.5), 1.0, gaussian(s.obj_sigma, 1.0));
        break;
      }
      case TemplateClass::kHoldStill: {
        splat(frame, s.cx, s.cy, 1.0, ring(s.radius, 0.55, 0.6));
        splat(frame, s.cx + s.dir_r * s.start_dist, s.cy + s.dir_c * s.start_dist, 1.0, gaussian(s.obj_sigma, 1.0));
        break;
      }
      default:
        throw InvalidArgument("render_template: not a base class");
    }
  }
}

TemplateClass base_of(TemplateClass c) {
  switch (c) {
    case TemplateClass::kTakeOut:
      return TemplateClass::kMoveInto;
    case TemplateClass::kUncover:
      return TemplateClass::kCover;
    case TemplateClass::kPushBack:
      return TemplateClass::kPushPast;
    default:
      return c;
  }
}

}  // namespace

VideoClip gen_template_clip(std::uint64_t seed, int class_id, std::size_t length, double fps) {
  if (class_id < 0 || class_id >= static_cast<int>(kNumTemplateClasses)) {
    throw InvalidArgument("gen_template_clip: class id " + std::to_string(class_id) + " outside [0,8)");
  }
  const auto cls = static_cast<TemplateClass>(class_id);
  const TemplateClass base = base_of(cls);
  VideoClip clip = blank_clip(seed, length, fps);
  std::mt19937_64 rng(seed);
  render_template(clip, base, rng);
  if (base != cls) {
    // the reversed member is the exact temporal mirror of the base script
    clip = reverse_clip(clip);
    clip.arrow = Arrow::kForward;
  }
  clip.class_id = static_cast<std::int16_t>(class_id);
  return clip;
}

// --- datasets ---------------------------------------------------------------------

std::string_view generator_name(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::kAsym:
      return "asym";
    case GeneratorKind::kSym:
      return "sym";
    case GeneratorKind::kTemplate:
      return "template";
  }
  return "?";
}

GeneratorKind parse_generator(std::string_view name) {
  for (auto k : {GeneratorKind::kAsym, GeneratorKind::kSym, GeneratorKind::kTemplate}) {
    if (generator_name(k) == name) return k;
  }
  throw InvalidArgument("unknown generator '" + std::string(name) + "' (expected asym|sym|template)");
}

Dataset generate_dataset(const GenerateOptions& opts) {
  Dataset d;
  d.split = opts.split;
  if (opts.kind == GeneratorKind::kTemplate) d.class_names = template_class_names();
  d.clips.resize(opts.count);
  auto make = [&](std::size_t i) {
    const std::uint64_t seed = opts.seed_begin + i;
    switch (opts.kind) {
      case GeneratorKind::kAsym:
        return gen_asym_clip(seed, opts.length, opts.fps);
      case GeneratorKind::kSym:
        return gen_sym_clip(seed, opts.length, opts.fps);
      case GeneratorKind::kTemplate:
        return gen_template_clip(seed, static_cast<int>(i % kNumTemplateClasses), opts.length, opts.fps);
    }
    throw InvalidArgument("generate_dataset: unknown generator");
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.threads, opts.count));
  if (workers == 1) {
    for (std::size_t i = 0; i < opts.count; ++i) d.clips[i] = make(i);
  } else {
    // clip i depends only on its own seed, so any interleaving gives the same dataset
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < opts.count; i += workers) d.clips[i] = make(i);
      });
    }
  }
  return d;
}

}  // namespace chronoscope
