#include "chronoscope/encoders.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <numeric>

#include "chronoscope/errors.hpp"
#include "seed.hpp"

namespace chronoscope {

namespace {

constexpr std::size_t kKernel = 3;

using detail::mix_seed;

// Hands out deterministic per-tensor seeds in construction order.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : seed_(seed) {}

  Tensor normal(const Shape& shape, init::FanMode mode) {
    return Tensor::create(shape, init::Normal{mix_seed(seed_, next_++), mode, 0}).set_requires_grad(true);
  }
  static Tensor zeros(const Shape& shape) { return Tensor::create(shape).set_requires_grad(true); }
  static Tensor full(const Shape& shape, double v) {
    return Tensor::create(shape, init::Full{v}).set_requires_grad(true);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t next_ = 0;
};

BatchNormParams make_bn(std::size_t channels) {
  BatchNormParams bn = BatchNormParams::create(channels);
  bn.scale.set_requires_grad(true);
  bn.shift.set_requires_grad(true);
  return bn;
}

std::size_t pooled_blocks(const std::vector<std::size_t>& channels) { return channels.size() - 1; }

void push_conv(std::vector<NamedTensor>& out, const std::string& prefix, const ConvParams& c) {
  out.push_back({prefix + ".weight", c.weight});
  if (c.bias.defined()) out.push_back({prefix + ".bias", c.bias});
}

void push_linear(std::vector<NamedTensor>& out, const std::string& prefix, const LinearParams& l) {
  out.push_back({prefix + ".weight", l.weight});
  if (l.bias.defined()) out.push_back({prefix + ".bias", l.bias});
}

void push_bn(std::vector<NamedTensor>& out, const std::string& prefix, const BatchNormParams& bn) {
  out.push_back({prefix + ".scale", bn.scale});
  out.push_back({prefix + ".shift", bn.shift});
}

std::string step_name(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "tad.step%02zu", t);
  return buf;
}

// FNV-1a over the raw bytes of one frame.
std::uint64_t frame_hash(const double* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string_view family_name(Family f) {
  switch (f) {
    case Family::kRnn:
      return "rnn";
    case Family::kLstm:
      return "lstm";
    case Family::kHierarchical:
      return "hier";
    case Family::kTimeAligned:
      return "tad";
    case Family::kFrameMean:
      return "mean";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  for (Family f : {Family::kRnn, Family::kLstm, Family::kHierarchical, Family::kTimeAligned, Family::kFrameMean}) {
    if (family_name(f) == name) return f;
  }
  throw InvalidArgument("unknown encoder '" + std::string(name) + "' (expected rnn|lstm|hier|tad|mean)");
}

bool is_sequential(Family f) { return f == Family::kRnn || f == Family::kLstm; }

void EncoderSpec::validate() const {
  if (time_steps < 1) throw InvalidArgument("encoder: time_steps must be >= 1");
  if (family != Family::kTimeAligned && time_steps < 2) {
    throw InvalidArgument("encoder: time_steps must be >= 2");
  }
  if (growth < 1) throw InvalidArgument("encoder: growth (K) must be >= 1");
  if (hidden < 1) throw InvalidArgument("encoder: hidden must be >= 1");
  if (num_classes < 2) throw InvalidArgument("encoder: num_classes must be >= 2");
  if (in_channels < 1) throw InvalidArgument("encoder: in_channels must be >= 1");
  if (base_channels.empty() || std::find(base_channels.begin(), base_channels.end(), 0u) != base_channels.end()) {
    throw InvalidArgument("encoder: base_channels must be non-empty and positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("encoder: dropout must be in [0,1)");
  const std::size_t div = std::size_t{1} << pooled_blocks(base_channels);
  if (frame_size < div || frame_size % div != 0) {
    throw ShapeError("encoder: frame_size " + std::to_string(frame_size) + " not divisible by " + std::to_string(div));
  }
  if (family == Family::kHierarchical) {
    if (in_channels != 1) throw InvalidArgument("encoder: hierarchical family expects single-channel frames");
    if (time_steps < div) {
      throw ShapeError("encoder: " + std::to_string(time_steps) + " time steps too few for " +
                       std::to_string(pooled_blocks(base_channels)) + " temporal pooling layers");
    }
  }
}

std::size_t EncoderSpec::map_size() const { return frame_size >> pooled_blocks(base_channels); }

// --- operations ---------------------------------------------------------------

FrameFeatures frame_cnn(const Tensor& frames, const FrameCnnParams& p) {
  if (frames.rank() != 4) throw ShapeError("frame_cnn: expected [M,C,H,W], got " + shape_str(frames.shape()));
  Tensor h = frames;
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    h = relu(conv2d(h, p.blocks[b], 1, kKernel / 2));
    if (b + 1 < p.blocks.size()) h = max_pool2d(h, 2, 2);
  }
  Tensor vec = global_avg_pool(h);
  return {h, vec};
}

Tensor rnn_step(const Tensor& x_t, const Tensor& h_prev, const RnnParams& p) {
  return tanh(add(linear(x_t, p.input), linear(h_prev, p.recurrent)));
}

LstmState lstm_cell(const Tensor& x_t, const LstmState& prev, const LstmParams& p) {
  const std::size_t hidden = p.recurrent.weight.dim(1);
  Tensor gates = add(linear(x_t, p.input), linear(prev.h, p.recurrent));
  if (gates.dim(1) != 4 * hidden) throw ShapeError("lstm_cell: gate width " + std::to_string(gates.dim(1)));
  Tensor i = sigmoid(slice_cols(gates, 0, hidden));
  Tensor f = sigmoid(slice_cols(gates, hidden, 2 * hidden));
  Tensor g = tanh(slice_cols(gates, 2 * hidden, 3 * hidden));
  Tensor o = sigmoid(slice_cols(gates, 3 * hidden, 4 * hidden));
  Tensor c = add(mul(f, prev.c), mul(i, g));
  Tensor h = mul(o, tanh(c));
  return {h, c};
}

namespace {

// [N, T, d] -> x_t rows, one [N, d] tensor per step.
std::vector<Tensor> split_steps(const Tensor& frames) {
  if (frames.rank() != 3) throw ShapeError("expected [N,T,d], got " + shape_str(frames.shape()));
  const std::size_t n = frames.dim(0), t = frames.dim(1), d = frames.dim(2);
  Tensor flat = reshape(frames, {n * t, d});
  std::vector<Tensor> steps;
  std::vector<std::size_t> rows(n);
  for (std::size_t s = 0; s < t; ++s) {
    for (std::size_t i = 0; i < n; ++i) rows[i] = i * t + s;
    steps.push_back(take_rows(flat, rows));
  }
  return steps;
}

}  // namespace

Tensor rnn_forward(const Tensor& frames, const RnnParams& p) {
  const std::size_t hidden = p.recurrent.weight.dim(0);
  auto steps = split_steps(frames);
  if (steps.front().dim(1) != p.input.weight.dim(1)) {
    throw ShapeError("rnn_forward: frame width " + std::to_string(steps.front().dim(1)) + " vs W_h " +
                     shape_str(p.input.weight.shape()));
  }
  Tensor h = Tensor::create({frames.dim(0), hidden});
  for (const Tensor& x : steps) h = rnn_step(x, h, p);
  return h;
}

Tensor lstm_forward(const Tensor& frames, const LstmParams& p) {
  const std::size_t hidden = p.recurrent.weight.dim(1);
  auto steps = split_steps(frames);
  if (steps.front().dim(1) != p.input.weight.dim(1)) {
    throw ShapeError("lstm_forward: frame width " + std::to_string(steps.front().dim(1)) + " vs input weight " +
                     shape_str(p.input.weight.shape()));
  }
  LstmState state{Tensor::create({frames.dim(0), hidden}), Tensor::create({frames.dim(0), hidden})};
  for (const Tensor& x : steps) state = lstm_cell(x, state, p);
  return state.h;
}

Tensor hier_forward(const Tensor& clip, const HierParams& p) {
  if (clip.rank() != 5) throw ShapeError("hier_forward: expected [N,C,T,H,W], got " + shape_str(clip.shape()));
  const std::size_t needed = std::size_t{1} << (p.blocks.size() - 1);
  if (clip.dim(2) < needed) {
    throw ShapeError("hier_forward: temporal dim " + std::to_string(clip.dim(2)) + " too small for " +
                     std::to_string(p.blocks.size()) + " conv3d blocks");
  }
  Tensor h = clip;
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    h = relu(conv3d(h, p.blocks[b], 1, kKernel / 2));
    if (b + 1 < p.blocks.size()) h = max_pool3d(h, {2, 2, 2}, {2, 2, 2});
  }
  return global_avg_pool(h);
}

Tensor tad_step(std::span<const Tensor> inputs, TadStepParams& p, std::size_t growth, double dropout_rate, Mode mode,
                std::uint64_t dropout_seed) {
  if (inputs.empty()) throw ShapeError("tad_step: no inputs");
  Tensor fa = inputs.size() == 1 ? inputs.front() : concat_channels(inputs);
  if (fa.dim(1) != p.conv.weight.dim(1)) {
    throw ShapeError("tad_step: concatenated input has " + std::to_string(fa.dim(1)) + " channels, step expects " +
                     std::to_string(p.conv.weight.dim(1)));
  }
  if (p.conv.weight.dim(0) != growth) {
    throw ShapeError("tad_step: conv emits " + std::to_string(p.conv.weight.dim(0)) + " maps, K=" +
                     std::to_string(growth));
  }
  Tensor h = conv2d(relu(batchnorm2d(fa, p.bn, mode)), p.conv, 1, kKernel / 2);
  return dropout(h, dropout_rate, mode, dropout_seed);
}

TadOutput tad_forward(std::span<const Tensor> frame_maps, TadParams& p, std::size_t growth, double dropout_rate,
                      Mode mode, std::uint64_t dropout_seed) {
  if (frame_maps.size() != p.steps.size()) {
    throw InvalidArgument("tad_forward: got " + std::to_string(frame_maps.size()) + " frames, encoder has " +
                          std::to_string(p.steps.size()) + " time steps");
  }
  TadOutput out;
  std::vector<Tensor> inputs;
  for (std::size_t t = 0; t < frame_maps.size(); ++t) {
    // [h_1, ..., h_{t-1}, x_t]: history first, then the current frame.
    inputs = out.states;
    inputs.push_back(frame_maps[t]);
    out.states.push_back(tad_step(inputs, p.steps[t], growth, dropout_rate, mode, mix_seed(dropout_seed, t)));
  }
  out.encoding = out.states.size() == 1 ? out.states.front() : concat_channels(out.states);
  return out;
}

HeadOutput classifier_head(const Tensor& encoding, HeadParams& p, Mode mode) {
  Tensor features;
  if (encoding.rank() == 4) {
    if (!p.bn) throw ShapeError("classifier_head: map encoding needs a batch-norm head");
    Tensor h = relu(batchnorm2d(encoding, *p.bn, mode));
    const std::size_t k = std::min<std::size_t>(2, std::min(h.dim(2), h.dim(3)));
    features = flatten(max_pool2d(h, k, k));
  } else if (encoding.rank() == 2) {
    features = encoding;
  } else {
    throw ShapeError("classifier_head: unsupported encoding " + shape_str(encoding.shape()));
  }
  if (features.dim(1) != p.fc.weight.dim(1)) {
    throw ShapeError("classifier_head: feature width " + std::to_string(features.dim(1)) + " vs fc " +
                     shape_str(p.fc.weight.shape()));
  }
  return {linear(features, p.fc), features};
}

namespace {

std::size_t head_pool_side(std::size_t map) { return map / std::min<std::size_t>(2, map); }

std::size_t frame_cnn_count(const EncoderSpec& s) {
  std::size_t total = 0, cin = s.in_channels;
  for (std::size_t c : s.base_channels) {
    total += c * cin * kKernel * kKernel + c;
    cin = c;
  }
  return total;
}

}  // namespace

ParamCount count_params(const EncoderSpec& s) {
  s.validate();
  ParamCount pc;
  const std::size_t F = s.frame_features();
  const std::size_t classes = s.num_classes;
  switch (s.family) {
    case Family::kRnn:
      pc.frame_cnn = frame_cnn_count(s);
      pc.temporal = s.hidden * F + s.hidden * s.hidden + s.hidden;
      pc.head = classes * s.hidden + classes;
      break;
    case Family::kLstm:
      pc.frame_cnn = frame_cnn_count(s);
      pc.temporal = 4 * s.hidden * F + 4 * s.hidden * s.hidden + 4 * s.hidden;
      pc.head = classes * s.hidden + classes;
      break;
    case Family::kHierarchical: {
      std::size_t cin = s.in_channels;
      for (std::size_t c : s.base_channels) {
        pc.temporal += c * cin * kKernel * kKernel * kKernel + c;
        cin = c;
      }
      pc.head = classes * s.base_channels.back() + classes;
      break;
    }
    case Family::kTimeAligned: {
      pc.frame_cnn = frame_cnn_count(s);
      const std::size_t K = s.growth;
      for (std::size_t t = 1; t <= s.time_steps; ++t) {
        const std::size_t in = F + (t - 1) * K;
        pc.temporal += K * (kKernel * kKernel * in) + K + 2 * in;
      }
      const std::size_t side = head_pool_side(s.map_size());
      const std::size_t width = K * s.time_steps * side * side;
      pc.head = 2 * K * s.time_steps + classes * width + classes;
      break;
    }
    case Family::kFrameMean:
      pc.frame_cnn = frame_cnn_count(s);
      pc.head = classes * F + classes;
      break;
  }
  return pc;
}

// --- VideoModel -----------------------------------------------------------------------

VideoModel::VideoModel(EncoderSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Initializer init(seed);
  const bool uses_frame_cnn = spec_.family != Family::kHierarchical;
  if (uses_frame_cnn) {
    std::size_t cin = spec_.in_channels;
    for (std::size_t c : spec_.base_channels) {
      frame_cnn_.blocks.push_back(
          {init.normal({c, cin, kKernel, kKernel}, init::FanMode::kRelu), Initializer::zeros({c})});
      cin = c;
    }
  }
  const std::size_t F = spec_.frame_features();
  const std::size_t H = spec_.hidden;
  switch (spec_.family) {
    case Family::kRnn:
      rnn_.input = {init.normal({H, F}, init::FanMode::kLinear), Initializer::zeros({H})};
      rnn_.recurrent = {init.normal({H, H}, init::FanMode::kLinear), Tensor{}};
      head_.fc = {init.normal({spec_.num_classes, H}, init::FanMode::kLinear), Initializer::zeros({spec_.num_classes})};
      break;
    case Family::kLstm: {
      lstm_.input = {init.normal({4 * H, F}, init::FanMode::kLinear), Initializer::zeros({4 * H})};
      // forget gate starts open
      auto bias = lstm_.input.bias.data();
      std::fill(bias.begin() + static_cast<std::ptrdiff_t>(H), bias.begin() + static_cast<std::ptrdiff_t>(2 * H), 1.0);
      lstm_.recurrent = {init.normal({4 * H, H}, init::FanMode::kLinear), Tensor{}};
      head_.fc = {init.normal({spec_.num_classes, H}, init::FanMode::kLinear), Initializer::zeros({spec_.num_classes})};
      break;
    }
    case Family::kHierarchical: {
      std::size_t cin = spec_.in_channels;
      for (std::size_t c : spec_.base_channels) {
        hier_.blocks.push_back(
            {init.normal({c, cin, kKernel, kKernel, kKernel}, init::FanMode::kRelu), Initializer::zeros({c})});
        cin = c;
      }
      head_.fc = {init.normal({spec_.num_classes, cin}, init::FanMode::kLinear), Initializer::zeros({spec_.num_classes})};
      break;
    }
    case Family::kTimeAligned: {
      const std::size_t K = spec_.growth;
      for (std::size_t t = 0; t < spec_.time_steps; ++t) {
        const std::size_t in = F + t * K;
        tad_.steps.push_back(
            {make_bn(in), {init.normal({K, in, kKernel, kKernel}, init::FanMode::kRelu), Initializer::zeros({K})}});
      }
      head_.bn = make_bn(K * spec_.time_steps);
      head_.fc = {init.normal({spec_.num_classes, embedding_width()}, init::FanMode::kLinear),
                  Initializer::zeros({spec_.num_classes})};
      break;
    }
    case Family::kFrameMean:
      head_.fc = {init.normal({spec_.num_classes, F}, init::FanMode::kLinear), Initializer::zeros({spec_.num_classes})};
      break;
  }
}

std::size_t VideoModel::embedding_width() const {
  switch (spec_.family) {
    case Family::kRnn:
    case Family::kLstm:
      return spec_.hidden;
    case Family::kHierarchical:
    case Family::kFrameMean:
      return spec_.base_channels.back();
    case Family::kTimeAligned: {
      const std::size_t side = head_pool_side(spec_.map_size());
      return spec_.growth * spec_.time_steps * side * side;
    }
  }
  return 0;
}

namespace {

void check_clips(const Tensor& clips, const EncoderSpec& s) {
  if (clips.rank() != 5) throw ShapeError("model: expected clips [N,T,C,H,W], got " + shape_str(clips.shape()));
  if (clips.dim(1) != s.time_steps) {
    throw InvalidArgument("model: got " + std::to_string(clips.dim(1)) + " frames, encoder expects " +
                          std::to_string(s.time_steps));
  }
  if (clips.dim(2) != s.in_channels || clips.dim(3) != s.frame_size || clips.dim(4) != s.frame_size) {
    throw ShapeError("model: frame shape " + shape_str(clips.shape()) + " does not match spec");
  }
}

Tensor flatten_frames(const Tensor& clips) {
  return reshape(clips, {clips.dim(0) * clips.dim(1), clips.dim(2), clips.dim(3), clips.dim(4)});
}

}  // namespace

std::vector<Tensor> VideoModel::frame_maps_per_step(const Tensor& clips) {
  const std::size_t n = clips.dim(0), t = clips.dim(1);
  const FrameFeatures feats = frame_cnn(flatten_frames(clips), frame_cnn_);
  std::vector<Tensor> maps;
  std::vector<std::size_t> rows(n);
  for (std::size_t s = 0; s < t; ++s) {
    for (std::size_t i = 0; i < n; ++i) rows[i] = i * t + s;
    maps.push_back(take_rows(feats.map, rows));
  }
  return maps;
}

Tensor VideoModel::encode(const Tensor& clips, Mode mode, std::uint64_t dropout_seed, std::vector<Tensor>* states) {
  check_clips(clips, spec_);
  const std::size_t n = clips.dim(0), t = clips.dim(1);
  switch (spec_.family) {
    case Family::kRnn:
    case Family::kLstm: {
      const FrameFeatures feats = frame_cnn(flatten_frames(clips), frame_cnn_);
      Tensor seq = reshape(feats.vector, {n, t, spec_.frame_features()});
      return spec_.family == Family::kRnn ? rnn_forward(seq, rnn_) : lstm_forward(seq, lstm_);
    }
    case Family::kHierarchical:
      return hier_forward(reshape(clips, {n, 1, t, spec_.frame_size, spec_.frame_size}), hier_);
    case Family::kTimeAligned: {
      const auto maps = frame_maps_per_step(clips);
      TadOutput out = tad_forward(maps, tad_, spec_.growth, spec_.dropout, mode, dropout_seed);
      if (states) *states = out.states;
      return out.encoding;
    }
    case Family::kFrameMean: {
      // Canonical frame order (by content) so the average is computed
      // identically for any permutation of the input frames.
      const std::size_t frame_len = clips.numel() / (n * t);
      const auto data = clips.data();
      std::vector<std::size_t> order;
      order.reserve(n * t);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
        for (std::size_t s = 0; s < t; ++s) {
          const double* f = data.data() + (i * t + s) * frame_len;
          keyed.emplace_back(frame_hash(f, frame_len), i * t + s);
        }
        std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
          if (a.first != b.first) return a.first < b.first;
          const double* fa = data.data() + a.second * frame_len;
          const double* fb = data.data() + b.second * frame_len;
          return std::lexicographical_compare(fa, fa + frame_len, fb, fb + frame_len);
        });
        for (const auto& k : keyed) order.push_back(k.second);
      }
      Tensor frames = take_rows(flatten_frames(clips), order);
      const FrameFeatures feats = frame_cnn(frames, frame_cnn_);
      return mean_axis1(reshape(feats.vector, {n, t, spec_.frame_features()}));
    }
  }
  throw InvalidArgument("model: unknown family");
}

VideoModel::Output VideoModel::forward(const Tensor& clips, Mode mode, std::uint64_t dropout_seed) {
  Tensor encoding = encode(clips, mode, dropout_seed, nullptr);
  HeadOutput head = classifier_head(encoding, head_, mode);
  return {head.logits, head.embedding};
}

std::vector<Tensor> VideoModel::time_aligned_states(const Tensor& clips, Mode mode, std::uint64_t dropout_seed) {
  if (spec_.family != Family::kTimeAligned) throw InvalidArgument("time_aligned_states: model is not time-aligned");
  std::vector<Tensor> states;
  encode(clips, mode, dropout_seed, &states);
  return states;
}

std::vector<NamedTensor> VideoModel::parameters() {
  std::vector<NamedTensor> out;
  for (std::size_t b = 0; b < frame_cnn_.blocks.size(); ++b) {
    push_conv(out, "frame_cnn.block" + std::to_string(b), frame_cnn_.blocks[b]);
  }
  switch (spec_.family) {
    case Family::kRnn:
      push_linear(out, "rnn.input", rnn_.input);
      push_linear(out, "rnn.recurrent", rnn_.recurrent);
      break;
    case Family::kLstm:
      push_linear(out, "lstm.input", lstm_.input);
      push_linear(out, "lstm.recurrent", lstm_.recurrent);
      break;
    case Family::kHierarchical:
      for (std::size_t b = 0; b < hier_.blocks.size(); ++b) push_conv(out, "hier.block" + std::to_string(b), hier_.blocks[b]);
      break;
    case Family::kTimeAligned:
      for (std::size_t t = 0; t < tad_.steps.size(); ++t) {
        push_bn(out, step_name(t) + ".bn", tad_.steps[t].bn);
        push_conv(out, step_name(t) + ".conv", tad_.steps[t].conv);
      }
      break;
    case Family::kFrameMean:
      break;
  }
  if (head_.bn) push_bn(out, "head.bn", *head_.bn);
  push_linear(out, "head.fc", head_.fc);
  return out;
}

std::vector<BatchNormParams*> VideoModel::batchnorms() {
  std::vector<BatchNormParams*> out;
  for (auto& s : tad_.steps) out.push_back(&s.bn);
  if (head_.bn) out.push_back(&*head_.bn);
  return out;
}

namespace {

std::vector<std::pair<std::string, BatchNormParams*>> named_batchnorms(VideoModel& m) {
  std::vector<std::pair<std::string, BatchNormParams*>> out;
  auto& tad = m.tad_params();
  for (std::size_t t = 0; t < tad.steps.size(); ++t) out.emplace_back(step_name(t) + ".bn", &tad.steps[t].bn);
  if (m.head_params().bn) out.emplace_back("head.bn", &*m.head_params().bn);
  return out;
}

}  // namespace

std::vector<NamedTensor> VideoModel::state_tensors() {
  std::vector<NamedTensor> out = parameters();
  for (auto& [name, bn] : named_batchnorms(*this)) {
    const Shape shape{bn->channels()};
    out.push_back({name + ".running_mean", Tensor::from_data(shape, bn->running_mean)});
    out.push_back({name + ".running_var", Tensor::from_data(shape, bn->running_var)});
  }
  return out;
}

void VideoModel::load_state_tensors(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& nt : tensors) by_name[nt.name] = &nt.tensor;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw InvalidArgument("checkpoint is missing tensor '" + name + "'");
    if (it->second->shape() != shape) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second->shape()) + ", model expects " +
                       shape_str(shape));
    }
    return *it->second;
  };
  for (auto& nt : parameters()) {
    const Tensor& src = fetch(nt.name, nt.tensor.shape());
    std::copy(src.data().begin(), src.data().end(), nt.tensor.data().begin());
  }
  for (auto& [name, bn] : named_batchnorms(*this)) {
    const Shape shape{bn->channels()};
    const auto mean = fetch(name + ".running_mean", shape).data();
    const auto var = fetch(name + ".running_var", shape).data();
    bn->running_mean.assign(mean.begin(), mean.end());
    bn->running_var.assign(var.begin(), var.end());
    bn->stats_initialized = true;
  }
  if (by_name.size() != state_tensors().size()) {
    throw InvalidArgument("checkpoint holds " + std::to_string(by_name.size()) + " tensors, model has " +
                          std::to_string(state_tensors().size()));
  }
}

std::size_t VideoModel::num_params() {
  std::size_t n = 0;
  for (const auto& nt : parameters()) n += nt.tensor.numel();
  return n;
}

}  // namespace chronoscope
