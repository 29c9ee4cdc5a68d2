#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chronoscope/ops.hpp"
#include "chronoscope/tensor.hpp"

namespace chronoscope {

// Encoder families. kRnn/kLstm form the sequential family (one parameter set
// shared across time), kHierarchical stacks 3-D convolutions, kTimeAligned
// gives every time step its own densely connected layer. kFrameMean is the
// order-blind ablation: a head on frame features averaged over time.
enum class Family { kRnn, kLstm, kHierarchical, kTimeAligned, kFrameMean };

std::string_view family_name(Family f);
// Accepts "rnn", "lstm", "hier", "tad", "mean".
Family parse_family(std::string_view name);
bool is_sequential(Family f);

struct EncoderSpec {
  Family family = Family::kTimeAligned;
  std::size_t time_steps = 16;  // T
  std::size_t hidden = 32;      // sequential state width
  std::size_t growth = 12;      // K, feature maps per time-aligned step
  std::vector<std::size_t> base_channels{16, 32, 32};
  std::size_t frame_size = 16;  // square frames
  std::size_t in_channels = 1;
  double dropout = 0.1;
  std::size_t num_classes = 2;

  void validate() const;
  // Spatial side of the frame CNN map (frame_size halved per pooled block).
  std::size_t map_size() const;
  std::size_t frame_features() const { return base_channels.back(); }
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// --- parameter groups ------------------------------------------------------------

struct FrameCnnParams {
  std::vector<ConvParams> blocks;  // 3x3, relu, 2x2 max-pool on all but the last
};

struct RnnParams {
  LinearParams input;      // W_h, b_h
  LinearParams recurrent;  // U_h, no bias
};

// Gate rows are ordered input, forget, candidate, output.
struct LstmParams {
  LinearParams input;      // [4H, d] with bias
  LinearParams recurrent;  // [4H, H], no bias
};

struct HierParams {
  std::vector<ConvParams> blocks;  // 3x3x3 conv3d, relu, 2x2x2 max-pool on all but the last
};

struct TadStepParams {
  BatchNormParams bn;
  ConvParams conv;
};

struct TadParams {
  std::vector<TadStepParams> steps;  // one per time step, never shared
};

struct HeadParams {
  std::optional<BatchNormParams> bn;  // present for map-shaped encodings
  LinearParams fc;
};

// --- operations ---------------------------------------------------------------

struct FrameFeatures {
  Tensor map;     // [M, F, h, w]
  Tensor vector;  // [M, F] global average of map
};

FrameFeatures frame_cnn(const Tensor& frames, const FrameCnnParams& p);

Tensor rnn_step(const Tensor& x_t, const Tensor& h_prev, const RnnParams& p);

struct LstmState {
  Tensor h;
  Tensor c;
};
LstmState lstm_cell(const Tensor& x_t, const LstmState& prev, const LstmParams& p);
// frames [N, T, d] -> h_T [N, H]
Tensor lstm_forward(const Tensor& frames, const LstmParams& p);
// frames [N, T, d] -> h_T [N, H]
Tensor rnn_forward(const Tensor& frames, const RnnParams& p);

// clip [N, C, T, H, W] -> [N, C_last]
Tensor hier_forward(const Tensor& clip, const HierParams& p);

// inputs = [h_1, ..., h_{t-1}, x_t]; returns h_t with exactly K channels.
Tensor tad_step(std::span<const Tensor> inputs, TadStepParams& p, std::size_t growth, double dropout_rate, Mode mode,
                std::uint64_t dropout_seed);

struct TadOutput {
  Tensor encoding;             // [N, K*T, h, w]
  std::vector<Tensor> states;  // h_1 .. h_T
};
// frame_maps: per-step frame CNN maps x_1..x_T, each [N, F, h, w].
TadOutput tad_forward(std::span<const Tensor> frame_maps, TadParams& p, std::size_t growth, double dropout_rate,
                      Mode mode, std::uint64_t dropout_seed);

struct HeadOutput {
  Tensor logits;     // [N, classes]
  Tensor embedding;  // [N, fc input width]
};
// Map encodings: batchnorm, relu, 2x2 max-pool, flatten, fc. Vectors: fc only.
HeadOutput classifier_head(const Tensor& encoding, HeadParams& p, Mode mode);

struct ParamCount {
  std::size_t frame_cnn = 0;
  std::size_t temporal = 0;  // recurrent cell, conv3d stack, or time-aligned steps
  std::size_t head = 0;
  std::size_t total() const { return frame_cnn + temporal + head; }
};

// Closed-form learnable-scalar count for a spec.
ParamCount count_params(const EncoderSpec& spec);

// --- model ------------------------------------------------------------------------

// Frame CNN (where the family uses one) + temporal encoder + classifier head.
class VideoModel {
 public:
  VideoModel(EncoderSpec spec, std::uint64_t seed);

  const EncoderSpec& spec() const { return spec_; }

  struct Output {
    Tensor logits;
    Tensor embedding;
  };
  // clips: [N, T, C, H, W]
  Output forward(const Tensor& clips, Mode mode, std::uint64_t dropout_seed = 0);
  Tensor logits(const Tensor& clips, Mode mode, std::uint64_t dropout_seed = 0) {
    return forward(clips, mode, dropout_seed).logits;
  }

  // Per-time-step states of the time-aligned encoder (h_1..h_T).
  std::vector<Tensor> time_aligned_states(const Tensor& clips, Mode mode, std::uint64_t dropout_seed = 0);

  // Learnable tensors, in a fixed order with stable names.
  std::vector<NamedTensor> parameters();
  // Learnable tensors plus batch-norm running statistics (checkpoint payload).
  std::vector<NamedTensor> state_tensors();
  void load_state_tensors(const std::vector<NamedTensor>& tensors);
  std::vector<BatchNormParams*> batchnorms();

  std::size_t num_params();

  FrameCnnParams& frame_cnn_params() { return frame_cnn_; }
  RnnParams& rnn_params() { return rnn_; }
  LstmParams& lstm_params() { return lstm_; }
  HierParams& hier_params() { return hier_; }
  TadParams& tad_params() { return tad_; }
  HeadParams& head_params() { return head_; }

  // Width of the vector fed to the final fully connected layer.
  std::size_t embedding_width() const;

 private:
  Tensor encode(const Tensor& clips, Mode mode, std::uint64_t dropout_seed, std::vector<Tensor>* states);
  std::vector<Tensor> frame_maps_per_step(const Tensor& clips);

  EncoderSpec spec_;
  FrameCnnParams frame_cnn_;
  RnnParams rnn_;
  LstmParams lstm_;
  HierParams hier_;
  TadParams tad_;
  HeadParams head_;
};

// --- checkpoints --------------------------------------------------------------------

using ConfigDigest = std::array<std::uint8_t, 32>;

// "VTCK1", 32-byte config digest, then per tensor (little-endian):
// u32 name length, name bytes, u32 rank, u32 dims[rank], f32 payload.
void write_checkpoint(const std::filesystem::path& path, const ConfigDigest& digest,
                      const std::vector<NamedTensor>& tensors);

struct Checkpoint {
  ConfigDigest digest{};
  std::vector<NamedTensor> tensors;
};
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace chronoscope
