#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "chronoscope/tensor.hpp"

namespace chronoscope {

enum class Mode { kTrain, kEval };

struct LinearParams {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out], may be undefined
};

struct ConvParams {
  Tensor weight;  // [Cout, Cin, kh, kw] or [Cout, Cin, kt, kh, kw]
  Tensor bias;    // [Cout], may be undefined
};

struct BatchNormParams {
  static constexpr double kEpsilon = 1e-5;

  Tensor scale;  // [C]
  Tensor shift;  // [C]
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  // False until the first train-mode pass has populated the running stats.
  bool stats_initialized = false;

  static BatchNormParams create(std::size_t channels);
  std::size_t channels() const { return running_mean.size(); }
};

enum class Activation { kRelu, kSigmoid, kTanh };

// --- dense algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);                 // [m,k] x [k,n]
Tensor linear(const Tensor& x, const LinearParams& p);           // x[N,in] W^T + b
Tensor add(const Tensor& a, const Tensor& b);                    // same shape
Tensor mul(const Tensor& a, const Tensor& b);                    // elementwise
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);                                     // -> scalar
Tensor weighted_sum(const Tensor& a, std::span<const double> w); // sum(a * w) -> scalar

// --- layout ----------------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& shape);
Tensor flatten(const Tensor& a);  // [N, ...] -> [N, prod(...)]
// Gathers slices along axis 0 (repeats allowed).
Tensor take_rows(const Tensor& a, std::span<const std::size_t> rows);
// Columns [begin, end) of a rank-2 tensor.
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
// Concatenates along axis 1. All other dims must match.
Tensor concat_channels(std::span<const Tensor> xs);
// [N, T, ...] -> [N, ...] mean over axis 1.
Tensor mean_axis1(const Tensor& a);

// --- convolution / pooling -------------------------------------------------

// Cross-correlation. Square stride and zero padding.
Tensor conv2d(const Tensor& x, const ConvParams& p, std::size_t stride = 1, std::size_t padding = 0);
Tensor conv3d(const Tensor& x, const ConvParams& p, std::size_t stride = 1, std::size_t padding = 0);

// Non-overlapping windows unless stride says otherwise. Ties route the
// gradient to the first maximum in row-major scan order.
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);
Tensor max_pool3d(const Tensor& x, std::array<std::size_t, 3> kernel, std::array<std::size_t, 3> stride);
// [N, C, ...] -> [N, C]
Tensor global_avg_pool(const Tensor& x);

// --- normalisation / nonlinearity / regularisation ---------------------------

// Per-channel statistics over every axis except 1; accepts rank >= 2.
Tensor batchnorm(const Tensor& x, BatchNormParams& p, Mode mode);
// Rank-4 [N, C, H, W] entry point.
Tensor batchnorm2d(const Tensor& x, BatchNormParams& p, Mode mode);
Tensor activation(const Tensor& x, Activation kind);
inline Tensor relu(const Tensor& x) { return activation(x, Activation::kRelu); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::kSigmoid); }
inline Tensor tanh(const Tensor& x) { return activation(x, Activation::kTanh); }

// Inverted dropout; the mask is a pure function of (seed, element index).
Tensor dropout(const Tensor& x, double rate, Mode mode, std::uint64_t seed);

// --- losses ----------------------------------------------------------------

// Mean over rows of -log softmax(logits)[target].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets);

// Row-wise softmax without tape bookkeeping (used for reporting).
std::vector<double> softmax_rows(const Tensor& logits);

namespace testing_hooks {
// Corrupts the relu derivative so verification tooling can be shown to fail.
void set_relu_grad_fault(bool enabled);
bool relu_grad_fault();
}  // namespace testing_hooks

}  // namespace chronoscope
