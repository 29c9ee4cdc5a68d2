#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace chronoscope {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace init {

struct Zeros {};
struct Full {
  double value = 0.0;
};

// Scaling of the normal initializer. kRelu uses std = sqrt(2 / fan_in) for
// layers followed by a rectifier, kLinear uses sqrt(1 / fan_in).
enum class FanMode { kRelu, kLinear };

struct Normal {
  std::uint64_t seed = 0;
  FanMode fan_mode = FanMode::kLinear;
  // 0 means "derive from the shape": product of all dims after the first
  // (or the single dim of a 1-D tensor).
  std::size_t fan_in = 0;
};

}  // namespace init

using Init = std::variant<init::Zeros, init::Full, init::Normal>;

struct TensorStorage;

// Handle to a dense row-major float64 array. Copies alias the same storage,
// which is what lets the tape route gradients back to parameters; use
// clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor create(const Shape& shape, const Init& how = init::Zeros{});
  static Tensor from_data(const Shape& shape, std::vector<double> data);
  static Tensor scalar(double value);

  bool defined() const noexcept { return static_cast<bool>(storage_); }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;

  // Empty span until something has been accumulated.
  std::span<const double> grad() const;
  bool has_grad() const;
  void zero_grad();

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  // Node id on the active tape, if this tensor was produced by a recorded op.
  std::optional<std::size_t> node_id() const;

  double item() const;
  Tensor clone() const;  // detached deep copy, grad dropped

  const std::shared_ptr<TensorStorage>& storage() const { return storage_; }
  explicit Tensor(std::shared_ptr<TensorStorage> storage) : storage_(std::move(storage)) {}

 private:
  std::shared_ptr<TensorStorage> storage_;
};

struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  // Position on the tape identified by tape_serial.
  std::optional<std::size_t> node;
  std::uint64_t tape_serial = 0;

  void accumulate_grad(std::span<const double> g);
  std::vector<double>& grad_buffer();
};

// Append-only record of differentiable ops. Insertion order is a topological
// order, so backward is a single reverse sweep.
class Tape {
 public:
  struct Node {
    std::string_view op;
    std::vector<std::size_t> inputs;  // node ids of tracked non-leaf inputs
    std::shared_ptr<TensorStorage> output;
    std::function<void()> backward;
  };

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // True when `t` is a leaf that wants a gradient or was produced on this tape.
  bool tracks(const Tensor& t) const;
  std::optional<std::size_t> node_of(const Tensor& t) const;

  // Registers `output` as produced by `op` from `inputs`; returns its node id.
  std::size_t record(std::string_view op, std::initializer_list<const Tensor*> inputs,
                     const Tensor& output, std::function<void()> backward);
  std::size_t record(std::string_view op, std::span<const Tensor> inputs, const Tensor& output,
                     std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1, sweeps the nodes in reverse, then clears.
  void backward(const Tensor& loss);
  void clear();

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::uint64_t serial() const { return serial_; }

 private:
  std::vector<Node> nodes_;
  std::uint64_t serial_;
};

// Installs a tape as the recording target for the current thread. Ops run
// with no active tape are not recorded (inference mode).
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording for the current thread (finite differences, inference).
class NoTapeScope {
 public:
  NoTapeScope();
  ~NoTapeScope();
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Convenience: backward on the active tape.
void backward(const Tensor& loss);

}  // namespace chronoscope
