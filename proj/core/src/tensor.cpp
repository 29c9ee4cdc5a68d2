#include "chronoscope/tensor.hpp"

#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "chronoscope/errors.hpp"

namespace chronoscope {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_tape_serial{1};

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must be non-empty");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be >= 1, got " + shape_str(shape));
  }
}

std::size_t default_fan_in(const Shape& shape) {
  if (shape.size() == 1) return shape[0];
  return std::accumulate(shape.begin() + 1, shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void TensorStorage::accumulate_grad(std::span<const double> g) {
  auto& buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

std::vector<double>& TensorStorage::grad_buffer() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::create(const Shape& shape, const Init& how) {
  check_shape(shape);
  auto s = std::make_shared<TensorStorage>();
  s->shape = shape;
  const std::size_t n = shape_numel(shape);
  if (const auto* full = std::get_if<init::Full>(&how)) {
    s->data.assign(n, full->value);
  } else if (const auto* normal = std::get_if<init::Normal>(&how)) {
    const std::size_t fan_in = normal->fan_in ? normal->fan_in : default_fan_in(shape);
    const double gain = normal->fan_mode == init::FanMode::kRelu ? 2.0 : 1.0;
    const double stddev = std::sqrt(gain / static_cast<double>(fan_in));
    std::mt19937_64 rng(normal->seed);
    std::normal_distribution<double> dist(0.0, stddev);
    s->data.resize(n);
    for (auto& v : s->data) v = dist(rng);
  } else {
    s->data.assign(n, 0.0);
  }
  return Tensor(std::move(s));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto s = std::make_shared<TensorStorage>();
  s->shape = shape;
  s->data = std::move(data);
  return Tensor(std::move(s));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

const Shape& Tensor::shape() const { return storage_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return storage_->shape[axis];
}

std::size_t Tensor::numel() const { return storage_->data.size(); }

std::span<double> Tensor::data() { return storage_->data; }
std::span<const double> Tensor::data() const { return storage_->data; }

std::span<const double> Tensor::grad() const { return storage_->grad; }
bool Tensor::has_grad() const { return !storage_->grad.empty(); }
void Tensor::zero_grad() { storage_->grad.clear(); }

bool Tensor::requires_grad() const { return storage_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  storage_->requires_grad = on;
  return *this;
}

std::optional<std::size_t> Tensor::node_id() const {
  const Tape* tape = active_tape();
  if (!tape) return std::nullopt;
  return tape->node_of(*this);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return storage_->data[0];
}

Tensor Tensor::clone() const {
  auto s = std::make_shared<TensorStorage>();
  s->shape = storage_->shape;
  s->data = storage_->data;
  s->requires_grad = storage_->requires_grad;
  return Tensor(std::move(s));
}

// --- Tape ---------------------------------------------------------------------

Tape::Tape() : serial_(g_tape_serial.fetch_add(1)) {}

std::optional<std::size_t> Tape::node_of(const Tensor& t) const {
  const auto& s = t.storage();
  if (s && s->node && s->tape_serial == serial_) return s->node;
  return std::nullopt;
}

bool Tape::tracks(const Tensor& t) const {
  if (!t.defined()) return false;
  return t.requires_grad() || node_of(t).has_value();
}

std::size_t Tape::record(std::string_view op, std::initializer_list<const Tensor*> inputs,
                         const Tensor& output, std::function<void()> backward) {
  std::vector<std::size_t> ids;
  for (const Tensor* in : inputs) {
    if (in == nullptr) continue;
    if (auto id = node_of(*in)) ids.push_back(*id);
  }
  const std::size_t id = nodes_.size();
  nodes_.push_back(Node{op, std::move(ids), output.storage(), std::move(backward)});
  output.storage()->node = id;
  output.storage()->tape_serial = serial_;
  return id;
}

std::size_t Tape::record(std::string_view op, std::span<const Tensor> inputs, const Tensor& output,
                         std::function<void()> backward) {
  std::vector<std::size_t> ids;
  for (const Tensor& in : inputs) {
    if (auto id = node_of(in)) ids.push_back(*id);
  }
  const std::size_t id = nodes_.size();
  nodes_.push_back(Node{op, std::move(ids), output.storage(), std::move(backward)});
  output.storage()->node = id;
  output.storage()->tape_serial = serial_;
  return id;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw InvalidArgument("backward() needs a scalar loss, got shape " +
                          (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  const auto root = node_of(loss);
  if (!root) {
    if (loss.requires_grad()) {
      loss.storage()->accumulate_grad(std::vector<double>{1.0});
      clear();
      return;
    }
    throw InvalidArgument("backward(): loss was not produced on this tape");
  }
  loss.storage()->grad_buffer()[0] += 1.0;
  for (std::size_t i = *root + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.output->grad.empty()) continue;  // no gradient reached this node
    node.backward();
  }
  clear();
}

void Tape::clear() {
  for (auto& node : nodes_) {
    // Intermediate grads are meaningless once the tape is gone.
    if (!node.output->requires_grad) node.output->grad.clear();
    node.output->node.reset();
  }
  nodes_.clear();
  serial_ = g_tape_serial.fetch_add(1);
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoTapeScope::NoTapeScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoTapeScope::~NoTapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (!tape) throw InvalidArgument("backward(): no active tape");
  tape->backward(loss);
}

}  // namespace chronoscope
