#include "chronoscope/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "chronoscope/errors.hpp"
#include "gemm.hpp"

namespace chronoscope {

namespace testing_hooks {
namespace {
std::atomic<bool> g_relu_fault{false};
}
void set_relu_grad_fault(bool enabled) { g_relu_fault = enabled; }
bool relu_grad_fault() { return g_relu_fault; }
}  // namespace testing_hooks

namespace {

using Storage = std::shared_ptr<TensorStorage>;

// Tape + per-input tracking flags for the op being built.
struct Recorder {
  Tape* tape = active_tape();

  bool tracks(const Tensor& t) const { return tape && tape->tracks(t); }
};

void debug_check_finite([[maybe_unused]] const Tensor& out, [[maybe_unused]] std::string_view op) {
#ifndef NDEBUG
  for (double v : out.data()) {
    if (!std::isfinite(v)) {
      throw InvalidArgument(std::string(op) + " produced a non-finite value");
    }
  }
#endif
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

Tensor output_like(const Shape& shape) { return Tensor::create(shape); }

void require_rank(const Tensor& t, std::size_t rank, std::string_view op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// --- generic 3-D (depth, height, width) convolution geometry ---------------

struct Geometry {
  std::size_t n, c, d, h, w;        // input
  std::size_t kd, kh, kw;           // kernel
  std::size_t sd, sh, sw;           // stride
  std::size_t pd, ph, pw;           // padding
  std::size_t od, oh, ow;           // output

  std::size_t out_spatial() const { return od * oh * ow; }
  std::size_t col_rows() const { return c * kd * kh * kw; }
  std::size_t col_cols() const { return n * out_spatial(); }
};

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t s, std::size_t p, bool exact,
                     std::string_view op) {
  if (s == 0) throw ShapeError(std::string(op) + ": stride must be >= 1");
  if (in + 2 * p < k) {
    throw ShapeError(std::string(op) + ": window " + std::to_string(k) + " larger than padded input " +
                     std::to_string(in + 2 * p));
  }
  const std::size_t span = in + 2 * p - k;
  if (exact && span % s != 0) {
    throw ShapeError(std::string(op) + ": non-integral output size (" + std::to_string(in) + "+2*" +
                     std::to_string(p) + "-" + std::to_string(k) + ")/" + std::to_string(s));
  }
  return span / s + 1;
}

void im2col(const Geometry& g, const double* x, double* col) {
  const std::size_t cols = g.col_cols();
  const std::size_t osp = g.out_spatial();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t a = 0; a < g.kd; ++a) {
      for (std::size_t b = 0; b < g.kh; ++b) {
        for (std::size_t e = 0; e < g.kw; ++e) {
          const std::size_t row = ((c * g.kd + a) * g.kh + b) * g.kw + e;
          double* dst = col + row * cols;
          for (std::size_t n = 0; n < g.n; ++n) {
            const double* src = x + (n * g.c + c) * g.d * g.h * g.w;
            double* out = dst + n * osp;
            for (std::size_t od = 0; od < g.od; ++od) {
              const long id = static_cast<long>(od * g.sd + a) - static_cast<long>(g.pd);
              for (std::size_t oh = 0; oh < g.oh; ++oh) {
                const long ih = static_cast<long>(oh * g.sh + b) - static_cast<long>(g.ph);
                double* o = out + (od * g.oh + oh) * g.ow;
                if (id < 0 || id >= static_cast<long>(g.d) || ih < 0 || ih >= static_cast<long>(g.h)) {
                  std::fill(o, o + g.ow, 0.0);
                  continue;
                }
                const double* s = src + (static_cast<std::size_t>(id) * g.h + static_cast<std::size_t>(ih)) * g.w;
                for (std::size_t ow = 0; ow < g.ow; ++ow) {
                  const long iw = static_cast<long>(ow * g.sw + e) - static_cast<long>(g.pw);
                  o[ow] = (iw < 0 || iw >= static_cast<long>(g.w)) ? 0.0 : s[iw];
                }
              }
            }
          }
        }
      }
    }
  }
}

void col2im(const Geometry& g, const double* col, double* dx) {
  const std::size_t cols = g.col_cols();
  const std::size_t osp = g.out_spatial();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t a = 0; a < g.kd; ++a) {
      for (std::size_t b = 0; b < g.kh; ++b) {
        for (std::size_t e = 0; e < g.kw; ++e) {
          const std::size_t row = ((c * g.kd + a) * g.kh + b) * g.kw + e;
          const double* src_row = col + row * cols;
          for (std::size_t n = 0; n < g.n; ++n) {
            double* dst = dx + (n * g.c + c) * g.d * g.h * g.w;
            const double* in = src_row + n * osp;
            for (std::size_t od = 0; od < g.od; ++od) {
              const long id = static_cast<long>(od * g.sd + a) - static_cast<long>(g.pd);
              if (id < 0 || id >= static_cast<long>(g.d)) continue;
              for (std::size_t oh = 0; oh < g.oh; ++oh) {
                const long ih = static_cast<long>(oh * g.sh + b) - static_cast<long>(g.ph);
                if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
                double* d = dst + (static_cast<std::size_t>(id) * g.h + static_cast<std::size_t>(ih)) * g.w;
                const double* i = in + (od * g.oh + oh) * g.ow;
                for (std::size_t ow = 0; ow < g.ow; ++ow) {
                  const long iw = static_cast<long>(ow * g.sw + e) - static_cast<long>(g.pw);
                  if (iw >= 0 && iw < static_cast<long>(g.w)) d[iw] += i[ow];
                }
              }
            }
          }
        }
      }
    }
  }
}

// x viewed as [N, C, D, H, W]; weight as [O, C, KD, KH, KW].
Tensor conv_impl(std::string_view op, const Tensor& x, const ConvParams& p, Geometry g, const Shape& out_shape) {
  const std::size_t O = p.weight.dim(0);
  const std::size_t rows = g.col_rows();
  const std::size_t cols = g.col_cols();
  const std::size_t osp = g.out_spatial();

  // Scratch buffers are fully overwritten, so they skip zero-initialisation.
  std::shared_ptr<double[]> col(new double[rows * cols]);
  im2col(g, x.data().data(), col.get());

  std::unique_ptr<double[]> tmp(new double[O * cols]);
  detail::gemm(false, false, O, cols, rows, p.weight.data().data(), col.get(), tmp.get(), false);

  Tensor out = output_like(out_shape);
  auto od = out.data();
  const bool has_bias = p.bias.defined();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < O; ++o) {
      const double bias = has_bias ? p.bias.data()[o] : 0.0;
      const double* src = tmp.get() + o * cols + n * osp;
      double* dst = od.data() + (n * O + o) * osp;
      for (std::size_t s = 0; s < osp; ++s) dst[s] = src[s] + bias;
    }
  }
  debug_check_finite(out, op);

  Recorder r;
  const bool tx = r.tracks(x), tw = r.tracks(p.weight), tb = has_bias && r.tracks(p.bias);
  if (tx || tw || tb) {
    Storage sx = x.storage(), sw = p.weight.storage(), so = out.storage();
    Storage sb = has_bias ? p.bias.storage() : nullptr;
    r.tape->record(op, {&x, &p.weight, has_bias ? &p.bias : nullptr}, out,
                   [=, col = std::move(col)] {
                     const auto& dy = so->grad;
                     std::unique_ptr<double[]> dtmp(new double[O * cols]);
                     for (std::size_t n = 0; n < g.n; ++n) {
                       for (std::size_t o = 0; o < O; ++o) {
                         const double* src = dy.data() + (n * O + o) * osp;
                         std::copy(src, src + osp, dtmp.get() + o * cols + n * osp);
                       }
                     }
                     if (tb) {
                       auto& db = sb->grad_buffer();
                       for (std::size_t o = 0; o < O; ++o) {
                         const double* row = dtmp.get() + o * cols;
                         db[o] += std::accumulate(row, row + cols, 0.0);
                       }
                     }
                     if (tw) {
                       detail::gemm(false, true, O, rows, cols, dtmp.get(), col.get(), sw->grad_buffer().data(), true);
                     }
                     if (tx) {
                       std::unique_ptr<double[]> dcol(new double[rows * cols]);
                       detail::gemm(true, false, rows, cols, O, sw->data.data(), dtmp.get(), dcol.get(), false);
                       col2im(g, dcol.get(), sx->grad_buffer().data());
                     }
                   });
  }
  return out;
}

void check_conv_params(const Tensor& x, const ConvParams& p, std::size_t weight_rank, std::string_view op) {
  require_rank(p.weight, weight_rank, op);
  if (p.weight.dim(1) != x.dim(1)) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(x.dim(1)) +
                     " channels but weight expects " + std::to_string(p.weight.dim(1)));
  }
  if (p.bias.defined() && (p.bias.rank() != 1 || p.bias.dim(0) != p.weight.dim(0))) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_str(p.bias.shape()) +
                     " does not match output channels " + std::to_string(p.weight.dim(0)));
  }
}

// Max pooling over [N, C, D, H, W].
Tensor pool_impl(std::string_view op, const Tensor& x, const Geometry& g, const Shape& out_shape) {
  Tensor out = output_like(out_shape);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  const auto xd = x.data();
  auto od = out.data();
  const std::size_t in_plane = g.d * g.h * g.w;
  std::size_t idx = 0;
  for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
    const double* src = xd.data() + nc * in_plane;
    for (std::size_t a = 0; a < g.od; ++a) {
      for (std::size_t b = 0; b < g.oh; ++b) {
        for (std::size_t e = 0; e < g.ow; ++e, ++idx) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_at = 0;
          bool first = true;
          for (std::size_t i = 0; i < g.kd; ++i) {
            for (std::size_t j = 0; j < g.kh; ++j) {
              for (std::size_t k = 0; k < g.kw; ++k) {
                const std::size_t at = ((a * g.sd + i) * g.h + (b * g.sh + j)) * g.w + (e * g.sw + k);
                // strict '>' keeps the first maximum in row-major order
                if (first || src[at] > best) {
                  best = src[at];
                  best_at = at;
                  first = false;
                }
              }
            }
          }
          od[idx] = best;
          (*argmax)[idx] = nc * in_plane + best_at;
        }
      }
    }
  }
  Recorder r;
  if (r.tracks(x)) {
    Storage sx = x.storage(), so = out.storage();
    r.tape->record(op, {&x}, out, [sx, so, argmax] {
      auto& dx = sx->grad_buffer();
      for (std::size_t i = 0; i < argmax->size(); ++i) dx[(*argmax)[i]] += so->grad[i];
    });
  }
  return out;
}

}  // namespace

// --- BatchNormParams ------------------------------------------------------------

BatchNormParams BatchNormParams::create(std::size_t channels) {
  BatchNormParams p;
  p.scale = Tensor::create({channels}, init::Full{1.0});
  p.shift = Tensor::create({channels}, init::Zeros{});
  p.running_mean.assign(channels, 0.0);
  p.running_var.assign(channels, 1.0);
  return p;
}

// --- dense algebra ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out = output_like({m, n});
  detail::gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data().data(), false);
  debug_check_finite(out, "matmul");
  Recorder r;
  const bool ta = r.tracks(a), tb = r.tracks(b);
  if (ta || tb) {
    Storage sa = a.storage(), sb = b.storage(), so = out.storage();
    r.tape->record("matmul", {&a, &b}, out, [=] {
      if (ta) detail::gemm(false, true, m, k, n, so->grad.data(), sb->data.data(), sa->grad_buffer().data(), true);
      if (tb) detail::gemm(true, false, k, n, m, sa->data.data(), so->grad.data(), sb->grad_buffer().data(), true);
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const LinearParams& p) {
  require_rank(x, 2, "linear");
  require_rank(p.weight, 2, "linear");
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = p.weight.dim(0);
  if (p.weight.dim(1) != in) {
    throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " + shape_str(p.weight.shape()));
  }
  const bool has_bias = p.bias.defined();
  if (has_bias && (p.bias.rank() != 1 || p.bias.dim(0) != out_dim)) {
    throw ShapeError("linear: bias shape " + shape_str(p.bias.shape()));
  }
  Tensor out = output_like({n, out_dim});
  detail::gemm(false, true, n, out_dim, in, x.data().data(), p.weight.data().data(), out.data().data(), false);
  if (has_bias) {
    auto od = out.data();
    const auto bd = p.bias.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < out_dim; ++j) od[i * out_dim + j] += bd[j];
    }
  }
  debug_check_finite(out, "linear");
  Recorder r;
  const bool tx = r.tracks(x), tw = r.tracks(p.weight), tb = has_bias && r.tracks(p.bias);
  if (tx || tw || tb) {
    Storage sx = x.storage(), sw = p.weight.storage(), so = out.storage();
    Storage sb = has_bias ? p.bias.storage() : nullptr;
    r.tape->record("linear", {&x, &p.weight, has_bias ? &p.bias : nullptr}, out, [=] {
      const double* dy = so->grad.data();
      if (tx) detail::gemm(false, false, n, in, out_dim, dy, sw->data.data(), sx->grad_buffer().data(), true);
      if (tw) detail::gemm(true, false, out_dim, in, n, dy, sx->data.data(), sw->grad_buffer().data(), true);
      if (tb) {
        auto& db = sb->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < out_dim; ++j) db[j] += dy[i * out_dim + j];
        }
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = output_like(a.shape());
  auto od = out.data();
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
  Recorder r;
  const bool ta = r.tracks(a), tb = r.tracks(b);
  if (ta || tb) {
    Storage sa = a.storage(), sb = b.storage(), so = out.storage();
    r.tape->record("add", {&a, &b}, out, [=] {
      if (ta) sa->accumulate_grad(so->grad);
      if (tb) sb->accumulate_grad(so->grad);
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = output_like(a.shape());
  auto od = out.data();
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  Recorder r;
  const bool ta = r.tracks(a), tb = r.tracks(b);
  if (ta || tb) {
    Storage sa = a.storage(), sb = b.storage(), so = out.storage();
    r.tape->record("mul", {&a, &b}, out, [=] {
      const auto& dy = so->grad;
      if (ta) {
        auto& da = sa->grad_buffer();
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * sb->data[i];
      }
      if (tb) {
        auto& db = sb->grad_buffer();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * sa->data[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = output_like(a.shape());
  auto od = out.data();
  const auto ad = a.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * factor;
  Recorder r;
  if (r.tracks(a)) {
    Storage sa = a.storage(), so = out.storage();
    r.tape->record("scale", {&a}, out, [=] {
      auto& da = sa->grad_buffer();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += so->grad[i] * factor;
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  const auto ad = a.data();
  Tensor out = Tensor::scalar(std::accumulate(ad.begin(), ad.end(), 0.0));
  Recorder r;
  if (r.tracks(a)) {
    Storage sa = a.storage(), so = out.storage();
    r.tape->record("sum", {&a}, out, [=] {
      auto& da = sa->grad_buffer();
      const double g = so->grad[0];
      for (double& v : da) v += g;
    });
  }
  return out;
}

Tensor weighted_sum(const Tensor& a, std::span<const double> w) {
  if (w.size() != a.numel()) {
    throw ShapeError("weighted_sum: " + std::to_string(w.size()) + " weights for " + shape_str(a.shape()));
  }
  const auto ad = a.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < ad.size(); ++i) acc += ad[i] * w[i];
  Tensor out = Tensor::scalar(acc);
  Recorder r;
  if (r.tracks(a)) {
    Storage sa = a.storage(), so = out.storage();
    std::vector<double> weights(w.begin(), w.end());
    r.tape->record("weighted_sum", {&a}, out, [=, weights = std::move(weights)] {
      auto& da = sa->grad_buffer();
      const double g = so->grad[0];
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g * weights[i];
    });
  }
  return out;
}

// --- layout -------------------------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor out = Tensor::from_data(shape, std::vector<double>(a.data().begin(), a.data().end()));
  Recorder r;
  if (r.tracks(a)) {
    Storage sa = a.storage(), so = out.storage();
    r.tape->record("reshape", {&a}, out, [=] { sa->accumulate_grad(so->grad); });
  }
  return out;
}

Tensor flatten(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("flatten: need rank >= 2, got " + shape_str(a.shape()));
  return reshape(a, {a.dim(0), a.numel() / a.dim(0)});
}

Tensor take_rows(const Tensor& a, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ShapeError("take_rows: empty row list");
  const std::size_t stride = a.numel() / a.dim(0);
  for (std::size_t r : rows) {
    if (r >= a.dim(0)) throw ShapeError("take_rows: row " + std::to_string(r) + " out of range for " + shape_str(a.shape()));
  }
  Shape shape = a.shape();
  shape[0] = rows.size();
  Tensor out = output_like(shape);
  auto od = out.data();
  const auto ad = a.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(ad.data() + rows[i] * stride, stride, od.data() + i * stride);
  }
  Recorder rec;
  if (rec.tracks(a)) {
    Storage sa = a.storage(), so = out.storage();
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    rec.tape->record("take_rows", {&a}, out, [=, idx = std::move(idx)] {
      auto& da = sa->grad_buffer();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* g = so->grad.data() + i * stride;
        double* d = da.data() + idx[i] * stride;
        for (std::size_t j = 0; j < stride; ++j) d[j] += g[j];
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_cols");
  const std::size_t n = a.dim(0), w = a.dim(1);
  if (begin >= end || end > w) {
    throw ShapeError("slice_cols: bad range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     shape_str(a.shape()));
  }
  const std::size_t width = end - begin;
  Tensor out = output_like({n, width});
  auto od = out.data();
  const auto ad = a.data();
  for (std::size_t i = 0; i < n; ++i) std::copy_n(ad.data() + i * w + begin, width, od.data() + i * width);
  Recorder r;
  if (r.tracks(a)) {
    Storage sa = a.storage(), so = out.storage();
    r.tape->record("slice_cols", {&a}, out, [=] {
      auto& da = sa->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < width; ++j) da[i * w + begin + j] += so->grad[i * width + j];
      }
    });
  }
  return out;
}

Tensor concat_channels(std::span<const Tensor> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Tensor& first = xs.front();
  if (first.rank() < 2) throw ShapeError("concat_channels: need rank >= 2, got " + shape_str(first.shape()));
  const std::size_t n = first.dim(0);
  const std::size_t inner = first.numel() / (n * first.dim(1));
  std::size_t total_c = 0;
  std::vector<std::size_t> offsets;
  for (const Tensor& t : xs) {
    bool ok = t.rank() == first.rank() && t.dim(0) == n;
    for (std::size_t ax = 2; ok && ax < t.rank(); ++ax) ok = t.dim(ax) == first.dim(ax);
    if (!ok) {
      throw ShapeError("concat_channels: " + shape_str(t.shape()) + " incompatible with " + shape_str(first.shape()));
    }
    offsets.push_back(total_c);
    total_c += t.dim(1);
  }
  Shape shape = first.shape();
  shape[1] = total_c;
  Tensor out = output_like(shape);
  auto od = out.data();
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto src = xs[k].data();
    const std::size_t block = xs[k].dim(1) * inner;
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(src.data() + i * block, block, od.data() + (i * total_c + offsets[k]) * inner);
    }
  }
  Recorder r;
  std::vector<std::size_t> tracked;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (r.tracks(xs[k])) tracked.push_back(k);
  }
  if (!tracked.empty()) {
    std::vector<Storage> ins;
    std::vector<std::size_t> chans, offs;
    for (std::size_t k : tracked) {
      ins.push_back(xs[k].storage());
      chans.push_back(xs[k].dim(1));
      offs.push_back(offsets[k]);
    }
    Storage so = out.storage();
    r.tape->record("concat_channels", xs, out, [=] {
      for (std::size_t k = 0; k < ins.size(); ++k) {
        auto& d = ins[k]->grad_buffer();
        const std::size_t block = chans[k] * inner;
        for (std::size_t i = 0; i < n; ++i) {
          const double* g = so->grad.data() + (i * total_c + offs[k]) * inner;
          double* dst = d.data() + i * block;
          for (std::size_t j = 0; j < block; ++j) dst[j] += g[j];
        }
      }
    });
  }
  return out;
}

Tensor mean_axis1(const Tensor& a) {
  if (a.rank() < 3) throw ShapeError("mean_axis1: need rank >= 3, got " + shape_str(a.shape()));
  const std::size_t n = a.dim(0), t = a.dim(1), inner = a.numel() / (n * t);
  Shape shape(a.shape().begin(), a.shape().end());
  shape.erase(shape.begin() + 1);
  Tensor out = output_like(shape);
  auto od = out.data();
  const auto ad = a.data();
  const double inv = 1.0 / static_cast<double>(t);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < inner; ++j) {
      double acc = 0.0;
      for (std::size_t s = 0; s < t; ++s) acc += ad[(i * t + s) * inner + j];
      od[i * inner + j] = acc * inv;
    }
  }
  Recorder r;
  if (r.tracks(a)) {
    Storage sa = a.storage(), so = out.storage();
    r.tape->record("mean_axis1", {&a}, out, [=] {
      auto& da = sa->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t s = 0; s < t; ++s) {
          for (std::size_t j = 0; j < inner; ++j) da[(i * t + s) * inner + j] += so->grad[i * inner + j] * inv;
        }
      }
    });
  }
  return out;
}

// --- convolution / pooling ----------------------------------------------------------

Tensor conv2d(const Tensor& x, const ConvParams& p, std::size_t stride, std::size_t padding) {
  require_rank(x, 4, "conv2d");
  check_conv_params(x, p, 4, "conv2d");
  Geometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.d = 1;
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.kd = 1;
  g.kh = p.weight.dim(2);
  g.kw = p.weight.dim(3);
  g.sd = 1;
  g.sh = g.sw = stride;
  g.pd = 0;
  g.ph = g.pw = padding;
  g.od = 1;
  g.oh = conv_out(g.h, g.kh, stride, padding, true, "conv2d");
  g.ow = conv_out(g.w, g.kw, stride, padding, true, "conv2d");
  return conv_impl("conv2d", x, p, g, {g.n, p.weight.dim(0), g.oh, g.ow});
}

Tensor conv3d(const Tensor& x, const ConvParams& p, std::size_t stride, std::size_t padding) {
  require_rank(x, 5, "conv3d");
  check_conv_params(x, p, 5, "conv3d");
  Geometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.d = x.dim(2);
  g.h = x.dim(3);
  g.w = x.dim(4);
  g.kd = p.weight.dim(2);
  g.kh = p.weight.dim(3);
  g.kw = p.weight.dim(4);
  g.sd = g.sh = g.sw = stride;
  g.pd = g.ph = g.pw = padding;
  g.od = conv_out(g.d, g.kd, stride, padding, true, "conv3d");
  g.oh = conv_out(g.h, g.kh, stride, padding, true, "conv3d");
  g.ow = conv_out(g.w, g.kw, stride, padding, true, "conv3d");
  return conv_impl("conv3d", x, p, g, {g.n, p.weight.dim(0), g.od, g.oh, g.ow});
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank(x, 4, "max_pool2d");
  Geometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.d = 1;
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.kd = 1;
  g.kh = g.kw = kernel;
  g.sd = 1;
  g.sh = g.sw = stride;
  g.od = 1;
  g.oh = conv_out(g.h, kernel, stride, 0, false, "max_pool2d");
  g.ow = conv_out(g.w, kernel, stride, 0, false, "max_pool2d");
  return pool_impl("max_pool2d", x, g, {g.n, g.c, g.oh, g.ow});
}

Tensor max_pool3d(const Tensor& x, std::array<std::size_t, 3> kernel, std::array<std::size_t, 3> stride) {
  require_rank(x, 5, "max_pool3d");
  Geometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.d = x.dim(2);
  g.h = x.dim(3);
  g.w = x.dim(4);
  g.kd = kernel[0];
  g.kh = kernel[1];
  g.kw = kernel[2];
  g.sd = stride[0];
  g.sh = stride[1];
  g.sw = stride[2];
  g.od = conv_out(g.d, g.kd, g.sd, 0, false, "max_pool3d");
  g.oh = conv_out(g.h, g.kh, g.sh, 0, false, "max_pool3d");
  g.ow = conv_out(g.w, g.kw, g.sw, 0, false, "max_pool3d");
  return pool_impl("max_pool3d", x, g, {g.n, g.c, g.od, g.oh, g.ow});
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() < 3) throw ShapeError("global_avg_pool: need rank >= 3, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.numel() / (n * c);
  Tensor out = output_like({n, c});
  auto od = out.data();
  const auto xd = x.data();
  const double inv = 1.0 / static_cast<double>(inner);
  for (std::size_t i = 0; i < n * c; ++i) {
    const double* s = xd.data() + i * inner;
    od[i] = std::accumulate(s, s + inner, 0.0) * inv;
  }
  Recorder r;
  if (r.tracks(x)) {
    Storage sx = x.storage(), so = out.storage();
    r.tape->record("global_avg_pool", {&x}, out, [=] {
      auto& dx = sx->grad_buffer();
      for (std::size_t i = 0; i < n * c; ++i) {
        const double g = so->grad[i] * inv;
        for (std::size_t j = 0; j < inner; ++j) dx[i * inner + j] += g;
      }
    });
  }
  return out;
}

// --- normalisation / nonlinearity / regularisation ----------------------------------------

Tensor batchnorm(const Tensor& x, BatchNormParams& p, Mode mode) {
  if (x.rank() < 2) throw ShapeError("batchnorm: need rank >= 2, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.numel() / (n * c);
  if (p.channels() != c || p.scale.numel() != c || p.shift.numel() != c) {
    throw ShapeError("batchnorm: params for " + std::to_string(p.channels()) + " channels, input " +
                     shape_str(x.shape()));
  }
  const std::size_t count = n * inner;
  if (mode == Mode::kTrain && count < 2) {
    throw InvalidArgument("batchnorm: train mode needs at least 2 values per channel, got " + std::to_string(count));
  }
  const auto xd = x.data();
  std::vector<double> mean(c), invstd(c);
  if (mode == Mode::kTrain) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* s = xd.data() + (i * c + ch) * inner;
        for (std::size_t j = 0; j < inner; ++j) m += s[j];
      }
      m /= static_cast<double>(count);
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* s = xd.data() + (i * c + ch) * inner;
        for (std::size_t j = 0; j < inner; ++j) v += (s[j] - m) * (s[j] - m);
      }
      const double biased = v / static_cast<double>(count);
      const double unbiased = v / static_cast<double>(count - 1);
      mean[ch] = m;
      invstd[ch] = 1.0 / std::sqrt(biased + BatchNormParams::kEpsilon);
      p.running_mean[ch] = (1.0 - p.momentum) * p.running_mean[ch] + p.momentum * m;
      p.running_var[ch] = (1.0 - p.momentum) * p.running_var[ch] + p.momentum * unbiased;
    }
    p.stats_initialized = true;
  } else {
    if (!p.stats_initialized) {
      // Untrained: mean 0, variance 1.
      std::fill(mean.begin(), mean.end(), 0.0);
      std::fill(invstd.begin(), invstd.end(), 1.0 / std::sqrt(1.0 + BatchNormParams::kEpsilon));
    } else {
      for (std::size_t ch = 0; ch < c; ++ch) {
        mean[ch] = p.running_mean[ch];
        invstd[ch] = 1.0 / std::sqrt(p.running_var[ch] + BatchNormParams::kEpsilon);
      }
    }
  }

  Tensor out = output_like(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto od = out.data();
  const auto sc = p.scale.data(), sh = p.shift.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * inner;
      for (std::size_t j = 0; j < inner; ++j) {
        const double h = (xd[base + j] - mean[ch]) * invstd[ch];
        (*xhat)[base + j] = h;
        od[base + j] = sc[ch] * h + sh[ch];
      }
    }
  }
  debug_check_finite(out, "batchnorm");

  Recorder r;
  const bool tx = r.tracks(x), ts = r.tracks(p.scale), tt = r.tracks(p.shift);
  if (tx || ts || tt) {
    Storage sx = x.storage(), ss = p.scale.storage(), st = p.shift.storage(), so = out.storage();
    const bool train = mode == Mode::kTrain;
    r.tape->record("batchnorm", {&x, &p.scale, &p.shift}, out, [=, invstd = std::move(invstd)] {
      const auto& dy = so->grad;
      std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t base = (i * c + ch) * inner;
          for (std::size_t j = 0; j < inner; ++j) {
            sum_dy[ch] += dy[base + j];
            sum_dy_xhat[ch] += dy[base + j] * (*xhat)[base + j];
          }
        }
      }
      if (ts) {
        auto& ds = ss->grad_buffer();
        for (std::size_t ch = 0; ch < c; ++ch) ds[ch] += sum_dy_xhat[ch];
      }
      if (tt) {
        auto& dt = st->grad_buffer();
        for (std::size_t ch = 0; ch < c; ++ch) dt[ch] += sum_dy[ch];
      }
      if (tx) {
        auto& dx = sx->grad_buffer();
        const double m = static_cast<double>(count);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double g = ss->data[ch] * invstd[ch];
            const std::size_t base = (i * c + ch) * inner;
            for (std::size_t j = 0; j < inner; ++j) {
              if (train) {
                dx[base + j] += g * (dy[base + j] - sum_dy[ch] / m - (*xhat)[base + j] * sum_dy_xhat[ch] / m);
              } else {
                dx[base + j] += g * dy[base + j];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor batchnorm2d(const Tensor& x, BatchNormParams& p, Mode mode) {
  require_rank(x, 4, "batchnorm2d");
  return batchnorm(x, p, mode);
}

Tensor activation(const Tensor& x, Activation kind) {
  Tensor out = output_like(x.shape());
  auto od = out.data();
  const auto xd = x.data();
  switch (kind) {
    case Activation::kRelu:
      for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] > 0.0 ? xd[i] : 0.0;
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < od.size(); ++i) {
        // split by sign so exp() never overflows
        od[i] = xd[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-xd[i])) : std::exp(xd[i]) / (1.0 + std::exp(xd[i]));
      }
      break;
    case Activation::kTanh:
      for (std::size_t i = 0; i < od.size(); ++i) od[i] = std::tanh(xd[i]);
      break;
  }
  Recorder r;
  if (r.tracks(x)) {
    Storage sx = x.storage(), so = out.storage();
    const std::string_view op = kind == Activation::kRelu      ? "relu"
                                : kind == Activation::kSigmoid ? "sigmoid"
                                                               : "tanh";
    const bool fault = kind == Activation::kRelu && testing_hooks::relu_grad_fault();
    r.tape->record(op, {&x}, out, [=] {
      auto& dx = sx->grad_buffer();
      const auto& dy = so->grad;
      const auto& y = so->data;
      switch (kind) {
        case Activation::kRelu: {
          const double slope = fault ? 0.5 : 1.0;
          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += sx->data[i] > 0.0 ? slope * dy[i] : 0.0;
          break;
        }
        case Activation::kSigmoid:
          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
          break;
        case Activation::kTanh:
          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * (1.0 - y[i] * y[i]);
          break;
      }
    });
  }
  return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Tensor dropout(const Tensor& x, double rate, Mode mode, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (mode == Mode::kEval) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  const std::uint64_t base = splitmix64(seed);
  for (std::size_t i = 0; i < mask->size(); ++i) {
    const double u = static_cast<double>(splitmix64(base ^ (i * 0xd1b54a32d192ed03ULL)) >> 11) * 0x1.0p-53;
    (*mask)[i] = u < rate ? 0.0 : keep_scale;
  }
  Tensor out = output_like(x.shape());
  auto od = out.data();
  const auto xd = x.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] * (*mask)[i];
  Recorder r;
  if (r.tracks(x)) {
    Storage sx = x.storage(), so = out.storage();
    r.tape->record("dropout", {&x}, out, [=] {
      auto& dx = sx->grad_buffer();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += so->grad[i] * (*mask)[i];
    });
  }
  return out;
}

// --- losses -------------------------------------------------------------------------

std::vector<double> softmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "softmax_rows");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<double> p(n * c);
  const auto ld = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = ld.data() + i * c;
    const double m = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
    for (std::size_t j = 0; j < c; ++j) p[i * c + j] = std::exp(row[j] - m) / z;
  }
  return p;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (targets.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw InvalidArgument("softmax_cross_entropy: target " + std::to_string(t) + " outside [0," + std::to_string(c) + ")");
    }
  }
  const auto ld = logits.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = ld.data() + i * c;
    const double m = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
    loss += m + std::log(z) - row[targets[i]];
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(n));
  if (all_finite(logits)) debug_check_finite(out, "softmax_cross_entropy");
  Recorder r;
  if (r.tracks(logits)) {
    Storage sl = logits.storage(), so = out.storage();
    std::vector<int> tg(targets.begin(), targets.end());
    r.tape->record("softmax_cross_entropy", {&logits}, out, [=, tg = std::move(tg)] {
      const std::vector<double> p = softmax_rows(Tensor(sl));
      auto& dl = sl->grad_buffer();
      const double g = so->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const double onehot = static_cast<int>(j) == tg[i] ? 1.0 : 0.0;
          dl[i * c + j] += g * (p[i * c + j] - onehot);
        }
      }
    });
  }
  return out;
}

}  // namespace chronoscope
