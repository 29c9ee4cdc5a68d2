#include "gemm.hpp"

#include <Eigen/Core>

namespace chronoscope::detail {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  Map out(c, M, N);
  if (k == 0) {
    if (!accumulate) out.setZero();
    return;
  }
  ConstMap lhs(a, trans_a ? K : M, trans_a ? M : K);
  ConstMap rhs(b, trans_b ? N : K, trans_b ? K : N);
  auto run = [&](const auto& l, const auto& r) {
    if (accumulate) {
      out.noalias() += l * r;
    } else {
      out.noalias() = l * r;
    }
  };
  if (trans_a && trans_b) {
    run(lhs.transpose(), rhs.transpose());
  } else if (trans_a) {
    run(lhs.transpose(), rhs);
  } else if (trans_b) {
    run(lhs, rhs.transpose());
  } else {
    run(lhs, rhs);
  }
}

}  // namespace chronoscope::detail
