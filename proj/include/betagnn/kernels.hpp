#pragma once

#include <Eigen/Core>

#include "betagnn/graph.hpp"
#include "betagnn/tensor.hpp"

// Dense and sparse-dense products on Tensor. Dense GEMM goes through Eigen;
// the sparse product is a plain CSR row loop.
namespace betagnn::kernels {

using RowMajor = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMajor> view(const Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
inline Eigen::Map<RowMajor> view(Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

inline void require_inner(const Tensor& a, const Tensor& b, std::size_t ka, std::size_t kb, const char* op) {
  if (ka != kb) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape() + " and " + b.shape());
  }
}

/// a * b
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_inner(a, b, a.cols(), b.rows(), "matmul");
  Tensor out(a.rows(), b.cols());
  if (out.size() == 0) return out;
  view(out).noalias() = view(a) * view(b);
  return out;
}

/// a^T * b
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_inner(a, b, a.rows(), b.rows(), "matmul_tn");
  Tensor out(a.cols(), b.cols());
  if (out.size() == 0) return out;
  view(out).noalias() = view(a).transpose() * view(b);
  return out;
}

/// a * b^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_inner(a, b, a.cols(), b.cols(), "matmul_nt");
  Tensor out(a.rows(), b.rows());
  if (out.size() == 0) return out;
  view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

/// s * d for a square CSR matrix s.
inline Tensor spmm(const CsrMatrix& s, const Tensor& d) {
  if (s.n != d.rows()) {
    throw ShapeError("spmm: incompatible shapes " + Tensor::shape_string(s.n, s.n) + " and " + d.shape());
  }
  Tensor out(d.rows(), d.cols());
  const std::size_t c = d.cols();
  for (std::size_t u = 0; u < s.n; ++u) {
    Real* dst = out.data().data() + u * c;
    for (std::size_t k = s.row_offsets[u]; k < s.row_offsets[u + 1]; ++k) {
      const Real w = s.values[k];
      const Real* src = d.data().data() + static_cast<std::size_t>(s.col_indices[k]) * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += w * src[j];
    }
  }
  return out;
}

}  // namespace betagnn::kernels
