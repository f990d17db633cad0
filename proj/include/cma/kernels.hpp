#pragma once

#include "cma/numerics.hpp"

// Dense matrix-product kernels. Each product has a serial reference version
// and an OpenMP version that splits output rows across threads. Every output
// element is accumulated by the same loop in both versions, so the results
// are bitwise identical regardless of thread count.
namespace cma::kernels {

// C = A·B, A is n×k, B is k×m.
Matrix matmul_serial(const Matrix& a, const Matrix& b);
Matrix matmul_parallel(const Matrix& a, const Matrix& b);

// C = Aᵀ·B, A is k×n, B is k×m.
Matrix matmul_tn_serial(const Matrix& a, const Matrix& b);
Matrix matmul_tn_parallel(const Matrix& a, const Matrix& b);

// C = A·Bᵀ, A is n×k, B is m×k.
Matrix matmul_nt_serial(const Matrix& a, const Matrix& b);
Matrix matmul_nt_parallel(const Matrix& a, const Matrix& b);

// Dispatch: parallel once n·k·m crosses kParallelThreshold.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 18;

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);

// Rank-1 accumulate: out += xᵀ·g for a row vector x (length r) and g (length c).
void add_outer(Matrix& out, std::span<const double> x, std::span<const double> g);

// y = w·g for w r×c and g length c; the backward of a row-vector affine.
Vector matvec(const Matrix& w, std::span<const double> g);

}  // namespace cma::kernels
