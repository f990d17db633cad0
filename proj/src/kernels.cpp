#include "cma/kernels.hpp"

#include <algorithm>

#include "cma/errors.hpp"

namespace cma::kernels {
namespace {

constexpr std::size_t kColumnBlock = 64;

void require(bool ok, const char* op, const Matrix& a, const Matrix& b) {
    if (!ok) {
        throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape() + " and " +
                             b.shape());
    }
}

std::size_t column_blocks(std::size_t m) { return (m + kColumnBlock - 1) / kColumnBlock; }

}  // namespace

Matrix matmul_serial(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul", a, b);
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Matrix c(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a(i, p);
            for (std::size_t j = 0; j < m; ++j) c(i, j) += aip * b(p, j);
        }
    }
    return c;
}

Matrix matmul_parallel(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul", a, b);
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Matrix c(n, m);
    const auto nb = static_cast<std::ptrdiff_t>(column_blocks(m));
    const auto nr = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::ptrdiff_t i = 0; i < nr; ++i) {
        for (std::ptrdiff_t jb = 0; jb < nb; ++jb) {
            const std::size_t j0 = static_cast<std::size_t>(jb) * kColumnBlock;
            const std::size_t j1 = std::min(m, j0 + kColumnBlock);
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = a(i, p);
                for (std::size_t j = j0; j < j1; ++j) c(i, j) += aip * b(p, j);
            }
        }
    }
    return c;
}

Matrix matmul_tn_serial(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), "matmul_tn", a, b);
    const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
    Matrix c(n, m);
    for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t i = 0; i < n; ++i) {
            const double api = a(p, i);
            for (std::size_t j = 0; j < m; ++j) c(i, j) += api * b(p, j);
        }
    }
    return c;
}

Matrix matmul_tn_parallel(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), "matmul_tn", a, b);
    const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
    Matrix c(n, m);
    const auto nb = static_cast<std::ptrdiff_t>(column_blocks(m));
    const auto nr = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::ptrdiff_t i = 0; i < nr; ++i) {
        for (std::ptrdiff_t jb = 0; jb < nb; ++jb) {
            const std::size_t j0 = static_cast<std::size_t>(jb) * kColumnBlock;
            const std::size_t j1 = std::min(m, j0 + kColumnBlock);
            for (std::size_t p = 0; p < k; ++p) {
                const double api = a(p, i);
                for (std::size_t j = j0; j < j1; ++j) c(i, j) += api * b(p, j);
            }
        }
    }
    return c;
}

Matrix matmul_nt_serial(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "matmul_nt", a, b);
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    Matrix c(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a(i, p) * b(j, p);
            c(i, j) = s;
        }
    }
    return c;
}

Matrix matmul_nt_parallel(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "matmul_nt", a, b);
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    Matrix c(n, m);
    const auto nr = static_cast<std::ptrdiff_t>(n);
    const auto mr = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::ptrdiff_t i = 0; i < nr; ++i) {
        for (std::ptrdiff_t j = 0; j < mr; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a(i, p) * b(j, p);
            c(i, j) = s;
        }
    }
    return c;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.rows() * a.cols() * b.cols() >= kParallelThreshold) return matmul_parallel(a, b);
    return matmul_serial(a, b);
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() * a.cols() * b.cols() >= kParallelThreshold) return matmul_tn_parallel(a, b);
    return matmul_tn_serial(a, b);
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.rows() * a.cols() * b.rows() >= kParallelThreshold) return matmul_nt_parallel(a, b);
    return matmul_nt_serial(a, b);
}

void add_outer(Matrix& out, std::span<const double> x, std::span<const double> g) {
    if (out.rows() != x.size() || out.cols() != g.size()) {
        throw DimensionError("add_outer: target " + out.shape() + " vs outer " +
                             std::to_string(x.size()) + "x" + std::to_string(g.size()));
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        auto r = out.row(i);
        for (std::size_t j = 0; j < g.size(); ++j) r[j] += xi * g[j];
    }
}

Vector matvec(const Matrix& w, std::span<const double> g) {
    if (w.cols() != g.size()) {
        throw DimensionError("matvec: " + w.shape() + " times length " + std::to_string(g.size()));
    }
    Vector y(w.rows(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        auto r = w.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) s += r[j] * g[j];
        y[i] = s;
    }
    return y;
}

}  // namespace cma::kernels
