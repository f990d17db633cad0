#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cma {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix row_vector(std::span<const double> v);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    std::string shape() const;

    void fill(double v);

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Output of a softmax: non-negative entries summing to one.
class ProbVector {
public:
    ProbVector() = default;

    // Validates entries in [0, 1] summing to 1 within 1e-9.
    static ProbVector from_values(std::vector<double> p);

    std::size_t size() const noexcept { return p_.size(); }
    double operator[](std::size_t i) const { return p_[i]; }
    std::span<const double> values() const noexcept { return p_; }
    auto begin() const noexcept { return p_.begin(); }
    auto end() const noexcept { return p_.end(); }

    // Lowest index wins ties.
    std::size_t argmax() const;

    bool operator==(const ProbVector&) const = default;

private:
    friend ProbVector softmax(std::span<const double> v);
    explicit ProbVector(std::vector<double> p) : p_(std::move(p)) {}
    std::vector<double> p_;
};

inline constexpr double kDegenerateNorm = 1e-12;

// Max-subtracted softmax. Throws DimensionError on empty input.
ProbVector softmax(std::span<const double> v);

// In-place row-wise softmax.
void softmax_rows(Matrix& m);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

// Throws DegenerateVectorError when the norm is below kDegenerateNorm.
Vector l2_normalize(std::span<const double> v);

Vector concat(std::span<const double> a, std::span<const double> b);

// Column mean over rows, i.e. mean pooling of a token sequence.
Vector mean_rows(const Matrix& m);

// x·w + b with b broadcast over rows.
Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> b);

// Single-row convenience: v·w + b.
Vector affine(std::span<const double> v, const Matrix& w, std::span<const double> b);

bool all_finite(std::span<const double> v);

using ScalarFn = std::function<double(std::span<const double>)>;
using GradientFn = std::function<Vector(std::span<const double>)>;

struct GradientCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
};

// Central finite differences against an analytic gradient. The per-coordinate
// error is |a - c| / max(1e-8, |a| + |c|). `coords` restricts the probe to a
// subset of coordinates; empty means all of them.
GradientCheckResult gradient_check(const ScalarFn& loss, const GradientFn& gradient,
                                   std::span<const double> params, double eps = 1e-5,
                                   std::span<const std::size_t> coords = {});

}  // namespace cma
