#include "cma/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "cma/errors.hpp"
#include "cma/kernels.hpp"

namespace cma {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionError("Matrix: " + std::to_string(data_.size()) + " values for shape " +
                             shape());
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::row_vector(std::span<const double> v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

std::string Matrix::shape() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

ProbVector ProbVector::from_values(std::vector<double> p) {
    if (p.empty()) throw DimensionError("ProbVector: empty");
    double sum = 0.0;
    for (double x : p) {
        if (!(x >= 0.0 && x <= 1.0)) throw NumericError("ProbVector: entry outside [0, 1]");
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw NumericError("ProbVector: entries do not sum to 1");
    return ProbVector(std::move(p));
}

std::size_t ProbVector::argmax() const {
    return static_cast<std::size_t>(std::max_element(p_.begin(), p_.end()) - p_.begin());
}

ProbVector softmax(std::span<const double> v) {
    if (v.empty()) throw DimensionError("softmax: empty input");
    if (!all_finite(v)) throw NumericError("softmax: non-finite input");
    const double mx = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return ProbVector(std::move(out));
}

void softmax_rows(Matrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        const ProbVector p = softmax(row);
        std::copy(p.begin(), p.end(), row.begin());
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError("dot: lengths " + std::to_string(a.size()) + " and " +
                             std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Vector l2_normalize(std::span<const double> v) {
    if (v.empty()) throw DimensionError("l2_normalize: empty input");
    const double n = norm2(v);
    if (!(n >= kDegenerateNorm)) {
        throw DegenerateVectorError("l2_normalize: norm " + std::to_string(n) + " below 1e-12");
    }
    Vector out(v.begin(), v.end());
    for (double& x : out) x /= n;
    return out;
}

Vector concat(std::span<const double> a, std::span<const double> b) {
    Vector out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

Vector mean_rows(const Matrix& m) {
    if (m.rows() == 0) throw DimensionError("mean_rows: no rows");
    Vector out(m.cols(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) out[c] += row[c];
    }
    const double inv = 1.0 / static_cast<double>(m.rows());
    for (double& x : out) x *= inv;
    return out;
}

Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> b) {
    if (x.cols() != w.rows() || b.size() != w.cols()) {
        throw DimensionError("affine: x " + x.shape() + ", w " + w.shape() + ", b (" +
                             std::to_string(b.size()) + ")");
    }
    Matrix out = kernels::matmul(x, w);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
    }
    if (!all_finite(out.values())) throw NumericError("affine: non-finite output");
    return out;
}

Vector affine(std::span<const double> v, const Matrix& w, std::span<const double> b) {
    Matrix out = affine(Matrix::row_vector(v), w, b);
    return Vector(out.values().begin(), out.values().end());
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

GradientCheckResult gradient_check(const ScalarFn& loss, const GradientFn& gradient,
                                   std::span<const double> params, double eps,
                                   std::span<const std::size_t> coords) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) {
        throw DataError("gradient_check: eps must lie in [1e-7, 1e-3]");
    }
    const Vector analytic = gradient(params);
    if (analytic.size() != params.size()) {
        throw DimensionError("gradient_check: gradient has " + std::to_string(analytic.size()) +
                             " entries for " + std::to_string(params.size()) + " parameters");
    }
    Vector probe(params.begin(), params.end());
    GradientCheckResult result;

    auto check_one = [&](std::size_t i) {
        const double saved = probe[i];
        probe[i] = saved + eps;
        const double up = loss(probe);
        probe[i] = saved - eps;
        const double down = loss(probe);
        probe[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("gradient_check: non-finite loss probing coordinate " +
                               std::to_string(i));
        }
        const double central = (up - down) / (2.0 * eps);
        const double err = std::abs(analytic[i] - central) /
                           std::max(1e-8, std::abs(analytic[i]) + std::abs(central));
        if (err > result.max_relative_error) {
            result.max_relative_error = err;
            result.worst_index = i;
        }
    };

    if (coords.empty()) {
        for (std::size_t i = 0; i < probe.size(); ++i) check_one(i);
    } else {
        for (std::size_t i : coords) {
            if (i >= probe.size()) throw DimensionError("gradient_check: coordinate out of range");
            check_one(i);
        }
    }
    return result;
}

}  // namespace cma
