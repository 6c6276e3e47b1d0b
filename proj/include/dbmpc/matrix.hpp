#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dbmpc {

/// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

/// A constructor was handed NaN or Inf.
class NonFiniteEntry : public Error {
public:
    using Error::Error;
};

/// A pivot fell below the relative threshold during LU elimination.
class SingularMatrix : public Error {
public:
    using Error::Error;
};

class NotSymmetric : public Error {
public:
    using Error::Error;
};

/// Cholesky pivot was non-positive; carries the index of the failing pivot.
class PositiveDefinitenessFailure : public Error {
public:
    explicit PositiveDefinitenessFailure(std::size_t pivot)
        : Error("matrix is not positive definite (pivot " + std::to_string(pivot) + ")"),
          pivot_(pivot) {}
    std::size_t pivot_index() const { return pivot_; }

private:
    std::size_t pivot_;
};

/// A domain parameter violated its documented precondition.
class InvalidParameter : public Error {
public:
    using Error::Error;
};

/// Relative pivot threshold below which LU elimination reports SingularMatrix.
inline constexpr double kLuPivotRelTol = 1e-12;
/// Relative tolerance for the symmetry precondition of cholesky().
inline constexpr double kSymmetryRelTol = 1e-9;
/// Relative threshold below which a Cholesky pivot counts as non-positive.
inline constexpr double kCholeskyPivotRelTol = 1e-12;

/// Dense row-major matrix of doubles. Sizes here are tiny (n <= ~20), so
/// every operation is a plain triple loop and every result re-validates
/// finiteness on construction.
class Mat {
public:
    Mat(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
        if (rows == 0 || cols == 0)
            throw DimensionMismatch("Mat: dimensions must be positive");
    }

    Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (rows == 0 || cols == 0)
            throw DimensionMismatch("Mat: dimensions must be positive");
        if (data_.size() != rows * cols)
            throw DimensionMismatch("Mat: data length " + std::to_string(data_.size()) +
                                    " does not match " + std::to_string(rows) + "x" +
                                    std::to_string(cols));
        check_finite();
    }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        if (rows.size() == 0) throw DimensionMismatch("Mat::from_rows: empty");
        const std::size_t c = rows.begin()->size();
        std::vector<double> data;
        data.reserve(rows.size() * c);
        for (const auto& r : rows) {
            if (r.size() != c)
                throw DimensionMismatch("Mat::from_rows: ragged rows");
            data.insert(data.end(), r.begin(), r.end());
        }
        return Mat(rows.size(), c, std::move(data));
    }

    static Mat col_vec(std::vector<double> entries) {
        const std::size_t n = entries.size();
        return Mat(n, 1, std::move(entries));
    }

    static Mat row_vec(std::vector<double> entries) {
        const std::size_t n = entries.size();
        return Mat(1, n, std::move(entries));
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool is_square() const { return rows_ == cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    const std::vector<double>& data() const { return data_; }

    /// Max-abs norm; the norm used for every tolerance in this library.
    double max_abs() const {
        double m = 0.0;
        for (double v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    Mat transpose() const {
        Mat t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    Mat operator*(const Mat& rhs) const {
        if (cols_ != rhs.rows_)
            throw DimensionMismatch("Mat::operator*: " + shape_str() + " times " + rhs.shape_str());
        Mat out(rows_, rhs.cols_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t k = 0; k < cols_; ++k) {
                const double a = (*this)(i, k);
                if (a == 0.0) continue;
                for (std::size_t j = 0; j < rhs.cols_; ++j) out(i, j) += a * rhs(k, j);
            }
        out.check_finite();
        return out;
    }

    Mat operator+(const Mat& rhs) const { return combined(rhs, +1.0, "operator+"); }
    Mat operator-(const Mat& rhs) const { return combined(rhs, -1.0, "operator-"); }

    Mat operator*(double s) const {
        Mat out = *this;
        for (double& v : out.data_) v *= s;
        out.check_finite();
        return out;
    }

    Mat operator-() const { return (*this) * -1.0; }

    friend Mat operator*(double s, const Mat& m) { return m * s; }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    std::string to_string(int precision = 6) const {
        std::ostringstream os;
        os.precision(precision);
        for (std::size_t i = 0; i < rows_; ++i) {
            os << (i == 0 ? "[" : " ");
            for (std::size_t j = 0; j < cols_; ++j)
                os << (*this)(i, j) << (j + 1 < cols_ ? ", " : "");
            os << (i + 1 < rows_ ? ";\n" : "]");
        }
        return os.str();
    }

private:
    void check_finite() const {
        for (double v : data_)
            if (!std::isfinite(v))
                throw NonFiniteEntry("Mat: non-finite entry in " + shape_str() + " matrix");
    }

    Mat combined(const Mat& rhs, double sign, const char* op) const {
        if (rows_ != rhs.rows_ || cols_ != rhs.cols_)
            throw DimensionMismatch(std::string("Mat::") + op + ": " + shape_str() + " vs " +
                                    rhs.shape_str());
        Mat out(rows_, cols_);
        for (std::size_t i = 0; i < data_.size(); ++i)
            out.data_[i] = data_[i] + sign * rhs.data_[i];
        out.check_finite();
        return out;
    }

    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> data_;
};

/// Dot product of two column vectors of equal length.
inline double dot(const Mat& a, const Mat& b) {
    if (a.cols() != 1 || b.cols() != 1 || a.rows() != b.rows())
        throw DimensionMismatch("dot: expected equal-length column vectors");
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, 0) * b(i, 0);
    return s;
}

namespace detail {

struct LuFactors {
    Mat lu;                        // packed L (unit diagonal) and U
    std::vector<std::size_t> perm; // row permutation applied to the input
    bool singular = false;
};

/// LU with partial pivoting. A pivot smaller than rel_tol * max_abs(a)
/// marks the factorization singular; callers decide how to report that.
inline LuFactors lu_factor(const Mat& a, double rel_tol) {
    if (!a.is_square()) throw DimensionMismatch("lu_factor: matrix is " + a.shape_str());
    const std::size_t n = a.rows();
    LuFactors f{a, std::vector<std::size_t>(n), false};
    for (std::size_t i = 0; i < n; ++i) f.perm[i] = i;
    const double threshold =
        rel_tol * std::max(a.max_abs(), std::numeric_limits<double>::min());

    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        double best = std::abs(f.lu(k, k));
        for (std::size_t i = k + 1; i < n; ++i) {
            const double v = std::abs(f.lu(i, k));
            if (v > best) {
                best = v;
                piv = i;
            }
        }
        if (best < threshold) {
            f.singular = true;
            return f;
        }
        if (piv != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(f.lu(k, j), f.lu(piv, j));
            std::swap(f.perm[k], f.perm[piv]);
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            const double m = f.lu(i, k) / f.lu(k, k);
            f.lu(i, k) = m;
            for (std::size_t j = k + 1; j < n; ++j) f.lu(i, j) -= m * f.lu(k, j);
        }
    }
    return f;
}

inline Mat lu_apply(const LuFactors& f, const Mat& b) {
    const std::size_t n = f.lu.rows();
    if (b.rows() != n)
        throw DimensionMismatch("lu_apply: rhs has " + std::to_string(b.rows()) + " rows, expected " +
                                std::to_string(n));
    Mat x(n, b.cols());
    for (std::size_t c = 0; c < b.cols(); ++c) {
        // forward substitution on the permuted rhs
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            double s = b(f.perm[i], c);
            for (std::size_t j = 0; j < i; ++j) s -= f.lu(i, j) * y[j];
            y[i] = s;
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = y[ii];
            for (std::size_t j = ii + 1; j < n; ++j) s -= f.lu(ii, j) * x(j, c);
            x(ii, c) = s / f.lu(ii, ii);
        }
    }
    return x;
}

} // namespace detail

/// Solves a * x = b by LU with partial pivoting. Throws SingularMatrix when a
/// pivot falls below kLuPivotRelTol relative to max_abs(a).
inline Mat lu_solve(const Mat& a, const Mat& b) {
    auto f = detail::lu_factor(a, kLuPivotRelTol);
    if (f.singular)
        throw SingularMatrix("lu_solve: pivot below " + std::to_string(kLuPivotRelTol) +
                             " * max_abs for " + a.shape_str() + " matrix");
    return detail::lu_apply(f, b);
}

/// True when LU with the given relative pivot threshold completes, i.e. the
/// matrix has full rank at that tolerance.
inline bool lu_invertible(const Mat& a, double rel_tol) {
    return !detail::lu_factor(a, rel_tol).singular;
}

/// a^k by repeated multiplication; a^0 is the identity.
inline Mat mat_pow(const Mat& a, std::size_t k) {
    if (!a.is_square()) throw DimensionMismatch("mat_pow: matrix is " + a.shape_str());
    Mat out = Mat::identity(a.rows());
    for (std::size_t i = 0; i < k; ++i) out = a * out;
    return out;
}

struct CholeskyOutcome {
    std::optional<Mat> lower;
    std::size_t failing_pivot = 0; // meaningful only when !lower
    bool ok() const { return lower.has_value(); }
};

/// Cholesky factorization of a symmetric matrix. Returns the lower factor on
/// success; on a non-positive pivot returns the failing index instead of
/// throwing. Asymmetry beyond kSymmetryRelTol throws NotSymmetric.
inline CholeskyOutcome try_cholesky(const Mat& a) {
    if (!a.is_square()) throw DimensionMismatch("cholesky: matrix is " + a.shape_str());
    const std::size_t n = a.rows();
    const double scale = std::max(1.0, a.max_abs());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(a(i, j) - a(j, i)) > kSymmetryRelTol * scale)
                throw NotSymmetric("cholesky: entry (" + std::to_string(i) + "," +
                                   std::to_string(j) + ") differs from its transpose");

    Mat l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > kCholeskyPivotRelTol * scale)) return {std::nullopt, j};
        l(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = 0.5 * (a(i, j) + a(j, i)); // symmetrized off-diagonal
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return {l, 0};
}

/// Throwing variant of try_cholesky.
inline Mat cholesky(const Mat& a) {
    auto out = try_cholesky(a);
    if (!out.ok()) throw PositiveDefinitenessFailure(out.failing_pivot);
    return *out.lower;
}

/// True when a is symmetric positive definite at the library tolerances.
inline bool is_positive_definite(const Mat& a) {
    if (!a.is_square()) return false;
    try {
        return try_cholesky(a).ok();
    } catch (const NotSymmetric&) {
        return false;
    }
}

} // namespace dbmpc
