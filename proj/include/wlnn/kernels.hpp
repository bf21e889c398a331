#ifndef WLNN_KERNELS_HPP
#define WLNN_KERNELS_HPP

#include "numerics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace wlnn::detail {

// Shared building blocks of the finite-width steps. The three-layer and the
// multilayer code paths call exactly these, so that L = 1 runs agree bit for bit.

// (m^{-1/2} Z + m^{-1} W)^T v
inline Vector backward(const Matrix& Z, const Matrix& W, const Vector& v) {
    const double m = static_cast<double>(Z.rows());
    Vector out = Z.transpose() * v;
    out *= 1.0 / std::sqrt(m);
    Vector w = W.transpose() * v;
    out += (1.0 / m) * w;
    return out;
}

// (m^{-1/2} Z + m^{-1} W) v
inline Vector forward(const Matrix& Z, const Matrix& W, const Vector& v) {
    const double m = static_cast<double>(Z.rows());
    Vector out = Z * v;
    out *= 1.0 / std::sqrt(m);
    Vector w = W * v;
    out += (1.0 / m) * w;
    return out;
}

// M <- M - tau a b^T
inline void rank1_update(Matrix& M, double tau, const Vector& a, const Vector& b) {
    Vector ta = tau * a;
    M.noalias() -= ta * b.transpose();
}

inline bool finite(const Vector& v) { return v.allFinite(); }

inline void check_lambda(const Vector& lambda, double s, long kappa) {
    if (!lambda.allFinite()) throw DivergenceError(kappa, "non-finite predictor");
    if (s * lambda.norm() > 1e8) throw DivergenceError(kappa, "predictor norm above 1e8");
}

/// Row-major dense block that can grow without losing its contents.
/// Capacity is reserved in blocks of 64 rows and columns.
class GrowMatrix {
public:
    GrowMatrix() = default;
    GrowMatrix(long rows, long cols) { resize(rows, cols); }

    long rows() const { return rows_; }
    long cols() const { return cols_; }

    double& operator()(long i, long j) { return data_[static_cast<std::size_t>(i * stride_ + j)]; }
    double operator()(long i, long j) const { return data_[static_cast<std::size_t>(i * stride_ + j)]; }

    double* row(long i) { return data_.data() + i * stride_; }
    const double* row(long i) const { return data_.data() + i * stride_; }

    /// Grows (never shrinks storage); new entries are zero. Shrinking the
    /// logical size zeroes the dropped entries.
    void resize(long rows, long cols) {
        if (rows < 0 || cols < 0) throw DimensionError("GrowMatrix: negative size");
        long need_r = round_up(rows), need_c = round_up(cols);
        if (need_r > cap_rows_ || need_c > cap_cols_) {
            long nr = std::max(need_r, cap_rows_), nc = std::max(need_c, cap_cols_);
            std::vector<double> next(static_cast<std::size_t>(nr * nc), 0.0);
            for (long i = 0; i < rows_; ++i)
                std::copy(row(i), row(i) + cols_, next.data() + i * nc);
            data_.swap(next);
            cap_rows_ = nr;
            cap_cols_ = nc;
            stride_ = nc;
        }
        for (long i = 0; i < rows_; ++i)
            for (long j = (i < rows ? cols : 0); j < cols_; ++j) (*this)(i, j) = 0.0;
        rows_ = rows;
        cols_ = cols;
    }

    Matrix dense() const {
        Matrix out(rows_, cols_);
        for (long i = 0; i < rows_; ++i)
            for (long j = 0; j < cols_; ++j) out(i, j) = (*this)(i, j);
        return out;
    }

    double squared_norm() const {
        double acc = 0.0;
        for (long i = 0; i < rows_; ++i)
            for (long j = 0; j < cols_; ++j) acc += (*this)(i, j) * (*this)(i, j);
        return acc;
    }

    bool all_finite() const {
        for (long i = 0; i < rows_; ++i)
            for (long j = 0; j < cols_; ++j)
                if (!std::isfinite((*this)(i, j))) return false;
        return true;
    }

private:
    static long round_up(long n) { return ((n + 63) / 64) * 64; }

    long rows_ = 0, cols_ = 0, cap_rows_ = 0, cap_cols_ = 0, stride_ = 0;
    std::vector<double> data_;
};

// Sequential kernels for the limit recursions, restricted to the leading
// n x n block. Sums run in ascending index order and zero inputs are skipped,
// so trailing zero padding never changes a result.

// out_j = sum_{i<n} M_ij v_i for j < n
inline std::vector<double> gemv_t(const GrowMatrix& M, const std::vector<double>& v, long n_rows, long n_cols) {
    std::vector<double> out(static_cast<std::size_t>(M.cols()), 0.0);
    for (long i = 0; i < n_rows; ++i) {
        const double vi = v[static_cast<std::size_t>(i)];
        if (vi == 0.0) continue;
        const double* r = M.row(i);
        for (long j = 0; j < n_cols; ++j) out[static_cast<std::size_t>(j)] += r[j] * vi;
    }
    return out;
}

// out_i = sum_{j<n_cols} M_ij v_j for i < n_rows
inline std::vector<double> gemv(const GrowMatrix& M, const std::vector<double>& v, long n_rows, long n_cols) {
    std::vector<double> out(static_cast<std::size_t>(M.rows()), 0.0);
    for (long i = 0; i < n_rows; ++i) {
        const double* r = M.row(i);
        double acc = 0.0;
        for (long j = 0; j < n_cols; ++j) acc += r[j] * v[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
}

// M_ij -= (tau a_i) b_j on the leading block
inline void rank1(GrowMatrix& M, double tau, const std::vector<double>& a, const std::vector<double>& b, long n_rows,
                  long n_cols) {
    for (long i = 0; i < n_rows; ++i) {
        const double ta = tau * a[static_cast<std::size_t>(i)];
        if (ta == 0.0) continue;
        double* r = M.row(i);
        for (long j = 0; j < n_cols; ++j) r[j] -= ta * b[static_cast<std::size_t>(j)];
    }
}

// One past the last nonzero entry of v among the first n.
inline long extent(const std::vector<double>& v, long n) {
    for (long i = n; i > 0; --i)
        if (v[static_cast<std::size_t>(i - 1)] != 0.0) return i;
    return 0;
}

// Zeroes entries of the leading block smaller than tol in magnitude.
inline void drop_small(GrowMatrix& M, long n_rows, long n_cols, double tol) {
    for (long i = 0; i < n_rows; ++i) {
        double* r = M.row(i);
        for (long j = 0; j < n_cols; ++j)
            if (std::abs(r[j]) < tol) r[j] = 0.0;
    }
}

// One past the last column of the leading n_rows rows holding a nonzero.
inline long col_extent(const GrowMatrix& M, long n_rows, long n_cols) {
    long ext = 0;
    for (long i = 0; i < n_rows; ++i) {
        const double* r = M.row(i);
        for (long j = n_cols; j > ext; --j)
            if (r[j - 1] != 0.0) {
                ext = j;
                break;
            }
    }
    return ext;
}

// One past the last row of M holding a nonzero among the first n rows.
inline long row_extent(const GrowMatrix& M, long n) {
    for (long i = n; i > 0; --i) {
        const double* r = M.row(i - 1);
        for (long j = 0; j < M.cols(); ++j)
            if (r[j] != 0.0) return i;
    }
    return 0;
}

} // namespace wlnn::detail

#endif
