#ifndef WLNN_LIMIT_SYSTEM_HPP
#define WLNN_LIMIT_SYSTEM_HPP

#include "data.hpp"
#include "kernels.hpp"
#include "numerics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace wlnn {

/// The fixed sparse operator with ones at (i, i+d) and (j+1, j), 0-based.
struct LadderOperator {
    int d = 1;

    bool entry(long i, long j) const { return j == i + d || i == j + 1; }

    Matrix dense(long R) const {
        Matrix L = Matrix::Zero(R, R);
        for (long i = 0; i < R; ++i)
            for (long j = 0; j < R; ++j)
                if (entry(i, j)) L(i, j) = 1.0;
        return L;
    }

    /// (Lambda v)_i = v_{i+d} + v_{i-1}, truncated to v.size(); only the
    /// first `rows` outputs are computed, the rest are zero.
    std::vector<double> apply(const std::vector<double>& v, long rows = -1) const {
        const long n = static_cast<long>(v.size());
        if (rows < 0 || rows > n) rows = n;
        std::vector<double> out(v.size(), 0.0);
        for (long i = 0; i < rows; ++i) {
            double acc = 0.0;
            if (i >= 1) acc = v[static_cast<std::size_t>(i - 1)];
            if (i + d < n) acc += v[static_cast<std::size_t>(i + d)];
            out[static_cast<std::size_t>(i)] = acc;
        }
        return out;
    }

    /// (Lambda^T v)_j = v_{j-d} + v_{j+1}, truncated to v.size().
    std::vector<double> apply_t(const std::vector<double>& v, long rows = -1) const {
        const long n = static_cast<long>(v.size());
        if (rows < 0 || rows > n) rows = n;
        std::vector<double> out(v.size(), 0.0);
        for (long j = 0; j < rows; ++j) {
            double acc = 0.0;
            if (j + 1 < n) acc = v[static_cast<std::size_t>(j + 1)];
            if (j >= d) acc += v[static_cast<std::size_t>(j - d)];
            out[static_cast<std::size_t>(j)] = acc;
        }
        return out;
    }
};

/// Coefficient arrays of the infinite-width network, held on a finite window.
///
/// R is the truncation size; it grows by d rows per step, which keeps the
/// representation exact. If max_rows is set and reached, growth stops and
/// exact() turns false once the structural support could leave the window.
/// Storage only covers the rows that can be nonzero, so R may be far larger
/// than the memory actually held.
struct LimitState {
    int d = 1;
    double s = 1.0;
    long kappa = 0;
    long R = 0;
    long max_rows = 0; ///< 0 means unbounded
    double drop_tolerance = 0.0; ///< coefficients below this magnitude are set to zero after a step
    detail::GrowMatrix A; ///< R x d
    detail::GrowMatrix G; ///< R x R
    std::vector<double> B;
    long support_A = 0; ///< structural bound on nonzero rows of A
    long support_B = 0;
    long ext_A = 0; ///< one past the last nonzero row of A
    long ext_B = 0;
    long ext_G_rows = 0; ///< bounds on the nonzero block of G
    long ext_G_cols = 0;
    bool exact_ = true;

    LadderOperator ladder() const { return {d}; }
    bool exact() const { return exact_; }

    /// Rows currently held in memory (at most R).
    long stored() const { return A.rows(); }

    /// Coefficients on the first n rows (default: all R rows).
    Matrix A_dense(long n = -1) const {
        if (n < 0) n = R;
        Matrix out = Matrix::Zero(n, d);
        for (long i = 0; i < std::min(n, stored()); ++i)
            for (long z = 0; z < d; ++z) out(i, z) = A(i, z);
        return out;
    }
    Matrix G_dense(long n = -1) const {
        if (n < 0) n = R;
        Matrix out = Matrix::Zero(n, n);
        for (long i = 0; i < std::min(n, stored()); ++i)
            for (long j = 0; j < std::min(n, stored()); ++j) out(i, j) = G(i, j);
        return out;
    }
    Vector B_dense(long n = -1) const {
        if (n < 0) n = R;
        Vector out = Vector::Zero(n);
        for (long i = 0; i < std::min(n, stored()); ++i) out(i) = B[static_cast<std::size_t>(i)];
        return out;
    }

    /// Makes sure at least min(n, R) rows are stored.
    void reserve_rows(long n) {
        n = std::min(n, R);
        if (n <= stored()) return;
        A.resize(n, d);
        G.resize(n, n);
        B.resize(static_cast<std::size_t>(n), 0.0);
    }
};

inline LimitState init_limit(int d, long R0, double s = 1.0, long max_rows = 0) {
    if (d < 1) throw DimensionError("init_limit: d must be positive");
    if (R0 < d + 1) throw DimensionError("init_limit: initial truncation must be at least d+1");
    if (max_rows != 0 && max_rows < R0) throw DimensionError("init_limit: max_rows below initial truncation");
    LimitState st;
    st.d = d;
    st.s = s;
    st.max_rows = max_rows;
    st.R = R0;
    st.reserve_rows(d + 1);
    for (int i = 0; i < d; ++i) st.A(i, i) = 1.0;
    st.B[0] = 1.0;
    st.support_A = st.ext_A = d;
    st.support_B = st.ext_B = 1;
    return st;
}

namespace detail {

inline std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector to_eigen(const std::vector<double>& v) {
    Vector out(static_cast<long>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<long>(i)) = v[i];
    return out;
}

inline std::vector<double> add(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) acc += a[i] * b[i];
    return acc;
}

inline long backward_extent(const LimitState& st) {
    return std::min(st.stored(), std::max(st.ext_B + st.d, st.ext_G_cols));
}

// (Lambda + G)^T B
inline std::vector<double> limit_backward(const LimitState& st) {
    const long n = backward_extent(st);
    return add(st.ladder().apply_t(st.B, n), gemv_t(st.G, st.B, std::min(st.ext_B, st.ext_G_rows), st.ext_G_cols));
}

} // namespace detail

/// Unscaled predictor A^T (Lambda + G)^T B.
inline Vector raw_predictor(const LimitState& st) {
    return detail::to_eigen(detail::gemv_t(st.A, detail::limit_backward(st), detail::backward_extent(st), st.d));
}

inline Vector predictor_limit(const LimitState& st) { return st.s * raw_predictor(st); }

/// Quantities produced by one step, useful to flow diagnostics.
struct LimitStepInfo {
    Vector lambda; ///< unscaled pre-step predictor
    Vector xi;
    double d_lg = 0.0; ///< exact change of ||Lambda+G||^2 - ||Lambda||^2
};

template <class XiFn>
LimitStepInfo advance_limit(LimitState& st, double tau, XiFn&& xi_of) {
    if (!(tau > 0)) throw std::invalid_argument("step size must be positive");
    long grown = st.R + st.d;
    if (st.max_rows != 0) grown = std::min(grown, st.max_rows);
    st.R = std::max(st.R, grown);
    st.reserve_rows(std::max({st.ext_A, st.ext_B, st.ext_G_rows, st.ext_G_cols}) + st.d + 2);

    const auto lad = st.ladder();
    const long nA = st.ext_A, nB = st.ext_B, gR = st.ext_G_rows, gC = st.ext_G_cols;
    const long nc = detail::backward_extent(st);
    std::vector<double> c = detail::limit_backward(st);
    std::vector<double> lam = detail::gemv_t(st.A, c, nc, st.d);
    LimitStepInfo info;
    info.lambda = detail::to_eigen(lam);
    detail::check_lambda(info.lambda, st.s, st.kappa);
    info.xi = xi_of(info.lambda);
    std::vector<double> xi = detail::to_std(info.xi);
    std::vector<double> axi = detail::gemv(st.A, xi, nA, st.d);
    const long np = std::min(st.stored(), std::max(nA + 1, gR));
    std::vector<double> lv = lad.apply(axi, np);
    std::vector<double> ga = detail::gemv(st.G, axi, gR, std::min(gC, nA));
    std::vector<double> p = detail::add(lv, ga);

    double bb = detail::dot(st.B, st.B), aa = detail::dot(axi, axi);
    info.d_lg = -2.0 * tau * detail::dot(st.B, lv) - 2.0 * tau * detail::dot(st.B, ga) + tau * tau * bb * aa;

    detail::rank1(st.A, tau, c, xi, nc, st.d);
    detail::rank1(st.G, tau, st.B, axi, nB, nA);
    for (long i = 0; i < np; ++i) st.B[static_cast<std::size_t>(i)] -= tau * p[static_cast<std::size_t>(i)];

    st.ext_G_rows = std::max(gR, nB);
    st.ext_G_cols = std::max(gC, nA);
    if (st.drop_tolerance > 0) {
        const long na = std::max(nA, nc), nb = std::max(nB, np);
        detail::drop_small(st.A, na, st.d, st.drop_tolerance);
        detail::drop_small(st.G, st.ext_G_rows, st.ext_G_cols, st.drop_tolerance);
        for (long i = 0; i < nb; ++i)
            if (std::abs(st.B[static_cast<std::size_t>(i)]) < st.drop_tolerance) st.B[static_cast<std::size_t>(i)] = 0.0;
        st.ext_G_rows = detail::row_extent(st.G, st.ext_G_rows);
        st.ext_G_cols = detail::col_extent(st.G, st.ext_G_rows, st.ext_G_cols);
    }
    st.ext_A = detail::row_extent(st.A, std::max(nA, nc));
    st.ext_B = detail::extent(st.B, std::max(nB, np));

    long next_A = std::max(st.support_A, st.support_B + st.d);
    long next_B = std::max(st.support_A + 1, st.support_B);
    st.support_A = next_A;
    st.support_B = next_B;
    if (std::max(next_A, next_B) > st.R) st.exact_ = false;
    ++st.kappa;
    for (long i = 0; i < np; ++i)
        if (!std::isfinite(st.B[static_cast<std::size_t>(i)]))
            throw DivergenceError(st.kappa, "non-finite limit coefficients");
    return info;
}

inline LimitStepInfo advance(LimitState& st, double tau, const Objective& obj) {
    return advance_limit(st, tau, [&](const Vector& l) { return obj.xi(l); });
}

inline LimitStepInfo advance(LimitState& st, double tau, const Objective& obj, const std::vector<Sample>& batch) {
    return advance_limit(st, tau, [&](const Vector& l) { return obj.xi(l, batch); });
}

inline LimitState gd_step_limit(LimitState st, double tau, const Objective& obj) {
    advance(st, tau, obj);
    return st;
}

inline LimitState gd_step_limit(LimitState st, double tau, const DataSpec& data, const LossSpec& loss) {
    advance(st, tau, Objective(data, loss, st.s));
    return st;
}

inline double energy(const LimitState& st, const Objective& obj) { return obj.energy(raw_predictor(st)); }

inline double energy(const LimitState& st, const DataSpec& data, const LossSpec& loss) {
    return energy(st, Objective(data, loss, st.s));
}

/// 2 tr(Lambda^T G) + ||G||^2, i.e. ||Lambda + G||^2 with the infinite constant removed.
inline double lg_norm(const LimitState& st) {
    double cross = 0.0;
    const long n = st.stored();
    for (long i = 0; i < n; ++i) {
        if (i + st.d < n) cross += st.G(i, i + st.d);
        if (i >= 1) cross += st.G(i, i - 1);
    }
    return 2.0 * cross + st.G.squared_norm();
}

/// Largest absolute coefficient among the last `rows` rows (and columns of G).
inline double tail_mass(const LimitState& st, long rows) {
    double out = 0.0;
    const long n = st.stored();
    long lo = std::max<long>(0, st.R - rows);
    for (long i = lo; i < n; ++i) {
        out = std::max(out, std::abs(st.B[static_cast<std::size_t>(i)]));
        for (long z = 0; z < st.d; ++z) out = std::max(out, std::abs(st.A(i, z)));
        for (long j = 0; j < n; ++j) out = std::max({out, std::abs(st.G(i, j)), std::abs(st.G(j, i))});
    }
    return out;
}

/// Highest index (exclusive) of a nonzero row of A, B or of G in either direction.
inline long nonzero_extent(const LimitState& st) {
    long ext = 0;
    const long n = st.stored();
    for (long i = 0; i < n; ++i) {
        bool nz = st.B[static_cast<std::size_t>(i)] != 0.0;
        for (long z = 0; z < st.d && !nz; ++z) nz = st.A(i, z) != 0.0;
        for (long j = 0; j < n && !nz; ++j) nz = st.G(i, j) != 0.0 || st.G(j, i) != 0.0;
        if (nz) ext = i + 1;
    }
    return ext;
}

} // namespace wlnn

#endif
