#ifndef WLNN_MULTILAYER_HPP
#define WLNN_MULTILAYER_HPP

#include "data.hpp"
#include "finite_width.hpp"
#include "kernels.hpp"
#include "limit_system.hpp"
#include "numerics.hpp"
#include "stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace wlnn {

using LayerSequence = std::vector<int>;

/// Checks the adjacency rule for an element of S^L(ell).
inline bool valid_sequence(int L, int ell, const LayerSequence& s) {
    if (s.empty() || s.back() != ell) return false;
    if (s.front() != 0 && s.front() != L) return false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] < 0 || s[i] > L) return false;
        if (i > 0 && std::abs(s[i] - s[i - 1]) != 1) return false;
    }
    return true;
}

/// The sequences of S^L(ell) ordered by length, then lexicographically.
/// Ids are positions in that order and never change as the space grows.
class SequenceSpace {
public:
    SequenceSpace() = default;
    SequenceSpace(int L, int ell) : L_(L), ell_(ell) {
        if (L < 1 || ell < 0 || ell > L) throw DimensionError("SequenceSpace: need 0 <= ell <= L, L >= 1");
    }

    int L() const { return L_; }
    int ell() const { return ell_; }
    long size() const { return static_cast<long>(seqs_.size()); }
    int max_len() const { return max_len_; }
    const LayerSequence& at(long id) const { return seqs_[static_cast<std::size_t>(id)]; }

    /// Adds every sequence of length <= len.
    void extend_to(int len) {
        for (int n = max_len_ + 1; n <= len; ++n) {
            LayerSequence cur;
            for (int start : starts()) {
                cur.assign(1, start);
                grow(cur, n);
            }
            max_len_ = n;
        }
    }

    /// Id of s, or -1 when s is longer than the current space or not in it.
    long find(const LayerSequence& s) const {
        auto it = ids_.find(s);
        return it == ids_.end() ? -1 : it->second;
    }

    long id_of(const LayerSequence& s) {
        if (static_cast<int>(s.size()) > max_len_) extend_to(static_cast<int>(s.size()));
        long id = find(s);
        if (id < 0) throw DimensionError("SequenceSpace: sequence not in S^L(ell)");
        return id;
    }

    /// Number of sequences of length <= len (extending if needed).
    long count_up_to(int len) {
        extend_to(len);
        long n = 0;
        for (const auto& s : seqs_)
            if (static_cast<int>(s.size()) <= len) ++n;
        return n;
    }

private:
    std::vector<int> starts() const {
        if (L_ == 0) return {0};
        return {0, L_};
    }

    void grow(LayerSequence& cur, int n) {
        const int len = static_cast<int>(cur.size());
        const int remaining = n - len;
        if (std::abs(cur.back() - ell_) > remaining || (remaining - std::abs(cur.back() - ell_)) % 2 != 0) return;
        if (remaining == 0) {
            ids_.emplace(cur, static_cast<long>(seqs_.size()));
            seqs_.push_back(cur);
            return;
        }
        for (int next : {cur.back() - 1, cur.back() + 1}) {
            if (next < 0 || next > L_) continue;
            cur.push_back(next);
            grow(cur, n);
            cur.pop_back();
        }
    }

    int L_ = 1, ell_ = 0, max_len_ = 0;
    std::vector<LayerSequence> seqs_;
    std::map<LayerSequence, long> ids_;
};

inline std::vector<LayerSequence> enumerate_sequences(int L, int ell, int max_len) {
    if (max_len < 1) throw std::invalid_argument("enumerate_sequences: max_len must be positive");
    SequenceSpace sp(L, ell);
    sp.extend_to(max_len);
    std::vector<LayerSequence> out;
    for (long i = 0; i < sp.size(); ++i) out.push_back(sp.at(i));
    return out;
}

/// Binary index N_ell(s) of an element of S^2(ell).
inline long sequence_to_index(int L, const LayerSequence& s) {
    if (L != 2) throw std::invalid_argument("sequence_to_index: only L = 2 has an explicit index");
    if (s.empty() || !valid_sequence(2, s.back(), s)) throw DimensionError("sequence_to_index: not a valid sequence");
    const int M = static_cast<int>(s.size()) - 1;
    const int sigma = M / 2;
    // 2^{i-2} s_j and 2^{i-1} s_j are integers since s_j is 0 or 2
    if (s.back() == 1) {
        long N = 1L << (sigma + 1);
        for (int i = 0; i <= sigma; ++i) N += (1L << i) * (s[static_cast<std::size_t>(2 * (sigma - i))] / 2);
        return N;
    }
    long N = 1L << sigma;
    for (int i = 1; i <= sigma; ++i) N += (1L << (i - 1)) * (s[static_cast<std::size_t>(2 * (sigma - i))] / 2);
    return N;
}

/// Inverse of sequence_to_index on S^2(ell).
inline LayerSequence index_to_sequence(int ell, long N) {
    if (ell < 0 || ell > 2) throw DimensionError("index_to_sequence: ell must be 0, 1 or 2");
    if (N < (ell == 1 ? 2 : 1)) throw DimensionError("index_to_sequence: index out of range");
    int top = 0;
    while ((N >> (top + 1)) != 0) ++top;
    LayerSequence s;
    if (ell == 1) {
        const int sigma = top - 1;
        s.assign(static_cast<std::size_t>(2 * sigma + 2), 1);
        for (int i = 0; i <= sigma; ++i) s[static_cast<std::size_t>(2 * (sigma - i))] = 2 * ((N >> i) & 1);
    } else {
        const int sigma = top;
        s.assign(static_cast<std::size_t>(2 * sigma + 1), 1);
        for (int i = 1; i <= sigma; ++i) s[static_cast<std::size_t>(2 * (sigma - i))] = 2 * ((N >> (i - 1)) & 1);
        s.back() = ell;
    }
    return s;
}

/// The ladder matrices as displayed for L = 2 (1-based (i, j) stored at
/// (i-1, j-1)); for L = 1 the d = 1 three-layer operator.
inline Matrix lambda_ell(int L, int ell, long R) {
    if (R < 1) throw DimensionError("lambda_ell: R must be positive");
    if (L == 1) {
        if (ell != 1) throw DimensionError("lambda_ell: ell must be 1 when L = 1");
        return LadderOperator{1}.dense(R);
    }
    if (L != 2 || (ell != 1 && ell != 2)) throw std::invalid_argument("lambda_ell: explicit only for L = 2, ell in {1, 2}");
    Matrix out = Matrix::Zero(R, R);
    for (long i = 1; i <= R; ++i)
        for (long j = 1; j <= R; ++j) {
            bool on = i == j || (ell == 1 ? 2 * i == j : 2 * j + 1 == i);
            if (on) out(i - 1, j - 1) = 1.0;
        }
    return out;
}

namespace detail {

// (s, ell) when s ends at ell - 1.
inline LayerSequence append(const LayerSequence& s, int ell) {
    LayerSequence out = s;
    out.push_back(ell);
    return out;
}

// s without its last entry when s = (s', ell, ell - 1) for the up map, i.e.
// when the entry before last equals `ell`.
inline bool has_backtrack(const LayerSequence& s, int ell) { return s.size() >= 2 && s[s.size() - 2] == ell; }

inline LayerSequence drop_last(const LayerSequence& s) { return LayerSequence(s.begin(), s.end() - 1); }

} // namespace detail

/// Ladder matrix of layer ell implied by the basis relations, in the binary
/// indexing (entry (N_ell(t) - 1, N_{ell-1}(s) - 1) is one when Psi^ell_t appears
/// in m^{-1/2} Z_ell Psi^{ell-1}_s). Only L = 2.
inline Matrix ladder_from_relations(int ell, long R) {
    if (ell != 1 && ell != 2) throw DimensionError("ladder_from_relations: ell must be 1 or 2");
    Matrix out = Matrix::Zero(R, R);
    int len = 1;
    while ((1L << (len / 2)) <= R + 1) ++len;
    for (const auto& s : enumerate_sequences(2, ell - 1, len + 1)) {
        long col = sequence_to_index(2, s);
        if (col > R) continue;
        std::vector<LayerSequence> targets{detail::append(s, ell)};
        if (detail::has_backtrack(s, ell)) targets.push_back(detail::drop_last(s));
        for (const auto& t : targets) {
            long row = sequence_to_index(2, t);
            if (row <= R) out(row - 1, col - 1) = 1.0;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Finite width

struct MultiFiniteState {
    int m = 0;
    int L = 1;
    Matrix U;               ///< m x 1
    std::vector<Matrix> W;  ///< W[l-1] is W_l
    Vector V;
    std::vector<Matrix> Z;  ///< Z[l-1] is Z_l
    long kappa = 0;
    double s = 1.0;
};

inline MultiFiniteState init_multi_finite(int m, int L, const RngStream& rng, InitSpec init = {}, double s = 1.0) {
    if (m < 1 || L < 1) throw DimensionError("init_multi_finite: need m >= 1 and L >= 1");
    MultiFiniteState st;
    st.m = m;
    st.L = L;
    st.s = s;
    RngStream ru = rng.child(stream_label::U), rv = rng.child(stream_label::V);
    st.U = sample_matrix(ru, m, 1, init.U);
    st.V = sample_vector(rv, m, init.V);
    for (int l = 1; l <= L; ++l) {
        RngStream rz = rng.child(stream_label::Z + static_cast<std::uint64_t>(l - 1));
        st.Z.push_back(sample_matrix(rz, m, m, init.Z));
        st.W.push_back(Matrix::Zero(m, m));
    }
    return st;
}

namespace detail {
// g[l] = prod_{i>l} [.]^T V for l = 0..L
inline std::vector<Vector> multi_backward(const MultiFiniteState& st) {
    std::vector<Vector> g(static_cast<std::size_t>(st.L + 1));
    g[static_cast<std::size_t>(st.L)] = st.V;
    for (int l = st.L; l >= 1; --l)
        g[static_cast<std::size_t>(l - 1)] =
            backward(st.Z[static_cast<std::size_t>(l - 1)], st.W[static_cast<std::size_t>(l - 1)], g[static_cast<std::size_t>(l)]);
    return g;
}
} // namespace detail

inline Vector raw_predictor(const MultiFiniteState& st) {
    auto g = detail::multi_backward(st);
    return (st.U.transpose() * g[0]) / static_cast<double>(st.m);
}

inline double predictor_multilayer_finite(const MultiFiniteState& st) { return st.s * raw_predictor(st)(0); }

template <class XiFn>
void advance_multi_finite(MultiFiniteState& st, double tau, XiFn&& xi_of) {
    if (!(tau > 0)) throw std::invalid_argument("step size must be positive");
    std::vector<Vector> g = detail::multi_backward(st);
    Vector lambda = (st.U.transpose() * g[0]) / static_cast<double>(st.m);
    detail::check_lambda(lambda, st.s, st.kappa);
    Vector xi = xi_of(lambda);
    std::vector<Vector> p(static_cast<std::size_t>(st.L + 1));
    p[0] = st.U * xi;
    for (int l = 1; l <= st.L; ++l)
        p[static_cast<std::size_t>(l)] =
            detail::forward(st.Z[static_cast<std::size_t>(l - 1)], st.W[static_cast<std::size_t>(l - 1)], p[static_cast<std::size_t>(l - 1)]);
    detail::rank1_update(st.U, tau, g[0], xi);
    for (int l = 1; l <= st.L; ++l)
        detail::rank1_update(st.W[static_cast<std::size_t>(l - 1)], tau, g[static_cast<std::size_t>(l)],
                             p[static_cast<std::size_t>(l - 1)]);
    st.V -= tau * p[static_cast<std::size_t>(st.L)];
    ++st.kappa;
    if (!st.V.allFinite() || !st.U.allFinite()) throw DivergenceError(st.kappa, "non-finite weights");
}

inline void check_scalar_objective(const Objective& obj) {
    if (obj.moments().dim() != 1) throw DimensionError("multilayer networks take one-dimensional inputs");
}

inline void advance(MultiFiniteState& st, double tau, const Objective& obj) {
    check_scalar_objective(obj);
    advance_multi_finite(st, tau, [&](const Vector& l) { return obj.xi(l); });
}

inline MultiFiniteState gd_step_multilayer_finite(MultiFiniteState st, double tau, const DataSpec& data,
                                                  const LossSpec& loss) {
    advance(st, tau, Objective(data, loss, st.s));
    return st;
}

// ---------------------------------------------------------------------------
// Infinite width

/// Coefficients of the multilayer limit, indexed by layer sequences.
///
/// Layer ell coefficients live on the ids of spaces[ell]. Every array covers
/// all sequences up to the current window length, and the window is widened
/// before each step so that the representation stays exact.
struct MultiLimitState {
    int L = 1;
    double s = 1.0;
    long kappa = 0;
    double drop_tolerance = 0.0;
    std::vector<SequenceSpace> spaces; ///< L + 1 spaces
    detail::GrowMatrix A;              ///< n_0 x 1
    std::vector<detail::GrowMatrix> G; ///< G[l-1] is n_l x n_{l-1}
    std::vector<double> B;             ///< n_L
    int window = 1;                    ///< all spaces hold the sequences of length <= window

    long n(int ell) const { return spaces[static_cast<std::size_t>(ell)].size(); }

    /// Grows every space to sequences of length <= len, padding with zeros.
    void widen(int len) {
        if (len <= window) return;
        for (auto& sp : spaces) sp.extend_to(len);
        window = len;
        A.resize(n(0), 1);
        for (int l = 1; l <= L; ++l) G[static_cast<std::size_t>(l - 1)].resize(n(l), n(l - 1));
        B.resize(static_cast<std::size_t>(n(L)), 0.0);
    }
};

inline MultiLimitState init_multi_limit(int L, double s = 1.0) {
    if (L < 1) throw DimensionError("init_multi_limit: L must be positive");
    MultiLimitState st;
    st.L = L;
    st.s = s;
    for (int l = 0; l <= L; ++l) {
        st.spaces.emplace_back(L, l);
        st.spaces.back().extend_to(1);
    }
    st.window = 1;
    st.A.resize(st.n(0), 1);
    st.G.resize(static_cast<std::size_t>(L));
    for (int l = 1; l <= L; ++l) st.G[static_cast<std::size_t>(l - 1)].resize(st.n(l), st.n(l - 1));
    st.B.assign(static_cast<std::size_t>(st.n(L)), 0.0);
    st.A(st.spaces[0].id_of({0}), 0) = 1.0;
    st.B[static_cast<std::size_t>(st.spaces[static_cast<std::size_t>(L)].id_of({L}))] = 1.0;
    return st;
}

namespace detail {

// Lambda_ell v for v on layer ell - 1, by scattering each nonzero entry.
inline std::vector<double> multi_lambda(MultiLimitState& st, int ell, const std::vector<double>& v) {
    auto& src = st.spaces[static_cast<std::size_t>(ell - 1)];
    auto& dst = st.spaces[static_cast<std::size_t>(ell)];
    std::vector<double> out(static_cast<std::size_t>(dst.size()), 0.0);
    for (long i = 0; i < src.size(); ++i) {
        const double x = v[static_cast<std::size_t>(i)];
        if (x == 0.0) continue;
        const LayerSequence& s = src.at(i);
        out[static_cast<std::size_t>(dst.id_of(append(s, ell)))] += x;
        if (has_backtrack(s, ell)) out[static_cast<std::size_t>(dst.id_of(drop_last(s)))] += x;
    }
    return out;
}

// Lambda_ell^T v for v on layer ell.
inline std::vector<double> multi_lambda_t(MultiLimitState& st, int ell, const std::vector<double>& v) {
    auto& src = st.spaces[static_cast<std::size_t>(ell)];
    auto& dst = st.spaces[static_cast<std::size_t>(ell - 1)];
    std::vector<double> out(static_cast<std::size_t>(dst.size()), 0.0);
    for (long i = 0; i < src.size(); ++i) {
        const double x = v[static_cast<std::size_t>(i)];
        if (x == 0.0) continue;
        const LayerSequence& t = src.at(i);
        out[static_cast<std::size_t>(dst.id_of(append(t, ell - 1)))] += x;
        if (has_backtrack(t, ell - 1)) out[static_cast<std::size_t>(dst.id_of(drop_last(t)))] += x;
    }
    return out;
}

inline int longest_nonzero(const MultiLimitState& st) {
    int len = 1;
    auto upd = [&](int ell, long id) {
        len = std::max(len, static_cast<int>(st.spaces[static_cast<std::size_t>(ell)].at(id).size()));
    };
    for (long i = 0; i < st.n(0); ++i)
        if (st.A(i, 0) != 0.0) upd(0, i);
    for (long i = 0; i < st.n(st.L); ++i)
        if (st.B[static_cast<std::size_t>(i)] != 0.0) upd(st.L, i);
    for (int l = 1; l <= st.L; ++l) {
        const auto& G = st.G[static_cast<std::size_t>(l - 1)];
        for (long i = 0; i < G.rows(); ++i)
            for (long j = 0; j < G.cols(); ++j)
                if (G(i, j) != 0.0) {
                    upd(l, i);
                    upd(l - 1, j);
                }
    }
    return len;
}

// c[l] = prod_{i>l} (Lambda_i + G_i)^T B
inline std::vector<std::vector<double>> multi_limit_backward(MultiLimitState& st) {
    std::vector<std::vector<double>> c(static_cast<std::size_t>(st.L + 1));
    c[static_cast<std::size_t>(st.L)] = st.B;
    for (int l = st.L; l >= 1; --l) {
        const auto& cl = c[static_cast<std::size_t>(l)];
        c[static_cast<std::size_t>(l - 1)] =
            add(multi_lambda_t(st, l, cl), gemv_t(st.G[static_cast<std::size_t>(l - 1)], cl, st.n(l), st.n(l - 1)));
    }
    return c;
}

} // namespace detail

/// Unscaled predictor A^T prod (Lambda_l^T + G_l^T) B.
inline double raw_predictor(const MultiLimitState& state) {
    MultiLimitState st = state;
    st.widen(detail::longest_nonzero(st) + st.L);
    auto c = detail::multi_limit_backward(st);
    return gemv_t(st.A, c[0], st.n(0), 1)[0];
}

inline double predictor_multilayer_limit(const MultiLimitState& st) { return st.s * raw_predictor(st); }

template <class XiFn>
void advance_multi_limit(MultiLimitState& st, double tau, XiFn&& xi_of) {
    if (!(tau > 0)) throw std::invalid_argument("step size must be positive");
    st.widen(detail::longest_nonzero(st) + st.L);
    const int L = st.L;
    auto c = detail::multi_limit_backward(st);
    std::vector<double> lam = detail::gemv_t(st.A, c[0], st.n(0), 1);
    Vector lambda = detail::to_eigen(lam);
    detail::check_lambda(lambda, st.s, st.kappa);
    std::vector<double> xi = detail::to_std(xi_of(lambda));
    std::vector<std::vector<double>> p(static_cast<std::size_t>(L + 1));
    p[0] = detail::gemv(st.A, xi, st.n(0), 1);
    for (int l = 1; l <= L; ++l) {
        const auto& pl = p[static_cast<std::size_t>(l - 1)];
        p[static_cast<std::size_t>(l)] = detail::add(detail::multi_lambda(st, l, pl),
                                                     detail::gemv(st.G[static_cast<std::size_t>(l - 1)], pl, st.n(l), st.n(l - 1)));
    }
    detail::rank1(st.A, tau, c[0], xi, st.n(0), 1);
    for (int l = 1; l <= L; ++l)
        detail::rank1(st.G[static_cast<std::size_t>(l - 1)], tau, c[static_cast<std::size_t>(l)],
                      p[static_cast<std::size_t>(l - 1)], st.n(l), st.n(l - 1));
    for (long i = 0; i < st.n(L); ++i) st.B[static_cast<std::size_t>(i)] -= tau * p[static_cast<std::size_t>(L)][static_cast<std::size_t>(i)];
    if (st.drop_tolerance > 0) {
        detail::drop_small(st.A, st.n(0), 1, st.drop_tolerance);
        for (int l = 1; l <= L; ++l)
            detail::drop_small(st.G[static_cast<std::size_t>(l - 1)], st.n(l), st.n(l - 1), st.drop_tolerance);
        for (double& b : st.B)
            if (std::abs(b) < st.drop_tolerance) b = 0.0;
    }
    ++st.kappa;
    for (double b : st.B)
        if (!std::isfinite(b)) throw DivergenceError(st.kappa, "non-finite limit coefficients");
}

inline void advance(MultiLimitState& st, double tau, const Objective& obj) {
    check_scalar_objective(obj);
    advance_multi_limit(st, tau, [&](const Vector& l) { return obj.xi(l); });
}

inline MultiLimitState gd_step_multilayer_limit(MultiLimitState st, double tau, const DataSpec& data,
                                                const LossSpec& loss) {
    advance(st, tau, Objective(data, loss, st.s));
    return st;
}

/// Dense arrays of an L = 2 limit state in the binary indexing, truncated to
/// indices <= R (entry N is stored at N - 1).
struct DenseMultiLimit {
    Vector A, B;
    Matrix G1, G2;
};

inline DenseMultiLimit dense_binary(const MultiLimitState& st, long R) {
    if (st.L != 2) throw std::invalid_argument("dense_binary: L = 2 only");
    DenseMultiLimit out{Vector::Zero(R), Vector::Zero(R), Matrix::Zero(R, R), Matrix::Zero(R, R)};
    auto idx = [&](int ell, long id) { return sequence_to_index(2, st.spaces[static_cast<std::size_t>(ell)].at(id)); };
    auto put = [&](double x, long N) {
        if (x != 0.0 && N > R) throw DimensionError("dense_binary: truncation too small");
        return N <= R;
    };
    for (long i = 0; i < st.n(0); ++i)
        if (put(st.A(i, 0), idx(0, i))) out.A(idx(0, i) - 1) = st.A(i, 0);
    for (long i = 0; i < st.n(2); ++i)
        if (put(st.B[static_cast<std::size_t>(i)], idx(2, i))) out.B(idx(2, i) - 1) = st.B[static_cast<std::size_t>(i)];
    for (int l = 1; l <= 2; ++l) {
        const auto& G = st.G[static_cast<std::size_t>(l - 1)];
        Matrix& D = l == 1 ? out.G1 : out.G2;
        for (long i = 0; i < G.rows(); ++i)
            for (long j = 0; j < G.cols(); ++j) {
                long r = idx(l, i), c = idx(l - 1, j);
                if (put(G(i, j), std::max(r, c))) D(r - 1, c - 1) = G(i, j);
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Basis oracle

inline constexpr double psi_budget = 1e7;

/// Psi^ell_s by direct summation over loopless index choices.
/// Zs[l-1] is Z_l; psi0 and psiL are the vectors of the sequences (0) and (L).
inline Vector psi_basis_oracle(const LayerSequence& seq, const std::vector<Matrix>& Zs, const Vector& psi0,
                               const Vector& psiL) {
    const int L = static_cast<int>(Zs.size());
    if (L < 1 || !valid_sequence(L, seq.back(), seq)) throw DimensionError("psi_basis_oracle: invalid sequence");
    const long m = psi0.size();
    const int M = static_cast<int>(seq.size()) - 1;
    if (std::pow(static_cast<double>(m), M) > psi_budget) throw BudgetError("psi_basis_oracle: m^M exceeds budget");
    const Vector& seed = seq.front() == 0 ? psi0 : psiL;
    Vector out = Vector::Zero(m);
    std::vector<long> idx(static_cast<std::size_t>(M + 1));
    // weight of the edge between positions j - 1 and j
    auto edge = [&](int j) {
        int a = seq[static_cast<std::size_t>(j - 1)], b = seq[static_cast<std::size_t>(j)];
        long ia = idx[static_cast<std::size_t>(j - 1)], ib = idx[static_cast<std::size_t>(j)];
        if (b == a + 1) return Zs[static_cast<std::size_t>(b - 1)](ib, ia);
        return Zs[static_cast<std::size_t>(a - 1)](ia, ib);
    };
    struct Rec {
        const std::function<double(int)>* edge;
        std::vector<long>* idx;
        const LayerSequence* seq;
        const Vector* seed;
        long m;
        double run(int pos, double w) const {
            double acc = 0.0;
            for (long x = 0; x < m; ++x) {
                bool clash = false;
                for (std::size_t q = static_cast<std::size_t>(pos) + 1; q < seq->size() && !clash; ++q)
                    clash = (*idx)[q] == x && (*seq)[q] == (*seq)[static_cast<std::size_t>(pos)];
                if (clash) continue;
                (*idx)[static_cast<std::size_t>(pos)] = x;
                double wx = w * (*edge)(pos + 1);
                acc += pos == 0 ? wx * (*seed)(x) : run(pos - 1, wx);
            }
            return acc;
        }
    };
    std::function<double(int)> edge_fn = edge;
    Rec rec{&edge_fn, &idx, &seq, &seed, m};
    for (long i = 0; i < m; ++i) {
        idx[static_cast<std::size_t>(M)] = i;
        out(i) = M == 0 ? seed(i) : rec.run(M - 1, 1.0);
    }
    return out * std::pow(static_cast<double>(m), -0.5 * M);
}

struct RelationResidualRow {
    int m = 0;
    std::string relation; ///< "rel1_2", "rel1_25", "rel2_2", "rel2_25" or "ortho"
    long j = 0;
    double residual = 0.0; ///< mean over seeds of ||lhs - rhs||^2 / m
    double stderr_ = 0.0;
    bool skipped = false;
};

struct RelationSample {
    Matrix Z1, Z2;
    Vector psi0, psi2;
};

inline RelationSample draw_relation_sample(int m, const RngStream& rng) {
    RngStream r1 = rng.child(stream_label::Z), r2 = rng.child(stream_label::Z + 1);
    RngStream a = rng.child(stream_label::U), b = rng.child(stream_label::V);
    return {sample_matrix(r1, m, m, Dist::gaussian), sample_matrix(r2, m, m, Dist::gaussian),
            sample_vector(a, m, Dist::gaussian), sample_vector(b, m, Dist::gaussian)};
}

/// Residuals of the four explicit L = 2 relations for j = 1..j_max, plus the
/// mean squared orthonormality defect of the vectors involved ("ortho", j = 0).
inline std::vector<RelationResidualRow> verify_relations_L2(int m, long j_max, const std::vector<RelationSample>& samples) {
    if (samples.empty()) throw std::invalid_argument("verify_relations_L2: no samples");
    const double inv = 1.0 / std::sqrt(static_cast<double>(m));
    const char* names[4] = {"rel1_2", "rel1_25", "rel2_2", "rel2_25"};
    std::vector<std::vector<std::vector<double>>> res(4, std::vector<std::vector<double>>(static_cast<std::size_t>(j_max + 1)));
    std::vector<std::vector<bool>> skipped(4, std::vector<bool>(static_cast<std::size_t>(j_max + 1), false));
    std::vector<double> ortho;
    for (const auto& smp : samples) {
        std::vector<Matrix> Zs{smp.Z1, smp.Z2};
        std::map<std::pair<int, long>, Vector> cache;
        auto psi = [&](int ell, long N) -> const Vector* {
            if (N < (ell == 1 ? 2 : 1)) return nullptr;
            auto key = std::make_pair(ell, N);
            auto it = cache.find(key);
            if (it == cache.end())
                it = cache.emplace(key, psi_basis_oracle(index_to_sequence(ell, N), Zs, smp.psi0, smp.psi2)).first;
            return &it->second;
        };
        for (long j = 1; j <= j_max; ++j) {
            for (int r = 0; r < 4; ++r) {
                const int src = r == 0 ? 0 : (r == 1 ? 2 : 1);
                const Vector* x = psi(src, j);
                if (!x) {
                    skipped[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)] = true;
                    continue;
                }
                Vector lhs, rhs;
                switch (r) {
                case 0:
                    lhs = inv * (smp.Z1 * *x);
                    rhs = Vector::Zero(m);
                    if (auto y = psi(1, j)) rhs += *y;
                    rhs += *psi(1, 2 * j);
                    break;
                case 1:
                    lhs = inv * (smp.Z2.transpose() * *x);
                    rhs = Vector::Zero(m);
                    if (auto y = psi(1, j)) rhs += *y;
                    rhs += *psi(1, 2 * j + 1);
                    break;
                case 2:
                    lhs = inv * (smp.Z1.transpose() * *x);
                    rhs = *psi(0, j);
                    if (j % 2 == 0) rhs += *psi(0, j / 2);
                    break;
                default:
                    lhs = inv * (smp.Z2 * *x);
                    rhs = *psi(2, j);
                    if (j % 2 == 1) rhs += *psi(2, (j - 1) / 2);
                    break;
                }
                res[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)].push_back((lhs - rhs).squaredNorm() / m);
            }
        }
        std::vector<const Vector*> all;
        for (auto& kv : cache) all.push_back(&kv.second);
        double acc = 0.0;
        long pairs = 0;
        for (std::size_t a = 0; a < all.size(); ++a)
            for (std::size_t b = a; b < all.size(); ++b) {
                double g = all[a]->dot(*all[b]) / m - (a == b ? 1.0 : 0.0);
                acc += g * g;
                ++pairs;
            }
        ortho.push_back(acc / static_cast<double>(pairs));
    }
    std::vector<RelationResidualRow> out;
    for (int r = 0; r < 4; ++r)
        for (long j = 1; j <= j_max; ++j) {
            RelationResidualRow row;
            row.m = m;
            row.relation = names[r];
            row.j = j;
            row.skipped = skipped[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)];
            if (!row.skipped) {
                MeanSe ms = mean_se(res[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)]);
                row.residual = ms.mean;
                row.stderr_ = ms.se;
            }
            out.push_back(row);
        }
    MeanSe o = mean_se(ortho);
    out.push_back({m, "ortho", 0, o.mean, o.se, false});
    return out;
}

} // namespace wlnn

#endif
