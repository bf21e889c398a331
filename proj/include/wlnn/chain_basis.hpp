#ifndef WLNN_CHAIN_BASIS_HPP
#define WLNN_CHAIN_BASIS_HPP

#include "numerics.hpp"
#include "stats.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace wlnn {

/// A bipartite chain (i_1, ..., i_k, i) with 0-based vertices. Position p
/// (1-based) lies on one side when p is odd and on the other when p is even.
struct Chain {
    int k = 0;
    int endpoint = 0;
    std::vector<int> vertices; ///< k + 1 entries, the last one is the endpoint
};

inline constexpr double chain_budget = 1e7;

namespace detail {

inline void check_chain_budget(long m, int k, const char* what) {
    if (std::pow(static_cast<double>(m), k) > chain_budget)
        throw BudgetError(std::string(what) + ": m^k exceeds the enumeration budget");
}

// Visits every loopless chain ending at i; vertices[p] holds position p + 1.
inline void for_each_chain(int m, int i, int k, const std::function<void(const std::vector<int>&)>& visit) {
    std::vector<int> v(static_cast<std::size_t>(k + 1));
    v[static_cast<std::size_t>(k)] = i;
    std::function<void(int)> rec = [&](int pos) {
        if (pos < 0) {
            visit(v);
            return;
        }
        for (int x = 0; x < m; ++x) {
            bool clash = false;
            for (int q = pos + 2; q <= k && !clash; q += 2) clash = v[static_cast<std::size_t>(q)] == x;
            if (clash) continue;
            v[static_cast<std::size_t>(pos)] = x;
            rec(pos - 1);
        }
    };
    rec(k - 1);
}

// Product of the edge weights of a chain, Z oriented as in J_k.
inline double chain_weight(const Matrix& Z, const std::vector<int>& v) {
    double w = 1.0;
    for (std::size_t l = 1; l < v.size(); ++l) {
        // l is the 1-based position of the lower end of the edge
        w *= (l % 2 == 1) ? Z(v[l], v[l - 1]) : Z(v[l - 1], v[l]);
    }
    return w;
}

} // namespace detail

inline std::vector<Chain> enumerate_loopless_chains(int m, int i, int k) {
    if (m < 1 || k < 1) throw DimensionError("enumerate_loopless_chains: need m >= 1 and k >= 1");
    if (i < 0 || i >= m) throw DimensionError("enumerate_loopless_chains: endpoint out of range");
    detail::check_chain_budget(m, k, "enumerate_loopless_chains");
    std::vector<Chain> out;
    detail::for_each_chain(m, i, k, [&](const std::vector<int>& v) { out.push_back({k, i, v}); });
    return out;
}

enum class ChainBackend { automatic, formula, enumeration };

/// J_k by summing over every loopless chain.
inline Matrix j_vector_enumerated(int k, const Matrix& Z, const Matrix& U) {
    const long m = Z.rows();
    if (Z.cols() != m || U.rows() != m) throw DimensionError("j_vector: shape mismatch");
    if (k == 0) return U;
    detail::check_chain_budget(m, k, "j_vector");
    Matrix J = Matrix::Zero(m, U.cols());
    const double scale = std::pow(static_cast<double>(m), -0.5 * k);
    for (int i = 0; i < m; ++i) {
        detail::for_each_chain(static_cast<int>(m), i, k, [&](const std::vector<int>& v) {
            J.row(i) += detail::chain_weight(Z, v) * U.row(v.front());
        });
    }
    return J * scale;
}

/// J_k from loop-corrected matrix products (k <= 3).
inline Matrix j_vector_formula(int k, const Matrix& Z, const Matrix& U) {
    const long m = Z.rows();
    if (Z.cols() != m || U.rows() != m) throw DimensionError("j_vector: shape mismatch");
    const double md = static_cast<double>(m);
    switch (k) {
    case 0: return U;
    case 1: return Z * U / std::sqrt(md);
    case 2: {
        Vector colsq = Z.cwiseAbs2().colwise().sum().transpose();
        Matrix out = Z.transpose() * (Z * U);
        out -= colsq.asDiagonal() * U;
        return out / md;
    }
    case 3: {
        Vector colsq = Z.cwiseAbs2().colwise().sum().transpose();
        Vector rowsq = Z.cwiseAbs2().rowwise().sum();
        Matrix ZU = Z * U;
        Matrix out = Z * (Z.transpose() * ZU);
        out -= Z * (colsq.asDiagonal() * U);
        out -= rowsq.asDiagonal() * ZU;
        out += Z.array().cube().matrix() * U;
        return out / (md * std::sqrt(md));
    }
    default: throw std::invalid_argument("j_vector_formula: only k <= 3 has a closed form");
    }
}

inline Matrix j_vector(int k, const Matrix& Z, const Matrix& U, ChainBackend backend = ChainBackend::automatic) {
    if (k < 0) throw std::invalid_argument("j_vector: k must be nonnegative");
    if (backend == ChainBackend::enumeration || (backend == ChainBackend::automatic && k > 3))
        return j_vector_enumerated(k, Z, U);
    return j_vector_formula(k, Z, U);
}

/// K_k is J_k built on Z^T.
inline Vector k_vector(int k, const Matrix& Z, const Vector& V, ChainBackend backend = ChainBackend::automatic) {
    Matrix Zt = Z.transpose();
    return j_vector(k, Zt, Matrix(V), backend).col(0);
}

struct RecursionResidual {
    Matrix R;
    double norm2 = 0.0; ///< sum of squares
    double norm4 = 0.0; ///< sum of fourth powers
};

/// R_k = m^{-1/2} Y J_k - J_{k+1} - J_{k-1}, Y = Z for even k and Z^T for odd k.
inline RecursionResidual recursion_residual(int k, const Matrix& Z, const Matrix& U,
                                            ChainBackend backend = ChainBackend::automatic) {
    if (k < 0) throw std::invalid_argument("recursion_residual: k must be nonnegative");
    const double root = std::sqrt(static_cast<double>(Z.rows()));
    Matrix Jk = j_vector(k, Z, U, backend);
    RecursionResidual out;
    out.R = (k % 2 == 0) ? Matrix(Z * Jk) : Matrix(Z.transpose() * Jk);
    out.R /= root;
    out.R -= j_vector(k + 1, Z, U, backend);
    if (k >= 1) out.R -= j_vector(k - 1, Z, U, backend);
    out.norm2 = out.R.squaredNorm();
    out.norm4 = out.R.array().square().square().sum();
    return out;
}

/// S_k, the same residual for the K family.
inline RecursionResidual recursion_residual_k(int k, const Matrix& Z, const Vector& V,
                                              ChainBackend backend = ChainBackend::automatic) {
    Matrix Zt = Z.transpose();
    return recursion_residual(k, Zt, Matrix(V), backend);
}

struct DefectRecord {
    int k1 = 0, k2 = 0;
    double jj = 0.0; ///< ||m^{-1} J_{k1}^T J_{k2} - delta Id||_F^2
    double jk = 0.0; ///< ||m^{-1} J_{k1}^T K_{k2}||^2
    double kk = 0.0; ///< (m^{-1} K_{k1} . K_{k2} - delta)^2
};

struct ChainBasisReport {
    int m = 0;
    int k_max = 0;
    std::vector<Matrix> J;
    std::vector<Vector> K;
    std::vector<DefectRecord> defects;
    std::vector<double> residual_R; ///< ||R_k||^2 for k < k_max
    std::vector<double> residual_S;

    double total_defect() const {
        double acc = 0.0;
        for (const auto& d : defects) acc += d.jj + d.jk + d.kk;
        return acc;
    }
};

/// Defects over all ordered pairs k1, k2 <= k_max.
inline std::vector<DefectRecord> orthonormality_defects(const std::vector<Matrix>& J, const std::vector<Vector>& K) {
    if (J.empty() || J.size() != K.size()) throw DimensionError("orthonormality_defects: need matching J and K lists");
    const double m = static_cast<double>(J.front().rows());
    const long d = J.front().cols();
    std::vector<DefectRecord> out;
    for (std::size_t a = 0; a < J.size(); ++a) {
        for (std::size_t b = 0; b < J.size(); ++b) {
            DefectRecord r;
            r.k1 = static_cast<int>(a);
            r.k2 = static_cast<int>(b);
            Matrix jj = J[a].transpose() * J[b] / m;
            if (a == b) jj -= Matrix::Identity(d, d);
            r.jj = jj.squaredNorm();
            r.jk = (J[a].transpose() * K[b] / m).squaredNorm();
            double kk = K[a].dot(K[b]) / m - (a == b ? 1.0 : 0.0);
            r.kk = kk * kk;
            out.push_back(r);
        }
    }
    return out;
}

inline ChainBasisReport chain_basis_report(int k_max, const Matrix& Z, const Matrix& U, const Vector& V,
                                           ChainBackend backend = ChainBackend::automatic) {
    if (Z.rows() != Z.cols() || U.rows() != Z.rows() || V.size() != Z.rows())
        throw DimensionError("chain_basis_report: shape mismatch");
    ChainBasisReport rep;
    rep.m = static_cast<int>(Z.rows());
    rep.k_max = k_max;
    for (int k = 0; k <= k_max; ++k) {
        rep.J.push_back(j_vector(k, Z, U, backend));
        rep.K.push_back(k_vector(k, Z, V, backend));
    }
    rep.defects = orthonormality_defects(rep.J, rep.K);
    for (int k = 0; k < k_max; ++k) {
        rep.residual_R.push_back(recursion_residual(k, Z, U, backend).norm2);
        rep.residual_S.push_back(recursion_residual_k(k, Z, V, backend).norm2);
    }
    return rep;
}

/// Gaussian draws of (Z, U, V) for one seed of a chain-basis experiment.
struct ChainSample {
    Matrix Z, U;
    Vector V;
};

inline ChainSample draw_chain_sample(int m, int d, const RngStream& rng, Dist dist = Dist::gaussian) {
    RngStream rz = rng.child(3), ru = rng.child(1), rv = rng.child(2);
    return {sample_matrix(rz, m, m, dist), sample_matrix(ru, m, d, Dist::gaussian),
            sample_vector(rv, m, Dist::gaussian)};
}

struct MomentRow {
    int m = 0;
    std::string family; ///< "J" or "K"
    int k = 0;
    int p = 0;
    double moment = 0.0;
    double stderr_ = 0.0;
    double target = 0.0;
};

struct MixedMomentRow {
    int m = 0;
    int k1 = 0, k2 = 0;
    std::string statistic; ///< "JJ", "J2J2" or "JK"
    double moment = 0.0;
    double stderr_ = 0.0;
    double target = 0.0;
};

struct MomentTable {
    std::vector<MomentRow> single;
    std::vector<MixedMomentRow> mixed;
};

inline double gaussian_moment(int p) {
    if (p % 2 == 1) return 0.0;
    double out = 1.0;
    for (int q = p - 1; q > 1; q -= 2) out *= q;
    return out;
}

/// Per-seed averages over the m exchangeable coordinates, then mean and
/// standard error across seeds.
inline MomentTable moment_estimates(int m, const std::vector<int>& k_list, const std::vector<ChainSample>& samples) {
    if (samples.empty()) throw std::invalid_argument("moment_estimates: no samples");
    MomentTable tab;
    const std::size_t nk = k_list.size();
    // acc[family][k][p-1] -> per-seed values
    std::vector<std::vector<std::vector<std::vector<double>>>> acc(
        2, std::vector<std::vector<std::vector<double>>>(nk, std::vector<std::vector<double>>(4)));
    std::vector<std::vector<double>> jj, j2j2, jk;
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t a = 0; a < nk; ++a)
        for (std::size_t b = a + 1; b < nk; ++b) pairs.emplace_back(static_cast<int>(a), static_cast<int>(b));
    jj.resize(pairs.size());
    j2j2.resize(pairs.size());
    jk.resize(nk);
    for (const auto& smp : samples) {
        std::vector<Vector> J, K;
        for (int k : k_list) {
            J.push_back(j_vector(k, smp.Z, smp.U.col(0)).col(0));
            K.push_back(k_vector(k, smp.Z, smp.V));
        }
        for (int f = 0; f < 2; ++f) {
            for (std::size_t a = 0; a < nk; ++a) {
                const Vector& x = f == 0 ? J[a] : K[a];
                for (int p = 1; p <= 4; ++p)
                    acc[static_cast<std::size_t>(f)][a][static_cast<std::size_t>(p - 1)].push_back(
                        x.array().pow(p).mean());
            }
        }
        for (std::size_t q = 0; q < pairs.size(); ++q) {
            const Vector& x = J[static_cast<std::size_t>(pairs[q].first)];
            const Vector& y = J[static_cast<std::size_t>(pairs[q].second)];
            jj[q].push_back((x.array() * y.array()).mean());
            j2j2[q].push_back((x.array().square() * y.array().square()).mean());
        }
        for (std::size_t a = 0; a < nk; ++a) jk[a].push_back((J[a].array() * K[a].array()).mean());
    }
    for (int f = 0; f < 2; ++f) {
        for (std::size_t a = 0; a < nk; ++a) {
            for (int p = 1; p <= 4; ++p) {
                MeanSe ms = mean_se(acc[static_cast<std::size_t>(f)][a][static_cast<std::size_t>(p - 1)]);
                tab.single.push_back({m, f == 0 ? "J" : "K", k_list[a], p, ms.mean, ms.se, gaussian_moment(p)});
            }
        }
    }
    for (std::size_t q = 0; q < pairs.size(); ++q) {
        int k1 = k_list[static_cast<std::size_t>(pairs[q].first)], k2 = k_list[static_cast<std::size_t>(pairs[q].second)];
        MeanSe a = mean_se(jj[q]), b = mean_se(j2j2[q]);
        tab.mixed.push_back({m, k1, k2, "JJ", a.mean, a.se, 0.0});
        tab.mixed.push_back({m, k1, k2, "J2J2", b.mean, b.se, 1.0});
    }
    for (std::size_t a = 0; a < nk; ++a) {
        MeanSe c = mean_se(jk[a]);
        tab.mixed.push_back({m, k_list[a], k_list[a], "JK", c.mean, c.se, 0.0});
    }
    return tab;
}

} // namespace wlnn

#endif
