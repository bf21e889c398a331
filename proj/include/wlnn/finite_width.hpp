#ifndef WLNN_FINITE_WIDTH_HPP
#define WLNN_FINITE_WIDTH_HPP

#include "data.hpp"
#include "kernels.hpp"
#include "numerics.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace wlnn {

/// Stream labels used to derive per-object child streams from a run stream.
namespace stream_label {
inline constexpr std::uint64_t U = 1;
inline constexpr std::uint64_t V = 2;
inline constexpr std::uint64_t Z = 3; ///< Z_l uses Z + l - 1
inline constexpr std::uint64_t batch = 1000;
} // namespace stream_label

/// Three-layer linear network in the scale-free parameterisation.
struct FiniteWidthState {
    int m = 0;
    int d = 0;
    Matrix U; ///< m x d
    Matrix W; ///< m x m
    Vector V; ///< m
    Matrix Z; ///< m x m, frozen
    long kappa = 0;
    double s = 1.0;
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;
};

struct InitSpec {
    Dist U = Dist::gaussian;
    Dist V = Dist::gaussian;
    Dist Z = Dist::gaussian;

    static InitSpec all(Dist d) { return {d, d, d}; }
};

inline FiniteWidthState init_finite(int m, int d, const RngStream& rng, InitSpec init, double s = 1.0) {
    if (m < 1) throw DimensionError("init_finite: width must be positive");
    if (d < 1) throw DimensionError("init_finite: input dimension must be positive");
    FiniteWidthState st;
    st.m = m;
    st.d = d;
    st.s = s;
    st.seed = rng.seed();
    st.stream_id = rng.stream_id();
    RngStream ru = rng.child(stream_label::U), rv = rng.child(stream_label::V), rz = rng.child(stream_label::Z);
    st.U = sample_matrix(ru, m, d, init.U);
    st.V = sample_vector(rv, m, init.V);
    st.Z = sample_matrix(rz, m, m, init.Z);
    st.W = Matrix::Zero(m, m);
    return st;
}

inline FiniteWidthState init_finite(int m, int d, const RngStream& rng, Dist init_dist = Dist::gaussian,
                                    double s = 1.0) {
    return init_finite(m, d, rng, InitSpec::all(init_dist), s);
}

/// Unscaled predictor U^T (m^{-1/2}Z + m^{-1}W)^T V / m.
inline Vector raw_predictor(const FiniteWidthState& st) {
    Vector q = detail::backward(st.Z, st.W, st.V);
    return (st.U.transpose() * q) / static_cast<double>(st.m);
}

inline Vector predictor_finite(const FiniteWidthState& st) { return st.s * raw_predictor(st); }

namespace detail {

template <class XiFn>
void advance_finite(FiniteWidthState& st, double tau, XiFn&& xi_of) {
    Vector q = backward(st.Z, st.W, st.V);
    Vector lambda = (st.U.transpose() * q) / static_cast<double>(st.m);
    check_lambda(lambda, st.s, st.kappa);
    Vector xi = xi_of(lambda);
    Vector uxi = st.U * xi;
    Vector p = forward(st.Z, st.W, uxi);
    rank1_update(st.U, tau, q, xi);
    rank1_update(st.W, tau, st.V, uxi);
    st.V -= tau * p;
    ++st.kappa;
    if (!st.V.allFinite() || !st.U.allFinite()) throw DivergenceError(st.kappa, "non-finite weights");
}

} // namespace detail

/// One GD step in place; xi from the pre-step predictor.
inline void advance(FiniteWidthState& st, double tau, const Objective& obj) {
    if (!(tau > 0)) throw std::invalid_argument("step size must be positive");
    detail::advance_finite(st, tau, [&](const Vector& l) { return obj.xi(l); });
}

/// One SGD step on an explicit minibatch.
inline void advance(FiniteWidthState& st, double tau, const Objective& obj, const std::vector<Sample>& batch) {
    if (!(tau > 0)) throw std::invalid_argument("step size must be positive");
    detail::advance_finite(st, tau, [&](const Vector& l) { return obj.xi(l, batch); });
}

inline FiniteWidthState gd_step_finite(FiniteWidthState st, double tau, const Objective& obj) {
    advance(st, tau, obj);
    return st;
}

inline FiniteWidthState gd_step_finite(FiniteWidthState st, double tau, const DataSpec& data, const LossSpec& loss) {
    advance(st, tau, Objective(data, loss, st.s));
    return st;
}

struct TildeParams {
    Matrix U; ///< U
    Matrix W; ///< m^{-1/2} Z + m^{-1} W
    Vector V; ///< m^{-1} V
};

inline TildeParams to_tilde_parameterization(const FiniteWidthState& st) {
    const double m = st.m;
    TildeParams t;
    t.U = st.U;
    t.W = st.Z / std::sqrt(m) + st.W / m;
    t.V = st.V / m;
    return t;
}

/// Inverse of to_tilde_parameterization given the frozen Z.
inline FiniteWidthState from_tilde_parameterization(const TildeParams& t, const Matrix& Z, long kappa = 0,
                                                    double s = 1.0) {
    FiniteWidthState st;
    st.m = static_cast<int>(Z.rows());
    st.d = static_cast<int>(t.U.cols());
    const double m = st.m;
    st.U = t.U;
    st.Z = Z;
    st.W = m * (t.W - Z / std::sqrt(m));
    st.V = m * t.V;
    st.kappa = kappa;
    st.s = s;
    return st;
}

struct LayerStatistics {
    double v_kappa = 0.0;  ///< mean of V_j^2
    double u_row_ms = 0.0; ///< mean of U_{ij}^2
    double w_fro = 0.0;    ///< ||W||_F^2 / m
};

inline LayerStatistics layer_statistics(const FiniteWidthState& st) {
    LayerStatistics out;
    out.v_kappa = st.V.squaredNorm() / st.m;
    out.u_row_ms = st.U.squaredNorm() / static_cast<double>(st.U.size());
    out.w_fro = st.W.squaredNorm() / st.m;
    return out;
}

namespace detail {
inline nlohmann::json matrix_to_json(const Matrix& M) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(M.size()));
    for (long i = 0; i < M.rows(); ++i)
        for (long j = 0; j < M.cols(); ++j) flat.push_back(M(i, j));
    return {{"rows", M.rows()}, {"cols", M.cols()}, {"data", flat}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    long r = j.at("rows").get<long>(), c = j.at("cols").get<long>();
    auto flat = j.at("data").get<std::vector<double>>();
    if (static_cast<long>(flat.size()) != r * c) throw DimensionError("checkpoint matrix has wrong size");
    Matrix M(r, c);
    for (long i = 0; i < r; ++i)
        for (long k = 0; k < c; ++k) M(i, k) = flat[static_cast<std::size_t>(i * c + k)];
    return M;
}
} // namespace detail

inline nlohmann::json checkpoint_to_json(const FiniteWidthState& st) {
    return {{"m", st.m},
            {"d", st.d},
            {"kappa", st.kappa},
            {"s", st.s},
            {"seed", st.seed},
            {"stream_id", st.stream_id},
            {"U", detail::matrix_to_json(st.U)},
            {"W", detail::matrix_to_json(st.W)},
            {"V", detail::matrix_to_json(st.V)},
            {"Z", detail::matrix_to_json(st.Z)}};
}

inline FiniteWidthState checkpoint_from_json(const nlohmann::json& j) {
    FiniteWidthState st;
    st.m = j.at("m").get<int>();
    st.d = j.at("d").get<int>();
    st.kappa = j.at("kappa").get<long>();
    st.s = j.at("s").get<double>();
    st.seed = j.at("seed").get<std::uint64_t>();
    st.stream_id = j.at("stream_id").get<std::uint64_t>();
    st.U = detail::matrix_from_json(j.at("U"));
    st.W = detail::matrix_from_json(j.at("W"));
    st.V = detail::matrix_from_json(j.at("V")).col(0);
    st.Z = detail::matrix_from_json(j.at("Z"));
    if (st.U.rows() != st.m || st.U.cols() != st.d || st.W.rows() != st.m || st.W.cols() != st.m ||
        st.V.size() != st.m || st.Z.rows() != st.m || st.Z.cols() != st.m)
        throw DimensionError("checkpoint shapes inconsistent with (m, d)");
    return st;
}

} // namespace wlnn

#endif
