#ifndef WLNN_FLOW_HPP
#define WLNN_FLOW_HPP

#include "data.hpp"
#include "limit_system.hpp"
#include "stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace wlnn {

/// Samples of an explicit-Euler run of the limit gradient flow.
///
/// normLG2 is ||Lambda + G||^2 - ||Lambda||^2 = 2 tr(Lambda^T G) + ||G||^2,
/// the quantity whose rate matches those of ||A||^2 and ||B||^2.
struct FlowTrajectory {
    double tau = 0.0;
    std::vector<double> times;
    std::vector<Vector> lambdas; ///< effective predictor s * lambda
    std::vector<double> energies;
    std::vector<double> normA2;
    std::vector<double> normB2;
    std::vector<double> normLG2;

    std::size_t size() const { return times.size(); }
};

namespace detail {
inline double squared(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return acc;
}

inline void record(FlowTrajectory& tr, double t, const LimitState& st, const Objective& obj, double lg) {
    Vector raw = raw_predictor(st);
    tr.times.push_back(t);
    tr.lambdas.push_back(st.s * raw);
    tr.energies.push_back(obj.energy(raw));
    tr.normA2.push_back(st.A.squared_norm());
    tr.normB2.push_back(squared(st.B));
    tr.normLG2.push_back(lg);
}
} // namespace detail

/// Runs ceil(T / tau) Euler steps in place, recording every `record_every` steps
/// and at the end.
inline FlowTrajectory gradient_flow(LimitState& st, const Objective& obj, double tau, double T,
                                    long record_every = 1) {
    if (!(tau > 0) || !(T >= 0)) throw std::invalid_argument("gradient_flow: need tau > 0 and T >= 0");
    if (record_every < 1) throw std::invalid_argument("gradient_flow: record_every must be positive");
    const long steps = static_cast<long>(std::ceil(T / tau - 1e-9));
    FlowTrajectory tr;
    tr.tau = tau;
    double lg = lg_norm(st);
    detail::record(tr, 0.0, st, obj, lg);
    for (long k = 1; k <= steps; ++k) {
        LimitStepInfo info = advance(st, tau, obj);
        lg += info.d_lg;
        if (k % record_every == 0 || k == steps) detail::record(tr, static_cast<double>(k) * tau, st, obj, lg);
    }
    return tr;
}

inline FlowTrajectory gradient_flow(const LimitState& st, const DataSpec& data, const LossSpec& loss, double tau,
                                    double T, long record_every = 1) {
    LimitState copy = st;
    return gradient_flow(copy, Objective(data, loss, st.s), tau, T, record_every);
}

struct BalancednessReport {
    double ab = 0.0;   ///< max |d||A||^2 - d||B||^2| / dt
    double alg = 0.0;  ///< max |d||A||^2 - d||Lambda+G||^2| / dt
    double rate = 0.0; ///< max |d||A||^2| / dt
    double absolute() const { return std::max(ab, alg); }
    double relative() const { return rate > 0 ? absolute() / rate : 0.0; }
};

inline BalancednessReport balancedness_report(const FlowTrajectory& tr) {
    if (tr.size() < 2) throw std::invalid_argument("balancedness: need at least two samples");
    BalancednessReport r;
    for (std::size_t k = 1; k < tr.size(); ++k) {
        double dt = tr.times[k] - tr.times[k - 1];
        double da = tr.normA2[k] - tr.normA2[k - 1];
        double db = tr.normB2[k] - tr.normB2[k - 1];
        double dg = tr.normLG2[k] - tr.normLG2[k - 1];
        r.ab = std::max(r.ab, std::abs(da - db) / dt);
        r.alg = std::max(r.alg, std::abs(da - dg) / dt);
        r.rate = std::max(r.rate, std::abs(da) / dt);
    }
    return r;
}

inline double balancedness_defect(const FlowTrajectory& tr) { return balancedness_report(tr).absolute(); }

/// Largest component of the effective predictor along ker(M).
inline double span_defect(const Vector& lambda, const PopulationMoments& mom) {
    Matrix K = mom.kernel_basis();
    if (K.cols() == 0) return 0.0;
    return (K.transpose() * lambda).cwiseAbs().maxCoeff();
}

inline double span_defect(const LimitState& st, const PopulationMoments& mom) {
    return span_defect(predictor_limit(st), mom);
}

struct RateFit {
    double rate = 0.0;
    double r2 = 0.0;
    double plateau_end = 0.0; ///< first time with E_0 - E_t >= 1e-3 (E_0 - E_inf)
    std::size_t points = 0;
};

/// Exponential rate of E_t - E_inf on the tail window: samples after the
/// plateau with excess above 1e-12, last half of them.
inline RateFit exp_rate_fit(const std::vector<double>& times, const std::vector<double>& energies, double e_inf,
                            double plateau_rel = 1e-3) {
    if (times.size() != energies.size()) throw DimensionError("exp_rate_fit: size mismatch");
    if (times.empty()) throw std::invalid_argument("exp_rate_fit: empty trajectory");
    RateFit fit;
    const double total = energies.front() - e_inf;
    std::size_t start = 0;
    while (start < times.size() && energies.front() - energies[start] < plateau_rel * total) ++start;
    if (start < times.size()) fit.plateau_end = times[start];
    std::vector<std::size_t> idx;
    for (std::size_t k = start; k < times.size(); ++k)
        if (energies[k] - e_inf > 1e-12) idx.push_back(k);
    std::size_t first = idx.size() / 2;
    std::vector<double> x, y;
    for (std::size_t k = first; k < idx.size(); ++k) {
        x.push_back(times[idx[k]]);
        y.push_back(std::log(energies[idx[k]] - e_inf));
    }
    if (x.size() < 2) throw std::invalid_argument("exp_rate_fit: fit window is empty");
    LineFit lf = fit_line(x, y);
    fit.rate = lf.slope;
    fit.r2 = lf.r2;
    fit.points = x.size();
    return fit;
}

inline RateFit exp_rate_fit(const FlowTrajectory& tr, double e_inf) {
    return exp_rate_fit(tr.times, tr.energies, e_inf);
}

inline RateFit exp_rate_fit(const FlowTrajectory& tr, const Objective& obj) { return exp_rate_fit(tr, obj.e_inf()); }

/// Euler path of lambda' = -3 s^2 (M lambda - b), the large-scale linearisation.
inline std::vector<Vector> linear_dynamics_path(const Objective& obj, double tau, long steps) {
    const auto& mom = obj.moments();
    const double s = obj.scale();
    Vector lam = Vector::Zero(mom.dim());
    std::vector<Vector> out{lam};
    for (long k = 0; k < steps; ++k) {
        lam -= tau * 3.0 * s * s * (mom.M * lam - mom.b);
        out.push_back(lam);
    }
    return out;
}

inline void write_trajectory_csv(std::ostream& os, const FlowTrajectory& tr) {
    const long d = tr.lambdas.empty() ? 0 : tr.lambdas.front().size();
    os << "t";
    for (long z = 1; z <= d; ++z) os << ",lambda_" << z;
    os << ",energy,normA2,normB2,normLG2\n";
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, ",%.17g", v);
        os << buf;
    };
    for (std::size_t k = 0; k < tr.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", tr.times[k]);
        os << buf;
        for (long z = 0; z < d; ++z) put(tr.lambdas[k](z));
        put(tr.energies[k]);
        put(tr.normA2[k]);
        put(tr.normB2[k]);
        put(tr.normLG2[k]);
        os << '\n';
    }
}

} // namespace wlnn

#endif
