#ifndef WLNN_HARNESS_HPP
#define WLNN_HARNESS_HPP

#include "chain_basis.hpp"
#include "data.hpp"
#include "finite_width.hpp"
#include "flow.hpp"
#include "limit_system.hpp"
#include "multilayer.hpp"
#include "numerics.hpp"
#include "stats.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#ifndef WLNN_VERSION
#define WLNN_VERSION "0.0.0"
#endif

namespace wlnn {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct FlowConfig {
    double tau = 1e-3;
    double T = 50.0;
    long record_every = 10;
};

struct TrajectoryConfig {
    std::vector<double> scales{1.0, 10.0};
    int m = 128;
    int seeds = 2;
    std::size_t frechet_points = 400;
};

struct HistogramConfig {
    int m = 2000;
    long kappa = 20;
    int seeds = 5;
    int bins = 40;
};

struct BasisConfig {
    std::vector<int> widths{32, 64, 128, 256};
    int k_max = 2;
    int seeds = 200;
    int d = 1;
    int enum_m = 8;
    int enum_k_max = 3;
    int moment_m = 64;
    int moment_seeds = 500;
    std::vector<int> moment_k{1, 2};
};

struct MultilayerConfig {
    int L = 2;
    std::vector<int> relation_widths{12, 24, 48};
    long j_max = 3;
    int relation_seeds = 20;
    std::vector<int> widths{32, 64, 128, 256};
    int seeds = 100;
    double tau = 0.05;
    long kappa = 5;
    double teacher = 1.0;
};

/// Everything a run needs; parsed from a single JSON document.
struct ExperimentConfig {
    std::string experiment = "sweep-width";
    std::uint64_t seed = 2;
    int d = 10;
    std::vector<int> widths{32, 64, 128, 256, 512};
    int seeds = 50;
    double tau = 0.2;
    long kappa_max = 1000;
    std::vector<long> checkpoints; ///< empty means the default grid
    LossSpec loss = LossSpec::square();
    std::optional<DataSpec> data;  ///< explicit data; otherwise generated from the seed
    std::optional<int> n_samples = 5; ///< empirical sample size of generated data, nullopt for the population
    double s = 1.0;
    InitSpec init;
    double drop_tolerance = 1e-40;
    FlowConfig flow;
    TrajectoryConfig trajectory;
    HistogramConfig histogram;
    BasisConfig basis;
    MultilayerConfig multilayer;
    std::string output = "out";
    int threads = 1;

    void validate() const {
        if (d < 1) throw ConfigError("d must be positive");
        if (widths.empty() || !std::is_sorted(widths.begin(), widths.end()) || widths.front() < 1)
            throw ConfigError("widths must be positive and sorted ascending");
        if (seeds < 1) throw ConfigError("seeds must be at least 1");
        if (!(tau > 0) || kappa_max < 0) throw ConfigError("need tau > 0 and kappa_max >= 0");
        if (!(s > 0)) throw ConfigError("s must be positive");
        if (n_samples && *n_samples < 1) throw ConfigError("n_samples must be positive");
        if (!(flow.tau > 0) || !(flow.T >= 0) || flow.record_every < 1) throw ConfigError("invalid flow settings");
        if (threads < 1) throw ConfigError("threads must be positive");
        for (long c : checkpoints)
            if (c < 0 || c > kappa_max) throw ConfigError("checkpoint outside [0, kappa_max]");
        if (data && data->d != d) throw ConfigError("data dimension differs from d");
        if (basis.k_max < 0 || basis.seeds < 1 || basis.moment_seeds < 1) throw ConfigError("invalid basis settings");
        if (multilayer.L < 1 || multilayer.seeds < 1 || multilayer.relation_seeds < 1)
            throw ConfigError("invalid multilayer settings");
        if (histogram.m < 1 || histogram.seeds < 1 || histogram.bins < 1) throw ConfigError("invalid histogram settings");
        for (double sc : trajectory.scales)
            if (!(sc > 0)) throw ConfigError("trajectory scales must be positive");
    }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <class T>
void take(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("key '") + key + "' has the wrong type: " + j.at(key).dump());
    }
}

inline LossSpec loss_from_json(const nlohmann::json& j) {
    if (j.is_string()) {
        std::string k = j.get<std::string>();
        if (k == "square") return LossSpec::square();
        if (k == "logistic_smooth") return LossSpec::logistic();
        throw ConfigError("unknown loss '" + k + "'");
    }
    reject_unknown(j, {"custom_table"}, "loss");
    std::vector<std::pair<double, double>> knots;
    for (const auto& row : j.at("custom_table")) knots.emplace_back(row.at(0).get<double>(), row.at(1).get<double>());
    return LossSpec::custom(knots);
}

inline nlohmann::json loss_to_json(const LossSpec& loss) {
    switch (loss.kind) {
    case LossKind::square: return "square";
    case LossKind::logistic_smooth: return "logistic_smooth";
    case LossKind::custom_table: {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& [r, v] : loss.table) rows.push_back({r, v});
        return {{"custom_table", rows}};
    }
    }
    return nullptr;
}

} // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using detail::take;
    detail::reject_unknown(j,
                           {"experiment", "seed", "d", "widths", "seeds", "tau", "kappa_max", "checkpoints", "loss", "data",
                            "n_samples", "s", "init", "drop_tolerance", "flow", "trajectory", "histogram", "basis",
                            "multilayer", "output", "threads"},
                           "config");
    ExperimentConfig c;
    take(j, "experiment", c.experiment);
    take(j, "seed", c.seed);
    take(j, "d", c.d);
    take(j, "widths", c.widths);
    take(j, "seeds", c.seeds);
    take(j, "tau", c.tau);
    take(j, "kappa_max", c.kappa_max);
    take(j, "checkpoints", c.checkpoints);
    take(j, "s", c.s);
    take(j, "drop_tolerance", c.drop_tolerance);
    take(j, "output", c.output);
    take(j, "threads", c.threads);
    if (j.contains("loss")) c.loss = detail::loss_from_json(j.at("loss"));
    if (j.contains("data") && !j.at("data").is_null()) {
        try {
            c.data = data_from_json(j.at("data"));
        } catch (const DataError& e) {
            throw ConfigError(std::string("data: ") + e.what());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("data: ") + e.what());
        }
    }
    if (j.contains("n_samples")) {
        if (j.at("n_samples").is_null()) c.n_samples.reset();
        else c.n_samples = j.at("n_samples").get<int>();
    }
    if (j.contains("init")) {
        const auto& ji = j.at("init");
        detail::reject_unknown(ji, {"U", "V", "Z"}, "init");
        auto dist = [&](const char* key, Dist& out) {
            if (!ji.contains(key)) return;
            try {
                out = dist_from_string(ji.at(key).get<std::string>());
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("init.") + key + ": " + e.what());
            }
        };
        dist("U", c.init.U);
        dist("V", c.init.V);
        dist("Z", c.init.Z);
    }
    if (j.contains("flow")) {
        const auto& f = j.at("flow");
        detail::reject_unknown(f, {"tau", "T", "record_every"}, "flow");
        take(f, "tau", c.flow.tau);
        take(f, "T", c.flow.T);
        take(f, "record_every", c.flow.record_every);
    }
    if (j.contains("trajectory")) {
        const auto& t = j.at("trajectory");
        detail::reject_unknown(t, {"scales", "m", "seeds", "frechet_points"}, "trajectory");
        take(t, "scales", c.trajectory.scales);
        take(t, "m", c.trajectory.m);
        take(t, "seeds", c.trajectory.seeds);
        take(t, "frechet_points", c.trajectory.frechet_points);
    }
    if (j.contains("histogram")) {
        const auto& h = j.at("histogram");
        detail::reject_unknown(h, {"m", "kappa", "seeds", "bins"}, "histogram");
        take(h, "m", c.histogram.m);
        take(h, "kappa", c.histogram.kappa);
        take(h, "seeds", c.histogram.seeds);
        take(h, "bins", c.histogram.bins);
    }
    if (j.contains("basis")) {
        const auto& b = j.at("basis");
        detail::reject_unknown(b,
                               {"widths", "k_max", "seeds", "d", "enum_m", "enum_k_max", "moment_m", "moment_seeds",
                                "moment_k"},
                               "basis");
        take(b, "widths", c.basis.widths);
        take(b, "k_max", c.basis.k_max);
        take(b, "seeds", c.basis.seeds);
        take(b, "d", c.basis.d);
        take(b, "enum_m", c.basis.enum_m);
        take(b, "enum_k_max", c.basis.enum_k_max);
        take(b, "moment_m", c.basis.moment_m);
        take(b, "moment_seeds", c.basis.moment_seeds);
        take(b, "moment_k", c.basis.moment_k);
    }
    if (j.contains("multilayer")) {
        const auto& m = j.at("multilayer");
        detail::reject_unknown(m,
                               {"L", "relation_widths", "j_max", "relation_seeds", "widths", "seeds", "tau", "kappa",
                                "teacher"},
                               "multilayer");
        take(m, "L", c.multilayer.L);
        take(m, "relation_widths", c.multilayer.relation_widths);
        take(m, "j_max", c.multilayer.j_max);
        take(m, "relation_seeds", c.multilayer.relation_seeds);
        take(m, "widths", c.multilayer.widths);
        take(m, "seeds", c.multilayer.seeds);
        take(m, "tau", c.multilayer.tau);
        take(m, "kappa", c.multilayer.kappa);
        take(m, "teacher", c.multilayer.teacher);
    }
    c.validate();
    return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["experiment"] = c.experiment;
    j["seed"] = c.seed;
    j["d"] = c.d;
    j["widths"] = c.widths;
    j["seeds"] = c.seeds;
    j["tau"] = c.tau;
    j["kappa_max"] = c.kappa_max;
    j["checkpoints"] = c.checkpoints;
    j["loss"] = detail::loss_to_json(c.loss);
    j["data"] = c.data ? data_to_json(*c.data) : nlohmann::json(nullptr);
    j["n_samples"] = c.n_samples ? nlohmann::json(*c.n_samples) : nlohmann::json(nullptr);
    j["s"] = c.s;
    j["init"] = {{"U", to_string(c.init.U)}, {"V", to_string(c.init.V)}, {"Z", to_string(c.init.Z)}};
    j["drop_tolerance"] = c.drop_tolerance;
    j["flow"] = {{"tau", c.flow.tau}, {"T", c.flow.T}, {"record_every", c.flow.record_every}};
    j["trajectory"] = {{"scales", c.trajectory.scales},
                       {"m", c.trajectory.m},
                       {"seeds", c.trajectory.seeds},
                       {"frechet_points", c.trajectory.frechet_points}};
    j["histogram"] = {{"m", c.histogram.m}, {"kappa", c.histogram.kappa}, {"seeds", c.histogram.seeds}, {"bins", c.histogram.bins}};
    j["basis"] = {{"widths", c.basis.widths},       {"k_max", c.basis.k_max},
                  {"seeds", c.basis.seeds},         {"d", c.basis.d},
                  {"enum_m", c.basis.enum_m},       {"enum_k_max", c.basis.enum_k_max},
                  {"moment_m", c.basis.moment_m},   {"moment_seeds", c.basis.moment_seeds},
                  {"moment_k", c.basis.moment_k}};
    j["multilayer"] = {{"L", c.multilayer.L},
                       {"relation_widths", c.multilayer.relation_widths},
                       {"j_max", c.multilayer.j_max},
                       {"relation_seeds", c.multilayer.relation_seeds},
                       {"widths", c.multilayer.widths},
                       {"seeds", c.multilayer.seeds},
                       {"tau", c.multilayer.tau},
                       {"kappa", c.multilayer.kappa},
                       {"teacher", c.multilayer.teacher}};
    j["output"] = c.output;
    j["threads"] = c.threads;
    return j;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(j);
}

/// Runs fn(i) for i in [0, n) on `threads` workers. Results must be written
/// to slots indexed by i so that the outcome does not depend on scheduling.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min<int>(threads, static_cast<int>(n)); ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

/// Stream of the run cell (m, seed); independent of the order cells run in.
inline RngStream cell_stream(std::uint64_t master, long m, long seed) {
    return RngStream(master, 1 + static_cast<std::uint64_t>(m) * 100000 + static_cast<std::uint64_t>(seed));
}

/// The configured data, or a draw from the master seed: a teacher
/// lambda* ~ N(0, Id), then n_samples inputs x ~ N(0, Id) labelled x^T lambda*.
inline DataSpec make_data(const ExperimentConfig& cfg) {
    if (cfg.data) return *cfg.data;
    RngStream rng(cfg.seed, 0);
    Vector teacher = sample_vector(rng, cfg.d, Dist::gaussian);
    if (!cfg.n_samples) return DataSpec::synthetic(teacher);
    std::vector<Sample> samples;
    for (int i = 0; i < *cfg.n_samples; ++i) {
        Sample smp;
        smp.x = sample_vector(rng, cfg.d, Dist::gaussian);
        smp.y = smp.x.dot(teacher);
        samples.push_back(std::move(smp));
    }
    return DataSpec::empirical(std::move(samples));
}

inline Objective make_objective(const ExperimentConfig& cfg, double s) { return Objective(make_data(cfg), cfg.loss, s); }

/// {0, kappa_max} plus 20 log-spaced steps, unless listed explicitly.
inline std::vector<long> checkpoint_grid(const ExperimentConfig& cfg) {
    std::set<long> pts(cfg.checkpoints.begin(), cfg.checkpoints.end());
    if (cfg.checkpoints.empty()) {
        pts.insert(0);
        pts.insert(cfg.kappa_max);
        if (cfg.kappa_max >= 1)
            for (int i = 0; i < 20; ++i)
                pts.insert(std::lround(std::pow(static_cast<double>(cfg.kappa_max), i / 19.0)));
    }
    return {pts.begin(), pts.end()};
}

// ---------------------------------------------------------------------------
// Width sweep and parameter tracking

struct SweepRow {
    int m = 0;
    int seed = 0;
    long kappa = 0;
    double sq_error = 0.0;
    double v_kappa = 0.0;
    double B_norm2 = 0.0;
    bool diverged = false;
};

struct SweepSummaryRow {
    int m = 0;
    long kappa = 0;
    int completed = 0;
    double mean_sq_error = 0.0;
    double stderr_ = 0.0;
    double mean_rel_gap = 0.0; ///< mean |v_kappa - ||B||^2| / ||B||^2
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<SweepSummaryRow> summary;
    std::vector<long> checkpoints;
    LineFit fit;          ///< OLS on log2 mean error at kappa_max
    LineFit weighted_fit; ///< the same fit weighted by inverse squared log-SE
    std::vector<int> fitted_widths;
    long limit_divergence = -1; ///< step at which the limit diverged, -1 if it did not
};

struct LimitCheckpoint {
    Vector lambda;
    double B_norm2 = 0.0;
    double B1 = 0.0;
};

/// Limit predictor and ||B||^2 at the given (sorted) checkpoints.
inline std::vector<LimitCheckpoint> limit_checkpoints(const ExperimentConfig& cfg, const Objective& obj,
                                                      const std::vector<long>& pts) {
    LimitState st = init_limit(cfg.d, cfg.d + 1, cfg.s);
    st.drop_tolerance = cfg.drop_tolerance;
    std::vector<LimitCheckpoint> out;
    long k = 0;
    for (long target : pts) {
        while (k < target) {
            advance(st, cfg.tau, obj);
            ++k;
        }
        Vector B = st.B_dense(std::max<long>(1, st.stored()));
        out.push_back({predictor_limit(st), B.squaredNorm(), B(0)});
    }
    return out;
}

inline SweepResult run_width_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    const Objective obj = make_objective(cfg, cfg.s);
    SweepResult res;
    res.checkpoints = checkpoint_grid(cfg);
    const auto& pts = res.checkpoints;
    std::vector<LimitCheckpoint> lim;
    try {
        lim = limit_checkpoints(cfg, obj, pts);
    } catch (const DivergenceError& e) {
        res.limit_divergence = e.kappa();
        return res;
    }
    const std::size_t nw = cfg.widths.size(), ns = static_cast<std::size_t>(cfg.seeds);
    std::vector<std::vector<SweepRow>> cells(nw * ns);
    parallel_for(cells.size(), cfg.threads, [&](std::size_t c) {
        const int m = cfg.widths[c / ns];
        const int seed = static_cast<int>(c % ns);
        FiniteWidthState st = init_finite(m, cfg.d, cell_stream(cfg.seed, m, seed), cfg.init, cfg.s);
        auto& rows = cells[c];
        long k = 0;
        bool diverged = false;
        for (std::size_t p = 0; p < pts.size(); ++p) {
            try {
                while (!diverged && k < pts[p]) {
                    advance(st, cfg.tau, obj);
                    ++k;
                }
            } catch (const DivergenceError&) {
                diverged = true;
            }
            SweepRow r{m, seed, pts[p], 0.0, 0.0, lim[p].B_norm2, diverged};
            if (!diverged) {
                r.sq_error = (predictor_finite(st) - lim[p].lambda).squaredNorm();
                r.v_kappa = layer_statistics(st).v_kappa;
            }
            rows.push_back(r);
        }
    });
    for (auto& c : cells)
        for (auto& r : c) res.rows.push_back(r);

    for (std::size_t w = 0; w < nw; ++w) {
        for (std::size_t p = 0; p < pts.size(); ++p) {
            std::vector<double> errs, gaps;
            for (std::size_t sd = 0; sd < ns; ++sd) {
                const SweepRow& r = cells[w * ns + sd][p];
                if (r.diverged) continue;
                errs.push_back(r.sq_error);
                gaps.push_back(std::abs(r.v_kappa - r.B_norm2) / r.B_norm2);
            }
            MeanSe e = mean_se(errs), g = mean_se(gaps);
            res.summary.push_back({cfg.widths[w], pts[p], static_cast<int>(errs.size()), e.mean, e.se, g.mean});
        }
    }
    std::vector<double> xs, ys, ws;
    for (const auto& s : res.summary) {
        if (s.kappa != pts.back() || 2 * s.completed < cfg.seeds || !(s.mean_sq_error > 0)) continue;
        res.fitted_widths.push_back(s.m);
        xs.push_back(s.m);
        ys.push_back(s.mean_sq_error);
        double rel = s.stderr_ / s.mean_sq_error * 1.4426950408889634; // SE of log2(mean)
        ws.push_back(rel > 0 ? 1.0 / (rel * rel) : 1.0);
    }
    if (xs.size() >= 2) {
        res.fit = fit_loglog(xs, ys);
        res.weighted_fit = fit_loglog(xs, ys, ws);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Trajectories and the flow studies

struct TrajectoryScaleReport {
    double s = 1.0;
    FlowTrajectory limit;
    std::vector<Vector> linear;
    double frechet_to_linear = 0.0;
    double endpoint_error = 0.0;
};

struct TrajectoryReport {
    Vector target;
    std::vector<TrajectoryScaleReport> scales;
    /// Finite-width runs at s = first scale: (seed, times, effective predictors).
    std::vector<std::pair<int, std::vector<Vector>>> finite;
    std::vector<double> finite_times;
};


inline TrajectoryReport run_trajectory_export(const ExperimentConfig& cfg) {
    cfg.validate();
    TrajectoryReport rep;
    const long steps = static_cast<long>(std::ceil(cfg.flow.T / cfg.flow.tau - 1e-9));
    for (double s : cfg.trajectory.scales) {
        Objective obj = make_objective(cfg, s);
        rep.target = obj.target();
        TrajectoryScaleReport r;
        r.s = s;
        LimitState st = init_limit(cfg.d, cfg.d + 1, s);
        st.drop_tolerance = cfg.drop_tolerance;
        r.limit = gradient_flow(st, obj, cfg.flow.tau, cfg.flow.T, cfg.flow.record_every);
        auto lin = linear_dynamics_path(obj, cfg.flow.tau, steps);
        for (long k = 0; k <= steps; k += cfg.flow.record_every) r.linear.push_back(lin[static_cast<std::size_t>(k)]);
        if (steps % cfg.flow.record_every != 0) r.linear.push_back(lin.back());
        r.frechet_to_linear = discrete_frechet(thin(r.limit.lambdas, cfg.trajectory.frechet_points),
                                               thin(r.linear, cfg.trajectory.frechet_points));
        r.endpoint_error = (r.limit.lambdas.back() - obj.target()).norm();
        rep.scales.push_back(std::move(r));
    }
    if (cfg.trajectory.seeds > 0 && !cfg.trajectory.scales.empty()) {
        const double s = cfg.trajectory.scales.front();
        Objective obj = make_objective(cfg, s);
        const auto& times = rep.scales.front().limit.times;
        rep.finite_times = times;
        rep.finite.resize(static_cast<std::size_t>(cfg.trajectory.seeds));
        parallel_for(rep.finite.size(), cfg.threads, [&](std::size_t sd) {
            FiniteWidthState st = init_finite(cfg.trajectory.m, cfg.d,
                                              cell_stream(cfg.seed, cfg.trajectory.m, static_cast<long>(sd)), cfg.init, s);
            std::vector<Vector> path{predictor_finite(st)};
            try {
                for (long k = 1; k <= steps; ++k) {
                    advance(st, cfg.flow.tau, obj);
                    if (k % cfg.flow.record_every == 0 || k == steps) path.push_back(predictor_finite(st));
                }
            } catch (const DivergenceError&) {
            }
            rep.finite[sd] = {static_cast<int>(sd), std::move(path)};
        });
    }
    return rep;
}

struct ImplicitBiasReport {
    FlowTrajectory flow;
    double endpoint_error = 0.0;
    double max_span_defect = 0.0;
    RateFit rate;
    BalancednessReport balance;
    double e_inf = 0.0;
    Vector target;
};

inline ImplicitBiasReport run_implicit_bias(const ExperimentConfig& cfg, std::optional<double> tau_override = {}) {
    cfg.validate();
    if (cfg.loss.kind != LossKind::square) throw ConfigError("implicit-bias needs the square loss");
    Objective obj = make_objective(cfg, cfg.s);
    ImplicitBiasReport rep;
    LimitState st = init_limit(cfg.d, cfg.d + 1, cfg.s);
    st.drop_tolerance = cfg.drop_tolerance;
    const double tau = tau_override.value_or(cfg.flow.tau);
    const long every = std::max<long>(1, std::lround(cfg.flow.record_every * cfg.flow.tau / tau));
    rep.flow = gradient_flow(st, obj, tau, cfg.flow.T, every);
    rep.target = obj.target();
    rep.e_inf = obj.e_inf();
    rep.endpoint_error = (rep.flow.lambdas.back() - obj.target()).norm();
    for (const auto& l : rep.flow.lambdas) rep.max_span_defect = std::max(rep.max_span_defect, span_defect(l, obj.moments()));
    rep.rate = exp_rate_fit(rep.flow, obj);
    rep.balance = balancedness_report(rep.flow);
    return rep;
}

// ---------------------------------------------------------------------------
// Non-Gaussian parameter distribution

struct HistogramReport {
    std::vector<double> raw;       ///< V_j(kappa), pooled over seeds
    std::vector<double> corrected; ///< V_j(kappa) - B_1(kappa) V_j(0)
    double B1 = 0.0;
    double B_norm2 = 0.0;
    double kurtosis_raw = 0.0;
    double kurtosis_corrected = 0.0;
    double kurtosis_init = 0.0;
    Histogram hist_raw, hist_corrected;
};

inline HistogramReport run_nongaussian_histogram(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto& h = cfg.histogram;
    Objective obj = make_objective(cfg, cfg.s);
    HistogramReport rep;
    ExperimentConfig lc = cfg;
    lc.kappa_max = h.kappa;
    auto lim = limit_checkpoints(lc, obj, {h.kappa});
    rep.B1 = lim[0].B1;
    rep.B_norm2 = lim[0].B_norm2;
    std::vector<std::vector<double>> raw(static_cast<std::size_t>(h.seeds)), corr(raw.size()), init(raw.size());
    parallel_for(raw.size(), cfg.threads, [&](std::size_t sd) {
        FiniteWidthState st = init_finite(h.m, cfg.d, cell_stream(cfg.seed, h.m, static_cast<long>(sd)), cfg.init, cfg.s);
        Vector v0 = st.V;
        for (long k = 0; k < h.kappa; ++k) advance(st, cfg.tau, obj);
        for (long j = 0; j < h.m; ++j) {
            raw[sd].push_back(st.V(j));
            corr[sd].push_back(st.V(j) - rep.B1 * v0(j));
            init[sd].push_back(v0(j));
        }
    });
    std::vector<double> all_init;
    for (std::size_t sd = 0; sd < raw.size(); ++sd) {
        rep.raw.insert(rep.raw.end(), raw[sd].begin(), raw[sd].end());
        rep.corrected.insert(rep.corrected.end(), corr[sd].begin(), corr[sd].end());
        all_init.insert(all_init.end(), init[sd].begin(), init[sd].end());
    }
    rep.kurtosis_raw = excess_kurtosis(rep.raw);
    rep.kurtosis_corrected = excess_kurtosis(rep.corrected);
    rep.kurtosis_init = excess_kurtosis(all_init);
    auto range = [](const std::vector<double>& v) {
        auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        double pad = 1e-9 * std::max(1.0, *hi - *lo);
        return std::make_pair(*lo - pad, *hi + pad);
    };
    auto [a, b] = range(rep.raw);
    rep.hist_raw = histogram(rep.raw, h.bins, a, b);
    auto [c, d] = range(rep.corrected);
    rep.hist_corrected = histogram(rep.corrected, h.bins, c, d);
    return rep;
}

// ---------------------------------------------------------------------------
// Basis verification

struct BasisWidthRow {
    int m = 0;
    int k1 = 0, k2 = 0;
    double jj = 0.0, jk = 0.0, kk = 0.0;
    int n_seeds = 0;
};

struct EnumerationRow {
    int m = 0;
    int k = 0;
    std::string family;
    double max_abs_diff = 0.0;
    bool equal = false;
};

struct ResidualRow {
    int m = 0;
    int k = 0;
    double residual_R = 0.0, residual_S = 0.0, residual_R4 = 0.0;
    int n_seeds = 0;
};

struct BasisReport {
    std::vector<BasisWidthRow> defects;
    std::vector<std::pair<int, double>> total_defect; ///< (m, mean summed defect)
    LineFit defect_fit;
    std::vector<ResidualRow> residuals;
    std::vector<EnumerationRow> enumeration;
    MomentTable moments;
};

/// Equality up to summation-order rounding.
inline bool same_up_to_rounding(const Matrix& a, const Matrix& b, double& diff) {
    diff = (a - b).cwiseAbs().maxCoeff();
    double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    return diff <= 1e-12 * scale;
}

inline BasisReport run_basis_verification(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto& bc = cfg.basis;
    BasisReport rep;
    const int npairs = (bc.k_max + 1) * (bc.k_max + 1);
    for (int m : bc.widths) {
        std::vector<ChainBasisReport> per(static_cast<std::size_t>(bc.seeds));
        parallel_for(per.size(), cfg.threads, [&](std::size_t sd) {
            ChainSample smp = draw_chain_sample(m, bc.d, cell_stream(cfg.seed, m, static_cast<long>(sd)), cfg.init.Z);
            per[sd] = chain_basis_report(bc.k_max, smp.Z, smp.U, smp.V);
            per[sd].J.clear();
            per[sd].K.clear();
        });
        for (int q = 0; q < npairs; ++q) {
            BasisWidthRow row{m, per[0].defects[static_cast<std::size_t>(q)].k1, per[0].defects[static_cast<std::size_t>(q)].k2,
                              0, 0, 0, bc.seeds};
            for (const auto& p : per) {
                row.jj += p.defects[static_cast<std::size_t>(q)].jj / bc.seeds;
                row.jk += p.defects[static_cast<std::size_t>(q)].jk / bc.seeds;
                row.kk += p.defects[static_cast<std::size_t>(q)].kk / bc.seeds;
            }
            rep.defects.push_back(row);
        }
        double tot = 0.0;
        for (const auto& p : per) tot += p.total_defect() / bc.seeds;
        rep.total_defect.emplace_back(m, tot);
        for (int k = 0; k < bc.k_max; ++k) {
            ResidualRow r{m, k, 0, 0, 0, bc.seeds};
            for (const auto& p : per) {
                r.residual_R += p.residual_R[static_cast<std::size_t>(k)] / bc.seeds;
                r.residual_S += p.residual_S[static_cast<std::size_t>(k)] / bc.seeds;
            }
            rep.residuals.push_back(r);
        }
    }
    if (rep.total_defect.size() >= 2) {
        std::vector<double> xs, ys;
        for (auto [m, v] : rep.total_defect) {
            xs.push_back(m);
            ys.push_back(v);
        }
        rep.defect_fit = fit_loglog(xs, ys);
    }
    // fourth-power residual statistics on the first width
    if (!bc.widths.empty())
        for (auto& r : rep.residuals) {
            if (r.m != bc.widths.front()) continue;
            double acc = 0.0;
            for (int sd = 0; sd < bc.seeds; ++sd) {
                ChainSample smp = draw_chain_sample(r.m, bc.d, cell_stream(cfg.seed, r.m, sd), cfg.init.Z);
                acc += recursion_residual(r.k, smp.Z, smp.U).norm4 / bc.seeds;
            }
            r.residual_R4 = acc;
        }
    {
        ChainSample smp = draw_chain_sample(bc.enum_m, bc.d, cell_stream(cfg.seed, bc.enum_m, 0), cfg.init.Z);
        for (int k = 0; k <= bc.enum_k_max; ++k) {
            EnumerationRow rj{bc.enum_m, k, "J", 0, false}, rk{bc.enum_m, k, "K", 0, false};
            rj.equal = same_up_to_rounding(j_vector(k, smp.Z, smp.U, ChainBackend::formula),
                                           j_vector(k, smp.Z, smp.U, ChainBackend::enumeration), rj.max_abs_diff);
            rk.equal = same_up_to_rounding(k_vector(k, smp.Z, smp.V, ChainBackend::formula),
                                           k_vector(k, smp.Z, smp.V, ChainBackend::enumeration), rk.max_abs_diff);
            rep.enumeration.push_back(rj);
            rep.enumeration.push_back(rk);
        }
    }
    std::vector<ChainSample> samples(static_cast<std::size_t>(bc.moment_seeds));
    parallel_for(samples.size(), cfg.threads, [&](std::size_t sd) {
        samples[sd] = draw_chain_sample(bc.moment_m, 1, cell_stream(cfg.seed, bc.moment_m, static_cast<long>(sd)), cfg.init.Z);
    });
    rep.moments = moment_estimates(bc.moment_m, bc.moment_k, samples);
    return rep;
}

// ---------------------------------------------------------------------------
// Multilayer verification

struct MultilayerSweepRow {
    int L = 0;
    int m = 0;
    int seed = 0;
    long kappa = 0;
    double sq_error = 0.0;
    bool diverged = false;
};

struct MultilayerReport {
    std::vector<RelationResidualRow> relations;
    bool lambda_matches_display = false;
    bool relations_match_transpose = false;
    bool l1_bit_identical = false;
    std::vector<MultilayerSweepRow> sweep;
    std::vector<std::pair<int, double>> mean_error;
    LineFit fit;
    double limit_predictor = 0.0;
};

/// Displayed matrices equal the transposed relation matrices except at (1, 1).
inline bool displayed_lambda_is_transposed_relation(long R) {
    for (int ell = 1; ell <= 2; ++ell) {
        Matrix diff = lambda_ell(2, ell, R) - ladder_from_relations(ell, R).transpose();
        diff(0, 0) -= 1.0;
        if (diff.cwiseAbs().maxCoeff() != 0.0) return false;
    }
    return true;
}

/// Leading rows of the displayed L = 2 matrices, 1-based as printed.
inline bool lambda_matches_displayed_blocks() {
    const double L1[4][9] = {{1, 1, 0, 0, 0, 0, 0, 0, 0},
                             {0, 1, 0, 1, 0, 0, 0, 0, 0},
                             {0, 0, 1, 0, 0, 1, 0, 0, 0},
                             {0, 0, 0, 1, 0, 0, 0, 1, 0}};
    const double L2t[4][9] = {{1, 0, 1, 0, 0, 0, 0, 0, 0},
                              {0, 1, 0, 0, 1, 0, 0, 0, 0},
                              {0, 0, 1, 0, 0, 0, 1, 0, 0},
                              {0, 0, 0, 1, 0, 0, 0, 0, 1}};
    Matrix a = lambda_ell(2, 1, 9), b = lambda_ell(2, 2, 9).transpose();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 9; ++j)
            if (a(i, j) != L1[i][j] || b(i, j) != L2t[i][j]) return false;
    return true;
}

/// Runs three-layer and L = 1 multilayer code side by side and compares
/// predictors with ==.
inline bool l1_reduction_bit_identical(std::uint64_t seed, int m, long steps, double tau) {
    Objective obj(DataSpec::synthetic(Vector::Ones(1)), LossSpec::square());
    FiniteWidthState f3 = init_finite(m, 1, RngStream(seed, 7));
    MultiFiniteState fm = init_multi_finite(m, 1, RngStream(seed, 7));
    LimitState l3 = init_limit(1, 2);
    MultiLimitState lm = init_multi_limit(1);
    for (long k = 0; k < steps; ++k) {
        advance(f3, tau, obj);
        advance(fm, tau, obj);
        advance(l3, tau, obj);
        advance(lm, tau, obj);
        if (predictor_finite(f3)(0) != predictor_multilayer_finite(fm)) return false;
        if (predictor_limit(l3)(0) != predictor_multilayer_limit(lm)) return false;
        if (f3.V != fm.V || f3.U != fm.U || f3.W != fm.W[0]) return false;
    }
    return true;
}

inline MultilayerReport run_multilayer_verify(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto& mc = cfg.multilayer;
    MultilayerReport rep;
    for (int m : mc.relation_widths) {
        std::vector<RelationSample> samples(static_cast<std::size_t>(mc.relation_seeds));
        for (std::size_t sd = 0; sd < samples.size(); ++sd)
            samples[sd] = draw_relation_sample(m, cell_stream(cfg.seed, m, static_cast<long>(sd)));
        // split seeds over workers, then merge in seed order
        std::vector<std::vector<RelationResidualRow>> part(samples.size());
        parallel_for(samples.size(), cfg.threads,
                     [&](std::size_t sd) { part[sd] = verify_relations_L2(m, mc.j_max, {samples[sd]}); });
        for (std::size_t r = 0; r < part[0].size(); ++r) {
            RelationResidualRow row = part[0][r];
            std::vector<double> vals;
            for (const auto& p : part) vals.push_back(p[r].residual);
            MeanSe ms = mean_se(vals);
            row.residual = row.skipped ? 0.0 : ms.mean;
            row.stderr_ = row.skipped ? 0.0 : ms.se;
            rep.relations.push_back(row);
        }
    }
    rep.lambda_matches_display = lambda_matches_displayed_blocks();
    rep.relations_match_transpose = displayed_lambda_is_transposed_relation(32);
    rep.l1_bit_identical = l1_reduction_bit_identical(cfg.seed, 16, 30, 0.1);

    Objective obj(DataSpec::synthetic(Vector::Constant(1, mc.teacher)), cfg.loss, cfg.s);
    MultiLimitState lim = init_multi_limit(mc.L, cfg.s);
    for (long k = 0; k < mc.kappa; ++k) advance(lim, mc.tau, obj);
    rep.limit_predictor = predictor_multilayer_limit(lim);
    const std::size_t ns = static_cast<std::size_t>(mc.seeds);
    std::vector<MultilayerSweepRow> cells(mc.widths.size() * ns);
    parallel_for(cells.size(), cfg.threads, [&](std::size_t c) {
        const int m = mc.widths[c / ns];
        const int seed = static_cast<int>(c % ns);
        MultiFiniteState st = init_multi_finite(m, mc.L, cell_stream(cfg.seed, m, seed), cfg.init, cfg.s);
        MultilayerSweepRow row{mc.L, m, seed, mc.kappa, 0.0, false};
        try {
            for (long k = 0; k < mc.kappa; ++k) advance(st, mc.tau, obj);
            double e = predictor_multilayer_finite(st) - rep.limit_predictor;
            row.sq_error = e * e;
        } catch (const DivergenceError&) {
            row.diverged = true;
        }
        cells[c] = row;
    });
    rep.sweep = cells;
    std::vector<double> xs, ys;
    for (std::size_t w = 0; w < mc.widths.size(); ++w) {
        std::vector<double> e;
        for (std::size_t sd = 0; sd < ns; ++sd)
            if (!cells[w * ns + sd].diverged) e.push_back(cells[w * ns + sd].sq_error);
        if (2 * e.size() < ns) continue;
        double mean = mean_se(e).mean;
        rep.mean_error.emplace_back(mc.widths[w], mean);
        xs.push_back(mc.widths[w]);
        ys.push_back(mean);
    }
    if (xs.size() >= 2) rep.fit = fit_loglog(xs, ys);
    return rep;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {
inline std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
    out << text;
}
} // namespace detail

/// CSV writers return the file contents; write_outputs puts them on disk.
inline std::string sweep_csv(const SweepResult& r) {
    std::ostringstream os;
    os << "m,seed,kappa,sq_error,v_kappa,B_norm2,diverged\n";
    for (const auto& x : r.rows)
        os << x.m << ',' << x.seed << ',' << x.kappa << ',' << detail::num(x.sq_error) << ',' << detail::num(x.v_kappa)
           << ',' << detail::num(x.B_norm2) << ',' << (x.diverged ? 1 : 0) << '\n';
    return os.str();
}

inline std::string sweep_summary_csv(const SweepResult& r) {
    std::ostringstream os;
    os << "m,kappa,completed,mean_sq_error,stderr,mean_rel_gap\n";
    for (const auto& x : r.summary)
        os << x.m << ',' << x.kappa << ',' << x.completed << ',' << detail::num(x.mean_sq_error) << ','
           << detail::num(x.stderr_) << ',' << detail::num(x.mean_rel_gap) << '\n';
    return os.str();
}

inline std::string fit_csv(const LineFit& ols, const LineFit& weighted) {
    std::ostringstream os;
    os << "method,slope,intercept,r2,slope_se,points\n";
    os << "ols," << detail::num(ols.slope) << ',' << detail::num(ols.intercept) << ',' << detail::num(ols.r2) << ','
       << detail::num(ols.slope_se) << ',' << ols.n << '\n';
    os << "weighted," << detail::num(weighted.slope) << ',' << detail::num(weighted.intercept) << ','
       << detail::num(weighted.r2) << ',' << detail::num(weighted.slope_se) << ',' << weighted.n << '\n';
    return os.str();
}

inline std::string tracking_csv(const SweepResult& r) {
    std::ostringstream os;
    os << "m,seed,kappa,v_kappa,B_norm2,rel_gap\n";
    for (const auto& x : r.rows) {
        if (x.diverged) continue;
        os << x.m << ',' << x.seed << ',' << x.kappa << ',' << detail::num(x.v_kappa) << ',' << detail::num(x.B_norm2)
           << ',' << detail::num(std::abs(x.v_kappa - x.B_norm2) / x.B_norm2) << '\n';
    }
    return os.str();
}

inline std::string trajectory_csv(const TrajectoryReport& r) {
    std::ostringstream os;
    os << "kind,s,seed,t,lambda_1,lambda_2\n";
    auto put = [&](const char* kind, double s, int seed, double t, const Vector& l) {
        os << kind << ',' << detail::num(s) << ',' << seed << ',' << detail::num(t) << ',' << detail::num(l(0)) << ','
           << detail::num(l.size() > 1 ? l(1) : 0.0) << '\n';
    };
    for (const auto& sc : r.scales) {
        for (std::size_t k = 0; k < sc.limit.size(); ++k) put("limit", sc.s, -1, sc.limit.times[k], sc.limit.lambdas[k]);
        for (std::size_t k = 0; k < sc.linear.size() && k < sc.limit.size(); ++k)
            put("linear", sc.s, -1, sc.limit.times[k], sc.linear[k]);
    }
    if (!r.scales.empty())
        for (const auto& [seed, path] : r.finite)
            for (std::size_t k = 0; k < path.size(); ++k) put("finite", r.scales.front().s, seed, r.finite_times[k], path[k]);
    put("target", 0.0, -1, 0.0, r.target);
    return os.str();
}

inline std::string histogram_csv(const HistogramReport& r) {
    std::ostringstream os;
    os << "sample,bin_lo,bin_hi,count\n";
    auto put = [&](const char* name, const Histogram& h) {
        for (std::size_t b = 0; b < h.counts.size(); ++b)
            os << name << ',' << detail::num(h.edges[b]) << ',' << detail::num(h.edges[b + 1]) << ',' << h.counts[b] << '\n';
    };
    put("raw", r.hist_raw);
    put("corrected", r.hist_corrected);
    return os.str();
}

inline std::string defects_csv(const BasisReport& r) {
    std::ostringstream os;
    os << "m,k1,k2,defect_jj,defect_jk,defect_kk,n_seeds\n";
    for (const auto& x : r.defects)
        os << x.m << ',' << x.k1 << ',' << x.k2 << ',' << detail::num(x.jj) << ',' << detail::num(x.jk) << ','
           << detail::num(x.kk) << ',' << x.n_seeds << '\n';
    return os.str();
}

inline std::string moments_csv(const MomentTable& t, const std::string& family) {
    std::ostringstream os;
    os << "m,k,p,moment,stderr\n";
    for (const auto& x : t.single)
        if (x.family == family)
            os << x.m << ',' << x.k << ',' << x.p << ',' << detail::num(x.moment) << ',' << detail::num(x.stderr_) << '\n';
    return os.str();
}

inline std::string mixed_moments_csv(const MomentTable& t) {
    std::ostringstream os;
    os << "m,k1,k2,statistic,moment,stderr,target\n";
    for (const auto& x : t.mixed)
        os << x.m << ',' << x.k1 << ',' << x.k2 << ',' << x.statistic << ',' << detail::num(x.moment) << ','
           << detail::num(x.stderr_) << ',' << detail::num(x.target) << '\n';
    return os.str();
}

inline std::string residuals_csv(const BasisReport& r) {
    std::ostringstream os;
    os << "m,k,residual_R,residual_S,residual_R4,n_seeds\n";
    for (const auto& x : r.residuals)
        os << x.m << ',' << x.k << ',' << detail::num(x.residual_R) << ',' << detail::num(x.residual_S) << ','
           << detail::num(x.residual_R4) << ',' << x.n_seeds << '\n';
    return os.str();
}

inline std::string enumeration_csv(const BasisReport& r) {
    std::ostringstream os;
    os << "m,k,family,max_abs_diff,equal\n";
    for (const auto& x : r.enumeration)
        os << x.m << ',' << x.k << ',' << x.family << ',' << detail::num(x.max_abs_diff) << ',' << (x.equal ? 1 : 0) << '\n';
    return os.str();
}

inline std::string relations_csv(const MultilayerReport& r) {
    std::ostringstream os;
    os << "L,m,relation,j,residual,stderr,skipped\n";
    for (const auto& x : r.relations)
        os << 2 << ',' << x.m << ',' << x.relation << ',' << x.j << ',' << detail::num(x.residual) << ','
           << detail::num(x.stderr_) << ',' << (x.skipped ? 1 : 0) << '\n';
    return os.str();
}

inline std::string multilayer_sweep_csv(const MultilayerReport& r) {
    std::ostringstream os;
    os << "L,m,seed,kappa,sq_error,diverged\n";
    for (const auto& x : r.sweep)
        os << x.L << ',' << x.m << ',' << x.seed << ',' << x.kappa << ',' << detail::num(x.sq_error) << ','
           << (x.diverged ? 1 : 0) << '\n';
    return os.str();
}

/// Writes the CSVs and manifest.json for one experiment; returns a summary.
inline nlohmann::json run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    const auto t0 = std::chrono::steady_clock::now();
    fs::path dir(cfg.output);
    fs::create_directories(dir);
    nlohmann::json summary;
    const std::string& e = cfg.experiment;
    if (e == "sweep-width" || e == "track-params") {
        SweepResult r = run_width_sweep(cfg);
        if (r.limit_divergence >= 0) throw DivergenceError(r.limit_divergence, "limit trajectory diverged");
        if (e == "sweep-width") {
            detail::write_file(dir / "sweep.csv", sweep_csv(r));
            detail::write_file(dir / "sweep_summary.csv", sweep_summary_csv(r));
            detail::write_file(dir / "fit.csv", fit_csv(r.fit, r.weighted_fit));
            summary = {{"slope", r.fit.slope}, {"weighted_slope", r.weighted_fit.slope}, {"fitted_widths", r.fitted_widths}};
        } else {
            detail::write_file(dir / "tracking.csv", tracking_csv(r));
            detail::write_file(dir / "sweep_summary.csv", sweep_summary_csv(r));
            nlohmann::json gaps = nlohmann::json::array();
            for (const auto& s : r.summary)
                if (s.kappa == r.checkpoints.back()) gaps.push_back({{"m", s.m}, {"mean_rel_gap", s.mean_rel_gap}});
            summary = {{"final_gaps", gaps}};
        }
    } else if (e == "trajectory") {
        TrajectoryReport r = run_trajectory_export(cfg);
        detail::write_file(dir / "trajectory.csv", trajectory_csv(r));
        nlohmann::json sc = nlohmann::json::array();
        for (const auto& x : r.scales)
            sc.push_back({{"s", x.s}, {"frechet_to_linear", x.frechet_to_linear}, {"endpoint_error", x.endpoint_error}});
        summary = {{"scales", sc}};
    } else if (e == "histogram") {
        HistogramReport r = run_nongaussian_histogram(cfg);
        detail::write_file(dir / "histogram.csv", histogram_csv(r));
        summary = {{"B1", r.B1},
                   {"B_norm2", r.B_norm2},
                   {"excess_kurtosis_init", r.kurtosis_init},
                   {"excess_kurtosis_raw", r.kurtosis_raw},
                   {"excess_kurtosis_corrected", r.kurtosis_corrected}};
    } else if (e == "implicit-bias") {
        ImplicitBiasReport r = run_implicit_bias(cfg);
        std::ostringstream os;
        write_trajectory_csv(os, r.flow);
        detail::write_file(dir / "flow.csv", os.str());
        summary = {{"endpoint_error", r.endpoint_error},
                   {"max_span_defect", r.max_span_defect},
                   {"rate", r.rate.rate},
                   {"rate_r2", r.rate.r2},
                   {"plateau_end", r.rate.plateau_end},
                   {"balancedness_relative", r.balance.relative()}};
    } else if (e == "basis-verify") {
        BasisReport r = run_basis_verification(cfg);
        detail::write_file(dir / "defects.csv", defects_csv(r));
        detail::write_file(dir / "moments.csv", moments_csv(r.moments, "J"));
        detail::write_file(dir / "k_moments.csv", moments_csv(r.moments, "K"));
        detail::write_file(dir / "mixed_moments.csv", mixed_moments_csv(r.moments));
        detail::write_file(dir / "residuals.csv", residuals_csv(r));
        detail::write_file(dir / "enumeration.csv", enumeration_csv(r));
        summary = {{"defect_slope", r.defect_fit.slope}};
    } else if (e == "multilayer-verify") {
        MultilayerReport r = run_multilayer_verify(cfg);
        detail::write_file(dir / "relations.csv", relations_csv(r));
        detail::write_file(dir / "multilayer_sweep.csv", multilayer_sweep_csv(r));
        summary = {{"lambda_matches_display", r.lambda_matches_display},
                   {"relations_match_transpose", r.relations_match_transpose},
                   {"l1_bit_identical", r.l1_bit_identical},
                   {"slope", r.fit.slope}};
    } else {
        throw ConfigError("unknown experiment '" + e + "'");
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json manifest = {{"experiment", e},
                               {"version", WLNN_VERSION},
                               {"master_seed", cfg.seed},
                               {"config", config_to_json(cfg)},
                               {"summary", summary},
                               {"wall_time_seconds", wall}};
    detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    return manifest;
}

} // namespace wlnn

#endif
