#ifndef WLNN_DATA_HPP
#define WLNN_DATA_HPP

#include "numerics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace wlnn {

class DataError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Sample {
    Vector x;
    double y = 0.0;
};

enum class DataKind { synthetic_teacher, empirical };

/// Data distribution: either x ~ N(0, Id), y = x.teacher, or a finite sample set.
struct DataSpec {
    DataKind kind = DataKind::synthetic_teacher;
    int d = 1;
    Vector teacher;
    std::vector<Sample> samples;
    std::optional<int> minibatch;

    static DataSpec synthetic(const Vector& teacher, std::optional<int> minibatch = std::nullopt) {
        DataSpec s;
        s.kind = DataKind::synthetic_teacher;
        s.d = static_cast<int>(teacher.size());
        s.teacher = teacher;
        s.minibatch = minibatch;
        s.validate();
        return s;
    }

    static DataSpec empirical(std::vector<Sample> samples, std::optional<int> minibatch = std::nullopt) {
        if (samples.empty()) throw DataError("empirical data needs at least one sample");
        DataSpec s;
        s.kind = DataKind::empirical;
        s.d = static_cast<int>(samples.front().x.size());
        s.samples = std::move(samples);
        s.minibatch = minibatch;
        s.validate();
        return s;
    }

    void validate() const {
        if (d < 1) throw DataError("input dimension must be positive");
        if (minibatch && *minibatch < 1) throw DataError("minibatch size must be positive");
        if (kind == DataKind::synthetic_teacher) {
            if (teacher.size() != d) throw DataError("teacher length differs from d");
        } else {
            if (samples.empty()) throw DataError("empirical data needs at least one sample");
            for (const auto& s : samples)
                if (s.x.size() != d) throw DataError("sample dimension differs from d");
        }
    }
};

enum class LossKind { square, logistic_smooth, custom_table };

/// Loss L(yhat, y) together with its derivative in yhat.
///
/// custom_table stores knots (r_k, L'(r_k)) in the residual r = yhat - y;
/// L' is interpolated linearly and held constant outside the table.
struct LossSpec {
    LossKind kind = LossKind::square;
    std::vector<std::pair<double, double>> table;

    static LossSpec square() { return {}; }
    static LossSpec logistic() { return {LossKind::logistic_smooth, {}}; }
    static LossSpec custom(std::vector<std::pair<double, double>> knots) {
        if (knots.size() < 2) throw DataError("custom loss table needs at least two knots");
        std::sort(knots.begin(), knots.end());
        for (std::size_t i = 1; i < knots.size(); ++i)
            if (knots[i].first == knots[i - 1].first) throw DataError("duplicate knot in loss table");
        return {LossKind::custom_table, std::move(knots)};
    }

    double derivative(double yhat, double y) const {
        switch (kind) {
        case LossKind::square: return yhat - y;
        case LossKind::logistic_smooth: return -y / (1.0 + std::exp(y * yhat));
        case LossKind::custom_table: return table_derivative(yhat - y);
        }
        return 0.0;
    }

    double value(double yhat, double y) const {
        switch (kind) {
        case LossKind::square: return 0.5 * (y - yhat) * (y - yhat);
        case LossKind::logistic_smooth: {
            double z = -y * yhat;
            return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        }
        case LossKind::custom_table: return table_integral(yhat - y);
        }
        return 0.0;
    }

private:
    double table_derivative(double r) const {
        if (r <= table.front().first) return table.front().second;
        if (r >= table.back().first) return table.back().second;
        auto it = std::upper_bound(table.begin(), table.end(), r,
                                   [](double v, const std::pair<double, double>& k) { return v < k.first; });
        const auto& hi = *it;
        const auto& lo = *(it - 1);
        double w = (r - lo.first) / (hi.first - lo.first);
        return lo.second + w * (hi.second - lo.second);
    }

    // Integral of the interpolated derivative from 0 to r (piecewise trapezoid).
    double table_integral(double r) const {
        std::vector<double> pts{0.0, r};
        for (const auto& k : table)
            if ((k.first > std::min(0.0, r)) && (k.first < std::max(0.0, r))) pts.push_back(k.first);
        std::sort(pts.begin(), pts.end());
        double acc = 0.0;
        for (std::size_t i = 1; i < pts.size(); ++i)
            acc += 0.5 * (pts[i] - pts[i - 1]) * (table_derivative(pts[i]) + table_derivative(pts[i - 1]));
        return r >= 0 ? acc : -acc;
    }
};

struct PopulationMoments {
    Matrix M;
    Vector b;
    double y2 = 0.0; ///< second moment of the label
    int rank = 0;
    Vector eigenvalues;  ///< ascending, all d of them
    Matrix eigenvectors; ///< columns match eigenvalues
    double tolerance = 0.0;

    int dim() const { return static_cast<int>(b.size()); }

    /// Eigenvalues counted as nonzero, ascending.
    Vector nonzero_eigenvalues() const { return eigenvalues.tail(rank); }

    /// Orthonormal basis of ker(M) as columns (possibly zero columns).
    Matrix kernel_basis() const { return eigenvectors.leftCols(dim() - rank); }
};

inline PopulationMoments moments_from(const Matrix& M, const Vector& b, double y2) {
    if (M.rows() != M.cols() || M.rows() != b.size()) throw DimensionError("moments: shape mismatch");
    PopulationMoments mom;
    mom.M = 0.5 * (M + M.transpose());
    mom.b = b;
    mom.y2 = y2;
    Eigen::SelfAdjointEigenSolver<Matrix> es(mom.M);
    mom.eigenvalues = es.eigenvalues();
    mom.eigenvectors = es.eigenvectors();
    double zmax = mom.eigenvalues.size() ? std::max(0.0, mom.eigenvalues.maxCoeff()) : 0.0;
    mom.tolerance = 1e-10 * zmax;
    mom.rank = 0;
    for (long i = 0; i < mom.eigenvalues.size(); ++i)
        if (zmax > 0 && mom.eigenvalues(i) > mom.tolerance) ++mom.rank;
    return mom;
}

inline PopulationMoments population_moments(const DataSpec& data) {
    data.validate();
    if (data.kind == DataKind::synthetic_teacher) {
        Matrix M = Matrix::Identity(data.d, data.d);
        return moments_from(M, data.teacher, data.teacher.squaredNorm());
    }
    Matrix M = Matrix::Zero(data.d, data.d);
    Vector b = Vector::Zero(data.d);
    double y2 = 0.0;
    for (const auto& s : data.samples) {
        M.noalias() += s.x * s.x.transpose();
        b += s.y * s.x;
        y2 += s.y * s.y;
    }
    double n = static_cast<double>(data.samples.size());
    return moments_from(M / n, b / n, y2 / n);
}

/// M^+ b restricted to the range of M.
inline Vector min_l2_minimizer(const PopulationMoments& mom) {
    Vector out = Vector::Zero(mom.dim());
    for (int k = mom.dim() - mom.rank; k < mom.dim(); ++k) {
        Vector v = mom.eigenvectors.col(k);
        out += (v.dot(mom.b) / mom.eigenvalues(k)) * v;
    }
    return out;
}

/// Gradient factor s * mean(x L'(s lambda.x, y)) over an explicit batch.
inline Vector xi_batch(const Vector& lambda, const std::vector<Sample>& batch, const LossSpec& loss, double s) {
    Vector out = Vector::Zero(lambda.size());
    for (const auto& smp : batch) out += smp.x * loss.derivative(s * lambda.dot(smp.x), smp.y);
    return (s / static_cast<double>(batch.size())) * out;
}

inline double energy_batch(const Vector& lambda, const std::vector<Sample>& batch, const LossSpec& loss, double s) {
    double acc = 0.0;
    for (const auto& smp : batch) acc += loss.value(s * lambda.dot(smp.x), smp.y);
    return acc / static_cast<double>(batch.size());
}

/// Caches the data functionals needed at every optimisation step.
///
/// For the square loss everything is evaluated in closed form through the
/// population moments. Other losses use the full sample set, or a fresh
/// minibatch passed in by the caller.
class Objective {
public:
    Objective(DataSpec data, LossSpec loss, double s = 1.0)
        : data_(std::move(data)), loss_(std::move(loss)), s_(s), mom_(population_moments(data_)) {
        if (!(s_ > 0)) throw DataError("predictor scale must be positive");
        target_ = min_l2_minimizer(mom_);
        e_inf_ = 0.5 * (mom_.y2 - target_.dot(mom_.M * target_));
        if (e_inf_ < 0 && e_inf_ > -1e-12 * std::max(1.0, mom_.y2)) e_inf_ = 0.0;
    }

    const DataSpec& data() const { return data_; }
    const LossSpec& loss() const { return loss_; }
    const PopulationMoments& moments() const { return mom_; }
    double scale() const { return s_; }
    int dim() const { return data_.d; }

    /// Minimal-norm risk minimiser expressed in the effective (scaled) predictor.
    const Vector& target() const { return target_; }
    double e_inf() const { return e_inf_; }

    bool closed_form() const { return loss_.kind == LossKind::square; }

    /// xi for the raw (unscaled) predictor lambda.
    Vector xi(const Vector& lambda) const {
        if (lambda.size() != data_.d) throw DimensionError("xi: lambda has wrong dimension");
        if (closed_form()) return s_ * (s_ * (mom_.M * lambda) - mom_.b);
        if (data_.kind == DataKind::empirical) return xi_batch(lambda, data_.samples, loss_, s_);
        throw DataError("non-square loss on synthetic data requires a minibatch");
    }

    Vector xi(const Vector& lambda, const std::vector<Sample>& batch) const {
        return xi_batch(lambda, batch, loss_, s_);
    }

    /// Risk of the effective predictor s*lambda.
    double energy(const Vector& lambda) const {
        if (closed_form()) {
            Vector diff = s_ * lambda - target_;
            return 0.5 * diff.dot(mom_.M * diff) + e_inf_;
        }
        if (data_.kind == DataKind::empirical) return energy_batch(lambda, data_.samples, loss_, s_);
        throw DataError("non-square loss on synthetic data requires a minibatch");
    }

    bool stochastic() const { return data_.minibatch.has_value(); }

    /// Fresh minibatch drawn from the data distribution.
    std::vector<Sample> draw_batch(RngStream& rng) const {
        int n = data_.minibatch.value_or(1);
        std::vector<Sample> batch(static_cast<std::size_t>(n));
        for (auto& smp : batch) {
            if (data_.kind == DataKind::synthetic_teacher) {
                smp.x = sample_vector(rng, data_.d, Dist::gaussian);
                smp.y = smp.x.dot(data_.teacher);
            } else {
                std::uniform_int_distribution<std::size_t> pick(0, data_.samples.size() - 1);
                smp = data_.samples[pick(rng.engine())];
            }
        }
        return batch;
    }

private:
    DataSpec data_;
    LossSpec loss_;
    double s_;
    PopulationMoments mom_;
    Vector target_;
    double e_inf_ = 0.0;
};

inline Vector xi(const Vector& lambda, const DataSpec& data, const LossSpec& loss, double s = 1.0) {
    return Objective(data, loss, s).xi(lambda);
}

inline DataSpec data_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> allowed{"kind", "d", "teacher", "samples", "minibatch"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw DataError("unknown data key '" + it.key() + "'");
    std::string kind = j.at("kind").get<std::string>();
    int d = j.at("d").get<int>();
    std::optional<int> mb;
    if (j.contains("minibatch") && !j.at("minibatch").is_null()) mb = j.at("minibatch").get<int>();
    if (kind == "synthetic_teacher") {
        auto t = j.at("teacher").get<std::vector<double>>();
        if (static_cast<int>(t.size()) != d) throw DataError("teacher length differs from d");
        return DataSpec::synthetic(Eigen::Map<Vector>(t.data(), d), mb);
    }
    if (kind == "empirical") {
        std::vector<Sample> samples;
        for (const auto& row : j.at("samples")) {
            auto v = row.get<std::vector<double>>();
            if (static_cast<int>(v.size()) != d + 1) throw DataError("sample row must hold d inputs and a label");
            Sample s;
            s.x = Eigen::Map<Vector>(v.data(), d);
            s.y = v.back();
            samples.push_back(std::move(s));
        }
        return DataSpec::empirical(std::move(samples), mb);
    }
    throw DataError("unknown data kind '" + kind + "'");
}

inline nlohmann::json data_to_json(const DataSpec& data) {
    nlohmann::json j;
    j["d"] = data.d;
    if (data.kind == DataKind::synthetic_teacher) {
        j["kind"] = "synthetic_teacher";
        j["teacher"] = std::vector<double>(data.teacher.data(), data.teacher.data() + data.teacher.size());
    } else {
        j["kind"] = "empirical";
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& s : data.samples) {
            std::vector<double> r(s.x.data(), s.x.data() + s.x.size());
            r.push_back(s.y);
            rows.push_back(r);
        }
        j["samples"] = rows;
    }
    j["minibatch"] = data.minibatch ? nlohmann::json(*data.minibatch) : nlohmann::json(nullptr);
    return j;
}

} // namespace wlnn

#endif
