#ifndef WLNN_NUMERICS_HPP
#define WLNN_NUMERICS_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace wlnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class BudgetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(long kappa, const std::string& what)
        : std::runtime_error(what + " at step " + std::to_string(kappa)), kappa_(kappa) {}

    long kappa() const noexcept { return kappa_; }

private:
    long kappa_;
};

enum class Dist { gaussian, rademacher, uniform };

inline std::string to_string(Dist d) {
    switch (d) {
    case Dist::gaussian: return "gaussian";
    case Dist::rademacher: return "rademacher";
    case Dist::uniform: return "uniform";
    }
    return "gaussian";
}

inline Dist dist_from_string(const std::string& s) {
    if (s == "gaussian") return Dist::gaussian;
    if (s == "rademacher") return Dist::rademacher;
    if (s == "uniform") return Dist::uniform;
    throw std::invalid_argument("unknown distribution '" + s + "'");
}

/// A reproducible random stream identified by (seed, stream_id).
///
/// The engine state is a pure function of the pair, so streams can be
/// created in any order on any thread and still yield the same draws.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_id_(stream_id), engine_(make_engine(seed, stream_id)) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    /// Child stream keyed by an additional label; independent of draws made so far.
    RngStream child(std::uint64_t label) const {
        return RngStream(seed_, mix(stream_id_ ^ mix(label + 0x9e3779b97f4a7c15ULL)));
    }

    double gaussian() { return normal_(engine_); }

    double rademacher() { return (engine_() >> 63) ? 1.0 : -1.0; }

    double uniform_unit_variance() {
        static const double a = std::sqrt(3.0);
        return std::uniform_real_distribution<double>(-a, a)(engine_);
    }

    double draw(Dist d) {
        switch (d) {
        case Dist::gaussian: return gaussian();
        case Dist::rademacher: return rademacher();
        case Dist::uniform: return uniform_unit_variance();
        }
        return gaussian();
    }

    std::uint64_t next_u64() { return engine_(); }

    std::mt19937_64& engine() { return engine_; }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                          0x6a09e667u, 0xbb67ae85u};
        return std::mt19937_64(seq);
    }

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Fills a rows x cols matrix with i.i.d. mean-zero unit-variance entries,
/// drawn in row-major order.
inline Matrix sample_matrix(RngStream& rng, long rows, long cols, Dist dist) {
    if (rows < 1 || cols < 1)
        throw DimensionError("sample_matrix: dimensions must be positive, got " + std::to_string(rows) +
                             "x" + std::to_string(cols));
    Matrix out(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) out(i, j) = rng.draw(dist);
    return out;
}

inline Vector sample_vector(RngStream& rng, long n, Dist dist) {
    Matrix m = sample_matrix(rng, n, 1, dist);
    return m.col(0);
}

/// Largest singular value by power iteration on M^T M.
inline double spectral_norm_estimate(const Matrix& M, double rel_tol = 1e-10, int max_iter = 20000) {
    if (M.size() == 0) return 0.0;
    Vector v(M.cols());
    for (long i = 0; i < v.size(); ++i) v(i) = 1.0 + 0.01 * std::sin(1.0 + 7.0 * static_cast<double>(i));
    v.normalize();
    double sigma = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        Vector w = M.transpose() * (M * v);
        double nrm = w.norm();
        if (nrm == 0.0) return 0.0;
        double next = std::sqrt(nrm);
        v = w / nrm;
        if (it > 0 && std::abs(next - sigma) <= rel_tol * next) return next;
        sigma = next;
    }
    return sigma;
}

inline void require_same_size(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionError(std::string(what) + ": shape mismatch");
}

} // namespace wlnn

#endif
