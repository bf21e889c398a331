#ifndef WLNN_STATS_HPP
#define WLNN_STATS_HPP

#include "numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace wlnn {

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    double slope_se = 0.0;
    std::size_t n = 0;
};

/// Weighted least squares fit y = intercept + slope * x. Empty weights means
/// ordinary least squares.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<double>& w = {}) {
    if (x.size() != y.size() || (!w.empty() && w.size() != x.size()))
        throw DimensionError("fit_line: size mismatch");
    if (x.size() < 2) throw std::invalid_argument("fit_line: need at least two points");
    auto weight = [&](std::size_t i) { return w.empty() ? 1.0 : w[i]; };
    double sw = 0, sx = 0, sy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sw += weight(i);
        sx += weight(i) * x[i];
        sy += weight(i) * y[i];
    }
    const double mx = sx / sw, my = sy / sw;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += weight(i) * (x[i] - mx) * (x[i] - mx);
        sxy += weight(i) * (x[i] - mx) * (y[i] - my);
        syy += weight(i) * (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0) throw std::invalid_argument("fit_line: degenerate abscissae");
    LineFit f;
    f.n = x.size();
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double sse = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double r = y[i] - f.intercept - f.slope * x[i];
        sse += weight(i) * r * r;
    }
    f.r2 = syy > 0 ? 1.0 - sse / syy : 1.0;
    if (x.size() > 2) f.slope_se = std::sqrt(sse / static_cast<double>(x.size() - 2) / sxx);
    return f;
}

/// Fit of log2(y) against log2(x).
inline LineFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y,
                          const std::vector<double>& w = {}) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0) || !(y[i] > 0)) throw std::invalid_argument("fit_loglog: non-positive value");
        lx.push_back(std::log2(x[i]));
        ly.push_back(std::log2(y[i]));
    }
    return fit_line(lx, ly, w);
}

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
    double sd = 0.0;
    std::size_t n = 0;
};

inline MeanSe mean_se(const std::vector<double>& v) {
    MeanSe out;
    out.n = v.size();
    if (v.empty()) return out;
    double s = 0;
    for (double x : v) s += x;
    out.mean = s / static_cast<double>(v.size());
    if (v.size() > 1) {
        double q = 0;
        for (double x : v) q += (x - out.mean) * (x - out.mean);
        out.sd = std::sqrt(q / static_cast<double>(v.size() - 1));
        out.se = out.sd / std::sqrt(static_cast<double>(v.size()));
    }
    return out;
}

/// Sample excess kurtosis m4 / m2^2 - 3 (plain moment estimator).
inline double excess_kurtosis(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double m2 = 0, m4 = 0;
    for (double x : v) {
        double c = (x - mean) * (x - mean);
        m2 += c;
        m4 += c * c;
    }
    m2 /= static_cast<double>(v.size());
    m4 /= static_cast<double>(v.size());
    return m2 > 0 ? m4 / (m2 * m2) - 3.0 : 0.0;
}

struct Histogram {
    std::vector<double> edges; ///< bins + 1 edges
    std::vector<long> counts;
};

inline Histogram histogram(const std::vector<double>& v, int bins, double lo, double hi) {
    if (bins < 1 || !(hi > lo)) throw std::invalid_argument("histogram: bad range");
    Histogram h;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    for (int b = 0; b <= bins; ++b) h.edges.push_back(lo + (hi - lo) * b / bins);
    for (double x : v) {
        if (x < lo || x > hi) continue;
        int b = static_cast<int>((x - lo) / (hi - lo) * bins);
        h.counts[static_cast<std::size_t>(std::min(b, bins - 1))]++;
    }
    return h;
}

/// Discrete Frechet distance between two polylines given as point lists.
inline double discrete_frechet(const std::vector<Vector>& p, const std::vector<Vector>& q) {
    if (p.empty() || q.empty()) throw std::invalid_argument("discrete_frechet: empty path");
    const std::size_t n = p.size(), m = q.size();
    std::vector<double> prev(m), cur(m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double dist = (p[i] - q[j]).norm();
            double best;
            if (i == 0 && j == 0) best = dist;
            else if (i == 0) best = std::max(cur[j - 1], dist);
            else if (j == 0) best = std::max(prev[j], dist);
            else best = std::max(std::min({prev[j], prev[j - 1], cur[j - 1]}), dist);
            cur[j] = best;
        }
        std::swap(prev, cur);
    }
    return prev[m - 1];
}

/// Every k-th element plus the last one, so that at most `target` remain.
template <class T>
std::vector<T> thin(const std::vector<T>& v, std::size_t target) {
    if (v.size() <= target || target < 2) return v;
    std::vector<T> out;
    const std::size_t step = (v.size() + target - 2) / (target - 1);
    for (std::size_t i = 0; i < v.size(); i += step) out.push_back(v[i]);
    if ((v.size() - 1) % step != 0) out.push_back(v.back());
    return out;
}

} // namespace wlnn

#endif
