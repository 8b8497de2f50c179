#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

namespace consensus_opt {

struct NelderMeadOptions {
    int max_iters = 200;
    double diameter_tol = 1e-8; // stop when every vertex is within this of the best (inf-norm)
    double initial_step = 0.05;
    double reflection = 1.0;
    double expansion = 2.0;
    double contraction = 0.5;
    double shrink = 0.5;
};

struct NelderMeadResult {
    std::vector<double> x;
    double value = 0.0;
    int iterations = 0;
};

/// Derivative-free minimization of a small-dimensional objective.
inline NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                    std::vector<double> start, const NelderMeadOptions& opt = {}) {
    const std::size_t d = start.size();
    NelderMeadResult res;
    if (d == 0) {
        res.x = start;
        res.value = f(start);
        return res;
    }

    std::vector<std::vector<double>> pts(d + 1, start);
    for (std::size_t i = 0; i < d; ++i) pts[i + 1][i] += opt.initial_step;
    std::vector<double> vals(d + 1);
    for (std::size_t i = 0; i <= d; ++i) vals[i] = f(pts[i]);

    std::vector<std::size_t> order(d + 1);
    auto point_along = [&](const std::vector<double>& c, const std::vector<double>& w, double coef) {
        std::vector<double> p(d);
        for (std::size_t k = 0; k < d; ++k) p[k] = c[k] + coef * (c[k] - w[k]);
        return p;
    };

    int it = 0;
    for (; it < opt.max_iters; ++it) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
        const auto& best = pts[order.front()];

        double spread = 0.0;
        for (std::size_t i = 1; i <= d; ++i) {
            for (std::size_t k = 0; k < d; ++k) spread = std::max(spread, std::abs(pts[order[i]][k] - best[k]));
        }
        if (spread <= opt.diameter_tol) break;

        const std::size_t worst = order.back();
        std::vector<double> centroid(d, 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t k = 0; k < d; ++k) centroid[k] += pts[order[i]][k] / static_cast<double>(d);
        }

        const auto xr = point_along(centroid, pts[worst], opt.reflection);
        const double fr = f(xr);
        if (fr < vals[order.front()]) {
            const auto xe = point_along(centroid, pts[worst], opt.reflection * opt.expansion);
            const double fe = f(xe);
            if (fe < fr) {
                pts[worst] = xe;
                vals[worst] = fe;
            } else {
                pts[worst] = xr;
                vals[worst] = fr;
            }
            continue;
        }
        if (fr < vals[order[d - 1]]) {
            pts[worst] = xr;
            vals[worst] = fr;
            continue;
        }
        // contraction: outside if the reflected point beat the worst, inside otherwise
        const bool outside = fr < vals[worst];
        const auto xc = point_along(centroid, pts[worst], outside ? opt.contraction : -opt.contraction);
        const double fc = f(xc);
        if (fc < (outside ? fr : vals[worst])) {
            pts[worst] = xc;
            vals[worst] = fc;
            continue;
        }
        const auto anchor = pts[order.front()];
        for (std::size_t i = 1; i <= d; ++i) {
            auto& p = pts[order[i]];
            for (std::size_t k = 0; k < d; ++k) p[k] = anchor[k] + opt.shrink * (p[k] - anchor[k]);
            vals[order[i]] = f(p);
        }
    }

    const auto best = static_cast<std::size_t>(std::distance(vals.begin(), std::min_element(vals.begin(), vals.end())));
    res.x = pts[best];
    res.value = vals[best];
    res.iterations = it;
    return res;
}

} // namespace consensus_opt
