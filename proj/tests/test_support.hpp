#pragma once

#include <random>
#include <vector>

#include "consensus_opt/consensus_opt.hpp"

namespace testing_support {

using consensus_opt::Matrix;
using consensus_opt::Vector;

/// Consensus matrix with off-diagonal rates uniform in (0, max_rate) present with probability `density`.
inline Matrix random_consensus(std::mt19937_64& rng, Eigen::Index n, double density = 0.7, double max_rate = 3.0) {
    std::uniform_real_distribution<double> rate(0.0, max_rate);
    std::bernoulli_distribution present(density);
    Matrix a = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i != j && present(rng)) a(i, j) = rate(rng);
        }
        a(i, i) = -a.row(i).sum();
    }
    return a;
}

inline consensus_opt::SwitchedSystem random_system(std::mt19937_64& rng, Eigen::Index n, std::size_t r,
                                                   double density = 0.7) {
    std::vector<consensus_opt::ConsensusMatrix> ms;
    for (std::size_t i = 0; i < r; ++i) ms.emplace_back(random_consensus(rng, n, density));
    return consensus_opt::SwitchedSystem(std::move(ms));
}

inline Vector random_state(std::mt19937_64& rng, Eigen::Index n) {
    std::normal_distribution<double> g(0.0, 1.0);
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = g(rng);
    return x;
}

// T = c / max_i |A_i|_inf with c in [0.25, 4]: V decays by at most e^-8, so V keeps ~9 significant digits.
inline double moderate_horizon(std::mt19937_64& rng, const consensus_opt::SwitchedSystem& sys) {
    std::uniform_real_distribution<double> c(0.25, 4.0);
    double rate = 1e-3;
    for (const auto& a : sys.matrices()) rate = std::max(rate, a.cwiseAbs().rowwise().sum().maxCoeff());
    return c(rng) / rate;
}

inline Vector random_simplex(std::mt19937_64& rng, std::size_t r) {
    std::exponential_distribution<double> e(1.0);
    Vector u(static_cast<Eigen::Index>(r));
    for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = e(rng);
    return u / u.sum();
}

/// Piecewise control with 1..max_segments segments; vertex-valued when `bang` is true.
inline consensus_opt::PiecewiseControl random_control(std::mt19937_64& rng, std::size_t r, double horizon,
                                                      int max_segments = 6, bool bang = false) {
    std::uniform_int_distribution<int> count(1, max_segments);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> vertex(0, static_cast<int>(r) - 1);
    const int k = count(rng);
    std::vector<double> cuts;
    for (int i = 0; i + 1 < k; ++i) cuts.push_back(horizon * (0.02 + 0.96 * unit(rng)));
    std::sort(cuts.begin(), cuts.end());
    std::vector<double> bps{0.0};
    for (double c : cuts) {
        if (c > bps.back() + 1e-6 * horizon) bps.push_back(c);
    }
    bps.push_back(horizon);
    std::vector<Vector> vals;
    for (std::size_t j = 0; j + 1 < bps.size(); ++j) {
        vals.push_back(bang ? consensus_opt::simplex_vertex(r, static_cast<std::size_t>(vertex(rng)))
                            : random_simplex(rng, r));
    }
    return consensus_opt::PiecewiseControl(std::move(bps), std::move(vals));
}

} // namespace testing_support
