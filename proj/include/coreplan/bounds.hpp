#pragma once

#include <cmath>

// Right-hand sides of the approximation and optimization guarantees. All
// quantities assume rewards in [-1, 1].
namespace coreplan::bounds {

/// log A + gamma log m
inline double entropy_scale(int core_size, int num_actions, double gamma) {
    return std::log(static_cast<double>(num_actions)) + gamma * std::log(static_cast<double>(core_size));
}

/// |V_dagger - v*(s0)| <= 10 gamma eps / (1 - gamma)
inline double corelp_value(double eps, double gamma) { return 10.0 * gamma * eps / (1.0 - gamma); }

/// v*(s0) - E_{a~pi_dagger} q*(s0, a) <= 20 gamma eps / (1 - gamma)
inline double corelp_action(double eps, double gamma) { return 20.0 * gamma * eps / (1.0 - gamma); }

/// |V_LRALP(mu) - mu'v*| <= 10 |mu|_1 eps / (1 - gamma)
inline double lralp_value(double mu_l1, double eps, double gamma) { return 10.0 * mu_l1 * eps / (1.0 - gamma); }

/// |J*_ALP - J*_LRA|_inf <= 2 eps
inline double j_star_gap(double eps) { return 2.0 * eps; }

/// Primal ball radius (9/8) sqrt(m) / (1 - gamma).
inline double primal_radius(int core_size, double gamma) {
    return 1.125 * std::sqrt(static_cast<double>(core_size)) / (1.0 - gamma);
}

/// (9/4) sqrt(m (1 + 2 log A + 2 gamma log m)) / (1 - gamma)^2
inline double lipschitz_constant(int core_size, int num_actions, double gamma) {
    const double ell = entropy_scale(core_size, num_actions, gamma);
    return 2.25 * std::sqrt(core_size * (1.0 + 2.0 * ell)) / ((1.0 - gamma) * (1.0 - gamma));
}

/// Expected duality gap after T iterations: 14 C / sqrt(3 T).
inline double expected_duality_gap(double lipschitz, long long iterations) {
    return 14.0 * lipschitz / std::sqrt(3.0 * static_cast<double>(iterations));
}

/// v*(s0) - E q*(s0, a), a ~ pi_hat, after T iterations of the stochastic planner.
inline double planner_action(double eps, int core_size, int num_actions, double gamma, long long iterations) {
    const double h = 1.0 - gamma;
    const double ell2 = 1.0 + 2.0 * std::log(static_cast<double>(num_actions)) +
                        2.0 * gamma * std::log(static_cast<double>(core_size));
    return 32.0 * eps / h +
           21.0 / (2.0 * h * h) * std::sqrt(3.0 * core_size * ell2 / static_cast<double>(iterations));
}

/// Simulator queries consumed by T iterations: 2T(1 + (1 + m)A).
inline long long planner_queries(long long iterations, int core_size, int num_actions) {
    return 2LL * iterations * (1LL + static_cast<long long>(1 + core_size) * num_actions);
}

}  // namespace coreplan::bounds
