#pragma once

#include "coreplan/features.hpp"
#include "coreplan/mdp.hpp"
#include "coreplan/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace coreplan {

/// Random MDP with rewards uniform on [-1, 1] and `branching` reachable next states per (s, a).
inline Mdp random_mdp(int num_states, int num_actions, double gamma, CounterRng& rng, int branching = 3) {
    const int k = std::clamp(branching, 1, num_states);
    const Eigen::Index rows = static_cast<Eigen::Index>(num_states) * num_actions;
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(rows, num_states);
    Eigen::VectorXd r(rows);
    std::vector<int> states(static_cast<std::size_t>(num_states));
    for (Eigen::Index row = 0; row < rows; ++row) {
        std::iota(states.begin(), states.end(), 0);
        std::shuffle(states.begin(), states.end(), rng);
        double total = 0.0;
        for (int j = 0; j < k; ++j) {
            const double w = 0.05 + rng.uniform();
            p(row, states[static_cast<std::size_t>(j)]) = w;
            total += w;
        }
        p.row(row) /= total;
        r[row] = rng.uniform(-1.0, 1.0);
    }
    return Mdp(num_states, num_actions, std::move(p), std::move(r), gamma);
}

struct FeaturedCore {
    FeatureMap features;
    CoreSet core;
};

enum class FeatureFamily { tabular, bias_only, bias_value_noise, hard_aggregation, convex_mixture, noisy_value };

inline const char* to_string(FeatureFamily f) {
    switch (f) {
        case FeatureFamily::tabular: return "tabular";
        case FeatureFamily::bias_only: return "bias-only";
        case FeatureFamily::bias_value_noise: return "bias-value-noise";
        case FeatureFamily::hard_aggregation: return "hard-aggregation";
        case FeatureFamily::convex_mixture: return "convex-mixture";
        case FeatureFamily::noisy_value: return "noisy-value";
    }
    return "unknown";
}

inline FeatureFamily feature_family_from_string(const std::string& name) {
    for (auto f : {FeatureFamily::tabular, FeatureFamily::bias_only, FeatureFamily::bias_value_noise,
                   FeatureFamily::hard_aggregation, FeatureFamily::convex_mixture, FeatureFamily::noisy_value})
        if (name == to_string(f)) return f;
    throw std::invalid_argument("unknown feature family '" + name + "'");
}

inline std::vector<int> random_subset(int n, int k, CounterRng& rng) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Identity features; every state is a core state.
inline FeaturedCore tabular_features(int num_states) {
    FeatureMap f(Eigen::MatrixXd::Identity(num_states, num_states));
    CoreSet core = CoreSet::all_states(f);
    return {std::move(f), std::move(core)};
}

/// A single constant feature; any one state is a valid core set.
inline FeaturedCore bias_only_features(int num_states, int core_state = 0) {
    FeatureMap f(Eigen::MatrixXd::Ones(num_states, 1));
    CoreSet core(f, {core_state});
    return {std::move(f), std::move(core)};
}

/// Columns (1, v*, noise); v* lies in the span so the approximation error is zero.
inline FeaturedCore bias_value_noise_features(const ValueFunction& v_star, CounterRng& rng) {
    const Eigen::Index S = v_star.size();
    Eigen::MatrixXd phi(S, 3);
    phi.col(0).setOnes();
    phi.col(1) = v_star;
    for (Eigen::Index s = 0; s < S; ++s) phi(s, 2) = rng.uniform(-1.0, 1.0);
    FeatureMap f(std::move(phi));
    CoreSet core = CoreSet::all_states(f);
    return {std::move(f), std::move(core)};
}

namespace detail {
inline Eigen::MatrixXd random_core_rows(int m, int d, CounterRng& rng) {
    Eigen::MatrixXd rows(m, d);
    rows.col(0).setOnes();
    for (int k = 0; k < m; ++k)
        for (int j = 1; j < d; ++j) rows(k, j) = rng.uniform(-1.0, 1.0);
    return rows;
}
}  // namespace detail

/// Each non-core state copies the feature row of a random core state.
inline FeaturedCore hard_aggregation_features(int num_states, int core_size, int dim, CounterRng& rng) {
    if (core_size < 1 || core_size > num_states || dim < 1) throw std::invalid_argument("hard aggregation: bad sizes");
    const std::vector<int> core_idx = random_subset(num_states, core_size, rng);
    const Eigen::MatrixXd rows = detail::random_core_rows(core_size, dim, rng);
    Eigen::MatrixXd phi(num_states, dim);
    std::vector<bool> is_core(static_cast<std::size_t>(num_states), false);
    for (int k = 0; k < core_size; ++k) {
        phi.row(core_idx[static_cast<std::size_t>(k)]) = rows.row(k);
        is_core[static_cast<std::size_t>(core_idx[static_cast<std::size_t>(k)])] = true;
    }
    for (int s = 0; s < num_states; ++s)
        if (!is_core[static_cast<std::size_t>(s)]) phi.row(s) = rows.row(static_cast<Eigen::Index>(rng.below(core_size)));
    FeatureMap f(std::move(phi));
    CoreSet core(f, core_idx);
    return {std::move(f), std::move(core)};
}

/// Each non-core state's features are a random convex combination of the core rows.
inline FeaturedCore convex_mixture_features(int num_states, int core_size, int dim, CounterRng& rng) {
    if (core_size < 1 || core_size > num_states || dim < 1) throw std::invalid_argument("convex mixture: bad sizes");
    const std::vector<int> core_idx = random_subset(num_states, core_size, rng);
    const Eigen::MatrixXd rows = detail::random_core_rows(core_size, dim, rng);
    Eigen::MatrixXd phi(num_states, dim);
    std::vector<bool> is_core(static_cast<std::size_t>(num_states), false);
    for (int k = 0; k < core_size; ++k) {
        phi.row(core_idx[static_cast<std::size_t>(k)]) = rows.row(k);
        is_core[static_cast<std::size_t>(core_idx[static_cast<std::size_t>(k)])] = true;
    }
    for (int s = 0; s < num_states; ++s) {
        if (is_core[static_cast<std::size_t>(s)]) continue;
        Eigen::VectorXd z(core_size);
        for (int k = 0; k < core_size; ++k) z[k] = -std::log(1.0 - rng.uniform());
        z /= z.sum();
        phi.row(s) = z.transpose() * rows;
    }
    FeatureMap f(std::move(phi));
    CoreSet core(f, core_idx);
    return {std::move(f), std::move(core)};
}

/**
 * Columns (1, v* + noise). The feature cloud is an interval, so the states
 * attaining its minimum and maximum form a valid core set.
 */
inline FeaturedCore noisy_value_features(const ValueFunction& v_star, double noise_scale, CounterRng& rng) {
    const Eigen::Index S = v_star.size();
    Eigen::MatrixXd phi(S, 2);
    phi.col(0).setOnes();
    for (Eigen::Index s = 0; s < S; ++s) phi(s, 1) = v_star[s] + noise_scale * rng.uniform(-1.0, 1.0);
    Eigen::Index lo = 0, hi = 0;
    phi.col(1).minCoeff(&lo);
    phi.col(1).maxCoeff(&hi);
    std::vector<int> idx{static_cast<int>(lo)};
    if (hi != lo) idx.push_back(static_cast<int>(hi));
    std::sort(idx.begin(), idx.end());
    FeatureMap f(std::move(phi));
    CoreSet core(f, idx);
    return {std::move(f), std::move(core)};
}

}  // namespace coreplan
