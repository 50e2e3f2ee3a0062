#pragma once

#include "coreplan/features.hpp"
#include "coreplan/lp.hpp"
#include "coreplan/mdp.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace coreplan {

/// Raised when an exact CoreLP/LRALP solve ends infeasible or unbounded.
class CoreLpError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * Dual variable over the planning state and the core states, laid out as
 * A entries for the planning state followed by A entries per core state.
 * Membership in the feasible sets is checked on demand, not enforced.
 */
class DualVector {
public:
    DualVector() = default;
    DualVector(Eigen::VectorXd values, int num_actions) : values_(std::move(values)), actions_(num_actions) {
        if (num_actions < 1 || values_.size() < num_actions || values_.size() % num_actions != 0)
            throw std::invalid_argument("DualVector length must be a positive multiple of num_actions");
    }

    const Eigen::VectorXd& values() const { return values_; }
    Eigen::VectorXd& values() { return values_; }
    int num_actions() const { return actions_; }
    Eigen::Index size() const { return values_.size(); }
    int num_blocks() const { return static_cast<int>(values_.size() / actions_); }

    auto policy_block() const { return values_.head(actions_); }
    auto core_block() const { return values_.tail(values_.size() - actions_); }
    double l1() const { return values_.cwiseAbs().sum(); }

    /// Non-negative with the planning-state block summing to one.
    bool in_lambda(double tol) const {
        return values_.minCoeff() >= -tol && std::abs(policy_block().sum() - 1.0) <= tol;
    }

    /// In Lambda with total mass 1/(1-gamma).
    bool in_lambda_gamma(double gamma, double tol) const {
        return in_lambda(tol) && std::abs(values_.sum() - 1.0 / (1.0 - gamma)) <= tol;
    }

private:
    Eigen::VectorXd values_;
    int actions_ = 1;
};

/**
 * CoreLP data for one planning state. Row (block k, action a) of
 * `constraint_matrix` is gamma P_{sa} Phi - phi_s' for the k-th state of
 * (s0, core_1, ..., core_m); `objective` holds the matching rewards. The
 * planning state always occupies block 0, even when it is also a core state.
 */
struct CoreLpProblem {
    int planning_state = 0;
    int num_actions = 1;
    double gamma = 0.0;
    std::vector<int> block_states;
    Eigen::MatrixXd core_features;
    Eigen::MatrixXd constraint_matrix;
    Eigen::VectorXd objective;
    Eigen::VectorXd phi0;

    Eigen::Index num_duals() const { return constraint_matrix.rows(); }
    Eigen::Index dim() const { return constraint_matrix.cols(); }
    int core_size() const { return static_cast<int>(block_states.size()) - 1; }
};

/// Rows gamma P_{sa} Phi - phi_s' and rewards r_{sa} for every (s, a) with s in `states`, in order.
inline std::pair<Eigen::MatrixXd, Eigen::VectorXd> expected_feature_change(const Mdp& mdp, const FeatureMap& features,
                                                                           const std::vector<int>& states) {
    const int A = mdp.num_actions();
    const Eigen::Index rows = static_cast<Eigen::Index>(states.size()) * A;
    Eigen::MatrixXd b(rows, features.dim());
    Eigen::VectorXd r(rows);
    Eigen::Index row = 0;
    for (int s : states) {
        for (int a = 0; a < A; ++a, ++row) {
            b.row(row) = mdp.gamma() * (mdp.next_state_distribution(s, a) * features.matrix()) -
                         features.matrix().row(s);
            r[row] = mdp.reward(s, a);
        }
    }
    return {b, r};
}

inline CoreLpProblem build_corelp(const Mdp& mdp, const FeatureMap& features, const CoreSet& core, int s0) {
    if (!mdp.valid_state(s0)) throw std::out_of_range("build_corelp: invalid planning state");
    if (features.num_states() != mdp.num_states())
        throw std::invalid_argument("build_corelp: feature map and MDP disagree on S");
    CoreLpProblem p;
    p.planning_state = s0;
    p.num_actions = mdp.num_actions();
    p.gamma = mdp.gamma();
    p.block_states.reserve(core.indices().size() + 1);
    p.block_states.push_back(s0);
    p.block_states.insert(p.block_states.end(), core.indices().begin(), core.indices().end());
    p.core_features = core.phi_star();
    auto [b, r] = expected_feature_change(mdp, features, p.block_states);
    p.constraint_matrix = std::move(b);
    p.objective = std::move(r);
    p.phi0 = features.row(s0);
    return p;
}

/// Algorithm-1 style initial point: uniform over planning actions, uniform mass gamma/(1-gamma) over core cells.
inline DualVector initial_dual(int core_size, int num_actions, double gamma) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(core_size + 1) * num_actions);
    v.head(num_actions).setConstant(1.0 / num_actions);
    v.tail(v.size() - num_actions).setConstant(gamma / ((1.0 - gamma) * core_size * num_actions));
    return DualVector(std::move(v), num_actions);
}

struct CoreLpSolution {
    double value = 0.0;
    DualVector lambda;
};

/// Exact CoreLP: max lambda'Wr s.t. phi0' + lambda'B = 0, planning block sums to 1, lambda >= 0.
inline CoreLpSolution solve_corelp_exact(const CoreLpProblem& problem) {
    const Eigen::Index n = problem.num_duals();
    const Eigen::Index d = problem.dim();
    lp::LinearProgram prog;
    prog.sense = lp::Sense::maximize;
    prog.objective = problem.objective;
    prog.eq_matrix = Eigen::MatrixXd::Zero(d + 1, n);
    prog.eq_matrix.topRows(d) = problem.constraint_matrix.transpose();
    prog.eq_matrix.row(d).head(problem.num_actions).setOnes();
    prog.eq_rhs.resize(d + 1);
    prog.eq_rhs.head(d) = -problem.phi0;
    prog.eq_rhs[d] = 1.0;
    const lp::LpSolution sol = lp::solve_lp(prog);
    if (!sol.optimal())
        throw CoreLpError(std::string("CoreLP is ") + lp::to_string(sol.status) +
                          "; the feature map or core set violates its assumptions");
    return {sol.objective_value, DualVector(sol.x, problem.num_actions)};
}

/// Action distribution of the planning-state block, with tiny negatives clamped and mass renormalized.
inline Eigen::VectorXd extract_pi_dagger(const DualVector& lambda, double tol = 1e-6) {
    if (!lambda.in_lambda(tol)) throw std::invalid_argument("extract_pi_dagger: lambda is not in Lambda");
    Eigen::VectorXd pi = lambda.policy_block();
    for (Eigen::Index a = 0; a < pi.size(); ++a)
        if (pi[a] < 1e-10) pi[a] = 0.0;
    return pi / pi.sum();
}

/// f(lambda, theta) = lambda'Wr + phi0'theta + lambda'B theta.
inline double saddle_objective(const CoreLpProblem& problem, const Eigen::VectorXd& lambda,
                               const Eigen::VectorXd& theta) {
    if (lambda.size() != problem.num_duals() || theta.size() != problem.dim())
        throw std::invalid_argument("saddle_objective: dimension mismatch");
    return lambda.dot(problem.objective) + problem.phi0.dot(theta) +
           lambda.dot(problem.constraint_matrix * theta);
}

inline double saddle_objective(const CoreLpProblem& problem, const DualVector& lambda, const Eigen::VectorXd& theta) {
    return saddle_objective(problem, lambda.values(), theta);
}

struct LralpSolution {
    double value = 0.0;
    Eigen::VectorXd theta;
};

/// min mu'Phi theta s.t. the core-state Bellman constraints hold on Phi theta (theta free).
inline LralpSolution solve_lralp(const Mdp& mdp, const FeatureMap& features, const CoreSet& core,
                                 const Eigen::VectorXd& mu) {
    if (mu.size() != mdp.num_states()) throw std::invalid_argument("solve_lralp: mu must have length S");
    if (mu.minCoeff() < 0.0) throw std::invalid_argument("solve_lralp: mu must be non-negative");
    const auto [b, r] = expected_feature_change(mdp, features, core.indices());
    lp::LinearProgram prog;
    prog.objective = features.matrix().transpose() * mu;
    prog.le_matrix = b;
    prog.le_rhs = -r;
    prog.free_variables.assign(static_cast<std::size_t>(features.dim()), true);
    const lp::LpSolution sol = lp::solve_lp(prog);
    if (!sol.optimal()) throw CoreLpError(std::string("LRALP is ") + lp::to_string(sol.status));
    return {sol.objective_value, sol.x};
}

namespace detail {
inline double min_value_over_upper_bounds(const FeatureMap& features, const Eigen::MatrixXd& rows,
                                          const Eigen::VectorXd& targets, int s) {
    lp::LinearProgram prog;
    prog.objective = features.row(s);
    prog.le_matrix = -rows;
    prog.le_rhs = -targets;
    prog.free_variables.assign(static_cast<std::size_t>(features.dim()), true);
    const lp::LpSolution sol = lp::solve_lp(prog);
    if (!sol.optimal()) throw CoreLpError(std::string("J* LP is ") + lp::to_string(sol.status));
    return sol.objective_value;
}
}  // namespace detail

/// min phi_s'theta s.t. Phi theta >= v*.
inline double j_star_alp(const FeatureMap& features, const ValueFunction& v_star, int s) {
    return detail::min_value_over_upper_bounds(features, features.matrix(), v_star, s);
}

/// min phi_s'theta s.t. phi_c'theta >= v*(c) for every core state c.
inline double j_star_lra(const FeatureMap& features, const CoreSet& core, const ValueFunction& v_star, int s) {
    Eigen::VectorXd targets(core.size());
    for (int k = 0; k < core.size(); ++k) targets[k] = v_star[core.indices()[static_cast<std::size_t>(k)]];
    return detail::min_value_over_upper_bounds(features, core.phi_star(), targets, s);
}

/// Expected next-state distribution sum_a pi(a) P_{s0 a}.
inline Eigen::VectorXd next_state_mixture(const Mdp& mdp, int s0, const Eigen::VectorXd& pi) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(mdp.num_states());
    for (int a = 0; a < mdp.num_actions(); ++a) mu += pi[a] * mdp.next_state_distribution(s0, a).transpose();
    return mu;
}

/// Saddle objective of LRALP: g_mu(lambda*, theta) = lambda*'W*r + mu'Phi theta + lambda*'W*(gamma P - E)Phi theta.
inline double lralp_saddle_objective(const Mdp& mdp, const FeatureMap& features, const CoreSet& core,
                                     const Eigen::VectorXd& mu, const Eigen::VectorXd& lambda_core,
                                     const Eigen::VectorXd& theta) {
    const auto [b, r] = expected_feature_change(mdp, features, core.indices());
    return lambda_core.dot(r) + mu.dot(features.matrix() * theta) + lambda_core.dot(b * theta);
}

}  // namespace coreplan
