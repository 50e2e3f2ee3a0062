#pragma once

#include "coreplan/instances.hpp"
#include "coreplan/lp.hpp"
#include "coreplan/mdp.hpp"
#include "coreplan/rng.hpp"

#include <Eigen/Dense>

#include <vector>

namespace fixtures {

using coreplan::Mdp;

// S = 1, one action per reward entry, every action self-loops.
inline Mdp single_state(const std::vector<double>& rewards, double gamma) {
    const int A = static_cast<int>(rewards.size());
    Eigen::MatrixXd p = Eigen::MatrixXd::Ones(A, 1);
    Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(rewards.data(), A);
    return Mdp(1, A, p, r, gamma);
}

// Two states, one action: state 0 moves to state 1 with reward 0, state 1 is absorbing with reward 1.
inline Mdp two_state_chain(double gamma) {
    Eigen::MatrixXd p(2, 2);
    p << 0, 1,
         0, 1;
    Eigen::VectorXd r(2);
    r << 0, 1;
    return Mdp(2, 1, p, r, gamma);
}

inline Mdp random_instance(std::uint64_t seed, int S, int A, double gamma, int branching = 3) {
    coreplan::CounterRng rng(seed, 17);
    return coreplan::random_mdp(S, A, gamma, rng, branching);
}

// Dual LP of the MDP: max mu'r s.t. sum_a mu(s',a) - gamma sum_{s,a} P(s'|s,a) mu(s,a) = [s' == s0], mu >= 0.
inline coreplan::lp::LinearProgram mdp_dual_lp(const Mdp& mdp, int s0) {
    const int S = mdp.num_states();
    const int A = mdp.num_actions();
    coreplan::lp::LinearProgram lp;
    lp.sense = coreplan::lp::Sense::maximize;
    lp.objective = mdp.rewards();
    lp.eq_matrix = -mdp.gamma() * mdp.transitions().transpose();
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) lp.eq_matrix(s, mdp.index(s, a)) += 1.0;
    lp.eq_rhs = Eigen::VectorXd::Unit(S, s0);
    return lp;
}

// Primal LP: min v(s0) s.t. r + gamma P v <= E v, v free.
inline coreplan::lp::LinearProgram mdp_primal_lp(const Mdp& mdp, int s0) {
    const int S = mdp.num_states();
    const int A = mdp.num_actions();
    coreplan::lp::LinearProgram lp;
    lp.objective = Eigen::VectorXd::Unit(S, s0);
    lp.le_matrix = mdp.gamma() * mdp.transitions();
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) lp.le_matrix(mdp.index(s, a), s) -= 1.0;
    lp.le_rhs = -mdp.rewards();
    lp.free_variables.assign(static_cast<std::size_t>(S), true);
    return lp;
}

}  // namespace fixtures
