#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace coreplan {

/// Thrown when tabular MDP data violates its invariants.
class InvalidModel : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using ValueFunction = Eigen::VectorXd;

/**
 * Tabular discounted MDP.
 *
 * Transitions are stored densely as an (S*A) x S row-stochastic matrix whose
 * row `s*A + a` is the next-state distribution of taking `a` in `s`. Rewards
 * are indexed the same way and lie in [-1, 1]. Immutable after construction.
 */
class Mdp {
public:
    static constexpr double kRowSumTolerance = 1e-12;

    Mdp(int num_states, int num_actions, Eigen::MatrixXd transitions, Eigen::VectorXd rewards,
        double gamma)
        : states_(num_states),
          actions_(num_actions),
          transitions_(std::move(transitions)),
          rewards_(std::move(rewards)),
          gamma_(gamma) {
        validate();
    }

    int num_states() const { return states_; }
    int num_actions() const { return actions_; }
    double gamma() const { return gamma_; }
    const Eigen::MatrixXd& transitions() const { return transitions_; }
    const Eigen::VectorXd& rewards() const { return rewards_; }

    Eigen::Index index(int s, int a) const { return static_cast<Eigen::Index>(s) * actions_ + a; }
    auto next_state_distribution(int s, int a) const { return transitions_.row(index(s, a)); }
    double reward(int s, int a) const { return rewards_[index(s, a)]; }

    bool valid_state(int s) const { return s >= 0 && s < states_; }
    bool valid_action(int a) const { return a >= 0 && a < actions_; }

private:
    void validate() const {
        if (states_ < 1) throw InvalidModel("num_states must be positive");
        if (actions_ < 1) throw InvalidModel("num_actions must be positive");
        if (!(gamma_ >= 0.0 && gamma_ < 1.0)) throw InvalidModel("gamma must lie in [0, 1)");
        const Eigen::Index rows = static_cast<Eigen::Index>(states_) * actions_;
        if (transitions_.rows() != rows || transitions_.cols() != states_)
            throw InvalidModel("transitions must have shape (S*A) x S");
        if (rewards_.size() != rows) throw InvalidModel("rewards must have length S*A");
        for (Eigen::Index row = 0; row < rows; ++row) {
            const auto p = transitions_.row(row);
            if (!p.allFinite() || p.minCoeff() < 0.0)
                throw InvalidModel("transition row " + std::to_string(row) + " has a negative or non-finite entry");
            if (std::abs(p.sum() - 1.0) > kRowSumTolerance)
                throw InvalidModel("transition row " + std::to_string(row) + " does not sum to 1");
            if (!std::isfinite(rewards_[row]) || std::abs(rewards_[row]) > 1.0)
                throw InvalidModel("reward " + std::to_string(row) + " lies outside [-1, 1]");
        }
    }

    int states_;
    int actions_;
    Eigen::MatrixXd transitions_;
    Eigen::VectorXd rewards_;
    double gamma_;
};

/// Stochastic stationary policy; row s is the action distribution at state s.
class Policy {
public:
    static constexpr double kRowSumTolerance = 1e-12;

    explicit Policy(Eigen::MatrixXd probs) : probs_(std::move(probs)) {
        for (Eigen::Index s = 0; s < probs_.rows(); ++s) {
            if (!probs_.row(s).allFinite() || probs_.row(s).minCoeff() < 0.0)
                throw InvalidModel("policy row " + std::to_string(s) + " has a negative entry");
            if (std::abs(probs_.row(s).sum() - 1.0) > kRowSumTolerance)
                throw InvalidModel("policy row " + std::to_string(s) + " does not sum to 1");
        }
    }

    static Policy deterministic(const Eigen::VectorXi& actions, int num_actions) {
        Eigen::MatrixXd p = Eigen::MatrixXd::Zero(actions.size(), num_actions);
        for (Eigen::Index s = 0; s < actions.size(); ++s) p(s, actions[s]) = 1.0;
        return Policy(std::move(p));
    }

    static Policy uniform(int num_states, int num_actions) {
        return Policy(Eigen::MatrixXd::Constant(num_states, num_actions, 1.0 / num_actions));
    }

    const Eigen::MatrixXd& probs() const { return probs_; }
    int num_states() const { return static_cast<int>(probs_.rows()); }
    int num_actions() const { return static_cast<int>(probs_.cols()); }

private:
    Eigen::MatrixXd probs_;
};

/// r + gamma * P v, indexed by (s, a).
inline Eigen::VectorXd q_from_values(const Mdp& mdp, const ValueFunction& v) {
    return mdp.rewards() + mdp.gamma() * (mdp.transitions() * v);
}

/// Bellman optimality operator T v.
inline ValueFunction bellman_optimality(const Mdp& mdp, const ValueFunction& v) {
    const Eigen::VectorXd q = q_from_values(mdp, v);
    ValueFunction out(mdp.num_states());
    for (int s = 0; s < mdp.num_states(); ++s)
        out[s] = q.segment(mdp.index(s, 0), mdp.num_actions()).maxCoeff();
    return out;
}

/**
 * Optimal values to sup-norm accuracy `tol`. Stops once successive iterates
 * differ by at most tol*(1-gamma)/(2*gamma); gamma = 0 needs one sweep.
 */
inline ValueFunction value_iteration(const Mdp& mdp, double tol) {
    if (!(tol > 0.0)) throw std::invalid_argument("value_iteration: tol must be positive");
    const double gamma = mdp.gamma();
    ValueFunction v = ValueFunction::Zero(mdp.num_states());
    if (gamma == 0.0) return bellman_optimality(mdp, v);
    const double threshold = tol * (1.0 - gamma) / (2.0 * gamma);
    for (;;) {
        ValueFunction next = bellman_optimality(mdp, v);
        const double gap = (next - v).cwiseAbs().maxCoeff();
        v = std::move(next);
        if (gap <= threshold) return v;
    }
}

/// q* = r + gamma P v*.
inline Eigen::VectorXd q_star(const Mdp& mdp, const ValueFunction& v_star) {
    return q_from_values(mdp, v_star);
}

/// Greedy deterministic policy w.r.t. an (S*A) action-value table; ties go to the lowest action.
inline Policy greedy_policy(const Mdp& mdp, const Eigen::VectorXd& q) {
    Eigen::VectorXi best(mdp.num_states());
    for (int s = 0; s < mdp.num_states(); ++s) {
        int arg = 0;
        for (int a = 1; a < mdp.num_actions(); ++a)
            if (q[mdp.index(s, a)] > q[mdp.index(s, arg)]) arg = a;
        best[s] = arg;
    }
    return Policy::deterministic(best, mdp.num_actions());
}

/// Expected reward r_pi and state transition matrix P_pi of a policy.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> policy_model(const Mdp& mdp, const Policy& pi) {
    if (pi.num_states() != mdp.num_states() || pi.num_actions() != mdp.num_actions())
        throw std::invalid_argument("policy shape does not match the MDP");
    const int S = mdp.num_states();
    Eigen::VectorXd r_pi = Eigen::VectorXd::Zero(S);
    Eigen::MatrixXd p_pi = Eigen::MatrixXd::Zero(S, S);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < mdp.num_actions(); ++a) {
            const double w = pi.probs()(s, a);
            if (w == 0.0) continue;
            r_pi[s] += w * mdp.reward(s, a);
            p_pi.row(s) += w * mdp.next_state_distribution(s, a);
        }
    }
    return {r_pi, p_pi};
}

/// Value of `pi`. Direct solve of (I - gamma P_pi) v = r_pi for S <= 64, fixed-point iteration above.
inline ValueFunction policy_evaluation(const Mdp& mdp, const Policy& pi, double tol) {
    if (!(tol > 0.0)) throw std::invalid_argument("policy_evaluation: tol must be positive");
    const auto [r_pi, p_pi] = policy_model(mdp, pi);
    const int S = mdp.num_states();
    const double gamma = mdp.gamma();
    if (S <= 64) {
        const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(S, S) - gamma * p_pi;
        return system.partialPivLu().solve(r_pi);
    }
    ValueFunction v = r_pi;
    if (gamma == 0.0) return v;
    const double threshold = tol * (1.0 - gamma) / (2.0 * gamma);
    for (;;) {
        ValueFunction next = r_pi + gamma * (p_pi * v);
        const double gap = (next - v).cwiseAbs().maxCoeff();
        v = std::move(next);
        if (gap <= threshold) return v;
    }
}

/**
 * Discounted state-action occupancy measure of `pi` started at `start`,
 * mu(s,a) = d(s) pi(a|s) with d' = e_start' (I - gamma P_pi)^{-1}.
 * Its total mass is 1/(1-gamma).
 */
inline Eigen::VectorXd occupancy_measure(const Mdp& mdp, const Policy& pi, int start, double tol) {
    if (!mdp.valid_state(start)) throw std::out_of_range("occupancy_measure: invalid start state");
    if (!(tol > 0.0)) throw std::invalid_argument("occupancy_measure: tol must be positive");
    const auto [r_pi, p_pi] = policy_model(mdp, pi);
    const int S = mdp.num_states();
    const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(S, S) - mdp.gamma() * p_pi.transpose();
    const Eigen::VectorXd d = system.partialPivLu().solve(Eigen::VectorXd::Unit(S, start));
    Eigen::VectorXd mu(static_cast<Eigen::Index>(S) * mdp.num_actions());
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < mdp.num_actions(); ++a) mu[mdp.index(s, a)] = std::max(0.0, d[s] * pi.probs()(s, a));
    return mu;
}

struct ValueLoss {
    /// max_s v*(s) - v_pi(s)
    double loss = 0.0;
    /// max_s E_{a~pi(s)}[v*(s) - q*(s,a)]
    double one_step_gap = 0.0;
    /// one_step_gap / (1 - gamma); upper-bounds `loss` by the performance difference lemma.
    double bound = 0.0;
};

inline ValueLoss value_loss(const Mdp& mdp, const Policy& pi, double tol) {
    const ValueFunction v_star = value_iteration(mdp, tol);
    const Eigen::VectorXd q = q_star(mdp, v_star);
    const ValueFunction v_pi = policy_evaluation(mdp, pi, tol);
    ValueLoss out;
    out.loss = std::max(0.0, (v_star - v_pi).maxCoeff());
    double worst = 0.0;
    for (int s = 0; s < mdp.num_states(); ++s) {
        double gap = 0.0;
        for (int a = 0; a < mdp.num_actions(); ++a) gap += pi.probs()(s, a) * (v_star[s] - q[mdp.index(s, a)]);
        worst = std::max(worst, gap);
    }
    out.one_step_gap = worst;
    out.bound = worst / (1.0 - mdp.gamma());
    return out;
}

}  // namespace coreplan
