#pragma once

#include "coreplan/lp.hpp"
#include "coreplan/mdp.hpp"

#include <Eigen/Dense>

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace coreplan {

/**
 * State features, one row per state.
 *
 * Construction checks that the all-ones vector lies in the column span
 * (some eta with Phi eta = 1), solving the least-squares problem and
 * requiring a residual of at most 1e-8.
 */
class FeatureMap {
public:
    static constexpr double kBiasResidualTolerance = 1e-8;

    explicit FeatureMap(Eigen::MatrixXd phi) : phi_(std::move(phi)) {
        if (phi_.rows() < 1 || phi_.cols() < 1) throw InvalidModel("feature matrix must be non-empty");
        if (!phi_.allFinite()) throw InvalidModel("feature matrix contains non-finite entries");
        const Eigen::VectorXd ones = Eigen::VectorXd::Ones(phi_.rows());
        bias_witness_ = phi_.completeOrthogonalDecomposition().solve(ones);
        const double residual = (phi_ * bias_witness_ - ones).cwiseAbs().maxCoeff();
        if (residual > kBiasResidualTolerance)
            throw InvalidModel("constant function is not in the feature span (residual " +
                               std::to_string(residual) + ")");
    }

    int num_states() const { return static_cast<int>(phi_.rows()); }
    int dim() const { return static_cast<int>(phi_.cols()); }
    const Eigen::MatrixXd& matrix() const { return phi_; }
    Eigen::VectorXd row(int s) const { return phi_.row(s).transpose(); }
    const Eigen::VectorXd& bias_witness() const { return bias_witness_; }

private:
    Eigen::MatrixXd phi_;
    Eigen::VectorXd bias_witness_;
};

/// Ordered set of distinct core states together with their stacked feature rows.
class CoreSet {
public:
    CoreSet(const FeatureMap& features, std::vector<int> indices) : indices_(std::move(indices)) {
        if (indices_.empty()) throw InvalidModel("core set must contain at least one state");
        std::set<int> seen;
        for (int s : indices_) {
            if (s < 0 || s >= features.num_states())
                throw InvalidModel("core index " + std::to_string(s) + " out of range");
            if (!seen.insert(s).second) throw InvalidModel("core index " + std::to_string(s) + " repeated");
        }
        phi_star_.resize(static_cast<Eigen::Index>(indices_.size()), features.dim());
        for (std::size_t k = 0; k < indices_.size(); ++k)
            phi_star_.row(static_cast<Eigen::Index>(k)) = features.matrix().row(indices_[k]);
    }

    static CoreSet all_states(const FeatureMap& features) {
        std::vector<int> idx(static_cast<std::size_t>(features.num_states()));
        for (int s = 0; s < features.num_states(); ++s) idx[static_cast<std::size_t>(s)] = s;
        return CoreSet(features, std::move(idx));
    }

    int size() const { return static_cast<int>(indices_.size()); }
    const std::vector<int>& indices() const { return indices_; }
    const Eigen::MatrixXd& phi_star() const { return phi_star_; }

private:
    std::vector<int> indices_;
    Eigen::MatrixXd phi_star_;
};

struct CoreSetCheck {
    bool valid = false;
    std::optional<int> first_violation;
    /// Convex weights z_s with z_s' Phi* = phi_s, one per checked state (all states when valid).
    std::vector<Eigen::VectorXd> weights;
};

/// Convex weights expressing `target` through the rows of `phi_star`, if any exist.
inline std::optional<Eigen::VectorXd> convex_weights(const Eigen::MatrixXd& phi_star, const Eigen::VectorXd& target) {
    const Eigen::Index m = phi_star.rows();
    const Eigen::Index d = phi_star.cols();
    lp::LinearProgram prog;
    prog.objective = Eigen::VectorXd::Zero(m);
    prog.eq_matrix.resize(d + 1, m);
    prog.eq_matrix.topRows(d) = phi_star.transpose();
    prog.eq_matrix.row(d).setOnes();
    prog.eq_rhs.resize(d + 1);
    prog.eq_rhs.head(d) = target;
    prog.eq_rhs[d] = 1.0;
    const lp::LpSolution sol = lp::solve_lp(prog);
    if (!sol.optimal()) return std::nullopt;
    return sol.x;
}

/**
 * Certifies that every feature row is a convex combination of the core rows
 * by one feasibility LP per state. Reports the smallest violating state.
 */
inline CoreSetCheck check_core_set(const FeatureMap& features, const CoreSet& core) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(core.phi_star());
    if (lu.rank() == 0) throw std::invalid_argument("core feature matrix has rank 0");
    CoreSetCheck out;
    for (int s = 0; s < features.num_states(); ++s) {
        auto z = convex_weights(core.phi_star(), features.row(s));
        if (!z) {
            out.first_violation = s;
            return out;
        }
        out.weights.push_back(std::move(*z));
    }
    out.valid = true;
    return out;
}

struct ApproximationError {
    double epsilon = 0.0;
    Eigen::VectorXd theta;
};

/// Best sup-norm approximation of `v_star` in the feature span, solved as a Chebyshev LP.
inline ApproximationError epsilon_approx(const FeatureMap& features, const ValueFunction& v_star) {
    const Eigen::Index S = features.num_states();
    const Eigen::Index d = features.dim();
    if (v_star.size() != S) throw std::invalid_argument("epsilon_approx: value vector has wrong length");
    // Variables (theta, eps); rows  Phi theta - eps <= v,  -Phi theta - eps <= -v.
    lp::LinearProgram prog;
    prog.objective = Eigen::VectorXd::Zero(d + 1);
    prog.objective[d] = 1.0;
    prog.le_matrix.resize(2 * S, d + 1);
    prog.le_matrix.topLeftCorner(S, d) = features.matrix();
    prog.le_matrix.bottomLeftCorner(S, d) = -features.matrix();
    prog.le_matrix.col(d).setConstant(-1.0);
    prog.le_rhs.resize(2 * S);
    prog.le_rhs.head(S) = v_star;
    prog.le_rhs.tail(S) = -v_star;
    prog.free_variables.assign(static_cast<std::size_t>(d + 1), true);
    prog.free_variables.back() = false;
    const lp::LpSolution sol = lp::solve_lp(prog);
    if (!sol.optimal())
        throw lp::NumericalError(std::string("epsilon_approx LP returned ") + lp::to_string(sol.status));
    ApproximationError out;
    out.theta = sol.x.head(d);
    out.epsilon = std::max(0.0, sol.x[d]);
    return out;
}

inline ApproximationError epsilon_approx(const Mdp& mdp, const FeatureMap& features, const ValueFunction& v_star) {
    if (mdp.num_states() != features.num_states())
        throw std::invalid_argument("epsilon_approx: feature map and MDP disagree on S");
    return epsilon_approx(features, v_star);
}

}  // namespace coreplan
