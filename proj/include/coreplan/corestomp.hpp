#pragma once

#include "coreplan/bounds.hpp"
#include "coreplan/corelp.hpp"
#include "coreplan/features.hpp"
#include "coreplan/rng.hpp"
#include "coreplan/simulator.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <stdexcept>

namespace coreplan {

/// Read access to per-state feature rows.
template <typename F>
concept FeatureSource = requires(const F f, int s) {
    { f.row(s) } -> std::convertible_to<Eigen::VectorXd>;
    { f.dim() } -> std::convertible_to<int>;
};

static_assert(FeatureSource<FeatureMap>);

struct PlannerConfig {
    int iterations = 1;
    /// Radius B of the primal ball ||Phi* theta||_2 <= B.
    double radius = 1.0;
    /// Lipschitz / variance constant C.
    double lipschitz = 1.0;
    double step_size = 1.0;
    std::uint64_t seed = 0;
    double lambda_floor = 1e-300;

    /// Constants and step size eta = C^{-1} sqrt(2 / (7T)) that carry the expected-gap guarantee.
    static PlannerConfig defaults(int iterations, int core_size, int num_actions, double gamma,
                                  std::uint64_t seed) {
        PlannerConfig c;
        c.iterations = iterations;
        c.radius = bounds::primal_radius(core_size, gamma);
        c.lipschitz = bounds::lipschitz_constant(core_size, num_actions, gamma);
        c.step_size = std::sqrt(2.0 / (7.0 * iterations)) / c.lipschitz;
        c.seed = seed;
        return c;
    }

    void validate() const {
        if (iterations < 1) throw std::invalid_argument("planner needs at least one iteration");
        if (!(radius > 0.0) || !(lipschitz > 0.0) || !(step_size > 0.0))
            throw std::invalid_argument("planner radius, constant and step size must be positive");
        if (!(lambda_floor > 0.0)) throw std::invalid_argument("lambda floor must be positive");
    }
};

struct SaddleIterate {
    Eigen::VectorXd theta;
    DualVector lambda;
};

struct GradientSample {
    /// Estimate of the lambda-gradient, one entry per (state, action) cell.
    Eigen::VectorXd rho;
    /// Estimate of the theta-gradient.
    Eigen::VectorXd xi;
    std::uint64_t queries_used = 0;
};

struct ExactGradients {
    Eigen::VectorXd f_lambda;
    Eigen::VectorXd f_theta;
};

/// f_lambda(theta) = Wr + B theta and f_theta(lambda) = phi0 + B'lambda. Tabular access only.
inline ExactGradients exact_gradients(const CoreLpProblem& problem, const Eigen::VectorXd& lambda,
                                      const Eigen::VectorXd& theta) {
    return {problem.objective + problem.constraint_matrix * theta,
            problem.phi0 + problem.constraint_matrix.transpose() * lambda};
}

namespace detail {
template <FeatureSource F>
Eigen::VectorXd block_feature(const F& features, const CoreSet& core, int s0, int block) {
    if (block == 0) return features.row(s0);
    return core.phi_star().row(block - 1).transpose();
}

inline int block_state(const CoreSet& core, int s0, int block) {
    return block == 0 ? s0 : core.indices()[static_cast<std::size_t>(block - 1)];
}
}  // namespace detail

/**
 * Temporal-difference estimate of f_lambda(theta): for every (s, a) over the
 * planning state and core states, one simulator call (s', r) and entry
 * r + (gamma phi_{s'} - phi_s)'theta.
 */
template <Simulator Oracle, FeatureSource F>
Eigen::VectorXd sample_grad_lambda(Oracle& oracle, const F& features, const CoreSet& core, int s0,
                                   const Eigen::VectorXd& theta) {
    const int A = oracle.num_actions();
    const double gamma = oracle.discount();
    const int blocks = core.size() + 1;
    Eigen::VectorXd rho(static_cast<Eigen::Index>(blocks) * A);
    for (int k = 0; k < blocks; ++k) {
        const int s = detail::block_state(core, s0, k);
        const double own = detail::block_feature(features, core, s0, k).dot(theta);
        for (int a = 0; a < A; ++a) {
            const Transition t = oracle.simulate(s, a);
            rho[static_cast<Eigen::Index>(k) * A + a] = t.reward + gamma * features.row(t.next_state).dot(theta) - own;
        }
    }
    return rho;
}

/// Index drawn from the categorical distribution proportional to non-negative `weights`.
inline Eigen::Index sample_categorical(const Eigen::VectorXd& weights, double u) {
    const double target = u * weights.sum();
    double cumulative = 0.0;
    Eigen::Index last_positive = 0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0.0) continue;
        last_positive = i;
        cumulative += weights[i];
        if (target < cumulative) return i;
    }
    return last_positive;
}

/**
 * Single-sample estimate of f_theta(lambda): draw a cell (s, a) with
 * probability lambda / |lambda|_1, simulate once, and return
 * phi0 + |lambda|_1 (gamma phi_{s'} - phi_s).
 */
template <Simulator Oracle, FeatureSource F>
Eigen::VectorXd sample_grad_theta(Oracle& oracle, const F& features, const CoreSet& core, int s0,
                                  const DualVector& lambda, CounterRng& rng) {
    const int A = oracle.num_actions();
    const double gamma = oracle.discount();
    const Eigen::Index cell = sample_categorical(lambda.values(), rng.uniform());
    const int block = static_cast<int>(cell / A);
    const int action = static_cast<int>(cell % A);
    const int s = detail::block_state(core, s0, block);
    const Transition t = oracle.simulate(s, action);
    const Eigen::VectorXd delta = gamma * features.row(t.next_state) - detail::block_feature(features, core, s0, block);
    return features.row(s0) + lambda.l1() * delta;
}

/// Paired sample (xi first, then rho), consuming 1 + (1+m)A simulator queries.
template <Simulator Oracle, FeatureSource F>
GradientSample sample_gradients(Oracle& oracle, const F& features, const CoreSet& core, int s0,
                                const SaddleIterate& at, CounterRng& rng) {
    const std::uint64_t before = oracle.query_count();
    GradientSample g;
    g.xi = sample_grad_theta(oracle, features, core, s0, at.lambda, rng);
    g.rho = sample_grad_lambda(oracle, features, core, s0, at.theta);
    g.queries_used = oracle.query_count() - before;
    return g;
}

namespace detail {
// Entropic step on one block: target_mass * softmax(log lambda + step * rho), floored.
inline void entropic_block_update(Eigen::Ref<Eigen::VectorXd> out, const Eigen::Ref<const Eigen::VectorXd>& lambda,
                                  const Eigen::Ref<const Eigen::VectorXd>& rho, double step, double target_mass,
                                  double floor) {
    if (out.size() == 0) return;
    if (target_mass <= 0.0) {
        out.setConstant(floor);
        return;
    }
    Eigen::VectorXd logits(lambda.size());
    for (Eigen::Index i = 0; i < lambda.size(); ++i) logits[i] = std::log(std::max(lambda[i], floor)) + step * rho[i];
    const double shift = logits.maxCoeff();
    Eigen::VectorXd w = (logits.array() - shift).exp().matrix();
    w *= target_mass / w.sum();
    out = w.cwiseMax(floor);
}
}  // namespace detail

/**
 * One proximal step. theta moves against xi and is rescaled back into the
 * ball ||Phi* theta||_2 <= B; lambda takes an entropic step along rho,
 * renormalized to mass 1 on the planning block and gamma/(1-gamma) on the
 * core block.
 */
inline SaddleIterate prox_update(const PlannerConfig& config, const Eigen::MatrixXd& core_features, double gamma,
                                 const SaddleIterate& iterate, const Eigen::VectorXd& xi, const Eigen::VectorXd& rho) {
    const int A = iterate.lambda.num_actions();
    const Eigen::Index n = iterate.lambda.size();
    if (xi.size() != iterate.theta.size() || rho.size() != n)
        throw std::invalid_argument("prox_update: gradient dimensions do not match the iterate");
    SaddleIterate next;
    Eigen::VectorXd theta = iterate.theta - config.step_size * xi;
    const double norm = (core_features * theta).norm();
    theta /= std::max(1.0, norm / config.radius);
    next.theta = std::move(theta);

    Eigen::VectorXd lambda(n);
    const auto& old = iterate.lambda.values();
    detail::entropic_block_update(lambda.head(A), old.head(A), rho.head(A), config.step_size, 1.0,
                                  config.lambda_floor);
    detail::entropic_block_update(lambda.tail(n - A), old.tail(n - A), rho.tail(n - A), config.step_size,
                                  gamma / (1.0 - gamma), config.lambda_floor);
    next.lambda = DualVector(std::move(lambda), A);
    return next;
}

struct CoreStompResult {
    /// Average of the post-update dual iterates.
    DualVector lambda_hat;
    /// Planning-state block of lambda_hat.
    Eigen::VectorXd pi_hat;
    /// Average of the extrapolated primal iterates; used for duality-gap reporting only.
    Eigen::VectorXd theta_hat;
    std::uint64_t queries = 0;
    int iterations = 0;
};

struct NoIterateObserver {
    void operator()(int, const SaddleIterate&, const SaddleIterate&) const noexcept {}
};

/**
 * Stochastic mirror-prox over (lambda, theta) driven only by simulator calls
 * and feature rows of the planning state, core states, and sampled next
 * states. Each iteration extrapolates from the current point with one fresh
 * gradient sample, then updates the current point with a second fresh sample
 * taken at the extrapolated point.
 *
 * `observer(tau, extrapolated, updated)` sees every pair of iterates.
 */
template <Simulator Oracle, FeatureSource F, typename Observer = NoIterateObserver>
CoreStompResult run_corestomp(Oracle& oracle, const F& features, const CoreSet& core, int s0,
                              const PlannerConfig& config, Observer&& observer = {}) {
    config.validate();
    const int A = oracle.num_actions();
    const double gamma = oracle.discount();
    const int m = core.size();
    const std::uint64_t queries_before = oracle.query_count();
    CounterRng rng(config.seed, 0x706c616e6e6572ULL);

    SaddleIterate current{Eigen::VectorXd::Zero(features.dim()), initial_dual(m, A, gamma)};
    Eigen::VectorXd lambda_sum = Eigen::VectorXd::Zero(current.lambda.size());
    Eigen::VectorXd theta_sum = Eigen::VectorXd::Zero(features.dim());

    for (int tau = 1; tau <= config.iterations; ++tau) {
        const GradientSample g1 = sample_gradients(oracle, features, core, s0, current, rng);
        const SaddleIterate extrapolated = prox_update(config, core.phi_star(), gamma, current, g1.xi, g1.rho);
        const GradientSample g2 = sample_gradients(oracle, features, core, s0, extrapolated, rng);
        SaddleIterate updated = prox_update(config, core.phi_star(), gamma, current, g2.xi, g2.rho);
        observer(tau, extrapolated, updated);
        lambda_sum += updated.lambda.values();
        theta_sum += extrapolated.theta;
        current = std::move(updated);
    }

    CoreStompResult out;
    out.iterations = config.iterations;
    out.lambda_hat = DualVector(lambda_sum / config.iterations, A);
    out.pi_hat = out.lambda_hat.policy_block();
    out.pi_hat /= out.pi_hat.sum();
    out.theta_hat = theta_sum / config.iterations;
    out.queries = oracle.query_count() - queries_before;
    return out;
}

/// Draws an action from `pi` using one uniform from `u01`.
inline int sample_action(const Eigen::VectorXd& pi, double u01) {
    return static_cast<int>(sample_categorical(pi, u01));
}

/// Index of the largest entry; ties go to the lowest action.
inline int argmax_action(const Eigen::VectorXd& pi) {
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < pi.size(); ++a)
        if (pi[a] > pi[best]) best = a;
    return static_cast<int>(best);
}

/**
 * Dual norm of a theta-gradient g under ||theta|| = ||Phi* theta||_2:
 * the least Euclidean norm of u with Phi*'u = g. Returns NaN when g is not in
 * the row space of Phi* (residual above 1e-7).
 */
inline double theta_dual_norm(const Eigen::MatrixXd& core_features, const Eigen::VectorXd& g) {
    const Eigen::MatrixXd system = core_features.transpose();
    const Eigen::VectorXd u = system.completeOrthogonalDecomposition().solve(g);
    const double residual = (system * u - g).cwiseAbs().maxCoeff();
    if (residual > 1e-7 * std::max(1.0, g.cwiseAbs().maxCoeff())) return std::numeric_limits<double>::quiet_NaN();
    return u.norm();
}

struct DualityGap {
    double value = 0.0;
    /// max over Lambda_gamma of f(., theta_hat)
    double upper = 0.0;
    /// inf over the ball of f(lambda_hat, .)
    double lower = 0.0;
};

/**
 * Exact B-bounded duality gap. The maximum over Lambda_gamma is attained at a
 * vertex: the best planning action plus gamma/(1-gamma) times the best core
 * cell of c = Wr + B theta_hat. The infimum over the ball equals
 * f(lambda_hat, 0) - radius * ||g||_* with g = phi0 + B'lambda_hat.
 */
inline DualityGap duality_gap_exact(const CoreLpProblem& problem, const DualVector& lambda_hat,
                                    const Eigen::VectorXd& theta_hat, double radius) {
    const int A = problem.num_actions;
    const double gamma = problem.gamma;
    const Eigen::VectorXd c = problem.objective + problem.constraint_matrix * theta_hat;
    DualityGap gap;
    gap.upper = c.head(A).maxCoeff() + problem.phi0.dot(theta_hat);
    if (c.size() > A) gap.upper += gamma / (1.0 - gamma) * c.tail(c.size() - A).maxCoeff();

    const Eigen::VectorXd g = problem.phi0 + problem.constraint_matrix.transpose() * lambda_hat.values();
    const double dual = theta_dual_norm(problem.core_features, g);
    if (std::isnan(dual))
        throw std::domain_error("duality_gap_exact: theta-gradient leaves the core feature row space");
    gap.lower = lambda_hat.values().dot(problem.objective) - radius * dual;
    gap.value = gap.upper - gap.lower;
    return gap;
}

/// h_gamma(lambda) = h((1-gamma) lambda) / (1-gamma)^2 with h the unnormalized negentropy.
inline double scaled_negentropy(const Eigen::VectorXd& lambda, double gamma) {
    const double h = 1.0 - gamma;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
        const double x = h * lambda[i];
        if (x > 0.0) sum += x * (std::log(x) - 1.0);
    }
    return sum / (h * h);
}

/// Bregman divergence of h_gamma. The first point may have zeros; the second must be positive.
inline double negentropy_divergence(const Eigen::VectorXd& lambda1, const Eigen::VectorXd& lambda2, double gamma) {
    if (lambda1.size() != lambda2.size()) throw std::invalid_argument("negentropy_divergence: size mismatch");
    if (lambda1.minCoeff() < 0.0 || lambda2.minCoeff() <= 0.0)
        throw std::domain_error("negentropy_divergence: points must be non-negative / positive");
    const double h = 1.0 - gamma;
    // Written as a generalized KL divergence for accuracy near the diagonal.
    double sum = 0.0;
    for (Eigen::Index i = 0; i < lambda1.size(); ++i) {
        const double x = h * lambda1[i];
        const double y = h * lambda2[i];
        sum += (x > 0.0 ? x * std::log(x / y) : 0.0) - x + y;
    }
    return sum / (h * h);
}

struct DistanceCheck {
    double divergence = 0.0;
    double half_l1_squared = 0.0;
};

inline DistanceCheck distance_gen_checks(const DualVector& lambda1, const DualVector& lambda2, double gamma) {
    const double l1 = (lambda1.values() - lambda2.values()).cwiseAbs().sum();
    return {negentropy_divergence(lambda1.values(), lambda2.values(), gamma), 0.5 * l1 * l1};
}

/// Dual point concentrated on planning action `a` and core cell `cell`.
inline DualVector concentrated_dual(int core_size, int num_actions, double gamma, int a, int cell) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(core_size + 1) * num_actions);
    v[a] = 1.0;
    v[num_actions + cell] = gamma / (1.0 - gamma);
    return DualVector(std::move(v), num_actions);
}

/// sqrt(2 l) / (1 - gamma)
inline double entropy_diameter(int core_size, int num_actions, double gamma) {
    return std::sqrt(2.0 * bounds::entropy_scale(core_size, num_actions, gamma)) / (1.0 - gamma);
}

/**
 * Diameter of Lambda_gamma x ball under the composite distance-generating
 * function (1-gamma)^2 h_gamma / (2l) + ||theta||^2 / (2B^2), evaluated at its
 * extreme points. Equals sqrt(2) whenever l > 0.
 */
inline double composite_diameter(int core_size, int num_actions, double gamma) {
    const double ell = bounds::entropy_scale(core_size, num_actions, gamma);
    const DualVector center = initial_dual(core_size, num_actions, gamma);
    const DualVector extreme = concentrated_dual(core_size, num_actions, gamma, 0, 0);
    double lambda_part = 0.0;
    if (ell > 0.0) {
        const double h = 1.0 - gamma;
        lambda_part = h * h * negentropy_divergence(extreme.values(), center.values(), gamma) / (2.0 * ell);
    }
    const double theta_part = 0.5;  // ||theta||^2 / (2 B^2) at the boundary of the ball
    return std::sqrt(2.0 * (lambda_part + theta_part));
}

/// Composite dual norm sqrt(2l |f_lambda|_inf^2 / (1-gamma)^2 + B^2 |f_theta|_*^2) of the gradient field.
inline double composite_dual_norm(const Eigen::VectorXd& f_lambda, double f_theta_dual, int core_size,
                                  int num_actions, double gamma, double radius) {
    const double ell = bounds::entropy_scale(core_size, num_actions, gamma);
    const double sup = f_lambda.cwiseAbs().maxCoeff();
    return std::sqrt(2.0 * ell * sup * sup / ((1.0 - gamma) * (1.0 - gamma)) +
                     radius * radius * f_theta_dual * f_theta_dual);
}

}  // namespace coreplan
