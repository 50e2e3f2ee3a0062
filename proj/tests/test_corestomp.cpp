#include "coreplan/bounds.hpp"
#include "coreplan/corestomp.hpp"
#include "coreplan/instances.hpp"
#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <memory>
#include <set>

using namespace coreplan;

namespace {

struct Bench {
    std::shared_ptr<const Mdp> mdp;
    FeaturedCore fc;
    int s0;
    CoreLpProblem problem;
};

Bench make_setup(std::uint64_t seed, int S = 8, int A = 2, double gamma = 0.8, int m = 3, int d = 3) {
    CounterRng rng(seed, 41);
    auto mdp = std::make_shared<const Mdp>(random_mdp(S, A, gamma, rng));
    FeaturedCore fc = convex_mixture_features(S, m, d, rng);
    const int s0 = static_cast<int>(rng.below(S));
    CoreLpProblem p = build_corelp(*mdp, fc.features, fc.core, s0);
    return {mdp, std::move(fc), s0, std::move(p)};
}

// Random point of Lambda_gamma with strictly positive entries.
DualVector random_lambda(int m, int A, double gamma, CounterRng& rng) {
    Eigen::VectorXd v((m + 1) * A);
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = 0.01 + rng.uniform();
    v.head(A) /= v.head(A).sum();
    if (m > 0) v.tail(m * A) *= gamma / (1.0 - gamma) / v.tail(m * A).sum();
    return DualVector(v, A);
}

// Random theta with ||Phi* theta|| <= radius.
Eigen::VectorXd random_theta(const Eigen::MatrixXd& phi_star, double radius, CounterRng& rng) {
    Eigen::VectorXd t(phi_star.cols());
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1, 1);
    const double n = (phi_star * t).norm();
    if (n > 0) t *= radius * rng.uniform() / n;
    return t;
}

// Exact expectation of the TD estimate over the transition rows.
Eigen::VectorXd expected_grad_lambda(const Bench& st, const Eigen::VectorXd& theta) {
    const Mdp& mdp = *st.mdp;
    const int A = mdp.num_actions();
    Eigen::VectorXd out(st.problem.num_duals());
    const Eigen::VectorXd next_values = st.fc.features.matrix() * theta;
    for (std::size_t k = 0; k < st.problem.block_states.size(); ++k) {
        const int s = st.problem.block_states[k];
        for (int a = 0; a < A; ++a) {
            double e = 0.0;
            for (int sp = 0; sp < mdp.num_states(); ++sp)
                e += mdp.transitions()(mdp.index(s, a), sp) *
                     (mdp.reward(s, a) + mdp.gamma() * next_values[sp] - st.fc.features.row(s).dot(theta));
            out[static_cast<Eigen::Index>(k) * A + a] = e;
        }
    }
    return out;
}

// Exact expectation of the single-sample theta estimate over (cell, next state).
Eigen::VectorXd expected_grad_theta(const Bench& st, const DualVector& lambda) {
    const Mdp& mdp = *st.mdp;
    const int A = mdp.num_actions();
    const double mass = lambda.l1();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(st.problem.dim());
    for (Eigen::Index cell = 0; cell < lambda.size(); ++cell) {
        const int s = st.problem.block_states[static_cast<std::size_t>(cell / A)];
        const int a = static_cast<int>(cell % A);
        const double p_cell = lambda.values()[cell] / mass;
        for (int sp = 0; sp < mdp.num_states(); ++sp) {
            const double p = p_cell * mdp.transitions()(mdp.index(s, a), sp);
            out += p * (st.fc.features.row(st.s0) +
                        mass * (mdp.gamma() * st.fc.features.row(sp) - st.fc.features.row(s)));
        }
    }
    return out;
}

}  // namespace

TEST(ExactGradients, ExamplesAndFiniteDifferences) {
    const Bench st = make_setup(1);
    CounterRng rng(2, 2);
    const DualVector lambda = random_lambda(st.fc.core.size(), 2, 0.8, rng);
    const Eigen::VectorXd theta = random_theta(st.fc.core.phi_star(), 1.0, rng);
    const ExactGradients at_zero = exact_gradients(st.problem, lambda.values(), Eigen::VectorXd::Zero(3));
    EXPECT_EQ(at_zero.f_lambda, st.problem.objective);
    EXPECT_EQ(exact_gradients(st.problem, Eigen::VectorXd::Zero(st.problem.num_duals()), theta).f_theta,
              st.problem.phi0);
    const ExactGradients g = exact_gradients(st.problem, lambda.values(), theta);
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
        Eigen::VectorXd up = lambda.values(), down = lambda.values();
        up[i] += h;
        down[i] -= h;
        const double fd = (saddle_objective(st.problem, up, theta) - saddle_objective(st.problem, down, theta)) / (2 * h);
        EXPECT_NEAR(fd, g.f_lambda[i], 1e-6 * std::max(1.0, std::abs(g.f_lambda[i])));
    }
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        Eigen::VectorXd up = theta, down = theta;
        up[i] += h;
        down[i] -= h;
        const double fd = (saddle_objective(st.problem, lambda, up) - saddle_objective(st.problem, lambda, down)) / (2 * h);
        EXPECT_NEAR(fd, g.f_theta[i], 1e-6 * std::max(1.0, std::abs(g.f_theta[i])));
    }
}

TEST(SampleGradLambda, ExactOnDeterministicMdp) {
    CounterRng rng(3, 3);
    auto mdp = std::make_shared<const Mdp>(random_mdp(6, 2, 0.7, rng, 1));
    const FeaturedCore fc = convex_mixture_features(6, 3, 3, rng);
    const CoreLpProblem p = build_corelp(*mdp, fc.features, fc.core, 2);
    GenerativeOracle oracle(mdp, 5);
    const Eigen::VectorXd theta = random_theta(fc.core.phi_star(), 2.0, rng);
    const Eigen::VectorXd rho = sample_grad_lambda(oracle, fc.features, fc.core, 2, theta);
    EXPECT_LE((rho - exact_gradients(p, Eigen::VectorXd::Zero(p.num_duals()), theta).f_lambda).cwiseAbs().maxCoeff(),
              1e-12);
    EXPECT_EQ(oracle.query_count(), static_cast<std::uint64_t>(4 * 2));
}

TEST(SampleGradLambda, ZeroThetaGivesRewards) {
    const Bench st = make_setup(4);
    GenerativeOracle oracle(st.mdp, 1);
    const Eigen::VectorXd rho = sample_grad_lambda(oracle, st.fc.features, st.fc.core, st.s0, Eigen::VectorXd::Zero(3));
    EXPECT_EQ(rho, st.problem.objective);
}

TEST(Estimators, UnbiasedByEnumeration) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Bench st = make_setup(seed, 4 + static_cast<int>(seed % 7), 1 + static_cast<int>(seed % 3),
                                    0.5 + 0.02 * static_cast<double>(seed), 2 + static_cast<int>(seed % 3), 3);
        CounterRng rng(seed, 8);
        const int m = st.fc.core.size(), A = st.mdp->num_actions();
        const double gamma = st.mdp->gamma();
        const DualVector lambda = random_lambda(m, A, gamma, rng);
        const Eigen::VectorXd theta = random_theta(st.fc.core.phi_star(), bounds::primal_radius(m, gamma), rng);
        const ExactGradients g = exact_gradients(st.problem, lambda.values(), theta);
        EXPECT_LE((expected_grad_lambda(st, theta) - g.f_lambda).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LE((expected_grad_theta(st, lambda) - g.f_theta).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(SampleGradTheta, ConcentratedDeterministicCell) {
    CounterRng rng(6, 6);
    auto mdp = std::make_shared<const Mdp>(random_mdp(5, 2, 0.6, rng, 1));
    const FeaturedCore fc = convex_mixture_features(5, 2, 2, rng);
    const int s0 = 1;
    GenerativeOracle oracle(mdp, 3);
    // All mass 1/(1-gamma) on core state 1, action 1 (cell 5 of 6).
    const DualVector lambda(Eigen::VectorXd::Unit(6, 5) / 0.4, 2);
    const int s = fc.core.indices()[1];
    int next = 0;
    mdp->next_state_distribution(s, 1).maxCoeff(&next);
    const Eigen::VectorXd expected = fc.features.row(s0) + (0.6 * fc.features.row(next) - fc.features.row(s)) / 0.4;
    CounterRng draw(1, 1);
    for (int i = 0; i < 5; ++i)
        EXPECT_LE((sample_grad_theta(oracle, fc.features, fc.core, s0, lambda, draw) - expected).cwiseAbs().maxCoeff(),
                  1e-12);
}

TEST(SampleGradTheta, ZeroDiscountSamplesOnlyPlanningBlock) {
    const Bench st = make_setup(7, 6, 3, 0.0);
    GenerativeOracle oracle(st.mdp, 2);
    const DualVector lambda = initial_dual(st.fc.core.size(), 3, 0.0);
    CounterRng draw(4, 4);
    for (int i = 0; i < 20; ++i) {
        const Eigen::VectorXd xi = sample_grad_theta(oracle, st.fc.features, st.fc.core, st.s0, lambda, draw);
        EXPECT_LE(xi.cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(SampleGradients, QueryCountPerPair) {
    const Bench st = make_setup(8, 9, 3, 0.8, 4, 3);
    GenerativeOracle oracle(st.mdp, 2);
    CounterRng rng(1, 1);
    const SaddleIterate it{Eigen::VectorXd::Zero(3), initial_dual(4, 3, 0.8)};
    EXPECT_EQ(sample_gradients(oracle, st.fc.features, st.fc.core, st.s0, it, rng).queries_used, 1u + 5u * 3u);
}

TEST(ProxUpdate, IdentityOnFeasiblePointWithZeroGradients) {
    const Bench st = make_setup(9);
    const PlannerConfig cfg = PlannerConfig::defaults(100, 3, 2, 0.8, 1);
    CounterRng rng(2, 2);
    const SaddleIterate it{random_theta(st.fc.core.phi_star(), cfg.radius, rng), random_lambda(3, 2, 0.8, rng)};
    const SaddleIterate next = prox_update(cfg, st.fc.core.phi_star(), 0.8, it, Eigen::VectorXd::Zero(3),
                                           Eigen::VectorXd::Zero(8));
    EXPECT_LE((next.theta - it.theta).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((next.lambda.values() - it.lambda.values()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ProxUpdate, BallProjectionOnlyWhenOutside) {
    const Bench st = make_setup(10);
    PlannerConfig cfg = PlannerConfig::defaults(100, 3, 2, 0.8, 1);
    cfg.step_size = 1.0;
    const SaddleIterate it{Eigen::VectorXd::Zero(3), initial_dual(3, 2, 0.8)};
    CounterRng rng(3, 3);
    const Eigen::VectorXd inside = random_theta(st.fc.core.phi_star(), 0.5 * cfg.radius, rng);
    const Eigen::VectorXd zero_rho = Eigen::VectorXd::Zero(8);
    EXPECT_LE((prox_update(cfg, st.fc.core.phi_star(), 0.8, it, -inside, zero_rho).theta - inside).norm(), 1e-12);
    const Eigen::VectorXd outside = 10.0 * inside / (st.fc.core.phi_star() * inside).norm() * cfg.radius;
    const Eigen::VectorXd projected = prox_update(cfg, st.fc.core.phi_star(), 0.8, it, -outside, zero_rho).theta;
    EXPECT_NEAR((st.fc.core.phi_star() * projected).norm(), cfg.radius, 1e-9);
    EXPECT_LE((projected - outside / 10.0).norm(), 1e-9);
}

TEST(ProxUpdate, EntropicStepDoublesOneCell) {
    const Bench st = make_setup(11, 8, 3);
    const PlannerConfig cfg = PlannerConfig::defaults(50, 3, 3, 0.8, 1);
    const SaddleIterate it{Eigen::VectorXd::Zero(3), initial_dual(3, 3, 0.8)};
    Eigen::VectorXd rho = Eigen::VectorXd::Zero(12);
    rho[1] = std::log(2.0) / cfg.step_size;
    const SaddleIterate next = prox_update(cfg, st.fc.core.phi_star(), 0.8, it, Eigen::VectorXd::Zero(3), rho);
    EXPECT_NEAR(next.lambda.values()[1], 2.0 / 4.0, 1e-12);
    EXPECT_NEAR(next.lambda.values()[0], 1.0 / 4.0, 1e-12);
    EXPECT_NEAR(next.lambda.core_block().sum(), 4.0, 1e-12);
}

TEST(ProxUpdate, HugeGradientsStayFiniteAndFloored) {
    const Bench st = make_setup(12);
    PlannerConfig cfg = PlannerConfig::defaults(10, 3, 2, 0.8, 1);
    const SaddleIterate it{Eigen::VectorXd::Zero(3), initial_dual(3, 2, 0.8)};
    Eigen::VectorXd rho = Eigen::VectorXd::Zero(8);
    rho[0] = 1e308;
    rho[5] = -1e308;
    const SaddleIterate next = prox_update(cfg, st.fc.core.phi_star(), 0.8, it, Eigen::VectorXd::Zero(3), rho);
    EXPECT_TRUE(next.lambda.values().allFinite());
    EXPECT_GE(next.lambda.values().minCoeff(), cfg.lambda_floor);
    EXPECT_NEAR(next.lambda.values()[0], 1.0, 1e-12);
}

TEST(PlannerConfig, DefaultsMatchClosedForms) {
    const PlannerConfig cfg = PlannerConfig::defaults(1000, 5, 3, 0.9, 7);
    EXPECT_NEAR(cfg.radius, 9.0 / 8.0 * std::sqrt(5.0) / 0.1, 1e-12);
    const double c = 9.0 / 4.0 * std::sqrt(5.0 * (1 + 2 * std::log(3.0) + 2 * 0.9 * std::log(5.0))) / 0.01;
    EXPECT_NEAR(cfg.lipschitz, c, 1e-9);
    EXPECT_NEAR(cfg.step_size, std::sqrt(2.0 / 7000.0) / c, 1e-15);
    PlannerConfig bad = cfg;
    bad.iterations = 0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(RunCorestomp, SingleStateSingleAction) {
    auto mdp = std::make_shared<const Mdp>(fixtures::single_state({1.0}, 0.5));
    const FeatureMap f(Eigen::MatrixXd::Ones(1, 1));
    const CoreSet core(f, {0});
    GenerativeOracle oracle(mdp, 1);
    const CoreStompResult r = run_corestomp(oracle, f, core, 0, PlannerConfig::defaults(1, 1, 1, 0.5, 3));
    EXPECT_NEAR(r.pi_hat[0], 1.0, 1e-15);
    EXPECT_NEAR(r.lambda_hat.values()[1], 1.0, 1e-12);
    EXPECT_EQ(r.queries, 2u * 1u * (1u + 2u));
}

TEST(RunCorestomp, QueryAccountingAndIterateFeasibility) {
    const Bench st = make_setup(13, 12, 3, 0.85, 5, 4);
    GenerativeOracle oracle(st.mdp, 9);
    const PlannerConfig cfg = PlannerConfig::defaults(100, 5, 3, 0.85, 4);
    double worst_lambda = 0.0, worst_ball = 0.0;
    const CoreStompResult r = run_corestomp(oracle, st.fc.features, st.fc.core, st.s0, cfg,
                                            [&](int, const SaddleIterate& ex, const SaddleIterate& up) {
                                                for (const SaddleIterate* it : {&ex, &up}) {
                                                    const auto& l = it->lambda;
                                                    worst_lambda = std::max({worst_lambda, std::abs(l.policy_block().sum() - 1.0),
                                                                             std::abs(l.core_block().sum() - 0.85 / 0.15),
                                                                             -l.values().minCoeff()});
                                                    worst_ball = std::max(worst_ball, (st.fc.core.phi_star() * it->theta).norm() - cfg.radius);
                                                }
                                            });
    EXPECT_EQ(r.queries, 3800u);
    EXPECT_EQ(oracle.query_count(), 3800u);
    EXPECT_LE(worst_lambda, 1e-9);
    EXPECT_LE(worst_ball, 1e-9);
    EXPECT_NEAR(r.pi_hat.sum(), 1.0, 1e-12);
    EXPECT_TRUE(r.lambda_hat.in_lambda_gamma(0.85, 1e-9));
}

TEST(RunCorestomp, SameSeedReproduces) {
    const Bench st = make_setup(14);
    const PlannerConfig cfg = PlannerConfig::defaults(50, 3, 2, 0.8, 11);
    GenerativeOracle o1(st.mdp, 5), o2(st.mdp, 5);
    const CoreStompResult a = run_corestomp(o1, st.fc.features, st.fc.core, st.s0, cfg);
    const CoreStompResult b = run_corestomp(o2, st.fc.features, st.fc.core, st.s0, cfg);
    EXPECT_EQ(a.lambda_hat.values(), b.lambda_hat.values());
    EXPECT_EQ(a.theta_hat, b.theta_hat);
}

namespace {

// Simulator that forwards to a hidden oracle and records every queried state and returned next state.
class RecordingOracle {
public:
    explicit RecordingOracle(GenerativeOracle inner) : inner_(std::move(inner)) {}
    Transition simulate(int s, int a) {
        queried.insert(s);
        const Transition t = inner_.simulate(s, a);
        returned.insert(t.next_state);
        return t;
    }
    int num_actions() const { return inner_.num_actions(); }
    double discount() const { return inner_.discount(); }
    std::uint64_t query_count() const { return inner_.query_count(); }

    std::set<int> queried;
    std::set<int> returned;

private:
    GenerativeOracle inner_;
};

// Feature source that records which rows are read.
class RecordingFeatures {
public:
    explicit RecordingFeatures(const FeatureMap& f) : f_(f) {}
    Eigen::VectorXd row(int s) const {
        reads.insert(s);
        return f_.row(s);
    }
    int dim() const { return f_.dim(); }
    mutable std::set<int> reads;

private:
    const FeatureMap& f_;
};

}  // namespace

static_assert(Simulator<RecordingOracle>);
static_assert(FeatureSource<RecordingFeatures>);

TEST(RunCorestomp, TouchesOnlyPlanningCoreAndSampledStates) {
    // A sparse MDP so that most states are never sampled as next states.
    CounterRng rng(15, 15);
    auto mdp = std::make_shared<const Mdp>(random_mdp(40, 2, 0.8, rng, 2));
    const FeaturedCore fc = convex_mixture_features(40, 3, 3, rng);
    const int s0 = 17;
    RecordingOracle oracle(GenerativeOracle(mdp, 1));
    RecordingFeatures features(fc.features);
    run_corestomp(oracle, features, fc.core, s0, PlannerConfig::defaults(200, 3, 2, 0.8, 2));
    std::set<int> allowed_queries(fc.core.indices().begin(), fc.core.indices().end());
    allowed_queries.insert(s0);
    for (int s : oracle.queried) EXPECT_TRUE(allowed_queries.count(s)) << "queried state " << s;
    std::set<int> allowed_reads = allowed_queries;
    allowed_reads.insert(oracle.returned.begin(), oracle.returned.end());
    for (int s : features.reads) EXPECT_TRUE(allowed_reads.count(s)) << "read features of state " << s;
    EXPECT_LT(features.reads.size(), 40u);
}

TEST(DualityGap, ZeroAtExactSaddlePoint) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Bench st = make_setup(seed + 20);
        // Multipliers of the CoreLP equality rows give the primal saddle point.
        const Eigen::Index n = st.problem.num_duals(), d = st.problem.dim();
        lp::LinearProgram prog;
        prog.sense = lp::Sense::maximize;
        prog.objective = st.problem.objective;
        prog.eq_matrix = Eigen::MatrixXd::Zero(d + 1, n);
        prog.eq_matrix.topRows(d) = st.problem.constraint_matrix.transpose();
        prog.eq_matrix.row(d).head(st.problem.num_actions).setOnes();
        prog.eq_rhs.resize(d + 1);
        prog.eq_rhs.head(d) = -st.problem.phi0;
        prog.eq_rhs[d] = 1.0;
        const lp::LpSolution sol = lp::solve_lp(prog);
        ASSERT_TRUE(sol.optimal());
        const Eigen::VectorXd theta = -sol.eq_duals.head(d);
        const DualVector lambda(sol.x, st.problem.num_actions);
        const double radius = bounds::primal_radius(st.fc.core.size(), st.mdp->gamma());
        const DualityGap gap = duality_gap_exact(st.problem, lambda, theta, radius);
        EXPECT_GE(gap.value, -1e-9);
        EXPECT_LE(gap.value, 1e-6) << "seed " << seed;
        EXPECT_NEAR(gap.upper, sol.objective_value, 1e-6);
        EXPECT_LE((st.fc.core.phi_star() * theta).norm(), radius);
    }
}

TEST(DualityGap, UpperBoundsValueGapForAnyBallPoint) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Bench st = make_setup(seed + 40);
        const double v_dagger = solve_corelp_exact(st.problem).value;
        const double gamma = st.mdp->gamma();
        const double radius = bounds::primal_radius(3, gamma);
        CounterRng rng(seed, 1);
        for (int k = 0; k < 20; ++k) {
            const DualVector lambda = random_lambda(3, 2, gamma, rng);
            const Eigen::VectorXd theta_hat = random_theta(st.fc.core.phi_star(), radius, rng);
            const Eigen::VectorXd theta = random_theta(st.fc.core.phi_star(), radius, rng);
            const DualityGap gap = duality_gap_exact(st.problem, lambda, theta_hat, radius);
            EXPECT_GE(gap.value, -1e-9);
            EXPECT_GE(gap.value, v_dagger - saddle_objective(st.problem, lambda, theta) - 1e-6);
        }
    }
}

TEST(DualityGap, ThetaDualNorm) {
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(3, 3);
    EXPECT_NEAR(theta_dual_norm(id, Eigen::Vector3d(3, 4, 0)), 5.0, 1e-12);
    Eigen::MatrixXd flat(2, 3);
    flat << 1, 0, 0,
            0, 1, 0;
    EXPECT_TRUE(std::isnan(theta_dual_norm(flat, Eigen::Vector3d(0, 0, 1))));
}

TEST(BoundednessConstants, GradientNormsWithinBounds) {
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Bench st = make_setup(seed + 60, 10, 2, 0.5 + 0.04 * static_cast<double>(seed), 4, 3);
        const double gamma = st.mdp->gamma();
        const double radius = bounds::primal_radius(4, gamma);
        CounterRng rng(seed, 2);
        for (int k = 0; k < 100; ++k, ++checked) {
            const DualVector lambda = random_lambda(4, 2, gamma, rng);
            const Eigen::VectorXd theta = random_theta(st.fc.core.phi_star(), radius, rng);
            const ExactGradients g = exact_gradients(st.problem, lambda.values(), theta);
            EXPECT_LE(g.f_lambda.cwiseAbs().maxCoeff(), 2.0 * radius);
            EXPECT_LE(theta_dual_norm(st.fc.core.phi_star(), g.f_theta), 2.0 / (1.0 - gamma) + 1e-9);
        }
    }
    EXPECT_EQ(checked, 1000);
}

TEST(DistanceGenerating, Examples) {
    CounterRng rng(1, 1);
    const DualVector a = random_lambda(4, 3, 0.7, rng);
    EXPECT_NEAR(distance_gen_checks(a, a, 0.7).divergence, 0.0, 1e-14);
    for (double gamma : {0.3, 0.5, 0.9}) {
        for (int m : {1, 4}) {
            const double ell = bounds::entropy_scale(m, 3, gamma);
            const DistanceCheck dc = distance_gen_checks(concentrated_dual(m, 3, gamma, 2, 1), initial_dual(m, 3, gamma), gamma);
            EXPECT_NEAR(dc.divergence, ell / ((1 - gamma) * (1 - gamma)), 1e-9);
            EXPECT_NEAR(entropy_diameter(m, 3, gamma), std::sqrt(2 * ell) / (1 - gamma), 1e-12);
            EXPECT_LE(composite_diameter(m, 3, gamma), std::sqrt(2.0) + 1e-12);
        }
    }
    EXPECT_THROW(negentropy_divergence(a.values(), Eigen::VectorXd::Zero(a.size()), 0.7), std::domain_error);
}

TEST(DistanceGenerating, StrongConvexityOnRandomPairs) {
    CounterRng rng(2, 2);
    for (int k = 0; k < 1000; ++k) {
        const int m = 1 + static_cast<int>(rng.below(5)), A = 1 + static_cast<int>(rng.below(4));
        const double gamma = rng.uniform(0.0, 0.95);
        const DistanceCheck dc = distance_gen_checks(random_lambda(m, A, gamma, rng), random_lambda(m, A, gamma, rng), gamma);
        EXPECT_GE(dc.divergence - dc.half_l1_squared, -1e-10);
    }
}

TEST(CompositeDualNorm, BoundedByLipschitzConstant) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Bench st = make_setup(seed + 80, 9, 3, 0.75, 3, 3);
        const double radius = bounds::primal_radius(3, 0.75);
        const double c = bounds::lipschitz_constant(3, 3, 0.75);
        CounterRng rng(seed, 3);
        for (int k = 0; k < 100; ++k) {
            const DualVector lambda = random_lambda(3, 3, 0.75, rng);
            const Eigen::VectorXd theta = random_theta(st.fc.core.phi_star(), radius, rng);
            const ExactGradients g = exact_gradients(st.problem, lambda.values(), theta);
            EXPECT_LE(composite_dual_norm(g.f_lambda, theta_dual_norm(st.fc.core.phi_star(), g.f_theta), 3, 3, 0.75, radius), c);
        }
    }
}

TEST(ActionSelection, SampleAndArgmax) {
    const Eigen::Vector3d pi(0.2, 0.5, 0.3);
    EXPECT_EQ(sample_action(pi, 0.1), 0);
    EXPECT_EQ(sample_action(pi, 0.6), 1);
    EXPECT_EQ(sample_action(pi, 0.95), 2);
    EXPECT_EQ(argmax_action(pi), 1);
    EXPECT_EQ(argmax_action(Eigen::Vector3d(0.4, 0.4, 0.2)), 0);
}
