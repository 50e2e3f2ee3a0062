#pragma once

#include "coreplan/bounds.hpp"
#include "coreplan/corelp.hpp"
#include "coreplan/corestomp.hpp"
#include "coreplan/features.hpp"
#include "coreplan/instances.hpp"
#include "coreplan/io.hpp"
#include "coreplan/lp.hpp"
#include "coreplan/mdp.hpp"
#include "coreplan/rng.hpp"
#include "coreplan/simulator.hpp"

#include <Eigen/Dense>
#include "json.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace coreplan::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kMaxStates = 200;
inline constexpr int kGenerationAttempts = 25;

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class PlannerKind { corelp_exact, corestomp, lralp };
enum class ActionSelection { sample, argmax };

inline const char* to_string(PlannerKind p) {
    switch (p) {
        case PlannerKind::corelp_exact: return "corelp-exact";
        case PlannerKind::corestomp: return "corestomp";
        case PlannerKind::lralp: return "lralp";
    }
    return "unknown";
}

inline PlannerKind planner_from_string(const std::string& s) {
    for (auto p : {PlannerKind::corelp_exact, PlannerKind::corestomp, PlannerKind::lralp})
        if (s == to_string(p)) return p;
    throw ConfigError("unknown planner '" + s + "' (expected corelp-exact, corestomp or lralp)");
}

inline const char* to_string(ActionSelection a) { return a == ActionSelection::sample ? "sample" : "argmax"; }

inline ActionSelection action_selection_from_string(const std::string& s) {
    if (s == "sample") return ActionSelection::sample;
    if (s == "argmax") return ActionSelection::argmax;
    throw ConfigError("unknown action selection '" + s + "' (expected sample or argmax)");
}

struct InstanceSpec {
    /// When both paths are set the instance is loaded instead of generated.
    std::string mdp_path;
    std::string features_path;
    bool certify_core = true;

    int num_states = 10;
    int num_actions = 2;
    int dim = 3;
    int core_size = 3;
    double gamma = 0.9;
    FeatureFamily family = FeatureFamily::convex_mixture;
    int branching = 3;
    /// Scale of the perturbation in the noisy-value family.
    double feature_noise = 0.1;
    /// If positive, generated rewards are replaced by +-reward_magnitude with the generated sign.
    double reward_magnitude = 0.0;
    /// Half-width of the uniform reward noise emitted by the simulator.
    double reward_noise = 0.0;

    bool from_files() const { return !mdp_path.empty() || !features_path.empty(); }
};

struct ExperimentConfig {
    InstanceSpec instance;
    PlannerKind planner = PlannerKind::corestomp;
    std::vector<int> schedule{500, 2000, 8000};
    int trials = 10;
    std::uint64_t seed = 1;
    std::string out = "results";
    int parallel = 1;
    /// Planning state; -1 plans from state (trial mod S).
    int start_state = 0;
    ActionSelection action_selection = ActionSelection::sample;

    void validate() const {
        const InstanceSpec& in = instance;
        if (in.from_files()) {
            if (in.mdp_path.empty() || in.features_path.empty())
                throw ConfigError("instance files need both mdp_path and features_path");
            for (const auto& p : {in.mdp_path, in.features_path})
                if (!fs::exists(p)) throw ConfigError("instance file '" + p + "' does not exist");
        } else {
            if (in.num_states < 1 || in.num_states > kMaxStates)
                throw ConfigError("num_states must lie in [1, " + std::to_string(kMaxStates) + "]");
            if (in.num_actions < 1) throw ConfigError("num_actions must be positive");
            if (!(in.gamma >= 0.0 && in.gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
            if (in.family == FeatureFamily::hard_aggregation || in.family == FeatureFamily::convex_mixture) {
                if (in.core_size < 1 || in.core_size > in.num_states)
                    throw ConfigError("core_size must lie in [1, num_states]");
                if (in.dim < 1) throw ConfigError("dim must be positive");
            }
            if (in.branching < 1) throw ConfigError("branching must be positive");
            if (in.reward_magnitude < 0.0 || in.reward_magnitude > 1.0)
                throw ConfigError("reward_magnitude must lie in [0, 1]");
        }
        if (in.reward_noise < 0.0) throw ConfigError("reward_noise must be non-negative");
        if (trials < 1) throw ConfigError("trials must be positive");
        if (parallel < 1) throw ConfigError("parallel must be positive");
        if (start_state < -1) throw ConfigError("start_state must be a state index or -1");
        for (int t : schedule)
            if (t < 1) throw ConfigError("every T in the schedule must be positive");
    }
};

inline json to_json(const ExperimentConfig& c) {
    const InstanceSpec& in = c.instance;
    json inst;
    if (in.from_files()) {
        inst = {{"mdp_path", in.mdp_path}, {"features_path", in.features_path}, {"certify_core", in.certify_core}};
    } else {
        inst = {{"num_states", in.num_states}, {"num_actions", in.num_actions}, {"dim", in.dim},
                {"core_size", in.core_size},   {"gamma", in.gamma},             {"family", to_string(in.family)},
                {"branching", in.branching},   {"feature_noise", in.feature_noise},
                {"reward_magnitude", in.reward_magnitude}};
    }
    inst["reward_noise"] = in.reward_noise;
    return json{{"instance", inst},
                {"planner", to_string(c.planner)},
                {"schedule", c.schedule},
                {"trials", c.trials},
                {"seed", c.seed},
                {"out", c.out},
                {"parallel", c.parallel},
                {"start_state", c.start_state},
                {"action_selection", to_string(c.action_selection)}};
}

/// Missing keys keep their defaults. Relative instance paths resolve against `base_dir`.
inline ExperimentConfig config_from_json(const json& doc, const fs::path& base_dir = {}) {
    ExperimentConfig c;
    try {
        if (doc.contains("instance")) {
            const json& in = doc.at("instance");
            InstanceSpec& s = c.instance;
            auto resolve = [&](const std::string& p) {
                return (fs::path(p).is_relative() && !base_dir.empty()) ? (base_dir / p).string() : p;
            };
            if (in.contains("mdp_path")) s.mdp_path = resolve(in.at("mdp_path").get<std::string>());
            if (in.contains("features_path")) s.features_path = resolve(in.at("features_path").get<std::string>());
            s.certify_core = in.value("certify_core", s.certify_core);
            s.num_states = in.value("num_states", s.num_states);
            s.num_actions = in.value("num_actions", s.num_actions);
            s.dim = in.value("dim", s.dim);
            s.core_size = in.value("core_size", s.core_size);
            s.gamma = in.value("gamma", s.gamma);
            if (in.contains("family")) s.family = feature_family_from_string(in.at("family").get<std::string>());
            s.branching = in.value("branching", s.branching);
            s.feature_noise = in.value("feature_noise", s.feature_noise);
            s.reward_magnitude = in.value("reward_magnitude", s.reward_magnitude);
            s.reward_noise = in.value("reward_noise", s.reward_noise);
        }
        if (doc.contains("planner")) c.planner = planner_from_string(doc.at("planner").get<std::string>());
        if (doc.contains("schedule")) c.schedule = doc.at("schedule").get<std::vector<int>>();
        c.trials = doc.value("trials", c.trials);
        c.seed = doc.value("seed", c.seed);
        c.out = doc.value("out", c.out);
        c.parallel = doc.value("parallel", c.parallel);
        c.start_state = doc.value("start_state", c.start_state);
        if (doc.contains("action_selection"))
            c.action_selection = action_selection_from_string(doc.at("action_selection").get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config_from_json(doc, path.parent_path());
}

/// A planning instance together with its exact oracle quantities.
struct Instance {
    std::shared_ptr<const Mdp> mdp;
    FeatureMap features;
    CoreSet core;
    ValueFunction v_star;
    Eigen::VectorXd q_star;
    double epsilon = 0.0;
};

/// v* by value iteration, polished by evaluating the greedy policy.
inline ValueFunction optimal_values(const Mdp& mdp) {
    const ValueFunction vi = value_iteration(mdp, 1e-12);
    const Policy greedy = greedy_policy(mdp, q_from_values(mdp, vi));
    return policy_evaluation(mdp, greedy, 1e-13);
}

inline Instance make_instance(std::shared_ptr<const Mdp> mdp, FeatureMap features, CoreSet core) {
    if (features.num_states() != mdp->num_states())
        throw InvalidModel("feature map has " + std::to_string(features.num_states()) + " states, MDP has " +
                           std::to_string(mdp->num_states()));
    ValueFunction v = optimal_values(*mdp);
    Eigen::VectorXd q = q_star(*mdp, v);
    const double eps = epsilon_approx(features, v).epsilon;
    return Instance{std::move(mdp), std::move(features), std::move(core), std::move(v), std::move(q), eps};
}

inline int planning_state(const ExperimentConfig& c, int trial, int num_states) {
    return c.start_state >= 0 ? c.start_state : trial % num_states;
}

namespace detail {
inline FeaturedCore generate_features(const InstanceSpec& s, const ValueFunction& v_star, CounterRng& rng) {
    switch (s.family) {
        case FeatureFamily::tabular: return tabular_features(s.num_states);
        case FeatureFamily::bias_only: return bias_only_features(s.num_states, static_cast<int>(rng.below(s.num_states)));
        case FeatureFamily::bias_value_noise: return bias_value_noise_features(v_star, rng);
        case FeatureFamily::hard_aggregation: return hard_aggregation_features(s.num_states, s.core_size, s.dim, rng);
        case FeatureFamily::convex_mixture: return convex_mixture_features(s.num_states, s.core_size, s.dim, rng);
        case FeatureFamily::noisy_value: return noisy_value_features(v_star, s.feature_noise, rng);
    }
    throw std::logic_error("unhandled feature family");
}

inline Mdp generate_mdp(const InstanceSpec& s, CounterRng& rng) {
    Mdp mdp = random_mdp(s.num_states, s.num_actions, s.gamma, rng, s.branching);
    if (s.reward_magnitude <= 0.0) return mdp;
    Eigen::VectorXd r = s.reward_magnitude * mdp.rewards().array().sign().matrix();
    return Mdp(mdp.num_states(), mdp.num_actions(), mdp.transitions(), std::move(r), mdp.gamma());
}

/// Name of the first invariant the instance violates, or empty.
inline std::string first_violation(const Instance& inst, const ExperimentConfig& c, bool exact_family) {
    const CoreSetCheck check = check_core_set(inst.features, inst.core);
    if (!check.valid)
        return "core convex hull (state " + std::to_string(*check.first_violation) + " outside the hull)";
    if (exact_family && inst.epsilon > 1e-7) return "zero approximation error (epsilon " + std::to_string(inst.epsilon) + ")";
    std::vector<int> starts;
    if (c.start_state >= 0) starts.push_back(c.start_state);
    else
        for (int k = 0; k < std::min(c.trials, inst.mdp->num_states()); ++k) starts.push_back(k);
    for (int s0 : starts) {
        if (!inst.mdp->valid_state(s0)) return "start state " + std::to_string(s0) + " out of range";
        try {
            solve_corelp_exact(build_corelp(*inst.mdp, inst.features, inst.core, s0));
        } catch (const std::exception& e) {
            return "CoreLP solvable from state " + std::to_string(s0) + " (" + e.what() + ")";
        }
    }
    return {};
}
}  // namespace detail

/**
 * Loads or generates the configured instance. Generated instances are redrawn
 * until every invariant holds; exhausting the attempts reports the invariant
 * that failed last.
 */
inline Instance generate_instance(const ExperimentConfig& c) {
    c.validate();
    const InstanceSpec& s = c.instance;
    if (s.from_files()) {
        auto mdp = std::make_shared<const Mdp>(io::load_mdp(s.mdp_path));
        io::FeatureFile ff = io::load_features(s.features_path, s.certify_core);
        Instance inst = make_instance(std::move(mdp), std::move(ff.features), std::move(ff.core));
        if (c.start_state >= inst.mdp->num_states())
            throw ConfigError("start_state " + std::to_string(c.start_state) + " out of range");
        return inst;
    }
    const bool exact_family = s.family == FeatureFamily::tabular || s.family == FeatureFamily::bias_value_noise;
    CounterRng rng(c.seed, 1);
    std::string failure;
    for (int attempt = 0; attempt < kGenerationAttempts; ++attempt) {
        try {
            auto mdp = std::make_shared<const Mdp>(detail::generate_mdp(s, rng));
            const ValueFunction v = optimal_values(*mdp);
            FeaturedCore fc = detail::generate_features(s, v, rng);
            Instance inst = make_instance(std::move(mdp), std::move(fc.features), std::move(fc.core));
            failure = detail::first_violation(inst, c, exact_family);
            if (failure.empty()) return inst;
        } catch (const InvalidModel& e) {
            failure = e.what();
        }
    }
    throw GenerationError("instance generation failed after " + std::to_string(kGenerationAttempts) +
                          " attempts; last failing invariant: " + failure);
}

struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
};

inline json to_json(const Check& c) { return json{{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}}; }

namespace detail {
inline std::string fmt(double x) {
    std::ostringstream os;
    os.precision(6);
    os << x;
    return os.str();
}

// Dual LP of the MDP from start state s0; its optimum is v*(s0).
inline double mdp_dual_lp_value(const Mdp& mdp, int s0) {
    const int S = mdp.num_states();
    const int A = mdp.num_actions();
    lp::LinearProgram prog;
    prog.sense = lp::Sense::maximize;
    prog.objective = mdp.rewards();
    prog.eq_matrix = -mdp.gamma() * mdp.transitions().transpose();
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) prog.eq_matrix(s, mdp.index(s, a)) += 1.0;
    prog.eq_rhs = Eigen::VectorXd::Unit(S, s0);
    const lp::LpSolution sol = lp::solve_lp(prog);
    if (!sol.optimal()) throw lp::NumericalError(std::string("MDP dual LP ") + lp::to_string(sol.status));
    return sol.objective_value;
}
}  // namespace detail

/// Deterministic guarantees checked on every state of an instance.
inline std::vector<Check> verify_instance(const Instance& inst, double slack = 1e-5) {
    const Mdp& mdp = *inst.mdp;
    const double gamma = mdp.gamma();
    const double eps = inst.epsilon;
    std::vector<Check> out;
    const CoreSetCheck hull = check_core_set(inst.features, inst.core);
    out.push_back({"core-convex-hull", hull.valid,
                   hull.valid ? "all states certified" : "state " + std::to_string(*hull.first_violation) + " outside"});

    double worst_lp = 0.0, worst_value = -1e300, worst_action = -1e300, worst_lralp = -1e300;
    double worst_j_lo = 1e300, worst_j_hi = -1e300;
    for (int s0 = 0; s0 < mdp.num_states(); ++s0) {
        worst_lp = std::max(worst_lp, std::abs(detail::mdp_dual_lp_value(mdp, s0) - inst.v_star[s0]));
        const CoreLpSolution sol = solve_corelp_exact(build_corelp(mdp, inst.features, inst.core, s0));
        const Eigen::VectorXd pi = extract_pi_dagger(sol.lambda);
        double expected_q = 0.0;
        for (int a = 0; a < mdp.num_actions(); ++a) expected_q += pi[a] * inst.q_star[mdp.index(s0, a)];
        worst_value = std::max(worst_value, std::abs(sol.value - inst.v_star[s0]) - bounds::corelp_value(eps, gamma));
        worst_action = std::max(worst_action, inst.v_star[s0] - expected_q - bounds::corelp_action(eps, gamma));
        const Eigen::VectorXd mu = Eigen::VectorXd::Unit(mdp.num_states(), s0);
        const double lralp = solve_lralp(mdp, inst.features, inst.core, mu).value;
        worst_lralp = std::max(worst_lralp, std::abs(lralp - inst.v_star[s0]) - bounds::lralp_value(1.0, eps, gamma));
        const double diff = j_star_alp(inst.features, inst.v_star, s0) - j_star_lra(inst.features, inst.core, inst.v_star, s0);
        worst_j_lo = std::min(worst_j_lo, diff);
        worst_j_hi = std::max(worst_j_hi, diff - bounds::j_star_gap(eps));
    }
    out.push_back({"dual-lp-matches-value-iteration", worst_lp <= 1e-6, "max error " + detail::fmt(worst_lp)});
    out.push_back({"corelp-value-bound", worst_value <= slack, "max excess " + detail::fmt(worst_value)});
    out.push_back({"corelp-action-bound", worst_action <= slack, "max excess " + detail::fmt(worst_action)});
    out.push_back({"lralp-value-bound", worst_lralp <= slack, "max excess " + detail::fmt(worst_lralp)});
    out.push_back({"j-star-order", worst_j_lo >= -slack && worst_j_hi <= slack,
                   "min difference " + detail::fmt(worst_j_lo) + ", max excess " + detail::fmt(worst_j_hi)});
    return out;
}

/// One CSV row. Quantities that do not apply to the planner are NaN.
struct TrialRecord {
    int trial = 0;
    std::uint64_t seed = 0;
    int iterations = 0;
    int start_state = 0;
    double v_dagger = std::numeric_limits<double>::quiet_NaN();
    double loss = std::numeric_limits<double>::quiet_NaN();
    double gap = std::numeric_limits<double>::quiet_NaN();
    double bound_thm2 = std::numeric_limits<double>::quiet_NaN();
    double bound_thm3 = std::numeric_limits<double>::quiet_NaN();
    double bound_lemma11 = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t queries = 0;
    double wall_ms = 0.0;
    /// Deterministic guarantees checked inside the trial, with a description of any failure.
    bool hard_ok = true;
    std::string hard_detail;
    std::string error;
};

inline const char* csv_header() {
    return "trial,seed,T,V_dagger,loss,gap,bound_thm2,bound_thm3,bound_lemma11,queries,wall_ms";
}

inline std::string format_number(double x) {
    if (std::isnan(x)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string csv_row(const TrialRecord& r) {
    char wall[32];
    std::snprintf(wall, sizeof wall, "%.3f", r.wall_ms);
    std::ostringstream os;
    os << r.trial << ',' << r.seed << ',' << r.iterations << ',' << format_number(r.v_dagger) << ','
       << format_number(r.loss) << ',' << format_number(r.gap) << ',' << format_number(r.bound_thm2) << ','
       << format_number(r.bound_thm3) << ',' << format_number(r.bound_lemma11) << ',' << r.queries << ',' << wall;
    return os.str();
}

inline std::uint64_t trial_seed(std::uint64_t base_seed, int trial) {
    return derive_stream_key(mix64(base_seed), static_cast<std::uint64_t>(trial));
}

namespace detail {
struct FeasibilityObserver {
    double gamma;
    double radius;
    const Eigen::MatrixXd* core_features;
    double worst = 0.0;

    void operator()(int, const SaddleIterate& e, const SaddleIterate& u) {
        for (const SaddleIterate* it : {&e, &u}) {
            const Eigen::VectorXd& l = it->lambda.values();
            const Eigen::Index A = it->lambda.num_actions();
            worst = std::max(worst, std::abs(l.head(A).sum() - 1.0));
            worst = std::max(worst, std::abs(l.sum() - 1.0 / (1.0 - gamma)));
            worst = std::max(worst, -l.minCoeff());
            worst = std::max(worst, (*core_features * it->theta).norm() - radius);
        }
    }
};

struct PlanningCache {
    std::map<int, CoreLpProblem> problems;
    std::map<int, double> v_dagger;
    std::map<int, Eigen::VectorXd> pi_dagger;
};

inline double expected_q(const Instance& inst, int s0, const Eigen::VectorXd& pi) {
    double out = 0.0;
    for (Eigen::Index a = 0; a < pi.size(); ++a) out += pi[a] * inst.q_star[inst.mdp->index(s0, static_cast<int>(a))];
    return out;
}

inline void run_exact(const Instance& inst, const ExperimentConfig& c, const PlanningCache& cache, TrialRecord& rec) {
    const Mdp& mdp = *inst.mdp;
    const int s0 = rec.start_state;
    const double gamma = mdp.gamma();
    const double v = inst.v_star[s0];
    if (c.planner == PlannerKind::corelp_exact) {
        rec.v_dagger = cache.v_dagger.at(s0);
        rec.loss = v - expected_q(inst, s0, cache.pi_dagger.at(s0));
        rec.bound_thm2 = bounds::corelp_value(inst.epsilon, gamma);
        const double action_bound = bounds::corelp_action(inst.epsilon, gamma);
        if (std::abs(rec.v_dagger - v) > rec.bound_thm2 + 1e-5) {
            rec.hard_ok = false;
            rec.hard_detail = "value bound violated by " + fmt(std::abs(rec.v_dagger - v) - rec.bound_thm2);
        }
        if (rec.loss > action_bound + 1e-5) {
            rec.hard_ok = false;
            rec.hard_detail += (rec.hard_detail.empty() ? "" : "; ") + std::string("action bound violated by ") +
                               fmt(rec.loss - action_bound);
        }
    } else {
        const Eigen::VectorXd mu = Eigen::VectorXd::Unit(mdp.num_states(), s0);
        rec.v_dagger = solve_lralp(mdp, inst.features, inst.core, mu).value;
        rec.loss = std::abs(rec.v_dagger - v);
        rec.bound_thm2 = bounds::lralp_value(1.0, inst.epsilon, gamma);
        if (rec.loss > rec.bound_thm2 + 1e-5) {
            rec.hard_ok = false;
            rec.hard_detail = "LRALP bound violated by " + fmt(rec.loss - rec.bound_thm2);
        }
    }
}

inline void run_stochastic(const Instance& inst, const ExperimentConfig& c, const PlanningCache& cache,
                           int schedule_index, TrialRecord& rec) {
    const Mdp& mdp = *inst.mdp;
    const int s0 = rec.start_state;
    const int m = inst.core.size();
    const int A = mdp.num_actions();
    const double gamma = mdp.gamma();
    const int T = rec.iterations;
    GenerativeOracle root(inst.mdp, rec.seed, RewardNoise{c.instance.reward_noise});
    GenerativeOracle oracle = root.fork(static_cast<std::uint64_t>(schedule_index));
    const PlannerConfig pc =
        PlannerConfig::defaults(T, m, A, gamma, derive_stream_key(rec.seed, 0x1000u + static_cast<unsigned>(schedule_index)));
    FeasibilityObserver obs{gamma, pc.radius, &inst.core.phi_star()};
    const CoreStompResult res = run_corestomp(oracle, inst.features, inst.core, s0, pc, obs);

    int action = 0;
    if (c.action_selection == ActionSelection::sample) {
        GenerativeOracle chooser = oracle.fork(0xac);
        action = sample_action(res.pi_hat, chooser.draw_uniform());
    } else {
        action = argmax_action(res.pi_hat);
    }
    rec.v_dagger = cache.v_dagger.at(s0);
    rec.loss = inst.v_star[s0] - inst.q_star[mdp.index(s0, action)];
    rec.gap = duality_gap_exact(cache.problems.at(s0), res.lambda_hat, res.theta_hat, pc.radius).value;
    rec.bound_thm2 = bounds::corelp_value(inst.epsilon, gamma);
    rec.bound_thm3 = bounds::planner_action(inst.epsilon, m, A, gamma, T);
    rec.bound_lemma11 = bounds::expected_duality_gap(pc.lipschitz, T);
    rec.queries = res.queries;
    const auto expected = static_cast<std::uint64_t>(bounds::planner_queries(T, m, A));
    if (res.queries != expected) {
        rec.hard_ok = false;
        rec.hard_detail = "query count " + std::to_string(res.queries) + " != " + std::to_string(expected);
    }
    if (obs.worst > 1e-9) {
        rec.hard_ok = false;
        rec.hard_detail += (rec.hard_detail.empty() ? "" : "; ") + std::string("iterate infeasible by ") + fmt(obs.worst);
    }
}

inline double mean(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return x.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(x.size());
}

inline double standard_error(const std::vector<double>& x) {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(x.size() - 1) / static_cast<double>(x.size()));
}
}  // namespace detail

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    int points = 0;
};

/// Least-squares line through (log T, log y) over the points with positive y; needs two distinct T.
inline std::optional<LineFit> loglog_fit(const std::vector<double>& t, const std::vector<double>& y) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < t.size() && i < y.size(); ++i) {
        if (t[i] > 0.0 && y[i] > 0.0 && std::isfinite(y[i])) {
            lx.push_back(std::log(t[i]));
            ly.push_back(std::log(y[i]));
        }
    }
    if (lx.size() < 2) return std::nullopt;
    const double mx = detail::mean(lx), my = detail::mean(ly);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    if (sxx <= 0.0) return std::nullopt;
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.points = static_cast<int>(lx.size());
    return f;
}

struct ExperimentResult {
    std::vector<TrialRecord> records;
    json report;
    bool hard_failure = false;
};

namespace detail {
inline json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline json build_report(const ExperimentConfig& c, const Instance& inst, const std::vector<TrialRecord>& records,
                         const std::vector<int>& schedule) {
    const Mdp& mdp = *inst.mdp;
    const int m = inst.core.size();
    const int A = mdp.num_actions();
    const double gamma = mdp.gamma();
    json report;
    report["config"] = to_json(c);
    report["instance"] = {{"num_states", mdp.num_states()}, {"num_actions", A},
                          {"dim", inst.features.dim()},     {"core_size", m},
                          {"core_indices", inst.core.indices()}, {"gamma", gamma},
                          {"epsilon_approx", inst.epsilon}};
    if (c.planner == PlannerKind::corestomp)
        report["constants"] = {{"radius", bounds::primal_radius(m, gamma)},
                               {"lipschitz", bounds::lipschitz_constant(m, A, gamma)}};

    json hard = json::array(), soft = json::array(), errors = json::array();
    int failed_trials = 0, errored = 0;
    for (const TrialRecord& r : records) {
        if (!r.error.empty()) {
            ++errored;
            errors.push_back({{"trial", r.trial}, {"T", r.iterations}, {"message", r.error}});
        } else if (!r.hard_ok) {
            ++failed_trials;
            hard.push_back(to_json(Check{"trial " + std::to_string(r.trial) + " T=" + std::to_string(r.iterations),
                                         false, r.hard_detail}));
        }
    }
    const std::string invariant_name = c.planner == PlannerKind::corestomp ? "query-count-and-iterate-feasibility"
                                       : c.planner == PlannerKind::corelp_exact ? "corelp-bounds"
                                                                                : "lralp-bound";
    hard.push_back(to_json(Check{invariant_name, failed_trials == 0,
                                 std::to_string(failed_trials) + " of " + std::to_string(records.size()) +
                                     " runs violate it"}));
    hard.push_back(to_json(Check{"runs-completed", errored == 0,
                                 std::to_string(errored) + " of " + std::to_string(records.size()) + " runs raised"}));

    json summary = json::array();
    std::vector<double> ts, gap_means, loss_means;
    for (int T : schedule) {
        std::vector<double> loss, gap, vd;
        double b2 = std::numeric_limits<double>::quiet_NaN(), b3 = b2, b11 = b2;
        for (const TrialRecord& r : records) {
            if (r.iterations != T || !r.error.empty()) continue;
            loss.push_back(r.loss);
            if (std::isfinite(r.gap)) gap.push_back(r.gap);
            vd.push_back(r.v_dagger);
            b2 = r.bound_thm2;
            b3 = r.bound_thm3;
            b11 = r.bound_lemma11;
        }
        json row = {{"T", T},
                    {"runs", loss.size()},
                    {"loss_mean", number_or_null(mean(loss))},
                    {"loss_se", number_or_null(standard_error(loss))},
                    {"V_dagger_mean", number_or_null(mean(vd))},
                    {"bound_thm2", number_or_null(b2)},
                    {"bound_thm3", number_or_null(b3)},
                    {"bound_lemma11", number_or_null(b11)}};
        if (!gap.empty()) {
            row["gap_mean"] = mean(gap);
            row["gap_se"] = standard_error(gap);
        }
        if (c.planner == PlannerKind::corestomp) {
            row["queries_expected"] = bounds::planner_queries(T, m, A);
            if (!loss.empty()) {
                const double lhs = mean(loss), rhs = b3 + 2.0 * standard_error(loss);
                soft.push_back(to_json(Check{"thm3-loss T=" + std::to_string(T), lhs <= rhs,
                                             "mean loss " + fmt(lhs) + " vs bound + 2 SE " + fmt(rhs)}));
            }
            if (!gap.empty()) {
                const double lhs = mean(gap), rhs = b11 + 2.0 * standard_error(gap);
                soft.push_back(to_json(Check{"lemma11-gap T=" + std::to_string(T), lhs <= rhs,
                                             "mean gap " + fmt(lhs) + " vs bound + 2 SE " + fmt(rhs)}));
                ts.push_back(T);
                gap_means.push_back(lhs);
                loss_means.push_back(mean(loss));
            }
        }
        summary.push_back(row);
    }
    report["summary"] = summary;

    json fit = json::object();
    if (const auto g = loglog_fit(ts, gap_means)) {
        fit["gap"] = {{"slope", g->slope}, {"intercept", g->intercept}, {"points", g->points}};
        if (g->points >= 3)
            soft.push_back(to_json(Check{"gap-slope", g->slope >= -0.65 && g->slope <= -0.35,
                                         "log-log slope " + fmt(g->slope) + " (expected near -0.5)"}));
    } else {
        fit["gap"] = nullptr;
    }
    if (const auto l = loglog_fit(ts, loss_means))
        fit["loss"] = {{"slope", l->slope}, {"intercept", l->intercept}, {"points", l->points}};
    else
        fit["loss"] = nullptr;
    report["fit"] = fit;

    bool any_hard = false;
    for (const json& h : hard) any_hard = any_hard || !h.at("passed").get<bool>();
    report["checks"] = {{"hard", hard}, {"soft", soft}};
    report["errors"] = errors;
    report["hard_failure"] = any_hard;
    return report;
}
}  // namespace detail

/**
 * Runs every (trial, T) task, `parallel` at a time, each on its own forked
 * oracle. Records are returned in (trial, T) order regardless of scheduling,
 * so everything except wall_ms is reproducible.
 */
inline ExperimentResult run_experiment(const ExperimentConfig& c, const Instance& inst) {
    c.validate();
    const Mdp& mdp = *inst.mdp;
    const bool stochastic = c.planner == PlannerKind::corestomp;
    const std::vector<int> schedule = stochastic ? c.schedule : std::vector<int>{0};

    detail::PlanningCache cache;
    for (int k = 0; k < c.trials; ++k) {
        const int s0 = planning_state(c, k, mdp.num_states());
        if (!mdp.valid_state(s0)) throw ConfigError("start_state " + std::to_string(s0) + " out of range");
        if (cache.problems.count(s0) || c.planner == PlannerKind::lralp) continue;
        CoreLpProblem p = build_corelp(mdp, inst.features, inst.core, s0);
        const CoreLpSolution sol = solve_corelp_exact(p);
        cache.v_dagger[s0] = sol.value;
        cache.pi_dagger[s0] = extract_pi_dagger(sol.lambda);
        cache.problems.emplace(s0, std::move(p));
    }

    std::vector<TrialRecord> records(static_cast<std::size_t>(c.trials) * schedule.size());
    for (int k = 0; k < c.trials; ++k) {
        for (std::size_t j = 0; j < schedule.size(); ++j) {
            TrialRecord& r = records[static_cast<std::size_t>(k) * schedule.size() + j];
            r.trial = k;
            r.seed = trial_seed(c.seed, k);
            r.iterations = schedule[j];
            r.start_state = planning_state(c, k, mdp.num_states());
        }
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < records.size(); i = next++) {
            TrialRecord& r = records[i];
            const auto start = std::chrono::steady_clock::now();
            try {
                if (stochastic)
                    detail::run_stochastic(inst, c, cache, static_cast<int>(i % schedule.size()), r);
                else
                    detail::run_exact(inst, c, cache, r);
            } catch (const std::exception& e) {
                r.error = e.what();
            }
            r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        }
    };
    const int threads = std::min<int>(c.parallel, static_cast<int>(records.size()));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    ExperimentResult out;
    out.report = detail::build_report(c, inst, records, stochastic ? c.schedule : std::vector<int>{0});
    out.hard_failure = out.report.at("hard_failure").get<bool>();
    out.records = std::move(records);
    return out;
}

inline void write_csv(const fs::path& path, const std::vector<TrialRecord>& records) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << csv_header() << '\n';
    for (const TrialRecord& r : records) out << csv_row(r) << '\n';
}

struct PlotOutput {
    std::vector<fs::path> files;
    std::vector<std::string> warnings;
};

namespace detail {
struct Series {
    std::string label;
    std::string color;
    std::vector<double> x, y;
    bool dashed = false;
    bool markers = false;
};

inline std::string svg_number(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", x);
    return buf;
}

inline std::string loglog_svg(const std::string& title, const std::string& y_label, const std::vector<Series>& series,
                              const std::string& annotation) {
    constexpr double W = 640, H = 440, L = 80, R = 20, Tm = 40, Bm = 60;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const Series& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!(s.x[i] > 0.0) || !(s.y[i] > 0.0)) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    const double lx0 = std::floor(std::log10(xmin)), lx1 = std::max(lx0 + 1, std::ceil(std::log10(xmax)));
    const double ly0 = std::floor(std::log10(ymin)), ly1 = std::max(ly0 + 1, std::ceil(std::log10(ymax)));
    auto px = [&](double x) { return L + (std::log10(x) - lx0) / (lx1 - lx0) * (W - L - R); };
    auto py = [&](double y) { return H - Bm - (std::log10(y) - ly0) / (ly1 - ly0) * (H - Tm - Bm); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
    os << "<rect x=\"" << L << "\" y=\"" << Tm << "\" width=\"" << W - L - R << "\" height=\"" << H - Tm - Bm
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double e = lx0; e <= lx1; e += 1.0) {
        const double x = px(std::pow(10.0, e));
        os << "<line x1=\"" << svg_number(x) << "\" y1=\"" << Tm << "\" x2=\"" << svg_number(x) << "\" y2=\"" << H - Bm
           << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << svg_number(x) << "\" y=\"" << H - Bm + 18 << "\" text-anchor=\"middle\">1e" << e
           << "</text>\n";
    }
    for (double e = ly0; e <= ly1; e += 1.0) {
        const double y = py(std::pow(10.0, e));
        os << "<line x1=\"" << L << "\" y1=\"" << svg_number(y) << "\" x2=\"" << W - R << "\" y2=\"" << svg_number(y)
           << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << L - 6 << "\" y=\"" << svg_number(y + 4) << "\" text-anchor=\"end\">1e" << e << "</text>\n";
    }
    os << "<text x=\"" << (W + L - R) / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">T (iterations)</text>\n";
    os << "<text transform=\"translate(18," << (H - Bm + Tm) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << y_label
       << "</text>\n";

    double legend_y = Tm + 16;
    for (const Series& s : series) {
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < s.x.size(); ++i)
            if (s.x[i] > 0.0 && s.y[i] > 0.0) pts.emplace_back(px(s.x[i]), py(s.y[i]));
        if (pts.empty()) continue;
        if (pts.size() > 1 && !s.markers) {
            os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\""
               << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"";
            for (const auto& [x, y] : pts) os << svg_number(x) << ',' << svg_number(y) << ' ';
            os << "\"/>\n";
        }
        if (pts.size() == 1 && !s.markers)
            os << "<line x1=\"" << svg_number(pts[0].first - 14) << "\" y1=\"" << svg_number(pts[0].second) << "\" x2=\""
               << svg_number(pts[0].first + 14) << "\" y2=\"" << svg_number(pts[0].second) << "\" stroke=\"" << s.color
               << "\" stroke-width=\"2\"/>\n";
        if (s.markers)
            for (const auto& [x, y] : pts)
                os << "<circle cx=\"" << svg_number(x) << "\" cy=\"" << svg_number(y) << "\" r=\"4\" fill=\"" << s.color
                   << "\"/>\n";
        os << "<text x=\"" << W - R - 8 << "\" y=\"" << legend_y << "\" text-anchor=\"end\" fill=\"" << s.color << "\">"
           << s.label << "</text>\n";
        legend_y += 16;
    }
    if (!annotation.empty())
        os << "<text x=\"" << L + 8 << "\" y=\"" << H - Bm - 10 << "\">" << annotation << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

inline std::vector<double> column(const json& summary, const char* key) {
    std::vector<double> out;
    for (const json& row : summary)
        out.push_back(row.contains(key) && row.at(key).is_number() ? row.at(key).get<double>()
                                                                   : std::numeric_limits<double>::quiet_NaN());
    return out;
}
}  // namespace detail

/**
 * Writes gap_vs_T.svg and loss_vs_T.svg into `out_dir`. The fitted line and
 * its annotation come from the report's fit fields, so the plot and report
 * always agree.
 */
inline PlotOutput emit_plots(const json& report, const fs::path& out_dir) {
    PlotOutput out;
    json summary = json::array();
    if (report.contains("summary"))
        for (const json& row : report.at("summary"))
            if (row.value("T", 0) > 0) summary.push_back(row);
    if (summary.empty()) {
        out.warnings.push_back("report has no T schedule; no plot written");
        return out;
    }
    fs::create_directories(out_dir);
    const std::vector<double> t = detail::column(summary, "T");

    struct Panel {
        const char* file;
        const char* title;
        const char* mean_key;
        const char* bound_key;
        const char* bound_label;
        const char* fit_key;
    };
    const Panel panels[] = {
        {"gap_vs_T.svg", "Duality gap of averaged iterates", "gap_mean", "bound_lemma11", "expected-gap bound", "gap"},
        {"loss_vs_T.svg", "Value loss of the sampled action", "loss_mean", "bound_thm3", "action-loss bound", "loss"},
    };
    for (const Panel& p : panels) {
        const std::vector<double> y = detail::column(summary, p.mean_key);
        std::vector<detail::Series> series;
        series.push_back({std::string("mean ") + p.fit_key, "#1f77b4", t, y, false, true});
        series.push_back({p.bound_label, "#d62728", t, detail::column(summary, p.bound_key), true, false});
        std::string annotation;
        const json& fit = report.contains("fit") ? report.at("fit") : json();
        if (fit.is_object() && fit.contains(p.fit_key) && fit.at(p.fit_key).is_object() && t.size() > 1) {
            const double slope = fit.at(p.fit_key).at("slope").get<double>();
            const double intercept = fit.at(p.fit_key).at("intercept").get<double>();
            detail::Series line{"least-squares fit", "#2ca02c", {}, {}, false, false};
            for (double x : t) {
                line.x.push_back(x);
                line.y.push_back(std::exp(intercept + slope * std::log(x)));
            }
            series.push_back(std::move(line));
            char buf[64];
            std::snprintf(buf, sizeof buf, "slope = %.3f", slope);
            annotation = buf;
        }
        bool any = false;
        for (double v : y) any = any || (std::isfinite(v) && v > 0.0);
        if (!any) {
            out.warnings.push_back(std::string("no positive ") + p.mean_key + " values; " + p.file + " not written");
            continue;
        }
        const fs::path path = out_dir / p.file;
        std::ofstream f(path);
        if (!f) throw std::runtime_error("cannot write " + path.string());
        f << detail::loglog_svg(p.title, p.mean_key, series, annotation);
        out.files.push_back(path);
    }
    return out;
}

/// Writes trials.csv and report.json under the configured output directory.
inline void write_outputs(const ExperimentConfig& c, const ExperimentResult& r) {
    const fs::path dir(c.out);
    fs::create_directories(dir);
    write_csv(dir / "trials.csv", r.records);
    std::ofstream rep(dir / "report.json");
    if (!rep) throw std::runtime_error("cannot write " + (dir / "report.json").string());
    rep << r.report.dump(2) << '\n';
}

}  // namespace coreplan::experiment
