#pragma once

#include "coreplan/mdp.hpp"
#include "coreplan/rng.hpp"

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <memory>
#include <stdexcept>

namespace coreplan {

struct Transition {
    int next_state = 0;
    double reward = 0.0;
};

/// Minimal surface a planner may use to talk to an environment.
template <typename O>
concept Simulator = requires(O o, const O co, int s, int a) {
    { o.simulate(s, a) } -> std::same_as<Transition>;
    { co.num_actions() } -> std::convertible_to<int>;
    { co.discount() } -> std::convertible_to<double>;
    { co.query_count() } -> std::convertible_to<std::uint64_t>;
};

/// Index j with cdf(j-1) <= u < cdf(j) over the positive entries of `row`; the last positive entry absorbs round-off.
template <typename Row>
int inverse_cdf(const Row& row, double u) {
    double cumulative = 0.0;
    int last_positive = 0;
    for (Eigen::Index j = 0; j < row.size(); ++j) {
        if (row[j] <= 0.0) continue;
        last_positive = static_cast<int>(j);
        cumulative += row[j];
        if (u < cumulative) return static_cast<int>(j);
    }
    return last_positive;
}

/// Reward perturbation: uniform on [r - half_width, r + half_width].
struct RewardNoise {
    double half_width = 0.0;
};

/**
 * Sampling access to a tabular MDP. Each `simulate` call draws a next state by
 * inverse CDF over the stored transition row and counts as one query. Random
 * draws come from a counter-based stream, so a given (seed, fork path)
 * reproduces the same sample sequence.
 */
class GenerativeOracle {
public:
    GenerativeOracle(std::shared_ptr<const Mdp> mdp, std::uint64_t seed, RewardNoise noise = {})
        : mdp_(std::move(mdp)), seed_(seed), rng_(seed, 0) {
        if (!mdp_) throw std::invalid_argument("GenerativeOracle needs an MDP");
        const double max_abs_reward = mdp_->rewards().cwiseAbs().maxCoeff();
        // Clip so that emitted rewards always stay in [-1, 1].
        noise_half_width_ = std::clamp(noise.half_width, 0.0, std::max(0.0, 1.0 - max_abs_reward));
    }

    Transition simulate(int s, int a) {
        if (!mdp_->valid_state(s) || !mdp_->valid_action(a))
            throw std::out_of_range("simulate: invalid state-action pair");
        ++queries_;
        Transition out;
        out.next_state = inverse_cdf(mdp_->next_state_distribution(s, a), rng_.uniform());
        out.reward = mdp_->reward(s, a);
        if (noise_half_width_ > 0.0) out.reward += rng_.uniform(-noise_half_width_, noise_half_width_);
        return out;
    }

    /// Independent oracle over the same MDP; its stream depends only on this oracle's stream and `stream_id`.
    GenerativeOracle fork(std::uint64_t stream_id) const {
        GenerativeOracle child(*this);
        child.rng_ = rng_.split(stream_id);
        child.queries_ = 0;
        return child;
    }

    /// Uniform draw from the oracle's stream that does not count as a simulator query.
    double draw_uniform() { return rng_.uniform(); }

    int num_states() const { return mdp_->num_states(); }
    int num_actions() const { return mdp_->num_actions(); }
    double discount() const { return mdp_->gamma(); }
    std::uint64_t query_count() const { return queries_; }
    std::uint64_t seed() const { return seed_; }
    double reward_noise() const { return noise_half_width_; }

private:
    std::shared_ptr<const Mdp> mdp_;
    std::uint64_t seed_;
    CounterRng rng_;
    double noise_half_width_ = 0.0;
    std::uint64_t queries_ = 0;
};

static_assert(Simulator<GenerativeOracle>);

}  // namespace coreplan
