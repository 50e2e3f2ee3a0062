#pragma once

#include "coreplan/features.hpp"
#include "coreplan/mdp.hpp"

#include <Eigen/Dense>
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace coreplan::io {

using nlohmann::json;

namespace detail {
inline json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

inline void write_json(const std::filesystem::path& path, const json& doc) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

template <typename T>
T required(const json& doc, const char* key) {
    if (!doc.contains(key)) throw InvalidModel(std::string("missing field '") + key + "'");
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception&) {
        throw InvalidModel(std::string("field '") + key + "' has the wrong type");
    }
}

inline std::vector<double> flatten(const Eigen::MatrixXd& m) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
    return out;
}
}  // namespace detail

inline json mdp_to_json(const Mdp& mdp) {
    return json{{"num_states", mdp.num_states()},
                {"num_actions", mdp.num_actions()},
                {"gamma", mdp.gamma()},
                {"rewards", std::vector<double>(mdp.rewards().data(), mdp.rewards().data() + mdp.rewards().size())},
                {"transitions", detail::flatten(mdp.transitions())}};
}

/// Parses and validates an MDP document; errors name the first offending row.
inline Mdp mdp_from_json(const json& doc) {
    const int S = detail::required<int>(doc, "num_states");
    const int A = detail::required<int>(doc, "num_actions");
    const double gamma = detail::required<double>(doc, "gamma");
    const auto rewards = detail::required<std::vector<double>>(doc, "rewards");
    const auto transitions = detail::required<std::vector<double>>(doc, "transitions");
    if (S < 1 || A < 1) throw InvalidModel("num_states and num_actions must be positive");
    const std::size_t rows = static_cast<std::size_t>(S) * static_cast<std::size_t>(A);
    if (rewards.size() != rows)
        throw InvalidModel("rewards has " + std::to_string(rewards.size()) + " entries, expected " +
                           std::to_string(rows));
    if (transitions.size() != rows * static_cast<std::size_t>(S))
        throw InvalidModel("transitions has " + std::to_string(transitions.size()) + " entries, expected " +
                           std::to_string(rows * static_cast<std::size_t>(S)));
    Eigen::MatrixXd p(static_cast<Eigen::Index>(rows), S);
    for (std::size_t i = 0; i < rows; ++i)
        for (int j = 0; j < S; ++j) p(static_cast<Eigen::Index>(i), j) = transitions[i * static_cast<std::size_t>(S) + static_cast<std::size_t>(j)];
    Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(rewards.data(), static_cast<Eigen::Index>(rows));
    return Mdp(S, A, std::move(p), std::move(r), gamma);
}

inline Mdp load_mdp(const std::filesystem::path& path) { return mdp_from_json(detail::read_json(path)); }
inline void save_mdp(const std::filesystem::path& path, const Mdp& mdp) { detail::write_json(path, mdp_to_json(mdp)); }

struct FeatureFile {
    FeatureMap features;
    CoreSet core;
};

inline json features_to_json(const FeatureMap& features, const CoreSet& core) {
    return json{{"dim", features.dim()}, {"phi", detail::flatten(features.matrix())}, {"core_indices", core.indices()}};
}

/**
 * Parses a feature document. The bias-in-span requirement is always enforced;
 * the convex-hull certification of the core set costs one LP per state and
 * runs only when `certify_core` is set.
 */
inline FeatureFile features_from_json(const json& doc, bool certify_core = false) {
    const int d = detail::required<int>(doc, "dim");
    const auto phi = detail::required<std::vector<double>>(doc, "phi");
    const auto core_idx = detail::required<std::vector<int>>(doc, "core_indices");
    if (d < 1) throw InvalidModel("dim must be positive");
    if (phi.empty() || phi.size() % static_cast<std::size_t>(d) != 0)
        throw InvalidModel("phi length " + std::to_string(phi.size()) + " is not a positive multiple of dim");
    const Eigen::Index S = static_cast<Eigen::Index>(phi.size() / static_cast<std::size_t>(d));
    Eigen::MatrixXd m(S, d);
    for (Eigen::Index s = 0; s < S; ++s)
        for (int j = 0; j < d; ++j) m(s, j) = phi[static_cast<std::size_t>(s * d + j)];
    FeatureMap features(std::move(m));
    CoreSet core(features, core_idx);
    if (certify_core) {
        const CoreSetCheck check = check_core_set(features, core);
        if (!check.valid)
            throw InvalidModel("state " + std::to_string(*check.first_violation) +
                               " is not in the convex hull of the core features");
    }
    return {std::move(features), std::move(core)};
}

inline FeatureFile load_features(const std::filesystem::path& path, bool certify_core = false) {
    return features_from_json(detail::read_json(path), certify_core);
}

inline void save_features(const std::filesystem::path& path, const FeatureMap& features, const CoreSet& core) {
    detail::write_json(path, features_to_json(features, core));
}

}  // namespace coreplan::io
