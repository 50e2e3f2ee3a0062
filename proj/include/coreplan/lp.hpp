#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <sstream>
#include <vector>

namespace coreplan::lp {

/// Smallest admissible pivot magnitude.
inline constexpr double kPivotTolerance = 1e-11;
/// Primal feasibility tolerance for constraint residuals and phase-one objective.
inline constexpr double kFeasibilityTolerance = 1e-7;
/// Reduced-cost threshold for declaring optimality.
inline constexpr double kOptimalityTolerance = 1e-9;

enum class Sense { minimize, maximize };
enum class Status { optimal, infeasible, unbounded };

inline const char* to_string(Status s) {
    switch (s) {
        case Status::optimal: return "optimal";
        case Status::infeasible: return "infeasible";
        case Status::unbounded: return "unbounded";
    }
    return "unknown";
}

/// Raised when the simplex cannot make progress for numerical reasons.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * Dense linear program
 *
 *     optimize  c'x
 *     s.t.      A_eq x  = b_eq
 *               A_le x <= b_le
 *               x_j >= 0 unless free[j]
 *
 * Empty constraint blocks are allowed; `free_variables` may be empty, in which
 * case every variable is non-negative.
 */
struct LinearProgram {
    Sense sense = Sense::minimize;
    Eigen::VectorXd objective;
    Eigen::MatrixXd eq_matrix;
    Eigen::VectorXd eq_rhs;
    Eigen::MatrixXd le_matrix;
    Eigen::VectorXd le_rhs;
    std::vector<bool> free_variables;

    Eigen::Index num_variables() const { return objective.size(); }

    bool is_free(Eigen::Index j) const {
        return !free_variables.empty() && free_variables[static_cast<std::size_t>(j)];
    }

    void validate() const {
        const auto n = num_variables();
        if (n < 1) throw std::invalid_argument("linear program needs at least one variable");
        if (eq_matrix.rows() != eq_rhs.size() || (eq_matrix.rows() > 0 && eq_matrix.cols() != n))
            throw std::invalid_argument("equality block has inconsistent dimensions");
        if (le_matrix.rows() != le_rhs.size() || (le_matrix.rows() > 0 && le_matrix.cols() != n))
            throw std::invalid_argument("inequality block has inconsistent dimensions");
        if (!free_variables.empty() && static_cast<Eigen::Index>(free_variables.size()) != n)
            throw std::invalid_argument("free-variable mask has wrong length");
        if (!objective.allFinite() || !eq_matrix.allFinite() || !eq_rhs.allFinite() ||
            !le_matrix.allFinite() || !le_rhs.allFinite())
            throw std::invalid_argument("linear program contains non-finite data");
    }
};

/**
 * Result of a solve. When optimal, `eq_duals`/`le_duals` are multipliers for
 * the original constraints with `objective_value == b_eq'y_eq + b_le'y_le`.
 */
struct LpSolution {
    Status status = Status::infeasible;
    Eigen::VectorXd x;
    double objective_value = std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd eq_duals;
    Eigen::VectorXd le_duals;

    bool optimal() const { return status == Status::optimal; }
};

/// Largest absolute violation of the constraints and bounds of `lp` at `x`.
inline double primal_residual(const LinearProgram& lp, const Eigen::VectorXd& x) {
    double worst = 0.0;
    if (lp.eq_matrix.rows() > 0)
        worst = std::max(worst, (lp.eq_matrix * x - lp.eq_rhs).cwiseAbs().maxCoeff());
    if (lp.le_matrix.rows() > 0)
        worst = std::max(worst, (lp.le_matrix * x - lp.le_rhs).maxCoeff());
    for (Eigen::Index j = 0; j < x.size(); ++j)
        if (!lp.is_free(j)) worst = std::max(worst, -x[j]);
    return worst;
}

namespace detail {

// Two-phase tableau simplex on  min c'y, Ay = b (b >= 0), y >= 0  with Bland's rule.
class Tableau {
public:
    Tableau(const Eigen::MatrixXd& a, const Eigen::VectorXd& b)
        : rows_(a.rows()), structural_(a.cols()) {
        table_ = Eigen::MatrixXd::Zero(rows_, structural_ + rows_ + 1);
        table_.leftCols(structural_) = a;
        table_.block(0, structural_, rows_, rows_).setIdentity();
        table_.col(width() - 1) = b;
        original_ = table_;
        kept_rows_.resize(static_cast<std::size_t>(rows_));
        for (Eigen::Index i = 0; i < rows_; ++i) kept_rows_[static_cast<std::size_t>(i)] = i;
        basis_.resize(static_cast<std::size_t>(rows_));
        for (Eigen::Index i = 0; i < rows_; ++i) basis_[static_cast<std::size_t>(i)] = structural_ + i;
    }

    // Returns the phase-one optimum (sum of artificials).
    double phase_one() {
        Eigen::VectorXd cost = Eigen::VectorXd::Zero(width() - 1);
        cost.segment(structural_, rows_).setOnes();
        const bool bounded = run(cost, width() - 1);
        if (!bounded) throw NumericalError("phase one reported unbounded");
        double sum = 0.0;
        for (Eigen::Index i = 0; i < rows_; ++i)
            if (is_artificial(basis_[static_cast<std::size_t>(i)])) sum += table_(i, width() - 1);
        return sum;
    }

    // Pivots remaining artificials out of the basis; drops redundant rows.
    void expel_artificials() {
        for (Eigen::Index i = 0; i < rows_;) {
            if (!is_artificial(basis_[static_cast<std::size_t>(i)])) {
                ++i;
                continue;
            }
            Eigen::Index col = -1;
            double best = kPivotTolerance;
            for (Eigen::Index j = 0; j < structural_; ++j) {
                if (std::abs(table_(i, j)) > best) {
                    best = std::abs(table_(i, j));
                    col = j;
                }
            }
            if (col >= 0) {
                pivot(i, col);
                ++i;
            } else {
                remove_row(i);
            }
        }
        // Artificial columns are never needed again.
        Eigen::MatrixXd trimmed(rows_, structural_ + 1);
        trimmed.leftCols(structural_) = table_.leftCols(structural_);
        trimmed.col(structural_) = table_.col(width() - 1);
        table_ = std::move(trimmed);
        Eigen::MatrixXd original(original_.rows(), structural_ + 1);
        original.leftCols(structural_) = original_.leftCols(structural_);
        original.col(structural_) = original_.col(original_.cols() - 1);
        original_ = std::move(original);
        artificials_dropped_ = true;
        refactor();
    }

    // Returns false when the objective is unbounded below.
    bool phase_two(const Eigen::VectorXd& cost) {
        for (int round = 0; round < 50; ++round) {
            if (!run(cost, structural_)) return false;
            if (!restore_feasibility(cost)) return true;
        }
        throw NumericalError("simplex failed to settle on a feasible optimal basis");
    }

    const std::vector<Eigen::Index>& basis() const { return basis_; }
    const std::vector<Eigen::Index>& kept_rows() const { return kept_rows_; }
    Eigen::VectorXd basic_values() const { return table_.col(width() - 1); }

private:
    Eigen::Index width() const { return table_.cols(); }
    bool is_artificial(Eigen::Index j) const { return !artificials_dropped_ && j >= structural_; }

    void pivot(Eigen::Index r, Eigen::Index c) {
        const double scale = table_(r, c);
        table_.row(r) /= scale;
        for (Eigen::Index i = 0; i < rows_; ++i) {
            if (i == r) continue;
            const double f = table_(i, c);
            if (f != 0.0) table_.row(i) -= f * table_.row(r);
        }
        basis_[static_cast<std::size_t>(r)] = c;
        ++pivots_since_refactor_;
    }

    // Rebuilds B^{-1}[A | b] from the original data to shed accumulated pivoting error.
    void refactor() {
        Eigen::MatrixXd rows(rows_, original_.cols());
        for (Eigen::Index i = 0; i < rows_; ++i) rows.row(i) = original_.row(kept_rows_[static_cast<std::size_t>(i)]);
        Eigen::MatrixXd basis_matrix(rows_, rows_);
        for (Eigen::Index i = 0; i < rows_; ++i) basis_matrix.col(i) = rows.col(basis_[static_cast<std::size_t>(i)]);
        const Eigen::FullPivLU<Eigen::MatrixXd> lu(basis_matrix);
        if (!lu.isInvertible()) throw NumericalError("simplex basis became singular");
        table_ = lu.solve(rows);
        for (Eigen::Index i = 0; i < rows_; ++i)
            table_.col(basis_[static_cast<std::size_t>(i)]) = Eigen::VectorXd::Unit(rows_, i);
        pivots_since_refactor_ = 0;
    }

    // Dual simplex pivots that remove slightly negative basic values left by
    // an ill-conditioned basis while keeping reduced costs non-negative.
    // Returns true if any pivot was made.
    bool restore_feasibility(const Eigen::VectorXd& cost) {
        bool pivoted = false;
        for (int iter = 0; iter < 1000; ++iter) {
            refactor();
            Eigen::Index row = -1;
            for (Eigen::Index i = 0; i < rows_; ++i) {
                if (table_(i, width() - 1) >= -kNegativeBasic) continue;
                if (row < 0 || basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(row)]) row = i;
            }
            if (row < 0) return pivoted;
            Eigen::VectorXd cb(rows_);
            for (Eigen::Index i = 0; i < rows_; ++i) cb[i] = cost[basis_[static_cast<std::size_t>(i)]];
            Eigen::Index entering = -1;
            double best = std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < structural_; ++j) {
                const double a = table_(row, j);
                if (a >= -kPivotTolerance) continue;
                const double ratio = std::max(cost[j] - cb.dot(table_.col(j)), 0.0) / -a;
                if (ratio < best) {
                    best = ratio;
                    entering = j;
                }
            }
            if (entering < 0) return pivoted;  // leave it to the final residual check
            pivot(row, entering);
            pivoted = true;
        }
        throw NumericalError("feasibility restoration did not converge");
    }

    void remove_row(Eigen::Index r) {
        Eigen::MatrixXd next(rows_ - 1, width());
        next.topRows(r) = table_.topRows(r);
        next.bottomRows(rows_ - 1 - r) = table_.bottomRows(rows_ - 1 - r);
        table_ = std::move(next);
        basis_.erase(basis_.begin() + r);
        kept_rows_.erase(kept_rows_.begin() + r);
        --rows_;
    }

    struct RatioChoice {
        Eigen::Index row = -1;
        bool small = true;
        bool tiny_positive = false;
    };

    // Minimum ratio, then Bland's lowest basic index among the tied rows,
    // preferring rows whose pivot is not suspiciously small.
    RatioChoice ratio_test(Eigen::Index entering) const {
        RatioChoice out;
        double best_ratio = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < rows_; ++i) {
            const double a = table_(i, entering);
            if (a <= kPivotTolerance) {
                if (a > 0.0) out.tiny_positive = true;
                continue;
            }
            best_ratio = std::min(best_ratio, std::max(table_(i, width() - 1), 0.0) / a);
        }
        if (!std::isfinite(best_ratio)) return out;
        const double slack = 1e-12 * std::max(1.0, best_ratio);
        for (Eigen::Index i = 0; i < rows_; ++i) {
            const double a = table_(i, entering);
            if (a <= kPivotTolerance || std::max(table_(i, width() - 1), 0.0) / a > best_ratio + slack) continue;
            const bool small = a < kSuspectPivot;
            const bool lower = out.row < 0 || basis_[static_cast<std::size_t>(i)] <
                                                  basis_[static_cast<std::size_t>(out.row)];
            if (out.row < 0 || (out.small && !small) || (small == out.small && lower)) {
                out.row = i;
                out.small = small;
            }
        }
        return out;
    }

    // Bland's rule: the lowest-index improving column enters. A column whose
    // only admissible pivots are tiny is passed over for the next improving
    // column and used only as a last resort. Returns false when unbounded.
    bool run(const Eigen::VectorXd& cost, Eigen::Index eligible) {
        const std::size_t max_pivots = 200000;
        for (std::size_t iter = 0; iter < max_pivots; ++iter) {
            Eigen::VectorXd cb(rows_);
            for (Eigen::Index i = 0; i < rows_; ++i) cb[i] = cost[basis_[static_cast<std::size_t>(i)]];
            const Eigen::VectorXd reduced =
                cost.head(eligible) - table_.leftCols(eligible).transpose() * cb;

            Eigen::Index entering = -1, leaving = -1;
            Eigen::Index fallback_col = -1, fallback_row = -1;
            bool unbounded = false, tiny_only = false;
            for (Eigen::Index j = 0; j < eligible; ++j) {
                if (reduced[j] >= -kOptimalityTolerance) continue;
                const RatioChoice choice = ratio_test(j);
                if (choice.row < 0) {
                    unbounded = true;
                    tiny_only = choice.tiny_positive;
                    break;
                }
                if (!choice.small) {
                    entering = j;
                    leaving = choice.row;
                    break;
                }
                if (fallback_col < 0) {
                    fallback_col = j;
                    fallback_row = choice.row;
                }
            }
            if (entering < 0 && !unbounded && fallback_col < 0) {
                if (pivots_since_refactor_ == 0) return true;
                refactor();
                continue;
            }
            if (unbounded) {
                if (pivots_since_refactor_ > 0) {
                    refactor();
                    continue;
                }
                if (tiny_only) throw NumericalError("all candidate pivots fall below the pivot tolerance");
                return false;
            }
            if (entering < 0) {
                // Small pivots are often accumulated noise; decide them on a fresh factorization.
                if (pivots_since_refactor_ > 0) {
                    refactor();
                    continue;
                }
                entering = fallback_col;
                leaving = fallback_row;
            }
            pivot(leaving, entering);
            if (pivots_since_refactor_ >= kRefactorInterval) refactor();
        }
        throw NumericalError("simplex pivot limit exceeded");
    }

    Eigen::Index rows_;
    Eigen::Index structural_;
    Eigen::MatrixXd table_;
    std::vector<Eigen::Index> basis_;
    std::vector<Eigen::Index> kept_rows_;
    bool artificials_dropped_ = false;
    Eigen::MatrixXd original_;
    int pivots_since_refactor_ = 0;
    static constexpr int kRefactorInterval = 16;
    static constexpr double kSuspectPivot = 1e-7;
    static constexpr double kNegativeBasic = 1e-11;
};

}  // namespace detail

/**
 * Solves `lp` with a two-phase dense simplex using Bland's rule. Free
 * variables are split into positive and negative parts; inequality rows get
 * slacks. The optimal vertex is re-solved from its basis with an LU
 * factorization to remove accumulated tableau error.
 *
 * Infeasibility and unboundedness are reported through `status`. Throws
 * `NumericalError` on breakdown and `std::invalid_argument` on malformed input.
 */
inline LpSolution solve_lp(const LinearProgram& lp) {
    lp.validate();
    const Eigen::Index n = lp.num_variables();
    const Eigen::Index meq = lp.eq_matrix.rows();
    const Eigen::Index mle = lp.le_matrix.rows();
    const Eigen::Index m = meq + mle;

    // Column layout: one column per variable (two for free ones), then slacks.
    std::vector<Eigen::Index> pos_col(static_cast<std::size_t>(n)), neg_col(static_cast<std::size_t>(n), -1);
    Eigen::Index cols = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
        pos_col[static_cast<std::size_t>(j)] = cols++;
        if (lp.is_free(j)) neg_col[static_cast<std::size_t>(j)] = cols++;
    }
    const Eigen::Index slack_begin = cols;
    cols += mle;

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, cols);
    Eigen::VectorXd b(m);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(cols);
    const double sense_sign = lp.sense == Sense::maximize ? -1.0 : 1.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto p = pos_col[static_cast<std::size_t>(j)];
        const auto q = neg_col[static_cast<std::size_t>(j)];
        c[p] = sense_sign * lp.objective[j];
        if (q >= 0) c[q] = -c[p];
        for (Eigen::Index i = 0; i < meq; ++i) {
            a(i, p) = lp.eq_matrix(i, j);
            if (q >= 0) a(i, q) = -lp.eq_matrix(i, j);
        }
        for (Eigen::Index i = 0; i < mle; ++i) {
            a(meq + i, p) = lp.le_matrix(i, j);
            if (q >= 0) a(meq + i, q) = -lp.le_matrix(i, j);
        }
    }
    if (meq > 0) b.head(meq) = lp.eq_rhs;
    if (mle > 0) b.tail(mle) = lp.le_rhs;
    for (Eigen::Index i = 0; i < mle; ++i) a(meq + i, slack_begin + i) = 1.0;

    Eigen::VectorXd row_sign = Eigen::VectorXd::Ones(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        if (b[i] < 0.0) {
            row_sign[i] = -1.0;
            a.row(i) *= -1.0;
            b[i] = -b[i];
        }
    }

    LpSolution out;
    detail::Tableau tab(a, b);
    const double infeasibility = tab.phase_one();
    if (infeasibility > kFeasibilityTolerance) {
        out.status = Status::infeasible;
        return out;
    }
    tab.expel_artificials();
    if (!tab.phase_two(c)) {
        out.status = Status::unbounded;
        return out;
    }

    // Recover the vertex from the final basis.
    const auto& basis = tab.basis();
    const auto& kept = tab.kept_rows();
    const auto k = static_cast<Eigen::Index>(basis.size());
    Eigen::VectorXd y = Eigen::VectorXd::Zero(cols);
    Eigen::VectorXd pi = Eigen::VectorXd::Zero(m);
    {
        const Eigen::VectorXd tableau_values = tab.basic_values();
        for (Eigen::Index i = 0; i < k; ++i) y[basis[static_cast<std::size_t>(i)]] = tableau_values[i];
        if (k > 0) {
            Eigen::MatrixXd basis_matrix(k, k);
            Eigen::VectorXd rhs(k), cb(k);
            for (Eigen::Index i = 0; i < k; ++i) {
                rhs[i] = b[kept[static_cast<std::size_t>(i)]];
                cb[i] = c[basis[static_cast<std::size_t>(i)]];
                for (Eigen::Index r = 0; r < k; ++r)
                    basis_matrix(r, i) = a(kept[static_cast<std::size_t>(r)], basis[static_cast<std::size_t>(i)]);
            }
            Eigen::FullPivLU<Eigen::MatrixXd> lu(basis_matrix);
            if (lu.isInvertible()) {
                Eigen::VectorXd refined = Eigen::VectorXd::Zero(cols);
                const Eigen::VectorXd xb = lu.solve(rhs);
                for (Eigen::Index i = 0; i < k; ++i)
                    refined[basis[static_cast<std::size_t>(i)]] = std::max(xb[i], 0.0);
                const double before = (a * y.cwiseMax(0.0) - b).cwiseAbs().maxCoeff();
                const double after = (a * refined - b).cwiseAbs().maxCoeff();
                if (after <= before) y = refined;
                const Eigen::VectorXd duals = lu.transpose().solve(cb);
                for (Eigen::Index i = 0; i < k; ++i) pi[kept[static_cast<std::size_t>(i)]] = duals[i];
            }
        }
        y = y.cwiseMax(0.0);
    }

    out.x.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto q = neg_col[static_cast<std::size_t>(j)];
        out.x[j] = y[pos_col[static_cast<std::size_t>(j)]] - (q >= 0 ? y[q] : 0.0);
    }
    const Eigen::VectorXd multipliers = sense_sign * row_sign.cwiseProduct(pi);
    out.eq_duals = multipliers.head(meq);
    out.le_duals = multipliers.tail(mle);
    out.objective_value = lp.objective.dot(out.x);
    out.status = Status::optimal;

    const double scale = std::max({1.0, b.size() > 0 ? b.cwiseAbs().maxCoeff() : 0.0});
    const double residual = primal_residual(lp, out.x);
    if (residual > kFeasibilityTolerance * scale)
        {
        std::ostringstream msg;
        msg << "optimal vertex violates constraints by " << residual;
        throw NumericalError(msg.str());
    }
    return out;
}

}  // namespace coreplan::lp
