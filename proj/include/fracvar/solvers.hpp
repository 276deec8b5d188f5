#pragma once

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/tools/minima.hpp>
#include <Eigen/Dense>

#include "fracvar/energy.hpp"
#include "fracvar/error.hpp"
#include "fracvar/fracops.hpp"
#include "fracvar/grid.hpp"

namespace fracvar {

enum class Classification { trivial, local_min, mountain_pass, failed };

inline const char* to_string(Classification c) {
    switch (c) {
        case Classification::trivial: return "trivial";
        case Classification::local_min: return "local-min";
        case Classification::mountain_pass: return "mountain-pass";
        default: return "failed";
    }
}

inline constexpr double trivial_threshold = 1e-8;

struct SolverOptions {
    int max_iterations = 5000;
    double tol_g = 1e-6;
    double armijo_factor = 0.5;
    double armijo_slope = 1e-4;
    int max_backtracks = 60;
    double ball_radius = std::numeric_limits<double>::infinity();
    bool cone = true;
    bool newton = true;  // exact-Hessian steps on the free nodes when the Hessian allows
    double tol_active = 1e-12;
    int path_points = 41;
    double path_step_cap = std::numeric_limits<double>::infinity();  // H^s length of one maximizer step
    int respline_every = 10;
    /// Extra steps after the KKT tolerance is met, taken while each halves the residual.
    int polish_steps = 20;
    double polish_below = 1.0;  // mountain pass: try Newton polishing once the peak KKT residual drops below this
    /// Table P of the preconditioner (P + I)^{-1}; the composed -div^s grad^s table when unset.
    std::shared_ptr<const Eigen::MatrixXd> preconditioner;

    void validate() const {
        if (max_iterations < 1) throw ArgumentError("solver max_iterations must be positive");
        if (polish_steps < 0) throw ArgumentError("solver polish_steps must be nonnegative");
        if (!(tol_g > 0.0) || !(tol_active >= 0.0)) throw ArgumentError("solver tolerances must be positive");
        if (!(armijo_factor > 0.0 && armijo_factor < 1.0)) throw ArgumentError("armijo_factor must lie in (0,1)");
        if (!(armijo_slope > 0.0 && armijo_slope < 1.0)) throw ArgumentError("armijo_slope must lie in (0,1)");
        if (!(ball_radius > 0.0)) throw ArgumentError("ball_radius must be positive");
        if (path_points < 3 || path_points % 2 == 0) throw ArgumentError("path_points must be odd and at least 3");
        if (!(path_step_cap > 0.0)) throw ArgumentError("path_step_cap must be positive");
        if (respline_every < 1) throw ArgumentError("respline_every must be positive");
        if (!(polish_below >= 0.0)) throw ArgumentError("polish_below must be nonnegative");
    }
};

/// Which Schechter alternative describes the final iterate: (a) interior of the ball,
/// (b) on the sphere with <J'(u), u> <= 0, (c) on the sphere otherwise.
struct BoundaryDiagnostics {
    char condition = 'a';
    int boundary_hits = 0;
    double radial_derivative = 0.0;  // <J'(u), u> at the last boundary hit
};

struct SolveReport {
    Field solution;
    double energy = 0.0;
    double kkt = 0.0;
    int iterations = 0;
    bool converged = false;
    Classification classification = Classification::failed;
    BoundaryDiagnostics boundary;
    double ball_radius = std::numeric_limits<double>::infinity();
    double max_hs_norm = 0.0;
    std::vector<double> energy_history;
    // mountain pass only
    double level = 0.0;
    bool barrier_respected = true;
    std::optional<double> sphere_level;
    std::string message;
};

inline Field project_cone(const Field& u) { return Field(u.grid_ptr(), u.values().cwiseMax(0.0)); }

/// Cone KKT residual for representer g: |g_i| where u_i > tol_active, max(0, -g_i) elsewhere.
inline double kkt_residual(const Field& u, const Field& g, double tol_active) {
    double r = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) r = std::max(r, u[i] > tol_active ? std::abs(g[i]) : std::max(0.0, -g[i]));
    return r;
}

inline double kkt_residual(const EnergyModel& m, const Field& u, double tol_active) {
    return kkt_residual(u, energy_gradient(m, u).representer, tol_active);
}

namespace detail {

/// Two-metric projected direction: (P + I)^{-1} restricted to the free nodes, diagonal
/// scaling on the nodes held at zero. Factorizations are cached per free set.
class ConeDirection {
public:
    ConeDirection(const EnergyModel& m, const SolverOptions& opts) {
        if (opts.preconditioner) {
            table_ = *opts.preconditioner;
        } else {
            table_ = composed_laplacian_table(*m.grad);
        }
        const auto n = static_cast<Eigen::Index>(m.grid().size());
        if (table_.rows() != n || table_.cols() != n) throw ArgumentError("preconditioner does not match grid");
        table_.diagonal().array() += 1.0;
    }

    std::vector<char> active_set(const Field& u, const Field& g, bool cone) const {
        const auto n = static_cast<Eigen::Index>(u.size());
        std::vector<char> active(static_cast<std::size_t>(n), 0);
        if (!cone) return active;
        double r = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) r = std::max(r, std::abs(u.values()[i] - std::max(u.values()[i] - g.values()[i], 0.0)));
        const double eps = std::min(1e-6, r);
        for (Eigen::Index i = 0; i < n; ++i) active[static_cast<std::size_t>(i)] = u.values()[i] <= eps && g.values()[i] > 0.0;
        return active;
    }

    Eigen::VectorXd operator()(const Field& u, const Field& g, bool cone) {
        const auto active = active_set(u, g, cone);
        const auto n = static_cast<Eigen::Index>(u.size());
        if (active != key_ || !factor_) {
            key_ = active;
            free_ = free_indices(active);
            factor_ = std::make_unique<Eigen::LLT<Eigen::MatrixXd>>(restrict(table_, free_));
            if (factor_->info() != Eigen::Success) throw ConvergenceError("preconditioner factorization failed");
        }
        Eigen::VectorXd d(n);
        const Eigen::VectorXd df = factor_->solve(gather(g.values(), free_));
        for (Eigen::Index i = 0; i < n; ++i) {
            if (active[static_cast<std::size_t>(i)]) d[i] = -g.values()[i] / table_(i, i);
        }
        for (std::size_t a = 0; a < free_.size(); ++a) d[free_[a]] = -df[static_cast<Eigen::Index>(a)];
        return d;
    }

    /// Projected Newton directions with the exact Hessian on the free nodes, shifted until it is
    /// positive definite: one for the epsilon-active set and, when it differs, one holding only
    /// the nodes already at zero. Only descent directions are returned.
    struct Newton {
        Eigen::VectorXd d;
        bool shifted = false;  // the free Hessian was indefinite
    };

    std::vector<Newton> newton(const EnergyModel& m, const Field& u, const Field& g, bool cone, double tol_active) const {
        const Eigen::MatrixXd hess = energy_hessian(m, u);
        std::vector<std::vector<char>> sets{active_set(u, g, cone)};
        if (cone) {
            std::vector<char> strict(u.size(), 0);
            for (std::size_t i = 0; i < u.size(); ++i) strict[i] = u[i] <= tol_active && g[i] > 0.0;
            if (strict != sets.front()) sets.push_back(std::move(strict));
        }
        std::vector<Newton> out;
        for (const auto& active : sets) {
            if (auto d = newton_for(hess, g, active)) out.push_back(std::move(*d));
        }
        return out;
    }

    /// sqrt(w v^T P v) with the unshifted table: the discrete H^s_0 norm when P is the composed table.
    double norm(const Eigen::VectorXd& v, double w) const {
        return std::sqrt(std::max(0.0, w * (v.dot(table_ * v) - v.squaredNorm())));
    }

private:
    std::optional<Newton> newton_for(const Eigen::MatrixXd& hess, const Field& g, const std::vector<char>& active) const {
        const auto free = free_indices(active);
        const auto n = static_cast<Eigen::Index>(g.size());
        Eigen::MatrixXd sub = restrict(hess, free);
        const double scale = free.empty() ? 1.0 : std::max(sub.diagonal().cwiseAbs().maxCoeff(), 1e-300);
        Eigen::LLT<Eigen::MatrixXd> llt(sub);
        const bool shifted = llt.info() != Eigen::Success;
        for (double shift = 1e-10 * scale; llt.info() != Eigen::Success && shift <= 1e2 * scale; shift *= 10.0) {
            sub.diagonal().array() += shift;
            llt.compute(sub);
            sub.diagonal().array() -= shift;
        }
        if (llt.info() != Eigen::Success) return std::nullopt;
        const Eigen::VectorXd df = llt.solve(gather(g.values(), free));
        Eigen::VectorXd d(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (active[static_cast<std::size_t>(i)]) d[i] = -g.values()[i] / std::max(hess(i, i), table_(i, i));
        }
        for (std::size_t a = 0; a < free.size(); ++a) d[free[a]] = -df[static_cast<Eigen::Index>(a)];
        if (!d.allFinite() || !(d.dot(g.values()) < 0.0)) return std::nullopt;
        return Newton{std::move(d), shifted};
    }

    static std::vector<Eigen::Index> free_indices(const std::vector<char>& active) {
        std::vector<Eigen::Index> out;
        for (std::size_t i = 0; i < active.size(); ++i) {
            if (!active[i]) out.push_back(static_cast<Eigen::Index>(i));
        }
        return out;
    }

    static Eigen::MatrixXd restrict(const Eigen::MatrixXd& a, const std::vector<Eigen::Index>& idx) {
        const auto k = static_cast<Eigen::Index>(idx.size());
        Eigen::MatrixXd out(k, k);
        for (Eigen::Index c = 0; c < k; ++c) {
            for (Eigen::Index r = 0; r < k; ++r) out(r, c) = a(idx[static_cast<std::size_t>(r)], idx[static_cast<std::size_t>(c)]);
        }
        return out;
    }

    static Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& idx) {
        Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t a = 0; a < idx.size(); ++a) out[static_cast<Eigen::Index>(a)] = v[idx[a]];
        return out;
    }

    Eigen::MatrixXd table_;
    std::vector<char> key_;
    std::vector<Eigen::Index> free_;
    std::unique_ptr<Eigen::LLT<Eigen::MatrixXd>> factor_;
};

/// Roundoff allowance for energy comparisons near convergence.
inline double energy_slack(double a, double b) { return 64.0 * DBL_EPSILON * std::max({std::abs(a), std::abs(b), 1e-300}); }

struct StepResult {
    bool accepted = false;
    Field point;
    double energy = 0.0;
};

/// Projected Armijo search along u + alpha d: J(u(alpha)) <= J(u) + sigma <g, u(alpha) - u>.
/// With `expand`, a full step that passes is doubled while the test keeps passing and J keeps falling
/// (used for shifted Newton steps, which are otherwise capped near the current amplitude).
inline StepResult armijo_step(const EnergyModel& m, const SolverOptions& opts, const Field& u, double ju, const Field& g,
                              const Eigen::VectorXd& d, const std::function<Field(Field)>& finish, bool expand = false) {
    auto attempt = [&](double alpha) -> StepResult {
        Field trial(u.grid_ptr(), u.values() + alpha * d);
        if (opts.cone) trial = project_cone(trial);
        trial = finish(std::move(trial));
        double jt;
        try {
            jt = energy(m, trial);
        } catch (const EvaluationError&) {
            return {};
        }
        const double slope = l2_inner(g, trial - u);
        if (slope <= 0.0 && jt <= ju + opts.armijo_slope * slope + energy_slack(ju, jt)) return {true, std::move(trial), jt};
        return {};
    };
    double alpha = 1.0;
    for (int k = 0; k <= opts.max_backtracks; ++k, alpha *= opts.armijo_factor) {
        StepResult step = attempt(alpha);
        if (!step.accepted) continue;
        for (int e = 0; expand && k == 0 && e < opts.max_backtracks; ++e) {
            alpha /= opts.armijo_factor;
            StepResult longer = attempt(alpha);
            if (!longer.accepted || !(longer.energy < step.energy)) break;
            step = std::move(longer);
        }
        return step;
    }
    return {};
}

}  // namespace detail

/// Projected, (P + I)^{-1}-preconditioned descent on the cone with Armijo backtracking.
/// Iterates leaving the ball ||u||_{H^s_0} <= R are rescaled onto its sphere.
inline SolveReport minimize_cone(const EnergyModel& m, const SolverOptions& opts, const Field& u0) {
    opts.validate();
    require_same_grid(m.grid(), u0.grid(), "minimize_cone");
    if (opts.cone && u0.values().minCoeff() < 0.0) throw ArgumentError("minimize_cone: initial guess must be nonnegative");

    SolveReport rep;
    rep.ball_radius = opts.ball_radius;
    detail::ConeDirection direction(m, opts);
    const NonlocalOperator& grad = *m.grad;

    auto finish = [&](Field u) {
        if (std::isfinite(opts.ball_radius)) {
            const double r = hs_norm(grad, u);
            if (r > opts.ball_radius) {
                u *= opts.ball_radius / r;
                ++rep.boundary.boundary_hits;
            }
        }
        return u;
    };

    Field u = finish(u0);
    double ju = energy(m, u);
    rep.energy_history.push_back(ju);
    rep.max_hs_norm = hs_norm(grad, u);
    // Best converged state, restored if a polishing step does not pay off.
    struct Kept {
        Field u;
        double ju, kkt;
        int it;
        std::size_t history;
    };
    std::optional<Kept> kept;
    int polished = 0;
    for (int it = 0;; ++it) {
        const Field g = energy_gradient(m, u).representer;
        rep.kkt = opts.cone ? kkt_residual(u, g, opts.tol_active) : g.values().cwiseAbs().maxCoeff();
        rep.iterations = it;
        if (kept && !(rep.kkt <= 0.5 * kept->kkt)) {
            if (rep.kkt > kept->kkt) {
                u = kept->u;
                ju = kept->ju;
                rep.kkt = kept->kkt;
                rep.iterations = kept->it;
                rep.energy_history.resize(kept->history);
            }
            break;
        }
        if (rep.kkt <= opts.tol_g) {
            rep.converged = true;
            if (polished == opts.polish_steps || it == opts.max_iterations || rep.kkt == 0.0) break;
            kept = Kept{u, ju, rep.kkt, it, rep.energy_history.size()};
            ++polished;
        } else if (it == opts.max_iterations) {
            rep.message = "iteration cap reached";
            break;
        }
        detail::StepResult step;
        if (opts.newton) {
            for (const auto& nd : direction.newton(m, u, g, opts.cone, opts.tol_active)) {
                auto trial = detail::armijo_step(m, opts, u, ju, g, nd.d, finish, nd.shifted);
                if (trial.accepted && (!step.accepted || trial.energy < step.energy)) step = std::move(trial);
            }
        }
        if (!step.accepted) step = detail::armijo_step(m, opts, u, ju, g, direction(u, g, opts.cone), finish);
        if (!step.accepted) {
            if (!rep.converged) rep.message = "line search failed";
            break;
        }
        u = std::move(step.point);
        ju = step.energy;
        rep.energy_history.push_back(ju);
        rep.max_hs_norm = std::max(rep.max_hs_norm, hs_norm(grad, u));
    }

    rep.energy = ju;
    if (std::isfinite(opts.ball_radius)) {
        const double r = hs_norm(grad, u);
        if (r >= opts.ball_radius * (1.0 - 1e-12)) {
            rep.boundary.radial_derivative = energy_gradient(m, u).pair(u);
            rep.boundary.condition = rep.boundary.radial_derivative <= 0.0 ? 'b' : 'c';
        }
    }
    const bool trivial = l2_norm(u) <= trivial_threshold;
    rep.solution = std::move(u);
    if (!rep.converged) {
        rep.classification = Classification::failed;
    } else {
        rep.classification = trivial ? Classification::trivial : Classification::local_min;
    }
    return rep;
}

struct RaySearch {
    std::optional<double> t_star;
    std::vector<std::pair<double, double>> curve;  // (t, J(t direction))
};

/// Samples J(t direction) on a log grid in [t_max * 1e-6, t_max]. t_star is the first sample
/// below `level` - margin that follows a sample above `level` (the far side of the barrier);
/// when no sample rises above `level` it is simply the first sample below it.
inline RaySearch ray_search(const EnergyModel& m, const Field& direction, double t_max, int steps, double level = 0.0,
                            double margin = 1e-12) {
    require_same_grid(m.grid(), direction.grid(), "ray_search");
    if (direction.values().isZero(0.0)) throw ArgumentError("ray_search: zero direction");
    if (direction.values().minCoeff() < 0.0) throw ArgumentError("ray_search: direction must be nonnegative");
    if (!(t_max > 0.0) || steps < 2) throw ArgumentError("ray_search: need t_max > 0 and at least 2 steps");
    RaySearch out;
    bool crossed = false;
    std::optional<double> first_below;
    for (int k = 0; k < steps; ++k) {
        const double t = t_max * std::pow(10.0, -6.0 * (steps - 1 - k) / (steps - 1));
        double j;
        try {
            j = energy(m, t * direction);
        } catch (const EvaluationError&) {
            break;
        }
        out.curve.emplace_back(t, j);
        if (j > level) crossed = true;
        if (j < level - margin) {
            if (!first_below) first_below = t;
            if (crossed && !out.t_star) out.t_star = t;
        }
    }
    if (!out.t_star && !crossed) out.t_star = first_below;
    return out;
}

namespace detail {

/// Newton iteration on the cone KKT system started from a path maximizer. The full Hessian is
/// indefinite there, so steps are safeguarded by the KKT residual rather than by the energy.
inline std::optional<Field> polish_critical_point(const EnergyModel& m, const SolverOptions& opts, const Field& u0,
                                                  int max_steps = 40) {
    Field u = u0;
    Field g = energy_gradient(m, u).representer;
    double res = kkt_residual(u, g, opts.tol_active);
    const auto n = static_cast<Eigen::Index>(u.size());
    for (int it = 0; it < max_steps && res > opts.tol_g; ++it) {
        const Eigen::MatrixXd hess = energy_hessian(m, u);
        std::vector<Eigen::Index> free;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!opts.cone || u.values()[i] > opts.tol_active || g.values()[i] < 0.0) free.push_back(i);
        }
        const auto k = static_cast<Eigen::Index>(free.size());
        Eigen::MatrixXd sub(k, k);
        Eigen::VectorXd rhs(k);
        for (Eigen::Index c = 0; c < k; ++c) {
            rhs[c] = -g.values()[free[static_cast<std::size_t>(c)]];
            for (Eigen::Index r = 0; r < k; ++r) sub(r, c) = hess(free[static_cast<std::size_t>(r)], free[static_cast<std::size_t>(c)]);
        }
        const Eigen::VectorXd df = sub.fullPivLu().solve(rhs);
        if (!df.allFinite()) return std::nullopt;
        Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
        for (Eigen::Index c = 0; c < k; ++c) d[free[static_cast<std::size_t>(c)]] = df[c];
        bool moved = false;
        for (double alpha = 1.0; alpha > 1e-4; alpha *= 0.5) {
            Field trial(u.grid_ptr(), u.values() + alpha * d);
            if (opts.cone) trial = project_cone(trial);
            Field gt;
            try {
                gt = energy_gradient(m, trial).representer;
            } catch (const EvaluationError&) {
                continue;
            }
            const double rt = kkt_residual(trial, gt, opts.tol_active);
            if (rt < (1.0 - 1e-4 * alpha) * res) {
                u = std::move(trial);
                g = std::move(gt);
                res = rt;
                moved = true;
                break;
            }
        }
        if (!moved) return std::nullopt;
    }
    if (res > opts.tol_g) return std::nullopt;
    return u;
}

}  // namespace detail

/// Choi-McKenna path deformation between u_low and u_far: the path maximizer is located on the
/// quadratic arc through its neighbours, moved by one projected descent step, and the path is
/// redistributed by H^s arclength every `respline_every` iterations.
inline SolveReport mountain_pass(const EnergyModel& m, const Field& u_low, const Field& u_far, const SolverOptions& opts,
                                 std::optional<double> sphere_radius = std::nullopt) {
    opts.validate();
    require_same_grid(m.grid(), u_low.grid(), "mountain_pass");
    require_same_grid(m.grid(), u_far.grid(), "mountain_pass");
    if (u_low.values().minCoeff() < 0.0 || u_far.values().minCoeff() < 0.0) {
        throw ArgumentError("mountain_pass: endpoints must be nonnegative");
    }
    const double j_low = energy(m, u_low), j_far = energy(m, u_far);
    if (!(j_far < j_low)) {
        throw GeometryError("mountain_pass: J(u_far) = " + std::to_string(j_far) + " is not below J(u_low) = " + std::to_string(j_low));
    }

    SolveReport rep;
    rep.ball_radius = opts.ball_radius;
    detail::ConeDirection direction(m, opts);
    const double w = m.grid().weight();
    const int P = opts.path_points;
    auto place = [&](const Field& v) { return opts.cone ? project_cone(v) : v; };

    std::vector<Field> path;
    std::vector<double> level;
    for (int k = 0; k < P; ++k) {
        const double tau = static_cast<double>(k) / (P - 1);
        path.push_back(place(Field(u_low.grid_ptr(), (1.0 - tau) * u_low.values() + tau * u_far.values())));
        level.push_back(energy(m, path.back()));
    }

    auto respline = [&] {
        std::vector<double> arc(static_cast<std::size_t>(P), 0.0);
        for (int k = 1; k < P; ++k) arc[k] = arc[k - 1] + direction.norm(path[k].values() - path[k - 1].values(), w);
        std::vector<Field> fresh{path.front()};
        int seg = 0;
        for (int k = 1; k + 1 < P; ++k) {
            const double target = arc.back() * k / (P - 1);
            while (seg + 1 < P - 1 && arc[seg + 1] < target) ++seg;
            const double len = arc[seg + 1] - arc[seg];
            const double f = len > 0.0 ? (target - arc[seg]) / len : 0.0;
            fresh.push_back(place(Field(u_low.grid_ptr(), (1.0 - f) * path[seg].values() + f * path[seg + 1].values())));
        }
        fresh.push_back(path.back());
        path = std::move(fresh);
        for (int k = 0; k < P; ++k) level[k] = energy(m, path[k]);
    };

    int peak = 1;
    for (int it = 0;; ++it) {
        peak = static_cast<int>(std::max_element(level.begin() + 1, level.end() - 1) - level.begin());

        // Relocate the peak to the maximum of J on the arc q(sigma) through its neighbours.
        const Eigen::VectorXd& a = path[peak - 1].values();
        const Eigen::VectorXd& b = path[peak].values();
        const Eigen::VectorXd& c = path[peak + 1].values();
        auto arc = [&](double sg) {
            return place(Field(u_low.grid_ptr(), b + 0.5 * sg * (c - a) + 0.5 * sg * sg * (c - 2.0 * b + a)));
        };
        const auto best = boost::math::tools::brent_find_minima([&](double sg) { return -energy(m, arc(sg)); }, -1.0, 1.0, 40);
        if (-best.second > level[peak]) {
            path[peak] = arc(best.first);
            level[peak] = -best.second;
        }

        rep.level = level[peak];
        rep.energy_history.push_back(rep.level);
        if (rep.level < std::max(j_low, j_far)) rep.barrier_respected = false;

        const Field& u = path[peak];
        const Field g = energy_gradient(m, u).representer;
        rep.kkt = opts.cone ? kkt_residual(u, g, opts.tol_active) : g.values().cwiseAbs().maxCoeff();
        rep.iterations = it;
        if (rep.kkt <= opts.tol_g) {
            rep.converged = true;
            break;
        }
        if (it == opts.max_iterations) {
            rep.message = "iteration cap reached";
            break;
        }
        if (opts.newton && rep.kkt <= opts.polish_below && it % opts.respline_every == 0) {
            if (auto polished = detail::polish_critical_point(m, opts, u)) {
                const double jp = energy(m, *polished);
                if (jp > std::max(j_low, j_far)) {
                    path[peak] = std::move(*polished);
                    level[peak] = jp;
                    rep.level = jp;
                    rep.kkt = kkt_residual(m, path[peak], opts.tol_active);
                    rep.converged = true;
                    rep.message = "polished by Newton";
                    break;
                }
            }
        }
        Eigen::VectorXd d = direction(u, g, opts.cone);
        const double len = direction.norm(d, w);
        if (len > opts.path_step_cap) d *= opts.path_step_cap / len;
        auto step = detail::armijo_step(m, opts, u, level[peak], g, d, [](Field v) { return v; });
        if (!step.accepted) {
            rep.message = "line search failed";
            break;
        }
        path[peak] = std::move(step.point);
        level[peak] = step.energy;
        if ((it + 1) % opts.respline_every == 0) respline();
    }

    rep.solution = path[peak];
    rep.energy = energy(m, rep.solution);
    rep.max_hs_norm = hs_norm(*m.grad, rep.solution);
    if (sphere_radius) {
        // Energy where the path crosses the sphere ||u|| = r: an upper witness for inf over the sphere.
        for (int k = 1; k < P; ++k) {
            const double r0 = hs_norm(*m.grad, path[k - 1]), r1 = hs_norm(*m.grad, path[k]);
            if ((r0 - *sphere_radius) * (r1 - *sphere_radius) <= 0.0 && r0 != r1) {
                const double f = (*sphere_radius - r0) / (r1 - r0);
                rep.sphere_level = energy(m, place(Field(u_low.grid_ptr(), (1.0 - f) * path[k - 1].values() + f * path[k].values())));
                break;
            }
        }
    }
    const bool trivial = l2_norm(rep.solution) <= trivial_threshold;
    const double floor = std::max(j_low, j_far);
    const bool above = rep.energy > floor + detail::energy_slack(rep.energy, floor);
    rep.classification = rep.converged && !trivial && above ? Classification::mountain_pass : Classification::failed;
    if (rep.converged && trivial) rep.message = "path collapsed onto the origin";
    if (rep.converged && !trivial && !above) rep.message = "critical point at the level of the endpoints: no barrier";
    return rep;
}

}  // namespace fracvar
