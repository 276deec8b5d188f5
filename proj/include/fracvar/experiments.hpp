#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <Eigen/Dense>

#include "fracvar/coeffs.hpp"
#include "fracvar/energy.hpp"
#include "fracvar/error.hpp"
#include "fracvar/fracops.hpp"
#include "fracvar/grid.hpp"
#include "fracvar/solvers.hpp"
#include "fracvar/spectral.hpp"

namespace fracvar {

struct FamilySpec {
    std::string family;
    std::map<std::string, double> params;
};

enum class ForcingKind { zero, phi1, custom };

/// h = 0, h = delta * phi1, or a user field (sampled by callback).
struct ForcingSpec {
    ForcingKind kind = ForcingKind::zero;
    double delta = 0.0;
    std::function<double(const Point&)> custom;
};

struct RegimeConfig {
    DomainSpec domain = DomainSpec::interval(0.0, 1.0, 128);
    double s = 0.5;
    QuadratureParams quadrature;
    FamilySpec coefficient{"paper", {{"A", 1.0}, {"B", 2.0}, {"p", 1.5}}};
    FamilySpec reaction{"saturating", {{"nu", 1.0}}};
    ForcingSpec forcing;
    SolverOptions solver;
    /// nu values (sublinear regime) or forcing scales delta (linear regime).
    std::vector<double> sweep;
    /// Threshold bracket; defaults to the two analytic extremes of the sublinear regime.
    std::optional<double> nu_low, nu_high;
    double threshold_rel_width = 1e-2;
    double ray_t_max = 1e4;
    int ray_steps = 200;
    /// Ball radius as a multiple of the coercivity estimate (sublinear runs).
    double ball_factor = 10.0;
    int threads = 1;

    void validate() const {
        domain.validate();
        require_order(s);
        quadrature.validate(Grid(domain));
        solver.validate();
        if (!(threshold_rel_width > 0.0 && threshold_rel_width < 1.0)) throw ArgumentError("threshold_rel_width must lie in (0,1)");
        if (!(ray_t_max > 0.0) || ray_steps < 2) throw ArgumentError("ray search needs t_max > 0 and at least 2 steps");
        if (!(ball_factor > 0.0)) throw ArgumentError("ball_factor must be positive");
        if (threads < 1) throw ArgumentError("threads must be positive");
        for (double v : sweep) {
            if (!std::isfinite(v)) throw ArgumentError("sweep values must be finite");
        }
    }
};

/// Operators and first eigenpair shared by every run of one configuration.
struct Problem {
    GridPtr grid;
    GradientPtr grad;
    std::shared_ptr<const NonlocalOperator> lap;
    EigenPair eig;
    CoefficientModel coeff;
};

inline Problem build_problem(const RegimeConfig& cfg) {
    Problem p;
    p.grid = build_grid(cfg.domain);
    p.grad = std::make_shared<const NonlocalOperator>(assemble_gradient(p.grid, cfg.s, cfg.quadrature));
    p.lap = std::make_shared<const NonlocalOperator>(assemble_laplacian(p.grid, cfg.s, cfg.quadrature));
    p.eig = first_eigenpair(*p.lap);
    p.coeff = make_coefficient(cfg.coefficient.family, cfg.coefficient.params);
    return p;
}

inline Field forcing_field(const Problem& p, const ForcingSpec& f) {
    switch (f.kind) {
        case ForcingKind::zero: return Field(p.grid);
        case ForcingKind::phi1: return f.delta * p.eig.phi;
        default:
            if (!f.custom) throw ArgumentError("custom forcing needs a callback");
            return field_from_function(p.grid, f.custom);
    }
}

/// project_cone((-Delta)^{-s} h), or 0.1 phi1 when h = 0.
inline Field initial_guess(const Problem& p, const Field& h) {
    if (h.values().isZero(0.0)) return 0.1 * p.eig.phi;
    return project_cone(Field(p.grid, p.lap->table().llt().solve(h.values())));
}

struct RegimeEntry {
    double sweep_value = 0.0;
    HypothesisReport audit;
    bool audit_ok = false;
    double ball_radius = std::numeric_limits<double>::infinity();
    double coercive_radius = 0.0;
    BallCondition ball;
    SolveReport first;
    std::optional<SolveReport> second;
    bool energy_negative = false;
    bool bounded = true;  // sup of iterate norms within the ball radius
    bool geometry_ok = true;
    std::optional<double> ray_t;
    double distance = 0.0;
    bool distinct = false;
    bool two_solutions = false;
    std::string note;
};

struct ThresholdProbe {
    double nu = 0.0;
    Classification classification = Classification::failed;
};

struct ThresholdResult {
    double nu_star = 0.0;
    double low = 0.0, high = 0.0;
    std::vector<ThresholdProbe> probes;
    bool monotone = true;
};

struct RegimeReport {
    double lambda1 = 0.0;
    std::vector<RegimeEntry> entries;
    std::optional<ThresholdResult> threshold;
    std::optional<double> smallness_bound;
};

namespace detail {

/// Runs job(i) for i < count on up to `threads` workers; results are indexed, so order is deterministic.
inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& job) {
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    job(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

inline bool audit_passes(const HypothesisReport& rep, std::initializer_list<const char*> names) {
    for (const char* n : names) {
        const auto v = rep.at(n).verdict;
        if (v == Verdict::violated || v == Verdict::inconclusive) return false;
    }
    return true;
}

inline ReactionModel reaction_with_nu(const FamilySpec& spec, double nu) {
    auto params = spec.params;
    params["nu"] = nu;
    return make_reaction(spec.family, params);
}

/// 2 (nu |Omega|^{1/2} + ||h||) / (gamma_min lambda1^{1/2}): outside this H^s_0 ball J is positive.
inline double coercive_radius(const Problem& p, const ReactionModel& r, const Field& h) {
    return 2.0 * (r.nu * r.g_bound * std::sqrt(p.grid->measure()) + l2_norm(h)) / (p.coeff.gamma_min * std::sqrt(p.eig.lambda));
}

inline RegimeEntry sublinear_run(const Problem& p, const RegimeConfig& cfg, const ReactionModel& reaction, double sweep_value) {
    RegimeEntry e;
    e.sweep_value = sweep_value;
    e.audit = check_hypotheses(p.coeff, reaction, p.eig.lambda, p.grid->dimension(), cfg.s);
    e.audit_ok = audit_passes(e.audit, {"gamma1", "gamma2", "g1", "g2", "g3"});
    const Field h = forcing_field(p, cfg.forcing);
    e.coercive_radius = coercive_radius(p, reaction, h);
    SolverOptions opts = cfg.solver;
    if (!std::isfinite(opts.ball_radius)) opts.ball_radius = cfg.ball_factor * e.coercive_radius;
    e.ball_radius = opts.ball_radius;
    e.ball = check_ball_condition(opts.ball_radius, reaction, l2_norm(h));
    const EnergyModel m = make_energy_model(p.grad, p.coeff, reaction, h);
    e.first = minimize_cone(m, opts, initial_guess(p, h));
    e.energy_negative = e.first.energy < 0.0;
    e.bounded = e.first.max_hs_norm <= opts.ball_radius * (1.0 + 1e-12);
    if (!e.audit_ok) e.note = "hypothesis audit failed; no existence conclusion claimed";
    return e;
}

}  // namespace detail

/// Cone minimization for every nu in the sweep (saturating-type reaction).
inline RegimeReport run_sublinear_regime(const RegimeConfig& cfg, const Problem& p) {
    cfg.validate();
    if (cfg.sweep.empty()) throw ArgumentError("run_sublinear_regime: empty nu sweep");
    RegimeReport rep;
    rep.lambda1 = p.eig.lambda;
    rep.entries.resize(cfg.sweep.size());
    detail::parallel_for(cfg.sweep.size(), cfg.threads, [&](std::size_t i) {
        const ReactionModel r = detail::reaction_with_nu(cfg.reaction, cfg.sweep[i]);
        if (!r.is_sublinear()) throw ArgumentError("run_sublinear_regime: reaction is not sublinear");
        rep.entries[i] = detail::sublinear_run(p, cfg, r, cfg.sweep[i]);
    });
    return rep;
}

inline RegimeReport run_sublinear_regime(const RegimeConfig& cfg) { return run_sublinear_regime(cfg, build_problem(cfg)); }

/// Geometric bisection on nu between a trivial and a nontrivial outcome of minimize_cone.
inline ThresholdResult find_nu_threshold(const RegimeConfig& cfg, const Problem& p) {
    cfg.validate();
    const ReactionModel probe_family = detail::reaction_with_nu(cfg.reaction, 1.0);
    if (!probe_family.is_sublinear()) throw ArgumentError("find_nu_threshold: reaction is not sublinear");
    const double c_g = check_hypotheses(p.coeff, probe_family, p.eig.lambda).at("g3").witness;
    double lo = cfg.nu_low.value_or(0.01 * p.coeff.gamma_min * p.eig.lambda / c_g);
    double hi = cfg.nu_high.value_or(50.0 * p.coeff.gamma_max * p.eig.lambda);
    if (!(lo > 0.0 && hi > lo)) throw ArgumentError("find_nu_threshold: need 0 < nu_low < nu_high");

    ThresholdResult out;
    auto classify = [&](double nu) {
        const auto e = detail::sublinear_run(p, cfg, detail::reaction_with_nu(cfg.reaction, nu), nu);
        if (!e.first.converged) {
            throw ConvergenceError("find_nu_threshold: solve at nu = " + std::to_string(nu) + " did not converge");
        }
        out.probes.push_back({nu, e.first.classification});
        return e.first.classification == Classification::trivial;
    };
    if (!classify(lo)) throw Error("find_nu_threshold: no bracket, nu_low = " + std::to_string(lo) + " is nontrivial");
    if (classify(hi)) throw Error("find_nu_threshold: no bracket, nu_high = " + std::to_string(hi) + " is trivial");
    while ((hi - lo) / hi > cfg.threshold_rel_width) {
        const double mid = std::sqrt(lo * hi);
        (classify(mid) ? lo : hi) = mid;
    }
    out.low = lo;
    out.high = hi;
    out.nu_star = 0.5 * (lo + hi);
    double max_trivial = 0.0, min_nontrivial = std::numeric_limits<double>::infinity();
    for (const auto& pr : out.probes) {
        if (pr.classification == Classification::trivial) {
            max_trivial = std::max(max_trivial, pr.nu);
        } else {
            min_nontrivial = std::min(min_nontrivial, pr.nu);
        }
    }
    out.monotone = max_trivial < min_nontrivial;
    return out;
}

inline ThresholdResult find_nu_threshold(const RegimeConfig& cfg) { return find_nu_threshold(cfg, build_problem(cfg)); }

/// Two-solution pipeline per forcing scale delta (h = delta phi1): local minimizer, ray search
/// along phi1, mountain pass, distinctness.
inline RegimeReport run_linear_regime(const RegimeConfig& cfg, const Problem& p) {
    cfg.validate();
    const std::vector<double> deltas = cfg.sweep.empty() ? std::vector<double>{cfg.forcing.delta} : cfg.sweep;
    const ReactionModel reaction = make_reaction(cfg.reaction.family, cfg.reaction.params);
    if (reaction.is_sublinear()) throw ArgumentError("run_linear_regime: reaction is not of linear growth");
    RegimeReport rep;
    rep.lambda1 = p.eig.lambda;
    rep.entries.resize(deltas.size());
    detail::parallel_for(deltas.size(), cfg.threads, [&](std::size_t i) {
        RegimeEntry& e = rep.entries[i];
        e.sweep_value = deltas[i];
        if (deltas[i] < 0.0) throw ArgumentError("run_linear_regime: forcing scale must be nonnegative");
        e.audit = check_hypotheses(p.coeff, reaction, p.eig.lambda, p.grid->dimension(), cfg.s);
        e.audit_ok = detail::audit_passes(e.audit, {"gamma1", "gamma2", "f1", "f3", "f4"});
        const Field h = deltas[i] * p.eig.phi;
        const EnergyModel m = make_energy_model(p.grad, p.coeff, reaction, h);
        e.ball_radius = cfg.solver.ball_radius;

        e.first = minimize_cone(m, cfg.solver, initial_guess(p, h));
        e.energy_negative = e.first.energy < 0.0;
        if (!e.first.converged) {
            e.note = "local minimization failed: " + e.first.message;
            return;
        }
        const auto ray = ray_search(m, p.eig.phi, cfg.ray_t_max, cfg.ray_steps, e.first.energy);
        e.ray_t = ray.t_star;
        if (!ray.t_star) {
            e.geometry_ok = false;
            e.note = "no energy drop along phi1 up to t_max; no second solution claimed";
            return;
        }
        try {
            e.second = mountain_pass(m, e.first.solution, *ray.t_star * p.eig.phi, cfg.solver);
        } catch (const GeometryError& err) {
            e.geometry_ok = false;
            e.note = err.what();
            return;
        }
        const double n1 = hs_norm(*p.grad, e.first.solution), n2 = hs_norm(*p.grad, e.second->solution);
        e.distance = hs_norm(*p.grad, e.second->solution - e.first.solution);
        e.distinct = e.distance >= 0.1 * std::max({n1, n2, 0.1});
        e.two_solutions = e.audit_ok && e.second->converged && e.distinct && e.second->energy > 0.0 && e.first.energy <= 0.0;
        if (!e.audit_ok) e.note = "hypothesis audit failed; no existence conclusion claimed";
    });
    for (const auto& e : rep.entries) {
        if (e.two_solutions && e.sweep_value > 0.0) rep.smallness_bound = std::max(rep.smallness_bound.value_or(0.0), e.sweep_value);
    }
    return rep;
}

inline RegimeReport run_linear_regime(const RegimeConfig& cfg) { return run_linear_regime(cfg, build_problem(cfg)); }

// ---------------------------------------------------------------------------------------------
// Identity suite

struct CheckResult {
    std::string name;
    double value = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

struct VerificationReport {
    std::vector<CheckResult> checks;

    bool all_passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
    }
    const CheckResult& at(const std::string& name) const {
        for (const auto& c : checks) {
            if (c.name == name) return c;
        }
        throw ArgumentError("no check named '" + name + "'");
    }
};

struct VerifyConfig {
    DomainSpec domain = DomainSpec::interval(0.0, 1.0, 256);
    std::vector<double> s_values{0.3, 0.5, 0.7};
    int refinements = 3;  // composition residual at n, n/2, ..., n/2^(refinements-1)
    QuadratureParams quadrature;
    FamilySpec coefficient{"paper", {{"A", 1.0}, {"B", 2.0}, {"p", 1.5}}};
    bool sign_example = true;
    bool energy_suite = true;
    std::uint64_t seed = 12345;
    double duality_tol = 1e-12;
    double divergence_tol = 0.02;
    double composition_tol = 0.05;
    int threads = 1;

    void validate() const {
        domain.validate();
        if (s_values.empty()) throw ArgumentError("verify: s_values must be nonempty");
        for (double s : s_values) require_order(s);
        if (refinements < 1) throw ArgumentError("verify: refinements must be positive");
        for (int k = 0; k < domain.dimension; ++k) {
            if (domain.nodes[k] % (1 << (refinements - 1)) != 0 || (domain.nodes[k] >> (refinements - 1)) < 4) {
                throw ArgumentError("verify: node count cannot be halved " + std::to_string(refinements - 1) + " times");
            }
        }
    }
};

/// exp(-40 |x - c|^2 / L^2) with c the centre of Omega and L its first side length.
inline double bump_value(const DomainSpec& d, const Point& p) {
    const double L = d.upper[0] - d.lower[0];
    double r2 = 0.0;
    for (int k = 0; k < d.dimension; ++k) r2 += std::pow(p[k] - 0.5 * (d.lower[k] + d.upper[k]), 2);
    return std::exp(-40.0 * r2 / (L * L));
}

inline Field smooth_bump(const GridPtr& grid) {
    const DomainSpec d = grid->spec();
    return field_from_function(grid, [d](const Point& p) { return bump_value(d, p); });
}

/// |<u, div phi> + <phi, grad u>| / |<phi, grad u>|.
inline double duality_defect(const NonlocalOperator& grad, const Field& u, const VectorField& phi) {
    const double right = l2_inner(phi, apply_gradient(grad, u));
    const double left = l2_inner(u, apply_divergence(grad, phi));
    return std::abs(left + right) / std::max(std::abs(right), 1e-300);
}

namespace detail {

/// mu int_a^b k(y) dy for an integrand singular (integrably) at the listed breakpoints.
inline double integrate_pieces(const std::function<double(double)>& k, std::vector<double> breaks) {
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
    boost::math::quadrature::tanh_sinh<double> ts;
    double acc = 0.0;
    auto f = [&k](double y) { return k(y); };
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) acc += ts.integrate(f, breaks[i], breaks[i + 1]);
    return acc;
}

/// mu int_R (y - x)(phi(y) - phi(x)) / |y - x|^{2+s} dy in 1D: the divergence of a smooth,
/// rapidly decaying phi, by adaptive quadrature with mapped infinite tails.
inline double divergence_by_quadrature(const std::function<double(double)>& phi, double x, double s, double reach) {
    auto k = [&](double y) {
        const double z = y - x;
        if (z == 0.0) return 0.0;
        return (phi(y) - phi(x)) / z * std::pow(std::abs(z), -s);
    };
    double acc = integrate_pieces(k, {x - reach, x - 0.25 * reach, x, x + 0.25 * reach, x + reach});
    using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
    acc += GK::integrate([&](double t) { return k(x + reach + t / (1.0 - t)) / ((1.0 - t) * (1.0 - t)); }, 0.0, 1.0, 10, 1e-12);
    acc += GK::integrate([&](double t) { return k(x - reach - t / (1.0 - t)) / ((1.0 - t) * (1.0 - t)); }, 0.0, 1.0, 10, 1e-12);
    return normalizing_constants(1, s).mu * acc;
}

}  // namespace detail

/// mu int_a^b (u(x) - u(y)) (x - y) / |x - y|^{2+s} dy: the 1D fractional gradient of u
/// restricted to the segment (a, b), by direct quadrature with breakpoints at x and `kinks`.
inline double signed_gradient_1d(const std::function<double(double)>& u, double x, double a, double b, double s,
                                 const std::vector<double>& kinks = {}) {
    if (!(a < x && x < b)) throw ArgumentError("signed_gradient_1d: x must lie inside (a, b)");
    require_order(s);
    std::vector<double> breaks{a, x, b};
    for (double k : kinks) {
        if (k > a && k < b) breaks.push_back(k);
    }
    const double ux = u(x);
    const double acc = detail::integrate_pieces(
        [&](double y) {
            const double z = x - y;
            if (z == 0.0) return 0.0;
            return (ux - u(y)) / z * std::pow(std::abs(z), -s);
        },
        breaks);
    return normalizing_constants(1, s).mu * acc;
}

struct SignExample {
    std::vector<double> x;
    std::vector<double> grad_plus, grad_minus;
    double pairing = 0.0;
    bool plus_positive = false, minus_negative = false;
};

/// grad^s of u+ = max(x, 0) and u- = max(-x, 0) on (-L/2, L/2), sampled on the middle half.
inline SignExample sign_example(double s = 0.5, double width = 32.0, int samples = 64) {
    if (!(width > 0.0) || samples < 2) throw ArgumentError("sign_example: need width > 0 and at least 2 samples");
    const double a = -0.5 * width, b = 0.5 * width;
    SignExample out;
    out.plus_positive = out.minus_negative = true;
    const double step = 0.5 * width / samples;
    for (int i = 0; i < samples; ++i) {
        const double x = -0.25 * width + (i + 0.5) * step;
        const double gp = signed_gradient_1d([](double y) { return std::max(y, 0.0); }, x, a, b, s, {0.0});
        const double gm = signed_gradient_1d([](double y) { return std::max(-y, 0.0); }, x, a, b, s, {0.0});
        out.x.push_back(x);
        out.grad_plus.push_back(gp);
        out.grad_minus.push_back(gm);
        out.plus_positive = out.plus_positive && gp > 0.0;
        out.minus_negative = out.minus_negative && gm < 0.0;
        out.pairing += step * gp * gm;
    }
    return out;
}

struct EnergySuite {
    double fd_max_rel = 0.0;
    double convexity_min = 0.0;
    double monotonicity_min = 0.0;
};

/// J' against central differences (20 pairs), convexity gaps (100 pairs) and monotonicity of
/// z -> gamma(|z|^2/2) z (1000 vector pairs), all on seeded random data.
inline EnergySuite energy_suite(const GradientPtr& grad, const CoefficientModel& coeff, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0), sym(-1.0, 1.0);
    const GridPtr& grid = grad->grid_ptr();
    const auto n = static_cast<Eigen::Index>(grid->size());
    auto random_field = [&](double scale) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * unit(rng);
        return Field(grid, std::move(v));
    };
    const EnergyModel m = make_energy_model(grad, coeff, make_cubic_saturating_reaction(1.0), random_field(1.0));

    EnergySuite out;
    for (int k = 0; k < 20; ++k) {
        const Field u = random_field(2.0), phi = random_field(1.0);
        const double analytic = energy_gradient(m, u).pair(phi);
        // Richardson-extrapolated central difference.
        auto central = [&](double eps) { return (energy(m, u + eps * phi) - energy(m, u - eps * phi)) / (2.0 * eps); };
        const double eps = 1e-3;
        const double fd = (4.0 * central(0.5 * eps) - central(eps)) / 3.0;
        out.fd_max_rel = std::max(out.fd_max_rel, std::abs(analytic - fd) / std::max(std::abs(analytic), 1e-300));
    }
    out.convexity_min = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 100; ++k) {
        const Field u1 = random_field(3.0);
        const Field u2 = u1 + random_field(3.0 * std::pow(10.0, -4.0 * unit(rng)));
        out.convexity_min = std::min(out.convexity_min, convexity_gap(m, u1, u2));
    }
    out.monotonicity_min = std::numeric_limits<double>::infinity();
    const int d = grid->dimension();
    for (int k = 0; k < 1000; ++k) {
        Eigen::VectorXd z1(d), z2(d);
        const double scale = std::pow(10.0, 4.0 * unit(rng) - 2.0);
        for (int a = 0; a < d; ++a) {
            z1[a] = scale * sym(rng);
            z2[a] = scale * sym(rng);
        }
        out.monotonicity_min = std::min(out.monotonicity_min, monotonicity_pairing(coeff, z1, z2));
    }
    return out;
}

/// Duality, independent divergence quadrature (1D), composition residual under refinement, the
/// sign example and the energy calculus checks.
inline VerificationReport verify_identities(const VerifyConfig& cfg) {
    cfg.validate();
    VerificationReport rep;
    const int d = cfg.domain.dimension;
    std::vector<std::vector<CheckResult>> per_s(cfg.s_values.size());
    detail::parallel_for(cfg.s_values.size(), cfg.threads, [&](std::size_t k) {
        const double s = cfg.s_values[k];
        auto& out = per_s[k];
        std::ostringstream tag_stream;
        tag_stream << "s=" << s;
        const std::string tag = tag_stream.str();
        std::vector<double> residuals;
        for (int level = cfg.refinements - 1; level >= 0; --level) {
            DomainSpec spec = cfg.domain;
            for (int a = 0; a < d; ++a) spec.nodes[a] >>= level;
            const GridPtr grid = build_grid(spec);
            const NonlocalOperator grad = assemble_gradient(grid, s, cfg.quadrature);
            const NonlocalOperator lap = assemble_laplacian(grid, s, cfg.quadrature);
            residuals.push_back(composition_residual(grad, lap, smooth_bump(grid)));
            if (level != 0) continue;

            const Field u = smooth_bump(grid);
            const DualLattice& lat = grad.lattice();
            const double L = spec.upper[0] - spec.lower[0];
            // phi_a = (x_a - c_a) / L * bump
            auto phi_at = [&](const Point& p, int a) { return (p[a] - 0.5 * (spec.lower[a] + spec.upper[a])) / L * bump_value(spec, p); };
            Eigen::MatrixXd ph(static_cast<Eigen::Index>(lat.size()), d);
            for (std::size_t e = 0; e < lat.size(); ++e) {
                for (int a = 0; a < d; ++a) ph(static_cast<Eigen::Index>(e), a) = phi_at(lat.point(e), a);
            }
            const VectorField phi(grad.lattice_ptr(), ph);
            const double defect = duality_defect(grad, u, phi);
            out.push_back({"duality " + tag, defect, cfg.duality_tol, defect <= cfg.duality_tol});

            if (d == 1) {
                const Field div = apply_divergence(grad, phi);
                double num = 0.0, den = 0.0;
                for (std::size_t i = 0; i < grid->size(); ++i) {
                    const double ref =
                        detail::divergence_by_quadrature([&](double x) { return phi_at(Point{x, 0.0}, 0); }, grid->node(i)[0], s, 3.0 * L);
                    num += std::pow(div[i] - ref, 2);
                    den += ref * ref;
                }
                const double rel = std::sqrt(num / den);
                out.push_back({"divergence quadrature " + tag, rel, cfg.divergence_tol, rel <= cfg.divergence_tol});
            }
        }
        const double last = residuals.back();
        out.push_back({"composition " + tag, last, cfg.composition_tol, last <= cfg.composition_tol});
        bool decreasing = true;
        for (std::size_t i = 1; i < residuals.size(); ++i) decreasing = decreasing && residuals[i] < residuals[i - 1];
        out.push_back({"composition decreasing " + tag, residuals.size() > 1 ? residuals[residuals.size() - 2] - last : 0.0, 0.0,
                       decreasing});
    });
    for (auto& v : per_s) rep.checks.insert(rep.checks.end(), v.begin(), v.end());

    if (cfg.sign_example) {
        const SignExample ex = sign_example();
        rep.checks.push_back({"sign grad u+ > 0", *std::min_element(ex.grad_plus.begin(), ex.grad_plus.end()), 0.0, ex.plus_positive});
        rep.checks.push_back({"sign grad u- < 0", *std::max_element(ex.grad_minus.begin(), ex.grad_minus.end()), 0.0, ex.minus_negative});
        rep.checks.push_back({"sign pairing < 0", ex.pairing, 0.0, ex.pairing < 0.0});
    }
    if (cfg.energy_suite) {
        DomainSpec spec = cfg.domain;
        for (int a = 0; a < d; ++a) spec.nodes[a] = std::min(spec.nodes[a], d == 1 ? 64 : 16);
        const GradientPtr grad = std::make_shared<const NonlocalOperator>(assemble_gradient(build_grid(spec), 0.5, cfg.quadrature));
        const EnergySuite es = energy_suite(grad, make_coefficient(cfg.coefficient.family, cfg.coefficient.params), cfg.seed);
        rep.checks.push_back({"energy derivative vs differences", es.fd_max_rel, 1e-5, es.fd_max_rel <= 1e-5});
        rep.checks.push_back({"convexity gap", es.convexity_min, -1e-10, es.convexity_min >= -1e-10});
        rep.checks.push_back({"monotonicity", es.monotonicity_min, -1e-12, es.monotonicity_min >= -1e-12});
    }
    return rep;
}

// ---------------------------------------------------------------------------------------------
// Weighted-form convergence

struct AppendixConfig {
    DomainSpec domain = DomainSpec::interval(0.0, 1.0, 128);
    double s = 0.5;
    QuadratureParams quadrature;
    FamilySpec coefficient{"paper", {{"A", 1.0}, {"B", 2.0}, {"p", 1.5}}};
    double amplitude = 64.0;  // v = amplitude * bump, w = bump
    int levels = 12;           // t_n = 2^{-n}, n = 0..levels

    void validate() const {
        domain.validate();
        require_order(s);
        if (!(amplitude > 0.0) || !std::isfinite(amplitude)) throw ArgumentError("appendix amplitude must be positive");
        if (levels < 1) throw ArgumentError("appendix levels must be positive");
    }
};

struct ConvergenceReport {
    std::vector<double> t;
    std::vector<double> form;
    std::vector<double> error;  // relative to gamma(inf) <grad v, grad w>
    double limit = 0.0;
    bool nonincreasing_from_2 = true;
};

inline ConvergenceReport appendix_convergence(const AppendixConfig& cfg) {
    cfg.validate();
    const GridPtr grid = build_grid(cfg.domain);
    const GradientPtr grad = std::make_shared<const NonlocalOperator>(assemble_gradient(grid, cfg.s, cfg.quadrature));
    const CoefficientModel coeff = make_coefficient(cfg.coefficient.family, cfg.coefficient.params);
    const EnergyModel m = make_energy_model(grad, coeff, make_linear_reaction(0.0), Field(grid));
    const Field w = smooth_bump(grid);
    const Field v = cfg.amplitude * w;
    ConvergenceReport out;
    const VectorField gv = apply_gradient(*grad, v), gw = apply_gradient(*grad, w);
    out.limit = coeff.gamma_inf * l2_inner(gv, gw);
    for (int n = 0; n <= cfg.levels; ++n) {
        const double t = std::ldexp(1.0, -n);
        const double f = weighted_form(m, t, v, v, w);
        out.t.push_back(t);
        out.form.push_back(f);
        out.error.push_back(std::abs(f - out.limit) / std::abs(out.limit));
        if (n >= 3 && out.error[static_cast<std::size_t>(n)] > out.error[static_cast<std::size_t>(n - 1)]) out.nonincreasing_from_2 = false;
    }
    return out;
}

}  // namespace fracvar
