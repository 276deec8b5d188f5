#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "fracvar/error.hpp"

namespace fracvar {

namespace detail {

inline constexpr double overflow_limit = 1e150;

inline void require_evaluable(double t, const char* what) {
    if (!std::isfinite(t) || std::abs(t) > overflow_limit) {
        throw EvaluationError(std::string(what) + ": argument out of range (" + std::to_string(t) + ")");
    }
}

inline double param(const std::map<std::string, double>& params, const std::string& key) {
    const auto it = params.find(key);
    if (it == params.end()) throw ArgumentError("missing parameter '" + key + "'");
    return it->second;
}

inline void require_known(const std::map<std::string, double>& params, std::initializer_list<const char*> keys,
                          const std::string& family) {
    for (const auto& [k, v] : params) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char* x) { return k == x; })) {
            throw ArgumentError("unknown parameter '" + k + "' for family '" + family + "'");
        }
        if (!std::isfinite(v)) throw ArgumentError("parameter '" + k + "' must be finite");
    }
}

}  // namespace detail

enum class CoefficientFamily { paper, constant };

inline const char* to_string(CoefficientFamily f) { return f == CoefficientFamily::paper ? "paper" : "constant"; }

/// gamma and its primitive Gamma.
/// paper:    Gamma(t) = A t + B[(1+t)^{p/2} - 1],  gamma(t) = A + (B p / 2)(1+t)^{p/2-1}
/// constant: Gamma(t) = c t,                       gamma(t) = c
struct CoefficientModel {
    CoefficientFamily family = CoefficientFamily::constant;
    double A = 0.0, B = 0.0, p = 1.5, c = 1.0;
    double gamma_min = 1.0, gamma_max = 1.0, gamma_inf = 1.0;
    bool analytic_bounds = true;

    double gamma(double t) const {
        detail::require_evaluable(t, "gamma");
        if (family == CoefficientFamily::constant) return c;
        return A + 0.5 * B * p * std::pow(1.0 + std::max(t, 0.0), 0.5 * p - 1.0);
    }

    double gamma_prime(double t) const {
        detail::require_evaluable(t, "gamma_prime");
        if (family == CoefficientFamily::constant) return 0.0;
        return 0.5 * B * p * (0.5 * p - 1.0) * std::pow(1.0 + std::max(t, 0.0), 0.5 * p - 2.0);
    }

    double Gamma(double t) const {
        detail::require_evaluable(t, "Gamma");
        if (family == CoefficientFamily::constant) return c * t;
        // expm1 keeps B[(1+t)^{p/2}-1] accurate for small t.
        return A * t + B * std::expm1(0.5 * p * std::log1p(std::max(t, 0.0)));
    }

    bool is_constant() const { return family == CoefficientFamily::constant; }
};

inline CoefficientModel make_paper_coefficient(double A, double B, double p) {
    if (!(A > 0.0) || !(B > 0.0)) throw ArgumentError("paper coefficient needs A > 0 and B > 0");
    if (!(p > 1.0 && p < 2.0)) throw ArgumentError("paper coefficient needs 1 < p < 2");
    CoefficientModel m;
    m.family = CoefficientFamily::paper;
    m.A = A;
    m.B = B;
    m.p = p;
    m.gamma_min = A;
    m.gamma_max = A + 0.5 * B * p;
    m.gamma_inf = A;
    return m;
}

inline CoefficientModel make_constant_coefficient(double c) {
    if (!(c > 0.0) || !std::isfinite(c)) throw ArgumentError("constant coefficient needs c > 0");
    CoefficientModel m;
    m.family = CoefficientFamily::constant;
    m.c = c;
    m.gamma_min = m.gamma_max = m.gamma_inf = c;
    return m;
}

/// Family "paper" with A, B, p or "constant" with c.
inline CoefficientModel make_coefficient(const std::string& family, const std::map<std::string, double>& params) {
    if (family == "paper") {
        detail::require_known(params, {"A", "B", "p"}, family);
        return make_paper_coefficient(detail::param(params, "A"), detail::param(params, "B"), detail::param(params, "p"));
    }
    if (family == "constant") {
        detail::require_known(params, {"c"}, family);
        return make_constant_coefficient(detail::param(params, "c"));
    }
    throw ArgumentError("unknown coefficient family '" + family + "'");
}

enum class ReactionFamily { saturating, cubic_saturating, linear };
enum class GrowthClass { sublinear, linear };

inline const char* to_string(ReactionFamily f) {
    switch (f) {
        case ReactionFamily::saturating: return "saturating";
        case ReactionFamily::cubic_saturating: return "cubic_saturating";
        default: return "linear";
    }
}

/// f and its primitive F.
/// saturating (sublinear): f = nu g, g(t) = c t / (1 + |t|), G(t) = c (|t| - ln(1 + |t|)), c = g_scale
/// cubic_saturating:       f(t) = kappa t^3 / (1 + t^2), F(t) = kappa (t^2 - ln(1 + t^2)) / 2
/// linear:                 f(t) = kappa t,               F(t) = kappa t^2 / 2
///
/// `bound_C`, `onset` give f(t) <= C t for t > onset; `slope_inf` is lim f(t)/t,
/// `slope_zero` is lim_{t->0} f(t)/t, `g_bound` the constant of |g(t)| <= C_g |t|.
struct ReactionModel {
    ReactionFamily family = ReactionFamily::linear;
    GrowthClass growth = GrowthClass::linear;
    double nu = 1.0;
    double kappa = 0.0;
    double bound_C = 0.0;
    double onset = 1.0;
    double slope_inf = 0.0;
    double slope_zero = 0.0;
    double g_bound = 0.0;
    double g_scale = 1.0;

    double g(double t) const {
        detail::require_evaluable(t, "g");
        return g_scale * t / (1.0 + std::abs(t));
    }

    double G(double t) const {
        detail::require_evaluable(t, "G");
        const double a = std::abs(t);
        return g_scale * (a - std::log1p(a));
    }

    double f(double t) const {
        detail::require_evaluable(t, "f");
        switch (family) {
            case ReactionFamily::saturating: return nu * g(t);
            case ReactionFamily::cubic_saturating: return kappa * t * t * t / (1.0 + t * t);
            default: return kappa * t;
        }
    }

    double f_prime(double t) const {
        detail::require_evaluable(t, "f_prime");
        switch (family) {
            case ReactionFamily::saturating: {
                const double q = 1.0 + std::abs(t);
                return nu * g_scale / (q * q);
            }
            case ReactionFamily::cubic_saturating: {
                const double t2 = t * t, q = 1.0 + t2;
                return kappa * t2 * (3.0 + t2) / (q * q);
            }
            default: return kappa;
        }
    }

    double F(double t) const {
        detail::require_evaluable(t, "F");
        switch (family) {
            case ReactionFamily::saturating: return nu * G(t);
            case ReactionFamily::cubic_saturating: {
                const double t2 = t * t;
                // t^2 - ln(1+t^2) loses everything to cancellation for small t.
                if (t2 < 1e-4) return 0.5 * kappa * t2 * t2 * (0.5 - t2 / 3.0 + t2 * t2 / 4.0);
                return 0.5 * kappa * (t2 - std::log1p(t2));
            }
            default: return 0.5 * kappa * t * t;
        }
    }

    bool is_sublinear() const { return growth == GrowthClass::sublinear; }
};

inline ReactionModel make_saturating_reaction(double nu, double g_scale = 1.0) {
    if (!(g_scale > 0.0) || !std::isfinite(g_scale)) throw ArgumentError("saturating reaction needs g_scale > 0");
    if (!(nu > 0.0) || !std::isfinite(nu)) throw ArgumentError("saturating reaction needs nu > 0");
    ReactionModel r;
    r.family = ReactionFamily::saturating;
    r.growth = GrowthClass::sublinear;
    r.nu = nu;
    r.g_scale = g_scale;
    // c nu t / (1 + t) <= t / 2 once t >= 2 c nu - 1.
    r.bound_C = 0.5;
    r.onset = std::max(1.0, 2.0 * g_scale * nu - 1.0);
    r.slope_inf = 0.0;
    r.slope_zero = g_scale * nu;
    r.g_bound = g_scale;
    return r;
}

inline ReactionModel make_cubic_saturating_reaction(double kappa) {
    if (!(kappa > 0.0) || !std::isfinite(kappa)) throw ArgumentError("cubic_saturating reaction needs kappa > 0");
    ReactionModel r;
    r.family = ReactionFamily::cubic_saturating;
    r.growth = GrowthClass::linear;
    r.kappa = kappa;
    r.bound_C = kappa;
    r.onset = 1.0;
    r.slope_inf = kappa;
    r.slope_zero = 0.0;
    return r;
}

inline ReactionModel make_linear_reaction(double kappa) {
    if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw ArgumentError("linear reaction needs kappa >= 0");
    ReactionModel r;
    r.family = ReactionFamily::linear;
    r.growth = GrowthClass::linear;
    r.kappa = kappa;
    r.bound_C = kappa;
    r.onset = 1.0;
    r.slope_inf = kappa;
    r.slope_zero = kappa;
    return r;
}

/// Family "saturating" with nu, "cubic_saturating" or "linear" with kappa.
inline ReactionModel make_reaction(const std::string& family, const std::map<std::string, double>& params) {
    if (family == "saturating") {
        detail::require_known(params, {"nu", "g_scale"}, family);
        return make_saturating_reaction(detail::param(params, "nu"), params.count("g_scale") ? params.at("g_scale") : 1.0);
    }
    if (family == "cubic_saturating") {
        detail::require_known(params, {"kappa"}, family);
        return make_cubic_saturating_reaction(detail::param(params, "kappa"));
    }
    if (family == "linear") {
        detail::require_known(params, {"kappa"}, family);
        return make_linear_reaction(detail::param(params, "kappa"));
    }
    throw ArgumentError("unknown reaction family '" + family + "'");
}

enum class Verdict { verified_analytic, verified_sampled, violated, inconclusive };

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::verified_analytic: return "verified-analytic";
        case Verdict::verified_sampled: return "verified-sampled";
        case Verdict::violated: return "violated";
        default: return "inconclusive";
    }
}

struct HypothesisCheck {
    std::string name;
    Verdict verdict = Verdict::inconclusive;
    double witness = 0.0;    // sampled quantity the verdict rests on
    double threshold = 0.0;  // what it was compared against
};

struct HypothesisReport {
    double lambda1 = 0.0;
    std::vector<HypothesisCheck> checks;

    const HypothesisCheck& at(const std::string& name) const {
        for (const auto& c : checks) {
            if (c.name == name) return c;
        }
        throw ArgumentError("no verdict for hypothesis " + name);
    }

    bool holds(const std::string& name) const {
        const auto v = at(name).verdict;
        return v == Verdict::verified_analytic || v == Verdict::verified_sampled;
    }
};

namespace detail {

inline std::vector<double> log_samples(double lo_exp, double hi_exp, int count) {
    std::vector<double> out;
    for (int i = 0; i < count; ++i) out.push_back(std::pow(10.0, lo_exp + (hi_exp - lo_exp) * i / (count - 1)));
    return out;
}

inline Verdict sampled(bool ok) { return ok ? Verdict::verified_sampled : Verdict::violated; }

}  // namespace detail

/// Critical exponent 2d/(d - 2s); infinite when d <= 2s.
inline double critical_exponent(int d, double s) {
    return d > 2.0 * s ? 2.0 * d / (d - 2.0 * s) : std::numeric_limits<double>::infinity();
}

/// Sampled audit of (gamma1), (gamma2) and, by growth class, (f1)-(f4) or (g1)-(g3).
/// Limits are probed on log-spaced samples; no sampled verdict is ever reported as analytic.
inline HypothesisReport check_hypotheses(const CoefficientModel& coeff, const ReactionModel& reaction, double lambda1,
                                         int d = 1, double s = 0.5) {
    HypothesisReport rep;
    rep.lambda1 = lambda1;

    {
        // (gamma1): bounds on [0, 1e6] plus the t = 0 endpoint.
        auto ts = detail::log_samples(-6.0, 6.0, 200);
        ts.insert(ts.begin(), 0.0);
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (double t : ts) {
            lo = std::min(lo, coeff.gamma(t));
            hi = std::max(hi, coeff.gamma(t));
        }
        const bool ok = coeff.gamma_min > 0.0 && lo >= coeff.gamma_min * (1.0 - 1e-12) && hi <= coeff.gamma_max * (1.0 + 1e-12);
        rep.checks.push_back({"gamma1", detail::sampled(ok), lo, coeff.gamma_min});
    }
    {
        // (gamma2): midpoint convexity of t -> Gamma(t^2) on 1000 triples.
        double worst = 0.0;
        const auto ts = detail::log_samples(-3.0, 3.0, 1001);
        for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
            const double a = ts[i] * 0.25, b = ts[i + 1] * 4.0, m = 0.5 * (a + b);
            const double gap = 0.5 * (coeff.Gamma(a * a) + coeff.Gamma(b * b)) - coeff.Gamma(m * m);
            const double scale = std::abs(coeff.Gamma(a * a)) + std::abs(coeff.Gamma(b * b));
            worst = std::min(worst, gap / std::max(scale, 1e-300));
        }
        rep.checks.push_back({"gamma2", detail::sampled(worst >= -1e-12), worst, 0.0});
    }

    if (reaction.is_sublinear()) {
        {
            const auto ts = detail::log_samples(3.0, 6.0, 31);
            bool decreasing = true;
            double prev = std::numeric_limits<double>::infinity();
            for (double t : ts) {
                const double r = reaction.g(t) / t;
                decreasing = decreasing && r <= prev;
                prev = r;
            }
            rep.checks.push_back({"g1", detail::sampled(decreasing && prev <= 1e-3), prev, 1e-3});
        }
        {
            double best = -std::numeric_limits<double>::infinity();
            for (double t : detail::log_samples(-3.0, 3.0, 61)) best = std::max(best, reaction.G(t));
            rep.checks.push_back({"g2", detail::sampled(best > 0.0), best, 0.0});
        }
        {
            double sup = 0.0;
            for (double t : detail::log_samples(-6.0, 6.0, 241)) {
                sup = std::max({sup, std::abs(reaction.g(t)) / t, std::abs(reaction.g(-t)) / t});
            }
            rep.checks.push_back({"g3", detail::sampled(std::isfinite(sup)), sup, reaction.g_bound});
        }
        return rep;
    }

    {
        double sup = -std::numeric_limits<double>::infinity();
        for (double t : detail::log_samples(-6.0, -1.0, 51)) sup = std::max(sup, reaction.f(t) / t);
        const double bound = coeff.gamma_min * lambda1;
        rep.checks.push_back({"f1", detail::sampled(sup < bound), sup, bound});
    }
    {
        // (f2) with p halfway into (1, 2*_s - 1), or p = 2 when the range is unbounded.
        const double crit = critical_exponent(d, s);
        const double p = std::isfinite(crit) ? 1.0 + 0.5 * (crit - 2.0) : 2.0;
        const auto ts = detail::log_samples(2.0, 6.0, 41);
        const double first = std::abs(reaction.f(ts.front())) / std::pow(ts.front(), p);
        const double last = std::abs(reaction.f(ts.back())) / std::pow(ts.back(), p);
        const bool ok = p > 1.0 && last <= 1e-2 * std::max(first, 1e-300) + 1e-12;
        rep.checks.push_back({"f2", p > 1.0 ? detail::sampled(ok) : Verdict::inconclusive, last, p});
    }
    {
        double inf = std::numeric_limits<double>::infinity();
        double sup = 0.0;
        for (double t : detail::log_samples(2.0, 6.0, 41)) {
            inf = std::min(inf, reaction.f(t) / t);
            sup = std::max(sup, reaction.f(t) / t);
        }
        const double bound = coeff.gamma_inf * lambda1;
        rep.checks.push_back({"f3", detail::sampled(inf >= bound), inf, bound});
        rep.checks.push_back({"f4", detail::sampled(std::isfinite(sup)), sup, std::numeric_limits<double>::infinity()});
    }
    return rep;
}

struct BallCondition {
    bool satisfied = false;
    double margin = 0.0;       // R^2 - C R^2 - ||h|| R
    bool above_onset = true;   // R >= t0
};

/// R^2 >= C R^2 + ||h|| R. Reported only; never used to stop a run.
inline BallCondition check_ball_condition(double R, double C, double h_norm) {
    BallCondition b;
    b.margin = R * R - C * R * R - h_norm * R;
    b.satisfied = b.margin >= 0.0;
    return b;
}

inline BallCondition check_ball_condition(double R, const ReactionModel& reaction, double h_norm) {
    BallCondition b = check_ball_condition(R, reaction.bound_C, h_norm);
    b.above_onset = R >= reaction.onset;
    return b;
}

}  // namespace fracvar
