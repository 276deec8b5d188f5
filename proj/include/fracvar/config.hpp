#pragma once

#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fracvar/error.hpp"
#include "fracvar/experiments.hpp"
#include "fracvar/fracops.hpp"
#include "fracvar/grid.hpp"
#include "fracvar/io.hpp"
#include "fracvar/solvers.hpp"

namespace fracvar {

enum class FieldFormat { binary, csv, both };

inline const char* to_string(FieldFormat f) {
    switch (f) {
        case FieldFormat::binary: return "binary";
        case FieldFormat::csv: return "csv";
        default: return "both";
    }
}

struct SweepConfig {
    std::string regime = "sublinear";  // or "linear"
    std::vector<double> values;
    bool threshold = false;
    std::optional<double> nu_low, nu_high;
    double rel_width = 1e-2;
    double ray_t_max = 1e4;
    int ray_steps = 200;
    double ball_factor = 10.0;
};

struct VerifySection {
    int refinements = 3;
    bool sign_example = true;
    bool energy_suite = true;
    double duality_tol = 1e-12;
    double divergence_tol = 0.02;
    double composition_tol = 0.05;
};

struct AppendixSection {
    double amplitude = 64.0;
    int levels = 12;
};

struct OutputConfig {
    std::string directory = "out";
    FieldFormat fields = FieldFormat::both;
};

/// Every command reads the sections it needs; all defaults are materialized by to_json.
struct RunConfig {
    DomainSpec domain = DomainSpec::interval(0.0, 1.0, 128);
    double s = 0.5;
    std::vector<double> s_values;  // verify only; defaults to {s}
    QuadratureParams quadrature;
    FamilySpec coefficient{"paper", {{"A", 1.0}, {"B", 2.0}, {"p", 1.5}}};
    FamilySpec reaction{"saturating", {{"nu", 1.0}}};
    /// nu / kappa are multiples of lambda1 of the run's own grid.
    bool reaction_per_lambda1 = false;
    ForcingKind forcing = ForcingKind::zero;
    double forcing_delta = 0.0;
    SolverOptions solver;
    bool ball_radius_set = false;
    SweepConfig sweep;
    VerifySection verify;
    AppendixSection appendix;
    OutputConfig output;
    std::uint64_t seed = 12345;
};

namespace detail {

/// Walks one JSON object, recording which keys were read so leftovers can be rejected.
class Section {
public:
    Section(const json* node, std::string path) : node_(node), path_(std::move(path)) {
        if (node_ && !node_->is_object()) throw ConfigError(path_, "must be an object");
    }

    bool present() const { return node_ != nullptr; }

    bool has(const std::string& key) const { return node_ && node_->contains(key); }

    std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* raw(const std::string& key) {
        seen_.insert(key);
        if (!node_ || !node_->contains(key)) return nullptr;
        return &node_->at(key);
    }

    Section child(const std::string& key) { return Section(raw(key), key_path(key)); }

    double number(const std::string& key, double fallback) {
        const json* v = raw(key);
        if (!v) return fallback;
        if (!v->is_number()) throw ConfigError(key_path(key), "must be a number");
        return v->get<double>();
    }

    std::optional<double> optional_number(const std::string& key) {
        const json* v = raw(key);
        if (!v || v->is_null()) return std::nullopt;
        if (!v->is_number()) throw ConfigError(key_path(key), "must be a number or null");
        return v->get<double>();
    }

    int integer(const std::string& key, int fallback) {
        const json* v = raw(key);
        if (!v) return fallback;
        if (!v->is_number_integer()) throw ConfigError(key_path(key), "must be an integer");
        const auto x = v->get<std::int64_t>();
        if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) throw ConfigError(key_path(key), "out of range");
        return static_cast<int>(x);
    }

    bool boolean(const std::string& key, bool fallback) {
        const json* v = raw(key);
        if (!v) return fallback;
        if (!v->is_boolean()) throw ConfigError(key_path(key), "must be true or false");
        return v->get<bool>();
    }

    std::string string(const std::string& key, const std::string& fallback) {
        const json* v = raw(key);
        if (!v) return fallback;
        if (!v->is_string()) throw ConfigError(key_path(key), "must be a string");
        return v->get<std::string>();
    }

    std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback) {
        const json* v = raw(key);
        if (!v) return fallback;
        if (!v->is_array()) throw ConfigError(key_path(key), "must be an array of numbers");
        std::vector<double> out;
        for (const auto& x : *v) {
            if (!x.is_number()) throw ConfigError(key_path(key), "must be an array of numbers");
            out.push_back(x.get<double>());
        }
        return out;
    }

    std::map<std::string, double> number_map(const std::string& key, const std::map<std::string, double>& fallback) {
        const json* v = raw(key);
        if (!v) return fallback;
        if (!v->is_object()) throw ConfigError(key_path(key), "must be an object of numbers");
        std::map<std::string, double> out;
        for (const auto& [k, x] : v->items()) {
            if (!x.is_number()) throw ConfigError(key_path(key) + "." + k, "must be a number");
            out[k] = x.get<double>();
        }
        return out;
    }

    /// Rejects keys that were never read.
    void finish() const {
        if (!node_) return;
        for (const auto& [k, v] : node_->items()) {
            if (!seen_.count(k)) throw ConfigError(key_path(k), "unknown key");
        }
    }

private:
    const json* node_;
    std::string path_;
    std::set<std::string> seen_;
};

inline std::string position_of(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

template <class F>
void guarded(const std::string& key, F&& f) {
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(key, e.what());
    }
}

inline FamilySpec read_family(Section sec, const FamilySpec& fallback, bool* per_lambda1 = nullptr) {
    FamilySpec out = fallback;
    if (per_lambda1) *per_lambda1 = sec.boolean("per_lambda1", false);
    if (sec.present()) {
        const std::string family = sec.string("family", fallback.family);
        out.params = sec.number_map("params", family == fallback.family ? fallback.params : std::map<std::string, double>{});
        out.family = family;
    }
    sec.finish();
    return out;
}

}  // namespace detail

inline RunConfig parse_config_text(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("", "parse error at " + detail::position_of(text, e.byte) + ": " + e.what());
    }
    if (!root.is_object()) throw ConfigError("", "top level must be an object");

    RunConfig cfg;
    detail::Section top(&root, "");

    {
        auto sec = top.child("domain");
        if (!sec.present()) throw ConfigError("domain", "section is required");
        const int d = sec.integer("dimension", 1);
        if (d != 1 && d != 2) throw ConfigError("domain.dimension", "must be 1 or 2");
        const auto lo = sec.numbers("lower", d == 1 ? std::vector<double>{0.0} : std::vector<double>{0.0, 0.0});
        const auto hi = sec.numbers("upper", d == 1 ? std::vector<double>{1.0} : std::vector<double>{1.0, 1.0});
        const json* nodes = sec.raw("nodes");
        std::vector<int> n;
        if (!nodes) throw ConfigError("domain.nodes", "is required");
        if (nodes->is_number_integer()) {
            n.assign(static_cast<std::size_t>(d), nodes->get<int>());
        } else if (nodes->is_array()) {
            for (const auto& x : *nodes) {
                if (!x.is_number_integer()) throw ConfigError("domain.nodes", "must hold integers");
                n.push_back(x.get<int>());
            }
        } else {
            throw ConfigError("domain.nodes", "must be an integer or an array of integers");
        }
        if (lo.size() != static_cast<std::size_t>(d)) throw ConfigError("domain.lower", "needs one entry per axis");
        if (hi.size() != static_cast<std::size_t>(d)) throw ConfigError("domain.upper", "needs one entry per axis");
        if (n.size() != static_cast<std::size_t>(d)) throw ConfigError("domain.nodes", "needs one entry per axis");
        cfg.domain = d == 1 ? DomainSpec::interval(lo[0], hi[0], n[0]) : DomainSpec::rectangle({lo[0], lo[1]}, {hi[0], hi[1]}, {n[0], n[1]});
        sec.finish();
        detail::guarded("domain", [&] { cfg.domain.validate(); });
    }
    {
        auto sec = top.child("operator");
        cfg.s = sec.number("s", cfg.s);
        detail::guarded("operator.s", [&] { require_order(cfg.s); });
        cfg.s_values = sec.numbers("s_values", {cfg.s});
        for (double s : cfg.s_values) detail::guarded("operator.s_values", [&] { require_order(s); });
        auto q = sec.child("quadrature");
        cfg.quadrature.near_radius = q.number("near_radius", cfg.quadrature.near_radius);
        cfg.quadrature.tail_radius = q.number("tail_radius", cfg.quadrature.tail_radius);
        cfg.quadrature.collar = q.number("collar", cfg.quadrature.collar);
        cfg.quadrature.tail_correction = q.boolean("tail_correction", cfg.quadrature.tail_correction);
        q.finish();
        sec.finish();
        detail::guarded("operator.quadrature", [&] { cfg.quadrature.validate(Grid(cfg.domain)); });
    }
    cfg.coefficient = detail::read_family(top.child("coefficient"), cfg.coefficient);
    detail::guarded("coefficient", [&] { make_coefficient(cfg.coefficient.family, cfg.coefficient.params); });
    cfg.reaction = detail::read_family(top.child("reaction"), cfg.reaction, &cfg.reaction_per_lambda1);
    detail::guarded("reaction", [&] { make_reaction(cfg.reaction.family, cfg.reaction.params); });
    {
        auto sec = top.child("forcing");
        const std::string kind = sec.string("kind", "zero");
        if (kind == "zero") {
            cfg.forcing = ForcingKind::zero;
        } else if (kind == "phi1") {
            cfg.forcing = ForcingKind::phi1;
        } else {
            throw ConfigError("forcing.kind", "must be \"zero\" or \"phi1\"");
        }
        cfg.forcing_delta = sec.number("delta", cfg.forcing == ForcingKind::phi1 ? 0.01 : 0.0);
        if (!(cfg.forcing_delta >= 0.0)) throw ConfigError("forcing.delta", "must be nonnegative");
        sec.finish();
    }
    {
        auto sec = top.child("solver");
        SolverOptions& o = cfg.solver;
        o.max_iterations = sec.integer("max_iterations", o.max_iterations);
        o.tol_g = sec.number("tol_g", o.tol_g);
        o.armijo_factor = sec.number("armijo_factor", o.armijo_factor);
        o.armijo_slope = sec.number("armijo_slope", o.armijo_slope);
        o.max_backtracks = sec.integer("max_backtracks", o.max_backtracks);
        if (auto r = sec.optional_number("ball_radius")) {
            o.ball_radius = *r;
            cfg.ball_radius_set = true;
        }
        o.cone = sec.boolean("cone", o.cone);
        o.newton = sec.boolean("newton", o.newton);
        o.tol_active = sec.number("tol_active", o.tol_active);
        o.path_points = sec.integer("path_points", o.path_points);
        if (auto c = sec.optional_number("path_step_cap")) o.path_step_cap = *c;
        o.respline_every = sec.integer("respline_every", o.respline_every);
        o.polish_steps = sec.integer("polish_steps", o.polish_steps);
        o.polish_below = sec.number("polish_below", o.polish_below);
        sec.finish();
        detail::guarded("solver", [&] { o.validate(); });
        if (o.max_backtracks < 0) throw ConfigError("solver.max_backtracks", "must be nonnegative");
    }
    {
        auto sec = top.child("sweep");
        SweepConfig& w = cfg.sweep;
        w.regime = sec.string("regime", w.regime);
        if (w.regime != "sublinear" && w.regime != "linear") throw ConfigError("sweep.regime", "must be \"sublinear\" or \"linear\"");
        w.values = sec.numbers("values", w.values);
        w.threshold = sec.boolean("threshold", w.threshold);
        w.nu_low = sec.optional_number("nu_low");
        w.nu_high = sec.optional_number("nu_high");
        w.rel_width = sec.number("rel_width", w.rel_width);
        w.ray_t_max = sec.number("ray_t_max", w.ray_t_max);
        w.ray_steps = sec.integer("ray_steps", w.ray_steps);
        w.ball_factor = sec.number("ball_factor", w.ball_factor);
        sec.finish();
        if (!(w.rel_width > 0.0 && w.rel_width < 1.0)) throw ConfigError("sweep.rel_width", "must lie in (0,1)");
        if (!(w.ray_t_max > 0.0)) throw ConfigError("sweep.ray_t_max", "must be positive");
        if (w.ray_steps < 2) throw ConfigError("sweep.ray_steps", "must be at least 2");
        if (!(w.ball_factor > 0.0)) throw ConfigError("sweep.ball_factor", "must be positive");
    }
    {
        auto sec = top.child("verify");
        VerifySection& v = cfg.verify;
        v.refinements = sec.integer("refinements", v.refinements);
        v.sign_example = sec.boolean("sign_example", v.sign_example);
        v.energy_suite = sec.boolean("energy_suite", v.energy_suite);
        v.duality_tol = sec.number("duality_tol", v.duality_tol);
        v.divergence_tol = sec.number("divergence_tol", v.divergence_tol);
        v.composition_tol = sec.number("composition_tol", v.composition_tol);
        sec.finish();
        if (v.refinements < 1) throw ConfigError("verify.refinements", "must be positive");
    }
    {
        auto sec = top.child("appendix");
        cfg.appendix.amplitude = sec.number("amplitude", cfg.appendix.amplitude);
        cfg.appendix.levels = sec.integer("levels", cfg.appendix.levels);
        sec.finish();
        if (!(cfg.appendix.amplitude > 0.0)) throw ConfigError("appendix.amplitude", "must be positive");
        if (cfg.appendix.levels < 1) throw ConfigError("appendix.levels", "must be positive");
    }
    {
        auto sec = top.child("output");
        cfg.output.directory = sec.string("directory", cfg.output.directory);
        const std::string f = sec.string("fields", to_string(cfg.output.fields));
        if (f == "binary") {
            cfg.output.fields = FieldFormat::binary;
        } else if (f == "csv") {
            cfg.output.fields = FieldFormat::csv;
        } else if (f == "both") {
            cfg.output.fields = FieldFormat::both;
        } else {
            throw ConfigError("output.fields", "must be \"binary\", \"csv\" or \"both\"");
        }
        sec.finish();
    }
    {
        const json* seed = top.raw("seed");
        if (seed) {
            if (!seed->is_number_unsigned()) throw ConfigError("seed", "must be a nonnegative integer");
            cfg.seed = seed->get<std::uint64_t>();
        }
    }
    top.finish();
    return cfg;
}

inline RunConfig parse_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("", "cannot open config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

/// Fully materialized config; parse_config_text(to_json(c).dump()) reproduces c.
inline json to_json(const RunConfig& c) {
    json j;
    j["domain"] = to_json(c.domain);
    json sv = json::array();
    for (double s : c.s_values) sv.push_back(s);
    j["operator"] = {{"s", c.s},
                     {"s_values", sv},
                     {"quadrature",
                      {{"near_radius", c.quadrature.near_radius},
                       {"tail_radius", c.quadrature.tail_radius},
                       {"collar", c.quadrature.collar},
                       {"tail_correction", c.quadrature.tail_correction}}}};
    auto family = [](const FamilySpec& f) {
        json p = json::object();
        for (const auto& [k, v] : f.params) p[k] = v;
        return json{{"family", f.family}, {"params", p}};
    };
    j["coefficient"] = family(c.coefficient);
    j["reaction"] = family(c.reaction);
    j["reaction"]["per_lambda1"] = c.reaction_per_lambda1;
    j["forcing"] = {{"kind", c.forcing == ForcingKind::phi1 ? "phi1" : "zero"}, {"delta", c.forcing_delta}};
    const SolverOptions& o = c.solver;
    j["solver"] = {{"max_iterations", o.max_iterations},
                   {"tol_g", o.tol_g},
                   {"armijo_factor", o.armijo_factor},
                   {"armijo_slope", o.armijo_slope},
                   {"max_backtracks", o.max_backtracks},
                   {"ball_radius", c.ball_radius_set ? json(o.ball_radius) : json(nullptr)},
                   {"cone", o.cone},
                   {"newton", o.newton},
                   {"tol_active", o.tol_active},
                   {"path_points", o.path_points},
                   {"path_step_cap", std::isfinite(o.path_step_cap) ? json(o.path_step_cap) : json(nullptr)},
                   {"respline_every", o.respline_every},
                   {"polish_steps", o.polish_steps},
                   {"polish_below", o.polish_below}};
    json vals = json::array();
    for (double v : c.sweep.values) vals.push_back(v);
    j["sweep"] = {{"regime", c.sweep.regime},
                  {"values", vals},
                  {"threshold", c.sweep.threshold},
                  {"nu_low", c.sweep.nu_low ? json(*c.sweep.nu_low) : json(nullptr)},
                  {"nu_high", c.sweep.nu_high ? json(*c.sweep.nu_high) : json(nullptr)},
                  {"rel_width", c.sweep.rel_width},
                  {"ray_t_max", c.sweep.ray_t_max},
                  {"ray_steps", c.sweep.ray_steps},
                  {"ball_factor", c.sweep.ball_factor}};
    j["verify"] = {{"refinements", c.verify.refinements},
                   {"sign_example", c.verify.sign_example},
                   {"energy_suite", c.verify.energy_suite},
                   {"duality_tol", c.verify.duality_tol},
                   {"divergence_tol", c.verify.divergence_tol},
                   {"composition_tol", c.verify.composition_tol}};
    j["appendix"] = {{"amplitude", c.appendix.amplitude}, {"levels", c.appendix.levels}};
    j["output"] = {{"directory", c.output.directory}, {"fields", to_string(c.output.fields)}};
    j["seed"] = c.seed;
    return j;
}

inline RegimeConfig regime_config(const RunConfig& c, int threads = 1) {
    RegimeConfig r;
    r.domain = c.domain;
    r.s = c.s;
    r.quadrature = c.quadrature;
    r.coefficient = c.coefficient;
    r.reaction = c.reaction;
    r.forcing.kind = c.forcing;
    r.forcing.delta = c.forcing_delta;
    r.solver = c.solver;
    r.sweep = c.sweep.values;
    r.nu_low = c.sweep.nu_low;
    r.nu_high = c.sweep.nu_high;
    r.threshold_rel_width = c.sweep.rel_width;
    r.ray_t_max = c.sweep.ray_t_max;
    r.ray_steps = c.sweep.ray_steps;
    r.ball_factor = c.sweep.ball_factor;
    r.threads = threads;
    return r;
}

/// Puts nu / kappa into absolute units given lambda1 of the run's grid. Sublinear sweep values
/// and brackets are nu values and scale with it; forcing scales do not.
inline void resolve_reaction(RegimeConfig& rc, const RunConfig& c, double lambda1) {
    rc.reaction = c.reaction;
    if (!c.reaction_per_lambda1) return;
    for (const char* k : {"nu", "kappa"}) {
        if (rc.reaction.params.count(k)) rc.reaction.params[k] *= lambda1;
    }
    bool sublinear = false;
    detail::guarded("reaction", [&] { sublinear = make_reaction(rc.reaction.family, rc.reaction.params).is_sublinear(); });
    if (!sublinear) return;
    for (double& v : rc.sweep) v *= lambda1;
    if (rc.nu_low) *rc.nu_low *= lambda1;
    if (rc.nu_high) *rc.nu_high *= lambda1;
}

inline VerifyConfig verify_config(const RunConfig& c, int threads = 1) {
    VerifyConfig v;
    v.domain = c.domain;
    v.s_values = c.s_values.empty() ? std::vector<double>{c.s} : c.s_values;
    v.refinements = c.verify.refinements;
    v.quadrature = c.quadrature;
    v.coefficient = c.coefficient;
    v.sign_example = c.verify.sign_example;
    v.energy_suite = c.verify.energy_suite;
    v.seed = c.seed;
    v.duality_tol = c.verify.duality_tol;
    v.divergence_tol = c.verify.divergence_tol;
    v.composition_tol = c.verify.composition_tol;
    v.threads = threads;
    return v;
}

inline AppendixConfig appendix_config(const RunConfig& c) {
    AppendixConfig a;
    a.domain = c.domain;
    a.s = c.s;
    a.quadrature = c.quadrature;
    a.coefficient = c.coefficient;
    a.amplitude = c.appendix.amplitude;
    a.levels = c.appendix.levels;
    return a;
}

}  // namespace fracvar
