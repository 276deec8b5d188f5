#pragma once

#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fracvar/error.hpp"
#include "fracvar/experiments.hpp"
#include "fracvar/fracops.hpp"
#include "fracvar/grid.hpp"
#include "fracvar/solvers.hpp"

namespace fracvar {

using json = nlohmann::ordered_json;

/// "FVFD", u32 d, u32 N, then N little-endian f64 values.
inline void write_field(const std::string& path, const Field& u) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");
    os.write("FVFD", 4);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(u.grid().dimension()));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(u.size()));
    for (std::size_t i = 0; i < u.size(); ++i) detail::write_le<double>(os, u[i]);
    if (!os) throw Error("write failed: " + path);
}

/// Reads a field written by write_field onto `grid`; the header must match its d and N.
inline Field read_field(const std::string& path, const GridPtr& grid) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4)) throw FormatError("truncated header: magic");
    if (std::memcmp(magic, "FVFD", 4) != 0) throw FormatError("bad magic in " + path);
    const auto d = detail::read_le<std::uint32_t>(is, "dimension");
    const auto n = detail::read_le<std::uint32_t>(is, "node count");
    if (d != static_cast<std::uint32_t>(grid->dimension())) {
        throw FormatError("dimension mismatch: file has d=" + std::to_string(d) + ", grid has d=" + std::to_string(grid->dimension()));
    }
    if (n != grid->size()) throw FormatError("node count mismatch: file has " + std::to_string(n) + ", grid has " + std::to_string(grid->size()));
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (!is.read(reinterpret_cast<char*>(&v[i]), sizeof(double))) throw FormatError("truncated data in " + path);
    }
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + path);
    return Field(grid, std::move(v));
}

/// Shortest decimal form that reads back to the same double.
inline std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

/// Columns x[,y],value.
inline void write_field_csv(const std::string& path, const Field& u) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path + " for writing");
    const Grid& g = u.grid();
    os << (g.dimension() == 1 ? "x,value\n" : "x,y,value\n");
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Point p = g.node(i);
        os << format_double(p[0]) << ',';
        if (g.dimension() == 2) os << format_double(p[1]) << ',';
        os << format_double(u[i]) << '\n';
    }
    if (!os) throw Error("write failed: " + path);
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");
    os << text;
    if (!os) throw Error("write failed: " + path);
}

inline void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------------------------
// JSON views of reports

namespace detail {

inline json number(double x) {
    if (std::isfinite(x)) return x;
    return format_double(x);
}

inline json optional_number(const std::optional<double>& x) { return x ? number(*x) : json(nullptr); }

}  // namespace detail

inline json to_json(const DomainSpec& d) {
    json j;
    j["dimension"] = d.dimension;
    j["lower"] = json::array();
    j["upper"] = json::array();
    j["nodes"] = json::array();
    for (int k = 0; k < d.dimension; ++k) {
        j["lower"].push_back(d.lower[k]);
        j["upper"].push_back(d.upper[k]);
        j["nodes"].push_back(d.nodes[k]);
    }
    return j;
}

inline json to_json(const HypothesisReport& r) {
    json j = json::array();
    for (const auto& c : r.checks) {
        j.push_back({{"name", c.name}, {"verdict", to_string(c.verdict)}, {"witness", detail::number(c.witness)},
                     {"threshold", detail::number(c.threshold)}});
    }
    return j;
}

inline json to_json(const SolveReport& r, bool with_history = false) {
    json j;
    j["classification"] = to_string(r.classification);
    j["converged"] = r.converged;
    j["energy"] = detail::number(r.energy);
    j["kkt_residual"] = detail::number(r.kkt);
    j["iterations"] = r.iterations;
    j["l2_norm"] = r.solution.grid_ptr() ? l2_norm(r.solution) : 0.0;
    j["min_value"] = r.solution.grid_ptr() ? r.solution.values().minCoeff() : 0.0;
    j["max_hs_norm"] = detail::number(r.max_hs_norm);
    j["ball_radius"] = detail::number(r.ball_radius);
    j["boundary"] = {{"condition", std::string(1, r.boundary.condition)},
                     {"boundary_hits", r.boundary.boundary_hits},
                     {"radial_derivative", detail::number(r.boundary.radial_derivative)}};
    if (r.classification == Classification::mountain_pass || r.level != 0.0) {
        j["level"] = detail::number(r.level);
        j["barrier_respected"] = r.barrier_respected;
        j["sphere_level"] = detail::optional_number(r.sphere_level);
    }
    j["message"] = r.message;
    if (with_history) {
        json h = json::array();
        for (double e : r.energy_history) h.push_back(detail::number(e));
        j["energy_history"] = h;
    }
    return j;
}

inline json to_json(const BallCondition& b) {
    return {{"satisfied", b.satisfied}, {"margin", detail::number(b.margin)}, {"above_onset", b.above_onset}};
}

inline json to_json(const RegimeEntry& e) {
    json j;
    j["sweep_value"] = e.sweep_value;
    j["audit_ok"] = e.audit_ok;
    j["audit"] = to_json(e.audit);
    j["ball_radius"] = detail::number(e.ball_radius);
    j["coercive_radius"] = detail::number(e.coercive_radius);
    j["ball_condition"] = to_json(e.ball);
    j["first"] = to_json(e.first);
    j["energy_negative"] = e.energy_negative;
    j["bounded"] = e.bounded;
    j["geometry_ok"] = e.geometry_ok;
    j["ray_t"] = detail::optional_number(e.ray_t);
    if (e.second) {
        j["second"] = to_json(*e.second);
        j["distance"] = detail::number(e.distance);
        j["distinct"] = e.distinct;
        j["two_solutions"] = e.two_solutions;
    }
    j["note"] = e.note;
    return j;
}

inline json to_json(const ThresholdResult& t) {
    json probes = json::array();
    for (const auto& p : t.probes) probes.push_back({{"nu", p.nu}, {"classification", to_string(p.classification)}});
    return {{"nu_star", t.nu_star}, {"low", t.low}, {"high", t.high}, {"monotone", t.monotone}, {"probes", probes}};
}

inline json to_json(const RegimeReport& r) {
    json j;
    j["lambda1"] = r.lambda1;
    j["entries"] = json::array();
    for (const auto& e : r.entries) j["entries"].push_back(to_json(e));
    j["threshold"] = r.threshold ? to_json(*r.threshold) : json(nullptr);
    j["smallness_bound"] = detail::optional_number(r.smallness_bound);
    return j;
}

inline json to_json(const VerificationReport& r) {
    json j = json::array();
    for (const auto& c : r.checks) {
        j.push_back({{"name", c.name}, {"value", detail::number(c.value)}, {"tolerance", detail::number(c.tolerance)}, {"passed", c.passed}});
    }
    return {{"all_passed", r.all_passed()}, {"checks", j}};
}

inline json to_json(const ConvergenceReport& r) {
    json rows = json::array();
    for (std::size_t i = 0; i < r.t.size(); ++i) rows.push_back({{"n", i}, {"t", r.t[i]}, {"form", r.form[i]}, {"error", r.error[i]}});
    return {{"limit", r.limit}, {"nonincreasing_from_2", r.nonincreasing_from_2}, {"final_error", r.error.back()}, {"rows", rows}};
}

// ---------------------------------------------------------------------------------------------
// CSV tables

inline std::string verification_csv(const VerificationReport& r) {
    std::ostringstream os;
    os << "check,value,tolerance,passed\n";
    for (const auto& c : r.checks) os << c.name << ',' << format_double(c.value) << ',' << format_double(c.tolerance) << ',' << (c.passed ? 1 : 0) << '\n';
    return os.str();
}

/// Columns: sweep value, classification (of the last solution found), energy, KKT residual, thresholds.
inline std::string regime_csv(const RegimeReport& r) {
    std::ostringstream os;
    os << "sweep_value,classification,energy,kkt_residual,second_classification,second_energy,second_kkt_residual,threshold\n";
    const std::string thr = r.threshold ? format_double(r.threshold->nu_star) : "";
    for (const auto& e : r.entries) {
        os << format_double(e.sweep_value) << ',' << to_string(e.first.classification) << ',' << format_double(e.first.energy) << ','
           << format_double(e.first.kkt) << ',';
        if (e.second) {
            os << to_string(e.second->classification) << ',' << format_double(e.second->energy) << ',' << format_double(e.second->kkt);
        } else {
            os << ",,";
        }
        os << ',' << thr << '\n';
    }
    return os.str();
}

inline std::string appendix_csv(const ConvergenceReport& r) {
    std::ostringstream os;
    os << "n,t,form,error\n";
    for (std::size_t i = 0; i < r.t.size(); ++i) os << i << ',' << format_double(r.t[i]) << ',' << format_double(r.form[i]) << ',' << format_double(r.error[i]) << '\n';
    return os.str();
}

}  // namespace fracvar
