#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <Eigen/Dense>

#include "fracvar/error.hpp"
#include "fracvar/grid.hpp"

namespace fracvar {

/// Normalising constants of the Riesz fractional gradient (mu) and fractional Laplacian (C).
struct NormalizingConstants {
    double mu;
    double C;
};

inline void require_order(double s) {
    if (!(s > 0.0 && s < 1.0)) throw ArgumentError("fractional order s must lie in (0,1), got " + std::to_string(s));
}

/// mu_{d,s} = 2^s Gamma((d+s+1)/2) / (pi^{d/2} Gamma((1-s)/2)),
/// C_{d,s}  = 4^s Gamma(d/2+s) / (pi^{d/2} |Gamma(-s)|).
/// With these, -div^s grad^s = (-Delta)^s on smooth compactly supported functions.
inline NormalizingConstants normalizing_constants(int d, double s) {
    require_order(s);
    if (d != 1 && d != 2) throw ArgumentError("dimension must be 1 or 2");
    const double half_d = 0.5 * d;
    const double pi_d = std::pow(std::numbers::pi, half_d);
    const double mu = std::pow(2.0, s) * std::tgamma(0.5 * (d + s + 1.0)) / (pi_d * std::tgamma(0.5 * (1.0 - s)));
    const double C = std::pow(4.0, s) * std::tgamma(half_d + s) / (pi_d * std::abs(std::tgamma(-s)));
    return {mu, C};
}

/// Parameters realising the principal value and the improper exterior integral.
struct QuadratureParams {
    /// Half-width of the excluded near-field box, in grid spacings. Inside it the integrand is
    /// replaced by its Taylor expansion (central / second differences).
    double near_radius = 0.5;
    /// Absolute far-field radius; <= 0 selects 10 * diam(Omega).
    double tail_radius = 0.0;
    /// Absolute width of the exterior collar on which gradients are sampled; <= 0 selects
    /// diam(Omega) in 1D and diam(Omega) / 4 in 2D.
    double collar = 0.0;
    /// Add the closed-form far-field contributions: |z| > tail_radius on the Laplacian diagonal,
    /// and the monopole field beyond the collar in gradient energies.
    bool tail_correction = true;

    double resolved_tail_radius(const Grid& grid) const {
        return tail_radius > 0.0 ? tail_radius : 10.0 * grid.diameter();
    }

    int collar_cells(const Grid& grid) const {
        const double width = collar > 0.0 ? collar : (grid.dimension() == 1 ? 1.0 : 0.25) * grid.diameter();
        return static_cast<int>(std::ceil(width / grid.spacing(0) - 1e-9));
    }

    void validate(const Grid& grid) const {
        if (!(near_radius > 0.0) || !std::isfinite(near_radius)) {
            throw ArgumentError("quadrature near_radius must be positive");
        }
        if (!std::isfinite(collar) || collar < 0.0) throw ArgumentError("quadrature collar must be non-negative");
        if (!(resolved_tail_radius(grid) > grid.diameter())) {
            throw ArgumentError("quadrature tail_radius must exceed diam(Omega)");
        }
    }
};

enum class OperatorKind { gradient, laplacian };

inline const char* to_string(OperatorKind k) { return k == OperatorKind::gradient ? "gradient" : "laplacian"; }

namespace detail {

/// Gauss-Legendre rule on [-1,1].
struct GaussRule {
    std::vector<double> x, w;
};

inline const GaussRule& gauss_rule() {
    static const GaussRule rule = [] {
        using G = boost::math::quadrature::gauss<double, 20>;
        GaussRule r;
        const auto& a = G::abscissa();
        const auto& wt = G::weights();
        for (std::size_t i = 0; i < a.size(); ++i) {
            r.x.push_back(a[i]);
            r.w.push_back(wt[i]);
            if (a[i] != 0.0) {
                r.x.push_back(-a[i]);
                r.w.push_back(wt[i]);
            }
        }
        return r;
    }();
    return rule;
}

/// Composite Gauss-Legendre on [a,b] with `panels` equal panels.
template <class F>
double integrate_1d(F&& f, double a, double b, int panels = 8) {
    const auto& g = gauss_rule();
    const double len = (b - a) / panels;
    double acc = 0.0;
    for (int p = 0; p < panels; ++p) {
        const double lo = a + p * len;
        const double mid = lo + 0.5 * len, half = 0.5 * len;
        for (std::size_t q = 0; q < g.x.size(); ++q) acc += g.w[q] * half * f(mid + half * g.x[q]);
    }
    return acc;
}

struct Box {
    std::array<double, 2> lo{0, 0}, hi{0, 0};
};

/// Integrals of hat * kernel collected in one pass: laplacian weight and both gradient components.
struct HatMoments {
    double lap = 0.0;
    std::array<double, 2> grad{0.0, 0.0};
};

/// Integrates phi(z) * {|z|^{-d-2s}, z |z|^{-d-s-1}} over a box that stays away from the origin,
/// splitting boxes that are close to it relative to their size.
class HatIntegrator {
public:
    HatIntegrator(int d, double s) : d_(d), s_(s) {}

    HatMoments integrate(const Box& box, const std::array<double, 2>& k, int depth = 0) const {
        double dist2 = 0.0, size = 0.0;
        for (int a = 0; a < d_; ++a) {
            const double c = std::max({box.lo[a], -box.hi[a], 0.0});
            dist2 += c * c;
            size = std::max(size, box.hi[a] - box.lo[a]);
        }
        if (depth < 12 && std::sqrt(dist2) < 1.5 * size) {
            HatMoments acc;
            const int parts = d_ == 1 ? 2 : 4;
            for (int p = 0; p < parts; ++p) {
                Box sub = box;
                for (int a = 0; a < d_; ++a) {
                    const double mid = 0.5 * (box.lo[a] + box.hi[a]);
                    if ((p >> a) & 1) {
                        sub.lo[a] = mid;
                    } else {
                        sub.hi[a] = mid;
                    }
                }
                add(acc, integrate(sub, k, depth + 1));
            }
            return acc;
        }
        return gauss(box, k);
    }

private:
    static void add(HatMoments& a, const HatMoments& b) {
        a.lap += b.lap;
        a.grad[0] += b.grad[0];
        a.grad[1] += b.grad[1];
    }

    HatMoments gauss(const Box& box, const std::array<double, 2>& k) const {
        const auto& g = gauss_rule();
        const std::size_t q = g.x.size();
        HatMoments acc;
        const double c0 = 0.5 * (box.lo[0] + box.hi[0]), r0 = 0.5 * (box.hi[0] - box.lo[0]);
        const double c1 = 0.5 * (box.lo[1] + box.hi[1]), r1 = 0.5 * (box.hi[1] - box.lo[1]);
        const double lap_exp = -0.5 * (d_ + 2.0 * s_);
        const double grad_exp = -0.5 * (d_ + s_ + 1.0);
        const std::size_t q1 = d_ == 2 ? q : 1;
        for (std::size_t i = 0; i < q; ++i) {
            const double z0 = c0 + r0 * g.x[i];
            const double hat0 = 1.0 - std::abs(z0 - k[0]);
            for (std::size_t j = 0; j < q1; ++j) {
                double z1 = 0.0, hat1 = 1.0, w = g.w[i] * r0;
                if (d_ == 2) {
                    z1 = c1 + r1 * g.x[j];
                    hat1 = 1.0 - std::abs(z1 - k[1]);
                    w *= g.w[j] * r1;
                }
                const double r2 = z0 * z0 + z1 * z1;
                const double phi = hat0 * hat1 * w;
                acc.lap += phi * std::pow(r2, lap_exp);
                const double gk = phi * std::pow(r2, grad_exp);
                acc.grad[0] += gk * z0;
                acc.grad[1] += gk * z1;
            }
        }
        return acc;
    }

    int d_;
    double s_;
};

/// Pieces of `box` outside the open square (-r, r)^d.
inline std::vector<Box> subtract_square(const Box& box, int d, double r) {
    std::vector<Box> out;
    if (d == 1) {
        if (box.lo[0] < -r) out.push_back({{box.lo[0], 0}, {std::min(box.hi[0], -r), 0}});
        if (box.hi[0] > r) out.push_back({{std::max(box.lo[0], r), 0}, {box.hi[0], 0}});
        return out;
    }
    const double xl = box.lo[0], xh = box.hi[0], yl = box.lo[1], yh = box.hi[1];
    if (xl < -r) out.push_back({{xl, yl}, {std::min(xh, -r), yh}});
    if (xh > r) out.push_back({{std::max(xl, r), yl}, {xh, yh}});
    const double mx_lo = std::max(xl, -r), mx_hi = std::min(xh, r);
    if (mx_lo < mx_hi) {
        if (yl < -r) out.push_back({{mx_lo, yl}, {mx_hi, std::min(yh, -r)}});
        if (yh > r) out.push_back({{mx_lo, std::max(yl, r)}, {mx_hi, yh}});
    }
    return out;
}

/// Translation-invariant weights in grid units (h = 1) for lattice offsets (k0 + shift, k1),
/// k = 0 .. extent-1 per axis (non-negative quadrant; other quadrants follow by symmetry).
///
/// The far field {|z|_inf >= r0} is integrated against the piecewise (bi)linear interpolant of
/// the integrand's u-dependence, so the lattice node at offset c receives the hat moment over
/// the far field. Inside the near box the integrand is replaced by its Taylor expansion:
/// `near_lap` multiplies the Hessian trace / 2, `near_grad` the first derivative.
/// `far_total` is the kernel mass of the whole far field.
struct LatticeWeights {
    int d = 1;
    double shift = 0.0;
    std::array<int, 2> extent{1, 1};
    std::vector<double> lap;                  // hat moments of |z|^{-d-2s}
    std::vector<std::array<double, 2>> grad;  // hat moments of z |z|^{-d-s-1}
    double near_lap = 0.0;
    double near_grad = 0.0;
    double far_total = 0.0;

    std::size_t slot(int k0, int k1) const {
        return static_cast<std::size_t>(k0) + static_cast<std::size_t>(extent[0]) * static_cast<std::size_t>(k1);
    }

    // Collocated lattice (shift 0), signed integer offsets.
    double laplacian(int k0, int k1) const { return lap[slot(std::abs(k0), std::abs(k1))]; }

    double gradient(int axis, int k0, int k1) const {
        const int k = axis == 0 ? k0 : k1;
        if (k == 0) return 0.0;
        const double v = grad[slot(std::abs(k0), std::abs(k1))][static_cast<std::size_t>(axis)];
        return k > 0 ? v : -v;
    }
};

inline LatticeWeights lattice_weights(int d, double s, double r0, std::array<int, 2> extent, double shift = 0.0) {
    LatticeWeights lw;
    lw.d = d;
    lw.shift = shift;
    lw.extent = extent;
    if (d == 1) lw.extent[1] = 1;
    const std::size_t count = static_cast<std::size_t>(lw.extent[0]) * static_cast<std::size_t>(lw.extent[1]);
    lw.lap.assign(count, 0.0);
    lw.grad.assign(count, {0.0, 0.0});
    const HatIntegrator integrator(d, s);

#if defined(_OPENMP)
#pragma omp parallel for schedule(dynamic)
#endif
    for (long long flat = 0; flat < static_cast<long long>(count); ++flat) {
        const double c0 = static_cast<double>(flat % lw.extent[0]) + shift;
        const double c1 = d == 2 ? static_cast<double>(flat / lw.extent[0]) : 0.0;
        const std::array<double, 2> c{c0, c1};
        HatMoments total;
        const int cells = d == 1 ? 2 : 4;
        for (int q = 0; q < cells; ++q) {
            Box cell;
            cell.lo[0] = c0 - 1.0 + (q & 1);
            cell.hi[0] = cell.lo[0] + 1.0;
            if (d == 2) {
                cell.lo[1] = c1 - 1.0 + ((q >> 1) & 1);
                cell.hi[1] = cell.lo[1] + 1.0;
            }
            for (const Box& piece : subtract_square(cell, d, r0)) {
                const HatMoments m = integrator.integrate(piece, c);
                total.lap += m.lap;
                total.grad[0] += m.grad[0];
                total.grad[1] += m.grad[1];
            }
        }
        lw.lap[static_cast<std::size_t>(flat)] = total.lap;
        lw.grad[static_cast<std::size_t>(flat)] = total.grad;
    }

    if (d == 1) {
        lw.near_lap = std::pow(r0, 2.0 - 2.0 * s) / (1.0 - s);  // 2 r0^{2-2s} / (2-2s)
        lw.near_grad = 2.0 * std::pow(r0, 1.0 - s) / (1.0 - s);
        lw.far_total = std::pow(r0, -2.0 * s) / s;  // 2 r0^{-2s} / (2s)
    } else {
        // Polar integrals over the square boundary r(theta) = r0 / cos(theta), 8 octants.
        auto octants = [&](double p) {
            return 8.0 * integrate_1d([&](double t) { return std::pow(r0 / std::cos(t), p); }, 0.0, std::numbers::pi / 4.0);
        };
        lw.near_lap = 0.5 * octants(2.0 - 2.0 * s) / (2.0 - 2.0 * s);
        lw.near_grad = 0.5 * octants(1.0 - s) / (1.0 - s);
        lw.far_total = octants(-2.0 * s) / (2.0 * s);
    }
    return lw;
}

/// int over R^d minus the box prod [-L_a, L_a] of |x|^{-2d-2s} dx.
inline double box_exterior_moment(int d, double s, std::array<double, 2> half) {
    if (d == 1) return 2.0 * std::pow(half[0], -1.0 - 2.0 * s) / (1.0 + 2.0 * s);
    const double p = -2.0 - 2.0 * s;
    const double split = std::atan2(half[1], half[0]);
    const double a = integrate_1d([&](double t) { return std::pow(half[0] / std::cos(t), p); }, 0.0, split);
    const double b = integrate_1d([&](double t) { return std::pow(half[1] / std::sin(t), p); }, split, std::numbers::pi / 2.0);
    return 4.0 * (a + b) / -p;
}

}  // namespace detail

/// Assembled dense action of grad^s or (-Delta)^s on a grid.
/// Gradient: one M x N table per component, M the dual-lattice size, with
/// (grad^s u)_e[a] = sum_j T_a(e,j) u_j; `tail()` is mu^2 times the exterior moment beyond the
/// lattice, so the monopole far field contributes tail() * (int u)^2 / 2 to int |grad^s u|^2 / 2.
/// Laplacian: a single symmetric N x N table.
class NonlocalOperator {
public:
    NonlocalOperator(OperatorKind kind, double s, GridPtr grid, double constant, QuadratureParams params,
                     std::vector<Eigen::MatrixXd> tables, DualLatticePtr lattice = nullptr, double tail = 0.0)
        : kind_(kind), s_(s), grid_(std::move(grid)), constant_(constant), params_(params), tables_(std::move(tables)),
          lattice_(std::move(lattice)), tail_(tail) {}

    OperatorKind kind() const { return kind_; }
    double order() const { return s_; }
    const Grid& grid() const { return *grid_; }
    const GridPtr& grid_ptr() const { return grid_; }
    double constant() const { return constant_; }
    const QuadratureParams& params() const { return params_; }
    const std::vector<Eigen::MatrixXd>& tables() const { return tables_; }
    const Eigen::MatrixXd& table(int component = 0) const { return tables_.at(static_cast<std::size_t>(component)); }
    const DualLatticePtr& lattice_ptr() const { return lattice_; }
    const DualLattice& lattice() const {
        if (!lattice_) throw ArgumentError("operator has no dual lattice");
        return *lattice_;
    }
    double tail() const { return tail_; }

private:
    OperatorKind kind_;
    double s_;
    GridPtr grid_;
    double constant_;
    QuadratureParams params_;
    std::vector<Eigen::MatrixXd> tables_;
    DualLatticePtr lattice_;
    double tail_ = 0.0;
};

namespace detail {

inline double lattice_spacing(const Grid& grid) {
    const double h = grid.spacing(0);
    if (grid.dimension() == 2 && std::abs(grid.spacing(1) - h) > 1e-12 * h) {
        throw ArgumentError("nonlocal operators require square cells (equal spacing on both axes)");
    }
    return h;
}

inline LatticeWeights weights_for(const Grid& grid, double s, const QuadratureParams& q) {
    return lattice_weights(grid.dimension(), s, q.near_radius, {grid.nodes(0), grid.dimension() == 2 ? grid.nodes(1) : 1});
}

}  // namespace detail

/// grad^s u(x) = mu_{d,s} int (y-x)(u(y)-u(x)) / |y-x|^{d+s+1} dy with u = 0 outside Omega,
/// sampled at the face centres of the dual lattice (Omega plus the exterior collar).
///
/// A face sits halfway between two nodes, so the normal derivative in the near box is a compact
/// difference and no oscillating mode is invisible to the operator; the tangential derivative
/// averages the two adjacent columns. Exterior nodes carry u = 0, hence every row is a plain
/// contraction with the odd hat moments.
inline NonlocalOperator assemble_gradient(const GridPtr& grid, double s, const QuadratureParams& q = {}) {
    require_order(s);
    q.validate(*grid);
    const double h = detail::lattice_spacing(*grid);
    const int d = grid->dimension();
    const auto consts = normalizing_constants(d, s);
    const int collar = q.collar_cells(*grid);
    auto lattice = std::make_shared<const DualLattice>(grid, collar);
    const int reach = std::max(grid->nodes(0), d == 2 ? grid->nodes(1) : 0) + collar + 1;
    // Offsets (k + 1/2, k') from a face normal to axis 0; the other family swaps the axes.
    const auto half = detail::lattice_weights(d, s, q.near_radius, {reach, d == 2 ? reach : 1}, 0.5);
    const double scale = consts.mu * std::pow(h, -s);
    const auto n = static_cast<Eigen::Index>(grid->size());
    const auto m = static_cast<Eigen::Index>(lattice->size());

    std::vector<Eigen::MatrixXd> tables(static_cast<std::size_t>(d), Eigen::MatrixXd::Zero(m, n));
    for (Eigen::Index e = 0; e < m; ++e) {
        const int f = lattice->family(static_cast<std::size_t>(e));
        const auto me = lattice->multi_index(static_cast<std::size_t>(e));
        for (Eigen::Index j = 0; j < n; ++j) {
            const auto mj = grid->multi_index(static_cast<std::size_t>(j));
            const int along = mj[f] - me[f];  // offset along + 1/2
            const int k_along = along >= 0 ? along : -along - 1;
            const int sign_along = along >= 0 ? 1 : -1;
            if (d == 1) {
                double w = sign_along * half.grad[half.slot(k_along, 0)][0];
                if (k_along == 0) w += sign_along * half.near_grad;
                tables[0](e, j) = scale * w;
                continue;
            }
            const int g = 1 - f;
            const int across = mj[g] - me[g];
            const auto& v = half.grad[half.slot(k_along, std::abs(across))];
            double w_along = sign_along * v[0];
            double w_across = across == 0 ? 0.0 : (across > 0 ? v[1] : -v[1]);
            if (k_along == 0 && across == 0) w_along += sign_along * half.near_grad;
            if (k_along == 0 && std::abs(across) == 1) w_across += 0.25 * half.near_grad * across;
            tables[static_cast<std::size_t>(f)](e, j) = scale * w_along;
            tables[static_cast<std::size_t>(g)](e, j) = scale * w_across;
        }
    }
    double tail = 0.0;
    if (q.tail_correction) {
        tail = consts.mu * consts.mu * detail::box_exterior_moment(d, s, {lattice->half_extent(0), lattice->half_extent(1)});
    }
    return NonlocalOperator(OperatorKind::gradient, s, grid, consts.mu, q, std::move(tables), std::move(lattice), tail);
}

/// (-Delta)^s u(x) = C_{d,s} P.V. int (u(x)-u(z)) / |x-z|^{d+2s} dz with u = 0 outside Omega.
/// Off-diagonal entries are non-positive and the table is exactly symmetric.
inline NonlocalOperator assemble_laplacian(const GridPtr& grid, double s, const QuadratureParams& q = {}) {
    require_order(s);
    q.validate(*grid);
    const double h = detail::lattice_spacing(*grid);
    const int d = grid->dimension();
    const auto consts = normalizing_constants(d, s);
    const auto lw = detail::weights_for(*grid, s, q);
    const double scale = consts.C * std::pow(h, -2.0 * s);
    const auto n = static_cast<Eigen::Index>(grid->size());

    // Far-field mass seen by every node: everything but the origin hat, which multiplies u_i - u_i.
    double diagonal = d * lw.near_lap + lw.far_total - lw.laplacian(0, 0);
    if (!q.tail_correction) {
        const double omega = d == 1 ? 2.0 : 2.0 * std::numbers::pi;
        diagonal -= omega * std::pow(q.resolved_tail_radius(*grid) / h, -2.0 * s) / (2.0 * s);
    }

    Eigen::MatrixXd table = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto mi = grid->multi_index(static_cast<std::size_t>(i));
        table(i, i) = scale * diagonal;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const auto mj = grid->multi_index(static_cast<std::size_t>(j));
            const int k0 = mj[0] - mi[0], k1 = mj[1] - mi[1];
            double w = lw.laplacian(k0, k1);
            if (std::abs(k0) + std::abs(k1) == 1) w += 0.5 * lw.near_lap;
            table(i, j) = -scale * w;
            table(j, i) = -scale * w;
        }
    }
    return NonlocalOperator(OperatorKind::laplacian, s, grid, consts.C, q, {std::move(table)});
}

inline void require_kind(const NonlocalOperator& op, OperatorKind kind, const char* what) {
    if (op.kind() != kind) {
        throw ArgumentError(std::string(what) + ": expected a " + to_string(kind) + " operator, got " + to_string(op.kind()));
    }
}

inline VectorField apply_gradient(const NonlocalOperator& op, const Field& u) {
    require_kind(op, OperatorKind::gradient, "apply_gradient");
    require_same_grid(op.grid(), u.grid(), "apply_gradient");
    const int d = op.grid().dimension();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(op.lattice().size()), d);
    for (int a = 0; a < d; ++a) out.col(a).noalias() = op.table(a) * u.values();
    return VectorField(op.lattice_ptr(), std::move(out));
}

/// div^s as the negative L2-adjoint of the assembled gradient: <u, div phi> = -<phi, grad u>,
/// the right pairing taken over the dual lattice.
inline Field apply_divergence(const NonlocalOperator& op, const VectorField& phi) {
    require_kind(op, OperatorKind::gradient, "apply_divergence");
    require_same_lattice(op.lattice(), phi.lattice(), "apply_divergence");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(op.grid().size()));
    for (int a = 0; a < phi.dimension(); ++a) out.noalias() -= op.table(a).transpose() * phi.values().col(a);
    out *= op.lattice().weight() / op.grid().weight();
    return Field(op.grid_ptr(), std::move(out));
}

inline Field apply_laplacian(const NonlocalOperator& op, const Field& u) {
    require_kind(op, OperatorKind::laplacian, "apply_laplacian");
    require_same_grid(op.grid(), u.grid(), "apply_laplacian");
    return Field(u.grid_ptr(), op.table() * u.values());
}

/// Contribution of the far field beyond the lattice to -div^s grad^s u: tail * int u, constant on Omega.
inline double exterior_flux(const NonlocalOperator& grad, const Field& u) {
    require_kind(grad, OperatorKind::gradient, "exterior_flux");
    return grad.tail() * u.grid().weight() * u.values().sum();
}

/// Dense matrix of -div^s grad^s including the far-field term: sum_a T_a^T T_a + tail h^d 1 1^T.
inline Eigen::MatrixXd composed_laplacian_table(const NonlocalOperator& grad) {
    require_kind(grad, OperatorKind::gradient, "composed_laplacian_table");
    const auto n = static_cast<Eigen::Index>(grad.grid().size());
    Eigen::MatrixXd out = Eigen::MatrixXd::Constant(n, n, grad.tail() * grad.grid().weight());
    const double ratio = grad.lattice().weight() / grad.grid().weight();
    for (const auto& t : grad.tables()) out.noalias() += ratio * (t.transpose() * t);
    return out;
}

/// ||(-div^s grad^s u) - (-Delta)^s u|| / ||(-Delta)^s u|| in discrete L2; 0 for u = 0.
inline double composition_residual(const NonlocalOperator& grad, const NonlocalOperator& lap, const Field& u) {
    require_kind(grad, OperatorKind::gradient, "composition_residual");
    require_kind(lap, OperatorKind::laplacian, "composition_residual");
    if (grad.order() != lap.order()) throw ArgumentError("composition_residual: operators have different orders s");
    require_same_grid(grad.grid(), lap.grid(), "composition_residual");
    Field composed = -1.0 * apply_divergence(grad, apply_gradient(grad, u));
    composed.values().array() += exterior_flux(grad, u);
    const Field direct = apply_laplacian(lap, u);
    const double denom = l2_norm(direct);
    if (denom == 0.0) return l2_norm(composed);
    return l2_norm(composed - direct) / denom;
}

namespace detail {

template <class T>
void write_le(std::ostream& os, T value) {
    static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_le(std::istream& is, const char* what) {
    T value{};
    if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) throw FormatError(std::string("truncated header: ") + what);
    return value;
}

}  // namespace detail

/// Binary table dump: "FVOP", u32 d, f64 s, u32 N, u32 rows, u32 components, then row-major f64
/// values (entry (e,j) holds `components` consecutive values). rows is N for the Laplacian and
/// the dual-lattice size for the gradient.
inline void write_operator(const std::string& path, const NonlocalOperator& op) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");
    os.write("FVOP", 4);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(op.grid().dimension()));
    detail::write_le<double>(os, op.order());
    const auto n = op.grid().size();
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(n));
    const auto rows = op.table().rows();
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(rows));
    const auto comps = op.tables().size();
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(comps));
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(n); ++j) {
            for (const auto& t : op.tables()) detail::write_le<double>(os, t(i, j));
        }
    }
    if (!os) throw Error("write failed: " + path);
}

}  // namespace fracvar
