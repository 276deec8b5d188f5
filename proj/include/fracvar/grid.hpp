#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "fracvar/error.hpp"

namespace fracvar {

using Point = std::array<double, 2>;

/// Axis-aligned box Omega in d = 1 or 2 dimensions with a uniform node count per axis.
/// Unused trailing axes (d = 1) are ignored.
struct DomainSpec {
    int dimension = 1;
    std::array<double, 2> lower{0.0, 0.0};
    std::array<double, 2> upper{1.0, 1.0};
    std::array<int, 2> nodes{64, 1};

    static DomainSpec interval(double a, double b, int n) {
        DomainSpec spec;
        spec.dimension = 1;
        spec.lower = {a, 0.0};
        spec.upper = {b, 0.0};
        spec.nodes = {n, 1};
        return spec;
    }

    static DomainSpec rectangle(Point lo, Point hi, std::array<int, 2> n) {
        DomainSpec spec;
        spec.dimension = 2;
        spec.lower = lo;
        spec.upper = hi;
        spec.nodes = n;
        return spec;
    }

    /// Throws ArgumentError naming the first violated constraint.
    void validate() const {
        if (dimension != 1 && dimension != 2) {
            throw ArgumentError("domain dimension must be 1 or 2, got " + std::to_string(dimension));
        }
        for (int k = 0; k < dimension; ++k) {
            if (!std::isfinite(lower[k]) || !std::isfinite(upper[k])) {
                throw ArgumentError("domain bounds must be finite on axis " + std::to_string(k));
            }
            if (!(lower[k] < upper[k])) {
                throw ArgumentError("domain requires lower < upper on axis " + std::to_string(k));
            }
            if (nodes[k] < 4) {
                throw ArgumentError("domain needs at least 4 nodes on axis " + std::to_string(k));
            }
        }
    }

    friend bool operator==(const DomainSpec& a, const DomainSpec& b) {
        if (a.dimension != b.dimension) return false;
        for (int k = 0; k < a.dimension; ++k) {
            if (a.lower[k] != b.lower[k] || a.upper[k] != b.upper[k] || a.nodes[k] != b.nodes[k]) {
                return false;
            }
        }
        return true;
    }
};

/// Cell-centred uniform discretisation of a DomainSpec. Node i sits at the centre of
/// cell i; in 2D nodes are numbered with the first axis running fastest.
class Grid {
public:
    explicit Grid(const DomainSpec& spec) : spec_(spec) {
        spec_.validate();
        size_ = 1;
        for (int k = 0; k < 2; ++k) {
            if (k < spec_.dimension) {
                spacing_[k] = (spec_.upper[k] - spec_.lower[k]) / spec_.nodes[k];
                size_ *= static_cast<std::size_t>(spec_.nodes[k]);
            } else {
                spec_.lower[k] = 0.0;
                spec_.upper[k] = 0.0;
                spec_.nodes[k] = 1;
                spacing_[k] = 1.0;
            }
        }
        cell_measure_ = 1.0;
        for (int k = 0; k < spec_.dimension; ++k) cell_measure_ *= spacing_[k];
    }

    const DomainSpec& spec() const { return spec_; }
    int dimension() const { return spec_.dimension; }
    std::size_t size() const { return size_; }
    int nodes(int axis) const { return spec_.nodes[axis]; }
    double spacing(int axis) const { return spacing_[axis]; }

    /// Quadrature weight of every node, h^d.
    double weight() const { return cell_measure_; }

    double measure() const {
        double m = 1.0;
        for (int k = 0; k < dimension(); ++k) m *= spec_.upper[k] - spec_.lower[k];
        return m;
    }

    double diameter() const {
        double d2 = 0.0;
        for (int k = 0; k < dimension(); ++k) {
            const double e = spec_.upper[k] - spec_.lower[k];
            d2 += e * e;
        }
        return std::sqrt(d2);
    }

    std::size_t index(int i0, int i1 = 0) const {
        return static_cast<std::size_t>(i0) + static_cast<std::size_t>(spec_.nodes[0]) * static_cast<std::size_t>(i1);
    }

    std::array<int, 2> multi_index(std::size_t i) const {
        const auto n0 = static_cast<std::size_t>(spec_.nodes[0]);
        return {static_cast<int>(i % n0), static_cast<int>(i / n0)};
    }

    Point node(std::size_t i) const {
        const auto mi = multi_index(i);
        Point p{0.0, 0.0};
        for (int k = 0; k < dimension(); ++k) {
            p[k] = spec_.lower[k] + (mi[k] + 0.5) * spacing_[k];
        }
        return p;
    }

    /// True for points of the open box Omega.
    bool contains(const Point& p) const {
        for (int k = 0; k < dimension(); ++k) {
            if (!(p[k] > spec_.lower[k] && p[k] < spec_.upper[k])) return false;
        }
        return true;
    }

    /// Index of the cell containing an interior point.
    std::size_t locate(const Point& p) const {
        std::array<int, 2> mi{0, 0};
        for (int k = 0; k < dimension(); ++k) {
            const int c = static_cast<int>(std::floor((p[k] - spec_.lower[k]) / spacing_[k]));
            mi[k] = std::clamp(c, 0, spec_.nodes[k] - 1);
        }
        return index(mi[0], mi[1]);
    }

    bool same_as(const Grid& other) const { return this == &other || spec_ == other.spec_; }

private:
    DomainSpec spec_;
    std::array<double, 2> spacing_{1.0, 1.0};
    double cell_measure_ = 1.0;
    std::size_t size_ = 0;
};

using GridPtr = std::shared_ptr<const Grid>;

inline GridPtr build_grid(const DomainSpec& spec) { return std::make_shared<const Grid>(spec); }

inline void require_same_grid(const Grid& a, const Grid& b, const char* what) {
    if (!a.same_as(b)) throw ArgumentError(std::string(what) + ": grid mismatch");
}

/// Nodal scalar function on Omega, extended by zero to the rest of R^d.
class Field {
public:
    Field() = default;
    explicit Field(GridPtr grid) : grid_(std::move(grid)), values_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid_->size()))) {}
    Field(GridPtr grid, Eigen::VectorXd values) : grid_(std::move(grid)), values_(std::move(values)) {
        if (static_cast<std::size_t>(values_.size()) != grid_->size()) {
            throw ArgumentError("field length does not match grid size");
        }
    }

    const Grid& grid() const { return *grid_; }
    const GridPtr& grid_ptr() const { return grid_; }
    std::size_t size() const { return static_cast<std::size_t>(values_.size()); }

    const Eigen::VectorXd& values() const { return values_; }
    Eigen::VectorXd& values() { return values_; }
    double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }
    double& operator[](std::size_t i) { return values_[static_cast<Eigen::Index>(i)]; }

    /// Piecewise-constant reconstruction inside Omega, exactly zero outside.
    double value_at(const Point& p) const {
        if (!grid_->contains(p)) return 0.0;
        return values_[static_cast<Eigen::Index>(grid_->locate(p))];
    }

    Field& operator+=(const Field& o) {
        require_same_grid(*grid_, o.grid(), "Field::operator+=");
        values_ += o.values_;
        return *this;
    }
    Field& operator-=(const Field& o) {
        require_same_grid(*grid_, o.grid(), "Field::operator-=");
        values_ -= o.values_;
        return *this;
    }
    Field& operator*=(double a) {
        values_ *= a;
        return *this;
    }

    friend Field operator+(Field a, const Field& b) { return a += b; }
    friend Field operator-(Field a, const Field& b) { return a -= b; }
    friend Field operator*(double a, Field f) { return f *= a; }

private:
    GridPtr grid_;
    Eigen::VectorXd values_;
};

/// Face centres of the cell lattice of Omega widened by a collar of P cells on every side:
/// the points half a cell from a node along one axis. In 2D there are two families (normal to
/// axis 0 and to axis 1); every point carries the weight h^d / d. Fractional gradients are
/// sampled here.
class DualLattice {
public:
    DualLattice(GridPtr grid, int collar) : grid_(std::move(grid)), collar_(collar) {
        if (collar_ < 0) throw ArgumentError("dual lattice collar must be non-negative");
        const int d = grid_->dimension();
        size_ = 0;
        for (int f = 0; f < d; ++f) {
            std::size_t count = 1;
            for (int k = 0; k < d; ++k) {
                counts_[f][k] = grid_->nodes(k) + 2 * collar_ + (k == f ? 1 : 0);
                count *= static_cast<std::size_t>(counts_[f][k]);
            }
            first_[f] = size_;
            size_ += count;
        }
    }

    const Grid& grid() const { return *grid_; }
    const GridPtr& grid_ptr() const { return grid_; }
    int dimension() const { return grid_->dimension(); }
    int collar() const { return collar_; }
    std::size_t size() const { return size_; }
    double weight() const { return grid_->weight() / dimension(); }

    /// Normal axis of the face family that point e belongs to.
    int family(std::size_t e) const { return dimension() == 2 && e >= first_[1] ? 1 : 0; }

    /// Integer face index m (may be negative): along the normal axis the face lies at
    /// lower + m h, across it at lower + (m + 1/2) h.
    std::array<int, 2> multi_index(std::size_t e) const {
        const int f = family(e);
        const std::size_t local = e - first_[f];
        const auto c0 = static_cast<std::size_t>(counts_[f][0]);
        std::array<int, 2> m{static_cast<int>(local % c0), static_cast<int>(local / c0)};
        for (int k = 0; k < dimension(); ++k) m[k] -= collar_;
        return m;
    }

    Point point(std::size_t e) const {
        const int f = family(e);
        const auto m = multi_index(e);
        Point p{0.0, 0.0};
        for (int k = 0; k < dimension(); ++k) {
            p[k] = grid_->spec().lower[k] + (m[k] + (k == f ? 0.0 : 0.5)) * grid_->spacing(k);
        }
        return p;
    }

    /// Half-width of the box covered by the lattice, about the centre of Omega.
    double half_extent(int axis) const {
        const auto& sp = grid_->spec();
        return 0.5 * (sp.upper[axis] - sp.lower[axis]) + (collar_ + 0.5) * grid_->spacing(axis);
    }

    bool same_as(const DualLattice& o) const {
        return this == &o || (collar_ == o.collar_ && grid_->same_as(*o.grid_));
    }

private:
    GridPtr grid_;
    int collar_ = 0;
    std::array<std::array<int, 2>, 2> counts_{};
    std::array<std::size_t, 2> first_{0, 0};
    std::size_t size_ = 0;
};

using DualLatticePtr = std::shared_ptr<const DualLattice>;

inline void require_same_lattice(const DualLattice& a, const DualLattice& b, const char* what) {
    if (!a.same_as(b)) throw ArgumentError(std::string(what) + ": dual lattice mismatch");
}

/// d-vectors on a dual lattice, one row per lattice point.
class VectorField {
public:
    VectorField() = default;
    explicit VectorField(DualLatticePtr lattice)
        : lattice_(std::move(lattice)),
          values_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(lattice_->size()), lattice_->dimension())) {}
    VectorField(DualLatticePtr lattice, Eigen::MatrixXd values) : lattice_(std::move(lattice)), values_(std::move(values)) {
        if (static_cast<std::size_t>(values_.rows()) != lattice_->size() || values_.cols() != lattice_->dimension()) {
            throw ArgumentError("vector field shape does not match lattice");
        }
    }

    const DualLattice& lattice() const { return *lattice_; }
    const DualLatticePtr& lattice_ptr() const { return lattice_; }
    const Grid& grid() const { return lattice_->grid(); }
    std::size_t size() const { return static_cast<std::size_t>(values_.rows()); }
    int dimension() const { return static_cast<int>(values_.cols()); }

    const Eigen::MatrixXd& values() const { return values_; }
    Eigen::MatrixXd& values() { return values_; }
    auto component(int a) const { return values_.col(a); }

    /// |v_e|^2 for every lattice point.
    Eigen::VectorXd squared_norms() const { return values_.rowwise().squaredNorm(); }

private:
    DualLatticePtr lattice_;
    Eigen::MatrixXd values_;
};

/// Samples f at the nodes. Throws EvaluationError on a non-finite sample.
inline Field field_from_function(const GridPtr& grid, const std::function<double(const Point&)>& f) {
    Field out(grid);
    for (std::size_t i = 0; i < grid->size(); ++i) {
        const double v = f(grid->node(i));
        if (!std::isfinite(v)) {
            throw EvaluationError("field_from_function: non-finite value at node " + std::to_string(i));
        }
        out[i] = v;
    }
    return out;
}

/// Discrete L2(Omega) pairing sum_i w_i f1_i f2_i.
inline double l2_inner(const Field& f1, const Field& f2) {
    require_same_grid(f1.grid(), f2.grid(), "l2_inner");
    return f1.grid().weight() * f1.values().dot(f2.values());
}

inline double l2_norm(const Field& f) { return std::sqrt(l2_inner(f, f)); }

/// Discrete L2 pairing of two vector fields over their lattice.
inline double l2_inner(const VectorField& a, const VectorField& b) {
    require_same_lattice(a.lattice(), b.lattice(), "l2_inner");
    return a.lattice().weight() * a.values().cwiseProduct(b.values()).sum();
}

}  // namespace fracvar
