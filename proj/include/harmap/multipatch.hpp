#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "assembly.hpp"
#include "mapping.hpp"
#include "solver.hpp"
#include "splines.hpp"

namespace harmap {

/// Faces of the reference square: south t = 0, north t = 1, west s = 0, east s = 1.
enum class Face { south = 0, north = 1, west = 2, east = 3 };

inline const char* to_string(Face f) {
    static constexpr const char* names[] = {"south", "north", "west", "east"};
    return names[static_cast<int>(f)];
}

inline std::optional<Face> face_from_string(const std::string& s) {
    for (int f = 0; f < 4; ++f)
        if (s == to_string(static_cast<Face>(f))) return static_cast<Face>(f);
    return std::nullopt;
}

struct PatchDescription {
    TensorBasis basis;
    AffinePatchMap map;
};

/// Glues face_a of patch_a to face_b of patch_b; `reversed` flips the
/// parameter direction along face_b.
struct Interface {
    int patch_a = 0;
    Face face_a = Face::east;
    int patch_b = 0;
    Face face_b = Face::west;
    bool reversed = false;
};

inline std::string describe(const Interface& i) {
    return "interface (" + std::to_string(i.patch_a) + "." + to_string(i.face_a) + ", " + std::to_string(i.patch_b) +
           "." + to_string(i.face_b) + ")";
}

/// Local indices of the functions not vanishing on a face, in increasing face parameter.
inline std::vector<int> face_dofs(const TensorBasis& b, Face f) {
    std::vector<int> out;
    switch (f) {
        case Face::south:
        case Face::north:
            for (int i = 0; i < b.n_xi(); ++i) out.push_back(b.index(i, f == Face::south ? 0 : b.n_eta() - 1));
            break;
        case Face::west:
        case Face::east:
            for (int j = 0; j < b.n_eta(); ++j) out.push_back(b.index(f == Face::west ? 0 : b.n_xi() - 1, j));
            break;
    }
    return out;
}

inline const KnotVector& face_knots(const TensorBasis& b, Face f) {
    return (f == Face::south || f == Face::north) ? b.kv_xi : b.kv_eta;
}

/// Reference-square point on a face at face parameter tau.
inline Eigen::Vector2d face_point(Face f, double tau) {
    switch (f) {
        case Face::south: return {tau, 0.0};
        case Face::north: return {tau, 1.0};
        case Face::west: return {0.0, tau};
        case Face::east: return {1.0, tau};
    }
    return {0.0, 0.0};
}

/// Equal degree and knots up to rounding.
inline bool same_knots(const KnotVector& a, const KnotVector& b, double tol = 1e-12) {
    if (a.degree() != b.degree() || a.knots().size() != b.knots().size()) return false;
    for (std::size_t k = 0; k < a.knots().size(); ++k)
        if (std::abs(a.knots()[k] - b.knots()[k]) > tol) return false;
    return true;
}

inline KnotVector flipped(const KnotVector& kv) {
    std::vector<double> k(kv.knots().rbegin(), kv.knots().rend());
    for (double& x : k) x = 1.0 - x;
    return KnotVector(kv.degree(), std::move(k));
}

/// Union-find over (patch, local) slots.
class DisjointSets {
public:
    explicit DisjointSets(int n) : parent_(static_cast<std::size_t>(n)) { std::iota(parent_.begin(), parent_.end(), 0); }
    int find(int x) {
        while (parent_[static_cast<std::size_t>(x)] != x) {
            parent_[static_cast<std::size_t>(x)] = parent_[static_cast<std::size_t>(parent_[static_cast<std::size_t>(x)])];
            x = parent_[static_cast<std::size_t>(x)];
        }
        return x;
    }
    void unite(int a, int b) {
        a = find(a), b = find(b);
        if (a != b) parent_[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    }

private:
    std::vector<int> parent_;
};

/// Global numbering of a family of patchwise bases under face gluing.
struct DofNumbering {
    int size = 0;
    std::vector<std::vector<int>> l2g;  // per patch
};

class PatchTopology {
public:
    PatchTopology() = default;

    PatchTopology(std::vector<PatchDescription> patches, std::vector<Interface> interfaces)
        : patches_(std::move(patches)), interfaces_(std::move(interfaces)) {
        if (patches_.empty()) throw InputError("topology needs at least one patch");
        validate_interfaces();
        for (const auto& p : patches_) aux_bases_.push_back(h_refine(p.basis));
        std::vector<TensorBasis> primal;
        for (const auto& p : patches_) primal.push_back(p.basis);
        primal_ = number(primal);
        aux_ = number(aux_bases_);

        glued_.assign(patches_.size(), {false, false, false, false});
        for (const auto& i : interfaces_) {
            glued_[static_cast<std::size_t>(i.patch_a)][static_cast<std::size_t>(i.face_a)] = true;
            glued_[static_cast<std::size_t>(i.patch_b)][static_cast<std::size_t>(i.face_b)] = true;
        }
        is_boundary_.assign(static_cast<std::size_t>(primal_.size), 0);
        for (std::size_t p = 0; p < patches_.size(); ++p)
            for (int f = 0; f < 4; ++f) {
                if (glued_[p][static_cast<std::size_t>(f)]) continue;
                for (int l : face_dofs(patches_[p].basis, static_cast<Face>(f)))
                    is_boundary_[static_cast<std::size_t>(primal_.l2g[p][static_cast<std::size_t>(l)])] = 1;
            }
    }

    std::size_t num_patches() const { return patches_.size(); }
    const std::vector<PatchDescription>& patches() const { return patches_; }
    const std::vector<Interface>& interfaces() const { return interfaces_; }
    const DofNumbering& primal() const { return primal_; }
    const DofNumbering& aux() const { return aux_; }
    const std::vector<char>& is_boundary() const { return is_boundary_; }
    bool is_glued(std::size_t patch, Face f) const { return glued_[patch][static_cast<std::size_t>(f)]; }
    const TensorBasis& aux_basis(std::size_t p) const { return aux_bases_[p]; }

    /// Number of local copies of every global primal / auxiliary function.
    std::vector<int> multiplicity(bool auxiliary) const {
        const DofNumbering& n = auxiliary ? aux_ : primal_;
        std::vector<int> m(static_cast<std::size_t>(n.size), 0);
        for (const auto& l : n.l2g)
            for (int g : l) ++m[static_cast<std::size_t>(g)];
        return m;
    }

    /// Area of the convex hull of all patch corners minus the total patch area;
    /// positive when the parametric domain is not convex.
    double convexity_defect() const {
        std::vector<Eigen::Vector2d> pts;
        double area = 0.0;
        for (const auto& p : patches_) {
            for (auto c : {Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 1), Eigen::Vector2d(0, 1)})
                pts.push_back(p.map(c));
            area += std::abs(p.map.det());
        }
        std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
            return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
        });
        auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
            return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
        };
        std::vector<Eigen::Vector2d> hull(2 * pts.size());
        std::size_t k = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
            hull[k++] = pts[i];
        }
        for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
            while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
            hull[k++] = pts[i];
        }
        hull.resize(k > 0 ? k - 1 : 0);
        double hull_area = 0.0;
        for (std::size_t i = 0; i < hull.size(); ++i) {
            const auto& a = hull[i];
            const auto& b = hull[(i + 1) % hull.size()];
            hull_area += a.x() * b.y() - a.y() * b.x();
        }
        return 0.5 * std::abs(hull_area) - area;
    }

private:
    void validate_interfaces() const {
        std::vector<std::array<bool, 4>> used(patches_.size(), {false, false, false, false});
        auto claim = [&](int p, Face f, const Interface& i) {
            if (p < 0 || p >= static_cast<int>(patches_.size()))
                throw InputError(describe(i) + ": patch index out of range");
            auto& u = used[static_cast<std::size_t>(p)][static_cast<std::size_t>(f)];
            if (u) throw InputError(describe(i) + ": face " + std::to_string(p) + "." + to_string(f) + " is glued twice");
            u = true;
        };
        for (const auto& i : interfaces_) {
            if (i.patch_a == i.patch_b && i.face_a == i.face_b) throw InputError(describe(i) + ": face glued to itself");
            claim(i.patch_a, i.face_a, i);
            claim(i.patch_b, i.face_b, i);
            const auto& A = patches_[static_cast<std::size_t>(i.patch_a)];
            const auto& B = patches_[static_cast<std::size_t>(i.patch_b)];
            const KnotVector& ka = face_knots(A.basis, i.face_a);
            const KnotVector& kb = face_knots(B.basis, i.face_b);
            if (!same_knots(ka, i.reversed ? flipped(kb) : kb))
                throw InputError(describe(i) + ": knot vectors along the glued faces differ");
            // The faces must coincide in the parametric domain with the stated orientation.
            auto pa0 = A.map(face_point(i.face_a, 0.0)), pa1 = A.map(face_point(i.face_a, 1.0));
            auto pb0 = B.map(face_point(i.face_b, 0.0)), pb1 = B.map(face_point(i.face_b, 1.0));
            const double tol = 1e-12 * (1.0 + pa0.norm() + pa1.norm());
            const bool same = (pa0 - pb0).norm() <= tol && (pa1 - pb1).norm() <= tol;
            const bool flip = (pa0 - pb1).norm() <= tol && (pa1 - pb0).norm() <= tol;
            if (i.reversed ? !flip : !same) {
                if (i.reversed ? same : flip) throw InputError(describe(i) + ": inconsistent orientation flag");
                throw InputError(describe(i) + ": faces do not coincide under the affine maps");
            }
        }
    }

    DofNumbering number(const std::vector<TensorBasis>& bases) const {
        std::vector<int> offset(bases.size() + 1, 0);
        for (std::size_t p = 0; p < bases.size(); ++p) offset[p + 1] = offset[p] + bases[p].size();
        DisjointSets sets(offset.back());
        for (const auto& i : interfaces_) {
            auto da = face_dofs(bases[static_cast<std::size_t>(i.patch_a)], i.face_a);
            auto db = face_dofs(bases[static_cast<std::size_t>(i.patch_b)], i.face_b);
            if (i.reversed) std::reverse(db.begin(), db.end());
            for (std::size_t k = 0; k < da.size(); ++k)
                sets.unite(offset[static_cast<std::size_t>(i.patch_a)] + da[k],
                           offset[static_cast<std::size_t>(i.patch_b)] + db[k]);
        }
        DofNumbering n;
        std::vector<int> id(static_cast<std::size_t>(offset.back()), -1);
        n.l2g.resize(bases.size());
        for (std::size_t p = 0; p < bases.size(); ++p) {
            n.l2g[p].resize(static_cast<std::size_t>(bases[p].size()));
            for (int l = 0; l < bases[p].size(); ++l) {
                int root = sets.find(offset[p] + l);
                if (id[static_cast<std::size_t>(root)] < 0) id[static_cast<std::size_t>(root)] = n.size++;
                n.l2g[p][static_cast<std::size_t>(l)] = id[static_cast<std::size_t>(root)];
            }
        }
        return n;
    }

    std::vector<PatchDescription> patches_;
    std::vector<Interface> interfaces_;
    std::vector<TensorBasis> aux_bases_;
    DofNumbering primal_, aux_;
    std::vector<std::array<bool, 4>> glued_;
    std::vector<char> is_boundary_;
};

inline PatchTopology build_topology(std::vector<PatchDescription> patches, std::vector<Interface> interfaces) {
    return PatchTopology(std::move(patches), std::move(interfaces));
}

/// Single patch on the unit square.
inline PatchTopology single_patch_topology(const TensorBasis& basis) {
    return PatchTopology({PatchDescription{basis, AffinePatchMap{}}}, {});
}

/// Weights |det A_p| / sum |det A| over the local copies of every global
/// auxiliary function.
inline RestrictionOperator build_restriction(const PatchTopology& topo) {
    RestrictionOperator r;
    r.entries.resize(static_cast<std::size_t>(topo.aux().size));
    for (std::size_t p = 0; p < topo.num_patches(); ++p) {
        const double w = std::abs(topo.patches()[p].map.det());
        const auto& l2g = topo.aux().l2g[p];
        for (std::size_t l = 0; l < l2g.size(); ++l)
            r.entries[static_cast<std::size_t>(l2g[l])].push_back({static_cast<int>(p), static_cast<int>(l), w});
    }
    for (auto& e : r.entries) {
        if (e.size() == 1) {
            e[0].weight = 1.0;
            continue;
        }
        double total = 0.0;
        for (const auto& x : e) total += x.weight;
        double head = 0.0;
        for (std::size_t k = 0; k + 1 < e.size(); ++k) {
            e[k].weight /= total;
            head += e[k].weight;
        }
        e.back().weight = 1.0 - head;
    }
    return r;
}

/// Boundary data: control points of every un-glued face, per patch and face
/// (empty for glued faces), in increasing face parameter.
using PatchBoundaryData = std::vector<std::array<std::vector<Point>, 4>>;

/// Global primal net holding the boundary coefficients (inner entries zero).
/// Checks that copies of shared boundary functions agree.
inline std::vector<Point> assemble_boundary_net(const PatchTopology& topo, const PatchBoundaryData& data,
                                                double tol = 1e-12) {
    if (data.size() != topo.num_patches()) throw InputError("boundary data must list every patch");
    std::vector<Point> net(static_cast<std::size_t>(topo.primal().size), Point::Zero());
    std::vector<char> set(net.size(), 0);
    for (std::size_t p = 0; p < topo.num_patches(); ++p)
        for (int f = 0; f < 4; ++f) {
            const Face face = static_cast<Face>(f);
            if (topo.is_glued(p, face)) continue;
            const auto dofs = face_dofs(topo.patches()[p].basis, face);
            const auto& pts = data[p][static_cast<std::size_t>(f)];
            if (pts.size() != dofs.size())
                throw InputError("patch " + std::to_string(p) + " face " + to_string(face) + ": expected " +
                                 std::to_string(dofs.size()) + " boundary control points, got " +
                                 std::to_string(pts.size()));
            for (std::size_t k = 0; k < dofs.size(); ++k) {
                const auto g = static_cast<std::size_t>(topo.primal().l2g[p][static_cast<std::size_t>(dofs[k])]);
                if (set[g] && (net[g] - pts[k]).norm() > tol * (1.0 + net[g].norm()))
                    throw InputError("patch " + std::to_string(p) + " face " + to_string(face) +
                                     ": boundary corner does not match the neighbouring face");
                net[g] = pts[k];
                set[g] = 1;
            }
        }
    return net;
}

inline MixedSystem make_multipatch_system(const PatchTopology& topo, const std::vector<Point>& boundary_net,
                                          SystemOptions options = {}) {
    std::vector<PatchDiscretization> patches;
    for (std::size_t p = 0; p < topo.num_patches(); ++p) {
        PatchDiscretization P(topo.patches()[p].basis, topo.patches()[p].map, options.quad_points);
        P.primal_l2g = topo.primal().l2g[p];
        P.aux_l2g = topo.aux().l2g[p];
        patches.push_back(std::move(P));
    }
    return MixedSystem(std::move(patches), topo.primal().size, topo.aux().size, boundary_net, topo.is_boundary(),
                       build_restriction(topo), options);
}

/// Approximate A^{-1} B s through patchwise projections and the restriction.
inline Vector multipatch_ainv_b(const MixedSystem& sys, const Vector& s) { return sys.ainv_b(s); }

struct ResidualVector {
    Vector linear, nonlinear;
    double norm() const { return std::sqrt(linear.squaredNorm() + nonlinear.squaredNorm()); }
};

inline ResidualVector multipatch_residual(const MixedSystem& sys, const Vector& d, const Vector& c) {
    return {sys.residual_linear(d, c), sys.residual_nonlinear(d, c)};
}

/// Local spline map of patch p (in reference coordinates) for the inner coefficients c.
inline SplineMap patch_map(const PatchTopology& topo, const MixedSystem& sys, std::size_t p, const Vector& c) {
    SplineMap m;
    m.basis = topo.patches()[p].basis;
    m.control_points = sys.patch_net(p, c);
    classify_indices(m.basis, m.boundary_indices, m.inner_indices);
    return m;
}

/// Starting inner coefficients: the Coons patch for an isolated patch, and
/// otherwise the discrete harmonic extension of the boundary net over the
/// control-net graph.
inline Vector multipatch_initial_guess(const PatchTopology& topo, const MixedSystem& sys) {
    if (topo.num_patches() == 1 && topo.interfaces().empty()) {
        SplineMap m = patch_map(topo, sys, 0, Vector::Zero(sys.c_size()));
        return transfinite_initial_guess(m);
    }
    const int m = sys.num_inner();
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m, 2);
    const auto& net = sys.boundary_net();
    auto edge = [&](int ga, int gb) {
        const int ka = sys.inner_of_global(ga), kb = sys.inner_of_global(gb);
        for (auto [k, other, kother] : {std::tuple{ka, gb, kb}, std::tuple{kb, ga, ka}}) {
            if (k < 0) continue;
            trip.emplace_back(k, k, 1.0);
            if (kother >= 0)
                trip.emplace_back(k, kother, -1.0);
            else
                rhs.row(k) += net[static_cast<std::size_t>(other)].transpose();
        }
    };
    for (std::size_t p = 0; p < topo.num_patches(); ++p) {
        const auto& b = topo.patches()[p].basis;
        const auto& l2g = topo.primal().l2g[p];
        for (int i = 0; i < b.n_xi(); ++i)
            for (int j = 0; j < b.n_eta(); ++j) {
                const int g = l2g[static_cast<std::size_t>(b.index(i, j))];
                if (i + 1 < b.n_xi()) edge(g, l2g[static_cast<std::size_t>(b.index(i + 1, j))]);
                if (j + 1 < b.n_eta()) edge(g, l2g[static_cast<std::size_t>(b.index(i, j + 1))]);
            }
    }
    Eigen::SparseMatrix<double> L(m, m);
    L.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(L);
    if (solver.info() != Eigen::Success) throw InputError("control-net graph is disconnected from the boundary");
    Eigen::MatrixXd sol = solver.solve(rhs);
    Vector c(2 * m);
    c.head(m) = sol.col(0);
    c.tail(m) = sol.col(1);
    return c;
}

/// Deliberately folded start: `c` dilated about the boundary centroid.
inline Vector folded_initial_guess(const MixedSystem& sys, const Vector& c, double factor = 1.5) {
    Point centre = Point::Zero();
    for (int g : sys.boundary_global()) centre += sys.boundary_net()[static_cast<std::size_t>(g)];
    centre /= static_cast<double>(sys.boundary_global().size());
    const int m = sys.num_inner();
    Vector out = c;
    for (int k = 0; k < m; ++k) {
        out(k) = centre.x() + factor * (c(k) - centre.x());
        out(m + k) = centre.y() + factor * (c(m + k) - centre.y());
    }
    return out;
}

/// Sampled det J of patch p with respect to the parametric coordinates.
inline BijectivityReport patch_bijectivity(const SplineMap& local, const AffinePatchMap& map, int samples = 5) {
    auto rep = sampled_bijectivity(local, samples);
    if (map.is_identity()) return rep;
    const double inv = 1.0 / map.det();
    BijectivityReport out;
    out.samples = rep.samples;
    auto bx = local.basis.kv_xi.breakpoints(), be = local.basis.kv_eta.breakpoints();
    for (std::size_t ex = 0; ex + 1 < bx.size(); ++ex)
        for (std::size_t ey = 0; ey + 1 < be.size(); ++ey)
            for (int a = 0; a < samples; ++a)
                for (int b = 0; b < samples; ++b) {
                    double s = bx[ex] + (bx[ex + 1] - bx[ex]) * (a + 0.5) / samples;
                    double t = be[ey] + (be[ey + 1] - be[ey]) * (b + 0.5) / samples;
                    double J = metric_at(local, s, t).detJ * inv;
                    out.min_detJ = std::min(out.min_detJ, J);
                    if (!(J > 0.0)) {
                        ++out.fold_count;
                        out.folds.push_back({s, t, J});
                    }
                }
    return out;
}

/// Winslow functional of the composite map over the parametric domain.
inline double patch_winslow(const SplineMap& local, const AffinePatchMap& map, int quad_order) {
    if (map.is_identity()) return winslow(local, quad_order);
    const Eigen::Matrix2d T = map.gradient_transform();
    const double jac = std::abs(map.det());
    double w = 0.0;
    for_each_gauss_point(local.basis, quad_order, [&](double s, double t, double wq) {
        auto m = metric_at(local, s, t);
        Point x_xi = T(0, 0) * m.x_xi + T(0, 1) * m.x_eta;
        Point x_eta = T(1, 0) * m.x_xi + T(1, 1) * m.x_eta;
        auto g = metric_from_derivatives(x_xi, x_eta);
        if (!(g.detJ > 0.0)) throw NonbijectiveError("Winslow functional undefined: det J <= 0 at a quadrature point");
        w += wq * jac * (g.g11 + g.g22) / g.detJ;
    });
    return w;
}

struct MultipatchSolution {
    std::vector<SplineMap> maps;  // per patch, reference coordinates
    Vector c;
    SolverReport report;
};

/// Solves on a patch topology from the inner coefficients `c0`.
inline MultipatchSolution multipatch_solve(const PatchTopology& topo, const MixedSystem& sys, const Vector& c0,
                                           const SolverConfig& cfg) {
    MultipatchSolution out;
    auto r = newton_solve(sys, c0, cfg);
    out.c = r.c;
    out.report = r.report;
    for (std::size_t p = 0; p < topo.num_patches(); ++p) out.maps.push_back(patch_map(topo, sys, p, out.c));
    return out;
}

}  // namespace harmap
