#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "linalg.hpp"
#include "mapping.hpp"
#include "splines.hpp"

namespace harmap {

/// Which auxiliary fields are introduced: u ~ x_xi and v ~ x_eta (full), or
/// only one of them.
enum class AuxMode { full, xi_only, eta_only };

inline const char* to_string(AuxMode m) {
    switch (m) {
        case AuxMode::full: return "full";
        case AuxMode::xi_only: return "xi";
        case AuxMode::eta_only: return "eta";
    }
    return "full";
}

inline AuxMode aux_mode_from_string(const std::string& s) {
    if (s == "full") return AuxMode::full;
    if (s == "xi") return AuxMode::xi_only;
    if (s == "eta") return AuxMode::eta_only;
    throw InputError("unknown mode '" + s + "' (expected full, xi or eta)");
}

inline int aux_block_count(AuxMode m) { return m == AuxMode::full ? 4 : 2; }

/// Affine map s -> A s + b from the reference square onto a patch of the
/// parametric domain.
struct AffinePatchMap {
    Eigen::Matrix2d A = Eigen::Matrix2d::Identity();
    Eigen::Vector2d b = Eigen::Vector2d::Zero();

    AffinePatchMap() = default;
    AffinePatchMap(const Eigen::Matrix2d& a, const Eigen::Vector2d& t) : A(a), b(t) {
        if (std::abs(A.determinant()) < 1e-14) throw InputError("affine patch map is singular");
    }

    double det() const { return A.determinant(); }
    bool is_identity() const { return A == Eigen::Matrix2d::Identity() && b.isZero(0.0); }
    Eigen::Vector2d operator()(const Eigen::Vector2d& s) const { return A * s + b; }
    /// Maps reference gradients to parametric gradients: grad_xi = T grad_s.
    Eigen::Matrix2d gradient_transform() const { return A.inverse().transpose(); }
};

/// Univariate Gauss points on every element of the fine (auxiliary) grid with
/// primal and auxiliary basis tables.
struct UnivariateQuadrature {
    int points = 0;
    std::vector<double> x, w;         // flattened (element, point)
    std::vector<BasisTable> primal;   // derivatives up to 2
    std::vector<BasisTable> aux;      // derivatives up to 1
    int num_elements() const { return points ? static_cast<int>(x.size()) / points : 0; }
};

struct QuadratureCache {
    UnivariateQuadrature xi, eta;
};

inline UnivariateQuadrature build_quadrature_1d(const KnotVector& primal, const KnotVector& aux, int points) {
    UnivariateQuadrature q;
    q.points = points;
    auto rule = gauss_legendre(points);
    auto b = aux.breakpoints();
    for (double k : primal.breakpoints())
        if (!std::binary_search(b.begin(), b.end(), k))
            throw InputError("auxiliary knot vector must contain every primal breakpoint");
    for (std::size_t e = 0; e + 1 < b.size(); ++e) {
        const double h = b[e + 1] - b[e];
        for (int k = 0; k < points; ++k) {
            double x = b[e] + h * rule.points[static_cast<std::size_t>(k)];
            q.x.push_back(x);
            q.w.push_back(h * rule.weights[static_cast<std::size_t>(k)]);
            q.primal.push_back(eval_univariate(primal, x, 2));
            q.aux.push_back(eval_univariate(aux, x, 1));
        }
    }
    return q;
}

inline QuadratureCache build_quadrature(const TensorBasis& primal, const TensorBasis& aux, int points) {
    return {build_quadrature_1d(primal.kv_xi, aux.kv_xi, points), build_quadrature_1d(primal.kv_eta, aux.kv_eta, points)};
}

inline int default_quad_points(const TensorBasis& primal) {
    return std::max(primal.kv_xi.degree(), primal.kv_eta.degree()) + 1;
}

inline SparseMatrix kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    std::vector<Eigen::Triplet<double>> trip;
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) {
            if (a(i, j) == 0.0) continue;
            for (int k = 0; k < b.rows(); ++k)
                for (int l = 0; l < b.cols(); ++l)
                    if (b(k, l) != 0.0) trip.emplace_back(i * b.rows() + k, j * b.cols() + l, a(i, j) * b(k, l));
        }
    SparseMatrix m(a.rows() * b.rows(), a.cols() * b.cols());
    m.setFromTriplets(trip.begin(), trip.end());
    return m;
}

/// Reference-square discretization of one patch: bases, quadrature, and the
/// separable constant matrices.
struct PatchDiscretization {
    TensorBasis primal;
    TensorBasis aux;
    AffinePatchMap affine;
    QuadratureCache quad;
    Eigen::MatrixXd mass_xi, mass_eta;  // univariate auxiliary mass matrices
    KronSolver mass_solver;             // one block of mass_xi (x) mass_eta
    SparseMatrix mass;                  // aux x aux
    SparseMatrix deriv_xi, deriv_eta;   // aux x primal: int wbar_i w_j,xi (parametric derivatives, unscaled)
    Eigen::Matrix2d transform = Eigen::Matrix2d::Identity();
    double jacobian = 1.0;  // |det A|
    bool identity = true;
    std::vector<int> primal_l2g, aux_l2g;

    PatchDiscretization() = default;

    PatchDiscretization(TensorBasis primal_basis, AffinePatchMap map, int quad_points = 0)
        : primal(std::move(primal_basis)), aux(h_refine(primal)), affine(map) {
        const int qp = quad_points > 0 ? quad_points : default_quad_points(primal);
        quad = build_quadrature(primal, aux, qp);
        identity = affine.is_identity();
        if (!identity) {
            transform = affine.gradient_transform();
            jacobian = std::abs(affine.det());
        }
        mass_xi = gram_1d(aux.kv_xi, 0, aux.kv_xi, 0, aux.kv_xi, qp);
        mass_eta = gram_1d(aux.kv_eta, 0, aux.kv_eta, 0, aux.kv_eta, qp);
        mass_solver = KronSolver(cholesky_banded(mass_xi, aux.kv_xi.degree()),
                                 cholesky_banded(mass_eta, aux.kv_eta.degree()), 1);
        mass = kron(mass_xi, mass_eta);
        Eigen::MatrixXd c0x = gram_1d(aux.kv_xi, 0, primal.kv_xi, 0, aux.kv_xi, qp);
        Eigen::MatrixXd c1x = gram_1d(aux.kv_xi, 0, primal.kv_xi, 1, aux.kv_xi, qp);
        Eigen::MatrixXd c0e = gram_1d(aux.kv_eta, 0, primal.kv_eta, 0, aux.kv_eta, qp);
        Eigen::MatrixXd c1e = gram_1d(aux.kv_eta, 0, primal.kv_eta, 1, aux.kv_eta, qp);
        SparseMatrix ds = kron(c1x, c0e), dt = kron(c0x, c1e);
        if (identity) {
            deriv_xi = ds;
            deriv_eta = dt;
        } else {
            deriv_xi = transform(0, 0) * ds + transform(0, 1) * dt;
            deriv_eta = transform(1, 0) * ds + transform(1, 1) * dt;
        }
        primal_l2g.resize(static_cast<std::size_t>(primal.size()));
        aux_l2g.resize(static_cast<std::size_t>(aux.size()));
        for (int i = 0; i < primal.size(); ++i) primal_l2g[static_cast<std::size_t>(i)] = i;
        for (int i = 0; i < aux.size(); ++i) aux_l2g[static_cast<std::size_t>(i)] = i;
    }

    int n_primal() const { return primal.size(); }
    int n_aux() const { return aux.size(); }
};

/// Contributors of one global auxiliary function: (patch, local index, weight).
struct RestrictionEntry {
    int patch = 0;
    int local = 0;
    double weight = 1.0;
};

/// Maps patchwise-discontinuous auxiliary coefficients onto the coupled
/// auxiliary basis by det-weighted averaging.
struct RestrictionOperator {
    std::vector<std::vector<RestrictionEntry>> entries;  // per global auxiliary function

    bool coupled() const {
        return std::any_of(entries.begin(), entries.end(), [](const auto& e) { return e.size() > 1; });
    }
};

struct SystemOptions {
    AuxMode mode = AuxMode::full;
    double chi = 0.5;
    double mu = 1e-4;
    int quad_points = 0;  // 0: max degree + 1
    /// Sums element contributions in reverse order; used to check that the
    /// residuals do not depend on the reduction order beyond rounding.
    bool reverse_element_order = false;
};

/// The mixed system on one or several patches.
///
/// State vectors:
///   c  inner primal coefficients, packed [x_0..x_{m-1}, y_0..y_{m-1}];
///   d  auxiliary coefficients, blocks [u_x, u_y, v_x, v_y] (full mode) or
///      [u_x, u_y] / [v_x, v_y] (single-direction modes), each of global
///      auxiliary dimension.
/// Residual R = (R_L, R_N) with R_L = A d - B c - B_bnd c_bnd.
class MixedSystem {
public:
    MixedSystem(std::vector<PatchDiscretization> patches, int n_primal, int n_aux, std::vector<Point> boundary_net,
                std::vector<char> is_boundary, RestrictionOperator restriction, SystemOptions options)
        : patches_(std::move(patches)), n_primal_(n_primal), n_aux_(n_aux), net_(std::move(boundary_net)),
          restriction_(std::move(restriction)), opts_(options) {
        if (!(opts_.mu > 0.0)) throw InputError("mu must be positive");
        if (!(opts_.chi >= 0.0 && opts_.chi <= 1.0)) throw InputError("chi must lie in [0, 1]");
        if (static_cast<int>(net_.size()) != n_primal_ || static_cast<int>(is_boundary.size()) != n_primal_)
            throw InputError("boundary net size does not match the primal dimension");
        inner_of_global_.assign(static_cast<std::size_t>(n_primal_), -1);
        for (int g = 0; g < n_primal_; ++g)
            if (!is_boundary[static_cast<std::size_t>(g)]) {
                inner_of_global_[static_cast<std::size_t>(g)] = static_cast<int>(inner_global_.size());
                inner_global_.push_back(g);
            } else {
                boundary_global_.push_back(g);
            }
        coupled_ = restriction_.coupled();
        if (opts_.mode != AuxMode::full) validate_single_direction();
    }

    const SystemOptions& options() const { return opts_; }
    AuxMode mode() const { return opts_.mode; }
    int aux_blocks() const { return aux_block_count(opts_.mode); }
    int n_aux() const { return n_aux_; }
    int n_primal() const { return n_primal_; }
    int num_inner() const { return static_cast<int>(inner_global_.size()); }
    int d_size() const { return aux_blocks() * n_aux_; }
    int c_size() const { return 2 * num_inner(); }
    const std::vector<PatchDiscretization>& patches() const { return patches_; }
    const RestrictionOperator& restriction() const { return restriction_; }
    bool coupled() const { return coupled_; }
    const std::vector<int>& inner_global() const { return inner_global_; }
    const std::vector<int>& boundary_global() const { return boundary_global_; }
    int inner_of_global(int g) const { return inner_of_global_[static_cast<std::size_t>(g)]; }
    /// Global primal net with boundary entries set; inner entries are placeholders.
    const std::vector<Point>& boundary_net() const { return net_; }

    /// Field (0 = u, 1 = v) of auxiliary block `b`.
    int block_field(int b) const {
        if (opts_.mode == AuxMode::full) return b / 2;
        return opts_.mode == AuxMode::xi_only ? 0 : 1;
    }
    int block_component(int b) const { return b % 2; }

    /// Global primal net for the given inner coefficients.
    std::vector<Point> full_net(const Vector& c) const {
        check_c(c);
        std::vector<Point> net = net_;
        const int m = num_inner();
        for (int k = 0; k < m; ++k) net[static_cast<std::size_t>(inner_global_[k])] = Point(c(k), c(m + k));
        return net;
    }

    Vector residual_linear(const Vector& d, const Vector& c) const {
        check_d(d);
        return apply_A(d) - primal_derivative_rhs(c, true);
    }

    /// A d.
    Vector apply_A(const Vector& d) const {
        check_d(d);
        Vector out = Vector::Zero(d_size());
        for (std::size_t p = 0; p < patches_.size(); ++p) {
            const auto& P = patches_[p];
            for (int b = 0; b < aux_blocks(); ++b) {
                Vector loc = P.mass * gather_aux(P, d, b);
                if (!P.identity) loc *= P.jacobian;
                scatter_aux(P, loc, out, b);
            }
        }
        return out;
    }

    /// B s (inner coefficients only).
    Vector apply_B(const Vector& s) const { return primal_derivative_rhs(s, false); }

    /// B c + B_bnd c_bnd, or B s when `with_boundary` is false.
    Vector primal_derivative_rhs(const Vector& c, bool with_boundary) const {
        check_c(c);
        Vector out = Vector::Zero(d_size());
        for (const auto& P : patches_) {
            auto [lx, ly] = gather_primal(P, c, with_boundary);
            for (int b = 0; b < aux_blocks(); ++b) {
                const SparseMatrix& D = block_field(b) == 0 ? P.deriv_xi : P.deriv_eta;
                Vector loc = D * (block_component(b) == 0 ? lx : ly);
                if (!P.identity) loc *= P.jacobian;
                scatter_aux(P, loc, out, b);
            }
        }
        return out;
    }

    /// Auxiliary projection of the primal derivatives: exactly
    /// A^{-1}(B c + B_bnd c_bnd) on uncoupled systems; on coupled systems the
    /// patchwise projections are merged by the restriction operator.
    Vector project(const Vector& c, bool with_boundary) const {
        check_c(c);
        Vector out = Vector::Zero(d_size());
        std::vector<std::vector<Vector>> local(patches_.size());
        for (std::size_t p = 0; p < patches_.size(); ++p) {
            const auto& P = patches_[p];
            auto [lx, ly] = gather_primal(P, c, with_boundary);
            for (int b = 0; b < aux_blocks(); ++b) {
                const SparseMatrix& D = block_field(b) == 0 ? P.deriv_xi : P.deriv_eta;
                Vector g = D * (block_component(b) == 0 ? lx : ly);
                P.mass_solver.solve_block_inplace(g.data());
                local[p].push_back(std::move(g));
            }
        }
        for (int b = 0; b < aux_blocks(); ++b) restrict_into(local, b, out);
        return out;
    }

    /// Restriction-based approximation of A^{-1} B s.
    Vector ainv_b(const Vector& s) const { return project(s, false); }

    /// A^{-1} t. Direct separable solve when uncoupled, otherwise PCG
    /// preconditioned with the patchwise solve and restriction.
    Vector solve_aux(const Vector& t, double tol = 1e-13) const {
        check_d(t);
        if (!coupled_) {
            Vector out = Vector::Zero(d_size());
            for (const auto& P : patches_)
                for (int b = 0; b < aux_blocks(); ++b) {
                    Vector g = gather_aux(P, t, b);
                    P.mass_solver.solve_block_inplace(g.data());
                    if (!P.identity) g /= P.jacobian;
                    scatter_aux(P, g, out, b);
                }
            return out;
        }
        Vector out(d_size());
        for (int b = 0; b < aux_blocks(); ++b) {
            auto apply = [&](const Vector& x) { return apply_mass_block(x); };
            auto precond = [&](const Vector& r) { return precondition_block(r); };
            auto res = pcg(apply, precond, t.segment(static_cast<Eigen::Index>(b) * n_aux_, n_aux_), tol, 500);
            out.segment(static_cast<Eigen::Index>(b) * n_aux_, n_aux_) = res.solution;
        }
        return out;
    }

    Vector residual_nonlinear(const Vector& d, const Vector& c) const {
        check_d(d);
        check_c(c);
        const int m = num_inner();
        Vector R = Vector::Zero(2 * m);
        std::vector<double> nx, ny, dloc;
        for (const auto& P : patches_) {
            const int np = P.n_primal(), na = P.n_aux();
            nx.resize(static_cast<std::size_t>(np));
            ny.resize(static_cast<std::size_t>(np));
            for (int a = 0; a < np; ++a) {
                int g = P.primal_l2g[static_cast<std::size_t>(a)];
                int k = inner_of_global_[static_cast<std::size_t>(g)];
                nx[static_cast<std::size_t>(a)] = k >= 0 ? c(k) : net_[static_cast<std::size_t>(g)].x();
                ny[static_cast<std::size_t>(a)] = k >= 0 ? c(m + k) : net_[static_cast<std::size_t>(g)].y();
            }
            const int nb = aux_blocks();
            dloc.resize(static_cast<std::size_t>(nb * na));
            for (int b = 0; b < nb; ++b)
                for (int a = 0; a < na; ++a)
                    dloc[static_cast<std::size_t>(b * na + a)] =
                        d(static_cast<Eigen::Index>(b) * n_aux_ + P.aux_l2g[static_cast<std::size_t>(a)]);
            nonlinear_patch(P, nx, ny, dloc, R);
        }
        return R;
    }

    /// Global sparse A, B and B_bnd (columns of B_bnd follow boundary_global()).
    struct ConstantBlocks {
        SparseMatrix A, B, B_bnd;
    };

    ConstantBlocks assemble_constant_blocks() const {
        const int m = num_inner();
        std::vector<int> bnd_pos(static_cast<std::size_t>(n_primal_), -1);
        for (std::size_t k = 0; k < boundary_global_.size(); ++k)
            bnd_pos[static_cast<std::size_t>(boundary_global_[k])] = static_cast<int>(k);
        std::vector<Eigen::Triplet<double>> ta, tb, tbb;
        for (const auto& P : patches_) {
            const double s = P.identity ? 1.0 : P.jacobian;
            for (int blk = 0; blk < aux_blocks(); ++blk) {
                const int roff = blk * n_aux_;
                for (int r = 0; r < P.mass.outerSize(); ++r)
                    for (SparseMatrix::InnerIterator it(P.mass, r); it; ++it)
                        ta.emplace_back(roff + P.aux_l2g[static_cast<std::size_t>(r)],
                                        roff + P.aux_l2g[static_cast<std::size_t>(it.col())], s * it.value());
                const SparseMatrix& D = block_field(blk) == 0 ? P.deriv_xi : P.deriv_eta;
                const int comp = block_component(blk);
                for (int r = 0; r < D.outerSize(); ++r)
                    for (SparseMatrix::InnerIterator it(D, r); it; ++it) {
                        int g = P.primal_l2g[static_cast<std::size_t>(it.col())];
                        int row = roff + P.aux_l2g[static_cast<std::size_t>(r)];
                        int k = inner_of_global_[static_cast<std::size_t>(g)];
                        if (k >= 0)
                            tb.emplace_back(row, comp * m + k, s * it.value());
                        else
                            tbb.emplace_back(row, comp * static_cast<int>(boundary_global_.size()) +
                                                      bnd_pos[static_cast<std::size_t>(g)],
                                             s * it.value());
                    }
            }
        }
        ConstantBlocks cb;
        cb.A.resize(d_size(), d_size());
        cb.A.setFromTriplets(ta.begin(), ta.end());
        cb.B.resize(d_size(), c_size());
        cb.B.setFromTriplets(tb.begin(), tb.end());
        cb.B_bnd.resize(d_size(), 2 * static_cast<int>(boundary_global_.size()));
        cb.B_bnd.setFromTriplets(tbb.begin(), tbb.end());
        return cb;
    }

    /// Boundary coefficients packed [x..., y...] in boundary_global() order.
    Vector boundary_coefficients() const {
        const auto nb = static_cast<Eigen::Index>(boundary_global_.size());
        Vector v(2 * nb);
        for (Eigen::Index k = 0; k < nb; ++k) {
            v(k) = net_[static_cast<std::size_t>(boundary_global_[static_cast<std::size_t>(k)])].x();
            v(nb + k) = net_[static_cast<std::size_t>(boundary_global_[static_cast<std::size_t>(k)])].y();
        }
        return v;
    }

    /// Local control net of patch p.
    std::vector<Point> patch_net(std::size_t p, const Vector& c) const {
        auto net = full_net(c);
        const auto& P = patches_[p];
        std::vector<Point> out(static_cast<std::size_t>(P.n_primal()));
        for (int a = 0; a < P.n_primal(); ++a)
            out[static_cast<std::size_t>(a)] = net[static_cast<std::size_t>(P.primal_l2g[static_cast<std::size_t>(a)])];
        return out;
    }

    /// Smallest denominator g11 + g22 + mu over all quadrature points.
    double min_denominator(const Vector& c) const {
        double mn = std::numeric_limits<double>::infinity();
        for (std::size_t p = 0; p < patches_.size(); ++p) {
            const auto& P = patches_[p];
            auto net = patch_net(p, c);
            const auto& qx = P.quad.xi;
            const auto& qe = P.quad.eta;
            for (std::size_t i = 0; i < qx.x.size(); ++i)
                for (std::size_t j = 0; j < qe.x.size(); ++j) {
                    Point xs = Point::Zero(), xt = Point::Zero();
                    const auto& tx = qx.primal[i];
                    const auto& te = qe.primal[j];
                    for (int a = 0; a < tx.values.cols(); ++a)
                        for (int bb = 0; bb < te.values.cols(); ++bb) {
                            const Point& cp = net[static_cast<std::size_t>(P.primal.index(tx.first + a, te.first + bb))];
                            xs += tx.values(1, a) * te.values(0, bb) * cp;
                            xt += tx.values(0, a) * te.values(1, bb) * cp;
                        }
                    Point dxi = P.identity ? xs : Point(P.transform(0, 0) * xs + P.transform(0, 1) * xt);
                    Point deta = P.identity ? xt : Point(P.transform(1, 0) * xs + P.transform(1, 1) * xt);
                    mn = std::min(mn, dxi.squaredNorm() + deta.squaredNorm() + opts_.mu);
                }
        }
        return mn;
    }

private:
    void check_c(const Vector& c) const {
        if (c.size() != c_size()) throw InputError("primal coefficient vector has wrong length");
    }
    void check_d(const Vector& d) const {
        if (d.size() != d_size()) throw InputError("auxiliary coefficient vector has wrong length");
    }

    void validate_single_direction() const {
        if (patches_.size() != 1 || !patches_.front().identity)
            throw InputError("single-direction mode is only available for single-patch problems");
        const auto& b = patches_.front().primal;
        const KnotVector& other = opts_.mode == AuxMode::xi_only ? b.kv_eta : b.kv_xi;
        const char* dir = opts_.mode == AuxMode::xi_only ? "eta" : "xi";
        if (other.degree() < 2 || other.max_interior_multiplicity() > other.degree() - 1)
            throw InputError(std::string("single-direction mode requires a C1 primal basis in the ") + dir +
                             " direction");
    }

    Vector gather_aux(const PatchDiscretization& P, const Vector& v, int block) const {
        Vector loc(P.n_aux());
        const Eigen::Index off = static_cast<Eigen::Index>(block) * n_aux_;
        for (int a = 0; a < P.n_aux(); ++a) loc(a) = v(off + P.aux_l2g[static_cast<std::size_t>(a)]);
        return loc;
    }

    void scatter_aux(const PatchDiscretization& P, const Vector& loc, Vector& out, int block) const {
        const Eigen::Index off = static_cast<Eigen::Index>(block) * n_aux_;
        for (int a = 0; a < P.n_aux(); ++a) out(off + P.aux_l2g[static_cast<std::size_t>(a)]) += loc(a);
    }

    std::pair<Vector, Vector> gather_primal(const PatchDiscretization& P, const Vector& c, bool with_boundary) const {
        const int m = num_inner();
        Vector lx(P.n_primal()), ly(P.n_primal());
        for (int a = 0; a < P.n_primal(); ++a) {
            int g = P.primal_l2g[static_cast<std::size_t>(a)];
            int k = inner_of_global_[static_cast<std::size_t>(g)];
            if (k >= 0) {
                lx(a) = c(k);
                ly(a) = c(m + k);
            } else if (with_boundary) {
                lx(a) = net_[static_cast<std::size_t>(g)].x();
                ly(a) = net_[static_cast<std::size_t>(g)].y();
            } else {
                lx(a) = 0.0;
                ly(a) = 0.0;
            }
        }
        return {lx, ly};
    }

    /// Merges patchwise auxiliary coefficients of one block into `out`.
    void restrict_into(const std::vector<std::vector<Vector>>& local, int b, Vector& out) const {
        const Eigen::Index off = static_cast<Eigen::Index>(b) * n_aux_;
        for (int i = 0; i < n_aux_; ++i) {
            const auto& ent = restriction_.entries[static_cast<std::size_t>(i)];
            if (ent.size() == 1) {
                out(off + i) = local[static_cast<std::size_t>(ent[0].patch)][static_cast<std::size_t>(b)](ent[0].local);
                continue;
            }
            double s = 0.0;
            for (const auto& e : ent) s += e.weight * local[static_cast<std::size_t>(e.patch)][static_cast<std::size_t>(b)](e.local);
            out(off + i) = s;
        }
    }

    Vector apply_mass_block(const Vector& x) const {
        Vector out = Vector::Zero(n_aux_);
        for (const auto& P : patches_) {
            Vector loc(P.n_aux());
            for (int a = 0; a < P.n_aux(); ++a) loc(a) = x(P.aux_l2g[static_cast<std::size_t>(a)]);
            Vector y = P.mass * loc;
            if (!P.identity) y *= P.jacobian;
            for (int a = 0; a < P.n_aux(); ++a) out(P.aux_l2g[static_cast<std::size_t>(a)]) += y(a);
        }
        return out;
    }

    /// R D^{-1} R^T: distribute with the restriction weights, solve patchwise, restrict.
    Vector precondition_block(const Vector& r) const {
        std::vector<Vector> loc(patches_.size());
        for (std::size_t p = 0; p < patches_.size(); ++p) loc[p] = Vector::Zero(patches_[p].n_aux());
        for (int i = 0; i < n_aux_; ++i)
            for (const auto& e : restriction_.entries[static_cast<std::size_t>(i)])
                loc[static_cast<std::size_t>(e.patch)](e.local) += e.weight * r(i);
        for (std::size_t p = 0; p < patches_.size(); ++p) {
            patches_[p].mass_solver.solve_block_inplace(loc[p].data());
            if (!patches_[p].identity) loc[p] /= patches_[p].jacobian;
        }
        Vector out(n_aux_);
        for (int i = 0; i < n_aux_; ++i) {
            double s = 0.0;
            for (const auto& e : restriction_.entries[static_cast<std::size_t>(i)])
                s += e.weight * loc[static_cast<std::size_t>(e.patch)](e.local);
            out(i) = s;
        }
        return out;
    }

    void nonlinear_patch(const PatchDiscretization& P, const std::vector<double>& nx, const std::vector<double>& ny,
                         const std::vector<double>& dloc, Vector& R) const {
        const int m = num_inner();
        const auto& qx = P.quad.xi;
        const auto& qe = P.quad.eta;
        const int px = P.primal.kv_xi.degree(), pe = P.primal.kv_eta.degree();
        const int ax = P.aux.kv_xi.degree(), ae = P.aux.kv_eta.degree();
        const int n_eta = P.primal.n_eta(), na_eta = P.aux.n_eta();
        const int na = P.n_aux();
        const AuxMode mode = opts_.mode;
        const double chi = opts_.chi, mu = opts_.mu;
        const bool second = mode != AuxMode::full;
        const Eigen::Matrix2d& T = P.transform;
        const int nex = qx.num_elements(), ney = qe.num_elements();
        const int nqx = qx.points, nqy = qe.points;

        for (int eidx = 0; eidx < nex * ney; ++eidx) {
            const int e = opts_.reverse_element_order ? nex * ney - 1 - eidx : eidx;
            const int ex = e / ney, ey = e % ney;
            for (int iq = 0; iq < nqx; ++iq) {
                const auto qi = static_cast<std::size_t>(ex * nqx + iq);
                const BasisTable& tx = qx.primal[qi];
                const BasisTable& ux = qx.aux[qi];
                for (int jq = 0; jq < nqy; ++jq) {
                    const auto qj = static_cast<std::size_t>(ey * nqy + jq);
                    const BasisTable& te = qe.primal[qj];
                    const BasisTable& ue = qe.aux[qj];

                    // Primal derivatives in reference coordinates.
                    double xs[2] = {0, 0}, xt[2] = {0, 0}, xss[2] = {0, 0}, xst[2] = {0, 0}, xtt[2] = {0, 0};
                    for (int a = 0; a <= px; ++a) {
                        const int row = (tx.first + a) * n_eta + te.first;
                        for (int b = 0; b <= pe; ++b) {
                            const auto idx = static_cast<std::size_t>(row + b);
                            const double cx = nx[idx], cy = ny[idx];
                            const double ws = tx.values(1, a) * te.values(0, b);
                            const double wt = tx.values(0, a) * te.values(1, b);
                            xs[0] += ws * cx, xs[1] += ws * cy;
                            xt[0] += wt * cx, xt[1] += wt * cy;
                            if (second) {
                                const double wss = tx.values(2, a) * te.values(0, b);
                                const double wst = tx.values(1, a) * te.values(1, b);
                                const double wtt = tx.values(0, a) * te.values(2, b);
                                xss[0] += wss * cx, xss[1] += wss * cy;
                                xst[0] += wst * cx, xst[1] += wst * cy;
                                xtt[0] += wtt * cx, xtt[1] += wtt * cy;
                            }
                        }
                    }
                    // Auxiliary derivatives: field f, component k.
                    double fs[2][2] = {{0, 0}, {0, 0}}, ft[2][2] = {{0, 0}, {0, 0}};
                    const int nb = aux_blocks();
                    for (int a = 0; a <= ax; ++a) {
                        const int row = (ux.first + a) * na_eta + ue.first;
                        for (int b = 0; b <= ae; ++b) {
                            const int idx = row + b;
                            const double ws = ux.values(1, a) * ue.values(0, b);
                            const double wt = ux.values(0, a) * ue.values(1, b);
                            for (int blk = 0; blk < nb; ++blk) {
                                const double dv = dloc[static_cast<std::size_t>(blk * na + idx)];
                                const int f = block_field(blk), k = blk % 2;
                                fs[f][k] += ws * dv;
                                ft[f][k] += wt * dv;
                            }
                        }
                    }

                    double x_xi[2], x_eta[2], u_xi[2], u_eta[2], v_xi[2], v_eta[2];
                    for (int k = 0; k < 2; ++k) {
                        if (P.identity) {
                            x_xi[k] = xs[k], x_eta[k] = xt[k];
                            u_xi[k] = fs[0][k], u_eta[k] = ft[0][k];
                            v_xi[k] = fs[1][k], v_eta[k] = ft[1][k];
                        } else {
                            x_xi[k] = T(0, 0) * xs[k] + T(0, 1) * xt[k];
                            x_eta[k] = T(1, 0) * xs[k] + T(1, 1) * xt[k];
                            u_xi[k] = T(0, 0) * fs[0][k] + T(0, 1) * ft[0][k];
                            u_eta[k] = T(1, 0) * fs[0][k] + T(1, 1) * ft[0][k];
                            v_xi[k] = T(0, 0) * fs[1][k] + T(0, 1) * ft[1][k];
                            v_eta[k] = T(1, 0) * fs[1][k] + T(1, 1) * ft[1][k];
                        }
                    }
                    const double g11 = x_xi[0] * x_xi[0] + x_xi[1] * x_xi[1];
                    const double g12 = x_xi[0] * x_eta[0] + x_xi[1] * x_eta[1];
                    const double g22 = x_eta[0] * x_eta[0] + x_eta[1] * x_eta[1];
                    const double denom = g11 + g22 + mu;
                    double U[2];
                    for (int k = 0; k < 2; ++k) {
                        double num;
                        switch (mode) {
                            case AuxMode::full:
                                num = g22 * u_xi[k] - 2.0 * g12 * (chi * u_eta[k] + (1.0 - chi) * v_xi[k]) +
                                      g11 * v_eta[k];
                                break;
                            case AuxMode::xi_only:
                                num = g22 * u_xi[k] - 2.0 * g12 * (chi * u_eta[k] + (1.0 - chi) * xst[k]) +
                                      g11 * xtt[k];
                                break;
                            default:
                                num = g22 * xss[k] - 2.0 * g12 * (chi * xst[k] + (1.0 - chi) * v_xi[k]) +
                                      g11 * v_eta[k];
                                break;
                        }
                        U[k] = num / denom;
                    }
                    double w = qx.w[qi] * qe.w[qj];
                    if (!P.identity) w *= P.jacobian;
                    for (int a = 0; a <= px; ++a) {
                        const int row = (tx.first + a) * n_eta + te.first;
                        for (int b = 0; b <= pe; ++b) {
                            const int g = P.primal_l2g[static_cast<std::size_t>(row + b)];
                            const int k = inner_of_global_[static_cast<std::size_t>(g)];
                            if (k < 0) continue;
                            const double wn = w * tx.values(0, a) * te.values(0, b);
                            R(k) += wn * U[0];
                            R(m + k) += wn * U[1];
                        }
                    }
                }
            }
        }
    }

    std::vector<PatchDiscretization> patches_;
    int n_primal_ = 0;
    int n_aux_ = 0;
    std::vector<Point> net_;
    RestrictionOperator restriction_;
    SystemOptions opts_;
    std::vector<int> inner_of_global_;
    std::vector<int> inner_global_;
    std::vector<int> boundary_global_;
    bool coupled_ = false;
};

/// Identity restriction for a single patch.
inline RestrictionOperator trivial_restriction(int n_aux) {
    RestrictionOperator r;
    r.entries.resize(static_cast<std::size_t>(n_aux));
    for (int i = 0; i < n_aux; ++i) r.entries[static_cast<std::size_t>(i)] = {RestrictionEntry{0, i, 1.0}};
    return r;
}

/// Single-patch mixed system on the unit square; boundary data from `map`.
inline MixedSystem make_system(const SplineMap& map, SystemOptions options = {}) {
    std::vector<PatchDiscretization> patches;
    patches.emplace_back(map.basis, AffinePatchMap{}, options.quad_points);
    const int n = map.basis.size();
    const int na = patches.front().n_aux();
    std::vector<char> is_bnd(static_cast<std::size_t>(n), 0);
    for (int i : map.boundary_indices) is_bnd[static_cast<std::size_t>(i)] = 1;
    return MixedSystem(std::move(patches), n, na, map.control_points, std::move(is_bnd), trivial_restriction(na),
                       options);
}

inline Vector eval_RL(const MixedSystem& sys, const Vector& d, const Vector& c) { return sys.residual_linear(d, c); }
inline Vector eval_RN(const MixedSystem& sys, const Vector& d, const Vector& c) { return sys.residual_nonlinear(d, c); }

}  // namespace harmap
