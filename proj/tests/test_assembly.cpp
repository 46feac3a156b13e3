#include <gtest/gtest.h>

#include <harmap/assembly.hpp>

#include "support.hpp"

using namespace harmap;
using namespace harmap::testing;

namespace {

/// Evaluates auxiliary block `blk` of d at (xi, eta).
double aux_value(const MixedSystem& sys, const Vector& d, int blk, double xi, double eta, int deriv_xi = 0,
                 int deriv_eta = 0) {
    const auto& aux = sys.patches().front().aux;
    auto t = tensor_eval(aux, xi, eta, 1);
    const auto& w = deriv_xi ? t.w_xi : deriv_eta ? t.w_eta : t.w;
    double s = 0.0;
    for (std::size_t k = 0; k < t.indices.size(); ++k) s += w[k] * d(blk * sys.n_aux() + t.indices[k]);
    return s;
}

/// Straightforward quadrature of the nonlinear residual on one identity patch.
Vector nonlinear_oracle(const MixedSystem& sys, const SplineMap& map, const Vector& d) {
    const auto& P = sys.patches().front();
    const int m = sys.num_inner();
    const int nq = sys.options().quad_points > 0 ? sys.options().quad_points : default_quad_points(map.basis);
    const double chi = sys.options().chi, mu = sys.options().mu;
    auto rule = gauss_legendre(nq);
    auto bx = P.aux.kv_xi.breakpoints(), be = P.aux.kv_eta.breakpoints();
    std::vector<int> inner_pos(static_cast<std::size_t>(map.basis.size()), -1);
    for (int k = 0; k < m; ++k) inner_pos[static_cast<std::size_t>(sys.inner_global()[static_cast<std::size_t>(k)])] = k;
    Vector R = Vector::Zero(2 * m);
    // Field values of block (f, k) and their derivatives.
    auto field = [&](int f, int k, double xi, double eta, int dx, int de) {
        for (int b = 0; b < sys.aux_blocks(); ++b)
            if (sys.block_field(b) == f && sys.block_component(b) == k) return aux_value(sys, d, b, xi, eta, dx, de);
        return std::nan("");
    };
    for (std::size_t ex = 0; ex + 1 < bx.size(); ++ex)
        for (std::size_t ey = 0; ey + 1 < be.size(); ++ey)
            for (int qi = 0; qi < nq; ++qi)
                for (int qj = 0; qj < nq; ++qj) {
                    const double hx = bx[ex + 1] - bx[ex], hy = be[ey + 1] - be[ey];
                    const double xi = bx[ex] + hx * rule.points[static_cast<std::size_t>(qi)];
                    const double eta = be[ey] + hy * rule.points[static_cast<std::size_t>(qj)];
                    const double wq = hx * hy * rule.weights[static_cast<std::size_t>(qi)] *
                                      rule.weights[static_cast<std::size_t>(qj)];
                    auto t = tensor_eval(map.basis, xi, eta, 2);
                    Point xs = Point::Zero(), xt = Point::Zero(), xst = Point::Zero(), xss = Point::Zero(),
                          xtt = Point::Zero();
                    for (std::size_t a = 0; a < t.indices.size(); ++a) {
                        const Point& c = map.control_points[static_cast<std::size_t>(t.indices[a])];
                        xs += t.w_xi[a] * c;
                        xt += t.w_eta[a] * c;
                        xss += t.w_xixi[a] * c;
                        xst += t.w_xieta[a] * c;
                        xtt += t.w_etaeta[a] * c;
                    }
                    const double g11 = xs.squaredNorm(), g22 = xt.squaredNorm(), g12 = xs.dot(xt);
                    double U[2];
                    for (int k = 0; k < 2; ++k) {
                        double uxi, ueta, vxi, veta;
                        if (sys.mode() == AuxMode::full) {
                            uxi = field(0, k, xi, eta, 1, 0);
                            ueta = field(0, k, xi, eta, 0, 1);
                            vxi = field(1, k, xi, eta, 1, 0);
                            veta = field(1, k, xi, eta, 0, 1);
                        } else if (sys.mode() == AuxMode::xi_only) {
                            uxi = field(0, k, xi, eta, 1, 0);
                            ueta = field(0, k, xi, eta, 0, 1);
                            vxi = xst(k);
                            veta = xtt(k);
                        } else {
                            uxi = xss(k);
                            ueta = xst(k);
                            vxi = field(1, k, xi, eta, 1, 0);
                            veta = field(1, k, xi, eta, 0, 1);
                        }
                        U[k] = (g22 * uxi - 2 * g12 * (chi * ueta + (1 - chi) * vxi) + g11 * veta) / (g11 + g22 + mu);
                    }
                    for (std::size_t a = 0; a < t.indices.size(); ++a) {
                        const int k = inner_pos[static_cast<std::size_t>(t.indices[a])];
                        if (k < 0) continue;
                        R(k) += wq * t.w[a] * U[0];
                        R(m + k) += wq * t.w[a] * U[1];
                    }
                }
    return R;
}

SplineMap wavy_map(const TensorBasis& b) {
    return interpolated_map(b, [](double x, double y) {
        return Point(x + 0.15 * std::sin(2 * x + y) * x * (1 - x), y + 0.1 * std::cos(3 * x) * y * (1 - y) + 0.2 * x * y);
    });
}

}  // namespace

TEST(Projection, IdentityGivesConstantDerivatives) {
    for (int p = 1; p <= 3; ++p) {
        TensorBasis b{KnotVector::uniform(p, 4), KnotVector::uniform(p, 3)};
        auto map = transfinite_map(b, identity_field);
        auto sys = make_system(map);
        Vector d = sys.project(map.inner_coefficients(), true);
        const double expect[4] = {1, 0, 0, 1};
        for (int blk = 0; blk < 4; ++blk)
            for (int i = 0; i < sys.n_aux(); ++i) EXPECT_NEAR(d(blk * sys.n_aux() + i), expect[blk], 1e-12);
    }
}

TEST(Projection, ScaledSquare) {
    TensorBasis b{KnotVector::uniform(2, 3), KnotVector::uniform(3, 2)};
    auto map = transfinite_map(b, [](double x, double y) { return Point(2 * x, 3 * y); });
    auto sys = make_system(map);
    Vector d = sys.project(map.inner_coefficients(), true);
    const double expect[4] = {2, 0, 0, 3};
    for (int blk = 0; blk < 4; ++blk)
        for (int i = 0; i < sys.n_aux(); ++i) EXPECT_NEAR(d(blk * sys.n_aux() + i), expect[blk], 1e-12);
}

TEST(Projection, ReproducesPolynomialDerivatives) {
    TensorBasis b{KnotVector::uniform(2, 3), KnotVector::uniform(2, 4)};
    auto f = [](double x, double y) { return Point(x * x * y + 0.5 * y * y, x - x * y * y); };
    auto map = interpolated_map(b, f);
    auto sys = make_system(map);
    Vector d = sys.project(map.inner_coefficients(), true);
    for (double x : {0.13, 0.5, 0.91})
        for (double y : {0.07, 0.44, 0.8}) {
            EXPECT_NEAR(aux_value(sys, d, 0, x, y), 2 * x * y, 1e-11);
            EXPECT_NEAR(aux_value(sys, d, 1, x, y), 1 - y * y, 1e-11);
            EXPECT_NEAR(aux_value(sys, d, 2, x, y), x * x + y, 1e-11);
            EXPECT_NEAR(aux_value(sys, d, 3, x, y), -2 * x * y, 1e-11);
        }
}

TEST(LinearResidual, VanishesAtProjection) {
    TensorBasis b{KnotVector::uniform(3, 4), KnotVector::uniform(2, 5)};
    auto map = wavy_map(b);
    auto sys = make_system(map);
    Vector c = map.inner_coefficients();
    Vector d = sys.project(c, true);
    Vector rl = eval_RL(sys, d, c);
    EXPECT_LT(rl.cwiseAbs().maxCoeff(), 1e-11);
}

TEST(LinearResidual, MatchesAssembledBlocks) {
    TensorBasis b{KnotVector::uniform(2, 4), KnotVector::uniform(3, 3)};
    auto map = wavy_map(b);
    for (AuxMode mode : {AuxMode::full, AuxMode::xi_only, AuxMode::eta_only}) {
        SystemOptions o;
        o.mode = mode;
        auto sys = make_system(map, o);
        auto blocks = sys.assemble_constant_blocks();
        Vector c = map.inner_coefficients();
        Vector d = Vector::LinSpaced(sys.d_size(), -1.0, 1.0).array().sin();
        Vector s = Vector::LinSpaced(sys.c_size(), 0.3, 2.0).array().cos();
        EXPECT_LT((sys.apply_A(d) - blocks.A * d).norm(), 1e-13);
        EXPECT_LT((sys.apply_B(s) - blocks.B * s).norm(), 1e-13);
        Vector rl = blocks.A * d - blocks.B * c - blocks.B_bnd * sys.boundary_coefficients();
        EXPECT_LT((eval_RL(sys, d, c) - rl).norm(), 1e-13);
        // A is symmetric positive definite and block diagonal.
        Eigen::MatrixXd A = blocks.A;
        EXPECT_LT((A - A.transpose()).norm(), 1e-15);
        EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(A).eigenvalues().minCoeff(), 0.0);
        // solve_aux inverts A.
        EXPECT_LT((blocks.A * sys.solve_aux(d) - d).norm(), 1e-10 * d.norm());
    }
}

TEST(NonlinearResidual, MatchesDirectQuadrature) {
    TensorBasis b{KnotVector::uniform(3, 4), KnotVector::uniform(3, 3)};
    auto map = wavy_map(b);
    for (AuxMode mode : {AuxMode::full, AuxMode::xi_only, AuxMode::eta_only})
        for (double chi : {0.0, 0.5, 1.0}) {
            SystemOptions o;
            o.mode = mode;
            o.chi = chi;
            o.mu = 0.3;
            auto sys = make_system(map, o);
            Vector c = map.inner_coefficients();
            Vector d = sys.project(c, true);
            for (int i = 0; i < d.size(); ++i) d(i) += 0.05 * std::sin(0.7 * i);
            Vector rn = eval_RN(sys, d, c);
            Vector ref = nonlinear_oracle(sys, map, d);
            EXPECT_LT((rn - ref).cwiseAbs().maxCoeff(), 1e-12 * (1 + ref.cwiseAbs().maxCoeff()))
                << to_string(mode) << " chi=" << chi;
        }
}

TEST(NonlinearResidual, VanishesForIdentity) {
    TensorBasis b{KnotVector::uniform(2, 5), KnotVector::uniform(2, 5)};
    auto map = transfinite_map(b, identity_field);
    auto sys = make_system(map);
    Vector c = map.inner_coefficients();
    EXPECT_LT(eval_RN(sys, sys.project(c, true), c).norm(), 1e-13);
}

TEST(NonlinearResidual, ElementOrderOnlyAffectsRounding) {
    TensorBasis b{KnotVector::uniform(3, 6), KnotVector::uniform(2, 5)};
    auto map = wavy_map(b);
    SystemOptions fwd, rev;
    rev.reverse_element_order = true;
    auto s1 = make_system(map, fwd), s2 = make_system(map, rev);
    Vector c = map.inner_coefficients();
    Vector d = s1.project(c, true);
    Vector r1 = eval_RN(s1, d, c), r2 = eval_RN(s2, d, c);
    EXPECT_LE((r1 - r2).cwiseAbs().maxCoeff(), 1e-13 * std::max(1.0, r1.cwiseAbs().maxCoeff()));
}

TEST(Options, Validation) {
    TensorBasis b{KnotVector::uniform(2, 3), KnotVector::uniform(2, 3)};
    auto map = transfinite_map(b, identity_field);
    SystemOptions o;
    o.mu = 0.0;
    EXPECT_THROW(make_system(map, o), InputError);
    o = {};
    o.chi = 1.5;
    EXPECT_THROW(make_system(map, o), InputError);
    EXPECT_THROW(aux_mode_from_string("diag"), InputError);
    EXPECT_EQ(aux_mode_from_string("xi"), AuxMode::xi_only);
    EXPECT_EQ(aux_block_count(AuxMode::eta_only), 2);

    // Single-direction modes need a C1 basis in the other direction.
    TensorBasis lin{KnotVector::uniform(2, 3), KnotVector::uniform(1, 3)};
    o = {};
    o.mode = AuxMode::xi_only;
    EXPECT_THROW(make_system(transfinite_map(lin, identity_field), o), InputError);
    o.mode = AuxMode::eta_only;
    EXPECT_NO_THROW(make_system(transfinite_map(lin, identity_field), o));
    const double half[] = {0.5};
    TensorBasis kink{KnotVector::uniform(3, 4, half, 3), KnotVector::uniform(3, 4)};
    EXPECT_THROW(make_system(transfinite_map(kink, identity_field), o), InputError);
    o.mode = AuxMode::xi_only;
    EXPECT_NO_THROW(make_system(transfinite_map(kink, identity_field), o));

    auto sys = make_system(map);
    EXPECT_THROW(sys.apply_A(Vector::Zero(3)), InputError);
    EXPECT_THROW(eval_RN(sys, Vector::Zero(sys.d_size()), Vector::Zero(1)), InputError);
}

TEST(Options, SingleDirectionBlockLayout) {
    TensorBasis b{KnotVector::uniform(2, 3), KnotVector::uniform(2, 3)};
    auto map = wavy_map(b);
    SystemOptions o;
    o.mode = AuxMode::eta_only;
    auto sys = make_system(map, o);
    EXPECT_EQ(sys.d_size(), 2 * sys.n_aux());
    EXPECT_EQ(sys.block_field(0), 1);
    // The v blocks coincide with blocks 2, 3 of the full projection.
    auto full = make_system(map);
    Vector c = map.inner_coefficients();
    Vector df = full.project(c, true), dv = sys.project(c, true);
    EXPECT_LT((dv - df.tail(2 * full.n_aux())).norm(), 1e-13);
}
