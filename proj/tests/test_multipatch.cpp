#include <gtest/gtest.h>

#include <harmap/io.hpp>
#include <harmap/samples.hpp>

#include "support.hpp"

using namespace harmap;
using namespace harmap::testing;

namespace {

using Vec2 = Eigen::Vector2d;

/// Boundary data of a topology taken from a field over the parametric domain.
std::vector<Point> boundary_from_field(const PatchTopology& topo, const Field& f) {
    PatchBoundaryData data(topo.num_patches());
    for (std::size_t p = 0; p < topo.num_patches(); ++p)
        for (int k = 0; k < 4; ++k) {
            const Face face = static_cast<Face>(k);
            if (topo.is_glued(p, face)) continue;
            const auto& P = topo.patches()[p];
            data[p][static_cast<std::size_t>(k)] = interpolate_curve(face_knots(P.basis, face), [&](double t) {
                Vec2 q = P.map(face_point(face, t));
                return f(q.x(), q.y());
            });
        }
    return assemble_boundary_net(topo, data);
}

/// Unit square split at x = 1/2 into two patches; `layout` is applied to both
/// affine maps (a rigid motion of the parametric domain).
PatchTopology split_square(int degree, int elements, const Eigen::Matrix2d& layout = Eigen::Matrix2d::Identity()) {
    TensorBasis b{KnotVector::uniform(degree, elements), KnotVector::uniform(degree, elements + 1)};
    Eigen::Matrix2d half;
    half << 0.5, 0, 0, 1;
    return build_topology({{b, AffinePatchMap(layout * half, Vec2::Zero())}, {b, AffinePatchMap(layout * half, layout * Vec2(0.5, 0))}},
                          {{0, Face::east, 1, Face::west, false}});
}

Eigen::Matrix2d rotation(double deg) {
    const double a = deg * M_PI / 180.0;
    Eigen::Matrix2d r;
    r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    return r;
}

Vector perturb(Vector c, double amp) {
    for (int k = 0; k < c.size(); ++k) c(k) += amp * std::sin(2.3 * k + 0.4);
    return c;
}

Point local_eval(const SplineMap& m, double s, double t) { return m.evaluate(s, t); }

}  // namespace

TEST(Topology, TwoLinearPatches) {
    TensorBasis b{KnotVector::uniform(1, 1), KnotVector::uniform(1, 1)};
    auto topo = build_topology({{b, AffinePatchMap{}}, {b, AffinePatchMap(Eigen::Matrix2d::Identity(), Vec2(1, 0))}},
                               {{0, Face::east, 1, Face::west, false}});
    EXPECT_EQ(topo.primal().size, 6);
    EXPECT_EQ(topo.aux().size, 2 * 9 - 3);
    // Every function of a 1 x 1 linear patch touches a free face.
    for (char c : topo.is_boundary()) EXPECT_TRUE(c);
    EXPECT_NEAR(topo.convexity_defect(), 0.0, 1e-14);
}

TEST(Topology, BatDimensionsAndValence) {
    auto pr = build_problem(samples::bat());
    const auto& topo = pr.topology;
    const int p = 3;
    const int n[3] = {10, 11, 12};
    int primal = 1, aux = 1;
    for (int k = 0; k < 3; ++k) {
        primal += (n[k] + p) * (n[(k + 1) % 3] + p) - (n[k] + p);
        aux += (2 * n[k] + p) * (2 * n[(k + 1) % 3] + p) - (2 * n[k] + p);
    }
    EXPECT_EQ(topo.primal().size, primal);
    EXPECT_EQ(primal, 546);
    EXPECT_EQ(topo.aux().size, aux);
    // The centre vertex is shared by all three patches.
    for (bool auxiliary : {false, true}) {
        auto mult = topo.multiplicity(auxiliary);
        const auto& l2g = auxiliary ? topo.aux().l2g : topo.primal().l2g;
        const int centre = l2g[0][0];
        for (int k = 0; k < 3; ++k) EXPECT_EQ(l2g[static_cast<std::size_t>(k)][0], centre);
        EXPECT_EQ(mult[static_cast<std::size_t>(centre)], 3);
        EXPECT_EQ(*std::max_element(mult.begin(), mult.end()), 3);
        EXPECT_EQ(std::count(mult.begin(), mult.end(), 3), 1);
    }
    EXPECT_NEAR(topo.convexity_defect(), 0.0, 1e-12);
}

TEST(Topology, RestrictionWeights) {
    TensorBasis b{KnotVector::uniform(2, 2), KnotVector::uniform(2, 2)};
    Eigen::Matrix2d wide;
    wide << 3, 0, 0, 1;
    auto topo = build_topology({{b, AffinePatchMap{}}, {b, AffinePatchMap(wide, Vec2(1, 0))}},
                               {{0, Face::east, 1, Face::west, false}});
    auto r = build_restriction(topo);
    int shared = 0;
    for (const auto& e : r.entries) {
        double sum = 0;
        for (const auto& x : e) sum += x.weight;
        EXPECT_EQ(sum, 1.0);
        if (e.size() == 2) {
            ++shared;
            EXPECT_DOUBLE_EQ(e[0].weight, 0.25);
            EXPECT_DOUBLE_EQ(e[1].weight, 0.75);
        }
    }
    EXPECT_EQ(shared, topo.aux_basis(0).n_eta());
    EXPECT_TRUE(r.coupled());
}

TEST(Topology, InterfaceErrors) {
    TensorBasis b{KnotVector::uniform(2, 2), KnotVector::uniform(2, 2)};
    TensorBasis other{KnotVector::uniform(2, 2), KnotVector::uniform(2, 3)};
    AffinePatchMap right(Eigen::Matrix2d::Identity(), Vec2(1, 0));
    auto expect_error = [](auto&& f, const std::string& needle) {
        try {
            f();
            ADD_FAILURE() << "expected: " << needle;
        } catch (const InputError& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
            EXPECT_NE(std::string(e.what()).find("interface (0.east, 1.west)"), std::string::npos) << e.what();
        }
    };
    expect_error([&] { build_topology({{b, {}}, {other, right}}, {{0, Face::east, 1, Face::west, false}}); },
                 "knot vectors along the glued faces differ");
    expect_error([&] { build_topology({{b, {}}, {b, right}}, {{0, Face::east, 1, Face::west, true}}); },
                 "inconsistent orientation flag");
    expect_error(
        [&] {
            build_topology({{b, {}}, {b, AffinePatchMap(Eigen::Matrix2d::Identity(), Vec2(2, 0))}},
                           {{0, Face::east, 1, Face::west, false}});
        },
        "faces do not coincide");
    expect_error(
        [&] {
            build_topology({{b, {}}, {b, right}}, {{0, Face::east, 1, Face::west, false}, {0, Face::east, 1, Face::west, false}});
        },
        "glued twice");
    EXPECT_THROW(build_topology({{b, {}}}, {{0, Face::east, 3, Face::west, false}}), InputError);
    EXPECT_THROW(build_topology({}, {}), InputError);
}

TEST(Topology, ReversedInterface) {
    // Patch 1 is rotated by 180 degrees, so its east face runs against patch 0's east face.
    TensorBasis b{KnotVector::uniform(2, 3), KnotVector::uniform(2, 3)};
    Eigen::Matrix2d flip = -Eigen::Matrix2d::Identity();
    auto topo = build_topology({{b, {}}, {b, AffinePatchMap(flip, Vec2(2, 1))}}, {{0, Face::east, 1, Face::east, true}});
    EXPECT_EQ(topo.primal().size, 2 * b.size() - b.n_eta());
    auto net = boundary_from_field(topo, identity_field);
    auto sys = make_multipatch_system(topo, net);
    Vector c0 = perturb(multipatch_initial_guess(topo, sys), 0.02);
    auto sol = multipatch_solve(topo, sys, c0, SolverConfig{});
    ASSERT_TRUE(sol.report.converged);
    for (int k = 0; k <= 10; ++k) {
        const double t = k / 10.0;
        EXPECT_LT((local_eval(sol.maps[0], 1.0, t) - local_eval(sol.maps[1], 1.0, 1.0 - t)).norm(), 1e-12);
        EXPECT_LT((local_eval(sol.maps[1], 0.3, t) - Point(2 - 0.3, 1 - t)).norm(), 1e-8);
    }
}

TEST(Multipatch, DegenerateCaseMatchesSinglePatch) {
    TensorBasis b{KnotVector::uniform(3, 4), KnotVector::uniform(2, 5)};
    auto map = interpolated_map(b, [](double x, double y) { return Point(x + 0.1 * x * y * y, y - 0.2 * x * (1 - x) * y); });
    auto single = make_system(map);
    auto topo = single_patch_topology(b);
    auto multi = make_multipatch_system(topo, map.control_points);
    ASSERT_EQ(single.c_size(), multi.c_size());
    ASSERT_EQ(single.d_size(), multi.d_size());
    Vector c = perturb(map.inner_coefficients(), 0.01);
    Vector d = perturb(single.project(c, true), 0.01);
    auto r = multipatch_residual(multi, d, c);
    EXPECT_EQ(r.linear, eval_RL(single, d, c));
    EXPECT_EQ(r.nonlinear, eval_RN(single, d, c));
    EXPECT_EQ(multipatch_ainv_b(multi, c), single.ainv_b(c));
    EXPECT_EQ(multipatch_initial_guess(topo, multi), transfinite_initial_guess(map));
    auto s1 = newton_solve(single, c, SolverConfig{});
    auto s2 = multipatch_solve(topo, multi, c, SolverConfig{});
    EXPECT_EQ(s1.c, s2.c);
}

TEST(Multipatch, SinglePatchProjectionIsExactInverse) {
    TensorBasis b{KnotVector::uniform(2, 3), KnotVector::uniform(3, 2)};
    auto topo = single_patch_topology(b);
    auto sys = make_multipatch_system(topo, boundary_from_field(topo, annulus_field));
    auto blocks = sys.assemble_constant_blocks();
    Eigen::MatrixXd A = blocks.A, B = blocks.B;
    Vector s = Vector::LinSpaced(sys.c_size(), -2.0, 1.0).array().cos();
    Vector ref = A.ldlt().solve(B * s);
    EXPECT_LT((multipatch_ainv_b(sys, s) - ref).cwiseAbs().maxCoeff(), 1e-11 * (1 + ref.cwiseAbs().maxCoeff()));
}

TEST(Multipatch, CoupledSchurMatchesExplicitJacobian) {
    auto topo = split_square(2, 1);
    auto net = boundary_from_field(topo, annulus_field);
    auto sys = make_multipatch_system(topo, net);
    ASSERT_TRUE(sys.coupled());
    Vector c = perturb(multipatch_initial_guess(topo, sys), 0.01);
    Vector d = perturb(initial_d_from_c(sys, c), 0.01);
    const int nd = sys.d_size(), nc = sys.c_size();
    auto F = [&](const Vector& dd, const Vector& cc) {
        Vector f(nd + nc);
        f << sys.residual_linear(dd, cc), sys.residual_nonlinear(dd, cc);
        return f;
    };
    Eigen::MatrixXd J(nd + nc, nd + nc);
    const double h = 1e-6;
    for (int k = 0; k < nd + nc; ++k) {
        Vector dp = d, dm = d, cp = c, cm = c;
        (k < nd ? dp(k) : cp(k - nd)) += h;
        (k < nd ? dm(k) : cm(k - nd)) -= h;
        J.col(k) = (F(dp, cp) - F(dm, cm)) / (2 * h);
    }
    Eigen::MatrixXd A = J.topLeftCorner(nd, nd), mB = J.topRightCorner(nd, nc);
    Eigen::MatrixXd S = J.bottomRightCorner(nc, nc) - J.bottomLeftCorner(nc, nd) * A.partialPivLu().solve(mB);
    SchurState exact(sys, d, c, 1e-14, true);
    Vector s = Vector::LinSpaced(nc, 0.2, 1.7).array().sin();
    Vector ref = S * s;
    EXPECT_LT((schur_matvec(exact, s) - ref).norm(), 1e-5 * ref.norm());
    Vector full = J.partialPivLu().solve(-F(d, c));
    Vector dc = S.partialPivLu().solve(schur_rhs(exact));
    EXPECT_LT((dc - full.tail(nc)).norm(), 1e-5 * full.norm());

    // The restriction-based operator is only an approximation of A^{-1} B.
    Eigen::MatrixXd Ad = Eigen::MatrixXd(sys.assemble_constant_blocks().A);
    Vector Bs = sys.apply_B(s);
    const double ratio = (Ad * multipatch_ainv_b(sys, s) - Bs).norm() / Bs.norm();
    RecordProperty("restricted_projection_defect", std::to_string(ratio));
    EXPECT_TRUE(std::isfinite(ratio));
    EXPECT_LT(ratio, 1.0);
    EXPECT_LT((Ad * sys.solve_aux(Bs) - Bs).norm(), 1e-10 * Bs.norm());
}

TEST(Multipatch, SplitSquareRecoversIdentity) {
    auto topo = split_square(2, 3);
    auto sys = make_multipatch_system(topo, boundary_from_field(topo, identity_field));
    Vector c0 = perturb(multipatch_initial_guess(topo, sys), 0.03);
    auto sol = multipatch_solve(topo, sys, c0, SolverConfig{});
    ASSERT_TRUE(sol.report.converged);
    for (int k = 0; k <= 20; ++k) {
        const double t = k / 20.0;
        // Interface at x = 1/2 and continuity across it.
        Point a = local_eval(sol.maps[0], 1.0, t), b = local_eval(sol.maps[1], 0.0, t);
        EXPECT_LT((a - b).norm(), 1e-12);
        EXPECT_NEAR(a.x(), 0.5, 1e-8);
        EXPECT_NEAR(a.y(), t, 1e-8);
        EXPECT_LT((local_eval(sol.maps[1], 0.4, t) - Point(0.7, t)).norm(), 1e-8);
    }
}

TEST(Multipatch, RotatedLayoutGivesSameResiduals) {
    for (double deg : {30.0, 90.0}) {
        auto base = split_square(2, 2);
        auto rot = split_square(2, 2, rotation(deg));
        const Eigen::Matrix2d R = rotation(deg);
        // Same physical boundary attached to the rotated parametric domain.
        auto field = [](double x, double y) { return annulus_field(x, y); };
        auto sb = make_multipatch_system(base, boundary_from_field(base, field));
        auto sr = make_multipatch_system(rot, boundary_from_field(rot, [&](double x, double y) {
                                             Vec2 q = R.transpose() * Vec2(x, y);
                                             return field(q.x(), q.y());
                                         }));
        Vector c = perturb(multipatch_initial_guess(base, sb), 0.02);
        ASSERT_EQ(c.size(), sr.c_size());
        auto rb = multipatch_residual(sb, initial_d_from_c(sb, c), c);
        auto rr = multipatch_residual(sr, initial_d_from_c(sr, c), c);
        EXPECT_LT((rb.nonlinear - rr.nonlinear).norm(), 1e-12 * (1 + rb.nonlinear.norm())) << deg;
        EXPECT_NEAR(rb.norm(), rr.norm(), 1e-12 * (1 + rb.norm())) << deg;
    }
}

TEST(Multipatch, RigidMotionEquivariance) {
    auto topo = split_square(2, 2);
    const Eigen::Matrix2d Q = rotation(37.0);
    const Vec2 shift(3.0, -1.5);
    auto moved = [&](double x, double y) {
        Vec2 p = annulus_field(x, y);
        return Point(Q * p + shift);
    };
    auto s1 = make_multipatch_system(topo, boundary_from_field(topo, annulus_field));
    auto s2 = make_multipatch_system(topo, boundary_from_field(topo, moved));
    auto r1 = multipatch_solve(topo, s1, multipatch_initial_guess(topo, s1), SolverConfig{});
    auto r2 = multipatch_solve(topo, s2, multipatch_initial_guess(topo, s2), SolverConfig{});
    ASSERT_TRUE(r1.report.converged);
    ASSERT_TRUE(r2.report.converged);
    for (std::size_t p = 0; p < 2; ++p)
        for (int k = 0; k < 25; ++k) {
            const double s = (k % 5 + 0.5) / 5, t = (k / 5 + 0.5) / 5;
            Point a = local_eval(r1.maps[p], s, t), b = local_eval(r2.maps[p], s, t);
            EXPECT_LT((Point(Q * a + shift) - b).norm(), 1e-9);
        }
}

TEST(Multipatch, MirrorSymmetricSolution) {
    // Domain symmetric about x = 1/2, split along the symmetry line.
    auto topo = split_square(2, 3);
    auto field = [](double x, double y) {
        const double bump = 0.3 * std::sin(M_PI * x);
        return Point(x, y * (1 + bump) - 0.2 * bump);
    };
    auto sys = make_multipatch_system(topo, boundary_from_field(topo, field));
    auto sol = multipatch_solve(topo, sys, multipatch_initial_guess(topo, sys), SolverConfig{});
    ASSERT_TRUE(sol.report.converged);
    for (int k = 0; k < 30; ++k) {
        const double s = std::fmod(0.37 * k + 0.05, 1.0), t = std::fmod(0.53 * k + 0.11, 1.0);
        Point a = local_eval(sol.maps[0], s, t), b = local_eval(sol.maps[1], 1 - s, t);
        EXPECT_NEAR(a.x(), 1 - b.x(), 1e-9);
        EXPECT_NEAR(a.y(), b.y(), 1e-9);
    }
}

TEST(Multipatch, SmallBatConvergesAndStaysContinuous) {
    samples::BatParameters prm;
    prm.elements = {4, 5, 6};
    auto pr = build_problem(samples::bat(prm));
    auto sys = make_multipatch_system(pr.topology, pr.boundary_net);
    auto sol = multipatch_solve(pr.topology, sys, multipatch_initial_guess(pr.topology, sys), SolverConfig{});
    ASSERT_TRUE(sol.report.converged);
    for (std::size_t p = 0; p < 3; ++p) {
        auto rep = patch_bijectivity(sol.maps[p], pr.topology.patches()[p].map);
        EXPECT_EQ(rep.fold_count, 0);
        EXPECT_GT(rep.min_detJ, 0.0);
    }
    for (const auto& i : pr.topology.interfaces())
        for (int k = 0; k < 100; ++k) {
            const double t = k / 99.0;
            Vec2 sa = face_point(i.face_a, t), sb = face_point(i.face_b, i.reversed ? 1 - t : t);
            Point a = local_eval(sol.maps[static_cast<std::size_t>(i.patch_a)], sa.x(), sa.y());
            Point b = local_eval(sol.maps[static_cast<std::size_t>(i.patch_b)], sb.x(), sb.y());
            EXPECT_LT((a - b).norm(), 1e-12);
        }
}
