#include <cmath>

#include <gtest/gtest.h>

#include <harmap/mapping.hpp>

using namespace harmap;

namespace {

BoundaryCurves curves_of(const TensorBasis& b, auto&& f) {
    return {interpolate_curve(b.kv_xi, [&](double t) { return f(t, 0.0); }),
            interpolate_curve(b.kv_xi, [&](double t) { return f(t, 1.0); }),
            interpolate_curve(b.kv_eta, [&](double t) { return f(0.0, t); }),
            interpolate_curve(b.kv_eta, [&](double t) { return f(1.0, t); })};
}

SplineMap affine_map(const TensorBasis& b, double sx, double sy) {
    auto m = make_map(b, curves_of(b, [&](double x, double y) { return Point(sx * x, sy * y); }));
    m.set_inner_coefficients(transfinite_initial_guess(m));
    return m;
}

}  // namespace

TEST(MakeMap, ValidatesBoundary) {
    TensorBasis b{KnotVector::uniform(2, 3), KnotVector::uniform(2, 2)};
    auto c = curves_of(b, [](double x, double y) { return Point(x, y); });
    auto bad = c;
    bad.north.pop_back();
    EXPECT_THROW(make_map(b, bad), InputError);
    bad = c;
    bad.east.front() += Point(1e-9, 0);
    try {
        make_map(b, bad);
        FAIL() << "expected corner mismatch";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("south-east"), std::string::npos);
    }
}

TEST(Transfinite, IdentityIsGrevilleGrid) {
    for (int p = 1; p <= 3; ++p) {
        TensorBasis b{KnotVector::uniform(p, 4), KnotVector::uniform(p, 3)};
        auto m = affine_map(b, 1.0, 1.0);
        auto gx = greville(b.kv_xi), ge = greville(b.kv_eta);
        for (int i = 0; i < b.n_xi(); ++i)
            for (int j = 0; j < b.n_eta(); ++j) {
                const Point& c = m.control_points[static_cast<std::size_t>(b.index(i, j))];
                EXPECT_NEAR(c.x(), gx[static_cast<std::size_t>(i)], 1e-15);
                EXPECT_NEAR(c.y(), ge[static_cast<std::size_t>(j)], 1e-15);
            }
    }
}

TEST(Transfinite, ReproducesBilinearMaps) {
    TensorBasis b{KnotVector::uniform(3, 4), KnotVector::uniform(2, 5)};
    auto f = [](double x, double y) { return Point(1 + 2 * x + 0.3 * y + 0.5 * x * y, -1 + 0.2 * x + 1.5 * y - 0.4 * x * y); };
    auto m = make_map(b, curves_of(b, f));
    m.set_inner_coefficients(transfinite_initial_guess(m));
    for (double x : {0.1, 0.5, 0.83})
        for (double y : {0.2, 0.66}) EXPECT_LT((m.evaluate(x, y) - f(x, y)).norm(), 1e-13);
}

TEST(Metric, ScaledSquare) {
    TensorBasis b{KnotVector::uniform(2, 3), KnotVector::uniform(2, 3)};
    auto m = affine_map(b, 2.0, 3.0);
    auto g = metric_at(m, 0.37, 0.61);
    EXPECT_NEAR(g.g11, 4.0, 1e-13);
    EXPECT_NEAR(g.g12, 0.0, 1e-13);
    EXPECT_NEAR(g.g22, 9.0, 1e-13);
    EXPECT_NEAR(g.detJ, 6.0, 1e-13);
    EXPECT_NEAR(winslow(m, 3), 13.0 / 6.0, 1e-13);
    EXPECT_NEAR(winslow(affine_map(b, 1.0, 1.0), 3), 2.0, 1e-14);
}

TEST(Winslow, GradientMatchesCentralDifference) {
    TensorBasis b{KnotVector::uniform(2, 3), KnotVector::uniform(3, 2)};
    auto m = make_map(b, curves_of(b, [](double x, double y) {
                          return Point(x + 0.1 * std::sin(3 * y), y + 0.2 * x * x);
                      }));
    Vector c = transfinite_initial_guess(m);
    for (int k = 0; k < c.size(); ++k) c(k) += 0.01 * std::cos(1.3 * k);
    m.set_inner_coefficients(c);
    Vector g = winslow_gradient(m, 4);
    const double h = 1e-6;
    for (int k = 0; k < c.size(); ++k) {
        Vector cp = c, cm = c;
        cp(k) += h;
        cm(k) -= h;
        SplineMap mp = m, mm = m;
        mp.set_inner_coefficients(cp);
        mm.set_inner_coefficients(cm);
        const double fd = (winslow(mp, 4) - winslow(mm, 4)) / (2 * h);
        EXPECT_NEAR(g(k), fd, 1e-6 * (1.0 + std::abs(fd)));
    }
}

TEST(Winslow, DescentRecoversIdentity) {
    TensorBasis b{KnotVector::uniform(2, 4), KnotVector::uniform(2, 4)};
    auto m = affine_map(b, 1.0, 1.0);
    Vector c = m.inner_coefficients();
    for (int k = 0; k < c.size(); ++k) c(k) += 0.02 * std::sin(2.1 * k);
    m.set_inner_coefficients(c);
    auto r = minimize_winslow(m, 3, 3000, 1e-9);
    EXPECT_LT(r.value, r.initial_value);
    EXPECT_NEAR(r.value, 2.0, 1e-9);
    EXPECT_LT((r.inner - affine_map(b, 1.0, 1.0).inner_coefficients()).norm(), 1e-5);
}

TEST(Bijectivity, DetectsFolds) {
    TensorBasis b{KnotVector::uniform(2, 3), KnotVector::uniform(2, 3)};
    auto m = affine_map(b, 1.0, 1.0);
    auto rep = sampled_bijectivity(m, 5);
    EXPECT_EQ(rep.fold_count, 0);
    EXPECT_EQ(rep.samples, 9 * 25);
    EXPECT_NEAR(rep.min_detJ, 1.0, 1e-13);
    // Push an inner control point across the boundary.
    m.control_points[static_cast<std::size_t>(b.index(1, 1))] = Point(1.6, 1.7);
    rep = sampled_bijectivity(m, 5);
    EXPECT_GT(rep.fold_count, 0);
    EXPECT_LT(rep.min_detJ, 0.0);
    EXPECT_THROW(winslow(m, 3), NonbijectiveError);
}

TEST(Interpolation, ReproducesPolynomials) {
    const double half[] = {0.5};
    auto kv = KnotVector::uniform(3, 6, half, 2);
    auto f = [](double t) { return Point(t * t * t - t, 2 * t * t + 1); };
    auto c = interpolate_curve(kv, f);
    for (double t = 0; t <= 1.0; t += 0.05) EXPECT_LT((eval_curve<Point>(kv, c, t) - f(t)).norm(), 1e-13);
}
