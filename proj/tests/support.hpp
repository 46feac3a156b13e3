#pragma once

#include <cmath>
#include <functional>
#include <string>

#include <harmap/mapping.hpp>

/// Shared fixtures for the unit suites.
namespace harmap::testing {

using Field = std::function<Point(double, double)>;

/// Dense collocation matrix N(i, j) = N_j(greville_i).
inline Eigen::MatrixXd collocation(const KnotVector& kv) {
    auto g = greville(kv);
    Eigen::MatrixXd N = Eigen::MatrixXd::Zero(kv.dim(), kv.dim());
    for (int i = 0; i < kv.dim(); ++i) {
        auto t = eval_univariate(kv, g[static_cast<std::size_t>(i)], 0);
        for (int a = 0; a < t.values.cols(); ++a) N(i, t.first + a) = t.values(0, a);
    }
    return N;
}

/// Tensor Greville interpolant of f; exact for polynomials of the spline degree.
inline SplineMap interpolated_map(const TensorBasis& b, const Field& f) {
    auto gx = greville(b.kv_xi), ge = greville(b.kv_eta);
    Eigen::MatrixXd Fx(b.n_xi(), b.n_eta()), Fy(b.n_xi(), b.n_eta());
    for (int i = 0; i < b.n_xi(); ++i)
        for (int j = 0; j < b.n_eta(); ++j) {
            Point p = f(gx[static_cast<std::size_t>(i)], ge[static_cast<std::size_t>(j)]);
            Fx(i, j) = p.x();
            Fy(i, j) = p.y();
        }
    auto lx = collocation(b.kv_xi).fullPivLu(), le = collocation(b.kv_eta).fullPivLu();
    Eigen::MatrixXd Cx = le.solve(lx.solve(Fx).transpose()).transpose();
    Eigen::MatrixXd Cy = le.solve(lx.solve(Fy).transpose()).transpose();
    auto at = [&](int i, int j) { return Point(Cx(i, j), Cy(i, j)); };
    BoundaryCurves c;
    for (int i = 0; i < b.n_xi(); ++i) {
        c.south.push_back(at(i, 0));
        c.north.push_back(at(i, b.n_eta() - 1));
    }
    for (int j = 0; j < b.n_eta(); ++j) {
        c.west.push_back(at(0, j));
        c.east.push_back(at(b.n_xi() - 1, j));
    }
    SplineMap m = make_map(b, c);
    for (int i = 0; i < b.n_xi(); ++i)
        for (int j = 0; j < b.n_eta(); ++j) m.control_points[static_cast<std::size_t>(b.index(i, j))] = at(i, j);
    return m;
}

/// Map whose boundary interpolates f and whose interior is the transfinite guess.
inline SplineMap transfinite_map(const TensorBasis& b, const Field& f) {
    BoundaryCurves c{interpolate_curve(b.kv_xi, [&](double t) { return f(t, 0.0); }),
                     interpolate_curve(b.kv_xi, [&](double t) { return f(t, 1.0); }),
                     interpolate_curve(b.kv_eta, [&](double t) { return f(0.0, t); }),
                     interpolate_curve(b.kv_eta, [&](double t) { return f(1.0, t); })};
    SplineMap m = make_map(b, c);
    m.set_inner_coefficients(transfinite_initial_guess(m));
    return m;
}

inline Point identity_field(double x, double y) { return {x, y}; }

/// Quarter annulus with radii 1 and 2, angle along xi.
inline Point annulus_field(double x, double y) {
    const double r = 1.0 + y, th = 0.5 * M_PI * x;
    return {r * std::cos(th), r * std::sin(th)};
}

inline std::string source_path(const std::string& rel) { return std::string(HARMAP_SOURCE_DIR) + "/" + rel; }

}  // namespace harmap::testing
