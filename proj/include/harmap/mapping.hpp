#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "splines.hpp"

namespace harmap {

using Point = Eigen::Vector2d;

class NonbijectiveError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Boundary contours as spline coefficients. South/north run along xi at
/// eta = 0 / 1, west/east run along eta at xi = 0 / 1.
struct BoundaryCurves {
    std::vector<Point> south, north, west, east;
};

/// Planar spline map x(xi, eta) = sum_i c_i w_i(xi, eta).
struct SplineMap {
    TensorBasis basis;
    std::vector<Point> control_points;
    std::vector<int> boundary_indices;
    std::vector<int> inner_indices;

    int num_inner() const { return static_cast<int>(inner_indices.size()); }

    /// Inner coefficients packed as [x_0 .. x_{m-1}, y_0 .. y_{m-1}].
    Vector inner_coefficients() const {
        const int m = num_inner();
        Vector c(2 * m);
        for (int k = 0; k < m; ++k) {
            c(k) = control_points[static_cast<std::size_t>(inner_indices[k])].x();
            c(m + k) = control_points[static_cast<std::size_t>(inner_indices[k])].y();
        }
        return c;
    }

    void set_inner_coefficients(const Vector& c) {
        const int m = num_inner();
        if (c.size() != 2 * m) throw InputError("inner coefficient vector has wrong length");
        for (int k = 0; k < m; ++k) control_points[static_cast<std::size_t>(inner_indices[k])] = Point(c(k), c(m + k));
    }

    Point evaluate(double xi, double eta) const {
        auto t = tensor_eval(basis, xi, eta, 0);
        Point x = Point::Zero();
        for (std::size_t a = 0; a < t.indices.size(); ++a) x += t.w[a] * control_points[static_cast<std::size_t>(t.indices[a])];
        return x;
    }
};

/// Splits the tensor index range into boundary (nonvanishing on the boundary
/// of the unit square) and inner indices, both ascending.
inline void classify_indices(const TensorBasis& basis, std::vector<int>& boundary, std::vector<int>& inner) {
    boundary.clear();
    inner.clear();
    for (int i = 0; i < basis.size(); ++i) (basis.is_boundary(i) ? boundary : inner).push_back(i);
}

inline SplineMap make_map(const TensorBasis& basis, const BoundaryCurves& curves) {
    const int nx = basis.n_xi(), ne = basis.n_eta();
    auto check_len = [](const std::vector<Point>& v, int n, const char* name) {
        if (static_cast<int>(v.size()) != n)
            throw InputError(std::string("boundary curve '") + name + "' has " + std::to_string(v.size()) +
                             " coefficients, expected " + std::to_string(n));
    };
    check_len(curves.south, nx, "south");
    check_len(curves.north, nx, "north");
    check_len(curves.west, ne, "west");
    check_len(curves.east, ne, "east");
    auto check_corner = [](const Point& a, const Point& b, const char* name) {
        if ((a - b).norm() > 1e-12) throw InputError(std::string("corner mismatch at ") + name);
    };
    check_corner(curves.south.front(), curves.west.front(), "south-west");
    check_corner(curves.south.back(), curves.east.front(), "south-east");
    check_corner(curves.north.front(), curves.west.back(), "north-west");
    check_corner(curves.north.back(), curves.east.back(), "north-east");

    SplineMap map;
    map.basis = basis;
    map.control_points.assign(static_cast<std::size_t>(basis.size()), Point::Zero());
    for (int j = 0; j < ne; ++j) {
        map.control_points[static_cast<std::size_t>(basis.index(0, j))] = curves.west[static_cast<std::size_t>(j)];
        map.control_points[static_cast<std::size_t>(basis.index(nx - 1, j))] = curves.east[static_cast<std::size_t>(j)];
    }
    for (int i = 0; i < nx; ++i) {
        map.control_points[static_cast<std::size_t>(basis.index(i, 0))] = curves.south[static_cast<std::size_t>(i)];
        map.control_points[static_cast<std::size_t>(basis.index(i, ne - 1))] = curves.north[static_cast<std::size_t>(i)];
    }
    classify_indices(basis, map.boundary_indices, map.inner_indices);
    return map;
}

/// Boundary curves read back from a control net.
inline BoundaryCurves boundary_curves(const SplineMap& map) {
    const auto& b = map.basis;
    BoundaryCurves c;
    for (int i = 0; i < b.n_xi(); ++i) {
        c.south.push_back(map.control_points[static_cast<std::size_t>(b.index(i, 0))]);
        c.north.push_back(map.control_points[static_cast<std::size_t>(b.index(i, b.n_eta() - 1))]);
    }
    for (int j = 0; j < b.n_eta(); ++j) {
        c.west.push_back(map.control_points[static_cast<std::size_t>(b.index(0, j))]);
        c.east.push_back(map.control_points[static_cast<std::size_t>(b.index(b.n_xi() - 1, j))]);
    }
    return c;
}

/// Bilinearly blended Coons patch on the control net, blended at the Greville
/// abscissae. Returns the inner coefficient vector; `map` is not modified.
inline Vector transfinite_initial_guess(const SplineMap& map) {
    const auto& b = map.basis;
    const int nx = b.n_xi(), ne = b.n_eta();
    auto s = greville(b.kv_xi);
    auto t = greville(b.kv_eta);
    auto P = [&](int i, int j) -> const Point& { return map.control_points[static_cast<std::size_t>(b.index(i, j))]; };
    SplineMap out = map;
    for (int i = 1; i < nx - 1; ++i) {
        for (int j = 1; j < ne - 1; ++j) {
            const double si = s[static_cast<std::size_t>(i)], tj = t[static_cast<std::size_t>(j)];
            Point v = (1 - si) * P(0, j) + si * P(nx - 1, j) + (1 - tj) * P(i, 0) + tj * P(i, ne - 1) -
                      ((1 - si) * (1 - tj) * P(0, 0) + si * (1 - tj) * P(nx - 1, 0) + (1 - si) * tj * P(0, ne - 1) +
                       si * tj * P(nx - 1, ne - 1));
            out.control_points[static_cast<std::size_t>(b.index(i, j))] = v;
        }
    }
    return out.inner_coefficients();
}

struct MetricSample {
    double g11 = 0, g12 = 0, g22 = 0, detJ = 0;
    Point x_xi = Point::Zero(), x_eta = Point::Zero();
};

inline MetricSample metric_from_derivatives(const Point& x_xi, const Point& x_eta) {
    MetricSample m;
    m.x_xi = x_xi;
    m.x_eta = x_eta;
    m.g11 = x_xi.dot(x_xi);
    m.g12 = x_xi.dot(x_eta);
    m.g22 = x_eta.dot(x_eta);
    m.detJ = x_xi.x() * x_eta.y() - x_xi.y() * x_eta.x();
    return m;
}

inline MetricSample metric_at(const SplineMap& map, double xi, double eta) {
    auto t = tensor_eval(map.basis, xi, eta, 1);
    Point dx = Point::Zero(), de = Point::Zero();
    for (std::size_t a = 0; a < t.indices.size(); ++a) {
        const Point& c = map.control_points[static_cast<std::size_t>(t.indices[a])];
        dx += t.w_xi[a] * c;
        de += t.w_eta[a] * c;
    }
    return metric_from_derivatives(dx, de);
}

/// Visits Gauss points of every element (xi-major element order).
template <typename F>
void for_each_gauss_point(const TensorBasis& basis, int quad_order, F&& f) {
    auto rule = gauss_legendre(quad_order);
    auto bx = basis.kv_xi.breakpoints(), be = basis.kv_eta.breakpoints();
    for (std::size_t ex = 0; ex + 1 < bx.size(); ++ex)
        for (std::size_t ey = 0; ey + 1 < be.size(); ++ey) {
            const double hx = bx[ex + 1] - bx[ex], he = be[ey + 1] - be[ey];
            for (std::size_t qx = 0; qx < rule.points.size(); ++qx)
                for (std::size_t qy = 0; qy < rule.points.size(); ++qy)
                    f(bx[ex] + hx * rule.points[qx], be[ey] + he * rule.points[qy],
                      hx * he * rule.weights[qx] * rule.weights[qy]);
        }
}

/// Winslow functional: integral of (g11 + g22) / det J.
inline double winslow(const SplineMap& map, int quad_order) {
    double w = 0.0;
    for_each_gauss_point(map.basis, quad_order, [&](double xi, double eta, double wq) {
        auto m = metric_at(map, xi, eta);
        if (!(m.detJ > 0.0)) throw NonbijectiveError("Winslow functional undefined: det J <= 0 at a quadrature point");
        w += wq * (m.g11 + m.g22) / m.detJ;
    });
    return w;
}

/// Gradient of the Winslow functional with respect to the inner coefficients
/// (same packing as SplineMap::inner_coefficients).
inline Vector winslow_gradient(const SplineMap& map, int quad_order) {
    const int m = map.num_inner();
    std::vector<int> inner_pos(static_cast<std::size_t>(map.basis.size()), -1);
    for (int k = 0; k < m; ++k) inner_pos[static_cast<std::size_t>(map.inner_indices[k])] = k;
    Vector grad = Vector::Zero(2 * m);
    for_each_gauss_point(map.basis, quad_order, [&](double xi, double eta, double wq) {
        auto t = tensor_eval(map.basis, xi, eta, 1);
        Point dx = Point::Zero(), de = Point::Zero();
        for (std::size_t a = 0; a < t.indices.size(); ++a) {
            const Point& c = map.control_points[static_cast<std::size_t>(t.indices[a])];
            dx += t.w_xi[a] * c;
            de += t.w_eta[a] * c;
        }
        const double S = dx.squaredNorm() + de.squaredNorm();
        const double J = dx.x() * de.y() - dx.y() * de.x();
        if (!(J > 0.0)) throw NonbijectiveError("Winslow gradient undefined: det J <= 0 at a quadrature point");
        for (std::size_t a = 0; a < t.indices.size(); ++a) {
            int k = inner_pos[static_cast<std::size_t>(t.indices[a])];
            if (k < 0) continue;
            const double wx = t.w_xi[a], we = t.w_eta[a];
            const double dS0 = 2.0 * (dx.x() * wx + de.x() * we), dS1 = 2.0 * (dx.y() * wx + de.y() * we);
            const double dJ0 = wx * de.y() - we * dx.y(), dJ1 = -wx * de.x() + we * dx.x();
            grad(k) += wq * (dS0 * J - S * dJ0) / (J * J);
            grad(m + k) += wq * (dS1 * J - S * dJ1) / (J * J);
        }
    });
    return grad;
}

struct WinslowDescentResult {
    Vector inner;
    double initial_value = 0.0;
    double value = 0.0;
    int iterations = 0;
    double gradient_norm = 0.0;
};

/// Gradient descent on the Winslow functional from a bijective start. Steps
/// leaving the bijective set (det J <= 0 at a quadrature point) are rejected
/// and shortened, as are steps that do not decrease the functional. Step
/// lengths come from the Barzilai-Borwein rule with Armijo backtracking.
inline WinslowDescentResult minimize_winslow(const SplineMap& start, int quad_order, int max_iter = 500,
                                             double gtol = 1e-10) {
    SplineMap map = start;
    WinslowDescentResult r;
    Vector c = map.inner_coefficients();
    double f = winslow(map, quad_order);
    r.initial_value = f;
    Vector g = winslow_gradient(map, quad_order);
    double step = 1.0 / std::max(g.norm(), 1e-300) * 1e-2;
    Vector c_prev, g_prev;
    for (int it = 0; it < max_iter && g.norm() > gtol; ++it) {
        if (it > 0) {
            Vector sv = c - c_prev, yv = g - g_prev;
            double sy = sv.dot(yv);
            if (sy > 0) step = sv.squaredNorm() / sy;
        }
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
            Vector trial = c - step * g;
            map.set_inner_coefficients(trial);
            double ft;
            try {
                ft = winslow(map, quad_order);
            } catch (const NonbijectiveError&) {
                continue;
            }
            if (ft <= f - 1e-4 * step * g.squaredNorm()) {
                c_prev = c;
                g_prev = g;
                c = trial;
                f = ft;
                accepted = true;
                break;
            }
        }
        map.set_inner_coefficients(c);
        if (!accepted) break;
        g = winslow_gradient(map, quad_order);
        r.iterations = it + 1;
    }
    r.inner = c;
    r.value = f;
    r.gradient_norm = g.norm();
    return r;
}

struct FoldLocation {
    double xi = 0, eta = 0, detJ = 0;
};

struct BijectivityReport {
    double min_detJ = std::numeric_limits<double>::infinity();
    int fold_count = 0;
    std::vector<FoldLocation> folds;
    int samples = 0;
};

/// Samples det J on a samples x samples grid of element-interior points in
/// every element (lexicographic element order).
inline BijectivityReport sampled_bijectivity(const SplineMap& map, int samples_per_element = 5) {
    BijectivityReport rep;
    auto bx = map.basis.kv_xi.breakpoints(), be = map.basis.kv_eta.breakpoints();
    const int n = samples_per_element;
    for (std::size_t ex = 0; ex + 1 < bx.size(); ++ex)
        for (std::size_t ey = 0; ey + 1 < be.size(); ++ey)
            for (int a = 0; a < n; ++a)
                for (int b = 0; b < n; ++b) {
                    double xi = bx[ex] + (bx[ex + 1] - bx[ex]) * (a + 0.5) / n;
                    double eta = be[ey] + (be[ey + 1] - be[ey]) * (b + 0.5) / n;
                    double J = metric_at(map, xi, eta).detJ;
                    ++rep.samples;
                    rep.min_detJ = std::min(rep.min_detJ, J);
                    if (!(J > 0.0)) {
                        ++rep.fold_count;
                        rep.folds.push_back({xi, eta, J});
                    }
                }
    return rep;
}

/// Spline curve interpolating f at the Greville abscissae of kv.
template <typename F>
std::vector<Point> interpolate_curve(const KnotVector& kv, F&& f) {
    auto g = greville(kv);
    const int n = kv.dim();
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd rhs(n, 2);
    for (int i = 0; i < n; ++i) {
        const double x = g[static_cast<std::size_t>(i)];
        auto t = eval_univariate(kv, x, 0);
        for (int a = 0; a <= kv.degree(); ++a) C(i, t.first + a) = t.values(0, a);
        const Point p = f(x);
        rhs(i, 0) = p.x();
        rhs(i, 1) = p.y();
    }
    Eigen::MatrixXd sol = C.partialPivLu().solve(rhs);
    std::vector<Point> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = Point(sol(i, 0), sol(i, 1));
    out.front() = f(0.0);
    out.back() = f(1.0);
    return out;
}

}  // namespace harmap
