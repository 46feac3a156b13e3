#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "io.hpp"

/// Sample geometries: analogs of classic test domains for planar
/// parameterization, built from their boundary contours alone.
namespace harmap::samples {

inline PatchSpec patch_from_curves(const TensorBasis& basis, const BoundaryCurves& c) {
    PatchSpec p;
    p.basis = basis;
    p.boundary[static_cast<std::size_t>(Face::south)] = c.south;
    p.boundary[static_cast<std::size_t>(Face::north)] = c.north;
    p.boundary[static_cast<std::size_t>(Face::west)] = c.west;
    p.boundary[static_cast<std::size_t>(Face::east)] = c.east;
    return p;
}

/// Unit square with linear boundary parameterization; the identity solves it.
inline GeometryFile square(int degree = 3, int elements = 4) {
    auto kv = KnotVector::uniform(degree, elements);
    GeometryFile g;
    g.name = "square";
    g.patches.push_back(patch_from_curves(
        {kv, kv}, {interpolate_curve(kv, [](double t) { return Point(t, 0.0); }),
                   interpolate_curve(kv, [](double t) { return Point(t, 1.0); }),
                   interpolate_curve(kv, [](double t) { return Point(0.0, t); }),
                   interpolate_curve(kv, [](double t) { return Point(1.0, t); })}));
    return g;
}

/// x(xi, eta) = 2^xi (cos(pi eta / 2), sin(pi eta / 2)): harmonic inverse on
/// the annulus sector between radii 1 and 2.
inline Point quarter_annulus_exact(double xi, double eta) {
    const double r = std::exp(xi * std::log(2.0));
    const double a = 0.5 * std::numbers::pi * eta;
    return {r * std::cos(a), r * std::sin(a)};
}

inline GeometryFile quarter_annulus(int degree = 3, int elements = 8) {
    auto kv = KnotVector::uniform(degree, elements);
    GeometryFile g;
    g.name = "quarter-annulus";
    g.patches.push_back(patch_from_curves(
        {kv, kv}, {interpolate_curve(kv, [](double t) { return quarter_annulus_exact(t, 0.0); }),
                   interpolate_curve(kv, [](double t) { return quarter_annulus_exact(t, 1.0); }),
                   interpolate_curve(kv, [](double t) { return quarter_annulus_exact(0.0, t); }),
                   interpolate_curve(kv, [](double t) { return quarter_annulus_exact(1.0, t); })}));
    return g;
}

/// Piecewise linear a -> b -> c over [0, 1/2] and [1/2, 1].
inline Point polyline3(const Point& a, const Point& b, const Point& c, double t) {
    return t <= 0.5 ? Point(a + (b - a) * (2.0 * t)) : Point(b + (c - b) * (2.0 * t - 1.0));
}

/// Cubic knots in xi with a p-fold knot at 1/2 (C0 there) and uniform eta knots.
inline TensorBasis kinked_basis(int xi_elements = 8, int eta_elements = 4) {
    const double half[] = {0.5};
    return {KnotVector::uniform(3, xi_elements, half, 3), KnotVector::uniform(3, eta_elements)};
}

/// L-shaped bend between the inner corner (1, 1) and the outer corner (0, 0).
/// Mirror symmetric under (x, y) -> (y, x) with xi -> 1 - xi.
inline GeometryFile lbend(int xi_elements = 8, int eta_elements = 4) {
    TensorBasis b = kinked_basis(xi_elements, eta_elements);
    GeometryFile g;
    g.name = "lbend";
    g.patches.push_back(patch_from_curves(
        b, {interpolate_curve(b.kv_xi, [](double t) { return polyline3({2, 1}, {1, 1}, {1, 2}, t); }),
            interpolate_curve(b.kv_xi, [](double t) { return polyline3({2, 0}, {0, 0}, {0, 2}, t); }),
            interpolate_curve(b.kv_eta, [](double t) { return Point(2.0, 1.0 - t); }),
            interpolate_curve(b.kv_eta, [](double t) { return Point(1.0 - t, 2.0); })}));
    g.solver.mode = AuxMode::xi_only;
    return g;
}

/// Channel with spiked upper and lower walls meeting at x = 0.
inline GeometryFile tube(int xi_elements = 8, int eta_elements = 4) {
    TensorBasis b = kinked_basis(xi_elements, eta_elements);
    auto wall = [](double t, double sign) {
        const double x = 2.0 * t - 1.0;
        const double s = 1.0 - std::abs(x);
        return Point(x, sign * (1.0 - 0.8 * s * s));
    };
    GeometryFile g;
    g.name = "tube";
    g.patches.push_back(patch_from_curves(
        b, {interpolate_curve(b.kv_xi, [&](double t) { return wall(t, -1.0); }),
            interpolate_curve(b.kv_xi, [&](double t) { return wall(t, 1.0); }),
            interpolate_curve(b.kv_eta, [](double t) { return Point(-1.0, 2.0 * t - 1.0); }),
            interpolate_curve(b.kv_eta, [](double t) { return Point(1.0, 2.0 * t - 1.0); })}));
    g.solver.mode = AuxMode::xi_only;
    return g;
}

struct BatParameters {
    int degree = 3;
    std::array<int, 3> elements{10, 11, 12};
    double stretch = 1.8;  // horizontal stretch of the hexagon
    double bulge = 0.25;   // inward bulge of each edge relative to its chord
};

/// Hexagonal parametric domain split into three rhombi around the origin
/// (spokes at 90, 210 and 330 degrees). Patch k spans spokes k and k + 1 and
/// has elements[k] x elements[k + 1] elements. The target contour is the
/// stretched hexagon with every edge bent inwards.
inline GeometryFile bat(const BatParameters& prm = {}) {
    std::array<Eigen::Vector2d, 3> spoke;
    for (int k = 0; k < 3; ++k) {
        const double a = std::numbers::pi / 180.0 * (90.0 + 120.0 * k);
        spoke[static_cast<std::size_t>(k)] = {std::cos(a), std::sin(a)};
    }
    GeometryFile g;
    g.name = "bat";
    for (int k = 0; k < 3; ++k) {
        const auto k1 = static_cast<std::size_t>((k + 1) % 3);
        Eigen::Matrix2d A;
        A.col(0) = spoke[static_cast<std::size_t>(k)];
        A.col(1) = spoke[k1];
        PatchSpec p;
        p.basis = {KnotVector::uniform(prm.degree, prm.elements[static_cast<std::size_t>(k)]),
                   KnotVector::uniform(prm.degree, prm.elements[k1])};
        p.map = AffinePatchMap(A, Eigen::Vector2d::Zero());
        for (Face f : {Face::north, Face::east}) {
            auto phys = [&](const Eigen::Vector2d& q) { return Point(prm.stretch * q.x(), q.y()); };
            const Point p0 = phys(p.map(face_point(f, 0.0))), p1 = phys(p.map(face_point(f, 1.0)));
            const Point chord = p1 - p0;
            Point normal(-chord.y(), chord.x());
            normal.normalize();
            if (normal.dot(-(p0 + p1) / 2.0) < 0) normal = -normal;
            p.boundary[static_cast<std::size_t>(f)] = interpolate_curve(face_knots(p.basis, f), [&](double t) {
                return Point(p0 + t * chord + normal * (prm.bulge * chord.norm() * std::sin(std::numbers::pi * t)));
            });
        }
        g.patches.push_back(std::move(p));
        // South face of patch k runs along spoke k, as does the west face of patch k - 1.
        g.interfaces.push_back({k, Face::south, (k + 2) % 3, Face::west, false});
    }
    g.solver.initial = InitialGuess::folded;
    return g;
}

/// Named bundled samples.
inline std::vector<std::pair<std::string, GeometryFile>> bundled() {
    return {{"square", square()}, {"quarter_annulus", quarter_annulus()}, {"lbend", lbend()},
            {"tube", tube()},     {"bat", bat()}};
}

}  // namespace harmap::samples
