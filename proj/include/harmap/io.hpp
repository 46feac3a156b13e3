#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "assembly.hpp"
#include "mapping.hpp"
#include "multipatch.hpp"
#include "solver.hpp"
#include "splines.hpp"

namespace harmap {

using json = nlohmann::json;

struct SchemaIssue {
    std::string pointer;
    std::string message;
    std::string str() const { return (pointer.empty() ? std::string("/") : pointer) + ": " + message; }
};

/// Schema violations, each tagged with a JSON pointer into the document.
class SchemaError : public InputError {
public:
    explicit SchemaError(std::vector<SchemaIssue> issues)
        : InputError(summarize(issues)), issues_(std::move(issues)) {}
    const std::vector<SchemaIssue>& issues() const { return issues_; }

private:
    static std::string summarize(const std::vector<SchemaIssue>& issues) {
        std::string s;
        for (const auto& i : issues) s += (s.empty() ? "" : "\n") + i.str();
        return s;
    }
    std::vector<SchemaIssue> issues_;
};

enum class InitialGuess { transfinite, file, folded };

inline const char* to_string(InitialGuess g) {
    switch (g) {
        case InitialGuess::transfinite: return "transfinite";
        case InitialGuess::file: return "file";
        case InitialGuess::folded: return "folded";
    }
    return "transfinite";
}

inline std::optional<InitialGuess> initial_guess_from_string(const std::string& s) {
    if (s == "transfinite") return InitialGuess::transfinite;
    if (s == "file") return InitialGuess::file;
    if (s == "folded") return InitialGuess::folded;
    return std::nullopt;
}

/// Solver settings that a geometry file or the command line may override.
struct SolverOverrides {
    std::optional<AuxMode> mode;
    std::optional<double> mu, chi, tol, abs_tol, gmres_rtol;
    std::optional<int> max_newton, coarse_levels, quad_points, gmres_restart, gmres_max_iter;
    std::optional<InitialGuess> initial;
    std::optional<bool> exact_coupled_schur;

    /// Entries set in `o` win.
    void merge(const SolverOverrides& o) {
        auto take = [](auto& dst, const auto& src) {
            if (src) dst = src;
        };
        take(mode, o.mode), take(mu, o.mu), take(chi, o.chi), take(tol, o.tol), take(abs_tol, o.abs_tol);
        take(gmres_rtol, o.gmres_rtol), take(max_newton, o.max_newton), take(coarse_levels, o.coarse_levels);
        take(quad_points, o.quad_points), take(gmres_restart, o.gmres_restart);
        take(gmres_max_iter, o.gmres_max_iter), take(initial, o.initial);
        take(exact_coupled_schur, o.exact_coupled_schur);
    }
};

struct PatchSpec {
    TensorBasis basis;
    AffinePatchMap map;
    std::array<std::optional<std::vector<Point>>, 4> boundary;  // indexed by Face
    std::optional<std::vector<Point>> initial;                   // full local net
};

struct GeometryFile {
    int version = 1;
    std::string name;
    std::vector<PatchSpec> patches;
    std::vector<Interface> interfaces;
    SolverOverrides solver;
};

inline constexpr const char* kGeometryFormat = "harmap-geometry";
inline constexpr const char* kSolutionFormat = "harmap-solution";

// ---------------------------------------------------------------------------
// Parsing with JSON-pointer diagnostics.

namespace detail {

inline std::string escape_pointer_token(const std::string& s) {
    std::string o;
    for (char ch : s) {
        if (ch == '~')
            o += "~0";
        else if (ch == '/')
            o += "~1";
        else
            o += ch;
    }
    return o;
}

class Reader {
public:
    std::vector<SchemaIssue> issues;

    void error(const std::string& ptr, const std::string& msg) { issues.push_back({ptr, msg}); }

    static std::string at(const std::string& ptr, const std::string& key) { return ptr + "/" + escape_pointer_token(key); }
    static std::string at(const std::string& ptr, std::size_t i) { return ptr + "/" + std::to_string(i); }

    bool object(const json& j, const std::string& ptr, std::initializer_list<const char*> allowed) {
        if (!j.is_object()) {
            error(ptr, "expected an object");
            return false;
        }
        for (auto it = j.begin(); it != j.end(); ++it) {
            bool ok = false;
            for (const char* a : allowed) ok = ok || it.key() == a;
            if (!ok) error(at(ptr, it.key()), "unknown property");
        }
        return true;
    }

    const json* member(const json& j, const std::string& ptr, const char* key, bool required) {
        auto it = j.find(key);
        if (it == j.end()) {
            if (required) error(at(ptr, key), "required property is missing");
            return nullptr;
        }
        return &*it;
    }

    std::optional<double> number(const json& j, const std::string& ptr) {
        if (!j.is_number()) {
            error(ptr, "expected a number");
            return std::nullopt;
        }
        double v = j.get<double>();
        if (!std::isfinite(v)) {
            error(ptr, "expected a finite number");
            return std::nullopt;
        }
        return v;
    }

    std::optional<int> integer(const json& j, const std::string& ptr, int min_value) {
        if (!j.is_number_integer()) {
            error(ptr, "expected an integer");
            return std::nullopt;
        }
        auto v = j.get<long long>();
        if (v < min_value || v > 1'000'000) {
            error(ptr, "integer must lie in [" + std::to_string(min_value) + ", 1000000]");
            return std::nullopt;
        }
        return static_cast<int>(v);
    }

    std::optional<std::string> string(const json& j, const std::string& ptr) {
        if (!j.is_string()) {
            error(ptr, "expected a string");
            return std::nullopt;
        }
        return j.get<std::string>();
    }

    std::optional<bool> boolean(const json& j, const std::string& ptr) {
        if (!j.is_boolean()) {
            error(ptr, "expected a boolean");
            return std::nullopt;
        }
        return j.get<bool>();
    }

    std::optional<std::vector<double>> numbers(const json& j, const std::string& ptr, std::size_t min_len = 0) {
        if (!j.is_array()) {
            error(ptr, "expected an array of numbers");
            return std::nullopt;
        }
        if (j.size() < min_len) {
            error(ptr, "expected at least " + std::to_string(min_len) + " entries");
            return std::nullopt;
        }
        std::vector<double> v;
        bool ok = true;
        for (std::size_t i = 0; i < j.size(); ++i) {
            auto x = number(j[i], at(ptr, i));
            ok = ok && x.has_value();
            v.push_back(x.value_or(0.0));
        }
        if (!ok) return std::nullopt;
        return v;
    }

    std::optional<Point> point(const json& j, const std::string& ptr) {
        if (!j.is_array() || j.size() != 2) {
            error(ptr, "expected a point [x, y]");
            return std::nullopt;
        }
        auto x = number(j[0], at(ptr, 0));
        auto y = number(j[1], at(ptr, 1));
        if (!x || !y) return std::nullopt;
        return Point(*x, *y);
    }

    std::optional<std::vector<Point>> points(const json& j, const std::string& ptr) {
        if (!j.is_array()) {
            error(ptr, "expected an array of points");
            return std::nullopt;
        }
        std::vector<Point> v;
        bool ok = true;
        for (std::size_t i = 0; i < j.size(); ++i) {
            auto p = point(j[i], at(ptr, i));
            ok = ok && p.has_value();
            v.push_back(p.value_or(Point::Zero()));
        }
        if (!ok) return std::nullopt;
        return v;
    }

    std::optional<KnotVector> knot_vector(const json& j, const std::string& ptr) {
        if (!object(j, ptr, {"degree", "knots"})) return std::nullopt;
        const json* d = member(j, ptr, "degree", true);
        const json* k = member(j, ptr, "knots", true);
        std::optional<int> deg = d ? integer(*d, at(ptr, "degree"), 1) : std::nullopt;
        std::optional<std::vector<double>> knots = k ? numbers(*k, at(ptr, "knots"), 2) : std::nullopt;
        if (!deg || !knots) return std::nullopt;
        try {
            return KnotVector(*deg, *knots);
        } catch (const std::exception& e) {
            error(at(ptr, "knots"), e.what());
            return std::nullopt;
        }
    }

    SolverOverrides solver(const json& j, const std::string& ptr) {
        SolverOverrides o;
        if (!object(j, ptr,
                    {"mode", "mu", "chi", "tol", "abs_tol", "max_newton", "coarse_levels", "quad_points", "initial",
                     "gmres", "exact_coupled_schur"}))
            return o;
        if (auto* m = member(j, ptr, "mode", false))
            if (auto s = string(*m, at(ptr, "mode"))) {
                if (*s == "full" || *s == "xi" || *s == "eta")
                    o.mode = aux_mode_from_string(*s);
                else
                    error(at(ptr, "mode"), "expected one of full, xi, eta");
            }
        auto positive = [&](const char* key, std::optional<double>& dst) {
            if (auto* m = member(j, ptr, key, false))
                if (auto v = number(*m, at(ptr, key))) {
                    if (*v > 0)
                        dst = v;
                    else
                        error(at(ptr, key), "expected a positive number");
                }
        };
        positive("mu", o.mu);
        positive("tol", o.tol);
        positive("abs_tol", o.abs_tol);
        if (auto* m = member(j, ptr, "chi", false))
            if (auto v = number(*m, at(ptr, "chi"))) {
                if (*v >= 0 && *v <= 1)
                    o.chi = v;
                else
                    error(at(ptr, "chi"), "expected a number in [0, 1]");
            }
        if (auto* m = member(j, ptr, "max_newton", false)) o.max_newton = integer(*m, at(ptr, "max_newton"), 1);
        if (auto* m = member(j, ptr, "coarse_levels", false))
            o.coarse_levels = integer(*m, at(ptr, "coarse_levels"), 0);
        if (auto* m = member(j, ptr, "quad_points", false)) o.quad_points = integer(*m, at(ptr, "quad_points"), 1);
        if (auto* m = member(j, ptr, "initial", false))
            if (auto s = string(*m, at(ptr, "initial"))) {
                o.initial = initial_guess_from_string(*s);
                if (!o.initial) error(at(ptr, "initial"), "expected one of transfinite, file, folded");
            }
        if (auto* m = member(j, ptr, "exact_coupled_schur", false))
            o.exact_coupled_schur = boolean(*m, at(ptr, "exact_coupled_schur"));
        if (auto* g = member(j, ptr, "gmres", false)) {
            const std::string gp = at(ptr, "gmres");
            if (object(*g, gp, {"rtol", "restart", "max_iter"})) {
                if (auto* m = member(*g, gp, "rtol", false))
                    if (auto v = number(*m, at(gp, "rtol"))) {
                        if (*v > 0)
                            o.gmres_rtol = v;
                        else
                            error(at(gp, "rtol"), "expected a positive number");
                    }
                if (auto* m = member(*g, gp, "restart", false)) o.gmres_restart = integer(*m, at(gp, "restart"), 1);
                if (auto* m = member(*g, gp, "max_iter", false)) o.gmres_max_iter = integer(*m, at(gp, "max_iter"), 1);
            }
        }
        return o;
    }
};

inline json point_json(const Point& p) { return json::array({p.x(), p.y()}); }

inline json points_json(const std::vector<Point>& v) {
    json a = json::array();
    for (const auto& p : v) a.push_back(point_json(p));
    return a;
}

inline json knots_json(const KnotVector& kv) { return {{"degree", kv.degree()}, {"knots", kv.knots()}}; }

}  // namespace detail

/// Parses a geometry document; collects every schema violation before throwing.
inline GeometryFile parse_geometry(const json& j) {
    detail::Reader r;
    GeometryFile g;
    using detail::Reader;
    if (r.object(j, "", {"format", "version", "name", "patches", "interfaces", "solver"})) {
        if (auto* f = r.member(j, "", "format", true))
            if (auto s = r.string(*f, "/format"); s && *s != kGeometryFormat)
                r.error("/format", std::string("expected \"") + kGeometryFormat + "\"");
        if (auto* v = r.member(j, "", "version", true))
            if (auto n = r.integer(*v, "/version", 1)) {
                if (*n != 1)
                    r.error("/version", "unsupported version " + std::to_string(*n));
                else
                    g.version = *n;
            }
        if (auto* n = r.member(j, "", "name", false))
            if (auto s = r.string(*n, "/name")) g.name = *s;
        if (auto* ps = r.member(j, "", "patches", true)) {
            if (!ps->is_array() || ps->empty()) {
                r.error("/patches", "expected a non-empty array of patches");
            } else {
                for (std::size_t i = 0; i < ps->size(); ++i) {
                    const std::string pp = Reader::at("/patches", i);
                    const json& pj = (*ps)[i];
                    PatchSpec spec;
                    if (!r.object(pj, pp, {"basis", "affine", "boundary", "initial"})) {
                        g.patches.push_back(spec);
                        continue;
                    }
                    if (auto* b = r.member(pj, pp, "basis", true)) {
                        const std::string bp = Reader::at(pp, "basis");
                        if (r.object(*b, bp, {"xi", "eta"})) {
                            auto* x = r.member(*b, bp, "xi", true);
                            auto* e = r.member(*b, bp, "eta", true);
                            auto kx = x ? r.knot_vector(*x, Reader::at(bp, "xi")) : std::nullopt;
                            auto ke = e ? r.knot_vector(*e, Reader::at(bp, "eta")) : std::nullopt;
                            if (kx && ke) spec.basis = TensorBasis{*kx, *ke};
                        }
                    }
                    if (auto* a = r.member(pj, pp, "affine", false)) {
                        const std::string ap = Reader::at(pp, "affine");
                        if (r.object(*a, ap, {"A", "b"})) {
                            Eigen::Matrix2d A = Eigen::Matrix2d::Identity();
                            Eigen::Vector2d t = Eigen::Vector2d::Zero();
                            bool ok = true;
                            if (auto* m = r.member(*a, ap, "A", true)) {
                                const std::string mp = Reader::at(ap, "A");
                                if (!m->is_array() || m->size() != 2) {
                                    r.error(mp, "expected a 2x2 matrix [[a11, a12], [a21, a22]]");
                                    ok = false;
                                } else {
                                    for (std::size_t row = 0; row < 2; ++row) {
                                        auto v = r.point((*m)[row], Reader::at(mp, row));
                                        if (v)
                                            A.row(static_cast<Eigen::Index>(row)) = v->transpose();
                                        else
                                            ok = false;
                                    }
                                }
                            } else {
                                ok = false;
                            }
                            if (auto* bj = r.member(*a, ap, "b", false)) {
                                if (auto v = r.point(*bj, Reader::at(ap, "b")))
                                    t = *v;
                                else
                                    ok = false;
                            }
                            if (ok) {
                                try {
                                    spec.map = AffinePatchMap(A, t);
                                } catch (const InputError& e) {
                                    r.error(Reader::at(ap, "A"), e.what());
                                }
                            }
                        }
                    }
                    if (auto* bd = r.member(pj, pp, "boundary", false)) {
                        const std::string bp = Reader::at(pp, "boundary");
                        if (r.object(*bd, bp, {"south", "north", "west", "east"}))
                            for (int f = 0; f < 4; ++f) {
                                const char* name = to_string(static_cast<Face>(f));
                                if (auto* c = r.member(*bd, bp, name, false))
                                    spec.boundary[static_cast<std::size_t>(f)] = r.points(*c, Reader::at(bp, name));
                            }
                    }
                    if (auto* in = r.member(pj, pp, "initial", false))
                        spec.initial = r.points(*in, Reader::at(pp, "initial"));
                    g.patches.push_back(std::move(spec));
                }
            }
        }
        if (auto* is = r.member(j, "", "interfaces", false)) {
            if (!is->is_array()) {
                r.error("/interfaces", "expected an array");
            } else {
                for (std::size_t i = 0; i < is->size(); ++i) {
                    const std::string ip = Reader::at("/interfaces", i);
                    const json& ij = (*is)[i];
                    Interface itf;
                    if (!r.object(ij, ip, {"a", "b", "reversed"})) continue;
                    bool ok = true;
                    for (const char* side : {"a", "b"}) {
                        auto* s = r.member(ij, ip, side, true);
                        if (!s) {
                            ok = false;
                            continue;
                        }
                        const std::string sp = Reader::at(ip, side);
                        if (!r.object(*s, sp, {"patch", "face"})) {
                            ok = false;
                            continue;
                        }
                        auto* pj = r.member(*s, sp, "patch", true);
                        auto* fj = r.member(*s, sp, "face", true);
                        auto patch = pj ? r.integer(*pj, Reader::at(sp, "patch"), 0) : std::nullopt;
                        std::optional<Face> face;
                        if (fj)
                            if (auto fs = r.string(*fj, Reader::at(sp, "face"))) {
                                face = face_from_string(*fs);
                                if (!face) r.error(Reader::at(sp, "face"), "expected one of south, north, west, east");
                            }
                        if (patch && g.patches.size() > 0 && *patch >= static_cast<int>(g.patches.size())) {
                            r.error(Reader::at(sp, "patch"), "patch index out of range");
                            patch.reset();
                        }
                        if (!patch || !face) {
                            ok = false;
                            continue;
                        }
                        if (side[0] == 'a')
                            itf.patch_a = *patch, itf.face_a = *face;
                        else
                            itf.patch_b = *patch, itf.face_b = *face;
                    }
                    if (auto* rv = r.member(ij, ip, "reversed", false)) {
                        auto b = r.boolean(*rv, Reader::at(ip, "reversed"));
                        if (b)
                            itf.reversed = *b;
                        else
                            ok = false;
                    }
                    if (ok) g.interfaces.push_back(itf);
                }
            }
        }
        if (auto* s = r.member(j, "", "solver", false)) g.solver = r.solver(*s, "/solver");
    }
    if (!r.issues.empty()) throw SchemaError(r.issues);
    return g;
}

inline json to_json(const GeometryFile& g) {
    json j;
    j["format"] = kGeometryFormat;
    j["version"] = g.version;
    if (!g.name.empty()) j["name"] = g.name;
    json ps = json::array();
    for (const auto& p : g.patches) {
        json pj;
        pj["basis"] = {{"xi", detail::knots_json(p.basis.kv_xi)}, {"eta", detail::knots_json(p.basis.kv_eta)}};
        if (!p.map.is_identity())
            pj["affine"] = {{"A", {{p.map.A(0, 0), p.map.A(0, 1)}, {p.map.A(1, 0), p.map.A(1, 1)}}},
                            {"b", {p.map.b.x(), p.map.b.y()}}};
        json bd = json::object();
        for (int f = 0; f < 4; ++f)
            if (p.boundary[static_cast<std::size_t>(f)])
                bd[to_string(static_cast<Face>(f))] = detail::points_json(*p.boundary[static_cast<std::size_t>(f)]);
        pj["boundary"] = bd;
        if (p.initial) pj["initial"] = detail::points_json(*p.initial);
        ps.push_back(pj);
    }
    j["patches"] = ps;
    if (!g.interfaces.empty()) {
        json is = json::array();
        for (const auto& i : g.interfaces)
            is.push_back({{"a", {{"patch", i.patch_a}, {"face", to_string(i.face_a)}}},
                          {"b", {{"patch", i.patch_b}, {"face", to_string(i.face_b)}}},
                          {"reversed", i.reversed}});
        j["interfaces"] = is;
    }
    json s = json::object();
    const auto& o = g.solver;
    if (o.mode) s["mode"] = to_string(*o.mode);
    if (o.mu) s["mu"] = *o.mu;
    if (o.chi) s["chi"] = *o.chi;
    if (o.tol) s["tol"] = *o.tol;
    if (o.abs_tol) s["abs_tol"] = *o.abs_tol;
    if (o.max_newton) s["max_newton"] = *o.max_newton;
    if (o.coarse_levels) s["coarse_levels"] = *o.coarse_levels;
    if (o.quad_points) s["quad_points"] = *o.quad_points;
    if (o.initial) s["initial"] = to_string(*o.initial);
    if (o.exact_coupled_schur) s["exact_coupled_schur"] = *o.exact_coupled_schur;
    if (o.gmres_rtol || o.gmres_restart || o.gmres_max_iter) {
        json gm = json::object();
        if (o.gmres_rtol) gm["rtol"] = *o.gmres_rtol;
        if (o.gmres_restart) gm["restart"] = *o.gmres_restart;
        if (o.gmres_max_iter) gm["max_iter"] = *o.gmres_max_iter;
        s["gmres"] = gm;
    }
    if (!s.empty()) j["solver"] = s;
    return j;
}

// ---------------------------------------------------------------------------
// Problem assembly.

inline std::vector<PatchDescription> patch_descriptions(const GeometryFile& g) {
    std::vector<PatchDescription> d;
    for (const auto& p : g.patches) d.push_back({p.basis, p.map});
    return d;
}

/// Topology plus boundary net; semantic errors are reported as schema issues.
struct Problem {
    GeometryFile geometry;
    PatchTopology topology;
    std::vector<Point> boundary_net;
};

inline std::string patch_pointer(std::size_t p) { return "/patches/" + std::to_string(p); }

/// Semantic checks beyond the schema: interface compatibility, boundary data
/// presence and length, corner agreement.
inline std::vector<SchemaIssue> semantic_issues(const GeometryFile& g, PatchTopology* topo_out = nullptr,
                                                std::vector<Point>* net_out = nullptr) {
    std::vector<SchemaIssue> issues;
    PatchTopology topo;
    try {
        topo = build_topology(patch_descriptions(g), g.interfaces);
    } catch (const InputError& e) {
        std::string ptr = "/interfaces";
        const std::string msg = e.what();
        for (std::size_t i = 0; i < g.interfaces.size(); ++i)
            if (msg.rfind(describe(g.interfaces[i]), 0) == 0) {
                ptr += "/" + std::to_string(i);
                break;
            }
        issues.push_back({ptr, msg});
        return issues;
    }
    for (std::size_t p = 0; p < g.patches.size(); ++p) {
        const auto& spec = g.patches[p];
        for (int f = 0; f < 4; ++f) {
            const Face face = static_cast<Face>(f);
            const std::string ptr = patch_pointer(p) + "/boundary/" + to_string(face);
            const auto& data = spec.boundary[static_cast<std::size_t>(f)];
            if (topo.is_glued(p, face)) {
                if (data) issues.push_back({ptr, "boundary data given for a glued face"});
                continue;
            }
            if (!data) {
                issues.push_back({ptr, "boundary data missing for an un-glued face"});
                continue;
            }
            const auto n = face_dofs(spec.basis, face).size();
            if (data->size() != n)
                issues.push_back({ptr, "expected " + std::to_string(n) + " control points, got " +
                                           std::to_string(data->size())});
        }
        if (spec.initial && static_cast<int>(spec.initial->size()) != spec.basis.size())
            issues.push_back({patch_pointer(p) + "/initial", "expected " + std::to_string(spec.basis.size()) +
                                                                 " control points, got " +
                                                                 std::to_string(spec.initial->size())});
    }
    if (!issues.empty()) return issues;
    // Corners shared by two un-glued faces of one patch.
    static constexpr std::array<std::tuple<Face, bool, Face, bool, const char*>, 4> corners{{
        {Face::south, false, Face::west, false, "south-west"},
        {Face::south, true, Face::east, false, "south-east"},
        {Face::north, false, Face::west, true, "north-west"},
        {Face::north, true, Face::east, true, "north-east"},
    }};
    for (std::size_t p = 0; p < g.patches.size(); ++p)
        for (const auto& [fa, la, fb, lb, name] : corners) {
            const auto& a = g.patches[p].boundary[static_cast<std::size_t>(fa)];
            const auto& b = g.patches[p].boundary[static_cast<std::size_t>(fb)];
            if (!a || !b) continue;
            const Point& pa = la ? a->back() : a->front();
            const Point& pb = lb ? b->back() : b->front();
            if ((pa - pb).norm() > 1e-12 * (1.0 + pa.norm()))
                issues.push_back({patch_pointer(p) + "/boundary", std::string("corner mismatch at ") + name});
        }
    if (!issues.empty()) return issues;
    PatchBoundaryData data(g.patches.size());
    for (std::size_t p = 0; p < g.patches.size(); ++p)
        for (int f = 0; f < 4; ++f)
            if (g.patches[p].boundary[static_cast<std::size_t>(f)])
                data[p][static_cast<std::size_t>(f)] = *g.patches[p].boundary[static_cast<std::size_t>(f)];
    try {
        auto net = assemble_boundary_net(topo, data);
        if (net_out) *net_out = std::move(net);
    } catch (const InputError& e) {
        issues.push_back({"/patches", e.what()});
        return issues;
    }
    if (topo_out) *topo_out = std::move(topo);
    return issues;
}

inline Problem build_problem(const GeometryFile& g) {
    Problem pr;
    pr.geometry = g;
    auto issues = semantic_issues(g, &pr.topology, &pr.boundary_net);
    if (!issues.empty()) throw SchemaError(issues);
    return pr;
}

/// Warnings that do not prevent solving.
inline std::vector<std::string> geometry_warnings(const Problem& pr) {
    std::vector<std::string> w;
    if (pr.topology.convexity_defect() > 1e-9)
        w.push_back("parametric domain is not convex: bijectivity of the harmonic inverse is not guaranteed");
    return w;
}

struct SolveSettings {
    SystemOptions system;
    SolverConfig solver;
    InitialGuess initial = InitialGuess::transfinite;
    double fold_factor = 1.1;
};

inline SolveSettings resolve_settings(const SolverOverrides& o) {
    SolveSettings s;
    if (o.mode) s.system.mode = *o.mode;
    if (o.mu) s.system.mu = *o.mu;
    if (o.chi) s.system.chi = *o.chi;
    if (o.quad_points) s.system.quad_points = *o.quad_points;
    if (o.tol) s.solver.newton_tol = *o.tol;
    if (o.abs_tol) s.solver.abs_tol = *o.abs_tol;
    if (o.max_newton) s.solver.max_newton = *o.max_newton;
    if (o.coarse_levels) s.solver.coarse_levels = *o.coarse_levels;
    if (o.gmres_rtol) s.solver.gmres.rtol = *o.gmres_rtol;
    if (o.gmres_restart) s.solver.gmres.restart = *o.gmres_restart;
    if (o.gmres_max_iter) s.solver.gmres.max_iter = *o.gmres_max_iter;
    if (o.exact_coupled_schur) s.solver.exact_coupled_schur = *o.exact_coupled_schur;
    if (o.initial) s.initial = *o.initial;
    return s;
}

inline json to_json(const SystemOptions& o) {
    json j{{"mode", to_string(o.mode)}, {"mu", o.mu}, {"chi", o.chi}};
    if (o.quad_points > 0) j["quad_points"] = o.quad_points;
    return j;
}

/// Inner coefficients gathered from per-patch local nets.
inline Vector gather_inner(const MixedSystem& sys, const PatchTopology& topo,
                           const std::vector<std::vector<Point>>& nets) {
    const int m = sys.num_inner();
    Vector c = Vector::Zero(2 * m);
    for (std::size_t p = 0; p < topo.num_patches(); ++p) {
        const auto& l2g = topo.primal().l2g[p];
        if (nets[p].size() != l2g.size()) throw InputError("control net of patch " + std::to_string(p) + " has wrong size");
        for (std::size_t l = 0; l < l2g.size(); ++l) {
            int k = sys.inner_of_global(l2g[l]);
            if (k < 0) continue;
            c(k) = nets[p][l].x();
            c(m + k) = nets[p][l].y();
        }
    }
    return c;
}

inline Vector initial_coefficients(const Problem& pr, const MixedSystem& sys, const SolveSettings& s) {
    switch (s.initial) {
        case InitialGuess::file: {
            std::vector<std::vector<Point>> nets;
            for (std::size_t p = 0; p < pr.geometry.patches.size(); ++p) {
                if (!pr.geometry.patches[p].initial)
                    throw SchemaError({{patch_pointer(p) + "/initial", "initial control net required by --initial file"}});
                nets.push_back(*pr.geometry.patches[p].initial);
            }
            return gather_inner(sys, pr.topology, nets);
        }
        case InitialGuess::folded:
            return folded_initial_guess(sys, multipatch_initial_guess(pr.topology, sys), s.fold_factor);
        case InitialGuess::transfinite: break;
    }
    return multipatch_initial_guess(pr.topology, sys);
}

// ---------------------------------------------------------------------------
// Quality.

struct PatchQuality {
    BijectivityReport bijectivity;
};

/// Gauss points per element used for the Winslow functional.
inline int winslow_quad_order(const TensorBasis& b) { return std::max(b.kv_xi.degree(), b.kv_eta.degree()) + 2; }

inline json quality_json(const PatchTopology& topo, const std::vector<SplineMap>& maps, int samples = 5,
                         std::size_t max_folds = 100) {
    double min_j = std::numeric_limits<double>::infinity();
    int folds = 0;
    json fl = json::array();
    std::vector<double> per_patch;
    for (std::size_t p = 0; p < maps.size(); ++p) {
        auto b = patch_bijectivity(maps[p], topo.patches()[p].map, samples);
        min_j = std::min(min_j, b.min_detJ);
        per_patch.push_back(b.min_detJ);
        folds += b.fold_count;
        for (const auto& f : b.folds)
            if (fl.size() < max_folds) fl.push_back({{"patch", p}, {"s", f.xi}, {"t", f.eta}, {"detJ", f.detJ}});
    }
    json q;
    q["min_detJ"] = min_j;
    q["patch_min_detJ"] = per_patch;
    q["fold_count"] = folds;
    q["folds"] = fl;
    q["samples_per_element"] = samples;
    q["bijective"] = folds == 0;
    q["winslow"] = nullptr;
    if (folds == 0) {
        try {
            double w = 0.0;
            for (std::size_t p = 0; p < maps.size(); ++p)
                w += patch_winslow(maps[p], topo.patches()[p].map, winslow_quad_order(maps[p].basis));
            q["winslow"] = w;
        } catch (const NonbijectiveError&) {
            q["bijective"] = false;
        }
    }
    return q;
}

/// ||R|| with d recomputed from c by the auxiliary projection.
inline double reduced_residual(const MixedSystem& sys, const Vector& c) {
    Vector d = initial_d_from_c(sys, c);
    return residual_norm(sys, d, c);
}

// ---------------------------------------------------------------------------
// Solve pipeline and solution files.

inline std::string utc_timestamp() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct SolveOutcome {
    json solution;
    bool converged = false;
    SolverReport report;
    std::vector<SplineMap> maps;
    std::vector<std::string> warnings;
};

inline SolveOutcome solve_problem(const Problem& pr, const SolveSettings& s) {
    SolveOutcome out;
    out.warnings = geometry_warnings(pr);
    MixedSystem sys = make_multipatch_system(pr.topology, pr.boundary_net, s.system);
    Vector c;
    if (s.solver.coarse_levels > 0) {
        if (pr.topology.num_patches() != 1 || !pr.topology.patches()[0].map.is_identity())
            throw InputError("coarse levels are only supported for single-patch geometries");
        if (s.initial != InitialGuess::transfinite)
            throw InputError("coarse levels start from the transfinite guess on the coarsest level");
        SplineMap map = patch_map(pr.topology, sys, 0, Vector::Zero(sys.c_size()));
        auto r = coarse_to_fine_solve(map, s.solver.coarse_levels, s.system, s.solver);
        c = r.c;
        out.report = r.report;
        json levels = json::array();
        for (const auto& l : r.levels) levels.push_back(to_json(l, false));
        out.solution["levels"] = levels;
    } else {
        auto r = multipatch_solve(pr.topology, sys, initial_coefficients(pr, sys, s), s.solver);
        c = r.c;
        out.report = r.report;
    }
    out.converged = out.report.converged;
    for (std::size_t p = 0; p < pr.topology.num_patches(); ++p) out.maps.push_back(patch_map(pr.topology, sys, p, c));

    json& j = out.solution;
    j["format"] = kSolutionFormat;
    j["version"] = 1;
    j["timestamp"] = utc_timestamp();
    j["converged"] = out.converged;
    j["geometry"] = to_json(pr.geometry);
    j["options"] = to_json(s.system);
    j["initial"] = to_string(s.initial);
    json nets = json::array();
    for (const auto& m : out.maps) nets.push_back(detail::points_json(m.control_points));
    j["control_points"] = nets;
    j["report"] = to_json(out.report, false);
    if (s.solver.keep_aux) j["aux"] = std::vector<double>(out.report.aux.data(), out.report.aux.data() + out.report.aux.size());
    json q = quality_json(pr.topology, out.maps);
    q["residual_norm"] = reduced_residual(sys, c);
    j["quality"] = q;
    j["warnings"] = out.warnings;
    return out;
}

/// A solution file read back: geometry, options and per-patch nets.
struct LoadedSolution {
    json document;
    Problem problem;
    SystemOptions options;
    std::vector<std::vector<Point>> nets;
};

inline LoadedSolution load_solution(const json& j) {
    detail::Reader r;
    LoadedSolution ls;
    ls.document = j;
    if (!j.is_object()) throw SchemaError({SchemaIssue{"", "expected an object"}});
    if (auto* f = r.member(j, "", "format", true))
        if (auto s = r.string(*f, "/format"); s && *s != kSolutionFormat)
            r.error("/format", std::string("expected \"") + kSolutionFormat + "\"");
    const json* g = r.member(j, "", "geometry", true);
    const json* o = r.member(j, "", "options", true);
    const json* cp = r.member(j, "", "control_points", true);
    if (!r.issues.empty()) throw SchemaError(r.issues);
    GeometryFile geo;
    try {
        geo = parse_geometry(*g);
    } catch (const SchemaError& e) {
        std::vector<SchemaIssue> is;
        for (auto i : e.issues()) is.push_back({"/geometry" + i.pointer, i.message});
        throw SchemaError(is);
    }
    ls.problem = build_problem(geo);
    auto ov = r.solver(*o, "/options");
    if (!r.issues.empty()) throw SchemaError(r.issues);
    ls.options = resolve_settings(ov).system;
    if (!cp->is_array() || cp->size() != geo.patches.size())
        throw SchemaError({SchemaIssue{"/control_points", "expected one control net per patch"}});
    for (std::size_t p = 0; p < cp->size(); ++p) {
        auto pts = r.points((*cp)[p], "/control_points/" + std::to_string(p));
        if (!pts) throw SchemaError(r.issues);
        if (static_cast<int>(pts->size()) != geo.patches[p].basis.size())
            throw SchemaError({{"/control_points/" + std::to_string(p), "control net size does not match the basis"}});
        ls.nets.push_back(std::move(*pts));
    }
    return ls;
}

inline std::vector<SplineMap> solution_maps(const LoadedSolution& ls) {
    std::vector<SplineMap> maps;
    for (std::size_t p = 0; p < ls.nets.size(); ++p) {
        SplineMap m;
        m.basis = ls.problem.geometry.patches[p].basis;
        m.control_points = ls.nets[p];
        classify_indices(m.basis, m.boundary_indices, m.inner_indices);
        maps.push_back(std::move(m));
    }
    return maps;
}

inline double solution_residual(const LoadedSolution& ls) {
    MixedSystem sys = make_multipatch_system(ls.problem.topology, ls.problem.boundary_net, ls.options);
    return reduced_residual(sys, gather_inner(sys, ls.problem.topology, ls.nets));
}

// ---------------------------------------------------------------------------
// Mesh export.

enum class SampleFormat { vtk, svg, csv };

inline std::optional<SampleFormat> sample_format_from_string(const std::string& s) {
    if (s == "vtk") return SampleFormat::vtk;
    if (s == "svg") return SampleFormat::svg;
    if (s == "csv") return SampleFormat::csv;
    return std::nullopt;
}

/// Every element split into `res` equal parts per direction.
inline std::vector<double> sample_parameters(const KnotVector& kv, int res) {
    auto b = kv.breakpoints();
    std::vector<double> out;
    for (std::size_t e = 0; e + 1 < b.size(); ++e)
        for (int k = 0; k < res; ++k) out.push_back(b[e] + (b[e + 1] - b[e]) * k / res);
    out.push_back(1.0);
    return out;
}

struct SampleGrid {
    int n_s = 0, n_t = 0;
    std::vector<double> s, t;
    std::vector<Point> param, phys;  // s-major
    std::vector<double> det;         // with respect to the parametric coordinates
};

inline SampleGrid sample_patch(const SplineMap& map, const AffinePatchMap& affine, int res) {
    SampleGrid g;
    g.s = sample_parameters(map.basis.kv_xi, res);
    g.t = sample_parameters(map.basis.kv_eta, res);
    g.n_s = static_cast<int>(g.s.size());
    g.n_t = static_cast<int>(g.t.size());
    const double inv = affine.is_identity() ? 1.0 : 1.0 / affine.det();
    for (double s : g.s)
        for (double t : g.t) {
            auto m = metric_at(map, s, t);
            g.param.push_back(affine(Eigen::Vector2d(s, t)));
            g.phys.push_back(map.evaluate(s, t));
            g.det.push_back(m.detJ * inv);
        }
    return g;
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v == 0.0 ? 0.0 : v);
    return buf;
}

inline std::string sample_csv(const LoadedSolution& ls, int res) {
    auto maps = solution_maps(ls);
    std::string out = "patch,i,j,xi,eta,x,y,detJ\n";
    for (std::size_t p = 0; p < maps.size(); ++p) {
        auto g = sample_patch(maps[p], ls.problem.topology.patches()[p].map, res);
        for (int i = 0; i < g.n_s; ++i)
            for (int j = 0; j < g.n_t; ++j) {
                const auto k = static_cast<std::size_t>(i * g.n_t + j);
                out += std::to_string(p) + "," + std::to_string(i) + "," + std::to_string(j) + "," +
                       fmt(g.param[k].x()) + "," + fmt(g.param[k].y()) + "," + fmt(g.phys[k].x()) + "," +
                       fmt(g.phys[k].y()) + "," + fmt(g.det[k]) + "\n";
            }
    }
    return out;
}

/// Legacy VTK: a structured grid for one patch, quads of all patches otherwise.
inline std::string sample_vtk(const LoadedSolution& ls, int res) {
    auto maps = solution_maps(ls);
    std::vector<SampleGrid> grids;
    for (std::size_t p = 0; p < maps.size(); ++p)
        grids.push_back(sample_patch(maps[p], ls.problem.topology.patches()[p].map, res));
    std::string out = "# vtk DataFile Version 3.0\nharmap parameterization\nASCII\n";
    std::size_t total = 0;
    for (const auto& g : grids) total += g.phys.size();
    auto points = [&](const SampleGrid& g, std::string& o) {
        // VTK orders points with the first index fastest.
        for (int j = 0; j < g.n_t; ++j)
            for (int i = 0; i < g.n_s; ++i) {
                const auto& x = g.phys[static_cast<std::size_t>(i * g.n_t + j)];
                o += fmt(x.x()) + " " + fmt(x.y()) + " 0\n";
            }
    };
    auto dets = [&](const SampleGrid& g, std::string& o) {
        for (int j = 0; j < g.n_t; ++j)
            for (int i = 0; i < g.n_s; ++i) o += fmt(g.det[static_cast<std::size_t>(i * g.n_t + j)]) + "\n";
    };
    if (grids.size() == 1) {
        const auto& g = grids[0];
        out += "DATASET STRUCTURED_GRID\nDIMENSIONS " + std::to_string(g.n_s) + " " + std::to_string(g.n_t) + " 1\n";
        out += "POINTS " + std::to_string(total) + " double\n";
        points(g, out);
    } else {
        out += "DATASET UNSTRUCTURED_GRID\nPOINTS " + std::to_string(total) + " double\n";
        for (const auto& g : grids) points(g, out);
        std::size_t cells = 0;
        for (const auto& g : grids) cells += static_cast<std::size_t>((g.n_s - 1) * (g.n_t - 1));
        out += "CELLS " + std::to_string(cells) + " " + std::to_string(5 * cells) + "\n";
        std::size_t off = 0;
        for (const auto& g : grids) {
            for (int j = 0; j + 1 < g.n_t; ++j)
                for (int i = 0; i + 1 < g.n_s; ++i) {
                    auto id = [&](int a, int b) { return std::to_string(off + static_cast<std::size_t>(b * g.n_s + a)); };
                    out += "4 " + id(i, j) + " " + id(i + 1, j) + " " + id(i + 1, j + 1) + " " + id(i, j + 1) + "\n";
                }
            off += g.phys.size();
        }
        out += "CELL_TYPES " + std::to_string(cells) + "\n";
        for (std::size_t k = 0; k < cells; ++k) out += "9\n";
        out += "CELL_DATA " + std::to_string(cells) + "\nSCALARS patch int 1\nLOOKUP_TABLE default\n";
        for (std::size_t p = 0; p < grids.size(); ++p)
            for (int k = 0; k < (grids[p].n_s - 1) * (grids[p].n_t - 1); ++k) out += std::to_string(p) + "\n";
    }
    out += "POINT_DATA " + std::to_string(total) + "\nSCALARS detJ double 1\nLOOKUP_TABLE default\n";
    for (const auto& g : grids) dets(g, out);
    return out;
}

/// Element-boundary isolines as SVG paths (y axis pointing up).
inline std::string sample_svg(const LoadedSolution& ls, int res) {
    auto maps = solution_maps(ls);
    struct Line {
        std::size_t patch;
        const char* dir;
        double value;
        std::vector<Point> pts;
    };
    std::vector<Line> lines;
    Eigen::AlignedBox2d box;
    for (std::size_t p = 0; p < maps.size(); ++p) {
        const auto& m = maps[p];
        auto s = sample_parameters(m.basis.kv_xi, res), t = sample_parameters(m.basis.kv_eta, res);
        for (double b : m.basis.kv_xi.breakpoints()) {
            Line l{p, "s", b, {}};
            for (double y : t) l.pts.push_back(m.evaluate(b, y));
            lines.push_back(std::move(l));
        }
        for (double b : m.basis.kv_eta.breakpoints()) {
            Line l{p, "t", b, {}};
            for (double x : s) l.pts.push_back(m.evaluate(x, b));
            lines.push_back(std::move(l));
        }
    }
    for (const auto& l : lines)
        for (const auto& q : l.pts) box.extend(Point(q.x(), -q.y()));
    const double pad = 0.02 * std::max(box.sizes().maxCoeff(), 1e-12);
    const double w = box.sizes().x() + 2 * pad, h = box.sizes().y() + 2 * pad;
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"" + fmt(box.min().x() - pad) + " " +
                      fmt(box.min().y() - pad) + " " + fmt(w) + " " + fmt(h) + "\">\n";
    out += "<g fill=\"none\" stroke=\"black\" stroke-width=\"" + fmt(0.002 * std::max(w, h)) + "\">\n";
    for (const auto& l : lines) {
        out += "<path data-patch=\"" + std::to_string(l.patch) + "\" data-dir=\"" + l.dir + "\" data-value=\"" +
               fmt(l.value) + "\" d=\"";
        for (std::size_t k = 0; k < l.pts.size(); ++k)
            out += (k ? " L" : "M") + fmt(l.pts[k].x()) + " " + fmt(-l.pts[k].y());
        out += "\"/>\n";
    }
    out += "</g>\n</svg>\n";
    return out;
}

inline std::string sample_solution(const LoadedSolution& ls, int res, SampleFormat f) {
    if (res < 1) throw InputError("resolution must be at least 1");
    switch (f) {
        case SampleFormat::vtk: return sample_vtk(ls, res);
        case SampleFormat::svg: return sample_svg(ls, res);
        case SampleFormat::csv: return sample_csv(ls, res);
    }
    return {};
}

// ---------------------------------------------------------------------------
// Files.

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError({{"", std::string("malformed JSON: ") + e.what()}});
    }
}

/// Writes via a temporary file in the target directory and renames it into place.
inline void write_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp" + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw InputError("cannot write '" + tmp.string() + "'");
        out << content;
        out.flush();
        if (!out) throw InputError("failed writing '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw InputError("cannot move output into place: " + ec.message());
    }
}

/// Validation report for a geometry document: errors and warnings.
inline json check_geometry(const json& j) {
    json rep = {{"errors", json::array()}, {"warnings", json::array()}};
    GeometryFile g;
    try {
        g = parse_geometry(j);
    } catch (const SchemaError& e) {
        for (const auto& i : e.issues()) rep["errors"].push_back({{"pointer", i.pointer}, {"message", i.message}});
        return rep;
    }
    PatchTopology topo;
    std::vector<Point> net;
    auto issues = semantic_issues(g, &topo, &net);
    for (const auto& i : issues) rep["errors"].push_back({{"pointer", i.pointer}, {"message", i.message}});
    if (issues.empty()) {
        Problem pr{g, topo, net};
        for (const auto& w : geometry_warnings(pr)) rep["warnings"].push_back(w);
    }
    return rep;
}

}  // namespace harmap
