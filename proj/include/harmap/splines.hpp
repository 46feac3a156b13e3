#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace harmap {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Clamped B-spline knot sequence on [0, 1].
class KnotVector {
public:
    KnotVector() = default;

    KnotVector(int degree, std::vector<double> knots) : degree_(degree), knots_(std::move(knots)) {
        validate();
    }

    /// Uniform open knot vector with `elements` spans; breakpoints listed in
    /// `repeat_at` get multiplicity `repeat`.
    static KnotVector uniform(int degree, int elements, std::span<const double> repeat_at = {},
                              int repeat = 1) {
        if (elements < 1) throw InputError("knot vector needs at least one element");
        std::vector<double> k(static_cast<std::size_t>(degree + 1), 0.0);
        for (int e = 1; e < elements; ++e) {
            double x = static_cast<double>(e) / elements;
            int mult = 1;
            for (double r : repeat_at)
                if (std::abs(r - x) < 1e-14) mult = repeat;
            k.insert(k.end(), static_cast<std::size_t>(mult), x);
        }
        k.insert(k.end(), static_cast<std::size_t>(degree + 1), 1.0);
        return KnotVector(degree, std::move(k));
    }

    int degree() const { return degree_; }
    const std::vector<double>& knots() const { return knots_; }
    int dim() const { return static_cast<int>(knots_.size()) - degree_ - 1; }

    /// Distinct knot values, i.e. element boundaries.
    std::vector<double> breakpoints() const {
        std::vector<double> b;
        for (double k : knots_)
            if (b.empty() || k > b.back()) b.push_back(k);
        return b;
    }

    int num_elements() const { return static_cast<int>(breakpoints().size()) - 1; }

    int multiplicity(double x) const {
        return static_cast<int>(std::count(knots_.begin(), knots_.end(), x));
    }

    /// Highest interior multiplicity (0 when there are no interior knots).
    int max_interior_multiplicity() const {
        int m = 0;
        auto b = breakpoints();
        for (std::size_t i = 1; i + 1 < b.size(); ++i) m = std::max(m, multiplicity(b[i]));
        return m;
    }

    /// Index of the span [t_k, t_{k+1}) containing x, with x = 1 mapped to the last nonempty span.
    int find_span(double x) const {
        const int n = dim();
        if (x >= knots_[static_cast<std::size_t>(n)]) {
            int k = n - 1;
            while (k > degree_ && knots_[static_cast<std::size_t>(k)] >= knots_[static_cast<std::size_t>(k + 1)]) --k;
            return k;
        }
        auto it = std::upper_bound(knots_.begin() + degree_, knots_.begin() + n + 1, x);
        return static_cast<int>(it - knots_.begin()) - 1;
    }

    bool operator==(const KnotVector&) const = default;

private:
    void validate() const {
        if (degree_ < 1) throw InputError("knot vector degree must be >= 1");
        const auto p = static_cast<std::size_t>(degree_);
        if (knots_.size() < 2 * p + 2) throw InputError("knot vector too short for degree " + std::to_string(degree_));
        for (std::size_t i = 1; i < knots_.size(); ++i)
            if (knots_[i] < knots_[i - 1]) throw InputError("knot vector must be nondecreasing");
        if (knots_.front() != 0.0 || knots_.back() != 1.0) throw InputError("knot vector must span [0, 1]");
        if (multiplicity(0.0) != degree_ + 1 || multiplicity(1.0) != degree_ + 1)
            throw InputError("knot vector must be open: end multiplicity must equal degree + 1");
        if (max_interior_multiplicity() > degree_) throw InputError("interior knot multiplicity exceeds degree");
    }

    int degree_ = 0;
    std::vector<double> knots_;
};

/// Nonzero basis functions at a point. `values(k, a)` is the k-th derivative of
/// function `first + a`.
struct BasisTable {
    int first = 0;
    Eigen::MatrixXd values;
};

/// Cox-de Boor evaluation of the p + 1 nonzero functions and their derivatives
/// (Piegl & Tiller, A2.3).
inline BasisTable eval_univariate(const KnotVector& kv, double x, int max_deriv) {
    if (!(x >= 0.0 && x <= 1.0)) throw DomainError("basis evaluation outside [0, 1]");
    const int p = kv.degree();
    const auto& U = kv.knots();
    const int span = kv.find_span(x);
    const int nd = std::min(max_deriv, p);

    Eigen::MatrixXd ndu(p + 1, p + 1);
    std::vector<double> left(static_cast<std::size_t>(p + 1)), right(static_cast<std::size_t>(p + 1));
    ndu(0, 0) = 1.0;
    for (int j = 1; j <= p; ++j) {
        left[j] = x - U[span + 1 - j];
        right[j] = U[span + j] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            ndu(j, r) = right[r + 1] + left[j - r];
            double temp = ndu(r, j - 1) / ndu(j, r);
            ndu(r, j) = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu(j, j) = saved;
    }

    BasisTable out;
    out.first = span - p;
    out.values = Eigen::MatrixXd::Zero(max_deriv + 1, p + 1);
    for (int j = 0; j <= p; ++j) out.values(0, j) = ndu(j, p);

    Eigen::MatrixXd a(2, p + 1);
    for (int r = 0; r <= p; ++r) {
        int s1 = 0, s2 = 1;
        a(0, 0) = 1.0;
        for (int k = 1; k <= nd; ++k) {
            double d = 0.0;
            int rk = r - k, pk = p - k;
            if (r >= k) {
                a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
                d = a(s2, 0) * ndu(rk, pk);
            }
            int j1 = rk >= -1 ? 1 : -rk;
            int j2 = (r - 1 <= pk) ? k - 1 : p - r;
            for (int j = j1; j <= j2; ++j) {
                a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
                d += a(s2, j) * ndu(rk + j, pk);
            }
            if (r <= pk) {
                a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
                d += a(s2, k) * ndu(r, pk);
            }
            out.values(k, r) = d;
            std::swap(s1, s2);
        }
    }
    double fac = p;
    for (int k = 1; k <= nd; ++k) {
        out.values.row(k) *= fac;
        fac *= (p - k);
    }
    return out;
}

inline std::vector<double> greville(const KnotVector& kv) {
    const int p = kv.degree();
    const auto& U = kv.knots();
    std::vector<double> g(static_cast<std::size_t>(kv.dim()));
    for (int i = 0; i < kv.dim(); ++i) {
        double s = 0.0;
        for (int k = 1; k <= p; ++k) s += U[static_cast<std::size_t>(i + k)];
        g[static_cast<std::size_t>(i)] = s / p;
    }
    return g;
}

/// Evaluates sum_i coeffs[i] * N_i(x).
template <typename T>
T eval_curve(const KnotVector& kv, std::span<const T> coeffs, double x) {
    auto tab = eval_univariate(kv, x, 0);
    T r = coeffs[static_cast<std::size_t>(tab.first)] * tab.values(0, 0);
    for (int a = 1; a <= kv.degree(); ++a) r += coeffs[static_cast<std::size_t>(tab.first + a)] * tab.values(0, a);
    return r;
}

/// Maps coarse coefficients to fine coefficients: fine = P * coarse.
struct ProlongationMatrix {
    SparseMatrix matrix;
};

/// Boehm insertion of a single knot; returns the (n+1) x n insertion matrix.
inline Eigen::MatrixXd insertion_matrix(const KnotVector& kv, double x) {
    const int p = kv.degree();
    const int n = kv.dim();
    const auto& U = kv.knots();
    const int k = kv.find_span(x);
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n + 1, n);
    for (int i = 0; i <= n; ++i) {
        if (i <= k - p) {
            Q(i, i) = 1.0;
        } else if (i >= k + 1) {
            Q(i, i - 1) = 1.0;
        } else {
            double alpha = (x - U[i]) / (U[i + p] - U[i]);
            Q(i, i) = alpha;
            Q(i, i - 1) = 1.0 - alpha;
        }
    }
    return Q;
}

inline KnotVector insert_knot(const KnotVector& kv, double x) {
    auto k = kv.knots();
    k.insert(std::upper_bound(k.begin(), k.end(), x), x);
    return KnotVector(kv.degree(), std::move(k));
}

/// Bisects every nonempty span.
inline std::pair<KnotVector, ProlongationMatrix> h_refine(const KnotVector& kv) {
    auto b = kv.breakpoints();
    KnotVector cur = kv;
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(kv.dim(), kv.dim());
    for (std::size_t e = 0; e + 1 < b.size(); ++e) {
        double mid = 0.5 * (b[e] + b[e + 1]);
        P = insertion_matrix(cur, mid) * P;
        cur = insert_knot(cur, mid);
    }
    ProlongationMatrix pm;
    pm.matrix = P.sparseView(1.0, 1e-15);
    pm.matrix.makeCompressed();
    return {cur, pm};
}

/// Inverse of h_refine: drops every other breakpoint. Throws if `kv` is not
/// the bisection of some coarser knot vector.
inline KnotVector h_coarsen(const KnotVector& kv) {
    auto b = kv.breakpoints();
    if ((b.size() - 1) % 2 != 0) throw InputError("cannot coarsen knot vector with an odd number of elements");
    std::vector<double> k(static_cast<std::size_t>(kv.degree() + 1), 0.0);
    for (std::size_t i = 1; i + 1 < b.size(); ++i) {
        int m = kv.multiplicity(b[i]);
        if (i % 2 == 1) {
            if (m != 1 || std::abs(b[i] - 0.5 * (b[i - 1] + b[i + 1])) > 1e-12)
                throw InputError("cannot coarsen knot vector: breakpoint is not a bisection midpoint");
        } else {
            k.insert(k.end(), static_cast<std::size_t>(m), b[i]);
        }
    }
    k.insert(k.end(), static_cast<std::size_t>(kv.degree() + 1), 1.0);
    return KnotVector(kv.degree(), std::move(k));
}

/// Tensor-product basis with global index i = i_xi * n_eta + i_eta.
struct TensorBasis {
    KnotVector kv_xi;
    KnotVector kv_eta;

    int n_xi() const { return kv_xi.dim(); }
    int n_eta() const { return kv_eta.dim(); }
    int size() const { return n_xi() * n_eta(); }
    int index(int i_xi, int i_eta) const { return i_xi * n_eta() + i_eta; }

    bool is_boundary(int i) const {
        int ix = i / n_eta(), ie = i % n_eta();
        return ix == 0 || ix == n_xi() - 1 || ie == 0 || ie == n_eta() - 1;
    }

    bool operator==(const TensorBasis&) const = default;
};

inline TensorBasis h_refine(const TensorBasis& tb) {
    return {h_refine(tb.kv_xi).first, h_refine(tb.kv_eta).first};
}

/// Values of the active tensor functions at a point; derivative slots beyond
/// the requested order stay empty.
struct TensorTable {
    std::vector<int> indices;
    std::vector<double> w, w_xi, w_eta, w_xixi, w_xieta, w_etaeta;
};

inline TensorTable tensor_eval(const TensorBasis& tb, double xi, double eta, int max_deriv) {
    auto tx = eval_univariate(tb.kv_xi, xi, max_deriv);
    auto te = eval_univariate(tb.kv_eta, eta, max_deriv);
    TensorTable t;
    const int px = tb.kv_xi.degree(), pe = tb.kv_eta.degree();
    for (int a = 0; a <= px; ++a) {
        for (int b = 0; b <= pe; ++b) {
            t.indices.push_back(tb.index(tx.first + a, te.first + b));
            t.w.push_back(tx.values(0, a) * te.values(0, b));
            if (max_deriv >= 1) {
                t.w_xi.push_back(tx.values(1, a) * te.values(0, b));
                t.w_eta.push_back(tx.values(0, a) * te.values(1, b));
            }
            if (max_deriv >= 2) {
                t.w_xixi.push_back(tx.values(2, a) * te.values(0, b));
                t.w_xieta.push_back(tx.values(1, a) * te.values(1, b));
                t.w_etaeta.push_back(tx.values(0, a) * te.values(2, b));
            }
        }
    }
    return t;
}

/// Gauss-Legendre nodes and weights on [0, 1].
struct GaussRule {
    std::vector<double> points;
    std::vector<double> weights;
};

inline GaussRule gauss_legendre(int n) {
    if (n < 1) throw InputError("quadrature order must be >= 1");
    GaussRule r;
    r.points.resize(static_cast<std::size_t>(n));
    r.weights.resize(static_cast<std::size_t>(n));
    // Returns (P_n(x), P_n'(x)).
    auto legendre = [n](double x) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = pk;
        }
        return std::pair{p1, n * (x * p1 - p0) / (x * x - 1.0)};
    };
    const double pi = 3.14159265358979323846;
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(pi * (i + 0.75) / (n + 0.5));
        for (int it = 0; it < 100; ++it) {
            auto [pn, dpn] = legendre(x);
            double dx = pn / dpn;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        double dpn = legendre(x).second;
        double w = 2.0 / ((1.0 - x * x) * dpn * dpn);
        auto lo = static_cast<std::size_t>(i), hi = static_cast<std::size_t>(n - 1 - i);
        r.points[lo] = 0.5 * (1.0 - x);
        r.points[hi] = 0.5 * (1.0 + x);
        r.weights[lo] = 0.5 * w;
        r.weights[hi] = 0.5 * w;
    }
    return r;
}

/// Gram matrix of two univariate bases: G(i, j) = int N_i^(di) M_j^(dj).
/// `fine` must contain every breakpoint of both bases.
inline Eigen::MatrixXd gram_1d(const KnotVector& rows, int d_rows, const KnotVector& cols, int d_cols,
                               const KnotVector& fine, int points) {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(rows.dim(), cols.dim());
    auto rule = gauss_legendre(points);
    auto b = fine.breakpoints();
    for (std::size_t e = 0; e + 1 < b.size(); ++e) {
        double h = b[e + 1] - b[e];
        for (std::size_t q = 0; q < rule.points.size(); ++q) {
            double x = b[e] + h * rule.points[q];
            double w = h * rule.weights[q];
            auto tr = eval_univariate(rows, x, d_rows);
            auto tc = eval_univariate(cols, x, d_cols);
            for (int a = 0; a <= rows.degree(); ++a)
                for (int c = 0; c <= cols.degree(); ++c)
                    G(tr.first + a, tc.first + c) += w * tr.values(d_rows, a) * tc.values(d_cols, c);
        }
    }
    return G;
}

}  // namespace harmap
