#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "splines.hpp"

namespace harmap {

class FactorizationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Cholesky factor L of a symmetric banded matrix, stored as band(i, k) = L(i, i - k).
class BandedCholesky {
public:
    BandedCholesky() = default;

    BandedCholesky(const Eigen::MatrixXd& M, int bandwidth) : n_(static_cast<int>(M.rows())), bw_(bandwidth) {
        if (M.rows() != M.cols()) throw FactorizationError("matrix must be square");
        band_ = Eigen::MatrixXd::Zero(n_, bw_ + 1);
        for (int i = 0; i < n_; ++i) {
            for (int j = std::max(0, i - bw_); j <= i; ++j) {
                double s = M(i, j);
                for (int k = std::max(0, i - bw_); k < j; ++k) s -= at(i, k) * at(j, k);
                if (i == j) {
                    if (!(s > 0.0)) throw FactorizationError("matrix is not positive definite");
                    band_(i, 0) = std::sqrt(s);
                } else {
                    band_(i, i - j) = s / at(j, j);
                }
            }
        }
    }

    int size() const { return n_; }
    int bandwidth() const { return bw_; }

    double at(int i, int j) const {
        if (j > i || i - j > bw_) return 0.0;
        return band_(i, i - j);
    }

    Eigen::MatrixXd lower() const {
        Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n_, n_);
        for (int i = 0; i < n_; ++i)
            for (int j = std::max(0, i - bw_); j <= i; ++j) L(i, j) = at(i, j);
        return L;
    }

    const Eigen::MatrixXd& band() const { return band_; }

    /// Solves L L^T x = b in place over a strided vector; returns multiply-add count.
    std::int64_t solve_inplace(double* x, std::ptrdiff_t stride) const {
        std::int64_t ops = 0;
        for (int i = 0; i < n_; ++i) {
            double s = x[i * stride];
            for (int k = std::max(0, i - bw_); k < i; ++k, ++ops) s -= band_(i, i - k) * x[k * stride];
            x[i * stride] = s / band_(i, 0);
        }
        for (int i = n_ - 1; i >= 0; --i) {
            double s = x[i * stride];
            for (int k = i + 1; k <= std::min(n_ - 1, i + bw_); ++k, ++ops) s -= band_(k, k - i) * x[k * stride];
            x[i * stride] = s / band_(i, 0);
        }
        return ops + 2 * n_;
    }

private:
    int n_ = 0;
    int bw_ = 0;
    Eigen::MatrixXd band_;
};

inline BandedCholesky cholesky_banded(const Eigen::MatrixXd& M, int bandwidth) { return BandedCholesky(M, bandwidth); }

/// Solves with blockdiag(m_xi (x) m_eta, ...) using the 1D factors only.
class KronSolver {
public:
    KronSolver() = default;
    KronSolver(BandedCholesky xi, BandedCholesky eta, int blocks)
        : xi_(std::move(xi)), eta_(std::move(eta)), blocks_(blocks) {}

    int block_size() const { return xi_.size() * eta_.size(); }
    int blocks() const { return blocks_; }
    int size() const { return blocks_ * block_size(); }
    const BandedCholesky& xi() const { return xi_; }
    const BandedCholesky& eta() const { return eta_; }

    /// Solves every block; `ops`, when given, receives the multiply-add count.
    Vector solve(const Vector& rhs, std::int64_t* ops = nullptr) const {
        if (rhs.size() != size()) throw InputError("kron_solve: right-hand side length mismatch");
        Vector x = rhs;
        std::int64_t count = 0;
        for (int b = 0; b < blocks_; ++b)
            count += solve_block_inplace(x.data() + static_cast<std::ptrdiff_t>(b) * block_size());
        if (ops) *ops = count;
        return x;
    }

    /// Single block in place; `x` has n_xi * n_eta entries in xi-major order.
    std::int64_t solve_block_inplace(double* x) const {
        const int nx = xi_.size(), ne = eta_.size();
        std::int64_t ops = 0;
        for (int j = 0; j < ne; ++j) ops += xi_.solve_inplace(x + j, ne);
        for (int i = 0; i < nx; ++i) ops += eta_.solve_inplace(x + static_cast<std::ptrdiff_t>(i) * ne, 1);
        return ops;
    }

private:
    BandedCholesky xi_, eta_;
    int blocks_ = 1;
};

inline Vector kron_solve(const KronSolver& ks, const Vector& rhs) { return ks.solve(rhs); }

struct GmresResult {
    Vector solution;
    bool converged = false;
    int iterations = 0;
    int matvecs = 0;
    /// Residual-norm estimate after every inner iteration.
    std::vector<double> residual_history;
    std::vector<int> restart_starts;
};

/// Restarted GMRES with modified Gram-Schmidt and Givens rotations, zero initial guess.
template <typename MatVec>
GmresResult gmres(MatVec&& matvec, const Vector& rhs, double tol, int restart, int max_iter) {
    GmresResult res;
    const auto n = rhs.size();
    res.solution = Vector::Zero(n);
    const double bnorm = rhs.norm();
    if (bnorm == 0.0) {
        res.converged = true;
        return res;
    }
    const double target = tol * bnorm;
    Vector r = rhs;
    double beta = bnorm;
    while (res.iterations < max_iter) {
        const int m = std::min(restart, max_iter - res.iterations);
        Eigen::MatrixXd V(n, m + 1);
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m + 1, m);
        Vector cs = Vector::Zero(m), sn = Vector::Zero(m), g = Vector::Zero(m + 1);
        V.col(0) = r / beta;
        g(0) = beta;
        res.restart_starts.push_back(static_cast<int>(res.residual_history.size()));
        int k = 0;
        bool breakdown = false;
        for (; k < m; ++k) {
            Vector w = matvec(Vector(V.col(k)));
            ++res.matvecs;
            for (int i = 0; i <= k; ++i) {
                H(i, k) = V.col(i).dot(w);
                w -= H(i, k) * V.col(i);
            }
            H(k + 1, k) = w.norm();
            if (H(k + 1, k) > 0.0) V.col(k + 1) = w / H(k + 1, k);
            for (int i = 0; i < k; ++i) {
                double t = cs(i) * H(i, k) + sn(i) * H(i + 1, k);
                H(i + 1, k) = -sn(i) * H(i, k) + cs(i) * H(i + 1, k);
                H(i, k) = t;
            }
            double denom = std::hypot(H(k, k), H(k + 1, k));
            if (denom == 0.0) {
                breakdown = true;
                break;
            }
            cs(k) = H(k, k) / denom;
            sn(k) = H(k + 1, k) / denom;
            H(k, k) = denom;
            H(k + 1, k) = 0.0;
            g(k + 1) = -sn(k) * g(k);
            g(k) = cs(k) * g(k);
            ++res.iterations;
            res.residual_history.push_back(std::abs(g(k + 1)));
            if (std::abs(g(k + 1)) <= target) {
                ++k;
                break;
            }
        }
        if (k > 0) {
            Vector y = H.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(g.head(k));
            res.solution += V.leftCols(k) * y;
        }
        if (!res.residual_history.empty() && res.residual_history.back() <= target) {
            res.converged = true;
            return res;
        }
        if (breakdown || k == 0) break;
        r = rhs - matvec(res.solution);
        ++res.matvecs;
        beta = r.norm();
        if (beta <= target) {
            res.converged = true;
            return res;
        }
    }
    return res;
}

struct PcgResult {
    Vector solution;
    bool converged = false;
    int iterations = 0;
};

/// Preconditioned conjugate gradients for SPD operators.
template <typename Apply, typename Precond>
PcgResult pcg(Apply&& apply, Precond&& precond, const Vector& rhs, double tol, int max_iter) {
    PcgResult res;
    res.solution = Vector::Zero(rhs.size());
    const double bnorm = rhs.norm();
    if (bnorm == 0.0) {
        res.converged = true;
        return res;
    }
    Vector r = rhs;
    Vector z = precond(r);
    Vector p = z;
    double rz = r.dot(z);
    for (int it = 0; it < max_iter; ++it) {
        Vector Ap = apply(p);
        double alpha = rz / p.dot(Ap);
        res.solution += alpha * p;
        r -= alpha * Ap;
        res.iterations = it + 1;
        if (r.norm() <= tol * bnorm) {
            res.converged = true;
            return res;
        }
        z = precond(r);
        double rz_new = r.dot(z);
        p = z + (rz_new / rz) * p;
        rz = rz_new;
    }
    return res;
}

}  // namespace harmap
