#pragma once

/**
 * @brief Dense strictly convex QP: min 1/2 x'Gx + f'x  s.t.  A x <= b.
 *
 * Solved with Hildreth's dual coordinate ascent. With H = A G^-1 A' and
 * d = b + A G^-1 f the dual is  min_{lambda >= 0} 1/2 lambda'H lambda + d'lambda,
 * and the primal is recovered as x = -G^-1 (f + A'lambda).
 */

#include <ddpc/error.hpp>
#include <ddpc/linalg.hpp>

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace ddpc {

struct QPProblem {
    Matrix G;
    Vector f;
    Matrix A;  ///< n_c x n_v, may have zero rows
    Vector b;

    Eigen::Index variables() const { return G.rows(); }
    Eigen::Index constraints() const { return A.rows(); }
};

enum class QPStatus { optimal, max_iterations, infeasible };

inline const char* to_string(QPStatus s)
{
    switch (s) {
    case QPStatus::optimal: return "optimal";
    case QPStatus::max_iterations: return "max-iterations";
    case QPStatus::infeasible: return "infeasible";
    }
    return "?";
}

struct QPSolution {
    Vector primal;
    Vector dual;
    QPStatus status = QPStatus::optimal;
    long iterations = 0;
    double kkt_residual = 0.0;
};

struct QPOptions {
    long max_iter = 0;               ///< sweeps; 0 selects 100 n_c + 1000
    double tol = 1e-9;               ///< on ||dlambda||_inf / max(1, ||lambda||_inf)
    double divergence_guard = 1e12;  ///< ||lambda||_inf above this means infeasible
    bool warm_start = true;
    bool polish = true;  ///< finish with an exact solve on the detected active set
    std::vector<double>* dual_trace = nullptr;  ///< dual objective after every sweep
};

/// Componentwise KKT violations of a candidate primal/dual pair.
struct KktReport {
    double stationarity = 0.0;
    double primal_violation = 0.0;
    double dual_violation = 0.0;
    double complementarity = 0.0;

    double max() const { return std::max({stationarity, primal_violation, dual_violation, complementarity}); }
};

inline KktReport kkt_report(const QPProblem& qp, const Vector& x, const Vector& lambda)
{
    KktReport r;
    Vector grad = qp.G * x + qp.f;
    if (qp.constraints() > 0) {
        grad += qp.A.transpose() * lambda;
        const Vector slack = qp.A * x - qp.b;
        r.primal_violation = std::max(0.0, slack.maxCoeff());
        r.dual_violation = std::max(0.0, -lambda.minCoeff());
        r.complementarity = (lambda.array() * slack.array()).abs().maxCoeff();
    }
    r.stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
    return r;
}

/// KKT certificate with the tolerances used across the tests.
inline bool kkt_certified(const QPProblem& qp, const QPSolution& s)
{
    const KktReport r = kkt_report(qp, s.primal, s.dual);
    const double fscale = 1.0 + (qp.f.size() ? qp.f.cwiseAbs().maxCoeff() : 0.0);
    return r.stationarity <= 1e-6 * fscale && r.primal_violation <= 1e-8 && r.dual_violation <= 1e-12 &&
           r.complementarity <= 1e-6;
}

/**
 * @brief Lawson-Hanson non-negative least squares: min ||E u - f|| s.t. u >= 0.
 *
 * Active-set method; terminates after finitely many set changes (capped at
 * 3 * cols outer steps).
 */
inline Vector nnls(const Matrix& E, const Vector& f)
{
    const Eigen::Index n = E.cols();
    if (E.rows() != f.size()) {
        throw InvalidInput("nnls: E and f sizes differ");
    }
    Vector u = Vector::Zero(n);
    std::vector<bool> passive(static_cast<std::size_t>(n), false);
    const double tol = 1e-12 * std::max(1.0, E.cwiseAbs().maxCoeff()) * std::max(1.0, f.cwiseAbs().maxCoeff()) *
                       static_cast<double>(std::max<Eigen::Index>(n, E.rows()));
    auto solve_passive = [&]() {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
        }
        Matrix Ep(E.rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) Ep.col(static_cast<Eigen::Index>(k)) = E.col(idx[k]);
        const Vector zp = Ep.colPivHouseholderQr().solve(f);
        Vector z = Vector::Zero(n);
        for (std::size_t k = 0; k < idx.size(); ++k) z(idx[k]) = zp(static_cast<Eigen::Index>(k));
        return z;
    };
    for (Eigen::Index outer = 0; outer < 3 * n + 3; ++outer) {
        const Vector w = E.transpose() * (f - E * u);
        Eigen::Index j = -1;
        double best = tol;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!passive[static_cast<std::size_t>(i)] && w(i) > best) {
                best = w(i);
                j = i;
            }
        }
        if (j < 0) break;
        passive[static_cast<std::size_t>(j)] = true;
        for (Eigen::Index inner = 0; inner <= n; ++inner) {
            const Vector z = solve_passive();
            double alpha = 1.0;
            bool clipped = false;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (passive[static_cast<std::size_t>(i)] && z(i) <= 0.0) {
                    const double den = u(i) - z(i);
                    alpha = std::min(alpha, den > 0.0 ? u(i) / den : 0.0);
                    clipped = true;
                }
            }
            if (!clipped) {
                u = z;
                break;
            }
            u += alpha * (z - u);
            for (Eigen::Index i = 0; i < n; ++i) {
                if (passive[static_cast<std::size_t>(i)] && u(i) <= tol) {
                    passive[static_cast<std::size_t>(i)] = false;
                    u(i) = 0.0;
                }
            }
        }
    }
    return u;
}

/**
 * @brief Exact emptiness test for {x : A x <= b}.
 *
 * Least-distance formulation: with rows of [A b] normalized, the set is empty
 * iff some y >= 0 gives A'y = 0 and b'y = -1, i.e. the NNLS residual of
 * [A'; b'] y = [0; -1] vanishes.
 */
inline bool polyhedron_empty(const Matrix& A, const Vector& b)
{
    const Eigen::Index nc = A.rows(), nv = A.cols();
    Matrix E(nv + 1, nc);
    for (Eigen::Index i = 0; i < nc; ++i) {
        const double s = std::hypot(A.row(i).norm(), b(i));
        if (s == 0.0) {
            E.col(i).setZero();
            continue;
        }
        E.col(i).head(nv) = A.row(i).transpose() / s;
        E(nv, i) = b(i) / s;
    }
    Vector f = Vector::Zero(nv + 1);
    f(nv) = -1.0;
    const Vector y = nnls(E, f);
    return (E * y - f).norm() < 1e-9;
}

/// -G^-1 f
inline Vector solve_unconstrained(const Matrix& G, const Vector& f)
{
    if (G.rows() != f.size()) {
        throw InvalidInput("solve_unconstrained: G and f sizes differ");
    }
    try {
        return -linalg::solve_spd(G, f);
    } catch (const FactorizationError& e) {
        throw InvalidInput(std::string("solve_unconstrained: ") + e.what());
    }
}

/**
 * @brief Hildreth QP solver with warm-started multipliers.
 *
 * The factorization of G and the dual Hessian are cached between calls as
 * long as G and A do not change, which is the receding-horizon case.
 * Infeasibility is detected during the sweeps when the multipliers exceed the
 * divergence guard or a sweep's increment is a Farkas certificate
 * (dl >= 0, A' dl ~ 0, b' dl < 0). A run that hits the iteration cap is
 * checked exactly with polyhedron_empty.
 */
class HildrethSolver {
public:
    QPSolution solve(const QPProblem& qp, const QPOptions& opt = {})
    {
        const Eigen::Index nv = qp.variables();
        const Eigen::Index nc = qp.constraints();
        if (qp.G.cols() != nv || qp.f.size() != nv || qp.A.cols() != nv || qp.b.size() != nc) {
            throw InvalidInput("HildrethSolver: inconsistent problem dimensions");
        }
        linalg::require_finite(qp.f, "HildrethSolver f");
        linalg::require_finite(qp.b, "HildrethSolver b");
        prepare(qp);

        QPSolution sol;
        const Vector x_free = -llt_.solve(qp.f);
        sol.primal = x_free;
        sol.dual = Vector::Zero(nc);
        if (nc == 0) {
            sol.kkt_residual = kkt_report(qp, sol.primal, sol.dual).max();
            return sol;
        }

        // Rows with A_i = 0 never move; they are either always or never satisfied.
        for (Eigen::Index i = 0; i < nc; ++i) {
            if (zero_row_[static_cast<std::size_t>(i)] && qp.b(i) < 0.0) {
                sol.status = QPStatus::infeasible;
                sol.kkt_residual = kkt_report(qp, sol.primal, sol.dual).max();
                warm_.resize(0);
                return sol;
            }
        }
        const Vector d = qp.b - qp.A * x_free;
        if ((d.array() >= 0.0).all()) {
            sol.kkt_residual = kkt_report(qp, sol.primal, sol.dual).max();
            warm_ = sol.dual;
            return sol;
        }

        Vector lambda = (opt.warm_start && warm_.size() == nc) ? warm_ : Vector::Zero(nc);
        const long max_iter = opt.max_iter > 0 ? opt.max_iter : 100 * static_cast<long>(nc) + 1000;
        const double a_scale = std::max(qp.A.cwiseAbs().maxCoeff(), 1e-300);
        const double b_scale = qp.b.cwiseAbs().maxCoeff();
        bool converged = false;
        bool infeasible = false;
        long it = 0;
        Vector prev(nc);
        for (; it < max_iter; ++it) {
            prev = lambda;
            for (Eigen::Index i = 0; i < nc; ++i) {
                if (zero_row_[static_cast<std::size_t>(i)]) {
                    lambda(i) = 0.0;
                    continue;
                }
                const double w = H_.row(i).dot(lambda) - H_(i, i) * lambda(i) + d(i);
                lambda(i) = std::max(0.0, -w / H_(i, i));
            }
            if (opt.dual_trace) {
                opt.dual_trace->push_back(dual_objective(lambda, d));
            }
            const Vector step = lambda - prev;
            const double lmax = lambda.cwiseAbs().maxCoeff();
            if (step.cwiseAbs().maxCoeff() <= opt.tol * std::max(1.0, lmax)) {
                converged = true;
                ++it;
                break;
            }
            if (lmax > opt.divergence_guard || farkas_certificate(qp, step, a_scale, b_scale)) {
                infeasible = true;
                ++it;
                break;
            }
        }
        sol.iterations = it;
        if (infeasible) {
            sol.status = QPStatus::infeasible;
            sol.dual = lambda;
            sol.primal = x_free - GinvAt_ * lambda;
            sol.kkt_residual = kkt_report(qp, sol.primal, sol.dual).max();
            warm_.resize(0);
            return sol;
        }
        sol.dual = lambda;
        sol.primal = x_free - GinvAt_ * lambda;
        sol.status = converged ? QPStatus::optimal : QPStatus::max_iterations;
        if (!converged && polyhedron_empty(qp.A, qp.b)) {
            sol.status = QPStatus::infeasible;
            sol.kkt_residual = kkt_report(qp, sol.primal, sol.dual).max();
            warm_.resize(0);
            return sol;
        }
        if (opt.polish) {
            polish(qp, x_free, d, sol);
        }
        sol.kkt_residual = kkt_report(qp, sol.primal, sol.dual).max();
        warm_ = sol.dual;
        return sol;
    }

    void reset() { warm_.resize(0); }

private:
    // Dual objective up to a constant, d = b - A x_free.
    double dual_objective(const Vector& lambda, const Vector& d) const
    {
        return -0.5 * lambda.dot(H_ * lambda) - lambda.dot(d);
    }

    bool farkas_certificate(const QPProblem& qp, const Vector& step, double a_scale, double b_scale) const
    {
        const double l1 = step.cwiseAbs().sum();
        if (!(l1 > 0.0) || step.minCoeff() < -1e-12 * l1) {
            return false;
        }
        const double at = (qp.A.transpose() * step).cwiseAbs().maxCoeff();
        return at <= 1e-9 * a_scale * l1 && qp.b.dot(step) < -1e-9 * std::max(b_scale, 1e-300) * l1;
    }

    void prepare(const QPProblem& qp)
    {
        const bool same = cached_ && G_.rows() == qp.G.rows() && A_.rows() == qp.A.rows() &&
                          A_.cols() == qp.A.cols() && G_ == qp.G && A_ == qp.A;
        if (same) {
            return;
        }
        linalg::require_finite(qp.G, "HildrethSolver G");
        linalg::require_finite(qp.A, "HildrethSolver A");
        if (!linalg::is_symmetric(qp.G)) {
            throw InvalidInput("HildrethSolver: G is not symmetric");
        }
        llt_.compute(qp.G);
        if (llt_.info() != Eigen::Success) {
            throw InvalidInput("HildrethSolver: G is not positive definite");
        }
        G_ = qp.G;
        A_ = qp.A;
        GinvAt_ = llt_.solve(qp.A.transpose());
        H_ = qp.A * GinvAt_;
        H_ = 0.5 * (H_ + H_.transpose()).eval();
        zero_row_.assign(static_cast<std::size_t>(qp.A.rows()), false);
        for (Eigen::Index i = 0; i < qp.A.rows(); ++i) {
            zero_row_[static_cast<std::size_t>(i)] = qp.A.row(i).cwiseAbs().maxCoeff() == 0.0 || !(H_(i, i) > 0.0);
        }
        cached_ = true;
        warm_.resize(0);
    }

    // Exact solve on the active set {lambda_i > 0}; kept only if it certifies better.
    void polish(const QPProblem& qp, const Vector& x_free, const Vector& d, QPSolution& sol) const
    {
        std::vector<Eigen::Index> act;
        const double lmax = sol.dual.cwiseAbs().maxCoeff();
        for (Eigen::Index i = 0; i < sol.dual.size(); ++i) {
            if (sol.dual(i) > 1e-14 * std::max(1.0, lmax)) act.push_back(i);
        }
        if (act.empty()) return;
        const auto k = static_cast<Eigen::Index>(act.size());
        Matrix Hs(k, k);
        Vector ds(k);
        for (Eigen::Index r = 0; r < k; ++r) {
            ds(r) = d(act[static_cast<std::size_t>(r)]);
            for (Eigen::Index c = 0; c < k; ++c) {
                Hs(r, c) = H_(act[static_cast<std::size_t>(r)], act[static_cast<std::size_t>(c)]);
            }
        }
        // Active rows hold with equality: A_s x = b_s  <=>  H_ss l_s = -d_s.
        Eigen::LDLT<Matrix> ldlt(Hs);
        if (ldlt.info() != Eigen::Success) return;
        const Vector ls = ldlt.solve(-ds);
        if (!ls.allFinite() || (Hs * ls + ds).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, ds.cwiseAbs().maxCoeff())) {
            return;
        }
        if ((ls.array() < -1e-9 * std::max(1.0, ls.cwiseAbs().maxCoeff())).any()) {
            return;
        }
        Vector lambda = Vector::Zero(sol.dual.size());
        for (Eigen::Index r = 0; r < k; ++r) {
            lambda(act[static_cast<std::size_t>(r)]) = std::max(0.0, ls(r));
        }
        const Vector x = x_free - GinvAt_ * lambda;
        const KktReport after = kkt_report(qp, x, lambda);
        const double fscale = 1.0 + qp.f.cwiseAbs().maxCoeff();
        if (after.primal_violation <= 1e-9 * std::max(1.0, qp.b.cwiseAbs().maxCoeff()) &&
            after.stationarity <= 1e-6 * fscale) {
            sol.primal = x;
            sol.dual = lambda;
            sol.status = QPStatus::optimal;
        }
    }

    bool cached_ = false;
    Matrix G_;
    Matrix A_;
    Eigen::LLT<Matrix> llt_;
    Matrix GinvAt_;
    Matrix H_;
    std::vector<bool> zero_row_;
    Vector warm_;
};

/// One-shot solve without warm start.
inline QPSolution solve_qp(const QPProblem& qp, const QPOptions& opt = {})
{
    HildrethSolver s;
    return s.solve(qp, opt);
}

/**
 * @brief Replaces the listed rows by A_i x - s_i <= b_i with s_i >= 0 and
 * adds 1/2 rho s_i^2 to the cost. Slack variables are appended after x.
 */
inline QPProblem soften(const QPProblem& qp, const std::vector<Eigen::Index>& soft_rows, double rho)
{
    if (!(rho > 0.0)) {
        throw InvalidInput("soften: rho must be positive");
    }
    if (soft_rows.empty()) {
        return qp;
    }
    const Eigen::Index nv = qp.variables();
    const Eigen::Index nc = qp.constraints();
    const auto ns = static_cast<Eigen::Index>(soft_rows.size());
    for (auto r : soft_rows) {
        if (r < 0 || r >= nc) {
            throw InvalidInput("soften: row index out of range");
        }
    }
    QPProblem out;
    out.G = Matrix::Zero(nv + ns, nv + ns);
    out.G.topLeftCorner(nv, nv) = qp.G;
    out.G.bottomRightCorner(ns, ns) = rho * Matrix::Identity(ns, ns);
    out.f = Vector::Zero(nv + ns);
    out.f.head(nv) = qp.f;
    out.A = Matrix::Zero(nc + ns, nv + ns);
    out.A.topLeftCorner(nc, nv) = qp.A;
    out.b = Vector::Zero(nc + ns);
    out.b.head(nc) = qp.b;
    for (Eigen::Index s = 0; s < ns; ++s) {
        out.A(soft_rows[static_cast<std::size_t>(s)], nv + s) = -1.0;
        out.A(nc + s, nv + s) = -1.0;
    }
    return out;
}

}  // namespace ddpc
