#pragma once

// Independent reference computations shared by the unit and acceptance tests.
// None of these call into the library routine they are used to check.

#include <ddpc/ddpc.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <random>

namespace oracle {

using ddpc::Matrix;
using ddpc::Vector;

inline double rel_fro(const Matrix& a, const Matrix& b)
{
    return (a - b).norm() / b.norm();
}

/// Prediction matrices by simulating unit impulses and unit initial states.
inline std::pair<Matrix, Matrix> prediction_by_simulation(const ddpc::StateSpaceModel& m, Eigen::Index N)
{
    const Eigen::Index n = m.A.rows(), nu = m.B.cols(), q = m.C.rows();
    Matrix phi(N * q, n), gamma = Matrix::Zero(N * q, N * nu);
    for (Eigen::Index c = 0; c < n; ++c) {
        Vector x = Vector::Unit(n, c);
        for (Eigen::Index i = 0; i < N; ++i) {
            x = (m.A * x).eval();
            phi.block(i * q, c, q, 1) = m.C * x;
        }
    }
    for (Eigen::Index j = 0; j < N; ++j) {
        for (Eigen::Index c = 0; c < nu; ++c) {
            Vector x = Vector::Zero(n);
            for (Eigen::Index i = 0; i < N; ++i) {
                Vector u = Vector::Zero(nu);
                if (i == j) u(c) = 1.0;
                x = (m.A * x + m.B * u).eval();
                gamma.block(i * q, j * nu + c, q, 1) = m.C * x;
            }
        }
    }
    return {phi, gamma};
}

/// Rate-based prediction by simulating the plant driven by u_prev + cumulative increments.
inline std::pair<Matrix, Matrix> integral_prediction_by_simulation(const ddpc::StateSpaceModel& m, Eigen::Index N)
{
    const Eigen::Index n = m.A.rows(), nu = m.B.cols(), q = m.C.rows();
    // State [dx; y] = [x(k) - x(k-1); y(k)] realized with x(k-1) = 0 and u_prev = 0.
    Matrix phi(N * q, n + q);
    for (Eigen::Index c = 0; c < n + q; ++c) {
        Vector dx = Vector::Zero(n);
        Vector y0 = Vector::Zero(q);
        if (c < n) dx(c) = 1.0;
        else y0(c - n) = 1.0;
        // Propagate the increment dynamics dx+ = A dx, y+ = y + C A dx.
        Vector y = y0;
        for (Eigen::Index i = 0; i < N; ++i) {
            dx = (m.A * dx).eval();
            y += m.C * dx;
            phi.block(i * q, c, q, 1) = y;
        }
    }
    Matrix gamma = Matrix::Zero(N * q, N * nu);
    for (Eigen::Index j = 0; j < N; ++j) {
        for (Eigen::Index c = 0; c < nu; ++c) {
            Vector x = Vector::Zero(n);
            Vector u = Vector::Zero(nu);
            for (Eigen::Index i = 0; i < N; ++i) {
                if (i == j) u(c) = 1.0;  // step in u from stage j on
                x = (m.A * x + m.B * u).eval();
                gamma.block(i * q, j * nu + c, q, 1) = m.C * x;
            }
        }
    }
    return {phi, gamma};
}

/// Stable, observable random system with spectral radius below `rho`.
inline ddpc::StateSpaceModel random_stable_system(std::mt19937_64& rng, Eigen::Index n, Eigen::Index m, Eigen::Index q,
                                                  double rho = 0.9)
{
    std::normal_distribution<double> nd(0.0, 1.0);
    for (;;) {
        ddpc::StateSpaceModel s;
        s.A = Matrix::NullaryExpr(n, n, [&]() { return nd(rng); });
        s.B = Matrix::NullaryExpr(n, m, [&]() { return nd(rng); });
        s.C = Matrix::NullaryExpr(q, n, [&]() { return nd(rng); });
        s.Bd = Matrix::Zero(n, 0);
        s.Ts = 1.0;
        const double r = s.A.eigenvalues().cwiseAbs().maxCoeff();
        s.A *= rho / std::max(r, 1e-3);
        Matrix obs(n * q, n), ctr(n, n * m);
        Matrix p = Matrix::Identity(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            obs.middleRows(i * q, q) = s.C * p;
            ctr.middleCols(i * m, m) = p * s.B;
            p = (p * s.A).eval();
        }
        Eigen::JacobiSVD<Matrix> so(obs), sc(ctr);
        const auto& vo = so.singularValues();
        const auto& vc = sc.singularValues();
        if (vo(n - 1) > 1e-3 * vo(0) && vc(n - 1) > 1e-3 * vc(0)) return s;
    }
}

struct BruteForceResult {
    bool feasible = false;
    Vector x;
};

/// Exhaustive active-set enumeration for min 1/2 x'Gx + f'x s.t. A x <= b.
inline BruteForceResult brute_force_qp(const Matrix& G, const Vector& f, const Matrix& A, const Vector& b)
{
    const Eigen::Index nv = G.rows(), nc = A.rows();
    BruteForceResult best;
    double best_obj = std::numeric_limits<double>::infinity();
    for (unsigned mask = 0; mask < (1u << nc); ++mask) {
        std::vector<Eigen::Index> act;
        for (Eigen::Index i = 0; i < nc; ++i)
            if (mask & (1u << i)) act.push_back(i);
        const auto na = static_cast<Eigen::Index>(act.size());
        if (na > nv) continue;
        Matrix K = Matrix::Zero(nv + na, nv + na);
        Vector rhs(nv + na);
        K.topLeftCorner(nv, nv) = G;
        rhs.head(nv) = -f;
        for (Eigen::Index k = 0; k < na; ++k) {
            K.block(nv + k, 0, 1, nv) = A.row(act[k]);
            K.block(0, nv + k, nv, 1) = A.row(act[k]).transpose();
            rhs(nv + k) = b(act[k]);
        }
        Eigen::FullPivLU<Matrix> lu(K);
        if (!lu.isInvertible()) continue;
        const Vector z = lu.solve(rhs);
        const Vector x = z.head(nv);
        if (nc && ((A * x - b).array() > 1e-9).any()) continue;
        if (na && (z.tail(na).array() < -1e-9).any()) continue;
        const double obj = 0.5 * x.dot(G * x) + f.dot(x);
        if (obj < best_obj) {
            best_obj = obj;
            best.feasible = true;
            best.x = x;
        }
    }
    return best;
}

/// Stabilizing root of the scalar DARE p = a^2 p - (a b p)^2 / (r + b^2 p) + q.
inline double scalar_dare(double a, double b, double q, double r)
{
    // b^2 p^2 + (r - a^2 r - q b^2) p - q r = 0
    const double A2 = b * b, B1 = r - a * a * r - q * b * b, C0 = -q * r;
    return (-B1 + std::sqrt(B1 * B1 - 4.0 * A2 * C0)) / (2.0 * A2);
}

inline ddpc::StateSpaceModel motor_discrete()
{
    return ddpc::discrete_plant(ddpc::linear_motor_preset());
}

}  // namespace oracle
