#pragma once

/**
 * @brief Model-based condensed MPC matrices.
 *
 * Stacked predictions over the horizon are Y = Phi x(k) + Gamma U with
 * Y = [y(1|k); ...; y(N|k)] and U = [u(0|k); ...; u(N-1|k)].
 */

#include <ddpc/error.hpp>
#include <ddpc/estimation.hpp>
#include <ddpc/linalg.hpp>
#include <ddpc/simsys.hpp>

#include <Eigen/Eigenvalues>

#include <optional>
#include <ostream>
#include <utility>
#include <vector>

namespace ddpc {

struct CostWeights {
    Matrix Q;                 ///< q x q stage output weight
    Matrix R;                 ///< m x m input (or input increment) weight
    std::optional<Matrix> P;  ///< terminal output weight, defaults to Q
    Eigen::Index N = 1;

    Matrix terminal() const { return P ? *P : Q; }

    /// diag(Q, ..., Q, P)
    Matrix omega() const
    {
        std::vector<Matrix> blocks(static_cast<std::size_t>(N), Q);
        blocks.back() = terminal();
        return linalg::block_diag(blocks);
    }

    /// diag(R, ..., R)
    Matrix psi() const { return linalg::repeat_diag(R, N); }
};

/// One stage of M_i y(i|k) + E_i u(i|k) <= b_i.
struct StageConstraint {
    Matrix M;  ///< rows x q
    Matrix E;  ///< rows x m
    Vector b;
};

struct ConstraintSpec {
    std::vector<StageConstraint> stages;  ///< i = 0 .. N-1
    Matrix terminal_M;                    ///< rows_N x q
    Vector terminal_b;
    bool soft = false;
    double rho = 1e6;  ///< slack penalty for softened output rows

    bool empty() const
    {
        for (const auto& s : stages) {
            if (s.b.size() > 0) return false;
        }
        return terminal_b.size() == 0;
    }
};

/**
 * @brief Box bounds: input bounds on stages 0..N-1, output bounds on stages 1..N.
 *
 * Empty bound vectors mean "no bound of that kind".
 */
inline ConstraintSpec box_constraints(Eigen::Index N, Eigen::Index m, Eigen::Index q, const Vector& umin,
                                      const Vector& umax, const Vector& ymin, const Vector& ymax)
{
    auto rows_for = [](const Vector& lo, const Vector& hi, Eigen::Index dim) -> std::pair<Matrix, Vector> {
        std::vector<std::pair<Vector, double>> rows;
        for (Eigen::Index i = 0; i < lo.size(); ++i) {
            Vector r = Vector::Zero(dim);
            r(i) = -1.0;
            rows.emplace_back(r, -lo(i));
        }
        for (Eigen::Index i = 0; i < hi.size(); ++i) {
            Vector r = Vector::Zero(dim);
            r(i) = 1.0;
            rows.emplace_back(r, hi(i));
        }
        Matrix s(static_cast<Eigen::Index>(rows.size()), dim);
        Vector b(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) {
            s.row(static_cast<Eigen::Index>(k)) = rows[k].first.transpose();
            b(static_cast<Eigen::Index>(k)) = rows[k].second;
        }
        return {s, b};
    };
    if ((umin.size() && umin.size() != m) || (umax.size() && umax.size() != m) || (ymin.size() && ymin.size() != q) ||
        (ymax.size() && ymax.size() != q)) {
        throw InvalidInput("box_constraints: bound vector has wrong size");
    }
    const auto [su, bu] = rows_for(umin, umax, m);
    const auto [sy, by] = rows_for(ymin, ymax, q);
    ConstraintSpec spec;
    for (Eigen::Index i = 0; i < N; ++i) {
        StageConstraint st;
        const Eigen::Index ny = i == 0 ? 0 : sy.rows();
        st.M = Matrix::Zero(su.rows() + ny, q);
        st.E = Matrix::Zero(su.rows() + ny, m);
        st.b = Vector(su.rows() + ny);
        st.E.topRows(su.rows()) = su;
        st.b.head(su.rows()) = bu;
        if (ny) {
            st.M.bottomRows(ny) = sy;
            st.b.tail(ny) = by;
        }
        spec.stages.push_back(std::move(st));
    }
    spec.terminal_M = sy;
    spec.terminal_b = by;
    return spec;
}

/// Aggregated constraints D y(k) + M Y + E U <= c and L = M Gamma + E (times the input map).
struct CondensedConstraints {
    Matrix Lmat;
    Matrix Mcal;
    Matrix Dcal;
    Matrix Ecal;
    Vector c;
    /// Rows that involve outputs (candidates for softening).
    std::vector<bool> output_row;
};

struct CondensedQP {
    Matrix G;
    Matrix F;
    CondensedConstraints constraints;
};

struct Prediction {
    Matrix Phi;
    Matrix Gamma;
};

/// Phi = [CA; ...; CA^N], Gamma(i, j) = C A^(i-j) B for i >= j.
inline Prediction build_prediction(const StateSpaceModel& model, Eigen::Index N)
{
    model.validate();
    if (N < 1) {
        throw InvalidInput("build_prediction: N must be >= 1");
    }
    const Eigen::Index n = model.n(), m = model.m(), q = model.q();
    Prediction p;
    p.Phi.resize(N * q, n);
    p.Gamma = Matrix::Zero(N * q, N * m);
    std::vector<Matrix> markov;  // C A^i B
    Matrix ca = model.C;         // C A^i
    for (Eigen::Index i = 0; i < N; ++i) {
        markov.push_back(ca * model.B);
        ca = ca * model.A;
        p.Phi.block(i * q, 0, q, n) = ca;
    }
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            p.Gamma.block(i * q, j * m, q, m) = markov[static_cast<std::size_t>(i - j)];
        }
    }
    return p;
}

/// Rate-based model with state [x(k) - x(k-1); y(k)] and input du(k).
inline StateSpaceModel integral_model(const StateSpaceModel& model)
{
    model.validate();
    const Eigen::Index n = model.n(), m = model.m(), q = model.q();
    StateSpaceModel out;
    out.A = Matrix::Zero(n + q, n + q);
    out.A.topLeftCorner(n, n) = model.A;
    out.A.bottomLeftCorner(q, n) = model.C * model.A;
    out.A.bottomRightCorner(q, q) = Matrix::Identity(q, q);
    out.B.resize(n + q, m);
    out.B.topRows(n) = model.B;
    out.B.bottomRows(q) = model.C * model.B;
    out.C = Matrix::Zero(q, n + q);
    out.C.rightCols(q) = Matrix::Identity(q, q);
    out.Bd = Matrix::Zero(n + q, 0);
    out.Ts = model.Ts;
    return out;
}

/// Integral prediction matrices built from the rate-based model.
inline Prediction build_integral_prediction(const StateSpaceModel& model, Eigen::Index N)
{
    return build_prediction(integral_model(model), N);
}

/// Same matrices from running sums of C A^i and C A^i B.
inline Prediction integral_prediction_closed_form(const StateSpaceModel& model, Eigen::Index N)
{
    model.validate();
    const Eigen::Index n = model.n(), m = model.m(), q = model.q();
    Prediction p;
    p.Phi = Matrix::Zero(N * q, n + q);
    p.Gamma = Matrix::Zero(N * q, N * m);
    std::vector<Matrix> sum_markov;  // sum_{l<=i} C A^l B
    Matrix ca = model.C;
    Matrix sum_ca = Matrix::Zero(q, n);
    Matrix acc = Matrix::Zero(q, m);
    for (Eigen::Index i = 0; i < N; ++i) {
        acc += ca * model.B;
        sum_markov.push_back(acc);
        ca = ca * model.A;
        sum_ca += ca;
        p.Phi.block(i * q, 0, q, n) = sum_ca;
        p.Phi.block(i * q, n, q, q) = Matrix::Identity(q, q);
    }
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            p.Gamma.block(i * q, j * m, q, m) = sum_markov[static_cast<std::size_t>(i - j)];
        }
    }
    return p;
}

namespace detail {

inline void require_psd(const Matrix& m, const char* what)
{
    if (!linalg::is_symmetric(m)) {
        throw InvalidInput(std::string(what) + " must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() < -1e-12 * scale) {
        throw InvalidInput(std::string(what) + " must be positive semidefinite");
    }
}

}  // namespace detail

/// G = 2 (Psi + Gamma^T Omega Gamma), F = 2 Gamma^T Omega.
inline std::pair<Matrix, Matrix> condense_cost(const Matrix& gamma, const CostWeights& w)
{
    const Eigen::Index q = w.Q.rows();
    const Eigen::Index m = w.R.rows();
    if (w.N < 1 || w.Q.cols() != q || w.R.cols() != m || w.terminal().rows() != q || w.terminal().cols() != q) {
        throw InvalidInput("condense_cost: weight shapes are inconsistent");
    }
    if (gamma.rows() != w.N * q || gamma.cols() != w.N * m) {
        throw InvalidInput("condense_cost: Gamma shape does not match weights");
    }
    try {
        (void)linalg::cholesky(w.R);
    } catch (const FactorizationError&) {
        throw InvalidInput("condense_cost: R must be symmetric positive definite");
    }
    detail::require_psd(w.Q, "condense_cost: Q");
    detail::require_psd(w.terminal(), "condense_cost: P");
    const Matrix omega = w.omega();
    Matrix G = 2.0 * (w.psi() + gamma.transpose() * omega * gamma);
    G = 0.5 * (G + G.transpose()).eval();
    Matrix F = 2.0 * gamma.transpose() * omega;
    return {G, F};
}

/// Block lower-triangular ones: maps increments to absolute inputs (minus u(k-1)).
inline Matrix cumulative_input_map(Eigen::Index N, Eigen::Index m)
{
    Matrix s = Matrix::Zero(N * m, N * m);
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            s.block(i * m, j * m, m, m) = Matrix::Identity(m, m);
        }
    }
    return s;
}

/**
 * @brief Stacks the stage constraints.
 *
 * With `input_map` S the decision variable is an increment sequence and the
 * absolute inputs are S dU + 1 (x) u(k-1); the caller moves the constant part
 * to the right-hand side.
 */
inline CondensedConstraints condense_constraints(const ConstraintSpec& spec, const Matrix& gamma, Eigen::Index q,
                                                 Eigen::Index m, const std::optional<Matrix>& input_map = std::nullopt)
{
    const auto N = static_cast<Eigen::Index>(spec.stages.size());
    CondensedConstraints cc;
    if (N == 0) {
        const Eigen::Index nv = gamma.cols();
        cc.Lmat = Matrix::Zero(0, nv);
        cc.Mcal = Matrix::Zero(0, gamma.rows());
        cc.Dcal = Matrix::Zero(0, q);
        cc.Ecal = Matrix::Zero(0, nv);
        cc.c = Vector::Zero(0);
        return cc;
    }
    if (gamma.rows() != N * q || gamma.cols() != N * m) {
        throw InvalidInput("condense_constraints: Gamma shape does not match the stage count");
    }
    Eigen::Index rows = spec.terminal_b.size();
    for (const auto& s : spec.stages) {
        if (s.M.rows() != s.b.size() || s.E.rows() != s.b.size() || (s.b.size() && (s.M.cols() != q || s.E.cols() != m))) {
            throw InvalidInput("condense_constraints: stage constraint shapes are inconsistent");
        }
        linalg::require_finite(s.b, "condense_constraints b");
        rows += s.b.size();
    }
    if (spec.terminal_M.rows() != spec.terminal_b.size() || (spec.terminal_b.size() && spec.terminal_M.cols() != q)) {
        throw InvalidInput("condense_constraints: terminal constraint shapes are inconsistent");
    }
    cc.Dcal = Matrix::Zero(rows, q);
    cc.Mcal = Matrix::Zero(rows, N * q);
    cc.Ecal = Matrix::Zero(rows, N * m);
    cc.c = Vector(rows);
    cc.output_row.assign(static_cast<std::size_t>(rows), false);
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < N; ++i) {
        const auto& s = spec.stages[static_cast<std::size_t>(i)];
        const Eigen::Index k = s.b.size();
        if (k == 0) continue;
        if (i == 0) {
            cc.Dcal.block(r, 0, k, q) = s.M;
        } else {
            cc.Mcal.block(r, (i - 1) * q, k, q) = s.M;
        }
        cc.Ecal.block(r, i * m, k, m) = s.E;
        cc.c.segment(r, k) = s.b;
        for (Eigen::Index j = 0; j < k; ++j) {
            cc.output_row[static_cast<std::size_t>(r + j)] = s.M.row(j).cwiseAbs().maxCoeff() > 0.0;
        }
        r += k;
    }
    const Eigen::Index kN = spec.terminal_b.size();
    if (kN) {
        cc.Mcal.block(r, (N - 1) * q, kN, q) = spec.terminal_M;
        cc.c.segment(r, kN) = spec.terminal_b;
        for (Eigen::Index j = 0; j < kN; ++j) {
            cc.output_row[static_cast<std::size_t>(r + j)] = spec.terminal_M.row(j).cwiseAbs().maxCoeff() > 0.0;
        }
    }
    cc.Lmat = cc.Mcal * gamma + (input_map ? Matrix(cc.Ecal * *input_map) : cc.Ecal);
    return cc;
}

/**
 * @brief Stabilizing solution of the discrete algebraic Riccati equation.
 *
 * Fixed-point Riccati recursion started from Qx, stopped when
 * ||dP||_F < 1e-12 ||P||_F (at most 1e5 sweeps).
 */
inline Matrix solve_dare(const Matrix& A, const Matrix& B, const Matrix& Qx, const Matrix& R)
{
    const Eigen::Index n = A.rows();
    if (A.cols() != n || B.rows() != n || Qx.rows() != n || Qx.cols() != n || R.rows() != B.cols() ||
        R.cols() != B.cols()) {
        throw InvalidInput("solve_dare: inconsistent dimensions");
    }
    detail::require_psd(Qx, "solve_dare: Qx");
    try {
        (void)linalg::cholesky(R);
    } catch (const FactorizationError&) {
        throw InvalidInput("solve_dare: R must be symmetric positive definite");
    }
    Matrix P = Qx;
    for (int it = 0; it < 100000; ++it) {
        const Matrix bp = B.transpose() * P;
        const Matrix s = R + bp * B;
        Matrix next = A.transpose() * P * A - (bp * A).transpose() * linalg::solve_spd(0.5 * (s + s.transpose()), bp * A) + Qx;
        next = 0.5 * (next + next.transpose()).eval();
        if (!next.allFinite()) {
            break;
        }
        const double change = (next - P).stableNorm();
        P = std::move(next);
        if (std::isfinite(change) && change <= 1e-12 * P.stableNorm()) {
            return P;
        }
    }
    throw UnstabilizableError("solve_dare: Riccati iteration did not converge; (A, B) may not be stabilizable");
}

/// K = (R + B^T P B)^-1 B^T P A, control law u = -K x.
inline Matrix lqr_gain(const Matrix& A, const Matrix& B, const Matrix& Qx, const Matrix& R)
{
    const Matrix P = solve_dare(A, B, Qx, R);
    const Matrix s = R + B.transpose() * P * B;
    return linalg::solve_spd(0.5 * (s + s.transpose()), B.transpose() * P * A);
}

/// Output augmentation y_a = [y; V x] with V^T V = Qp and the matching weights.
struct TerminalAugmentation {
    Matrix V;
    CostWeights weights;
};

/// Q~ = diag(Q, 0_n), P~ = diag(0_q, I_n) for a terminal state penalty Qp.
inline TerminalAugmentation augment_terminal_weights(const Matrix& Qp, const Matrix& Q, const Matrix& R, Eigen::Index N)
{
    TerminalAugmentation aug;
    aug.V = linalg::cholesky(Qp);
    const Eigen::Index n = Qp.rows();
    const Eigen::Index q = Q.rows();
    aug.weights.Q = linalg::block_diag({Q, Matrix::Zero(n, n)});
    aug.weights.P = linalg::block_diag({Matrix::Zero(q, q), Matrix::Identity(n, n)});
    aug.weights.R = R;
    aug.weights.N = N;
    return aug;
}

/// Appends y_o = V x to the measured outputs of an experiment with recorded states.
inline ExperimentData augment_terminal_output(const ExperimentData& data, const Matrix& V)
{
    if (!data.X) {
        throw StateRequiredError("augment_terminal_output: the experiment has no state trajectory");
    }
    if (V.cols() != data.X->rows()) {
        throw InvalidInput("augment_terminal_output: V has wrong column count");
    }
    ExperimentData out = data;
    out.Y.resize(data.Y.rows() + V.rows(), data.Y.cols());
    out.Y << data.Y, V * *data.X;
    return out;
}

/// Model whose output matrix is [C; V].
inline StateSpaceModel augment_terminal_output(const StateSpaceModel& model, const Matrix& V)
{
    model.validate();
    if (V.cols() != model.n()) {
        throw InvalidInput("augment_terminal_output: V has wrong column count");
    }
    StateSpaceModel out = model;
    out.C.resize(model.q() + V.rows(), model.n());
    out.C << model.C, V;
    return out;
}

namespace io {

inline void write_condensed_qp(std::ostream& os, const CondensedQP& qp)
{
    os << "ddpc-condensed-qp v1 nv=" << qp.G.rows() << " nc=" << qp.constraints.c.size() << '\n';
    write_matrix_block(os, "G", qp.G);
    write_matrix_block(os, "F", qp.F);
    write_matrix_block(os, "L", qp.constraints.Lmat);
    write_matrix_block(os, "M", qp.constraints.Mcal);
    write_matrix_block(os, "D", qp.constraints.Dcal);
    write_matrix_block(os, "E", qp.constraints.Ecal);
    write_matrix_block(os, "c", qp.constraints.c);
}

}  // namespace io
}  // namespace ddpc
