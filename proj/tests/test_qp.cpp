#include "oracles.hpp"

#include <ddpc/qp.hpp>

#include <gtest/gtest.h>

#include <random>

using ddpc::Matrix;
using ddpc::QPProblem;
using ddpc::QPStatus;
using ddpc::Vector;

namespace {

QPProblem example_problem()
{
    // min 1/2 |x|^2 - [1 1] x  s.t.  x1 <= 0.5
    QPProblem qp;
    qp.G = Matrix::Identity(2, 2);
    qp.f = -Vector::Ones(2);
    qp.A = (Matrix(2, 2) << 1, 0, 0, 1).finished();
    qp.b = (Vector(2) << 0.5, 2.0).finished();
    return qp;
}

QPProblem random_problem(std::mt19937_64& rng, Eigen::Index nv, Eigen::Index nc)
{
    std::normal_distribution<double> nd;
    QPProblem qp;
    const Matrix m = Matrix::NullaryExpr(nv, nv, [&]() { return nd(rng); });
    qp.G = m * m.transpose() + 0.5 * Matrix::Identity(nv, nv);
    qp.f = Vector::NullaryExpr(nv, [&]() { return 3.0 * nd(rng); });
    qp.A = Matrix::NullaryExpr(nc, nv, [&]() { return nd(rng); });
    // A strictly feasible point keeps the problem feasible.
    const Vector x0 = Vector::NullaryExpr(nv, [&]() { return nd(rng); });
    qp.b = qp.A * x0 + Vector::NullaryExpr(nc, [&]() { return std::abs(nd(rng)); });
    return qp;
}

}  // namespace

TEST(Hildreth, SmallExample)
{
    const auto s = ddpc::solve_qp(example_problem());
    EXPECT_EQ(s.status, QPStatus::optimal);
    EXPECT_LT((s.primal - (Vector(2) << 0.5, 1.0).finished()).norm(), 1e-9);
    EXPECT_LT((s.dual - (Vector(2) << 0.5, 0.0).finished()).norm(), 1e-9);
    EXPECT_TRUE(ddpc::kkt_certified(example_problem(), s));
}

TEST(Hildreth, InactiveConstraintsGiveUnconstrainedSolution)
{
    auto qp = example_problem();
    qp.b = Vector::Constant(2, 10.0);
    const auto s = ddpc::solve_qp(qp);
    EXPECT_EQ(s.status, QPStatus::optimal);
    EXPECT_EQ(s.primal, ddpc::solve_unconstrained(qp.G, qp.f));
    EXPECT_TRUE(s.dual.isZero());
    EXPECT_EQ(s.iterations, 0);
}

TEST(Hildreth, InfeasibleProblemIsReported)
{
    QPProblem qp;
    qp.G = Matrix::Identity(1, 1);
    qp.f = Vector::Zero(1);
    qp.A = (Matrix(2, 1) << 1, -1).finished();
    qp.b = (Vector(2) << 0, -1).finished();
    EXPECT_EQ(ddpc::solve_qp(qp).status, QPStatus::infeasible);

    qp.A = Matrix::Zero(1, 1);
    qp.b = Vector::Constant(1, -1.0);
    EXPECT_EQ(ddpc::solve_qp(qp).status, QPStatus::infeasible);
}

TEST(Hildreth, MatchesBruteForceOnRandomProblems)
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 60; ++trial) {
        const Eigen::Index nv = 2 + trial % 4, nc = 3 + trial % 6;
        const auto qp = random_problem(rng, nv, nc);
        const auto ref = oracle::brute_force_qp(qp.G, qp.f, qp.A, qp.b);
        ASSERT_TRUE(ref.feasible);
        const auto s = ddpc::solve_qp(qp);
        EXPECT_EQ(s.status, QPStatus::optimal) << "trial " << trial;
        EXPECT_LT((s.primal - ref.x).norm(), 1e-6 * std::max(1.0, ref.x.norm())) << "trial " << trial;
        EXPECT_TRUE(ddpc::kkt_certified(qp, s)) << "trial " << trial << " kkt " << s.kkt_residual;
    }
}

TEST(Hildreth, DualObjectiveNeverDecreases)
{
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        const auto qp = random_problem(rng, 4, 8);
        std::vector<double> trace;
        ddpc::QPOptions opt;
        opt.dual_trace = &trace;
        opt.polish = false;
        (void)ddpc::solve_qp(qp, opt);
        for (std::size_t i = 1; i < trace.size(); ++i) {
            EXPECT_GE(trace[i], trace[i - 1] - 1e-10 * std::max(1.0, std::abs(trace[i - 1])));
        }
    }
}

TEST(Hildreth, WarmStartReusesMultipliers)
{
    std::mt19937_64 rng(13);
    auto qp = random_problem(rng, 5, 10);
    ddpc::HildrethSolver solver;
    ddpc::QPOptions opt;
    opt.polish = false;
    const auto cold = solver.solve(qp, opt);
    qp.f *= 1.0 + 1e-6;
    const auto warm = solver.solve(qp, opt);
    solver.reset();
    const auto again = solver.solve(qp, opt);
    EXPECT_LE(warm.iterations, again.iterations);
    EXPECT_LT((warm.primal - again.primal).norm(), 1e-6 * std::max(1.0, again.primal.norm()));
    EXPECT_GT(cold.iterations, 0);
}

TEST(Hildreth, IterationCapReported)
{
    std::mt19937_64 rng(14);
    const auto qp = random_problem(rng, 6, 12);
    ddpc::QPOptions opt;
    opt.max_iter = 1;
    opt.polish = false;
    opt.tol = 1e-15;
    const auto s = ddpc::solve_qp(qp, opt);
    if (s.iterations > 0) EXPECT_EQ(s.status, QPStatus::max_iterations);
}

TEST(Hildreth, RejectsMalformedProblems)
{
    auto qp = example_problem();
    qp.G(0, 1) = 0.5;
    EXPECT_THROW(ddpc::solve_qp(qp), ddpc::InvalidInput);
    qp = example_problem();
    qp.G = -qp.G;
    EXPECT_THROW(ddpc::solve_qp(qp), ddpc::InvalidInput);
    qp = example_problem();
    qp.b.resize(3);
    EXPECT_THROW(ddpc::solve_qp(qp), ddpc::InvalidInput);
}

TEST(Soften, SlackAndLimit)
{
    // min 1/2 x^2 - 2x  s.t.  x <= 1, softened.
    QPProblem qp;
    qp.G = Matrix::Identity(1, 1);
    qp.f = Vector::Constant(1, -2.0);
    qp.A = Matrix::Ones(1, 1);
    qp.b = Vector::Ones(1);
    const auto loose = ddpc::solve_qp(ddpc::soften(qp, {0}, 10.0));
    ASSERT_EQ(loose.status, QPStatus::optimal);
    // Stationarity gives x = 2 - lambda, s = lambda / rho, x - s = 1.
    EXPECT_NEAR(loose.primal(0), 1.0 + 1.0 / 11.0, 1e-9);
    EXPECT_GT(loose.primal(1), 0.0);
    const auto tight = ddpc::solve_qp(ddpc::soften(qp, {0}, 1e9));
    const auto hard = ddpc::solve_qp(qp);
    EXPECT_LT(std::abs(tight.primal(0) - hard.primal(0)), 1e-4);
    EXPECT_THROW(ddpc::soften(qp, {0}, 0.0), ddpc::InvalidInput);
    EXPECT_THROW(ddpc::soften(qp, {3}, 1.0), ddpc::InvalidInput);
}

TEST(Soften, RescuesInfeasibleRows)
{
    QPProblem qp;
    qp.G = Matrix::Identity(1, 1);
    qp.f = Vector::Zero(1);
    qp.A = (Matrix(2, 1) << 1, -1).finished();
    qp.b = (Vector(2) << 0, -1).finished();
    const auto s = ddpc::solve_qp(ddpc::soften(qp, {1}, 1e6));
    EXPECT_EQ(s.status, QPStatus::optimal);
    EXPECT_LE(s.primal(0), 1e-9);
}

TEST(Unconstrained, Examples)
{
    EXPECT_TRUE(ddpc::solve_unconstrained(2.0 * Matrix::Identity(2, 2), (Vector(2) << 2, -4).finished())
                    .isApprox((Vector(2) << -1, 2).finished(), 1e-15));
    EXPECT_THROW(ddpc::solve_unconstrained(Matrix::Zero(1, 1), Vector::Ones(1)), ddpc::InvalidInput);
}

TEST(Kkt, ReportComponents)
{
    const auto qp = example_problem();
    const auto r = ddpc::kkt_report(qp, (Vector(2) << 1, 1).finished(), Vector::Zero(2));
    EXPECT_NEAR(r.primal_violation, 0.5, 1e-15);
    EXPECT_NEAR(r.stationarity, 0.0, 1e-15);
    const auto neg = ddpc::kkt_report(qp, (Vector(2) << 0.5, 1).finished(), (Vector(2) << 0.5, -0.1).finished());
    EXPECT_NEAR(neg.dual_violation, 0.1, 1e-15);
}

TEST(Nnls, MatchesBruteForceQp)
{
    std::mt19937_64 rng(21);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Index rows = 3 + trial % 4, cols = 1 + trial % 3;
        const Matrix E = Matrix::NullaryExpr(rows, cols, [&]() { return nd(rng); });
        const Vector f = Vector::NullaryExpr(rows, [&]() { return nd(rng); });
        const Vector u = ddpc::nnls(E, f);
        // Same problem as min 1/2 u'E'Eu - (E'f)'u  s.t.  -u <= 0.
        const auto ref = oracle::brute_force_qp(E.transpose() * E, -E.transpose() * f,
                                                -Matrix::Identity(cols, cols), Vector::Zero(cols));
        ASSERT_TRUE(ref.feasible);
        EXPECT_LT((u - ref.x).norm(), 1e-9 * std::max(1.0, ref.x.norm())) << "trial " << trial;
        EXPECT_GE(u.minCoeff(), 0.0);
    }
    EXPECT_EQ(ddpc::nnls(Matrix::Identity(2, 2), (Vector(2) << 1, -1).finished()), (Vector(2) << 1, 0).finished());
}

TEST(PolyhedronEmpty, AgreesWithEnumeration)
{
    Matrix A(2, 1);
    A << 1, -1;
    EXPECT_TRUE(ddpc::polyhedron_empty(A, (Vector(2) << 0, -1).finished()));
    EXPECT_FALSE(ddpc::polyhedron_empty(A, (Vector(2) << 1, 0).finished()));
    std::mt19937_64 rng(22);
    std::normal_distribution<double> nd;
    int empty = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const Eigen::Index nv = 1 + trial % 3, nc = 1 + trial % 5;
        const Matrix a = Matrix::NullaryExpr(nc, nv, [&]() { return nd(rng); });
        const Vector b = Vector::NullaryExpr(nc, [&]() { return nd(rng); });
        const bool feasible = oracle::brute_force_qp(Matrix::Identity(nv, nv), Vector::Zero(nv), a, b).feasible;
        EXPECT_EQ(ddpc::polyhedron_empty(a, b), !feasible) << "trial " << trial;
        empty += feasible ? 0 : 1;
    }
    EXPECT_GT(empty, 10);
}
