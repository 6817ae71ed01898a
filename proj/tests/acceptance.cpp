// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "oracles.hpp"

#include <ddpc/ddpc.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using ddpc::Matrix;
using ddpc::Variant;
using ddpc::Vector;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

Matrix prbs(Eigen::Index channels, Eigen::Index T, std::uint64_t seed, double amp)
{
    Matrix u(channels, T);
    for (Eigen::Index i = 0; i < channels; ++i) {
        ddpc::SignalSpec s;
        s.kind = ddpc::SignalKind::prbs;
        s.amplitude = amp;
        s.length = static_cast<std::size_t>(T);
        s.seed = seed + 7919u * static_cast<std::uint64_t>(i);
        u.row(i) = ddpc::generate_signal(s, 1.0).transpose();
    }
    return u;
}

ddpc::ScenarioConfig integral(ddpc::ScenarioConfig c)
{
    c.controller.integral = true;
    c.estimation.mode = ddpc::EstimationMode::integral_differenced;
    return c;
}

Outcome noiseless_estimator()
{
    const auto m = oracle::motor_discrete();
    const Eigen::Index N = 10, L = 3000, T = ddpc::required_samples(N, L);
    const auto d = ddpc::simulate(m, prbs(1, T, 1, 20.0));
    const auto p = ddpc::estimate_predictor(ddpc::build_hankels(d, N, L, false));
    const double g = oracle::rel_fro(p.Gamma, oracle::prediction_by_simulation(m, N).second);
    const auto held = ddpc::simulate(m, prbs(1, T, 77, 20.0), std::nullopt, (Vector(2) << 0.05, -0.1).finished());
    const auto h = ddpc::build_hankels(held, N, L, false);
    const double y = oracle::rel_fro(p.P1 * h.Up + p.P2 * h.Yp + p.Gamma * h.Uf, h.Yf);
    return {g < 1e-6 && y < 1e-6, "gamma_rel=" + num(g) + " heldout_rel=" + num(y)};
}

Outcome integral_estimator()
{
    const auto m = oracle::motor_discrete();
    const Eigen::Index N = 10, L = 3000;
    const Matrix w = prbs(1, ddpc::required_samples(N, L) + 1, 1, 20.0);
    const auto summed = ddpc::simulate(m, ddpc::integral_input_transform(w, ddpc::IntegralMode::summed));
    const auto ps = ddpc::estimate_integral_predictor(summed, N, L, ddpc::IntegralMode::summed);
    const auto pd = ddpc::estimate_integral_predictor(ddpc::simulate(m, w), N, L, ddpc::IntegralMode::differenced);
    const Matrix truth = oracle::integral_prediction_by_simulation(m, N).second;
    const double es = oracle::rel_fro(ps.Gamma, truth), ed = oracle::rel_fro(pd.Gamma, truth),
                 ab = oracle::rel_fro(ps.Gamma, pd.Gamma);
    return {es < 1e-6 && ed < 1e-6 && ab < 1e-6,
            "summed_rel=" + num(es) + " differenced_rel=" + num(ed) + " mutual_rel=" + num(ab)};
}

Outcome integral_trajectory_identity()
{
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<int> nd(1, 4), md(1, 2);
    std::normal_distribution<double> g;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto sys = oracle::random_stable_system(rng, nd(rng), md(rng), md(rng), 1.1);
        const Eigen::Index n = sys.n(), m = sys.m(), q = sys.q(), N = 8;
        const auto plain = ddpc::build_prediction(sys, N);
        const auto integ = ddpc::build_integral_prediction(sys, N);
        const Vector xprev = Vector::NullaryExpr(n, [&]() { return g(rng); });
        const Vector uI = Vector::NullaryExpr(m, [&]() { return g(rng); });
        const Vector du = Vector::NullaryExpr(N * m, [&]() { return g(rng); });
        const Vector x0 = sys.A * xprev + sys.B * uI;
        Vector xi(n + q);
        xi << x0 - xprev, sys.C * x0;
        const Vector UI = ddpc::cumulative_input_map(N, m) * du + ddpc::linalg::kron(Matrix::Ones(N, 1), uI);
        const Vector lhs = integ.Phi * xi + integ.Gamma * du;
        const Vector rhs = plain.Phi * x0 + plain.Gamma * UI;
        // Direct simulation of the plant under the integrated input.
        Vector sim(N * q);
        Vector x = x0;
        for (Eigen::Index i = 0; i < N; ++i) {
            x = sys.A * x + sys.B * UI.segment(i * m, m);
            sim.segment(i * q, q) = sys.C * x;
        }
        const double scale = std::max(1.0, sim.cwiseAbs().maxCoeff());
        worst = std::max({worst, (lhs - rhs).cwiseAbs().maxCoeff() / scale, (lhs - sim).cwiseAbs().maxCoeff() / scale});
    }
    return {worst < 1e-8, "systems=100 max_scaled_err=" + num(worst)};
}

Outcome lqr_equivalence()
{
    auto c = ddpc::linear_motor_preset();
    c.controller.dare_terminal = true;
    c.controller.umin = c.controller.umax = c.controller.ymin = c.controller.ymax = Vector();
    c.experiment.snr_db = kInf;
    const auto m = ddpc::discrete_plant(c);
    const Matrix K = ddpc::lqr_gain(m.A, m.B, m.C.transpose() * c.controller.Q * m.C, c.controller.R);
    const auto est = ddpc::estimate(c, ddpc::collect(c));
    const auto cfg = ddpc::controller_config(c, Variant::state_dpc, est.predictor);
    ddpc::Controller ctl(cfg);
    const Matrix Kd = ctl.unconstrained_state_gain();
    const double gain_err = (Kd - K).cwiseAbs().maxCoeff();

    Vector xl = (Vector(2) << 0.1, 0.0).finished();
    Vector xd = xl;
    double traj_err = 0.0;
    const Matrix zero_ref = Matrix::Zero(1, cfg.weights.N + 1);
    for (int k = 0; k < 100; ++k) {
        const Vector ud = ctl.step({m.C * xd, xd}, zero_ref);
        const Vector ul = -K * xl;
        traj_err = std::max({traj_err, (xd - xl).cwiseAbs().maxCoeff(), (ud - ul).cwiseAbs().maxCoeff()});
        xd = m.A * xd + m.B * ud;
        xl = m.A * xl + m.B * ul;
    }
    std::ostringstream k;
    k << "K_lqr=[" << num(K(0, 0)) << " " << num(K(0, 1)) << "]";
    return {gain_err < 1e-4 && traj_err < 1e-4,
            k.str() + " max_gain_err=" + num(gain_err) + " max_traj_err=" + num(traj_err)};
}

struct MotorRuns {
    std::vector<Variant> variants{Variant::model_mpc, Variant::state_dpc, Variant::output_dpc};
    std::vector<ddpc::SimulationResult> plain, integ;
    std::vector<ddpc::Metrics> plain_m, integ_m, integ_quiet_m;
};

const MotorRuns& motor_runs()
{
    static const MotorRuns runs = [] {
        MotorRuns r;
        for (bool use_integral : {false, true}) {
            const auto c = use_integral ? integral(ddpc::linear_motor_preset()) : ddpc::linear_motor_preset();
            const auto est = ddpc::estimate(c, ddpc::collect(c));
            auto sc = ddpc::build_scenario(c);
            sc.record_predictions = true;
            for (Variant v : r.variants) {
                auto res = ddpc::run_closed_loop(ddpc::discrete_plant(c), ddpc::controller_config(c, v, est.predictor), sc);
                const auto mt = ddpc::compute_metrics(res, ddpc::metrics_spec(c));
                (use_integral ? r.integ : r.plain).push_back(std::move(res));
                (use_integral ? r.integ_m : r.plain_m).push_back(mt);
            }
            if (use_integral) {
                auto quiet = c;
                quiet.run.noise_snr_db = kInf;
                for (Variant v : r.variants) {
                    r.integ_quiet_m.push_back(ddpc::run(quiet, v, est.predictor).metrics);
                }
            }
        }
        return r;
    }();
    return runs;
}

Outcome offset_behaviour()
{
    const auto& r = motor_runs();
    const double threshold = 1e-2 * 0.1;  // 1 % of the largest reference step
    bool ok = true;
    std::string d = "window=[4.5,5.0)s non-integral offset:";
    for (std::size_t i = 0; i < 3; ++i) {
        ok = ok && r.plain_m[i].offset > threshold;
        d += " " + std::string(ddpc::to_string(r.variants[i])) + "=" + num(r.plain_m[i].offset);
    }
    ok = ok && r.plain_m[2].offset > std::max(r.plain_m[0].offset, r.plain_m[1].offset);
    d += " | integral bias (mean|e| noisy, mean|e| noise-free):";
    for (std::size_t i = 0; i < 3; ++i) {
        ok = ok && r.integ_m[i].bias < 1e-3 && r.integ_quiet_m[i].offset < 1e-3;
        d += " " + std::string(ddpc::to_string(r.variants[i])) + "=" + num(r.integ_m[i].bias) + " (" +
             num(r.integ_m[i].offset) + ", " + num(r.integ_quiet_m[i].offset) + ")";
    }
    return {ok, d};
}

Outcome constraint_satisfaction()
{
    const auto& r = motor_runs();
    double umax = 0.0, ymax = 0.0;
    long steps = 0, kkt_fail = 0, non_optimal = 0;
    for (const auto* set : {&r.plain, &r.integ}) {
        for (const auto& res : *set) {
            umax = std::max(umax, res.u.cwiseAbs().maxCoeff());
            for (Eigen::Index k = 0; k < res.samples(); ++k) {
                ++steps;
                const auto st = res.qp_status[static_cast<std::size_t>(k)];
                if (st != ddpc::QPStatus::optimal) {
                    ++non_optimal;
                    continue;
                }
                ymax = std::max(ymax, res.predicted_outputs[static_cast<std::size_t>(k)].cwiseAbs().maxCoeff());
                if (!res.kkt_ok[static_cast<std::size_t>(k)]) ++kkt_fail;
            }
        }
    }
    const bool ok = umax <= 500.0 + 1e-9 && ymax <= 0.165 + 1e-8 && kkt_fail == 0 && non_optimal == 0;
    return {ok, "steps=" + std::to_string(steps) + " max|u|=" + num(umax) + " max|Y_pred|=" + num(ymax) +
                    " kkt_failures=" + std::to_string(kkt_fail) + " non_optimal=" + std::to_string(non_optimal)};
}

Outcome ups_thd()
{
    const auto c = ddpc::ups_preset();
    const auto est = ddpc::estimate(c, ddpc::collect(c));
    const auto rep = ddpc::run(c, Variant::output_dpc, est.predictor);
    const double thd = rep.metrics.thd;
    return {thd >= 0.025 && thd <= 0.055,
            "thd=" + num(100.0 * thd) + "% band=[2.5%,5.5%] rmse=" + num(rep.metrics.rmse) +
                " max|u|=" + num(rep.metrics.max_abs_u)};
}

Outcome qp_correctness()
{
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g;
    std::uniform_int_distribution<int> nvd(1, 3), ncd(1, 4);
    int mismatches = 0, feasible = 0, infeasible = 0, missed = 0, false_alarm = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
        const Eigen::Index nv = nvd(rng), nc = ncd(rng);
        ddpc::QPProblem qp;
        const Matrix mm = Matrix::NullaryExpr(nv, nv, [&]() { return g(rng); });
        qp.G = mm * mm.transpose() + 0.1 * Matrix::Identity(nv, nv);
        qp.f = Vector::NullaryExpr(nv, [&]() { return 2.0 * g(rng); });
        qp.A = Matrix::NullaryExpr(nc, nv, [&]() { return g(rng); });
        qp.b = Vector::NullaryExpr(nc, [&]() { return g(rng); });
        if (trial % 5 == 4 && nc >= 2) {
            // Contradictory pair a x <= b and -a x <= -b - 1.
            qp.A.row(1) = -qp.A.row(0);
            qp.b(1) = -qp.b(0) - 1.0;
        }
        const auto ref = oracle::brute_force_qp(qp.G, qp.f, qp.A, qp.b);
        const auto s = ddpc::solve_qp(qp);
        if (ref.feasible) {
            ++feasible;
            if (s.status != ddpc::QPStatus::optimal) {
                ++false_alarm;
                continue;
            }
            const double e = (s.primal - ref.x).norm() / std::max(1.0, ref.x.norm());
            worst = std::max(worst, e);
            if (e > 1e-6) ++mismatches;
        } else {
            ++infeasible;
            if (s.status != ddpc::QPStatus::infeasible) ++missed;
        }
    }
    return {mismatches == 0 && missed == 0 && false_alarm == 0,
            "feasible=" + std::to_string(feasible) + " infeasible=" + std::to_string(infeasible) +
                " max_rel_err=" + num(worst) + " mismatches=" + std::to_string(mismatches) +
                " missed_infeasible=" + std::to_string(missed) + " false_infeasible=" + std::to_string(false_alarm)};
}

Outcome noisy_robustness()
{
    std::vector<double> errs;
    double worst_y = 0.0;
    bool stable = true;
    const Matrix truth = oracle::prediction_by_simulation(oracle::motor_discrete(), 10).second;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto c = ddpc::linear_motor_preset();
        c.experiment.seed = seed;
        c.run.seed = seed;
        c.run.duration = 10.0;
        const auto est = ddpc::estimate(c, ddpc::collect(c));
        errs.push_back(oracle::rel_fro(est.predictor.Gamma, truth));
        for (Variant v : {Variant::state_dpc, Variant::output_dpc}) {
            try {
                const auto rep = ddpc::run(c, v, est.predictor);
                const double y = rep.result.y_clean.cwiseAbs().maxCoeff();
                worst_y = std::max(worst_y, y);
                if (!std::isfinite(y) || y > 1.0) stable = false;
            } catch (const ddpc::Error&) {
                stable = false;
            }
        }
    }
    std::vector<double> sorted = errs;
    std::sort(sorted.begin(), sorted.end());
    const double median = 0.5 * (sorted[9] + sorted[10]);
    return {median < 0.1 && stable, "seeds=20 median_gamma_rel=" + num(median) + " max_gamma_rel=" + num(sorted.back()) +
                                        " max|y|=" + num(worst_y) + (stable ? " bounded" : " UNBOUNDED")};
}

Outcome complexity()
{
    const auto c = ddpc::linear_motor_preset();
    const auto est = ddpc::estimate(c, ddpc::collect(c));
    auto mean_time = [&](Variant v) {
        std::vector<double> t;
        for (int rep = 0; rep < 7; ++rep) t.push_back(ddpc::run(c, v, est.predictor).metrics.mean_step_seconds);
        std::sort(t.begin(), t.end());
        return t[t.size() / 2];
    };
    (void)mean_time(Variant::model_mpc);  // warm caches
    const double model = mean_time(Variant::model_mpc);
    const double output = mean_time(Variant::output_dpc);
    const double ratio = output / model;
    return {ratio <= 2.0, "model_us=" + num(1e6 * model) + " output_dpc_us=" + num(1e6 * output) +
                              " ratio=" + num(ratio)};
}

}  // namespace

int main()
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"noiseless estimator exactness", noiseless_estimator},
        {"integral estimator exactness", integral_estimator},
        {"integral trajectory identity", integral_trajectory_identity},
        {"LQR equivalence", lqr_equivalence},
        {"offset behaviour", offset_behaviour},
        {"constraint satisfaction", constraint_satisfaction},
        {"UPS tracking THD", ups_thd},
        {"QP solver correctness", qp_correctness},
        {"noisy-data robustness", noisy_robustness},
        {"per-step complexity", complexity},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!o.pass) ++failures;
        std::cout << "criterion " << (i + 1) << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
                  << o.detail << " (" << num(secs) << " s)" << std::endl;
    }
    std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criterion(s) failed" : "acceptance: all passed")
              << std::endl;
    return failures ? 1 : 0;
}
