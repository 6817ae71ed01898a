#pragma once

/**
 * @brief Receding-horizon controllers and the closed-loop simulation engine.
 *
 * Three free-response sources share one condensed QP:
 *  - model_mpc:  Phi x(k) from a known model,
 *  - state_dpc:  Phi_hat x(k) with Phi_hat estimated from state data,
 *  - output_dpc: P1 u(k-N..k-1) + P2 y(k-N+1..k) from I/O buffers.
 * The integral (rate-based) variants optimize input increments and feed the
 * state [x(k) - x(k-1); y(k)] or increment buffers instead.
 */

#include <ddpc/error.hpp>
#include <ddpc/estimation.hpp>
#include <ddpc/linalg.hpp>
#include <ddpc/mpc.hpp>
#include <ddpc/qp.hpp>
#include <ddpc/simsys.hpp>

#include <chrono>
#include <cmath>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace ddpc {

enum class Variant { model_mpc, state_dpc, output_dpc };

inline const char* to_string(Variant v)
{
    switch (v) {
    case Variant::model_mpc: return "model-mpc";
    case Variant::state_dpc: return "state-dpc";
    case Variant::output_dpc: return "output-dpc";
    }
    return "?";
}

struct ControllerConfig {
    Variant variant = Variant::model_mpc;
    bool integral = false;
    CostWeights weights;
    /// Bounds on the plant outputs (q columns) and inputs, before any augmentation.
    ConstraintSpec constraints;
    std::optional<PredictorMatrices> predictor;
    std::optional<StateSpaceModel> model;
    /// Terminal-penalty augmentation y_a = [y; V x]; requires measured states.
    std::optional<Matrix> output_augmentation;
    QPOptions qp;
};

struct Measurement {
    Vector y;
    std::optional<Vector> x;
};

/// Everything the controller remembers between samples.
struct ControllerState {
    Matrix past_u;  ///< m x N, oldest first (increments for integral output-DPC)
    Matrix past_y;  ///< q_tot x N, oldest first, newest is y(k)
    Vector u_prev;
    std::optional<Vector> x_prev;
    long step = 0;
};

struct StepInfo {
    QPStatus status = QPStatus::optimal;
    long iterations = 0;
    double kkt_residual = 0.0;
    bool kkt_ok = true;
    double seconds = 0.0;
    long dropped_rows = 0;  ///< measured-output rows dropped as infeasible in soft mode
    Vector predicted_outputs;  ///< Y = v + Gamma U for the optimal sequence
};

class Controller {
public:
    explicit Controller(ControllerConfig cfg) : cfg_(std::move(cfg)) { setup(); }

    const ControllerConfig& config() const { return cfg_; }
    const ControllerState& state() const { return state_; }
    const StepInfo& last_step() const { return info_; }
    const Matrix& G() const { return G_; }
    const Matrix& F() const { return F_; }
    const Matrix& Gamma() const { return gamma_; }
    const CondensedConstraints& constraints() const { return cons_; }
    Eigen::Index horizon() const { return N_; }
    Eigen::Index outputs() const { return q_; }
    Eigen::Index predicted_outputs() const { return qt_; }

    /// Unconstrained first-move feedback gain K with u = -K x for state-based variants.
    Matrix unconstrained_state_gain() const
    {
        if (!phi_) {
            throw InvalidInput("unconstrained_state_gain: variant has no state prediction matrix");
        }
        return linalg::solve_spd(G_, F_ * *phi_).topRows(m_);
    }

    void reset()
    {
        state_.past_u = Matrix::Zero(m_, N_);
        state_.past_y = Matrix::Zero(qt_, N_);
        state_.u_prev = Vector::Zero(m_);
        state_.x_prev.reset();
        state_.step = 0;
        solver_.reset();
    }

    /**
     * @brief Computes u(k).
     *
     * `preview` holds r(k), r(k+1), ..., r(k+N) as columns (plant outputs
     * only); extra columns are ignored and missing ones repeat the last.
     */
    Vector step(const Measurement& meas, const Matrix& preview)
    {
        const auto t0 = std::chrono::steady_clock::now();
        if (meas.y.size() != q_) {
            throw InvalidInput("Controller::step: measured output has wrong size");
        }
        const bool need_x = cfg_.variant != Variant::output_dpc || cfg_.output_augmentation.has_value();
        if (need_x && (!meas.x || meas.x->size() != n_state_)) {
            throw InvalidInput("Controller::step: this controller needs the measured state");
        }
        if (preview.rows() != q_ || preview.cols() < 1) {
            throw InvalidInput("Controller::step: reference preview has wrong shape");
        }
        Vector ya(qt_);
        ya.head(q_) = meas.y;
        if (cfg_.output_augmentation) {
            ya.tail(qt_ - q_) = *cfg_.output_augmentation * *meas.x;
        }
        // y buffer holds y(k-N+1) .. y(k).
        if (N_ > 1) {
            state_.past_y.leftCols(N_ - 1) = state_.past_y.rightCols(N_ - 1).eval();
        }
        state_.past_y.col(N_ - 1) = ya;

        const Vector v = free_response_now(meas, ya);
        Vector rk = Vector::Zero(N_ * qt_);
        for (Eigen::Index i = 1; i <= N_; ++i) {
            rk.segment((i - 1) * qt_, q_) = preview.col(std::min<Eigen::Index>(i, preview.cols() - 1));
        }

        QPProblem qp;
        qp.G = G_;
        qp.f = F_ * (v - rk);
        Vector rhs = cons_.c - cons_.Mcal * v - cons_.Dcal * ya;
        if (cfg_.integral && rhs.size()) {
            rhs -= cons_.Ecal * linalg::kron(Matrix::Ones(N_, 1), state_.u_prev);
        }
        info_ = StepInfo{};
        // Rows that cannot be influenced by U only constrain the measurement.
        std::vector<Eigen::Index> keep;
        for (Eigen::Index i = 0; i < rhs.size(); ++i) {
            if (!fixed_row_[static_cast<std::size_t>(i)]) {
                keep.push_back(i);
            } else if (rhs(i) < 0.0) {
                if (!cfg_.constraints.soft) {
                    throw ControllerError("constraint on the measured output is violated at step " +
                                              std::to_string(state_.step),
                                          state_.step);
                }
                ++info_.dropped_rows;
            }
        }
        qp.A = qp_A_;
        qp.b.resize(static_cast<Eigen::Index>(keep.size()) + soft_count_);
        for (std::size_t i = 0; i < keep.size(); ++i) {
            qp.b(static_cast<Eigen::Index>(i)) = rhs(keep[i]);
        }
        qp.b.tail(soft_count_).setZero();
        if (soft_count_) {
            qp.G = qp_G_;
            Vector f(qp_G_.rows());
            f.setZero();
            f.head(G_.rows()) = qp.f;
            qp.f = f;
        }

        const QPSolution sol = solver_.solve(qp, cfg_.qp);
        info_.status = sol.status;
        info_.iterations = sol.iterations;
        info_.kkt_residual = sol.kkt_residual;
        info_.kkt_ok = sol.status == QPStatus::optimal ? kkt_certified(qp, sol) : false;
        if (sol.status == QPStatus::infeasible) {
            throw ControllerError("QP infeasible at step " + std::to_string(state_.step), state_.step);
        }
        const Vector U = sol.primal.head(N_ * m_);
        info_.predicted_outputs = v + gamma_ * U;

        Vector u = U.head(m_);
        if (cfg_.integral) {
            const Vector du = u;
            u = state_.u_prev + du;
            push_u(du);
        } else {
            push_u(u);
        }
        state_.u_prev = u;
        if (meas.x) {
            state_.x_prev = *meas.x;
        }
        ++state_.step;
        info_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return u;
    }

private:
    void push_u(const Vector& u)
    {
        if (N_ > 1) {
            state_.past_u.leftCols(N_ - 1) = state_.past_u.rightCols(N_ - 1).eval();
        }
        state_.past_u.col(N_ - 1) = u;
    }

    Vector free_response_now(const Measurement& meas, const Vector& ya) const
    {
        switch (cfg_.variant) {
        case Variant::output_dpc:
            return free_response(*cfg_.predictor, state_.past_u, state_.past_y);
        case Variant::model_mpc:
        case Variant::state_dpc:
            break;
        }
        if (!cfg_.integral) {
            return *phi_ * *meas.x;
        }
        // Before the first sample the plant is taken to be at rest: dx(0) = 0.
        const Vector xprev = state_.x_prev.value_or(*meas.x);
        Vector xi(n_state_ + qt_);
        xi.head(n_state_) = *meas.x - xprev;
        xi.tail(qt_) = ya;
        return *phi_ * xi;
    }

    void setup()
    {
        const auto& w = cfg_.weights;
        N_ = w.N;
        if (N_ < 1) {
            throw InvalidInput("Controller: horizon must be >= 1");
        }
        switch (cfg_.variant) {
        case Variant::model_mpc: {
            if (!cfg_.model) {
                throw InvalidInput("Controller: model-mpc requires a plant model");
            }
            if (!cfg_.model->discrete()) {
                throw InvalidInput("Controller: model must be discrete");
            }
            StateSpaceModel mdl = *cfg_.model;
            q_ = mdl.q();
            if (cfg_.output_augmentation) {
                mdl = augment_terminal_output(mdl, *cfg_.output_augmentation);
            }
            m_ = mdl.m();
            qt_ = mdl.q();
            n_state_ = mdl.n();
            const Prediction p = cfg_.integral ? build_integral_prediction(mdl, N_) : build_prediction(mdl, N_);
            phi_ = p.Phi;
            gamma_ = p.Gamma;
            break;
        }
        case Variant::state_dpc:
        case Variant::output_dpc: {
            if (!cfg_.predictor) {
                throw InvalidInput("Controller: data-driven variants require an estimated predictor");
            }
            const auto& p = *cfg_.predictor;
            p.validate();
            if (p.integral != cfg_.integral) {
                throw InvalidInput("Controller: predictor integral flag does not match the controller");
            }
            if (p.N != N_) {
                throw InvalidInput("Controller: predictor horizon does not match the weights");
            }
            m_ = p.m;
            qt_ = p.q;
            q_ = cfg_.output_augmentation ? qt_ - cfg_.output_augmentation->rows() : qt_;
            gamma_ = p.Gamma;
            if (cfg_.variant == Variant::state_dpc) {
                if (!p.Phi) {
                    throw InvalidInput("Controller: state-dpc requires a state-based Phi estimate");
                }
                phi_ = *p.Phi;
                n_state_ = p.Phi->cols() - (cfg_.integral ? qt_ : 0);
            } else if (cfg_.output_augmentation) {
                n_state_ = cfg_.output_augmentation->cols();
            }
            break;
        }
        }
        if (cfg_.output_augmentation && cfg_.output_augmentation->cols() != n_state_) {
            throw InvalidInput("Controller: augmentation matrix does not match the state dimension");
        }
        if (w.Q.rows() != qt_ || w.R.rows() != m_) {
            throw InvalidInput("Controller: weight dimensions do not match the predictor");
        }

        std::tie(G_, F_) = condense_cost(gamma_, w);

        ConstraintSpec spec = pad_constraints(cfg_.constraints);
        if (!spec.stages.empty() && static_cast<Eigen::Index>(spec.stages.size()) != N_) {
            throw InvalidInput("Controller: constraint stage count differs from the horizon");
        }
        const std::optional<Matrix> map =
            cfg_.integral ? std::optional<Matrix>(cumulative_input_map(N_, m_)) : std::nullopt;
        cons_ = condense_constraints(spec, gamma_, qt_, m_, map);

        const Eigen::Index nc = cons_.Lmat.rows();
        fixed_row_.assign(static_cast<std::size_t>(nc), false);
        std::vector<Eigen::Index> kept, soft_rows;
        for (Eigen::Index i = 0; i < nc; ++i) {
            const bool fixed = cons_.Lmat.row(i).cwiseAbs().maxCoeff() == 0.0;
            fixed_row_[static_cast<std::size_t>(i)] = fixed;
            if (!fixed) {
                if (spec.soft && cons_.output_row[static_cast<std::size_t>(i)]) {
                    soft_rows.push_back(static_cast<Eigen::Index>(kept.size()));
                }
                kept.push_back(i);
            }
        }
        Matrix A(static_cast<Eigen::Index>(kept.size()), G_.cols());
        for (std::size_t i = 0; i < kept.size(); ++i) {
            A.row(static_cast<Eigen::Index>(i)) = cons_.Lmat.row(kept[i]);
        }
        soft_count_ = static_cast<Eigen::Index>(soft_rows.size());
        if (soft_count_) {
            QPProblem proto{G_, Vector::Zero(G_.rows()), A, Vector::Zero(A.rows())};
            const QPProblem soft = soften(proto, soft_rows, spec.rho);
            qp_G_ = soft.G;
            qp_A_ = soft.A;
        } else {
            qp_G_ = G_;
            qp_A_ = A;
        }
        reset();
    }

    ConstraintSpec pad_constraints(const ConstraintSpec& in) const
    {
        if (qt_ == q_) {
            return in;
        }
        ConstraintSpec out = in;
        auto pad = [&](const Matrix& M) {
            Matrix o = Matrix::Zero(M.rows(), qt_);
            if (M.rows()) o.leftCols(q_) = M;
            return o;
        };
        for (auto& s : out.stages) s.M = pad(s.M);
        out.terminal_M = pad(in.terminal_M);
        return out;
    }

    ControllerConfig cfg_;
    Eigen::Index N_ = 0, m_ = 0, q_ = 0, qt_ = 0, n_state_ = 0;
    std::optional<Matrix> phi_;
    Matrix gamma_;
    Matrix G_, F_;
    CondensedConstraints cons_;
    std::vector<bool> fixed_row_;
    Matrix qp_G_, qp_A_;
    Eigen::Index soft_count_ = 0;
    HildrethSolver solver_;
    ControllerState state_;
    StepInfo info_;
};

/// Closed-loop scenario: per-sample reference, disturbance and measurement noise.
struct Scenario {
    Matrix reference;    ///< q x T; previews past the end repeat the last column
    Matrix disturbance;  ///< d x T, or empty for none
    double noise_snr_db = std::numeric_limits<double>::infinity();
    std::uint64_t seed = 1;
    std::optional<Vector> x0;
    bool record_predictions = false;
};

struct SimulationResult {
    Vector t;
    Matrix r;
    Matrix y;        ///< measured (noisy)
    Matrix y_clean;
    Matrix u;
    Matrix d;
    Matrix x;
    std::vector<QPStatus> qp_status;
    std::vector<long> qp_iters;
    std::vector<double> step_seconds;
    std::vector<bool> kkt_ok;
    std::vector<Vector> predicted_outputs;  ///< when Scenario::record_predictions
    long dropped_rows = 0;
    double Ts = 0.0;

    Eigen::Index samples() const { return t.size(); }
};

/**
 * @brief Noise level for the closed loop.
 *
 * The output variance is unknown before the run, so the SNR is taken against
 * the variance of the reference each output channel is asked to follow.
 */
inline Vector closed_loop_noise_stddev(const Matrix& reference, double snr_db)
{
    Vector sd = Vector::Zero(reference.rows());
    if (std::isinf(snr_db) && snr_db > 0) {
        return sd;
    }
    const Vector var = row_variance(reference);
    for (Eigen::Index i = 0; i < var.size(); ++i) {
        if (!(var(i) > 0.0)) {
            throw InvalidInput("closed-loop noise: reference channel has zero variance, cannot scale noise");
        }
        sd(i) = noise_stddev_for_snr(var(i), snr_db);
    }
    return sd;
}

inline SimulationResult run_closed_loop(const StateSpaceModel& plant, const ControllerConfig& cfg,
                                        const Scenario& sc)
{
    plant.validate();
    if (!plant.discrete()) {
        throw InvalidInput("run_closed_loop: plant must be discrete");
    }
    const Eigen::Index T = sc.reference.cols();
    const Eigen::Index q = plant.q();
    if (sc.reference.rows() != q) {
        throw InvalidInput("run_closed_loop: reference must have one row per plant output");
    }
    const Matrix bd = plant.disturbance_matrix();
    const bool has_d = sc.disturbance.size() > 0;
    if (has_d && (sc.disturbance.rows() != bd.cols() || sc.disturbance.cols() != T)) {
        throw InvalidInput("run_closed_loop: disturbance has wrong shape");
    }
    Controller ctl(cfg);
    const Eigen::Index N = ctl.horizon();

    SimulationResult res;
    res.Ts = plant.Ts;
    res.t = Vector(T);
    res.r = sc.reference;
    res.y = Matrix(q, T);
    res.y_clean = Matrix(q, T);
    res.u = Matrix(plant.m(), T);
    res.d = has_d ? sc.disturbance : Matrix::Zero(bd.cols(), T);
    res.x = Matrix(plant.n(), T);
    if (T == 0) {
        return res;
    }
    const Matrix noise = white_noise(closed_loop_noise_stddev(sc.reference, sc.noise_snr_db), T, sc.seed);

    Vector x = sc.x0.value_or(Vector::Zero(plant.n()));
    Matrix preview(q, N + 1);
    for (Eigen::Index k = 0; k < T; ++k) {
        res.t(k) = static_cast<double>(k) * plant.Ts;
        res.x.col(k) = x;
        const Vector yc = plant.C * x;
        res.y_clean.col(k) = yc;
        res.y.col(k) = yc + noise.col(k);
        for (Eigen::Index i = 0; i <= N; ++i) {
            preview.col(i) = sc.reference.col(std::min(k + i, T - 1));
        }
        const Vector u = ctl.step(Measurement{res.y.col(k), x}, preview);
        const StepInfo& info = ctl.last_step();
        res.u.col(k) = u;
        res.qp_status.push_back(info.status);
        res.qp_iters.push_back(info.iterations);
        res.step_seconds.push_back(info.seconds);
        res.kkt_ok.push_back(info.kkt_ok);
        res.dropped_rows += info.dropped_rows;
        if (sc.record_predictions) {
            res.predicted_outputs.push_back(info.predicted_outputs);
        }
        Vector next = plant.A * x + plant.B * u;
        if (bd.cols() > 0) {
            next += bd * res.d.col(k);
        }
        x = std::move(next);
    }
    return res;
}

struct MetricsSpec {
    double window_start = 0.0;  ///< seconds, inclusive
    double window_end = std::numeric_limits<double>::infinity();  ///< seconds, exclusive
    double fundamental_hz = 0.0;  ///< 0 disables THD
    int thd_periods = 10;         ///< THD over the last whole periods before window_end
    int max_harmonic = 25;
};

struct Metrics {
    double offset = 0.0;  ///< mean |r - y_clean| over the window
    double bias = 0.0;    ///< |mean(r - y_clean)| over the window
    double rmse = 0.0;
    double thd = std::numeric_limits<double>::quiet_NaN();
    double mean_qp_iters = 0.0;
    double mean_step_seconds = 0.0;
    double max_abs_u = 0.0;
    long non_optimal_steps = 0;
};

/// Amplitude of the component at `freq` in a window holding whole periods of it.
inline double harmonic_amplitude(const Vector& y, double Ts, double freq)
{
    double a = 0.0, b = 0.0;
    for (Eigen::Index k = 0; k < y.size(); ++k) {
        const double ph = 2.0 * std::numbers::pi * freq * static_cast<double>(k) * Ts;
        a += y(k) * std::cos(ph);
        b += y(k) * std::sin(ph);
    }
    const double n = static_cast<double>(y.size());
    return 2.0 * std::hypot(a, b) / n;
}

/// RMS of harmonics 2..max_harmonic over RMS of the fundamental.
inline double total_harmonic_distortion(const Vector& y, double Ts, double fundamental_hz, int max_harmonic = 25)
{
    const double samples_per_period = 1.0 / (fundamental_hz * Ts);
    if (!(fundamental_hz > 0.0) || static_cast<double>(y.size()) < samples_per_period - 1e-9) {
        throw InvalidWindow("THD: window shorter than one fundamental period");
    }
    const double fund = harmonic_amplitude(y, Ts, fundamental_hz);
    double harm = 0.0;
    for (int h = 2; h <= max_harmonic; ++h) {
        const double ah = harmonic_amplitude(y, Ts, h * fundamental_hz);
        harm += ah * ah;
    }
    return std::sqrt(harm) / fund;
}

inline Metrics compute_metrics(const SimulationResult& res, const MetricsSpec& spec)
{
    Metrics mt;
    const Eigen::Index T = res.samples();
    if (T == 0) {
        return mt;
    }
    Eigen::Index k0 = T, k1 = 0;
    for (Eigen::Index k = 0; k < T; ++k) {
        if (res.t(k) >= spec.window_start - 1e-12 && res.t(k) < spec.window_end - 1e-12) {
            k0 = std::min(k0, k);
            k1 = std::max(k1, k + 1);
        }
    }
    if (k0 >= k1) {
        throw InvalidWindow("metrics: window contains no samples");
    }
    const Matrix err = res.r.middleCols(k0, k1 - k0) - res.y_clean.middleCols(k0, k1 - k0);
    const double cnt = static_cast<double>(err.size());
    mt.offset = err.cwiseAbs().sum() / cnt;
    mt.bias = std::abs(err.sum() / cnt);
    mt.rmse = std::sqrt(err.squaredNorm() / cnt);
    if (spec.fundamental_hz > 0.0) {
        const double spp = 1.0 / (spec.fundamental_hz * res.Ts);
        const auto len = static_cast<Eigen::Index>(std::llround(spp * spec.thd_periods));
        if (len > k1 - k0 || len < static_cast<Eigen::Index>(std::floor(spp))) {
            throw InvalidWindow("metrics: window too short for the requested THD periods");
        }
        const Vector seg = res.y_clean.row(0).segment(k1 - len, len).transpose();
        mt.thd = total_harmonic_distortion(seg, res.Ts, spec.fundamental_hz, spec.max_harmonic);
    }
    double iters = 0.0, secs = 0.0;
    for (Eigen::Index k = 0; k < T; ++k) {
        iters += static_cast<double>(res.qp_iters[static_cast<std::size_t>(k)]);
        secs += res.step_seconds[static_cast<std::size_t>(k)];
        if (res.qp_status[static_cast<std::size_t>(k)] != QPStatus::optimal) ++mt.non_optimal_steps;
    }
    mt.mean_qp_iters = iters / static_cast<double>(T);
    mt.mean_step_seconds = secs / static_cast<double>(T);
    mt.max_abs_u = res.u.size() ? res.u.cwiseAbs().maxCoeff() : 0.0;
    return mt;
}

namespace io {

inline void write_result_csv(std::ostream& os, const SimulationResult& res)
{
    auto names = [](const char* base, Eigen::Index rows) {
        std::string s;
        for (Eigen::Index i = 0; i < rows; ++i) {
            s += ",";
            s += base;
            if (rows > 1) s += std::to_string(i + 1);
        }
        return s;
    };
    os << "t" << names("r", res.r.rows()) << names("y", res.y.rows()) << names("y_clean", res.y_clean.rows())
       << names("u", res.u.rows()) << names("d", res.d.rows()) << ",qp_status,qp_iters\n";
    for (Eigen::Index k = 0; k < res.samples(); ++k) {
        os << format_double(res.t(k));
        for (const Matrix* m : {&res.r, &res.y, &res.y_clean, &res.u, &res.d}) {
            for (Eigen::Index i = 0; i < m->rows(); ++i) os << ',' << format_double((*m)(i, k));
        }
        os << ',' << to_string(res.qp_status[static_cast<std::size_t>(k)]) << ','
           << res.qp_iters[static_cast<std::size_t>(k)] << '\n';
    }
}

inline void write_metrics(std::ostream& os, const Metrics& m)
{
    os << "offset=" << format_double(m.offset) << '\n'
       << "bias=" << format_double(m.bias) << '\n'
       << "rmse=" << format_double(m.rmse) << '\n'
       << "thd=" << format_double(m.thd) << '\n'
       << "mean_qp_iters=" << format_double(m.mean_qp_iters) << '\n'
       << "mean_step_seconds=" << format_double(m.mean_step_seconds) << '\n'
       << "max_abs_u=" << format_double(m.max_abs_u) << '\n'
       << "non_optimal_steps=" << m.non_optimal_steps << '\n';
}

}  // namespace io
}  // namespace ddpc
