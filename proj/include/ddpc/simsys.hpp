#pragma once

/**
 * @brief Plant models, excitation signals and open-loop simulation.
 */

#include <ddpc/error.hpp>
#include <ddpc/linalg.hpp>

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace ddpc {

/**
 * @brief Linear time-invariant plant x+ = A x + B u + Bd d, y = C x.
 *
 * Ts == 0 marks a continuous-time model (x' = A x + B u + Bd d).
 */
struct StateSpaceModel {
    Matrix A;
    Matrix B;
    Matrix C;
    Matrix Bd;  ///< disturbance input, n x d (d may be zero)
    double Ts = 0.0;

    Eigen::Index n() const { return A.rows(); }
    Eigen::Index m() const { return B.cols(); }
    Eigen::Index q() const { return C.rows(); }
    Eigen::Index d() const { return Bd.cols(); }
    bool discrete() const { return Ts > 0.0; }

    void validate() const
    {
        if (A.rows() != A.cols()) {
            throw InvalidInput("StateSpaceModel: A must be square");
        }
        if (B.rows() != A.rows()) {
            throw InvalidInput("StateSpaceModel: rows(B) != rows(A)");
        }
        if (C.cols() != A.cols()) {
            throw InvalidInput("StateSpaceModel: cols(C) != cols(A)");
        }
        if (Bd.rows() != A.rows() && !(Bd.size() == 0)) {
            throw InvalidInput("StateSpaceModel: rows(Bd) != rows(A)");
        }
        if (!(Ts >= 0.0) || !std::isfinite(Ts)) {
            throw InvalidInput("StateSpaceModel: Ts must be finite and >= 0");
        }
        linalg::require_finite(A, "StateSpaceModel A");
        linalg::require_finite(B, "StateSpaceModel B");
        linalg::require_finite(C, "StateSpaceModel C");
        linalg::require_finite(Bd, "StateSpaceModel Bd");
    }

    /// Bd with its row count fixed up when the model has no disturbance channel.
    Matrix disturbance_matrix() const
    {
        return Bd.size() == 0 ? Matrix::Zero(n(), 0) : Bd;
    }
};

/// Exact zero-order-hold discretization of (A, [B Bd]).
inline StateSpaceModel discretize_zoh(const StateSpaceModel& model, double Ts)
{
    model.validate();
    if (model.discrete()) {
        throw InvalidInput("discretize_zoh: model is already discrete");
    }
    if (!(Ts > 0.0) || !std::isfinite(Ts)) {
        throw InvalidInput("discretize_zoh: Ts must be positive");
    }
    const Eigen::Index n = model.n();
    const Eigen::Index m = model.m();
    const Matrix bd = model.disturbance_matrix();
    const Eigen::Index d = bd.cols();

    // [A  B  Bd]        [Ad  B_d  Bd_d]
    // [0  0  0 ] * Ts -> [0   I    0   ]
    // [0  0  0 ]        [0   0    I   ]
    Matrix aug = Matrix::Zero(n + m + d, n + m + d);
    aug.block(0, 0, n, n) = model.A;
    aug.block(0, n, n, m) = model.B;
    aug.block(0, n + m, n, d) = bd;
    const Matrix phi = (aug * Ts).exp();

    StateSpaceModel out;
    out.A = phi.block(0, 0, n, n);
    out.B = phi.block(0, n, n, m);
    out.Bd = phi.block(0, n + m, n, d);
    out.C = model.C;
    out.Ts = Ts;
    return out;
}

enum class SignalKind { prbs, step_sequence, sinusoid, multisine, constant, zero };

inline const char* to_string(SignalKind k)
{
    switch (k) {
    case SignalKind::prbs: return "prbs";
    case SignalKind::step_sequence: return "steps";
    case SignalKind::sinusoid: return "sinusoid";
    case SignalKind::multisine: return "multisine";
    case SignalKind::constant: return "constant";
    case SignalKind::zero: return "zero";
    }
    return "?";
}

/**
 * @brief Description of a scalar test/reference/disturbance signal.
 *
 * Only the fields relevant to `kind` are read:
 *  - prbs: amplitude, hold, prbs_order, seed
 *  - step_sequence: steps (switch time in seconds, level)
 *  - sinusoid: amplitude * cos(2 pi frequency t + phase)
 *  - multisine: either explicit frequencies/phases, or `components` drawn
 *    uniformly in [fmin, fmax) with uniform phases; scaled so the peak of the
 *    generated samples equals amplitude
 *  - constant: amplitude
 */
struct SignalSpec {
    SignalKind kind = SignalKind::zero;
    double amplitude = 0.0;
    std::size_t length = 1;
    std::size_t hold = 1;
    int prbs_order = 15;
    double frequency = 0.0;
    double phase = 0.0;
    std::vector<double> frequencies;
    std::vector<double> phases;
    std::size_t components = 0;
    double fmin = 0.0;
    double fmax = 0.0;
    std::vector<std::pair<double, double>> steps;
    std::uint64_t seed = 1;
};

/**
 * @brief Maximal-length Fibonacci LFSR.
 *
 * The register is seeded from an arbitrary 64-bit value mapped onto the
 * non-zero states, so every seed yields a shifted copy of the same m-sequence.
 */
class Lfsr {
public:
    Lfsr(int order, std::uint64_t seed) : order_(order)
    {
        if (order < 2 || order > 32) {
            throw InvalidInput("Lfsr: order must be in [2, 32]");
        }
        taps_ = tap_mask(order);
        const std::uint64_t period = (std::uint64_t{1} << order) - 1;
        state_ = seed % period + 1;
    }

    /// Next output bit.
    bool next()
    {
        const bool out = state_ & 1u;
        const std::uint64_t fb = static_cast<std::uint64_t>(__builtin_popcountll(state_ & taps_) & 1);
        state_ = (state_ >> 1) | (fb << (order_ - 1));
        return out;
    }

    std::uint64_t period() const { return (std::uint64_t{1} << order_) - 1; }

private:
    // Feedback taps of primitive polynomials (Xilinx XAPP052 table), bit (k-1)
    // of the mask set for tap k, in the right-shifting convention.
    static std::uint64_t tap_mask(int order)
    {
        static const std::vector<std::vector<int>> taps = {
            {}, {}, {2, 1}, {3, 2}, {4, 3}, {5, 3}, {6, 5}, {7, 6}, {8, 6, 5, 4},
            {9, 5}, {10, 7}, {11, 9}, {12, 6, 4, 1}, {13, 4, 3, 1}, {14, 5, 3, 1},
            {15, 14}, {16, 15, 13, 4}, {17, 14}, {18, 11}, {19, 6, 2, 1}, {20, 17},
            {21, 19}, {22, 21}, {23, 18}, {24, 23, 22, 17}, {25, 22}, {26, 6, 2, 1},
            {27, 5, 2, 1}, {28, 25}, {29, 27}, {30, 6, 4, 1}, {31, 28}, {32, 22, 2, 1},
        };
        std::uint64_t mask = 0;
        for (int t : taps[static_cast<std::size_t>(order)]) {
            mask |= std::uint64_t{1} << (order - t);
        }
        return mask;
    }

    int order_;
    std::uint64_t taps_ = 0;
    std::uint64_t state_ = 1;
};

inline void validate(const SignalSpec& spec, double Ts)
{
    if (spec.length < 1) {
        throw InvalidInput("SignalSpec: length must be >= 1");
    }
    if (spec.hold < 1) {
        throw InvalidInput("SignalSpec: hold must be >= 1");
    }
    if (!std::isfinite(spec.amplitude)) {
        throw InvalidInput("SignalSpec: amplitude must be finite");
    }
    if (spec.kind == SignalKind::multisine) {
        const double nyquist = 1.0 / (2.0 * Ts);
        for (double f : spec.frequencies) {
            if (!(f >= 0.0 && f < nyquist)) {
                throw InvalidInput("SignalSpec: multisine frequency must lie below Nyquist");
            }
        }
        if (spec.frequencies.empty()) {
            if (spec.components == 0) {
                throw InvalidInput("SignalSpec: multisine needs frequencies or a component count");
            }
            if (!(spec.fmin >= 0.0 && spec.fmin < spec.fmax)) {
                throw InvalidInput("SignalSpec: multisine band needs 0 <= fmin < fmax");
            }
            if (!(spec.fmin < nyquist)) {
                throw InvalidInput("SignalSpec: multisine band starts above Nyquist");
            }
        }
        if (!spec.phases.empty() && spec.phases.size() != spec.frequencies.size()) {
            throw InvalidInput("SignalSpec: phases and frequencies differ in length");
        }
    }
}

/**
 * @brief Multisine components actually used by generate_signal().
 *
 * A random band reaching past Nyquist is cut back to just below Nyquist
 * before drawing, since the discrete plant only sees sampled values.
 */
inline std::vector<std::pair<double, double>> multisine_components(const SignalSpec& spec, double Ts)
{
    std::vector<std::pair<double, double>> out;
    if (!spec.frequencies.empty()) {
        std::mt19937_64 rng(spec.seed);
        std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < spec.frequencies.size(); ++i) {
            out.emplace_back(spec.frequencies[i], spec.phases.empty() ? ph(rng) : spec.phases[i]);
        }
        return out;
    }
    const double nyquist = 1.0 / (2.0 * Ts);
    const double hi = std::min(spec.fmax, nyquist * (1.0 - 1e-9));
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> fr(spec.fmin, hi);
    std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < spec.components; ++i) {
        const double f = fr(rng);
        out.emplace_back(f, ph(rng));
    }
    return out;
}

/// Samples the signal at t = k * Ts for k = 0 .. length-1.
inline Vector generate_signal(const SignalSpec& spec, double Ts)
{
    if (!(Ts > 0.0)) {
        throw InvalidInput("generate_signal: Ts must be positive");
    }
    validate(spec, Ts);
    const auto len = static_cast<Eigen::Index>(spec.length);
    Vector out = Vector::Zero(len);
    switch (spec.kind) {
    case SignalKind::zero:
        break;
    case SignalKind::constant:
        out.setConstant(spec.amplitude);
        break;
    case SignalKind::prbs: {
        Lfsr lfsr(spec.prbs_order, spec.seed);
        double level = 0.0;
        for (Eigen::Index k = 0; k < len; ++k) {
            if (k % static_cast<Eigen::Index>(spec.hold) == 0) {
                level = lfsr.next() ? spec.amplitude : -spec.amplitude;
            }
            out(k) = level;
        }
        break;
    }
    case SignalKind::step_sequence: {
        auto steps = spec.steps;
        std::stable_sort(steps.begin(), steps.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        for (Eigen::Index k = 0; k < len; ++k) {
            const double t = static_cast<double>(k) * Ts;
            double v = 0.0;
            for (const auto& [ts, level] : steps) {
                // Half-sample slack so switch times on the grid are not lost to rounding.
                if (ts <= t + 0.5 * Ts) {
                    v = level;
                }
            }
            out(k) = v;
        }
        break;
    }
    case SignalKind::sinusoid:
        for (Eigen::Index k = 0; k < len; ++k) {
            const double t = static_cast<double>(k) * Ts;
            out(k) = spec.amplitude * std::cos(2.0 * std::numbers::pi * spec.frequency * t + spec.phase);
        }
        break;
    case SignalKind::multisine: {
        const auto comps = multisine_components(spec, Ts);
        for (Eigen::Index k = 0; k < len; ++k) {
            const double t = static_cast<double>(k) * Ts;
            double s = 0.0;
            for (const auto& [f, ph] : comps) {
                s += std::sin(2.0 * std::numbers::pi * f * t + ph);
            }
            out(k) = s;
        }
        const double peak = out.cwiseAbs().maxCoeff();
        if (peak > 0.0) {
            out *= spec.amplitude / peak;
        }
        break;
    }
    }
    return out;
}

/// Recorded trajectories of one experiment; columns are samples.
struct ExperimentData {
    Matrix U;                 ///< m x T applied inputs
    Matrix Y;                 ///< q x T measured outputs
    std::optional<Matrix> X;  ///< n x T states, when measured
    double Ts = 0.0;

    Eigen::Index samples() const { return U.cols(); }

    void validate() const
    {
        if (Y.cols() != U.cols() || (X && X->cols() != U.cols())) {
            throw InvalidInput("ExperimentData: trajectories differ in length");
        }
        linalg::require_finite(U, "ExperimentData U");
        linalg::require_finite(Y, "ExperimentData Y");
        if (X) {
            linalg::require_finite(*X, "ExperimentData X");
        }
    }
};

/**
 * @brief Open-loop simulation.
 *
 * y(k) = C x(k) is recorded before u(k) is applied, then
 * x(k+1) = A x(k) + B u(k) + Bd d(k).
 */
inline ExperimentData simulate(const StateSpaceModel& model, const Matrix& U,
                               const std::optional<Matrix>& D = std::nullopt,
                               const std::optional<Vector>& x0 = std::nullopt)
{
    model.validate();
    if (!model.discrete()) {
        throw InvalidInput("simulate: model must be discrete");
    }
    if (U.rows() != model.m()) {
        throw InvalidInput("simulate: input has wrong row count");
    }
    const Matrix bd = model.disturbance_matrix();
    if (D && (D->rows() != bd.cols() || D->cols() != U.cols())) {
        throw InvalidInput("simulate: disturbance has wrong shape");
    }
    if (x0 && x0->size() != model.n()) {
        throw InvalidInput("simulate: initial state has wrong size");
    }
    const Eigen::Index T = U.cols();
    ExperimentData out;
    out.Ts = model.Ts;
    out.U = U;
    out.Y.resize(model.q(), T);
    out.X = Matrix(model.n(), T);
    Vector x = x0.value_or(Vector::Zero(model.n()));
    for (Eigen::Index k = 0; k < T; ++k) {
        out.X->col(k) = x;
        out.Y.col(k) = model.C * x;
        Vector next = model.A * x + model.B * U.col(k);
        if (D && bd.cols() > 0) {
            next += bd * D->col(k);
        }
        x = std::move(next);
    }
    return out;
}

/// Zero-mean Gaussian white noise, rows x T, with per-row standard deviation.
inline Matrix white_noise(const Vector& stddev, Eigen::Index T, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    Matrix out(stddev.size(), T);
    for (Eigen::Index k = 0; k < T; ++k) {
        for (Eigen::Index i = 0; i < stddev.size(); ++i) {
            out(i, k) = stddev(i) * nd(rng);
        }
    }
    return out;
}

/// Noise standard deviation giving 10 log10(signal_var / noise_var) = snr_db.
inline double noise_stddev_for_snr(double signal_variance, double snr_db)
{
    return std::sqrt(signal_variance / std::pow(10.0, snr_db / 10.0));
}

/// Per-row sample variance.
inline Vector row_variance(const Matrix& y)
{
    Vector v(y.rows());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const double mean = y.row(i).mean();
        v(i) = (y.row(i).array() - mean).square().sum() / static_cast<double>(std::max<Eigen::Index>(y.cols() - 1, 1));
    }
    return v;
}

/**
 * @brief Adds white noise so each output channel reaches the requested SNR.
 *
 * snr_db = +inf disables noise. Deterministic in `seed`.
 */
inline Matrix add_output_noise(const Matrix& Y, double snr_db, std::uint64_t seed)
{
    linalg::require_finite(Y, "add_output_noise");
    if (std::isinf(snr_db) && snr_db > 0) {
        return Y;
    }
    if (std::isnan(snr_db)) {
        throw InvalidInput("add_output_noise: snr_db is NaN");
    }
    const Vector var = row_variance(Y);
    if (Y.cols() < 2 || (var.array() <= 0.0).any()) {
        throw InvalidInput("add_output_noise: output channel has zero variance, cannot scale noise");
    }
    Vector sd(var.size());
    for (Eigen::Index i = 0; i < var.size(); ++i) {
        sd(i) = noise_stddev_for_snr(var(i), snr_db);
    }
    return Y + white_noise(sd, Y.cols(), seed);
}

namespace io {

inline std::string format_double(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// CSV with header t,u1..um,y1..yq[,x1..xn]; one row per sample.
inline void write_csv(std::ostream& os, const ExperimentData& data)
{
    data.validate();
    os << "t";
    for (Eigen::Index i = 0; i < data.U.rows(); ++i) os << ",u" << i + 1;
    for (Eigen::Index i = 0; i < data.Y.rows(); ++i) os << ",y" << i + 1;
    if (data.X) {
        for (Eigen::Index i = 0; i < data.X->rows(); ++i) os << ",x" << i + 1;
    }
    os << '\n';
    for (Eigen::Index k = 0; k < data.samples(); ++k) {
        os << format_double(static_cast<double>(k) * data.Ts);
        for (Eigen::Index i = 0; i < data.U.rows(); ++i) os << ',' << format_double(data.U(i, k));
        for (Eigen::Index i = 0; i < data.Y.rows(); ++i) os << ',' << format_double(data.Y(i, k));
        if (data.X) {
            for (Eigen::Index i = 0; i < data.X->rows(); ++i) os << ',' << format_double((*data.X)(i, k));
        }
        os << '\n';
    }
}

inline std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) {
        out.push_back(cur);
    }
    if (!s.empty() && s.back() == sep) {
        out.emplace_back();
    }
    return out;
}

inline double parse_double(const std::string& s, const std::string& context)
{
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) {
            throw InvalidInput(context + ": trailing characters in number '" + s + "'");
        }
        return v;
    } catch (const std::logic_error&) {
        throw InvalidInput(context + ": not a number '" + s + "'");
    }
}

inline ExperimentData read_csv(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line)) {
        throw InvalidInput("experiment csv: empty file");
    }
    const auto header = split(line, ',');
    if (header.empty() || header[0] != "t") {
        throw InvalidInput("experiment csv: header must start with 't'");
    }
    Eigen::Index m = 0, q = 0, n = 0;
    for (std::size_t i = 1; i < header.size(); ++i) {
        const char c = header[i].empty() ? '?' : header[i][0];
        if (c == 'u') ++m;
        else if (c == 'y') ++q;
        else if (c == 'x') ++n;
        else throw InvalidInput("experiment csv: unknown column '" + header[i] + "'");
    }
    std::vector<std::vector<double>> rows;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split(line, ',');
        if (cells.size() != header.size()) {
            throw InvalidInput("experiment csv: line " + std::to_string(lineno) + " has wrong column count");
        }
        std::vector<double> r;
        r.reserve(cells.size());
        for (const auto& c : cells) {
            r.push_back(parse_double(c, "experiment csv line " + std::to_string(lineno)));
        }
        rows.push_back(std::move(r));
    }
    const auto T = static_cast<Eigen::Index>(rows.size());
    ExperimentData d;
    d.U.resize(m, T);
    d.Y.resize(q, T);
    if (n > 0) d.X = Matrix(n, T);
    for (Eigen::Index k = 0; k < T; ++k) {
        const auto& r = rows[static_cast<std::size_t>(k)];
        for (Eigen::Index i = 0; i < m; ++i) d.U(i, k) = r[static_cast<std::size_t>(1 + i)];
        for (Eigen::Index i = 0; i < q; ++i) d.Y(i, k) = r[static_cast<std::size_t>(1 + m + i)];
        for (Eigen::Index i = 0; i < n; ++i) (*d.X)(i, k) = r[static_cast<std::size_t>(1 + m + q + i)];
    }
    d.Ts = T >= 2 ? rows[1][0] - rows[0][0] : 0.0;
    return d;
}

inline void save_csv(const std::string& path, const ExperimentData& data)
{
    std::ofstream os(path);
    if (!os) throw InvalidInput("cannot open '" + path + "' for writing");
    write_csv(os, data);
}

inline ExperimentData load_csv(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw InvalidInput("cannot open '" + path + "'");
    return read_csv(is);
}

}  // namespace io
}  // namespace ddpc
