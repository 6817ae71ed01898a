#pragma once

/**
 * @brief Hankel data matrices and least-squares estimation of prediction matrices.
 *
 * Column j of the Hankel matrices holds
 *   Up: u(j) .. u(j+N-1)          Yp: y(j+1) .. y(j+N)
 *   Uf: u(N+j) .. u(2N+j-1)       Yf: y(N+j+1) .. y(2N+j)
 *   Xp: x(j)                      Xf: x(N+j)
 * for j = 0 .. L, so that Yp = Phi Xp + Gamma Up and Yf = Phi Xf + Gamma Uf.
 */

#include <ddpc/error.hpp>
#include <ddpc/linalg.hpp>
#include <ddpc/simsys.hpp>

#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

namespace ddpc {

struct HankelSet {
    Matrix Up;
    Matrix Yp;
    Matrix Uf;
    Matrix Yf;
    std::optional<Matrix> Xp;
    std::optional<Matrix> Xf;
    Eigen::Index N = 0;
    Eigen::Index L = 0;

    /// Regression matrix W = [Up; Yp; Uf].
    Matrix regressor() const
    {
        Matrix w(Up.rows() + Yp.rows() + Uf.rows(), Up.cols());
        w << Up, Yp, Uf;
        return w;
    }
};

/**
 * @brief Estimated predictor: Yf ~ P1 Up + P2 Yp + Gamma Uf.
 *
 * With integral == true the matrices describe the rate-based system whose
 * input is the increment du(k) = u(k) - u(k-1) and whose state is
 * [x(k) - x(k-1); y(k)].
 */
struct PredictorMatrices {
    Matrix P1;                  ///< (N q) x (N m)
    Matrix P2;                  ///< (N q) x (N q)
    Matrix Gamma;               ///< (N q) x (N m)
    std::optional<Matrix> Phi;  ///< (N q) x n, state-based estimate
    Eigen::Index N = 0;
    Eigen::Index m = 0;
    Eigen::Index q = 0;
    bool integral = false;

    void validate() const
    {
        const Eigen::Index nq = N * q;
        const Eigen::Index nm = N * m;
        if (N < 1 || m < 1 || q < 1) {
            throw InvalidInput("PredictorMatrices: N, m, q must be positive");
        }
        if (P1.rows() != nq || P1.cols() != nm || P2.rows() != nq || P2.cols() != nq ||
            Gamma.rows() != nq || Gamma.cols() != nm) {
            throw InvalidInput("PredictorMatrices: block shapes inconsistent with N, m, q");
        }
        if (Phi && Phi->rows() != nq) {
            throw InvalidInput("PredictorMatrices: Phi has wrong row count");
        }
    }
};

namespace detail {

/// (N rows) x cols block-Hankel matrix; column j stacks s(start+j) .. s(start+j+N-1).
inline Matrix block_hankel(const Matrix& s, Eigen::Index start, Eigen::Index N, Eigen::Index cols)
{
    const Eigen::Index r = s.rows();
    Matrix h(N * r, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < N; ++i) {
            h.block(i * r, j, r, 1) = s.col(start + j + i);
        }
    }
    return h;
}

}  // namespace detail

/// Minimum number of samples needed by build_hankels() for horizons N, L.
inline Eigen::Index required_samples(Eigen::Index N, Eigen::Index L)
{
    return 2 * N + L + 1;
}

/// Smallest measurement horizon for which W can have full row rank.
inline Eigen::Index required_measurement_horizon(Eigen::Index N, Eigen::Index m, Eigen::Index q)
{
    return N * (2 * m + q);
}

inline HankelSet build_hankels(const ExperimentData& data, Eigen::Index N, Eigen::Index L,
                               bool include_states)
{
    data.validate();
    if (N < 1) {
        throw SizingError("build_hankels: horizon N must be >= 1");
    }
    const Eigen::Index m = data.U.rows();
    const Eigen::Index q = data.Y.rows();
    const Eigen::Index Lmin = required_measurement_horizon(N, m, q);
    if (L < Lmin) {
        throw SizingError("build_hankels: measurement horizon L=" + std::to_string(L) +
                          " is below the minimum N(2m+q)=" + std::to_string(Lmin));
    }
    const Eigen::Index Tmin = required_samples(N, L);
    if (data.samples() < Tmin) {
        throw SizingError("build_hankels: " + std::to_string(data.samples()) +
                          " samples given, at least 2N+L+1=" + std::to_string(Tmin) + " required");
    }
    if (include_states && !data.X) {
        throw StateRequiredError("build_hankels: state trajectory requested but not recorded");
    }
    HankelSet h;
    h.N = N;
    h.L = L;
    const Eigen::Index cols = L + 1;
    h.Up = detail::block_hankel(data.U, 0, N, cols);
    h.Yp = detail::block_hankel(data.Y, 1, N, cols);
    h.Uf = detail::block_hankel(data.U, N, N, cols);
    h.Yf = detail::block_hankel(data.Y, N + 1, N, cols);
    if (include_states) {
        h.Xp = data.X->middleCols(0, cols);
        h.Xf = data.X->middleCols(N, cols);
    }
    return h;
}

/// Conditioning of the regression, reported by the CLI.
struct RegressionDiagnostics {
    double w_sigma_max = 0.0;
    double w_sigma_min = 0.0;
    Eigen::Index w_rank = 0;
    Eigen::Index w_rows = 0;
    double input_sigma_ratio = 0.0;  ///< sigma_min / sigma_max of [Up; Uf]
};

inline RegressionDiagnostics diagnose(const HankelSet& h)
{
    RegressionDiagnostics d;
    const Matrix w = h.regressor();
    const Vector s = linalg::singular_values(w);
    d.w_rows = w.rows();
    d.w_sigma_max = s(0);
    d.w_sigma_min = s(s.size() - 1);
    d.w_rank = linalg::rank(w);
    Matrix uu(h.Up.rows() + h.Uf.rows(), h.Up.cols());
    uu << h.Up, h.Uf;
    const Vector su = linalg::singular_values(uu);
    d.input_sigma_ratio = su(0) > 0.0 ? su(su.size() - 1) / su(0) : 0.0;
    return d;
}

struct EstimationOptions {
    /// Below this sigma_min / sigma_max of the stacked inputs the data is not exciting.
    double excitation_threshold = 1e-10;
    /// Report poor excitation through `warning` instead of throwing.
    bool permissive = false;
    std::optional<double> pinv_tolerance;
    std::string* warning = nullptr;
};

inline void check_excitation(const HankelSet& h, const EstimationOptions& opt)
{
    Matrix uu(h.Up.rows() + h.Uf.rows(), h.Up.cols());
    uu << h.Up, h.Uf;
    const Vector s = linalg::singular_values(uu);
    const double ratio = s(0) > 0.0 ? s(s.size() - 1) / s(0) : 0.0;
    if (ratio < opt.excitation_threshold) {
        const std::string msg = "input data is not persistently exciting: sigma_min/sigma_max of [Up; Uf] = " +
                                std::to_string(ratio) + " (use a richer excitation signal or a longer experiment)";
        if (!opt.permissive) {
            throw ExcitationError(msg);
        }
        if (opt.warning) {
            *opt.warning = msg;
        }
    }
}

/// Least-squares [P1 P2 Gamma] = Yf W^+ .
inline PredictorMatrices estimate_predictor(const HankelSet& h, const EstimationOptions& opt = {})
{
    check_excitation(h, opt);
    const Eigen::Index N = h.N;
    const Eigen::Index m = h.Up.rows() / N;
    const Eigen::Index q = h.Yp.rows() / N;
    const Matrix theta = h.Yf * linalg::pinv(h.regressor(), opt.pinv_tolerance);
    PredictorMatrices p;
    p.N = N;
    p.m = m;
    p.q = q;
    p.P1 = theta.leftCols(N * m);
    p.P2 = theta.middleCols(N * m, N * q);
    p.Gamma = theta.rightCols(N * m);
    return p;
}

/// Projects Gamma onto block-lower-triangular Toeplitz matrices.
inline PredictorMatrices enforce_gamma_structure(const PredictorMatrices& p)
{
    p.validate();
    PredictorMatrices out = p;
    const Eigen::Index N = p.N, q = p.q, m = p.m;
    for (Eigen::Index off = 0; off < N; ++off) {
        Matrix mean = Matrix::Zero(q, m);
        for (Eigen::Index j = 0; j + off < N; ++j) {
            mean += p.Gamma.block((j + off) * q, j * m, q, m);
        }
        mean /= static_cast<double>(N - off);
        for (Eigen::Index j = 0; j + off < N; ++j) {
            out.Gamma.block((j + off) * q, j * m, q, m) = mean;
        }
    }
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index j = i + 1; j < N; ++j) {
            out.Gamma.block(i * q, j * m, q, m).setZero();
        }
    }
    return out;
}

namespace detail {

inline void require_full_row_rank(const Matrix& m, const char* what)
{
    if (m.rows() > m.cols() || linalg::rank(m) < m.rows()) {
        throw ExcitationError(std::string(what) + ": state data is rank deficient");
    }
}

}  // namespace detail

/// Phi = (Yp - Gamma_hat Up) Xp^+ .
inline Matrix estimate_phi_residual(const HankelSet& h, const Matrix& gamma_hat)
{
    if (!h.Xp) {
        throw StateRequiredError("estimate_phi_residual: Hankel set has no state data");
    }
    if (gamma_hat.rows() != h.Yp.rows() || gamma_hat.cols() != h.Up.rows()) {
        throw InvalidInput("estimate_phi_residual: Gamma has wrong shape");
    }
    detail::require_full_row_rank(*h.Xp, "estimate_phi_residual");
    return (h.Yp - gamma_hat * h.Up) * linalg::pinv(*h.Xp);
}

/// Explicit projector I - Up^T (Up Up^T)^-1 Up onto the orthogonal complement of row(Up).
inline Matrix orthogonal_projector(const Matrix& Up)
{
    const Matrix gram = Up * Up.transpose();
    Eigen::LLT<Matrix> llt(gram);
    if (llt.info() != Eigen::Success) {
        throw ExcitationError("orthogonal_projector: Up Up^T is singular");
    }
    return Matrix::Identity(Up.cols(), Up.cols()) - Up.transpose() * llt.solve(Up);
}

namespace detail {

/// M * (I - Up^T (Up Up^T)^-1 Up) without forming the (L+1)^2 projector.
inline Matrix project_out_rows(const Matrix& M, const Matrix& Up, const Eigen::LLT<Matrix>& gram)
{
    return M - (gram.solve(Up * M.transpose())).transpose() * Up;
}

}  // namespace detail

/// Phi = (Yp Upo)(Xp Upo)^+ with Upo the orthogonal-complement projector of row(Up).
inline Matrix estimate_phi_orthogonal(const HankelSet& h)
{
    if (!h.Xp) {
        throw StateRequiredError("estimate_phi_orthogonal: Hankel set has no state data");
    }
    const Matrix gram = h.Up * h.Up.transpose();
    Eigen::LLT<Matrix> llt(gram);
    const Vector s = linalg::singular_values(gram);
    if (llt.info() != Eigen::Success || s(s.size() - 1) <= 1e-12 * s(0)) {
        throw ExcitationError("estimate_phi_orthogonal: Up Up^T is singular");
    }
    const Matrix yo = detail::project_out_rows(h.Yp, h.Up, llt);
    const Matrix xo = detail::project_out_rows(*h.Xp, h.Up, llt);
    detail::require_full_row_rank(xo, "estimate_phi_orthogonal");
    return yo * linalg::pinv(xo);
}

/**
 * @brief Free response Phi x(k) from the last N inputs and outputs.
 *
 * past_u holds u(k-N) .. u(k-1) as columns (increments for an integral
 * predictor), past_y holds y(k-N+1) .. y(k).
 */
inline Vector free_response(const PredictorMatrices& p, const Matrix& past_u, const Matrix& past_y)
{
    if (past_u.rows() != p.m || past_u.cols() != p.N || past_y.rows() != p.q || past_y.cols() != p.N) {
        throw InvalidInput("free_response: buffers must hold exactly N samples of each signal");
    }
    return p.P1 * linalg::vec(past_u) + p.P2 * linalg::vec(past_y);
}

enum class IntegralMode { summed, differenced };

/**
 * @brief Running sum or first difference along time (columns).
 *
 * Both assume a zero sample before the first one, which makes them an exact
 * inverse pair.
 */
inline Matrix integral_input_transform(const Matrix& U, IntegralMode mode)
{
    if (U.cols() == 0) {
        throw InvalidInput("integral_input_transform: empty input");
    }
    Matrix out(U.rows(), U.cols());
    out.col(0) = U.col(0);
    for (Eigen::Index k = 1; k < U.cols(); ++k) {
        out.col(k) = mode == IntegralMode::summed ? Vector(out.col(k - 1) + U.col(k))
                                                  : Vector(U.col(k) - U.col(k - 1));
    }
    return out;
}

/// Rate-based state [x(k) - x(k-1); y(k)] with x(-1) = 0.
inline Matrix integral_state_trajectory(const Matrix& X, const Matrix& Y)
{
    if (X.cols() != Y.cols()) {
        throw InvalidInput("integral_state_trajectory: X and Y differ in length");
    }
    Matrix xi(X.rows() + Y.rows(), X.cols());
    xi.topRows(X.rows()) = integral_input_transform(X, IntegralMode::differenced);
    xi.bottomRows(Y.rows()) = Y;
    return xi;
}

/**
 * @brief Data set whose Hankel matrices give the rate-based predictor.
 *
 * data.U is always the input that was applied to the plant. In summed mode
 * the experiment was driven by the running sum of a designed sequence U,
 * which is recovered by differencing; in differenced mode the experiment was
 * driven by U directly and the Hankel input is its first difference. Both
 * paths reduce to (diff(applied input), y). States, when present, are
 * replaced by the rate-based state.
 */
inline ExperimentData integral_data(const ExperimentData& data)
{
    data.validate();
    ExperimentData out;
    out.Ts = data.Ts;
    out.U = integral_input_transform(data.U, IntegralMode::differenced);
    out.Y = data.Y;
    if (data.X) {
        out.X = integral_state_trajectory(*data.X, data.Y);
    }
    return out;
}

inline PredictorMatrices estimate_integral_predictor(const ExperimentData& data, Eigen::Index N, Eigen::Index L,
                                                     IntegralMode /*mode*/, const EstimationOptions& opt = {})
{
    const ExperimentData d = integral_data(data);
    const HankelSet h = build_hankels(d, N, L, d.X.has_value());
    PredictorMatrices p = estimate_predictor(h, opt);
    if (h.Xp) {
        p.Phi = estimate_phi_residual(h, p.Gamma);
    }
    p.integral = true;
    return p;
}

namespace io {

inline void write_matrix_block(std::ostream& os, const std::string& name, const Matrix& m)
{
    os << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) os << ' ';
            os << format_double(m(i, j));
        }
        os << '\n';
    }
}

inline std::pair<std::string, Matrix> read_matrix_block(std::istream& is)
{
    std::string line;
    while (std::getline(is, line) && line.empty()) {
    }
    if (!is && line.empty()) {
        throw InvalidInput("matrix block: unexpected end of file");
    }
    std::istringstream hs(line);
    std::string name;
    long rows = -1, cols = -1;
    if (!(hs >> name >> rows >> cols) || rows < 0 || cols < 0) {
        throw InvalidInput("matrix block: bad name line '" + line + "'");
    }
    Matrix m(rows, cols);
    for (long i = 0; i < rows; ++i) {
        if (!std::getline(is, line)) {
            throw InvalidInput("matrix block " + name + ": truncated");
        }
        std::istringstream rs(line);
        for (long j = 0; j < cols; ++j) {
            std::string tok;
            if (!(rs >> tok)) {
                throw InvalidInput("matrix block " + name + ": row " + std::to_string(i) + " too short");
            }
            m(i, j) = parse_double(tok, "matrix block " + name);
        }
    }
    return {name, m};
}

inline void write_predictor(std::ostream& os, const PredictorMatrices& p)
{
    p.validate();
    os << "ddpc-predictor v1 N=" << p.N << " m=" << p.m << " q=" << p.q << " integral=" << (p.integral ? 1 : 0)
       << '\n';
    write_matrix_block(os, "P1", p.P1);
    write_matrix_block(os, "P2", p.P2);
    write_matrix_block(os, "Gamma", p.Gamma);
    if (p.Phi) {
        write_matrix_block(os, "Phi", *p.Phi);
    }
}

inline PredictorMatrices read_predictor(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line)) {
        throw InvalidInput("predictor file: empty");
    }
    PredictorMatrices p;
    int integral = -1;
    if (std::sscanf(line.c_str(), "ddpc-predictor v1 N=%ld m=%ld q=%ld integral=%d", &p.N, &p.m, &p.q,
                    &integral) != 4 ||
        (integral != 0 && integral != 1)) {
        throw InvalidInput("predictor file: bad header '" + line + "'");
    }
    p.integral = integral == 1;
    bool have[3] = {false, false, false};
    while (is.peek() != std::char_traits<char>::eof()) {
        auto pos = is.tellg();
        std::string probe;
        if (!std::getline(is, probe)) break;
        if (probe.empty()) continue;
        is.clear();
        is.seekg(pos);
        auto [name, m] = read_matrix_block(is);
        if (name == "P1") { p.P1 = m; have[0] = true; }
        else if (name == "P2") { p.P2 = m; have[1] = true; }
        else if (name == "Gamma") { p.Gamma = m; have[2] = true; }
        else if (name == "Phi") { p.Phi = m; }
        else throw InvalidInput("predictor file: unknown block '" + name + "'");
    }
    if (!have[0] || !have[1] || !have[2]) {
        throw InvalidInput("predictor file: P1, P2 and Gamma are required");
    }
    p.validate();
    return p;
}

inline void save_predictor(const std::string& path, const PredictorMatrices& p)
{
    std::ofstream os(path);
    if (!os) throw InvalidInput("cannot open '" + path + "' for writing");
    write_predictor(os, p);
}

inline PredictorMatrices load_predictor(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw InvalidInput("cannot open '" + path + "'");
    return read_predictor(is);
}

}  // namespace io
}  // namespace ddpc
