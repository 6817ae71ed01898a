#pragma once

/**
 * @brief Scenario configuration (INI-like text), presets and the
 * collect / estimate / run / compare pipeline behind the command-line tool.
 *
 * Grammar:
 *   line    := blank | comment | section | entry
 *   comment := ('#' | ';') any          (only as the first non-blank character)
 *   section := '[' name ']'
 *   entry   := key '=' value            (surrounding blanks are trimmed)
 * Matrices are written row by row, rows separated by ';' and entries by
 * blanks or ','. Vectors and lists use blanks or ','. Booleans are
 * true/false. Unknown sections or keys, duplicate keys and malformed values
 * are errors naming the section and key.
 */

#include <ddpc/controller.hpp>
#include <ddpc/error.hpp>
#include <ddpc/estimation.hpp>
#include <ddpc/linalg.hpp>
#include <ddpc/mpc.hpp>
#include <ddpc/qp.hpp>
#include <ddpc/simsys.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace ddpc {

enum class EstimationMode { plain, integral_summed, integral_differenced };
enum class PhiMethod { residual, orthogonal };

inline const char* to_string(EstimationMode m)
{
    switch (m) {
    case EstimationMode::plain: return "plain";
    case EstimationMode::integral_summed: return "integral-summed";
    case EstimationMode::integral_differenced: return "integral-differenced";
    }
    return "?";
}

inline const char* to_string(PhiMethod m)
{
    return m == PhiMethod::residual ? "residual" : "orthogonal";
}

inline bool is_integral(EstimationMode m) { return m != EstimationMode::plain; }

struct PlantSection {
    std::string preset = "custom";
    StateSpaceModel model;  ///< continuous unless `continuous` is false
    bool continuous = true;
    double Ts = 0.0;
};

struct ExperimentSection {
    SignalSpec signal;  ///< one copy per input channel, channel i seeded with seed + i
    double snr_db = std::numeric_limits<double>::infinity();
    std::uint64_t seed = 1;
};

struct EstimationSection {
    Eigen::Index N = 10;
    Eigen::Index L = 0;
    EstimationMode mode = EstimationMode::plain;
    bool enforce_structure = false;
    PhiMethod phi_method = PhiMethod::residual;
};

struct ControllerSection {
    std::vector<Variant> variants{Variant::output_dpc};  ///< run uses the first
    bool integral = false;
    Matrix Q;
    Matrix R;
    std::optional<Matrix> P;
    /// Terminal penalty from the DARE via the output augmentation y_a = [y; V x].
    bool dare_terminal = false;
    Vector umin, umax, ymin, ymax;
    bool soft = false;
    double rho = 1e6;
    long qp_max_iter = 0;
    double qp_tol = 1e-9;
    bool warm_start = true;
};

struct RunSection {
    double duration = 0.0;
    SignalSpec reference;    ///< same signal on every output
    SignalSpec disturbance;  ///< same signal on every disturbance channel
    double noise_snr_db = std::numeric_limits<double>::infinity();
    std::uint64_t seed = 1;
    std::optional<Vector> x0;
    double window_start = 0.0;
    double window_end = std::numeric_limits<double>::infinity();
    double fundamental_hz = 0.0;
    int thd_periods = 10;
};

struct ScenarioConfig {
    PlantSection plant;
    ExperimentSection experiment;
    EstimationSection estimation;
    ControllerSection controller;
    RunSection run;
    std::set<std::string> sections;  ///< sections present in the source text
};

namespace config_detail {

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> tokens(const std::string& s)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ' ' || c == '\t' || c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

struct Entry {
    std::string section;
    std::string key;
    std::string value;
    int line = 0;

    [[noreturn]] void fail(const std::string& msg) const
    {
        throw ConfigError(section, key, "line " + std::to_string(line) + ": " + msg);
    }

    double number() const
    {
        const std::string v = trim(value);
        if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
        if (v == "-inf") return -std::numeric_limits<double>::infinity();
        std::size_t pos = 0;
        double d = 0.0;
        try {
            d = std::stod(v, &pos);
        } catch (const std::exception&) {
            fail("expected a number, got '" + v + "'");
        }
        if (pos != v.size() || std::isnan(d)) fail("expected a number, got '" + v + "'");
        return d;
    }

    double finite() const
    {
        const double d = number();
        if (!std::isfinite(d)) fail("value must be finite");
        return d;
    }

    double positive() const
    {
        const double d = finite();
        if (!(d > 0.0)) fail("value must be positive");
        return d;
    }

    std::int64_t integer(std::int64_t lo) const
    {
        const std::string v = trim(value);
        std::size_t pos = 0;
        long long i = 0;
        try {
            i = std::stoll(v, &pos);
        } catch (const std::exception&) {
            fail("expected an integer, got '" + v + "'");
        }
        if (pos != v.size()) fail("expected an integer, got '" + v + "'");
        if (i < lo) fail("value must be >= " + std::to_string(lo));
        return i;
    }

    std::uint64_t u64() const
    {
        const std::string v = trim(value);
        std::size_t pos = 0;
        unsigned long long i = 0;
        try {
            if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
            i = std::stoull(v, &pos);
        } catch (const std::exception&) {
            fail("expected an unsigned integer, got '" + v + "'");
        }
        if (pos != v.size()) fail("expected an unsigned integer, got '" + v + "'");
        return i;
    }

    bool boolean() const
    {
        const std::string v = trim(value);
        if (v == "true") return true;
        if (v == "false") return false;
        fail("expected true or false, got '" + v + "'");
    }

    std::vector<double> list() const
    {
        std::vector<double> out;
        for (const auto& t : tokens(value)) {
            Entry e = *this;
            e.value = t;
            out.push_back(e.finite());
        }
        return out;
    }

    Vector vector() const
    {
        const auto l = list();
        return Eigen::Map<const Vector>(l.data(), static_cast<Eigen::Index>(l.size()));
    }

    Matrix matrix() const
    {
        std::vector<std::vector<double>> rows;
        std::stringstream ss(value);
        std::string row;
        while (std::getline(ss, row, ';')) {
            Entry e = *this;
            e.value = row;
            rows.push_back(e.list());
        }
        if (rows.empty() || rows[0].empty()) fail("empty matrix");
        for (const auto& r : rows) {
            if (r.size() != rows[0].size()) fail("matrix rows differ in length");
        }
        Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t j = 0; j < rows[i].size(); ++j) {
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
            }
        }
        return m;
    }

    /// "t:level, t:level, ..."
    std::vector<std::pair<double, double>> steps() const
    {
        std::vector<std::pair<double, double>> out;
        for (const auto& t : tokens(value)) {
            const auto c = t.find(':');
            if (c == std::string::npos) fail("step '" + t + "' must be time:level");
            Entry a = *this, b = *this;
            a.value = t.substr(0, c);
            b.value = t.substr(c + 1);
            out.emplace_back(a.finite(), b.finite());
        }
        return out;
    }
};

inline std::string fmt(double v)
{
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return io::format_double(v);
}

inline std::string fmt(const Vector& v)
{
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) s += ' ';
        s += fmt(v(i));
    }
    return s;
}

inline std::string fmt(const std::vector<double>& v)
{
    return fmt(Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()))));
}

inline std::string fmt(const Matrix& m)
{
    std::string s;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (i) s += "; ";
        s += fmt(Vector(m.row(i).transpose()));
    }
    return s;
}

inline const char* fmt(bool b) { return b ? "true" : "false"; }

inline std::optional<SignalKind> signal_kind(const std::string& s)
{
    for (auto k : {SignalKind::prbs, SignalKind::step_sequence, SignalKind::sinusoid, SignalKind::multisine,
                   SignalKind::constant, SignalKind::zero}) {
        if (s == to_string(k)) return k;
    }
    return std::nullopt;
}

inline std::optional<Variant> variant(const std::string& s)
{
    for (auto v : {Variant::model_mpc, Variant::state_dpc, Variant::output_dpc}) {
        if (s == to_string(v)) return v;
    }
    return std::nullopt;
}

/// Applies one signal field; returns false for keys that are not signal fields.
inline bool apply_signal_key(SignalSpec& s, const std::string& field, const Entry& e, bool with_length)
{
    if (field == "kind") {
        const auto k = signal_kind(trim(e.value));
        if (!k) e.fail("unknown signal kind '" + trim(e.value) + "'");
        s.kind = *k;
    } else if (field == "amplitude") {
        s.amplitude = e.finite();
    } else if (with_length && field == "length") {
        s.length = static_cast<std::size_t>(e.integer(1));
    } else if (field == "hold") {
        s.hold = static_cast<std::size_t>(e.integer(1));
    } else if (field == "prbs_order") {
        const auto o = e.integer(2);
        if (o > 32) e.fail("prbs_order must be in [2, 32]");
        s.prbs_order = static_cast<int>(o);
    } else if (field == "frequency") {
        s.frequency = e.finite();
    } else if (field == "phase") {
        s.phase = e.finite();
    } else if (field == "frequencies") {
        s.frequencies = e.list();
    } else if (field == "phases") {
        s.phases = e.list();
    } else if (field == "components") {
        s.components = static_cast<std::size_t>(e.integer(0));
    } else if (field == "fmin") {
        s.fmin = e.finite();
    } else if (field == "fmax") {
        s.fmax = e.finite();
    } else if (field == "steps") {
        s.steps = e.steps();
    } else if (field == "seed") {
        s.seed = e.u64();
    } else {
        return false;
    }
    return true;
}

inline void write_signal(std::ostream& os, const std::string& prefix, const SignalSpec& s, bool with_length,
                         bool with_seed)
{
    os << prefix << "kind = " << to_string(s.kind) << '\n';
    os << prefix << "amplitude = " << fmt(s.amplitude) << '\n';
    if (with_length) os << prefix << "length = " << s.length << '\n';
    os << prefix << "hold = " << s.hold << '\n';
    os << prefix << "prbs_order = " << s.prbs_order << '\n';
    os << prefix << "frequency = " << fmt(s.frequency) << '\n';
    os << prefix << "phase = " << fmt(s.phase) << '\n';
    if (!s.frequencies.empty()) os << prefix << "frequencies = " << fmt(s.frequencies) << '\n';
    if (!s.phases.empty()) os << prefix << "phases = " << fmt(s.phases) << '\n';
    os << prefix << "components = " << s.components << '\n';
    os << prefix << "fmin = " << fmt(s.fmin) << '\n';
    os << prefix << "fmax = " << fmt(s.fmax) << '\n';
    if (!s.steps.empty()) {
        os << prefix << "steps =";
        for (std::size_t i = 0; i < s.steps.size(); ++i) {
            os << (i ? ", " : " ") << fmt(s.steps[i].first) << ':' << fmt(s.steps[i].second);
        }
        os << '\n';
    }
    if (with_seed) os << prefix << "seed = " << s.seed << '\n';
}

}  // namespace config_detail

/// Linear motor position loop: plant, excitation, weights and disturbance scenario.
inline ScenarioConfig linear_motor_preset()
{
    ScenarioConfig c;
    c.plant.preset = "linear-motor";
    c.plant.model.A = (Matrix(2, 2) << 0.0, 1.0, 0.0, -50.0).finished();
    c.plant.model.B = (Matrix(2, 1) << 0.0, 0.5).finished();
    c.plant.model.Bd = (Matrix(2, 1) << 0.0, 0.5).finished();
    c.plant.model.C = (Matrix(1, 2) << 1.0, 0.0).finished();
    c.plant.continuous = true;
    c.plant.Ts = 0.02;

    c.experiment.signal.kind = SignalKind::prbs;
    c.experiment.signal.amplitude = 20.0;
    c.experiment.signal.length = 6022;
    c.experiment.snr_db = 26.0;
    c.experiment.seed = 1;

    c.estimation.N = 10;
    c.estimation.L = 3000;

    c.controller.variants = {Variant::model_mpc, Variant::state_dpc, Variant::output_dpc};
    c.controller.Q = Matrix::Constant(1, 1, 6e5);
    c.controller.R = Matrix::Constant(1, 1, 0.005);
    c.controller.umin = Vector::Constant(1, -500.0);
    c.controller.umax = Vector::Constant(1, 500.0);
    c.controller.ymin = Vector::Constant(1, -0.165);
    c.controller.ymax = Vector::Constant(1, 0.165);

    c.run.duration = 8.0;
    c.run.reference.kind = SignalKind::step_sequence;
    c.run.reference.steps = {{0.2, 0.1}, {1.5, -0.1}, {2.5, 0.05}, {6.5, 0.0}};
    c.run.disturbance.kind = SignalKind::step_sequence;
    c.run.disturbance.steps = {{3.0, -100.0}, {5.0, 0.0}};
    c.run.noise_snr_db = 25.0;
    c.run.seed = 1;
    c.run.window_start = 4.5;
    c.run.window_end = 5.0;
    c.sections = {"plant", "experiment", "estimation", "controller", "run"};
    return c;
}

/// Single-phase UPS output stage: voltage tracking under a periodic load current.
inline ScenarioConfig ups_preset()
{
    ScenarioConfig c;
    c.plant.preset = "ups";
    c.plant.model.A = (Matrix(2, 2) << -15.0, -1000.0, 1.0 / 3e-4, -506.46).finished();
    c.plant.model.B = (Matrix(2, 1) << 1000.0, 0.0).finished();
    c.plant.model.Bd = (Matrix(2, 1) << 0.0, -1.0 / 3e-4).finished();
    // The controlled output is the capacitor voltage.
    c.plant.model.C = (Matrix(1, 2) << 0.0, 1.0).finished();
    c.plant.continuous = true;
    c.plant.Ts = 1.0 / 15000.0;

    c.experiment.signal.kind = SignalKind::prbs;
    c.experiment.signal.amplitude = 104.0;
    c.experiment.signal.length = 7500;
    c.experiment.snr_db = 28.0;
    c.experiment.seed = 1;

    c.estimation.N = 15;
    c.estimation.L = 3000;
    c.estimation.mode = EstimationMode::integral_differenced;

    c.controller.variants = {Variant::output_dpc};
    c.controller.integral = true;
    c.controller.Q = Matrix::Constant(1, 1, 200.0);
    c.controller.R = Matrix::Constant(1, 1, 50.0);
    c.controller.umin = Vector::Constant(1, -260.0);
    c.controller.umax = Vector::Constant(1, 260.0);

    c.run.duration = 0.5;
    c.run.reference.kind = SignalKind::sinusoid;
    c.run.reference.amplitude = 127.0 * std::numbers::sqrt2;
    c.run.reference.frequency = 60.0;
    c.run.disturbance.kind = SignalKind::multisine;
    c.run.disturbance.amplitude = 20.0;
    c.run.disturbance.components = 12;
    c.run.disturbance.fmin = 2000.0;
    c.run.disturbance.fmax = 12000.0;
    c.run.disturbance.seed = 1;
    c.run.noise_snr_db = 36.0;
    c.run.seed = 1;
    c.run.fundamental_hz = 60.0;
    c.run.thd_periods = 10;
    c.sections = {"plant", "experiment", "estimation", "controller", "run"};
    return c;
}

inline ScenarioConfig preset(const std::string& name)
{
    if (name == "linear-motor") return linear_motor_preset();
    if (name == "ups") return ups_preset();
    throw ConfigError("plant", "preset", "unknown preset '" + name + "' (expected linear-motor or ups)");
}

inline ScenarioConfig parse_config(std::istream& is)
{
    using config_detail::Entry;
    using config_detail::trim;
    static const std::set<std::string> known{"plant", "experiment", "estimation", "controller", "run"};

    std::vector<Entry> entries;
    std::set<std::string> present;
    std::set<std::pair<std::string, std::string>> seen;
    std::string section, line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ConfigError(t, "", "line " + std::to_string(lineno) + ": malformed section header");
            }
            section = trim(t.substr(1, t.size() - 2));
            if (!known.count(section)) {
                throw ConfigError(section, "", "line " + std::to_string(lineno) + ": unknown section");
            }
            present.insert(section);
            continue;
        }
        const auto eq = t.find('=');
        const std::string key = trim(t.substr(0, eq));
        if (eq == std::string::npos || key.empty()) {
            throw ConfigError(section, key, "line " + std::to_string(lineno) + ": expected key = value");
        }
        if (section.empty()) {
            throw ConfigError("", key, "line " + std::to_string(lineno) + ": entry outside any section");
        }
        if (!seen.insert({section, key}).second) {
            throw ConfigError(section, key, "line " + std::to_string(lineno) + ": duplicate key");
        }
        entries.push_back(Entry{section, key, trim(t.substr(eq + 1)), lineno});
    }

    ScenarioConfig c;
    for (const auto& e : entries) {
        if (e.section == "plant" && e.key == "preset") {
            const std::string name = trim(e.value);
            if (name != "custom") {
                try {
                    c = preset(name);
                } catch (const ConfigError&) {
                    e.fail("unknown preset '" + name + "' (expected linear-motor, ups or custom)");
                }
            }
            c.plant.preset = name;
        }
    }
    c.sections.insert(present.begin(), present.end());

    for (const auto& e : entries) {
        const std::string& k = e.key;
        if (e.section == "plant") {
            auto& p = c.plant;
            if (k == "preset") continue;
            if (k == "A") p.model.A = e.matrix();
            else if (k == "B") p.model.B = e.matrix();
            else if (k == "C") p.model.C = e.matrix();
            else if (k == "Bd") p.model.Bd = e.matrix();
            else if (k == "Ts") p.Ts = e.positive();
            else if (k == "continuous") p.continuous = e.boolean();
            else e.fail("unknown key");
        } else if (e.section == "experiment") {
            auto& x = c.experiment;
            if (k == "snr_db") {
                x.snr_db = e.number();
                if (x.snr_db == -std::numeric_limits<double>::infinity()) e.fail("snr_db must be > -inf");
            } else if (k == "seed") {
                x.seed = e.u64();
            } else if (k.rfind("signal.", 0) != 0 || k == "signal.seed" ||
                       !config_detail::apply_signal_key(x.signal, k.substr(7), e, true)) {
                e.fail("unknown key");
            }
        } else if (e.section == "estimation") {
            auto& s = c.estimation;
            if (k == "N") s.N = e.integer(1);
            else if (k == "L") s.L = e.integer(0);
            else if (k == "mode") {
                const std::string v = trim(e.value);
                if (v == "plain") s.mode = EstimationMode::plain;
                else if (v == "integral-summed") s.mode = EstimationMode::integral_summed;
                else if (v == "integral-differenced") s.mode = EstimationMode::integral_differenced;
                else e.fail("unknown mode '" + v + "' (expected plain, integral-summed or integral-differenced)");
            } else if (k == "enforce_structure") s.enforce_structure = e.boolean();
            else if (k == "phi_method") {
                const std::string v = trim(e.value);
                if (v == "residual") s.phi_method = PhiMethod::residual;
                else if (v == "orthogonal") s.phi_method = PhiMethod::orthogonal;
                else e.fail("unknown phi_method '" + v + "' (expected residual or orthogonal)");
            } else e.fail("unknown key");
        } else if (e.section == "controller") {
            auto& s = c.controller;
            if (k == "variants") {
                s.variants.clear();
                for (const auto& t : config_detail::tokens(e.value)) {
                    const auto v = config_detail::variant(t);
                    if (!v) e.fail("unknown variant '" + t + "' (expected model-mpc, state-dpc or output-dpc)");
                    s.variants.push_back(*v);
                }
                if (s.variants.empty()) e.fail("at least one variant is required");
            } else if (k == "integral") s.integral = e.boolean();
            else if (k == "Q") s.Q = e.matrix();
            else if (k == "R") s.R = e.matrix();
            else if (k == "P") s.P = e.matrix();
            else if (k == "dare_terminal") s.dare_terminal = e.boolean();
            else if (k == "umin") s.umin = e.vector();
            else if (k == "umax") s.umax = e.vector();
            else if (k == "ymin") s.ymin = e.vector();
            else if (k == "ymax") s.ymax = e.vector();
            else if (k == "soft") s.soft = e.boolean();
            else if (k == "rho") s.rho = e.positive();
            else if (k == "qp_max_iter") s.qp_max_iter = static_cast<long>(e.integer(0));
            else if (k == "qp_tol") s.qp_tol = e.positive();
            else if (k == "warm_start") s.warm_start = e.boolean();
            else e.fail("unknown key");
        } else if (e.section == "run") {
            auto& s = c.run;
            if (k == "duration") {
                s.duration = e.finite();
                if (s.duration < 0.0) e.fail("duration must be >= 0");
            } else if (k == "noise_snr_db") {
                s.noise_snr_db = e.number();
                if (s.noise_snr_db == -std::numeric_limits<double>::infinity()) e.fail("noise_snr_db must be > -inf");
            } else if (k == "seed") s.seed = e.u64();
            else if (k == "x0") s.x0 = e.vector();
            else if (k == "window_start") s.window_start = e.finite();
            else if (k == "window_end") s.window_end = e.number();
            else if (k == "fundamental_hz") s.fundamental_hz = e.finite();
            else if (k == "thd_periods") s.thd_periods = static_cast<int>(e.integer(1));
            else if (k.rfind("reference.", 0) == 0) {
                if (!config_detail::apply_signal_key(s.reference, k.substr(10), e, false)) e.fail("unknown key");
            } else if (k.rfind("disturbance.", 0) == 0) {
                if (!config_detail::apply_signal_key(s.disturbance, k.substr(12), e, false)) e.fail("unknown key");
            } else e.fail("unknown key");
        }
    }
    return c;
}

inline ScenarioConfig parse_config(const std::string& text)
{
    std::istringstream is(text);
    return parse_config(is);
}

inline ScenarioConfig load_config(const std::string& path)
{
    std::ifstream f(path);
    if (!f) {
        throw InvalidInput("cannot open config file '" + path + "'");
    }
    return parse_config(f);
}

/// Canonical text of every present section; parse_config(serialize_config(c)) reproduces c.
inline std::string serialize_config(const ScenarioConfig& c)
{
    using config_detail::fmt;
    std::ostringstream os;
    auto has = [&](const char* s) { return c.sections.count(s) > 0; };
    if (has("plant") || c.plant.preset != "custom") {
        const auto& p = c.plant;
        os << "[plant]\n";
        os << "preset = " << p.preset << '\n';
        if (p.model.A.size()) os << "A = " << fmt(p.model.A) << '\n';
        if (p.model.B.size()) os << "B = " << fmt(p.model.B) << '\n';
        if (p.model.C.size()) os << "C = " << fmt(p.model.C) << '\n';
        if (p.model.Bd.size()) os << "Bd = " << fmt(p.model.Bd) << '\n';
        os << "Ts = " << fmt(p.Ts) << '\n';
        os << "continuous = " << fmt(p.continuous) << "\n\n";
    }
    if (has("experiment")) {
        const auto& x = c.experiment;
        os << "[experiment]\n";
        config_detail::write_signal(os, "signal.", x.signal, true, false);
        os << "snr_db = " << fmt(x.snr_db) << '\n';
        os << "seed = " << x.seed << "\n\n";
    }
    if (has("estimation")) {
        const auto& s = c.estimation;
        os << "[estimation]\n";
        os << "N = " << s.N << '\n';
        os << "L = " << s.L << '\n';
        os << "mode = " << to_string(s.mode) << '\n';
        os << "enforce_structure = " << fmt(s.enforce_structure) << '\n';
        os << "phi_method = " << to_string(s.phi_method) << "\n\n";
    }
    if (has("controller")) {
        const auto& s = c.controller;
        os << "[controller]\n";
        os << "variants =";
        for (std::size_t i = 0; i < s.variants.size(); ++i) os << (i ? ", " : " ") << to_string(s.variants[i]);
        os << '\n';
        os << "integral = " << fmt(s.integral) << '\n';
        if (s.Q.size()) os << "Q = " << fmt(s.Q) << '\n';
        if (s.R.size()) os << "R = " << fmt(s.R) << '\n';
        if (s.P) os << "P = " << fmt(*s.P) << '\n';
        os << "dare_terminal = " << fmt(s.dare_terminal) << '\n';
        if (s.umin.size()) os << "umin = " << fmt(s.umin) << '\n';
        if (s.umax.size()) os << "umax = " << fmt(s.umax) << '\n';
        if (s.ymin.size()) os << "ymin = " << fmt(s.ymin) << '\n';
        if (s.ymax.size()) os << "ymax = " << fmt(s.ymax) << '\n';
        os << "soft = " << fmt(s.soft) << '\n';
        os << "rho = " << fmt(s.rho) << '\n';
        os << "qp_max_iter = " << s.qp_max_iter << '\n';
        os << "qp_tol = " << fmt(s.qp_tol) << '\n';
        os << "warm_start = " << fmt(s.warm_start) << "\n\n";
    }
    if (has("run")) {
        const auto& s = c.run;
        os << "[run]\n";
        os << "duration = " << fmt(s.duration) << '\n';
        config_detail::write_signal(os, "reference.", s.reference, false, true);
        config_detail::write_signal(os, "disturbance.", s.disturbance, false, true);
        os << "noise_snr_db = " << fmt(s.noise_snr_db) << '\n';
        os << "seed = " << s.seed << '\n';
        if (s.x0) os << "x0 = " << fmt(*s.x0) << '\n';
        os << "window_start = " << fmt(s.window_start) << '\n';
        os << "window_end = " << fmt(s.window_end) << '\n';
        os << "fundamental_hz = " << fmt(s.fundamental_hz) << '\n';
        os << "thd_periods = " << s.thd_periods << '\n';
    }
    return os.str();
}

enum class Command { collect, estimate, run, compare };

/// Checks that the sections a command reads are present and mutually consistent.
inline void validate_config(const ScenarioConfig& c, Command cmd)
{
    auto require = [&](const char* s) {
        if (!c.sections.count(s)) {
            throw ConfigError(s, "", "section is required for this command");
        }
    };
    require("plant");
    const auto& m = c.plant.model;
    if (m.A.size() == 0 || m.B.size() == 0 || m.C.size() == 0) {
        throw ConfigError("plant", m.A.size() == 0 ? "A" : (m.B.size() == 0 ? "B" : "C"), "matrix is required");
    }
    if (!(c.plant.Ts > 0.0)) {
        throw ConfigError("plant", "Ts", "sampling time is required and must be positive");
    }
    try {
        StateSpaceModel mm = m;
        mm.Ts = c.plant.continuous ? 0.0 : c.plant.Ts;
        mm.validate();
    } catch (const InvalidInput& ex) {
        throw ConfigError("plant", "A", ex.what());
    }
    if (cmd == Command::collect || cmd == Command::compare) {
        require("experiment");
        try {
            validate(c.experiment.signal, c.plant.Ts);
        } catch (const InvalidInput& ex) {
            throw ConfigError("experiment", "signal.kind", ex.what());
        }
    }
    if (cmd != Command::collect) {
        require("estimation");
    }
    if (cmd == Command::run || cmd == Command::compare) {
        require("controller");
        require("run");
        const auto& s = c.controller;
        if (s.Q.rows() != m.C.rows() || s.Q.cols() != m.C.rows()) {
            throw ConfigError("controller", "Q", "must be q x q for the plant outputs");
        }
        if (s.R.rows() != m.B.cols() || s.R.cols() != m.B.cols()) {
            throw ConfigError("controller", "R", "must be m x m for the plant inputs");
        }
        if (s.P && (s.P->rows() != m.C.rows() || s.P->cols() != m.C.rows())) {
            throw ConfigError("controller", "P", "must be q x q for the plant outputs");
        }
        if (s.dare_terminal && s.P) {
            throw ConfigError("controller", "dare_terminal", "cannot be combined with an explicit P");
        }
        if (s.dare_terminal && s.integral) {
            throw ConfigError("controller", "dare_terminal", "is only available for non-integral controllers");
        }
        if (s.integral != is_integral(c.estimation.mode)) {
            throw ConfigError("estimation", "mode",
                              std::string("must be ") + (s.integral ? "integral-summed or integral-differenced" : "plain") +
                                  " to match controller.integral");
        }
        if (cmd == Command::compare && s.variants.size() < 2) {
            throw ConfigError("controller", "variants", "compare needs at least two variants");
        }
        for (const auto& [key, v, dim] : {std::tuple{"umin", &s.umin, m.B.cols()}, std::tuple{"umax", &s.umax, m.B.cols()},
                                           std::tuple{"ymin", &s.ymin, m.C.rows()}, std::tuple{"ymax", &s.ymax, m.C.rows()}}) {
            if (v->size() && v->size() != dim) {
                throw ConfigError("controller", key, "bound vector has the wrong length");
            }
        }
        if (c.run.x0 && c.run.x0->size() != m.A.rows()) {
            throw ConfigError("run", "x0", "must have one entry per state");
        }
        for (const auto& [key, sig] : {std::pair{"reference.kind", &c.run.reference},
                                       std::pair{"disturbance.kind", &c.run.disturbance}}) {
            try {
                validate(*sig, c.plant.Ts);
            } catch (const InvalidInput& ex) {
                throw ConfigError("run", key, ex.what());
            }
        }
    }
}

/// Discrete plant used by every command.
inline StateSpaceModel discrete_plant(const ScenarioConfig& c)
{
    StateSpaceModel m = c.plant.model;
    if (m.Bd.size() == 0) {
        m.Bd = Matrix::Zero(m.A.rows(), 0);
    }
    if (c.plant.continuous) {
        m.Ts = 0.0;
        return discretize_zoh(m, c.plant.Ts);
    }
    m.Ts = c.plant.Ts;
    return m;
}

inline constexpr std::uint64_t noise_seed_offset = 0x9E3779B97F4A7C15ull;

/**
 * @brief Open-loop identification experiment.
 *
 * In integral-summed mode the plant is driven by the running sum of the
 * designed sequence. Outputs are corrupted at experiment.snr_db.
 */
inline ExperimentData collect(const ScenarioConfig& c)
{
    validate_config(c, Command::collect);
    const StateSpaceModel plant = discrete_plant(c);
    const auto T = static_cast<Eigen::Index>(c.experiment.signal.length);
    Matrix U(plant.m(), T);
    for (Eigen::Index i = 0; i < plant.m(); ++i) {
        SignalSpec s = c.experiment.signal;
        s.seed = c.experiment.seed + static_cast<std::uint64_t>(i);
        U.row(i) = generate_signal(s, plant.Ts).transpose();
    }
    if (c.sections.count("estimation") && c.estimation.mode == EstimationMode::integral_summed) {
        U = integral_input_transform(U, IntegralMode::summed);
    }
    ExperimentData data = simulate(plant, U);
    data.Y = add_output_noise(data.Y, c.experiment.snr_db, c.experiment.seed + noise_seed_offset);
    return data;
}

/// Output augmentation V and matching weights when the DARE terminal penalty is requested.
inline std::optional<TerminalAugmentation> terminal_augmentation(const ScenarioConfig& c)
{
    if (!c.sections.count("controller") || !c.controller.dare_terminal) {
        return std::nullopt;
    }
    const StateSpaceModel plant = discrete_plant(c);
    const auto& s = c.controller;
    const Matrix Qx = plant.C.transpose() * s.Q * plant.C;
    const Matrix Qp = solve_dare(plant.A, plant.B, Qx, s.R);
    return augment_terminal_weights(Qp, s.Q, s.R, c.estimation.N);
}

struct EstimateReport {
    PredictorMatrices predictor;
    RegressionDiagnostics diagnostics;
    std::string warning;
};

/**
 * @brief Least-squares predictor from experiment data.
 *
 * Phi is estimated as well when the data carries states. With
 * controller.dare_terminal the outputs are first augmented by V x.
 */
inline EstimateReport estimate(const ScenarioConfig& c, const ExperimentData& data_in)
{
    validate_config(c, Command::estimate);
    const auto& s = c.estimation;
    ExperimentData data = data_in;
    if (const auto aug = terminal_augmentation(c)) {
        data = augment_terminal_output(data, aug->V);
    }
    if (is_integral(s.mode)) {
        data = integral_data(data);
    }
    const HankelSet h = build_hankels(data, s.N, s.L, data.X.has_value());
    EstimateReport rep;
    rep.diagnostics = diagnose(h);
    EstimationOptions opt;
    opt.warning = &rep.warning;
    rep.predictor = estimate_predictor(h, opt);
    if (s.enforce_structure) {
        rep.predictor = enforce_gamma_structure(rep.predictor);
    }
    if (h.Xp) {
        rep.predictor.Phi = s.phi_method == PhiMethod::orthogonal && !is_integral(s.mode)
                                ? estimate_phi_orthogonal(h)
                                : estimate_phi_residual(h, rep.predictor.Gamma);
    }
    rep.predictor.integral = is_integral(s.mode);
    return rep;
}

inline ControllerConfig controller_config(const ScenarioConfig& c, Variant v,
                                          const std::optional<PredictorMatrices>& predictor)
{
    const auto& s = c.controller;
    const StateSpaceModel plant = discrete_plant(c);
    ControllerConfig cfg;
    cfg.variant = v;
    cfg.integral = s.integral;
    cfg.weights.Q = s.Q;
    cfg.weights.R = s.R;
    cfg.weights.P = s.P;
    cfg.weights.N = c.estimation.N;
    if (const auto aug = terminal_augmentation(c)) {
        cfg.weights = aug->weights;
        cfg.output_augmentation = aug->V;
    }
    cfg.constraints = box_constraints(cfg.weights.N, plant.m(), plant.q(), s.umin, s.umax, s.ymin, s.ymax);
    cfg.constraints.soft = s.soft;
    cfg.constraints.rho = s.rho;
    if (cfg.constraints.empty()) {
        cfg.constraints = ConstraintSpec{};
    }
    cfg.model = plant;
    if (v != Variant::model_mpc) {
        if (!predictor) {
            throw InvalidInput(std::string(to_string(v)) + " requires an estimated predictor");
        }
        cfg.predictor = predictor;
    }
    cfg.qp.max_iter = s.qp_max_iter;
    cfg.qp.tol = s.qp_tol;
    cfg.qp.warm_start = s.warm_start;
    return cfg;
}

inline Scenario build_scenario(const ScenarioConfig& c)
{
    const StateSpaceModel plant = discrete_plant(c);
    const auto T = static_cast<Eigen::Index>(std::llround(c.run.duration / plant.Ts));
    Scenario sc;
    sc.reference = Matrix(plant.q(), T);
    sc.disturbance = Matrix(plant.d(), T);
    if (T > 0) {
        SignalSpec r = c.run.reference;
        r.length = static_cast<std::size_t>(T);
        const Vector rv = generate_signal(r, plant.Ts);
        for (Eigen::Index i = 0; i < plant.q(); ++i) sc.reference.row(i) = rv.transpose();
        SignalSpec d = c.run.disturbance;
        d.length = static_cast<std::size_t>(T);
        const Vector dv = generate_signal(d, plant.Ts);
        for (Eigen::Index i = 0; i < plant.d(); ++i) sc.disturbance.row(i) = dv.transpose();
    }
    sc.noise_snr_db = c.run.noise_snr_db;
    sc.seed = c.run.seed;
    sc.x0 = c.run.x0;
    return sc;
}

inline MetricsSpec metrics_spec(const ScenarioConfig& c)
{
    MetricsSpec m;
    m.window_start = c.run.window_start;
    m.window_end = c.run.window_end;
    m.fundamental_hz = c.run.fundamental_hz;
    m.thd_periods = c.run.thd_periods;
    return m;
}

struct RunReport {
    Variant variant = Variant::model_mpc;
    SimulationResult result;
    Metrics metrics;
};

inline RunReport run(const ScenarioConfig& c, Variant v, const std::optional<PredictorMatrices>& predictor)
{
    validate_config(c, Command::run);
    RunReport rep;
    rep.variant = v;
    rep.result = run_closed_loop(discrete_plant(c), controller_config(c, v, predictor), build_scenario(c));
    if (rep.result.samples() > 0) {
        rep.metrics = compute_metrics(rep.result, metrics_spec(c));
    }
    return rep;
}

/// Collects, estimates once and runs every listed variant on the same plant realization.
inline std::vector<RunReport> compare(const ScenarioConfig& c)
{
    validate_config(c, Command::compare);
    const ExperimentData data = collect(c);
    const EstimateReport est = estimate(c, data);
    std::vector<RunReport> out;
    for (Variant v : c.controller.variants) {
        out.push_back(run(c, v, est.predictor));
    }
    return out;
}

namespace io {

inline void write_compare_table(std::ostream& os, const std::vector<RunReport>& reports)
{
    os << "variant,offset,bias,rmse,thd,mean_qp_iters,mean_step_seconds\n";
    for (const auto& r : reports) {
        const auto& m = r.metrics;
        os << to_string(r.variant) << ',' << format_double(m.offset) << ',' << format_double(m.bias) << ','
           << format_double(m.rmse) << ',' << format_double(m.thd) << ',' << format_double(m.mean_qp_iters) << ','
           << format_double(m.mean_step_seconds) << '\n';
    }
}

}  // namespace io
}  // namespace ddpc
