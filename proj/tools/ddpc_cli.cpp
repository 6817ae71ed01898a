// Command-line front end: collect, estimate, run and compare.

#include <ddpc/ddpc.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;

namespace {

constexpr int exit_runtime_error = 1;
constexpr int exit_config_error = 2;

struct Options {
    std::string config;
    std::string preset;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    std::string data;
    std::string predictor;
    std::string variant;
};

ddpc::ScenarioConfig load(const Options& o)
{
    if (o.config.empty() == o.preset.empty()) {
        throw ddpc::ConfigError("", "", "give exactly one of --config or --preset");
    }
    ddpc::ScenarioConfig c = o.config.empty() ? ddpc::preset(o.preset) : ddpc::load_config(o.config);
    if (o.seed) {
        c.experiment.seed = *o.seed;
        c.run.seed = *o.seed;
    }
    return c;
}

std::string out_path(const Options& o, const std::string& name)
{
    fs::create_directories(o.out);
    return (fs::path(o.out) / name).string();
}

std::ofstream open_out(const std::string& path)
{
    std::ofstream f(path);
    if (!f) {
        throw ddpc::InvalidInput("cannot write '" + path + "'");
    }
    return f;
}

int cmd_collect(const Options& o)
{
    const auto c = load(o);
    const auto data = ddpc::collect(c);
    const std::string path = out_path(o, "experiment.csv");
    ddpc::io::save_csv(path, data);
    std::cout << "wrote " << path << " (" << data.samples() << " samples, Ts=" << ddpc::io::format_double(data.Ts)
              << ")\n";
    return 0;
}

int cmd_estimate(const Options& o)
{
    const auto c = load(o);
    ddpc::validate_config(c, ddpc::Command::estimate);
    const std::string data_path = o.data.empty() ? (fs::path(o.out) / "experiment.csv").string() : o.data;
    const auto data = ddpc::io::load_csv(data_path);
    const auto rep = ddpc::estimate(c, data);
    const std::string path = out_path(o, "predictor.txt");
    ddpc::io::save_predictor(path, rep.predictor);
    const auto& d = rep.diagnostics;
    std::cout << "sigma_max_W=" << ddpc::io::format_double(d.w_sigma_max) << '\n'
              << "sigma_min_W=" << ddpc::io::format_double(d.w_sigma_min) << '\n'
              << "rank_W=" << d.w_rank << "/" << d.w_rows << '\n'
              << "input_sigma_ratio=" << ddpc::io::format_double(d.input_sigma_ratio) << '\n'
              << "integral=" << (rep.predictor.integral ? 1 : 0) << '\n'
              << "wrote " << path << '\n';
    if (!rep.warning.empty()) {
        std::cerr << "warning: " << rep.warning << '\n';
    }
    return 0;
}

ddpc::Variant parse_variant(const std::string& s)
{
    for (auto v : {ddpc::Variant::model_mpc, ddpc::Variant::state_dpc, ddpc::Variant::output_dpc}) {
        if (s == ddpc::to_string(v)) return v;
    }
    throw ddpc::ConfigError("controller", "variants", "unknown variant '" + s + "'");
}

int cmd_run(const Options& o)
{
    const auto c = load(o);
    ddpc::validate_config(c, ddpc::Command::run);
    const ddpc::Variant v = o.variant.empty() ? c.controller.variants.front() : parse_variant(o.variant);
    std::optional<ddpc::PredictorMatrices> pred;
    if (v != ddpc::Variant::model_mpc || !o.predictor.empty()) {
        pred = ddpc::io::load_predictor(o.predictor.empty() ? (fs::path(o.out) / "predictor.txt").string()
                                                            : o.predictor);
    }
    const auto rep = ddpc::run(c, v, pred);
    {
        auto f = open_out(out_path(o, "result.csv"));
        ddpc::io::write_result_csv(f, rep.result);
    }
    auto f = open_out(out_path(o, "metrics.txt"));
    f << "variant=" << ddpc::to_string(v) << '\n';
    ddpc::io::write_metrics(f, rep.metrics);
    std::cout << "variant=" << ddpc::to_string(v) << '\n';
    ddpc::io::write_metrics(std::cout, rep.metrics);
    return 0;
}

int cmd_compare(const Options& o)
{
    const auto c = load(o);
    const auto reports = ddpc::compare(c);
    for (std::size_t i = 0; i < reports.size(); ++i) {
        auto f = open_out(out_path(o, "result_" + std::to_string(i + 1) + "_" + ddpc::to_string(reports[i].variant) +
                                          ".csv"));
        ddpc::io::write_result_csv(f, reports[i].result);
    }
    auto f = open_out(out_path(o, "metrics.txt"));
    ddpc::io::write_compare_table(f, reports);
    ddpc::io::write_compare_table(std::cout, reports);
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Data-driven predictive control: identification experiments, estimation and closed-loop runs"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* sub) {
        auto* cfg = sub->add_option("--config", o.config, "scenario configuration file");
        auto* pre = sub->add_option("--preset", o.preset, "built-in scenario")
                        ->check(CLI::IsMember({"linear-motor", "ups"}));
        cfg->excludes(pre);
        sub->add_option("--out", o.out, "output directory")->capture_default_str();
        sub->add_option("--seed", o.seed, "override experiment and run seeds");
    };
    auto* collect = app.add_subcommand("collect", "simulate the identification experiment");
    common(collect);
    auto* estimate = app.add_subcommand("estimate", "estimate the prediction matrices from experiment data");
    common(estimate);
    estimate->add_option("--data", o.data, "experiment CSV (default <out>/experiment.csv)");
    auto* run = app.add_subcommand("run", "closed-loop run of one controller");
    common(run);
    run->add_option("--predictor", o.predictor, "predictor file (default <out>/predictor.txt)");
    run->add_option("--variant", o.variant, "controller variant (default: first listed in the config)");
    auto* compare = app.add_subcommand("compare", "collect, estimate and run every listed variant");
    common(compare);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : exit_config_error;
    }

    try {
        if (collect->parsed()) return cmd_collect(o);
        if (estimate->parsed()) return cmd_estimate(o);
        if (run->parsed()) return cmd_run(o);
        if (compare->parsed()) return cmd_compare(o);
    } catch (const ddpc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_runtime_error;
    }
    return exit_runtime_error;
}
