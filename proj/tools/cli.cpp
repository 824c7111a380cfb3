#include "cli.hpp"

#include "kmeflow/error.hpp"
#include "kmeflow/experiments.hpp"
#include "kmeflow/output.hpp"
#include "kmeflow/parallel.hpp"

#include "CLI11.hpp"

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace kmeflow::cli {

namespace {

namespace fs = std::filesystem;

struct GlobalOptions {
    std::uint64_t seed = 0;
    std::string out = "results";
    bool deterministic = false;
    unsigned threads = 1;
    std::string format = "csv";
    std::string log_level = "info";
};

struct ToyOptions {
    std::string toy_case = "gauss-to-gauss";
    int ensemble_size = 500;
    int n_steps = 50;
    std::optional<double> bandwidth;
    std::optional<double> epsilon;
    int grid_points = 801;
};

struct SkewOptions {
    std::vector<int> dims{1, 2, 5, 10, 20, 50};
    std::vector<int> sizes{200, 500};
    std::vector<std::string> kernels{"rbf", "quadratic"};
    std::optional<double> bandwidth;
    int n_steps = 50;
    double epsilon = 1e-8;
    int replicates = 10;
};

struct SweepOptions {
    std::vector<double> bandwidths;
    double sigma_min = 0.5;
    double sigma_max = 50.0;
    int sigma_count = 9;
    int dim = 10;
    int ensemble_size = 250;
    int n_steps = 50;
    double epsilon = 1e-5;
    int replicates = 10;
};

struct LorenzOptions {
    std::vector<std::string> methods{"enkf", "kme", "kme-kalman"};
    std::vector<int> sizes{100, 200, 300, 400, 500};
    int replicates = 20;
    std::string kernel = "rbf";
    double bandwidth = 6.0;
    double epsilon = 5e-11;
    int n_steps = 50;
    int n_cycles = 100;
    double dt_inner = 0.001;
    double dt_obs = 0.05;
    double obs_noise = 0.2;
    std::optional<double> forecast_noise;
    double inference_obs_noise = 0.2;
    double prior_var = 0.01;
    int max_retries = 5;
    double divergence_threshold = 1e3;
    bool trace = false;
};

struct PlotOptions {
    std::string input;
    std::string output;
    std::string x;
    std::string y;
    int bins = 40;
};

struct Context {
    const CLI::App& app;
    const GlobalOptions& global;
    std::string command;

    [[nodiscard]] OutputFormat format() const {
        return global.format == "json" ? OutputFormat::Json : OutputFormat::Csv;
    }
    [[nodiscard]] fs::path out_dir() const { return global.out; }
};

std::string timestamp_utc() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

Metadata base_metadata(const Context& ctx) {
    Metadata m{{"tool", fmt::format("kmeflow {}", kToolVersion)},
               {"command", ctx.command},
               {"seed", std::to_string(ctx.global.seed)},
               {"deterministic", ctx.global.deterministic ? "true" : "false"},
               {"sobol_directions", std::string(SobolSampler::kDirectionSet)}};
    if (!ctx.global.deterministic) m.emplace_back("created", timestamp_utc());
    return m;
}

// Global options plus those of the active subcommand; unset optional values
// are left out so the text parses back to the same settings.
std::string resolved_config(const CLI::App& app, const std::string& command) {
    std::istringstream in(app.config_to_str(true, false));
    std::string out;
    std::string line;
    const std::string prefix = command + ".";
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos || line.substr(eq) == "=\"\"") continue;
        const auto dot = line.find('.');
        const bool global = dot == std::string::npos || dot > eq;
        if (global || line.rfind(prefix, 0) == 0) out += line + '\n';
    }
    return out;
}

Metadata with_config(Metadata m, const Context& ctx) {
    m.emplace_back("config", resolved_config(ctx.app, ctx.command));
    return m;
}

void write(const Context& ctx, std::string_view stem, const Table& t, const Metadata& meta) {
    const fs::path path = write_table_file(ctx.out_dir(), stem, t, meta, ctx.format());
    spdlog::info("wrote {}", path.string());
}

Table vector_table(const Eigen::VectorXd& xs) {
    Table t({"index", "x"});
    for (Eigen::Index i = 0; i < xs.size(); ++i) t.add_row({static_cast<std::int64_t>(i), xs[i]});
    return t;
}

// Mean and variance of a tabulated density by the trapezoidal rule.
std::pair<double, double> tabulated_moments(const Numeric1D& t) {
    double z = 0.0;
    double m1 = 0.0;
    double m2 = 0.0;
    for (Eigen::Index i = 1; i < t.grid.size(); ++i) {
        const double h = t.grid[i] - t.grid[i - 1];
        const double a = t.pdf[i - 1];
        const double b = t.pdf[i];
        z += 0.5 * h * (a + b);
        m1 += 0.5 * h * (a * t.grid[i - 1] + b * t.grid[i]);
        m2 += 0.5 * h * (a * t.grid[i - 1] * t.grid[i - 1] + b * t.grid[i] * t.grid[i]);
    }
    const double mean = m1 / z;
    return {mean, m2 / z - mean * mean};
}

int cmd_toy(const Context& ctx, const ToyOptions& o) {
    const auto toy = parse_toy_case(o.toy_case);
    if (!toy) throw ConfigError("unknown toy case '" + o.toy_case + "'");
    ToySettings s = ToySettings::preset(*toy);
    s.ensemble_size = o.ensemble_size;
    s.n_steps = o.n_steps;
    if (o.bandwidth) s.bandwidth = *o.bandwidth;
    if (o.epsilon) s.epsilon = *o.epsilon;
    s.grid_points = o.grid_points;
    s.seed = ctx.global.seed;
    s.threads = ctx.global.threads;
    s.validate();

    spdlog::info("toy {}: N={} steps={} sigma={} eps={:g}", o.toy_case, s.ensemble_size, s.n_steps, s.bandwidth,
                 s.epsilon);
    const ToyResult r = run_toy(s);
    const Metadata meta = with_config(base_metadata(ctx), ctx);
    write(ctx, "samples_t0", vector_table(r.samples_t0), meta);
    write(ctx, "samples_t1", vector_table(r.samples_t1), meta);

    Table pdf({"x", "pdf"});
    for (Eigen::Index i = 0; i < r.target.grid.size(); ++i) pdf.add_row({r.target.grid[i], r.target.pdf[i]});
    write(ctx, "target_pdf", pdf, meta);

    const auto [target_mean, target_var] = tabulated_moments(r.target);
    Table metrics({"case", "n", "n_steps", "bandwidth", "epsilon", "mean", "var", "w2", "target_mean", "target_var"});
    metrics.add_row({o.toy_case, static_cast<std::int64_t>(s.ensemble_size), static_cast<std::int64_t>(s.n_steps),
                     s.bandwidth, s.epsilon, r.mean, r.var, r.w2, target_mean, target_var});
    write(ctx, "metrics", metrics, meta);
    std::cout << fmt::format("{}: mean {:.4f} (target {:.4f}), var {:.4f} (target {:.4f}), w2 {:.4f}\n", o.toy_case,
                             r.mean, target_mean, r.var, target_var, r.w2);
    return kExitOk;
}

KernelSpec kernel_from_name(const std::string& name, double bandwidth) {
    if (name == "rbf") return KernelSpec::rbf(bandwidth);
    if (name == "quadratic") return KernelSpec::quadratic();
    throw ConfigError("unknown kernel '" + name + "' (expected rbf or quadratic)");
}

int cmd_skew(const Context& ctx, const SkewOptions& o) {
    if (o.dims.empty() || o.sizes.empty() || o.kernels.empty()) throw ConfigError("skew needs dims, sizes and kernels");
    for (const auto& k : o.kernels) kernel_from_name(k, 1.0);
    if (o.bandwidth && !(*o.bandwidth > 0.0)) throw ConfigError("bandwidth must be positive");

    Table t({"d", "N", "kernel", "bandwidth", "w2_mean", "w2_stderr"});
    for (int d : o.dims) {
        for (int n : o.sizes) {
            for (const auto& name : o.kernels) {
                SkewSettings s;
                s.dim = d;
                s.ensemble_size = n;
                const double sigma = name == "rbf" ? o.bandwidth.value_or(skew_default_bandwidth(d)) : 0.0;
                s.kernel = kernel_from_name(name, name == "rbf" ? sigma : 1.0);
                s.n_steps = o.n_steps;
                s.epsilon = o.epsilon;
                s.replicates = o.replicates;
                s.seed = ctx.global.seed;
                s.threads = ctx.global.threads;
                s.validate();
                const SkewResult r = run_skew(s);
                spdlog::info("skew d={} N={} {}: w2 {:.4f} +- {:.4f}", d, n, name, r.w2_mean, r.w2_stderr);
                t.add_row({static_cast<std::int64_t>(d), static_cast<std::int64_t>(n), name, sigma, r.w2_mean,
                           r.w2_stderr});
            }
        }
    }
    write(ctx, "skew_w2", t, with_config(base_metadata(ctx), ctx));
    return kExitOk;
}

int cmd_sweep(const Context& ctx, const SweepOptions& o) {
    SweepSettings s;
    s.bandwidths = o.bandwidths.empty() ? log_grid(o.sigma_min, o.sigma_max, o.sigma_count) : o.bandwidths;
    s.dim = o.dim;
    s.ensemble_size = o.ensemble_size;
    s.n_steps = o.n_steps;
    s.epsilon = o.epsilon;
    s.replicates = o.replicates;
    s.seed = ctx.global.seed;
    s.threads = ctx.global.threads;
    s.validate();
    const std::vector<SweepRow> rows = run_bandwidth_sweep(s);
    Table t({"bandwidth", "w2_mean", "w2_stderr"});
    for (const auto& r : rows) t.add_row({r.bandwidth, r.w2_mean, r.w2_stderr});
    write(ctx, "bandwidth_w2", t, with_config(base_metadata(ctx), ctx));
    const auto best = std::min_element(rows.begin(), rows.end(),
                                       [](const SweepRow& a, const SweepRow& b) { return a.w2_mean < b.w2_mean; });
    std::cout << fmt::format("minimising bandwidth {:.4g} (w2 {:.4f})\n", best->bandwidth, best->w2_mean);
    return kExitOk;
}

int cmd_lorenz(const Context& ctx, const LorenzOptions& o) {
    std::vector<AssimilationMethod> methods;
    for (const auto& name : o.methods) {
        const auto m = parse_method(name);
        if (!m) throw ConfigError("unknown method '" + name + "'");
        methods.push_back(*m);
    }
    if (methods.empty() || o.sizes.empty()) throw ConfigError("lorenz63 needs methods and sizes");

    AssimilationScenario base;
    base.params.dt_inner = o.dt_inner;
    base.params.dt_obs = o.dt_obs;
    base.params.n_cycles = o.n_cycles;
    base.params.obs_noise_var = Eigen::Vector3d::Constant(o.obs_noise);
    if (o.forecast_noise) base.params.forecast_noise_var = Eigen::Vector3d::Constant(*o.forecast_noise);
    base.kernel = kernel_from_name(o.kernel, o.bandwidth);
    base.flow.n_steps = o.n_steps;
    base.flow.epsilon = o.epsilon;
    base.prior_var = Eigen::Vector3d::Constant(o.prior_var);
    base.inference_obs_var = o.inference_obs_noise;
    base.n_replicates = o.replicates;
    base.seed = ctx.global.seed;
    base.max_retries = o.max_retries;
    base.divergence_threshold = o.divergence_threshold;
    base.threads = ctx.global.threads;
    for (int n : o.sizes) {
        AssimilationScenario sc = base;
        sc.ensemble_size = n;
        sc.validate();
    }

    Metadata meta = base_metadata(ctx);
    meta.emplace_back("enkf_variant", std::string(kEnkfVariant));
    if (ctx.global.deterministic) meta.emplace_back("wall_time_s", "not recorded in deterministic mode");
    meta = with_config(std::move(meta), ctx);

    Table rows({"method", "N", "replicate", "rmse", "retries", "wall_time_s"});
    Table summary({"method", "N", "replicates", "rmse_mean", "rmse_stderr", "retries"});
    int failures = 0;
    for (AssimilationMethod m : methods) {
        for (int n : o.sizes) {
            AssimilationScenario sc = base;
            sc.method = m;
            sc.ensemble_size = n;
            const std::string name(method_name(m));
            AssimilationResult result;
            try {
                result = run_assimilation(sc);
            } catch (const DivergenceError& e) {
                spdlog::error("{} N={}: {}", name, n, e.what());
                ++failures;
                continue;
            }
            std::vector<double> rmses;
            for (const auto& r : result.replicates) {
                rmses.push_back(r.rmse);
                rows.add_row({name, static_cast<std::int64_t>(n), static_cast<std::int64_t>(r.replicate), r.rmse,
                              static_cast<std::int64_t>(r.retries),
                              ctx.global.deterministic ? Table::Cell{std::string()} : Table::Cell{r.wall_time_s}});
                if (o.trace) {
                    Table trace({"cycle", "obs_x", "obs_y", "obs_z", "mean_x", "mean_y", "mean_z"});
                    for (Eigen::Index j = 0; j < r.means.rows(); ++j) {
                        trace.add_row({static_cast<std::int64_t>(j + 1), r.observations(j, 0), r.observations(j, 1),
                                       r.observations(j, 2), r.means(j, 0), r.means(j, 1), r.means(j, 2)});
                    }
                    write(ctx, fmt::format("lorenz_trace_{}_N{}_r{}", name, n, r.replicate), trace, meta);
                }
            }
            const auto [mean, se] = mean_and_stderr(rmses);
            summary.add_row({name, static_cast<std::int64_t>(n), static_cast<std::int64_t>(rmses.size()), mean, se,
                             static_cast<std::int64_t>(result.total_retries())});
            std::cout << fmt::format("{:<12} N={:<5} rmse {:.4f} +- {:.4f} ({} retries)\n", name, n, mean, se,
                                     result.total_retries());
        }
    }
    write(ctx, "lorenz_rmse", rows, meta);
    write(ctx, "lorenz_summary", summary, meta);
    if (failures > 0) {
        spdlog::error("{} scenario(s) exhausted their retries", failures);
        return kExitRuntime;
    }
    return kExitOk;
}

// Minimal reader for the tables written above: numeric columns only.
std::map<std::string, std::vector<double>> read_numeric_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::string line;
    std::vector<std::string> header;
    std::map<std::string, std::vector<double>> cols;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (header.empty()) {
            header = cells;
            continue;
        }
        for (std::size_t c = 0; c < header.size() && c < cells.size(); ++c) {
            try {
                cols[header[c]].push_back(std::stod(cells[c]));
            } catch (const std::exception&) {
                cols[header[c]].push_back(std::nan(""));
            }
        }
    }
    if (header.empty()) throw ConfigError(path.string() + " has no header");
    return cols;
}

int cmd_plot(const Context&, const PlotOptions& o) {
    const auto cols = read_numeric_csv(o.input);
    auto column = [&](const std::string& name) -> const std::vector<double>& {
        const auto it = cols.find(name);
        if (it == cols.end()) throw ConfigError("column '" + name + "' not found in " + o.input);
        return it->second;
    };
    constexpr double kW = 640.0;
    constexpr double kH = 400.0;
    constexpr double kPad = 40.0;
    std::vector<double> xs;
    std::vector<double> ys;
    const bool histogram = o.x.empty();
    if (histogram) {
        const auto& v = column(o.y);
        const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
        const double lo = *lo_it;
        const double width = (*hi_it - lo) / o.bins + 1e-300;
        std::vector<double> counts(static_cast<std::size_t>(o.bins), 0.0);
        for (double x : v) counts[std::min<std::size_t>(static_cast<std::size_t>((x - lo) / width), o.bins - 1)] += 1;
        for (int b = 0; b < o.bins; ++b) {
            xs.push_back(lo + (b + 0.5) * width);
            ys.push_back(counts[b] / (v.size() * width));
        }
    } else {
        xs = column(o.x);
        ys = column(o.y);
    }
    const auto [xlo, xhi] = std::minmax_element(xs.begin(), xs.end());
    const double ylo = 0.0 < *std::min_element(ys.begin(), ys.end()) ? 0.0 : *std::min_element(ys.begin(), ys.end());
    const double yhi = *std::max_element(ys.begin(), ys.end());
    auto px = [&](double x) { return kPad + (x - *xlo) / (*xhi - *xlo + 1e-300) * (kW - 2 * kPad); };
    auto py = [&](double y) { return kH - kPad - (y - ylo) / (yhi - ylo + 1e-300) * (kH - 2 * kPad); };

    const std::filesystem::path parent = std::filesystem::path(o.output).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream svg(o.output);
    if (!svg) throw std::runtime_error("cannot write " + o.output);
    svg << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}">)", kW, kH) << '\n';
    svg << fmt::format(R"(<rect width="{}" height="{}" fill="white"/>)", kW, kH) << '\n';
    svg << fmt::format(R"(<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="black"/>)", kPad, kH - kPad, kW - kPad)
        << '\n';
    svg << fmt::format(R"(<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/>)", kPad, kPad, kH - kPad) << '\n';
    if (histogram) {
        const double bar = (kW - 2 * kPad) / o.bins;
        for (std::size_t b = 0; b < xs.size(); ++b) {
            svg << fmt::format(R"(<rect x="{:.2f}" y="{:.2f}" width="{:.2f}" height="{:.2f}" fill="steelblue"/>)",
                               kPad + b * bar, py(ys[b]), bar, kH - kPad - py(ys[b]))
                << '\n';
        }
    } else {
        svg << R"(<polyline fill="none" stroke="steelblue" stroke-width="1.5" points=")";
        for (std::size_t i = 0; i < xs.size(); ++i) svg << fmt::format("{:.2f},{:.2f} ", px(xs[i]), py(ys[i]));
        svg << "\"/>\n";
    }
    svg << fmt::format(R"(<text x="{}" y="{}" font-size="12">{} [{:.4g}, {:.4g}]</text>)", kPad, kH - 10,
                       histogram ? o.y : o.x, *xlo, *xhi)
        << '\n';
    svg << "</svg>\n";
    spdlog::info("wrote {}", o.output);
    return kExitOk;
}

void configure_logging(const std::string& level) {
    static bool configured = false;
    if (!configured) {
        spdlog::set_default_logger(spdlog::stderr_color_st("kmeflow"));
        spdlog::set_pattern("[%l] %v");
        configured = true;
    }
    spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

int run(const std::vector<std::string>& args) {
    retain_freed_memory();

    CLI::App app{"Kernel mean embedding flows for Bayesian inference", "kmeflow"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.set_config("--config", "", "TOML file with option values; command-line flags take precedence");
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
    app.add_option("--out", g.out, "Output directory")->capture_default_str();
    app.add_flag("--deterministic", g.deterministic, "Omit timestamps and wall times from outputs");
    app.add_option("--threads", g.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--format", g.format, "Output format")->capture_default_str()->check(CLI::IsMember({"csv", "json"}));
    app.add_option("--log-level,--log_level", g.log_level, "trace, debug, info, warn, error or off")
        ->capture_default_str()
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

    ToyOptions toy;
    auto* toy_cmd = app.add_subcommand("toy", "One-dimensional prior-to-posterior examples");
    toy_cmd->add_option("--case,--toy-case,--toy_case", toy.toy_case, "gauss-to-gauss, mixture-to-mixture or gauss-to-mixture")
        ->capture_default_str();
    toy_cmd->add_option("--n,--ensemble-size,--ensemble_size", toy.ensemble_size, "Ensemble size")->capture_default_str();
    toy_cmd->add_option("--n-steps,--n_steps", toy.n_steps, "Euler steps over [0,1]")->capture_default_str();
    toy_cmd->add_option("--bandwidth", toy.bandwidth, "RBF bandwidth (default: case preset)");
    toy_cmd->add_option("--epsilon", toy.epsilon, "Regularisation (default: case preset)");
    toy_cmd->add_option("--grid-points,--grid_points", toy.grid_points, "Points in target_pdf")->capture_default_str();

    SkewOptions skew;
    auto* skew_cmd = app.add_subcommand("skew", "Skew-normal target in growing dimension");
    skew_cmd->add_option("--dims", skew.dims, "Dimensions")->capture_default_str()->delimiter(',');
    skew_cmd->add_option("--sizes", skew.sizes, "Ensemble sizes")->capture_default_str()->delimiter(',');
    skew_cmd->add_option("--kernels", skew.kernels, "rbf and/or quadratic")->capture_default_str()->delimiter(',');
    skew_cmd->add_option("--bandwidth", skew.bandwidth, "RBF bandwidth (default: sqrt(d))");
    skew_cmd->add_option("--n-steps,--n_steps", skew.n_steps, "Euler steps")->capture_default_str();
    skew_cmd->add_option("--epsilon", skew.epsilon, "Regularisation")->capture_default_str();
    skew_cmd->add_option("--replicates", skew.replicates, "Replicates per cell")->capture_default_str();

    SweepOptions sweep;
    auto* sweep_cmd = app.add_subcommand("bandwidth-sweep", "RBF bandwidth sweep on a 10-d Gaussian problem");
    sweep_cmd->add_option("--bandwidths", sweep.bandwidths, "Explicit bandwidth list")->delimiter(',');
    sweep_cmd->add_option("--sigma-min,--sigma_min", sweep.sigma_min, "Smallest grid bandwidth")->capture_default_str();
    sweep_cmd->add_option("--sigma-max,--sigma_max", sweep.sigma_max, "Largest grid bandwidth")->capture_default_str();
    sweep_cmd->add_option("--sigma-count,--sigma_count", sweep.sigma_count, "Log-grid points")->capture_default_str();
    sweep_cmd->add_option("--dim", sweep.dim, "Dimension")->capture_default_str();
    sweep_cmd->add_option("--n,--ensemble-size,--ensemble_size", sweep.ensemble_size, "Ensemble size")
        ->capture_default_str();
    sweep_cmd->add_option("--n-steps,--n_steps", sweep.n_steps, "Euler steps")->capture_default_str();
    sweep_cmd->add_option("--epsilon", sweep.epsilon, "Regularisation")->capture_default_str();
    sweep_cmd->add_option("--replicates", sweep.replicates, "Replicates per bandwidth")->capture_default_str();

    LorenzOptions lor;
    auto* lor_cmd = app.add_subcommand("lorenz63", "Lorenz-63 filtering comparison");
    lor_cmd->add_option("--methods,--method", lor.methods, "enkf, kme, kme-kalman, forecast-only")
        ->capture_default_str()
        ->delimiter(',');
    lor_cmd->add_option("--sizes,--ensemble-size,--ensemble_size", lor.sizes, "Ensemble sizes")->capture_default_str()->delimiter(',');
    lor_cmd->add_option("--replicates,--n-replicates,--n_replicates", lor.replicates, "Replicates per cell")
        ->capture_default_str();
    lor_cmd->add_option("--kernel", lor.kernel, "rbf or quadratic")->capture_default_str();
    lor_cmd->add_option("--bandwidth", lor.bandwidth, "RBF bandwidth")->capture_default_str();
    lor_cmd->add_option("--epsilon", lor.epsilon, "Regularisation")->capture_default_str();
    lor_cmd->add_option("--n-steps,--n_steps", lor.n_steps, "Flow steps per cycle")->capture_default_str();
    lor_cmd->add_option("--n-cycles,--n_cycles", lor.n_cycles, "Assimilation cycles")->capture_default_str();
    lor_cmd->add_option("--dt-inner,--dt_inner", lor.dt_inner, "RK4 step")->capture_default_str();
    lor_cmd->add_option("--dt-obs,--dt_obs", lor.dt_obs, "Observation interval")->capture_default_str();
    lor_cmd->add_option("--obs-noise,--obs_noise", lor.obs_noise, "Observation noise variance")->capture_default_str();
    lor_cmd->add_option("--forecast-noise,--forecast_noise", lor.forecast_noise,
                        "Forecast noise variance per RK4 step (default 4 dt_inner / 5)");
    lor_cmd->add_option("--inference-obs-noise,--inference_obs_noise", lor.inference_obs_noise,
                        "Observation variance assumed by the inference step")
        ->capture_default_str();
    lor_cmd->add_option("--prior-var,--prior_var", lor.prior_var, "Initial ensemble variance")->capture_default_str();
    lor_cmd->add_option("--max-retries,--max_retries", lor.max_retries, "Reruns of a diverged replicate")
        ->capture_default_str();
    lor_cmd->add_option("--divergence-threshold,--divergence_threshold", lor.divergence_threshold,
                        "Largest admissible particle norm")
        ->capture_default_str();
    lor_cmd->add_flag("--trace", lor.trace, "Write per-cycle trace files");

    PlotOptions plot;
    auto* plot_cmd = app.add_subcommand("plot", "SVG line chart or histogram from an output CSV");
    plot_cmd->configurable(false);
    plot_cmd->add_option("--input", plot.input, "CSV file")->required()->check(CLI::ExistingFile);
    plot_cmd->add_option("--output", plot.output, "SVG file")->required();
    plot_cmd->add_option("--x", plot.x, "x column; omit for a histogram of --y");
    plot_cmd->add_option("--y", plot.y, "y column")->required();
    plot_cmd->add_option("--bins", plot.bins, "Histogram bins")->capture_default_str()->check(CLI::PositiveNumber);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        configure_logging(g.log_level);
        const CLI::App* sub = app.get_subcommands().front();
        const Context ctx{app, g, sub->get_name()};
        if (sub == toy_cmd) return cmd_toy(ctx, toy);
        if (sub == skew_cmd) return cmd_skew(ctx, skew);
        if (sub == sweep_cmd) return cmd_sweep(ctx, sweep);
        if (sub == lor_cmd) return cmd_lorenz(ctx, lor);
        return cmd_plot(ctx, plot);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace kmeflow::cli
