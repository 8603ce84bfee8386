#include "isps/experiment.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

struct CommonOptions {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("--config", opts.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", opts.out, "output directory (overrides the config)");
    cmd->add_option("--seed", opts.seed, "override the config seed");
    cmd->add_option("--mode", opts.mode, "controller mode")
        ->check(CLI::IsMember({"learned", "oracle-drift", "filter-off", "oracle-drift+filter-off"}));
}

isps::ExperimentConfig resolve(const CommonOptions& opts) {
    isps::ExperimentConfig cfg = isps::load_config(opts.config);
    if (!opts.out.empty()) cfg.output_dir = opts.out;
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.mode) cfg.mode = isps::ControllerMode::parse(*opts.mode);
    cfg.validate();
    return cfg;
}

int run_collect(const isps::ExperimentConfig& cfg) {
    const auto r = isps::cmd_collect(cfg);
    std::cout << "collected " << r.rows << " samples -> " << r.dataset.string() << "\n";
    return 0;
}

int run_train(const isps::ExperimentConfig& cfg) {
    const auto r = isps::cmd_train(cfg);
    std::cout << "model -> " << r.model.string() << "\n"
              << "rho_bar = [" << r.rho_bar.rho_bar.transpose() << "], |rho_bar| = " << r.rho_bar.norm << "\n"
              << "error bound |eta||rho_bar| = " << r.bound.bound() << ", confidence (1-eps)^n = "
              << r.bound.confidence() << "\n";
    return 0;
}

int run_simulate(const isps::ExperimentConfig& cfg) {
    const auto r = isps::cmd_simulate(cfg);
    std::cout << "mode " << cfg.mode.name() << ", d_inf = " << r.d_inf << "\n";
    int status = 0;
    for (const auto& e : r.scenarios) {
        if (e.error) {
            std::cout << "  " << e.name << ": ERROR " << *e.error << "\n";
            status = 1;
        } else {
            std::cout << "  " << e.name << ": " << e.rows << " samples, min h(x) = " << e.min_h_x
                      << ", min h(y) = " << e.min_h_y << "\n";
        }
    }
    return status;
}

int run_verify(const isps::ExperimentConfig& cfg) {
    const auto r = isps::cmd_verify(cfg);
    const auto& c = r.certificate;
    std::cout << "kappa = " << c.kappa << ", c_tilde = " << c.c_tilde << ", c = " << c.c
              << ", sup_relu = " << r.inputs.sup_relu << ", d_inf = " << r.inputs.d_inf << "\n";
    std::cout << "sandwich: " << r.sandwich.upper_violations << " upper / " << r.sandwich.lower_violations
              << " lower violations over " << r.sandwich.samples << " samples\n";
    for (const auto& e : r.scenarios) {
        std::cout << "  " << e.name << ": " << (e.pass ? "PASS" : "FAIL");
        if (e.error) std::cout << " (" << *e.error << ")";
        if (e.pair && e.pair->first_violation) {
            std::cout << " pair bound first violated at step " << *e.pair->first_violation;
        }
        if (e.pair && !e.pair->pass && !e.pair->first_violation) {
            std::cout << " pair bound worst step " << e.pair->worst_step;
        }
        if (e.lyapunov && !e.lyapunov->pass) {
            std::cout << " Lyapunov decrease violated at step " << e.lyapunov->worst_step;
        }
        for (const auto* s : {&e.safety_x, &e.safety_y}) {
            if (*s && !(*s)->pass) std::cout << " safety margin violated at step " << (*s)->argmin_step;
        }
        std::cout << "\n";
    }
    std::cout << "verify: " << (r.pass ? "PASS" : "FAIL") << "\n";
    return r.pass ? 0 : 1;
}

int run_report(const isps::ExperimentConfig& cfg) {
    const auto r = isps::cmd_report(cfg);
    std::cout << r.summary;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Safe learning-based control: data, GP training, simulation and certificate checks"};
    app.require_subcommand(1);

    CommonOptions opts;
    struct Stage {
        const char* name;
        const char* help;
        int (*run)(const isps::ExperimentConfig&);
    };
    const Stage stages[] = {
        {"collect", "sample noisy drift data from the plant", run_collect},
        {"train", "fit the GP and compute the error bound", run_train},
        {"simulate", "roll out every scenario pair", run_simulate},
        {"verify", "check the certificate along the logged trajectories", run_verify},
        {"report", "write the summary and distance-vs-bound curves", run_report},
    };
    std::vector<std::pair<CLI::App*, const Stage*>> commands;
    for (const auto& s : stages) {
        auto* cmd = app.add_subcommand(s.name, s.help);
        add_common(cmd, opts);
        commands.emplace_back(cmd, &s);
    }

    CLI11_PARSE(app, argc, argv);

    try {
        const auto cfg = resolve(opts);
        for (const auto& [cmd, stage] : commands) {
            if (cmd->parsed()) return stage->run(cfg);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
