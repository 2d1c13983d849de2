#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "vpv/error.hpp"
#include "vpv/harness.hpp"
#include "vpv/simulate.hpp"

namespace {

int cmd_run(const std::string &corpus_path, const std::string &config_path, const std::string &out_dir,
            const std::string &preset, int workers) {
    auto cfg = vpv::RunConfig::load(config_path);
    if (!preset.empty()) {
        cfg.pipeline.flags = vpv::Flags::preset(preset);
        cfg.pipeline.search.psc_enabled = cfg.pipeline.flags.psc;
    }
    if (workers > 0) {
        cfg.workers = workers;
    }
    const auto corpus = vpv::load_corpus(corpus_path);
    auto res = vpv::RunResources::build(cfg);
    const auto out = vpv::run_benchmark(corpus, cfg, res);
    vpv::write_run(out, out_dir);
    std::cout << out.metrics.dump(2) << "\n";
    return 0;
}

int cmd_report(const std::string &traces, const std::string &baseline) {
    const auto records = vpv::read_trace_records(traces);
    std::cout << vpv::compute_metrics(records).dump(2) << "\n";
    if (!baseline.empty()) {
        auto means = [](const std::vector<vpv::InstanceRecord> &rs) {
            std::vector<double> v;
            for (const auto &r : rs) {
                if (r.mean_score) {
                    v.push_back(*r.mean_score);
                }
            }
            return v;
        };
        const auto dist = vpv::score_distribution_report(means(records), means(vpv::read_trace_records(baseline)));
        std::cout << dist.table();
    }
    return 0;
}

int cmd_validate(const std::string &program_path, const std::string &registry_path) {
    std::ifstream in(program_path);
    if (!in) {
        throw vpv::ConfigError("cannot open " + program_path);
    }
    std::ostringstream text;
    text << in.rdbuf();
    const auto program = vpv::parse_program(text.str());
    vpv::SignatureTable table;
    if (!registry_path.empty()) {
        table = vpv::ModuleRegistry::load(registry_path).signatures();
    } else {
        for (const auto &[name, ex] : vpv::builtin_executors()) {
            table.ops[name].output = ex.output;
        }
        std::cerr << "no --registry given: checking operation names only\n";
    }
    const auto report = vpv::validate(program, table);
    if (registry_path.empty()) {
        // Without signatures only unknown operations and variables are meaningful.
        vpv::ValidationReport names_only;
        for (const auto &v : report.violations) {
            if (v.kind == vpv::Violation::Kind::UnknownOp || v.kind == vpv::Violation::Kind::UnknownVariable ||
                v.kind == vpv::Violation::Kind::MissingTerminal) {
                names_only.violations.push_back(v);
            }
        }
        std::cout << (names_only.ok() ? "ok\n" : names_only.to_string());
        return names_only.ok() ? 0 : 1;
    }
    std::cout << (report.ok() ? "ok\n" : report.to_string());
    return report.ok() ? 0 : 1;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Verified visual program execution: benchmark runner and tools"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    std::string corpus, config, out_dir = "run", preset;
    int workers = 0;
    auto *run = app.add_subcommand("run", "Run a corpus under a configuration");
    run->add_option("--corpus", corpus, "Corpus (one JSON instance per line)")->required()->check(CLI::ExistingFile);
    run->add_option("--config", config, "Run configuration")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_dir, "Output directory");
    run->add_option("--flags", preset, "Override flags with a preset (row0..row5)");
    run->add_option("--workers", workers, "Concurrent instances");

    std::string traces, baseline;
    auto *report = app.add_subcommand("report", "Recompute metrics from trace logs");
    report->add_option("--traces", traces, "Run or trace directory")->required();
    report->add_option("--baseline", baseline, "Trace directory of a run without trace search");

    vpv::SimulationConfig sim;
    std::string emit_dir, emit_preset = "row5";
    bool distribution = false;
    auto *simulate = app.add_subcommand("simulate", "Synthetic correlation study");
    simulate->add_option("--strength", sim.strength, "Planted verifier signal in [0,1]");
    simulate->add_option("--instances", sim.instances, "Instances per setting");
    simulate->add_option("--seed", sim.seed, "Generator seed");
    simulate->add_option("--plan-correct", sim.plan_correct, "Probability that a plan can reach the answer");
    simulate->add_option("--emit", emit_dir, "Write a runnable corpus, fixtures and config here instead");
    simulate->add_option("--emit-flags", emit_preset, "Preset recorded in the emitted config");
    simulate->add_flag("--distribution", distribution, "Also print the score histogram with and without search");

    std::string program_path, registry;
    auto *validate = app.add_subcommand("validate", "Parse and validate a program file");
    validate->add_option("program", program_path, "Program file")->required();
    validate->add_option("--registry", registry, "Module registry");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_default_logger(spdlog::stderr_color_mt("vpv"));
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);

    try {
        if (*run) {
            return cmd_run(corpus, config, out_dir, preset, workers);
        }
        if (*report) {
            return cmd_report(traces, baseline);
        }
        if (*simulate) {
            if (!emit_dir.empty()) {
                vpv::emit_benchmark(vpv::generate_benchmark(sim), emit_dir, vpv::Flags::preset(emit_preset));
                std::cout << "wrote " << emit_dir << "\n";
                return 0;
            }
            const auto rep = vpv::correlation_study(sim);
            std::cout << rep.table();
            if (distribution) {
                std::cout << "\n" << vpv::simulated_score_distribution(sim).table();
            }
            return 0;
        }
        if (*validate) {
            return cmd_validate(program_path, registry);
        }
    } catch (const vpv::SyntaxError &e) {
        std::cerr << "syntax error: " << e.what() << "\n";
        return 1;
    } catch (const vpv::Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
