#include "cli.hpp"

#include "train_config.hpp"

#include "ceco/errors.hpp"
#include "ceco/etf.hpp"
#include "ceco/grad_check.hpp"
#include "ceco/harness.hpp"
#include "ceco/io.hpp"
#include "ceco/nc_metrics.hpp"
#include "ceco/toy_model.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

namespace ceco::cli {

namespace {

// Settings shared by train / ablation / sweep. Flags are bound to strings
// so that, after parsing, only the flags actually given override the
// config file, which in turn overrides the defaults.
struct ExperimentFlags {
    std::string config_path;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
    int jobs = 1;

    void attach(CLI::App& app) {
        app.footer("Settings are resolved as: command-line flags, then --config file values, then defaults.");
        app.add_option("--config", config_path, "file of 'key = value' lines (flags take precedence)");
        app.add_option("--jobs", jobs, "maximum concurrent training runs")->check(CLI::PositiveNumber);
        for (const ConfigKey& k : train_config_keys()) {
            options[k.key] = app.add_option(k.flag, values[k.key], k.help);
        }
    }

    TrainConfig resolve() const {
        TrainConfig cfg;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) {
                throw IoError(fmt::format("cannot open config '{}'", config_path));
            }
            apply_config_text(cfg, in);
        }
        for (const ConfigKey& k : train_config_keys()) {
            if (options.at(k.key)->count() > 0) {
                k.set(cfg, values.at(k.key));
            }
        }
        cfg.validate();
        return cfg;
    }
};

std::string render(const EtfCheckReport& r) {
    return fmt::format("{{\"max_norm_deviation\":{},\"max_offdiag_deviation\":{},\"max_pairwise_cosine\":{},"
                       "\"is_etf\":{}}}",
                       format_number(r.max_norm_deviation), format_number(r.max_offdiag_deviation),
                       format_number(r.max_pairwise_cosine), r.is_etf ? "true" : "false");
}

template <typename Writer>
void write_output(const std::string& path, Writer&& writer) {
    std::ostringstream buf;
    writer(buf);
    write_file_atomic(path, buf.str());
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError(fmt::format("cannot open '{}'", path));
    }
    return in;
}

std::string summary_line(const EvalRecord& r) {
    return fmt::format("iteration={} accuracy={} head={} common={} tail={} equiang_std_centers={} "
                       "maxangle_avg_centers={} self_duality_gap={}",
                       r.iteration, format_number(r.accuracy), format_number(r.head_accuracy),
                       format_number(r.common_accuracy), format_number(r.tail_accuracy),
                       format_number(r.equiang_std_centers), format_number(r.maxangle_avg_centers),
                       format_number(r.self_duality_gap));
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Center-collapse regularization and neural-collapse diagnostics"};
    app.name("ceco");
    app.require_subcommand(1);

    // make-etf
    auto* make_cmd = app.add_subcommand("make-etf", "write a seeded simplex ETF frame");
    long long make_dim = 0;
    long long make_classes = 0;
    double make_alpha = 1.0;
    std::uint64_t make_seed = 0;
    std::string make_out;
    make_cmd->add_option("--dim", make_dim, "feature dimension d")->required();
    make_cmd->add_option("--classes", make_classes, "number of classes K")->required();
    make_cmd->add_option("--alpha", make_alpha, "frame scale");
    make_cmd->add_option("--seed", make_seed, "rotation seed");
    make_cmd->add_option("--out", make_out, "output frame file")->required();

    // verify-etf
    auto* verify_cmd = app.add_subcommand("verify-etf", "check a frame file against the ETF identities");
    std::string verify_frame;
    double verify_tol = kDefaultEtfTolerance;
    std::string verify_out;
    verify_cmd->add_option("--frame", verify_frame, "frame file")->required();
    verify_cmd->add_option("--tol", verify_tol, "tolerance on norms and cosines");
    verify_cmd->add_option("--out", verify_out, "write the JSON report here as well");

    // analyze
    auto* analyze_cmd = app.add_subcommand("analyze", "neural-collapse statistics of a feature dump");
    std::string analyze_features_path;
    std::string analyze_classifier;
    std::string analyze_out;
    analyze_cmd->add_option("--features", analyze_features_path, "feature dump")->required();
    analyze_cmd->add_option("--classifier", analyze_classifier, "classifier frame file (d x K)");
    analyze_cmd->add_option("--out", analyze_out, "JSON report")->required();

    // grad-check
    auto* grad_cmd = app.add_subcommand("grad-check", "finite-difference check of every analytic gradient");
    std::uint64_t grad_seed = 0;
    int grad_trials = 20;
    bool grad_flip = false;
    grad_cmd->add_option("--seed", grad_seed, "first instance seed");
    grad_cmd->add_option("--trials", grad_trials, "instances per suite")->check(CLI::PositiveNumber);
    grad_cmd->add_flag("--inject-sign-flip", grad_flip, "negate the center feature gradient (self-test)")
        ->group("");

    // train / ablation / sweep
    auto* train_cmd = app.add_subcommand("train", "train one configuration and log evaluations");
    ExperimentFlags train_flags;
    train_flags.attach(*train_cmd);
    std::string train_out;
    train_cmd->add_option("--out", train_out, "line-delimited JSON log")->required();

    auto* ablation_cmd = app.add_subcommand("ablation", "pixel/center classifier variants (fixed vs learned)");
    ExperimentFlags ablation_flags;
    ablation_flags.attach(*ablation_cmd);
    std::string ablation_out;
    ablation_cmd->add_option("--out", ablation_out, "CSV table")->required();

    auto* sweep_cmd = app.add_subcommand("sweep", "loss-weight sweep");
    ExperimentFlags sweep_flags;
    sweep_flags.attach(*sweep_cmd);
    std::vector<double> sweep_lambdas = default_lambda_grid();
    std::string sweep_out;
    sweep_cmd->add_option("--lambdas", sweep_lambdas, "loss weights (default 0.0 ... 0.6)")->delimiter(',');
    sweep_cmd->add_option("--out", sweep_out, "CSV table")->required();

    // gen-data
    auto* gen_cmd = app.add_subcommand("gen-data", "write one synthetic scene as a feature dump");
    SceneConfig gen_cfg;
    std::string gen_out;
    std::string gen_config_out;
    gen_cmd->add_option("--classes", gen_cfg.num_classes, "number of classes K");
    gen_cmd->add_option("--beta", gen_cfg.beta, "target pixel imbalance factor");
    gen_cmd->add_option("--height", gen_cfg.height, "scene height");
    gen_cmd->add_option("--width", gen_cfg.width, "scene width");
    gen_cmd->add_option("--input-dim", gen_cfg.input_dim, "raw input dimension");
    gen_cmd->add_option("--blob-count", gen_cfg.blob_count, "region seeds");
    gen_cmd->add_option("--noise", gen_cfg.noise_sigma, "input noise standard deviation");
    gen_cmd->add_option("--smooth-radius", gen_cfg.smooth_radius, "box filter half-width");
    gen_cmd->add_option("--prototype-scale", gen_cfg.prototype_scale, "scale of class prototypes");
    gen_cmd->add_option("--seed", gen_cfg.seed, "scene seed");
    gen_cmd->add_option("--prototype-seed", gen_cfg.prototype_seed, "class prototype seed");
    gen_cmd->add_option("--out", gen_out, "scene dump")->required();
    gen_cmd->add_option("--config-out", gen_config_out, "sidecar config file");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kBadInput;
    }

    try {
        if (*make_cmd) {
            const EtfFrame frame = make_etf(make_dim, make_classes, make_alpha, make_seed);
            write_output(make_out, [&](std::ostream& o) { write_frame(o, frame); });
            return kOk;
        }
        if (*verify_cmd) {
            auto in = open_input(verify_frame);
            const EtfFrame frame = read_frame(in);
            const EtfCheckReport report = verify_etf(frame.matrix, verify_tol);
            out << render(report) << '\n';
            if (!verify_out.empty()) {
                write_output(verify_out, [&](std::ostream& o) { o << render(report) << '\n'; });
            }
            return report.is_etf ? kOk : kCheckFailed;
        }
        if (*analyze_cmd) {
            auto in = open_input(analyze_features_path);
            const FeatureBatch batch = read_feature_dump(in);
            std::optional<EtfFrame> classifier;
            if (!analyze_classifier.empty()) {
                auto cin = open_input(analyze_classifier);
                classifier = read_frame(cin);
            }
            const NcReport report = analyze_features(batch, classifier ? &classifier->matrix : nullptr);
            write_output(analyze_out, [&](std::ostream& o) { o << to_json(report) << '\n'; });
            out << to_json(report) << '\n';
            return kOk;
        }
        if (*grad_cmd) {
            const GradCheckSummary summary = run_grad_checks(
                grad_seed, grad_trials, grad_flip ? GradFault::flip_center_feature_sign : GradFault::none);
            for (const GradSuiteResult& s : summary.suites) {
                out << fmt::format("{} {} trials={} worst_relative_error={} seed={}\n", s.passed ? "PASS" : "FAIL",
                                   s.name, s.trials, format_number(s.worst_relative_error), s.worst_seed);
            }
            return summary.passed() ? kOk : kCheckFailed;
        }
        if (*train_cmd) {
            const TrainConfig cfg = train_flags.resolve();
            try {
                const TrainResult result = train(cfg);
                write_output(train_out, [&](std::ostream& o) { write_log_jsonl(o, result.log); });
                out << summary_line(result.log.final_record()) << '\n';
            } catch (const TrainingDiverged& e) {
                write_output(train_out, [&](std::ostream& o) { write_log_jsonl(o, e.partial_log()); });
                throw;
            }
            return kOk;
        }
        if (*ablation_cmd) {
            const TrainConfig cfg = ablation_flags.resolve();
            const auto rows = run_ablation_grid(cfg, ablation_flags.jobs);
            write_output(ablation_out, [&](std::ostream& o) { write_ablation_csv(o, rows); });
            for (const AblationRow& row : rows) {
                out << fmt::format("pc={} cc={} ", to_string(row.pr_mode), to_string(row.cc_mode))
                    << summary_line(row.final) << '\n';
            }
            return kOk;
        }
        if (*sweep_cmd) {
            const TrainConfig cfg = sweep_flags.resolve();
            const auto rows = lambda_sweep(cfg, sweep_lambdas, sweep_flags.jobs);
            write_output(sweep_out, [&](std::ostream& o) { write_sweep_csv(o, rows); });
            for (const SweepRow& row : rows) {
                out << fmt::format("lambda={} ", format_number(row.lambda)) << summary_line(row.final) << '\n';
            }
            return kOk;
        }
        if (*gen_cmd) {
            const Scene scene = gen_scene(gen_cfg);
            write_output(gen_out, [&](std::ostream& o) { write_scene(o, scene, gen_cfg.num_classes); });
            if (!gen_config_out.empty()) {
                write_output(gen_config_out, [&](std::ostream& o) { write_scene_config(o, gen_cfg); });
            }
            out << fmt::format("pixels={} imbalance_factor={}\n", scene.labels.size(),
                               format_number(imbalance_factor(scene.pixel_counts)));
            return kOk;
        }
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kBadInput;
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kIoError;
    } catch (const InsufficientClassesError& e) {
        err << "error: " << e.what() << '\n';
        return kInsufficientData;
    } catch (const DivergenceError& e) {
        err << "error: training diverged: " << e.what() << '\n';
        return kDiverged;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kBadInput;
    }
    return kBadInput;
}

} // namespace ceco::cli
