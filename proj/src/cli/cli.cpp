#include "mmpkd/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmpkd/distill.hpp"
#include "mmpkd/experiment.hpp"
#include "mmpkd/synth_data.hpp"
#include "mmpkd/teacher.hpp"

namespace mmpkd::cli {

using nlohmann::json;
using distill::Mode;
using experiment::Experiment;
using experiment::ExperimentConfig;
using student::ExtractionMethod;

namespace {

void error_line(std::ostream& err, const std::string& code, int exit_code, const std::string& message) {
    err << json{{"error", code}, {"exit_code", exit_code}, {"message", message}}.dump() << std::endl;
}

std::vector<Mode> modes_of(const std::string& s) {
    if (s == "both") return {Mode::Baseline, Mode::Mmpkd};
    return {distill::parse_mode(s)};
}

std::vector<ExtractionMethod> methods_of(const std::string& s) {
    if (s == "both") return {ExtractionMethod::LastCls, ExtractionMethod::Rollout};
    return {student::parse_method(s)};
}

// Values given on the command line; unset ones leave the config untouched.
struct Overrides {
    std::string config_path;
    std::string output_dir;
    std::vector<std::uint64_t> seeds;
    std::uint64_t data_seed = 0;
    std::size_t n_train = 0, n_val = 0, n_test = 0;
    std::string variant;
    std::uint64_t teacher_seed = 0;
    double lambda = 0.0, temperature = 0.0, learning_rate = 0.0;
    std::size_t epochs = 0, batch_size = 0, patience = 0;
    std::string method;
    double quantile = 0.0;
    std::size_t min_area = 0;
    std::vector<double> lambda_grid, temperature_grid;
    std::size_t scale = 0;
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"mmpkd: privileged-knowledge distillation experiments for a from-scratch ViT"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", "mmpkd 0.1.0");

    Overrides o;
    bool strict = false, quiet = false;
    auto ov = [](CLI::App* sub, const std::string& name, auto& target, const std::string& help) {
        return sub->add_option(name, target, help);
    };

    app.add_option("-c,--config", o.config_path, "Experiment config (JSON); flags override its values")
        ->check(CLI::ExistingFile);
    auto* out_opt = app.add_option("-o,--output-dir", o.output_dir,
                                   "Output root (default: $MMPKD_OUTPUT_DIR, then the config, then ./mmpkd-out)");
    app.add_flag("--strict", strict, "Treat config digest mismatches between stages as errors");
    app.add_flag("-q,--quiet", quiet, "Only print warnings and errors");

    const auto modes = std::vector<std::string>{"baseline", "mmpkd"};
    const auto methods = std::vector<std::string>{"last_cls", "rollout"};
    auto with_both = [](std::vector<std::string> v) {
        v.push_back("both");
        return v;
    };

    auto* gen = app.add_subcommand("generate", "Write the synthetic dataset to <out>/data");
    CLI::Option *o_data_seed, *o_ntrain, *o_nval, *o_ntest;
    o_data_seed = ov(gen, "--data-seed", o.data_seed, "Generator seed");
    o_ntrain = ov(gen, "--n-train", o.n_train, "Training samples");
    o_nval = ov(gen, "--n-val", o.n_val, "Validation samples");
    o_ntest = ov(gen, "--n-test", o.n_test, "Test samples");

    auto* tt = app.add_subcommand("train-teacher", "Fit the privileged-feature teacher to <out>/teachers/teacher.json");
    auto* o_variant = ov(tt, "--variant", o.variant, "logistic or forest")->check(CLI::IsMember({"logistic", "forest"}));
    auto* o_tseed = ov(tt, "--teacher-seed", o.teacher_seed, "Teacher seed");

    std::string ts_mode, ts_teacher;
    auto* ts = app.add_subcommand("train-student", "Train student runs into <out>/runs/<mode>/<seed>");
    ts->add_option("--mode", ts_mode, "baseline or mmpkd")->required()->check(CLI::IsMember(modes));
    ts->add_option("--teacher", ts_teacher, "Teacher file (required for --mode mmpkd)");
    auto* o_seeds_ts = ov(ts, "--seeds", o.seeds, "Seeds to train (default: config seed list)")->delimiter(',');
    auto* o_lambda = ov(ts, "--lambda", o.lambda, "Soft-label weight in [0, 1]");
    auto* o_temp = ov(ts, "--temperature", o.temperature, "Teacher temperature (>= 1)");
    auto* o_epochs = ov(ts, "--epochs", o.epochs, "Maximum epochs");
    auto* o_lr = ov(ts, "--learning-rate", o.learning_rate, "Adam learning rate");
    auto* o_bs = ov(ts, "--batch-size", o.batch_size, "Minibatch size");
    auto* o_pat = ov(ts, "--patience", o.patience, "Early-stopping patience in epochs");

    std::string ev_mode = "both", ev_method = "both";
    auto* ev = app.add_subcommand("evaluate", "Score attention maps of trained runs on the test split");
    ev->add_option("--mode", ev_mode, "baseline, mmpkd or both")->check(CLI::IsMember(with_both(modes)));
    ev->add_option("--method", ev_method, "last_cls, rollout or both")->check(CLI::IsMember(with_both(methods)));
    auto* o_seeds_ev = ov(ev, "--seeds", o.seeds, "Seeds to evaluate (default: config seed list)")->delimiter(',');
    auto* o_q = ov(ev, "--quantile", o.quantile, "Box threshold quantile");
    auto* o_area = ov(ev, "--min-area", o.min_area, "Minimum component size in pixels");

    bool pooled = false, one_sided = false, print = false;
    double alpha = 0.05;
    auto* cmp = app.add_subcommand("compare", "Write baseline vs mmpkd comparison reports to <out>/reports");
    cmp->add_flag("--pooled", pooled, "Test per-image values pooled over seeds instead of per-seed means");
    cmp->add_option("--alpha", alpha, "Significance level for **")->check(CLI::Range(0.0, 1.0));
    cmp->add_flag("--one-sided", one_sided, "One-sided test in each metric's better direction");
    cmp->add_flag("--print", print, "Also print the report for the configured attention method");
    auto* o_seeds_cmp = ov(cmp, "--seeds", o.seeds, "Seeds to include (default: config seed list)")->delimiter(',');

    std::string rd_mode = "both";
    std::optional<std::uint64_t> rd_seed;
    std::size_t rd_count = 0;
    auto* rd = app.add_subcommand("render", "Write PPM overlays (red GT boxes, green predicted boxes)");
    rd->add_option("--mode", rd_mode, "baseline, mmpkd or both")->check(CLI::IsMember(with_both(modes)));
    rd->add_option("--seed", rd_seed, "Run seed (default: first config seed)");
    rd->add_option("--count", rd_count, "Test images per run (default: config overlays_per_mode)");
    auto* o_method_rd = ov(rd, "--method", o.method, "last_cls or rollout")->check(CLI::IsMember(methods));
    auto* o_scale = ov(rd, "--scale", o.scale, "Pixel upscaling factor")->check(CLI::PositiveNumber);

    auto* gs = app.add_subcommand("grid-search", "Pick lambda and T by mean validation AUROC over seeds");
    auto* o_lg = ov(gs, "--lambdas", o.lambda_grid, "Lambda grid")->delimiter(',');
    auto* o_tg = ov(gs, "--temperatures", o.temperature_grid, "Temperature grid")->delimiter(',');
    auto* o_seeds_gs = ov(gs, "--seeds", o.seeds, "Seeds per cell")->delimiter(',');

    auto* pl = app.add_subcommand("pipeline", "generate, train-teacher, 2 x seeds student runs, evaluate, compare, render");
    auto* o_seeds_pl = ov(pl, "--seeds", o.seeds, "Seed list")->delimiter(',');
    auto* o_epochs_pl = ov(pl, "--epochs", o.epochs, "Maximum epochs");

    auto* pc = app.add_subcommand("print-config", "Print the effective config (file + flags) as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e, out, err);
        error_line(err, "usage", kExitUsage, e.what());
        err << "run 'mmpkd --help' for usage" << std::endl;
        return kExitUsage;
    }

    auto given = [](CLI::Option* opt) { return opt->count() > 0; };
    try {
        ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : experiment::load_config(o.config_path);
        if (given(out_opt)) {
            cfg.output_dir = o.output_dir;
        } else if (const char* env = std::getenv("MMPKD_OUTPUT_DIR"); env && *env) {
            cfg.output_dir = env;
        }
        if (given(o_data_seed)) cfg.generator.seed = o.data_seed;
        if (given(o_ntrain)) cfg.generator.n_train = o.n_train;
        if (given(o_nval)) cfg.generator.n_val = o.n_val;
        if (given(o_ntest)) cfg.generator.n_test = o.n_test;
        if (given(o_variant)) cfg.teacher_variant = teacher::parse_variant(o.variant);
        if (given(o_tseed)) cfg.teacher_seed = o.teacher_seed;
        for (auto* s : {o_seeds_ts, o_seeds_ev, o_seeds_cmp, o_seeds_gs, o_seeds_pl})
            if (given(s)) cfg.seeds = o.seeds;
        if (given(o_lambda)) cfg.training.lambda = o.lambda;
        if (given(o_temp)) cfg.training.temperature = o.temperature;
        if (given(o_epochs) || given(o_epochs_pl)) cfg.training.epochs = o.epochs;
        if (given(o_lr)) cfg.training.learning_rate = o.learning_rate;
        if (given(o_bs)) cfg.training.batch_size = o.batch_size;
        if (given(o_pat)) cfg.training.patience = o.patience;
        if (given(o_q)) cfg.boxes.quantile = o.quantile;
        if (given(o_area)) cfg.boxes.min_area = o.min_area;
        if (given(o_method_rd)) cfg.method = student::parse_method(o.method);
        if (given(o_scale)) cfg.overlay_scale = o.scale;
        if (given(o_lg)) cfg.lambda_grid = o.lambda_grid;
        if (given(o_tg)) cfg.temperature_grid = o.temperature_grid;

        if (pc->parsed()) {
            cfg.validate();
            json j = cfg;
            j["output_dir"] = cfg.output_dir.string();
            j["config_digest"] = experiment::config_digest(cfg);
            out << j.dump(2) << std::endl;
            return kExitOk;
        }

        Experiment ex(cfg, {strict, quiet, &err});
        if (gen->parsed()) {
            ex.generate();
        } else if (tt->parsed()) {
            ex.train_teacher();
        } else if (ts->parsed()) {
            const Mode mode = distill::parse_mode(ts_mode);
            std::optional<std::filesystem::path> teacher;
            if (!ts_teacher.empty()) teacher = ts_teacher;
            for (auto seed : cfg.seeds) ex.train_student(mode, seed, teacher);
        } else if (ev->parsed()) {
            for (auto mode : modes_of(ev_mode))
                for (auto seed : cfg.seeds)
                    for (auto method : methods_of(ev_method)) ex.evaluate(mode, seed, method);
        } else if (cmp->parsed()) {
            ex.write_reports(pooled, alpha, !one_sided);
            if (print)
                out << experiment::read_file(ex.paths().reports() /
                                             ("comparison_" + student::method_name(cfg.method) + ".txt"));
        } else if (rd->parsed()) {
            const auto seed = rd_seed.value_or(cfg.seeds.front());
            const auto count = rd_count ? rd_count : cfg.overlays_per_mode;
            for (auto mode : modes_of(rd_mode)) ex.render(mode, seed, count, cfg.method);
        } else if (gs->parsed()) {
            ex.grid_search();
        } else if (pl->parsed()) {
            ex.run_pipeline();
        }
        return kExitOk;
    } catch (const distill::NanLossError& e) {
        error_line(err, "nan_loss", kExitNumerical, e.what());
        return kExitNumerical;
    } catch (const experiment::PreconditionError& e) {
        error_line(err, e.code, kExitPrecondition, e.what());
        return kExitPrecondition;
    } catch (const std::invalid_argument& e) {
        error_line(err, "invalid_config", kExitPrecondition, e.what());
        return kExitPrecondition;
    } catch (const std::exception& e) {
        error_line(err, "failed", kExitPrecondition, e.what());
        return kExitPrecondition;
    }
}

}  // namespace mmpkd::cli
