// gps: pretrain | select | finetune | eval | compare | report

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gps/config.hpp"
#include "gps/error.hpp"
#include "gps/harness.hpp"

namespace {

struct Overrides {
    std::string config_path;
    std::vector<std::string> sets;
    std::string k, strategy, seed, out, base, mask, checkpoint, kind;
    std::vector<std::string> masks;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config_path, "key = value run config");
    cmd->add_option("--set", o.sets, "extra key=value override (repeatable)");
    cmd->add_option("--seed", o.seed, "run seed");
    cmd->add_option("--out", o.out, "output directory");
}

gps::RunConfig resolve(const Overrides& o, bool sweep) {
    gps::RunConfig cfg = o.config_path.empty() ? gps::RunConfig() : gps::RunConfig::load(o.config_path);
    for (const auto& s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw gps::ConfigError("--set expects key=value, got '" + s + "'");
        cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (!o.k.empty()) cfg.set(sweep ? "compare.k_values" : "select.k", o.k);
    if (!o.strategy.empty()) cfg.set(sweep ? "compare.strategies" : "select.strategy", o.strategy);
    if (!o.seed.empty()) cfg.set("seed", o.seed);
    if (!o.out.empty()) cfg.set("out", o.out);
    if (!o.base.empty()) cfg.set("base", o.base);
    if (!o.mask.empty()) cfg.set("mask", o.mask);
    if (!o.checkpoint.empty()) cfg.set("checkpoint", o.checkpoint);
    if (!o.kind.empty()) cfg.set("report.kind", o.kind);
    if (!o.masks.empty()) {
        std::string joined;
        for (const auto& m : o.masks) joined += (joined.empty() ? "" : ",") + m;
        cfg.set("report.masks", joined);
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gradient-based parameter selection: sparse fine-tuning toolkit"};
    app.require_subcommand(1);
    Overrides o;

    auto* pretrain = app.add_subcommand("pretrain", "train a base checkpoint on the source task");
    add_common(pretrain, o);

    auto* select = app.add_subcommand("select", "select parameters and write a mask");
    add_common(select, o);
    select->add_option("--base", o.base, "base checkpoint");
    select->add_option("--k", o.k, "connections per neuron");
    select->add_option("--strategy", o.strategy, "selection strategy");

    auto* finetune = app.add_subcommand("finetune", "masked fine-tuning; writes tuned checkpoint and delta");
    add_common(finetune, o);
    finetune->add_option("--base", o.base, "base checkpoint");
    finetune->add_option("--mask", o.mask, "mask file");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the target task");
    add_common(eval, o);
    eval->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate");

    auto* compare = app.add_subcommand("compare", "strategy / K sweep at matched budgets");
    add_common(compare, o);
    compare->add_option("--base", o.base, "base checkpoint (pretrained when omitted)");
    compare->add_option("--k", o.k, "comma-separated K values to sweep");
    compare->add_option("--strategy", o.strategy, "comma-separated strategies to compare");

    auto* report = app.add_subcommand("report", "mask distribution or overlap report");
    add_common(report, o);
    report->add_option("--kind", o.kind, "distribution | overlap");
    report->add_option("masks", o.masks, "mask files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const gps::RunConfig cfg = resolve(o, compare->parsed());
        if (*pretrain) {
            gps::cmd_pretrain(cfg, std::cout);
        } else if (*select) {
            gps::cmd_select(cfg, std::cout);
        } else if (*finetune) {
            gps::cmd_finetune(cfg, std::cout);
        } else if (*eval) {
            gps::cmd_eval(cfg, std::cout);
        } else if (*compare) {
            gps::cmd_compare(cfg, std::cout);
        } else if (*report) {
            gps::cmd_report(cfg, std::cout);
        }
    } catch (const gps::Error& e) {
        std::cerr << "gps: " << gps::kind_name(e.kind()) << " error: " << e.what() << "\n";
        return gps::exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "gps: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
