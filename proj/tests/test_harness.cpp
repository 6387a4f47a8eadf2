#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "gps/binary_io.hpp"
#include "gps/checkpoint.hpp"
#include "gps/error.hpp"
#include "gps/harness.hpp"
#include "support.hpp"

using namespace gps;

namespace {

std::string slurp(const std::filesystem::path& p) {
    const auto b = read_file(p);
    return std::string(b.begin(), b.end());
}

std::string last_line(const std::string& text) {
    auto end = text.find_last_not_of('\n');
    auto start = text.rfind('\n', end);
    return text.substr(start == std::string::npos ? 0 : start + 1, end - (start == std::string::npos ? 0 : start + 1) + 1);
}

// Tiny transfer pair used by most command tests.
RunConfig small_config(const std::filesystem::path& out) {
    RunConfig c = RunConfig::parse(R"(
seed = 3
model.hidden = 8
source.dims = 4
source.classes = 3
source.per_class = 40
data.dims = 4
data.classes = 3
data.per_class = 40
data.shift = 1
data.informative = 3
pretrain.epochs = 15
pretrain.warmup = 2
train.epochs = 8
train.warmup = 1
select.batch_size = 16
)");
    c.set("out", out.string());
    return c;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(GPS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(RunConfig, ParsesCommentsAndRejectsUnknownKeys) {
    const RunConfig c = RunConfig::parse("# comment\n\nseed = 9\n  select.k=3  \n");
    EXPECT_EQ(c.seed(), 9u);
    EXPECT_EQ(c.get_size("select.k"), 3u);
    try {
        RunConfig::parse("seed = 1\nselect.kk = 2\n", "x.cfg");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("x.cfg:2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(RunConfig::parse("seed 1\n"), ConfigError);
    EXPECT_THROW(RunConfig::parse("seed = 1\nseed = 2\n"), ConfigError);
    RunConfig d;
    EXPECT_THROW(d.set("nope", "1"), ConfigError);
    d.set("seed", "abc");
    EXPECT_THROW(d.seed(), ConfigError);
}

TEST(RunConfig, ResolvedTextReplays) {
    RunConfig c = RunConfig::parse("seed = 4\nselect.strategy = magnitude\n");
    const std::string text = c.resolved_text();
    EXPECT_NE(text.find("data.seed = 4\n"), std::string::npos);
    for (const auto& k : RunConfig::known_keys()) EXPECT_NE(text.find(k + " = "), std::string::npos) << k;
    EXPECT_EQ(RunConfig::parse(text).resolved_text(), text);
}

TEST(RunConfig, TypedViews) {
    RunConfig c = RunConfig::parse("train.optimizer = sgd\ntrain.lr = 0.5\nmodel.hidden = 3,4\nmodel.input = 2x3\n");
    EXPECT_EQ(c.training("train").optimizer, OptimizerKind::Sgd);
    EXPECT_EQ(c.training("train").base_lr, 0.5);
    EXPECT_EQ(c.model_spec().hidden, (std::vector<std::size_t>{3, 4}));
    EXPECT_EQ(c.model_spec().input_shape, (Shape{2, 3}));
    c.set("train.warmup", "99");
    EXPECT_THROW(c.training("train"), ConfigError);
    c.set("data.kind", "parquet");
    EXPECT_THROW(load_task(c, "data"), ConfigError);
}

TEST(Pretrain, ReachesHighAccuracyAndIsDeterministic) {
    const auto dir = gps::testing::temp_dir("pretrain");
    RunConfig c;
    c.set("out", (dir / "a").string());
    std::ostringstream log;
    const auto a = cmd_pretrain(c, log);
    const TaskData task = load_task(c, "source");
    EXPECT_GE(evaluate(a.model, task.val).accuracy, 0.95);
    c.set("out", (dir / "b").string());
    const auto b = cmd_pretrain(c, log);
    EXPECT_EQ(a.digest, b.digest);
    EXPECT_EQ(read_file(dir / "a" / "base.gpsw"), read_file(dir / "b" / "base.gpsw"));
    EXPECT_EQ(slurp(dir / "a" / "metrics.jsonl"), slurp(dir / "b" / "metrics.jsonl"));
    EXPECT_TRUE(std::filesystem::exists(dir / "a" / "resolved.cfg"));
}

TEST(Pretrain, ZeroEpochsGivesFreshInitialisation) {
    const auto dir = gps::testing::temp_dir("pretrain0");
    RunConfig c = small_config(dir);
    c.set("pretrain.epochs", "0");
    c.set("pretrain.warmup", "0");
    std::ostringstream log;
    const auto r = cmd_pretrain(c, log);
    ModelSpec spec = c.model_spec();
    spec.input_shape = {4};
    spec.classes = 3;
    EXPECT_TRUE(r.model.bitwise_equal(build_model(spec)));
}

TEST(Select, SummaryCountsAndDeterminism) {
    const auto dir = gps::testing::temp_dir("select");
    RunConfig c = small_config(dir / "pre");
    std::ostringstream log;
    cmd_pretrain(c, log);
    c.set("base", (dir / "pre" / "base.gpsw").string());
    c.set("out", (dir / "s1").string());
    const auto s = cmd_select(c, log);
    EXPECT_EQ(s.mask.popcount(), 8u);
    EXPECT_NE(s.summary.find("8/32 = 25.00%"), std::string::npos) << s.summary;
    c.set("out", (dir / "s2").string());
    cmd_select(c, log);
    EXPECT_EQ(read_file(dir / "s1" / "mask.gpsm"), read_file(dir / "s2" / "mask.gpsm"));

    c.set("select.strategy", "bias-only");
    c.set("out", (dir / "bias").string());
    const auto b = cmd_select(c, log);
    EXPECT_EQ(b.mask.selected_weights(load_base_for_task(c, c.get("base"), load_task(c, "data").train)), 0u);
    EXPECT_NE(b.summary.find("0/32 = 0.00%"), std::string::npos) << b.summary;
    EXPECT_NE(b.summary.find("bias parameters: 8 selected"), std::string::npos) << b.summary;
}

TEST(Finetune, DeltaRoundTripFullMaskAndRepeatability) {
    const auto dir = gps::testing::temp_dir("finetune");
    RunConfig c = small_config(dir / "pre");
    std::ostringstream log;
    cmd_pretrain(c, log);
    const std::string base = (dir / "pre" / "base.gpsw").string();
    c.set("base", base);
    c.set("out", (dir / "sel").string());
    cmd_select(c, log);
    c.set("mask", (dir / "sel" / "mask.gpsm").string());
    c.set("out", (dir / "ft1").string());
    const auto a = cmd_finetune(c, log);
    c.set("out", (dir / "ft2").string());
    cmd_finetune(c, log);

    const std::vector<Parameter> stored = read_checkpoint(base);
    ModelSpec spec = c.model_spec();
    spec.input_shape = {4};
    spec.classes = head_classes(stored);
    const Model base_model = model_from_parameters(spec, stored);
    const Model rebuilt = apply_delta(base_model, load_delta(dir / "ft1" / "delta.gpsd"));
    EXPECT_EQ(checkpoint_bytes(rebuilt), read_file(dir / "ft1" / "tuned.gpsw"));
    EXPECT_EQ(read_file(dir / "ft1" / "delta.gpsd"), read_file(dir / "ft2" / "delta.gpsd"));
    const std::string m1 = slurp(dir / "ft1" / "metrics.jsonl");
    EXPECT_EQ(last_line(m1), last_line(slurp(dir / "ft2" / "metrics.jsonl")));
    EXPECT_NE(last_line(m1).find("\"final\":true"), std::string::npos);

    c.set("select.strategy", "full");
    c.set("out", (dir / "selfull").string());
    cmd_select(c, log);
    c.set("mask", (dir / "selfull" / "mask.gpsm").string());
    c.set("out", (dir / "ftfull").string());
    const auto full = cmd_finetune(c, log);
    EXPECT_GT(changed_positions(a.tuned, full.tuned), 0u);
    EXPECT_GT(full.delta.entries.size(), a.delta.entries.size());
}

TEST(Eval, CheckpointOnTargetTask) {
    const auto dir = gps::testing::temp_dir("eval");
    RunConfig c = small_config(dir / "pre");
    std::ostringstream log;
    cmd_pretrain(c, log);
    c.set("checkpoint", (dir / "pre" / "base.gpsw").string());
    c.set("out", (dir / "ev").string());
    c.set("data.classes", "3");
    const auto r = cmd_eval(c, log);
    EXPECT_TRUE(r.has_test);
    EXPECT_GE(r.val.accuracy, 0.0);
    EXPECT_NE(slurp(dir / "ev" / "eval.json").find("val_acc"), std::string::npos);
    c.set("data.classes", "4");
    EXPECT_THROW(cmd_eval(c, log), CompatibilityError);
}

TEST(Compare, MatchedBudgetsAcrossStrategies) {
    const auto dir = gps::testing::temp_dir("compare");
    RunConfig c = small_config(dir);
    c.set("compare.strategies", "neuron-topk,net-random,neuron-random,magnitude");
    c.set("compare.k_values", "2");
    std::ostringstream log;
    const auto rows = cmd_compare(c, log);
    ASSERT_EQ(rows.size(), 4u);
    for (const auto& r : rows) {
        EXPECT_EQ(r.status, "ok");
        EXPECT_EQ(r.params, rows[0].params);
    }
    const std::string csv = slurp(dir / "results.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "strategy,budget,params,params_pct,val_acc,val_acc_std,seconds,status");
    EXPECT_TRUE(std::filesystem::exists(dir / "resolved.cfg"));
    EXPECT_TRUE(std::filesystem::exists(dir / "runs" / "neuron-topk_K-2_s3" / "resolved.cfg"));
}

TEST(Compare, FractionRowsMatchTopKBudget) {
    const auto dir = gps::testing::temp_dir("compare-frac");
    RunConfig c = small_config(dir);
    c.set("compare.strategies", "neuron-topk,net-topfrac,layer-topfrac");
    c.set("compare.k_values", "1,3");
    std::ostringstream log;
    const auto rows = cmd_compare(c, log);
    ASSERT_EQ(rows.size(), 6u);
    EXPECT_EQ(rows[0].params, rows[2].params);
    EXPECT_EQ(rows[0].params, rows[4].params);
    EXPECT_EQ(rows[1].params, rows[3].params);
}

TEST(Compare, KSweepIsAffineAndSeedsGiveStd) {
    const auto dir = gps::testing::temp_dir("compare-k");
    RunConfig c = small_config(dir);
    c.set("model.hidden", "8,8");
    c.set("source.dims", "8");
    c.set("data.dims", "8");
    c.set("compare.strategies", "neuron-topk");
    c.set("compare.k_values", "1,2,3,4,5");
    c.set("compare.seeds", "3");
    c.set("train.epochs", "3");
    std::ostringstream log;
    const auto rows = cmd_compare(c, log);
    ASSERT_EQ(rows.size(), 5u);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_GT(rows[i].params, rows[i - 1].params);
        EXPECT_EQ(rows[i].params - rows[i - 1].params, rows[1].params - rows[0].params);
    }
    for (const auto& r : rows) {
        EXPECT_EQ(r.seed_acc.size(), 3u);
        EXPECT_GE(r.val_acc_std, 0.0);
    }
}

TEST(Compare, FailedRowsAreMarkedAndTableStillWritten) {
    const auto dir = gps::testing::temp_dir("compare-fail");
    RunConfig c = small_config(dir);
    c.set("compare.strategies", "linear-only,full");
    c.set("train.lr", "1e300");
    c.set("train.optimizer", "sgd");
    std::ostringstream log;
    const auto rows = cmd_compare(c, log);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_NE(rows[1].status.find("failed"), std::string::npos) << rows[1].status;
    EXPECT_NE(slurp(dir / "results.csv").find("failed"), std::string::npos);
}

TEST(Report, OverlapAndDistribution) {
    const auto dir = gps::testing::temp_dir("report");
    RunConfig c = small_config(dir / "pre");
    std::ostringstream log;
    cmd_pretrain(c, log);
    c.set("base", (dir / "pre" / "base.gpsw").string());
    c.set("out", (dir / "a").string());
    cmd_select(c, log);
    c.set("data.shift", "0");
    c.set("data.seed", "77");
    c.set("out", (dir / "b").string());
    cmd_select(c, log);
    c.set("select.strategy", "full");
    c.set("out", (dir / "all").string());
    cmd_select(c, log);

    const std::string a = (dir / "a" / "mask.gpsm").string(), b = (dir / "b" / "mask.gpsm").string();
    c.set("report.kind", "overlap");
    c.set("report.masks", a + "," + a);
    c.set("out", (dir / "r1").string());
    EXPECT_NE(cmd_report(c, log).find("A,B,all,1,"), std::string::npos);

    c.set("report.masks", a + "," + b);
    const auto masks = std::vector<SelectionMask>{load_mask(a), load_mask(b)};
    const auto o = mask_overlap(masks[0], masks[1]);
    const std::string rep = cmd_report(c, log);
    EXPECT_NE(rep.find("," + std::to_string(o.shared) + "," + std::to_string(o.only_a) + "," +
                       std::to_string(o.only_b) + "," + std::to_string(o.union_size())),
              std::string::npos)
        << rep;
    EXPECT_EQ(o.shared + o.only_a + o.only_b, o.union_size());

    c.set("report.kind", "distribution");
    c.set("report.masks", (dir / "all" / "mask.gpsm").string());
    EXPECT_NE(cmd_report(c, log).find("A,fc0,40,40,"), std::string::npos);
    c.set("report.kind", "histogram");
    EXPECT_THROW(cmd_report(c, log), ConfigError);
}

TEST(Cli, ExitCodes) {
    const auto dir = gps::testing::temp_dir("cli");
    {
        std::ofstream(dir / "bad.cfg") << "nonsense.key = 1\n";
    }
    EXPECT_EQ(run_cli("pretrain --config " + (dir / "bad.cfg").string()), 2);
    EXPECT_EQ(run_cli("select --base " + (dir / "missing.gpsw").string() + " --out " + dir.string()), 3);
    EXPECT_EQ(run_cli("bogus"), 2);
    EXPECT_EQ(run_cli("report --kind overlap --out " + (dir / "r").string()), 2);
    {
        std::ofstream(dir / "tiny.cfg") << "source.dims = 3\nsource.per_class = 10\nmodel.hidden = 4\n"
                                           "pretrain.epochs = 2\npretrain.warmup = 1\n";
    }
    EXPECT_EQ(run_cli("pretrain --config " + (dir / "tiny.cfg").string() + " --out " + (dir / "p").string()), 0);
    {
        std::ofstream(dir / "nan.cfg") << "source.dims = 3\nsource.per_class = 10\nmodel.hidden = 4\n"
                                          "pretrain.epochs = 2\npretrain.warmup = 1\npretrain.lr = 1e300\n"
                                          "pretrain.optimizer = sgd\n";
    }
    EXPECT_EQ(run_cli("pretrain --config " + (dir / "nan.cfg").string() + " --out " + (dir / "n").string()), 4);
}

TEST(Cli, CompareSweepOptions) {
    const auto dir = gps::testing::temp_dir("cli-compare");
    {
        std::ofstream(dir / "run.cfg") << "source.dims = 4\nsource.per_class = 20\ndata.dims = 4\ndata.per_class = 20\n"
                                          "model.hidden = 6\npretrain.epochs = 2\npretrain.warmup = 1\n"
                                          "train.epochs = 2\ntrain.warmup = 1\n";
    }
    ASSERT_EQ(run_cli("compare --config " + (dir / "run.cfg").string() + " --k 1,3 --strategy neuron-topk,magnitude" +
                      " --out " + (dir / "cmp").string()),
              0);
    const std::string csv = slurp(dir / "cmp" / "results.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
    EXPECT_NE(csv.find("magnitude,K=3,"), std::string::npos) << csv;
}
