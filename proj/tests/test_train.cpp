#include <gtest/gtest.h>

#include <bit>
#include <cmath>

#include "gps/error.hpp"
#include "gps/train.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace gps;
using namespace gps::testing;

namespace {

ModelSpec mlp(std::size_t in, std::vector<std::size_t> hidden, std::size_t classes, std::uint64_t seed = 1) {
    ModelSpec s;
    s.input_shape = {in};
    s.hidden = std::move(hidden);
    s.classes = classes;
    s.seed = seed;
    return s;
}

Splits small_task(std::size_t dims, std::size_t classes, std::uint64_t seed, double separation = 4.0) {
    SynthSpec s;
    s.dims = dims;
    s.classes = classes;
    s.per_class = 40;
    s.seed = seed;
    s.separation = separation;
    return synth_task(s);
}

// Textbook Adam with decoupled weight decay, no masking.
struct ReferenceAdam {
    std::vector<double> m, v;
    void step(std::vector<double>& w, const std::vector<double>& g, const TrainConfig& c, std::uint64_t t, double lr) {
        if (m.empty()) {
            m.assign(w.size(), 0.0);
            v.assign(w.size(), 0.0);
        }
        const double c1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            w[i] = w[i] - lr * ((m[i] / c1) / (std::sqrt(v[i] / c2) + c.adam_eps) + c.weight_decay * w[i]);
        }
    }
};

}  // namespace

TEST(MaskedStep, SgdExample) {
    Tensor w = Tensor::matrix({{1, 2}, {3, 4}});
    const std::vector<double> g(4, 10.0);
    const std::vector<std::uint8_t> mask{1, 0, 0, 1};
    ParamState st = ParamState::for_mask(mask);
    TrainConfig c;
    c.optimizer = OptimizerKind::Sgd;
    masked_step(w, g, mask, st, c, 1, 0.1);
    EXPECT_TRUE(w.bitwise_equal(Tensor::matrix({{0, 2}, {3, 3}})));
}

TEST(MaskedStep, ZeroMaskNeverWrites) {
    SplitMix64 rng(40);
    for (OptimizerKind kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
        Tensor w = random_tensor({5, 5}, rng);
        const Tensor before = w;
        const std::vector<std::uint8_t> mask(25, 0);
        ParamState st = ParamState::for_mask(mask);
        EXPECT_TRUE(st.m.empty());
        TrainConfig c;
        c.optimizer = kind;
        c.weight_decay = 0.1;
        for (std::uint64_t t = 1; t <= 20; ++t) {
            const Tensor g = random_tensor({5, 5}, rng);
            masked_step(w, g.data(), mask, st, c, t, 0.5);
        }
        EXPECT_TRUE(w.bitwise_equal(before));
    }
}

TEST(MaskedStep, AllOnesAdamMatchesReferenceBitwise) {
    SplitMix64 rng(41);
    Tensor w = random_tensor({4, 6}, rng);
    std::vector<double> ref = w.values();
    const std::vector<std::uint8_t> mask(24, 1);
    ParamState st = ParamState::for_mask(mask);
    ReferenceAdam adam;
    TrainConfig c;
    c.weight_decay = 0.01;
    for (std::uint64_t t = 1; t <= 10; ++t) {
        const Tensor g = random_tensor({4, 6}, rng);
        const double lr = rng.uniform(1e-4, 1e-2);
        masked_step(w, g.data(), mask, st, c, t, lr);
        adam.step(ref, g.values(), c, t, lr);
    }
    for (std::size_t i = 0; i < 24; ++i) EXPECT_EQ(std::bit_cast<std::uint64_t>(w[i]), std::bit_cast<std::uint64_t>(ref[i]));
}

TEST(MaskedStep, ShapeMismatchAndStepZero) {
    Tensor w(Shape{2, 2});
    std::vector<std::uint8_t> mask(4, 1);
    ParamState st = ParamState::for_mask(mask);
    TrainConfig c;
    EXPECT_THROW(masked_step(w, std::vector<double>(3), mask, st, c, 1, 0.1), ContractError);
    EXPECT_THROW(masked_step(w, std::vector<double>(4), std::vector<std::uint8_t>(5, 1), st, c, 1, 0.1), ContractError);
    EXPECT_THROW(masked_step(w, std::vector<double>(4), mask, st, c, 0, 0.1), ContractError);
}

TEST(LrSchedule, WarmupAndCosine) {
    const LrSchedule s{0.1, 10, 110};
    EXPECT_DOUBLE_EQ(s.at(4), 0.05);
    EXPECT_EQ(s.at(10), 0.1);
    EXPECT_NEAR(s.at(109), 0.1 * 0.5 * (1 + std::cos(M_PI * 99.0 / 100.0)), 1e-17);
    EXPECT_LT(s.at(109), 1e-4);
    EXPECT_THROW(s.at(110), ContractError);
    const LrSchedule no_warm{0.1, 0, 4};
    EXPECT_EQ(no_warm.at(0), 0.1);
    TrainConfig c;
    c.base_lr = 0.2;
    c.epochs = 4;
    c.warmup_epochs = 2;
    EXPECT_DOUBLE_EQ(lr_at(1, 12, c, 3), 0.2 * 2.0 / 6.0);
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    c.warmup_epochs = 60;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.base_lr = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(parse_optimizer("lbfgs"), ConfigError);
}

TEST(Finetune, ZeroEpochsLeavesModelUnchanged) {
    const Splits t = small_task(4, 3, 1);
    const Model m = build_model(mlp(4, {8}, 3));
    TrainConfig c;
    c.epochs = 0;
    c.warmup_epochs = 0;
    const auto r = finetune(m, select_full(m), t.train, t.val, c);
    EXPECT_TRUE(r.model.bitwise_equal(m));
    EXPECT_TRUE(r.history.empty());
}

TEST(Finetune, ZeroMaskAndFrozenHeadIsIdentity) {
    const Splits t = small_task(4, 3, 2);
    const Model m = build_model(mlp(4, {8}, 3));
    TrainConfig c;
    c.epochs = 3;
    c.warmup_epochs = 1;
    c.freeze_head = true;
    const auto r = finetune(m, select_linear_only(m), t.train, t.val, c);
    EXPECT_TRUE(r.model.bitwise_equal(m));
    EXPECT_EQ(r.history.size(), 3u);
}

TEST(Finetune, FrozenComplementHistoryAndDeterminism) {
    const Splits t = small_task(5, 3, 3);
    const Model m = build_model(mlp(5, {8, 8}, 3));
    SelectionConfig sc;
    sc.k = 2;
    const auto mask = select(m, t.train, sc);
    TrainConfig c;
    c.epochs = 6;
    c.warmup_epochs = 2;
    c.batch_size = 16;
    c.weight_decay = 0.05;
    const auto a = finetune(m, mask, t.train, t.val, c);
    const auto b = finetune(m, mask, t.train, t.val, c);
    EXPECT_TRUE(a.model.bitwise_equal(b.model));
    verify_frozen_complement(m, a.model, mask);
    EXPECT_LE(changed_positions(m, a.model), mask.popcount());
    EXPECT_GT(changed_positions(m, a.model), 0u);
    ASSERT_EQ(a.history.size(), 6u);
    const std::size_t spe = (t.train.size() + 15) / 16;
    for (std::size_t e = 0; e < 6; ++e) {
        EXPECT_EQ(a.history[e].epoch, e);
        EXPECT_EQ(a.history[e].lr, lr_at((e + 1) * spe - 1, 6 * spe, c, spe));
        EXPECT_EQ(metrics_json(a.history[e]), metrics_json(b.history[e]));
    }
    EXPECT_TRUE(m.param("fc0.bias").value.bitwise_equal(a.model.param("fc0.bias").value));
}

TEST(Finetune, VerifyCatchesTampering) {
    const Model m = build_model(mlp(3, {4}, 2));
    const auto mask = select_linear_only(m);
    Model tampered = m;
    tampered.param("fc0.weight").value[2] += 1e-12;
    EXPECT_THROW(verify_frozen_complement(m, tampered, mask), IntegrityError);
    Model bias = m;
    bias.param("fc0.bias").value[0] = 1.0;
    EXPECT_THROW(verify_frozen_complement(m, bias, mask), IntegrityError);
    Model head = m;
    head.param("head.weight").value[0] = 7.0;
    EXPECT_NO_THROW(verify_frozen_complement(m, head, mask));
}

TEST(Finetune, NonFiniteLossIsNumericError) {
    Splits t = small_task(3, 2, 4);
    t.train.samples[0] = std::nan("");
    const Model m = build_model(mlp(3, {4}, 2));
    TrainConfig c;
    c.epochs = 2;
    c.warmup_epochs = 0;
    try {
        finetune(m, select_full(m), t.train, t.val, c);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos);
    }
}

TEST(Finetune, HeadClassMismatch) {
    const Splits t = small_task(3, 2, 5);
    const Model m = build_model(mlp(3, {4}, 3));
    EXPECT_THROW(finetune(m, select_full(m), t.train, t.val, TrainConfig{}), ContractError);
}

TEST(Finetune, TopKBeatsLinearProbeOnTwoClassTask) {
    SynthSpec s;
    s.generator = Generator::XorGrid;
    s.dims = 2;
    s.classes = 2;
    s.per_class = 100;
    s.seed = 6;
    const Splits t = synth_task(s);
    const Model m = build_model(mlp(2, {16, 16}, 2, 6));
    TrainConfig c;
    c.base_lr = 0.01;
    c.epochs = 50;
    c.warmup_epochs = 5;
    c.seed = 6;
    SelectionConfig sc;
    sc.k = 1;
    const auto gps = finetune(m, select(m, t.train, sc), t.train, t.val, c);
    const auto probe = finetune(m, select_linear_only(m), t.train, t.val, c);
    EXPECT_GT(evaluate(gps.model, t.val).accuracy, evaluate(probe.model, t.val).accuracy);
}

TEST(Evaluate, ConstantPredictorAndDeterminism) {
    Model m = build_model(mlp(3, {4}, 3));
    for (auto& v : m.param("head.weight").value.data()) v = 0.0;
    m.param("head.bias").value[2] = 1.0;
    SplitMix64 rng(42);
    Dataset d{random_tensor({10, 3}, rng), std::vector<std::size_t>(10, 2), 3, "one"};
    EXPECT_EQ(evaluate(m, d).accuracy, 1.0);
    const auto a = evaluate(m, d), b = evaluate(m, d);
    EXPECT_EQ(a.mean_loss, b.mean_loss);
    Dataset empty{Tensor(Shape{0, 3}), {}, 3, "e"};
    EXPECT_THROW(evaluate(m, empty), InputError);
}

TEST(Evaluate, RandomModelIsNearChance) {
    const std::size_t c = 4, n = 4000;
    const Model m = build_model(mlp(6, {8}, c, 43));
    SplitMix64 rng(43);
    Dataset d{random_tensor({n, 6}, rng), {}, c, "bal"};
    for (std::size_t i = 0; i < n; ++i) d.labels.push_back(i % c);
    const double acc = evaluate(m, d).accuracy;
    const double sigma = std::sqrt(0.25 * 0.75 / static_cast<double>(n));
    EXPECT_LT(std::abs(acc - 0.25), 5 * sigma);
}

TEST(Metrics, JsonLineFields) {
    const EpochRecord r{3, 0.5, 0.75, 0.001};
    EXPECT_EQ(metrics_json(r), R"({"epoch":3,"train_loss":0.5,"val_acc":0.75,"lr":0.001})");
}
