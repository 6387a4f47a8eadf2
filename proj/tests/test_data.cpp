#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "gps/binary_io.hpp"
#include "gps/data.hpp"
#include "gps/error.hpp"
#include "gps/selection.hpp"
#include "gps/train.hpp"
#include "support.hpp"

using namespace gps;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p);
    out << s;
}

void be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

}  // namespace

TEST(Csv, LabelsByFirstAppearance) {
    const auto dir = gps::testing::temp_dir("csv");
    write_text(dir / "a.csv", "1.0,2.0,a\n3.0,4.0,b\n5.0,6.0,a\n");
    const Dataset d = load_csv(dir / "a.csv");
    EXPECT_EQ(d.classes, 2u);
    EXPECT_EQ(d.labels, (std::vector<std::size_t>{0, 1, 0}));
    EXPECT_EQ(d.samples.shape(), (Shape{3, 2}));
    EXPECT_EQ(d.samples[3], 4.0);
}

TEST(Csv, HeaderAndNamedLabelColumn) {
    const auto dir = gps::testing::temp_dir("csv-header");
    write_text(dir / "h.csv", "kind,x,y\ncat,1,2\n\"dog\",3,4\n");
    CsvOptions opts;
    opts.has_header = true;
    opts.label_column = "kind";
    const Dataset d = load_csv(dir / "h.csv", opts);
    EXPECT_EQ(d.labels, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(d.samples.shape(), (Shape{2, 2}));
    opts.label_column = "missing";
    EXPECT_THROW(load_csv(dir / "h.csv", opts), ConfigError);
}

TEST(Csv, RaggedRowAndBadCellNameTheLine) {
    const auto dir = gps::testing::temp_dir("csv-bad");
    write_text(dir / "r.csv", "1,2,a\n3,4,b\n5,a\n");
    try {
        load_csv(dir / "r.csv");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
    write_text(dir / "n.csv", "1,2,a\n3,x,b\n");
    try {
        load_csv(dir / "n.csv");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(load_csv(dir / "none.csv"), InputError);
}

TEST(Csv, RoundTripOfRandomValues) {
    const auto dir = gps::testing::temp_dir("csv-rt");
    SplitMix64 rng(11);
    std::vector<double> expect;
    std::string text;
    char buf[64];
    for (int r = 0; r < 100; ++r) {
        for (int c = 0; c < 4; ++c) {
            const double v = rng.uniform(-1e3, 1e3);
            expect.push_back(v);
            std::snprintf(buf, sizeof buf, "%.17g,", v);
            text += buf;
        }
        text += std::to_string(r % 3) + "\n";
    }
    write_text(dir / "rt.csv", text);
    const Dataset d = load_csv(dir / "rt.csv");
    ASSERT_EQ(d.samples.numel(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(d.samples[i], expect[i], 1e-12);
}

TEST(Idx, HandBuiltPair) {
    const auto dir = gps::testing::temp_dir("idx");
    std::vector<std::uint8_t> img, lab;
    be32(img, 0x803);
    be32(img, 2);
    be32(img, 2);
    be32(img, 3);
    for (int i = 0; i < 12; ++i) img.push_back(static_cast<std::uint8_t>(i * 20));
    be32(lab, 0x801);
    be32(lab, 2);
    lab.push_back(1);
    lab.push_back(0);
    write_file(dir / "img", img);
    write_file(dir / "lab", lab);
    const Dataset d = load_idx(dir / "img", dir / "lab");
    EXPECT_EQ(d.samples.shape(), (Shape{2, 1, 2, 3}));
    EXPECT_EQ(d.labels, (std::vector<std::size_t>{1, 0}));
    EXPECT_EQ(d.samples[1], 20.0 / 255.0);
    for (double v : d.samples.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }

    std::vector<std::uint8_t> lab3;
    be32(lab3, 0x801);
    be32(lab3, 3);
    lab3.insert(lab3.end(), {0, 1, 0});
    write_file(dir / "lab3", lab3);
    EXPECT_THROW(load_idx(dir / "img", dir / "lab3"), FormatError);
    auto badmagic = img;
    badmagic[3] = 0x04;
    write_file(dir / "bad", badmagic);
    EXPECT_THROW(load_idx(dir / "bad", dir / "lab"), FormatError);
}

TEST(Idx, WriterRoundTripIsStable) {
    const auto dir = gps::testing::temp_dir("idx-rt");
    SplitMix64 rng(12);
    Dataset d;
    d.samples = Tensor(Shape{5, 1, 4, 4});
    for (auto& v : d.samples.data()) v = static_cast<double>(rng.uniform_index(256)) / 255.0;
    d.labels = {0, 1, 2, 1, 0};
    d.classes = 3;
    write_idx(d, dir / "i", dir / "l");
    const Dataset back = load_idx(dir / "i", dir / "l");
    EXPECT_TRUE(back.samples.bitwise_equal(d.samples));
    EXPECT_EQ(back.labels, d.labels);
    write_idx(back, dir / "i2", dir / "l2");
    EXPECT_EQ(read_file(dir / "i"), read_file(dir / "i2"));
}

TEST(Synth, DeterministicAndStratified) {
    for (Generator gen : {Generator::GaussianBlobs, Generator::TwoRings, Generator::XorGrid}) {
        SynthSpec s;
        s.generator = gen;
        s.dims = 3;
        s.classes = 3;
        s.per_class = 50;
        s.seed = 4;
        const Splits a = synth_task(s), b = synth_task(s);
        EXPECT_TRUE(a.train.samples.bitwise_equal(b.train.samples));
        EXPECT_TRUE(a.test.samples.bitwise_equal(b.test.samples));
        EXPECT_EQ(a.val.labels, b.val.labels);
        EXPECT_EQ(a.train.size(), 90u);
        EXPECT_EQ(a.val.size(), 30u);
        EXPECT_EQ(a.test.size(), 30u);
        std::vector<std::size_t> counts(3, 0);
        for (auto l : a.train.labels) ++counts[l];
        for (auto c : counts) EXPECT_EQ(c, 30u);
        // standardised with training statistics
        for (std::size_t j = 0; j < 3; ++j) {
            double m = 0;
            for (std::size_t i = 0; i < a.train.size(); ++i) m += a.train.samples[i * 3 + j];
            EXPECT_NEAR(m / static_cast<double>(a.train.size()), 0.0, 1e-12);
        }
    }
}

TEST(Synth, LabelNoiseRate) {
    SynthSpec s;
    s.classes = 4;
    s.per_class = 2500;
    s.seed = 5;
    s.label_noise = 0.1;
    const Splits noisy = synth_task(s);
    s.label_noise = 0.0;
    const Splits clean = synth_task(s);
    std::size_t flipped = 0, n = 0;
    for (const auto* pair : {&noisy.train, &noisy.val, &noisy.test}) {
        const Dataset& c = pair == &noisy.train ? clean.train : (pair == &noisy.val ? clean.val : clean.test);
        ASSERT_TRUE(pair->samples.bitwise_equal(c.samples));
        for (std::size_t i = 0; i < c.size(); ++i) flipped += pair->labels[i] != c.labels[i];
        n += c.size();
    }
    const double rate = static_cast<double>(flipped) / static_cast<double>(n);
    const double sigma = std::sqrt(0.1 * 0.9 / static_cast<double>(n));
    EXPECT_LT(std::abs(rate - 0.1), 5 * sigma);
}

TEST(Synth, InvalidSpecs) {
    SynthSpec s;
    s.classes = 1;
    EXPECT_THROW(synth_task(s), ConfigError);
    s = SynthSpec{};
    s.label_noise = 0.5;
    EXPECT_THROW(synth_task(s), ConfigError);
    EXPECT_THROW(parse_generator("moons"), ConfigError);
}

TEST(Synth, SeparatedBlobsAreLinearlySeparable) {
    SynthSpec s;
    s.dims = 4;
    s.classes = 3;
    s.per_class = 100;
    s.separation = 12;
    s.seed = 6;
    const Splits sp = synth_task(s);
    ModelSpec ms;
    ms.input_shape = {4};
    ms.hidden = {16};
    ms.classes = 3;
    ms.seed = 6;
    const Model m = build_model(ms);
    TrainConfig tc;
    tc.base_lr = 0.05;
    tc.epochs = 30;
    tc.warmup_epochs = 3;
    const FinetuneResult r = finetune(m, select_linear_only(m), sp.train, sp.val, tc);
    EXPECT_GE(evaluate(r.model, sp.val).accuracy, 0.99);
}

TEST(StratifiedSplit, KeepsClassProportions) {
    Dataset d;
    d.samples = Tensor(Shape{50, 1});
    for (std::size_t i = 0; i < 50; ++i) {
        d.samples[i] = static_cast<double>(i);
        d.labels.push_back(i < 20 ? 0 : 1);
    }
    d.classes = 2;
    const Splits s = stratified_split(d, 3);
    EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), 50u);
    std::size_t zeros = 0;
    for (auto l : s.train.labels) zeros += l == 0;
    EXPECT_EQ(zeros, 12u);
    std::set<double> seen;
    for (const auto* part : {&s.train, &s.val, &s.test})
        for (double v : part->samples.data()) EXPECT_TRUE(seen.insert(v).second);
}

TEST(BalancedBatches, TwoClassesOfEight) {
    Dataset d;
    d.samples = Tensor(Shape{16, 1});
    for (std::size_t i = 0; i < 16; ++i) d.labels.push_back(i % 2);
    d.classes = 2;
    const auto batches = balanced_batches(d, 4, 1);
    std::set<std::size_t> seen;
    for (const auto& b : batches) {
        ASSERT_EQ(b.size(), 4u);
        std::size_t ones = 0;
        for (auto i : b) {
            ones += d.labels[i];
            EXPECT_TRUE(seen.insert(i).second);
        }
        EXPECT_EQ(ones, 2u);
    }
    EXPECT_EQ(seen.size(), 16u);
    EXPECT_EQ(balanced_batches(d, 4, 1), batches);
}

TEST(BalancedBatches, PartitionWithPairsForManyClasses) {
    SynthSpec s;
    s.classes = 5;
    s.per_class = 23;
    s.seed = 8;
    const Dataset d = synth_task(s).train;
    for (std::size_t bs : {4u, 7u, 16u, 32u}) {
        const auto batches = balanced_batches(d, bs, 9);
        std::vector<int> seen(d.size(), 0);
        for (const auto& b : batches) {
            std::vector<std::size_t> per(d.classes, 0);
            for (auto i : b) {
                ++seen[i];
                ++per[d.labels[i]];
            }
            for (auto c : per) EXPECT_NE(c, 1u);
        }
        for (int c : seen) EXPECT_EQ(c, 1);
    }
}

TEST(BalancedBatches, Errors) {
    Dataset d;
    d.samples = Tensor(Shape{6, 1});
    d.labels = {0, 0, 0, 1, 1, 2};
    d.classes = 3;
    EXPECT_THROW(balanced_batches(d, 3, 1), ConfigError);
    EXPECT_THROW(balanced_batches(d, 4, 1), InputError);
}
