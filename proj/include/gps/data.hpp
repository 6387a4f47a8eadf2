#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gps/rng.hpp"
#include "gps/tensor.hpp"

namespace gps {

struct Dataset {
    Tensor samples;  // N x sample shape
    std::vector<std::size_t> labels;
    std::size_t classes = 0;
    std::string split;

    std::size_t size() const noexcept { return labels.size(); }
    Shape sample_shape() const;
    // Throws InputError on inconsistent labels/shape; optionally requires every class present.
    void validate(bool require_all_classes) const;

    Tensor gather(std::span<const std::size_t> indices) const;
    std::vector<std::size_t> gather_labels(std::span<const std::size_t> indices) const;
    Dataset subset(std::span<const std::size_t> indices, std::string split_tag) const;
};

// IDX pair: images magic 0x00000803 (N, rows, cols), labels magic 0x00000801 (N).
// Pixels are scaled to [0, 1]; samples have shape N x 1 x rows x cols.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels);

struct CsvOptions {
    // Column index (negative counts from the end) or a header name when has_header is set.
    std::string label_column = "-1";
    bool has_header = false;
};

// Features are all non-label columns in order; labels map to 0..C-1 by first appearance.
Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options = {});

enum class Generator { GaussianBlobs, TwoRings, XorGrid };

std::string_view to_string(Generator g) noexcept;
Generator parse_generator(std::string_view name);

struct SynthSpec {
    Generator generator = Generator::GaussianBlobs;
    std::size_t dims = 2;
    std::size_t classes = 2;
    std::size_t per_class = 100;
    double label_noise = 0.0;
    std::uint64_t seed = 0;
    // Scale of the class structure (blob mean spread, ring spacing, grid half-width).
    double separation = 4.0;
    // Standard deviation of the per-sample noise.
    double spread = 1.0;
    // Class structure lives in dims [shift, shift + informative); 0 informative means all.
    std::size_t informative = 0;
    std::size_t shift = 0;

    void validate() const;
};

struct Splits {
    Dataset train;
    Dataset val;
    Dataset test;
};

// Deterministic for a fixed spec; 60/20/20 split stratified by class, features
// standardised with training-split statistics.
Splits synth_task(const SynthSpec& spec);

// 60/20/20 split of a loaded dataset, stratified by label, seeded; no standardisation.
Splits stratified_split(const Dataset& all, std::uint64_t seed);

// Per-feature standardisation fitted on one split and applied to others.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> inv_std;

    static Standardizer fit(const Dataset& train);
    void apply(Dataset& data) const;
};

// Index batches for one epoch of supervised-contrastive sampling: every class in a
// batch has at least two members, each sample appears exactly once, seeded order.
std::vector<std::vector<std::size_t>> balanced_batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed);

// Plain shuffled minibatches over [0, n); the last batch may be short.
std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch_size, SplitMix64& rng);

void shuffle_indices(std::vector<std::size_t>& v, SplitMix64& rng);

}  // namespace gps
