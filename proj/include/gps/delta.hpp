#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gps/model.hpp"
#include "gps/selection.hpp"

namespace gps {

struct DeltaEntry {
    std::uint32_t matrix = 0;  // index into SparseDelta::names
    std::uint64_t index = 0;
    double value = 0.0;
};

// A fine-tuned task as base checkpoint + absolute values at the masked positions
// + the dense classifier.
struct SparseDelta {
    std::uint64_t base_digest = 0;
    std::vector<std::string> names;
    std::vector<DeltaEntry> entries;  // sorted by (matrix, index), unique
    std::vector<Parameter> head;
};

SparseDelta export_delta(const Model& base, const Model& tuned, const SelectionMask& mask);
Model apply_delta(const Model& base, const SparseDelta& delta);

// "GPSD" delta file.
inline constexpr std::uint32_t kDeltaVersion = 1;
std::vector<std::uint8_t> delta_bytes(const SparseDelta& delta);
SparseDelta parse_delta(std::span<const std::uint8_t> bytes);
void save_delta(const SparseDelta& delta, const std::filesystem::path& path);
SparseDelta load_delta(const std::filesystem::path& path);

struct OverlapCounts {
    std::string label;
    std::size_t shared = 0;
    std::size_t only_a = 0;
    std::size_t only_b = 0;
    std::size_t total = 0;
};

struct MaskOverlap {
    double jaccard = 1.0;
    std::size_t shared = 0;
    std::size_t only_a = 0;
    std::size_t only_b = 0;
    std::vector<OverlapCounts> per_matrix;
    std::vector<OverlapCounts> per_block;

    std::size_t union_size() const noexcept { return shared + only_a + only_b; }
};

// Jaccard |a & b| / |a | b| (1.0 when both are empty) plus shared/unique breakdowns.
MaskOverlap mask_overlap(const SelectionMask& a, const SelectionMask& b);

struct BlockCount {
    std::string block;
    std::size_t selected = 0;
    std::size_t available = 0;
    double fraction_of_selected = 0.0;
    double fraction_of_block = 0.0;
};

// Selected-parameter histogram grouped by block (parameter name prefix), in model order.
std::vector<BlockCount> mask_distribution(const SelectionMask& mask);
std::vector<BlockCount> mask_distribution(const SelectionMask& mask, const Model& model);

}  // namespace gps
