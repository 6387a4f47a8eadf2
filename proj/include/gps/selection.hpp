#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gps/autodiff.hpp"
#include "gps/data.hpp"
#include "gps/model.hpp"

namespace gps {

enum class LossKind : std::uint8_t { Scl, CeWithHead };

std::string_view to_string(LossKind kind) noexcept;
LossKind parse_loss_kind(std::string_view name);

// Byte values are the on-disk strategy codes of the mask file.
enum class Strategy : std::uint8_t {
    NeuronTopK = 0,
    NetTopFrac = 1,
    LayerTopFrac = 2,
    NetRandom = 3,
    NeuronRandom = 4,
    Magnitude = 5,
    BiasOnly = 6,
    LinearOnly = 7,
    Full = 8,
};

std::string_view to_string(Strategy s) noexcept;
Strategy parse_strategy(std::string_view name);
bool uses_k(Strategy s) noexcept;
bool uses_fraction(Strategy s) noexcept;
bool needs_snapshot(Strategy s) noexcept;

struct MatrixBuffer {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

// Accumulated selection-loss gradient for every selectable matrix.
struct GradientSnapshot {
    std::vector<MatrixBuffer> matrices;
    LossKind loss = LossKind::Scl;
    std::string dataset_id;
    std::size_t batch_count = 0;
    std::uint64_t seed = 0;

    const MatrixBuffer* find(std::string_view name) const noexcept;
    std::size_t size() const noexcept;
    std::uint64_t id() const noexcept;
    GradientSnapshot scaled(double factor) const;
};

struct MaskMatrix {
    std::string name;
    Shape shape;
    std::vector<std::uint8_t> bits;  // one byte per element, 0 or 1

    std::size_t popcount() const noexcept;
};

struct SelectionMask {
    std::vector<MaskMatrix> matrices;
    Strategy strategy = Strategy::NeuronTopK;
    std::uint32_t k = 0;
    double p = 0.0;
    std::uint64_t count = 0;
    std::uint64_t seed = 0;
    std::uint64_t source_snapshot = 0;

    const MaskMatrix* find(std::string_view name) const noexcept;
    std::size_t popcount() const noexcept;
    // Ones inside selectable weight matrices only.
    std::size_t selected_weights(const Model& model) const;
    bool same_bits(const SelectionMask& other) const noexcept;
};

struct SelectionConfig {
    Strategy strategy = Strategy::NeuronTopK;
    std::size_t k = 1;
    double p = 0.01;
    // net-random budget; 0 means "match neuron-topk with the same k".
    std::size_t count = 0;
    double tau = 0.07;
    LossKind loss = LossKind::Scl;
    std::uint64_t seed = 0;
    std::size_t batch_size = 32;

    void validate() const;
};

// Supervised contrastive loss over row-normalised embeddings, summed over anchors.
// Anchors without a same-class partner contribute nothing.
Var scl_loss(Var embeddings, std::span<const std::size_t> labels, double tau);

// One pass over `data`; per-batch gradients of the selection loss are summed.
GradientSnapshot accumulate_gradients(const Model& model, const Dataset& data, const SelectionConfig& config);
GradientSnapshot accumulate_gradients(const Model& model, const Dataset& data,
                                      const std::vector<std::vector<std::size_t>>& batches, LossKind loss, double tau);

std::size_t neuron_topk_budget(const NeuronMap& map, std::size_t k) noexcept;
// ceil(p * n) with a relative guard against p = c / n rounding up to c + 1.
std::size_t fraction_count(double p, std::size_t n);

SelectionMask select_neuron_topk(const GradientSnapshot& snapshot, const NeuronMap& map, std::size_t k);
SelectionMask select_net_topfrac(const GradientSnapshot& snapshot, double p);
SelectionMask select_layer_topfrac(const GradientSnapshot& snapshot, double p);
// scheme is NetRandom (budget = parameter count) or NeuronRandom (budget = K per neuron).
SelectionMask select_random(const Model& model, const NeuronMap& map, Strategy scheme, std::size_t budget,
                            std::uint64_t seed);
SelectionMask select_magnitude(const Model& model, const NeuronMap& map, std::size_t k);
// Baselines: bias vectors only / nothing besides the head / every non-head tensor.
SelectionMask select_bias_only(const Model& model);
SelectionMask select_linear_only(const Model& model);
SelectionMask select_full(const Model& model);

// Builds the mask for `config`, computing a snapshot on `selection_set` when the strategy needs one.
SelectionMask select(const Model& model, const Dataset& selection_set, const SelectionConfig& config);
SelectionMask select(const Model& model, const GradientSnapshot* snapshot, const SelectionConfig& config);

// Throws ContractError unless every mask matrix names a non-head tensor of identical shape.
void check_mask_compatible(const SelectionMask& mask, const Model& model);

// "GPSM" mask file.
inline constexpr std::uint32_t kMaskVersion = 1;
std::vector<std::uint8_t> mask_bytes(const SelectionMask& mask);
SelectionMask parse_mask(std::span<const std::uint8_t> bytes);
void save_mask(const SelectionMask& mask, const std::filesystem::path& path);
SelectionMask load_mask(const std::filesystem::path& path);

}  // namespace gps
