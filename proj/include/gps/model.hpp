#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gps/autodiff.hpp"
#include "gps/tensor.hpp"

namespace gps {

enum class Architecture { Mlp, Cnn, TinyTransformer };

std::string_view to_string(Architecture arch) noexcept;
Architecture parse_architecture(std::string_view name);

struct ModelSpec {
    Architecture architecture = Architecture::Mlp;
    // Per-sample input shape: mlp any (flattened), cnn C x H x W, tiny-transformer tokens x features.
    Shape input_shape;
    // mlp: hidden widths; cnn: conv channel counts.
    std::vector<std::size_t> hidden;
    std::size_t dim = 16;
    std::size_t heads = 4;
    std::size_t depth = 1;
    std::size_t mlp_ratio = 4;
    std::size_t kernel = 3;
    std::size_t classes = 2;
    std::uint64_t seed = 0;

    void validate() const;
};

enum ParamFlag : std::uint8_t {
    kHeadFlag = 1u << 0,
    kNonSelectableFlag = 1u << 1,
};

struct Parameter {
    std::string name;
    Tensor value;
    std::uint8_t flags = 0;

    bool is_head() const noexcept { return (flags & kHeadFlag) != 0; }
    bool selectable() const noexcept { return flags == 0; }
    bool is_bias() const noexcept;
};

// Block label of a parameter name: everything before the first '.'.
std::string block_of(std::string_view name);

class Model {
  public:
    Model() = default;
    Model(ModelSpec spec, std::vector<Parameter> params);

    const ModelSpec& spec() const noexcept { return spec_; }
    std::vector<Parameter>& parameters() noexcept { return params_; }
    const std::vector<Parameter>& parameters() const noexcept { return params_; }

    Parameter& param(std::string_view name);
    const Parameter& param(std::string_view name) const;
    const Parameter* find(std::string_view name) const noexcept;
    std::size_t index_of(std::string_view name) const;

    std::size_t selectable_count() const noexcept;
    std::size_t bias_count() const noexcept;
    std::size_t head_count() const noexcept;
    std::size_t total_count() const noexcept;

    void set_requires_grad(bool on) noexcept;
    void clear_grads() noexcept;

    // Replaces the classifier with a freshly initialised one for `classes` outputs.
    void reset_head(std::size_t classes, std::uint64_t seed);

    bool bitwise_equal(const Model& other) const noexcept;

  private:
    ModelSpec spec_;
    std::vector<Parameter> params_;
};

Model build_model(const ModelSpec& spec);

struct ForwardOutput {
    Var logits;
    Var embedding;
};

// batch: leading dim B, remaining elements must match the spec's input shape.
// Parameters bind as leaves; those with requires_grad receive gradients on backward.
ForwardOutput forward(Graph& graph, Model& model, const Tensor& batch);
ForwardOutput forward(Graph& graph, const Model& model, const Tensor& batch);

struct NeuronEntry {
    std::size_t param_index = 0;
    std::string matrix;
    std::size_t neuron = 0;
    std::vector<std::size_t> connections;
};

struct NeuronMap {
    std::vector<NeuronEntry> entries;

    std::size_t total_connections() const noexcept;
};

// Linear weights are d_in x d_out and neuron j owns column j; conv kernels are
// Cout x Cin x kh x kw and output channel c owns the contiguous block c.
NeuronMap enumerate_neurons(const Model& model);

}  // namespace gps
