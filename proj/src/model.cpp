#include "gps/model.hpp"

#include <cmath>

#include "gps/error.hpp"
#include "gps/rng.hpp"

namespace gps {

std::string_view to_string(Architecture arch) noexcept {
    switch (arch) {
        case Architecture::Mlp: return "mlp";
        case Architecture::Cnn: return "cnn";
        case Architecture::TinyTransformer: return "tiny-transformer";
    }
    return "unknown";
}

Architecture parse_architecture(std::string_view name) {
    if (name == "mlp") return Architecture::Mlp;
    if (name == "cnn") return Architecture::Cnn;
    if (name == "tiny-transformer" || name == "transformer") return Architecture::TinyTransformer;
    throw ConfigError("unknown architecture '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
    auto positive = [](std::size_t v, const char* what) {
        if (v == 0) throw ConfigError(std::string("model: ") + what + " must be >= 1");
    };
    if (input_shape.empty()) throw ConfigError("model: input shape is empty");
    for (std::size_t d : input_shape) positive(d, "input dimensions");
    positive(classes, "class count");
    switch (architecture) {
        case Architecture::Mlp:
            if (hidden.empty()) throw ConfigError("model: mlp needs at least one hidden layer");
            for (std::size_t h : hidden) positive(h, "hidden widths");
            break;
        case Architecture::Cnn:
            if (input_shape.size() != 3) {
                throw ConfigError("model: cnn input shape must be C x H x W, got " + shape_str(input_shape));
            }
            if (hidden.empty()) throw ConfigError("model: cnn needs at least one conv layer");
            for (std::size_t h : hidden) positive(h, "channel counts");
            positive(kernel, "kernel size");
            if (kernel % 2 == 0) throw ConfigError("model: cnn kernel size must be odd");
            break;
        case Architecture::TinyTransformer:
            if (input_shape.size() != 2) {
                throw ConfigError("model: tiny-transformer input shape must be tokens x features, got " +
                                  shape_str(input_shape));
            }
            positive(dim, "embedding dim");
            positive(heads, "head count");
            positive(depth, "depth");
            positive(mlp_ratio, "mlp ratio");
            if (dim % heads != 0) {
                throw ConfigError("model: embedding dim " + std::to_string(dim) + " not divisible by " +
                                  std::to_string(heads) + " heads");
            }
            break;
    }
}

bool Parameter::is_bias() const noexcept {
    constexpr std::string_view suffix = ".bias";
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string block_of(std::string_view name) {
    return std::string(name.substr(0, name.find('.')));
}

Model::Model(ModelSpec spec, std::vector<Parameter> params) : spec_(std::move(spec)), params_(std::move(params)) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (params_[i].name == params_[j].name) {
                throw ConfigError("duplicate parameter name '" + params_[i].name + "'");
            }
        }
    }
}

const Parameter* Model::find(std::string_view name) const noexcept {
    for (const auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

std::size_t Model::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name == name) return i;
    }
    throw ContractError("model has no parameter '" + std::string(name) + "'");
}

Parameter& Model::param(std::string_view name) { return params_[index_of(name)]; }
const Parameter& Model::param(std::string_view name) const { return params_[index_of(name)]; }

std::size_t Model::selectable_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (p.selectable()) n += p.value.numel();
    }
    return n;
}

std::size_t Model::bias_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (p.is_bias() && !p.is_head()) n += p.value.numel();
    }
    return n;
}

std::size_t Model::head_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (p.is_head()) n += p.value.numel();
    }
    return n;
}

std::size_t Model::total_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

void Model::set_requires_grad(bool on) noexcept {
    for (auto& p : params_) p.value.set_requires_grad(on);
}

void Model::clear_grads() noexcept {
    for (auto& p : params_) p.value.clear_grad();
}

bool Model::bitwise_equal(const Model& other) const noexcept {
    if (params_.size() != other.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& a = params_[i];
        const auto& b = other.params_[i];
        if (a.name != b.name || a.flags != b.flags || !a.value.bitwise_equal(b.value)) return false;
    }
    return true;
}

namespace {

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed, std::string_view name) {
    Tensor t(std::move(shape));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    SplitMix64 rng = SplitMix64::substream(seed, name);
    for (double& v : t.data()) v = rng.uniform(-limit, limit);
    return t;
}

class ParamBuilder {
  public:
    explicit ParamBuilder(std::uint64_t seed) : seed_(seed) {}

    void linear(const std::string& prefix, std::size_t in, std::size_t out, std::uint8_t flags = 0) {
        const std::string w = prefix + ".weight";
        params.push_back({w, glorot_uniform({in, out}, in, out, seed_, w), flags});
        params.push_back({prefix + ".bias", Tensor(Shape{out}), static_cast<std::uint8_t>(flags | kNonSelectableFlag)});
        if (flags & kHeadFlag) {
            params.back().flags = kHeadFlag;
        }
    }

    void conv(const std::string& prefix, std::size_t cin, std::size_t cout, std::size_t k) {
        const std::string w = prefix + ".weight";
        params.push_back({w, glorot_uniform({cout, cin, k, k}, cin * k * k, cout * k * k, seed_, w), 0});
        params.push_back({prefix + ".bias", Tensor(Shape{cout}), kNonSelectableFlag});
    }

    void norm(const std::string& prefix, std::size_t d) {
        params.push_back({prefix + ".gamma", Tensor(Shape{d}, 1.0), kNonSelectableFlag});
        params.push_back({prefix + ".beta", Tensor(Shape{d}), kNonSelectableFlag});
    }

    void table(const std::string& name, std::size_t rows, std::size_t cols) {
        params.push_back({name, glorot_uniform({rows, cols}, rows, cols, seed_, name), kNonSelectableFlag});
    }

    std::vector<Parameter> params;

  private:
    std::uint64_t seed_;
};

std::size_t embedding_width(const ModelSpec& spec) {
    switch (spec.architecture) {
        case Architecture::Mlp:
        case Architecture::Cnn: return spec.hidden.back();
        case Architecture::TinyTransformer: return spec.dim;
    }
    return 0;
}

}  // namespace

Model build_model(const ModelSpec& spec) {
    spec.validate();
    ParamBuilder b(spec.seed);
    switch (spec.architecture) {
        case Architecture::Mlp: {
            std::size_t in = shape_numel(spec.input_shape);
            for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
                b.linear("fc" + std::to_string(i), in, spec.hidden[i]);
                in = spec.hidden[i];
            }
            break;
        }
        case Architecture::Cnn: {
            std::size_t in = spec.input_shape[0];
            for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
                b.conv("conv" + std::to_string(i), in, spec.hidden[i], spec.kernel);
                in = spec.hidden[i];
            }
            break;
        }
        case Architecture::TinyTransformer: {
            const std::size_t d = spec.dim;
            b.linear("embed", spec.input_shape[1], d);
            b.table("embed.pos", spec.input_shape[0], d);
            for (std::size_t i = 0; i < spec.depth; ++i) {
                const std::string blk = "block" + std::to_string(i);
                b.norm(blk + ".ln1", d);
                b.linear(blk + ".attn.q", d, d);
                b.linear(blk + ".attn.k", d, d);
                b.linear(blk + ".attn.v", d, d);
                b.linear(blk + ".attn.o", d, d);
                b.norm(blk + ".ln2", d);
                b.linear(blk + ".mlp.fc1", d, d * spec.mlp_ratio);
                b.linear(blk + ".mlp.fc2", d * spec.mlp_ratio, d);
            }
            b.norm("norm", d);
            break;
        }
    }
    b.linear("head", embedding_width(spec), spec.classes, kHeadFlag);
    return Model(spec, std::move(b.params));
}

void Model::reset_head(std::size_t classes, std::uint64_t seed) {
    if (classes == 0) throw ConfigError("reset_head: class count must be >= 1");
    const std::size_t width = embedding_width(spec_);
    Parameter& w = param("head.weight");
    Parameter& b = param("head.bias");
    w.value = glorot_uniform({width, classes}, width, classes, seed, "head.weight");
    b.value = Tensor(Shape{classes});
    spec_.classes = classes;
}

namespace {

template <typename ModelT>
ForwardOutput forward_impl(Graph& g, ModelT& model, const Tensor& batch) {
    const ModelSpec& spec = model.spec();
    const std::size_t per_sample = shape_numel(spec.input_shape);
    if (batch.rank() == 0 || batch.dim(0) == 0 || batch.numel() != batch.dim(0) * per_sample) {
        throw DimensionError("forward: batch " + shape_str(batch.shape()) + " does not match input shape " +
                             shape_str(spec.input_shape));
    }
    const std::size_t bsz = batch.dim(0);
    auto p = [&](std::string_view name) { return g.leaf(model.param(name).value); };
    auto linear = [&](Var x, const std::string& prefix) {
        return add_bias(matmul(x, p(prefix + ".weight")), p(prefix + ".bias"), 1);
    };

    Var z;
    switch (spec.architecture) {
        case Architecture::Mlp: {
            Var x = g.constant(batch.reshaped({bsz, per_sample}));
            for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
                x = gelu(linear(x, "fc" + std::to_string(i)));
            }
            z = x;
            break;
        }
        case Architecture::Cnn: {
            Shape s{bsz};
            s.insert(s.end(), spec.input_shape.begin(), spec.input_shape.end());
            Var x = g.constant(batch.reshaped(s));
            for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
                const std::string prefix = "conv" + std::to_string(i);
                x = gelu(add_bias(conv2d(x, p(prefix + ".weight"), 1, spec.kernel / 2), p(prefix + ".bias"), 1));
            }
            const Shape& xs = x.shape();
            z = mean_axis(reshape(x, {xs[0], xs[1], xs[2] * xs[3]}), 2);
            break;
        }
        case Architecture::TinyTransformer: {
            const std::size_t tokens = spec.input_shape[0];
            const std::size_t feats = spec.input_shape[1];
            const std::size_t d = spec.dim;
            const std::size_t heads = spec.heads;
            const std::size_t dh = d / heads;
            const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
            Var x = g.constant(batch.reshaped({bsz * tokens, feats}));
            x = linear(x, "embed");
            x = add_trailing(reshape(x, {bsz, tokens, d}), p("embed.pos"));
            x = reshape(x, {bsz * tokens, d});
            auto split_heads = [&](Var t) {
                return reshape(permute(reshape(t, {bsz, tokens, heads, dh}), {0, 2, 1, 3}), {bsz * heads, tokens, dh});
            };
            for (std::size_t i = 0; i < spec.depth; ++i) {
                const std::string blk = "block" + std::to_string(i);
                Var h = layer_norm(x, p(blk + ".ln1.gamma"), p(blk + ".ln1.beta"));
                Var q = split_heads(linear(h, blk + ".attn.q"));
                Var k = split_heads(linear(h, blk + ".attn.k"));
                Var v = split_heads(linear(h, blk + ".attn.v"));
                Var attn = softmax(scale(bmm(q, permute(k, {0, 2, 1})), attn_scale));
                Var ctx = bmm(attn, v);
                ctx = reshape(permute(reshape(ctx, {bsz, heads, tokens, dh}), {0, 2, 1, 3}), {bsz * tokens, d});
                x = add(x, linear(ctx, blk + ".attn.o"));
                Var h2 = layer_norm(x, p(blk + ".ln2.gamma"), p(blk + ".ln2.beta"));
                x = add(x, linear(gelu(linear(h2, blk + ".mlp.fc1")), blk + ".mlp.fc2"));
            }
            x = layer_norm(x, p("norm.gamma"), p("norm.beta"));
            z = mean_axis(reshape(x, {bsz, tokens, d}), 1);
            break;
        }
    }
    return {linear(z, "head"), z};
}

}  // namespace

ForwardOutput forward(Graph& graph, Model& model, const Tensor& batch) { return forward_impl(graph, model, batch); }

ForwardOutput forward(Graph& graph, const Model& model, const Tensor& batch) {
    return forward_impl(graph, model, batch);
}

std::size_t NeuronMap::total_connections() const noexcept {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.connections.size();
    return n;
}

NeuronMap enumerate_neurons(const Model& model) {
    NeuronMap map;
    const auto& params = model.parameters();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const Parameter& p = params[pi];
        if (!p.selectable()) continue;
        const Shape& s = p.value.shape();
        if (s.size() == 2) {
            const std::size_t din = s[0], dout = s[1];
            for (std::size_t j = 0; j < dout; ++j) {
                NeuronEntry e{pi, p.name, j, {}};
                e.connections.reserve(din);
                for (std::size_t i = 0; i < din; ++i) e.connections.push_back(i * dout + j);
                map.entries.push_back(std::move(e));
            }
        } else if (s.size() == 4) {
            const std::size_t block = s[1] * s[2] * s[3];
            for (std::size_t c = 0; c < s[0]; ++c) {
                NeuronEntry e{pi, p.name, c, {}};
                e.connections.reserve(block);
                for (std::size_t i = 0; i < block; ++i) e.connections.push_back(c * block + i);
                map.entries.push_back(std::move(e));
            }
        } else {
            throw ContractError("enumerate_neurons: selectable tensor '" + p.name + "' has unsupported shape " +
                                shape_str(s));
        }
    }
    return map;
}

}  // namespace gps
