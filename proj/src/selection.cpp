#include "gps/selection.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "gps/binary_io.hpp"
#include "gps/error.hpp"
#include "gps/rng.hpp"

namespace gps {

std::string_view to_string(LossKind kind) noexcept {
    return kind == LossKind::Scl ? "scl" : "ce-with-head";
}

LossKind parse_loss_kind(std::string_view name) {
    if (name == "scl") return LossKind::Scl;
    if (name == "ce-with-head" || name == "ce") return LossKind::CeWithHead;
    throw ConfigError("unknown selection loss '" + std::string(name) + "'");
}

namespace {
constexpr std::string_view kStrategyNames[] = {
    "neuron-topk", "net-topfrac", "layer-topfrac", "net-random", "neuron-random",
    "magnitude",   "bias-only",   "linear-only",   "full",
};
}  // namespace

std::string_view to_string(Strategy s) noexcept {
    const auto i = static_cast<std::size_t>(s);
    return i < std::size(kStrategyNames) ? kStrategyNames[i] : "unknown";
}

Strategy parse_strategy(std::string_view name) {
    for (std::size_t i = 0; i < std::size(kStrategyNames); ++i) {
        if (kStrategyNames[i] == name) return static_cast<Strategy>(i);
    }
    throw ConfigError("unknown selection strategy '" + std::string(name) + "'");
}

bool uses_k(Strategy s) noexcept {
    return s == Strategy::NeuronTopK || s == Strategy::NeuronRandom || s == Strategy::Magnitude;
}

bool uses_fraction(Strategy s) noexcept { return s == Strategy::NetTopFrac || s == Strategy::LayerTopFrac; }

bool needs_snapshot(Strategy s) noexcept {
    return s == Strategy::NeuronTopK || s == Strategy::NetTopFrac || s == Strategy::LayerTopFrac;
}

const MatrixBuffer* GradientSnapshot::find(std::string_view name) const noexcept {
    for (const auto& m : matrices) {
        if (m.name == name) return &m;
    }
    return nullptr;
}

std::size_t GradientSnapshot::size() const noexcept {
    std::size_t n = 0;
    for (const auto& m : matrices) n += m.values.size();
    return n;
}

std::uint64_t GradientSnapshot::id() const noexcept {
    std::uint64_t h = fnv1a64("GPSG");
    for (const auto& m : matrices) {
        h = fnv1a64(m.name, h);
        for (double v : m.values) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            char raw[8];
            for (int b = 0; b < 8; ++b) raw[b] = static_cast<char>(bits >> (8 * b));
            h = fnv1a64(std::string_view(raw, 8), h);
        }
    }
    return h;
}

GradientSnapshot GradientSnapshot::scaled(double factor) const {
    GradientSnapshot out = *this;
    for (auto& m : out.matrices)
        for (double& v : m.values) v *= factor;
    return out;
}

std::size_t MaskMatrix::popcount() const noexcept {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
}

const MaskMatrix* SelectionMask::find(std::string_view name) const noexcept {
    for (const auto& m : matrices) {
        if (m.name == name) return &m;
    }
    return nullptr;
}

std::size_t SelectionMask::popcount() const noexcept {
    std::size_t n = 0;
    for (const auto& m : matrices) n += m.popcount();
    return n;
}

std::size_t SelectionMask::selected_weights(const Model& model) const {
    std::size_t n = 0;
    for (const auto& m : matrices) {
        const Parameter* p = model.find(m.name);
        if (p != nullptr && p->selectable()) n += m.popcount();
    }
    return n;
}

bool SelectionMask::same_bits(const SelectionMask& other) const noexcept {
    if (matrices.size() != other.matrices.size()) return false;
    for (std::size_t i = 0; i < matrices.size(); ++i) {
        const auto& a = matrices[i];
        const auto& b = other.matrices[i];
        if (a.name != b.name || a.shape != b.shape || a.bits != b.bits) return false;
    }
    return true;
}

void SelectionConfig::validate() const {
    if (uses_k(strategy) && k == 0) throw ConfigError("selection: K must be >= 1");
    if (uses_fraction(strategy) && !(p > 0.0 && p <= 1.0)) {
        throw ConfigError("selection: fraction p must be in (0, 1], got " + std::to_string(p));
    }
    if (strategy == Strategy::NetRandom && count == 0 && k == 0) {
        throw ConfigError("selection: net-random needs a count or K for budget matching");
    }
    if (needs_snapshot(strategy)) {
        if (!(tau > 0.0)) throw ConfigError("selection: temperature must be positive");
        if (batch_size < 4 && loss == LossKind::Scl) throw ConfigError("selection: batch size must be >= 4");
        if (batch_size == 0) throw ConfigError("selection: batch size must be >= 1");
    }
}

Var scl_loss(Var embeddings, std::span<const std::size_t> labels, double tau) {
    if (!(tau > 0.0)) throw ConfigError("scl_loss: temperature must be positive, got " + std::to_string(tau));
    const Shape& s = embeddings.shape();
    if (s.size() != 2) throw DimensionError("scl_loss: embeddings must be B x d, got " + shape_str(s));
    const std::size_t b = s[0];
    if (b < 2) throw InputError("scl_loss: batch needs at least 2 samples, got " + std::to_string(b));
    if (labels.size() != b) {
        throw DimensionError("scl_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(b) +
                             " embeddings");
    }

    Var zn = normalize_rows(embeddings);
    Var sim = matmul(zn, transpose(zn));
    const Tensor& sv = sim.value();

    // coef[i][j] = d loss / d (s_ij / tau); built alongside the forward value.
    std::vector<double> coef(b * b, 0.0);
    double total = 0.0;
    std::vector<double> logits(b);
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t positives = 0;
        for (std::size_t j = 0; j < b; ++j) {
            if (j != i && labels[j] == labels[i]) ++positives;
        }
        if (positives == 0) continue;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < b; ++j) {
            logits[j] = sv[i * b + j] / tau;
            if (j != i) mx = std::max(mx, logits[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < b; ++j) {
            if (j != i) z += std::exp(logits[j] - mx);
        }
        const double lse = mx + std::log(z);
        const double inv_p = 1.0 / static_cast<double>(positives);
        double term = 0.0;
        for (std::size_t j = 0; j < b; ++j) {
            if (j == i) continue;
            const double softmax_ij = std::exp(logits[j] - lse);
            coef[i * b + j] = softmax_ij;
            if (labels[j] == labels[i]) {
                term += logits[j] - lse;
                coef[i * b + j] -= inv_p;
            }
        }
        total += -inv_p * term;
    }
    return sim.graph()->record("scl", {sim}, Tensor::scalar(total), [coef = std::move(coef), tau](BackwardContext& ctx) {
        auto gin = ctx.input_grad(0);
        const double go = ctx.out_grad()[0] / tau;
        for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += go * coef[i];
    });
}

GradientSnapshot accumulate_gradients(const Model& model, const Dataset& data,
                                      const std::vector<std::vector<std::size_t>>& batches, LossKind loss, double tau) {
    if (data.size() == 0 || batches.empty()) throw InputError("accumulate_gradients: empty selection dataset");
    Model work = model;
    GradientSnapshot snap;
    snap.loss = loss;
    snap.dataset_id = data.split;
    for (auto& p : work.parameters()) {
        p.value.set_requires_grad(p.selectable());
        if (p.selectable()) snap.matrices.push_back({p.name, p.value.shape(), std::vector<double>(p.value.numel(), 0.0)});
    }
    for (const auto& batch : batches) {
        if (batch.empty()) continue;
        Graph g;
        const Tensor x = data.gather(batch);
        const auto y = data.gather_labels(batch);
        ForwardOutput out = forward(g, work, x);
        Var l = loss == LossKind::Scl ? scl_loss(out.embedding, y, tau)
                                      : softmax_cross_entropy(out.logits, y, Reduction::Sum);
        g.backward(l);
        std::size_t mi = 0;
        for (auto& p : work.parameters()) {
            if (!p.selectable()) continue;
            auto& acc = snap.matrices[mi++].values;
            auto grad = p.value.grad();
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += grad[i];
        }
        ++snap.batch_count;
    }
    for (const auto& m : snap.matrices) {
        for (double v : m.values) {
            if (!std::isfinite(v)) throw NumericError("non-finite selection gradient in matrix '" + m.name + "'");
        }
    }
    return snap;
}

GradientSnapshot accumulate_gradients(const Model& model, const Dataset& data, const SelectionConfig& config) {
    if (data.size() == 0) throw InputError("accumulate_gradients: empty selection dataset");
    std::vector<std::vector<std::size_t>> batches;
    if (config.loss == LossKind::Scl) {
        batches = balanced_batches(data, config.batch_size, config.seed);
    } else {
        if (config.batch_size == 0) throw ConfigError("selection batch size must be >= 1");
        for (std::size_t b = 0; b < data.size(); b += config.batch_size) {
            std::vector<std::size_t> idx;
            for (std::size_t i = b; i < std::min(data.size(), b + config.batch_size); ++i) idx.push_back(i);
            batches.push_back(std::move(idx));
        }
    }
    GradientSnapshot snap = accumulate_gradients(model, data, batches, config.loss, config.tau);
    snap.seed = config.seed;
    return snap;
}

std::size_t neuron_topk_budget(const NeuronMap& map, std::size_t k) noexcept {
    std::size_t n = 0;
    for (const auto& e : map.entries) n += std::min(k, e.connections.size());
    return n;
}

std::size_t fraction_count(double p, std::size_t n) {
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("fraction p must be in (0, 1], got " + std::to_string(p));
    const double raw = p * static_cast<double>(n) * (1.0 - 1e-12);
    const auto c = static_cast<std::size_t>(std::ceil(raw));
    return std::clamp<std::size_t>(c, n == 0 ? 0 : 1, n);
}

namespace {

struct Ranked {
    double magnitude;
    std::size_t order;  // matrix order for net-level ranking, 0 otherwise
    std::size_t index;
};

bool ranks_before(const Ranked& a, const Ranked& b) noexcept {
    if (a.magnitude != b.magnitude) return a.magnitude > b.magnitude;
    if (a.order != b.order) return a.order < b.order;
    return a.index < b.index;
}

SelectionMask empty_mask_like(const GradientSnapshot& snapshot, Strategy strategy) {
    SelectionMask mask;
    mask.strategy = strategy;
    mask.source_snapshot = snapshot.id();
    for (const auto& m : snapshot.matrices) {
        mask.matrices.push_back({m.name, m.shape, std::vector<std::uint8_t>(m.values.size(), 0)});
    }
    return mask;
}

SelectionMask empty_mask_like(const Model& model, Strategy strategy) {
    SelectionMask mask;
    mask.strategy = strategy;
    for (const auto& p : model.parameters()) {
        if (p.selectable()) mask.matrices.push_back({p.name, p.value.shape(), std::vector<std::uint8_t>(p.value.numel(), 0)});
    }
    return mask;
}

void check_finite(const GradientSnapshot& snapshot) {
    for (const auto& m : snapshot.matrices) {
        for (double v : m.values) {
            if (!std::isfinite(v)) throw NumericError("snapshot matrix '" + m.name + "' has a non-finite value");
        }
    }
}

std::size_t matrix_slot(const SelectionMask& mask, const std::string& name) {
    for (std::size_t i = 0; i < mask.matrices.size(); ++i) {
        if (mask.matrices[i].name == name) return i;
    }
    throw ContractError("neuron map references matrix '" + name + "' missing from the snapshot");
}

}  // namespace

SelectionMask select_neuron_topk(const GradientSnapshot& snapshot, const NeuronMap& map, std::size_t k) {
    if (k == 0) throw ConfigError("neuron-topk: K must be >= 1");
    check_finite(snapshot);
    SelectionMask mask = empty_mask_like(snapshot, Strategy::NeuronTopK);
    mask.k = static_cast<std::uint32_t>(k);
    mask.seed = snapshot.seed;

    std::vector<std::size_t> covered(mask.matrices.size(), 0);
    std::vector<Ranked> ranked;
    for (const auto& e : map.entries) {
        const std::size_t slot = matrix_slot(mask, e.matrix);
        const auto& grads = snapshot.matrices[slot].values;
        ranked.clear();
        for (std::size_t idx : e.connections) {
            if (idx >= grads.size()) {
                throw ContractError("neuron map index " + std::to_string(idx) + " outside matrix '" + e.matrix + "'");
            }
            ranked.push_back({std::abs(grads[idx]), 0, idx});
        }
        const std::size_t take = std::min(k, ranked.size());
        std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end(), ranks_before);
        for (std::size_t t = 0; t < take; ++t) mask.matrices[slot].bits[ranked[t].index] = 1;
        covered[slot] += e.connections.size();
    }
    for (std::size_t s = 0; s < covered.size(); ++s) {
        if (covered[s] != mask.matrices[s].bits.size()) {
            throw ContractError("neuron map does not cover snapshot matrix '" + mask.matrices[s].name + "'");
        }
    }
    return mask;
}

SelectionMask select_net_topfrac(const GradientSnapshot& snapshot, double p) {
    check_finite(snapshot);
    SelectionMask mask = empty_mask_like(snapshot, Strategy::NetTopFrac);
    mask.p = p;
    mask.seed = snapshot.seed;
    const std::size_t take = fraction_count(p, snapshot.size());
    std::vector<Ranked> ranked;
    ranked.reserve(snapshot.size());
    for (std::size_t m = 0; m < snapshot.matrices.size(); ++m) {
        const auto& v = snapshot.matrices[m].values;
        for (std::size_t i = 0; i < v.size(); ++i) ranked.push_back({std::abs(v[i]), m, i});
    }
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end(), ranks_before);
    for (std::size_t t = 0; t < take; ++t) mask.matrices[ranked[t].order].bits[ranked[t].index] = 1;
    return mask;
}

SelectionMask select_layer_topfrac(const GradientSnapshot& snapshot, double p) {
    check_finite(snapshot);
    SelectionMask mask = empty_mask_like(snapshot, Strategy::LayerTopFrac);
    mask.p = p;
    mask.seed = snapshot.seed;
    std::vector<Ranked> ranked;
    for (std::size_t m = 0; m < snapshot.matrices.size(); ++m) {
        const auto& v = snapshot.matrices[m].values;
        const std::size_t take = fraction_count(p, v.size());
        ranked.clear();
        for (std::size_t i = 0; i < v.size(); ++i) ranked.push_back({std::abs(v[i]), 0, i});
        std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end(), ranks_before);
        for (std::size_t t = 0; t < take; ++t) mask.matrices[m].bits[ranked[t].index] = 1;
    }
    return mask;
}

SelectionMask select_random(const Model& model, const NeuronMap& map, Strategy scheme, std::size_t budget,
                            std::uint64_t seed) {
    SelectionMask mask = empty_mask_like(model, scheme);
    mask.seed = seed;
    SplitMix64 rng = SplitMix64::substream(seed, "random-selection");
    if (scheme == Strategy::NeuronRandom) {
        if (budget == 0) throw ConfigError("neuron-random: K must be >= 1");
        mask.k = static_cast<std::uint32_t>(budget);
        std::vector<std::size_t> pool;
        for (const auto& e : map.entries) {
            const std::size_t slot = matrix_slot(mask, e.matrix);
            pool = e.connections;
            const std::size_t take = std::min(budget, pool.size());
            for (std::size_t t = 0; t < take; ++t) {
                const std::size_t j = t + static_cast<std::size_t>(rng.uniform_index(pool.size() - t));
                std::swap(pool[t], pool[j]);
                mask.matrices[slot].bits[pool[t]] = 1;
            }
        }
    } else if (scheme == Strategy::NetRandom) {
        std::size_t total = 0;
        for (const auto& m : mask.matrices) total += m.bits.size();
        if (budget > total) {
            throw ConfigError("net-random: budget " + std::to_string(budget) + " exceeds " + std::to_string(total) +
                              " selectable parameters");
        }
        mask.count = budget;
        std::vector<std::size_t> pool(total);
        for (std::size_t i = 0; i < total; ++i) pool[i] = i;
        std::vector<std::size_t> offsets;
        std::size_t off = 0;
        for (const auto& m : mask.matrices) {
            offsets.push_back(off);
            off += m.bits.size();
        }
        for (std::size_t t = 0; t < budget; ++t) {
            const std::size_t j = t + static_cast<std::size_t>(rng.uniform_index(total - t));
            std::swap(pool[t], pool[j]);
            const std::size_t flat = pool[t];
            const std::size_t slot =
                static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin()) - 1;
            mask.matrices[slot].bits[flat - offsets[slot]] = 1;
        }
    } else {
        throw ConfigError("select_random: scheme must be net-random or neuron-random");
    }
    return mask;
}

SelectionMask select_magnitude(const Model& model, const NeuronMap& map, std::size_t k) {
    GradientSnapshot weights;
    for (const auto& p : model.parameters()) {
        if (p.selectable()) weights.matrices.push_back({p.name, p.value.shape(), p.value.values()});
    }
    SelectionMask mask = select_neuron_topk(weights, map, k);
    mask.strategy = Strategy::Magnitude;
    mask.source_snapshot = 0;
    return mask;
}

SelectionMask select_bias_only(const Model& model) {
    SelectionMask mask = empty_mask_like(model, Strategy::BiasOnly);
    for (const auto& p : model.parameters()) {
        if (p.is_bias() && !p.is_head()) {
            mask.matrices.push_back({p.name, p.value.shape(), std::vector<std::uint8_t>(p.value.numel(), 1)});
        }
    }
    return mask;
}

SelectionMask select_linear_only(const Model& model) { return empty_mask_like(model, Strategy::LinearOnly); }

SelectionMask select_full(const Model& model) {
    SelectionMask mask;
    mask.strategy = Strategy::Full;
    for (const auto& p : model.parameters()) {
        if (!p.is_head()) mask.matrices.push_back({p.name, p.value.shape(), std::vector<std::uint8_t>(p.value.numel(), 1)});
    }
    return mask;
}

SelectionMask select(const Model& model, const GradientSnapshot* snapshot, const SelectionConfig& config) {
    config.validate();
    const NeuronMap map = enumerate_neurons(model);
    auto need = [&]() -> const GradientSnapshot& {
        if (snapshot == nullptr) throw ContractError(std::string(to_string(config.strategy)) + " needs a gradient snapshot");
        return *snapshot;
    };
    SelectionMask mask;
    switch (config.strategy) {
        case Strategy::NeuronTopK: mask = select_neuron_topk(need(), map, config.k); break;
        case Strategy::NetTopFrac: mask = select_net_topfrac(need(), config.p); break;
        case Strategy::LayerTopFrac: mask = select_layer_topfrac(need(), config.p); break;
        case Strategy::NetRandom:
            mask = select_random(model, map, Strategy::NetRandom,
                                 config.count != 0 ? config.count : neuron_topk_budget(map, config.k), config.seed);
            break;
        case Strategy::NeuronRandom: mask = select_random(model, map, Strategy::NeuronRandom, config.k, config.seed); break;
        case Strategy::Magnitude: mask = select_magnitude(model, map, config.k); break;
        case Strategy::BiasOnly: mask = select_bias_only(model); break;
        case Strategy::LinearOnly: mask = select_linear_only(model); break;
        case Strategy::Full: mask = select_full(model); break;
    }
    mask.seed = config.seed;
    return mask;
}

SelectionMask select(const Model& model, const Dataset& selection_set, const SelectionConfig& config) {
    config.validate();
    if (!needs_snapshot(config.strategy)) return select(model, nullptr, config);
    const GradientSnapshot snap = accumulate_gradients(model, selection_set, config);
    return select(model, &snap, config);
}

void check_mask_compatible(const SelectionMask& mask, const Model& model) {
    for (const auto& m : mask.matrices) {
        const Parameter* p = model.find(m.name);
        if (p == nullptr) throw ContractError("mask matrix '" + m.name + "' is not a model parameter");
        if (p->is_head()) throw ContractError("mask matrix '" + m.name + "' is a head parameter");
        if (p->value.shape() != m.shape || m.bits.size() != p->value.numel()) {
            throw ContractError("mask matrix '" + m.name + "' has shape " + shape_str(m.shape) + ", parameter has " +
                                shape_str(p->value.shape()));
        }
        for (auto b : m.bits) {
            if (b > 1) throw ContractError("mask matrix '" + m.name + "' holds a non-binary value");
        }
    }
}

std::vector<std::uint8_t> mask_bytes(const SelectionMask& mask) {
    ByteWriter out;
    out.bytes("GPSM");
    out.u32(kMaskVersion);
    out.u8(static_cast<std::uint8_t>(mask.strategy));
    if (uses_fraction(mask.strategy)) {
        out.f64(mask.p);
    } else if (mask.strategy == Strategy::NetRandom) {
        if (mask.count > 0xffffffffULL) throw FormatError("net-random count does not fit the mask header");
        out.u32(static_cast<std::uint32_t>(mask.count));
    } else {
        out.u32(mask.k);
    }
    out.u64(mask.seed);
    out.u32(static_cast<std::uint32_t>(mask.matrices.size()));
    for (const auto& m : mask.matrices) {
        out.name(m.name);
        out.u8(static_cast<std::uint8_t>(m.shape.size()));
        for (std::size_t d : m.shape) out.u64(d);
        std::uint8_t byte = 0;
        for (std::size_t i = 0; i < m.bits.size(); ++i) {
            if (m.bits[i]) byte |= static_cast<std::uint8_t>(1u << (i % 8));
            if (i % 8 == 7) {
                out.u8(byte);
                byte = 0;
            }
        }
        if (m.bits.size() % 8 != 0) out.u8(byte);
    }
    return out.take();
}

SelectionMask parse_mask(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes, "mask");
    in.expect_magic("GPSM");
    const std::uint32_t version = in.u32();
    if (version != kMaskVersion) throw FormatError("mask: unsupported version " + std::to_string(version));
    SelectionMask mask;
    const std::uint8_t code = in.u8();
    if (code >= std::size(kStrategyNames)) in.fail("unknown strategy code " + std::to_string(code));
    mask.strategy = static_cast<Strategy>(code);
    if (uses_fraction(mask.strategy)) {
        mask.p = in.f64();
    } else if (mask.strategy == Strategy::NetRandom) {
        mask.count = in.u32();
    } else {
        mask.k = in.u32();
    }
    mask.seed = in.u64();
    const std::uint32_t count = in.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        MaskMatrix m;
        m.name = in.name();
        m.shape.resize(in.u8());
        for (auto& d : m.shape) {
            const std::uint64_t v = in.u64();
            if (v > (std::uint64_t{1} << 40)) in.fail("implausible dimension in mask matrix '" + m.name + "'");
            d = static_cast<std::size_t>(v);
        }
        const std::size_t n = shape_numel(m.shape);
        auto packed = in.raw((n + 7) / 8);
        m.bits.resize(n);
        for (std::size_t j = 0; j < n; ++j) m.bits[j] = (packed[j / 8] >> (j % 8)) & 1u;
        mask.matrices.push_back(std::move(m));
    }
    if (!in.at_end()) in.fail("trailing bytes after last matrix");
    return mask;
}

void save_mask(const SelectionMask& mask, const std::filesystem::path& path) { write_file(path, mask_bytes(mask)); }

SelectionMask load_mask(const std::filesystem::path& path) { return parse_mask(read_file(path)); }

}  // namespace gps
