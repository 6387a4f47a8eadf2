#include "gps/delta.hpp"

#include <bit>

#include "gps/binary_io.hpp"
#include "gps/checkpoint.hpp"
#include "gps/error.hpp"

namespace gps {

SparseDelta export_delta(const Model& base, const Model& tuned, const SelectionMask& mask) {
    check_mask_compatible(mask, base);
    if (base.parameters().size() != tuned.parameters().size()) {
        throw ContractError("export_delta: base and tuned models differ in parameter count");
    }
    SparseDelta delta;
    delta.base_digest = model_digest(base);
    for (std::size_t i = 0; i < base.parameters().size(); ++i) {
        const auto& b = base.parameters()[i];
        const auto& t = tuned.parameters()[i];
        if (b.name != t.name || b.flags != t.flags) {
            throw ContractError("export_delta: parameter #" + std::to_string(i) + " differs between base and tuned");
        }
        if (b.is_head()) {
            delta.head.push_back(t);
            delta.head.back().value.set_requires_grad(false);
            delta.head.back().value.clear_grad();
            continue;
        }
        if (b.value.shape() != t.value.shape()) {
            throw ContractError("export_delta: parameter '" + b.name + "' changed shape");
        }
        const MaskMatrix* m = mask.find(b.name);
        std::uint32_t id = 0;
        bool named = false;
        for (std::size_t k = 0; k < b.value.numel(); ++k) {
            const bool selected = m != nullptr && m->bits[k] != 0;
            if (!selected) {
                if (std::bit_cast<std::uint64_t>(b.value[k]) != std::bit_cast<std::uint64_t>(t.value[k])) {
                    throw IntegrityError("export_delta: '" + b.name + "' changed at unselected flat index " +
                                         std::to_string(k));
                }
                continue;
            }
            if (!named) {
                id = static_cast<std::uint32_t>(delta.names.size());
                delta.names.push_back(b.name);
                named = true;
            }
            delta.entries.push_back({id, k, t.value[k]});
        }
    }
    return delta;
}

Model apply_delta(const Model& base, const SparseDelta& delta) {
    if (model_digest(base) != delta.base_digest) {
        throw CompatibilityError("apply_delta: base checkpoint digest does not match the delta");
    }
    Model out = base;
    std::vector<std::size_t> slots;
    for (const auto& name : delta.names) {
        const Parameter* p = out.find(name);
        if (p == nullptr || p->is_head()) throw FormatError("apply_delta: delta names unknown matrix '" + name + "'");
        slots.push_back(out.index_of(name));
    }
    for (const auto& e : delta.entries) {
        if (e.matrix >= slots.size()) throw FormatError("apply_delta: entry references matrix id " + std::to_string(e.matrix));
        Tensor& t = out.parameters()[slots[e.matrix]].value;
        if (e.index >= t.numel()) {
            throw FormatError("apply_delta: index " + std::to_string(e.index) + " out of range for '" +
                              delta.names[e.matrix] + "'");
        }
        t[static_cast<std::size_t>(e.index)] = e.value;
    }
    std::vector<Parameter> params = out.parameters();
    for (const auto& h : delta.head) {
        bool placed = false;
        for (auto& p : params) {
            if (p.name == h.name && p.is_head()) {
                p.value = h.value;
                placed = true;
            }
        }
        if (!placed) throw FormatError("apply_delta: head tensor '" + h.name + "' not in base model");
    }
    ModelSpec spec = out.spec();
    for (const auto& p : params) {
        if (p.name == "head.bias") spec.classes = p.value.numel();
    }
    return Model(spec, std::move(params));
}

std::vector<std::uint8_t> delta_bytes(const SparseDelta& delta) {
    ByteWriter out;
    out.bytes("GPSD");
    out.u32(kDeltaVersion);
    out.u64(delta.base_digest);
    out.u64(delta.entries.size());
    out.u32(static_cast<std::uint32_t>(delta.names.size()));
    for (const auto& n : delta.names) out.name(n);
    for (const auto& e : delta.entries) {
        out.u32(e.matrix);
        out.u64(e.index);
        out.f64(e.value);
    }
    out.u32(static_cast<std::uint32_t>(delta.head.size()));
    for (const auto& h : delta.head) write_tensor_record(out, h);
    return out.take();
}

SparseDelta parse_delta(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes, "delta");
    in.expect_magic("GPSD");
    const std::uint32_t version = in.u32();
    if (version != kDeltaVersion) throw FormatError("delta: unsupported version " + std::to_string(version));
    SparseDelta d;
    d.base_digest = in.u64();
    const std::uint64_t count = in.u64();
    const std::uint32_t names = in.u32();
    for (std::uint32_t i = 0; i < names; ++i) d.names.push_back(in.name());
    if (count > bytes.size() / 20) in.fail("entry count exceeds file size");
    d.entries.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
        DeltaEntry e;
        e.matrix = in.u32();
        e.index = in.u64();
        e.value = in.f64();
        if (e.matrix >= names) in.fail("entry references matrix id " + std::to_string(e.matrix));
        if (!d.entries.empty()) {
            const auto& prev = d.entries.back();
            if (e.matrix < prev.matrix || (e.matrix == prev.matrix && e.index <= prev.index)) {
                in.fail("entries not strictly sorted by (matrix, index)");
            }
        }
        d.entries.push_back(e);
    }
    const std::uint32_t heads = in.u32();
    for (std::uint32_t i = 0; i < heads; ++i) d.head.push_back(read_tensor_record(in));
    if (!in.at_end()) in.fail("trailing bytes after head block");
    return d;
}

void save_delta(const SparseDelta& delta, const std::filesystem::path& path) { write_file(path, delta_bytes(delta)); }

SparseDelta load_delta(const std::filesystem::path& path) { return parse_delta(read_file(path)); }

MaskOverlap mask_overlap(const SelectionMask& a, const SelectionMask& b) {
    if (a.matrices.size() != b.matrices.size()) {
        throw ContractError("mask_overlap: masks cover " + std::to_string(a.matrices.size()) + " vs " +
                            std::to_string(b.matrices.size()) + " matrices");
    }
    MaskOverlap r;
    for (std::size_t i = 0; i < a.matrices.size(); ++i) {
        const auto& ma = a.matrices[i];
        const auto& mb = b.matrices[i];
        if (ma.name != mb.name || ma.shape != mb.shape) {
            throw ContractError("mask_overlap: matrix #" + std::to_string(i) + " is '" + ma.name + "' " +
                                shape_str(ma.shape) + " vs '" + mb.name + "' " + shape_str(mb.shape));
        }
        OverlapCounts c{ma.name, 0, 0, 0, ma.bits.size()};
        for (std::size_t k = 0; k < ma.bits.size(); ++k) {
            if (ma.bits[k] && mb.bits[k]) ++c.shared;
            else if (ma.bits[k]) ++c.only_a;
            else if (mb.bits[k]) ++c.only_b;
        }
        r.shared += c.shared;
        r.only_a += c.only_a;
        r.only_b += c.only_b;
        const std::string blk = block_of(ma.name);
        if (r.per_block.empty() || r.per_block.back().label != blk) r.per_block.push_back({blk, 0, 0, 0, 0});
        auto& pb = r.per_block.back();
        pb.shared += c.shared;
        pb.only_a += c.only_a;
        pb.only_b += c.only_b;
        pb.total += c.total;
        r.per_matrix.push_back(std::move(c));
    }
    const std::size_t uni = r.union_size();
    r.jaccard = uni == 0 ? 1.0 : static_cast<double>(r.shared) / static_cast<double>(uni);
    return r;
}

std::vector<BlockCount> mask_distribution(const SelectionMask& mask) {
    std::vector<BlockCount> out;
    std::size_t total = 0;
    for (const auto& m : mask.matrices) {
        const std::string blk = block_of(m.name);
        BlockCount* slot = nullptr;
        for (auto& b : out) {
            if (b.block == blk) slot = &b;
        }
        if (slot == nullptr) {
            out.push_back({blk, 0, 0, 0.0, 0.0});
            slot = &out.back();
        }
        const std::size_t sel = m.popcount();
        slot->selected += sel;
        slot->available += m.bits.size();
        total += sel;
    }
    for (auto& b : out) {
        b.fraction_of_selected = total == 0 ? 0.0 : static_cast<double>(b.selected) / static_cast<double>(total);
        b.fraction_of_block = b.available == 0 ? 0.0 : static_cast<double>(b.selected) / static_cast<double>(b.available);
    }
    return out;
}

std::vector<BlockCount> mask_distribution(const SelectionMask& mask, const Model& model) {
    check_mask_compatible(mask, model);
    return mask_distribution(mask);
}

}  // namespace gps
