#include "gps/checkpoint.hpp"

#include <string_view>

#include "gps/binary_io.hpp"
#include "gps/error.hpp"
#include "gps/rng.hpp"

namespace gps {

std::vector<std::uint8_t> checkpoint_bytes(const Model& model) {
    ByteWriter out;
    out.bytes("GPSW");
    out.u32(kCheckpointVersion);
    out.u32(static_cast<std::uint32_t>(model.parameters().size()));
    for (const auto& p : model.parameters()) {
        write_tensor_record(out, p);
    }
    return out.take();
}

std::vector<Parameter> parse_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes, "checkpoint");
    in.expect_magic("GPSW");
    const std::uint32_t version = in.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = in.u32();
    std::vector<Parameter> params;
    for (std::uint32_t i = 0; i < count; ++i) {
        params.push_back(read_tensor_record(in));
    }
    if (!in.at_end()) {
        in.fail("trailing bytes after last tensor");
    }
    return params;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    write_file(path, checkpoint_bytes(model));
}

std::vector<Parameter> read_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

Model model_from_parameters(const ModelSpec& spec, std::vector<Parameter> params) {
    Model model = build_model(spec);
    auto& expected = model.parameters();
    const std::size_t n = std::min(expected.size(), params.size());
    for (std::size_t i = 0; i < n; ++i) {
        const Parameter& want = expected[i];
        const Parameter& got = params[i];
        if (got.name != want.name) {
            throw DimensionError("checkpoint tensor #" + std::to_string(i) + " is '" + got.name + "', model expects '" +
                                 want.name + "'");
        }
        if (got.value.shape() != want.value.shape()) {
            throw DimensionError("checkpoint tensor '" + got.name + "' has shape " + shape_str(got.value.shape()) +
                                 ", model expects " + shape_str(want.value.shape()));
        }
        if (got.flags != want.flags) {
            throw DimensionError("checkpoint tensor '" + got.name + "' has flags " + std::to_string(got.flags) +
                                 ", model expects " + std::to_string(want.flags));
        }
    }
    if (params.size() != expected.size()) {
        const std::string name = params.size() > expected.size() ? params[n].name : expected[n].name;
        throw DimensionError("checkpoint has " + std::to_string(params.size()) + " tensors, model expects " +
                             std::to_string(expected.size()) + " (first unmatched: '" + name + "')");
    }
    for (std::size_t i = 0; i < n; ++i) {
        expected[i].value = std::move(params[i].value);
    }
    return model;
}

Model load_checkpoint(const std::filesystem::path& path, const ModelSpec& spec) {
    return model_from_parameters(spec, read_checkpoint(path));
}

std::uint64_t model_digest(const Model& model) {
    const auto bytes = checkpoint_bytes(model);
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::size_t head_classes(const std::vector<Parameter>& params) noexcept {
    for (const auto& p : params) {
        if (p.name == "head.bias" && p.value.rank() == 1) return p.value.dim(0);
    }
    return 0;
}

}  // namespace gps
