#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gps/model.hpp"

namespace gps {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "GPSW", u32 version, u32 tensor count, then one tensor record per parameter.
std::vector<std::uint8_t> checkpoint_bytes(const Model& model);
std::vector<Parameter> parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
std::vector<Parameter> read_checkpoint(const std::filesystem::path& path);

// Rebuilds a model for `spec` and fills it from `params`; names, order, flags and
// shapes must agree. A mismatch names the first offending tensor.
Model model_from_parameters(const ModelSpec& spec, std::vector<Parameter> params);
Model load_checkpoint(const std::filesystem::path& path, const ModelSpec& spec);

// FNV-1a over the checkpoint byte stream.
std::uint64_t model_digest(const Model& model);

// Class count implied by a stored head, 0 when there is none.
std::size_t head_classes(const std::vector<Parameter>& params) noexcept;

}  // namespace gps
