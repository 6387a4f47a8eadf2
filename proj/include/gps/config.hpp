#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "gps/data.hpp"
#include "gps/model.hpp"
#include "gps/selection.hpp"
#include "gps/train.hpp"

namespace gps {

// Flat key=value run description. Every known key has a default; unknown keys are rejected.
class RunConfig {
  public:
    RunConfig();

    static RunConfig parse(std::string_view text, std::string_view origin = "config");
    static RunConfig load(const std::filesystem::path& path);

    void set(std::string_view key, std::string_view value);
    const std::string& get(std::string_view key) const;
    bool is_known(std::string_view key) const noexcept;
    static std::vector<std::string> known_keys();

    std::string get_string(std::string_view key) const { return get(key); }
    std::size_t get_size(std::string_view key) const;
    std::uint64_t get_u64(std::string_view key) const;
    double get_double(std::string_view key) const;
    bool get_bool(std::string_view key) const;
    std::vector<std::string> get_list(std::string_view key) const;

    std::uint64_t seed() const { return get_u64("seed"); }
    std::filesystem::path out() const { return get("out"); }

    // Typed views. `section` is "data" (target task) or "source" (pretraining task).
    SynthSpec synth(std::string_view section) const;
    SelectionConfig selection() const;
    // `section` is "train" or "pretrain".
    TrainConfig training(std::string_view section) const;
    // Architecture part of the model; input shape and classes are filled by the caller.
    ModelSpec model_spec() const;

    // Every key with its value, sorted, one "key = value" per line.
    std::string resolved_text() const;
    void write_resolved(const std::filesystem::path& dir) const;

  private:
    std::map<std::string, std::string, std::less<>> values_;
};

struct TaskData {
    Dataset train;
    Dataset val;
    Dataset test;  // empty unless the source provides one
};

// Loads the task described by section "data" or "source" (synth, csv or idx).
TaskData load_task(const RunConfig& config, std::string_view section);

Shape parse_shape(std::string_view text);

}  // namespace gps
