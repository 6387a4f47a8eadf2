#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gps/data.hpp"
#include "gps/model.hpp"
#include "gps/selection.hpp"

namespace gps {

enum class OptimizerKind { Sgd, Adam };

std::string_view to_string(OptimizerKind kind) noexcept;
OptimizerKind parse_optimizer(std::string_view name);

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::Adam;
    double base_lr = 1e-3;
    double weight_decay = 0.0;
    std::size_t epochs = 50;
    std::size_t warmup_epochs = 5;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    // Diagnostic: keep the classifier frozen as well.
    bool freeze_head = false;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

// Per-tensor optimiser state. Moments exist only at the masked-in positions.
struct ParamState {
    std::vector<std::size_t> active;
    std::vector<double> m;
    std::vector<double> v;

    static ParamState for_mask(std::span<const std::uint8_t> mask);
};

// One update of `weight` with gradient grad * mask; decoupled weight decay is
// masked too, so positions with mask 0 are never written. `step` is the 1-based
// optimiser step used for Adam bias correction.
void masked_step(Tensor& weight, std::span<const double> grad, std::span<const std::uint8_t> mask, ParamState& state,
                 const TrainConfig& config, std::uint64_t step, double lr);

// Linear warm-up to base_lr, then half-cosine decay to zero.
struct LrSchedule {
    double base_lr = 0.0;
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 0;

    double at(std::size_t step) const;
    static LrSchedule from(const TrainConfig& config, std::size_t steps_per_epoch);
};

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& config, std::size_t steps_per_epoch);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_acc = 0.0;
    double lr = 0.0;
};

// {"epoch":..,"train_loss":..,"val_acc":..,"lr":..}
std::string metrics_json(const EpochRecord& record);

struct FinetuneResult {
    Model model;
    std::vector<EpochRecord> history;
};

// Cross-entropy fine-tuning where only mask==1 positions and the head move.
FinetuneResult finetune(const Model& base, const SelectionMask& mask, const Dataset& train, const Dataset& val,
                        const TrainConfig& config);

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

EvalResult evaluate(const Model& model, const Dataset& data);

// Number of non-head positions whose bits differ between the two models.
std::size_t changed_positions(const Model& base, const Model& tuned);

// Throws IntegrityError if any position outside the mask (head excepted) differs.
void verify_frozen_complement(const Model& base, const Model& tuned, const SelectionMask& mask);

}  // namespace gps
