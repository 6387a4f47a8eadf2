#include "gps/train.hpp"

#include <bit>
#include <cmath>
#include <numbers>

#include "json.hpp"

#include "gps/error.hpp"
#include "gps/rng.hpp"

namespace gps {

std::string_view to_string(OptimizerKind kind) noexcept { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(std::string_view name) {
    if (name == "sgd") return OptimizerKind::Sgd;
    if (name == "adam") return OptimizerKind::Adam;
    throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
    if (!(base_lr > 0.0)) throw ConfigError("train: base learning rate must be positive");
    if (warmup_epochs > epochs) throw ConfigError("train: warm-up epochs exceed total epochs");
    if (batch_size == 0) throw ConfigError("train: batch size must be >= 1");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
        throw ConfigError("train: invalid Adam hyperparameters");
    }
}

ParamState ParamState::for_mask(std::span<const std::uint8_t> mask) {
    ParamState st;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) st.active.push_back(i);
    }
    st.m.assign(st.active.size(), 0.0);
    st.v.assign(st.active.size(), 0.0);
    return st;
}

void masked_step(Tensor& weight, std::span<const double> grad, std::span<const std::uint8_t> mask, ParamState& state,
                 const TrainConfig& config, std::uint64_t step, double lr) {
    if (grad.size() != weight.numel() || mask.size() != weight.numel()) {
        throw ContractError("masked_step: weight " + shape_str(weight.shape()) + " with " + std::to_string(grad.size()) +
                            " gradients and " + std::to_string(mask.size()) + " mask entries");
    }
    if (state.m.size() != state.active.size() || state.v.size() != state.active.size()) {
        throw ContractError("masked_step: inconsistent optimizer state");
    }
    auto w = weight.data();
    if (config.optimizer == OptimizerKind::Sgd) {
        for (std::size_t a = 0; a < state.active.size(); ++a) {
            const std::size_t i = state.active[a];
            const double g = grad[i] * static_cast<double>(mask[i]);
            w[i] = w[i] - lr * (g + config.weight_decay * w[i]);
        }
        return;
    }
    if (step == 0) throw ContractError("masked_step: Adam step counter starts at 1");
    const double t = static_cast<double>(step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t a = 0; a < state.active.size(); ++a) {
        const std::size_t i = state.active[a];
        const double g = grad[i] * static_cast<double>(mask[i]);
        state.m[a] = config.beta1 * state.m[a] + (1.0 - config.beta1) * g;
        state.v[a] = config.beta2 * state.v[a] + (1.0 - config.beta2) * g * g;
        const double mhat = state.m[a] / c1;
        const double vhat = state.v[a] / c2;
        w[i] = w[i] - lr * (mhat / (std::sqrt(vhat) + config.adam_eps) + config.weight_decay * w[i]);
    }
}

double LrSchedule::at(std::size_t step) const {
    if (step >= total_steps) {
        throw ContractError("lr schedule: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) +
                            ")");
    }
    if (step < warmup_steps) {
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    const double progress =
        static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

LrSchedule LrSchedule::from(const TrainConfig& config, std::size_t steps_per_epoch) {
    return {config.base_lr, config.warmup_epochs * steps_per_epoch, config.epochs * steps_per_epoch};
}

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& config, std::size_t steps_per_epoch) {
    LrSchedule s = LrSchedule::from(config, steps_per_epoch);
    s.total_steps = total_steps;
    return s.at(step);
}

std::string metrics_json(const EpochRecord& r) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["val_acc"] = r.val_acc;
    j["lr"] = r.lr;
    return j.dump();
}

namespace {

struct Trainable {
    std::size_t param_index;
    std::vector<std::uint8_t> mask;
    ParamState state;
};

}  // namespace

FinetuneResult finetune(const Model& base, const SelectionMask& mask, const Dataset& train, const Dataset& val,
                        const TrainConfig& config) {
    config.validate();
    check_mask_compatible(mask, base);
    train.validate(false);
    if (base.spec().classes != train.classes) {
        throw ContractError("finetune: head has " + std::to_string(base.spec().classes) + " outputs, training set has " +
                            std::to_string(train.classes) + " classes");
    }

    FinetuneResult result{base, {}};
    Model& model = result.model;
    if (config.epochs == 0) return result;

    std::vector<Trainable> trainables;
    for (const auto& m : mask.matrices) {
        if (m.popcount() == 0) continue;
        trainables.push_back({model.index_of(m.name), m.bits, ParamState::for_mask(m.bits)});
    }
    if (!config.freeze_head) {
        for (std::size_t i = 0; i < model.parameters().size(); ++i) {
            const auto& p = model.parameters()[i];
            if (!p.is_head()) continue;
            std::vector<std::uint8_t> ones(p.value.numel(), 1);
            ParamState st = ParamState::for_mask(ones);
            trainables.push_back({i, std::move(ones), std::move(st)});
        }
    }
    model.set_requires_grad(false);
    for (const auto& t : trainables) model.parameters()[t.param_index].value.set_requires_grad(true);

    const std::size_t steps_per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
    const LrSchedule schedule = LrSchedule::from(config, steps_per_epoch);
    std::uint64_t step = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        SplitMix64 rng = SplitMix64::substream(config.seed, "shuffle", epoch);
        const auto batches = shuffled_batches(train.size(), config.batch_size, rng);
        double loss_sum = 0.0;
        double lr = 0.0;
        for (const auto& batch : batches) {
            lr = schedule.at(static_cast<std::size_t>(step));
            ++step;
            if (trainables.empty()) continue;
            Graph g;
            const Tensor x = train.gather(batch);
            const auto y = train.gather_labels(batch);
            Var loss = softmax_cross_entropy(forward(g, model, x).logits, y);
            const double lv = loss.value().item();
            if (!std::isfinite(lv)) {
                throw NumericError("finetune: non-finite loss in epoch " + std::to_string(epoch) +
                                   (epoch == 0 ? std::string(" (no completed epoch)")
                                               : "; last good epoch " + std::to_string(epoch - 1)));
            }
            loss_sum += lv * static_cast<double>(batch.size());
            g.backward(loss);
            for (auto& t : trainables) {
                Parameter& p = model.parameters()[t.param_index];
                masked_step(p.value, p.value.grad(), t.mask, t.state, config, step, lr);
            }
        }
        if (trainables.empty()) {
            // Nothing trains; still report the loss of the unchanged model.
            loss_sum = evaluate(model, train).mean_loss * static_cast<double>(train.size());
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train.size());
        rec.val_acc = evaluate(model, val).accuracy;
        rec.lr = lr;
        result.history.push_back(rec);
    }
    model.set_requires_grad(false);
    model.clear_grads();
    return result;
}

EvalResult evaluate(const Model& model, const Dataset& data) {
    if (data.size() == 0) throw InputError("evaluate: empty dataset");
    constexpr std::size_t chunk = 256;
    std::size_t correct = 0;
    double loss_sum = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t b = 0; b < data.size(); b += chunk) {
        idx.clear();
        for (std::size_t i = b; i < std::min(data.size(), b + chunk); ++i) idx.push_back(i);
        Graph g;
        const auto y = data.gather_labels(idx);
        Var logits = forward(g, model, data.gather(idx)).logits;
        const Tensor& lv = logits.value();
        const std::size_t classes = lv.dim(1);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < classes; ++c) {
                if (lv[r * classes + c] > lv[r * classes + best]) best = c;
            }
            if (best == y[r]) ++correct;
        }
        loss_sum += softmax_cross_entropy(logits, y, Reduction::Sum).value().item();
    }
    return {static_cast<double>(correct) / static_cast<double>(data.size()), loss_sum / static_cast<double>(data.size())};
}

namespace {

bool same_bits(double a, double b) noexcept { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

}  // namespace

std::size_t changed_positions(const Model& base, const Model& tuned) {
    if (base.parameters().size() != tuned.parameters().size()) {
        throw ContractError("changed_positions: models have different parameter lists");
    }
    std::size_t n = 0;
    for (std::size_t i = 0; i < base.parameters().size(); ++i) {
        const auto& a = base.parameters()[i];
        const auto& b = tuned.parameters()[i];
        if (a.is_head()) continue;
        if (a.name != b.name || a.value.shape() != b.value.shape()) {
            throw ContractError("changed_positions: parameter '" + a.name + "' differs in name or shape");
        }
        for (std::size_t k = 0; k < a.value.numel(); ++k) {
            if (!same_bits(a.value[k], b.value[k])) ++n;
        }
    }
    return n;
}

void verify_frozen_complement(const Model& base, const Model& tuned, const SelectionMask& mask) {
    if (base.parameters().size() != tuned.parameters().size()) {
        throw IntegrityError("tuned model has a different parameter list than the base");
    }
    for (std::size_t i = 0; i < base.parameters().size(); ++i) {
        const auto& a = base.parameters()[i];
        const auto& b = tuned.parameters()[i];
        if (a.name != b.name || a.value.shape() != b.value.shape()) {
            throw IntegrityError("tuned parameter #" + std::to_string(i) + " does not match base '" + a.name + "'");
        }
        if (a.is_head()) continue;
        const MaskMatrix* m = mask.find(a.name);
        for (std::size_t k = 0; k < a.value.numel(); ++k) {
            if ((m == nullptr || m->bits[k] == 0) && !same_bits(a.value[k], b.value[k])) {
                throw IntegrityError("frozen parameter '" + a.name + "' changed at flat index " + std::to_string(k));
            }
        }
    }
    const std::size_t changed = changed_positions(base, tuned);
    if (changed > mask.popcount()) {
        throw IntegrityError("L0 of the weight delta (" + std::to_string(changed) + ") exceeds the mask popcount (" +
                             std::to_string(mask.popcount()) + ")");
    }
}

}  // namespace gps
