#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gps/config.hpp"
#include "gps/delta.hpp"
#include "gps/model.hpp"
#include "gps/selection.hpp"
#include "gps/train.hpp"

namespace gps {

// Pipeline commands. Each writes its artifacts plus resolved.cfg into config.out()
// and logs a human-readable summary to `log`.

struct PretrainOutcome {
    Model model;
    std::vector<EpochRecord> history;
    std::uint64_t digest = 0;
};

// Trains every non-head tensor and the head on the "source" task; writes base.gpsw, metrics.jsonl.
PretrainOutcome cmd_pretrain(const RunConfig& config, std::ostream& log);

struct SelectOutcome {
    SelectionMask mask;
    std::string summary;
};

// Selects on the "data" task's training split; writes mask.gpsm and summary.txt.
SelectOutcome cmd_select(const RunConfig& config, std::ostream& log);

struct FinetuneOutcome {
    Model tuned;
    SparseDelta delta;
    std::vector<EpochRecord> history;
    EvalResult val;
};

// Writes tuned.gpsw, delta.gpsd, metrics.jsonl after checking the frozen complement
// and the delta round trip.
FinetuneOutcome cmd_finetune(const RunConfig& config, std::ostream& log);

struct EvalOutcome {
    EvalResult val;
    EvalResult test;
    bool has_test = false;
};

// Evaluates the checkpoint named by `checkpoint` on the "data" task; writes eval.json.
EvalOutcome cmd_eval(const RunConfig& config, std::ostream& log);

struct CompareRow {
    std::string strategy;
    std::string budget;
    std::size_t params = 0;
    double params_pct = 0.0;
    double val_acc = 0.0;      // mean over seeds
    double val_acc_std = 0.0;  // sample standard deviation over seeds, 0 for one seed
    double seconds = 0.0;
    std::string status = "ok";
    std::vector<double> seed_acc;
};

// Runs every (strategy, k) variant for each seed at matched budgets; writes results.csv
// and one subdirectory per run. Pretrains a base first when `base` is empty.
std::vector<CompareRow> cmd_compare(const RunConfig& config, std::ostream& log);

std::string compare_csv(const std::vector<CompareRow>& rows);

// kind "distribution" or "overlap" over the masks in report.masks; writes report.csv.
std::string cmd_report(const RunConfig& config, std::ostream& log);

std::string distribution_report(const std::vector<std::string>& labels, const std::vector<SelectionMask>& masks);
std::string overlap_report(const std::vector<std::string>& labels, const std::vector<SelectionMask>& masks);

// Selected count, share of selectable weights, bias count and per-block distribution.
std::string selection_summary(const SelectionMask& mask, const Model& model);

// Base checkpoint from config `base`, with the head replaced for `classes` outputs.
Model load_base_for_task(const RunConfig& config, const std::string& path, const Dataset& train);

}  // namespace gps
