#include "gps/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <ostream>
#include <thread>

#include "gps/binary_io.hpp"
#include "gps/checkpoint.hpp"
#include "gps/error.hpp"
#include "json.hpp"

namespace gps {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string exact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

ModelSpec spec_for(const RunConfig& config, const Dataset& train, std::size_t classes) {
    ModelSpec spec = config.model_spec();
    if (spec.input_shape.empty()) spec.input_shape = train.sample_shape();
    spec.classes = classes;
    spec.validate();
    return spec;
}

std::string history_jsonl(const std::vector<EpochRecord>& history) {
    std::string out;
    for (const auto& r : history) out += metrics_json(r) + "\n";
    return out;
}

std::string required(const RunConfig& config, const char* key) {
    const std::string& v = config.get(key);
    if (v.empty()) throw ConfigError(std::string("missing required config key '") + key + "'");
    return v;
}

}  // namespace

Model load_base_for_task(const RunConfig& config, const std::string& path, const Dataset& train) {
    std::vector<Parameter> params = read_checkpoint(path);
    const std::size_t source_classes = head_classes(params);
    Model model = model_from_parameters(spec_for(config, train, source_classes), std::move(params));
    model.reset_head(train.classes, config.seed());
    return model;
}

PretrainOutcome cmd_pretrain(const RunConfig& config, std::ostream& log) {
    const TrainConfig tc = config.training("pretrain");
    const TaskData task = load_task(config, "source");
    Model model = build_model(spec_for(config, task.train, task.train.classes));
    const SelectionMask all = select_full(model);
    FinetuneResult result = finetune(model, all, task.train, task.val, tc);

    const auto out = config.out();
    config.write_resolved(out);
    save_checkpoint(result.model, out / "base.gpsw");
    write_text(out / "metrics.jsonl", history_jsonl(result.history));

    PretrainOutcome o{std::move(result.model), std::move(result.history), 0};
    o.digest = model_digest(o.model);
    const EvalResult val = evaluate(o.model, task.val);
    char digest[32];
    std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(o.digest));
    log << "pretrained " << to_string(o.model.spec().architecture) << " on " << task.train.size()
        << " source samples, val_acc " << fixed(val.accuracy, 4) << ", digest " << digest << "\n";
    log << "wrote " << (out / "base.gpsw").string() << "\n";
    return o;
}

std::string selection_summary(const SelectionMask& mask, const Model& model) {
    const std::size_t weights = mask.selected_weights(model);
    const std::size_t selectable = model.selectable_count();
    const std::size_t biases = mask.popcount() - weights;
    std::string s;
    s += "strategy: " + std::string(to_string(mask.strategy)) + "\n";
    s += "selected: " + std::to_string(weights) + "/" + std::to_string(selectable) + " = " +
         fixed(selectable == 0 ? 0.0 : 100.0 * static_cast<double>(weights) / static_cast<double>(selectable), 2) +
         "% of selectable weights\n";
    s += "bias parameters: " + std::to_string(biases) + " selected of " + std::to_string(model.bias_count()) + "\n";
    s += "head parameters (always trained): " + std::to_string(model.head_count()) + "\n";
    s += "distribution:\n";
    for (const auto& b : mask_distribution(mask, model)) {
        s += "  " + b.block + " " + std::to_string(b.selected) + "/" + std::to_string(b.available) + " (" +
             fixed(100.0 * b.fraction_of_selected, 2) + "% of selected)\n";
    }
    return s;
}

SelectOutcome cmd_select(const RunConfig& config, std::ostream& log) {
    const SelectionConfig sc = config.selection();
    const TaskData task = load_task(config, "data");
    const Model model = load_base_for_task(config, required(config, "base"), task.train);
    SelectOutcome o{select(model, task.train, sc), {}};
    o.summary = selection_summary(o.mask, model);

    const auto out = config.out();
    config.write_resolved(out);
    save_mask(o.mask, out / "mask.gpsm");
    write_text(out / "summary.txt", o.summary);
    log << o.summary << "wrote " << (out / "mask.gpsm").string() << "\n";
    return o;
}

FinetuneOutcome cmd_finetune(const RunConfig& config, std::ostream& log) {
    const TrainConfig tc = config.training("train");
    const TaskData task = load_task(config, "data");
    const std::string base_path = required(config, "base");
    const std::vector<Parameter> stored = read_checkpoint(base_path);
    const Model original = model_from_parameters(spec_for(config, task.train, head_classes(stored)), stored);
    Model model = original;
    model.reset_head(task.train.classes, config.seed());
    const SelectionMask mask = load_mask(required(config, "mask"));

    FinetuneResult result = finetune(model, mask, task.train, task.val, tc);
    verify_frozen_complement(model, result.model, mask);
    SparseDelta delta = export_delta(original, result.model, mask);
    if (!apply_delta(original, delta).bitwise_equal(result.model)) {
        throw IntegrityError("finetune: delta does not reproduce the tuned checkpoint");
    }

    FinetuneOutcome o{std::move(result.model), std::move(delta), std::move(result.history), {}};
    o.val = evaluate(o.tuned, task.val);
    nlohmann::ordered_json fin;
    fin["final"] = true;
    fin["val_acc"] = o.val.accuracy;
    fin["val_loss"] = o.val.mean_loss;
    fin["selected"] = mask.popcount();
    fin["changed"] = changed_positions(model, o.tuned);
    fin["delta_entries"] = o.delta.entries.size();

    const auto out = config.out();
    config.write_resolved(out);
    save_checkpoint(o.tuned, out / "tuned.gpsw");
    save_delta(o.delta, out / "delta.gpsd");
    write_text(out / "metrics.jsonl", history_jsonl(o.history) + fin.dump() + "\n");
    log << "fine-tuned " << mask.popcount() << " masked positions + head, val_acc " << fixed(o.val.accuracy, 4)
        << ", delta entries " << o.delta.entries.size() << "\n";
    log << "wrote " << (out / "tuned.gpsw").string() << ", " << (out / "delta.gpsd").string() << "\n";
    return o;
}

EvalOutcome cmd_eval(const RunConfig& config, std::ostream& log) {
    const TaskData task = load_task(config, "data");
    const std::vector<Parameter> stored = read_checkpoint(required(config, "checkpoint"));
    const std::size_t classes = head_classes(stored);
    if (classes != task.train.classes) {
        throw CompatibilityError("eval: checkpoint head has " + std::to_string(classes) + " classes, data has " +
                                 std::to_string(task.train.classes));
    }
    const Model model = model_from_parameters(spec_for(config, task.train, classes), stored);
    EvalOutcome o;
    o.val = evaluate(model, task.val);
    nlohmann::ordered_json j;
    j["val_acc"] = o.val.accuracy;
    j["val_loss"] = o.val.mean_loss;
    if (task.test.size() > 0) {
        o.has_test = true;
        o.test = evaluate(model, task.test);
        j["test_acc"] = o.test.accuracy;
        j["test_loss"] = o.test.mean_loss;
    }
    const auto out = config.out();
    config.write_resolved(out);
    write_text(out / "eval.json", j.dump() + "\n");
    log << j.dump() << "\n";
    return o;
}

namespace {

struct Variant {
    std::string label;  // strategy token as given, e.g. "neuron-topk" or "neuron-topk:ce"
    Strategy strategy = Strategy::NeuronTopK;
    LossKind loss = LossKind::Scl;
    std::size_t k = 0;
    std::string budget;
    double p = 0.0;
    std::size_t count = 0;
};

struct Job {
    std::size_t variant = 0;
    std::uint64_t seed = 0;
};

struct JobResult {
    double val_acc = 0.0;
    std::size_t params = 0;
    double seconds = 0.0;
    std::string error;
};

std::size_t worker_count(std::size_t jobs) {
    std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("GPS_THREADS"); env != nullptr && *env != '\0') {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end == nullptr || *end != '\0' || v == 0) throw ConfigError(std::string("GPS_THREADS must be a positive integer, got '") + env + "'");
        n = v;
    }
    return std::max<std::size_t>(1, std::min(n, jobs));
}

std::string row_dir_name(const Variant& v, std::uint64_t seed) {
    std::string name = v.label + "_" + v.budget + "_s" + std::to_string(seed);
    for (char& c : name) {
        if (c == ':' || c == '=' || c == '/' || c == ' ') c = '-';
    }
    return name;
}

}  // namespace

std::string compare_csv(const std::vector<CompareRow>& rows) {
    std::string s = "strategy,budget,params,params_pct,val_acc,val_acc_std,seconds,status\n";
    for (const auto& r : rows) {
        const bool ok = r.status == "ok";
        s += r.strategy + "," + r.budget + "," + std::to_string(r.params) + "," + fixed(r.params_pct, 4) + "," +
             (ok ? fixed(r.val_acc, 6) : std::string()) + "," + (ok ? fixed(r.val_acc_std, 6) : std::string()) + "," +
             fixed(r.seconds, 3) + "," + r.status + "\n";
    }
    return s;
}

std::vector<CompareRow> cmd_compare(const RunConfig& config, std::ostream& log) {
    const auto out = config.out();
    const TaskData task = load_task(config, "data");
    config.training("train");
    const SelectionConfig sc_template = config.selection();
    const std::size_t seeds = config.get_size("compare.seeds");
    if (seeds == 0) throw ConfigError("compare.seeds must be >= 1");

    RunConfig resolved = config;
    std::string base_path = config.get("base");
    if (base_path.empty()) {
        RunConfig pre = config;
        pre.set("out", (out / "base").string());
        std::ostream null_log(nullptr);
        cmd_pretrain(pre, null_log);
        base_path = (out / "base" / "base.gpsw").string();
        resolved.set("base", base_path);
        log << "pretrained base at " << base_path << "\n";
    }
    const Model model = load_base_for_task(config, base_path, task.train);
    const NeuronMap map = enumerate_neurons(model);
    const std::size_t selectable = model.selectable_count();

    std::vector<std::size_t> ks;
    for (const auto& t : config.get_list("compare.k_values")) {
        std::size_t k = 0;
        try {
            k = std::stoull(t);
        } catch (const std::exception&) {
            throw ConfigError("compare.k_values: '" + t + "' is not an integer");
        }
        if (k == 0) throw ConfigError("compare.k_values: K must be >= 1");
        ks.push_back(k);
    }
    if (ks.empty()) throw ConfigError("compare.k_values is empty");

    std::vector<Variant> variants;
    for (const auto& token : config.get_list("compare.strategies")) {
        Variant base_v;
        base_v.label = token;
        std::string name = token;
        base_v.loss = sc_template.loss;
        if (const auto colon = token.find(':'); colon != std::string::npos) {
            name = token.substr(0, colon);
            base_v.loss = parse_loss_kind(token.substr(colon + 1));
        }
        base_v.strategy = parse_strategy(name);
        if (!uses_k(base_v.strategy) && !uses_fraction(base_v.strategy) && base_v.strategy != Strategy::NetRandom) {
            base_v.budget = "none";
            variants.push_back(base_v);
            continue;
        }
        for (std::size_t k : ks) {
            // Every budgeted row selects as many weights as neuron-topk with this K.
            const std::size_t c = neuron_topk_budget(map, k);
            Variant v = base_v;
            v.k = k;
            v.count = c;
            v.p = static_cast<double>(c) / static_cast<double>(selectable);
            if (uses_fraction(v.strategy)) {
                v.budget = "p=" + exact(v.p);
            } else if (v.strategy == Strategy::NetRandom) {
                v.budget = "count=" + std::to_string(c);
            } else {
                v.budget = "K=" + std::to_string(k);
            }
            variants.push_back(v);
        }
    }
    if (variants.empty()) throw ConfigError("compare.strategies is empty");

    std::vector<Job> jobs;
    for (std::size_t v = 0; v < variants.size(); ++v)
        for (std::size_t s = 0; s < seeds; ++s) jobs.push_back({v, config.seed() + s});
    std::vector<JobResult> results(jobs.size());

    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            const Variant& v = variants[jobs[j].variant];
            const std::uint64_t seed = jobs[j].seed;
            const auto t0 = std::chrono::steady_clock::now();
            JobResult& r = results[j];
            try {
                RunConfig row = resolved;
                const auto dir = out / "runs" / row_dir_name(v, seed);
                row.set("out", dir.string());
                row.set("seed", std::to_string(seed));
                for (const char* key : {"data.seed", "source.seed"}) {
                    if (config.get(key).empty()) row.set(key, config.get("seed"));
                }
                row.set("select.strategy", std::string(to_string(v.strategy)));
                row.set("select.loss", std::string(to_string(v.loss)));
                if (v.k != 0) row.set("select.k", std::to_string(v.k));
                if (uses_fraction(v.strategy)) row.set("select.p", exact(v.p));
                if (v.strategy == Strategy::NetRandom) row.set("select.count", std::to_string(v.count));

                Model target = model;
                target.reset_head(task.train.classes, seed);
                const SelectionMask mask = select(target, task.train, row.selection());
                FinetuneResult res = finetune(target, mask, task.train, task.val, row.training("train"));
                verify_frozen_complement(target, res.model, mask);
                r.val_acc = evaluate(res.model, task.val).accuracy;
                r.params = mask.selected_weights(target);

                row.write_resolved(dir);
                save_mask(mask, dir / "mask.gpsm");
                write_text(dir / "metrics.jsonl", history_jsonl(res.history));
            } catch (const Error& e) {
                r.error = std::string(kind_name(e.kind())) + ": " + e.what();
            } catch (const std::exception& e) {
                r.error = e.what();
            }
            r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
    };
    const std::size_t workers = worker_count(jobs.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    std::vector<CompareRow> rows;
    for (std::size_t v = 0; v < variants.size(); ++v) {
        CompareRow row;
        row.strategy = variants[v].label;
        row.budget = variants[v].budget;
        std::vector<std::string> errors;
        for (std::size_t j = 0; j < jobs.size(); ++j) {
            if (jobs[j].variant != v) continue;
            const JobResult& r = results[j];
            row.seconds += r.seconds;
            if (!r.error.empty()) {
                errors.push_back(r.error);
                continue;
            }
            row.params = r.params;
            row.seed_acc.push_back(r.val_acc);
        }
        if (!errors.empty()) {
            std::string msg = errors.front();
            std::replace(msg.begin(), msg.end(), ',', ';');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            row.status = "failed(" + msg + ")";
        } else {
            double mean = 0.0;
            for (double a : row.seed_acc) mean += a;
            mean /= static_cast<double>(row.seed_acc.size());
            double var = 0.0;
            for (double a : row.seed_acc) var += (a - mean) * (a - mean);
            row.val_acc = mean;
            row.val_acc_std =
                row.seed_acc.size() > 1 ? std::sqrt(var / static_cast<double>(row.seed_acc.size() - 1)) : 0.0;
        }
        row.params_pct = 100.0 * static_cast<double>(row.params) / static_cast<double>(selectable);
        rows.push_back(std::move(row));
    }

    resolved.write_resolved(out);
    const std::string csv = compare_csv(rows);
    write_text(out / "results.csv", csv);
    log << csv;
    return rows;
}

std::string distribution_report(const std::vector<std::string>& labels, const std::vector<SelectionMask>& masks) {
    std::string s = "mask,block,selected,available,pct_of_selected,pct_of_block\n";
    for (std::size_t i = 0; i < masks.size(); ++i) {
        for (const auto& b : mask_distribution(masks[i])) {
            s += labels[i] + "," + b.block + "," + std::to_string(b.selected) + "," + std::to_string(b.available) +
                 "," + fixed(100.0 * b.fraction_of_selected, 4) + "," + fixed(100.0 * b.fraction_of_block, 4) + "\n";
        }
    }
    return s;
}

std::string overlap_report(const std::vector<std::string>& labels, const std::vector<SelectionMask>& masks) {
    if (masks.size() < 2 || masks.size() > 3) {
        throw ConfigError("overlap report needs 2 or 3 masks, got " + std::to_string(masks.size()));
    }
    std::string s = "mask_a,mask_b,scope,jaccard,shared,only_a,only_b,union\n";
    for (std::size_t a = 0; a < masks.size(); ++a) {
        for (std::size_t b = a + 1; b < masks.size(); ++b) {
            const MaskOverlap o = mask_overlap(masks[a], masks[b]);
            const std::string prefix = labels[a] + "," + labels[b] + ",";
            s += prefix + "all," + exact(o.jaccard) + "," + std::to_string(o.shared) + "," +
                 std::to_string(o.only_a) + "," + std::to_string(o.only_b) + "," + std::to_string(o.union_size()) +
                 "\n";
            for (const auto& c : o.per_block) {
                const std::size_t uni = c.shared + c.only_a + c.only_b;
                const double j = uni == 0 ? 1.0 : static_cast<double>(c.shared) / static_cast<double>(uni);
                s += prefix + "block:" + c.label + "," + exact(j) + "," + std::to_string(c.shared) + "," +
                     std::to_string(c.only_a) + "," + std::to_string(c.only_b) + "," + std::to_string(uni) + "\n";
            }
        }
    }
    return s;
}

std::string cmd_report(const RunConfig& config, std::ostream& log) {
    const std::string kind = config.get("report.kind");
    const std::vector<std::string> paths = config.get_list("report.masks");
    if (paths.empty()) throw ConfigError("report.masks lists no mask files");
    std::vector<SelectionMask> masks;
    for (const auto& p : paths) masks.push_back(load_mask(p));
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < paths.size(); ++i) labels.push_back(std::string(1, static_cast<char>('A' + i)));
    std::string report;
    if (kind == "distribution") {
        report = distribution_report(labels, masks);
    } else if (kind == "overlap") {
        report = overlap_report(labels, masks);
    } else {
        throw ConfigError("report.kind: expected distribution or overlap, got '" + kind + "'");
    }
    const auto out = config.out();
    config.write_resolved(out);
    write_text(out / "report.csv", report);
    for (std::size_t i = 0; i < paths.size(); ++i) log << labels[i] << " = " << paths[i] << "\n";
    log << report;
    return report;
}

}  // namespace gps
