#include "gps/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "gps/binary_io.hpp"
#include "gps/error.hpp"

namespace gps {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::pair<std::string, std::string>> task_keys(const std::string& section, const std::string& dims,
                                                           const std::string& shift) {
    return {
        {section + ".kind", "synth"},
        {section + ".generator", "gaussian-blobs"},
        {section + ".dims", dims},
        {section + ".classes", "4"},
        {section + ".per_class", "100"},
        {section + ".label_noise", "0"},
        {section + ".seed", ""},
        {section + ".separation", "4"},
        {section + ".spread", "1"},
        {section + ".informative", "0"},
        {section + ".shift", shift},
        {section + ".train", ""},
        {section + ".label_column", "-1"},
        {section + ".header", "false"},
        {section + ".train_images", ""},
        {section + ".train_labels", ""},
        {section + ".val_images", ""},
        {section + ".val_labels", ""},
    };
}

std::vector<std::pair<std::string, std::string>> train_keys(const std::string& section, const std::string& epochs,
                                                            const std::string& warmup) {
    return {
        {section + ".optimizer", "adam"},
        {section + ".lr", "0.01"},
        {section + ".weight_decay", "0"},
        {section + ".epochs", epochs},
        {section + ".warmup", warmup},
        {section + ".batch_size", "32"},
        {section + ".freeze_head", "false"},
    };
}

const std::vector<std::pair<std::string, std::string>>& defaults() {
    static const auto table = [] {
        std::vector<std::pair<std::string, std::string>> t = {
            {"seed", "0"},
            {"out", "gps-out"},
            {"base", ""},
            {"mask", ""},
            {"checkpoint", ""},
            {"model.arch", "mlp"},
            {"model.input", ""},
            {"model.hidden", "64,64"},
            {"model.dim", "16"},
            {"model.heads", "4"},
            {"model.depth", "1"},
            {"model.mlp_ratio", "4"},
            {"model.kernel", "3"},
            {"select.strategy", "neuron-topk"},
            {"select.k", "1"},
            {"select.p", "0.01"},
            {"select.count", "0"},
            {"select.tau", "0.07"},
            {"select.loss", "scl"},
            {"select.batch_size", "32"},
            {"compare.strategies", "neuron-topk,net-topfrac,layer-topfrac,net-random,neuron-random,magnitude"},
            {"compare.k_values", "1"},
            {"compare.seeds", "1"},
            {"report.kind", "distribution"},
            {"report.masks", ""},
        };
        for (auto& kv : task_keys("data", "16", "0")) t.push_back(kv);
        for (auto& kv : task_keys("source", "16", "0")) t.push_back(kv);
        for (auto& kv : train_keys("train", "50", "5")) t.push_back(kv);
        for (auto& kv : train_keys("pretrain", "50", "5")) t.push_back(kv);
        return t;
    }();
    return table;
}

template <typename T>
T parse_number(std::string_view key, const std::string& text) {
    T value{};
    const char* first = text.data();
    const char* last = first + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (text.empty() || ec != std::errc() || ptr != last) {
        throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + text + "' as a number");
    }
    return value;
}

}  // namespace

RunConfig::RunConfig() {
    for (const auto& [k, v] : defaults()) values_.emplace(k, v);
}

RunConfig RunConfig::parse(std::string_view text, std::string_view origin) {
    RunConfig cfg;
    std::map<std::string, std::size_t, std::less<>> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        const std::string where = std::string(origin) + ":" + std::to_string(line_no);
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        if (!cfg.is_known(key)) throw ConfigError(where + ": unknown key '" + key + "'");
        if (auto it = seen.find(key); it != seen.end()) {
            throw ConfigError(where + ": key '" + key + "' already set on line " + std::to_string(it->second));
        }
        seen.emplace(key, line_no);
        cfg.values_[key] = value;
    }
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), path.string());
}

void RunConfig::set(std::string_view key, std::string_view value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
    it->second = std::string(value);
}

const std::string& RunConfig::get(std::string_view key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
    return it->second;
}

bool RunConfig::is_known(std::string_view key) const noexcept { return values_.find(key) != values_.end(); }

std::vector<std::string> RunConfig::known_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, v] : defaults()) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    return keys;
}

std::size_t RunConfig::get_size(std::string_view key) const { return parse_number<std::size_t>(key, get(key)); }

std::uint64_t RunConfig::get_u64(std::string_view key) const { return parse_number<std::uint64_t>(key, get(key)); }

double RunConfig::get_double(std::string_view key) const { return parse_number<double>(key, get(key)); }

bool RunConfig::get_bool(std::string_view key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + std::string(key) + "': expected a boolean, got '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(std::string_view key) const {
    std::vector<std::string> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

SynthSpec RunConfig::synth(std::string_view section) const {
    const std::string s(section);
    SynthSpec spec;
    spec.generator = parse_generator(get(s + ".generator"));
    spec.dims = get_size(s + ".dims");
    spec.classes = get_size(s + ".classes");
    spec.per_class = get_size(s + ".per_class");
    spec.label_noise = get_double(s + ".label_noise");
    spec.seed = get(s + ".seed").empty() ? seed() : get_u64(s + ".seed");
    spec.separation = get_double(s + ".separation");
    spec.spread = get_double(s + ".spread");
    spec.informative = get_size(s + ".informative");
    spec.shift = get_size(s + ".shift");
    spec.validate();
    return spec;
}

SelectionConfig RunConfig::selection() const {
    SelectionConfig c;
    c.strategy = parse_strategy(get("select.strategy"));
    c.k = get_size("select.k");
    c.p = get_double("select.p");
    c.count = get_size("select.count");
    c.tau = get_double("select.tau");
    c.loss = parse_loss_kind(get("select.loss"));
    c.batch_size = get_size("select.batch_size");
    c.seed = seed();
    c.validate();
    return c;
}

TrainConfig RunConfig::training(std::string_view section) const {
    const std::string s(section);
    TrainConfig c;
    c.optimizer = parse_optimizer(get(s + ".optimizer"));
    c.base_lr = get_double(s + ".lr");
    c.weight_decay = get_double(s + ".weight_decay");
    c.epochs = get_size(s + ".epochs");
    c.warmup_epochs = get_size(s + ".warmup");
    c.batch_size = get_size(s + ".batch_size");
    c.freeze_head = get_bool(s + ".freeze_head");
    c.seed = seed();
    c.validate();
    return c;
}

Shape parse_shape(std::string_view text) {
    Shape shape;
    std::string t(text);
    std::replace(t.begin(), t.end(), ',', 'x');
    std::stringstream ss(t);
    std::string item;
    while (std::getline(ss, item, 'x')) {
        item = trim(item);
        if (item.empty()) continue;
        const auto v = parse_number<std::size_t>("shape", item);
        if (v == 0) throw ConfigError("shape '" + std::string(text) + "' has a zero dimension");
        shape.push_back(v);
    }
    return shape;
}

ModelSpec RunConfig::model_spec() const {
    ModelSpec spec;
    spec.architecture = parse_architecture(get("model.arch"));
    spec.input_shape = parse_shape(get("model.input"));
    spec.hidden = parse_shape(get("model.hidden"));
    spec.dim = get_size("model.dim");
    spec.heads = get_size("model.heads");
    spec.depth = get_size("model.depth");
    spec.mlp_ratio = get_size("model.mlp_ratio");
    spec.kernel = get_size("model.kernel");
    spec.seed = seed();
    return spec;
}

std::string RunConfig::resolved_text() const {
    std::string out;
    for (const auto& [k, v] : values_) {
        std::string value = v;
        if (value.empty() && (k == "data.seed" || k == "source.seed")) value = get("seed");
        out += k + " = " + value + "\n";
    }
    return out;
}

void RunConfig::write_resolved(const std::filesystem::path& dir) const {
    const std::string text = resolved_text();
    write_file(dir / "resolved.cfg", std::vector<std::uint8_t>(text.begin(), text.end()));
}

TaskData load_task(const RunConfig& config, std::string_view section) {
    const std::string s(section);
    const std::string kind = config.get(s + ".kind");
    TaskData task;
    if (kind == "synth") {
        Splits splits = synth_task(config.synth(section));
        task.train = std::move(splits.train);
        task.val = std::move(splits.val);
        task.test = std::move(splits.test);
        return task;
    }
    if (kind == "csv") {
        if (config.get(s + ".train").empty()) throw ConfigError(s + ".kind = csv needs " + s + ".train");
        CsvOptions opts;
        opts.label_column = config.get(s + ".label_column");
        opts.has_header = config.get_bool(s + ".header");
        const Dataset all = load_csv(config.get(s + ".train"), opts);
        const std::uint64_t split_seed = config.get(s + ".seed").empty() ? config.seed() : config.get_u64(s + ".seed");
        Splits splits = stratified_split(all, split_seed);
        const Standardizer st = Standardizer::fit(splits.train);
        st.apply(splits.train);
        st.apply(splits.val);
        if (splits.test.size() > 0) st.apply(splits.test);
        task.train = std::move(splits.train);
        task.val = std::move(splits.val);
        task.test = std::move(splits.test);
        return task;
    } else if (kind == "idx") {
        for (const char* k : {".train_images", ".train_labels", ".val_images", ".val_labels"}) {
            if (config.get(s + k).empty()) throw ConfigError(s + ".kind = idx needs " + s + k);
        }
        task.train = load_idx(config.get(s + ".train_images"), config.get(s + ".train_labels"));
        task.val = load_idx(config.get(s + ".val_images"), config.get(s + ".val_labels"));
        task.train.split = "train";
        task.val.split = "val";
    } else {
        throw ConfigError(s + ".kind: unknown data source '" + kind + "' (synth, csv, idx)");
    }
    const std::size_t classes = std::max(task.train.classes, task.val.classes);
    task.train.classes = classes;
    task.val.classes = classes;
    return task;
}

}  // namespace gps
