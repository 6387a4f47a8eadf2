#include "gps/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include "gps/binary_io.hpp"
#include "gps/error.hpp"

namespace gps {

Shape Dataset::sample_shape() const {
    const Shape& s = samples.shape();
    return Shape(s.begin() + (s.empty() ? 0 : 1), s.end());
}

void Dataset::validate(bool require_all_classes) const {
    if (labels.empty()) throw InputError("dataset '" + split + "' is empty");
    if (samples.rank() == 0 || samples.dim(0) != labels.size()) {
        throw InputError("dataset '" + split + "': " + std::to_string(labels.size()) + " labels for samples " +
                         shape_str(samples.shape()));
    }
    std::vector<bool> seen(classes, false);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes) {
            throw InputError("dataset '" + split + "': label " + std::to_string(labels[i]) + " at sample " +
                             std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
        }
        seen[labels[i]] = true;
    }
    if (require_all_classes) {
        for (std::size_t c = 0; c < classes; ++c) {
            if (!seen[c]) throw InputError("dataset '" + split + "': class " + std::to_string(c) + " has no samples");
        }
    }
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
    const std::size_t per = labels.empty() ? 0 : samples.numel() / labels.size();
    Shape s = sample_shape();
    s.insert(s.begin(), indices.size());
    std::vector<double> out;
    out.reserve(indices.size() * per);
    for (std::size_t idx : indices) {
        if (idx >= labels.size()) throw ContractError("dataset index " + std::to_string(idx) + " out of range");
        auto src = samples.data().subspan(idx * per, per);
        out.insert(out.end(), src.begin(), src.end());
    }
    return Tensor(std::move(s), std::move(out));
}

std::vector<std::size_t> Dataset::gather_labels(std::span<const std::size_t> indices) const {
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (std::size_t idx : indices) out.push_back(labels.at(idx));
    return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices, std::string split_tag) const {
    return Dataset{gather(indices), gather_labels(indices), classes, std::move(split_tag)};
}

namespace {

std::uint32_t read_be32(ByteReader& in) {
    const std::uint32_t le = in.u32();
    return ((le & 0xffu) << 24) | ((le & 0xff00u) << 8) | ((le >> 8) & 0xff00u) | (le >> 24);
}

void write_be32(ByteWriter& out, std::uint32_t v) {
    out.u8(static_cast<std::uint8_t>(v >> 24));
    out.u8(static_cast<std::uint8_t>(v >> 16));
    out.u8(static_cast<std::uint8_t>(v >> 8));
    out.u8(static_cast<std::uint8_t>(v));
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto image_bytes = read_file(images);
    const auto label_bytes = read_file(labels);

    ByteReader img(image_bytes, "idx images '" + images.string() + "'");
    if (read_be32(img) != 0x00000803u) img.fail("bad magic, expected 0x00000803");
    const std::size_t n = read_be32(img);
    const std::size_t rows = read_be32(img);
    const std::size_t cols = read_be32(img);

    ByteReader lab(label_bytes, "idx labels '" + labels.string() + "'");
    if (read_be32(lab) != 0x00000801u) lab.fail("bad magic, expected 0x00000801");
    const std::size_t nl = read_be32(lab);
    if (nl != n) {
        throw FormatError("idx count mismatch: " + std::to_string(n) + " images vs " + std::to_string(nl) + " labels");
    }
    if (n == 0) throw FormatError("idx files contain no samples");

    auto pixels = img.raw(n * rows * cols);
    if (!img.at_end()) img.fail("trailing bytes after pixel data");
    auto raw_labels = lab.raw(n);
    if (!lab.at_end()) lab.fail("trailing bytes after label data");

    Dataset ds;
    std::vector<double> values(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) values[i] = static_cast<double>(pixels[i]) / 255.0;
    ds.samples = Tensor(Shape{n, 1, rows, cols}, std::move(values));
    ds.labels.assign(raw_labels.begin(), raw_labels.end());
    ds.classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    ds.split = "idx";
    return ds;
}

void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels) {
    const Shape s = data.sample_shape();
    if (s.size() < 2) throw DimensionError("write_idx: samples need at least two spatial dims");
    const std::size_t cols = s.back();
    const std::size_t rows = shape_numel(s) / cols;
    ByteWriter img;
    write_be32(img, 0x00000803u);
    write_be32(img, static_cast<std::uint32_t>(data.size()));
    write_be32(img, static_cast<std::uint32_t>(rows));
    write_be32(img, static_cast<std::uint32_t>(cols));
    for (double v : data.samples.data()) {
        img.u8(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    }
    ByteWriter lab;
    write_be32(lab, 0x00000801u);
    write_be32(lab, static_cast<std::uint32_t>(data.size()));
    for (std::size_t l : data.labels) {
        if (l > 255) throw FormatError("write_idx: label " + std::to_string(l) + " does not fit a byte");
        lab.u8(static_cast<std::uint8_t>(l));
    }
    write_file(images, img.data());
    write_file(labels, lab.data());
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    bool was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"' && trim(cur).empty()) {
            quoted = true;
            was_quoted = true;
            cur.clear();
        } else if (c == ',') {
            fields.push_back(was_quoted ? cur : trim(cur));
            cur.clear();
            was_quoted = false;
        } else {
            cur += c;
        }
    }
    if (quoted) throw FormatError("csv line " + std::to_string(line_no) + ": unterminated quoted field");
    fields.push_back(was_quoted ? cur : trim(cur));
    return fields;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path.string() + "' for reading");

    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    std::size_t label_col = 0;
    bool label_resolved = false;
    std::vector<std::string> header;

    auto resolve_label = [&](std::size_t ncols) {
        const std::string& spec = options.label_column;
        long long idx = 0;
        auto [ptr, ec] = std::from_chars(spec.data(), spec.data() + spec.size(), idx);
        if (ec == std::errc() && ptr == spec.data() + spec.size()) {
            if (idx < 0) idx += static_cast<long long>(ncols);
            if (idx < 0 || idx >= static_cast<long long>(ncols)) {
                throw ConfigError("csv label column " + spec + " out of range for " + std::to_string(ncols) +
                                  " columns");
            }
            label_col = static_cast<std::size_t>(idx);
        } else {
            auto it = std::find(header.begin(), header.end(), spec);
            if (it == header.end()) throw ConfigError("csv has no label column named '" + spec + "'");
            label_col = static_cast<std::size_t>(it - header.begin());
        }
        if (ncols < 2) throw FormatError("csv needs at least one feature column besides the label");
        label_resolved = true;
    };

    std::vector<double> values;
    std::vector<std::size_t> labels;
    std::unordered_map<std::string, std::size_t> label_ids;

    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto fields = split_csv_line(line, line_no);
        if (options.has_header && header.empty() && width == 0) {
            header = std::move(fields);
            width = header.size();
            resolve_label(width);
            continue;
        }
        if (width == 0) width = fields.size();
        if (!label_resolved) resolve_label(width);
        if (fields.size() != width) {
            throw FormatError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                              " fields, got " + std::to_string(fields.size()));
        }
        for (std::size_t c = 0; c < width; ++c) {
            if (c == label_col) continue;
            const std::string& cell = fields[c];
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
                throw FormatError("csv line " + std::to_string(line_no) + ", column " + std::to_string(c + 1) +
                                  ": non-numeric cell '" + cell + "'");
            }
            values.push_back(v);
        }
        auto [it, inserted] = label_ids.emplace(fields[label_col], label_ids.size());
        labels.push_back(it->second);
    }
    if (labels.empty()) throw FormatError("csv '" + path.string() + "' has no data rows");

    Dataset ds;
    ds.samples = Tensor(Shape{labels.size(), width - 1}, std::move(values));
    ds.labels = std::move(labels);
    ds.classes = label_ids.size();
    ds.split = path.filename().string();
    return ds;
}

std::string_view to_string(Generator g) noexcept {
    switch (g) {
        case Generator::GaussianBlobs: return "gaussian-blobs";
        case Generator::TwoRings: return "two-rings";
        case Generator::XorGrid: return "xor-grid";
    }
    return "unknown";
}

Generator parse_generator(std::string_view name) {
    if (name == "gaussian-blobs") return Generator::GaussianBlobs;
    if (name == "two-rings") return Generator::TwoRings;
    if (name == "xor-grid") return Generator::XorGrid;
    throw ConfigError("unknown synthetic generator '" + std::string(name) + "'");
}

void SynthSpec::validate() const {
    if (classes < 2) throw ConfigError("synth: classes must be >= 2");
    if (dims < 1) throw ConfigError("synth: dims must be >= 1");
    if (per_class < 5) throw ConfigError("synth: samples per class must be >= 5");
    if (!(label_noise >= 0.0 && label_noise < 0.5)) throw ConfigError("synth: label noise must be in [0, 0.5)");
    if (!(separation > 0.0) || !(spread >= 0.0)) throw ConfigError("synth: separation must be > 0, spread >= 0");
    const std::size_t info = informative == 0 ? dims - std::min(shift, dims) : informative;
    if (shift + info > dims || info == 0) {
        throw ConfigError("synth: informative window [" + std::to_string(shift) + ", " + std::to_string(shift + info) +
                          ") does not fit in " + std::to_string(dims) + " dims");
    }
    if (generator != Generator::GaussianBlobs && info < 2) {
        throw ConfigError("synth: " + std::string(to_string(generator)) + " needs at least 2 informative dims");
    }
}

void shuffle_indices(std::vector<std::size_t>& v, SplitMix64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.uniform_index(i));
        std::swap(v[i - 1], v[j]);
    }
}

Splits synth_task(const SynthSpec& spec) {
    spec.validate();
    const std::size_t info = spec.informative == 0 ? spec.dims - spec.shift : spec.informative;
    const std::size_t lo = spec.shift;
    const std::size_t n = spec.classes * spec.per_class;
    SplitMix64 feat = SplitMix64::substream(spec.seed, "synth.features");

    std::vector<double> values(n * spec.dims);
    std::vector<std::size_t> clean(n);

    std::vector<double> means;
    if (spec.generator == Generator::GaussianBlobs) {
        means.resize(spec.classes * info);
        for (double& m : means) m = spec.separation * feat.normal();
    }
    const std::size_t cells = std::max<std::size_t>(2, spec.classes);

    for (std::size_t c = 0; c < spec.classes; ++c) {
        for (std::size_t k = 0; k < spec.per_class; ++k) {
            const std::size_t i = c * spec.per_class + k;
            double* x = values.data() + i * spec.dims;
            clean[i] = c;
            for (std::size_t d = 0; d < spec.dims; ++d) x[d] = spec.spread * feat.normal();
            switch (spec.generator) {
                case Generator::GaussianBlobs:
                    for (std::size_t d = 0; d < info; ++d) x[lo + d] += means[c * info + d];
                    break;
                case Generator::TwoRings: {
                    const double angle = 2.0 * std::numbers::pi * feat.uniform01();
                    const double radius = spec.separation * static_cast<double>(c + 1) + 0.25 * spec.spread * feat.normal();
                    x[lo] = radius * std::cos(angle);
                    x[lo + 1] = radius * std::sin(angle);
                    break;
                }
                case Generator::XorGrid: {
                    for (;;) {
                        const double u = feat.uniform(-spec.separation, spec.separation);
                        const double v = feat.uniform(-spec.separation, spec.separation);
                        const auto cell = [&](double t) {
                            const auto idx = static_cast<std::size_t>((t + spec.separation) / (2.0 * spec.separation) *
                                                                      static_cast<double>(cells));
                            return std::min(idx, cells - 1);
                        };
                        if ((cell(u) + cell(v)) % spec.classes == c) {
                            x[lo] = u;
                            x[lo + 1] = v;
                            break;
                        }
                    }
                    break;
                }
            }
        }
    }

    std::vector<std::size_t> labels = clean;
    if (spec.label_noise > 0.0) {
        SplitMix64 noise = SplitMix64::substream(spec.seed, "synth.noise");
        for (std::size_t i = 0; i < n; ++i) {
            const double u = noise.uniform01();
            const std::size_t other = static_cast<std::size_t>(noise.uniform_index(spec.classes - 1));
            if (u < spec.label_noise) labels[i] = other >= clean[i] ? other + 1 : other;
        }
    }

    Dataset all{Tensor(Shape{n, spec.dims}, std::move(values)), std::move(labels), spec.classes, "all"};

    SplitMix64 split_rng = SplitMix64::substream(spec.seed, "synth.split");
    std::vector<std::size_t> train_idx, val_idx, test_idx;
    for (std::size_t c = 0; c < spec.classes; ++c) {
        std::vector<std::size_t> members(spec.per_class);
        for (std::size_t k = 0; k < spec.per_class; ++k) members[k] = c * spec.per_class + k;
        shuffle_indices(members, split_rng);
        const auto n_train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(spec.per_class)));
        const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(spec.per_class)));
        train_idx.insert(train_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
        val_idx.insert(val_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train),
                       members.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
        test_idx.insert(test_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), members.end());
    }
    shuffle_indices(train_idx, split_rng);
    shuffle_indices(val_idx, split_rng);
    shuffle_indices(test_idx, split_rng);

    Splits out{all.subset(train_idx, "train"), all.subset(val_idx, "val"), all.subset(test_idx, "test")};
    const Standardizer st = Standardizer::fit(out.train);
    st.apply(out.train);
    st.apply(out.val);
    st.apply(out.test);
    return out;
}

Splits stratified_split(const Dataset& all, std::uint64_t seed) {
    all.validate(false);
    SplitMix64 rng = SplitMix64::substream(seed, "data.split");
    std::vector<std::vector<std::size_t>> by_class(all.classes);
    for (std::size_t i = 0; i < all.size(); ++i) by_class[all.labels[i]].push_back(i);
    std::vector<std::size_t> train_idx, val_idx, test_idx;
    for (auto& members : by_class) {
        shuffle_indices(members, rng);
        const double m = static_cast<double>(members.size());
        const auto n_train = static_cast<std::size_t>(std::llround(0.6 * m));
        const auto n_val = std::min(members.size() - n_train, static_cast<std::size_t>(std::llround(0.2 * m)));
        for (std::size_t k = 0; k < members.size(); ++k) {
            auto& dst = k < n_train ? train_idx : (k < n_train + n_val ? val_idx : test_idx);
            dst.push_back(members[k]);
        }
    }
    if (train_idx.empty() || val_idx.empty()) {
        throw InputError("split: " + std::to_string(all.size()) + " samples are too few for a train/val split");
    }
    shuffle_indices(train_idx, rng);
    shuffle_indices(val_idx, rng);
    shuffle_indices(test_idx, rng);
    return Splits{all.subset(train_idx, "train"), all.subset(val_idx, "val"), all.subset(test_idx, "test")};
}

Standardizer Standardizer::fit(const Dataset& train) {
    train.validate(false);
    const std::size_t n = train.size();
    const std::size_t d = train.samples.numel() / n;
    Standardizer st;
    st.mean.assign(d, 0.0);
    st.inv_std.assign(d, 1.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) st.mean[j] += train.samples[i * d + j];
    for (double& m : st.mean) m /= static_cast<double>(n);
    std::vector<double> var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double t = train.samples[i * d + j] - st.mean[j];
            var[j] += t * t;
        }
    for (std::size_t j = 0; j < d; ++j) {
        const double sd = std::sqrt(var[j] / static_cast<double>(n));
        st.inv_std[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
    return st;
}

void Standardizer::apply(Dataset& data) const {
    const std::size_t d = mean.size();
    if (data.size() == 0) return;
    if (data.samples.numel() != data.size() * d) {
        throw DimensionError("standardizer fitted on " + std::to_string(d) + " features applied to samples " +
                             shape_str(data.samples.shape()));
    }
    auto x = data.samples.data();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - mean[i % d]) * inv_std[i % d];
}

std::vector<std::vector<std::size_t>> balanced_batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed) {
    if (batch_size < 4) throw ConfigError("balanced batches need batch size >= 4, got " + std::to_string(batch_size));
    data.validate(false);
    SplitMix64 rng = SplitMix64::substream(seed, "balanced-batches");

    std::vector<std::vector<std::size_t>> by_class(data.classes);
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);

    // Groups of two (three when a class has an odd count) from each class.
    std::vector<std::vector<std::vector<std::size_t>>> groups(data.classes);
    for (std::size_t c = 0; c < data.classes; ++c) {
        auto& members = by_class[c];
        if (members.empty()) continue;
        if (members.size() == 1) {
            throw InputError("class " + std::to_string(c) + " has a single sample; contrastive batches need pairs");
        }
        shuffle_indices(members, rng);
        for (std::size_t k = 0; k + 1 < members.size(); k += 2) {
            groups[c].push_back({members[k], members[k + 1]});
        }
        if (members.size() % 2 == 1) groups[c].back().push_back(members.back());
    }

    // Interleave classes round-robin (class order reshuffled per round) so that a
    // batch mixes classes rather than filling up with one.
    std::vector<std::vector<std::size_t>> sequence;
    std::vector<std::size_t> cursor(data.classes, 0);
    std::vector<std::size_t> order(data.classes);
    for (std::size_t c = 0; c < data.classes; ++c) order[c] = c;
    for (bool any = true; any;) {
        any = false;
        shuffle_indices(order, rng);
        for (std::size_t c : order) {
            if (cursor[c] < groups[c].size()) {
                sequence.push_back(groups[c][cursor[c]++]);
                any = true;
            }
        }
    }

    std::vector<std::vector<std::size_t>> batches;
    std::vector<std::size_t> current;
    for (const auto& g : sequence) {
        if (!current.empty() && current.size() + g.size() > batch_size) {
            batches.push_back(std::move(current));
            current.clear();
        }
        current.insert(current.end(), g.begin(), g.end());
    }
    if (!current.empty()) batches.push_back(std::move(current));
    return batches;
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch_size, SplitMix64& rng) {
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle_indices(order, rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t b = 0; b < n; b += batch_size) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
    }
    return batches;
}

}  // namespace gps
