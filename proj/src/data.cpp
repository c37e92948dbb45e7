#include "rumkit/data.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rumkit/io.hpp"
#include "rumkit/random.hpp"

namespace rumkit {

// ---------------------------------------------------------------------------
// IdSet
// ---------------------------------------------------------------------------

IdSet::IdSet(std::vector<ExampleId> ids) : ids_(std::move(ids)) {
    std::sort(ids_.begin(), ids_.end());
    ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());
}

IdSet::IdSet(std::initializer_list<ExampleId> ids) : IdSet(std::vector<ExampleId>(ids)) {}

IdSet IdSet::range(ExampleId first, ExampleId last) {
    std::vector<ExampleId> ids;
    if (last >= first) {
        ids.reserve(static_cast<std::size_t>(last - first + 1));
        for (ExampleId i = first; i <= last; ++i) ids.push_back(i);
    }
    IdSet out;
    out.ids_ = std::move(ids);
    return out;
}

bool IdSet::contains(ExampleId id) const {
    return std::binary_search(ids_.begin(), ids_.end(), id);
}

bool IdSet::is_subset_of(const IdSet& other) const {
    return std::includes(other.ids_.begin(), other.ids_.end(), ids_.begin(), ids_.end());
}

bool IdSet::intersects(const IdSet& other) const {
    auto a = ids_.begin();
    auto b = other.ids_.begin();
    while (a != ids_.end() && b != other.ids_.end()) {
        if (*a == *b) return true;
        if (*a < *b) ++a; else ++b;
    }
    return false;
}

IdSet operator|(const IdSet& a, const IdSet& b) {
    IdSet out;
    out.ids_.reserve(a.size() + b.size());
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out.ids_));
    return out;
}

IdSet operator&(const IdSet& a, const IdSet& b) {
    IdSet out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                          std::back_inserter(out.ids_));
    return out;
}

IdSet operator-(const IdSet& a, const IdSet& b) {
    IdSet out;
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out.ids_));
    return out;
}

// ---------------------------------------------------------------------------
// LabeledDataset
// ---------------------------------------------------------------------------

LabeledDataset::LabeledDataset(std::string name, int num_classes, FeatureShape shape,
                               std::vector<ExampleId> ids, Eigen::MatrixXd features,
                               std::vector<int> labels, std::map<std::string, IdSet> splits)
    : name_(std::move(name)),
      num_classes_(num_classes),
      shape_(shape),
      ids_(std::move(ids)),
      features_(std::make_shared<const Eigen::MatrixXd>(std::move(features))),
      labels_(std::move(labels)),
      splits_(std::move(splits)) {
    if (num_classes_ < 2) throw InvalidArgument("dataset needs at least 2 classes");
    if (static_cast<std::size_t>(features_->rows()) != ids_.size() ||
        labels_.size() != ids_.size()) {
        throw InvalidArgument("dataset ids, features and labels differ in length");
    }
    if (features_->cols() != shape_.size()) {
        throw InvalidArgument("feature width " + std::to_string(features_->cols()) +
                              " does not match shape size " + std::to_string(shape_.size()));
    }
    index_.reserve(ids_.size());
    for (std::size_t r = 0; r < ids_.size(); ++r) {
        if (!index_.emplace(ids_[r], static_cast<Eigen::Index>(r)).second) {
            throw InvalidArgument("duplicate example id " + std::to_string(ids_[r]));
        }
        if (labels_[r] < 0 || labels_[r] >= num_classes_) {
            throw InvalidArgument("label out of range for id " + std::to_string(ids_[r]));
        }
    }
    universe_ = IdSet(ids_);
    validate_splits();
}

void LabeledDataset::validate_splits() const {
    for (const auto& [split_name, members] : splits_) {
        if (!members.is_subset_of(universe_)) {
            throw InvalidArgument("split '" + split_name + "' references unknown ids");
        }
    }
    const auto train = splits_.find("train");
    const auto test = splits_.find("test");
    if (train != splits_.end() && test != splits_.end() &&
        train->second.intersects(test->second)) {
        throw InvalidArgument("train and test splits overlap");
    }
    const auto val = splits_.find("val");
    if (val != splits_.end()) {
        if (train != splits_.end() && train->second.intersects(val->second))
            throw InvalidArgument("train and val splits overlap");
        if (test != splits_.end() && test->second.intersects(val->second))
            throw InvalidArgument("test and val splits overlap");
    }
}

bool LabeledDataset::has_split(std::string_view name) const {
    return splits_.find(std::string(name)) != splits_.end();
}

const IdSet& LabeledDataset::split(std::string_view name) const {
    const auto it = splits_.find(std::string(name));
    if (it == splits_.end()) throw InvalidArgument("no split named '" + std::string(name) + "'");
    return it->second;
}

Eigen::Index LabeledDataset::row_of(ExampleId id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw InvalidArgument("unknown example id " + std::to_string(id));
    return it->second;
}

int LabeledDataset::label(ExampleId id) const {
    return labels_[static_cast<std::size_t>(row_of(id))];
}

Eigen::MatrixXd LabeledDataset::gather(std::span<const ExampleId> ids) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(ids.size()), features_->cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = features_->row(row_of(ids[i]));
    }
    return out;
}

std::vector<int> LabeledDataset::labels(std::span<const ExampleId> ids) const {
    std::vector<int> out;
    out.reserve(ids.size());
    for (const auto id : ids) out.push_back(labels_[static_cast<std::size_t>(row_of(id))]);
    return out;
}

LabeledDataset LabeledDataset::with_splits(std::map<std::string, IdSet> splits) const {
    LabeledDataset copy = *this;
    copy.splits_ = std::move(splits);
    copy.validate_splits();
    return copy;
}

LabeledDataset LabeledDataset::with_labels(const std::map<ExampleId, int>& overrides) const {
    LabeledDataset copy = *this;
    for (const auto& [id, label] : overrides) {
        if (label < 0 || label >= num_classes_) {
            throw InvalidArgument("label out of range for id " + std::to_string(id));
        }
        copy.labels_[static_cast<std::size_t>(row_of(id))] = label;
    }
    return copy;
}

// ---------------------------------------------------------------------------
// Generators and loaders
// ---------------------------------------------------------------------------

namespace {

struct BlobDraw {
    Eigen::MatrixXd features;
    std::vector<int> true_labels;
    std::vector<int> labels;
    std::vector<bool> flipped;
};

BlobDraw draw_blobs(const BlobsConfig& cfg) {
    if (cfg.n_train < 1 || cfg.n_test < 0 || cfg.dim < 1 || cfg.num_classes < 2) {
        throw InvalidArgument("invalid blobs configuration");
    }
    if (cfg.label_noise < 0.0 || cfg.label_noise > 1.0) {
        throw InvalidArgument("label_noise must lie in [0, 1]");
    }
    Rng center_rng(derive_seed(cfg.seed, 1));
    Eigen::MatrixXd centers(cfg.num_classes, cfg.dim);
    for (int c = 0; c < cfg.num_classes; ++c)
        for (int d = 0; d < cfg.dim; ++d)
            centers(c, d) = (2.0 * center_rng.uniform() - 1.0) * cfg.center_scale;

    const int n = cfg.n_train + cfg.n_test;
    BlobDraw draw;
    draw.features.resize(n, cfg.dim);
    draw.true_labels.resize(static_cast<std::size_t>(n));
    Rng point_rng(derive_seed(cfg.seed, 2));
    for (int i = 0; i < n; ++i) {
        const int c = i % cfg.num_classes;
        draw.true_labels[static_cast<std::size_t>(i)] = c;
        for (int d = 0; d < cfg.dim; ++d)
            draw.features(i, d) = centers(c, d) + cfg.cluster_std * point_rng.normal();
    }
    draw.labels = draw.true_labels;
    draw.flipped.assign(static_cast<std::size_t>(n), false);
    const auto n_flip = static_cast<int>(std::lround(cfg.label_noise * cfg.n_train));
    if (n_flip > 0) {
        std::vector<int> order(static_cast<std::size_t>(cfg.n_train));
        for (int i = 0; i < cfg.n_train; ++i) order[static_cast<std::size_t>(i)] = i;
        Rng noise_rng(derive_seed(cfg.seed, 3));
        noise_rng.shuffle(std::span<int>(order));
        for (int k = 0; k < n_flip; ++k) {
            const auto i = static_cast<std::size_t>(order[static_cast<std::size_t>(k)]);
            const auto shift = 1 + static_cast<int>(noise_rng.below(
                                       static_cast<std::uint64_t>(cfg.num_classes - 1)));
            draw.labels[i] = (draw.true_labels[i] + shift) % cfg.num_classes;
            draw.flipped[i] = true;
        }
    }
    return draw;
}

}  // namespace

LabeledDataset make_blobs(const BlobsConfig& cfg) {
    BlobDraw draw = draw_blobs(cfg);
    const int n = cfg.n_train + cfg.n_test;
    std::vector<ExampleId> ids(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
    std::map<std::string, IdSet> splits{
        {"train", IdSet::range(0, cfg.n_train - 1)},
        {"test", IdSet::range(cfg.n_train, n - 1)},
    };
    return LabeledDataset("blobs", cfg.num_classes, FeatureShape{1, 1, cfg.dim}, std::move(ids),
                          std::move(draw.features), std::move(draw.labels), std::move(splits));
}

IdSet blobs_noisy_ids(const BlobsConfig& cfg) {
    const BlobDraw draw = draw_blobs(cfg);
    std::vector<ExampleId> ids;
    for (std::size_t i = 0; i < draw.flipped.size(); ++i)
        if (draw.flipped[i]) ids.push_back(static_cast<ExampleId>(i));
    return IdSet(std::move(ids));
}

LabeledDataset load_csv_dataset(const CsvDatasetConfig& cfg) {
    std::ifstream in(cfg.path);
    if (!in) throw FormatError("cannot open dataset file " + cfg.path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty dataset file " + cfg.path.string());
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    int width = -1;
    int max_label = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        bool first = true;
        int label = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                if (first) {
                    label = std::stoi(cell);
                    first = false;
                } else {
                    row.push_back(std::stod(cell) / cfg.scale);
                }
            } catch (const std::exception&) {
                throw FormatError("bad numeric cell '" + cell + "' in " + cfg.path.string());
            }
        }
        if (width < 0) width = static_cast<int>(row.size());
        if (static_cast<int>(row.size()) != width || label < 0) {
            throw FormatError("ragged or invalid row in " + cfg.path.string());
        }
        max_label = std::max(max_label, label);
        rows.push_back(std::move(row));
        labels.push_back(label);
    }
    if (rows.empty()) throw FormatError("no rows in " + cfg.path.string());

    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, 11));
    rng.shuffle(std::span<std::size_t>(order));
    if (cfg.max_examples > 0 && static_cast<std::size_t>(cfg.max_examples) < order.size()) {
        order.resize(static_cast<std::size_t>(cfg.max_examples));
    }
    const auto n = order.size();
    FeatureShape shape = cfg.shape;
    if (shape.size() == 1 && width != 1) shape = FeatureShape{1, 1, width};
    Eigen::MatrixXd features(static_cast<Eigen::Index>(n), width);
    std::vector<int> picked_labels(n);
    std::vector<ExampleId> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        ids[i] = static_cast<ExampleId>(i);
        picked_labels[i] = labels[order[i]];
        for (int d = 0; d < width; ++d) features(static_cast<Eigen::Index>(i), d) = rows[order[i]][static_cast<std::size_t>(d)];
    }
    const auto n_test = static_cast<ExampleId>(std::lround(cfg.test_fraction * static_cast<double>(n)));
    const auto n_train = static_cast<ExampleId>(n) - n_test;
    if (n_train < 1) throw InvalidArgument("test_fraction leaves no training data");
    const int num_classes = max_label + 1;
    const auto n_flip = static_cast<std::size_t>(std::lround(cfg.label_noise * static_cast<double>(n_train)));
    if (n_flip > 0) {
        Rng noise_rng(derive_seed(cfg.seed, 12));
        std::vector<std::size_t> train_order(static_cast<std::size_t>(n_train));
        for (std::size_t i = 0; i < train_order.size(); ++i) train_order[i] = i;
        noise_rng.shuffle(std::span<std::size_t>(train_order));
        for (std::size_t k = 0; k < n_flip && k < train_order.size(); ++k) {
            auto& label = picked_labels[train_order[k]];
            const auto shift = 1 + static_cast<int>(noise_rng.below(static_cast<std::uint64_t>(num_classes - 1)));
            label = (label + shift) % num_classes;
        }
    }
    std::map<std::string, IdSet> splits{
        {"train", IdSet::range(0, n_train - 1)},
        {"test", IdSet::range(n_train, static_cast<ExampleId>(n) - 1)},
    };
    return LabeledDataset(cfg.name, num_classes, shape, std::move(ids), std::move(features),
                          std::move(picked_labels), std::move(splits));
}

LabeledDataset hold_out_validation(const LabeledDataset& dataset, double fraction,
                                   std::uint64_t seed) {
    if (fraction < 0.0 || fraction >= 1.0) throw InvalidArgument("val fraction must lie in [0, 1)");
    const IdSet& train = dataset.split("train");
    std::vector<ExampleId> order = train.ids();
    Rng rng(derive_seed(seed, 21));
    rng.shuffle(std::span<ExampleId>(order));
    const auto n_val = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(order.size())));
    if (n_val >= order.size()) throw InvalidArgument("val fraction leaves no training data");
    IdSet val(std::vector<ExampleId>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val)));
    auto splits = dataset.splits();
    splits["train"] = train - val;
    splits["val"] = std::move(val);
    return dataset.with_splits(std::move(splits));
}

// ---------------------------------------------------------------------------
// Partitions
// ---------------------------------------------------------------------------

namespace {
constexpr std::array<std::pair<Provenance, std::string_view>, 9> kProvenanceTags{{
    {Provenance::kEsLow, "es-low"},   {Provenance::kEsMed, "es-med"},
    {Provenance::kEsHigh, "es-high"}, {Provenance::kMemLow, "mem-low"},
    {Provenance::kMemMed, "mem-med"}, {Provenance::kMemHigh, "mem-high"},
    {Provenance::kMixed, "mixed"},    {Provenance::kRandom, "random"},
    {Provenance::kCustom, "custom"},
}};
}  // namespace

std::string to_string(Provenance p) {
    for (const auto& [value, tag] : kProvenanceTags)
        if (value == p) return std::string(tag);
    return "custom";
}

Provenance parse_provenance(std::string_view tag) {
    for (const auto& [value, name] : kProvenanceTags)
        if (name == tag) return value;
    throw InvalidArgument("unknown provenance tag '" + std::string(tag) + "'");
}

ForgetPartition make_partition(const IdSet& train_ids, const IdSet& forget_ids,
                               Provenance provenance) {
    if (forget_ids.empty()) throw InvalidArgument("forget set is empty");
    if (!forget_ids.is_subset_of(train_ids)) {
        throw InvalidArgument("forget set contains ids outside the train split");
    }
    IdSet retain = train_ids - forget_ids;
    if (retain.empty()) throw InvalidArgument("retain set would be empty");
    return ForgetPartition{forget_ids, std::move(retain), provenance};
}

std::vector<IdSet> random_subsets(const ForgetPartition& partition, int k, std::uint64_t seed) {
    const auto n = partition.forget_ids.size();
    if (k < 1 || static_cast<std::size_t>(k) > n) {
        throw InvalidArgument("k must lie in [1, |forget set|]");
    }
    std::vector<ExampleId> order = partition.forget_ids.ids();
    Rng rng(derive_seed(seed, 31));
    rng.shuffle(std::span<ExampleId>(order));
    std::vector<IdSet> out;
    out.reserve(static_cast<std::size_t>(k));
    const auto uk = static_cast<std::size_t>(k);
    std::size_t begin = 0;
    for (std::size_t i = 0; i < uk; ++i) {
        const std::size_t len = n / uk + (i < n % uk ? 1 : 0);
        out.emplace_back(std::vector<ExampleId>(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                                order.begin() + static_cast<std::ptrdiff_t>(begin + len)));
        begin += len;
    }
    return out;
}

void save_partition(const ForgetPartition& partition, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["provenance"] = to_string(partition.provenance);
    j["forget_ids"] = partition.forget_ids.ids();
    j["retain_ids"] = partition.retain_ids.ids();
    write_file_atomic(path, j.dump() + "\n");
}

ForgetPartition load_partition(const std::filesystem::path& path, const IdSet& train_ids) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed partition file " + path.string() + ": " + e.what());
    }
    ForgetPartition p;
    try {
        p.provenance = parse_provenance(j.at("provenance").get<std::string>());
        p.forget_ids = IdSet(j.at("forget_ids").get<std::vector<ExampleId>>());
        p.retain_ids = IdSet(j.at("retain_ids").get<std::vector<ExampleId>>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed partition file " + path.string() + ": " + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError("malformed partition file " + path.string() + ": " + e.what());
    }
    if (p.forget_ids.empty()) throw FormatError("partition file has an empty forget set");
    if (p.retain_ids.empty()) throw FormatError("partition file has an empty retain set");
    if (p.forget_ids.intersects(p.retain_ids)) {
        throw FormatError("partition file has overlapping forget and retain ids");
    }
    if (!train_ids.empty() && !(p.universe() == train_ids)) {
        throw FormatError("partition ids do not match the train split (unknown or missing ids)");
    }
    return p;
}

}  // namespace rumkit
