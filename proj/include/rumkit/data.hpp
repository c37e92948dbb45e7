#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rumkit/error.hpp"

namespace rumkit {

// ---------------------------------------------------------------------------
// IdSet: a sorted, duplicate-free set of example ids.
// ---------------------------------------------------------------------------
class IdSet {
public:
    IdSet() = default;
    explicit IdSet(std::vector<ExampleId> ids);
    IdSet(std::initializer_list<ExampleId> ids);

    /// Ids first..last inclusive.
    static IdSet range(ExampleId first, ExampleId last);

    bool contains(ExampleId id) const;
    bool is_subset_of(const IdSet& other) const;
    bool intersects(const IdSet& other) const;

    std::size_t size() const noexcept { return ids_.size(); }
    bool empty() const noexcept { return ids_.empty(); }
    const std::vector<ExampleId>& ids() const noexcept { return ids_; }
    std::span<const ExampleId> span() const noexcept { return ids_; }
    auto begin() const noexcept { return ids_.begin(); }
    auto end() const noexcept { return ids_.end(); }

    friend IdSet operator|(const IdSet& a, const IdSet& b);
    friend IdSet operator&(const IdSet& a, const IdSet& b);
    friend IdSet operator-(const IdSet& a, const IdSet& b);
    friend bool operator==(const IdSet&, const IdSet&) = default;

private:
    std::vector<ExampleId> ids_;
};

// ---------------------------------------------------------------------------
// Example access.
// ---------------------------------------------------------------------------

/// Image-like layout of a feature row; flat feature vectors use 1x1xD.
struct FeatureShape {
    int channels = 1;
    int height = 1;
    int width = 1;

    int size() const noexcept { return channels * height * width; }
    bool is_image() const noexcept { return height > 1 && width > 1; }
    friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
};

/// Read-only access to labeled examples by id. Training and unlearning only
/// ever touch data through this interface.
class ExampleSource {
public:
    virtual ~ExampleSource() = default;

    virtual int num_classes() const = 0;
    virtual FeatureShape shape() const = 0;
    /// One row per id, in the order given.
    virtual Eigen::MatrixXd gather(std::span<const ExampleId> ids) const = 0;
    virtual std::vector<int> labels(std::span<const ExampleId> ids) const = 0;
};

class LabeledDataset final : public ExampleSource {
public:
    LabeledDataset(std::string name, int num_classes, FeatureShape shape,
                   std::vector<ExampleId> ids, Eigen::MatrixXd features,
                   std::vector<int> labels,
                   std::map<std::string, IdSet> splits = {});

    const std::string& name() const noexcept { return name_; }
    int num_classes() const override { return num_classes_; }
    FeatureShape shape() const override { return shape_; }
    std::size_t size() const noexcept { return ids_.size(); }

    const IdSet& all_ids() const noexcept { return universe_; }
    bool has_split(std::string_view name) const;
    const IdSet& split(std::string_view name) const;
    const std::map<std::string, IdSet>& splits() const noexcept { return splits_; }

    bool contains(ExampleId id) const { return index_.contains(id); }
    int label(ExampleId id) const;
    Eigen::MatrixXd gather(std::span<const ExampleId> ids) const override;
    std::vector<int> labels(std::span<const ExampleId> ids) const override;

    /// Copy with `splits` replaced (validated like the constructor).
    LabeledDataset with_splits(std::map<std::string, IdSet> splits) const;
    /// Copy with the given labels overridden.
    LabeledDataset with_labels(const std::map<ExampleId, int>& overrides) const;

private:
    Eigen::Index row_of(ExampleId id) const;
    void validate_splits() const;

    std::string name_;
    int num_classes_;
    FeatureShape shape_;
    std::vector<ExampleId> ids_;
    std::shared_ptr<const Eigen::MatrixXd> features_;
    std::vector<int> labels_;
    std::unordered_map<ExampleId, Eigen::Index> index_;
    IdSet universe_;
    std::map<std::string, IdSet> splits_;
};

// ---------------------------------------------------------------------------
// Dataset construction.
// ---------------------------------------------------------------------------

/// Gaussian blobs with optional symmetric label noise on the train split.
/// Train ids are 0..n_train-1, test ids follow.
struct BlobsConfig {
    int n_train = 1000;
    int n_test = 500;
    int dim = 2;
    int num_classes = 2;
    double cluster_std = 1.0;
    double center_scale = 5.0;  // centers drawn uniformly in [-scale, scale]^dim
    double label_noise = 0.0;   // fraction of train labels flipped to another class
    std::uint64_t seed = 0;
};

LabeledDataset make_blobs(const BlobsConfig& cfg);

/// Ids of train examples whose label was flipped by make_blobs (recomputed
/// from the generator, so it is exact for a given config).
IdSet blobs_noisy_ids(const BlobsConfig& cfg);

/// CSV with a header row and columns `label,f0,f1,...`. Features are divided
/// by `scale`. A deterministic subsample of `max_examples` rows (0 = all) is
/// taken, then `test_fraction` of it becomes the test split.
struct CsvDatasetConfig {
    std::filesystem::path path;
    std::string name = "csv";
    FeatureShape shape{};  // defaults to 1x1xD when left at 1x1x1
    double scale = 1.0;
    int max_examples = 0;
    double test_fraction = 0.2;
    double label_noise = 0.0;
    std::uint64_t seed = 0;
};

LabeledDataset load_csv_dataset(const CsvDatasetConfig& cfg);

/// Moves a seeded `fraction` of "train" into a new "val" split.
LabeledDataset hold_out_validation(const LabeledDataset& dataset, double fraction,
                                   std::uint64_t seed);

// ---------------------------------------------------------------------------
// Forget / retain partitions.
// ---------------------------------------------------------------------------

enum class Provenance {
    kEsLow, kEsMed, kEsHigh,
    kMemLow, kMemMed, kMemHigh,
    kMixed, kRandom, kCustom,
};

std::string to_string(Provenance p);
Provenance parse_provenance(std::string_view tag);

struct ForgetPartition {
    IdSet forget_ids;
    IdSet retain_ids;
    Provenance provenance = Provenance::kCustom;

    IdSet universe() const { return forget_ids | retain_ids; }
    friend bool operator==(const ForgetPartition&, const ForgetPartition&) = default;
};

/// retain = train_ids \ forget_ids. Rejects empty forget or retain sets and
/// forget ids outside `train_ids`.
ForgetPartition make_partition(const IdSet& train_ids, const IdSet& forget_ids,
                               Provenance provenance);

/// Seeded split of the forget set into k disjoint subsets whose sizes differ
/// by at most one.
std::vector<IdSet> random_subsets(const ForgetPartition& partition, int k,
                                  std::uint64_t seed);

void save_partition(const ForgetPartition& partition, const std::filesystem::path& path);

/// Loads and validates a partition. When `train_ids` is non-empty, the
/// partition must cover exactly that universe.
ForgetPartition load_partition(const std::filesystem::path& path,
                               const IdSet& train_ids = {});

}  // namespace rumkit
