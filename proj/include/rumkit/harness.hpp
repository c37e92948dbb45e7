#pragma once

// Experiment plumbing: configs, the per-step tuner, run records, seed
// aggregation and cross-analysis. Plot emission lives in plots.hpp.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rumkit/metrics.hpp"
#include "rumkit/rum.hpp"
#include "rumkit/scores.hpp"
#include "rumkit/unlearners.hpp"

namespace rumkit {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

struct DatasetSpec {
    std::string kind = "blobs";  // "blobs" or "csv"
    BlobsConfig blobs;
    CsvDatasetConfig csv;
    double val_fraction = 0.1;  // carved out of train before anything is trained
    std::uint64_t val_seed = 0;
};

LabeledDataset load_dataset(const DatasetSpec& spec);

enum class PartitionMode { kEsBuckets, kMemBuckets, kMixed, kRandom, kFile };

std::string to_string(PartitionMode m);
PartitionMode parse_partition_mode(std::string_view tag);

struct PartitionSpec {
    PartitionMode mode = PartitionMode::kMemBuckets;
    int n = 50;                      // bucket size; kMixed: size of each third
    int count = 3;                   // kEsBuckets: number of windows
    std::vector<int> offsets;        // kEsBuckets; empty = evenly spread
    ScoreKind key = ScoreKind::kMemorization;  // kMemBuckets / kMixed
    std::vector<std::filesystem::path> files;  // kFile
    std::uint64_t seed = 0;                    // kRandom
};

enum class VariantKind { kVanilla, kRum, kShuffle };

std::string to_string(VariantKind k);
VariantKind parse_variant_kind(std::string_view tag);

/// One column of an experiment: a vanilla unlearner, a refined sequence, or
/// the shuffle control (random equal-size subsets, same policy).
struct VariantSpec {
    std::string name;
    VariantKind kind = VariantKind::kVanilla;
    RefinementKey refine_key = RefinementKey::kMemorization;
    MetaPolicy policy;  // vanilla: exactly one assignment
};

struct TuningSpec {
    bool enabled = false;
    /// Per-algorithm grids of config overrides; algorithms without an entry
    /// use default_tuning_grid().
    std::map<Algorithm, std::vector<nlohmann::json>> grids;
};

/// Grid over the usual hyperparameter ranges of each unlearner.
std::vector<nlohmann::json> default_tuning_grid(Algorithm algorithm);

struct ExperimentConfig {
    std::string name = "experiment";
    DatasetSpec dataset;
    TrainConfig train;
    MemorizationConfig memorization;
    PartitionSpec partition;
    std::vector<VariantSpec> variants;
    /// Per-algorithm overrides applied before variant-level overrides.
    std::map<Algorithm, nlohmann::json> unlearn_defaults;
    TuningSpec tuning;
    std::vector<std::uint64_t> seeds{0};
    /// Algorithms (vanilla variants) that run on a different seed list.
    std::map<Algorithm, std::vector<std::uint64_t>> seed_overrides;
    bool cross_analysis = false;
    std::filesystem::path output_dir = "runs";

    /// Seeds a variant runs on.
    const std::vector<std::uint64_t>& seeds_for(const VariantSpec& v) const;
    /// Union of all seed lists, ascending.
    std::vector<std::uint64_t> all_seeds() const;
    /// Whether memorization (or the c-proxy trace) must be computed.
    bool needs_scores(ScoreKind kind) const;
};

/// Parses the JSON config; relative file paths resolve against `base_dir`.
/// Unknown keys are rejected.
ExperimentConfig parse_experiment_config(const nlohmann::json& j,
                                         const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Fully resolved config (all defaults filled in). output_dir is left out so
/// it does not affect the hash.
nlohmann::json effective_config(const ExperimentConfig& config);

/// FNV-1a of the canonical (key-sorted) dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

/// scenarios/<name>.json under `scenario_dir`.
std::filesystem::path scenario_path(const std::string& name, const std::filesystem::path& scenario_dir);
std::vector<std::string> list_scenarios(const std::filesystem::path& scenario_dir);

// ---------------------------------------------------------------------------
// Per-step tuning
// ---------------------------------------------------------------------------

/// StepRunner that grid-searches each step's config against a retrain
/// oracle on that step's retain set. The score is ToW over (everything
/// unlearned so far, the step's retain set, `eval_ids`), so the test split is
/// never consulted. Oracles are cached per (retain set, seed).
class StepTuner {
public:
    StepTuner(const ExampleSource& data, IdSet train_ids, IdSet eval_ids, TuningSpec spec);

    UnlearnResult operator()(const ModelCheckpoint& model, const ForgetPartition& partition,
                             const UnlearnConfig& base, int step);
    StepRunner runner();

    std::size_t oracle_trainings() const noexcept { return oracle_trainings_; }

private:
    const ModelCheckpoint& oracle(const ModelCheckpoint& model, const ForgetPartition& partition,
                                  std::uint64_t seed);

    const ExampleSource* data_;
    IdSet train_ids_;
    IdSet eval_ids_;
    TuningSpec spec_;
    std::map<std::pair<std::uint64_t, std::uint64_t>, ModelCheckpoint> oracles_;
    std::size_t oracle_trainings_ = 0;
};

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

struct NamedPartition {
    std::string name;
    ForgetPartition partition;
};

/// Everything that is shared by all seeds of an experiment.
struct PreparedExperiment {
    ExperimentConfig config;
    LabeledDataset data;
    ModelCheckpoint original;
    ConfidenceTrace trace;
    std::optional<ScoreProfile> memorization;
    std::optional<ScoreProfile> cproxy;
    std::vector<NamedPartition> partitions;
    nlohmann::json partition_info = nlohmann::json::array();
    std::string hash;

    const IdSet& train_ids() const { return data.split("train"); }
    const IdSet& test_ids() const { return data.split("test"); }
    /// "val" when present, otherwise empty.
    IdSet val_ids() const;
    const ScoreProfile* scores_for(RefinementKey key) const;
};

/// Artifacts produced elsewhere (e.g. by earlier CLI steps) that replace the
/// trained or estimated ones.
struct PreparedInputs {
    std::optional<ModelCheckpoint> original;
    std::optional<ConfidenceTrace> trace;
    std::optional<ScoreProfile> memorization;
};

/// Loads data, trains (or loads from `cache_dir`) the original model,
/// estimates the needed scores and builds the partitions.
PreparedExperiment prepare_experiment(const ExperimentConfig& config,
                                      const std::filesystem::path& cache_dir = {}, PreparedInputs inputs = {});

struct CellResult {
    std::string partition;
    std::string variant;
    MetricsReport report;
    std::optional<SequenceTrace> trace;
    std::vector<UnlearnConfig> configs;  // as run (tuned), in execution order
};

struct RunRecord {
    std::string scenario;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<CellResult> cells;
    nlohmann::json partitions = nlohmann::json::array();
    nlohmann::json environment = nlohmann::json::object();
    nlohmann::json effective_config;  // null unless requested
};

void to_json(nlohmann::json& j, const CellResult& c);
void from_json(const nlohmann::json& j, CellResult& c);
void to_json(nlohmann::json& j, const RunRecord& r);
void from_json(const nlohmann::json& j, RunRecord& r);

/// Compiler, platform, library version and UTC time.
nlohmann::json environment_stamp();

/// All cells of one seed.
RunRecord run_seed(const PreparedExperiment& prepared, std::uint64_t seed);

/// output_dir/<hash>/<seed>.json, written atomically.
std::filesystem::path run_record_path(const std::filesystem::path& output_dir, const std::string& hash,
                                      std::uint64_t seed);
std::filesystem::path save_run_record(const RunRecord& record, const std::filesystem::path& output_dir);
RunRecord load_run_record(const std::filesystem::path& path);
/// Every <seed>.json below `dir` (recursively), sorted by path.
std::vector<RunRecord> load_run_records(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Two-sided 95% Student-t critical value t(0.975, dof).
double t_critical_95(int dof);

struct MeanCi {
    std::size_t n = 0;
    double mean = 0.0;
    double stderr_mean = 0.0;
    std::optional<double> half_width;  // absent for n == 1
};

/// Mean and Student-t 95% half-width. Values are summed in sorted order so
/// the result does not depend on input order.
MeanCi mean_ci(std::vector<double> values);

/// Named scalar of a report: tow, tow_mia, mia, mia_retrain, mia_gap,
/// forget_acc, retain_acc, test_acc, retrain_forget_acc, retrain_retain_acc,
/// retrain_test_acc, disagreement_forget, disagreement_retain,
/// disagreement_test, wall_seconds.
double metric_value(const MetricsReport& report, std::string_view metric);
const std::vector<std::string>& metric_names();

struct AggregateRow {
    std::string scenario;
    std::string partition;
    std::string variant;
    std::string metric;
    MeanCi stats;
};

/// One row per (scenario, partition, variant, metric), sorted by those keys.
std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records, const std::vector<std::string>& metrics);

/// report.csv and report.json in `dir`.
void write_aggregate(const std::vector<AggregateRow>& rows, const std::filesystem::path& dir);

/// Looks up one aggregated cell.
const AggregateRow* find_row(const std::vector<AggregateRow>& rows, std::string_view partition,
                             std::string_view variant, std::string_view metric);

// ---------------------------------------------------------------------------
// Cross-analysis of ES and memorization buckets
// ---------------------------------------------------------------------------

struct CrossAnalysis {
    struct EsOfBucket {
        std::string bucket;
        std::size_t size = 0;
        double es = 0.0;
        double es_random = 0.0;  // random forget set of the same size
    };
    struct MemOfBucket {
        std::string bucket;
        std::size_t size = 0;
        double mem_mean = 0.0;
        double mem_std = 0.0;
    };
    std::vector<EsOfBucket> mem_buckets;
    std::vector<MemOfBucket> es_buckets;
};

CrossAnalysis cross_analysis(const EmbeddingMatrix& train_embeddings, const ScoreProfile& memorization,
                             const std::vector<NamedPartition>& mem_buckets,
                             const std::vector<NamedPartition>& es_buckets, std::uint64_t seed);

/// Builds both bucket families from a prepared experiment (which must carry
/// memorization scores): low/mid/high mem buckets and three evenly spread ES
/// windows, all of the configured size n.
CrossAnalysis cross_analysis(const PreparedExperiment& prepared);

/// cross_analysis.csv and cross_analysis.json; byte-identical for equal inputs.
void write_cross_analysis(const CrossAnalysis& analysis, const std::filesystem::path& dir);

/// Decimal text of a double that round-trips exactly.
std::string format_number(double v);

}  // namespace rumkit
