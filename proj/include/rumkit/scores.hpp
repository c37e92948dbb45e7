#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rumkit/backend.hpp"
#include "rumkit/data.hpp"

namespace rumkit {

enum class ScoreKind { kMemorization, kCProxy, kCentroidDistance, kExternal };

std::string to_string(ScoreKind k);
ScoreKind parse_score_kind(std::string_view tag);

/// Per-example scalar scores keyed by id.
struct ScoreProfile {
    ScoreKind kind = ScoreKind::kExternal;
    std::map<ExampleId, double> values;
    nlohmann::json metadata = nlohmann::json::object();
    /// Ids whose score could not be estimated reliably; excluded from buckets.
    IdSet low_confidence;

    IdSet ids() const;
};

// ---------------------------------------------------------------------------
// Embedding-space scores
// ---------------------------------------------------------------------------

/// Entanglement score of a retain/forget split of an embedding set:
///
///   ES = (mean_R |x - mu_R|^2 + mean_S |x - mu_S|^2)
///        / (0.5 * (|mu_R - mu|^2 + |mu_S - mu|^2))
///
/// with mu the mean of the pooled rows. Throws DegenerateError when the
/// centroids coincide.
double entanglement_score(const Eigen::MatrixXd& retain, const Eigen::MatrixXd& forget);
double entanglement_score(const EmbeddingMatrix& retain, const EmbeddingMatrix& forget);

/// Ids sorted by descending squared distance to the global centroid, ties by
/// ascending id.
std::vector<ExampleId> centroid_distance_ranking(const EmbeddingMatrix& embeddings);

/// Bucket k is ranking[offset_k, offset_k + size) as a forget set over the
/// ranked ids. The first bucket is "es-low", the last "es-high".
std::vector<ForgetPartition> es_buckets(std::span<const ExampleId> ranking, int size,
                                        std::span<const int> offsets);

/// `count` offsets spread evenly so the last window ends at the ranking end.
std::vector<int> even_offsets(std::size_t ranking_size, int size, int count);

/// Median pairwise Euclidean distance over the pooled rows.
double median_heuristic_bandwidth(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Biased (V-statistic) squared MMD with k(x,y) = exp(-|x-y|^2 / (2 sigma^2)),
/// clamped at 0. `sigma` defaults to the median heuristic.
double mmd_rbf(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
               std::optional<double> sigma = std::nullopt);

/// Top-2 principal axes by power iteration with deflation.
struct Projection2d {
    Eigen::RowVectorXd mean;
    Eigen::MatrixXd axes;         // d x 2
    Eigen::Vector2d variances;
    Eigen::MatrixXd coordinates;  // n x 2
};
Projection2d project_2d(const Eigen::MatrixXd& rows, int iterations = 500);

// ---------------------------------------------------------------------------
// Data-space scores
// ---------------------------------------------------------------------------

struct MemorizationConfig {
    int m_models = 20;
    double inclusion_prob = 0.7;
    std::uint64_t seed = 0;
    int threads = 1;
};

/// Subsampled in/out estimate of memorization: train m models on independent
/// inclusion_prob-subsamples of `train_ids`; for each id,
/// mem = P[correct | included] - P[correct | excluded]. Ids never included or
/// never excluded get 0 and are flagged low-confidence.
ScoreProfile estimate_memorization(const ExampleSource& data, const IdSet& train_ids,
                                   const TrainConfig& trainer, const MemorizationConfig& config);

/// Per-id mean of the confidence trace.
ScoreProfile confidence_proxy(const ConfidenceTrace& trace);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::map<ExampleId, double>& a, const std::map<ExampleId, double>& b);
double spearman(std::span<const double> a, std::span<const double> b);

enum class BucketMode { kLowest, kNearestMidpoint, kHighest, kContiguousRange };

std::string to_string(BucketMode m);
BucketMode parse_bucket_mode(std::string_view tag);

struct BucketSpec {
    ScoreKind key = ScoreKind::kMemorization;
    BucketMode mode = BucketMode::kLowest;
    int n = 1;
    int offset = 0;         // kContiguousRange: start in the ascending order
    double midpoint = 0.5;  // kNearestMidpoint
};

/// Selects n ids from the profile (flagged ids excluded), ties by ascending id.
IdSet score_buckets(const ScoreProfile& profile, const BucketSpec& spec);

/// lowest-n, nearest-to-0.5-n and highest-n. Throws DegenerateError if any two
/// overlap.
std::array<IdSet, 3> low_mid_high_buckets(const ScoreProfile& profile, int n);

void save_score_profile(const ScoreProfile& profile, const std::filesystem::path& path);
/// Reads either the JSON profile format or a two-column `id,score` CSV table.
ScoreProfile load_score_profile(const std::filesystem::path& path,
                                ScoreKind csv_kind = ScoreKind::kExternal);

}  // namespace rumkit
