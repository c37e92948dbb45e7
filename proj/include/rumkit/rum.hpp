#pragma once

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "rumkit/metrics.hpp"
#include "rumkit/scores.hpp"
#include "rumkit/unlearners.hpp"

namespace rumkit {

enum class RefinementKey { kMemorization, kCProxy, kRandom };

std::string to_string(RefinementKey k);
RefinementKey parse_refinement_key(std::string_view tag);

struct RefinementSpec {
    RefinementKey key = RefinementKey::kMemorization;
    int k = 3;
    /// Empty: equal-size contiguous ranges of the ascending score order.
    /// Otherwise one BucketSpec per subset, applied to the forget set's scores;
    /// the resulting subsets must partition the forget set.
    std::vector<BucketSpec> buckets;
    std::uint64_t seed = 0;  // kRandom only
};

/// Splits the forget set into k disjoint subsets. Score keys give subsets in
/// ascending score order (ties by id); kRandom delegates to random_subsets.
std::vector<IdSet> refine(const ForgetPartition& partition, const ScoreProfile* scores, const RefinementSpec& spec);

enum class ExecutionOrder { kLowToHigh, kHighToLow, kExplicit };

std::string to_string(ExecutionOrder o);
ExecutionOrder parse_execution_order(std::string_view tag);

/// Which unlearner handles each subset, and in which order subsets go.
struct MetaPolicy {
    ExecutionOrder order = ExecutionOrder::kLowToHigh;
    std::vector<int> permutation;             // kExplicit only
    std::vector<UnlearnConfig> assignment;    // indexed by subset (bucket) index

    /// Subset indices in execution order; validates the policy for k subsets.
    std::vector<int> execution_order(std::size_t k) const;
};

/// Low-to-high and high-to-low permutations of k score-sorted subsets.
std::pair<std::vector<int>, std::vector<int>> order_variants(std::size_t k);

/// Step i forgets subsets[order[i]] and retains R plus all subsets that come
/// later in `order`.
std::vector<ForgetPartition> rum_step_partitions(const ForgetPartition& partition, const std::vector<IdSet>& subsets,
                                                 const std::vector<int>& order);

struct SequenceStep {
    int bucket = 0;
    IdSet subset;
    Algorithm algorithm = Algorithm::kNoop;
    UnlearnConfig config;
    EvalTriple overall;                   // on the full S, R and test
    std::vector<double> subset_accuracy;  // forget accuracy per bucket index
    double wall_seconds = 0.0;
};

struct SequenceTrace {
    std::vector<SequenceStep> steps;
};

struct RumResult {
    ModelCheckpoint model;
    SequenceTrace trace;
    double wall_seconds = 0.0;
};

/// Thrown when a step's unlearner fails; carries the steps completed so far.
class RumStepError : public Error {
public:
    RumStepError(const std::string& what, int failed_step, SequenceTrace partial)
        : Error(what), failed_step_(failed_step), partial_(std::move(partial)) {}
    int failed_step() const noexcept { return failed_step_; }
    const SequenceTrace& partial_trace() const noexcept { return partial_; }

private:
    int failed_step_;
    SequenceTrace partial_;
};

/// Runs one step's unlearner. The default is unlearn(); the harness swaps in
/// a per-step hyperparameter search.
using StepRunner = std::function<UnlearnResult(const ModelCheckpoint&, const ForgetPartition&, const UnlearnConfig&,
                                               int step)>;

/// Sequential unlearning of the subsets under `policy`. Snapshots of the
/// model's accuracy on S, R, `eval_test_ids` and every subset are taken after
/// each step; the unlearners themselves only see forget and retain data.
RumResult run_rum(const ModelCheckpoint& model, const ExampleSource& data, const ForgetPartition& partition,
                  const std::vector<IdSet>& subsets, const MetaPolicy& policy, const IdSet& eval_test_ids,
                  const StepRunner& runner = {});

}  // namespace rumkit
