#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rumkit/backend.hpp"
#include "rumkit/data.hpp"

namespace rumkit {

enum class Algorithm {
    kRetrain,
    kNoop,
    kFinetune,
    kNegGrad,
    kNegGradPlus,
    kL1Sparse,
    kScrub,
    kRandomLabel,
    kSalUn,
};

/// Stable tags: retrain, noop, finetune, neggrad, neggrad_plus, l1_sparse,
/// scrub, random_label, salun. "nothing" parses as noop.
std::string to_string(Algorithm a);
Algorithm parse_algorithm(std::string_view tag);
const std::vector<Algorithm>& all_algorithms();

/// Hyperparameters of one unlearning call. Only the fields the algorithm uses
/// are read (and validated).
struct UnlearnConfig {
    Algorithm algorithm = Algorithm::kFinetune;
    int epochs = 10;
    double learning_rate = 0.05;
    LrSchedule lr_schedule = LrSchedule::kConstant;  // kConstant or kCosine (per epoch)
    double beta = 0.9;             // neggrad_plus: weight of the retain term
    double gamma = 1e-5;           // l1_sparse
    double sparsity_ratio = 0.5;   // salun: fraction of parameters updated
    double alpha_distill = 0.5;    // scrub: retain-side KL weight
    int forget_epochs = -1;        // scrub: epochs with ascent steps; -1 = ceil(epochs / 2)
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int batch_size = 64;
    double clip_norm = 5.0;        // ascent-step gradient clip; <= 0 disables
    std::uint64_t seed = 0;

    void validate() const;
    int scrub_forget_epochs() const;
    double lr_at(int epoch) const;
    friend bool operator==(const UnlearnConfig&, const UnlearnConfig&) = default;
};

/// Defaults for each algorithm, taken from the middle of the usual tuning
/// ranges and scaled to small models.
UnlearnConfig default_unlearn_config(Algorithm algorithm);

struct UnlearnResult {
    ModelCheckpoint model;  // trained_on is set to the partition's retain ids
    double wall_seconds = 0.0;
    Algorithm algorithm = Algorithm::kNoop;
    UnlearnConfig config;
};

/// U(model, S, R, config). `model` must have been trained on exactly
/// forget_ids | retain_ids. Only forget and retain examples are read.
UnlearnResult unlearn(const ModelCheckpoint& model, const ExampleSource& data,
                      const ForgetPartition& partition, const UnlearnConfig& config);

UnlearnResult retrain(const ModelCheckpoint& model, const ExampleSource& data,
                      const ForgetPartition& partition, const UnlearnConfig& config);
UnlearnResult noop(const ModelCheckpoint& model, const ExampleSource& data,
                   const ForgetPartition& partition, const UnlearnConfig& config);
UnlearnResult finetune(const ModelCheckpoint& model, const ExampleSource& data,
                       const ForgetPartition& partition, const UnlearnConfig& config);
UnlearnResult neggrad(const ModelCheckpoint& model, const ExampleSource& data,
                      const ForgetPartition& partition, const UnlearnConfig& config);
UnlearnResult neggrad_plus(const ModelCheckpoint& model, const ExampleSource& data,
                           const ForgetPartition& partition, const UnlearnConfig& config);
UnlearnResult l1_sparse(const ModelCheckpoint& model, const ExampleSource& data,
                        const ForgetPartition& partition, const UnlearnConfig& config);
UnlearnResult scrub(const ModelCheckpoint& model, const ExampleSource& data,
                    const ForgetPartition& partition, const UnlearnConfig& config);
UnlearnResult random_label(const ModelCheckpoint& model, const ExampleSource& data,
                           const ForgetPartition& partition, const UnlearnConfig& config);
UnlearnResult salun(const ModelCheckpoint& model, const ExampleSource& data,
                    const ForgetPartition& partition, const UnlearnConfig& config);

// ---------------------------------------------------------------------------
// Building blocks, exposed for inspection and tests.
// ---------------------------------------------------------------------------

/// Each forget id gets a label drawn uniformly from the other classes.
std::map<ExampleId, int> random_relabel(const ExampleSource& data, const IdSet& forget, std::uint64_t seed);

/// ExampleSource view with some labels replaced.
class RelabeledSource final : public ExampleSource {
public:
    RelabeledSource(const ExampleSource& base, std::map<ExampleId, int> overrides)
        : base_(base), overrides_(std::move(overrides)) {}

    int num_classes() const override { return base_.num_classes(); }
    FeatureShape shape() const override { return base_.shape(); }
    Eigen::MatrixXd gather(std::span<const ExampleId> ids) const override { return base_.gather(ids); }
    std::vector<int> labels(std::span<const ExampleId> ids) const override;

private:
    const ExampleSource& base_;
    std::map<ExampleId, int> overrides_;
};

/// 0/1 mask over parameters: the round(ratio * #params) entries with the
/// largest |d CE(forget) / d theta| at `model` (ties by lower index).
Eigen::VectorXd salun_mask(const ModelCheckpoint& model, const ExampleSource& data, const IdSet& forget,
                           double sparsity_ratio);

/// Scalar per-step objective minimized by the algorithm on one retain batch
/// and one forget batch (either may be empty when unused).
double unlearning_objective(const Network& net, const ExampleSource& data,
                            std::span<const ExampleId> retain_batch,
                            std::span<const ExampleId> forget_batch, const UnlearnConfig& config,
                            const Network* teacher = nullptr);

}  // namespace rumkit
