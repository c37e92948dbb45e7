#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rumkit/data.hpp"
#include "rumkit/network.hpp"

namespace rumkit {

enum class LrSchedule { kConstant, kCosine, kStep };

std::string to_string(LrSchedule s);
LrSchedule parse_lr_schedule(std::string_view tag);

struct Augmentation {
    bool crop = false;             // random +-1 pixel shift, zero fill
    bool horizontal_flip = false;  // p = 0.5
    friend bool operator==(const Augmentation&, const Augmentation&) = default;
};

struct TrainConfig {
    Architecture architecture = Architecture::kMlp;
    int hidden_width = 32;
    int epochs = 15;
    double learning_rate = 0.05;
    LrSchedule lr_schedule = LrSchedule::kCosine;
    std::vector<int> milestones;  // kStep only
    double step_factor = 0.1;     // kStep only
    double weight_decay = 5e-4;
    double momentum = 0.9;
    int batch_size = 128;
    std::uint64_t seed = 0;
    Augmentation augmentation;
    bool record_confidence_trace = false;

    void validate() const;
    /// Learning rate in effect during `epoch` (0-based).
    double lr_at(int epoch) const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct ModelCheckpoint {
    Network network;
    TrainConfig train_config;
    IdSet trained_on;
    double wall_seconds = 0.0;
};

/// Per-id softmax probability of the true label after each epoch.
struct ConfidenceTrace {
    int epochs = 0;
    std::map<ExampleId, std::vector<double>> values;
};

/// Penultimate-layer activations, one row per id in `ids` order.
struct EmbeddingMatrix {
    std::vector<ExampleId> ids;
    Eigen::MatrixXd rows;

    Eigen::Index dim() const noexcept { return rows.cols(); }
    /// Rows for a subset of ids (each must be present).
    EmbeddingMatrix select(const IdSet& subset) const;
};

struct TrainResult {
    ModelCheckpoint model;
    std::optional<ConfidenceTrace> trace;
};

/// Trains a fresh network on `ids` only. Deterministic given (seed, ids,
/// config). Throws DivergenceError on a non-finite loss.
TrainResult train(const ExampleSource& data, const IdSet& ids, const TrainConfig& config);

/// Network built for `data` per `config`, with initialized weights.
Network make_network(const ExampleSource& data, const TrainConfig& config);

/// Batched logits in `ids` order.
Eigen::MatrixXd logits(const Network& net, const ExampleSource& data, std::span<const ExampleId> ids);

/// Fraction of ids whose argmax prediction (lowest index on ties) equals the label.
double evaluate(const ModelCheckpoint& model, const ExampleSource& data, const IdSet& ids);
std::map<ExampleId, int> predict(const ModelCheckpoint& model, const ExampleSource& data, const IdSet& ids);
EmbeddingMatrix embed(const ModelCheckpoint& model, const ExampleSource& data, const IdSet& ids);
/// Softmax probability assigned to the true label.
std::map<ExampleId, double> confidences(const ModelCheckpoint& model, const ExampleSource& data,
                                        const IdSet& ids);
/// Per-example cross-entropy loss on the true label.
std::map<ExampleId, double> example_losses(const ModelCheckpoint& model, const ExampleSource& data,
                                           const IdSet& ids);

/// Argmax with ties broken toward the lowest index.
int argmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& row);

// Checkpoint container: magic line, 8-byte header length, JSON header, raw
// little-endian float64 parameters.
void save_checkpoint(const ModelCheckpoint& model, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rumkit
