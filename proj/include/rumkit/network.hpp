#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rumkit/data.hpp"

namespace rumkit {

enum class Architecture { kMlp, kSmallCnn, kResnetTiny };

std::string to_string(Architecture a);
Architecture parse_architecture(std::string_view tag);

namespace layers {

struct Dense {
    int in = 0;
    int out = 0;
    Eigen::Index offset = 0;  // weights (out x in, column-major) then bias (out)
};

struct Relu {};

/// 3x3 convolution, stride 1, zero padding 1.
struct Conv3x3 {
    int in_channels = 0;
    int out_channels = 0;
    int height = 0;
    int width = 0;
    Eigen::Index offset = 0;  // weights (out x in*9) then bias (out)
};

/// 2x2 max pooling, stride 2 (floor).
struct MaxPool2 {
    int channels = 0;
    int height = 0;
    int width = 0;
};

/// Adds activation number `source` (activation 0 is the network input).
struct AddSkip {
    int source = 0;
};

}  // namespace layers

using Layer = std::variant<layers::Dense, layers::Relu, layers::Conv3x3, layers::MaxPool2,
                           layers::AddSkip>;

/// A feed-forward classifier whose parameters live in one flat vector. The
/// last layer is always a Dense classifier; its input is the embedding.
///
/// Activations are batch-major: one row per example.
class Network {
public:
    struct Cache {
        std::vector<Eigen::MatrixXd> activations;  // activations[0] is the input
        std::vector<std::vector<Eigen::Index>> pool_argmax;
    };

    Network() = default;
    Network(Architecture architecture, FeatureShape input, int num_classes, int hidden_width);

    /// He-normal weights, zero biases.
    void initialize(std::uint64_t seed);

    Architecture architecture() const noexcept { return architecture_; }
    FeatureShape input_shape() const noexcept { return input_; }
    int num_classes() const noexcept { return num_classes_; }
    int hidden_width() const noexcept { return hidden_width_; }
    int embedding_dim() const noexcept;
    const std::vector<Layer>& layers() const noexcept { return layers_; }

    Eigen::Index num_params() const noexcept { return params_.size(); }
    const Eigen::VectorXd& params() const noexcept { return params_; }
    Eigen::VectorXd& params() noexcept { return params_; }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Cache* cache = nullptr) const;
    Eigen::MatrixXd embed(const Eigen::MatrixXd& input) const;

    /// Adds d(loss)/d(params) to `grad` given d(loss)/d(logits).
    void backward(const Cache& cache, const Eigen::MatrixXd& dlogits, Eigen::VectorXd& grad) const;

private:
    Eigen::MatrixXd run(const Eigen::MatrixXd& input, std::size_t stop, Cache* cache) const;
    Eigen::Index add_dense(int in, int out);

    Architecture architecture_ = Architecture::kMlp;
    FeatureShape input_{};
    int num_classes_ = 0;
    int hidden_width_ = 0;
    std::vector<Layer> layers_;
    Eigen::VectorXd params_;
};

// ---------------------------------------------------------------------------
// Losses on batch logits (rows = examples).
// ---------------------------------------------------------------------------

Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits);
Eigen::MatrixXd log_softmax(const Eigen::MatrixXd& logits);

/// Mean cross-entropy. When `dlogits` is given it receives
/// `scale * d(mean CE)/d(logits)`.
double cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> labels,
                     Eigen::MatrixXd* dlogits = nullptr, double scale = 1.0);

/// Mean KL(student || teacher) over rows, teacher given as log-probabilities.
double kl_student_teacher(const Eigen::MatrixXd& student_logits,
                          const Eigen::MatrixXd& teacher_log_probs,
                          Eigen::MatrixXd* dlogits = nullptr, double scale = 1.0);

// ---------------------------------------------------------------------------
// SGD with momentum and L2 weight decay folded into the gradient.
// ---------------------------------------------------------------------------

struct SgdOptions {
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

class Sgd {
public:
    explicit Sgd(SgdOptions options) : options_(options) {}

    /// d = mask * (grad + wd * params); v = momentum * v + d; params -= lr * v.
    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr,
              const Eigen::VectorXd* mask = nullptr);

private:
    SgdOptions options_;
    Eigen::VectorXd velocity_;
};

/// Rescales `grad` in place so its l2 norm is at most `max_norm` (no-op if
/// max_norm <= 0). Returns the original norm.
double clip_grad_norm(Eigen::VectorXd& grad, double max_norm);

}  // namespace rumkit
