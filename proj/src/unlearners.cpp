#include "rumkit/unlearners.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include "rumkit/random.hpp"

namespace rumkit {

namespace {

constexpr std::array<std::pair<Algorithm, std::string_view>, 9> kAlgorithmTags{{
    {Algorithm::kRetrain, "retrain"},
    {Algorithm::kNoop, "noop"},
    {Algorithm::kFinetune, "finetune"},
    {Algorithm::kNegGrad, "neggrad"},
    {Algorithm::kNegGradPlus, "neggrad_plus"},
    {Algorithm::kL1Sparse, "l1_sparse"},
    {Algorithm::kScrub, "scrub"},
    {Algorithm::kRandomLabel, "random_label"},
    {Algorithm::kSalUn, "salun"},
}};

// Independent RNG streams per purpose, so e.g. the retain shuffle is the same
// for every algorithm that walks the retain set.
constexpr std::uint64_t kRetainStream = 301;
constexpr std::uint64_t kForgetStream = 302;
constexpr std::uint64_t kPairedForgetStream = 303;
constexpr std::uint64_t kScrubForgetStream = 304;
constexpr std::uint64_t kRelabelOrderStream = 305;
constexpr std::uint64_t kRelabelStream = 306;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void require(bool ok, const char* message) {
    if (!ok) throw InvalidArgument(message);
}

void check_model_matches(const ModelCheckpoint& model, const ForgetPartition& partition) {
    if (partition.forget_ids.empty()) throw InvalidArgument("unlearning needs a nonempty forget set");
    if (partition.forget_ids.intersects(partition.retain_ids)) {
        throw InvalidArgument("forget and retain sets overlap");
    }
    if (!(model.trained_on == partition.universe())) {
        throw InvalidArgument("model was not trained on the partition's forget and retain sets");
    }
}

/// Adds scale * d CE(batch) / d theta to grad and returns the (unscaled) loss.
double add_ce(const Network& net, const ExampleSource& data, std::span<const ExampleId> batch, double scale,
              Network::Cache& cache, Eigen::VectorXd& grad) {
    const Eigen::MatrixXd out = net.forward(data.gather(batch), &cache);
    Eigen::MatrixXd dlogits;
    const double loss = cross_entropy(out, data.labels(batch), &dlogits, scale);
    net.backward(cache, dlogits, grad);
    return loss;
}

double add_kl(const Network& net, const Network& teacher, const ExampleSource& data,
              std::span<const ExampleId> batch, double scale, Network::Cache& cache, Eigen::VectorXd& grad) {
    const Eigen::MatrixXd x = data.gather(batch);
    const Eigen::MatrixXd teacher_logp = log_softmax(teacher.forward(x));
    const Eigen::MatrixXd out = net.forward(x, &cache);
    Eigen::MatrixXd dlogits;
    const double loss = kl_student_teacher(out, teacher_logp, &dlogits, scale);
    net.backward(cache, dlogits, grad);
    return loss;
}

void check_finite(double loss, int epoch, int step) {
    if (!std::isfinite(loss)) throw DivergenceError("non-finite unlearning loss", epoch, step);
}

/// Walks a shuffled id list in batches, reshuffling on every wrap.
class BatchCycler {
public:
    BatchCycler(const IdSet& ids, std::uint64_t seed) : order_(ids.ids()), rng_(seed) {}

    std::span<const ExampleId> next(std::size_t batch_size) {
        if (pos_ == 0) rng_.shuffle(std::span<ExampleId>(order_));
        const std::size_t len = std::min(batch_size, order_.size() - pos_);
        std::span<const ExampleId> out(order_.data() + pos_, len);
        pos_ += len;
        if (pos_ >= order_.size()) pos_ = 0;
        return out;
    }

    std::size_t size() const noexcept { return order_.size(); }

private:
    std::vector<ExampleId> order_;
    Rng rng_;
    std::size_t pos_ = 0;
};

std::size_t batches_per_epoch(std::size_t n, int batch_size) {
    const auto bs = static_cast<std::size_t>(batch_size);
    return (n + bs - 1) / bs;
}

UnlearnResult finish(Network net, const ModelCheckpoint& original, const ForgetPartition& partition,
                     const UnlearnConfig& config, Clock::time_point start) {
    if (!net.params().allFinite()) throw DivergenceError("non-finite parameters after unlearning", config.epochs, 0);
    const double elapsed = seconds_since(start);
    ModelCheckpoint out{std::move(net), original.train_config, partition.retain_ids, original.wall_seconds};
    return UnlearnResult{std::move(out), elapsed, config.algorithm, config};
}

/// Plain minimization of CE (+ optional L1) over `ids` for config.epochs,
/// optionally restricted to masked parameters. Shared by finetune,
/// l1_sparse, random_label and salun.
Network descend(const ModelCheckpoint& model, const ExampleSource& data, const IdSet& ids, const UnlearnConfig& config,
                std::uint64_t stream, double l1_gamma, const Eigen::VectorXd* mask) {
    Network net = model.network;
    Sgd optimizer(SgdOptions{config.momentum, config.weight_decay});
    BatchCycler cycler(ids, derive_seed(config.seed, stream));
    const auto steps = batches_per_epoch(ids.size(), config.batch_size);
    Network::Cache cache;
    Eigen::VectorXd grad(net.num_params());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t s = 0; s < steps; ++s) {
            const auto batch = cycler.next(static_cast<std::size_t>(config.batch_size));
            grad.setZero();
            const double loss = add_ce(net, data, batch, 1.0, cache, grad);
            check_finite(loss, epoch, static_cast<int>(s));
            if (l1_gamma != 0.0) grad += l1_gamma * net.params().cwiseSign();
            optimizer.step(net.params(), grad, config.lr_at(epoch), mask);
        }
    }
    return net;
}

}  // namespace

std::string to_string(Algorithm a) {
    for (const auto& [value, tag] : kAlgorithmTags)
        if (value == a) return std::string(tag);
    return "noop";
}

Algorithm parse_algorithm(std::string_view tag) {
    if (tag == "nothing" || tag == "original") return Algorithm::kNoop;
    for (const auto& [value, name] : kAlgorithmTags)
        if (name == tag) return value;
    throw InvalidArgument("unknown unlearning algorithm '" + std::string(tag) + "'");
}

const std::vector<Algorithm>& all_algorithms() {
    static const std::vector<Algorithm> all = [] {
        std::vector<Algorithm> v;
        for (const auto& [value, tag] : kAlgorithmTags) v.push_back(value);
        return v;
    }();
    return all;
}

int UnlearnConfig::scrub_forget_epochs() const {
    return forget_epochs >= 0 ? std::min(forget_epochs, epochs) : (epochs + 1) / 2;
}

double UnlearnConfig::lr_at(int epoch) const {
    if (lr_schedule != LrSchedule::kCosine || epochs <= 0) return learning_rate;
    return learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / epochs));
}

void UnlearnConfig::validate() const {
    if (algorithm == Algorithm::kNoop || algorithm == Algorithm::kRetrain) return;
    require(epochs >= 0, "epochs must be >= 0");
    require(learning_rate >= 0.0 && std::isfinite(learning_rate), "learning_rate must be finite and >= 0");
    require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
    require(weight_decay >= 0.0, "weight_decay must be >= 0");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(lr_schedule != LrSchedule::kStep, "unlearning supports constant or cosine learning-rate schedules");
    switch (algorithm) {
        case Algorithm::kNegGradPlus: require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]"); break;
        case Algorithm::kL1Sparse: require(gamma >= 0.0, "gamma must be >= 0"); break;
        case Algorithm::kSalUn:
            require(sparsity_ratio > 0.0 && sparsity_ratio <= 1.0, "sparsity_ratio must lie in (0, 1]");
            break;
        case Algorithm::kScrub: require(alpha_distill >= 0.0, "alpha_distill must be >= 0"); break;
        default: break;
    }
}

UnlearnConfig default_unlearn_config(Algorithm algorithm) {
    UnlearnConfig c;
    c.algorithm = algorithm;
    switch (algorithm) {
        case Algorithm::kRetrain:
        case Algorithm::kNoop: c.epochs = 0; break;
        case Algorithm::kFinetune: c.epochs = 10; c.learning_rate = 0.05; break;
        case Algorithm::kNegGrad: c.epochs = 10; c.learning_rate = 0.01; break;
        case Algorithm::kNegGradPlus: c.epochs = 5; c.learning_rate = 0.03; c.beta = 0.9; break;
        case Algorithm::kL1Sparse: c.epochs = 10; c.learning_rate = 0.05; c.gamma = 1e-5; break;
        case Algorithm::kScrub: c.epochs = 10; c.learning_rate = 0.05; c.alpha_distill = 0.5; break;
        case Algorithm::kRandomLabel: c.epochs = 10; c.learning_rate = 0.05; break;
        case Algorithm::kSalUn: c.epochs = 8; c.learning_rate = 0.05; c.sparsity_ratio = 0.5; break;
    }
    return c;
}

std::vector<int> RelabeledSource::labels(std::span<const ExampleId> ids) const {
    std::vector<int> out = base_.labels(ids);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto it = overrides_.find(ids[i]);
        if (it != overrides_.end()) out[i] = it->second;
    }
    return out;
}

std::map<ExampleId, int> random_relabel(const ExampleSource& data, const IdSet& forget, std::uint64_t seed) {
    const int classes = data.num_classes();
    const std::vector<int> original = data.labels(forget.span());
    Rng rng(derive_seed(seed, kRelabelStream));
    std::map<ExampleId, int> out;
    std::size_t i = 0;
    for (const auto id : forget) {
        const auto shift = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(classes - 1)));
        out.emplace_hint(out.end(), id, (original[i++] + shift) % classes);
    }
    return out;
}

Eigen::VectorXd salun_mask(const ModelCheckpoint& model, const ExampleSource& data, const IdSet& forget,
                           double sparsity_ratio) {
    if (!(sparsity_ratio > 0.0 && sparsity_ratio <= 1.0)) throw InvalidArgument("sparsity_ratio must lie in (0, 1]");
    if (forget.empty()) throw InvalidArgument("salun_mask needs a nonempty forget set");
    const Network& net = model.network;
    const Eigen::Index p = net.num_params();
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(p);
    Network::Cache cache;
    add_ce(net, data, forget.span(), 1.0, cache, grad);
    const auto k = static_cast<Eigen::Index>(std::llround(sparsity_ratio * static_cast<double>(p)));
    std::vector<Eigen::Index> order(static_cast<std::size_t>(p));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const Eigen::VectorXd saliency = grad.cwiseAbs();
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return saliency[a] > saliency[b]; });
    Eigen::VectorXd mask = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < k; ++i) mask[order[static_cast<std::size_t>(i)]] = 1.0;
    return mask;
}

double unlearning_objective(const Network& net, const ExampleSource& data, std::span<const ExampleId> retain_batch,
                            std::span<const ExampleId> forget_batch, const UnlearnConfig& config,
                            const Network* teacher) {
    auto ce = [&](std::span<const ExampleId> batch) {
        if (batch.empty()) return 0.0;
        return cross_entropy(net.forward(data.gather(batch)), data.labels(batch));
    };
    auto kl = [&](std::span<const ExampleId> batch) {
        if (batch.empty()) return 0.0;
        if (!teacher) throw InvalidArgument("scrub objective needs a teacher network");
        const Eigen::MatrixXd x = data.gather(batch);
        return kl_student_teacher(net.forward(x), log_softmax(teacher->forward(x)));
    };
    switch (config.algorithm) {
        case Algorithm::kRetrain:
        case Algorithm::kNoop: return 0.0;
        case Algorithm::kFinetune:
        case Algorithm::kRandomLabel:
        case Algorithm::kSalUn: return ce(retain_batch);
        case Algorithm::kNegGrad: return -ce(forget_batch);
        case Algorithm::kNegGradPlus:
            return config.beta * ce(retain_batch) - (1.0 - config.beta) * ce(forget_batch);
        case Algorithm::kL1Sparse: return ce(retain_batch) + config.gamma * net.params().cwiseAbs().sum();
        case Algorithm::kScrub:
            return ce(retain_batch) + config.alpha_distill * kl(retain_batch) - kl(forget_batch);
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// Algorithms
// ---------------------------------------------------------------------------

UnlearnResult retrain(const ModelCheckpoint& model, const ExampleSource& data, const ForgetPartition& partition,
                      const UnlearnConfig& config) {
    check_model_matches(model, partition);
    const auto start = Clock::now();
    TrainConfig cfg = model.train_config;
    cfg.seed = config.seed;
    cfg.record_confidence_trace = false;
    ModelCheckpoint fresh = train(data, partition.retain_ids, cfg).model;
    return UnlearnResult{std::move(fresh), seconds_since(start), Algorithm::kRetrain, config};
}

UnlearnResult noop(const ModelCheckpoint& model, const ExampleSource&, const ForgetPartition& partition,
                   const UnlearnConfig& config) {
    check_model_matches(model, partition);
    ModelCheckpoint same = model;
    same.trained_on = partition.retain_ids;
    return UnlearnResult{std::move(same), 0.0, Algorithm::kNoop, config};
}

UnlearnResult finetune(const ModelCheckpoint& model, const ExampleSource& data, const ForgetPartition& partition,
                       const UnlearnConfig& config) {
    check_model_matches(model, partition);
    config.validate();
    const auto start = Clock::now();
    Network net = descend(model, data, partition.retain_ids, config, kRetainStream, 0.0, nullptr);
    return finish(std::move(net), model, partition, config, start);
}

UnlearnResult l1_sparse(const ModelCheckpoint& model, const ExampleSource& data, const ForgetPartition& partition,
                        const UnlearnConfig& config) {
    check_model_matches(model, partition);
    config.validate();
    const auto start = Clock::now();
    Network net = descend(model, data, partition.retain_ids, config, kRetainStream, config.gamma, nullptr);
    return finish(std::move(net), model, partition, config, start);
}

UnlearnResult neggrad(const ModelCheckpoint& model, const ExampleSource& data, const ForgetPartition& partition,
                      const UnlearnConfig& config) {
    check_model_matches(model, partition);
    config.validate();
    const auto start = Clock::now();
    Network net = model.network;
    Sgd optimizer(SgdOptions{config.momentum, config.weight_decay});
    BatchCycler cycler(partition.forget_ids, derive_seed(config.seed, kForgetStream));
    const auto steps = batches_per_epoch(cycler.size(), config.batch_size);
    Network::Cache cache;
    Eigen::VectorXd grad(net.num_params());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t s = 0; s < steps; ++s) {
            grad.setZero();
            const double loss = add_ce(net, data, cycler.next(static_cast<std::size_t>(config.batch_size)), -1.0, cache, grad);
            check_finite(loss, epoch, static_cast<int>(s));
            clip_grad_norm(grad, config.clip_norm);
            optimizer.step(net.params(), grad, config.lr_at(epoch));
        }
    }
    return finish(std::move(net), model, partition, config, start);
}

UnlearnResult neggrad_plus(const ModelCheckpoint& model, const ExampleSource& data, const ForgetPartition& partition,
                           const UnlearnConfig& config) {
    check_model_matches(model, partition);
    config.validate();
    const auto start = Clock::now();
    Network net = model.network;
    Sgd optimizer(SgdOptions{config.momentum, config.weight_decay});
    BatchCycler retain(partition.retain_ids, derive_seed(config.seed, kRetainStream));
    BatchCycler forget(partition.forget_ids, derive_seed(config.seed, kPairedForgetStream));
    const auto steps = batches_per_epoch(retain.size(), config.batch_size);
    const auto bs = static_cast<std::size_t>(config.batch_size);
    const bool ascent = config.beta < 1.0;
    Network::Cache cache;
    Eigen::VectorXd grad(net.num_params());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t s = 0; s < steps; ++s) {
            grad.setZero();
            double loss = config.beta * add_ce(net, data, retain.next(bs), config.beta, cache, grad);
            if (ascent) {
                loss -= (1.0 - config.beta) * add_ce(net, data, forget.next(bs), -(1.0 - config.beta), cache, grad);
                clip_grad_norm(grad, config.clip_norm);
            }
            check_finite(loss, epoch, static_cast<int>(s));
            optimizer.step(net.params(), grad, config.lr_at(epoch));
        }
    }
    return finish(std::move(net), model, partition, config, start);
}

UnlearnResult scrub(const ModelCheckpoint& model, const ExampleSource& data, const ForgetPartition& partition,
                    const UnlearnConfig& config) {
    check_model_matches(model, partition);
    config.validate();
    const auto start = Clock::now();
    const Network& teacher = model.network;
    Network student = model.network;
    Sgd optimizer(SgdOptions{config.momentum, config.weight_decay});
    BatchCycler retain(partition.retain_ids, derive_seed(config.seed, kRetainStream));
    BatchCycler forget(partition.forget_ids, derive_seed(config.seed, kScrubForgetStream));
    const auto bs = static_cast<std::size_t>(config.batch_size);
    const auto retain_steps = batches_per_epoch(retain.size(), config.batch_size);
    const auto forget_steps = batches_per_epoch(forget.size(), config.batch_size);
    const int ascent_epochs = config.scrub_forget_epochs();
    Network::Cache cache;
    Eigen::VectorXd grad(student.num_params());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        if (epoch < ascent_epochs) {
            for (std::size_t s = 0; s < forget_steps; ++s) {
                grad.setZero();
                const double kl = add_kl(student, teacher, data, forget.next(bs), -1.0, cache, grad);
                check_finite(kl, epoch, static_cast<int>(s));
                clip_grad_norm(grad, config.clip_norm);
                optimizer.step(student.params(), grad, config.lr_at(epoch));
            }
        }
        for (std::size_t s = 0; s < retain_steps; ++s) {
            const auto batch = retain.next(bs);
            grad.setZero();
            double loss = add_ce(student, data, batch, 1.0, cache, grad);
            if (config.alpha_distill != 0.0) {
                loss += config.alpha_distill *
                        add_kl(student, teacher, data, batch, config.alpha_distill, cache, grad);
            }
            check_finite(loss, epoch, static_cast<int>(s));
            optimizer.step(student.params(), grad, config.lr_at(epoch));
        }
    }
    return finish(std::move(student), model, partition, config, start);
}

UnlearnResult random_label(const ModelCheckpoint& model, const ExampleSource& data, const ForgetPartition& partition,
                           const UnlearnConfig& config) {
    check_model_matches(model, partition);
    config.validate();
    const auto start = Clock::now();
    const RelabeledSource relabeled(data, random_relabel(data, partition.forget_ids, config.seed));
    Network net = descend(model, relabeled, partition.universe(), config, kRelabelOrderStream, 0.0, nullptr);
    return finish(std::move(net), model, partition, config, start);
}

UnlearnResult salun(const ModelCheckpoint& model, const ExampleSource& data, const ForgetPartition& partition,
                    const UnlearnConfig& config) {
    check_model_matches(model, partition);
    config.validate();
    const auto start = Clock::now();
    const Eigen::VectorXd mask = salun_mask(model, data, partition.forget_ids, config.sparsity_ratio);
    const RelabeledSource relabeled(data, random_relabel(data, partition.forget_ids, config.seed));
    Network net = descend(model, relabeled, partition.universe(), config, kRelabelOrderStream, 0.0, &mask);
    return finish(std::move(net), model, partition, config, start);
}

UnlearnResult unlearn(const ModelCheckpoint& model, const ExampleSource& data, const ForgetPartition& partition,
                      const UnlearnConfig& config) {
    switch (config.algorithm) {
        case Algorithm::kRetrain: return retrain(model, data, partition, config);
        case Algorithm::kNoop: return noop(model, data, partition, config);
        case Algorithm::kFinetune: return finetune(model, data, partition, config);
        case Algorithm::kNegGrad: return neggrad(model, data, partition, config);
        case Algorithm::kNegGradPlus: return neggrad_plus(model, data, partition, config);
        case Algorithm::kL1Sparse: return l1_sparse(model, data, partition, config);
        case Algorithm::kScrub: return scrub(model, data, partition, config);
        case Algorithm::kRandomLabel: return random_label(model, data, partition, config);
        case Algorithm::kSalUn: return salun(model, data, partition, config);
    }
    throw InvalidArgument("unknown algorithm");
}

}  // namespace rumkit
