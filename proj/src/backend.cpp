#include "rumkit/backend.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "rumkit/io.hpp"
#include "rumkit/random.hpp"
#include "rumkit/serialize.hpp"

namespace rumkit {

std::string to_string(LrSchedule s) {
    switch (s) {
        case LrSchedule::kConstant: return "constant";
        case LrSchedule::kCosine: return "cosine";
        case LrSchedule::kStep: return "step";
    }
    return "constant";
}

LrSchedule parse_lr_schedule(std::string_view tag) {
    if (tag == "constant") return LrSchedule::kConstant;
    if (tag == "cosine") return LrSchedule::kCosine;
    if (tag == "step") return LrSchedule::kStep;
    throw InvalidArgument("unknown lr schedule '" + std::string(tag) + "'");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (weight_decay < 0.0) throw InvalidArgument("weight_decay must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw InvalidArgument("momentum must lie in [0, 1)");
    if (hidden_width < 1) throw InvalidArgument("hidden_width must be >= 1");
}

double TrainConfig::lr_at(int epoch) const {
    switch (lr_schedule) {
        case LrSchedule::kConstant: return learning_rate;
        case LrSchedule::kCosine:
            return learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / epochs));
        case LrSchedule::kStep: {
            double lr = learning_rate;
            for (const int m : milestones)
                if (epoch >= m) lr *= step_factor;
            return lr;
        }
    }
    return learning_rate;
}

EmbeddingMatrix EmbeddingMatrix::select(const IdSet& subset) const {
    std::unordered_map<ExampleId, Eigen::Index> where;
    where.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) where.emplace(ids[i], static_cast<Eigen::Index>(i));
    EmbeddingMatrix out;
    out.ids = subset.ids();
    out.rows.resize(static_cast<Eigen::Index>(subset.size()), rows.cols());
    Eigen::Index r = 0;
    for (const auto id : subset) {
        const auto it = where.find(id);
        if (it == where.end()) throw InvalidArgument("embedding missing id " + std::to_string(id));
        out.rows.row(r++) = rows.row(it->second);
    }
    return out;
}

Network make_network(const ExampleSource& data, const TrainConfig& config) {
    Network net(config.architecture, data.shape(), data.num_classes(), config.hidden_width);
    net.initialize(config.seed);
    return net;
}

namespace {

void augment(Eigen::MatrixXd& batch, FeatureShape shape, const Augmentation& aug, Rng& rng) {
    if (!shape.is_image() || (!aug.crop && !aug.horizontal_flip)) return;
    const int h = shape.height;
    const int w = shape.width;
    for (Eigen::Index r = 0; r < batch.rows(); ++r) {
        const int dy = aug.crop ? static_cast<int>(rng.below(3)) - 1 : 0;
        const int dx = aug.crop ? static_cast<int>(rng.below(3)) - 1 : 0;
        const bool flip = aug.horizontal_flip && rng.below(2) == 1;
        const Eigen::RowVectorXd src = batch.row(r);
        for (int c = 0; c < shape.channels; ++c) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const int sy = y + dy;
                    int sx = x + dx;
                    if (flip) sx = w - 1 - sx;
                    const Eigen::Index at = Eigen::Index{c} * h * w + Eigen::Index{y} * w + x;
                    batch(r, at) = (sy >= 0 && sy < h && sx >= 0 && sx < w)
                                       ? src[Eigen::Index{c} * h * w + Eigen::Index{sy} * w + sx]
                                       : 0.0;
                }
            }
        }
    }
}

constexpr Eigen::Index kInferenceBatch = 1024;

}  // namespace

TrainResult train(const ExampleSource& data, const IdSet& ids, const TrainConfig& config) {
    config.validate();
    if (ids.empty()) throw InvalidArgument("train() needs a nonempty id set");
    const auto start = std::chrono::steady_clock::now();

    Network net = make_network(data, config);
    Sgd optimizer(SgdOptions{config.momentum, config.weight_decay});
    Rng order_rng(derive_seed(config.seed, 201));
    Rng aug_rng(derive_seed(config.seed, 202));
    std::vector<ExampleId> order = ids.ids();
    const auto n = order.size();
    const auto bs = static_cast<std::size_t>(config.batch_size);

    std::optional<ConfidenceTrace> trace;
    if (config.record_confidence_trace) {
        trace.emplace();
        trace->epochs = config.epochs;
        for (const auto id : ids) trace->values[id].reserve(static_cast<std::size_t>(config.epochs));
    }

    Network::Cache cache;
    Eigen::VectorXd grad(net.num_params());
    Eigen::MatrixXd dlogits;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = config.lr_at(epoch);
        order_rng.shuffle(std::span<ExampleId>(order));
        int step = 0;
        for (std::size_t begin = 0; begin < n; begin += bs, ++step) {
            const std::span<const ExampleId> batch(order.data() + begin, std::min(bs, n - begin));
            Eigen::MatrixXd x = data.gather(batch);
            const std::vector<int> y = data.labels(batch);
            augment(x, data.shape(), config.augmentation, aug_rng);
            const Eigen::MatrixXd out = net.forward(x, &cache);
            const double loss = cross_entropy(out, y, &dlogits);
            if (!std::isfinite(loss)) {
                throw DivergenceError("non-finite training loss", epoch, step);
            }
            grad.setZero();
            net.backward(cache, dlogits, grad);
            optimizer.step(net.params(), grad, lr);
        }
        if (!net.params().allFinite()) throw DivergenceError("non-finite parameters", epoch, step);
        if (trace) {
            const Eigen::MatrixXd probs = softmax(logits(net, data, ids.span()));
            const std::vector<int> y = data.labels(ids.span());
            Eigen::Index r = 0;
            for (const auto id : ids) {
                trace->values[id].push_back(probs(r, y[static_cast<std::size_t>(r)]));
                ++r;
            }
        }
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return TrainResult{ModelCheckpoint{std::move(net), config, ids, seconds}, std::move(trace)};
}

Eigen::MatrixXd logits(const Network& net, const ExampleSource& data, std::span<const ExampleId> ids) {
    const auto n = static_cast<Eigen::Index>(ids.size());
    Eigen::MatrixXd out(n, net.num_classes());
    for (Eigen::Index begin = 0; begin < n; begin += kInferenceBatch) {
        const Eigen::Index len = std::min(kInferenceBatch, n - begin);
        const auto chunk = ids.subspan(static_cast<std::size_t>(begin), static_cast<std::size_t>(len));
        out.middleRows(begin, len) = net.forward(data.gather(chunk));
    }
    return out;
}

int argmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    int best = 0;
    for (Eigen::Index c = 1; c < row.size(); ++c)
        if (row[c] > row[best]) best = static_cast<int>(c);
    return best;
}

namespace {
void require_nonempty(const IdSet& ids, const char* what) {
    if (ids.empty()) throw InvalidArgument(std::string(what) + " needs a nonempty id set");
}
}  // namespace

std::map<ExampleId, int> predict(const ModelCheckpoint& model, const ExampleSource& data, const IdSet& ids) {
    require_nonempty(ids, "predict");
    const Eigen::MatrixXd z = logits(model.network, data, ids.span());
    std::map<ExampleId, int> out;
    Eigen::Index r = 0;
    for (const auto id : ids) out.emplace_hint(out.end(), id, argmax_row(z.row(r++)));
    return out;
}

double evaluate(const ModelCheckpoint& model, const ExampleSource& data, const IdSet& ids) {
    require_nonempty(ids, "evaluate");
    const Eigen::MatrixXd z = logits(model.network, data, ids.span());
    const std::vector<int> y = data.labels(ids.span());
    std::size_t correct = 0;
    for (Eigen::Index r = 0; r < z.rows(); ++r)
        if (argmax_row(z.row(r)) == y[static_cast<std::size_t>(r)]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(ids.size());
}

EmbeddingMatrix embed(const ModelCheckpoint& model, const ExampleSource& data, const IdSet& ids) {
    require_nonempty(ids, "embed");
    EmbeddingMatrix out;
    out.ids = ids.ids();
    const auto n = static_cast<Eigen::Index>(ids.size());
    out.rows.resize(n, model.network.embedding_dim());
    for (Eigen::Index begin = 0; begin < n; begin += kInferenceBatch) {
        const Eigen::Index len = std::min(kInferenceBatch, n - begin);
        const auto chunk = ids.span().subspan(static_cast<std::size_t>(begin), static_cast<std::size_t>(len));
        out.rows.middleRows(begin, len) = model.network.embed(data.gather(chunk));
    }
    return out;
}

std::map<ExampleId, double> confidences(const ModelCheckpoint& model, const ExampleSource& data,
                                        const IdSet& ids) {
    require_nonempty(ids, "confidences");
    const Eigen::MatrixXd logp = log_softmax(logits(model.network, data, ids.span()));
    const std::vector<int> y = data.labels(ids.span());
    std::map<ExampleId, double> out;
    Eigen::Index r = 0;
    for (const auto id : ids) {
        out.emplace_hint(out.end(), id, std::exp(logp(r, y[static_cast<std::size_t>(r)])));
        ++r;
    }
    return out;
}

std::map<ExampleId, double> example_losses(const ModelCheckpoint& model, const ExampleSource& data,
                                           const IdSet& ids) {
    require_nonempty(ids, "example_losses");
    const Eigen::MatrixXd logp = log_softmax(logits(model.network, data, ids.span()));
    const std::vector<int> y = data.labels(ids.span());
    std::map<ExampleId, double> out;
    Eigen::Index r = 0;
    for (const auto id : ids) {
        out.emplace_hint(out.end(), id, -logp(r, y[static_cast<std::size_t>(r)]));
        ++r;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint files
// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kCheckpointMagic = "RUMKIT-CHECKPOINT v1\n";

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(in[static_cast<std::size_t>(i)])} << (8 * i);
    return v;
}
}  // namespace

void save_checkpoint(const ModelCheckpoint& model, const std::filesystem::path& path) {
    static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian");
    nlohmann::ordered_json header;
    header["format"] = "rumkit-checkpoint";
    header["architecture"] = to_string(model.network.architecture());
    const FeatureShape s = model.network.input_shape();
    header["input_shape"] = {s.channels, s.height, s.width};
    header["num_classes"] = model.network.num_classes();
    header["hidden_width"] = model.network.hidden_width();
    header["num_params"] = model.network.num_params();
    header["train_config"] = nlohmann::json(model.train_config);
    header["trained_on"] = model.trained_on.ids();
    header["wall_seconds"] = model.wall_seconds;
    const std::string text = header.dump();

    std::string blob(kCheckpointMagic);
    put_u64(blob, text.size());
    blob += text;
    const auto& p = model.network.params();
    const auto offset = blob.size();
    blob.resize(offset + static_cast<std::size_t>(p.size()) * sizeof(double));
    std::memcpy(blob.data() + offset, p.data(), static_cast<std::size_t>(p.size()) * sizeof(double));
    write_file_atomic(path, blob);
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string blob = read_file(path);
    if (blob.size() < kCheckpointMagic.size() + 8 || blob.compare(0, kCheckpointMagic.size(), kCheckpointMagic) != 0) {
        throw FormatError("not a rumkit checkpoint: " + path.string());
    }
    const std::size_t header_len = get_u64(std::string_view(blob).substr(kCheckpointMagic.size(), 8));
    const std::size_t header_at = kCheckpointMagic.size() + 8;
    if (header_at + header_len > blob.size()) throw FormatError("truncated checkpoint header: " + path.string());
    try {
        const auto header = nlohmann::json::parse(blob.substr(header_at, header_len));
        const auto shape = header.at("input_shape").get<std::vector<int>>();
        if (shape.size() != 3) throw FormatError("bad input_shape in checkpoint");
        Network net(parse_architecture(header.at("architecture").get<std::string>()),
                    FeatureShape{shape[0], shape[1], shape[2]}, header.at("num_classes").get<int>(),
                    header.at("hidden_width").get<int>());
        const auto n_params = header.at("num_params").get<Eigen::Index>();
        if (n_params != net.num_params()) throw FormatError("checkpoint parameter count mismatch");
        const std::size_t data_at = header_at + header_len;
        if (blob.size() != data_at + static_cast<std::size_t>(n_params) * sizeof(double)) {
            throw FormatError("checkpoint parameter block has the wrong size");
        }
        std::memcpy(net.params().data(), blob.data() + data_at, static_cast<std::size_t>(n_params) * sizeof(double));
        return ModelCheckpoint{std::move(net), header.at("train_config").get<TrainConfig>(),
                               IdSet(header.at("trained_on").get<std::vector<ExampleId>>()),
                               header.at("wall_seconds").get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed checkpoint header in " + path.string() + ": " + e.what());
    }
}

}  // namespace rumkit
