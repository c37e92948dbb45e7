#include "rumkit/scores.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "rumkit/io.hpp"
#include "rumkit/random.hpp"

namespace rumkit {

std::string to_string(ScoreKind k) {
    switch (k) {
        case ScoreKind::kMemorization: return "memorization";
        case ScoreKind::kCProxy: return "c-proxy";
        case ScoreKind::kCentroidDistance: return "centroid-distance";
        case ScoreKind::kExternal: return "external";
    }
    return "external";
}

ScoreKind parse_score_kind(std::string_view tag) {
    if (tag == "memorization") return ScoreKind::kMemorization;
    if (tag == "c-proxy") return ScoreKind::kCProxy;
    if (tag == "centroid-distance") return ScoreKind::kCentroidDistance;
    if (tag == "external") return ScoreKind::kExternal;
    throw InvalidArgument("unknown score kind '" + std::string(tag) + "'");
}

std::string to_string(BucketMode m) {
    switch (m) {
        case BucketMode::kLowest: return "lowest-n";
        case BucketMode::kNearestMidpoint: return "nearest-to-midpoint";
        case BucketMode::kHighest: return "highest-n";
        case BucketMode::kContiguousRange: return "contiguous-range";
    }
    return "lowest-n";
}

BucketMode parse_bucket_mode(std::string_view tag) {
    if (tag == "lowest-n") return BucketMode::kLowest;
    if (tag == "nearest-to-midpoint") return BucketMode::kNearestMidpoint;
    if (tag == "highest-n") return BucketMode::kHighest;
    if (tag == "contiguous-range") return BucketMode::kContiguousRange;
    throw InvalidArgument("unknown bucket mode '" + std::string(tag) + "'");
}

IdSet ScoreProfile::ids() const {
    std::vector<ExampleId> out;
    out.reserve(values.size());
    for (const auto& [id, v] : values) out.push_back(id);
    return IdSet(std::move(out));
}

// ---------------------------------------------------------------------------
// Entanglement
// ---------------------------------------------------------------------------

double entanglement_score(const Eigen::MatrixXd& retain, const Eigen::MatrixXd& forget) {
    if (retain.rows() == 0 || forget.rows() == 0) throw InvalidArgument("entanglement_score needs nonempty sets");
    if (retain.cols() != forget.cols()) throw InvalidArgument("embedding dimensions differ");
    const auto n_r = static_cast<double>(retain.rows());
    const auto n_s = static_cast<double>(forget.rows());
    const Eigen::RowVectorXd mu_r = retain.colwise().mean();
    const Eigen::RowVectorXd mu_s = forget.colwise().mean();
    const Eigen::RowVectorXd mu = (n_r * mu_r + n_s * mu_s) / (n_r + n_s);

    const double within = (retain.rowwise() - mu_r).rowwise().squaredNorm().mean() +
                          (forget.rowwise() - mu_s).rowwise().squaredNorm().mean();
    const double between = 0.5 * ((mu_r - mu).squaredNorm() + (mu_s - mu).squaredNorm());
    if (between == 0.0 || between <= 1e-12 * within) {
        throw DegenerateError("degenerate: identical centroids");
    }
    return within / between;
}

double entanglement_score(const EmbeddingMatrix& retain, const EmbeddingMatrix& forget) {
    return entanglement_score(retain.rows, forget.rows);
}

std::vector<ExampleId> centroid_distance_ranking(const EmbeddingMatrix& embeddings) {
    if (embeddings.ids.empty()) throw InvalidArgument("centroid_distance_ranking needs embeddings");
    const Eigen::RowVectorXd mu = embeddings.rows.colwise().mean();
    const Eigen::VectorXd dist = (embeddings.rows.rowwise() - mu).rowwise().squaredNorm();
    std::vector<std::size_t> order(embeddings.ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double da = dist[static_cast<Eigen::Index>(a)];
        const double db = dist[static_cast<Eigen::Index>(b)];
        if (da != db) return da > db;
        return embeddings.ids[a] < embeddings.ids[b];
    });
    std::vector<ExampleId> out;
    out.reserve(order.size());
    for (const auto i : order) out.push_back(embeddings.ids[i]);
    return out;
}

std::vector<ForgetPartition> es_buckets(std::span<const ExampleId> ranking, int size,
                                        std::span<const int> offsets) {
    if (size < 1) throw InvalidArgument("bucket size must be >= 1");
    if (offsets.empty()) throw InvalidArgument("es_buckets needs at least one offset");
    const IdSet universe(std::vector<ExampleId>(ranking.begin(), ranking.end()));
    if (universe.size() != ranking.size()) throw InvalidArgument("ranking contains duplicate ids");
    std::vector<ForgetPartition> out;
    out.reserve(offsets.size());
    for (std::size_t k = 0; k < offsets.size(); ++k) {
        const int offset = offsets[k];
        if (offset < 0 || static_cast<std::size_t>(offset) + static_cast<std::size_t>(size) > ranking.size()) {
            throw InvalidArgument("ES window [" + std::to_string(offset) + ", " +
                                  std::to_string(offset + size) + ") is out of bounds");
        }
        const auto first = ranking.begin() + offset;
        IdSet forget(std::vector<ExampleId>(first, first + size));
        Provenance prov = Provenance::kEsMed;
        if (k == 0) prov = Provenance::kEsLow;
        else if (k + 1 == offsets.size()) prov = Provenance::kEsHigh;
        out.push_back(make_partition(universe, forget, prov));
    }
    return out;
}

std::vector<int> even_offsets(std::size_t ranking_size, int size, int count) {
    if (count < 1 || size < 1 || static_cast<std::size_t>(size) > ranking_size) {
        throw InvalidArgument("invalid even_offsets request");
    }
    if (count == 1) return {0};
    const double span = static_cast<double>(ranking_size - static_cast<std::size_t>(size));
    std::vector<int> out;
    for (int k = 0; k < count; ++k) out.push_back(static_cast<int>(std::lround(span * k / (count - 1))));
    return out;
}

// ---------------------------------------------------------------------------
// MMD
// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const Eigen::VectorXd na = a.rowwise().squaredNorm();
    const Eigen::VectorXd nb = b.rowwise().squaredNorm();
    Eigen::MatrixXd d = -2.0 * a * b.transpose();
    d.colwise() += na;
    d.rowwise() += nb.transpose();
    return d.cwiseMax(0.0);
}

double mean_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double sigma) {
    const Eigen::MatrixXd d = squared_distances(a, b);
    return (-d.array() / (2.0 * sigma * sigma)).exp().mean();
}

}  // namespace

double median_heuristic_bandwidth(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    constexpr Eigen::Index kMaxRows = 1000;
    Eigen::MatrixXd pooled(a.rows() + b.rows(), a.cols());
    pooled << a, b;
    if (pooled.rows() > kMaxRows) {
        Eigen::MatrixXd thin(kMaxRows, pooled.cols());
        for (Eigen::Index i = 0; i < kMaxRows; ++i) thin.row(i) = pooled.row(i * pooled.rows() / kMaxRows);
        pooled = std::move(thin);
    }
    const Eigen::MatrixXd d = squared_distances(pooled, pooled);
    std::vector<double> dist;
    dist.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
    for (Eigen::Index i = 0; i < pooled.rows(); ++i)
        for (Eigen::Index j = i + 1; j < pooled.rows(); ++j) dist.push_back(std::sqrt(d(i, j)));
    if (dist.empty()) throw InvalidArgument("median heuristic needs at least two points");
    const auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
    std::nth_element(dist.begin(), mid, dist.end());
    double median = *mid;
    if (dist.size() % 2 == 0) {
        median = 0.5 * (median + *std::max_element(dist.begin(), mid));
    }
    return median;
}

double mmd_rbf(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, std::optional<double> sigma) {
    if (a.rows() == 0 || b.rows() == 0) throw InvalidArgument("mmd_rbf needs nonempty samples");
    if (a.cols() != b.cols()) throw InvalidArgument("mmd_rbf: dimensions differ");
    const double s = sigma ? *sigma : median_heuristic_bandwidth(a, b);
    if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("mmd_rbf: bandwidth must be positive");
    const double value = mean_kernel(a, a, s) + mean_kernel(b, b, s) - 2.0 * mean_kernel(a, b, s);
    return std::max(value, 0.0);
}

Projection2d project_2d(const Eigen::MatrixXd& rows, int iterations) {
    if (rows.rows() < 2 || rows.cols() < 1) throw InvalidArgument("project_2d needs at least two rows");
    Projection2d out;
    out.mean = rows.colwise().mean();
    const Eigen::MatrixXd centered = rows.rowwise() - out.mean;
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
    const Eigen::Index d = cov.rows();
    out.axes = Eigen::MatrixXd::Zero(d, 2);
    for (int axis = 0; axis < 2 && axis < d; ++axis) {
        Eigen::VectorXd v(d);
        for (Eigen::Index i = 0; i < d; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i);
        v.normalize();
        double lambda = 0.0;
        for (int it = 0; it < iterations; ++it) {
            Eigen::VectorXd w = cov * v;
            const double norm = w.norm();
            if (norm == 0.0) break;
            w /= norm;
            const bool converged = (w - v).norm() < 1e-12;
            v = w;
            lambda = norm;
            if (converged) break;
        }
        Eigen::Index big = 0;
        v.cwiseAbs().maxCoeff(&big);
        if (v[big] < 0) v = -v;
        lambda = v.dot(cov * v);
        out.axes.col(axis) = v;
        out.variances[axis] = lambda;
        cov -= lambda * v * v.transpose();
    }
    out.coordinates = centered * out.axes;
    return out;
}

// ---------------------------------------------------------------------------
// Memorization and confidence proxy
// ---------------------------------------------------------------------------

ScoreProfile estimate_memorization(const ExampleSource& data, const IdSet& train_ids,
                                   const TrainConfig& trainer, const MemorizationConfig& config) {
    if (config.m_models < 2) throw InvalidArgument("estimate_memorization needs m_models >= 2");
    if (!(config.inclusion_prob > 0.0 && config.inclusion_prob < 1.0)) {
        throw InvalidArgument("inclusion_prob must lie in (0, 1)");
    }
    if (train_ids.empty()) throw InvalidArgument("estimate_memorization needs train ids");
    const auto n = train_ids.size();
    const auto m = static_cast<std::size_t>(config.m_models);
    const std::vector<int> labels = data.labels(train_ids.span());

    std::vector<std::vector<char>> included(m, std::vector<char>(n, 0));
    for (std::size_t k = 0; k < m; ++k) {
        Rng rng(derive_seed(config.seed, 4000 + k));
        for (std::size_t i = 0; i < n; ++i) included[k][i] = rng.uniform() < config.inclusion_prob ? 1 : 0;
    }

    std::vector<std::vector<char>> correct(m);
    auto run_model = [&](std::size_t k) {
        std::vector<ExampleId> subset;
        for (std::size_t i = 0; i < n; ++i)
            if (included[k][i]) subset.push_back(train_ids.ids()[i]);
        std::vector<char> hits(n, 0);
        if (!subset.empty()) {
            TrainConfig cfg = trainer;
            cfg.seed = derive_seed(config.seed, 5000 + k);
            cfg.record_confidence_trace = false;
            const auto model = train(data, IdSet(std::move(subset)), cfg).model;
            const Eigen::MatrixXd z = logits(model.network, data, train_ids.span());
            for (std::size_t i = 0; i < n; ++i)
                hits[i] = argmax_row(z.row(static_cast<Eigen::Index>(i))) == labels[i] ? 1 : 0;
        }
        correct[k] = std::move(hits);
    };

    const auto threads = static_cast<std::size_t>(std::max(1, config.threads));
    if (threads == 1) {
        for (std::size_t k = 0; k < m; ++k) run_model(k);
    } else {
        std::vector<std::exception_ptr> errors(m);
        for (std::size_t begin = 0; begin < m; begin += threads) {
            std::vector<std::jthread> pool;
            for (std::size_t k = begin; k < std::min(m, begin + threads); ++k) {
                pool.emplace_back([&, k] {
                    try {
                        run_model(k);
                    } catch (...) {
                        errors[k] = std::current_exception();
                    }
                });
            }
        }
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    ScoreProfile profile;
    profile.kind = ScoreKind::kMemorization;
    std::vector<ExampleId> flagged;
    for (std::size_t i = 0; i < n; ++i) {
        double in_hits = 0, in_count = 0, out_hits = 0, out_count = 0;
        for (std::size_t k = 0; k < m; ++k) {
            if (included[k][i]) {
                in_count += 1;
                in_hits += correct[k][i];
            } else {
                out_count += 1;
                out_hits += correct[k][i];
            }
        }
        const ExampleId id = train_ids.ids()[i];
        if (in_count == 0 || out_count == 0) {
            profile.values[id] = 0.0;
            flagged.push_back(id);
        } else {
            profile.values[id] = in_hits / in_count - out_hits / out_count;
        }
    }
    profile.low_confidence = IdSet(std::move(flagged));
    profile.metadata = {
        {"estimator", "subsampled-in-out"},
        {"m_models", config.m_models},
        {"inclusion_prob", config.inclusion_prob},
        {"seed", config.seed},
        {"trainer_epochs", trainer.epochs},
        {"trainer_architecture", to_string(trainer.architecture)},
    };
    return profile;
}

ScoreProfile confidence_proxy(const ConfidenceTrace& trace) {
    ScoreProfile profile;
    profile.kind = ScoreKind::kCProxy;
    for (const auto& [id, series] : trace.values) {
        if (series.empty()) throw InvalidArgument("missing confidence trace for id " + std::to_string(id));
        const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(series.size());
        profile.values[id] = std::clamp(mean, 0.0, 1.0);
    }
    if (profile.values.empty()) throw InvalidArgument("confidence_proxy needs a nonempty trace");
    profile.metadata = {{"estimator", "mean-true-label-confidence"}, {"epochs", trace.epochs}};
    return profile;
}

// ---------------------------------------------------------------------------
// Rank statistics and buckets
// ---------------------------------------------------------------------------

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("spearman: length mismatch");
    if (a.size() < 2) throw InvalidArgument("spearman needs at least 2 points");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const Eigen::Map<const Eigen::VectorXd> x(ra.data(), static_cast<Eigen::Index>(ra.size()));
    const Eigen::Map<const Eigen::VectorXd> y(rb.data(), static_cast<Eigen::Index>(rb.size()));
    const Eigen::VectorXd xc = x.array() - x.mean();
    const Eigen::VectorXd yc = y.array() - y.mean();
    const double denom = std::sqrt(xc.squaredNorm() * yc.squaredNorm());
    if (denom == 0.0) throw DegenerateError("spearman undefined for constant input");
    return std::clamp(xc.dot(yc) / denom, -1.0, 1.0);
}

double spearman(const std::map<ExampleId, double>& a, const std::map<ExampleId, double>& b) {
    if (a.size() != b.size()) throw InvalidArgument("spearman: key sets differ");
    std::vector<double> va, vb;
    va.reserve(a.size());
    vb.reserve(b.size());
    auto it = b.begin();
    for (const auto& [id, v] : a) {
        if (it->first != id) throw InvalidArgument("spearman: key sets differ");
        va.push_back(v);
        vb.push_back(it->second);
        ++it;
    }
    return spearman(va, vb);
}

IdSet score_buckets(const ScoreProfile& profile, const BucketSpec& spec) {
    if (spec.n < 1) throw InvalidArgument("bucket size must be >= 1");
    if (profile.kind != ScoreKind::kExternal && profile.kind != spec.key) {
        throw InvalidArgument("bucket key " + to_string(spec.key) + " does not match profile kind " +
                              to_string(profile.kind));
    }
    std::vector<std::pair<double, ExampleId>> cand;
    cand.reserve(profile.values.size());
    for (const auto& [id, v] : profile.values) {
        if (profile.low_confidence.contains(id)) continue;
        double key = v;
        switch (spec.mode) {
            case BucketMode::kLowest:
            case BucketMode::kContiguousRange: key = v; break;
            case BucketMode::kHighest: key = -v; break;
            case BucketMode::kNearestMidpoint: key = std::abs(v - spec.midpoint); break;
        }
        cand.emplace_back(key, id);
    }
    const auto n = static_cast<std::size_t>(spec.n);
    const auto start = spec.mode == BucketMode::kContiguousRange ? static_cast<std::size_t>(std::max(0, spec.offset)) : 0;
    if (start + n > cand.size()) {
        throw InvalidArgument("bucket of " + std::to_string(n) + " exceeds the " + std::to_string(cand.size()) +
                              " usable scores");
    }
    std::sort(cand.begin(), cand.end());
    std::vector<ExampleId> ids;
    ids.reserve(n);
    for (std::size_t i = start; i < start + n; ++i) ids.push_back(cand[i].second);
    return IdSet(std::move(ids));
}

std::array<IdSet, 3> low_mid_high_buckets(const ScoreProfile& profile, int n) {
    const ScoreKind key = profile.kind;
    std::array<IdSet, 3> out{
        score_buckets(profile, BucketSpec{key, BucketMode::kLowest, n}),
        score_buckets(profile, BucketSpec{key, BucketMode::kNearestMidpoint, n}),
        score_buckets(profile, BucketSpec{key, BucketMode::kHighest, n}),
    };
    if (out[0].intersects(out[1]) || out[1].intersects(out[2]) || out[0].intersects(out[2])) {
        throw DegenerateError("low/mid/high buckets overlap; the score distribution is too concentrated");
    }
    return out;
}

void save_score_profile(const ScoreProfile& profile, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["kind"] = to_string(profile.kind);
    j["metadata"] = profile.metadata;
    nlohmann::ordered_json values = nlohmann::ordered_json::object();
    for (const auto& [id, v] : profile.values) values[std::to_string(id)] = v;
    j["values"] = std::move(values);
    j["low_confidence"] = profile.low_confidence.ids();
    write_file_atomic(path, j.dump() + "\n");
}

ScoreProfile load_score_profile(const std::filesystem::path& path, ScoreKind csv_kind) {
    const std::string text = read_file(path);
    ScoreProfile profile;
    if (path.extension() == ".csv") {
        profile.kind = csv_kind;
        std::istringstream in(text);
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos) throw FormatError("score table row without a comma: " + line);
            try {
                const ExampleId id = std::stoll(line.substr(0, comma));
                profile.values[id] = std::stod(line.substr(comma + 1));
            } catch (const std::exception&) {
                if (first) {  // header row
                    first = false;
                    continue;
                }
                throw FormatError("bad score table row: " + line);
            }
            first = false;
        }
        profile.metadata = {{"source", path.filename().string()}};
        return profile;
    }
    try {
        const auto j = nlohmann::json::parse(text);
        profile.kind = parse_score_kind(j.at("kind").get<std::string>());
        if (j.contains("metadata")) profile.metadata = j.at("metadata");
        for (const auto& [key, v] : j.at("values").items()) profile.values[std::stoll(key)] = v.get<double>();
        if (j.contains("low_confidence")) profile.low_confidence = IdSet(j.at("low_confidence").get<std::vector<ExampleId>>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed score profile " + path.string() + ": " + e.what());
    } catch (const std::invalid_argument&) {
        throw FormatError("malformed id key in score profile " + path.string());
    }
    return profile;
}

}  // namespace rumkit
