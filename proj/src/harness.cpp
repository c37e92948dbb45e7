#include "rumkit/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "rumkit/io.hpp"
#include "rumkit/random.hpp"
#include "rumkit/serialize.hpp"

namespace rumkit {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& what) {
    if (!j.is_object()) throw FormatError(what + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw FormatError("unknown key '" + key + "' in " + what);
    }
}

fs::path resolve(const fs::path& p, const fs::path& base) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return (base / p).lexically_normal();
}

std::uint64_t ids_hash(const IdSet& ids) {
    const auto* bytes = reinterpret_cast<const char*>(ids.ids().data());
    return fnv1a64(std::string_view(bytes, ids.size() * sizeof(ExampleId)));
}

}  // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

LabeledDataset load_dataset(const DatasetSpec& spec) {
    LabeledDataset data = [&] {
        if (spec.kind == "blobs") return make_blobs(spec.blobs);
        if (spec.kind == "csv") return load_csv_dataset(spec.csv);
        throw InvalidArgument("unknown dataset kind '" + spec.kind + "'");
    }();
    if (spec.val_fraction > 0.0) return hold_out_validation(data, spec.val_fraction, spec.val_seed);
    return data;
}

std::string to_string(PartitionMode m) {
    switch (m) {
        case PartitionMode::kEsBuckets: return "es-buckets";
        case PartitionMode::kMemBuckets: return "mem-buckets";
        case PartitionMode::kMixed: return "mixed";
        case PartitionMode::kRandom: return "random";
        case PartitionMode::kFile: return "file";
    }
    return "file";
}

PartitionMode parse_partition_mode(std::string_view tag) {
    if (tag == "es-buckets") return PartitionMode::kEsBuckets;
    if (tag == "mem-buckets") return PartitionMode::kMemBuckets;
    if (tag == "mixed") return PartitionMode::kMixed;
    if (tag == "random") return PartitionMode::kRandom;
    if (tag == "file") return PartitionMode::kFile;
    throw InvalidArgument("unknown partition mode '" + std::string(tag) + "'");
}

std::string to_string(VariantKind k) {
    switch (k) {
        case VariantKind::kVanilla: return "vanilla";
        case VariantKind::kRum: return "rum";
        case VariantKind::kShuffle: return "shuffle";
    }
    return "vanilla";
}

VariantKind parse_variant_kind(std::string_view tag) {
    if (tag == "vanilla") return VariantKind::kVanilla;
    if (tag == "rum") return VariantKind::kRum;
    if (tag == "shuffle") return VariantKind::kShuffle;
    throw InvalidArgument("unknown variant kind '" + std::string(tag) + "'");
}

std::vector<json> default_tuning_grid(Algorithm algorithm) {
    std::vector<json> grid;
    switch (algorithm) {
        case Algorithm::kFinetune:
        case Algorithm::kRandomLabel:
            for (double lr : {0.01, 0.02, 0.03, 0.05, 0.07, 0.1}) grid.push_back({{"epochs", 10}, {"learning_rate", lr}});
            break;
        case Algorithm::kL1Sparse:
            for (double lr : {0.005, 0.01, 0.03, 0.05, 0.1})
                for (double g : {1e-6, 1e-5, 1e-4}) grid.push_back({{"epochs", 10}, {"learning_rate", lr}, {"gamma", g}});
            break;
        case Algorithm::kNegGrad:
            for (double lr : {1e-4, 1e-3, 3e-3, 0.01, 0.03, 0.1}) grid.push_back({{"epochs", 10}, {"learning_rate", lr}});
            break;
        case Algorithm::kNegGradPlus:
            for (double beta : {0.85, 0.9, 0.95, 0.99})
                for (double lr : {0.01, 0.03, 0.05}) grid.push_back({{"epochs", 5}, {"learning_rate", lr}, {"beta", beta}});
            break;
        case Algorithm::kSalUn:
            for (int epochs : {5, 10})
                for (double lr : {0.005, 0.03, 0.1})
                    for (double s : {0.3, 0.5, 0.7})
                        grid.push_back({{"epochs", epochs}, {"learning_rate", lr}, {"sparsity_ratio", s}});
            break;
        case Algorithm::kScrub:
            for (double lr : {0.01, 0.03, 0.05, 0.1}) grid.push_back({{"epochs", 10}, {"learning_rate", lr}});
            break;
        case Algorithm::kRetrain:
        case Algorithm::kNoop: break;
    }
    return grid;
}

const std::vector<std::uint64_t>& ExperimentConfig::seeds_for(const VariantSpec& v) const {
    if (v.kind == VariantKind::kVanilla && v.policy.assignment.size() == 1) {
        const auto it = seed_overrides.find(v.policy.assignment.front().algorithm);
        if (it != seed_overrides.end()) return it->second;
    }
    return seeds;
}

std::vector<std::uint64_t> ExperimentConfig::all_seeds() const {
    std::set<std::uint64_t> all(seeds.begin(), seeds.end());
    for (const auto& v : variants) {
        const auto& s = seeds_for(v);
        all.insert(s.begin(), s.end());
    }
    return {all.begin(), all.end()};
}

bool ExperimentConfig::needs_scores(ScoreKind kind) const {
    const bool by_partition = (partition.mode == PartitionMode::kMemBuckets || partition.mode == PartitionMode::kMixed) &&
                              partition.key == kind;
    if (by_partition) return true;
    if (kind == ScoreKind::kMemorization && cross_analysis) return true;
    for (const auto& v : variants) {
        if (v.kind != VariantKind::kRum) continue;
        if (kind == ScoreKind::kMemorization && v.refine_key == RefinementKey::kMemorization) return true;
        if (kind == ScoreKind::kCProxy && v.refine_key == RefinementKey::kCProxy) return true;
    }
    return false;
}

namespace {

UnlearnConfig resolve_unlearn(const ExperimentConfig& cfg, const std::string& algorithm_tag, const json& overrides) {
    const Algorithm a = parse_algorithm(algorithm_tag);
    UnlearnConfig c = default_unlearn_config(a);
    const auto it = cfg.unlearn_defaults.find(a);
    if (it != cfg.unlearn_defaults.end()) c = apply_overrides(c, it->second);
    if (!overrides.is_null()) {
        if (overrides.contains("algorithm") && parse_algorithm(overrides.at("algorithm").get<std::string>()) != a) {
            throw FormatError("overrides name a different algorithm than the policy entry");
        }
        c = apply_overrides(c, overrides);
    }
    c.algorithm = a;
    return c;
}

VariantSpec parse_vanilla(const ExperimentConfig& cfg, const json& j) {
    VariantSpec v;
    v.kind = VariantKind::kVanilla;
    if (j.is_string()) {
        v.policy.assignment = {resolve_unlearn(cfg, j.get<std::string>(), json())};
        v.name = to_string(v.policy.assignment.front().algorithm);
        return v;
    }
    reject_unknown(j, {"algorithm", "overrides", "name"}, "algorithm entry");
    v.policy.assignment = {
        resolve_unlearn(cfg, j.at("algorithm").get<std::string>(), j.value("overrides", json()))};
    v.name = j.value("name", to_string(v.policy.assignment.front().algorithm));
    return v;
}

VariantSpec parse_variant(const ExperimentConfig& cfg, const json& j) {
    reject_unknown(j, {"name", "kind", "refine", "order", "policy"}, "variant");
    VariantSpec v;
    v.kind = parse_variant_kind(j.value("kind", std::string("rum")));
    if (j.contains("refine")) v.refine_key = parse_refinement_key(j.at("refine").get<std::string>());
    if (v.kind == VariantKind::kShuffle) v.refine_key = RefinementKey::kRandom;
    v.policy.order = parse_execution_order(j.value("order", std::string("low-to-high")));
    const json& policy = j.at("policy");
    if (!policy.is_array() || policy.empty()) throw FormatError("variant policy must be a nonempty list");
    const std::size_t k = policy.size();
    v.policy.assignment.resize(k);
    std::vector<bool> seen(k, false);
    std::string tags;
    for (std::size_t i = 0; i < k; ++i) {
        const json& entry = policy[i];
        reject_unknown(entry, {"bucket", "algorithm", "overrides"}, "policy entry");
        const int bucket = entry.value("bucket", static_cast<int>(i));
        if (bucket < 0 || static_cast<std::size_t>(bucket) >= k || seen[static_cast<std::size_t>(bucket)]) {
            throw FormatError("policy buckets must be a permutation of 0..k-1");
        }
        seen[static_cast<std::size_t>(bucket)] = true;
        v.policy.assignment[static_cast<std::size_t>(bucket)] =
            resolve_unlearn(cfg, entry.at("algorithm").get<std::string>(), entry.value("overrides", json()));
        v.policy.permutation.push_back(bucket);
    }
    if (v.policy.order != ExecutionOrder::kExplicit) v.policy.permutation.clear();
    if (v.kind == VariantKind::kVanilla && k != 1) throw FormatError("a vanilla variant takes exactly one algorithm");
    for (std::size_t b = 0; b < k; ++b) {
        if (b) tags += "-";
        tags += to_string(v.policy.assignment[b].algorithm);
    }
    v.name = j.value("name", to_string(v.kind) + "-" + tags);
    return v;
}

json variant_to_json(const VariantSpec& v) {
    json policy = json::array();
    const std::vector<int> order =
        v.policy.order == ExecutionOrder::kExplicit ? v.policy.permutation : order_variants(v.policy.assignment.size()).first;
    for (const int b : order) {
        const auto& c = v.policy.assignment[static_cast<std::size_t>(b)];
        policy.push_back({{"bucket", b}, {"algorithm", to_string(c.algorithm)}, {"overrides", c}});
    }
    return json{{"name", v.name},
                {"kind", to_string(v.kind)},
                {"refine", to_string(v.refine_key)},
                {"order", to_string(v.policy.order)},
                {"policy", std::move(policy)}};
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& j, const fs::path& base_dir) {
    reject_unknown(j,
                   {"name", "dataset", "train", "memorization", "partition", "unlearn_defaults", "algorithms", "rum",
                    "variants", "tuning", "seeds", "seed_overrides", "cross_analysis", "output_dir"},
                   "experiment config");
    ExperimentConfig cfg;
    cfg.name = j.value("name", cfg.name);

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        reject_unknown(d, {"kind", "blobs", "csv", "val_fraction", "val_seed"}, "dataset");
        cfg.dataset.kind = d.value("kind", cfg.dataset.kind);
        if (cfg.dataset.kind != "blobs" && cfg.dataset.kind != "csv") {
            throw FormatError("dataset kind must be 'blobs' or 'csv'");
        }
        if (d.contains("blobs")) cfg.dataset.blobs = d.at("blobs").get<BlobsConfig>();
        if (d.contains("csv")) {
            cfg.dataset.csv = d.at("csv").get<CsvDatasetConfig>();
            cfg.dataset.csv.path = resolve(cfg.dataset.csv.path, base_dir);
        }
        if (cfg.dataset.kind == "csv") {
            if (!d.contains("csv")) throw FormatError("csv dataset needs a 'csv' section");
            if (!fs::exists(cfg.dataset.csv.path)) {
                throw FormatError("dataset file does not exist: " + cfg.dataset.csv.path.string());
            }
        }
        cfg.dataset.val_fraction = d.value("val_fraction", cfg.dataset.val_fraction);
        cfg.dataset.val_seed = d.value("val_seed", cfg.dataset.val_seed);
        if (cfg.dataset.val_fraction < 0.0 || cfg.dataset.val_fraction >= 1.0) {
            throw FormatError("val_fraction must lie in [0, 1)");
        }
    }
    if (j.contains("train")) cfg.train = j.at("train").get<TrainConfig>();
    if (j.contains("memorization")) cfg.memorization = j.at("memorization").get<MemorizationConfig>();

    if (j.contains("partition")) {
        const json& p = j.at("partition");
        reject_unknown(p, {"mode", "n", "count", "offsets", "key", "files", "seed"}, "partition");
        auto& ps = cfg.partition;
        ps.mode = parse_partition_mode(p.value("mode", std::string("mem-buckets")));
        ps.n = p.value("n", ps.n);
        ps.count = p.value("count", ps.count);
        ps.offsets = p.value("offsets", std::vector<int>{});
        if (p.contains("key")) ps.key = parse_score_kind(p.at("key").get<std::string>());
        if (ps.key != ScoreKind::kMemorization && ps.key != ScoreKind::kCProxy) {
            throw FormatError("partition key must be memorization or c-proxy");
        }
        for (const auto& f : p.value("files", std::vector<std::string>{})) {
            ps.files.push_back(resolve(f, base_dir));
            if (!fs::exists(ps.files.back())) throw FormatError("partition file does not exist: " + ps.files.back().string());
        }
        ps.seed = p.value("seed", std::uint64_t{0});
        if (ps.n < 1 || ps.count < 1) throw FormatError("partition n and count must be >= 1");
        if (ps.mode == PartitionMode::kFile && ps.files.empty()) throw FormatError("file partitions need 'files'");
        if (!ps.offsets.empty() && ps.offsets.size() != static_cast<std::size_t>(ps.count)) {
            throw FormatError("es-bucket offsets must have 'count' entries");
        }
    }

    if (j.contains("unlearn_defaults")) {
        for (const auto& [tag, overrides] : j.at("unlearn_defaults").items()) {
            const Algorithm a = parse_algorithm(tag);
            apply_overrides(default_unlearn_config(a), overrides);  // validates
            cfg.unlearn_defaults[a] = overrides;
        }
    }
    for (const auto& entry : j.value("algorithms", json::array())) cfg.variants.push_back(parse_vanilla(cfg, entry));
    for (const auto& entry : j.value("rum", json::array())) cfg.variants.push_back(parse_variant(cfg, entry));
    for (const auto& entry : j.value("variants", json::array())) cfg.variants.push_back(parse_variant(cfg, entry));
    std::set<std::string> names;
    for (const auto& v : cfg.variants) {
        if (!names.insert(v.name).second) throw FormatError("duplicate variant name '" + v.name + "'");
    }

    if (j.contains("tuning")) {
        const json& t = j.at("tuning");
        reject_unknown(t, {"enabled", "grids"}, "tuning");
        cfg.tuning.enabled = t.value("enabled", false);
        if (t.contains("grids")) {
            for (const auto& [tag, grid] : t.at("grids").items()) {
                const Algorithm a = parse_algorithm(tag);
                for (const auto& point : grid) apply_overrides(default_unlearn_config(a), point);
                cfg.tuning.grids[a] = grid.get<std::vector<json>>();
            }
        }
    }
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (cfg.seeds.empty()) throw FormatError("seeds must be nonempty");
    if (j.contains("seed_overrides")) {
        for (const auto& [tag, seeds] : j.at("seed_overrides").items()) {
            auto list = seeds.get<std::vector<std::uint64_t>>();
            if (list.empty()) throw FormatError("seed override for " + tag + " is empty");
            cfg.seed_overrides[parse_algorithm(tag)] = std::move(list);
        }
    }
    cfg.cross_analysis = j.value("cross_analysis", false);
    if (j.contains("output_dir")) cfg.output_dir = resolve(j.at("output_dir").get<std::string>(), base_dir);
    return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw FormatError("cannot parse config " + path.string() + ": " + e.what());
    }
    try {
        return parse_experiment_config(j, path.parent_path());
    } catch (const json::exception& e) {
        throw FormatError("invalid config " + path.string() + ": " + e.what());
    }
}

json effective_config(const ExperimentConfig& cfg) {
    json dataset{{"kind", cfg.dataset.kind},
                 {"val_fraction", cfg.dataset.val_fraction},
                 {"val_seed", cfg.dataset.val_seed}};
    if (cfg.dataset.kind == "blobs") dataset["blobs"] = cfg.dataset.blobs;
    if (cfg.dataset.kind == "csv") dataset["csv"] = cfg.dataset.csv;

    json partition{{"mode", to_string(cfg.partition.mode)},
                   {"n", cfg.partition.n},
                   {"count", cfg.partition.count},
                   {"offsets", cfg.partition.offsets},
                   {"key", to_string(cfg.partition.key)},
                   {"seed", cfg.partition.seed}};
    json files = json::array();
    for (const auto& f : cfg.partition.files) files.push_back(f.generic_string());
    partition["files"] = std::move(files);

    json defaults = json::object();
    for (const auto& [a, o] : cfg.unlearn_defaults) defaults[to_string(a)] = o;
    json variants = json::array();
    for (const auto& v : cfg.variants) variants.push_back(variant_to_json(v));
    json grids = json::object();
    for (const auto& [a, g] : cfg.tuning.grids) grids[to_string(a)] = g;
    json overrides = json::object();
    for (const auto& [a, s] : cfg.seed_overrides) overrides[to_string(a)] = s;

    return json{{"name", cfg.name},
                {"dataset", std::move(dataset)},
                {"train", cfg.train},
                {"memorization", cfg.memorization},
                {"partition", std::move(partition)},
                {"unlearn_defaults", std::move(defaults)},
                {"variants", std::move(variants)},
                {"tuning", {{"enabled", cfg.tuning.enabled}, {"grids", std::move(grids)}}},
                {"seeds", cfg.seeds},
                {"seed_overrides", std::move(overrides)},
                {"cross_analysis", cfg.cross_analysis}};
}

std::string config_hash(const json& j) { return hex64(fnv1a64(j.dump())); }

fs::path scenario_path(const std::string& name, const fs::path& scenario_dir) {
    const fs::path p = scenario_dir / (name + ".json");
    if (!fs::exists(p)) throw InvalidArgument("unknown scenario '" + name + "' (looked in " + scenario_dir.string() + ")");
    return p;
}

std::vector<std::string> list_scenarios(const fs::path& scenario_dir) {
    std::vector<std::string> names;
    if (!fs::is_directory(scenario_dir)) return names;
    for (const auto& entry : fs::directory_iterator(scenario_dir)) {
        if (entry.path().extension() == ".json") names.push_back(entry.path().stem().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

// ---------------------------------------------------------------------------
// Tuning
// ---------------------------------------------------------------------------

StepTuner::StepTuner(const ExampleSource& data, IdSet train_ids, IdSet eval_ids, TuningSpec spec)
    : data_(&data), train_ids_(std::move(train_ids)), eval_ids_(std::move(eval_ids)), spec_(std::move(spec)) {}

const ModelCheckpoint& StepTuner::oracle(const ModelCheckpoint& model, const ForgetPartition& partition,
                                         std::uint64_t seed) {
    const auto key = std::make_pair(ids_hash(partition.retain_ids), seed);
    auto it = oracles_.find(key);
    if (it == oracles_.end()) {
        UnlearnConfig rc = default_unlearn_config(Algorithm::kRetrain);
        rc.seed = seed;
        it = oracles_.emplace(key, unlearn(model, *data_, partition, rc).model).first;
        ++oracle_trainings_;
    }
    return it->second;
}

UnlearnResult StepTuner::operator()(const ModelCheckpoint& model, const ForgetPartition& partition,
                                    const UnlearnConfig& base, int step) {
    if (!spec_.enabled) return unlearn(model, *data_, partition, base);
    const auto it = spec_.grids.find(base.algorithm);
    const std::vector<json> grid = it != spec_.grids.end() ? it->second : default_tuning_grid(base.algorithm);
    if (grid.empty()) return unlearn(model, *data_, partition, base);
    if (eval_ids_.empty()) throw InvalidArgument("tuning needs a validation split");

    const ModelCheckpoint& target = oracle(model, partition, derive_seed(base.seed, 7000 + static_cast<std::uint64_t>(step)));
    const ForgetPartition scope{train_ids_ - partition.retain_ids, partition.retain_ids, partition.provenance};
    const EvalTriple want = evaluate_triple(target, *data_, scope, eval_ids_);

    std::optional<UnlearnResult> best;
    double best_score = -1.0;
    double total_seconds = 0.0;
    for (const auto& point : grid) {
        UnlearnResult r = unlearn(model, *data_, partition, apply_overrides(base, point));
        total_seconds += r.wall_seconds;
        const double score = tow(evaluate_triple(r.model, *data_, scope, eval_ids_), want);
        if (score > best_score) {
            best_score = score;
            best = std::move(r);
        }
    }
    return std::move(*best);
}

StepRunner StepTuner::runner() {
    return [this](const ModelCheckpoint& m, const ForgetPartition& p, const UnlearnConfig& c, int step) {
        return (*this)(m, p, c, step);
    };
}

// ---------------------------------------------------------------------------
// Preparation
// ---------------------------------------------------------------------------

IdSet PreparedExperiment::val_ids() const { return data.has_split("val") ? data.split("val") : IdSet{}; }

const ScoreProfile* PreparedExperiment::scores_for(RefinementKey key) const {
    switch (key) {
        case RefinementKey::kMemorization: return memorization ? &*memorization : nullptr;
        case RefinementKey::kCProxy: return cproxy ? &*cproxy : nullptr;
        case RefinementKey::kRandom: return nullptr;
    }
    return nullptr;
}

namespace {

json partition_summary(const NamedPartition& np, const EmbeddingMatrix& emb, const ScoreProfile* mem,
                       bool with_mmd) {
    const auto& p = np.partition;
    json info{{"name", np.name},
              {"provenance", to_string(p.provenance)},
              {"forget_size", p.forget_ids.size()},
              {"retain_size", p.retain_ids.size()}};
    const EmbeddingMatrix f = emb.select(p.forget_ids);
    const EmbeddingMatrix r = emb.select(p.retain_ids);
    try {
        info["es"] = entanglement_score(r, f);
    } catch (const DegenerateError&) {
        info["es"] = nullptr;
    }
    if (with_mmd) info["mmd"] = mmd_rbf(r.rows, f.rows);
    if (mem) {
        std::vector<double> v;
        for (const auto id : p.forget_ids) v.push_back(mem->values.at(id));
        const MeanCi s = mean_ci(v);
        double var = 0.0;
        for (const double x : v) var += (x - s.mean) * (x - s.mean);
        info["mem_mean"] = s.mean;
        info["mem_std"] = std::sqrt(var / static_cast<double>(v.size()));
    }
    return info;
}

std::vector<NamedPartition> build_partitions(const PreparedExperiment& pe, const EmbeddingMatrix& emb) {
    const auto& ps = pe.config.partition;
    const IdSet& train = pe.train_ids();
    std::vector<NamedPartition> out;
    switch (ps.mode) {
        case PartitionMode::kEsBuckets: {
            const auto ranking = centroid_distance_ranking(emb);
            const std::vector<int> offsets = ps.offsets.empty() ? even_offsets(ranking.size(), ps.n, ps.count) : ps.offsets;
            const auto buckets = es_buckets(ranking, ps.n, offsets);
            for (std::size_t k = 0; k < buckets.size(); ++k) {
                std::string name = buckets.size() == 3 ? to_string(buckets[k].provenance) : "es-" + std::to_string(k);
                out.push_back({std::move(name), buckets[k]});
            }
            break;
        }
        case PartitionMode::kMemBuckets:
        case PartitionMode::kMixed: {
            const ScoreProfile* scores = ps.key == ScoreKind::kMemorization ? &*pe.memorization : &*pe.cproxy;
            const auto b = low_mid_high_buckets(*scores, ps.n);
            if (ps.mode == PartitionMode::kMixed) {
                out.push_back({"mixed", make_partition(train, b[0] | b[1] | b[2], Provenance::kMixed)});
            } else {
                // c-proxy runs opposite to memorization, so its lowest bucket is the high-mem one
                const bool flip = ps.key == ScoreKind::kCProxy;
                const Provenance tags[3] = {Provenance::kMemLow, Provenance::kMemMed, Provenance::kMemHigh};
                for (int k = 0; k < 3; ++k) {
                    const Provenance prov = tags[flip ? 2 - k : k];
                    out.push_back({to_string(prov), make_partition(train, b[static_cast<std::size_t>(k)], prov)});
                }
                if (flip) std::reverse(out.begin(), out.end());
            }
            break;
        }
        case PartitionMode::kRandom: {
            std::vector<ExampleId> ids = train.ids();
            if (static_cast<std::size_t>(ps.n) >= ids.size()) throw InvalidArgument("random forget set too large");
            Rng rng(derive_seed(ps.seed, 41));
            rng.shuffle(std::span<ExampleId>(ids));
            ids.resize(static_cast<std::size_t>(ps.n));
            out.push_back({"random", make_partition(train, IdSet(std::move(ids)), Provenance::kRandom)});
            break;
        }
        case PartitionMode::kFile:
            for (const auto& f : ps.files) out.push_back({f.stem().string(), load_partition(f, train)});
            break;
    }
    return out;
}

}  // namespace

PreparedExperiment prepare_experiment(const ExperimentConfig& config, const fs::path& cache_dir, PreparedInputs inputs) {
    const json eff = effective_config(config);
    PreparedExperiment pe{config, load_dataset(config.dataset), {}, {}, {}, {}, {}, json::array(), config_hash(eff)};
    const IdSet& train_set = pe.train_ids();

    const std::string model_key = config_hash(json{{"dataset", eff["dataset"]}, {"train", eff["train"]}});
    const fs::path ckpt = cache_dir.empty() ? fs::path() : cache_dir / ("original-" + model_key + ".ckpt");
    const fs::path trace_path = cache_dir.empty() ? fs::path() : cache_dir / ("trace-" + model_key + ".json");
    if (inputs.original) {
        if (inputs.original->trained_on != train_set) {
            throw InvalidArgument("the supplied model was not trained on this config's train split");
        }
        pe.original = std::move(*inputs.original);
        if (inputs.trace) pe.trace = std::move(*inputs.trace);
        if (config.needs_scores(ScoreKind::kCProxy) && !inputs.trace) {
            throw InvalidArgument("c-proxy scores need the confidence trace of the supplied model");
        }
    } else if (!ckpt.empty() && fs::exists(ckpt) && fs::exists(trace_path)) {
        pe.original = load_checkpoint(ckpt);
        pe.trace = json::parse(read_file(trace_path)).get<ConfidenceTrace>();
    } else {
        TrainConfig tc = config.train;
        tc.record_confidence_trace = true;
        TrainResult tr = train(pe.data, train_set, tc);
        pe.original = std::move(tr.model);
        pe.original.train_config.record_confidence_trace = false;
        pe.trace = std::move(*tr.trace);
        if (!ckpt.empty()) {
            save_checkpoint(pe.original, ckpt);
            write_file_atomic(trace_path, json(pe.trace).dump());
        }
    }

    if (config.needs_scores(ScoreKind::kMemorization)) {
        const std::string mem_key = config_hash(
            json{{"dataset", eff["dataset"]}, {"train", eff["train"]}, {"memorization", eff["memorization"]}});
        const fs::path mem_path = cache_dir.empty() ? fs::path() : cache_dir / ("memorization-" + mem_key + ".json");
        if (inputs.memorization) {
            pe.memorization = std::move(*inputs.memorization);
        } else if (!mem_path.empty() && fs::exists(mem_path)) {
            pe.memorization = load_score_profile(mem_path);
        } else {
            pe.memorization = estimate_memorization(pe.data, train_set, config.train, config.memorization);
            if (!mem_path.empty()) save_score_profile(*pe.memorization, mem_path);
        }
    }
    if (config.needs_scores(ScoreKind::kCProxy)) pe.cproxy = confidence_proxy(pe.trace);

    const EmbeddingMatrix emb = embed(pe.original, pe.data, train_set);
    pe.partitions = build_partitions(pe, emb);
    const ScoreProfile* mem = pe.memorization ? &*pe.memorization : nullptr;
    for (const auto& np : pe.partitions) {
        pe.partition_info.push_back(
            partition_summary(np, emb, mem, config.partition.mode == PartitionMode::kEsBuckets));
    }
    return pe;
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

json environment_stamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
#if defined(__linux__)
    const char* platform = "linux";
#elif defined(__APPLE__)
    const char* platform = "macos";
#else
    const char* platform = "other";
#endif
    return json{{"library", "rumkit 0.1.0"},
                {"compiler", __VERSION__},
                {"cplusplus", static_cast<long>(__cplusplus)},
                {"platform", platform},
                {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION)},
                {"utc", stamp}};
}

RunRecord run_seed(const PreparedExperiment& pe, std::uint64_t seed) {
    const auto& cfg = pe.config;
    RunRecord record;
    record.scenario = cfg.name;
    record.config_hash = pe.hash;
    record.seed = seed;
    record.partitions = pe.partition_info;
    record.environment = environment_stamp();

    StepTuner tuner(pe.data, pe.train_ids(), pe.val_ids(), cfg.tuning);
    const StepRunner runner = tuner.runner();
    const IdSet& test = pe.test_ids();

    for (const auto& np : pe.partitions) {
        const ForgetPartition& part = np.partition;
        std::optional<ModelCheckpoint> oracle;
        for (const auto& v : cfg.variants) {
            const auto& seeds = cfg.seeds_for(v);
            if (std::find(seeds.begin(), seeds.end(), seed) == seeds.end()) continue;
            if (!oracle) {
                UnlearnConfig rc = default_unlearn_config(Algorithm::kRetrain);
                rc.seed = derive_seed(seed, 100);
                oracle = unlearn(pe.original, pe.data, part, rc).model;
            }
            MetaPolicy policy = v.policy;
            for (auto& c : policy.assignment) c.seed = seed;

            CellResult cell{np.name, v.name, {}, std::nullopt, {}};
            if (v.kind == VariantKind::kVanilla) {
                UnlearnResult r = runner(pe.original, part, policy.assignment.front(), 0);
                cell.report = make_report(r.model, *oracle, pe.data, part, test, seed, r.wall_seconds);
                cell.configs.push_back(r.config);
            } else {
                const int k = static_cast<int>(policy.assignment.size());
                RefinementSpec spec{v.refine_key, k, {}, seed};
                const auto subsets = refine(part, pe.scores_for(v.refine_key), spec);
                RumResult r = run_rum(pe.original, pe.data, part, subsets, policy, test, runner);
                cell.report = make_report(r.model, *oracle, pe.data, part, test, seed, r.wall_seconds);
                for (const auto& s : r.trace.steps) cell.configs.push_back(s.config);
                cell.trace = std::move(r.trace);
            }
            record.cells.push_back(std::move(cell));
        }
    }
    return record;
}

void to_json(json& j, const CellResult& c) {
    j = json{{"partition", c.partition}, {"variant", c.variant}, {"report", c.report}, {"configs", c.configs}};
    if (c.trace) j["trace"] = *c.trace;
}

void from_json(const json& j, CellResult& c) {
    c.partition = j.at("partition").get<std::string>();
    c.variant = j.at("variant").get<std::string>();
    c.report = j.at("report").get<MetricsReport>();
    c.configs.clear();
    for (const auto& cj : j.value("configs", json::array())) c.configs.push_back(cj.get<UnlearnConfig>());
    if (j.contains("trace")) c.trace = j.at("trace").get<SequenceTrace>();
}

void to_json(json& j, const RunRecord& r) {
    j = json{{"scenario", r.scenario},   {"config_hash", r.config_hash}, {"seed", r.seed},
             {"partitions", r.partitions}, {"cells", r.cells},           {"environment", r.environment}};
    if (!r.effective_config.is_null()) j["effective_config"] = r.effective_config;
}

void from_json(const json& j, RunRecord& r) {
    r.scenario = j.at("scenario").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.partitions = j.value("partitions", json::array());
    r.cells = j.at("cells").get<std::vector<CellResult>>();
    r.environment = j.value("environment", json::object());
    r.effective_config = j.value("effective_config", json());
}

fs::path run_record_path(const fs::path& output_dir, const std::string& hash, std::uint64_t seed) {
    return output_dir / hash / (std::to_string(seed) + ".json");
}

fs::path save_run_record(const RunRecord& record, const fs::path& output_dir) {
    const fs::path path = run_record_path(output_dir, record.config_hash, record.seed);
    write_file_atomic(path, json(record).dump(1) + "\n");
    return path;
}

RunRecord load_run_record(const fs::path& path) {
    try {
        return json::parse(read_file(path)).get<RunRecord>();
    } catch (const json::exception& e) {
        throw FormatError("invalid run record " + path.string() + ": " + e.what());
    }
}

std::vector<RunRecord> load_run_records(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw InvalidArgument("not a directory: " + dir.string());
    std::vector<fs::path> paths;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
        const std::string stem = entry.path().stem().string();
        if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; })) continue;
        paths.push_back(entry.path());
    }
    std::sort(paths.begin(), paths.end());
    std::vector<RunRecord> out;
    for (const auto& p : paths) out.push_back(load_run_record(p));
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

double t_critical_95(int dof) {
    if (dof < 1) throw InvalidArgument("t critical value needs dof >= 1");
    return boost::math::quantile(boost::math::students_t_distribution<double>(dof), 0.975);
}

MeanCi mean_ci(std::vector<double> values) {
    if (values.empty()) throw InvalidArgument("mean_ci needs at least one value");
    std::sort(values.begin(), values.end());
    MeanCi out;
    out.n = values.size();
    const double n = static_cast<double>(values.size());
    out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() == 1) return out;
    double ss = 0.0;
    for (const double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stderr_mean = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    out.half_width = t_critical_95(static_cast<int>(values.size()) - 1) * out.stderr_mean;
    return out;
}

const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names{
        "tow",        "tow_mia",    "mia",      "mia_retrain",        "mia_gap",
        "forget_acc", "retain_acc", "test_acc", "retrain_forget_acc", "retrain_retain_acc",
        "retrain_test_acc", "disagreement_forget", "disagreement_retain", "disagreement_test", "wall_seconds"};
    return names;
}

double metric_value(const MetricsReport& r, std::string_view metric) {
    if (metric == "tow") return r.tow;
    if (metric == "tow_mia") return r.tow_mia;
    if (metric == "mia") return r.mia;
    if (metric == "mia_retrain") return r.mia_retrain;
    if (metric == "mia_gap") return r.mia_gap;
    if (metric == "forget_acc") return r.eval_unlearned.forget;
    if (metric == "retain_acc") return r.eval_unlearned.retain;
    if (metric == "test_acc") return r.eval_unlearned.test;
    if (metric == "retrain_forget_acc") return r.eval_retrain.forget;
    if (metric == "retrain_retain_acc") return r.eval_retrain.retain;
    if (metric == "retrain_test_acc") return r.eval_retrain.test;
    if (metric == "wall_seconds") return r.wall_seconds;
    if (metric.starts_with("disagreement_")) {
        const auto it = r.disagreement_pct.find(std::string(metric.substr(13)));
        if (it != r.disagreement_pct.end()) return it->second;
    }
    throw InvalidArgument("unknown metric '" + std::string(metric) + "'");
}

std::vector<AggregateRow> aggregate(const std::vector<RunRecord>& records, const std::vector<std::string>& metrics) {
    using Key = std::tuple<std::string, std::string, std::string, std::string>;
    std::map<Key, std::vector<double>> cells;
    for (const auto& rec : records) {
        for (const auto& c : rec.cells) {
            for (const auto& m : metrics) cells[{rec.scenario, c.partition, c.variant, m}].push_back(metric_value(c.report, m));
        }
    }
    std::vector<AggregateRow> rows;
    for (auto& [key, values] : cells) {
        const auto& [scenario, partition, variant, metric] = key;
        rows.push_back({scenario, partition, variant, metric, mean_ci(std::move(values))});
    }
    return rows;
}

std::string format_number(double v) {
    if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_aggregate(const std::vector<AggregateRow>& rows, const fs::path& dir) {
    std::ostringstream csv;
    csv << "scenario,partition,variant,metric,n,mean,stderr,ci95_half_width\n";
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        csv << r.scenario << ',' << r.partition << ',' << r.variant << ',' << r.metric << ',' << r.stats.n << ','
            << format_number(r.stats.mean) << ',' << format_number(r.stats.stderr_mean) << ','
            << (r.stats.half_width ? format_number(*r.stats.half_width) : "") << '\n';
        nlohmann::ordered_json row{{"scenario", r.scenario}, {"partition", r.partition}, {"variant", r.variant},
                                   {"metric", r.metric},     {"n", r.stats.n},           {"mean", r.stats.mean},
                                   {"stderr", r.stats.stderr_mean}};
        row["ci95_half_width"] = r.stats.half_width ? nlohmann::ordered_json(*r.stats.half_width) : nlohmann::ordered_json();
        out.push_back(std::move(row));
    }
    write_file_atomic(dir / "report.csv", csv.str());
    write_file_atomic(dir / "report.json", out.dump(1) + "\n");
}

const AggregateRow* find_row(const std::vector<AggregateRow>& rows, std::string_view partition,
                             std::string_view variant, std::string_view metric) {
    for (const auto& r : rows) {
        if (r.partition == partition && r.variant == variant && r.metric == metric) return &r;
    }
    return nullptr;
}

// ---------------------------------------------------------------------------
// Cross-analysis
// ---------------------------------------------------------------------------

CrossAnalysis cross_analysis(const EmbeddingMatrix& emb, const ScoreProfile& mem,
                             const std::vector<NamedPartition>& mem_buckets,
                             const std::vector<NamedPartition>& es_buckets_, std::uint64_t seed) {
    CrossAnalysis out;
    const IdSet all(std::vector<ExampleId>(emb.ids.begin(), emb.ids.end()));
    for (std::size_t k = 0; k < mem_buckets.size(); ++k) {
        const auto& p = mem_buckets[k].partition;
        CrossAnalysis::EsOfBucket row;
        row.bucket = mem_buckets[k].name;
        row.size = p.forget_ids.size();
        row.es = entanglement_score(emb.select(all - p.forget_ids), emb.select(p.forget_ids));
        std::vector<ExampleId> ids = all.ids();
        Rng rng(derive_seed(seed, 900 + k));
        rng.shuffle(std::span<ExampleId>(ids));
        ids.resize(row.size);
        const IdSet random(std::move(ids));
        row.es_random = entanglement_score(emb.select(all - random), emb.select(random));
        out.mem_buckets.push_back(row);
    }
    for (const auto& np : es_buckets_) {
        CrossAnalysis::MemOfBucket row;
        row.bucket = np.name;
        row.size = np.partition.forget_ids.size();
        double sum = 0.0;
        for (const auto id : np.partition.forget_ids) sum += mem.values.at(id);
        row.mem_mean = sum / static_cast<double>(row.size);
        double ss = 0.0;
        for (const auto id : np.partition.forget_ids) {
            const double d = mem.values.at(id) - row.mem_mean;
            ss += d * d;
        }
        row.mem_std = std::sqrt(ss / static_cast<double>(row.size));
        out.es_buckets.push_back(row);
    }
    return out;
}

CrossAnalysis cross_analysis(const PreparedExperiment& pe) {
    if (!pe.memorization) throw InvalidArgument("cross-analysis needs memorization scores");
    const IdSet& train_set = pe.train_ids();
    const EmbeddingMatrix emb = embed(pe.original, pe.data, train_set);
    const int n = pe.config.partition.n;

    std::vector<NamedPartition> mem_parts;
    const auto b = low_mid_high_buckets(*pe.memorization, n);
    const Provenance tags[3] = {Provenance::kMemLow, Provenance::kMemMed, Provenance::kMemHigh};
    for (int k = 0; k < 3; ++k) {
        mem_parts.push_back({to_string(tags[k]), make_partition(train_set, b[static_cast<std::size_t>(k)], tags[k])});
    }
    std::vector<NamedPartition> es_parts;
    const auto ranking = centroid_distance_ranking(emb);
    for (auto& p : es_buckets(ranking, n, even_offsets(ranking.size(), n, 3))) {
        es_parts.push_back({to_string(p.provenance), std::move(p)});
    }
    return cross_analysis(emb, *pe.memorization, mem_parts, es_parts, pe.config.partition.seed);
}

void write_cross_analysis(const CrossAnalysis& a, const fs::path& dir) {
    std::ostringstream csv;
    csv << "table,bucket,size,es,es_random,mem_mean,mem_std\n";
    nlohmann::ordered_json j{{"es_per_mem_bucket", nlohmann::ordered_json::array()},
                             {"mem_per_es_bucket", nlohmann::ordered_json::array()}};
    for (const auto& r : a.mem_buckets) {
        csv << "es_per_mem_bucket," << r.bucket << ',' << r.size << ',' << format_number(r.es) << ','
            << format_number(r.es_random) << ",,\n";
        j["es_per_mem_bucket"].push_back({{"bucket", r.bucket}, {"size", r.size}, {"es", r.es}, {"es_random", r.es_random}});
    }
    for (const auto& r : a.es_buckets) {
        csv << "mem_per_es_bucket," << r.bucket << ',' << r.size << ",,," << format_number(r.mem_mean) << ','
            << format_number(r.mem_std) << '\n';
        j["mem_per_es_bucket"].push_back(
            {{"bucket", r.bucket}, {"size", r.size}, {"mem_mean", r.mem_mean}, {"mem_std", r.mem_std}});
    }
    write_file_atomic(dir / "cross_analysis.csv", csv.str());
    write_file_atomic(dir / "cross_analysis.json", j.dump(1) + "\n");
}

}  // namespace rumkit
