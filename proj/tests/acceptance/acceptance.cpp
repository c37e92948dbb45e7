// Acceptance checks 1-13. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. The toy scenarios run in-process, restricted to the
// variants each criterion looks at.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rumkit/harness.hpp"
#include "rumkit/io.hpp"
#include "rumkit/random.hpp"

using namespace rumkit;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

Outcome within(Outcome o, double elapsed, double limit) {
    o.detail += " [" + fmt(elapsed, 1) + " s, limit " + fmt(limit, 0) + " s]";
    if (elapsed >= limit) {
        o.pass = false;
        o.detail += " over time limit";
    }
    return o;
}

// ---------------------------------------------------------------------------
// Scenario runs
// ---------------------------------------------------------------------------

class Scenarios {
public:
    Scenarios(std::filesystem::path dir, std::filesystem::path cache) : dir_(std::move(dir)), cache_(std::move(cache)) {}

    /// Scenario restricted to `variants` and seeds 0..2.
    ExperimentConfig config(const std::string& name, const std::set<std::string>& variants) const {
        ExperimentConfig cfg = load_experiment_config(scenario_path(name, dir_));
        std::vector<VariantSpec> keep;
        for (const auto& v : cfg.variants)
            if (variants.contains(v.name)) keep.push_back(v);
        if (keep.size() != variants.size()) throw InvalidArgument("scenario " + name + " lacks a requested variant");
        cfg.variants = std::move(keep);
        cfg.seeds = {0, 1, 2};
        cfg.seed_overrides.clear();
        cfg.cross_analysis = false;
        return cfg;
    }

    const PreparedExperiment& prepared(const std::string& name, const std::set<std::string>& variants) {
        const std::string key = name + "|" + std::accumulate(variants.begin(), variants.end(), std::string{},
                                                               [](std::string a, const std::string& b) {
                                                                   return std::move(a) + b + ",";
                                                               });
        auto it = prepared_.find(key);
        if (it == prepared_.end()) {
            auto p = std::make_unique<PreparedExperiment>(prepare_experiment(config(name, variants), cache_));
            it = prepared_.emplace(key, std::move(p)).first;
        }
        return *it->second;
    }

    std::vector<AggregateRow> run(const std::string& name, const std::set<std::string>& variants,
                                  const std::vector<std::string>& metrics) {
        const auto& p = prepared(name, variants);
        std::vector<RunRecord> records;
        for (const auto seed : p.config.seeds) records.push_back(run_seed(p, seed));
        return aggregate(records, metrics);
    }

private:
    std::filesystem::path dir_;
    std::filesystem::path cache_;
    std::map<std::string, std::unique_ptr<PreparedExperiment>> prepared_;
};

double mean_of(const std::vector<AggregateRow>& rows, const std::string& partition, const std::string& variant,
               const std::string& metric) {
    const auto* r = find_row(rows, partition, variant, metric);
    if (!r) throw Error("missing aggregate " + partition + "/" + variant + "/" + metric);
    if (r->stats.n != 3) throw Error("expected 3 seeds for " + partition + "/" + variant);
    return r->stats.mean;
}

const ForgetPartition& partition_named(const PreparedExperiment& p, const std::string& name) {
    for (const auto& np : p.partitions)
        if (np.name == name) return np.partition;
    throw Error("no partition " + name);
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

Outcome c1() {
    const EvalTriple perfect{1.0, 1.0, 1.0};
    const double t = tow(EvalTriple{0.9, 0.95, 0.98}, perfect);
    const double g = mia_gap(0.923, 0.549);
    const bool ok = std::abs(t - 0.8379) <= 1e-12 && std::abs(g - 0.374) <= 1e-12 &&
                    tow(perfect, EvalTriple{0.0, 0.0, 0.0}) == 0.0 &&
                    std::abs(tow_mia(0.923, 0.549, perfect, perfect) - 0.626) <= 1e-12;
    return {ok, "tow " + fmt(t, 12) + ", gap " + fmt(g, 12)};
}

Outcome c2() {
    Rng rng(2024);
    int bad = 0;
    for (int i = 0; i < 1000; ++i) {
        const EvalTriple u{rng.uniform(), rng.uniform(), rng.uniform()};
        const EvalTriple r{rng.uniform(), rng.uniform(), rng.uniform()};
        if (tow(u, u) != 1.0 || tow(u, r) != tow(r, u)) ++bad;
    }
    return {bad == 0, "1000 random cases, " + std::to_string(bad) + " violations"};
}

Outcome c3() {
    Rng rng(3);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.below(8));
        Eigen::MatrixXd r(2 + static_cast<Eigen::Index>(rng.below(20)), d), s(1 + static_cast<Eigen::Index>(rng.below(20)), d);
        for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = rng.normal();
        for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = rng.normal() + 2.0;
        const double base = entanglement_score(r, s);
        Eigen::RowVectorXd shift(d);
        for (Eigen::Index i = 0; i < d; ++i) shift[i] = 100.0 * rng.normal();
        const double scale = std::exp(4.0 * rng.normal());
        worst = std::max(worst, std::abs(entanglement_score(r.rowwise() + shift, s.rowwise() + shift) - base) / base);
        worst = std::max(worst, std::abs(entanglement_score(r * scale, s * scale) - base) / base);
    }
    Eigen::MatrixXd r(1, 2), s(1, 2);
    r << 0, 0;
    s << 2, 0;
    const double hand = entanglement_score(r, s);
    bool degenerate = false;
    try {
        Eigen::MatrixXd a(2, 2), b(2, 2);
        a << -1, 0, 1, 0;
        b << 0, 1, 0, -1;
        entanglement_score(a, b);
    } catch (const DegenerateError&) {
        degenerate = true;
    }
    return {worst <= 1e-9 && hand == 0.0 && degenerate,
            "max relative drift " + sci(worst) + ", hand case " + fmt(hand, 1) +
                (degenerate ? ", degenerate raised" : ", degenerate NOT raised")};
}

Outcome c4(Scenarios& sc) {
    // the fig1a toy model, without its partitions or scores
    const ExperimentConfig cfg = sc.config("fig1a-toy", {"noop"});
    const LabeledDataset data = load_dataset(cfg.dataset);
    const IdSet& train_ids = data.split("train");
    const ModelCheckpoint model = train(data, train_ids, cfg.train).model;
    const EmbeddingMatrix emb = embed(model, data, train_ids);
    const auto ranking = centroid_distance_ranking(emb);
    const int n = cfg.partition.n;
    const auto offsets =
        cfg.partition.offsets.empty() ? even_offsets(ranking.size(), n, 3) : cfg.partition.offsets;
    const auto buckets = es_buckets(ranking, n, offsets);
    std::vector<double> es, mmd;
    for (const auto& b : buckets) {
        const auto f = emb.select(b.forget_ids), r = emb.select(b.retain_ids);
        es.push_back(entanglement_score(r, f));
        mmd.push_back(mmd_rbf(f.rows, r.rows));
    }
    const double rho = spearman(es, mmd);
    const bool ok = es[0] < es[1] && es[1] < es[2] && rho < 0.0;
    return {ok, "ES " + fmt(es[0], 2) + " -> " + fmt(es[1], 2) + " -> " + fmt(es[2], 2) + ", MMD " + fmt(mmd[0], 5) +
                    " -> " + fmt(mmd[1], 5) + " -> " + fmt(mmd[2], 5) + ", spearman " + fmt(rho, 2)};
}

Outcome c5(Scenarios& sc) {
    const auto rows = sc.run("fig1a-toy", {"noop", "finetune", "neggrad_plus"}, {"tow"});
    bool ok = true;
    std::string detail;
    for (const std::string v : {"finetune", "neggrad_plus", "noop"}) {
        const double lo = mean_of(rows, "es-low", v, "tow"), hi = mean_of(rows, "es-high", v, "tow");
        ok = ok && lo > hi;
        detail += (detail.empty() ? "" : "; ") + v + " low " + fmt(lo) + " vs high " + fmt(hi);
    }
    return {ok, detail};
}

Outcome c6(Scenarios& sc) {
    const auto rows = sc.run("fig1b-toy", {"noop", "finetune", "random_label"}, {"tow"});
    bool ok = true;
    std::string detail;
    for (const std::string v : {"noop", "finetune", "random_label"}) {
        const double lo = mean_of(rows, "mem-low", v, "tow"), hi = mean_of(rows, "mem-high", v, "tow");
        ok = ok && (v == "random_label" ? hi > lo : lo > hi);
        detail += (detail.empty() ? "" : "; ") + v + " low " + fmt(lo) + " vs high " + fmt(hi);
    }
    return {ok, detail};
}

Outcome c7(Scenarios& sc) {
    const auto& p = sc.prepared("fig1b-toy", {"noop", "finetune", "random_label"});
    const ScoreProfile cp = confidence_proxy(p.trace);
    const double rho = spearman(cp.values, p.memorization->values);
    return {rho <= -0.3, "spearman(c-proxy, memorization) " + fmt(rho, 3)};
}

bool same_report(const MetricsReport& a, const MetricsReport& b) {
    return a.eval_unlearned == b.eval_unlearned && a.eval_retrain == b.eval_retrain && a.tow == b.tow &&
           a.tow_mia == b.tow_mia && a.mia == b.mia && a.mia_retrain == b.mia_retrain && a.mia_gap == b.mia_gap &&
           a.disagreement_pct == b.disagreement_pct;
}

Outcome c8(Scenarios& sc) {
    const auto& p = sc.prepared("fig1b-toy", {"noop", "finetune", "random_label"});
    const IdSet& test = p.test_ids();
    int checked = 0, equal = 0;
    for (const auto& np : p.partitions) {
        UnlearnConfig rc = default_unlearn_config(Algorithm::kRetrain);
        rc.seed = 11;
        const auto oracle = unlearn(p.original, p.data, np.partition, rc).model;
        for (const std::uint64_t seed : {0, 1}) {
            UnlearnConfig c = default_unlearn_config(Algorithm::kFinetune);
            c.seed = seed;
            MetaPolicy policy;
            policy.assignment = {c};
            const auto vanilla = unlearn(p.original, p.data, np.partition, c);
            const auto rum = run_rum(p.original, p.data, np.partition, {np.partition.forget_ids}, policy, test);
            const auto rv = make_report(vanilla.model, oracle, p.data, np.partition, test, seed, 0.0);
            const auto rr = make_report(rum.model, oracle, p.data, np.partition, test, seed, 0.0);
            ++checked;
            equal += same_report(rv, rr) && vanilla.model.network.params() == rum.model.network.params();
        }
    }
    return {checked == equal, std::to_string(equal) + "/" + std::to_string(checked) + " bit-equal reports"};
}

Outcome c9() {
    Rng rng(99);
    int bad = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const auto n_forget = static_cast<ExampleId>(1 + rng.below(300));
        const auto n_retain = static_cast<ExampleId>(1 + rng.below(300));
        const auto p = make_partition(IdSet::range(0, n_forget + n_retain - 1), IdSet::range(0, n_forget - 1),
                                      Provenance::kRandom);
        const int k = 1 + static_cast<int>(rng.below(std::min<std::uint64_t>(10, static_cast<std::uint64_t>(n_forget))));
        RefinementSpec spec;
        spec.key = RefinementKey::kRandom;
        spec.k = k;
        spec.seed = rng.next();
        const auto subsets = refine(p, nullptr, spec);
        MetaPolicy m;
        m.order = ExecutionOrder::kExplicit;
        m.assignment.assign(static_cast<std::size_t>(k), UnlearnConfig{});
        m.permutation.resize(static_cast<std::size_t>(k));
        std::iota(m.permutation.begin(), m.permutation.end(), 0);
        rng.shuffle(std::span<int>(m.permutation));
        const auto order = m.execution_order(subsets.size());
        const auto steps = rum_step_partitions(p, subsets, order);
        IdSet forgotten;
        bool ok = steps.size() == static_cast<std::size_t>(k);
        for (std::size_t i = 0; ok && i < steps.size(); ++i) {
            // R_i = R | S'[i+1..K]
            IdSet expect = p.retain_ids;
            for (std::size_t j = i + 1; j < steps.size(); ++j) expect = expect | subsets[static_cast<std::size_t>(order[j])];
            ok = steps[i].retain_ids == expect && steps[i].forget_ids == subsets[static_cast<std::size_t>(order[i])] &&
                 !steps[i].forget_ids.intersects(forgotten);
            forgotten = forgotten | steps[i].forget_ids;
        }
        if (!ok || !(forgotten == p.forget_ids)) ++bad;
    }
    return {bad == 0, "500 random (K, size) cases, " + std::to_string(bad) + " violations"};
}

Outcome c10(Scenarios& sc) {
    const auto rows = sc.run("table1-toy", {"finetune", "rum-finetune", "shuffle-finetune"}, {"tow"});
    const double vanilla = mean_of(rows, "mixed", "finetune", "tow");
    const double rum = mean_of(rows, "mixed", "rum-finetune", "tow");
    const double shuffle = mean_of(rows, "mixed", "shuffle-finetune", "tow");
    return {rum >= vanilla - 0.02 && rum >= shuffle,
            "RUM^F " + fmt(rum) + ", vanilla " + fmt(vanilla) + ", shuffle " + fmt(shuffle)};
}

Outcome c11(Scenarios& sc) {
    const auto& p = sc.prepared("fig1b-toy", {"noop", "finetune", "random_label"});
    const auto& part = partition_named(p, "mem-high");

    // objective equality on a few batch pairs
    bool objective_equal = true;
    const auto& f = part.forget_ids.ids();
    const auto& r = part.retain_ids.ids();
    UnlearnConfig ng = default_unlearn_config(Algorithm::kNegGradPlus);
    ng.beta = 1.0;
    const UnlearnConfig ft = default_unlearn_config(Algorithm::kFinetune);
    for (std::size_t b = 0; b + 32 <= r.size() && b < 320; b += 32) {
        const std::span<const ExampleId> rb(r.data() + b, 32), fb(f.data(), std::min<std::size_t>(16, f.size()));
        objective_equal = objective_equal && unlearning_objective(p.original.network, p.data, rb, fb, ng) ==
                                                 unlearning_objective(p.original.network, p.data, rb, fb, ft);
    }

    UnlearnConfig a = default_unlearn_config(Algorithm::kFinetune);
    a.epochs = 1;
    a.seed = 5;
    UnlearnConfig l1 = a;
    l1.algorithm = Algorithm::kL1Sparse;
    l1.gamma = 0.0;
    const double drift = (unlearn(p.original, p.data, part, a).model.network.params() -
                          unlearn(p.original, p.data, part, l1).model.network.params())
                             .cwiseAbs()
                             .maxCoeff();

    UnlearnConfig rl = default_unlearn_config(Algorithm::kRandomLabel);
    rl.epochs = 2;
    rl.seed = 5;
    UnlearnConfig sa = rl;
    sa.algorithm = Algorithm::kSalUn;
    sa.sparsity_ratio = 1.0;
    const double salun_drift = (unlearn(p.original, p.data, part, rl).model.network.params() -
                                unlearn(p.original, p.data, part, sa).model.network.params())
                                   .cwiseAbs()
                                   .maxCoeff();
    return {objective_equal && drift <= 1e-6 && salun_drift == 0.0,
            std::string("neggrad_plus(beta=1) objective ") + (objective_equal ? "equal" : "DIFFERS") +
                ", l1_sparse(gamma=0) drift " + fmt(drift, 9) + ", salun(1) vs random_label drift " +
                fmt(salun_drift, 9)};
}

Outcome c12(Scenarios& sc) {
    const auto& p = sc.prepared("fig1b-toy", {"noop", "finetune", "random_label"});
    const auto& part = partition_named(p, "mem-high");
    ConstantAttacker negative(false), positive(true);
    const double all_neg = mia_score(p.original, p.data, part, p.test_ids(), 0, negative).score;
    const double all_pos = mia_score(p.original, p.data, part, p.test_ids(), 0, positive).score;

    const auto rows = sc.run("table8-mia-toy", {"retrain"}, {"mia"});
    const double hi = mean_of(rows, "mem-high", "retrain", "mia");
    const double lo = mean_of(rows, "mem-low", "retrain", "mia");
    return {all_neg == 1.0 && all_pos == 0.0 && hi > lo,
            "all-negative " + fmt(all_neg, 1) + ", all-positive " + fmt(all_pos, 1) + ", MIA(retrain) high " +
                fmt(hi, 3) + " vs low " + fmt(lo, 3)};
}

Outcome c13(Scenarios& sc) {
    const auto& p = sc.prepared("fig1b-toy", {"noop", "finetune", "random_label"});
    const auto& part = partition_named(p, "mem-high");
    UnlearnConfig c = default_unlearn_config(Algorithm::kFinetune);
    c.seed = 1;
    const auto other = unlearn(p.original, p.data, part, c).model;
    const double self = disagreement(p.original, p.original, p.data, p.test_ids());
    bool match = true;
    std::string detail;
    for (const IdSet* ids : {&part.forget_ids, &part.retain_ids, &p.test_ids()}) {
        const auto pa = predict(p.original, p.data, *ids);
        const auto pb = predict(other, p.data, *ids);
        std::size_t differ = 0;
        for (const auto& [id, y] : pa) differ += y != pb.at(id);
        const double expect = 100.0 * static_cast<double>(differ) / static_cast<double>(ids->size());
        const double got = disagreement(p.original, other, p.data, *ids);
        match = match && expect == got;
        detail += (detail.empty() ? "" : "/") + fmt(got, 2);
    }
    return {self == 0.0 && match, "identical " + fmt(self, 1) + "%, original vs finetuned " + detail + "% (recount " +
                                      (match ? "matches" : "DIFFERS") + ")"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rumkit acceptance checks"};
    std::filesystem::path scenario_dir = RUMKIT_ACCEPTANCE_SCENARIO_DIR;
    std::filesystem::path cache_dir;
    std::vector<int> only;
    app.add_option("--scenario-dir", scenario_dir, "Directory holding the toy scenarios");
    app.add_option("--cache-dir", cache_dir, "Reuse trained models and scores from here (default: fresh temp dir)");
    app.add_option("--only", only, "Run only these criteria")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    bool temp_cache = false;
    if (cache_dir.empty()) {
        cache_dir = std::filesystem::temp_directory_path() /
                    ("rumkit-acceptance-" + std::to_string(Clock::now().time_since_epoch().count()));
        temp_cache = true;
    }
    Scenarios sc(scenario_dir, cache_dir);

    struct Criterion {
        int id;
        double limit;  // seconds; 0 = none
        std::function<Outcome()> run;
    };
    // 6 runs before 7, 8, 11, 12 and 13 so its time includes estimator training
    const std::vector<Criterion> criteria{
        {1, 1, c1},
        {2, 0, c2},
        {3, 1, c3},
        {4, 30, [&] { return c4(sc); }},
        {5, 20 * 60, [&] { return c5(sc); }},
        {6, 45 * 60, [&] { return c6(sc); }},
        {7, 0, [&] { return c7(sc); }},
        {8, 0, [&] { return c8(sc); }},
        {9, 5, c9},
        {10, 30 * 60, [&] { return c10(sc); }},
        {11, 5 * 60, [&] { return c11(sc); }},
        {12, 0, [&] { return c12(sc); }},
        {13, 0, [&] { return c13(sc); }},
    };

    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto start = Clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        if (c.limit > 0) o = within(std::move(o), seconds_since(start), c.limit);
        else o.detail += " [" + fmt(seconds_since(start), 1) + " s]";
        failed += !o.pass;
        std::printf("criterion %2d: %s  %s\n", c.id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    if (temp_cache) {
        std::error_code ec;
        std::filesystem::remove_all(cache_dir, ec);
    }
    return failed == 0 ? 0 : 1;
}
