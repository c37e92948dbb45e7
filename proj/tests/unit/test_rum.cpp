#include <doctest.h>

#include <numeric>

#include "support.hpp"
#include "rumkit/rum.hpp"

using namespace rumkit;
using rumkit::testing::TinyFixture;

namespace {

ScoreProfile scores_over(const IdSet& ids, std::uint64_t seed) {
    ScoreProfile p;
    p.kind = ScoreKind::kMemorization;
    Rng rng(seed);
    for (const auto id : ids) p.values[id] = rng.uniform();
    return p;
}

MetaPolicy uniform_policy(std::size_t k, const UnlearnConfig& c) {
    MetaPolicy m;
    m.assignment.assign(k, c);
    return m;
}

}  // namespace

TEST_SUITE("rum") {

TEST_CASE("refine by score gives ascending contiguous ranges") {
    const auto p = make_partition(IdSet::range(0, 20), IdSet::range(0, 5), Provenance::kMixed);
    ScoreProfile s;
    s.kind = ScoreKind::kMemorization;
    s.values = {{0, 0.9}, {1, 0.1}, {2, 0.5}, {3, 0.3}, {4, 0.7}, {5, 0.2}, {6, 0.0}};
    RefinementSpec spec;
    spec.k = 3;
    const auto subsets = refine(p, &s, spec);
    REQUIRE(subsets.size() == 3);
    CHECK(subsets[0] == IdSet{1, 5});
    CHECK(subsets[1] == IdSet{2, 3});
    CHECK(subsets[2] == IdSet{0, 4});
    CHECK_THROWS(refine(p, nullptr, spec));
}

TEST_CASE("refine with random key is the seeded random split") {
    const auto p = make_partition(IdSet::range(0, 40), IdSet::range(0, 11), Provenance::kMixed);
    RefinementSpec spec;
    spec.key = RefinementKey::kRandom;
    spec.k = 3;
    spec.seed = 17;
    CHECK(refine(p, nullptr, spec) == random_subsets(p, 3, 17));
}

TEST_CASE("refine with explicit bucket specs") {
    const auto p = make_partition(IdSet::range(0, 20), IdSet::range(0, 5), Provenance::kMixed);
    const auto s = scores_over(IdSet::range(0, 20), 3);
    RefinementSpec spec;
    spec.k = 2;
    spec.buckets = {{ScoreKind::kMemorization, BucketMode::kLowest, 3},
                    {ScoreKind::kMemorization, BucketMode::kHighest, 3}};
    const auto subsets = refine(p, &s, spec);
    CHECK((subsets[0] | subsets[1]) == p.forget_ids);
    spec.buckets[1].n = 2;
    CHECK_THROWS(refine(p, &s, spec));
}

TEST_CASE("execution orders") {
    const auto [low, high] = order_variants(3);
    CHECK(low == std::vector<int>{0, 1, 2});
    CHECK(high == std::vector<int>{2, 1, 0});
    MetaPolicy m = uniform_policy(3, UnlearnConfig{});
    CHECK(m.execution_order(3) == low);
    m.order = ExecutionOrder::kHighToLow;
    CHECK(m.execution_order(3) == high);
    m.order = ExecutionOrder::kExplicit;
    m.permutation = {1, 2, 0};
    CHECK(m.execution_order(3) == std::vector<int>{1, 2, 0});
    m.permutation = {1, 1, 0};
    CHECK_THROWS_AS(m.execution_order(3), InvalidArgument);
    m.order = ExecutionOrder::kLowToHigh;
    CHECK_THROWS_AS(m.execution_order(4), InvalidArgument);
}

TEST_CASE("step partitions keep the retain bookkeeping over random cases") {
    Rng rng(9);
    for (int trial = 0; trial < 500; ++trial) {
        const auto n_forget = static_cast<ExampleId>(1 + rng.below(40));
        const auto n_retain = static_cast<ExampleId>(1 + rng.below(40));
        const auto p = make_partition(IdSet::range(0, n_forget + n_retain - 1), IdSet::range(0, n_forget - 1),
                                      Provenance::kRandom);
        const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_forget)));
        const auto subsets = random_subsets(p, k, rng.next());
        std::vector<int> order(static_cast<std::size_t>(k));
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(std::span<int>(order));
        const auto steps = rum_step_partitions(p, subsets, order);
        REQUIRE(steps.size() == static_cast<std::size_t>(k));
        IdSet forgotten;
        for (int i = 0; i < k; ++i) {
            const auto& s = steps[static_cast<std::size_t>(i)];
            CHECK(s.forget_ids == subsets[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
            CHECK_FALSE(s.forget_ids.intersects(s.retain_ids));
            CHECK(p.retain_ids.is_subset_of(s.retain_ids));
            // R_i = R_{i+1} | S'_{i+1}, and the chain starts at R | S
            if (i == 0) CHECK(s.universe() == p.universe());
            if (i + 1 < k) CHECK(s.retain_ids == steps[static_cast<std::size_t>(i) + 1].universe());
            forgotten = forgotten | s.forget_ids;
        }
        CHECK(steps.back().retain_ids == p.retain_ids);
        CHECK(forgotten == p.forget_ids);
    }
}

TEST_CASE("step partitions reject overlapping or incomplete subsets") {
    const auto p = make_partition(IdSet::range(0, 9), IdSet::range(0, 3), Provenance::kMixed);
    CHECK_THROWS(rum_step_partitions(p, {IdSet{0, 1}, IdSet{1, 2, 3}}, {0, 1}));
    CHECK_THROWS(rum_step_partitions(p, {IdSet{0, 1}, IdSet{2}}, {0, 1}));
    CHECK_THROWS(rum_step_partitions(p, {IdSet{0, 1}, IdSet{2, 3}}, {0, 0}));
}

TEST_CASE("one subset is plain unlearning") {
    const auto& f = TinyFixture::get();
    const auto p = make_partition(f.data.split("train"), IdSet::range(0, 24), Provenance::kMixed);
    UnlearnConfig c = default_unlearn_config(Algorithm::kFinetune);
    c.epochs = 2;
    c.seed = 3;
    const auto rum = run_rum(f.model, f.data, p, {p.forget_ids}, uniform_policy(1, c), f.data.split("test"));
    const auto plain = unlearn(f.model, f.data, p, c);
    CHECK(rum.model.network.params() == plain.model.network.params());
    CHECK(rum.model.trained_on == plain.model.trained_on);
    REQUIRE(rum.trace.steps.size() == 1);
    CHECK(rum.trace.steps[0].overall == evaluate_triple(plain.model, f.data, p, f.data.split("test")));
}

TEST_CASE("noop steps compose to the identity") {
    const auto& f = TinyFixture::get();
    const auto p = make_partition(f.data.split("train"), IdSet::range(0, 29), Provenance::kMixed);
    const auto subsets = random_subsets(p, 3, 1);
    const auto r = run_rum(f.model, f.data, p, subsets, uniform_policy(3, default_unlearn_config(Algorithm::kNoop)),
                           f.data.split("test"));
    CHECK(r.model.network.params() == f.model.network.params());
    CHECK(r.model.trained_on == p.retain_ids);
    REQUIRE(r.trace.steps.size() == 3);
    for (const auto& s : r.trace.steps) {
        CHECK(s.subset_accuracy.size() == 3);
        CHECK(s.algorithm == Algorithm::kNoop);
    }
}

TEST_CASE("the step runner sees each step's partition in order") {
    const auto& f = TinyFixture::get();
    const auto p = make_partition(f.data.split("train"), IdSet::range(0, 29), Provenance::kMixed);
    const auto subsets = random_subsets(p, 3, 2);
    MetaPolicy m = uniform_policy(3, default_unlearn_config(Algorithm::kNoop));
    m.order = ExecutionOrder::kHighToLow;
    std::vector<IdSet> seen;
    const StepRunner runner = [&](const ModelCheckpoint& model, const ForgetPartition& step, const UnlearnConfig& c,
                                  int) {
        seen.push_back(step.forget_ids);
        return unlearn(model, f.data, step, c);
    };
    run_rum(f.model, f.data, p, subsets, m, f.data.split("test"), runner);
    CHECK(seen == std::vector<IdSet>{subsets[2], subsets[1], subsets[0]});
}

TEST_CASE("a failing step reports the partial trace") {
    const auto& f = TinyFixture::get();
    const auto p = make_partition(f.data.split("train"), IdSet::range(0, 29), Provenance::kMixed);
    const auto subsets = random_subsets(p, 3, 2);
    const StepRunner runner = [&](const ModelCheckpoint& model, const ForgetPartition& step, const UnlearnConfig& c,
                                  int i) {
        if (i == 1) throw DivergenceError("boom", 0, 0);
        return unlearn(model, f.data, step, c);
    };
    try {
        run_rum(f.model, f.data, p, subsets, uniform_policy(3, default_unlearn_config(Algorithm::kNoop)),
                f.data.split("test"), runner);
        FAIL("expected RumStepError");
    } catch (const RumStepError& e) {
        CHECK(e.failed_step() == 1);
        CHECK(e.partial_trace().steps.size() == 1);
    }
}

}  // TEST_SUITE
