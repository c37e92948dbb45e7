#include "rumkit/rum.hpp"

#include <algorithm>
#include <numeric>

namespace rumkit {

std::string to_string(RefinementKey k) {
    switch (k) {
        case RefinementKey::kMemorization: return "memorization";
        case RefinementKey::kCProxy: return "c-proxy";
        case RefinementKey::kRandom: return "random";
    }
    return "random";
}

RefinementKey parse_refinement_key(std::string_view tag) {
    if (tag == "memorization") return RefinementKey::kMemorization;
    if (tag == "c-proxy") return RefinementKey::kCProxy;
    if (tag == "random") return RefinementKey::kRandom;
    throw InvalidArgument("unknown refinement key '" + std::string(tag) + "'");
}

std::string to_string(ExecutionOrder o) {
    switch (o) {
        case ExecutionOrder::kLowToHigh: return "low-to-high";
        case ExecutionOrder::kHighToLow: return "high-to-low";
        case ExecutionOrder::kExplicit: return "explicit";
    }
    return "low-to-high";
}

ExecutionOrder parse_execution_order(std::string_view tag) {
    if (tag == "low-to-high") return ExecutionOrder::kLowToHigh;
    if (tag == "high-to-low") return ExecutionOrder::kHighToLow;
    if (tag == "explicit") return ExecutionOrder::kExplicit;
    throw InvalidArgument("unknown execution order '" + std::string(tag) + "'");
}

std::vector<IdSet> refine(const ForgetPartition& partition, const ScoreProfile* scores, const RefinementSpec& spec) {
    const IdSet& forget = partition.forget_ids;
    if (spec.k < 1 || static_cast<std::size_t>(spec.k) > forget.size()) {
        throw InvalidArgument("refinement k must lie in [1, |forget set|]");
    }
    if (spec.k == 1) return {forget};
    if (spec.key == RefinementKey::kRandom) return random_subsets(partition, spec.k, spec.seed);

    if (!scores) throw InvalidArgument("score-based refinement needs a score profile");
    std::vector<std::pair<double, ExampleId>> ranked;
    ranked.reserve(forget.size());
    for (const auto id : forget) {
        const auto it = scores->values.find(id);
        if (it == scores->values.end()) {
            throw InvalidArgument("score profile does not cover forget id " + std::to_string(id));
        }
        ranked.emplace_back(it->second, id);
    }

    if (!spec.buckets.empty()) {
        if (spec.buckets.size() != static_cast<std::size_t>(spec.k)) {
            throw InvalidArgument("refinement needs one bucket spec per subset");
        }
        ScoreProfile restricted{scores->kind, {}, scores->metadata, {}};
        for (const auto& [v, id] : ranked) restricted.values[id] = v;
        std::vector<IdSet> out;
        IdSet covered;
        std::size_t total = 0;
        for (const auto& b : spec.buckets) {
            out.push_back(score_buckets(restricted, b));
            total += out.back().size();
            covered = covered | out.back();
        }
        if (total != forget.size() || !(covered == forget)) {
            throw InvalidArgument("bucket specs do not partition the forget set");
        }
        return out;
    }

    std::sort(ranked.begin(), ranked.end());
    const std::size_t n = ranked.size();
    const auto k = static_cast<std::size_t>(spec.k);
    std::vector<IdSet> out;
    std::size_t begin = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t len = n / k + (i < n % k ? 1 : 0);
        std::vector<ExampleId> ids;
        ids.reserve(len);
        for (std::size_t j = begin; j < begin + len; ++j) ids.push_back(ranked[j].second);
        out.emplace_back(std::move(ids));
        begin += len;
    }
    return out;
}

std::vector<int> MetaPolicy::execution_order(std::size_t k) const {
    if (k == 0) throw InvalidArgument("policy needs at least one subset");
    if (assignment.size() != k) {
        throw InvalidArgument("policy assigns " + std::to_string(assignment.size()) + " algorithms to " +
                              std::to_string(k) + " subsets");
    }
    const auto [low_high, high_low] = order_variants(k);
    switch (order) {
        case ExecutionOrder::kLowToHigh: return low_high;
        case ExecutionOrder::kHighToLow: return high_low;
        case ExecutionOrder::kExplicit: {
            std::vector<int> sorted = permutation;
            std::sort(sorted.begin(), sorted.end());
            if (sorted != low_high) throw InvalidArgument("explicit order is not a permutation of the subsets");
            return permutation;
        }
    }
    return low_high;
}

std::pair<std::vector<int>, std::vector<int>> order_variants(std::size_t k) {
    std::vector<int> up(k);
    std::iota(up.begin(), up.end(), 0);
    std::vector<int> down(up.rbegin(), up.rend());
    return {std::move(up), std::move(down)};
}

std::vector<ForgetPartition> rum_step_partitions(const ForgetPartition& partition, const std::vector<IdSet>& subsets,
                                                 const std::vector<int>& order) {
    std::size_t total = 0;
    IdSet covered;
    for (const auto& s : subsets) {
        total += s.size();
        covered = covered | s;
    }
    if (total != partition.forget_ids.size() || !(covered == partition.forget_ids)) {
        throw InvalidArgument("subsets do not partition the forget set");
    }
    std::vector<bool> used(subsets.size(), false);
    for (const int k : order) {
        if (k < 0 || static_cast<std::size_t>(k) >= subsets.size() || used[static_cast<std::size_t>(k)]) {
            throw InvalidArgument("execution order is not a permutation of the subsets");
        }
        used[static_cast<std::size_t>(k)] = true;
    }
    if (order.size() != subsets.size()) throw InvalidArgument("execution order is not a permutation of the subsets");
    std::vector<ForgetPartition> steps(order.size());
    IdSet pending = partition.retain_ids;  // R plus subsets not yet unlearned
    for (std::size_t i = order.size(); i-- > 0;) {
        const IdSet& current = subsets.at(static_cast<std::size_t>(order[i]));
        if (current.empty()) throw InvalidArgument("refinement produced an empty subset");
        steps[i] = ForgetPartition{current, pending, partition.provenance};
        pending = pending | current;
    }
    return steps;
}

RumResult run_rum(const ModelCheckpoint& model, const ExampleSource& data, const ForgetPartition& partition,
                  const std::vector<IdSet>& subsets, const MetaPolicy& policy, const IdSet& eval_test_ids,
                  const StepRunner& runner) {
    const std::vector<int> order = policy.execution_order(subsets.size());
    const std::vector<ForgetPartition> steps = rum_step_partitions(partition, subsets, order);
    const StepRunner run_step = runner ? runner
                                       : StepRunner([&](const ModelCheckpoint& m, const ForgetPartition& p,
                                                        const UnlearnConfig& c, int) { return unlearn(m, data, p, c); });

    RumResult result{model, {}, 0.0};
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const int bucket = order[i];
        const UnlearnConfig& config = policy.assignment[static_cast<std::size_t>(bucket)];
        UnlearnResult step;
        try {
            step = run_step(result.model, steps[i], config, static_cast<int>(i));
        } catch (const Error& e) {
            throw RumStepError("RUM step " + std::to_string(i) + " (" + to_string(config.algorithm) +
                                   ") failed: " + e.what(),
                               static_cast<int>(i), result.trace);
        }
        result.model = std::move(step.model);
        result.wall_seconds += step.wall_seconds;

        SequenceStep snap;
        snap.bucket = bucket;
        snap.subset = steps[i].forget_ids;
        snap.algorithm = step.algorithm;
        snap.config = step.config;
        snap.wall_seconds = step.wall_seconds;
        snap.overall = evaluate_triple(result.model, data, partition, eval_test_ids);
        for (const auto& s : subsets) snap.subset_accuracy.push_back(evaluate(result.model, data, s));
        result.trace.steps.push_back(std::move(snap));
    }
    return result;
}

}  // namespace rumkit
