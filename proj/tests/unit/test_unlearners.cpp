#include <doctest.h>

#include "support.hpp"
#include "rumkit/unlearners.hpp"

using namespace rumkit;
using rumkit::testing::AccessLog;
using rumkit::testing::TinyFixture;

namespace {

ForgetPartition tiny_partition() {
    const auto& f = TinyFixture::get();
    return make_partition(f.data.split("train"), IdSet::range(0, 29), Provenance::kCustom);
}

UnlearnConfig small_config(Algorithm a) {
    UnlearnConfig c = default_unlearn_config(a);
    c.epochs = 2;
    c.batch_size = 32;
    c.seed = 4;
    return c;
}

}  // namespace

TEST_SUITE("unlearners") {

TEST_CASE("tags round-trip") {
    for (const auto a : all_algorithms()) CHECK(parse_algorithm(to_string(a)) == a);
    CHECK(parse_algorithm("nothing") == Algorithm::kNoop);
    CHECK_THROWS_AS(parse_algorithm("forget-harder"), InvalidArgument);
}

TEST_CASE("unlearners read only forget and retain examples") {
    const auto& f = TinyFixture::get();
    const auto p = tiny_partition();
    for (const auto a : all_algorithms()) {
        CAPTURE(to_string(a));
        AccessLog log(f.data);
        const auto r = unlearn(f.model, log, p, small_config(a));
        CHECK(r.algorithm == a);
        CHECK(r.model.trained_on == p.retain_ids);
        for (const auto id : log.touched()) CHECK(p.universe().contains(id));
        CHECK(r.model.network.params().allFinite());
    }
}

TEST_CASE("unlearning is deterministic per seed") {
    const auto& f = TinyFixture::get();
    const auto p = tiny_partition();
    for (const auto a : {Algorithm::kFinetune, Algorithm::kScrub, Algorithm::kSalUn}) {
        const auto x = unlearn(f.model, f.data, p, small_config(a));
        const auto y = unlearn(f.model, f.data, p, small_config(a));
        CHECK(x.model.network.params() == y.model.network.params());
    }
}

TEST_CASE("partition must match the model's training set") {
    const auto& f = TinyFixture::get();
    const auto wrong = make_partition(IdSet::range(0, 150), IdSet::range(0, 9), Provenance::kCustom);
    CHECK_THROWS_AS(unlearn(f.model, f.data, wrong, small_config(Algorithm::kFinetune)), InvalidArgument);
}

TEST_CASE("noop and zero learning rate leave the weights alone") {
    const auto& f = TinyFixture::get();
    const auto p = tiny_partition();
    CHECK(unlearn(f.model, f.data, p, small_config(Algorithm::kNoop)).model.network.params() ==
          f.model.network.params());
    UnlearnConfig c = small_config(Algorithm::kFinetune);
    c.learning_rate = 0.0;
    c.weight_decay = 0.0;
    CHECK(unlearn(f.model, f.data, p, c).model.network.params() == f.model.network.params());
}

TEST_CASE("invalid hyperparameters are rejected") {
    UnlearnConfig c = default_unlearn_config(Algorithm::kNegGradPlus);
    c.beta = 1.5;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = default_unlearn_config(Algorithm::kSalUn);
    c.sparsity_ratio = 0.0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = default_unlearn_config(Algorithm::kFinetune);
    c.epochs = -1;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("random relabel never keeps the true label") {
    const auto& f = TinyFixture::get();
    const IdSet forget = IdSet::range(0, 199);
    const auto relabel = random_relabel(f.data, forget, 6);
    CHECK(relabel.size() == 200);
    std::set<int> seen;
    for (const auto& [id, y] : relabel) {
        CHECK(y != f.data.label(id));
        CHECK(y >= 0);
        CHECK(y < 3);
        seen.insert(y);
    }
    CHECK(seen.size() == 3);
    CHECK(random_relabel(f.data, forget, 6) == relabel);
    const RelabeledSource view(f.data, relabel);
    const std::vector<ExampleId> ids{0, 1, 250};
    const auto labels = view.labels(ids);
    CHECK(labels[0] == relabel.at(0));
    CHECK(labels[2] == f.data.label(250));
}

TEST_CASE("salun mask keeps the requested fraction") {
    const auto& f = TinyFixture::get();
    const auto n = f.model.network.num_params();
    for (const double ratio : {0.1, 0.5, 1.0}) {
        const auto mask = salun_mask(f.model, f.data, IdSet::range(0, 29), ratio);
        CHECK(mask.size() == n);
        CHECK(mask.sum() == static_cast<double>(std::llround(ratio * static_cast<double>(n))));
        CHECK((mask.array() * (mask.array() - 1.0)).abs().maxCoeff() == 0.0);
    }
}

TEST_CASE("neggrad_plus with beta 1 has the finetune objective") {
    const auto& f = TinyFixture::get();
    const std::vector<ExampleId> retain{40, 41, 42, 43, 100}, forget{1, 2, 3};
    UnlearnConfig ng = default_unlearn_config(Algorithm::kNegGradPlus);
    ng.beta = 1.0;
    const UnlearnConfig ft = default_unlearn_config(Algorithm::kFinetune);
    CHECK(unlearning_objective(f.model.network, f.data, retain, forget, ng) ==
          unlearning_objective(f.model.network, f.data, retain, forget, ft));
    ng.beta = 0.5;
    CHECK(unlearning_objective(f.model.network, f.data, retain, forget, ng) !=
          unlearning_objective(f.model.network, f.data, retain, forget, ft));
}

TEST_CASE("l1_sparse with gamma 0 follows the finetune trajectory") {
    const auto& f = TinyFixture::get();
    const auto p = tiny_partition();
    UnlearnConfig ft = small_config(Algorithm::kFinetune);
    ft.epochs = 1;
    UnlearnConfig l1 = ft;
    l1.algorithm = Algorithm::kL1Sparse;
    l1.gamma = 0.0;
    const auto a = unlearn(f.model, f.data, p, ft).model.network.params();
    const auto b = unlearn(f.model, f.data, p, l1).model.network.params();
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(a != f.model.network.params());
}

TEST_CASE("salun with full sparsity is random_label") {
    const auto& f = TinyFixture::get();
    const auto p = tiny_partition();
    UnlearnConfig rl = small_config(Algorithm::kRandomLabel);
    UnlearnConfig sa = rl;
    sa.algorithm = Algorithm::kSalUn;
    sa.sparsity_ratio = 1.0;
    const auto a = unlearn(f.model, f.data, p, rl).model.network.params();
    const auto b = unlearn(f.model, f.data, p, sa).model.network.params();
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("gradient ascent lowers forget accuracy") {
    const auto& f = TinyFixture::get();
    const auto p = tiny_partition();
    UnlearnConfig c = small_config(Algorithm::kNegGrad);
    c.learning_rate = 0.2;
    c.epochs = 10;
    const auto r = unlearn(f.model, f.data, p, c);
    CHECK(evaluate(r.model, f.data, p.forget_ids) < evaluate(f.model, f.data, p.forget_ids));
}

TEST_CASE("retrain matches training from scratch on the retain set") {
    const auto& f = TinyFixture::get();
    const auto p = tiny_partition();
    UnlearnConfig c = default_unlearn_config(Algorithm::kRetrain);
    c.seed = 2;
    TrainConfig tc = f.model.train_config;
    tc.seed = 2;
    CHECK(unlearn(f.model, f.data, p, c).model.network.params() ==
          train(f.data, p.retain_ids, tc).model.network.params());
}

}  // TEST_SUITE
