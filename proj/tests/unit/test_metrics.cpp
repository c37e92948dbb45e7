#include <doctest.h>

#include "support.hpp"
#include "rumkit/metrics.hpp"

using namespace rumkit;
using rumkit::testing::TinyFixture;

namespace {

ForgetPartition tiny_partition() {
    const auto& f = TinyFixture::get();
    return make_partition(f.data.split("train"), IdSet::range(0, 19), Provenance::kCustom);
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("tug-of-war hand values") {
    const EvalTriple retrain{1.0, 1.0, 1.0};
    CHECK(tow(EvalTriple{0.9, 0.95, 0.98}, retrain) == doctest::Approx(0.8379).epsilon(1e-12));
    CHECK(tow(EvalTriple{1.0, 1.0, 1.0}, EvalTriple{0.0, 0.0, 0.0}) == 0.0);
    CHECK(tow(EvalTriple{0.5, 0.5, 0.5}, EvalTriple{0.5, 0.5, 0.5}) == 1.0);
    // overforgetting is penalised like underforgetting
    CHECK(tow(EvalTriple{0.5, 0.9, 0.8}, EvalTriple{0.75, 0.9, 0.8}) ==
          tow(EvalTriple{1.0, 0.9, 0.8}, EvalTriple{0.75, 0.9, 0.8}));
}

TEST_CASE("mia gap and tow-mia hand values") {
    CHECK(mia_gap(0.923, 0.549) == doctest::Approx(0.374).epsilon(1e-12));
    CHECK(mia_gap(0.549, 0.923) == doctest::Approx(0.374).epsilon(1e-12));
    // (1 - 0.374) (1 - 0.02) (1 - 0.01)
    CHECK(tow_mia(0.923, 0.549, EvalTriple{0.1, 0.96, 0.9}, EvalTriple{0.7, 0.98, 0.91}) ==
          doctest::Approx(0.6073452).epsilon(1e-12));
}

TEST_CASE("tow identity and symmetry over random triples") {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const EvalTriple u{rng.uniform(), rng.uniform(), rng.uniform()};
        const EvalTriple r{rng.uniform(), rng.uniform(), rng.uniform()};
        CHECK(tow(u, u) == 1.0);
        CHECK(tow(u, r) == tow(r, u));
        CHECK(tow(u, r) >= 0.0);
        CHECK(tow(u, r) <= 1.0);
        const double mu = rng.uniform(), mr = rng.uniform();
        CHECK(tow_mia(mu, mu, u, u) == 1.0);
        CHECK(tow_mia(mu, mr, u, r) == tow_mia(mr, mu, r, u));
    }
}

TEST_CASE("accuracies outside [0, 1] are rejected") {
    CHECK_THROWS_AS(tow(EvalTriple{1.2, 0.5, 0.5}, EvalTriple{}), InvalidArgument);
    CHECK_THROWS_AS(mia_gap(-0.1, 0.5), InvalidArgument);
}

TEST_CASE("constant attackers give the extreme mia scores") {
    const auto& f = TinyFixture::get();
    const auto p = tiny_partition();
    ConstantAttacker negative(false), positive(true);
    CHECK(mia_score(f.model, f.data, p, f.data.split("test"), 0, negative).score == 1.0);
    CHECK(mia_score(f.model, f.data, p, f.data.split("test"), 0, positive).score == 0.0);
}

TEST_CASE("logistic attacker separates shifted features") {
    Rng rng(2);
    Eigen::MatrixXd in(100, 2), out(100, 2);
    for (Eigen::Index i = 0; i < 100; ++i) {
        in.row(i) << 3 + rng.normal(), rng.normal();
        out.row(i) << -3 + rng.normal(), rng.normal();
    }
    LogisticAttacker a;
    a.fit(in, out);
    const auto pin = a.predict_member(in);
    const auto pout = a.predict_member(out);
    CHECK(std::count(pin.begin(), pin.end(), true) >= 98);
    CHECK(std::count(pout.begin(), pout.end(), true) <= 2);
}

TEST_CASE("mia score is seeded and reports degeneracy") {
    const auto& f = TinyFixture::get();
    const auto p = tiny_partition();
    const auto a = mia_score(f.model, f.data, p, f.data.split("test"), 5);
    const auto b = mia_score(f.model, f.data, p, f.data.split("test"), 5);
    CHECK(a.score == b.score);
    CHECK(a.attacker == "logistic-confidence-loss");
    CHECK(a.score >= 0.0);
    CHECK(a.score <= 1.0);
    CHECK_FALSE(a.degenerate);

    ModelCheckpoint flat = f.model;
    flat.network.params().setZero();
    CHECK(mia_score(flat, f.data, p, f.data.split("test"), 5).degenerate);
}

TEST_CASE("disagreement matches a recount from predict") {
    const auto& f = TinyFixture::get();
    const IdSet& test = f.data.split("test");
    CHECK(disagreement(f.model, f.model, f.data, test) == 0.0);

    ModelCheckpoint flat = f.model;
    flat.network.params().setZero();
    const auto pa = predict(f.model, f.data, test);
    const auto pb = predict(flat, f.data, test);
    std::size_t differ = 0;
    for (const auto& [id, y] : pa) differ += y != pb.at(id);
    CHECK(disagreement(f.model, flat, f.data, test) == 100.0 * static_cast<double>(differ) / 100.0);
    CHECK(disagreement(flat, f.model, f.data, test) == disagreement(f.model, flat, f.data, test));
}

TEST_CASE("reports are self-consistent") {
    const auto& f = TinyFixture::get();
    const auto p = tiny_partition();
    const auto r = make_report(f.model, f.model, f.data, p, f.data.split("test"), 3, 0.5);
    CHECK(r.tow == 1.0);
    CHECK(r.tow_mia == 1.0);
    CHECK(r.mia_gap == 0.0);
    CHECK(r.self_consistent());
    CHECK(r.disagreement_pct.at("forget") == 0.0);
    CHECK(r.disagreement_pct.size() == 3);
    CHECK(r.eval_unlearned == evaluate_triple(f.model, f.data, p, f.data.split("test")));
    auto broken = r;
    broken.tow = 0.5;
    CHECK_FALSE(broken.self_consistent());
}

}  // TEST_SUITE
