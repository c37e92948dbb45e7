#include <doctest.h>

#include <cmath>

#include "rumkit/io.hpp"
#include "support.hpp"

using namespace rumkit;
using rumkit::testing::TempDir;
using rumkit::testing::TinyFixture;

namespace {

// d/dθ of sum(weights ⊙ logits) by central differences.
Eigen::VectorXd numeric_gradient(Network net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& weights) {
    Eigen::VectorXd g(net.num_params());
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < net.num_params(); ++i) {
        const double keep = net.params()[i];
        net.params()[i] = keep + h;
        const double up = (net.forward(x).array() * weights.array()).sum();
        net.params()[i] = keep - h;
        const double down = (net.forward(x).array() * weights.array()).sum();
        net.params()[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

void check_gradient(Architecture arch, FeatureShape shape) {
    Network net(arch, shape, 3, 6);
    net.initialize(9);
    Rng rng(4);
    Eigen::MatrixXd x(5, shape.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    Eigen::MatrixXd w(5, 3);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
    Network::Cache cache;
    net.forward(x, &cache);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.num_params());
    net.backward(cache, w, grad);
    const Eigen::VectorXd expect = numeric_gradient(net, x, w);
    CHECK((grad - expect).cwiseAbs().maxCoeff() < 1e-5 * std::max(1.0, expect.cwiseAbs().maxCoeff()));
}

}  // namespace

TEST_SUITE("backend") {

TEST_CASE("backward matches finite differences") {
    SUBCASE("mlp") { check_gradient(Architecture::kMlp, FeatureShape{1, 1, 7}); }
    SUBCASE("small-cnn") { check_gradient(Architecture::kSmallCnn, FeatureShape{1, 8, 8}); }
    SUBCASE("resnet-ish-tiny") { check_gradient(Architecture::kResnetTiny, FeatureShape{1, 1, 5}); }
}

TEST_CASE("training is deterministic and touches only its ids") {
    const auto data = make_blobs(rumkit::testing::tiny_blobs());
    const IdSet ids = IdSet::range(0, 99);
    rumkit::testing::AccessLog log(data);
    const auto a = train(log, ids, rumkit::testing::tiny_train(3)).model;
    const auto b = train(data, ids, rumkit::testing::tiny_train(3)).model;
    CHECK(a.network.params() == b.network.params());
    CHECK(a.trained_on == ids);
    for (const auto id : log.touched()) CHECK(ids.contains(id));
    CHECK(evaluate(a, data, data.split("test")) == evaluate(b, data, data.split("test")));
}

TEST_CASE("separable blobs are fit") {
    BlobsConfig c;
    c.n_train = 200;
    c.n_test = 50;
    c.dim = 2;
    c.num_classes = 2;
    c.cluster_std = 0.3;
    c.center_scale = 5.0;
    c.seed = 2;
    const auto data = make_blobs(c);
    TrainConfig tc;
    tc.epochs = 20;
    tc.batch_size = 32;
    const auto m = train(data, data.split("train"), tc).model;
    CHECK(evaluate(m, data, data.split("train")) >= 0.99);
}

TEST_CASE("evaluate, predict, confidences and embeddings agree") {
    const auto& f = TinyFixture::get();
    const IdSet& test = f.data.split("test");
    const auto pred = predict(f.model, f.data, test);
    int correct = 0;
    for (const auto& [id, p] : pred) correct += p == f.data.label(id);
    CHECK(evaluate(f.model, f.data, test) == correct / 100.0);
    CHECK(predict(f.model, f.data, test) == pred);

    const auto emb = embed(f.model, f.data, test);
    CHECK(emb.dim() == 16);
    CHECK(emb.rows.allFinite());
    const auto conf = confidences(f.model, f.data, test);
    const auto loss = example_losses(f.model, f.data, test);
    for (const auto id : test) CHECK(loss.at(id) == doctest::Approx(-std::log(conf.at(id))));
    CHECK_THROWS_AS(evaluate(f.model, f.data, IdSet{}), InvalidArgument);
}

TEST_CASE("duplicate ids embed to identical rows") {
    const auto& f = TinyFixture::get();
    const std::vector<ExampleId> ids{3, 3};
    const Eigen::MatrixXd rows = f.model.network.embed(f.data.gather(ids));
    CHECK(rows.row(0) == rows.row(1));
}

TEST_CASE("constant predictor accuracy is the class share") {
    // zero weights give equal logits; argmax ties go to class 0
    const auto& f = TinyFixture::get();
    ModelCheckpoint m = f.model;
    m.network.params().setZero();
    std::vector<ExampleId> ids;
    for (ExampleId id = 0; id < 10; ++id) ids.push_back(id);
    const auto labels = f.data.labels(ids);
    const double share = std::count(labels.begin(), labels.end(), 0) / 10.0;
    CHECK(evaluate(m, f.data, IdSet(ids)) == doctest::Approx(share));
    for (const auto& [id, c] : confidences(m, f.data, IdSet(ids))) CHECK(c == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("argmax ties break toward the lowest index") {
    Eigen::RowVectorXd r(4);
    r << 0.5, 2.0, 2.0, 1.0;
    CHECK(argmax_row(r) == 1);
}

TEST_CASE("confidence trace has one value per epoch") {
    const auto data = make_blobs(rumkit::testing::tiny_blobs());
    TrainConfig tc = rumkit::testing::tiny_train(4);
    tc.record_confidence_trace = true;
    const auto r = train(data, IdSet::range(0, 49), tc);
    REQUIRE(r.trace);
    CHECK(r.trace->epochs == 4);
    CHECK(r.trace->values.size() == 50);
    for (const auto& [id, v] : r.trace->values) CHECK(v.size() == 4);
}

TEST_CASE("learning-rate schedules") {
    TrainConfig c;
    c.learning_rate = 0.1;
    c.epochs = 4;
    c.lr_schedule = LrSchedule::kCosine;
    CHECK(c.lr_at(0) == doctest::Approx(0.1));
    CHECK(c.lr_at(2) == doctest::Approx(0.05));
    c.lr_schedule = LrSchedule::kStep;
    c.milestones = {1, 3};
    CHECK(c.lr_at(0) == doctest::Approx(0.1));
    CHECK(c.lr_at(1) == doctest::Approx(0.01));
    CHECK(c.lr_at(3) == doctest::Approx(0.001));
}

TEST_CASE("divergence is reported, not clipped") {
    const auto data = make_blobs(rumkit::testing::tiny_blobs());
    TrainConfig tc = rumkit::testing::tiny_train(3);
    tc.learning_rate = 1e12;
    tc.momentum = 0.0;
    CHECK_THROWS_AS(train(data, data.split("train"), tc), DivergenceError);
}

TEST_CASE("checkpoints round-trip losslessly") {
    TempDir dir;
    const auto& f = TinyFixture::get();
    save_checkpoint(f.model, dir / "m.ckpt");
    const auto back = load_checkpoint(dir / "m.ckpt");
    CHECK(back.network.params() == f.model.network.params());
    CHECK(back.train_config == f.model.train_config);
    CHECK(back.trained_on == f.model.trained_on);
    CHECK(back.network.architecture() == f.model.network.architecture());

    write_file_atomic(dir / "bad.ckpt", "garbage");
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), FormatError);
}

TEST_CASE("two retrain seeds disagree somewhere on noisy data") {
    const auto data = make_blobs(rumkit::testing::tiny_blobs(11, 0.2));
    TrainConfig tc = rumkit::testing::tiny_train(30);
    const auto a = train(data, data.split("train"), tc).model;
    tc.seed = 1;
    const auto b = train(data, data.split("train"), tc).model;
    const auto pa = predict(a, data, data.split("train"));
    const auto pb = predict(b, data, data.split("train"));
    int differ = 0;
    for (const auto& [id, p] : pa) differ += p != pb.at(id);
    CHECK(differ > 0);
}

}  // TEST_SUITE
