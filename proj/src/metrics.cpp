#include "rumkit/metrics.hpp"

#include <cmath>

#include "rumkit/random.hpp"

namespace rumkit {

void EvalTriple::validate() const {
    for (const double v : {forget, retain, test}) {
        if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("accuracies must lie in [0, 1]");
    }
}

EvalTriple evaluate_triple(const ModelCheckpoint& model, const ExampleSource& data, const ForgetPartition& partition,
                           const IdSet& test_ids) {
    return EvalTriple{evaluate(model, data, partition.forget_ids), evaluate(model, data, partition.retain_ids),
                      evaluate(model, data, test_ids)};
}

double tow(const EvalTriple& u, const EvalTriple& r) {
    u.validate();
    r.validate();
    return (1.0 - std::abs(u.forget - r.forget)) * (1.0 - std::abs(u.retain - r.retain)) *
           (1.0 - std::abs(u.test - r.test));
}

double tow_mia(double mia_u, double mia_r, const EvalTriple& u, const EvalTriple& r) {
    u.validate();
    r.validate();
    return (1.0 - mia_gap(mia_u, mia_r)) * (1.0 - std::abs(u.retain - r.retain)) * (1.0 - std::abs(u.test - r.test));
}

double mia_gap(double mia_u, double mia_r) {
    if (!(mia_u >= 0.0 && mia_u <= 1.0 && mia_r >= 0.0 && mia_r <= 1.0)) {
        throw InvalidArgument("MIA scores must lie in [0, 1]");
    }
    return std::abs(mia_u - mia_r);
}

double disagreement(const ModelCheckpoint& a, const ModelCheckpoint& b, const ExampleSource& data, const IdSet& ids) {
    const auto pa = predict(a, data, ids);
    const auto pb = predict(b, data, ids);
    std::size_t differ = 0;
    for (const auto id : ids)
        if (pa.at(id) != pb.at(id)) ++differ;
    return 100.0 * static_cast<double>(differ) / static_cast<double>(ids.size());
}

// ---------------------------------------------------------------------------
// Membership inference
// ---------------------------------------------------------------------------

namespace {
double sigmoid(double z) {
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}
}  // namespace

void LogisticAttacker::fit(const Eigen::MatrixXd& members, const Eigen::MatrixXd& non_members) {
    if (members.rows() == 0 || non_members.rows() == 0) throw InvalidArgument("attacker needs both classes");
    if (members.cols() != non_members.cols()) throw InvalidArgument("attacker feature widths differ");
    const Eigen::Index n = members.rows() + non_members.rows();
    const Eigen::Index d = members.cols();
    Eigen::MatrixXd x(n, d);
    x << members, non_members;
    Eigen::VectorXd y(n);
    y.head(members.rows()).setOnes();
    y.tail(non_members.rows()).setZero();

    mean_ = x.colwise().mean();
    scale_ = ((x.rowwise() - mean_).array().square().colwise().sum() / static_cast<double>(n)).sqrt();
    for (Eigen::Index j = 0; j < d; ++j)
        if (!(scale_[j] > 0.0)) scale_[j] = 1.0;

    Eigen::MatrixXd a(n, d + 1);
    a.col(0).setOnes();
    a.rightCols(d) = (x.rowwise() - mean_).array().rowwise() / scale_.array();
    weights_ = Eigen::VectorXd::Zero(d + 1);
    Eigen::VectorXd reg = Eigen::VectorXd::Constant(d + 1, l2_);
    reg[0] = 1e-10;
    for (int it = 0; it < max_iterations_; ++it) {
        const Eigen::VectorXd z = a * weights_;
        Eigen::VectorXd p(n), w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            p[i] = sigmoid(z[i]);
            w[i] = p[i] * (1.0 - p[i]);
        }
        const Eigen::VectorXd grad = a.transpose() * (p - y) / static_cast<double>(n) + reg.cwiseProduct(weights_);
        Eigen::MatrixXd hess = a.transpose() * w.asDiagonal() * a / static_cast<double>(n);
        hess.diagonal() += reg;
        const Eigen::VectorXd step = hess.ldlt().solve(grad);
        if (!step.allFinite()) break;
        weights_ -= step;
        if (step.norm() < 1e-10) break;
    }
}

Eigen::VectorXd LogisticAttacker::probabilities(const Eigen::MatrixXd& features) const {
    if (weights_.size() == 0) throw InvalidArgument("attacker used before fit()");
    const Eigen::MatrixXd xs = (features.rowwise() - mean_).array().rowwise() / scale_.array();
    Eigen::VectorXd out(features.rows());
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        out[i] = sigmoid(weights_[0] + xs.row(i).dot(weights_.tail(weights_.size() - 1)));
    }
    return out;
}

std::vector<bool> LogisticAttacker::predict_member(const Eigen::MatrixXd& features) const {
    const Eigen::VectorXd p = probabilities(features);
    std::vector<bool> out(static_cast<std::size_t>(p.size()));
    for (Eigen::Index i = 0; i < p.size(); ++i) out[static_cast<std::size_t>(i)] = p[i] >= 0.5;
    return out;
}

Eigen::MatrixXd attack_features(const ModelCheckpoint& model, const ExampleSource& data, const IdSet& ids) {
    if (ids.empty()) throw InvalidArgument("attack_features needs ids");
    const Eigen::MatrixXd logp = log_softmax(logits(model.network, data, ids.span()));
    const std::vector<int> y = data.labels(ids.span());
    Eigen::MatrixXd out(logp.rows(), 2);
    for (Eigen::Index r = 0; r < logp.rows(); ++r) {
        const double lp = logp(r, y[static_cast<std::size_t>(r)]);
        out(r, 0) = std::exp(lp);
        out(r, 1) = -lp;
    }
    return out;
}

namespace {
IdSet sample_ids(const IdSet& ids, std::size_t n, std::uint64_t seed) {
    std::vector<ExampleId> order = ids.ids();
    Rng rng(seed);
    rng.shuffle(std::span<ExampleId>(order));
    order.resize(n);
    return IdSet(std::move(order));
}
}  // namespace

MiaResult mia_score(const ModelCheckpoint& model, const ExampleSource& data, const ForgetPartition& partition,
                    const IdSet& test_ids, std::uint64_t attacker_seed, MembershipAttacker& attacker) {
    if (partition.forget_ids.empty()) throw InvalidArgument("MIA needs a nonempty forget set");
    if (partition.retain_ids.empty() || test_ids.empty()) {
        throw InvalidArgument("MIA needs nonempty retain and test sets");
    }
    const std::size_t n = std::min(partition.retain_ids.size(), test_ids.size());
    const IdSet members = sample_ids(partition.retain_ids, n, derive_seed(attacker_seed, 601));
    const IdSet non_members = sample_ids(test_ids, n, derive_seed(attacker_seed, 602));
    const Eigen::MatrixXd fm = attack_features(model, data, members);
    const Eigen::MatrixXd fn = attack_features(model, data, non_members);

    MiaResult result;
    result.attacker = attacker.name();
    Eigen::MatrixXd pooled(fm.rows() + fn.rows(), fm.cols());
    pooled << fm, fn;
    result.degenerate = ((pooled.rowwise() - pooled.row(0)).cwiseAbs().maxCoeff() == 0.0);

    attacker.fit(fm, fn);
    const auto pm = attacker.predict_member(fm);
    const auto pn = attacker.predict_member(fn);
    std::size_t right = 0;
    for (const bool b : pm) right += b ? 1 : 0;
    for (const bool b : pn) right += b ? 0 : 1;
    result.attacker_accuracy = static_cast<double>(right) / static_cast<double>(2 * n);

    const auto pf = attacker.predict_member(attack_features(model, data, partition.forget_ids));
    std::size_t true_negatives = 0;
    for (const bool b : pf) true_negatives += b ? 0 : 1;
    result.score = static_cast<double>(true_negatives) / static_cast<double>(partition.forget_ids.size());
    return result;
}

MiaResult mia_score(const ModelCheckpoint& model, const ExampleSource& data, const ForgetPartition& partition,
                    const IdSet& test_ids, std::uint64_t attacker_seed) {
    LogisticAttacker attacker;
    return mia_score(model, data, partition, test_ids, attacker_seed, attacker);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

bool MetricsReport::self_consistent(double tolerance) const {
    const double t = rumkit::tow(eval_unlearned, eval_retrain);
    const double tm = rumkit::tow_mia(mia, mia_retrain, eval_unlearned, eval_retrain);
    return std::abs(t - tow) <= tolerance && std::abs(tm - tow_mia) <= tolerance &&
           std::abs(rumkit::mia_gap(mia, mia_retrain) - mia_gap) <= tolerance;
}

MetricsReport make_report(const ModelCheckpoint& unlearned, const ModelCheckpoint& retrained,
                          const ExampleSource& data, const ForgetPartition& partition, const IdSet& test_ids,
                          std::uint64_t attacker_seed, double wall_seconds) {
    MetricsReport r;
    r.eval_unlearned = evaluate_triple(unlearned, data, partition, test_ids);
    r.eval_retrain = evaluate_triple(retrained, data, partition, test_ids);
    const MiaResult mu = mia_score(unlearned, data, partition, test_ids, attacker_seed);
    const MiaResult mr = mia_score(retrained, data, partition, test_ids, attacker_seed);
    r.mia = mu.score;
    r.mia_retrain = mr.score;
    r.mia_degenerate = mu.degenerate || mr.degenerate;
    r.mia_attacker = mu.attacker;
    r.tow = tow(r.eval_unlearned, r.eval_retrain);
    r.mia_gap = mia_gap(r.mia, r.mia_retrain);
    r.tow_mia = tow_mia(r.mia, r.mia_retrain, r.eval_unlearned, r.eval_retrain);
    r.disagreement_pct["forget"] = disagreement(unlearned, retrained, data, partition.forget_ids);
    r.disagreement_pct["retain"] = disagreement(unlearned, retrained, data, partition.retain_ids);
    r.disagreement_pct["test"] = disagreement(unlearned, retrained, data, test_ids);
    r.wall_seconds = wall_seconds;
    return r;
}

}  // namespace rumkit
