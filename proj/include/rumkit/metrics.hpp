#pragma once

#include <map>
#include <memory>
#include <string>

#include "rumkit/backend.hpp"
#include "rumkit/data.hpp"

namespace rumkit {

/// Accuracies on the forget, retain and test sets.
struct EvalTriple {
    double forget = 0.0;
    double retain = 0.0;
    double test = 0.0;

    void validate() const;
    friend bool operator==(const EvalTriple&, const EvalTriple&) = default;
};

EvalTriple evaluate_triple(const ModelCheckpoint& model, const ExampleSource& data,
                           const ForgetPartition& partition, const IdSet& test_ids);

/// (1 - |dF|) (1 - |dR|) (1 - |dT|) between unlearned and retrained accuracies.
double tow(const EvalTriple& unlearned, const EvalTriple& retrained);

/// ToW with the forget-accuracy gap replaced by the MIA gap.
double tow_mia(double mia_unlearned, double mia_retrained, const EvalTriple& unlearned,
               const EvalTriple& retrained);

double mia_gap(double mia_unlearned, double mia_retrained);

/// Percentage of `ids` on which the two models' predictions differ.
double disagreement(const ModelCheckpoint& a, const ModelCheckpoint& b, const ExampleSource& data,
                    const IdSet& ids);

// ---------------------------------------------------------------------------
// Membership inference
// ---------------------------------------------------------------------------

/// Binary classifier separating training ("member", positive) from held-out
/// feature rows.
class MembershipAttacker {
public:
    virtual ~MembershipAttacker() = default;
    virtual std::string name() const = 0;
    virtual void fit(const Eigen::MatrixXd& members, const Eigen::MatrixXd& non_members) = 0;
    /// true = predicted member.
    virtual std::vector<bool> predict_member(const Eigen::MatrixXd& features) const = 0;
};

/// Ignores its training data and answers `member` for every row.
class ConstantAttacker final : public MembershipAttacker {
public:
    explicit ConstantAttacker(bool member) : member_(member) {}
    std::string name() const override { return member_ ? "constant-member" : "constant-non-member"; }
    void fit(const Eigen::MatrixXd&, const Eigen::MatrixXd&) override {}
    std::vector<bool> predict_member(const Eigen::MatrixXd& features) const override {
        return std::vector<bool>(static_cast<std::size_t>(features.rows()), member_);
    }

private:
    bool member_;
};

/// L2-regularized logistic regression on standardized features, fit by
/// Newton iterations. Probability >= 0.5 counts as member.
class LogisticAttacker final : public MembershipAttacker {
public:
    explicit LogisticAttacker(double l2 = 1e-3, int max_iterations = 100) : l2_(l2), max_iterations_(max_iterations) {}
    std::string name() const override { return "logistic-confidence-loss"; }
    void fit(const Eigen::MatrixXd& members, const Eigen::MatrixXd& non_members) override;
    std::vector<bool> predict_member(const Eigen::MatrixXd& features) const override;
    Eigen::VectorXd probabilities(const Eigen::MatrixXd& features) const;

private:
    double l2_;
    int max_iterations_;
    Eigen::RowVectorXd mean_;
    Eigen::RowVectorXd scale_;
    Eigen::VectorXd weights_;  // bias first
};

/// Two features per id: true-label confidence and cross-entropy loss.
Eigen::MatrixXd attack_features(const ModelCheckpoint& model, const ExampleSource& data, const IdSet& ids);

struct MiaResult {
    double score = 0.0;              // TN_S / |S|
    double attacker_accuracy = 0.0;  // on its balanced training sample
    bool degenerate = false;         // all attacker training features identical
    std::string attacker;
};

/// Fits `attacker` on equal-sized seeded samples of retain (members) and test
/// (non-members), then returns the fraction of forget ids predicted non-member.
MiaResult mia_score(const ModelCheckpoint& model, const ExampleSource& data, const ForgetPartition& partition,
                    const IdSet& test_ids, std::uint64_t attacker_seed, MembershipAttacker& attacker);
/// Same with the default logistic attacker.
MiaResult mia_score(const ModelCheckpoint& model, const ExampleSource& data, const ForgetPartition& partition,
                    const IdSet& test_ids, std::uint64_t attacker_seed);

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct MetricsReport {
    EvalTriple eval_unlearned;
    EvalTriple eval_retrain;
    double tow = 0.0;
    double tow_mia = 0.0;
    double mia = 0.0;
    double mia_retrain = 0.0;
    double mia_gap = 0.0;
    bool mia_degenerate = false;
    std::string mia_attacker;
    std::map<std::string, double> disagreement_pct;  // "forget", "retain", "test"
    double wall_seconds = 0.0;

    /// Recomputes tow / tow_mia / mia_gap from the stored inputs.
    bool self_consistent(double tolerance = 1e-12) const;
};

/// Full comparison of an unlearned model against the retrain oracle.
MetricsReport make_report(const ModelCheckpoint& unlearned, const ModelCheckpoint& retrained,
                          const ExampleSource& data, const ForgetPartition& partition, const IdSet& test_ids,
                          std::uint64_t attacker_seed, double wall_seconds);

}  // namespace rumkit
