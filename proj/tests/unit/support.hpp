#pragma once

#include <filesystem>
#include <mutex>
#include <unistd.h>
#include <set>
#include <string>

#include "rumkit/backend.hpp"
#include "rumkit/data.hpp"
#include "rumkit/random.hpp"

namespace rumkit::testing {

// Small noisy 3-class blobs; train ids 0..199, test 200..299.
inline BlobsConfig tiny_blobs(std::uint64_t seed = 11, double noise = 0.0) {
    BlobsConfig c;
    c.n_train = 200;
    c.n_test = 100;
    c.dim = 4;
    c.num_classes = 3;
    c.cluster_std = 1.0;
    c.center_scale = 4.0;
    c.label_noise = noise;
    c.seed = seed;
    return c;
}

inline TrainConfig tiny_train(int epochs = 10) {
    TrainConfig c;
    c.hidden_width = 16;
    c.epochs = epochs;
    c.batch_size = 32;
    c.learning_rate = 0.05;
    return c;
}

// Model trained once per process on tiny_blobs().
struct TinyFixture {
    LabeledDataset data = make_blobs(tiny_blobs());
    ModelCheckpoint model = train(data, data.split("train"), tiny_train()).model;

    static const TinyFixture& get() {
        static const TinyFixture f;
        return f;
    }
};

// Records every id that passes through gather() or labels().
class AccessLog final : public ExampleSource {
public:
    explicit AccessLog(const ExampleSource& base) : base_(base) {}
    int num_classes() const override { return base_.num_classes(); }
    FeatureShape shape() const override { return base_.shape(); }
    Eigen::MatrixXd gather(std::span<const ExampleId> ids) const override {
        note(ids);
        return base_.gather(ids);
    }
    std::vector<int> labels(std::span<const ExampleId> ids) const override {
        note(ids);
        return base_.labels(ids);
    }
    std::set<ExampleId> touched() const {
        std::lock_guard lock(mu_);
        return touched_;
    }

private:
    void note(std::span<const ExampleId> ids) const {
        std::lock_guard lock(mu_);
        touched_.insert(ids.begin(), ids.end());
    }
    const ExampleSource& base_;
    mutable std::mutex mu_;
    mutable std::set<ExampleId> touched_;
};

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("rumkit-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline Eigen::MatrixXd points(std::initializer_list<std::initializer_list<double>> rows) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index r = 0;
    for (const auto& row : rows) {
        Eigen::Index c = 0;
        for (const double v : row) m(r, c++) = v;
        ++r;
    }
    return m;
}

}  // namespace rumkit::testing
