#include "rumkit/serialize.hpp"

#include <set>

namespace rumkit {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what) {
    if (!j.is_object()) throw FormatError(std::string(what) + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw FormatError("unknown key '" + key + "' in " + what);
    }
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{
        {"architecture", to_string(c.architecture)},
        {"hidden_width", c.hidden_width},
        {"epochs", c.epochs},
        {"learning_rate", c.learning_rate},
        {"lr_schedule", to_string(c.lr_schedule)},
        {"milestones", c.milestones},
        {"step_factor", c.step_factor},
        {"weight_decay", c.weight_decay},
        {"momentum", c.momentum},
        {"batch_size", c.batch_size},
        {"seed", c.seed},
        {"augmentation", {{"crop", c.augmentation.crop}, {"horizontal_flip", c.augmentation.horizontal_flip}}},
        {"record_confidence_trace", c.record_confidence_trace},
    };
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    reject_unknown(j,
                   {"architecture", "hidden_width", "epochs", "learning_rate", "lr_schedule", "milestones",
                    "step_factor", "weight_decay", "momentum", "batch_size", "seed", "augmentation",
                    "record_confidence_trace"},
                   "train config");
    if (j.contains("architecture")) c.architecture = parse_architecture(j.at("architecture").get<std::string>());
    if (j.contains("lr_schedule")) c.lr_schedule = parse_lr_schedule(j.at("lr_schedule").get<std::string>());
    read_opt(j, "hidden_width", c.hidden_width);
    read_opt(j, "epochs", c.epochs);
    read_opt(j, "learning_rate", c.learning_rate);
    read_opt(j, "milestones", c.milestones);
    read_opt(j, "step_factor", c.step_factor);
    read_opt(j, "weight_decay", c.weight_decay);
    read_opt(j, "momentum", c.momentum);
    read_opt(j, "batch_size", c.batch_size);
    read_opt(j, "seed", c.seed);
    read_opt(j, "record_confidence_trace", c.record_confidence_trace);
    if (j.contains("augmentation")) {
        const auto& a = j.at("augmentation");
        reject_unknown(a, {"crop", "horizontal_flip"}, "augmentation");
        read_opt(a, "crop", c.augmentation.crop);
        read_opt(a, "horizontal_flip", c.augmentation.horizontal_flip);
    }
    c.validate();
}

void to_json(nlohmann::json& j, const UnlearnConfig& c) {
    j = nlohmann::json{
        {"algorithm", to_string(c.algorithm)},
        {"epochs", c.epochs},
        {"learning_rate", c.learning_rate},
        {"lr_schedule", to_string(c.lr_schedule)},
        {"beta", c.beta},
        {"gamma", c.gamma},
        {"sparsity_ratio", c.sparsity_ratio},
        {"alpha_distill", c.alpha_distill},
        {"forget_epochs", c.forget_epochs},
        {"momentum", c.momentum},
        {"weight_decay", c.weight_decay},
        {"batch_size", c.batch_size},
        {"clip_norm", c.clip_norm},
        {"seed", c.seed},
    };
}

UnlearnConfig apply_overrides(UnlearnConfig c, const nlohmann::json& j) {
    reject_unknown(j,
                   {"algorithm", "epochs", "learning_rate", "lr_schedule", "beta", "gamma", "sparsity_ratio", "alpha_distill",
                    "forget_epochs", "momentum", "weight_decay", "batch_size", "clip_norm", "seed"},
                   "unlearn config");
    if (j.contains("algorithm")) c.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
    read_opt(j, "epochs", c.epochs);
    read_opt(j, "learning_rate", c.learning_rate);
    if (j.contains("lr_schedule")) c.lr_schedule = parse_lr_schedule(j.at("lr_schedule").get<std::string>());
    read_opt(j, "beta", c.beta);
    read_opt(j, "gamma", c.gamma);
    read_opt(j, "sparsity_ratio", c.sparsity_ratio);
    read_opt(j, "alpha_distill", c.alpha_distill);
    read_opt(j, "forget_epochs", c.forget_epochs);
    read_opt(j, "momentum", c.momentum);
    read_opt(j, "weight_decay", c.weight_decay);
    read_opt(j, "batch_size", c.batch_size);
    read_opt(j, "clip_norm", c.clip_norm);
    read_opt(j, "seed", c.seed);
    c.validate();
    return c;
}

void from_json(const nlohmann::json& j, UnlearnConfig& c) {
    UnlearnConfig base;
    if (j.contains("algorithm")) base = default_unlearn_config(parse_algorithm(j.at("algorithm").get<std::string>()));
    c = apply_overrides(base, j);
}

void to_json(nlohmann::json& j, const EvalTriple& t) {
    j = nlohmann::json{{"forget", t.forget}, {"retain", t.retain}, {"test", t.test}};
}

void from_json(const nlohmann::json& j, EvalTriple& t) {
    t.forget = j.at("forget").get<double>();
    t.retain = j.at("retain").get<double>();
    t.test = j.at("test").get<double>();
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
    j = nlohmann::json{
        {"eval_unlearned", r.eval_unlearned},
        {"eval_retrain", r.eval_retrain},
        {"tow", r.tow},
        {"tow_mia", r.tow_mia},
        {"mia", r.mia},
        {"mia_retrain", r.mia_retrain},
        {"mia_gap", r.mia_gap},
        {"mia_degenerate", r.mia_degenerate},
        {"mia_attacker", r.mia_attacker},
        {"disagreement_pct", r.disagreement_pct},
        {"wall_seconds", r.wall_seconds},
    };
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
    r.eval_unlearned = j.at("eval_unlearned").get<EvalTriple>();
    r.eval_retrain = j.at("eval_retrain").get<EvalTriple>();
    r.tow = j.at("tow").get<double>();
    r.tow_mia = j.at("tow_mia").get<double>();
    r.mia = j.at("mia").get<double>();
    r.mia_retrain = j.at("mia_retrain").get<double>();
    r.mia_gap = j.at("mia_gap").get<double>();
    read_opt(j, "mia_degenerate", r.mia_degenerate);
    read_opt(j, "mia_attacker", r.mia_attacker);
    read_opt(j, "disagreement_pct", r.disagreement_pct);
    read_opt(j, "wall_seconds", r.wall_seconds);
}

void to_json(nlohmann::json& j, const SequenceTrace& t) {
    j = nlohmann::json::array();
    for (const auto& s : t.steps) {
        j.push_back({
            {"bucket", s.bucket},
            {"subset", s.subset.ids()},
            {"algorithm", to_string(s.algorithm)},
            {"config", s.config},
            {"overall", s.overall},
            {"subset_accuracy", s.subset_accuracy},
            {"wall_seconds", s.wall_seconds},
        });
    }
}

void from_json(const nlohmann::json& j, SequenceTrace& t) {
    t.steps.clear();
    for (const auto& s : j) {
        SequenceStep step;
        step.bucket = s.at("bucket").get<int>();
        step.subset = IdSet(s.at("subset").get<std::vector<ExampleId>>());
        step.algorithm = parse_algorithm(s.at("algorithm").get<std::string>());
        if (s.contains("config")) step.config = s.at("config").get<UnlearnConfig>();
        step.overall = s.at("overall").get<EvalTriple>();
        step.subset_accuracy = s.at("subset_accuracy").get<std::vector<double>>();
        read_opt(s, "wall_seconds", step.wall_seconds);
        t.steps.push_back(std::move(step));
    }
}

void to_json(nlohmann::json& j, const BlobsConfig& c) {
    j = nlohmann::json{
        {"n_train", c.n_train},         {"n_test", c.n_test},
        {"dim", c.dim},                 {"num_classes", c.num_classes},
        {"cluster_std", c.cluster_std}, {"center_scale", c.center_scale},
        {"label_noise", c.label_noise}, {"seed", c.seed},
    };
}

void from_json(const nlohmann::json& j, BlobsConfig& c) {
    reject_unknown(j, {"n_train", "n_test", "dim", "num_classes", "cluster_std", "center_scale", "label_noise", "seed"},
                   "blobs config");
    read_opt(j, "n_train", c.n_train);
    read_opt(j, "n_test", c.n_test);
    read_opt(j, "dim", c.dim);
    read_opt(j, "num_classes", c.num_classes);
    read_opt(j, "cluster_std", c.cluster_std);
    read_opt(j, "center_scale", c.center_scale);
    read_opt(j, "label_noise", c.label_noise);
    read_opt(j, "seed", c.seed);
}

void to_json(nlohmann::json& j, const CsvDatasetConfig& c) {
    j = nlohmann::json{
        {"path", c.path.generic_string()},
        {"name", c.name},
        {"shape", {c.shape.channels, c.shape.height, c.shape.width}},
        {"scale", c.scale},
        {"max_examples", c.max_examples},
        {"test_fraction", c.test_fraction},
        {"label_noise", c.label_noise},
        {"seed", c.seed},
    };
}

void from_json(const nlohmann::json& j, CsvDatasetConfig& c) {
    reject_unknown(j, {"path", "name", "shape", "scale", "max_examples", "test_fraction", "label_noise", "seed"},
                   "csv dataset config");
    if (!j.contains("path")) throw FormatError("csv dataset config needs a path");
    c.path = j.at("path").get<std::string>();
    read_opt(j, "name", c.name);
    if (j.contains("shape")) {
        const auto dims = j.at("shape").get<std::vector<int>>();
        if (dims.size() != 3) throw FormatError("csv shape must be [channels, height, width]");
        c.shape = FeatureShape{dims[0], dims[1], dims[2]};
    }
    read_opt(j, "scale", c.scale);
    read_opt(j, "max_examples", c.max_examples);
    read_opt(j, "test_fraction", c.test_fraction);
    read_opt(j, "label_noise", c.label_noise);
    read_opt(j, "seed", c.seed);
}

void to_json(nlohmann::json& j, const MemorizationConfig& c) {
    j = nlohmann::json{{"m_models", c.m_models}, {"inclusion_prob", c.inclusion_prob}, {"seed", c.seed},
                       {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, MemorizationConfig& c) {
    reject_unknown(j, {"m_models", "inclusion_prob", "seed", "threads"}, "memorization config");
    read_opt(j, "m_models", c.m_models);
    read_opt(j, "inclusion_prob", c.inclusion_prob);
    read_opt(j, "seed", c.seed);
    read_opt(j, "threads", c.threads);
}

void to_json(nlohmann::json& j, const ConfidenceTrace& t) {
    nlohmann::json values = nlohmann::json::object();
    for (const auto& [id, v] : t.values) values[std::to_string(id)] = v;
    j = nlohmann::json{{"epochs", t.epochs}, {"values", std::move(values)}};
}

void from_json(const nlohmann::json& j, ConfidenceTrace& t) {
    t.epochs = j.at("epochs").get<int>();
    t.values.clear();
    for (const auto& [key, v] : j.at("values").items()) {
        t.values[std::stoll(key)] = v.get<std::vector<double>>();
    }
}

}  // namespace rumkit
