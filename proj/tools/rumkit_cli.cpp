// rumkit command-line driver.
//
//   rumkit train-original --config cfg.json --out model.ckpt
//   rumkit scores --config cfg.json --kind memorization --out mem.json
//   rumkit partition --config cfg.json --mode mem-buckets --n 50 --out-dir parts/
//   rumkit unlearn --config cfg.json --partition parts/mem-high.json --algorithm finetune
//   rumkit rum --config cfg.json --partition parts/mixed.json --policy nothing,finetune,salun
//   rumkit report --runs runs/ --metric tow
//   rumkit replicate table1-toy
//
// Failures print {"error": {...}} on stderr and exit nonzero.

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rumkit/harness.hpp"
#include "rumkit/io.hpp"
#include "rumkit/plots.hpp"
#include "rumkit/serialize.hpp"

#ifndef RUMKIT_SCENARIO_DIR
#define RUMKIT_SCENARIO_DIR "scenarios"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rumkit;

namespace {

struct Common {
    std::string config;
    std::string scenario;
    std::string scenario_dir;
    std::string model;
    std::string trace;
    std::string scores;
    std::string cache_dir;
    std::string output_dir;
    std::vector<std::uint64_t> seeds;
    bool print_effective = false;
};

fs::path default_scenario_dir() {
    if (const char* env = std::getenv("RUMKIT_SCENARIO_DIR")) return env;
    return RUMKIT_SCENARIO_DIR;
}

void add_config_flags(CLI::App* cmd, Common& c) {
    auto* cfg = cmd->add_option("--config", c.config, "Experiment config (JSON)");
    auto* sc = cmd->add_option("--scenario", c.scenario, "Named scenario instead of --config");
    cfg->excludes(sc);
    cmd->add_option("--scenario-dir", c.scenario_dir, "Where named scenarios live");
}

void add_input_flags(CLI::App* cmd, Common& c) {
    cmd->add_option("--model", c.model, "Original-model checkpoint (default: train or reuse the cached one)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--trace", c.trace, "Confidence trace of --model (default: <model stem>.trace.json if present)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--scores", c.scores, "Memorization scores (ScoreProfile JSON or id,score CSV)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--cache-dir", c.cache_dir, "Cache for original models and scores (default: <output-dir>/cache)");
}

void add_run_flags(CLI::App* cmd, Common& c) {
    cmd->add_option("--output-dir", c.output_dir, "Run-record root (default: the config's output_dir)");
    cmd->add_option("--seed", c.seeds, "Seed(s) to run (repeatable; default: the config's seeds)");
    cmd->add_flag("--print-effective-config", c.print_effective,
                  "Print the resolved config and store it in every run record");
}

ExperimentConfig load_config(const Common& c) {
    if (!c.scenario.empty()) {
        const fs::path dir = c.scenario_dir.empty() ? default_scenario_dir() : fs::path(c.scenario_dir);
        return load_experiment_config(scenario_path(c.scenario, dir));
    }
    if (c.config.empty()) {
        ExperimentConfig cfg;  // all defaults: small blobs
        return cfg;
    }
    return load_experiment_config(c.config);
}

fs::path output_dir(const Common& c, const ExperimentConfig& cfg) {
    return c.output_dir.empty() ? cfg.output_dir : fs::path(c.output_dir);
}

fs::path cache_dir(const Common& c, const ExperimentConfig& cfg) {
    return c.cache_dir.empty() ? output_dir(c, cfg) / "cache" : fs::path(c.cache_dir);
}

fs::path trace_sidecar(const fs::path& model) {
    fs::path p = model;
    return p.replace_extension(".trace.json");
}

PreparedInputs load_inputs(const Common& c) {
    PreparedInputs in;
    if (!c.model.empty()) {
        in.original = load_checkpoint(c.model);
        const fs::path t = c.trace.empty() ? trace_sidecar(c.model) : fs::path(c.trace);
        if (fs::exists(t)) in.trace = json::parse(read_file(t)).get<ConfidenceTrace>();
    }
    if (!c.scores.empty()) {
        in.memorization = load_score_profile(c.scores, ScoreKind::kMemorization);
        if (in.memorization->kind != ScoreKind::kMemorization) {
            throw InvalidArgument("--scores must hold memorization scores, got " + to_string(in.memorization->kind));
        }
    }
    return in;
}

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

std::string pm(const MeanCi& s) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << s.mean;
    if (s.half_width) {
        os << " +/- " << *s.half_width;
    } else {
        os << " (n=1, no CI)";
    }
    return os.str();
}

void print_table(const std::vector<AggregateRow>& rows) {
    std::size_t wp = 9, wv = 7, wm = 6;
    for (const auto& r : rows) {
        wp = std::max(wp, r.partition.size());
        wv = std::max(wv, r.variant.size());
        wm = std::max(wm, r.metric.size());
    }
    std::cout << std::left << std::setw(static_cast<int>(wp + 2)) << "partition" << std::setw(static_cast<int>(wv + 2))
              << "variant" << std::setw(static_cast<int>(wm + 2)) << "metric" << std::setw(4) << "n"
              << "mean +/- 95% CI\n";
    for (const auto& r : rows) {
        std::cout << std::setw(static_cast<int>(wp + 2)) << r.partition << std::setw(static_cast<int>(wv + 2))
                  << r.variant << std::setw(static_cast<int>(wm + 2)) << r.metric << std::setw(4) << r.stats.n
                  << pm(r.stats) << "\n";
    }
    std::cout << std::right;
}

// Runs every seed of a prepared experiment and writes one record per seed.
std::vector<fs::path> run_all(const PreparedExperiment& pe, const Common& c, const fs::path& out) {
    const json eff = effective_config(pe.config);
    if (c.print_effective) print_json(eff);
    std::vector<std::uint64_t> seeds = c.seeds.empty() ? pe.config.all_seeds() : c.seeds;
    std::vector<fs::path> written;
    for (const auto seed : seeds) {
        RunRecord rec = run_seed(pe, seed);
        if (c.print_effective) rec.effective_config = eff;
        written.push_back(save_run_record(rec, out));
        std::cerr << "wrote " << written.back().string() << "\n";
    }
    return written;
}

json parse_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error&) {
        return text;
    }
}

json parse_sets(const std::vector<std::string>& sets) {
    json overrides = json::object();
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) throw InvalidArgument("--set expects key=value, got '" + kv + "'");
        overrides[kv.substr(0, eq)] = parse_value(kv.substr(eq + 1));
    }
    return overrides;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void use_partition_file(ExperimentConfig& cfg, const std::string& file) {
    cfg.partition.mode = PartitionMode::kFile;
    cfg.partition.files = {fs::absolute(file).lexically_normal()};
}

json defaults_of(const ExperimentConfig& cfg) {
    json defaults = json::object();
    for (const auto& [a, o] : cfg.unlearn_defaults) defaults[to_string(a)] = o;
    return defaults;
}

int emit_error(const std::string& type, const std::string& message, int code) {
    std::cerr << json{{"error", {{"type", type}, {"message", message}}}}.dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Machine-unlearning toolkit: difficulty scores, unlearners, refined sequences and experiments"};
    app.require_subcommand(1);
    Common c;

    // train-original
    auto* train_cmd = app.add_subcommand("train-original", "Train the original model on the train split");
    add_config_flags(train_cmd, c);
    std::string train_out;
    train_cmd->add_option("--out", train_out, "Checkpoint path (the trace goes to <stem>.trace.json)")->required();

    // scores
    auto* scores_cmd = app.add_subcommand("scores", "Memorization estimate, c-proxy or centroid-distance ranking");
    add_config_flags(scores_cmd, c);
    add_input_flags(scores_cmd, c);
    std::string score_kind = "memorization", scores_out;
    scores_cmd->add_option("--kind", score_kind, "memorization | c-proxy | centroid-distance")
        ->check(CLI::IsMember({"memorization", "c-proxy", "centroid-distance"}));
    scores_cmd->add_option("--out", scores_out, "ScoreProfile JSON path")->required();

    // partition
    auto* part_cmd = app.add_subcommand("partition", "Build forget/retain partition files");
    add_config_flags(part_cmd, c);
    add_input_flags(part_cmd, c);
    std::string part_mode;
    int part_n = 0, part_count = 0;
    std::string part_key, part_out;
    std::uint64_t part_seed = 0;
    part_cmd->add_option("--mode", part_mode, "es-buckets | mem-buckets | mixed | random")
        ->check(CLI::IsMember({"es-buckets", "mem-buckets", "mixed", "random"}));
    part_cmd->add_option("--n", part_n, "Bucket size");
    part_cmd->add_option("--count", part_count, "Number of ES windows");
    part_cmd->add_option("--key", part_key, "Score for mem buckets: memorization | c-proxy");
    part_cmd->add_option("--partition-seed", part_seed, "Seed of a random forget set");
    part_cmd->add_option("--out-dir", part_out, "Directory for <name>.json partition files")->required();

    // unlearn
    auto* unl_cmd = app.add_subcommand("unlearn", "One vanilla unlearner on a partition file");
    add_config_flags(unl_cmd, c);
    add_input_flags(unl_cmd, c);
    add_run_flags(unl_cmd, c);
    std::string unl_partition, unl_algorithm;
    std::vector<std::string> unl_sets;
    bool tune = false, no_tune = false;
    unl_cmd->add_option("--partition", unl_partition, "Partition file")->required()->check(CLI::ExistingFile);
    unl_cmd->add_option("--algorithm", unl_algorithm, "retrain | noop | finetune | neggrad | neggrad_plus | "
                                                      "l1_sparse | scrub | random_label | salun")
        ->required();
    unl_cmd->add_option("--set", unl_sets, "Config override key=value (repeatable)");
    unl_cmd->add_flag("--tune", tune, "Enable the per-step hyperparameter search");
    unl_cmd->add_flag("--no-tune", no_tune, "Disable the per-step hyperparameter search");

    // rum
    auto* rum_cmd = app.add_subcommand("rum", "Refined sequential unlearning (or its shuffle control)");
    add_config_flags(rum_cmd, c);
    add_input_flags(rum_cmd, c);
    add_run_flags(rum_cmd, c);
    std::string rum_partition, rum_policy, rum_order = "low-to-high", rum_refine = "memorization", rum_name;
    std::vector<int> rum_permutation;
    bool rum_shuffle = false;
    rum_cmd->add_option("--partition", rum_partition, "Partition file")->required()->check(CLI::ExistingFile);
    rum_cmd->add_option("--policy", rum_policy, "Comma list of algorithms, one per subset in ascending score order")
        ->required();
    rum_cmd->add_option("--order", rum_order, "low-to-high | high-to-low | explicit")
        ->check(CLI::IsMember({"low-to-high", "high-to-low", "explicit"}));
    rum_cmd->add_option("--permutation", rum_permutation, "Subset order for --order explicit")->delimiter(',');
    rum_cmd->add_option("--refine", rum_refine, "memorization | c-proxy | random")
        ->check(CLI::IsMember({"memorization", "c-proxy", "random"}));
    rum_cmd->add_flag("--shuffle", rum_shuffle, "Random equal-size subsets (control)");
    rum_cmd->add_option("--name", rum_name, "Variant name in the run record");
    rum_cmd->add_option("--set", unl_sets, "Override applied to every step, key=value (repeatable)");
    rum_cmd->add_flag("--tune", tune, "Enable the per-step hyperparameter search");
    rum_cmd->add_flag("--no-tune", no_tune, "Disable the per-step hyperparameter search");

    // report
    auto* rep_cmd = app.add_subcommand("report", "Aggregate run records (mean +/- 95% CI) and draw plots");
    std::string rep_runs, rep_out;
    std::vector<std::string> rep_metrics;
    rep_cmd->add_option("--runs", rep_runs, "Directory of run records (searched recursively)")
        ->required()
        ->check(CLI::ExistingDirectory);
    rep_cmd->add_option("--metric", rep_metrics, "Metric(s) to aggregate (default tow)");
    rep_cmd->add_option("--out", rep_out, "Report directory (default: <runs>/report)");

    // replicate
    auto* rep_all = app.add_subcommand("replicate", "Run a named scenario end to end");
    std::string rep_name;
    bool list = false;
    rep_all->add_option("scenario", rep_name, "Scenario name");
    rep_all->add_flag("--list", list, "List the shipped scenarios");
    rep_all->add_option("--scenario-dir", c.scenario_dir, "Where named scenarios live");
    rep_all->add_option("--cache-dir", c.cache_dir, "Cache for original models and scores");
    add_run_flags(rep_all, c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return emit_error("usage", e.what(), 2);
    }

    try {
        if (*train_cmd) {
            ExperimentConfig cfg = load_config(c);
            const LabeledDataset data = load_dataset(cfg.dataset);
            TrainConfig tc = cfg.train;
            tc.record_confidence_trace = true;
            TrainResult r = train(data, data.split("train"), tc);
            r.model.train_config.record_confidence_trace = false;
            save_checkpoint(r.model, train_out);
            write_file_atomic(trace_sidecar(train_out), json(*r.trace).dump());
            json summary{{"checkpoint", train_out},
                         {"trace", trace_sidecar(train_out).string()},
                         {"train_accuracy", evaluate(r.model, data, data.split("train"))},
                         {"test_accuracy", evaluate(r.model, data, data.split("test"))},
                         {"wall_seconds", r.model.wall_seconds}};
            if (data.has_split("val")) summary["val_accuracy"] = evaluate(r.model, data, data.split("val"));
            print_json(summary);
            return 0;
        }

        if (*scores_cmd) {
            ExperimentConfig cfg = load_config(c);
            cfg.variants.clear();
            cfg.cross_analysis = false;
            cfg.partition.mode = PartitionMode::kRandom;  // cheapest; partitions are ignored here
            cfg.partition.n = 1;
            if (score_kind == "memorization") {
                cfg.partition.mode = PartitionMode::kMemBuckets;
                cfg.partition.key = ScoreKind::kMemorization;
                cfg.partition.n = 1;
            }
            PreparedInputs in = load_inputs(c);
            if (score_kind == "c-proxy" && in.original && !in.trace) {
                throw InvalidArgument("c-proxy needs the confidence trace of --model (pass --trace)");
            }
            const PreparedExperiment pe = prepare_experiment(cfg, cache_dir(c, cfg), std::move(in));
            ScoreProfile profile;
            if (score_kind == "memorization") {
                profile = *pe.memorization;
            } else if (score_kind == "c-proxy") {
                profile = confidence_proxy(pe.trace);
            } else {
                const EmbeddingMatrix emb = embed(pe.original, pe.data, pe.train_ids());
                const Eigen::RowVectorXd mu = emb.rows.colwise().mean();
                profile.kind = ScoreKind::kCentroidDistance;
                for (std::size_t i = 0; i < emb.ids.size(); ++i) {
                    profile.values[emb.ids[i]] = (emb.rows.row(static_cast<Eigen::Index>(i)) - mu).squaredNorm();
                }
                profile.metadata = {{"note", "squared distance of the embedding to the train centroid"}};
            }
            save_score_profile(profile, scores_out);
            print_json({{"kind", to_string(profile.kind)}, {"count", profile.values.size()}, {"path", scores_out}});
            return 0;
        }

        if (*part_cmd) {
            ExperimentConfig cfg = load_config(c);
            cfg.variants.clear();
            cfg.cross_analysis = false;
            if (!part_mode.empty()) cfg.partition.mode = parse_partition_mode(part_mode);
            if (part_n > 0) cfg.partition.n = part_n;
            if (part_count > 0) {
                cfg.partition.count = part_count;
                cfg.partition.offsets.clear();
            }
            if (!part_key.empty()) cfg.partition.key = parse_score_kind(part_key);
            if (part_cmd->count("--partition-seed")) cfg.partition.seed = part_seed;
            if (cfg.partition.mode == PartitionMode::kFile) throw InvalidArgument("partition needs --mode");
            const PreparedExperiment pe = prepare_experiment(cfg, cache_dir(c, cfg), load_inputs(c));
            json out = json::array();
            for (std::size_t i = 0; i < pe.partitions.size(); ++i) {
                const fs::path p = fs::path(part_out) / (pe.partitions[i].name + ".json");
                save_partition(pe.partitions[i].partition, p);
                json info = pe.partition_info[i];
                info["path"] = p.string();
                out.push_back(std::move(info));
            }
            print_json(out);
            return 0;
        }

        if (*unl_cmd || *rum_cmd) {
            ExperimentConfig cfg = load_config(c);
            use_partition_file(cfg, *unl_cmd ? unl_partition : rum_partition);
            cfg.cross_analysis = false;
            if (tune && no_tune) throw InvalidArgument("--tune and --no-tune are exclusive");
            if (tune) cfg.tuning.enabled = true;
            if (no_tune) cfg.tuning.enabled = false;
            const json overrides = parse_sets(unl_sets);
            json variant;
            if (*unl_cmd) {
                const json entry{{"algorithm", unl_algorithm}, {"overrides", overrides}};
                cfg.variants =
                    parse_experiment_config(json{{"algorithms", json::array({entry})}, {"unlearn_defaults", defaults_of(cfg)}})
                        .variants;
                cfg.seed_overrides.clear();
            } else {
                const auto algs = split_list(rum_policy);
                if (algs.empty()) throw InvalidArgument("--policy is empty");
                json policy = json::array();
                for (std::size_t b = 0; b < algs.size(); ++b) {
                    policy.push_back({{"bucket", b}, {"algorithm", algs[b]}, {"overrides", overrides}});
                }
                if (rum_order == "explicit") {
                    if (rum_permutation.size() != algs.size()) {
                        throw InvalidArgument("--permutation must list every subset index once");
                    }
                    json reordered = json::array();
                    for (const int b : rum_permutation) {
                        if (b < 0 || static_cast<std::size_t>(b) >= algs.size()) {
                            throw InvalidArgument("--permutation index out of range");
                        }
                        reordered.push_back(policy[static_cast<std::size_t>(b)]);
                    }
                    policy = std::move(reordered);
                }
                json v{{"kind", rum_shuffle ? "shuffle" : "rum"}, {"refine", rum_refine}, {"order", rum_order},
                       {"policy", policy}};
                if (!rum_name.empty()) v["name"] = rum_name;
                cfg.variants =
                    parse_experiment_config(json{{"rum", json::array({v})}, {"unlearn_defaults", defaults_of(cfg)}})
                        .variants;
            }
            const PreparedExperiment pe = prepare_experiment(cfg, cache_dir(c, cfg), load_inputs(c));
            const auto written = run_all(pe, c, output_dir(c, cfg));
            json out = json::array();
            for (const auto& p : written) {
                const RunRecord rec = load_run_record(p);
                for (const auto& cell : rec.cells) {
                    out.push_back({{"record", p.string()},
                                   {"seed", rec.seed},
                                   {"variant", cell.variant},
                                   {"tow", cell.report.tow},
                                   {"tow_mia", cell.report.tow_mia},
                                   {"mia_gap", cell.report.mia_gap}});
                }
            }
            print_json(out);
            return 0;
        }

        if (*rep_cmd) {
            if (rep_metrics.empty()) rep_metrics = {"tow"};
            const auto records = load_run_records(rep_runs);
            if (records.empty()) throw InvalidArgument("no run records under " + rep_runs);
            const fs::path out = rep_out.empty() ? fs::path(rep_runs) / "report" : fs::path(rep_out);
            print_table(write_report(records, rep_metrics, out));
            std::cerr << "report written to " << out.string() << "\n";
            return 0;
        }

        if (*rep_all) {
            const fs::path dir = c.scenario_dir.empty() ? default_scenario_dir() : fs::path(c.scenario_dir);
            if (list) {
                for (const auto& name : list_scenarios(dir)) std::cout << name << "\n";
                return 0;
            }
            if (rep_name.empty()) throw InvalidArgument("replicate needs a scenario name (see --list)");
            const ExperimentConfig cfg = load_experiment_config(scenario_path(rep_name, dir));
            const PreparedExperiment pe = prepare_experiment(cfg, cache_dir(c, cfg));
            const fs::path out = output_dir(c, cfg);
            run_all(pe, c, out);

            // report over exactly this config's records
            std::vector<RunRecord> records;
            for (const auto seed : c.seeds.empty() ? cfg.all_seeds() : c.seeds) {
                records.push_back(load_run_record(run_record_path(out, pe.hash, seed)));
            }
            const fs::path report_dir = out / pe.hash / "report";
            const auto rows = write_report(records, {"tow", "tow_mia", "mia_gap", "mia", "mia_retrain"}, report_dir);
            const EmbeddingMatrix emb = embed(pe.original, pe.data, pe.train_ids());
            for (const auto& np : pe.partitions) {
                write_embedding_scatter(emb, np.partition.forget_ids, cfg.name + ": " + np.name,
                                        report_dir / (cfg.name + "-embedding-" + np.name + ".svg"));
            }
            write_file_atomic(report_dir / "partitions.json", pe.partition_info.dump(1) + "\n");
            if (cfg.cross_analysis) write_cross_analysis(cross_analysis(pe), report_dir);
            std::vector<AggregateRow> tow_rows;
            for (const auto& r : rows) {
                if (r.metric == "tow") tow_rows.push_back(r);
            }
            print_table(tow_rows);
            std::cerr << "report written to " << report_dir.string() << "\n";
            return 0;
        }
    } catch (const FormatError& e) {
        return emit_error("format", e.what(), 1);
    } catch (const InvalidArgument& e) {
        return emit_error("invalid_argument", e.what(), 1);
    } catch (const DivergenceError& e) {
        return emit_error("divergence", e.what(), 1);
    } catch (const DegenerateError& e) {
        return emit_error("degenerate", e.what(), 1);
    } catch (const Error& e) {
        return emit_error("error", e.what(), 1);
    } catch (const nlohmann::json::exception& e) {
        return emit_error("format", e.what(), 1);
    } catch (const std::exception& e) {
        return emit_error("internal", e.what(), 1);
    }
    return 0;
}
