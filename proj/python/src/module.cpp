#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rumkit/harness.hpp"
#include "rumkit/serialize.hpp"

namespace py = pybind11;
using namespace rumkit;

namespace {

EvalTriple triple(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }

IdSet ids_of(const std::vector<ExampleId>& v) { return IdSet(v); }

// Runs a scenario in-process and returns the run records as JSON text.
std::string run_scenario(const std::filesystem::path& path, std::optional<std::vector<std::uint64_t>> seeds,
                         std::optional<std::vector<std::string>> variants, const std::filesystem::path& cache_dir) {
    ExperimentConfig cfg = load_experiment_config(path);
    if (seeds) {
        cfg.seeds = *seeds;
        cfg.seed_overrides.clear();
    }
    if (variants) {
        std::vector<VariantSpec> keep;
        for (const auto& v : cfg.variants)
            if (std::find(variants->begin(), variants->end(), v.name) != variants->end()) keep.push_back(v);
        if (keep.size() != variants->size()) throw InvalidArgument("unknown variant requested");
        cfg.variants = std::move(keep);
    }
    nlohmann::json out = nlohmann::json::array();
    py::gil_scoped_release release;
    const PreparedExperiment prepared = prepare_experiment(cfg, cache_dir);
    for (const auto seed : cfg.all_seeds()) out.push_back(run_seed(prepared, seed));
    return out.dump();
}

std::string aggregate_records(const std::string& records_json, const std::vector<std::string>& metrics) {
    const auto records = nlohmann::json::parse(records_json).get<std::vector<RunRecord>>();
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : aggregate(records, metrics)) {
        out.push_back({{"scenario", r.scenario},
                       {"partition", r.partition},
                       {"variant", r.variant},
                       {"metric", r.metric},
                       {"n", r.stats.n},
                       {"mean", r.stats.mean},
                       {"half_width", r.stats.half_width ? nlohmann::json(*r.stats.half_width) : nlohmann::json()}});
    }
    return out.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "rumkit native core";

    py::register_exception<Error>(m, "RumkitError", PyExc_RuntimeError);
    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<DegenerateError>(m, "DegenerateError", PyExc_ArithmeticError);

    m.def("tow", [](const std::array<double, 3>& u, const std::array<double, 3>& r) { return tow(triple(u), triple(r)); },
          py::arg("unlearned"), py::arg("retrained"), "(forget, retain, test) accuracies");
    m.def("tow_mia",
          [](double mu, double mr, const std::array<double, 3>& u, const std::array<double, 3>& r) {
              return tow_mia(mu, mr, triple(u), triple(r));
          },
          py::arg("mia_unlearned"), py::arg("mia_retrained"), py::arg("unlearned"), py::arg("retrained"));
    m.def("mia_gap", &mia_gap, py::arg("mia_unlearned"), py::arg("mia_retrained"));

    m.def("entanglement_score",
          py::overload_cast<const Eigen::MatrixXd&, const Eigen::MatrixXd&>(&entanglement_score), py::arg("retain"),
          py::arg("forget"));
    m.def("mmd_rbf", &mmd_rbf, py::arg("a"), py::arg("b"), py::arg("sigma") = py::none());
    m.def("median_heuristic_bandwidth", &median_heuristic_bandwidth, py::arg("a"), py::arg("b"));
    m.def("spearman", [](const std::vector<double>& a, const std::vector<double>& b) { return spearman(a, b); },
          py::arg("a"), py::arg("b"));
    m.def("centroid_distance_ranking",
          [](const std::vector<ExampleId>& ids, const Eigen::MatrixXd& rows) {
              if (static_cast<Eigen::Index>(ids.size()) != rows.rows()) throw InvalidArgument("one id per row needed");
              return centroid_distance_ranking(EmbeddingMatrix{ids, rows});
          },
          py::arg("ids"), py::arg("rows"));
    m.def("even_offsets", &even_offsets, py::arg("ranking_size"), py::arg("size"), py::arg("count"));

    m.def("rum_step_partitions",
          [](const std::vector<ExampleId>& train, const std::vector<ExampleId>& forget,
             const std::vector<std::vector<ExampleId>> subsets, const std::vector<int>& order) {
              const auto p = make_partition(ids_of(train), ids_of(forget), Provenance::kCustom);
              std::vector<IdSet> s;
              for (const auto& v : subsets) s.push_back(ids_of(v));
              std::vector<std::pair<std::vector<ExampleId>, std::vector<ExampleId>>> out;
              for (const auto& step : rum_step_partitions(p, s, order))
                  out.emplace_back(step.forget_ids.ids(), step.retain_ids.ids());
              return out;
          },
          py::arg("train_ids"), py::arg("forget_ids"), py::arg("subsets"), py::arg("order"),
          "(forget, retain) id lists per step");

    m.def("t_critical_95", &t_critical_95, py::arg("dof"));
    m.def("mean_ci",
          [](std::vector<double> v) {
              const auto c = mean_ci(std::move(v));
              return py::make_tuple(c.mean, c.half_width ? py::cast(*c.half_width) : py::none(), c.n);
          },
          py::arg("values"), "(mean, half_width or None, n)");
    m.def("metric_names", &metric_names);

    m.def("list_scenarios", &list_scenarios, py::arg("scenario_dir"));
    m.def("effective_config",
          [](const std::filesystem::path& p) { return effective_config(load_experiment_config(p)).dump(); },
          py::arg("path"));
    m.def("run_scenario", &run_scenario, py::arg("path"), py::arg("seeds") = py::none(),
          py::arg("variants") = py::none(), py::arg("cache_dir") = std::filesystem::path{});
    m.def("aggregate", &aggregate_records, py::arg("records_json"), py::arg("metrics"));
}
