#pragma once

// Static SVG figures. Every writer also dumps a CSV next to the SVG (same
// stem) holding exactly the plotted values. Output is byte-deterministic.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rumkit/backend.hpp"
#include "rumkit/harness.hpp"
#include "rumkit/rum.hpp"

namespace rumkit {

struct BarSeries {
    std::string name;
    std::vector<double> mean;                      // one per group
    std::vector<std::optional<double>> half_width;  // error bar; absent = none
};

struct BarChart {
    std::string title;
    std::string y_label;
    std::vector<std::string> groups;
    std::vector<BarSeries> series;
};

/// Groups are partitions, series are variants, in the given orders. Missing
/// cells are NaN (drawn as gaps).
BarChart bar_chart_from_rows(const std::vector<AggregateRow>& rows, const std::string& metric,
                             const std::vector<std::string>& partitions, const std::vector<std::string>& variants);

void write_bar_chart(const BarChart& chart, const std::filesystem::path& svg_path);

/// Accuracy on S, R, test and every subset after each step (step 0 = input
/// model is not drawn; x runs 1..K).
void write_step_chart(const SequenceTrace& trace, const std::string& title, const std::filesystem::path& svg_path);

/// Top-2 principal projection; forget points yellow, retain blue, each set's
/// centroid marked with a cross.
void write_embedding_scatter(const EmbeddingMatrix& embeddings, const IdSet& forget_ids, const std::string& title,
                             const std::filesystem::path& svg_path);

/// report.csv / report.json for `metrics`, one grouped bar chart per
/// (scenario, metric) and a step chart per traced (partition, variant) of the
/// lowest seed. Partitions and variants keep their first-seen order.
std::vector<AggregateRow> write_report(const std::vector<RunRecord>& records, const std::vector<std::string>& metrics,
                                       const std::filesystem::path& dir);

/// sidecar path of a figure: same stem, .csv
std::filesystem::path sidecar_path(const std::filesystem::path& svg_path);

}  // namespace rumkit
