#pragma once

// nlohmann::json conversions for the library's value types. Unknown keys are
// rejected when reading configs so typos fail loudly.

#include <nlohmann/json.hpp>

#include "rumkit/backend.hpp"
#include "rumkit/metrics.hpp"
#include "rumkit/rum.hpp"
#include "rumkit/scores.hpp"
#include "rumkit/unlearners.hpp"

namespace rumkit {

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

void to_json(nlohmann::json& j, const UnlearnConfig& c);
void from_json(const nlohmann::json& j, UnlearnConfig& c);
/// Applies only the keys present in `j` on top of `base`.
UnlearnConfig apply_overrides(UnlearnConfig base, const nlohmann::json& j);

void to_json(nlohmann::json& j, const EvalTriple& t);
void from_json(const nlohmann::json& j, EvalTriple& t);

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

void to_json(nlohmann::json& j, const SequenceTrace& t);
void from_json(const nlohmann::json& j, SequenceTrace& t);

void to_json(nlohmann::json& j, const BlobsConfig& c);
void from_json(const nlohmann::json& j, BlobsConfig& c);

/// `path` is written as given; callers resolve relative paths.
void to_json(nlohmann::json& j, const CsvDatasetConfig& c);
void from_json(const nlohmann::json& j, CsvDatasetConfig& c);

void to_json(nlohmann::json& j, const MemorizationConfig& c);
void from_json(const nlohmann::json& j, MemorizationConfig& c);

void to_json(nlohmann::json& j, const ConfidenceTrace& t);
void from_json(const nlohmann::json& j, ConfidenceTrace& t);

}  // namespace rumkit
