#pragma once

#include <filesystem>
#include <string>

#include "drift/simulation.hpp"

namespace drift {

// Parsed run configuration: factor-model settings, simulation settings and a
// sweep. Unknown keys are rejected.
struct RunConfig {
  SimConfig sim;
  Sweep sweep;
  std::string raw_json;  // normalized echo of the parsed document
};

RunConfig load_run_config(const std::filesystem::path& path);

ResponseDataset load_dataset_csv(const std::filesystem::path& data_path,
                                 const std::filesystem::path& schema_path);

// Covariate-only CSV: header id, x1..xp.
std::pair<std::vector<std::string>, Matrix> load_covariates_csv(
    const std::filesystem::path& path);

inline constexpr const char* kArtifactVersion = "drift-model-v1";

void save_model_artifact(const DriftModel& model,
                         const std::vector<ItemSchema>& schema,
                         std::uint64_t seed, const std::filesystem::path& path);

struct LoadedModel {
  DriftModel model;
  std::vector<ItemSchema> schema;
  std::uint64_t seed = 0;
};

LoadedModel load_model_artifact(const std::filesystem::path& path);

void write_study_csv(const StudyReport& report, const std::filesystem::path& path);

void write_summary_csv(const StudyReport& report, const std::filesystem::path& path);

}  // namespace drift
