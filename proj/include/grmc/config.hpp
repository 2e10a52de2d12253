#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "grmc/bench.hpp"

// JSON config files. Every field is optional and falls back to its default;
// unknown keys and ill-typed values raise ConfigError.
namespace grmc::config {

using nlohmann::json;

json read_json_file(const std::filesystem::path& path);

json to_json(const nas::SearchSpaceConfig& c);
json to_json(const nas::TrainSchedule& s);
json to_json(const nas::RetrainSchedule& s);
json to_json(const SynthTaskConfig& c);
json to_json(const FileDataConfig& c);
json to_json(const EstimatorBenchConfig& c);
json to_json(const SearchConfig& c);
json to_json(const AblationConfig& c);

nas::SearchSpaceConfig search_space_from_json(const json& j, nas::SearchSpaceConfig base = {});
nas::TrainSchedule schedule_from_json(const json& j, nas::TrainSchedule base = {});
nas::RetrainSchedule retrain_from_json(const json& j, nas::RetrainSchedule base = {});
SynthTaskConfig synth_from_json(const json& j, SynthTaskConfig base = {});
FileDataConfig files_from_json(const json& j);
EstimatorBenchConfig bench_from_json(const json& j, EstimatorBenchConfig base = {});
/// Keys: data, files, space, schedule, retrain, seed.
SearchConfig search_from_json(const json& j, SearchConfig base = {});
/// The search keys plus lambdas and ks.
AblationConfig ablation_from_json(const json& j, AblationConfig base = {});

}  // namespace grmc::config
