#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ento/detect.hpp"
#include "ento/errors.hpp"
#include "ento/evalkit.hpp"
#include "ento/imaging.hpp"
#include "ento/nnet.hpp"
#include "ento/taxonomy.hpp"

namespace ento::pipeline {

// Stage failure. Outputs written before the failure stay on disk.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& msg);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct CropParams {
  int threshold = 48;   // luma cut separating insect from background
  int connectivity = 8;
  int min_area = 50;    // dust filter at 1440x1080, rescaled per frame
  double margin = 0.05;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string taxonomy_path;
  std::string netspec_path;
  std::string params_path;  // empty: train on synthetic data instead
  evalkit::DatasetSpec train_data;
  evalkit::SplitRatios split;
  nnet::TrainConfig train;
  imaging::TransitSpec transit;
  imaging::TriggerConfig trigger;
  CropParams crop;
  double decision_threshold = 0.7;
};

RunConfig run_config_from_json(const nlohmann::json& j);
// Effective-value echo; feeding it back reproduces the run.
nlohmann::json run_config_to_json(const RunConfig& cfg);
// Parses the file and checks that every referenced path exists.
RunConfig load_run_config(const std::string& path);

// Block readers shared by the config file and the CLI flag plumbing.
// Missing keys keep their defaults; derived seeds come from the master seed.
evalkit::DatasetSpec dataset_from_json(const nlohmann::json& j,
                                       std::uint64_t seed);
nlohmann::json dataset_to_json(const evalkit::DatasetSpec& d);
evalkit::SplitRatios split_from_json(const nlohmann::json& j);
nlohmann::json split_to_json(const evalkit::SplitRatios& r);
nnet::TrainConfig train_from_json(const nlohmann::json& j,
                                  std::uint64_t seed);
nlohmann::json train_to_json(const nnet::TrainConfig& t);
imaging::TransitSpec transit_from_json(const nlohmann::json& j);
nlohmann::json transit_to_json(const imaging::TransitSpec& t);
imaging::TriggerConfig trigger_from_json(const nlohmann::json& j);
nlohmann::json trigger_to_json(const imaging::TriggerConfig& t);
CropParams crop_from_json(const nlohmann::json& j);
nlohmann::json crop_to_json(const CropParams& c);

struct CaptureResult {
  std::size_t trigger_index = 0;
  std::size_t frame_index = 0;
  detect::BBox box;       // square crop region in the source frame
  std::string crop_path;  // relative to the run directory
  std::vector<double> probs;
  taxonomy::Decision decision;
};

struct RunRecord {
  std::string run_id;  // timestamp + seed, not stable across reruns
  std::string run_dir;
  nlohmann::json config;
  std::vector<std::string> artifacts;  // relative paths
  std::string metrics_path;
  std::vector<CaptureResult> captures;
};

// Full chain: obtain weights (load or train on synthetic crops), simulate a
// transit, trigger, crop, classify, decide, persist crops + predictions +
// metrics under run_dir. Everything the config references is loaded before
// the directory is created, so a bad config leaves no trace on disk.
RunRecord run_pipeline(const RunConfig& cfg, const std::string& run_dir);

nlohmann::json record_to_json(const RunRecord& record);
// Reads a persisted run.json and returns its embedded config snapshot.
RunConfig config_from_record(const std::string& run_json_path);

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string taxonomy_path;
  std::string netspec_path;
  evalkit::DatasetSpec data;
  evalkit::SplitRatios split;
  nnet::TrainConfig train;
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment_config(const std::string& path);

struct ExperimentReport {
  evalkit::RunMetrics full;
  evalkit::RunMetrics cropped;
  evalkit::DeltaReport delta;  // cropped minus full
  std::string full_confusion_path;     // relative to the output directory
  std::string cropped_confusion_path;
};

// Trains the same net twice from the same initial weights, once on whole
// frames shrunk to the input size and once on tight square crops, with one
// shared stratified split. Each run is scored on its matching test variant.
ExperimentReport experiment_full_vs_cropped(const ExperimentConfig& cfg,
                                            const std::string& out_dir);

nlohmann::json experiment_to_json(const ExperimentReport& report);

}  // namespace ento::pipeline
