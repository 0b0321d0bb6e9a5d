#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fairleak/audit.hpp"

namespace fairleak {

enum class DatasetSource { synthetic, csv };

struct ExperimentConfig {
  DatasetSource source = DatasetSource::synthetic;
  SyntheticConfig synthetic = default_synthetic_config();
  std::string csv_path;
  CsvSchema csv_schema;

  int pool_size = 30;
  double train_fraction = 0.5;
  BaseLearner base = BaseLearner::network;
  TrainOptions train;
  EGConfig eg;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::size_t top_k = 20;

  void validate() const;
};

/// Parses `key = value` lines (# comments, blank lines allowed) into a
/// map; duplicate keys are errors.
std::map<std::string, std::string> parse_key_value_file(
    const std::string& path);

ExperimentConfig parse_experiment_config(
    const std::map<std::string, std::string>& kv);
ExperimentConfig load_experiment_config(const std::string& path);

struct SweepSpec {
  std::string parameter;  // delta | p_group0 | p_neg_g0 | mean_g0_y0 | max_depth
  std::vector<std::string> values;
  int repetitions = 1;

  void validate() const;
};

SweepSpec load_sweep_spec(const std::string& path);

/// Applies one sweep value to a config copy.
ExperimentConfig apply_sweep_value(const ExperimentConfig& base,
                                   const std::string& parameter,
                                   const std::string& value);

struct ExperimentResult {
  PrivacyReport report;
  Dataset dataset;
};

/// Trains both pools on shared masks, runs both attack variants and
/// assembles the full report. Pure in-memory variant of `run_experiment`.
ExperimentResult run_experiment_in_memory(const ExperimentConfig& cfg);

/// run_experiment plus file outputs: report.json, table_accuracy.csv,
/// table_attack.csv, points_fair.csv, points_unc.csv under out_dir.
/// On failure, files written so far are removed and the error names the
/// failing stage.
PrivacyReport run_experiment(const ExperimentConfig& cfg,
                             const std::string& out_dir);

void run_sweep(const ExperimentConfig& base, const SweepSpec& sweep,
               const std::string& out_dir);

/// Attack-accuracy CSV: rows (model type x rule variant), columns
/// subgroups.
void compare_attacks(const PrivacyReport& report, const std::string& out_path);

/// Deterministic index-ordered parallel map: runs fn(i) for i in
/// [0, count) on up to `jobs` threads; results land by index, so the
/// output is independent of scheduling.
void parallel_for(int jobs, std::size_t count,
                  const std::function<void(std::size_t)>& fn);

}  // namespace fairleak
