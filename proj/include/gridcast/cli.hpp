#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridcast/evaluation.hpp"

namespace gridcast {

struct GenerateConfig {
  std::uint64_t seed = 0;
  int train_cities = 4;
  int core_cities = 4;
  int extended_cities = 2;
  Index height = 64;
  Index width = 64;
  int train_days = 20;
  int test_days = 4;
};

enum class RunMode { multitask, single_city };
std::string to_string(RunMode m);

struct ExperimentConfig {
  std::optional<std::filesystem::path> data;
  Challenge challenge = Challenge::core;
  RunMode mode = RunMode::multitask;
  UNetConfig model;
  TrainConfig train;
  double multitask_step_factor = 1.0;  // protocols: multi-task budget over the single-city one
  std::vector<std::uint64_t> seeds{1};
  GenerateConfig generate;
  Index eval_stride = 12;
  int eval_max_days = 0;
  EvalOptions eval;
  std::string ablation_target;
  int validation_days = 0;
  bool parallel = false;
};

/// Every violated field of a config, reported together.
class InvalidConfig : public std::runtime_error {
 public:
  explicit InvalidConfig(std::vector<std::string> fields);
  const std::vector<std::string>& fields() const { return fields_; }

 private:
  std::vector<std::string> fields_;
};

/// Defaults follow the paper's schedule for the challenge (K = 4 and 5 epochs
/// for core, K = 1 and 50,000 steps for extended); `paper_scale` also switches
/// the generator to the full 495 x 436 grid and 181 days.
ExperimentConfig default_config(Challenge challenge, bool paper_scale);

/// Applies a JSON config on top of the defaults. Throws InvalidConfig listing
/// every unknown key, wrong type or out-of-range value.
ExperimentConfig parse_config(const std::string& json_text, bool paper_scale, std::optional<Challenge> challenge = {});

/// Entry point of the `gridcast` tool. Exit codes: 0 success, 2 invalid
/// arguments or config, 3 runtime failure (including leak-guard violations).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gridcast
