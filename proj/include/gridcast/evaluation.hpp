#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridcast/access.hpp"
#include "gridcast/training.hpp"

namespace gridcast {

/// Per-pixel, per-channel mean of the 12 input frames, repeated for all six
/// lead times: (12, H, W, 8) -> (6, H, W, 8).
template <typename Scalar>
Tensor<Scalar> naive_average_predict(const Tensor<Scalar>& frames) {
  if (frames.rank() != 4 || frames.dim(0) != kInputFrames) {
    throw ShapeError("naive_average_predict: expected 12 input frames, got " + to_string(frames.shape()));
  }
  const Index frame = frames.size() / kInputFrames;
  const auto m = frames.matrix(kInputFrames, frame);
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean = m.colwise().sum() / static_cast<Scalar>(kInputFrames);
  const auto leads = static_cast<Index>(kLeadOffsets.size());
  Tensor<Scalar> out({leads, frames.dim(1), frames.dim(2), frames.dim(3)});
  out.matrix(leads, frame).rowwise() = mean;
  return out;
}

enum class Scale { unit, byte };

struct EvalOptions {
  Scale scale = Scale::byte;
  bool clamp = true;      // clip predictions to the valid range before scoring
  bool quantize = false;  // round byte-scale predictions to integers first
};

/// Mean squared error of one instance. Inputs are unit scale, (6, H, W, 8).
double instance_mse(const Tensor<double>& prediction, const Tensor<double>& truth, const EvalOptions& opt);

struct CityPredictions {
  std::string city;
  std::string regime;  // label for reports
  std::vector<Tensor<double>> predictions;
  std::vector<Tensor<double>> truths;
};

struct CityScore {
  std::string city;
  std::string regime;
  double mse = 0;
  Index n_instances = 0;
};

struct EvalReport {
  std::string method;
  std::string split;
  std::vector<std::uint64_t> seeds;
  std::vector<CityScore> per_city;
  double aggregate = 0;  // unweighted mean over cities
  double train_seconds = 0;

  double city_mse(const std::string& city) const;
};

/// Per city: mean over instances of the per-instance MSE; aggregate: mean over cities.
EvalReport evaluate(std::span<const CityPredictions> cities, const EvalOptions& opt = {});

/// Incremental form of `evaluate` for predictions that are produced one at a time.
class ReportBuilder {
 public:
  explicit ReportBuilder(EvalOptions opt = {}) : opt_(opt) {}
  void add(const std::string& city, const std::string& regime, const Tensor<double>& prediction,
           const Tensor<double>& truth);
  EvalReport finish(std::string method, std::string split, std::vector<std::uint64_t> seeds = {}) const;

 private:
  struct Acc {
    std::string regime;
    double sum = 0;
    Index n = 0;
  };
  EvalOptions opt_;
  std::vector<std::string> order_;
  std::map<std::string, Acc> acc_;
};

// ---------------------------------------------------------------------------
// Test instances and prediction files
// ---------------------------------------------------------------------------

struct TestInstance {
  std::string city;
  Regime regime;
  int day;
  std::filesystem::path movie;
  Index t;
};

/// Window starts 0, stride, 2*stride, ... (capped) of every selected movie.
/// Uses at most `max_days` movies per (city, regime) when non-zero.
std::vector<TestInstance> test_instances(const std::filesystem::path& root, const Manifest& manifest,
                                         const std::vector<CitySelection>& selection, const AccessGuard& guard,
                                         Index stride, int max_days = 0, Index latest_start_cap = kLatestStartBin);

/// The held-out split of a challenge: core cities in-Covid, or extended cities in both regimes.
std::vector<CitySelection> test_selection(const Manifest& manifest, Challenge challenge);
AccessGuard test_guard(const Manifest& manifest, Challenge challenge);

/// Predictions for a list of instances in unit scale, (6, H, W, 8) each.
struct PredictionSet {
  std::vector<TestInstance> instances;
  std::vector<Tensor<float>> predictions;
};

/// One file per (city, regime): "pred" (N, 6, H, W, 8) f32, "day" and "t" (N) f64.
void write_predictions(const std::filesystem::path& dir, const PredictionSet& set);
/// Reads every prediction file in `dir`; movie paths are resolved through the manifest.
PredictionSet read_predictions(const std::filesystem::path& dir, const std::filesystem::path& root,
                               const Manifest& manifest);

/// Model for a city; lets shared and per-city models use the same code path.
using ModelLookup = std::function<std::vector<const UNetModel<float>*>(const std::string& city)>;

PredictionSet predict_instances(const std::vector<TestInstance>& instances, const std::filesystem::path& root,
                                const ModelLookup& models);
PredictionSet naive_average_instances(const std::vector<TestInstance>& instances);
/// Element-wise mean of several prediction sets over the same instances.
PredictionSet average_predictions(std::span<const PredictionSet> sets);

/// Scores a prediction set against the ground truth movies.
EvalReport score_predictions(const PredictionSet& set, const std::string& method, const std::string& split,
                             const EvalOptions& opt = {}, std::vector<std::uint64_t> seeds = {});

// ---------------------------------------------------------------------------
// Result tables
// ---------------------------------------------------------------------------

struct ResultTable {
  std::string title;
  std::string method_header = "Method";
  std::vector<EvalReport> reports;

  /// CSV columns: method, city, regime, mse, n_instances, seed_list; one
  /// aggregate row per method uses city "ALL".
  std::string csv() const;
  /// Aligned text table: method, aggregate MSE, training time.
  std::string text() const;
  const EvalReport& find(const std::string& method) const;
};

// ---------------------------------------------------------------------------
// Experiment protocols
// ---------------------------------------------------------------------------

struct ProtocolConfig {
  std::filesystem::path root;
  UNetConfig model;
  TrainConfig train;  // schedule and optimizer; cities and seed are filled in per run
  std::vector<std::uint64_t> seeds{1, 2, 3};
  Index eval_stride = 12;
  int eval_max_days = 0;
  EvalOptions eval{};
  bool single_city_baseline = true;
  double multitask_step_factor = 1.0;  // scales the multi-task run's step budget
  /// Appended to every run's training selection. The run's guard still
  /// applies, so a forbidden entry here aborts the protocol with LeakError.
  std::vector<CitySelection> extra_cities;
  std::optional<std::filesystem::path> out_dir;  // run directories when set
  std::function<void(const std::string&)> log;   // progress lines
};

struct ProtocolResult {
  ResultTable table;
  /// Per-seed reports, keyed by method family ("multitask", "single_city").
  std::map<std::string, std::vector<EvalReport>> per_seed;
};

/// Multi-task model on train cities (both regimes) plus core cities pre-Covid,
/// single-city models on each core city's pre-Covid data, and Naive Average,
/// all scored on core cities in-Covid.
ProtocolResult run_core_protocol(const ProtocolConfig& cfg);

/// Multi-task model on train cities only, a single-city model on the first
/// train city, and Naive Average, scored on extended cities.
ProtocolResult run_extended_protocol(const ProtocolConfig& cfg);

/// One training-data mixture of the ablation.
struct Mixture {
  std::string label;
  std::vector<CitySelection> cities;
};

/// The six mixtures around `target` (a train city) and the other train cities.
std::vector<Mixture> ablation_mixtures(const Manifest& manifest, const std::string& target);

struct AblationConfig {
  ProtocolConfig base;
  std::string target;      // defaults to the first train city
  int validation_days = 0;  // in-Covid days of the target used for scoring; 0 = all
};

/// Trains one model per (mixture, seed) and scores each on the target's in-Covid days.
ProtocolResult run_mixture_ablation(const AblationConfig& cfg);

}  // namespace gridcast
