#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridcast/access.hpp"
#include "gridcast/adam.hpp"
#include "gridcast/dataset.hpp"
#include "gridcast/unet.hpp"

namespace gridcast {

enum class Sampling { city_uniform, pooled };
std::string to_string(Sampling s);
Sampling parse_sampling(const std::string& s);

struct CitySelection {
  std::string city;
  std::vector<Regime> regimes;
};

struct TrainConfig {
  AdamOptions adam{};  // lr 1e-4, betas (0.9, 0.999)
  int batch_size = 8;
  std::optional<long> epochs;
  std::optional<long> max_steps;
  double step_scale = 1.0;  // multiplies the resolved step budget
  /// Fraction of the budget trained at the full rate; the rest follows a
  /// cosine down to zero. 1 keeps the rate constant.
  double lr_hold = 1.0;
  std::uint64_t seed = 0;
  std::vector<CitySelection> cities;
  Sampling sampling = Sampling::city_uniform;
  long checkpoint_every = 0;  // 0: every 10% of the budget
  Index latest_start_cap = kLatestStartBin;
  std::optional<std::filesystem::path> run_dir;

  /// Five epochs, for the deep (K = 4) core model.
  static TrainConfig core(double step_scale = 1.0);
  /// 50,000 steps, for the shallow (K = 1) extended model.
  static TrainConfig extended(double step_scale = 1.0);
};

/// Returns every violated field; empty when the config is usable.
std::vector<std::string> validation_errors(const TrainConfig& cfg);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Instances of one city: every valid window start of every selected movie.
struct CityData {
  std::string city;
  StaticMap static_map;
  std::vector<std::filesystem::path> movies;
  std::vector<Index> starts;

  Index size() const { return static_cast<Index>(movies.size() * starts.size()); }
};

struct TrainingData {
  std::vector<CityData> cities;
  Index total_instances() const;
};

/// Loads the selected cities of a benchmark; every read passes `guard`.
TrainingData load_training_data(const std::filesystem::path& root, const Manifest& manifest,
                                const std::vector<CitySelection>& selection, const AccessGuard& guard,
                                Index latest_start_cap = kLatestStartBin);

struct InstanceRef {
  std::size_t city;
  Index instance;
};

/// city_uniform: city uniformly, then an instance within it. pooled: uniform
/// over the union of all instances.
std::vector<InstanceRef> sample_batch(std::span<const Index> city_sizes, std::mt19937_64& rng, Sampling mode,
                                      int batch_size);

template <typename Scalar>
Sample<Scalar> load_sample(const TrainingData& data, const InstanceRef& ref) {
  const CityData& c = data.cities.at(ref.city);
  const auto per_movie = static_cast<Index>(c.starts.size());
  const auto& file = c.movies.at(static_cast<std::size_t>(ref.instance / per_movie));
  const Index t = c.starts.at(static_cast<std::size_t>(ref.instance % per_movie));
  Sample<Scalar> s = assemble_window<Scalar>(read_window(file, t), c.static_map);
  s.city_id = c.city;
  s.t = t;
  return s;
}

/// Steps implied by the schedule: max_steps, or epochs * ceil(instances / batch).
long resolve_steps(const TrainConfig& cfg, Index total_instances);

/// Learning rate for 1-based `step` of `steps`.
double scheduled_lr(const TrainConfig& cfg, long step, long steps);

struct RunRecord {
  std::vector<double> losses;
  std::vector<double> wall_ms;
  std::optional<std::filesystem::path> checkpoint;
  double wall_seconds = 0;
  std::uint64_t seed = 0;
};

// Checkpoints: one tensor per parameter plus the config as JSON text under "__config__".

std::string to_json(const UNetConfig& cfg);
UNetConfig unet_config_from_json(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const UNetModel<float>& model);
void save_checkpoint(const std::filesystem::path& path, const UNetModel<double>& model);
template <typename Scalar>
UNetModel<Scalar> load_checkpoint(const std::filesystem::path& path);

/// Mean loss and parameter gradients of the batch, accumulated sample by sample.
template <typename Scalar>
std::pair<double, std::map<std::string, Tensor<Scalar>>> batch_gradients(const UNetModel<Scalar>& model,
                                                                         std::span<const Sample<Scalar>> batch) {
  std::map<std::string, Tensor<Scalar>> grads;
  double loss = 0;
  for (const auto& s : batch) {
    Graph<Scalar> g;
    const auto out = forward(g, model, g.input(s.input));
    const auto l = g.mse(out, s.target);
    g.backward(l);
    loss += static_cast<double>(g.value(l)[0]);
    for (auto& [name, grad] : g.parameter_gradients()) {
      auto it = grads.find(name);
      if (it == grads.end()) grads.emplace(name, std::move(grad));
      else it->second.array() += grad.array();
    }
  }
  const auto inv = Scalar(1) / static_cast<Scalar>(batch.size());
  for (auto& [name, grad] : grads) grad.array() *= inv;
  return {loss / static_cast<double>(batch.size()), std::move(grads)};
}

/// Minimizes the batch MSE with Adam for the configured budget.
template <typename Scalar>
RunRecord train(UNetModel<Scalar>& model, const TrainConfig& cfg, const TrainingData& data);

/// Mean of member predictions.
template <typename Scalar>
Tensor<Scalar> ensemble_predict(std::span<const UNetModel<Scalar>> models, const Tensor<Scalar>& input) {
  if (models.empty()) throw std::invalid_argument("ensemble_predict: no models");
  Tensor<Scalar> sum = forward(models[0], input);
  for (std::size_t i = 1; i < models.size(); ++i) {
    const Tensor<Scalar> y = forward(models[i], input);
    if (y.shape() != sum.shape()) throw ShapeError("ensemble_predict: members disagree on output shape");
    sum.array() += y.array();
  }
  sum.array() /= static_cast<Scalar>(models.size());
  return sum;
}

}  // namespace gridcast
