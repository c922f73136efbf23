#include "gridcast/training.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numbers>

#include "json.hpp"

#include "gridcast/tensor_io.hpp"

namespace gridcast {

std::string to_string(Sampling s) { return s == Sampling::city_uniform ? "city_uniform" : "pooled"; }

Sampling parse_sampling(const std::string& s) {
  if (s == "city_uniform") return Sampling::city_uniform;
  if (s == "pooled") return Sampling::pooled;
  throw std::invalid_argument("unknown sampling mode '" + s + "' (expected city_uniform or pooled)");
}

TrainConfig TrainConfig::core(double step_scale) {
  TrainConfig c;
  c.epochs = 5;
  c.step_scale = step_scale;
  return c;
}

TrainConfig TrainConfig::extended(double step_scale) {
  TrainConfig c;
  c.max_steps = 50000;
  c.step_scale = step_scale;
  return c;
}

std::vector<std::string> validation_errors(const TrainConfig& cfg) {
  std::vector<std::string> errs;
  if (cfg.epochs.has_value() == cfg.max_steps.has_value()) errs.push_back("schedule: set exactly one of epochs / max_steps");
  if (cfg.epochs && *cfg.epochs < 0) errs.push_back("epochs: must be >= 0");
  if (cfg.max_steps && *cfg.max_steps < 0) errs.push_back("max_steps: must be >= 0");
  if (cfg.batch_size < 1) errs.push_back("batch_size: must be >= 1");
  if (!(cfg.step_scale > 0)) errs.push_back("step_scale: must be positive");
  if (!(cfg.lr_hold > 0 && cfg.lr_hold <= 1)) errs.push_back("lr_hold: must be in (0, 1]");
  if (!(cfg.adam.lr > 0)) errs.push_back("lr: must be positive");
  if (!(cfg.adam.beta1 >= 0 && cfg.adam.beta1 < 1)) errs.push_back("beta1: must be in [0, 1)");
  if (!(cfg.adam.beta2 >= 0 && cfg.adam.beta2 < 1)) errs.push_back("beta2: must be in [0, 1)");
  if (!(cfg.adam.eps > 0)) errs.push_back("eps: must be positive");
  if (cfg.checkpoint_every < 0) errs.push_back("checkpoint_every: must be >= 0");
  if (cfg.cities.empty()) errs.push_back("cities: at least one city is required");
  for (const auto& c : cfg.cities) {
    if (c.regimes.empty()) errs.push_back("cities." + c.city + ": no regimes selected");
  }
  return errs;
}

Index TrainingData::total_instances() const {
  Index n = 0;
  for (const auto& c : cities) n += c.size();
  return n;
}

TrainingData load_training_data(const std::filesystem::path& root, const Manifest& manifest,
                                const std::vector<CitySelection>& selection, const AccessGuard& guard,
                                Index latest_start_cap) {
  TrainingData data;
  for (const auto& sel : selection) {
    CityData c;
    c.city = sel.city;
    std::optional<Index> bins;
    for (Regime r : sel.regimes) {
      guard.check(manifest, sel.city, r);
      for (const ManifestEntry* e : manifest.movies(sel.city, r)) {
        if (bins && *bins != e->bins) throw TrainingError("city " + sel.city + " mixes day lengths");
        bins = e->bins;
        c.movies.push_back(root / e->path);
      }
    }
    if (c.movies.empty()) {
      throw std::invalid_argument("city " + sel.city + " has no movies for the selected regimes");
    }
    c.static_map = read_static(static_path(root, sel.city));
    c.static_map.city_id = sel.city;
    c.starts = build_window_index(*bins, latest_start_cap).valid_starts;
    data.cities.push_back(std::move(c));
  }
  return data;
}

std::vector<InstanceRef> sample_batch(std::span<const Index> city_sizes, std::mt19937_64& rng, Sampling mode,
                                      int batch_size) {
  if (city_sizes.empty()) throw std::invalid_argument("sample_batch: no cities");
  Index total = 0;
  for (std::size_t i = 0; i < city_sizes.size(); ++i) {
    if (city_sizes[i] < 1) throw std::invalid_argument("sample_batch: city " + std::to_string(i) + " has no instances");
    total += city_sizes[i];
  }
  std::vector<InstanceRef> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    if (mode == Sampling::city_uniform) {
      std::uniform_int_distribution<std::size_t> pick_city(0, city_sizes.size() - 1);
      const std::size_t c = pick_city(rng);
      std::uniform_int_distribution<Index> pick(0, city_sizes[c] - 1);
      out.push_back({c, pick(rng)});
    } else {
      std::uniform_int_distribution<Index> pick(0, total - 1);
      Index k = pick(rng);
      std::size_t c = 0;
      while (k >= city_sizes[c]) k -= city_sizes[c++];
      out.push_back({c, k});
    }
  }
  return out;
}

double scheduled_lr(const TrainConfig& cfg, long step, long steps) {
  const double hold = cfg.lr_hold * static_cast<double>(steps);
  const double s = static_cast<double>(step);
  if (s <= hold) return cfg.adam.lr;
  return cfg.adam.lr * 0.5 * (1 + std::cos(std::numbers::pi * (s - hold) / (static_cast<double>(steps) - hold)));
}

long resolve_steps(const TrainConfig& cfg, Index total_instances) {
  long base = 0;
  if (cfg.max_steps) {
    base = *cfg.max_steps;
  } else if (cfg.epochs) {
    const long per_epoch = static_cast<long>((total_instances + cfg.batch_size - 1) / cfg.batch_size);
    base = *cfg.epochs * per_epoch;
  }
  if (base == 0) return 0;
  return std::max(1L, std::lround(static_cast<double>(base) * cfg.step_scale));
}

std::string to_json(const UNetConfig& cfg) {
  nlohmann::json j{{"depth", cfg.depth},
                   {"base_filters", cfg.base_filters},
                   {"in_channels", cfg.in_channels},
                   {"out_channels", cfg.out_channels},
                   {"group_size", cfg.group_size},
                   {"group_mode", cfg.group_mode == GroupMode::channels_per_group ? "channels_per_group" : "num_groups"},
                   {"seed", cfg.seed}};
  return j.dump();
}

UNetConfig unet_config_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  UNetConfig c;
  c.depth = j.at("depth").get<int>();
  c.base_filters = j.at("base_filters").get<int>();
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.group_size = j.at("group_size").get<int>();
  c.group_mode = j.at("group_mode").get<std::string>() == "num_groups" ? GroupMode::num_groups
                                                                        : GroupMode::channels_per_group;
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

namespace {

constexpr const char* kConfigEntry = "__config__";

template <typename Scalar>
void save_checkpoint_impl(const std::filesystem::path& path, const UNetModel<Scalar>& model) {
  TensorMap entries;
  for (const auto& [name, t] : model.parameters) entries.emplace(name, t);
  const std::string text = to_json(model.config);
  Tensor<std::uint8_t> manifest({static_cast<Index>(text.size())});
  std::copy(text.begin(), text.end(), manifest.data());
  entries.emplace(kConfigEntry, std::move(manifest));
  write_tensor_file(path, entries);
}

void write_snapshot(const std::filesystem::path& file, const TrainConfig& cfg, const UNetConfig& model, long steps) {
  std::ofstream out(file, std::ios::trunc);
  out << "model.depth = " << model.depth << '\n'
      << "model.base_filters = " << model.base_filters << '\n'
      << "model.in_channels = " << model.in_channels << '\n'
      << "model.out_channels = " << model.out_channels << '\n'
      << "model.group_size = " << model.group_size << '\n'
      << "model.seed = " << model.seed << '\n'
      << "train.lr = " << cfg.adam.lr << '\n'
      << "train.beta1 = " << cfg.adam.beta1 << '\n'
      << "train.beta2 = " << cfg.adam.beta2 << '\n'
      << "train.eps = " << cfg.adam.eps << '\n'
      << "train.batch_size = " << cfg.batch_size << '\n';
  if (cfg.epochs) out << "train.epochs = " << *cfg.epochs << '\n';
  if (cfg.max_steps) out << "train.max_steps = " << *cfg.max_steps << '\n';
  out << "train.step_scale = " << cfg.step_scale << '\n'
      << "train.lr_hold = " << cfg.lr_hold << '\n'
      << "train.steps = " << steps << '\n'
      << "train.seed = " << cfg.seed << '\n'
      << "train.sampling = " << to_string(cfg.sampling) << '\n';
  for (const auto& c : cfg.cities) {
    out << "train.city = " << c.city;
    for (Regime r : c.regimes) out << ' ' << to_string(r);
    out << '\n';
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const UNetModel<float>& model) {
  save_checkpoint_impl(path, model);
}
void save_checkpoint(const std::filesystem::path& path, const UNetModel<double>& model) {
  save_checkpoint_impl(path, model);
}

template <typename Scalar>
UNetModel<Scalar> load_checkpoint(const std::filesystem::path& path) {
  const TensorMap entries = read_tensor_file(path);
  const auto& manifest = get<std::uint8_t>(entries, kConfigEntry);
  const std::string text(manifest.data(), manifest.data() + manifest.size());
  UNetModel<Scalar> model = build_unet<Scalar>(unet_config_from_json(text));
  for (auto& [name, t] : model.parameters) {
    auto it = entries.find(name);
    if (it == entries.end()) throw TensorFileError(path.string() + ": checkpoint lacks parameter '" + name + "'");
    Tensor<Scalar> loaded = std::visit([](const auto& v) { return v.template cast<Scalar>(); }, it->second);
    if (loaded.shape() != t.shape()) {
      throw TensorFileError(path.string() + ": parameter '" + name + "' has shape " + to_string(loaded.shape()) +
                            ", expected " + to_string(t.shape()));
    }
    t = std::move(loaded);
  }
  return model;
}

template UNetModel<float> load_checkpoint<float>(const std::filesystem::path&);
template UNetModel<double> load_checkpoint<double>(const std::filesystem::path&);

template <typename Scalar>
RunRecord train(UNetModel<Scalar>& model, const TrainConfig& cfg, const TrainingData& data) {
  if (cfg.epochs.has_value() == cfg.max_steps.has_value() || cfg.batch_size < 1) {
    throw std::invalid_argument("train: invalid schedule or batch size");
  }
  if (model.config.in_channels != kInputChannels || model.config.out_channels != kOutputChannels) {
    throw ShapeError("train: model must map " + std::to_string(kInputChannels) + " input channels to " +
                     std::to_string(kOutputChannels) + " outputs");
  }
  std::vector<Index> sizes;
  for (const auto& c : data.cities) {
    if (c.size() < 1) throw std::invalid_argument("train: city " + c.city + " has no instances");
    sizes.push_back(c.size());
  }
  const long steps = resolve_steps(cfg, data.total_instances());
  RunRecord record;
  record.seed = cfg.seed;
  if (steps == 0) return record;
  if (sizes.empty()) throw std::invalid_argument("train: no training cities");

  const long every = cfg.checkpoint_every > 0 ? cfg.checkpoint_every : std::max(1L, steps / 10);
  std::ofstream loss_log;
  if (cfg.run_dir) {
    std::filesystem::create_directories(*cfg.run_dir);
    write_snapshot(*cfg.run_dir / "config.txt", cfg, model.config, steps);
    loss_log.open(*cfg.run_dir / "loss.csv", std::ios::trunc);
    loss_log << "step,loss,wall_ms\n";
  }

  std::mt19937_64 rng(cfg.seed);
  AdamState<Scalar> state{cfg.adam, 0, {}};
  const auto start = std::chrono::steady_clock::now();
  std::vector<Sample<Scalar>> batch;
  for (long step = 1; step <= steps; ++step) {
    const auto refs = sample_batch(sizes, rng, cfg.sampling, cfg.batch_size);
    batch.clear();
    for (const auto& ref : refs) batch.push_back(load_sample<Scalar>(data, ref));
    auto [loss, grads] = batch_gradients<Scalar>(model, batch);
    if (!std::isfinite(loss)) {
      std::map<std::string, int> mix;
      for (const auto& ref : refs) ++mix[data.cities[ref.city].city];
      std::string desc;
      for (const auto& [city, n] : mix) desc += (desc.empty() ? "" : ", ") + city + " x" + std::to_string(n);
      throw TrainingError("non-finite loss " + std::to_string(loss) + " at step " + std::to_string(step) +
                          " (batch: " + desc + ")");
    }
    state.options.lr = scheduled_lr(cfg, step, steps);
    adam_step(model.parameters, grads, state);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    record.losses.push_back(loss);
    record.wall_ms.push_back(ms);
    if (cfg.run_dir) {
      char line[96];
      std::snprintf(line, sizeof(line), "%ld,%.17g,%.0f\n", step, loss, ms);
      loss_log << line;
      if (step % every == 0 && step != steps) {
        save_checkpoint(*cfg.run_dir / ("ckpt-" + std::to_string(step) + ".gct"), model);
      }
    }
  }
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (cfg.run_dir) {
    record.checkpoint = *cfg.run_dir / "model.gct";
    save_checkpoint(*record.checkpoint, model);
  }
  return record;
}

template RunRecord train<float>(UNetModel<float>&, const TrainConfig&, const TrainingData&);
template RunRecord train<double>(UNetModel<double>&, const TrainConfig&, const TrainingData&);

}  // namespace gridcast
