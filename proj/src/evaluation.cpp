#include "gridcast/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "gridcast/tensor_io.hpp"

namespace gridcast {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string seed_list(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? ";" : "") + std::to_string(seeds[i]);
  return s;
}

void log(const ProtocolConfig& cfg, const std::string& line) {
  if (cfg.log) cfg.log(line);
}

Tensor<double> unit_truth(const Tensor<std::uint8_t>& window) {
  Tensor<double> t = target_frames(window);
  t.array() /= 255.0;
  return t;
}

}  // namespace

double instance_mse(const Tensor<double>& prediction, const Tensor<double>& truth, const EvalOptions& opt) {
  if (prediction.shape() != truth.shape()) {
    throw ShapeError("instance_mse: prediction " + to_string(prediction.shape()) + " vs truth " +
                     to_string(truth.shape()));
  }
  if (truth.size() == 0) throw ShapeError("instance_mse: empty instance");
  const double k = opt.scale == Scale::byte ? 255.0 : 1.0;
  Eigen::ArrayXd p = prediction.array() * k;
  if (opt.clamp) p = p.max(0.0).min(k);
  if (opt.quantize && opt.scale == Scale::byte) p = p.round();
  // Materialized so an FMA cannot fuse the scaling into the difference.
  const Eigen::ArrayXd t = truth.array() * k;
  return (p - t).square().sum() / static_cast<double>(truth.size());
}

double EvalReport::city_mse(const std::string& city) const {
  for (const auto& c : per_city) {
    if (c.city == city) return c.mse;
  }
  throw std::out_of_range("report '" + method + "' has no city " + city);
}

void ReportBuilder::add(const std::string& city, const std::string& regime, const Tensor<double>& prediction,
                        const Tensor<double>& truth) {
  auto [it, fresh] = acc_.try_emplace(city);
  if (fresh) {
    order_.push_back(city);
    it->second.regime = regime;
  } else if (it->second.regime != regime && it->second.regime.find(regime) == std::string::npos) {
    it->second.regime += "+" + regime;
  }
  it->second.sum += instance_mse(prediction, truth, opt_);
  ++it->second.n;
}

EvalReport ReportBuilder::finish(std::string method, std::string split, std::vector<std::uint64_t> seeds) const {
  if (order_.empty()) throw std::invalid_argument("evaluate: no instances for '" + method + "'");
  EvalReport r;
  r.method = std::move(method);
  r.split = std::move(split);
  r.seeds = std::move(seeds);
  double total = 0;
  for (const auto& city : order_) {
    const Acc& a = acc_.at(city);
    const double m = a.sum / static_cast<double>(a.n);
    r.per_city.push_back({city, a.regime, m, a.n});
    total += m;
  }
  r.aggregate = total / static_cast<double>(order_.size());
  return r;
}

EvalReport evaluate(std::span<const CityPredictions> cities, const EvalOptions& opt) {
  ReportBuilder b(opt);
  for (const auto& c : cities) {
    if (c.predictions.size() != c.truths.size()) {
      throw std::invalid_argument("evaluate: city " + c.city + " has " + std::to_string(c.predictions.size()) +
                                  " predictions but " + std::to_string(c.truths.size()) + " truths");
    }
    if (c.predictions.empty()) throw std::invalid_argument("evaluate: city " + c.city + " has no instances");
    for (std::size_t i = 0; i < c.predictions.size(); ++i) b.add(c.city, c.regime, c.predictions[i], c.truths[i]);
  }
  return b.finish("", "");
}

std::vector<TestInstance> test_instances(const std::filesystem::path& root, const Manifest& manifest,
                                         const std::vector<CitySelection>& selection, const AccessGuard& guard,
                                         Index stride, int max_days, Index latest_start_cap) {
  if (stride < 1) throw std::invalid_argument("test_instances: stride must be >= 1");
  std::vector<TestInstance> out;
  for (const auto& sel : selection) {
    for (Regime r : sel.regimes) {
      guard.check(manifest, sel.city, r);
      int used = 0;
      for (const ManifestEntry* e : manifest.movies(sel.city, r)) {
        if (max_days > 0 && used++ >= max_days) break;
        const auto starts = build_window_index(e->bins, latest_start_cap).valid_starts;
        for (std::size_t i = 0; i < starts.size(); i += static_cast<std::size_t>(stride)) {
          out.push_back({sel.city, r, e->day, root / e->path, starts[i]});
        }
      }
    }
  }
  return out;
}

std::vector<CitySelection> test_selection(const Manifest& manifest, Challenge challenge) {
  std::vector<CitySelection> sel;
  if (challenge == Challenge::core) {
    for (const auto& c : manifest.cities(CityRole::core)) sel.push_back({c, {Regime::in_covid}});
  } else {
    for (const auto& c : manifest.cities(CityRole::extended)) sel.push_back({c, {Regime::pre_covid, Regime::in_covid}});
  }
  return sel;
}

AccessGuard test_guard(const Manifest& manifest, Challenge challenge) {
  std::set<std::pair<std::string, Regime>> allowed;
  for (const auto& s : test_selection(manifest, challenge)) {
    for (Regime r : s.regimes) allowed.insert({s.city, r});
  }
  return AccessGuard(to_string(challenge) + " evaluation", std::move(allowed));
}

namespace {

std::string file_stem(const TestInstance& i) { return i.city + "-" + to_string(i.regime); }

/// Runs `fn(index, window, static)` over the instances, caching static maps per city.
template <typename Fn>
void for_each_window(const std::vector<TestInstance>& instances, const std::filesystem::path& root, Fn&& fn) {
  std::map<std::string, StaticMap> statics;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    auto it = statics.find(inst.city);
    if (it == statics.end()) {
      StaticMap s = read_static(static_path(root, inst.city));
      s.city_id = inst.city;
      it = statics.emplace(inst.city, std::move(s)).first;
    }
    fn(i, read_window(inst.movie, inst.t), it->second);
  }
}

Tensor<float> model_prediction(const std::vector<const UNetModel<float>*>& models, const Tensor<std::uint8_t>& window,
                               const StaticMap& st) {
  if (models.empty()) throw std::invalid_argument("predict: no model for city " + st.city_id);
  const Sample<float> s = assemble_window<float>(window, st);
  Tensor<float> sum = forward(*models[0], s.input);
  for (std::size_t m = 1; m < models.size(); ++m) sum.array() += forward(*models[m], s.input).array();
  sum.array() /= static_cast<float>(models.size());
  return to_frames(sum);
}

/// Scores the models on the instances without keeping the predictions.
EvalReport score_models(const std::vector<TestInstance>& instances, const std::filesystem::path& root,
                        const ModelLookup& models, const EvalOptions& opt, const std::string& method,
                        const std::string& split, std::vector<std::uint64_t> seeds) {
  ReportBuilder b(opt);
  for_each_window(instances, root, [&](std::size_t i, const Tensor<std::uint8_t>& w, const StaticMap& st) {
    const auto& inst = instances[i];
    b.add(inst.city, to_string(inst.regime), model_prediction(models(inst.city), w, st).cast<double>(),
          unit_truth(w));
  });
  return b.finish(method, split, std::move(seeds));
}

EvalReport score_naive(const std::vector<TestInstance>& instances, const EvalOptions& opt, const std::string& split) {
  ReportBuilder b(opt);
  for (const auto& inst : instances) {
    const auto w = read_window(inst.movie, inst.t);
    Tensor<double> p = naive_average_predict(input_frames(w));
    p.array() /= 255.0;
    b.add(inst.city, to_string(inst.regime), p, unit_truth(w));
  }
  return b.finish("Naive Average", split);
}

}  // namespace

void write_predictions(const std::filesystem::path& dir, const PredictionSet& set) {
  if (set.instances.size() != set.predictions.size()) {
    throw std::invalid_argument("write_predictions: instance/prediction count mismatch");
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < set.instances.size(); ++i) groups[file_stem(set.instances[i])].push_back(i);
  for (const auto& [stem, idx] : groups) {
    const Shape one = set.predictions[idx[0]].shape();
    Shape shape{static_cast<Index>(idx.size())};
    shape.insert(shape.end(), one.begin(), one.end());
    Tensor<float> pred(shape);
    Tensor<double> day({static_cast<Index>(idx.size())}), t({static_cast<Index>(idx.size())});
    const Index per = numel(one);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& p = set.predictions[idx[k]];
      if (p.shape() != one) throw ShapeError("write_predictions: mixed prediction shapes for " + stem);
      std::copy(p.data(), p.data() + per, pred.data() + static_cast<Index>(k) * per);
      day[static_cast<Index>(k)] = set.instances[idx[k]].day;
      t[static_cast<Index>(k)] = static_cast<double>(set.instances[idx[k]].t);
    }
    TensorMap m;
    m.emplace("pred", std::move(pred));
    m.emplace("day", std::move(day));
    m.emplace("t", std::move(t));
    write_tensor_file(dir / (stem + ".gct"), m);
  }
}

PredictionSet read_predictions(const std::filesystem::path& dir, const std::filesystem::path& root,
                               const Manifest& manifest) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".gct") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::invalid_argument("no prediction files in " + dir.string());
  PredictionSet set;
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    const auto dash = stem.rfind('-');
    if (dash == std::string::npos) throw std::invalid_argument("prediction file name " + f.string() + " lacks a regime");
    const std::string city = stem.substr(0, dash);
    const Regime regime = parse_regime(stem.substr(dash + 1));
    std::map<int, std::filesystem::path> movies;
    for (const ManifestEntry* e : manifest.movies(city, regime)) movies[e->day] = root / e->path;
    const TensorMap m = read_tensor_file(f);
    const auto& pred = get<float>(m, "pred");
    const auto& day = get<double>(m, "day");
    const auto& t = get<double>(m, "t");
    const Index n = pred.dim(0);
    if (day.size() != n || t.size() != n) throw TensorFileError(f.string() + ": day/t length differs from pred");
    Shape one(pred.shape().begin() + 1, pred.shape().end());
    const Index per = numel(one);
    for (Index k = 0; k < n; ++k) {
      const int d = static_cast<int>(day[k]);
      auto it = movies.find(d);
      if (it == movies.end()) {
        throw std::invalid_argument(f.string() + ": day " + std::to_string(d) + " is not in the manifest for " + city);
      }
      set.instances.push_back({city, regime, d, it->second, static_cast<Index>(t[k])});
      Tensor<float> p = Tensor<float>::uninitialized(one);
      std::copy(pred.data() + k * per, pred.data() + (k + 1) * per, p.data());
      set.predictions.push_back(std::move(p));
    }
  }
  return set;
}

PredictionSet predict_instances(const std::vector<TestInstance>& instances, const std::filesystem::path& root,
                                const ModelLookup& models) {
  PredictionSet set;
  set.instances = instances;
  set.predictions.resize(instances.size());
  for_each_window(instances, root, [&](std::size_t i, const Tensor<std::uint8_t>& w, const StaticMap& st) {
    set.predictions[i] = model_prediction(models(instances[i].city), w, st);
  });
  return set;
}

PredictionSet naive_average_instances(const std::vector<TestInstance>& instances) {
  PredictionSet set;
  set.instances = instances;
  for (const auto& inst : instances) {
    Tensor<double> p = naive_average_predict(input_frames(read_window(inst.movie, inst.t)));
    p.array() /= 255.0;
    set.predictions.push_back(p.cast<float>());
  }
  return set;
}

PredictionSet average_predictions(std::span<const PredictionSet> sets) {
  if (sets.empty()) throw std::invalid_argument("average_predictions: no sets");
  PredictionSet out = sets[0];
  for (std::size_t s = 1; s < sets.size(); ++s) {
    if (sets[s].instances.size() != out.instances.size()) {
      throw std::invalid_argument("average_predictions: sets cover different instances");
    }
    for (std::size_t i = 0; i < out.predictions.size(); ++i) {
      const auto& a = out.instances[i];
      const auto& b = sets[s].instances[i];
      if (a.city != b.city || a.regime != b.regime || a.day != b.day || a.t != b.t) {
        throw std::invalid_argument("average_predictions: instance " + std::to_string(i) + " differs between sets");
      }
      if (sets[s].predictions[i].shape() != out.predictions[i].shape()) {
        throw ShapeError("average_predictions: shape mismatch at instance " + std::to_string(i));
      }
      out.predictions[i].array() += sets[s].predictions[i].array();
    }
  }
  for (auto& p : out.predictions) p.array() /= static_cast<float>(sets.size());
  return out;
}

EvalReport score_predictions(const PredictionSet& set, const std::string& method, const std::string& split,
                             const EvalOptions& opt, std::vector<std::uint64_t> seeds) {
  if (set.instances.size() != set.predictions.size()) {
    throw std::invalid_argument("score_predictions: instance/prediction count mismatch");
  }
  ReportBuilder b(opt);
  for (std::size_t i = 0; i < set.instances.size(); ++i) {
    const auto& inst = set.instances[i];
    b.add(inst.city, to_string(inst.regime), set.predictions[i].cast<double>(),
          unit_truth(read_window(inst.movie, inst.t)));
  }
  return b.finish(method, split, std::move(seeds));
}

std::string ResultTable::csv() const {
  std::ostringstream os;
  os << "method,city,regime,mse,n_instances,seed_list\n";
  for (const auto& r : reports) {
    Index n = 0;
    for (const auto& c : r.per_city) {
      os << r.method << ',' << c.city << ',' << c.regime << ',' << fmt("%.10g", c.mse) << ',' << c.n_instances << ','
         << seed_list(r.seeds) << '\n';
      n += c.n_instances;
    }
    os << r.method << ",ALL,-," << fmt("%.10g", r.aggregate) << ',' << n << ',' << seed_list(r.seeds) << '\n';
  }
  return os.str();
}

std::string ResultTable::text() const {
  std::size_t width = method_header.size();
  for (const auto& r : reports) width = std::max(width, r.method.size());
  auto pad = [&](const std::string& s) { return s + std::string(width - s.size() + 2, ' '); };
  std::ostringstream os;
  if (!title.empty()) os << title << '\n';
  os << pad(method_header) << "MSE           Train time (s)\n";
  for (const auto& r : reports) {
    std::string m = fmt("%.4f", r.aggregate);
    m += std::string(m.size() < 14 ? 14 - m.size() : 1, ' ');
    os << pad(r.method) << m << fmt("%.1f", r.train_seconds) << '\n';
  }
  return os.str();
}

const EvalReport& ResultTable::find(const std::string& method) const {
  for (const auto& r : reports) {
    if (r.method == method) return r;
  }
  throw std::out_of_range("result table has no method '" + method + "'");
}

namespace {

/// Mean of per-seed reports, city by city.
EvalReport mean_report(const std::vector<EvalReport>& runs, const std::string& method) {
  EvalReport r = runs.at(0);
  r.method = method;
  r.seeds.clear();
  r.train_seconds = 0;
  r.aggregate = 0;
  for (auto& c : r.per_city) c.mse = 0;
  for (const auto& run : runs) {
    r.seeds.insert(r.seeds.end(), run.seeds.begin(), run.seeds.end());
    r.aggregate += run.aggregate;
    r.train_seconds += run.train_seconds;
    for (auto& c : r.per_city) c.mse += run.city_mse(c.city);
  }
  const auto n = static_cast<double>(runs.size());
  r.aggregate /= n;
  r.train_seconds /= n;
  for (auto& c : r.per_city) c.mse /= n;
  return r;
}

struct TrainedModel {
  UNetModel<float> model;
  double seconds = 0;
};

TrainedModel train_one(const ProtocolConfig& cfg, std::vector<CitySelection> cities, const AccessGuard& guard,
                       std::uint64_t seed, const std::optional<std::filesystem::path>& run_dir,
                       double step_factor = 1.0) {
  const Manifest manifest = read_manifest(cfg.root / "manifest.tsv");
  cities.insert(cities.end(), cfg.extra_cities.begin(), cfg.extra_cities.end());
  TrainConfig tc = cfg.train;
  tc.cities = cities;
  tc.seed = seed;
  tc.step_scale *= step_factor;
  tc.run_dir = run_dir;
  if (const auto errs = validation_errors(tc); !errs.empty()) throw TrainingError("protocol train config: " + errs[0]);
  UNetConfig mc = cfg.model;
  mc.seed = seed;
  const TrainingData data = load_training_data(cfg.root, manifest, cities, guard, tc.latest_start_cap);
  TrainedModel out{build_unet<float>(mc), 0};
  out.seconds = train(out.model, tc, data).wall_seconds;
  return out;
}

std::optional<std::filesystem::path> run_dir(const ProtocolConfig& cfg, const std::string& family, std::uint64_t seed,
                                             const std::string& city = "") {
  if (!cfg.out_dir) return std::nullopt;
  auto p = *cfg.out_dir / family / ("seed-" + std::to_string(seed));
  if (!city.empty()) p /= city;
  return p;
}

std::string selection_label(const std::vector<CitySelection>& cities) {
  std::string s;
  for (const auto& c : cities) {
    if (!s.empty()) s += ", ";
    s += c.city + "[";
    for (std::size_t i = 0; i < c.regimes.size(); ++i) s += (i ? "+" : "") + std::to_string(year_of(c.regimes[i]));
    s += "]";
  }
  return s;
}

ProtocolResult run_challenge(const ProtocolConfig& cfg, Challenge challenge) {
  if (cfg.seeds.empty()) throw std::invalid_argument("protocol: at least one seed is required");
  const Manifest manifest = read_manifest(cfg.root / "manifest.tsv");
  const AccessGuard guard = training_guard(manifest, challenge);
  const std::string split = to_string(challenge) + " test";
  const auto instances = test_instances(cfg.root, manifest, test_selection(manifest, challenge),
                                        test_guard(manifest, challenge), cfg.eval_stride, cfg.eval_max_days);
  log(cfg, split + ": " + std::to_string(instances.size()) + " instances");

  ProtocolResult res;
  res.table.title = challenge == Challenge::core ? "Core challenge (core cities, in-Covid)"
                                                 : "Extended challenge (extended cities, both regimes)";
  res.table.reports.push_back(score_naive(instances, cfg.eval, split));

  std::vector<CitySelection> mtl;
  for (const auto& c : manifest.cities(CityRole::train)) mtl.push_back({c, {Regime::pre_covid, Regime::in_covid}});
  if (challenge == Challenge::core) {
    for (const auto& c : manifest.cities(CityRole::core)) mtl.push_back({c, {Regime::pre_covid}});
  }

  std::vector<UNetModel<float>> mtl_models;
  for (std::uint64_t seed : cfg.seeds) {
    if (cfg.single_city_baseline) {
      if (challenge == Challenge::core) {
        std::map<std::string, UNetModel<float>> per_city;
        double seconds = 0;
        for (const auto& c : manifest.cities(CityRole::core)) {
          log(cfg, "train single-city " + c + " seed " + std::to_string(seed));
          auto m = train_one(cfg, {{c, {Regime::pre_covid}}}, guard, seed, run_dir(cfg, "single_city", seed, c));
          seconds += m.seconds;
          per_city.emplace(c, std::move(m.model));
        }
        auto lookup = [&](const std::string& city) -> std::vector<const UNetModel<float>*> {
          return {&per_city.at(city)};
        };
        auto rep = score_models(instances, cfg.root, lookup, cfg.eval, "U-Net single-city", split, {seed});
        rep.train_seconds = seconds;
        res.per_seed["single_city"].push_back(rep);
      } else {
        const std::string c = manifest.cities(CityRole::train).at(0);
        log(cfg, "train single-city " + c + " seed " + std::to_string(seed));
        auto m = train_one(cfg, {{c, {Regime::pre_covid, Regime::in_covid}}}, guard, seed,
                           run_dir(cfg, "single_city", seed, c));
        auto lookup = [&](const std::string&) -> std::vector<const UNetModel<float>*> { return {&m.model}; };
        auto rep = score_models(instances, cfg.root, lookup, cfg.eval, "U-Net single-city", split, {seed});
        rep.train_seconds = m.seconds;
        res.per_seed["single_city"].push_back(rep);
      }
      log(cfg, "single-city seed " + std::to_string(seed) + " mse " +
                   fmt("%.4f", res.per_seed["single_city"].back().aggregate));
    }

    log(cfg, "train multi-task seed " + std::to_string(seed) + " on " + selection_label(mtl));
    auto m = train_one(cfg, mtl, guard, seed, run_dir(cfg, "multitask", seed), cfg.multitask_step_factor);
    auto lookup = [&](const std::string&) -> std::vector<const UNetModel<float>*> { return {&m.model}; };
    auto rep = score_models(instances, cfg.root, lookup, cfg.eval, "U-Net multi-task", split, {seed});
    rep.train_seconds = m.seconds;
    res.per_seed["multitask"].push_back(rep);
    log(cfg, "multi-task seed " + std::to_string(seed) + " mse " + fmt("%.4f", rep.aggregate));
    mtl_models.push_back(std::move(m.model));
  }

  if (cfg.single_city_baseline) res.table.reports.push_back(mean_report(res.per_seed["single_city"], "U-Net single-city"));
  res.table.reports.push_back(mean_report(res.per_seed["multitask"], "U-Net multi-task"));
  if (mtl_models.size() > 1) {
    std::vector<const UNetModel<float>*> members;
    for (const auto& m : mtl_models) members.push_back(&m);
    auto rep = score_models(instances, cfg.root, [&](const std::string&) { return members; }, cfg.eval,
                            "U-Net multi-task ensemble", split, cfg.seeds);
    for (const auto& r : res.per_seed["multitask"]) rep.train_seconds += r.train_seconds;
    res.table.reports.push_back(rep);
  }
  return res;
}

}  // namespace

ProtocolResult run_core_protocol(const ProtocolConfig& cfg) { return run_challenge(cfg, Challenge::core); }

ProtocolResult run_extended_protocol(const ProtocolConfig& cfg) { return run_challenge(cfg, Challenge::extended); }

std::vector<Mixture> ablation_mixtures(const Manifest& manifest, const std::string& target) {
  const auto train = manifest.cities(CityRole::train);
  if (std::find(train.begin(), train.end(), target) == train.end()) {
    throw std::invalid_argument("ablation target " + target + " is not a train city");
  }
  std::vector<std::string> others;
  for (const auto& c : train) {
    if (c != target) others.push_back(c);
  }
  if (others.empty()) throw std::invalid_argument("ablation needs at least two train cities");
  const std::vector<Regime> both{Regime::pre_covid, Regime::in_covid};
  auto with = [&](std::vector<CitySelection> head, const std::vector<std::string>& cities, std::vector<Regime> rs) {
    for (const auto& c : cities) head.push_back({c, rs});
    return head;
  };
  const CitySelection t2019{target, {Regime::pre_covid}};
  return {
      {"others 2019+2020", with({}, others, both)},
      {"target 2019", {t2019}},
      {"target 2019 + others 2019", with({t2019}, others, {Regime::pre_covid})},
      {"target 2019 + others 2020", with({t2019}, others, {Regime::in_covid})},
      {"target 2019 + one other 2019+2020", with({t2019}, {others[0]}, both)},
      {"target 2019 + others 2019+2020", with({t2019}, others, both)},
  };
}

ProtocolResult run_mixture_ablation(const AblationConfig& acfg) {
  const ProtocolConfig& cfg = acfg.base;
  if (cfg.seeds.empty()) throw std::invalid_argument("ablation: at least one seed is required");
  const Manifest manifest = read_manifest(cfg.root / "manifest.tsv");
  const std::string target = acfg.target.empty() ? manifest.cities(CityRole::train).at(0) : acfg.target;
  const auto mixtures = ablation_mixtures(manifest, target);

  const AccessGuard val_guard("ablation validation", {{target, Regime::in_covid}});
  const auto instances = test_instances(cfg.root, manifest, {{target, {Regime::in_covid}}}, val_guard,
                                        cfg.eval_stride, acfg.validation_days);
  const std::string split = target + " in-Covid validation";
  log(cfg, split + ": " + std::to_string(instances.size()) + " instances");

  ProtocolResult res;
  res.table.title = "Training-data mixtures, validated on " + target + " in-Covid";
  res.table.method_header = "Training data";
  for (std::size_t k = 0; k < mixtures.size(); ++k) {
    const auto& mix = mixtures[k];
    std::set<std::pair<std::string, Regime>> allowed;
    for (const auto& c : mix.cities) {
      for (Regime r : c.regimes) allowed.insert({c.city, r});
    }
    const AccessGuard guard("ablation training (" + mix.label + ")", allowed);
    for (std::uint64_t seed : cfg.seeds) {
      log(cfg, "train mixture '" + mix.label + "' seed " + std::to_string(seed));
      auto m = train_one(cfg, mix.cities, guard, seed, run_dir(cfg, "mixture-" + std::to_string(k + 1), seed));
      auto lookup = [&](const std::string&) -> std::vector<const UNetModel<float>*> { return {&m.model}; };
      auto rep = score_models(instances, cfg.root, lookup, cfg.eval, mix.label, split, {seed});
      rep.train_seconds = m.seconds;
      log(cfg, "mixture '" + mix.label + "' seed " + std::to_string(seed) + " mse " + fmt("%.4f", rep.aggregate));
      res.per_seed[mix.label].push_back(std::move(rep));
    }
    res.table.reports.push_back(mean_report(res.per_seed[mix.label], mix.label));
  }
  return res;
}

}  // namespace gridcast
