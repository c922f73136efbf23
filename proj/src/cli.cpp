#include "gridcast/cli.hpp"

#include <cstdio>
#include <fstream>
#include <future>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "gridcast/tensor_io.hpp"

namespace gridcast {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(RunMode m) { return m == RunMode::multitask ? "multitask" : "single_city"; }

namespace {

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
  return s;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

InvalidConfig::InvalidConfig(std::vector<std::string> fields)
    : std::runtime_error("invalid configuration: " + join(fields, "; ")), fields_(std::move(fields)) {}

ExperimentConfig default_config(Challenge challenge, bool paper_scale) {
  ExperimentConfig c;
  c.challenge = challenge;
  c.model = challenge == Challenge::core ? UNetConfig::core() : UNetConfig::extended();
  c.train = challenge == Challenge::core ? TrainConfig::core() : TrainConfig::extended();
  if (paper_scale) {
    c.generate.height = 495;
    c.generate.width = 436;
    c.generate.train_days = 181;
  }
  return c;
}

namespace {

/// Reads typed fields of one JSON object, collecting every problem.
class Fields {
 public:
  Fields(const json& obj, std::string prefix, std::vector<std::string>& errs, std::set<std::string> known)
      : obj_(obj), prefix_(std::move(prefix)), errs_(errs) {
    if (!obj.is_object()) {
      errs_.push_back(where("") + "expected an object");
      ok_ = false;
      return;
    }
    for (const auto& [k, v] : obj.items()) {
      if (!known.count(k)) errs_.push_back(where(k) + "unknown key");
    }
  }

  bool has(const char* key) const { return ok_ && obj_.contains(key); }
  const json& at(const char* key) const { return obj_.at(key); }
  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }
  void error(const std::string& key, const std::string& msg) { errs_.push_back(where(key) + msg); }

  template <typename T>
  bool get(const char* key, T& out) {
    if (!has(key)) return false;
    const json& v = obj_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) return bad(key, "expected true or false");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) return bad(key, "expected a string");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) return bad(key, "expected a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) return bad(key, "expected an integer");
    } else {
      if (!v.is_number()) return bad(key, "expected a number");
    }
    out = v.get<T>();
    return true;
  }

 private:
  std::string where(const std::string& key) const {
    const std::string p = path(key);
    return (p.empty() ? std::string("config") : p) + ": ";
  }
  bool bad(const std::string& key, const std::string& msg) {
    errs_.push_back(where(key) + msg);
    return false;
  }

  const json& obj_;
  std::string prefix_;
  std::vector<std::string>& errs_;
  bool ok_ = true;
};

void read_model(Fields f, UNetConfig& m) {
  f.get("depth", m.depth);
  f.get("base_filters", m.base_filters);
  f.get("group_size", m.group_size);
  std::string mode;
  if (f.get("group_mode", mode)) {
    if (mode == "channels_per_group") m.group_mode = GroupMode::channels_per_group;
    else if (mode == "num_groups") m.group_mode = GroupMode::num_groups;
    else f.error("group_mode", "expected channels_per_group or num_groups");
  }
}

void read_train(Fields f, TrainConfig& t, double& multitask_step_factor, std::vector<std::string>& errs) {
  f.get("lr", t.adam.lr);
  f.get("beta1", t.adam.beta1);
  f.get("beta2", t.adam.beta2);
  f.get("eps", t.adam.eps);
  f.get("batch_size", t.batch_size);
  f.get("step_scale", t.step_scale);
  f.get("lr_hold", t.lr_hold);
  f.get("multitask_step_factor", multitask_step_factor);
  f.get("checkpoint_every", t.checkpoint_every);
  f.get("latest_start_cap", t.latest_start_cap);
  long epochs = 0, steps = 0;
  const bool has_epochs = f.get("epochs", epochs), has_steps = f.get("max_steps", steps);
  if (has_epochs || has_steps) {
    t.epochs.reset();
    t.max_steps.reset();
    if (has_epochs) t.epochs = epochs;
    if (has_steps) t.max_steps = steps;
  }
  std::string sampling;
  if (f.get("sampling", sampling)) {
    try {
      t.sampling = parse_sampling(sampling);
    } catch (const std::invalid_argument& e) {
      f.error("sampling", e.what());
    }
  }
  if (f.has("cities")) {
    const json& cities = f.at("cities");
    if (!cities.is_array()) {
      f.error("cities", "expected a list of {city, regimes}");
      return;
    }
    for (std::size_t i = 0; i < cities.size(); ++i) {
      Fields c(cities[i], f.path("cities") + "[" + std::to_string(i) + "]", errs, {"city", "regimes"});
      CitySelection sel;
      if (!c.get("city", sel.city)) c.error("city", "required");
      if (c.has("regimes")) {
        const json& rs = c.at("regimes");
        if (!rs.is_array()) c.error("regimes", "expected a list");
        else {
          for (const auto& r : rs) {
            try {
              sel.regimes.push_back(parse_regime(r.is_string() ? r.get<std::string>() : r.dump()));
            } catch (const std::invalid_argument& e) {
              c.error("regimes", e.what());
            }
          }
        }
      } else {
        c.error("regimes", "required");
      }
      t.cities.push_back(std::move(sel));
    }
  }
}

void read_generate(Fields f, GenerateConfig& g) {
  f.get("seed", g.seed);
  f.get("train_cities", g.train_cities);
  f.get("core_cities", g.core_cities);
  f.get("extended_cities", g.extended_cities);
  f.get("height", g.height);
  f.get("width", g.width);
  f.get("train_days", g.train_days);
  f.get("test_days", g.test_days);
}

void read_eval(Fields f, ExperimentConfig& c) {
  f.get("stride", c.eval_stride);
  f.get("max_days", c.eval_max_days);
  f.get("clamp", c.eval.clamp);
  f.get("quantize", c.eval.quantize);
  std::string scale;
  if (f.get("scale", scale)) {
    if (scale == "byte") c.eval.scale = Scale::byte;
    else if (scale == "unit") c.eval.scale = Scale::unit;
    else f.error("scale", "expected byte or unit");
  }
}

/// Range checks shared by file and command-line settings.
std::vector<std::string> range_errors(const ExperimentConfig& c) {
  std::vector<std::string> errs;
  for (const auto& e : validation_errors(c.train)) {
    if (e.rfind("cities:", 0) != 0) errs.push_back("train." + e);
  }
  for (const auto& sel : c.train.cities) {
    if (sel.regimes.empty()) errs.push_back("train.cities." + sel.city + ": no regimes selected");
  }
  if (c.train.latest_start_cap < 0) errs.push_back("train.latest_start_cap: must be >= 0");
  if (!(c.multitask_step_factor > 0)) errs.push_back("train.multitask_step_factor: must be positive");
  const std::size_t before = errs.size();
  if (c.model.depth < 1 || c.model.depth > 12) errs.push_back("model.depth: must be in [1, 12]");
  if (c.model.base_filters < 1) errs.push_back("model.base_filters: must be >= 1");
  if (c.model.group_size < 1) errs.push_back("model.group_size: must be >= 1");
  if (errs.size() == before) {
    try {
      validate(c.model);
    } catch (const std::invalid_argument& e) {
      errs.push_back(std::string("model.group_size: ") + e.what());
    }
  }
  const auto& g = c.generate;
  if (g.train_cities < 0 || g.core_cities < 0 || g.extended_cities < 0) errs.push_back("generate: city counts must be >= 0");
  if (g.train_cities + g.core_cities + g.extended_cities < 1) errs.push_back("generate: at least one city is required");
  if (g.height < 1 || g.width < 1) errs.push_back("generate: height and width must be >= 1");
  if (g.train_days < 0 || g.test_days < 0) errs.push_back("generate: day counts must be >= 0");
  if (c.eval_stride < 1) errs.push_back("eval.stride: must be >= 1");
  if (c.eval_max_days < 0) errs.push_back("eval.max_days: must be >= 0");
  if (c.validation_days < 0) errs.push_back("ablation.validation_days: must be >= 0");
  if (c.seeds.empty()) errs.push_back("seeds: at least one seed is required");
  return errs;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text, bool paper_scale, std::optional<Challenge> challenge) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw InvalidConfig({std::string("config: not valid JSON (") + e.what() + ")"});
  }
  std::vector<std::string> errs;
  Fields top(j, "", errs,
             {"data", "challenge", "mode", "seeds", "parallel", "model", "train", "generate", "eval", "ablation"});
  std::string name;
  if (!challenge && top.get("challenge", name)) {
    try {
      challenge = parse_challenge(name);
    } catch (const std::invalid_argument& e) {
      top.error("challenge", e.what());
    }
  }
  ExperimentConfig c = default_config(challenge.value_or(Challenge::core), paper_scale);
  std::string data;
  if (top.get("data", data)) c.data = data;
  std::string mode;
  if (top.get("mode", mode)) {
    if (mode == "multitask") c.mode = RunMode::multitask;
    else if (mode == "single_city") c.mode = RunMode::single_city;
    else top.error("mode", "expected multitask or single_city");
  }
  top.get("parallel", c.parallel);
  if (top.has("seeds")) {
    const json& s = top.at("seeds");
    if (!s.is_array() || std::any_of(s.begin(), s.end(), [](const json& v) { return !v.is_number_unsigned(); })) {
      top.error("seeds", "expected a list of non-negative integers");
    } else {
      c.seeds = s.get<std::vector<std::uint64_t>>();
    }
  }
  if (top.has("model")) read_model(Fields(top.at("model"), "model", errs, {"depth", "base_filters", "group_size", "group_mode"}), c.model);
  if (top.has("train")) {
    read_train(Fields(top.at("train"), "train", errs,
                      {"lr", "beta1", "beta2", "eps", "batch_size", "epochs", "max_steps", "step_scale", "lr_hold",
                       "multitask_step_factor", "sampling", "checkpoint_every", "latest_start_cap", "cities"}),
               c.train, c.multitask_step_factor, errs);
  }
  if (top.has("generate")) {
    read_generate(Fields(top.at("generate"), "generate", errs,
                         {"seed", "train_cities", "core_cities", "extended_cities", "height", "width", "train_days",
                          "test_days"}),
                  c.generate);
  }
  if (top.has("eval")) read_eval(Fields(top.at("eval"), "eval", errs, {"stride", "max_days", "scale", "clamp", "quantize"}), c);
  if (top.has("ablation")) {
    Fields a(top.at("ablation"), "ablation", errs, {"target", "validation_days"});
    a.get("target", c.ablation_target);
    a.get("validation_days", c.validation_days);
  }
  for (auto& e : range_errors(c)) errs.push_back(std::move(e));
  if (!errs.empty()) throw InvalidConfig(std::move(errs));
  return c;
}

namespace {

/// Marks failures of the run itself (exit 3) as opposed to bad arguments.
struct Session {
  std::ostream& out;
  std::ostream& err;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InvalidConfig({"--config: cannot read " + p.string()});
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CommonOptions {
  std::string config;
  std::string out;
  std::string data;
  std::string challenge;
  std::string mode;
  std::vector<std::uint64_t> seeds;
  std::optional<std::uint64_t> seed;
  std::optional<long> steps;
  std::optional<double> lr;
  std::optional<int> base_filters;
  bool paper_scale = false;
  bool parallel = false;
};

ExperimentConfig resolve(const CommonOptions& o, bool need_data) {
  std::optional<Challenge> challenge;
  std::vector<std::string> errs;
  if (!o.challenge.empty()) {
    try {
      challenge = parse_challenge(o.challenge);
    } catch (const std::invalid_argument& e) {
      errs.push_back(std::string("--challenge: ") + e.what());
    }
  }
  ExperimentConfig c;
  try {
    c = o.config.empty() ? parse_config("{}", o.paper_scale, challenge)
                         : parse_config(read_text(o.config), o.paper_scale, challenge);
  } catch (const InvalidConfig& e) {
    errs.insert(errs.end(), e.fields().begin(), e.fields().end());
  }
  if (!o.data.empty()) c.data = o.data;
  if (!o.mode.empty()) {
    if (o.mode == "multitask") c.mode = RunMode::multitask;
    else if (o.mode == "single_city") c.mode = RunMode::single_city;
    else errs.push_back("--mode: expected multitask or single_city");
  }
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (o.seed) {
    c.seeds = {*o.seed};
    c.generate.seed = *o.seed;
  }
  if (o.steps) {
    c.train.epochs.reset();
    c.train.max_steps = *o.steps;
  }
  if (o.lr) c.train.adam.lr = *o.lr;
  if (o.base_filters) c.model.base_filters = *o.base_filters;
  if (o.parallel) c.parallel = true;
  if (errs.empty()) {
    for (auto& e : range_errors(c)) errs.push_back(std::move(e));
  }
  if (need_data) {
    if (!c.data) errs.push_back("data: a dataset root is required (--data or \"data\")");
    else if (!fs::exists(*c.data / "manifest.tsv")) errs.push_back("data: no manifest.tsv under " + c.data->string());
  }
  if (!errs.empty()) throw InvalidConfig(std::move(errs));
  return c;
}

void add_common(CLI::App* cmd, CommonOptions& o, bool data = true) {
  cmd->add_option("--config", o.config, "JSON experiment config");
  cmd->add_option("--out", o.out, "Output directory")->required();
  if (data) cmd->add_option("--data", o.data, "Dataset root (overrides the config)");
  cmd->add_flag("--paper-scale", o.paper_scale, "Full-size defaults: 495x436 grid, 181 days, paper step budgets");
}

void add_seeds(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--seeds", o.seeds, "Seeds, one run each")->delimiter(',');
  cmd->add_option("--seed", o.seed, "Single seed");
}

void add_model_overrides(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--challenge", o.challenge, "core or extended");
  cmd->add_option("--steps", o.steps, "Fixed step budget (replaces epochs)");
  cmd->add_option("--lr", o.lr, "Adam learning rate");
  cmd->add_option("--base-filters", o.base_filters, "Filters of the first encoder level");
}

// --- generate ---------------------------------------------------------------

int cmd_generate(Session& s, const CommonOptions& o) {
  const ExperimentConfig c = resolve(o, false);
  const auto& g = c.generate;
  const BenchmarkRecipe r = default_recipe(g.seed, g.train_cities, g.core_cities, g.extended_cities, g.height,
                                           g.width, g.train_days, g.test_days);
  const Manifest m = make_benchmark(r.layout, r.specs, o.out);
  s.out << "generate cities=" << r.specs.size() << " movies=" << m.entries.size() << " grid=" << g.height << "x"
        << g.width << " digest=" << hex_digest(content_digest(o.out)) << "\n";
  return 0;
}

// --- train ------------------------------------------------------------------

struct Job {
  std::uint64_t seed;
  std::vector<CitySelection> cities;
  fs::path dir;
};

std::vector<CitySelection> default_selection(const ExperimentConfig& c, const Manifest& m) {
  std::vector<CitySelection> sel;
  for (const auto& city : m.cities(CityRole::train)) sel.push_back({city, {Regime::pre_covid, Regime::in_covid}});
  if (c.challenge == Challenge::core) {
    for (const auto& city : m.cities(CityRole::core)) sel.push_back({city, {Regime::pre_covid}});
  }
  return sel;
}

std::string describe(const std::vector<CitySelection>& sel) {
  std::vector<std::string> parts;
  for (const auto& c : sel) {
    std::vector<std::string> rs;
    for (Regime r : c.regimes) rs.push_back(std::to_string(year_of(r)));
    parts.push_back(c.city + ":" + join(rs, "+"));
  }
  return join(parts, ",");
}

std::string run_job(const ExperimentConfig& c, const Manifest& m, const AccessGuard& guard, const Job& job) {
  TrainConfig tc = c.train;
  tc.cities = job.cities;
  tc.seed = job.seed;
  tc.run_dir = job.dir;
  UNetConfig mc = c.model;
  mc.seed = job.seed;
  const TrainingData data = load_training_data(*c.data, m, job.cities, guard, tc.latest_start_cap);
  UNetModel<float> model = build_unet<float>(mc);
  const RunRecord rec = train(model, tc, data);
  std::ostringstream os;
  os << "train seed=" << job.seed << " cities=" << describe(job.cities) << " steps=" << rec.losses.size()
     << " final_loss=" << (rec.losses.empty() ? std::string("-") : fmt("%.6e", rec.losses.back()))
     << " model=" << job.dir.string() << "/model.gct digest="
     << hex_digest(content_digest(job.dir / "model.gct")) << "\n";
  return os.str();
}

int cmd_train(Session& s, const CommonOptions& o) {
  const ExperimentConfig c = resolve(o, true);
  const Manifest m = read_manifest(*c.data / "manifest.tsv");
  const AccessGuard guard = training_guard(m, c.challenge);
  std::vector<Job> jobs;
  for (std::uint64_t seed : c.seeds) {
    const fs::path base = fs::path(o.out) / ("seed-" + std::to_string(seed));
    if (!c.train.cities.empty()) {
      jobs.push_back({seed, c.train.cities, base});
    } else if (c.mode == RunMode::multitask) {
      jobs.push_back({seed, default_selection(c, m), base});
    } else if (c.challenge == Challenge::core) {
      for (const auto& city : m.cities(CityRole::core)) jobs.push_back({seed, {{city, {Regime::pre_covid}}}, base / city});
    } else {
      const auto train = m.cities(CityRole::train);
      if (train.empty()) throw std::runtime_error("benchmark has no train cities");
      jobs.push_back({seed, {{train[0], {Regime::pre_covid, Regime::in_covid}}}, base / train[0]});
    }
  }
  std::vector<std::string> lines(jobs.size());
  if (c.parallel) {
    std::vector<std::future<std::string>> futures;
    for (const auto& job : jobs) futures.push_back(std::async(std::launch::async, [&, job] { return run_job(c, m, guard, job); }));
    for (std::size_t i = 0; i < jobs.size(); ++i) lines[i] = futures[i].get();
  } else {
    for (std::size_t i = 0; i < jobs.size(); ++i) lines[i] = run_job(c, m, guard, jobs[i]);
  }
  for (const auto& l : lines) s.out << l;
  return 0;
}

// --- predict / ensemble -------------------------------------------------------

/// Models of one run directory: `model.gct` (shared) or `<city>/model.gct`.
struct RunModels {
  std::optional<UNetModel<float>> shared;
  std::map<std::string, UNetModel<float>> per_city;
};

RunModels load_run(const fs::path& dir) {
  RunModels r;
  if (fs::is_regular_file(dir)) {
    r.shared = load_checkpoint<float>(dir);
    return r;
  }
  if (fs::exists(dir / "model.gct")) {
    r.shared = load_checkpoint<float>(dir / "model.gct");
    return r;
  }
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_directory() && fs::exists(e.path() / "model.gct")) {
        r.per_city.emplace(e.path().filename().string(), load_checkpoint<float>(e.path() / "model.gct"));
      }
    }
  }
  if (r.per_city.empty()) throw std::runtime_error("no model.gct found in " + dir.string());
  return r;
}

ModelLookup lookup_for(const std::vector<RunModels>& runs) {
  return [&runs](const std::string& city) {
    std::vector<const UNetModel<float>*> ms;
    for (const auto& r : runs) {
      if (r.shared) ms.push_back(&*r.shared);
      else if (auto it = r.per_city.find(city); it != r.per_city.end()) ms.push_back(&it->second);
      else throw std::runtime_error("run has no model for city " + city);
    }
    return ms;
  };
}

std::vector<TestInstance> plan(const ExperimentConfig& c, const Manifest& m) {
  return test_instances(*c.data, m, test_selection(m, c.challenge), test_guard(m, c.challenge), c.eval_stride,
                        c.eval_max_days);
}

void check_paths(const std::vector<std::string>& paths, const std::string& flag) {
  std::vector<std::string> errs;
  for (const auto& p : paths) {
    if (!fs::exists(p)) errs.push_back(flag + ": " + p + " does not exist");
  }
  if (!errs.empty()) throw InvalidConfig(std::move(errs));
}

std::string summary(const std::string& cmd, const PredictionSet& set, std::size_t members, const fs::path& out) {
  std::set<std::string> files;
  for (const auto& i : set.instances) files.insert(i.city + "-" + to_string(i.regime));
  std::ostringstream os;
  os << cmd << " members=" << members << " instances=" << set.instances.size() << " files=" << files.size()
     << " digest=" << hex_digest(content_digest(out)) << "\n";
  return os.str();
}

int cmd_predict(Session& s, const CommonOptions& o, const std::vector<std::string>& runs, const std::string& name) {
  if (runs.empty()) throw InvalidConfig({"--run: at least one run directory or checkpoint is required"});
  const ExperimentConfig c = resolve(o, true);
  check_paths(runs, "--run");
  const Manifest m = read_manifest(*c.data / "manifest.tsv");
  std::vector<RunModels> models;
  for (const auto& r : runs) models.push_back(load_run(r));
  const PredictionSet set = predict_instances(plan(c, m), *c.data, lookup_for(models));
  write_predictions(o.out, set);
  s.out << summary(name, set, runs.size(), o.out);
  return 0;
}

int cmd_ensemble(Session& s, const CommonOptions& o, const std::vector<std::string>& runs,
                 const std::vector<std::string>& preds) {
  if (runs.empty() == preds.empty()) {
    throw InvalidConfig({"ensemble: give either --run directories or --pred directories"});
  }
  if (!runs.empty()) return cmd_predict(s, o, runs, "ensemble");
  const ExperimentConfig c = resolve(o, true);
  check_paths(preds, "--pred");
  const Manifest m = read_manifest(*c.data / "manifest.tsv");
  std::vector<PredictionSet> sets;
  for (const auto& p : preds) sets.push_back(read_predictions(p, *c.data, m));
  const PredictionSet avg = average_predictions(sets);
  write_predictions(o.out, avg);
  s.out << summary("ensemble", avg, preds.size(), o.out);
  return 0;
}

// --- evaluate ---------------------------------------------------------------

void write_report(const fs::path& dir, const ResultTable& t) {
  fs::create_directories(dir);
  std::ofstream(dir / "report.csv") << t.csv();
  std::ofstream(dir / "report.txt") << t.text();
}

int cmd_evaluate(Session& s, const CommonOptions& o, const std::vector<std::string>& preds, bool naive) {
  if (preds.empty() && !naive) throw InvalidConfig({"evaluate: give at least one --pred label=dir or --naive"});
  std::vector<std::pair<std::string, std::string>> labelled;
  std::vector<std::string> errs, dirs;
  for (const auto& p : preds) {
    const auto eq = p.find('=');
    if (eq == std::string::npos || eq == 0) errs.push_back("--pred: expected label=dir, got '" + p + "'");
    else {
      labelled.push_back({p.substr(0, eq), p.substr(eq + 1)});
      dirs.push_back(p.substr(eq + 1));
    }
  }
  if (!errs.empty()) throw InvalidConfig(std::move(errs));
  const ExperimentConfig c = resolve(o, true);
  check_paths(dirs, "--pred");
  const Manifest m = read_manifest(*c.data / "manifest.tsv");
  const std::string split = to_string(c.challenge) + " test";
  ResultTable table;
  table.title = "Evaluation on " + split;
  std::optional<std::vector<TestInstance>> instances;
  for (const auto& [label, dir] : labelled) {
    const PredictionSet set = read_predictions(dir, *c.data, m);
    if (!instances) instances = set.instances;
    table.reports.push_back(score_predictions(set, label, split, c.eval));
  }
  if (naive) {
    const auto inst = instances ? *instances : plan(c, m);
    auto rep = score_predictions(naive_average_instances(inst), "Naive Average", split, c.eval);
    table.reports.insert(table.reports.begin(), std::move(rep));
  }
  write_report(o.out, table);
  for (const auto& r : table.reports) {
    Index n = 0;
    for (const auto& city : r.per_city) n += city.n_instances;
    s.out << "evaluate method=\"" << r.method << "\" aggregate=" << fmt("%.6f", r.aggregate)
          << " cities=" << r.per_city.size() << " instances=" << n << "\n";
  }
  return 0;
}

// --- protocol ----------------------------------------------------------------

int cmd_protocol(Session& s, const CommonOptions& o, const std::string& kind, bool keep_runs, bool verbose) {
  if (kind != "core" && kind != "extended" && kind != "ablation") {
    throw InvalidConfig({"--kind: expected core, extended or ablation"});
  }
  CommonOptions oo = o;
  if (oo.challenge.empty()) oo.challenge = kind == "extended" ? "extended" : "core";
  const ExperimentConfig c = resolve(oo, true);
  ProtocolConfig pc;
  pc.root = *c.data;
  pc.model = c.model;
  pc.train = c.train;
  pc.seeds = c.seeds;
  pc.eval_stride = c.eval_stride;
  pc.eval_max_days = c.eval_max_days;
  pc.eval = c.eval;
  pc.extra_cities = c.train.cities;
  pc.multitask_step_factor = c.multitask_step_factor;
  if (keep_runs) pc.out_dir = fs::path(o.out) / "runs";
  if (verbose) pc.log = [&s](const std::string& line) { s.err << line << std::endl; };
  ProtocolResult res;
  if (kind == "core") res = run_core_protocol(pc);
  else if (kind == "extended") res = run_extended_protocol(pc);
  else res = run_mixture_ablation({pc, c.ablation_target, c.validation_days});
  write_report(o.out, res.table);
  s.out << res.table.text();
  for (const auto& [family, reps] : res.per_seed) {
    for (const auto& r : reps) {
      s.out << "seed " << r.seeds.at(0) << " " << family << " aggregate=" << fmt("%.6f", r.aggregate) << "\n";
    }
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Grid traffic forecasting with multi-task U-Nets", "gridcast"};
  app.require_subcommand(1);
  Session session{out, err};

  CommonOptions gen_o, train_o, pred_o, ens_o, eval_o, proto_o;
  std::vector<std::string> pred_runs, ens_runs, ens_preds, eval_preds;
  bool naive = false, keep_runs = false, verbose = false;
  std::string kind;

  auto* gen = app.add_subcommand("generate", "Write a synthetic benchmark");
  add_common(gen, gen_o, false);
  gen->add_option("--seed", gen_o.seed, "Generator seed");

  auto* tr = app.add_subcommand("train", "Train one model per seed");
  add_common(tr, train_o);
  add_seeds(tr, train_o);
  add_model_overrides(tr, train_o);
  tr->add_option("--mode", train_o.mode, "multitask or single_city");
  tr->add_flag("--parallel", train_o.parallel, "Train seeds concurrently");

  auto* pr = app.add_subcommand("predict", "Predict the test split with trained models");
  add_common(pr, pred_o);
  pr->add_option("--challenge", pred_o.challenge, "core or extended");
  pr->add_option("--run", pred_runs, "Run directory or checkpoint (repeat to average)");

  auto* en = app.add_subcommand("ensemble", "Average several runs or prediction sets");
  add_common(en, ens_o);
  en->add_option("--challenge", ens_o.challenge, "core or extended");
  en->add_option("--run", ens_runs, "Run directory (repeatable)");
  en->add_option("--pred", ens_preds, "Prediction directory (repeatable)");

  auto* ev = app.add_subcommand("evaluate", "Score prediction sets");
  add_common(ev, eval_o);
  ev->add_option("--challenge", eval_o.challenge, "core or extended");
  ev->add_option("--pred", eval_preds, "label=dir (repeatable)");
  ev->add_flag("--naive", naive, "Include the Naive Average baseline");

  auto* pt = app.add_subcommand("protocol", "Run a full experiment protocol");
  add_common(pt, proto_o);
  add_seeds(pt, proto_o);
  add_model_overrides(pt, proto_o);
  pt->add_option("--kind", kind, "core, extended or ablation")->required();
  pt->add_flag("--keep-runs", keep_runs, "Keep run directories under <out>/runs");
  pt->add_flag("--verbose", verbose, "Progress on stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_generate(session, gen_o);
    if (tr->parsed()) return cmd_train(session, train_o);
    if (pr->parsed()) return cmd_predict(session, pred_o, pred_runs, "predict");
    if (en->parsed()) return cmd_ensemble(session, ens_o, ens_runs, ens_preds);
    if (ev->parsed()) return cmd_evaluate(session, eval_o, eval_preds, naive);
    if (pt->parsed()) return cmd_protocol(session, proto_o, kind, keep_runs, verbose);
  } catch (const InvalidConfig& e) {
    for (const auto& f : e.fields()) err << "error: " << f << "\n";
    return 2;
  } catch (const LeakError& e) {
    err << "error: leak guard: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

}  // namespace gridcast
