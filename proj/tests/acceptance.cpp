// Acceptance suite: one PASS/FAIL line per criterion.
//
//   gridcast_acceptance --criterion N [--work DIR] [--keep]
//
// Exit status 0 when the criterion passes, 1 when it fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "gridcast/cli.hpp"
#include "gridcast/evaluation.hpp"
#include "gridcast/tensor_io.hpp"
#include "gridcast/training.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace gridcast;
using namespace gridcast::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "gridcast");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

// --- 1: gradients -------------------------------------------------------------

Outcome gradients() {
  const auto start = std::chrono::steady_clock::now();
  using NodeId = GradGraph::NodeId;
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> c13(1, 3), s36(3, 6), bit(0, 1);
  std::map<std::string, double> worst;
  auto note = [&](const std::string& op, double e) { worst[op] = std::max(worst[op], e); };

  for (int i = 0; i < 20; ++i) {
    const Index cin = c13(rng), cout = c13(rng), h = s36(rng), w = s36(rng);
    const Index k = bit(rng) ? 3 : 1, pad = k == 3 ? bit(rng) : 0, stride = 1 + bit(rng);
    GradOp op = [&](GradGraph& g, const std::vector<NodeId>& in) { return g.conv2d(in[0], in[1], in[2], pad, stride); };
    note("conv2d", op_gradient_error(
                       op, {random_tensor({cin, h, w}, rng), random_tensor({cout, cin, k, k}, rng), random_tensor({cout}, rng)},
                       rng));
  }
  {
    // Above the im2col cutoff, so the shifted-GEMM path is exercised.
    GradOp op = [](GradGraph& g, const std::vector<NodeId>& in) { return g.conv2d(in[0], in[1], in[2], 1, 1); };
    note("conv2d", op_gradient_error(
                       op, {random_tensor({2, 33, 34}, rng), random_tensor({2, 2, 3, 3}, rng), random_tensor({2}, rng)},
                       rng));
  }
  for (int i = 0; i < 20; ++i) {
    const Index cin = c13(rng), cout = c13(rng);
    GradOp op = [](GradGraph& g, const std::vector<NodeId>& in) { return g.conv_transpose2d(in[0], in[1], in[2]); };
    note("conv_transpose2d",
         op_gradient_error(op,
                           {random_tensor({cin, c13(rng), c13(rng)}, rng), random_tensor({cin, cout, 2, 2}, rng),
                            random_tensor({cout}, rng)},
                           rng));
  }
  for (int i = 0; i < 20; ++i) {
    GradOp op = [](GradGraph& g, const std::vector<NodeId>& in) { return g.maxpool2(in[0]); };
    note("maxpool2", op_gradient_error(op, {random_tensor({c13(rng), 2 * c13(rng), 2 * c13(rng)}, rng)}, rng));
  }
  for (int i = 0; i < 20; ++i) {
    const Index cpg = c13(rng), c = cpg * c13(rng);
    GradOp op = [cpg](GradGraph& g, const std::vector<NodeId>& in) { return g.group_norm(in[0], in[1], in[2], cpg); };
    note("group_norm", op_gradient_error(op,
                                         {random_tensor({c, s36(rng), s36(rng)}, rng), random_tensor({c}, rng, 0.5, 1.5),
                                          random_tensor({c}, rng)},
                                         rng));
  }
  for (int i = 0; i < 20; ++i) {
    GradOp op = [](GradGraph& g, const std::vector<NodeId>& in) { return g.relu(in[0]); };
    note("relu", op_gradient_error(op, {away_from_zero(random_tensor({2, 3, 4}, rng))}, rng));
    const Index h = s36(rng), w = s36(rng);
    GradOp cat = [](GradGraph& g, const std::vector<NodeId>& in) { return g.concat_channels(in[0], in[1]); };
    note("concat", op_gradient_error(cat, {random_tensor({c13(rng), h, w}, rng), random_tensor({c13(rng), h, w}, rng)}, rng));
    GradOp pad = [h, w](GradGraph& g, const std::vector<NodeId>& in) { return g.pad(in[0], h + 2, w + 1); };
    note("pad/mse", op_gradient_error(pad, {random_tensor({c13(rng), h, w}, rng)}, rng));
    GradOp crop = [h, w](GradGraph& g, const std::vector<NodeId>& in) { return g.crop(in[0], h - 1, w - 1); };
    note("crop", op_gradient_error(crop, {random_tensor({c13(rng), h, w}, rng)}, rng));
  }
  double op_worst = 0;
  for (const auto& [op, e] : worst) op_worst = std::max(op_worst, e);

  double e2e = 0;
  for (int depth : {1, 2}) {
    UNetConfig cfg;
    cfg.depth = depth;
    cfg.base_filters = 8;
    cfg.in_channels = 4;
    cfg.out_channels = 2;
    cfg.seed = static_cast<std::uint64_t>(20 + depth);
    e2e = std::max(e2e, unet_gradient_error(cfg, random_tensor({4, 8, 8}, rng), random_tensor({2, 8, 8}, rng)));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::string detail = "worst op rel err " + fmt("%.2e", op_worst) + " (<= 1e-4), U-Net K=1,2 " + fmt("%.2e", e2e) +
                       " (<= 1e-3), " + fmt("%.1f", secs) + " s (< 60 s);";
  for (const auto& [op, e] : worst) detail += " " + op + "=" + fmt("%.1e", e);
  return {op_worst <= 1e-4 && e2e <= 1e-3 && secs < 60, detail};
}

// --- 2: Eq. 1 oracle ------------------------------------------------------------

Outcome metric_oracle() {
  std::mt19937_64 rng(202);
  double worst = 0;
  std::size_t instances = 0;
  for (int trial = 0; trial < 3; ++trial) {
    const auto cities = random_cities(rng, 9, 3, 4);
    instances += instance_count(cities);
    worst = std::max(worst, std::abs(evaluate(cities, {Scale::unit, true, false}).aggregate - eq1_oracle(cities, 1)));
    // Byte scale compared relative to its magnitude (values up to 255^2).
    const double byte = evaluate(cities, {Scale::byte, true, false}).aggregate;
    worst = std::max(worst, std::abs(byte - eq1_oracle(cities, 255)) / byte);
  }
  const std::size_t windows = build_window_index(288, 240).valid_starts.size();
  return {worst <= 1e-12 && instances >= 50 && windows == 241,
          std::to_string(instances) + " instances, worst |evaluator - oracle| " + fmt("%.2e", worst) +
              " (<= 1e-12); window count T=288 cap=240: " + std::to_string(windows) + " (== 241)"};
}

// --- 3: shapes and checkpoints ----------------------------------------------------

Outcome shape_contract(const fs::path& work) {
  UNetConfig cfg = UNetConfig::core();
  cfg.seed = 3;
  const auto model = build_unet<float>(cfg);
  std::mt19937_64 rng(303);
  std::string detail;
  bool ok = true;
  for (auto [h, w] : {std::pair<Index, Index>{64, 64}, {49, 43}}) {
    const Shape out = forward(model, random_tensor<float>({105, h, w}, rng, 0, 1)).shape();
    const bool good = out == Shape{48, h, w};
    ok = ok && good;
    detail += "(105," + std::to_string(h) + "," + std::to_string(w) + ")->" + to_string(out) + "; ";
  }
  const Index bridge = model.parameters.at("bridge.conv2.w").dim(0);
  const bool bridge_ok = bridge == Index{cfg.base_filters} << cfg.depth;
  detail += "bridge " + std::to_string(bridge) + " == " + std::to_string(cfg.base_filters) + "*2^" +
            std::to_string(cfg.depth) + "; ";

  const fs::path a = work / "a.gct", b = work / "b.gct";
  fs::create_directories(work);
  save_checkpoint(a, model);
  const auto back = load_checkpoint<float>(a);
  save_checkpoint(b, back);
  bool exact = back.parameters.size() == model.parameters.size();
  for (const auto& [name, p] : model.parameters) {
    const auto& q = back.parameters.at(name);
    exact = exact && p.shape() == q.shape() &&
            std::memcmp(p.data(), q.data(), static_cast<std::size_t>(p.size()) * sizeof(float)) == 0;
  }
  exact = exact && read_text(a) == read_text(b);
  detail += std::string("checkpoint round trip ") + (exact ? "bit-exact" : "differs");
  return {ok && bridge_ok && exact, detail};
}

// --- 4 and 5: benchmark protocols -------------------------------------------------

// The benchmark: 4 train and 4 core cities on a 64x64 grid, 20 days per regime.
constexpr const char* kBenchmarkConfig = R"({
  "generate": {"train_cities": 4, "core_cities": 4, "extended_cities": 0,
               "height": 64, "width": 64, "train_days": 20, "test_days": 20}
})";

// K = 4 model on a fixed step budget. The multi-task model gets the combined
// budget of the four single-city models it replaces.
constexpr const char* kProtocolConfig = R"({
  "seeds": [1, 2, 3],
  "model": {"depth": 4, "base_filters": 8},
  "train": {"lr": 0.01, "batch_size": 4, "max_steps": 1200, "lr_hold": 0.55, "multitask_step_factor": 4},
  "eval": {"stride": 48}
})";

constexpr std::uint64_t kBenchmarkSeed = 7;

/// Method -> ALL-row MSE from a report.csv.
std::map<std::string, double> aggregates(const fs::path& csv) {
  std::map<std::string, double> out;
  std::istringstream in(read_text(csv));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    if (f.size() >= 4 && f[1] == "ALL") out[f[0]] = std::stod(f[3]);
  }
  return out;
}

/// Family -> per-seed aggregates, from the protocol's "seed N family aggregate=X" lines.
std::map<std::string, std::map<int, double>> per_seed(const std::string& stdout_text) {
  std::map<std::string, std::map<int, double>> out;
  std::istringstream in(stdout_text);
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("seed ", 0) != 0) continue;
    const auto agg = line.rfind(" aggregate=");
    if (agg == std::string::npos) continue;
    const auto sp = line.find(' ', 5);
    out[line.substr(sp + 1, agg - sp - 1)][std::stoi(line.substr(5, sp - 5))] = std::stod(line.substr(agg + 11));
  }
  return out;
}

struct Bench {
  fs::path root;
  fs::path config;
  std::string error;
};

Bench make_bench(const fs::path& work) {
  Bench b{work / "benchmark", work / "protocol.json", ""};
  write_text(work / "benchmark.json", kBenchmarkConfig);
  write_text(b.config, kProtocolConfig);
  if (fs::exists(b.root / "manifest.tsv")) return b;
  const auto r = cli({"generate", "--config", (work / "benchmark.json").string(), "--out", b.root.string(), "--seed",
                      std::to_string(kBenchmarkSeed)});
  if (r.code != 0) b.error = "generate failed: " + r.err;
  return b;
}

Outcome core_table(const fs::path& work, bool verbose) {
  const double cpu0 = cpu_seconds();
  const Bench b = make_bench(work);
  if (!b.error.empty()) return {false, b.error};
  std::vector<std::string> args{"protocol", "--kind",   "core",           "--data", b.root.string(),
                                "--out",    (work / "core").string(), "--config", b.config.string()};
  if (verbose) args.push_back("--verbose");
  const auto r = cli(args);
  const double cpu = cpu_seconds() - cpu0;
  if (r.code != 0) return {false, "protocol exited " + std::to_string(r.code) + ": " + r.err};

  const auto table = aggregates(work / "core" / "report.csv");
  const auto seeds = per_seed(r.out);
  const double naive = table.at("Naive Average"), single = table.at("U-Net single-city");
  int mtl_wins = 0;
  std::string per;
  for (const auto& [seed, s] : seeds.at("single_city")) {
    const double m = seeds.at("multitask").at(seed);
    mtl_wins += m <= s;
    per += " seed " + std::to_string(seed) + ": multi-task " + fmt("%.3f", m) + " vs single-city " + fmt("%.3f", s) + ";";
  }
  const double gain = 1 - single / naive;
  const bool pass = gain >= 0.2 && mtl_wins >= 2 && cpu <= 1800;
  return {pass, "Naive " + fmt("%.3f", naive) + ", single-city " + fmt("%.3f", single) + " (" +
                    fmt("%.1f", 100 * gain) + "% better, need >= 20%), multi-task <= single-city in " +
                    std::to_string(mtl_wins) + "/3 seeds (need >= 2);" + per + " CPU " + fmt("%.0f", cpu) +
                    " s (<= 1800 s)"};
}

Outcome mixture_table(const fs::path& work, bool verbose) {
  const Bench b = make_bench(work);
  if (!b.error.empty()) return {false, b.error};
  std::vector<std::string> args{"protocol", "--kind",   "ablation",           "--data", b.root.string(),
                                "--out",    (work / "ablation").string(), "--config", b.config.string()};
  if (verbose) args.push_back("--verbose");
  const auto r = cli(args);
  if (r.code != 0) return {false, "protocol exited " + std::to_string(r.code) + ": " + r.err};

  const std::string best = "target 2019 + others 2019+2020", worst = "others 2019+2020";
  const auto seeds = per_seed(r.out);
  int hits = 0;
  std::string per;
  for (const auto& [seed, score] : seeds.at(best)) {
    std::string lo, hi;
    for (const auto& [label, by_seed] : seeds) {
      const double v = by_seed.at(seed);
      if (lo.empty() || v < seeds.at(lo).at(seed)) lo = label;
      if (hi.empty() || v > seeds.at(hi).at(seed)) hi = label;
    }
    hits += lo == best && hi == worst;
    per += " seed " + std::to_string(seed) + ": best '" + lo + "', worst '" + hi + "';";
  }
  return {hits >= 2, "expected best '" + best + "' and worst '" + worst + "' in " + std::to_string(hits) +
                         "/3 seeds (need >= 2);" + per};
}

// --- 6: ensemble ----------------------------------------------------------------

Outcome jensen() {
  std::mt19937_64 rng(606);
  std::uniform_int_distribution<int> members(2, 5);
  int violations = 0;
  double tightest = 1e300;
  for (int draw = 0; draw < 100; ++draw) {
    UNetConfig cfg;
    cfg.depth = 1;
    cfg.base_filters = 8;
    cfg.in_channels = 4;
    cfg.out_channels = 3;
    std::vector<UNetModel<double>> models;
    const int m = members(rng);
    for (int k = 0; k < m; ++k) {
      cfg.seed = rng();
      models.push_back(build_unet<double>(cfg));
    }
    const auto x = random_tensor({4, 8, 8}, rng);
    const auto target = random_tensor({3, 8, 8}, rng);
    double mean_member = 0;
    for (const auto& model : models) mean_member += mse(forward(model, x), target) / m;
    const double ens = mse(ensemble_predict<double>(models, x), target);
    violations += ens > mean_member;
    tightest = std::min(tightest, mean_member - ens);
  }
  return {violations == 0, std::to_string(violations) + " violations in 100 draws; smallest margin " +
                               fmt("%.3e", tightest)};
}

// --- 7: determinism ---------------------------------------------------------------

constexpr const char* kTinyConfig = R"({
  "seeds": [1, 2],
  "model": {"depth": 2, "base_filters": 8},
  "train": {"max_steps": 6, "batch_size": 2, "lr": 0.001, "checkpoint_every": 3},
  "generate": {"train_cities": 2, "core_cities": 2, "extended_cities": 1,
               "height": 16, "width": 16, "train_days": 2, "test_days": 1},
  "eval": {"stride": 60}
})";

/// Everything a run should reproduce: benchmark bytes, loss values,
/// checkpoints and reports. Wall-clock fields (loss.csv's wall_ms, the text
/// table's training-time column) are left out.
std::map<std::string, std::string> fingerprint(const fs::path& dir) {
  std::map<std::string, std::string> out;
  out["benchmark"] = hex_digest(content_digest(dir / "data"));
  for (const auto& e : fs::recursive_directory_iterator(dir / "report")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).string();
    const auto name = e.path().filename().string();
    if (e.path().extension() == ".gct") {
      out[rel] = read_text(e.path());
    } else if (name == "loss.csv") {
      std::istringstream in(read_text(e.path()));
      std::string losses;
      for (std::string line; std::getline(in, line);) losses += line.substr(0, line.rfind(',')) + "\n";
      out[rel] = losses;
    } else if (name == "report.txt") {
      std::istringstream in(read_text(e.path()));
      std::string kept;
      for (std::string line; std::getline(in, line);) kept += line.substr(0, line.rfind(' ')) + "\n";
      out[rel] = kept;
    } else {
      out[rel] = read_text(e.path());
    }
  }
  return out;
}

Outcome determinism(const fs::path& work) {
  std::vector<std::map<std::string, std::string>> prints;
  for (const char* tag : {"first", "second"}) {
    const fs::path dir = work / tag;
    fs::remove_all(dir);
    write_text(dir / "tiny.json", kTinyConfig);
    const std::string cfg = (dir / "tiny.json").string();
    auto r = cli({"generate", "--config", cfg, "--out", (dir / "data").string(), "--seed", "11"});
    if (r.code != 0) return {false, "generate failed: " + r.err};
    r = cli({"protocol", "--kind", "core", "--keep-runs", "--config", cfg, "--data", (dir / "data").string(), "--out",
             (dir / "report").string()});
    if (r.code != 0) return {false, "protocol failed: " + r.err};
    prints.push_back(fingerprint(dir));
  }
  std::size_t checkpoints = 0, losses = 0, differing = 0;
  std::string first_diff;
  for (const auto& [k, v] : prints[0]) {
    checkpoints += k.ends_with(".gct");
    losses += k.ends_with("loss.csv");
    const auto it = prints[1].find(k);
    if (it == prints[1].end() || it->second != v) {
      ++differing;
      if (first_diff.empty()) first_diff = k;
    }
  }
  const bool same = differing == 0 && prints[0].size() == prints[1].size();
  return {same && checkpoints > 0 && losses > 0,
          std::to_string(prints[0].size()) + " artifacts (" + std::to_string(checkpoints) + " checkpoints, " +
              std::to_string(losses) + " loss histories, benchmark, reports) compared across two runs: " +
              (same ? "bit-identical" : std::to_string(differing) + " differ, first " + first_diff)};
}

// --- 8: leak guard ----------------------------------------------------------------

Outcome leak_guard(const fs::path& work) {
  fs::remove_all(work);
  write_text(work / "tiny.json", kTinyConfig);
  const std::string data = (work / "data").string();
  auto g = cli({"generate", "--config", (work / "tiny.json").string(), "--out", data, "--seed", "12"});
  if (g.code != 0) return {false, "generate failed: " + g.err};

  struct Injection {
    std::string name, kind, challenge, city, regime;
  };
  // Each injection adds one forbidden (city, regime) to the training selection.
  const std::vector<Injection> cases{
      {"train core <- core0 in-Covid", "train", "core", "core0", "in_covid"},
      {"train core <- ext0 2019", "train", "core", "ext0", "pre_covid"},
      {"train extended <- core0 2019", "train", "extended", "core0", "pre_covid"},
      {"protocol core <- core1 in-Covid", "core", "core", "core1", "in_covid"},
      {"protocol extended <- ext0 in-Covid", "extended", "extended", "ext0", "in_covid"},
      {"protocol extended <- core0 2019", "extended", "extended", "core0", "pre_covid"},
  };
  int caught = 0;
  std::string detail;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    const fs::path cfg = work / ("leak" + std::to_string(i) + ".json");
    write_text(cfg, R"({"seeds": [1], "model": {"depth": 1, "base_filters": 8}, "eval": {"stride": 120},
                        "train": {"max_steps": 1, "batch_size": 1, "cities": [{"city": ")" +
                        c.city + R"(", "regimes": [")" + c.regime + R"("]}]}})");
    const std::string out = (work / ("out" + std::to_string(i))).string();
    std::vector<std::string> args = c.kind == "train"
                                        ? std::vector<std::string>{"train", "--data", data, "--out", out}
                                        : std::vector<std::string>{"protocol", "--kind", c.kind, "--data", data, "--out", out};
    args.insert(args.end(), {"--config", cfg.string(), "--challenge", c.challenge});
    const auto r = cli(args);
    const bool ok = r.code == 3 && r.err.find("leak guard") != std::string::npos &&
                    r.err.find(c.city + "/" + c.regime) != std::string::npos;
    caught += ok;
    detail += " " + c.name + ": exit " + std::to_string(r.code) + (ok ? "" : " (" + r.err + ")") + ";";
  }
  // Control: the same runs without an injection succeed.
  write_text(work / "clean.json", R"({"seeds": [1], "model": {"depth": 1, "base_filters": 8}, "eval": {"stride": 120},
                                      "train": {"max_steps": 1, "batch_size": 1}})");
  const auto clean = cli({"protocol", "--kind", "core", "--data", data, "--out", (work / "clean").string(), "--config",
                          (work / "clean.json").string()});
  detail += " uninjected core protocol: exit " + std::to_string(clean.code);
  return {caught == static_cast<int>(cases.size()) && clean.code == 0,
          std::to_string(caught) + "/" + std::to_string(cases.size()) + " injected reads stopped with exit 3;" + detail};
}

const std::map<int, std::string> kNames{
    {1, "gradient suite"},          {2, "Eq. 1 oracle"},         {3, "shape and checkpoint contract"},
    {4, "core benchmark ordering"}, {5, "data-mixture ordering"}, {6, "ensemble Jensen property"},
    {7, "determinism"},             {8, "leak guard"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridcast acceptance suite"};
  int criterion = 0;
  std::string work_arg;
  bool keep = false, verbose = false;
  app.add_option("--criterion", criterion, "Criterion number")->required()->check(CLI::Range(1, 8));
  app.add_option("--work", work_arg, "Scratch directory (default: a fresh temporary directory)");
  app.add_flag("--keep", keep, "Keep the scratch directory");
  app.add_flag("--verbose", verbose, "Protocol progress on stderr");
  CLI11_PARSE(app, argc, argv);

  const fs::path work = work_arg.empty() ? fs::temp_directory_path() / ("gridcast-acceptance-" +
                                                                          std::to_string(criterion) + "-" +
                                                                          std::to_string(::getpid()))
                                         : fs::path(work_arg);
  fs::create_directories(work);
  Outcome o;
  try {
    switch (criterion) {
      case 1: o = gradients(); break;
      case 2: o = metric_oracle(); break;
      case 3: o = shape_contract(work); break;
      case 4: o = core_table(work, verbose); break;
      case 5: o = mixture_table(work, verbose); break;
      case 6: o = jensen(); break;
      case 7: o = determinism(work); break;
      case 8: o = leak_guard(work); break;
    }
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!keep && work_arg.empty()) fs::remove_all(work);
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << criterion << " (" << kNames.at(criterion)
            << "): " << o.detail << std::endl;
  return o.pass ? 0 : 1;
}
