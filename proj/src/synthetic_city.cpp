#include "gridcast/synthetic_city.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "gridcast/tensor_io.hpp"

namespace gridcast {

std::string to_string(Regime r) { return r == Regime::pre_covid ? "pre_covid" : "in_covid"; }

Regime parse_regime(const std::string& s) {
  if (s == "pre_covid" || s == "2019") return Regime::pre_covid;
  if (s == "in_covid" || s == "2020") return Regime::in_covid;
  throw std::invalid_argument("unknown regime '" + s + "' (expected pre_covid or in_covid)");
}

std::string to_string(CityRole r) {
  switch (r) {
    case CityRole::train: return "train";
    case CityRole::core: return "core";
    case CityRole::extended: return "extended";
  }
  return "?";
}

CityRole parse_role(const std::string& s) {
  if (s == "train") return CityRole::train;
  if (s == "core") return CityRole::core;
  if (s == "extended") return CityRole::extended;
  throw std::invalid_argument("unknown city role '" + s + "'");
}

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split split_of(CityRole role, Regime regime) {
  switch (role) {
    case CityRole::train: return Split::train;
    case CityRole::core: return regime == Regime::pre_covid ? Split::train : Split::test;
    case CityRole::extended: return Split::test;
  }
  return Split::test;
}

void validate(const CitySpec& s) {
  auto fail = [&](const std::string& field, const std::string& why) {
    throw std::invalid_argument("city '" + s.city_id + "': " + field + " " + why);
  };
  if (s.city_id.empty()) fail("city_id", "must be non-empty");
  if (s.height < 8 || s.width < 8) fail("grid", "must be at least 8x8");
  if (s.bins < 36) fail("bins", "must be at least 36");
  if (!(s.base_volume > 0)) fail("base_volume", "must be positive");
  if (!(s.base_speed > 0)) fail("base_speed", "must be positive");
  for (const auto& r : s.rush_hours) {
    if (r.center < 0 || r.center > static_cast<double>(s.bins - 1)) fail("rush_hours.center", "outside the day");
    if (!(r.width > 0)) fail("rush_hours.width", "must be positive");
  }
  if (!(s.covid_volume_factor > 0 && s.covid_volume_factor <= 1)) fail("covid_volume_factor", "must be in (0, 1]");
  if (!(s.noise_level >= 0)) fail("noise_level", "must be >= 0");
}

CitySpec random_city_spec(const std::string& city_id, std::uint64_t seed, Index height, Index width) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53); };
  CitySpec s;
  s.city_id = city_id;
  s.height = height;
  s.width = width;
  s.road_seed = rng();
  s.base_volume = uniform(90.0, 150.0);
  s.base_speed = uniform(120.0, 200.0);
  s.rush_hours[0] = {uniform(84.0, 108.0), uniform(5.0, 10.0)};
  s.rush_hours[1] = {uniform(196.0, 222.0), uniform(6.0, 12.0)};
  s.covid_volume_factor = uniform(0.85, 0.95);
  s.noise_level = 0.02;
  return s;
}

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int pick(std::mt19937_64& rng, int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); }

struct CityCenter {
  double row, col;
};

CityCenter city_center(const CitySpec& spec) {
  std::mt19937_64 rng(spec.road_seed ^ 0x9e3779b97f4a7c15ULL);
  const double h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
  return {h / 2 + (unit(rng) - 0.5) * h / 4, w / 2 + (unit(rng) - 0.5) * w / 4};
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0)); }

// Per-day recipe shared by both regimes of the same day.
struct DayRecipe {
  double shift;      // bins added to both rush-hour centers
  double amplitude;  // rush-hour strength
};

DayRecipe day_recipe(const CitySpec& spec, int day) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.road_seed), static_cast<std::uint32_t>(spec.road_seed >> 32),
                    static_cast<std::uint32_t>(day), 0xD1u};
  std::mt19937_64 rng(seq);
  const bool weekend = day % 7 >= 5;
  DayRecipe r;
  r.shift = (unit(rng) - 0.5) * 12.0;
  r.amplitude = (weekend ? 0.35 : 1.0) * (0.9 + 0.2 * unit(rng));
  return r;
}

// Unit heading vectors in (row, col): NE, SE, SW, NW.
constexpr double kHeadings[4][2] = {{-1, 1}, {1, 1}, {1, -1}, {-1, -1}};
// Neighbor indices (N, NE, E, SE, S, SW, W, NW) covered by each heading.
constexpr int kHeadingNeighbors[4][3] = {{0, 1, 2}, {2, 3, 4}, {4, 5, 6}, {6, 7, 0}};

}  // namespace

StaticMap generate_static(const CitySpec& spec) {
  validate(spec);
  const Index h = spec.height, w = spec.width;
  std::mt19937_64 rng(spec.road_seed);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h * w), 0);
  std::vector<double> density(static_cast<std::size_t>(h * w), 0.0);
  auto at = [&](Index r, Index c) { return static_cast<std::size_t>(r * w + c); };
  auto add_edge = [&](Index r, Index c, int k, double level) {
    const Index r2 = r + kNeighborOffsets[k][0], c2 = c + kNeighborOffsets[k][1];
    mask[at(r, c)] |= static_cast<std::uint8_t>(1u << k);
    mask[at(r2, c2)] |= static_cast<std::uint8_t>(1u << ((k + 4) % 8));
    density[at(r, c)] = std::max(density[at(r, c)], level);
    density[at(r2, c2)] = std::max(density[at(r2, c2)], level);
  };

  // Arterial grid: full-length rows and columns, so every arterial pixel is connected.
  const int row_spacing = 6 + pick(rng, 5), col_spacing = 6 + pick(rng, 5);
  const int row_offset = pick(rng, row_spacing), col_offset = pick(rng, col_spacing);
  std::vector<Index> rows, cols;
  for (Index r = row_offset; r < h; r += row_spacing) rows.push_back(r);
  for (Index c = col_offset; c < w; c += col_spacing) cols.push_back(c);
  for (Index r : rows) {
    const double level = 170.0 + 85.0 * unit(rng);
    for (Index c = 0; c + 1 < w; ++c) add_edge(r, c, 2, level);
  }
  for (Index c : cols) {
    const double level = 170.0 + 85.0 * unit(rng);
    for (Index r = 0; r + 1 < h; ++r) add_edge(r, c, 4, level);
  }

  // Side streets branching off arterials; they may bend by one heading step.
  const Index branches = h * w / 48;
  for (Index b = 0; b < branches; ++b) {
    Index r, c;
    if (pick(rng, 2) == 0) {
      r = rows[static_cast<std::size_t>(pick(rng, static_cast<int>(rows.size())))];
      c = pick(rng, static_cast<int>(w));
    } else {
      r = pick(rng, static_cast<int>(h));
      c = cols[static_cast<std::size_t>(pick(rng, static_cast<int>(cols.size())))];
    }
    int k = pick(rng, 8);
    const int length = 3 + pick(rng, 10);
    const double level = 60.0 + 80.0 * unit(rng);
    for (int step = 0; step < length; ++step) {
      const Index r2 = r + kNeighborOffsets[k][0], c2 = c + kNeighborOffsets[k][1];
      if (r2 < 0 || r2 >= h || c2 < 0 || c2 >= w) break;
      add_edge(r, c, k, level);
      r = r2;
      c = c2;
      if (unit(rng) < 0.2) k = (k + (pick(rng, 2) == 0 ? 1 : 7)) % 8;
    }
  }

  StaticMap map;
  map.city_id = spec.city_id;
  map.channels = Tensor<std::uint8_t>({kStaticChannels, h, w});
  for (Index p = 0; p < h * w; ++p) {
    const auto i = static_cast<std::size_t>(p);
    map.channels[p] = quantize(density[i]);
    for (int k = 0; k < 8; ++k) {
      if (mask[i] & (1u << k)) map.channels[(1 + k) * h * w + p] = 255;
    }
  }
  return map;
}

TrafficMovie generate_movie(const CitySpec& spec, int day, Regime regime) {
  return generate_movie(spec, generate_static(spec), day, regime);
}

TrafficMovie generate_movie(const CitySpec& spec, const StaticMap& static_map, int day, Regime regime) {
  validate(spec);
  const Index h = spec.height, w = spec.width, hw = h * w, bins = spec.bins;
  const auto& st = static_map.channels;
  if (st.dim(1) != h || st.dim(2) != w) throw ShapeError("generate_movie: static map does not match city grid");

  // Static per-pixel, per-heading weights for the base, morning and evening terms.
  const CityCenter center = city_center(spec);
  std::vector<double> base_w(static_cast<std::size_t>(hw * 4), 0.0);
  std::vector<double> morning_w(base_w.size(), 0.0), evening_w(base_w.size(), 0.0);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      const Index p = r * w + c;
      const double dens = st[p] / 255.0;
      if (dens <= 0) continue;
      double dr = center.row - static_cast<double>(r), dc = center.col - static_cast<double>(c);
      const double norm = std::hypot(dr, dc);
      if (norm > 0) {
        dr /= norm;
        dc /= norm;
      }
      for (int hd = 0; hd < 4; ++hd) {
        bool lane = false;
        for (int k : kHeadingNeighbors[hd]) lane = lane || st[(1 + k) * hw + p] > 0;
        const double toward = (kHeadings[hd][0] * dr + kHeadings[hd][1] * dc) / std::sqrt(2.0);
        const double scale = spec.base_volume * dens * (lane ? 1.0 : 0.3);
        const auto i = static_cast<std::size_t>(p * 4 + hd);
        base_w[i] = scale;
        morning_w[i] = scale * (0.4 + 1.2 * std::max(0.0, toward));
        evening_w[i] = scale * (0.4 + 1.2 * std::max(0.0, -toward));
      }
    }
  }

  const DayRecipe recipe = day_recipe(spec, day);
  const double f = regime == Regime::in_covid ? spec.covid_volume_factor : 1.0;
  std::seed_seq seq{static_cast<std::uint32_t>(spec.road_seed), static_cast<std::uint32_t>(spec.road_seed >> 32),
                    static_cast<std::uint32_t>(day), static_cast<std::uint32_t>(regime == Regime::in_covid ? 2 : 1)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> gauss(0.0, 1.0);

  TrafficMovie movie;
  movie.city_id = spec.city_id;
  movie.day_index = day;
  movie.frames = Tensor<std::uint8_t>({bins, h, w, kChannelsPerFrame});
  for (Index t = 0; t < bins; ++t) {
    const double tt = static_cast<double>(t) * 288.0 / static_cast<double>(bins);
    const double daytime = 0.1 + 0.5 * sigmoid((tt - 72.0) / 6.0) * sigmoid((264.0 - tt) / 8.0);
    double bump[2];
    for (int k = 0; k < 2; ++k) {
      const double z = (tt - spec.rush_hours[k].center - recipe.shift) / spec.rush_hours[k].width;
      bump[k] = (k == 0 ? 0.9 : 0.8) * recipe.amplitude * std::exp(-0.5 * z * z);
    }
    // Covid lowers all volume by f and flattens the rush-hour bumps by a further f.
    const double base = f * daytime, morning = f * f * bump[0], evening = f * f * bump[1];
    std::uint8_t* frame = movie.frames.data() + t * hw * kChannelsPerFrame;
    for (Index p = 0; p < hw; ++p) {
      if (st[p] == 0) continue;
      for (int hd = 0; hd < 4; ++hd) {
        const auto i = static_cast<std::size_t>(p * 4 + hd);
        const double mean = base * base_w[i] + morning * morning_w[i] + evening * evening_w[i];
        const double volume = mean * (1.0 + spec.noise_level * gauss(rng));
        const std::uint8_t v = quantize(volume);
        const double load = std::min(1.0, v / 255.0);
        const double speed = spec.base_speed * (1.0 - 0.5 * load) * (1.0 + spec.noise_level * gauss(rng));
        frame[p * kChannelsPerFrame + 2 * hd] = v;
        frame[p * kChannelsPerFrame + 2 * hd + 1] = quantize(speed);
      }
    }
  }
  return movie;
}

std::vector<int> days_for(const BenchmarkLayout& layout, CityRole role, Regime regime) {
  std::vector<int> days;
  auto range = [&](int first, int count) {
    for (int d = 0; d < count; ++d) days.push_back(first + d);
  };
  switch (role) {
    case CityRole::train: range(0, layout.train_days); break;
    case CityRole::core:
      if (regime == Regime::pre_covid) range(0, layout.train_days);
      else range(layout.train_days, layout.test_days);
      break;
    case CityRole::extended: range(layout.train_days, layout.test_days); break;
  }
  return days;
}

std::vector<std::string> Manifest::cities(CityRole role) const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (e.role == role && std::find(out.begin(), out.end(), e.city) == out.end()) out.push_back(e.city);
  }
  return out;
}

CityRole Manifest::role_of(const std::string& city) const {
  for (const auto& e : entries) {
    if (e.city == city) return e.role;
  }
  throw std::invalid_argument("city '" + city + "' is not in the benchmark manifest");
}

std::vector<const ManifestEntry*> Manifest::movies(const std::string& city, Regime regime) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.city == city && e.regime == regime) out.push_back(&e);
  }
  return out;
}

void write_manifest(const std::filesystem::path& file, const Manifest& manifest) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw std::runtime_error(file.string() + ": cannot open for writing");
  out << "role\tcity\tregime\tpath\tbins\n";
  for (const auto& e : manifest.entries) {
    out << to_string(e.role) << '\t' << e.city << '\t' << to_string(e.regime) << '\t' << e.path << '\t' << e.bins
        << '\n';
  }
}

Manifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error(file.string() + ": cannot open manifest");
  Manifest m;
  std::string line;
  std::getline(in, line);
  if (line != "role\tcity\tregime\tpath\tbins") throw std::runtime_error(file.string() + ": bad manifest header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string role, city, regime, path, bins;
    if (!std::getline(row, role, '\t') || !std::getline(row, city, '\t') || !std::getline(row, regime, '\t') ||
        !std::getline(row, path, '\t') || !std::getline(row, bins)) {
      throw std::runtime_error(file.string() + ": malformed manifest row '" + line + "'");
    }
    ManifestEntry e{parse_role(role), city, parse_regime(regime), path, std::stoll(bins), 0};
    const std::string stem = std::filesystem::path(path).stem().string();  // <year>-<day>
    e.day = std::stoi(stem.substr(stem.find('-') + 1));
    m.entries.push_back(std::move(e));
  }
  return m;
}

namespace {

nlohmann::json spec_json(const CitySpec& s) {
  return {{"city_id", s.city_id},
          {"height", s.height},
          {"width", s.width},
          {"bins", s.bins},
          {"road_seed", s.road_seed},
          {"base_volume", s.base_volume},
          {"base_speed", s.base_speed},
          {"rush_hours",
           {{{"center", s.rush_hours[0].center}, {"width", s.rush_hours[0].width}},
            {{"center", s.rush_hours[1].center}, {"width", s.rush_hours[1].width}}}},
          {"covid_volume_factor", s.covid_volume_factor},
          {"noise_level", s.noise_level}};
}

}  // namespace

Manifest make_benchmark(const BenchmarkLayout& layout, const std::vector<CitySpec>& specs,
                        const std::filesystem::path& root) {
  std::map<std::string, CityRole> roles;
  auto assign = [&](const std::vector<std::string>& names, CityRole role) {
    for (const auto& n : names) {
      auto [it, fresh] = roles.emplace(n, role);
      if (!fresh) {
        throw std::invalid_argument("city '" + n + "' assigned to both " + to_string(it->second) + " and " +
                                    to_string(role));
      }
    }
  };
  assign(layout.train_cities, CityRole::train);
  assign(layout.core_cities, CityRole::core);
  assign(layout.extended_cities, CityRole::extended);
  if (layout.train_days < 0 || layout.test_days < 0) throw std::invalid_argument("day counts must be >= 0");

  std::map<std::string, const CitySpec*> by_name;
  for (const auto& s : specs) {
    validate(s);
    by_name[s.city_id] = &s;
  }
  for (const auto& [name, role] : roles) {
    if (!by_name.count(name)) throw std::invalid_argument("no city spec for '" + name + "'");
  }
  if (std::filesystem::exists(root) && !std::filesystem::is_empty(root)) {
    throw std::invalid_argument("dataset root " + root.string() + " exists and is not empty");
  }
  std::filesystem::create_directories(root);

  Manifest manifest;
  nlohmann::json cities = nlohmann::json::array();
  auto emit = [&](const std::vector<std::string>& names, CityRole role) {
    for (const auto& name : names) {
      const CitySpec& spec = *by_name.at(name);
      const StaticMap st = generate_static(spec);
      write_static(static_path(root, name), st);
      for (Regime regime : {Regime::pre_covid, Regime::in_covid}) {
        for (int day : days_for(layout, role, regime)) {
          const auto path = movie_path(root, name, year_of(regime), day);
          write_movie(path, generate_movie(spec, st, day, regime));
          manifest.entries.push_back(
              {role, name, regime, std::filesystem::relative(path, root).generic_string(), spec.bins, day});
        }
      }
      nlohmann::json j = spec_json(spec);
      j["role"] = to_string(role);
      cities.push_back(std::move(j));
    }
  };
  emit(layout.train_cities, CityRole::train);
  emit(layout.core_cities, CityRole::core);
  emit(layout.extended_cities, CityRole::extended);

  write_manifest(root / "manifest.tsv", manifest);
  std::ofstream(root / "benchmark.json")
      << nlohmann::json{{"train_days", layout.train_days}, {"test_days", layout.test_days}, {"cities", cities}}.dump(2)
      << '\n';
  return manifest;
}

BenchmarkRecipe default_recipe(std::uint64_t seed, int train, int core, int extended, Index height, Index width,
                               int train_days, int test_days) {
  BenchmarkRecipe r;
  r.layout.train_days = train_days;
  r.layout.test_days = test_days;
  std::mt19937_64 rng(seed);
  auto add = [&](std::vector<std::string>& names, const char* prefix, int n) {
    for (int i = 0; i < n; ++i) {
      std::string name = std::string(prefix) + std::to_string(i);
      r.specs.push_back(random_city_spec(name, rng(), height, width));
      names.push_back(std::move(name));
    }
  };
  add(r.layout.train_cities, "train", train);
  add(r.layout.core_cities, "core", core);
  add(r.layout.extended_cities, "ext", extended);
  return r;
}

}  // namespace gridcast
