#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gridcast/dataset.hpp"

namespace gridcast {

enum class Regime { pre_covid, in_covid };

inline int year_of(Regime r) { return r == Regime::pre_covid ? 2019 : 2020; }
std::string to_string(Regime r);
Regime parse_regime(const std::string& s);

struct RushHour {
  double center;  // bin
  double width;   // bins (std-dev of the bump)
};

/// Recipe for one synthetic city. Volumes and speeds are in byte units.
struct CitySpec {
  std::string city_id;
  Index height = 64;
  Index width = 64;
  Index bins = kBinsPerDay;
  std::uint64_t road_seed = 0;
  double base_volume = 120.0;
  double base_speed = 160.0;
  std::array<RushHour, 2> rush_hours{{{96.0, 16.0}, {210.0, 18.0}}};
  double covid_volume_factor = 0.6;
  double noise_level = 0.02;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const CitySpec& spec);

/// Deterministic city recipe drawn from `seed`.
CitySpec random_city_spec(const std::string& city_id, std::uint64_t seed, Index height = 64, Index width = 64);

StaticMap generate_static(const CitySpec& spec);
TrafficMovie generate_movie(const CitySpec& spec, int day, Regime regime);
/// Same as generate_movie but reuses an already generated static map.
TrafficMovie generate_movie(const CitySpec& spec, const StaticMap& static_map, int day, Regime regime);

enum class CityRole { train, core, extended };
std::string to_string(CityRole r);
CityRole parse_role(const std::string& s);

/// City roles plus day counts per split. Train cities get `train_days` per
/// regime; core cities get `train_days` pre-Covid days and `test_days`
/// in-Covid days; extended cities get `test_days` per regime.
struct BenchmarkLayout {
  std::vector<std::string> train_cities;
  std::vector<std::string> core_cities;
  std::vector<std::string> extended_cities;
  int train_days = 20;
  int test_days = 4;
};

/// Which days exist for (role, regime); test days are numbered after the
/// training days so they never share a day recipe with a training movie.
std::vector<int> days_for(const BenchmarkLayout& layout, CityRole role, Regime regime);

/// Train/test membership follows from the role: train cities are all train,
/// core cities train on pre-Covid and test on in-Covid, extended cities are
/// test only.
enum class Split { train, test };
Split split_of(CityRole role, Regime regime);
std::string to_string(Split s);

struct ManifestEntry {
  CityRole role;
  std::string city;
  Regime regime;
  std::string path;  // relative to the dataset root
  Index bins;
  int day;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  std::vector<std::string> cities(CityRole role) const;
  CityRole role_of(const std::string& city) const;
  std::vector<const ManifestEntry*> movies(const std::string& city, Regime regime) const;
};

void write_manifest(const std::filesystem::path& file, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& file);

/// Writes static maps, movies, `manifest.tsv` and `benchmark.json` under root.
Manifest make_benchmark(const BenchmarkLayout& layout, const std::vector<CitySpec>& specs,
                        const std::filesystem::path& root);

/// Layout and specs with generated city names, e.g. the 4/4/2 split.
struct BenchmarkRecipe {
  BenchmarkLayout layout;
  std::vector<CitySpec> specs;
};
BenchmarkRecipe default_recipe(std::uint64_t seed, int train, int core, int extended, Index height, Index width,
                               int train_days, int test_days);

}  // namespace gridcast
