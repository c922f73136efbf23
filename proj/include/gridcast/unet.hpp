#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gridcast/graph.hpp"

namespace gridcast {

/// How the normalization group size is read.
enum class GroupMode { channels_per_group, num_groups };

struct UNetConfig {
  int depth = 4;  // number of down/up blocks
  int base_filters = 16;
  int in_channels = 105;
  int out_channels = 48;
  int group_size = 8;
  GroupMode group_mode = GroupMode::channels_per_group;
  std::uint64_t seed = 0;

  static UNetConfig core() { return UNetConfig{}; }
  static UNetConfig extended() {
    UNetConfig c;
    c.depth = 1;
    return c;
  }

  int bridge_filters() const { return base_filters << depth; }
  /// Filters at encoder level `level` (level == depth is the bridge).
  int filters(int level) const { return base_filters << level; }
  int multiple() const { return 1 << depth; }

  /// Channels per normalization group for a layer with `channels` filters.
  Index channels_per_group(Index channels) const {
    return group_mode == GroupMode::channels_per_group ? group_size : channels / group_size;
  }
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void check_group(const UNetConfig& cfg, Index channels, const std::string& layer) {
  const bool ok = cfg.group_mode == GroupMode::channels_per_group
                      ? channels % cfg.group_size == 0
                      : channels % cfg.group_size == 0 && channels / cfg.group_size >= 1;
  if (!ok) {
    throw ConfigError("layer " + layer + ": " + std::to_string(channels) + " filters cannot be split into groups of " +
                      (cfg.group_mode == GroupMode::channels_per_group ? "" : "count ") +
                      std::to_string(cfg.group_size));
  }
}

inline std::string block_name(const char* prefix, int level) { return std::string(prefix) + std::to_string(level); }

}  // namespace detail

inline void validate(const UNetConfig& cfg) {
  if (cfg.depth < 1) throw ConfigError("depth must be >= 1, got " + std::to_string(cfg.depth));
  if (cfg.depth > 12) throw ConfigError("depth " + std::to_string(cfg.depth) + " is not representable");
  if (cfg.base_filters < 1) throw ConfigError("base_filters must be >= 1");
  if (cfg.in_channels < 1 || cfg.out_channels < 1) throw ConfigError("channel counts must be >= 1");
  if (cfg.group_size < 1) throw ConfigError("group_size must be >= 1");
  for (int level = 0; level <= cfg.depth; ++level) {
    const std::string layer = level == cfg.depth ? "bridge" : detail::block_name("enc", level);
    detail::check_group(cfg, cfg.filters(level), layer);
  }
}

/// Parameter tensors keyed by layer-qualified names, e.g. "enc0.conv1.w".
template <typename Scalar>
struct UNetModel {
  UNetConfig config;
  std::map<std::string, Tensor<Scalar>> parameters;

  Index parameter_count() const {
    Index n = 0;
    for (const auto& [name, t] : parameters) n += t.size();
    return n;
  }
  const Tensor<Scalar>& param(const std::string& name) const { return parameters.at(name); }
};

namespace detail {

template <typename Scalar>
class ParamInit {
 public:
  explicit ParamInit(std::uint64_t seed) : rng_(seed) {}

  // Fan-in scaled uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Tensor<Scalar> uniform(Shape shape, Index fan_in) {
    Tensor<Scalar> t(std::move(shape));
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (Index i = 0; i < t.size(); ++i) {
      const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
      t[i] = static_cast<Scalar>((2.0 * u - 1.0) * bound);
    }
    return t;
  }

 private:
  std::mt19937_64 rng_;
};

template <typename Scalar>
void add_conv(UNetModel<Scalar>& m, ParamInit<Scalar>& init, const std::string& name, Index cin, Index cout,
              Index k) {
  const Index fan_in = cin * k * k;
  m.parameters[name + ".w"] = init.uniform({cout, cin, k, k}, fan_in);
  m.parameters[name + ".b"] = init.uniform({cout}, fan_in);
}

template <typename Scalar>
void add_norm(UNetModel<Scalar>& m, const std::string& name, Index channels) {
  m.parameters[name + ".gamma"] = Tensor<Scalar>::constant({channels}, Scalar(1));
  m.parameters[name + ".beta"] = Tensor<Scalar>({channels});
}

template <typename Scalar>
void add_double_conv(UNetModel<Scalar>& m, ParamInit<Scalar>& init, const std::string& block, Index cin,
                     Index cout) {
  add_conv(m, init, block + ".conv1", cin, cout, 3);
  add_norm(m, block + ".norm1", cout);
  add_conv(m, init, block + ".conv2", cout, cout, 3);
  add_norm(m, block + ".norm2", cout);
}

}  // namespace detail

/**
 * Builds encoder blocks enc0..enc{K-1}, the bridge, decoder blocks
 * dec{K-1}..dec0 (named by the encoder level they merge with) and a 1x1 head.
 * Initialization order is fixed, so the same seed gives identical weights.
 */
template <typename Scalar>
UNetModel<Scalar> build_unet(const UNetConfig& cfg) {
  validate(cfg);
  UNetModel<Scalar> m{cfg, {}};
  detail::ParamInit<Scalar> init(cfg.seed);
  Index cin = cfg.in_channels;
  for (int level = 0; level < cfg.depth; ++level) {
    detail::add_double_conv(m, init, detail::block_name("enc", level), cin, cfg.filters(level));
    cin = cfg.filters(level);
  }
  detail::add_double_conv(m, init, "bridge", cin, cfg.bridge_filters());
  for (int level = cfg.depth - 1; level >= 0; --level) {
    const std::string block = detail::block_name("dec", level);
    const Index wide = cfg.filters(level + 1), narrow = cfg.filters(level);
    // Transposed conv weight is (C_in, C_out, 2, 2); fan-in follows the adjoint convolution.
    m.parameters[block + ".up.w"] = init.uniform({wide, narrow, 2, 2}, narrow * 4);
    m.parameters[block + ".up.b"] = init.uniform({narrow}, narrow * 4);
    detail::add_double_conv(m, init, block, 2 * narrow, narrow);
  }
  detail::add_conv(m, init, "head", cfg.base_filters, cfg.out_channels, 1);
  return m;
}

struct CropRecord {
  Index height, width;
};

/// Smallest multiple of m that is >= n.
inline Index round_up(Index n, Index m) { return (n + m - 1) / m * m; }

template <typename Scalar>
std::pair<Tensor<Scalar>, CropRecord> pad_to_multiple(const Tensor<Scalar>& x, Index m) {
  if (m < 1) throw ShapeError("pad_to_multiple: multiple must be >= 1");
  const CropRecord rec{x.dim(1), x.dim(2)};
  return {pad_bottom_right(x, round_up(rec.height, m), round_up(rec.width, m)), rec};
}

template <typename Scalar>
Tensor<Scalar> crop(const Tensor<Scalar>& x, const CropRecord& rec) {
  return crop_top_left(x, rec.height, rec.width);
}

namespace detail {

template <typename Scalar>
typename Graph<Scalar>::NodeId conv_norm_relu(Graph<Scalar>& g, const UNetModel<Scalar>& m, const std::string& block,
                                              int idx, typename Graph<Scalar>::NodeId x) {
  const std::string conv = block + ".conv" + std::to_string(idx), norm = block + ".norm" + std::to_string(idx);
  const auto& w = m.param(conv + ".w");
  auto y = g.conv2d(x, g.parameter(conv + ".w", w), g.parameter(conv + ".b", m.param(conv + ".b")), 1);
  y = g.group_norm(y, g.parameter(norm + ".gamma", m.param(norm + ".gamma")),
                   g.parameter(norm + ".beta", m.param(norm + ".beta")), m.config.channels_per_group(w.dim(0)));
  return g.relu(y);
}

template <typename Scalar>
typename Graph<Scalar>::NodeId double_conv(Graph<Scalar>& g, const UNetModel<Scalar>& m, const std::string& block,
                                           typename Graph<Scalar>::NodeId x) {
  return conv_norm_relu(g, m, block, 2, conv_norm_relu(g, m, block, 1, x));
}

}  // namespace detail

/// Records the full forward pass on `g`; returns the (out_channels, H, W) prediction node.
template <typename Scalar>
typename Graph<Scalar>::NodeId forward(Graph<Scalar>& g, const UNetModel<Scalar>& m, typename Graph<Scalar>::NodeId x) {
  using NodeId = typename Graph<Scalar>::NodeId;
  const auto& cfg = m.config;
  const Tensor<Scalar>& in = g.value(x);
  if (in.rank() != 3 || in.dim(0) != cfg.in_channels) {
    throw ShapeError("unet forward: expected (" + std::to_string(cfg.in_channels) + ",H,W) input, got " +
                     to_string(in.shape()));
  }
  const Index h = in.dim(1), w = in.dim(2);
  const Index ph = round_up(h, cfg.multiple()), pw = round_up(w, cfg.multiple());
  NodeId cur = (ph != h || pw != w) ? g.pad(x, ph, pw) : x;

  std::vector<NodeId> skips;
  for (int level = 0; level < cfg.depth; ++level) {
    cur = detail::double_conv(g, m, detail::block_name("enc", level), cur);
    skips.push_back(cur);
    cur = g.maxpool2(cur);
  }
  cur = detail::double_conv(g, m, "bridge", cur);
  for (int level = cfg.depth - 1; level >= 0; --level) {
    const std::string block = detail::block_name("dec", level);
    cur = g.conv_transpose2d(cur, g.parameter(block + ".up.w", m.param(block + ".up.w")),
                             g.parameter(block + ".up.b", m.param(block + ".up.b")));
    cur = g.concat_channels(skips[static_cast<std::size_t>(level)], cur);
    cur = detail::double_conv(g, m, block, cur);
  }
  cur = g.conv2d(cur, g.parameter("head.w", m.param("head.w")), g.parameter("head.b", m.param("head.b")), 0);
  return (ph != h || pw != w) ? g.crop(cur, h, w) : cur;
}

template <typename Scalar>
Tensor<Scalar> forward(const UNetModel<Scalar>& m, const Tensor<Scalar>& x) {
  Graph<Scalar> g;
  return g.value(forward(g, m, g.input(x)));
}

}  // namespace gridcast
