#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance suite.

#include <functional>
#include <random>
#include <vector>

#include "gridcast/evaluation.hpp"
#include "gridcast/graph.hpp"
#include "gridcast/unet.hpp"
#include "test_util.hpp"

namespace gridcast::testing {

using GradGraph = Graph<double>;
using GradOp = std::function<GradGraph::NodeId(GradGraph&, const std::vector<GradGraph::NodeId>&)>;

/// Loss = mse(op(inputs), target); worst relative error of d loss / d input
/// against central differences, over every input.
inline double op_gradient_error(const GradOp& op, const std::vector<Tensor<double>>& inputs, std::mt19937_64& rng) {
  using NodeId = GradGraph::NodeId;
  Tensor<double> target;
  {
    GradGraph g;
    std::vector<NodeId> ids;
    for (const auto& x : inputs) ids.push_back(g.input(x));
    target = random_tensor(g.value(op(g, ids)).shape(), rng);
  }
  GradGraph g;
  std::vector<NodeId> ids;
  for (const auto& x : inputs) ids.push_back(g.input(x, true));
  const NodeId loss = g.mse(op(g, ids), target);
  g.backward(loss);

  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Tensor<double>& xk) {
      GradGraph h;
      std::vector<NodeId> hid;
      for (std::size_t j = 0; j < inputs.size(); ++j) hid.push_back(h.input(j == k ? xk : inputs[j]));
      return h.value(h.mse(op(h, hid), target))[0];
    };
    worst = std::max(worst, max_rel_error(g.grad(ids[k]), numeric_grad(f, inputs[k])));
  }
  return worst;
}

/// Values bounded away from zero so ReLU kinks sit far from x +- h.
inline Tensor<double> away_from_zero(Tensor<double> t) {
  for (Index i = 0; i < t.size(); ++i) {
    if (std::abs(t[i]) < 0.05) t[i] = t[i] < 0 ? -0.05 - t[i] : 0.05 + t[i];
  }
  return t;
}

/// Worst relative error of the U-Net's input and parameter gradients.
inline double unet_gradient_error(const UNetConfig& cfg, const Tensor<double>& x, const Tensor<double>& target) {
  using NodeId = GradGraph::NodeId;
  const UNetModel<double> model = build_unet<double>(cfg);
  GradGraph g;
  const NodeId in = g.input(x, true);
  g.backward(g.mse(forward(g, model, in), target));
  const auto grads = g.parameter_gradients();

  auto loss_with = [&](const std::string& name) {
    return [&, name](const Tensor<double>& p) {
      UNetModel<double> m = model;
      m.parameters.at(name) = p;
      return mse(forward(m, x), target);
    };
  };
  double worst =
      max_rel_error(g.grad(in), numeric_grad([&](const Tensor<double>& xi) { return mse(forward(model, xi), target); }, x));
  for (const auto& [name, p] : model.parameters) {
    worst = std::max(worst, max_rel_error(grads.at(name), numeric_grad(loss_with(name), p)));
  }
  return worst;
}

/// Random per-city prediction/truth pairs of shape (6, h, w, 8).
inline std::vector<CityPredictions> random_cities(std::mt19937_64& rng, int cities, Index h, Index w, double lo = 0,
                                                  double hi = 1) {
  std::uniform_int_distribution<int> count(5, 9);
  std::vector<CityPredictions> out;
  for (int c = 0; c < cities; ++c) {
    CityPredictions cp{"city" + std::to_string(c), "in_covid", {}, {}};
    const int n = count(rng);
    for (int j = 0; j < n; ++j) {
      cp.predictions.push_back(random_tensor({6, h, w, 8}, rng, lo, hi));
      cp.truths.push_back(random_tensor({6, h, w, 8}, rng, 0, 1));
    }
    out.push_back(std::move(cp));
  }
  return out;
}

// Eq. 1 written out: cities, instances, rows, columns, channels.
inline double eq1_oracle(const std::vector<CityPredictions>& cities, double scale) {
  double total = 0;
  for (const auto& c : cities) {
    const Index n = static_cast<Index>(c.predictions.size());
    double city = 0;
    for (Index j = 0; j < n; ++j) {
      const Tensor<double>& p = c.predictions[static_cast<std::size_t>(j)];
      const Tensor<double>& t = c.truths[static_cast<std::size_t>(j)];
      const Index h = p.dim(1), w = p.dim(2);
      double inst = 0;
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x)
          for (Index ch = 0; ch < 48; ++ch) {
            const double d = scale * (p(ch / 8, y, x, ch % 8) - t(ch / 8, y, x, ch % 8));
            inst += d * d;
          }
      city += inst / static_cast<double>(h * w * 48);
    }
    total += city / static_cast<double>(n);
  }
  return total / static_cast<double>(cities.size());
}

inline std::size_t instance_count(const std::vector<CityPredictions>& cities) {
  std::size_t n = 0;
  for (const auto& c : cities) n += c.predictions.size();
  return n;
}

}  // namespace gridcast::testing
