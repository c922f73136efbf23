#pragma once

#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridcast/ops.hpp"

namespace gridcast {

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class OpKind { input, parameter, conv2d, conv_transpose2d, maxpool2, group_norm, relu, concat, pad, crop, mse };

/**
 * Reverse-mode tape. Nodes are appended in execution order, so inputs of a
 * node always precede it and `backward` is a single reverse sweep.
 *
 * Parameter nodes reference tensors owned by the caller; those tensors must
 * outlive the graph.
 */
template <typename Scalar>
class Graph {
 public:
  using NodeId = std::size_t;
  using TensorT = Tensor<Scalar>;

  NodeId input(TensorT value, bool requires_grad = false) {
    Node n;
    n.kind = OpKind::input;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  NodeId parameter(const std::string& name, const TensorT& value) {
    if (!param_names_.insert(name).second) {
      throw GraphError("parameter '" + name + "' recorded twice in one forward pass");
    }
    Node n;
    n.kind = OpKind::parameter;
    n.external = &value;
    n.name = name;
    n.requires_grad = true;
    return push(std::move(n));
  }

  NodeId conv2d(NodeId x, NodeId w, NodeId b, Index pad, Index stride = 1) {
    Node n = make(OpKind::conv2d, {x, w, b});
    n.geometry = conv_geometry(value(x), value(w), value(b), pad, stride);
    if (!detail::use_im2col(n.geometry)) {
      n.value = detail::conv2d_shifted(value(x), value(w), value(b), n.geometry);
      return push(std::move(n));
    }
    // The patch matrix is kept for the backward pass.
    n.saved = im2col(value(x), n.geometry);
    const ConvGeometry& g = n.geometry;
    n.value = TensorT::uninitialized({g.out_channels, g.out_height, g.out_width});
    auto out = n.value.matrix(g.out_channels, g.out_pixels());
    out.noalias() = value(w).matrix(g.out_channels, g.patch()) * n.saved.matrix(g.patch(), g.out_pixels());
    out.colwise() += value(b).array().matrix();
    return push(std::move(n));
  }

  NodeId conv_transpose2d(NodeId x, NodeId w, NodeId b) {
    Node n = make(OpKind::conv_transpose2d, {x, w, b});
    n.value = gridcast::conv_transpose2d(value(x), value(w), value(b));
    return push(std::move(n));
  }

  NodeId maxpool2(NodeId x) {
    Node n = make(OpKind::maxpool2, {x});
    auto r = gridcast::maxpool2(value(x));
    n.value = std::move(r.out);
    n.argmax = std::move(r.argmax);
    return push(std::move(n));
  }

  NodeId group_norm(NodeId x, NodeId gamma, NodeId beta, Index channels_per_group, Scalar eps = Scalar(1e-5)) {
    Node n = make(OpKind::group_norm, {x, gamma, beta});
    auto r = gridcast::group_norm(value(x), value(gamma), value(beta), channels_per_group, eps);
    n.value = std::move(r.out);
    n.saved = std::move(r.mean);
    n.saved2 = std::move(r.rstd);
    n.int_arg = channels_per_group;
    return push(std::move(n));
  }

  NodeId relu(NodeId x) {
    Node n = make(OpKind::relu, {x});
    n.value = gridcast::relu(value(x));
    return push(std::move(n));
  }

  NodeId concat_channels(NodeId a, NodeId b) {
    Node n = make(OpKind::concat, {a, b});
    n.value = gridcast::concat_channels(value(a), value(b));
    return push(std::move(n));
  }

  NodeId pad(NodeId x, Index out_h, Index out_w) {
    Node n = make(OpKind::pad, {x});
    n.value = pad_bottom_right(value(x), out_h, out_w);
    return push(std::move(n));
  }

  NodeId crop(NodeId x, Index out_h, Index out_w) {
    Node n = make(OpKind::crop, {x});
    n.value = crop_top_left(value(x), out_h, out_w);
    return push(std::move(n));
  }

  /// Scalar loss node; `target` is a constant.
  NodeId mse(NodeId pred, TensorT target) {
    Node n = make(OpKind::mse, {pred});
    n.value = TensorT::constant(Shape{}, gridcast::mse(value(pred), target));
    n.saved = std::move(target);
    return push(std::move(n));
  }

  const TensorT& value(NodeId id) const {
    const Node& n = at(id);
    return n.external ? *n.external : n.value;
  }

  OpKind kind(NodeId id) const { return at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Accumulates d(loss)/d(node) for every node that requires a gradient.
  void backward(NodeId loss) {
    if (nodes_.empty()) throw GraphError("backward called before any forward pass was recorded");
    const Node& ln = at(loss);
    if (ln.value.size() != 1 || ln.external) {
      throw GraphError("backward needs a scalar loss node, got shape " + to_string(value(loss).shape()));
    }
    for (Node& n : nodes_) n.grad = TensorT();
    nodes_[loss].grad = TensorT::constant(ln.value.shape(), Scalar(1));
    for (NodeId id = loss + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      propagate(id);
    }
    backward_done_ = true;
  }

  const TensorT& grad(NodeId id) const {
    if (!backward_done_) throw GraphError("gradients requested before backward()");
    const Node& n = at(id);
    if (!n.requires_grad) throw GraphError("node " + std::to_string(id) + " does not require a gradient");
    return n.grad;
  }

  /// Parameter name -> gradient (zeros for parameters the loss does not reach).
  std::map<std::string, TensorT> parameter_gradients() const {
    if (!backward_done_) throw GraphError("gradients requested before backward()");
    std::map<std::string, TensorT> out;
    for (const Node& n : nodes_) {
      if (n.kind != OpKind::parameter) continue;
      out.emplace(n.name, n.grad.size() ? n.grad : TensorT(n.external->shape()));
    }
    return out;
  }

 private:
  struct Node {
    OpKind kind{OpKind::input};
    std::vector<NodeId> inputs;
    TensorT value;
    const TensorT* external{nullptr};
    std::string name;
    bool requires_grad{false};
    // Per-op saved state.
    TensorT saved, saved2;
    ConvGeometry geometry{};
    std::vector<Index> argmax;
    Index int_arg{0};
    TensorT grad;
  };

  const Node& at(NodeId id) const {
    if (id >= nodes_.size()) throw GraphError("unknown node id " + std::to_string(id));
    return nodes_[id];
  }

  Node make(OpKind kind, std::vector<NodeId> ins) const {
    Node n;
    n.kind = kind;
    for (NodeId i : ins) n.requires_grad = n.requires_grad || at(i).requires_grad;
    n.inputs = std::move(ins);
    return n;
  }

  NodeId push(Node n) {
    backward_done_ = false;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  bool needs(NodeId id) const { return nodes_[id].requires_grad; }

  void accumulate(NodeId id, TensorT g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = std::move(g);
    } else {
      n.grad.array() += g.array();
    }
  }

  void propagate(NodeId id) {
    const Node& n = nodes_[id];
    const TensorT& dy = n.grad;
    switch (n.kind) {
      case OpKind::input:
      case OpKind::parameter:
        break;
      case OpKind::conv2d: {
        const NodeId x = n.inputs[0], w = n.inputs[1], b = n.inputs[2];
        auto g = !detail::use_im2col(n.geometry) ? conv2d_backward_shifted(value(x), value(w), dy, n.geometry, needs(x))
                                        : conv2d_backward(n.saved, value(w), dy, n.geometry, needs(x));
        if (needs(x)) accumulate(x, std::move(g.dx));
        accumulate(w, std::move(g.dw));
        accumulate(b, std::move(g.db));
        break;
      }
      case OpKind::conv_transpose2d: {
        const NodeId x = n.inputs[0], w = n.inputs[1], b = n.inputs[2];
        auto g = conv_transpose2d_backward(value(x), value(w), dy, needs(x));
        if (needs(x)) accumulate(x, std::move(g.dx));
        accumulate(w, std::move(g.dw));
        accumulate(b, std::move(g.db));
        break;
      }
      case OpKind::maxpool2: {
        const NodeId x = n.inputs[0];
        accumulate(x, maxpool2_backward(value(x).shape(), n.argmax, dy));
        break;
      }
      case OpKind::group_norm: {
        const NodeId x = n.inputs[0], gamma = n.inputs[1], beta = n.inputs[2];
        GroupNormResult<Scalar> fwd{TensorT(), n.saved, n.saved2};
        auto g = group_norm_backward(value(x), value(gamma), fwd, dy, n.int_arg, needs(x));
        if (needs(x)) accumulate(x, std::move(g.dx));
        accumulate(gamma, std::move(g.dgamma));
        accumulate(beta, std::move(g.dbeta));
        break;
      }
      case OpKind::relu: {
        const NodeId x = n.inputs[0];
        accumulate(x, relu_backward(value(x), dy));
        break;
      }
      case OpKind::concat: {
        const NodeId a = n.inputs[0], b = n.inputs[1];
        const TensorT& va = value(a);
        const TensorT& vb = value(b);
        if (needs(a)) accumulate(a, TensorT(va.shape(), dy.array().head(va.size())));
        if (needs(b)) accumulate(b, TensorT(vb.shape(), dy.array().tail(vb.size())));
        break;
      }
      case OpKind::pad: {
        const NodeId x = n.inputs[0];
        const TensorT& vx = value(x);
        accumulate(x, crop_top_left(dy, vx.dim(1), vx.dim(2)));
        break;
      }
      case OpKind::crop: {
        const NodeId x = n.inputs[0];
        const TensorT& vx = value(x);
        accumulate(x, pad_bottom_right(dy, vx.dim(1), vx.dim(2)));
        break;
      }
      case OpKind::mse: {
        const NodeId p = n.inputs[0];
        accumulate(p, mse_backward(value(p), n.saved, dy[0]));
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::set<std::string> param_names_;
  bool backward_done_{false};
};

}  // namespace gridcast
