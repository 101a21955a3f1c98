#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "cxrage/tensor.hpp"

namespace cxrage {

enum class OpKind {
    Input,
    Conv2d,
    Relu,
    Sigmoid,
    AvgPool2d,
    GlobalAvgPool,
    ConcatChannels,
    FullyConnected,
    MseLoss,
    R2ObjectiveLoss,
    Scale,
};

struct NodeId {
    std::size_t index = 0;
};

// Reverse-mode autodiff over an append-only tape. Insertion order is the
// topological order; backward() walks the tape once in reverse. Node values
// are immutable after insertion.
template <typename T>
class Graph {
  public:
    NodeId input(Tensor<T> value, bool requires_grad = false);

    NodeId conv2d(NodeId x, NodeId kernel, NodeId bias, std::size_t stride, std::size_t padding);
    NodeId relu(NodeId x);
    NodeId sigmoid(NodeId x);
    NodeId avg_pool2d(NodeId x, std::size_t window, std::size_t stride);
    NodeId global_avg_pool(NodeId x);
    NodeId concat_channels(const std::vector<NodeId>& xs);
    NodeId fully_connected(NodeId x, NodeId weights, NodeId bias);
    NodeId mse_loss(NodeId pred, NodeId target);
    NodeId r2_objective_loss(NodeId pred, NodeId target);
    NodeId scale(NodeId x, T factor);

    // Seeds d(root)/d(root) = 1 and applies the chain rule over the whole
    // tape in reverse insertion order. The root must hold a single value.
    // Gradients from any previous backward() call are discarded first.
    void backward(NodeId root);

    const Tensor<T>& value(NodeId id) const { return nodes_[id.index].value; }
    // Zero until backward() reaches the node (or if it never does).
    const Tensor<T>& grad(NodeId id) const;
    bool requires_grad(NodeId id) const { return nodes_[id.index].requires_grad; }
    OpKind kind(NodeId id) const { return nodes_[id.index].kind; }
    const std::vector<std::size_t>& inputs_of(NodeId id) const { return nodes_[id.index].inputs; }
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        OpKind kind = OpKind::Input;
        std::vector<std::size_t> inputs;
        Tensor<T> value;
        Tensor<T> grad;  // allocated by backward()
        bool requires_grad = false;
        std::function<void(Graph&, const Node&)> backprop;  // empty for leaves
    };

    NodeId push(Node node);
    void check_id(NodeId id, const char* op) const;
    bool any_requires(const std::vector<std::size_t>& ids) const;

    std::vector<Node> nodes_;
    mutable Tensor<T> zero_grad_scratch_;
};

// Central-difference gradient of a scalar-valued function, one coordinate at
// a time: (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
template <typename T>
Tensor<T> finite_diff_gradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& point,
                               T epsilon);

struct GradCheckReport {
    double max_abs_error = 0.0;
    double max_rel_error = 0.0;
    std::size_t worst_parameter_index = 0;
};

// Compares the tape's backward gradients against finite differences for
// every coordinate of every leaf in `points`. `build_loss` must construct
// the same scalar function each time it is called; it receives the leaves in
// order. Relative error uses |a - b| / max(1e-8, |a| + |b|); the worst index
// counts coordinates across the concatenated leaves.
template <typename T>
GradCheckReport check_gradients(const std::vector<Tensor<T>>& points,
                                const std::function<NodeId(Graph<T>&, const std::vector<NodeId>&)>& build_loss,
                                T epsilon);

extern template class Graph<float>;
extern template class Graph<double>;
extern template Tensor<float> finite_diff_gradient<float>(
    const std::function<float(const Tensor<float>&)>&, const Tensor<float>&, float);
extern template Tensor<double> finite_diff_gradient<double>(
    const std::function<double(const Tensor<double>&)>&, const Tensor<double>&, double);
extern template GradCheckReport check_gradients<float>(
    const std::vector<Tensor<float>>&,
    const std::function<NodeId(Graph<float>&, const std::vector<NodeId>&)>&, float);
extern template GradCheckReport check_gradients<double>(
    const std::vector<Tensor<double>>&,
    const std::function<NodeId(Graph<double>&, const std::vector<NodeId>&)>&, double);

}  // namespace cxrage
