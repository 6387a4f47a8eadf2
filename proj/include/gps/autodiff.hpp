#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "gps/tensor.hpp"

namespace gps {

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
  public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Graph* graph() const noexcept { return graph_; }
    std::size_t id() const noexcept { return id_; }

  private:
    friend class Graph;
    Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

// View handed to an op's backward closure.
class BackwardContext {
  public:
    std::span<const double> out_grad() const noexcept { return out_grad_; }
    const Tensor& output() const;
    const Tensor& input(std::size_t k) const;
    bool needs_grad(std::size_t k) const;
    // Buffer to accumulate into (+=). Empty when input k needs no gradient.
    std::span<double> input_grad(std::size_t k);

  private:
    friend class Graph;
    BackwardContext(Graph& graph, std::size_t node, std::span<const double> out_grad)
        : graph_(graph), node_(node), out_grad_(out_grad) {}

    Graph& graph_;
    std::size_t node_;
    std::span<const double> out_grad_;
};

// Single-use reverse-mode tape. Ops append nodes in topological order;
// backward() consumes the graph and releases every saved activation.
class Graph {
  public:
    using BackwardFn = std::function<void(BackwardContext&)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    // Binds an externally owned tensor. If it requires grad, backward() writes
    // d(loss)/d(tensor) into its grad buffer (zeros when it did not participate).
    // The tensor must outlive the graph and stay unmodified until backward.
    Var leaf(Tensor& tensor);
    // Read-only binding; never receives a gradient.
    Var leaf(const Tensor& tensor);

    Var record(std::string_view op, std::vector<Var> inputs, Tensor output, BackwardFn backward);

    void backward(Var loss);

    bool consumed() const noexcept { return consumed_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    const Tensor& value(std::size_t id) const;
    bool needs_grad(std::size_t id) const;

  private:
    friend class BackwardContext;

    struct Node {
        std::string_view op;
        std::vector<std::size_t> inputs;
        Tensor owned;
        const Tensor* leaf = nullptr;
        Tensor* grad_target = nullptr;
        bool needs_grad = false;
        BackwardFn backward;
    };

    void check_live() const;

    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    bool consumed_ = false;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// bias is 1-D with length x.dim(axis), broadcast over every other axis.
Var add_bias(Var x, Var bias, std::size_t axis);
// y.shape() equals the trailing dims of x; broadcast over the leading ones.
Var add_trailing(Var x, Var y);

Var matmul(Var a, Var b);
// [G x m x k] * [G x k x n] -> [G x m x n]
Var bmm(Var a, Var b);
Var transpose(Var a);
Var permute(Var a, std::vector<std::size_t> axes);
Var reshape(Var a, Shape shape);

Var sum(Var a);
Var mean(Var a);
Var mean_axis(Var a, std::size_t axis);

enum class Activation { Relu, Gelu, Softmax };
Activation parse_activation(std::string_view name);
Var activation(Var x, Activation kind);
Var relu(Var x);
Var gelu(Var x);
// Softmax over the last dimension.
Var softmax(Var x);

Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

// Cross-correlation with zero padding. input N x Cin x H x W, kernel Cout x Cin x kh x kw.
Var conv2d(Var input, Var kernel, std::size_t stride = 1, std::size_t padding = 0);

// Row-wise L2 normalisation of a 2-D tensor; norms are clamped below at 1e-12.
Var normalize_rows(Var x);

enum class Reduction { Mean, Sum };
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels, Reduction reduction = Reduction::Mean);

}  // namespace gps
