#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dcasr/nn/param_store.hpp"
#include "dcasr/nn/tensor.hpp"

namespace dcasr::nn {

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Reverse-mode tape. Every op evaluates eagerly; when recording, it also
// appends a closure that pushes its output gradient onto its inputs.
// Nodes are created in topological order, so backward() walks ids downward.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(Tensor value);
  // Trainable leaf. Binding the same name twice returns the same node.
  Var parameter(const std::string& name, const Tensor& value);
  Var bind(const ParamStore& store, const std::string& name) { return parameter(name, store.at(name)); }
  void bind_all(const ParamStore& store);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(Var v) const;
  Tensor& grad_buffer(std::size_t id);
  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }

  void backward(Var loss);
  // Gradients of every bound parameter (zeros where no path reached it).
  ParamStore parameter_grads() const;

  Var record(Tensor value, BackwardFn fn);
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> params_;
  bool record_;
};

// Differentiable ops. All outputs are rank-2; rank-1 inputs act as 1 x n.
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1 x c row over a's rows
Var scale(Var a, double s);
Var affine_scalar(Var a, double mul, double add);  // mul * a + add
Var tanh(Var a);
Var sigmoid(Var a);
Var silu(Var a);
Var exp_floor(Var a, double floor);  // max(exp(a), floor)
Var square(Var a);
Var softmax_rows(Var a);
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
Var row_normalize(Var a, double floor);  // each row / max(||row||, floor)
Var gather_rows(Var table, std::span<const std::size_t> rows);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var transpose(Var a);
Var mean_rows(Var a);  // 1 x c
Var sum_all(Var a);    // 1 x 1
// Sum over rows of -log softmax(logits[r])[targets[r]].
Var cross_entropy_rows(Var logits, std::span<const std::size_t> targets);
// Sum of squared differences.
Var squared_error(Var a, Var b);
Var affine(Var x, Var weight, Var bias);

}  // namespace dcasr::nn
