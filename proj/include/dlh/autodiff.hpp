#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dlh/tensor.hpp"

// Minimal reverse-mode automatic differentiation over dense double tensors.
// A Graph records every op in creation order; backward() walks it in reverse.
// One Graph per sequence: graphs are not thread-safe, but any number of them
// may read the same ParameterSet concurrently.
namespace dlh::ad {

class Graph;

struct Var {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Tensor& value() const;
  const std::vector<int>& shape() const { return value().shape; }
  double item() const;
};

struct Parameter {
  std::string name;
  Tensor value;
};

// Named, ordered collection of trainable tensors.
class ParameterSet {
 public:
  int add(std::string name, Tensor value);
  int index_of(const std::string& name) const;  // throws ContractError if absent
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Zero tensors shaped like each parameter.
  std::vector<Tensor> zeros_like() const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, int> index_;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, int)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor t);
  // Leaf that receives a gradient (used for gradient checks on inputs).
  Var input(Tensor t);
  // Leaf referring to a parameter without copying it; cached per index.
  Var param(const ParameterSet& params, int index);
  Var param(const ParameterSet& params, const std::string& name) {
    return param(params, params.index_of(name));
  }

  const Tensor& value(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  const Tensor& grad(Var v) const;
  // Gradient buffer of a node, allocated (zeroed) on first use.
  Tensor& grad_ref(int id);

  void backward(Var scalar);
  // Adds parameter gradients from the last backward() into `out`, indexed
  // like the ParameterSet.
  void accumulate_param_grads(std::vector<Tensor>& out) const;

  std::size_t node_count() const { return nodes_.size(); }

  // Records a node; `fn` is dropped when no parent needs a gradient.
  Var make(Tensor value, std::initializer_list<Var> parents, Backward fn);
  Var make(Tensor value, const std::vector<Var>& parents, Backward fn);

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;
  };
  const Tensor& node_value(const Node& n) const { return n.external ? *n.external : n.value; }

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<int> param_node_of_;  // parameter index -> node id, -1 if unused
  const ParameterSet* param_owner_ = nullptr;
};

// Elementwise, same shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
// x [R,C] + row vector b [C] broadcast over rows.
Var add_row(Var x, Var b);

// [R,K] x [K,N]
Var matmul(Var a, Var b);
// x [R,K] * w [K,N] + b [N]
Var linear(Var x, Var w, Var b);

Var elu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var softplus(Var x);
Var exp(Var x);

Var reshape(Var x, std::vector<int> shape);
Var concat_cols(const std::vector<Var>& parts);  // rank-2 inputs with equal rows
Var slice_cols(Var x, int start, int len);
Var concat_rows(const std::vector<Var>& parts);  // equal trailing shape
Var slice_rows(Var x, int start, int len);
Var sum(Var x);  // -> [1]
Var sum_all(const std::vector<Var>& xs);  // each [1] -> [1]

// x [N,C,H,W], w [O,C,k,k], b [O]
Var conv2d(Var x, Var w, Var b, int stride, int pad);
// x [N,C,H,W], w [C,O,k,k], b [O]
Var conv_transpose2d(Var x, Var w, Var b, int stride, int pad);

}  // namespace dlh::ad
