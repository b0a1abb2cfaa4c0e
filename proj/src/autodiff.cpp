#include "dlh/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "dlh/kernels.hpp"

namespace dlh::ad {

const Tensor& Var::value() const { return graph->value(id); }

double Var::item() const {
  require(value().size() == 1, [&] { return "Var::item on non-scalar " + shape_str(shape()); });
  return value()[0];
}

int ParameterSet::add(std::string name, Tensor value) {
  const int idx = static_cast<int>(params_.size());
  require(index_.emplace(name, idx).second, "ParameterSet: duplicate name " + name);
  params_.push_back({std::move(name), std::move(value)});
  return idx;
}

int ParameterSet::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("ParameterSet: no parameter named " + name);
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<Tensor> ParameterSet::zeros_like() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.value.shape);
  return out;
}

Var Graph::constant(Tensor t) {
  Node n;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::input(Tensor t) {
  Var v = constant(std::move(t));
  nodes_[v.id].requires_grad = grad_enabled_;
  return v;
}

Var Graph::param(const ParameterSet& params, int index) {
  require(param_owner_ == nullptr || param_owner_ == &params,
          "Graph::param: parameters from two different sets");
  param_owner_ = &params;
  require(index >= 0 && static_cast<std::size_t>(index) < params.size(), "Graph::param: bad index");
  if (param_node_of_.size() < params.size()) param_node_of_.resize(params.size(), -1);
  if (param_node_of_[index] >= 0) return {this, param_node_of_[index]};
  Node n;
  n.external = &params[static_cast<std::size_t>(index)].value;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_node_of_[index] = id;
  return {this, id};
}

const Tensor& Graph::value(int id) const { return node_value(nodes_[id]); }

const Tensor& Graph::grad(Var v) const {
  static const Tensor kEmpty;
  const Node& n = nodes_[v.id];
  return n.grad.size() == 0 ? kEmpty : n.grad;
}

Tensor& Graph::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() != node_value(n).size()) n.grad = Tensor(node_value(n).shape);
  return n.grad;
}

Var Graph::make(Tensor value, std::initializer_list<Var> parents, Backward fn) {
  bool rg = false;
  if (grad_enabled_)
    for (const Var& p : parents) rg = rg || nodes_[p.id].requires_grad;
  Node n;
  n.value = std::move(value);
  n.requires_grad = rg;
  if (rg) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::make(Tensor value, const std::vector<Var>& parents, Backward fn) {
  bool rg = false;
  if (grad_enabled_)
    for (const Var& p : parents) rg = rg || nodes_[p.id].requires_grad;
  Node n;
  n.value = std::move(value);
  n.requires_grad = rg;
  if (rg) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::backward(Var scalar) {
  require(scalar.graph == this, "Graph::backward: foreign variable");
  require(value(scalar.id).size() == 1, "Graph::backward: loss must be a scalar");
  require(grad_enabled_, "Graph::backward: graph built without gradients");
  for (auto& n : nodes_) n.grad = Tensor();
  grad_ref(scalar.id)[0] = 1.0;
  for (int id = scalar.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() != 0) {
      // Closures only touch grad buffers, never the node vector itself.
      n.backward(*this, id);
    }
  }
}

void Graph::accumulate_param_grads(std::vector<Tensor>& out) const {
  for (std::size_t pi = 0; pi < param_node_of_.size(); ++pi) {
    if (param_node_of_[pi] < 0) continue;
    const Tensor& g = nodes_[param_node_of_[pi]].grad;
    if (g.size() == 0) continue;
    Tensor& dst = out[pi];
    require(dst.size() == g.size(), "accumulate_param_grads: shape mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
}

namespace {

void check_same(Var a, Var b, const char* op) {
  require(a.graph == b.graph, [&] { return std::string(op) + ": variables from different graphs"; });
  require(a.shape() == b.shape(), [&] { return std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()); });
}

// Elementwise unary op with derivative expressed through input x and output y.
template <class F, class D>
Var unary(Var x, F f, D dfdx) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  const int xi = x.id;
  return x.graph->make(std::move(y), {x}, [xi, dfdx](Graph& g, int self) {
    if (!g.requires_grad(xi)) return;
    const Tensor& xv = g.value(xi);
    const Tensor& yv = g.value(self);
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_ref(xi);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += gy[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  check_same(a, b, "add");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const int ai = a.id, bi = b.id;
  return a.graph->make(std::move(y), {a, b}, [ai, bi](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    for (int p : {ai, bi}) {
      if (!g.requires_grad(p)) continue;
      Tensor& gp = g.grad_ref(p);
      for (std::size_t i = 0; i < gy.size(); ++i) gp[i] += gy[i];
    }
  });
}

Var sub(Var a, Var b) {
  check_same(a, b, "sub");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  const int ai = a.id, bi = b.id;
  return a.graph->make(std::move(y), {a, b}, [ai, bi](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    if (g.requires_grad(ai)) {
      Tensor& ga = g.grad_ref(ai);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (g.requires_grad(bi)) {
      Tensor& gb = g.grad_ref(bi);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
    }
  });
}

Var mul(Var a, Var b) {
  check_same(a, b, "mul");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  const int ai = a.id, bi = b.id;
  return a.graph->make(std::move(y), {a, b}, [ai, bi](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    const Tensor& av = g.value(ai);
    const Tensor& bv = g.value(bi);
    if (g.requires_grad(ai)) {
      Tensor& ga = g.grad_ref(ai);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (g.requires_grad(bi)) {
      Tensor& gb = g.grad_ref(bi);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var add_row(Var x, Var b) {
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  require(xv.rank() == 2 && static_cast<int>(bv.size()) == xv.cols(),
          "add_row: bias size does not match columns");
  Tensor y = xv;
  const int r = xv.rows(), c = xv.cols();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) y.at(i, j) += bv[j];
  const int xi = x.id, bi = b.id;
  return x.graph->make(std::move(y), {x, b}, [xi, bi, r, c](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    if (g.requires_grad(xi)) {
      Tensor& gx = g.grad_ref(xi);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
    if (g.requires_grad(bi)) {
      Tensor& gb = g.grad_ref(bi);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) gb[j] += gy.at(i, j);
    }
  });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rank() == 2 && bv.rank() == 2 && av.cols() == bv.rows(), [&] { return "matmul: incompatible shapes " + shape_str(av.shape) + " x " + shape_str(bv.shape); });
  const int m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor y({m, n});
  kernels::gemm(false, false, m, n, k, av.span(), bv.span(), y.span(), false);
  const int ai = a.id, bi = b.id;
  return a.graph->make(std::move(y), {a, b}, [ai, bi, m, n, k](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    if (g.requires_grad(ai))
      kernels::gemm(false, true, m, k, n, gy.span(), g.value(bi).span(), g.grad_ref(ai).span(), true);
    if (g.requires_grad(bi))
      kernels::gemm(true, false, k, n, m, g.value(ai).span(), g.grad_ref(self).span(),
                    g.grad_ref(bi).span(), true);
  });
}

Var linear(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  require(xv.rank() == 2 && wv.rank() == 2 && xv.cols() == wv.rows() &&
              static_cast<int>(bv.size()) == wv.cols(), [&] { return "linear: incompatible shapes " + shape_str(xv.shape) + " x " + shape_str(wv.shape); });
  const int m = xv.rows(), k = xv.cols(), n = wv.cols();
  Tensor y({m, n});
  for (int i = 0; i < m; ++i) std::copy(bv.data.begin(), bv.data.end(), y.data.begin() + i * n);
  kernels::gemm(false, false, m, n, k, xv.span(), wv.span(), y.span(), true);
  const int xi = x.id, wi = w.id, bi = b.id;
  return x.graph->make(std::move(y), {x, w, b}, [xi, wi, bi, m, n, k](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    if (g.requires_grad(xi))
      kernels::gemm(false, true, m, k, n, gy.span(), g.value(wi).span(), g.grad_ref(xi).span(), true);
    if (g.requires_grad(wi))
      kernels::gemm(true, false, k, n, m, g.value(xi).span(), g.grad_ref(self).span(),
                    g.grad_ref(wi).span(), true);
    if (g.requires_grad(bi)) {
      Tensor& gb = g.grad_ref(bi);
      const Tensor& gy2 = g.grad_ref(self);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gb[j] += gy2.at(i, j);
    }
  });
}

Var elu(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : std::expm1(v); },
      [](double v, double y) { return v > 0.0 ? 1.0 : y + 1.0; });
}

Var tanh(Var x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var x) {
  return unary(
      x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
}

Var exp(Var x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var reshape(Var x, std::vector<int> shape) {
  require(Tensor::count(shape) == x.value().size(), [&] { return "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape); });
  Tensor y(std::move(shape), x.value().data);
  const int xi = x.id;
  return x.graph->make(std::move(y), {x}, [xi](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_ref(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const int r = parts.front().value().rows();
  int total = 0;
  std::vector<int> widths;
  for (const Var& p : parts) {
    require(p.value().rank() == 2 && p.value().rows() == r, "concat_cols: row mismatch");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor y({r, total});
  int off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (int i = 0; i < r; ++i)
      std::copy_n(v.data.begin() + static_cast<std::ptrdiff_t>(i) * v.cols(), v.cols(),
                  y.data.begin() + static_cast<std::ptrdiff_t>(i) * total + off);
    off += v.cols();
  }
  std::vector<int> ids;
  for (const Var& p : parts) ids.push_back(p.id);
  return parts.front().graph->make(std::move(y), parts, [ids, widths, r, total](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    int off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (g.requires_grad(ids[k])) {
        Tensor& gp = g.grad_ref(ids[k]);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < widths[k]; ++j) gp[static_cast<std::size_t>(i) * widths[k] + j] += gy.at(i, off + j);
      }
      off += widths[k];
    }
    (void)total;
  });
}

Var slice_cols(Var x, int start, int len) {
  const Tensor& xv = x.value();
  require(xv.rank() == 2 && start >= 0 && len >= 0 && start + len <= xv.cols(),
          "slice_cols: out of range");
  const int r = xv.rows(), c = xv.cols();
  Tensor y({r, len});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < len; ++j) y.at(i, j) = xv.at(i, start + j);
  const int xi = x.id;
  return x.graph->make(std::move(y), {x}, [xi, r, c, start, len](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_ref(xi);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < len; ++j) gx[static_cast<std::size_t>(i) * c + start + j] += gy.at(i, j);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  std::vector<int> tail(parts.front().shape().begin() + 1, parts.front().shape().end());
  int rows = 0;
  std::vector<std::size_t> sizes;
  for (const Var& p : parts) {
    std::vector<int> t(p.shape().begin() + 1, p.shape().end());
    require(t == tail, "concat_rows: trailing shape mismatch");
    rows += p.shape().front();
    sizes.push_back(p.value().size());
  }
  std::vector<int> shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor y(shape);
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += p.value().size();
  }
  std::vector<int> ids;
  for (const Var& p : parts) ids.push_back(p.id);
  return parts.front().graph->make(std::move(y), parts, [ids, sizes](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (g.requires_grad(ids[k])) {
        Tensor& gp = g.grad_ref(ids[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) gp[i] += gy[off + i];
      }
      off += sizes[k];
    }
  });
}

Var slice_rows(Var x, int start, int len) {
  const Tensor& xv = x.value();
  require(xv.rank() >= 1 && start >= 0 && len >= 0 && start + len <= xv.shape.front(),
          "slice_rows: out of range");
  const std::size_t stride = xv.size() / static_cast<std::size_t>(xv.shape.front());
  std::vector<int> shape = xv.shape;
  shape.front() = len;
  Tensor y(shape);
  std::copy_n(xv.data.begin() + static_cast<std::ptrdiff_t>(start * stride), len * stride, y.data.begin());
  const int xi = x.id;
  const std::size_t off = start * stride;
  return x.graph->make(std::move(y), {x}, [xi, off](Graph& g, int self) {
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_ref(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[off + i] += gy[i];
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data) s += v;
  const int xi = x.id;
  return x.graph->make(Tensor({1}, {s}), {x}, [xi](Graph& g, int self) {
    const double gy = g.grad_ref(self)[0];
    Tensor& gx = g.grad_ref(xi);
    for (auto& v : gx.data) v += gy;
  });
}

Var sum_all(const std::vector<Var>& xs) {
  require(!xs.empty(), "sum_all: no inputs");
  double s = 0.0;
  std::vector<int> ids;
  for (const Var& x : xs) {
    require(x.value().size() == 1, "sum_all: inputs must be scalars");
    s += x.value()[0];
    ids.push_back(x.id);
  }
  return xs.front().graph->make(Tensor({1}, {s}), xs, [ids](Graph& g, int self) {
    const double gy = g.grad_ref(self)[0];
    for (int id : ids)
      if (g.requires_grad(id)) g.grad_ref(id)[0] += gy;
  });
}

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require(xv.rank() == 4 && wv.rank() == 4 && xv.dim(1) == wv.dim(1) && wv.dim(2) == wv.dim(3) &&
              static_cast<int>(b.value().size()) == wv.dim(0), [&] { return "conv2d: incompatible shapes " + shape_str(xv.shape) + " * " + shape_str(wv.shape); });
  kernels::ConvShape s{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), stride, pad};
  require(s.conv_out_h() > 0 && s.conv_out_w() > 0, "conv2d: input too small");
  Tensor y({s.batch, s.out_channels, s.conv_out_h(), s.conv_out_w()});
  kernels::conv2d(s, xv.span(), wv.span(), b.value().span(), y.span());
  const int xi = x.id, wi = w.id, bi = b.id;
  return x.graph->make(std::move(y), {x, w, b}, [xi, wi, bi, s](Graph& g, int self) {
    std::span<double> gx, gw, gb;
    if (g.requires_grad(xi)) gx = g.grad_ref(xi).span();
    if (g.requires_grad(wi)) gw = g.grad_ref(wi).span();
    if (g.requires_grad(bi)) gb = g.grad_ref(bi).span();
    kernels::conv2d_backward(s, g.value(xi).span(), g.value(wi).span(), g.grad_ref(self).span(), gx,
                             gw, gb);
  });
}

Var conv_transpose2d(Var x, Var w, Var b, int stride, int pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require(xv.rank() == 4 && wv.rank() == 4 && xv.dim(1) == wv.dim(0) && wv.dim(2) == wv.dim(3) &&
              static_cast<int>(b.value().size()) == wv.dim(1), [&] { return "conv_transpose2d: incompatible shapes " + shape_str(xv.shape) + " * " + shape_str(wv.shape); });
  kernels::ConvShape s{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(1), wv.dim(2), stride, pad};
  Tensor y({s.batch, s.out_channels, s.deconv_out_h(), s.deconv_out_w()});
  kernels::conv_transpose2d(s, xv.span(), wv.span(), b.value().span(), y.span());
  const int xi = x.id, wi = w.id, bi = b.id;
  return x.graph->make(std::move(y), {x, w, b}, [xi, wi, bi, s](Graph& g, int self) {
    std::span<double> gx, gw, gb;
    if (g.requires_grad(xi)) gx = g.grad_ref(xi).span();
    if (g.requires_grad(wi)) gw = g.grad_ref(wi).span();
    if (g.requires_grad(bi)) gb = g.grad_ref(bi).span();
    kernels::conv_transpose2d_backward(s, g.value(xi).span(), g.value(wi).span(),
                                       g.grad_ref(self).span(), gx, gw, gb);
  });
}

}  // namespace dlh::ad
