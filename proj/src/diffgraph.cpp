#include "pdeformer/diffgraph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pdeformer {

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Shift: return "shift";
    case OpKind::AddRow: return "add_row";
    case OpKind::AddConst: return "add_const";
    case OpKind::Relu: return "relu";
    case OpKind::Exp: return "exp";
    case OpKind::Clamp: return "clamp";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::Transpose: return "transpose";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::Sum: return "sum";
    case OpKind::MeanRows: return "mean_rows";
    case OpKind::Laplacian: return "laplacian";
    case OpKind::EmbedRows: return "embed_rows";
  }
  return "?";
}

NodeId DiffGraph::push(Node n) {
  const NodeId id = nodes_.size();
  n.value.check_finite(std::string(op_name(n.kind)) + " (node " + std::to_string(id) + ")");
  nodes_.push_back(std::move(n));
  return id;
}

NodeId DiffGraph::leaf(Tensor v) {
  Node n;
  n.kind = OpKind::Leaf;
  n.value = std::move(v);
  return push(std::move(n));
}

NodeId DiffGraph::matmul(NodeId a, NodeId b) {
  Node n;
  n.kind = OpKind::MatMul;
  n.inputs = {a, b};
  n.value = pdeformer::matmul(value(a), value(b));
  return push(std::move(n));
}

NodeId DiffGraph::add(NodeId a, NodeId b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (!x.same_shape(y)) {
    throw ShapeError("add shape mismatch: " + shape_str(x.shape()) + " vs " +
                     shape_str(y.shape()));
  }
  Node n;
  n.kind = OpKind::Add;
  n.inputs = {a, b};
  n.value = x;
  for (std::size_t i = 0; i < y.size(); ++i) n.value[i] += y[i];
  return push(std::move(n));
}

NodeId DiffGraph::sub(NodeId a, NodeId b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (!x.same_shape(y)) {
    throw ShapeError("sub shape mismatch: " + shape_str(x.shape()) + " vs " +
                     shape_str(y.shape()));
  }
  Node n;
  n.kind = OpKind::Sub;
  n.inputs = {a, b};
  n.value = x;
  for (std::size_t i = 0; i < y.size(); ++i) n.value[i] -= y[i];
  return push(std::move(n));
}

NodeId DiffGraph::mul(NodeId a, NodeId b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (!x.same_shape(y)) {
    throw ShapeError("mul shape mismatch: " + shape_str(x.shape()) + " vs " +
                     shape_str(y.shape()));
  }
  Node n;
  n.kind = OpKind::Mul;
  n.inputs = {a, b};
  n.value = x;
  for (std::size_t i = 0; i < y.size(); ++i) n.value[i] *= y[i];
  return push(std::move(n));
}

NodeId DiffGraph::scale(NodeId x, double c) {
  Node n;
  n.kind = OpKind::Scale;
  n.inputs = {x};
  n.a = c;
  n.value = value(x);
  for (double& v : n.value.data()) v *= c;
  return push(std::move(n));
}

NodeId DiffGraph::shift(NodeId x, double c) {
  Node n;
  n.kind = OpKind::Shift;
  n.inputs = {x};
  n.a = c;
  n.value = value(x);
  for (double& v : n.value.data()) v += c;
  return push(std::move(n));
}

NodeId DiffGraph::add_row(NodeId x, NodeId row) {
  const Tensor& m = value(x);
  const Tensor& r = value(row);
  if (m.rank() != 2 || r.size() != m.cols()) {
    throw ShapeError("add_row shape mismatch: " + shape_str(m.shape()) + " vs " +
                     shape_str(r.shape()));
  }
  Node n;
  n.kind = OpKind::AddRow;
  n.inputs = {x, row};
  n.value = m;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) n.value(i, j) += r[j];
  return push(std::move(n));
}

NodeId DiffGraph::add_const(NodeId x, Tensor c) {
  const Tensor& m = value(x);
  if (!m.same_shape(c)) {
    throw ShapeError("add_const shape mismatch: " + shape_str(m.shape()) + " vs " +
                     shape_str(c.shape()));
  }
  Node n;
  n.kind = OpKind::AddConst;
  n.inputs = {x};
  n.value = m;
  for (std::size_t i = 0; i < c.size(); ++i) n.value[i] += c[i];
  n.constant = std::move(c);
  return push(std::move(n));
}

NodeId DiffGraph::relu(NodeId x) {
  Node n;
  n.kind = OpKind::Relu;
  n.inputs = {x};
  n.value = value(x);
  for (double& v : n.value.data()) v = std::max(0.0, v);
  return push(std::move(n));
}

NodeId DiffGraph::exp(NodeId x) {
  Node n;
  n.kind = OpKind::Exp;
  n.inputs = {x};
  n.value = value(x);
  for (double& v : n.value.data()) v = std::exp(v);
  return push(std::move(n));
}

NodeId DiffGraph::clamp(NodeId x, double lo, double hi) {
  if (!(lo <= hi)) throw ShapeError("clamp requires lo <= hi");
  Node n;
  n.kind = OpKind::Clamp;
  n.inputs = {x};
  n.a = lo;
  n.b = hi;
  n.value = value(x);
  for (double& v : n.value.data()) v = std::min(hi, std::max(lo, v));
  return push(std::move(n));
}

NodeId DiffGraph::softmax(NodeId x, std::size_t axis) {
  const Tensor& v = value(x);
  if (v.rank() == 1) {
    if (axis != 0) throw ShapeError("softmax axis out of range for rank-1 input");
    return softmax_rows(x);
  }
  if (v.rank() == 2) {
    if (axis == 1) return softmax_rows(x);
    if (axis == 0) return transpose(softmax_rows(transpose(x)));
    throw ShapeError("softmax axis out of range for rank-2 input");
  }
  throw ShapeError("softmax expects rank-1 or rank-2, got " + shape_str(v.shape()));
}

NodeId DiffGraph::softmax_rows(NodeId x) {
  const Tensor& v = value(x);
  if (v.rank() != 1 && v.rank() != 2) {
    throw ShapeError("softmax_rows expects rank-1 or rank-2, got " + shape_str(v.shape()));
  }
  const std::size_t rows = v.rank() == 2 ? v.rows() : 1;
  const std::size_t cols = v.rank() == 2 ? v.cols() : v.size();
  Node n;
  n.kind = OpKind::SoftmaxRows;
  n.inputs = {x};
  n.value = v;
  for (std::size_t i = 0; i < rows; ++i) {
    double* row = &n.value.data()[i * cols];
    double mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < cols; ++j) row[j] /= z;
  }
  return push(std::move(n));
}

NodeId DiffGraph::transpose(NodeId x) {
  Node n;
  n.kind = OpKind::Transpose;
  n.inputs = {x};
  n.value = pdeformer::transpose(value(x));
  return push(std::move(n));
}

NodeId DiffGraph::slice_cols(NodeId x, std::size_t start, std::size_t width) {
  const Tensor& m = value(x);
  if (m.rank() != 2 || width == 0 || start + width > m.cols()) {
    throw ShapeError("slice_cols [" + std::to_string(start) + ", " +
                     std::to_string(start + width) + ") out of range for " +
                     shape_str(m.shape()));
  }
  Node n;
  n.kind = OpKind::SliceCols;
  n.inputs = {x};
  n.idx = {start, width};
  n.value = Tensor({m.rows(), width});
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < width; ++j) n.value(i, j) = m(i, start + j);
  return push(std::move(n));
}

NodeId DiffGraph::concat_cols(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols needs at least one input");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t total = 0;
  Node n;
  n.kind = OpKind::ConcatCols;
  for (NodeId p : parts) {
    const Tensor& t = value(p);
    if (t.rank() != 2 || t.rows() != rows) {
      throw ShapeError("concat_cols row mismatch at " + shape_str(t.shape()));
    }
    n.inputs.push_back(p);
    n.idx.push_back(t.cols());
    total += t.cols();
  }
  n.value = Tensor({rows, total});
  std::size_t off = 0;
  for (NodeId p : parts) {
    const Tensor& t = value(p);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < t.cols(); ++j) n.value(i, off + j) = t(i, j);
    off += t.cols();
  }
  return push(std::move(n));
}

namespace {
constexpr double kLayerNormEps = 1e-5;
}

NodeId DiffGraph::layer_norm(NodeId x, NodeId gain, NodeId bias) {
  const Tensor& m = value(x);
  const Tensor& g = value(gain);
  const Tensor& b = value(bias);
  if (m.rank() != 2) throw ShapeError("layer_norm expects rank-2 input");
  const std::size_t d = m.cols();
  if (d < 2) throw ShapeError("layer_norm requires feature width >= 2");
  if (g.size() != d || b.size() != d) {
    throw ShapeError("layer_norm gain/bias size must match feature width " + std::to_string(d));
  }
  Node n;
  n.kind = OpKind::LayerNorm;
  n.inputs = {x, gain, bias};
  n.value = Tensor({m.rows(), d});
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += m(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = m(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) {
      n.value(i, j) = g[j] * (m(i, j) - mean) * inv + b[j];
    }
  }
  return push(std::move(n));
}

NodeId DiffGraph::cross_entropy(NodeId logits, std::vector<std::size_t> labels) {
  const Tensor& m = value(logits);
  if (m.rank() != 2) throw ShapeError("cross_entropy expects rank-2 logits");
  if (labels.size() != m.rows()) {
    throw ShapeError("cross_entropy label count " + std::to_string(labels.size()) +
                     " does not match batch " + std::to_string(m.rows()));
  }
  for (std::size_t lab : labels) {
    if (lab >= m.cols()) {
      throw ShapeError("cross_entropy label " + std::to_string(lab) + " out of range [0, " +
                       std::to_string(m.cols()) + ")");
    }
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double mx = m(i, 0);
    for (std::size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, m(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) z += std::exp(m(i, j) - mx);
    loss += std::log(z) - (m(i, labels[i]) - mx);
  }
  Node n;
  n.kind = OpKind::CrossEntropy;
  n.inputs = {logits};
  n.idx = std::move(labels);
  n.value = Tensor::scalar(loss / static_cast<double>(m.rows()));
  return push(std::move(n));
}

NodeId DiffGraph::sum(NodeId x) {
  double s = 0.0;
  for (double v : value(x).data()) s += v;
  Node n;
  n.kind = OpKind::Sum;
  n.inputs = {x};
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

NodeId DiffGraph::mean_rows(NodeId x) {
  const Tensor& m = value(x);
  if (m.rank() != 2) throw ShapeError("mean_rows expects rank-2 input");
  Node n;
  n.kind = OpKind::MeanRows;
  n.inputs = {x};
  n.value = Tensor({1, m.cols()});
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) n.value(0, j) += m(i, j);
  for (std::size_t j = 0; j < m.cols(); ++j) n.value(0, j) /= static_cast<double>(m.rows());
  return push(std::move(n));
}

NodeId DiffGraph::laplacian(NodeId x, double dx) {
  Node n;
  n.kind = OpKind::Laplacian;
  n.inputs = {x};
  n.a = dx;
  n.value = pdeformer::laplacian(value(x), dx);
  return push(std::move(n));
}

NodeId DiffGraph::embed_rows(NodeId table, std::vector<std::size_t> ids) {
  const Tensor& t = value(table);
  if (t.rank() != 2) throw ShapeError("embed_rows expects rank-2 table");
  if (ids.empty()) throw ShapeError("embed_rows needs at least one id");
  for (std::size_t id : ids) {
    if (id >= t.rows()) {
      throw ShapeError("embed_rows id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(t.rows()) + ")");
    }
  }
  Node n;
  n.kind = OpKind::EmbedRows;
  n.inputs = {table};
  n.value = Tensor({ids.size(), t.cols()});
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) n.value(i, j) = t(ids[i], j);
  n.idx = std::move(ids);
  return push(std::move(n));
}

const Tensor& DiffGraph::grad(NodeId id) const {
  const Node& n = nodes_.at(id);
  if (n.grad.empty()) throw ShapeError("gradient not computed for node " + std::to_string(id));
  return n.grad;
}

void DiffGraph::clear_grads() {
  for (Node& n : nodes_) n.grad = Tensor();
}

void DiffGraph::accumulate(NodeId id, const Tensor& g) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void DiffGraph::backward(NodeId root) {
  if (root >= nodes_.size()) throw ShapeError("backward: no such node");
  if (nodes_[root].value.size() != 1) {
    throw ShapeError("backward root must be scalar, got shape " +
                     shape_str(nodes_[root].value.shape()));
  }
  accumulate(root, Tensor::full(nodes_[root].value.shape(), 1.0));
  // Tape order is topological; replaying in reverse visits every consumer
  // before its producers, so accumulation order is deterministic.
  for (std::size_t i = root + 1; i-- > 0;) {
    if (!nodes_[i].grad.empty()) backprop_node(i);
  }
}

void DiffGraph::backprop_node(NodeId id) {
  const Node& n = nodes_[id];
  const Tensor& g = n.grad;
  switch (n.kind) {
    case OpKind::Leaf:
      break;
    case OpKind::MatMul: {
      const Tensor& a = value(n.inputs[0]);
      const Tensor& b = value(n.inputs[1]);
      accumulate(n.inputs[0], pdeformer::matmul(g, pdeformer::transpose(b)));
      accumulate(n.inputs[1], pdeformer::matmul(pdeformer::transpose(a), g));
      break;
    }
    case OpKind::Add:
      accumulate(n.inputs[0], g);
      accumulate(n.inputs[1], g);
      break;
    case OpKind::Sub: {
      accumulate(n.inputs[0], g);
      Tensor neg = g;
      for (double& v : neg.data()) v = -v;
      accumulate(n.inputs[1], neg);
      break;
    }
    case OpKind::Mul: {
      const Tensor& a = value(n.inputs[0]);
      const Tensor& b = value(n.inputs[1]);
      Tensor da = g, db = g;
      for (std::size_t i = 0; i < g.size(); ++i) {
        da[i] *= b[i];
        db[i] *= a[i];
      }
      accumulate(n.inputs[0], da);
      accumulate(n.inputs[1], db);
      break;
    }
    case OpKind::Scale: {
      Tensor d = g;
      for (double& v : d.data()) v *= n.a;
      accumulate(n.inputs[0], d);
      break;
    }
    case OpKind::Shift:
    case OpKind::AddConst:
      accumulate(n.inputs[0], g);
      break;
    case OpKind::AddRow: {
      accumulate(n.inputs[0], g);
      const Tensor& r = value(n.inputs[1]);
      Tensor dr(r.shape());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) dr[j] += g(i, j);
      accumulate(n.inputs[1], dr);
      break;
    }
    case OpKind::Relu: {
      const Tensor& x = value(n.inputs[0]);
      Tensor d = g;
      for (std::size_t i = 0; i < d.size(); ++i)
        if (x[i] <= 0.0) d[i] = 0.0;
      accumulate(n.inputs[0], d);
      break;
    }
    case OpKind::Exp: {
      Tensor d = g;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= n.value[i];
      accumulate(n.inputs[0], d);
      break;
    }
    case OpKind::Clamp: {
      const Tensor& x = value(n.inputs[0]);
      Tensor d = g;
      for (std::size_t i = 0; i < d.size(); ++i)
        if (x[i] <= n.a || x[i] >= n.b) d[i] = 0.0;
      accumulate(n.inputs[0], d);
      break;
    }
    case OpKind::SoftmaxRows: {
      const Tensor& y = n.value;
      const std::size_t rows = y.rank() == 2 ? y.rows() : 1;
      const std::size_t cols = y.rank() == 2 ? y.cols() : y.size();
      Tensor d(y.shape());
      for (std::size_t i = 0; i < rows; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += g[i * cols + j] * y[i * cols + j];
        for (std::size_t j = 0; j < cols; ++j)
          d[i * cols + j] = y[i * cols + j] * (g[i * cols + j] - dot);
      }
      accumulate(n.inputs[0], d);
      break;
    }
    case OpKind::Transpose:
      accumulate(n.inputs[0], pdeformer::transpose(g));
      break;
    case OpKind::SliceCols: {
      const Tensor& x = value(n.inputs[0]);
      Tensor d(x.shape());
      const std::size_t start = n.idx[0], width = n.idx[1];
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < width; ++j) d(i, start + j) = g(i, j);
      accumulate(n.inputs[0], d);
      break;
    }
    case OpKind::ConcatCols: {
      std::size_t off = 0;
      for (std::size_t p = 0; p < n.inputs.size(); ++p) {
        const std::size_t w = n.idx[p];
        Tensor d({g.rows(), w});
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) d(i, j) = g(i, off + j);
        accumulate(n.inputs[p], d);
        off += w;
      }
      break;
    }
    case OpKind::LayerNorm: {
      const Tensor& x = value(n.inputs[0]);
      const Tensor& gain = value(n.inputs[1]);
      const std::size_t d = x.cols();
      Tensor dx(x.shape());
      Tensor dgain(value(n.inputs[1]).shape());
      Tensor dbias(value(n.inputs[2]).shape());
      for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += x(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double c = x(i, j) - mean;
          var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        double gsum = 0.0, gxsum = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double xh = (x(i, j) - mean) * inv;
          const double gj = g(i, j) * gain[j];
          gsum += gj;
          gxsum += gj * xh;
          dgain[j] += g(i, j) * xh;
          dbias[j] += g(i, j);
        }
        gsum /= static_cast<double>(d);
        gxsum /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const double xh = (x(i, j) - mean) * inv;
          dx(i, j) = inv * (g(i, j) * gain[j] - gsum - xh * gxsum);
        }
      }
      accumulate(n.inputs[0], dx);
      accumulate(n.inputs[1], dgain);
      accumulate(n.inputs[2], dbias);
      break;
    }
    case OpKind::CrossEntropy: {
      const Tensor& m = value(n.inputs[0]);
      const double gs = g[0] / static_cast<double>(m.rows());
      Tensor d(m.shape());
      for (std::size_t i = 0; i < m.rows(); ++i) {
        double mx = m(i, 0);
        for (std::size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, m(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) z += std::exp(m(i, j) - mx);
        for (std::size_t j = 0; j < m.cols(); ++j) {
          double p = std::exp(m(i, j) - mx) / z;
          if (j == n.idx[i]) p -= 1.0;
          d(i, j) = gs * p;
        }
      }
      accumulate(n.inputs[0], d);
      break;
    }
    case OpKind::Sum: {
      const Tensor& x = value(n.inputs[0]);
      accumulate(n.inputs[0], Tensor::full(x.shape(), g[0]));
      break;
    }
    case OpKind::MeanRows: {
      const Tensor& x = value(n.inputs[0]);
      Tensor d(x.shape());
      const double inv = 1.0 / static_cast<double>(x.rows());
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) d(i, j) = g(0, j) * inv;
      accumulate(n.inputs[0], d);
      break;
    }
    case OpKind::Laplacian:
      // The discrete operator with zero ghost rows is symmetric, so the
      // adjoint is the operator itself.
      accumulate(n.inputs[0], pdeformer::laplacian(g, n.a));
      break;
    case OpKind::EmbedRows: {
      const Tensor& t = value(n.inputs[0]);
      Tensor d(t.shape());
      for (std::size_t i = 0; i < n.idx.size(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) d(n.idx[i], j) += g(i, j);
      accumulate(n.inputs[0], d);
      break;
    }
  }
}

}  // namespace pdeformer
