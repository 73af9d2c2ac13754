#include "pepnet/graph.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace pepnet {

const Tensor Graph::kEmptyGrad{};

const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kAddRow: return "add_row";
    case Op::kRelu: return "relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kMul: return "mul";
    case Op::kConcat: return "concat";
    case Op::kSplit: return "split";
    case Op::kStopGradient: return "stop_gradient";
    case Op::kRepeatCols: return "repeat_cols";
    case Op::kScale: return "scale";
    case Op::kSum: return "sum";
    case Op::kBceLoss: return "bce_loss";
    case Op::kEmbeddingRows: return "embedding_rows";
  }
  return "?";
}

namespace {

double stable_sigmoid(double x) {
  double v;
  if (x >= 0.0) {
    const double e = std::exp(-x);
    v = 1.0 / (1.0 + e);
  } else {
    const double e = std::exp(x);
    v = e / (1.0 + e);
  }
  // keep saturated outputs strictly inside (0,1)
  if (v >= 1.0) v = std::nextafter(1.0, 0.0);
  if (v <= 0.0) v = std::numeric_limits<double>::min();
  return v;
}

constexpr double kBceClamp = 1e-12;

}  // namespace

NodeId Graph::push(Node n) {
  if (n.op != Op::kStopGradient && !n.value.all_finite()) {
    throw std::runtime_error(std::string("non-finite values produced by ") + op_name(n.op));
  }
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

const Tensor& Graph::grad(NodeId id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.grad_live) throw std::logic_error("gradient not computed; run backward() first");
  return n.grad;
}

NodeId Graph::constant(Tensor v) {
  Node n;
  n.value = std::move(v);
  n.op = Op::kConstant;
  n.requires_grad = false;
  return push(std::move(n));
}

NodeId Graph::input(Tensor v) {
  Node n;
  n.value = std::move(v);
  n.op = Op::kInput;
  n.requires_grad = true;
  return push(std::move(n));
}

NodeId Graph::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return it->second;
  Node n;
  n.value = p.value;
  n.op = Op::kParam;
  n.requires_grad = true;
  n.bound = &p;
  NodeId id = push(std::move(n));
  param_nodes_.emplace(&p, id);
  return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw std::invalid_argument("matmul: incompatible shapes " + av.shape_str() + " and " +
                                bv.shape_str());
  }
  const int64_t m = av.rows(), k = av.cols(), p = bv.cols();
  Node n;
  n.value = Tensor::zeros({m, p});
  const double* A = av.data();
  const double* B = bv.data();
  double* C = n.value.data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t kk = 0; kk < k; ++kk) {
      const double aik = A[i * k + kk];
      if (aik == 0.0) continue;
      const double* Brow = B + kk * p;
      double* Crow = C + i * p;
      for (int64_t j = 0; j < p; ++j) Crow[j] += aik * Brow[j];
    }
  }
  n.op = Op::kMatmul;
  n.inputs = {a, b};
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.same_shape(bv)) {
    throw std::invalid_argument("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  }
  Node n;
  n.value = av;
  double* out = n.value.data();
  const double* B = bv.data();
  for (int64_t i = 0; i < av.size(); ++i) out[i] += B[i];
  n.op = Op::kAdd;
  n.inputs = {a, b};
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n));
}

NodeId Graph::add_row(NodeId m, NodeId row) {
  const Tensor& mv = value(m);
  const Tensor& rv = value(row);
  if (rv.rank() != 1 || mv.last_dim() != rv.size()) {
    throw std::invalid_argument("add_row: shape mismatch " + mv.shape_str() + " vs " +
                                rv.shape_str());
  }
  const int64_t rows = mv.outer_dim(), c = mv.last_dim();
  Node n;
  n.value = mv;
  double* out = n.value.data();
  const double* b = rv.data();
  for (int64_t r = 0; r < rows; ++r) {
    double* orow = out + r * c;
    for (int64_t j = 0; j < c; ++j) orow[j] += b[j];
  }
  n.op = Op::kAddRow;
  n.inputs = {m, row};
  n.requires_grad = node(m).requires_grad || node(row).requires_grad;
  return push(std::move(n));
}

NodeId Graph::relu(NodeId x) {
  const Tensor& xv = value(x);
  Node n;
  n.value = xv;
  double* out = n.value.data();
  for (int64_t i = 0; i < xv.size(); ++i) {
    if (out[i] < 0.0) out[i] = 0.0;
  }
  n.op = Op::kRelu;
  n.inputs = {x};
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId x) {
  const Tensor& xv = value(x);
  Node n;
  n.value = Tensor::zeros(xv.shape());
  const double* in = xv.data();
  double* out = n.value.data();
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = stable_sigmoid(in[i]);
  n.op = Op::kSigmoid;
  n.inputs = {x};
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

NodeId Graph::softmax_rows(NodeId x) {
  const Tensor& xv = value(x);
  const int64_t rows = xv.outer_dim(), c = xv.last_dim();
  Node n;
  n.value = Tensor::zeros(xv.shape());
  const double* in = xv.data();
  double* out = n.value.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* irow = in + r * c;
    double* orow = out + r * c;
    double mx = irow[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, irow[j]);
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      orow[j] = std::exp(irow[j] - mx);
      z += orow[j];
    }
    for (int64_t j = 0; j < c; ++j) orow[j] /= z;
  }
  n.op = Op::kSoftmaxRows;
  n.inputs = {x};
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.same_shape(bv)) {
    throw std::invalid_argument("mul: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  }
  Node n;
  n.value = av;
  double* out = n.value.data();
  const double* B = bv.data();
  for (int64_t i = 0; i < av.size(); ++i) out[i] *= B[i];
  n.op = Op::kMul;
  n.inputs = {a, b};
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n));
}

NodeId Graph::concat(std::span<const NodeId> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: empty part list");
  const Tensor& first = value(parts[0]);
  const int64_t outer = first.outer_dim();
  std::vector<int64_t> lead(first.shape().begin(), first.shape().end() - 1);
  int64_t total = 0;
  for (NodeId p : parts) {
    const Tensor& v = value(p);
    std::vector<int64_t> plead(v.shape().begin(), v.shape().end() - 1);
    if (v.rank() != first.rank() || plead != lead) {
      throw std::invalid_argument("concat: incompatible shapes " + first.shape_str() + " and " +
                                  v.shape_str());
    }
    total += v.last_dim();
  }
  std::vector<int64_t> shape = lead;
  shape.push_back(total);
  Node n;
  n.value = Tensor::zeros(shape);
  double* out = n.value.data();
  int64_t off = 0;
  for (NodeId p : parts) {
    const Tensor& v = value(p);
    const int64_t w = v.last_dim();
    const double* in = v.data();
    for (int64_t r = 0; r < outer; ++r) {
      double* dst = out + r * total + off;
      const double* src = in + r * w;
      for (int64_t j = 0; j < w; ++j) dst[j] = src[j];
    }
    n.widths.push_back(w);
    off += w;
  }
  n.op = Op::kConcat;
  n.inputs.assign(parts.begin(), parts.end());
  for (NodeId p : parts) n.requires_grad = n.requires_grad || node(p).requires_grad;
  return push(std::move(n));
}

std::vector<NodeId> Graph::split(NodeId x, std::span<const int64_t> widths) {
  const Tensor& xv = value(x);
  int64_t total = 0;
  for (int64_t w : widths) {
    if (w <= 0) throw std::invalid_argument("split: widths must be positive");
    total += w;
  }
  if (total != xv.last_dim()) {
    throw std::invalid_argument("split: widths sum " + std::to_string(total) +
                                " does not match last dimension of " + xv.shape_str());
  }
  const int64_t outer = xv.outer_dim(), c = xv.last_dim();
  const bool rg = node(x).requires_grad;
  // build every slice before pushing: push() may reallocate the tape and
  // would invalidate xv
  std::vector<Node> slices;
  slices.reserve(widths.size());
  int64_t off = 0;
  for (int64_t w : widths) {
    std::vector<int64_t> shape(xv.shape().begin(), xv.shape().end() - 1);
    shape.push_back(w);
    Node n;
    n.value = Tensor::zeros(shape);
    double* dst = n.value.data();
    const double* src = xv.data();
    for (int64_t r = 0; r < outer; ++r) {
      for (int64_t j = 0; j < w; ++j) dst[r * w + j] = src[r * c + off + j];
    }
    n.op = Op::kSplit;
    n.inputs = {x};
    n.offset = off;
    n.requires_grad = rg;
    slices.push_back(std::move(n));
    off += w;
  }
  std::vector<NodeId> out;
  out.reserve(slices.size());
  for (Node& n : slices) out.push_back(push(std::move(n)));
  return out;
}

NodeId Graph::stop_gradient(NodeId x) {
  Node n;
  n.value = value(x);
  n.op = Op::kStopGradient;
  n.inputs = {x};
  n.requires_grad = false;
  return push(std::move(n));
}

NodeId Graph::repeat_cols(NodeId x, std::span<const int64_t> widths) {
  const Tensor& xv = value(x);
  if (xv.last_dim() != static_cast<int64_t>(widths.size())) {
    throw std::invalid_argument("repeat_cols: " + std::to_string(widths.size()) +
                                " widths for last dimension of " + xv.shape_str());
  }
  int64_t total = 0;
  for (int64_t w : widths) {
    if (w <= 0) throw std::invalid_argument("repeat_cols: widths must be positive");
    total += w;
  }
  const int64_t outer = xv.outer_dim(), f = xv.last_dim();
  std::vector<int64_t> shape(xv.shape().begin(), xv.shape().end() - 1);
  shape.push_back(total);
  Node n;
  n.value = Tensor::zeros(shape);
  const double* in = xv.data();
  double* out = n.value.data();
  for (int64_t r = 0; r < outer; ++r) {
    double* orow = out + r * total;
    int64_t off = 0;
    for (int64_t j = 0; j < f; ++j) {
      const double v = in[r * f + j];
      for (int64_t t = 0; t < widths[j]; ++t) orow[off + t] = v;
      off += widths[j];
    }
  }
  n.op = Op::kRepeatCols;
  n.inputs = {x};
  n.widths.assign(widths.begin(), widths.end());
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double c) {
  const Tensor& xv = value(x);
  Node n;
  n.value = xv;
  double* out = n.value.data();
  for (int64_t i = 0; i < xv.size(); ++i) out[i] *= c;
  n.op = Op::kScale;
  n.inputs = {x};
  n.scalar = c;
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

NodeId Graph::sum(NodeId x) {
  const Tensor& xv = value(x);
  double s = 0.0;
  for (int64_t i = 0; i < xv.size(); ++i) s += xv[i];
  Node n;
  n.value = Tensor::scalar(s);
  n.op = Op::kSum;
  n.inputs = {x};
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

NodeId Graph::bce_loss(NodeId pred, const Tensor& labels) {
  const Tensor& pv = value(pred);
  if (!pv.same_shape(labels)) {
    throw std::invalid_argument("bce_loss: shape mismatch " + pv.shape_str() + " vs " +
                                labels.shape_str());
  }
  for (int64_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) {
      throw std::invalid_argument("bce_loss: label values must be 0 or 1");
    }
  }
  const int64_t n_el = pv.size();
  double acc = 0.0;
  for (int64_t i = 0; i < n_el; ++i) {
    const double p = std::min(std::max(pv[i], kBceClamp), 1.0 - kBceClamp);
    acc += labels[i] == 1.0 ? -std::log(p) : -std::log1p(-p);
  }
  Node n;
  n.value = Tensor::scalar(acc / static_cast<double>(n_el));
  n.op = Op::kBceLoss;
  n.inputs = {pred};
  n.labels = labels;
  n.requires_grad = node(pred).requires_grad;
  return push(std::move(n));
}

NodeId Graph::embedding_rows(NodeId table, std::span<const int32_t> rows) {
  const Tensor& tv = value(table);
  if (tv.rank() != 2) {
    throw std::invalid_argument("embedding_rows: table must be rank 2, got " + tv.shape_str());
  }
  const int64_t v = tv.rows(), d = tv.cols();
  Node n;
  n.value = Tensor::zeros({static_cast<int64_t>(rows.size()), d});
  double* out = n.value.data();
  const double* in = tv.data();
  for (size_t b = 0; b < rows.size(); ++b) {
    const int32_t r = rows[b];
    if (r < 0 || r >= v) throw std::invalid_argument("embedding_rows: row index out of range");
    for (int64_t j = 0; j < d; ++j) out[b * static_cast<size_t>(d) + j] = in[r * d + j];
  }
  n.op = Op::kEmbeddingRows;
  n.inputs = {table};
  n.indices.assign(rows.begin(), rows.end());
  n.requires_grad = node(table).requires_grad;
  return push(std::move(n));
}

void Graph::backward(NodeId loss) {
  Node& top = nodes_[static_cast<size_t>(loss)];
  if (top.value.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + top.value.shape_str());
  }
  for (Node& n : nodes_) {
    if (!n.grad_live) {
      n.grad = Tensor::zeros(n.value.shape());
      n.grad_live = true;
    }
  }
  top.grad[0] += 1.0;

  for (int64_t id = loss; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) continue;
    const double* g = n.grad.data();
    switch (n.op) {
      case Op::kConstant:
      case Op::kInput:
      case Op::kParam:
      case Op::kStopGradient:
        break;
      case Op::kMatmul: {
        Node& a = nodes_[static_cast<size_t>(n.inputs[0])];
        Node& b = nodes_[static_cast<size_t>(n.inputs[1])];
        const int64_t m = a.value.rows(), k = a.value.cols(), p = b.value.cols();
        if (a.requires_grad) {
          double* ag = a.grad.data();
          const double* B = b.value.data();
          for (int64_t i = 0; i < m; ++i) {
            for (int64_t kk = 0; kk < k; ++kk) {
              double s = 0.0;
              const double* grow = g + i * p;
              const double* brow = B + kk * p;
              for (int64_t j = 0; j < p; ++j) s += grow[j] * brow[j];
              ag[i * k + kk] += s;
            }
          }
        }
        if (b.requires_grad) {
          double* bg = b.grad.data();
          const double* A = a.value.data();
          for (int64_t i = 0; i < m; ++i) {
            const double* grow = g + i * p;
            for (int64_t kk = 0; kk < k; ++kk) {
              const double aik = A[i * k + kk];
              if (aik == 0.0) continue;
              double* brow = bg + kk * p;
              for (int64_t j = 0; j < p; ++j) brow[j] += aik * grow[j];
            }
          }
        }
        break;
      }
      case Op::kAdd: {
        for (int s = 0; s < 2; ++s) {
          Node& in = nodes_[static_cast<size_t>(n.inputs[static_cast<size_t>(s)])];
          if (!in.requires_grad) continue;
          double* ig = in.grad.data();
          for (int64_t i = 0; i < n.value.size(); ++i) ig[i] += g[i];
        }
        break;
      }
      case Op::kAddRow: {
        Node& m = nodes_[static_cast<size_t>(n.inputs[0])];
        Node& row = nodes_[static_cast<size_t>(n.inputs[1])];
        const int64_t rows = n.value.outer_dim(), c = n.value.last_dim();
        if (m.requires_grad) {
          double* mg = m.grad.data();
          for (int64_t i = 0; i < n.value.size(); ++i) mg[i] += g[i];
        }
        if (row.requires_grad) {
          double* rg = row.grad.data();
          for (int64_t r = 0; r < rows; ++r) {
            const double* grow = g + r * c;
            for (int64_t j = 0; j < c; ++j) rg[j] += grow[j];
          }
        }
        break;
      }
      case Op::kRelu: {
        Node& x = nodes_[static_cast<size_t>(n.inputs[0])];
        if (x.requires_grad) {
          double* xg = x.grad.data();
          const double* xv = x.value.data();
          for (int64_t i = 0; i < n.value.size(); ++i) {
            if (xv[i] > 0.0) xg[i] += g[i];
          }
        }
        break;
      }
      case Op::kSigmoid: {
        Node& x = nodes_[static_cast<size_t>(n.inputs[0])];
        if (x.requires_grad) {
          double* xg = x.grad.data();
          const double* y = n.value.data();
          for (int64_t i = 0; i < n.value.size(); ++i) xg[i] += g[i] * y[i] * (1.0 - y[i]);
        }
        break;
      }
      case Op::kSoftmaxRows: {
        Node& x = nodes_[static_cast<size_t>(n.inputs[0])];
        if (x.requires_grad) {
          const int64_t rows = n.value.outer_dim(), c = n.value.last_dim();
          double* xg = x.grad.data();
          const double* y = n.value.data();
          for (int64_t r = 0; r < rows; ++r) {
            const double* yrow = y + r * c;
            const double* grow = g + r * c;
            double dot = 0.0;
            for (int64_t j = 0; j < c; ++j) dot += yrow[j] * grow[j];
            double* xrow = xg + r * c;
            for (int64_t j = 0; j < c; ++j) xrow[j] += yrow[j] * (grow[j] - dot);
          }
        }
        break;
      }
      case Op::kMul: {
        Node& a = nodes_[static_cast<size_t>(n.inputs[0])];
        Node& b = nodes_[static_cast<size_t>(n.inputs[1])];
        if (a.requires_grad) {
          double* ag = a.grad.data();
          const double* bv = b.value.data();
          for (int64_t i = 0; i < n.value.size(); ++i) ag[i] += g[i] * bv[i];
        }
        if (b.requires_grad) {
          double* bg = b.grad.data();
          const double* av = a.value.data();
          for (int64_t i = 0; i < n.value.size(); ++i) bg[i] += g[i] * av[i];
        }
        break;
      }
      case Op::kConcat: {
        const int64_t outer = n.value.outer_dim(), total = n.value.last_dim();
        int64_t off = 0;
        for (size_t s = 0; s < n.inputs.size(); ++s) {
          Node& in = nodes_[static_cast<size_t>(n.inputs[s])];
          const int64_t w = n.widths[s];
          if (in.requires_grad) {
            double* ig = in.grad.data();
            for (int64_t r = 0; r < outer; ++r) {
              const double* src = g + r * total + off;
              double* dst = ig + r * w;
              for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
            }
          }
          off += w;
        }
        break;
      }
      case Op::kSplit: {
        Node& x = nodes_[static_cast<size_t>(n.inputs[0])];
        if (x.requires_grad) {
          const int64_t outer = n.value.outer_dim(), w = n.value.last_dim();
          const int64_t c = x.value.last_dim();
          double* xg = x.grad.data();
          for (int64_t r = 0; r < outer; ++r) {
            double* dst = xg + r * c + n.offset;
            const double* src = g + r * w;
            for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
          }
        }
        break;
      }
      case Op::kRepeatCols: {
        Node& x = nodes_[static_cast<size_t>(n.inputs[0])];
        if (x.requires_grad) {
          const int64_t outer = n.value.outer_dim(), total = n.value.last_dim();
          const int64_t f = x.value.last_dim();
          double* xg = x.grad.data();
          for (int64_t r = 0; r < outer; ++r) {
            const double* grow = g + r * total;
            int64_t off = 0;
            for (int64_t j = 0; j < f; ++j) {
              double s = 0.0;
              for (int64_t t = 0; t < n.widths[static_cast<size_t>(j)]; ++t) s += grow[off + t];
              xg[r * f + j] += s;
              off += n.widths[static_cast<size_t>(j)];
            }
          }
        }
        break;
      }
      case Op::kScale: {
        Node& x = nodes_[static_cast<size_t>(n.inputs[0])];
        if (x.requires_grad) {
          double* xg = x.grad.data();
          for (int64_t i = 0; i < n.value.size(); ++i) xg[i] += g[i] * n.scalar;
        }
        break;
      }
      case Op::kSum: {
        Node& x = nodes_[static_cast<size_t>(n.inputs[0])];
        if (x.requires_grad) {
          double* xg = x.grad.data();
          for (int64_t i = 0; i < x.value.size(); ++i) xg[i] += g[0];
        }
        break;
      }
      case Op::kBceLoss: {
        Node& p = nodes_[static_cast<size_t>(n.inputs[0])];
        if (p.requires_grad) {
          const int64_t n_el = p.value.size();
          const double inv_n = 1.0 / static_cast<double>(n_el);
          double* pg = p.grad.data();
          const double* pv = p.value.data();
          for (int64_t i = 0; i < n_el; ++i) {
            if (pv[i] < kBceClamp || pv[i] > 1.0 - kBceClamp) continue;  // clamped flat region
            const double y = n.labels[i];
            pg[i] += g[0] * inv_n * (pv[i] - y) / (pv[i] * (1.0 - pv[i]));
          }
        }
        break;
      }
      case Op::kEmbeddingRows: {
        Node& t = nodes_[static_cast<size_t>(n.inputs[0])];
        if (t.requires_grad) {
          const int64_t d = n.value.last_dim();
          double* tg = t.grad.data();
          for (size_t b = 0; b < n.indices.size(); ++b) {
            const double* src = g + static_cast<int64_t>(b) * d;
            double* dst = tg + static_cast<int64_t>(n.indices[b]) * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
          }
        }
        break;
      }
    }
  }

  // fold leaf gradients into their bound parameters, in tape order
  for (Node& n : nodes_) {
    if (n.op == Op::kParam && n.bound != nullptr) {
      double* pg = n.bound->grad.data();
      const double* g = n.grad.data();
      for (int64_t i = 0; i < n.grad.size(); ++i) pg[i] += g[i];
    }
  }
}

}  // namespace pepnet
