#include "pepnet/gates.hpp"

#include <stdexcept>

namespace pepnet {

GateNUParams::GateNUParams(const std::string& name, int64_t in, int64_t hidden, int64_t out,
                           double gamma_, Rng& rng)
    : w1(name + ".w1", Tensor::zeros({in, hidden})),
      b1(name + ".b1", Tensor::zeros({hidden})),
      w2(name + ".w2", Tensor::zeros({hidden, out})),
      b2(name + ".b2", Tensor::zeros({out})),
      gamma(gamma_) {
  if (gamma <= 0.0) throw std::invalid_argument("gate gamma must be positive");
  if (hidden <= 0) throw std::invalid_argument("gate hidden width must be positive");
  xavier_fill(w1.value, in, hidden, rng);
  // w2/b2 stay zero: gates start neutral
}

int64_t GateNUParams::param_count() const {
  return w1.value.size() + b1.value.size() + w2.value.size() + b2.value.size();
}

std::vector<Parameter*> GateNUParams::parameters() { return {&w1, &b1, &w2, &b2}; }

NodeId gate_nu_forward(Graph& g, GateNUParams& p, NodeId x) {
  if (g.value(x).last_dim() != p.in_width()) {
    throw std::invalid_argument("gate_nu_forward: input width " +
                                std::to_string(g.value(x).last_dim()) + " does not match gate " +
                                p.w1.value.shape_str());
  }
  NodeId h = g.relu(g.add_row(g.matmul(x, g.param(p.w1)), g.param(p.b1)));
  NodeId z = g.add_row(g.matmul(h, g.param(p.w2)), g.param(p.b2));
  return g.scale(g.sigmoid(z), p.gamma);
}

EpNetOut epnet_forward(Graph& g, EpNetParams& p, NodeId domain_emb, NodeId e) {
  const NodeId parts[] = {domain_emb, g.stop_gradient(e)};
  NodeId delta = gate_nu_forward(g, p.gate, g.concat(parts));
  NodeId scales = delta;
  if (p.vector_wise) {
    scales = g.repeat_cols(delta, p.field_widths);
  }
  if (g.value(scales).last_dim() != g.value(e).last_dim()) {
    throw std::invalid_argument("epnet_forward: gate output width does not match embedding width");
  }
  return {delta, g.mul(scales, e)};
}

std::vector<NodeId> ppnet_layer_forward(Graph& g, GateNUParams& gate, NodeId o_prior, NodeId o_ep,
                                        const std::vector<NodeId>& hidden) {
  if (hidden.empty()) throw std::invalid_argument("ppnet_layer_forward: no task towers");
  const int64_t t = static_cast<int64_t>(hidden.size());
  const int64_t h = g.value(hidden[0]).last_dim();
  for (NodeId n : hidden) {
    if (g.value(n).last_dim() != h) {
      throw std::invalid_argument("ppnet_layer_forward: towers disagree on hidden width");
    }
  }
  if (gate.out_width() != h * t) {
    throw std::invalid_argument("ppnet_layer_forward: gate output " +
                                std::to_string(gate.out_width()) + " != tasks * width " +
                                std::to_string(h * t));
  }
  const NodeId parts[] = {o_prior, g.stop_gradient(o_ep)};
  NodeId delta = gate_nu_forward(g, gate, g.concat(parts));
  const std::vector<int64_t> widths(static_cast<size_t>(t), h);
  std::vector<NodeId> chunks = g.split(delta, widths);
  std::vector<NodeId> out;
  out.reserve(hidden.size());
  for (size_t i = 0; i < hidden.size(); ++i) {
    out.push_back(g.mul(chunks[i], hidden[i]));
  }
  return out;
}

}  // namespace pepnet
