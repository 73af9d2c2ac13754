#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pepnet/graph.hpp"
#include "pepnet/rng.hpp"

namespace pepnet {

// Two-layer gate producing scaling vectors in (0, gamma):
//   delta = gamma * sigmoid(relu(x W + b) W2 + b2)
// First layer is Xavier-initialized; the second layer starts at zero so
// every gate opens at exactly gamma/2 (the identity point for gamma = 2).
struct GateNUParams {
  Parameter w1;   // [in x hidden]
  Parameter b1;   // [hidden]
  Parameter w2;   // [hidden x out]
  Parameter b2;   // [out]
  double gamma = 2.0;

  GateNUParams() = default;
  GateNUParams(const std::string& name, int64_t in, int64_t hidden, int64_t out, double gamma_,
               Rng& rng);

  int64_t in_width() const { return w1.value.rows(); }
  int64_t out_width() const { return w2.value.cols(); }
  int64_t param_count() const;
  std::vector<Parameter*> parameters();
};

// delta = gamma * sigmoid(relu(x W + b) W2 + b2), every component in (0, gamma)
NodeId gate_nu_forward(Graph& g, GateNUParams& p, NodeId x);

// Domain-conditioned embedding gate.
struct EpNetParams {
  GateNUParams gate;  // in = width(domain_emb) + e, out = e (or field count when vector-wise)
  // When vector-wise, the gate emits one scalar per feature field which is
  // broadcast over that field's embedding slice.
  bool vector_wise = false;
  std::vector<int64_t> field_widths;  // slice widths of E, used by the vector-wise variant
};

struct EpNetOut {
  NodeId delta_domain;
  NodeId o_ep;
};

// delta_domain = gate(domain_emb (+) stop_gradient(E)); O_ep = delta_domain (*) E.
// Gradients reach E only through the product, never through the gate input.
EpNetOut epnet_forward(Graph& g, EpNetParams& p, NodeId domain_emb, NodeId e);

// Per-layer task gate: delta = gate(O_prior (+) stop_gradient(O_ep)) split into
// T chunks of width h, each applied elementwise to its task's hidden units.
std::vector<NodeId> ppnet_layer_forward(Graph& g, GateNUParams& gate, NodeId o_prior, NodeId o_ep,
                                        const std::vector<NodeId>& hidden);

}  // namespace pepnet
