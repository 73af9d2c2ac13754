#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pepnet/embedding_store.hpp"
#include "pepnet/example.hpp"
#include "pepnet/gates.hpp"
#include "pepnet/graph.hpp"

namespace pepnet {

enum class Variant { kPepNet, kPepNetNoEp, kPepNetNoPp, kSharedBottom, kMmoe };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

enum class FieldSide { kUser, kItem, kAuthor, kContext, kDomain };

struct FeatureField {
  std::string name;
  FieldSide side = FieldSide::kContext;
  int64_t vocab = 1;
};

struct ModelConfig {
  int32_t num_tasks = 6;
  int32_t num_domains = 3;
  int64_t embedding_dim = 40;
  // Declaration order fixes the concat layout of E, the domain gate input,
  // and the task prior. The first domain-side field is the domain id itself.
  std::vector<FeatureField> fields;
  std::vector<int64_t> tower_widths = {100, 64};
  double gamma = 2.0;
  int64_t gate_hidden = 0;  // 0: hidden width defaults to the gate's output width
  bool epnet_vector_wise = false;
  Variant variant = Variant::kPepNet;
  int32_t mmoe_experts = 4;
  int64_t store_capacity = 1 << 20;
  double store_score_decay = 0.999;
  std::vector<std::string> task_names;

  void validate() const;

  // The default desk-scale schema the generator's logs follow.
  static ModelConfig default_config();

  int64_t general_width() const;   // user/item/author/context fields
  int64_t domain_width() const;    // domain-side fields
  int64_t prior_width() const;     // user/item/author id fields
  int64_t baseline_width() const;  // all fields (baselines fold every side into E)
  std::vector<int64_t> general_field_widths() const;

  // Static (non-embedding) parameter total for this config; embeddings are
  // admitted dynamically by the store and accounted separately.
  int64_t closed_form_param_count() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  static ModelConfig load(const std::string& path);
  void save(const std::string& path) const;
};

enum class ForwardMode {
  kTrain,  // admits and touches store entries
  kEval,   // read-only; missing keys read as zero vectors
};

// Value the schema's field_idx-th field takes on this example. The first
// domain-side field reads the domain id; later ones consume the example's
// stat buckets in order. Throws when the example has no value for the field.
int64_t example_field_value(const ModelConfig& cfg, size_t field_idx, const Example& ex);

// Per-field distinct-key gather for one batch.
struct FieldEmbed {
  int32_t field = 0;
  std::vector<FeatureKey> keys;  // first-occurrence order
  NodeId table = -1;             // [num_keys x dim] leaf
  NodeId gathered = -1;          // [batch x dim]
};

struct EmbedOut {
  NodeId e = -1;           // concatenated general embedding
  NodeId domain_emb = -1;  // concatenated domain-side embedding
  NodeId o_prior = -1;     // user/item/author id embeddings
  NodeId e_baseline = -1;  // all fields, used by baseline variants
  std::vector<FieldEmbed> fields;
};

struct ForwardOut {
  std::vector<NodeId> scores;  // per task, [batch x 1], values in (0,1)
  EmbedOut embeds;
  NodeId o_ep = -1;
};

struct DenseLayer {
  Parameter w;
  Parameter b;
};

// Shared-embedding multi-task predictor: the gated architecture plus the
// SharedBottom and MMoE baselines behind one interface. Only the parameters
// the configured variant uses are constructed.
class PepNetModel {
 public:
  PepNetModel(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  GsetStore& store() { return *store_; }
  const GsetStore& store() const { return *store_; }
  void set_store(GsetStore store);

  EmbedOut embed_batch(Graph& g, std::span<const Example> batch, int64_t pass, ForwardMode mode);

  // Dispatches on the configured variant.
  ForwardOut forward(Graph& g, std::span<const Example> batch, int64_t pass, ForwardMode mode);

  // Gated tower path with both gates individually toggleable (the no-both
  // combination yields the plain ungated tower network).
  ForwardOut forward_pepnet(Graph& g, std::span<const Example> batch, int64_t pass,
                            ForwardMode mode, bool use_ep, bool use_pp);
  ForwardOut forward_shared_bottom(Graph& g, std::span<const Example> batch, int64_t pass,
                                   ForwardMode mode);
  ForwardOut forward_mmoe(Graph& g, std::span<const Example> batch, int64_t pass,
                          ForwardMode mode);

  // All trainable dense parameters in fixed construction order.
  std::vector<Parameter*> parameters();
  int64_t parameter_count() const;
  void zero_grad();

  // Gate and layer handles for tests and ablation setup.
  EpNetParams& ep_gate() { return ep_; }
  std::vector<GateNUParams>& pp_gates() { return pp_; }
  std::vector<std::vector<DenseLayer>>& towers() { return towers_; }
  std::vector<DenseLayer>& heads() { return heads_; }
  std::vector<DenseLayer>& trunk() { return trunk_; }
  std::vector<DenseLayer>& task_mids() { return task_mids_; }
  std::vector<std::vector<DenseLayer>>& experts() { return experts_; }
  std::vector<DenseLayer>& mmoe_gates() { return mmoe_gates_; }

 private:
  int64_t field_value(size_t field_idx, const Example& ex) const;
  std::vector<NodeId> tower_stack(Graph& g, NodeId trunk_in, const EmbedOut& emb, bool use_pp);
  std::vector<NodeId> baseline_task_scores(Graph& g, NodeId shared);

  ModelConfig cfg_;
  std::unique_ptr<GsetStore> store_;
  EpNetParams ep_;
  std::vector<GateNUParams> pp_;
  std::vector<std::vector<DenseLayer>> towers_;  // [task][layer], PEPNet family
  std::vector<DenseLayer> heads_;                // [task]
  std::vector<DenseLayer> trunk_;                // SharedBottom trunk layers
  std::vector<DenseLayer> task_mids_;            // [task] baseline tower layer
  std::vector<std::vector<DenseLayer>> experts_; // MMoE expert stacks
  std::vector<DenseLayer> mmoe_gates_;           // [task]
};

}  // namespace pepnet
