#include "pepnet/model.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

namespace pepnet {

using nlohmann::json;

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kPepNet: return "PEPNET";
    case Variant::kPepNetNoEp: return "PEPNET_NO_EP";
    case Variant::kPepNetNoPp: return "PEPNET_NO_PP";
    case Variant::kSharedBottom: return "SHARED_BOTTOM";
    case Variant::kMmoe: return "MMOE";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "PEPNET") return Variant::kPepNet;
  if (name == "PEPNET_NO_EP") return Variant::kPepNetNoEp;
  if (name == "PEPNET_NO_PP") return Variant::kPepNetNoPp;
  if (name == "SHARED_BOTTOM") return Variant::kSharedBottom;
  if (name == "MMOE") return Variant::kMmoe;
  throw std::invalid_argument("unknown variant '" + name + "'");
}

namespace {

const char* side_name(FieldSide s) {
  switch (s) {
    case FieldSide::kUser: return "user";
    case FieldSide::kItem: return "item";
    case FieldSide::kAuthor: return "author";
    case FieldSide::kContext: return "context";
    case FieldSide::kDomain: return "domain";
  }
  return "?";
}

FieldSide side_from_name(const std::string& s) {
  if (s == "user") return FieldSide::kUser;
  if (s == "item") return FieldSide::kItem;
  if (s == "author") return FieldSide::kAuthor;
  if (s == "context") return FieldSide::kContext;
  if (s == "domain") return FieldSide::kDomain;
  throw std::invalid_argument("unknown field side '" + s + "'");
}

bool is_general(FieldSide s) { return s != FieldSide::kDomain; }
bool is_prior(FieldSide s) {
  return s == FieldSide::kUser || s == FieldSide::kItem || s == FieldSide::kAuthor;
}

int64_t gate_count(int64_t in, int64_t hidden, int64_t out) {
  return in * hidden + hidden + hidden * out + out;
}

int64_t dense_count(int64_t in, int64_t out) { return in * out + out; }

}  // namespace

void ModelConfig::validate() const {
  if (num_tasks < 1 || num_domains < 1) {
    throw std::invalid_argument("num_tasks and num_domains must be >= 1");
  }
  if (embedding_dim < 1) throw std::invalid_argument("embedding_dim must be >= 1");
  if (fields.empty()) throw std::invalid_argument("at least one feature field is required");
  if (tower_widths.empty()) throw std::invalid_argument("tower_widths must be non-empty");
  for (int64_t w : tower_widths) {
    if (w < 1) throw std::invalid_argument("tower widths must be positive");
  }
  if (gamma <= 0.0) throw std::invalid_argument("gamma must be positive");
  if (mmoe_experts < 1) throw std::invalid_argument("mmoe_experts must be >= 1");
  if (general_width() == 0) throw std::invalid_argument("at least one general-side field required");
}

ModelConfig ModelConfig::default_config() {
  ModelConfig c;
  c.fields = {{"user_id", FieldSide::kUser, 20000},    {"item_id", FieldSide::kItem, 15000},
              {"author_id", FieldSide::kAuthor, 2500}, {"context", FieldSide::kContext, 32},
              {"domain_id", FieldSide::kDomain, 3},    {"user_activity", FieldSide::kDomain, 16},
              {"item_exposure", FieldSide::kDomain, 16}};
  c.task_names = {"like", "follow", "forward", "hate", "click", "effview"};
  return c;
}

int64_t ModelConfig::general_width() const {
  int64_t w = 0;
  for (const FeatureField& f : fields) w += is_general(f.side) ? embedding_dim : 0;
  return w;
}

int64_t ModelConfig::domain_width() const {
  int64_t w = 0;
  for (const FeatureField& f : fields) w += f.side == FieldSide::kDomain ? embedding_dim : 0;
  return w;
}

int64_t ModelConfig::prior_width() const {
  int64_t w = 0;
  for (const FeatureField& f : fields) w += is_prior(f.side) ? embedding_dim : 0;
  return w;
}

int64_t ModelConfig::baseline_width() const { return general_width() + domain_width(); }

std::vector<int64_t> ModelConfig::general_field_widths() const {
  std::vector<int64_t> out;
  for (const FeatureField& f : fields) {
    if (is_general(f.side)) out.push_back(embedding_dim);
  }
  return out;
}

int64_t ModelConfig::closed_form_param_count() const {
  const int64_t t = num_tasks;
  const int64_t e_g = general_width();
  const int64_t e_d = domain_width();
  const int64_t e_p = prior_width();
  const int64_t e_all = baseline_width();
  const auto& h = tower_widths;
  const int64_t l = static_cast<int64_t>(h.size());

  const bool pepnet_family = variant == Variant::kPepNet || variant == Variant::kPepNetNoEp ||
                             variant == Variant::kPepNetNoPp;
  int64_t count = 0;
  if (pepnet_family) {
    // per-task towers: e_g -> h_1 -> ... -> h_L -> 1
    int64_t tower = dense_count(e_g, h[0]);
    for (int64_t i = 1; i < l; ++i) tower += dense_count(h[i - 1], h[i]);
    tower += dense_count(h[l - 1], 1);
    count += t * tower;
    if (variant != Variant::kPepNetNoEp) {
      const int64_t out = epnet_vector_wise ? static_cast<int64_t>(general_field_widths().size())
                                            : e_g;
      const int64_t hid = gate_hidden > 0 ? gate_hidden : out;
      count += gate_count(e_d + e_g, hid, out);
    }
    if (variant != Variant::kPepNetNoPp) {
      for (int64_t i = 0; i < l; ++i) {
        const int64_t out = h[i] * t;
        const int64_t hid = gate_hidden > 0 ? gate_hidden : out;
        count += gate_count(e_p + e_g, hid, out);
      }
    }
    return count;
  }

  // baselines: trunk h_1..h_{L-1} (shared or per expert), task layer h_L + head
  const int64_t mid_in = l >= 2 ? h[l - 2] : e_all;
  int64_t trunk = 0;
  {
    int64_t in = e_all;
    for (int64_t i = 0; i + 1 < l; ++i) {
      trunk += dense_count(in, h[i]);
      in = h[i];
    }
  }
  const int64_t per_task = dense_count(mid_in, h[l - 1]) + dense_count(h[l - 1], 1);
  if (variant == Variant::kSharedBottom) {
    count = trunk + t * per_task;
  } else {  // MMoE
    count = mmoe_experts * trunk + t * dense_count(e_all, mmoe_experts) + t * per_task;
  }
  return count;
}

// ---- construction -----------------------------------------------------------

namespace {
DenseLayer make_dense(const std::string& name, int64_t in, int64_t out, Rng& rng) {
  DenseLayer d{Parameter(name + ".w", Tensor::zeros({in, out})),
               Parameter(name + ".b", Tensor::zeros({out}))};
  xavier_fill(d.w.value, in, out, rng);
  return d;
}
}  // namespace

PepNetModel::PepNetModel(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  StoreConfig sc;
  sc.capacity = cfg_.store_capacity;
  sc.dim = cfg_.embedding_dim;
  sc.score_decay = cfg_.store_score_decay;
  sc.seed = splitmix64(seed ^ 0x5705e);
  store_ = std::make_unique<GsetStore>(sc);

  Rng rng(seed);
  const int64_t t = cfg_.num_tasks;
  const int64_t e_g = cfg_.general_width();
  const int64_t e_d = cfg_.domain_width();
  const int64_t e_p = cfg_.prior_width();
  const int64_t e_all = cfg_.baseline_width();
  const auto& h = cfg_.tower_widths;
  const size_t l = h.size();

  const bool pepnet_family = cfg_.variant == Variant::kPepNet ||
                             cfg_.variant == Variant::kPepNetNoEp ||
                             cfg_.variant == Variant::kPepNetNoPp;
  if (pepnet_family) {
    if (cfg_.variant != Variant::kPepNetNoEp) {
      const int64_t out = cfg_.epnet_vector_wise
                              ? static_cast<int64_t>(cfg_.general_field_widths().size())
                              : e_g;
      const int64_t hid = cfg_.gate_hidden > 0 ? cfg_.gate_hidden : out;
      ep_.gate = GateNUParams("ep_gate", e_d + e_g, hid, out, cfg_.gamma, rng);
      ep_.vector_wise = cfg_.epnet_vector_wise;
      ep_.field_widths = cfg_.general_field_widths();
    }
    if (cfg_.variant != Variant::kPepNetNoPp) {
      for (size_t i = 0; i < l; ++i) {
        const int64_t out = h[i] * t;
        const int64_t hid = cfg_.gate_hidden > 0 ? cfg_.gate_hidden : out;
        pp_.emplace_back("pp_gate_" + std::to_string(i), e_p + e_g, hid, out, cfg_.gamma, rng);
      }
    }
    towers_.resize(static_cast<size_t>(t));
    for (int64_t task = 0; task < t; ++task) {
      const std::string prefix = "tower" + std::to_string(task);
      int64_t in = e_g;
      for (size_t i = 0; i < l; ++i) {
        towers_[static_cast<size_t>(task)].push_back(
            make_dense(prefix + ".l" + std::to_string(i), in, h[i], rng));
        in = h[i];
      }
      heads_.push_back(make_dense(prefix + ".head", in, 1, rng));
    }
    return;
  }

  if (cfg_.variant == Variant::kSharedBottom) {
    int64_t in = e_all;
    for (size_t i = 0; i + 1 < l; ++i) {
      trunk_.push_back(make_dense("trunk.l" + std::to_string(i), in, h[i], rng));
      in = h[i];
    }
    for (int64_t task = 0; task < t; ++task) {
      const std::string prefix = "task" + std::to_string(task);
      task_mids_.push_back(make_dense(prefix + ".mid", in, h[l - 1], rng));
      heads_.push_back(make_dense(prefix + ".head", h[l - 1], 1, rng));
    }
    return;
  }

  // MMoE
  const int64_t expert_out = l >= 2 ? h[l - 2] : e_all;
  for (int32_t k = 0; k < cfg_.mmoe_experts; ++k) {
    std::vector<DenseLayer> stack;
    int64_t in = e_all;
    for (size_t i = 0; i + 1 < l; ++i) {
      stack.push_back(make_dense("expert" + std::to_string(k) + ".l" + std::to_string(i), in,
                                 h[i], rng));
      in = h[i];
    }
    experts_.push_back(std::move(stack));
  }
  for (int64_t task = 0; task < t; ++task) {
    mmoe_gates_.push_back(
        make_dense("mmoe_gate" + std::to_string(task), e_all, cfg_.mmoe_experts, rng));
  }
  for (int64_t task = 0; task < t; ++task) {
    const std::string prefix = "task" + std::to_string(task);
    task_mids_.push_back(make_dense(prefix + ".mid", expert_out, h[l - 1], rng));
    heads_.push_back(make_dense(prefix + ".head", h[l - 1], 1, rng));
  }
}

// ---- embedding --------------------------------------------------------------

int64_t example_field_value(const ModelConfig& cfg, size_t field_idx, const Example& ex) {
  const FeatureField& f = cfg.fields[field_idx];
  size_t ordinal = 0;
  for (size_t i = 0; i < field_idx; ++i) {
    if (cfg.fields[i].side == f.side) ++ordinal;
  }
  auto lacks = [&]() {
    return std::invalid_argument("example lacks value for field '" + f.name + "' (field id " +
                                 std::to_string(field_idx) + ")");
  };
  switch (f.side) {
    case FieldSide::kUser:
      if (ordinal != 0) throw lacks();
      return ex.user_id;
    case FieldSide::kItem:
      if (ordinal != 0) throw lacks();
      return ex.item_id;
    case FieldSide::kAuthor:
      if (ordinal != 0) throw lacks();
      return ex.author_id;
    case FieldSide::kContext:
      if (ordinal >= ex.context_ids.size()) throw lacks();
      return ex.context_ids[ordinal];
    case FieldSide::kDomain:
      if (ordinal == 0) return ex.domain;
      if (ordinal - 1 >= ex.domain_stat_ids.size()) throw lacks();
      return ex.domain_stat_ids[ordinal - 1];
  }
  throw lacks();
}

int64_t PepNetModel::field_value(size_t field_idx, const Example& ex) const {
  return example_field_value(cfg_, field_idx, ex);
}

void PepNetModel::set_store(GsetStore store) {
  store_ = std::make_unique<GsetStore>(std::move(store));
}

EmbedOut PepNetModel::embed_batch(Graph& g, std::span<const Example> batch, int64_t pass,
                                  ForwardMode mode) {
  if (batch.empty()) throw std::invalid_argument("embed_batch: empty batch");
  const size_t nf = cfg_.fields.size();
  const int64_t dim = cfg_.embedding_dim;
  EmbedOut out;
  out.fields.reserve(nf);

  std::vector<NodeId> gathered(nf);
  std::unordered_map<int64_t, int32_t> row_of;
  std::vector<int32_t> rows(batch.size());
  for (size_t f = 0; f < nf; ++f) {
    FieldEmbed fe;
    fe.field = static_cast<int32_t>(f);
    row_of.clear();
    for (size_t b = 0; b < batch.size(); ++b) {
      const int64_t v = field_value(f, batch[b]);
      auto [it, inserted] = row_of.try_emplace(v, static_cast<int32_t>(fe.keys.size()));
      if (inserted) fe.keys.push_back(FeatureKey{static_cast<int32_t>(f), v});
      rows[b] = it->second;
    }
    Tensor table(std::vector<int64_t>{static_cast<int64_t>(fe.keys.size()), dim});
    for (size_t k = 0; k < fe.keys.size(); ++k) {
      double* dst = table.data() + static_cast<int64_t>(k) * dim;
      if (mode == ForwardMode::kTrain) {
        const auto vec = store_->lookup_or_admit(fe.keys[k], pass);
        for (int64_t j = 0; j < dim; ++j) dst[j] = vec[static_cast<size_t>(j)];
      } else {
        const auto vec = store_->peek(fe.keys[k]);
        if (vec.has_value()) {
          for (int64_t j = 0; j < dim; ++j) dst[j] = (*vec)[static_cast<size_t>(j)];
        }
        // unseen keys stay zero in eval mode
      }
    }
    fe.table = g.input(std::move(table));
    fe.gathered = g.embedding_rows(fe.table, rows);
    gathered[f] = fe.gathered;
    out.fields.push_back(std::move(fe));
  }

  std::vector<NodeId> gen, dom, prior, all;
  for (size_t f = 0; f < nf; ++f) {
    const FieldSide side = cfg_.fields[f].side;
    all.push_back(gathered[f]);
    if (is_general(side)) gen.push_back(gathered[f]);
    if (side == FieldSide::kDomain) dom.push_back(gathered[f]);
    if (is_prior(side)) prior.push_back(gathered[f]);
  }
  out.e = g.concat(gen);
  out.e_baseline = g.concat(all);
  if (!dom.empty()) out.domain_emb = g.concat(dom);
  if (!prior.empty()) out.o_prior = g.concat(prior);
  return out;
}

// ---- forwards ---------------------------------------------------------------

std::vector<NodeId> PepNetModel::tower_stack(Graph& g, NodeId trunk_in, const EmbedOut& emb,
                                             bool use_pp) {
  const size_t t = towers_.size();
  const size_t l = cfg_.tower_widths.size();
  std::vector<NodeId> h(t);
  for (size_t task = 0; task < t; ++task) {
    DenseLayer& d = towers_[task][0];
    h[task] = g.relu(g.add_row(g.matmul(trunk_in, g.param(d.w)), g.param(d.b)));
  }
  for (size_t layer = 0; layer < l; ++layer) {
    if (use_pp) {
      if (emb.o_prior < 0) {
        throw std::invalid_argument("task gating requires user/item/author prior fields");
      }
      h = ppnet_layer_forward(g, pp_[layer], emb.o_prior, trunk_in, h);
    }
    if (layer + 1 < l) {
      for (size_t task = 0; task < t; ++task) {
        DenseLayer& d = towers_[task][layer + 1];
        h[task] = g.relu(g.add_row(g.matmul(h[task], g.param(d.w)), g.param(d.b)));
      }
    }
  }
  std::vector<NodeId> scores(t);
  for (size_t task = 0; task < t; ++task) {
    DenseLayer& d = heads_[task];
    scores[task] = g.sigmoid(g.add_row(g.matmul(h[task], g.param(d.w)), g.param(d.b)));
  }
  return scores;
}

ForwardOut PepNetModel::forward_pepnet(Graph& g, std::span<const Example> batch, int64_t pass,
                                       ForwardMode mode, bool use_ep, bool use_pp) {
  if (towers_.empty()) {
    throw std::logic_error("forward_pepnet: model was built as " +
                           std::string(variant_name(cfg_.variant)));
  }
  if (use_ep && ep_.gate.w1.value.empty()) {
    throw std::logic_error("forward_pepnet: this model has no embedding gate");
  }
  if (use_pp && pp_.empty()) {
    throw std::logic_error("forward_pepnet: this model has no task gates");
  }
  ForwardOut out;
  out.embeds = embed_batch(g, batch, pass, mode);
  if (use_ep) {
    if (out.embeds.domain_emb >= 0) {
      const EpNetOut eo = epnet_forward(g, ep_, out.embeds.domain_emb, out.embeds.e);
      out.o_ep = eo.o_ep;
    } else {
      // no domain-side fields declared: the gate sees only the detached embedding
      NodeId delta = gate_nu_forward(g, ep_.gate, g.stop_gradient(out.embeds.e));
      NodeId scales = ep_.vector_wise ? g.repeat_cols(delta, ep_.field_widths) : delta;
      out.o_ep = g.mul(scales, out.embeds.e);
    }
  } else {
    out.o_ep = out.embeds.e;
  }
  out.scores = tower_stack(g, out.o_ep, out.embeds, use_pp);
  return out;
}

std::vector<NodeId> PepNetModel::baseline_task_scores(Graph& g, NodeId shared) {
  std::vector<NodeId> scores(task_mids_.size());
  for (size_t task = 0; task < task_mids_.size(); ++task) {
    DenseLayer& mid = task_mids_[task];
    NodeId ht = g.relu(g.add_row(g.matmul(shared, g.param(mid.w)), g.param(mid.b)));
    DenseLayer& head = heads_[task];
    scores[task] = g.sigmoid(g.add_row(g.matmul(ht, g.param(head.w)), g.param(head.b)));
  }
  return scores;
}

ForwardOut PepNetModel::forward_shared_bottom(Graph& g, std::span<const Example> batch,
                                              int64_t pass, ForwardMode mode) {
  if (cfg_.variant != Variant::kSharedBottom) {
    throw std::logic_error("forward_shared_bottom: model was built as " +
                           std::string(variant_name(cfg_.variant)));
  }
  ForwardOut out;
  out.embeds = embed_batch(g, batch, pass, mode);
  NodeId h = out.embeds.e_baseline;
  for (DenseLayer& d : trunk_) {
    h = g.relu(g.add_row(g.matmul(h, g.param(d.w)), g.param(d.b)));
  }
  out.scores = baseline_task_scores(g, h);
  return out;
}

ForwardOut PepNetModel::forward_mmoe(Graph& g, std::span<const Example> batch, int64_t pass,
                                     ForwardMode mode) {
  if (cfg_.variant != Variant::kMmoe) {
    throw std::logic_error("forward_mmoe: model was built as " +
                           std::string(variant_name(cfg_.variant)));
  }
  ForwardOut out;
  out.embeds = embed_batch(g, batch, pass, mode);
  const NodeId x = out.embeds.e_baseline;
  std::vector<NodeId> expert_out;
  expert_out.reserve(experts_.size());
  for (std::vector<DenseLayer>& stack : experts_) {
    NodeId h = x;
    for (DenseLayer& d : stack) {
      h = g.relu(g.add_row(g.matmul(h, g.param(d.w)), g.param(d.b)));
    }
    expert_out.push_back(h);
  }
  const int64_t mix_width = g.value(expert_out[0]).last_dim();
  const std::vector<int64_t> ones(static_cast<size_t>(cfg_.mmoe_experts), 1);
  const std::vector<int64_t> mix_widths{mix_width};
  out.scores.resize(task_mids_.size());
  for (size_t task = 0; task < task_mids_.size(); ++task) {
    DenseLayer& gate = mmoe_gates_[task];
    NodeId probs =
        g.softmax_rows(g.add_row(g.matmul(x, g.param(gate.w)), g.param(gate.b)));
    std::vector<NodeId> cols = g.split(probs, ones);
    NodeId mix = -1;
    for (size_t k = 0; k < expert_out.size(); ++k) {
      NodeId term = g.mul(g.repeat_cols(cols[k], mix_widths), expert_out[k]);
      mix = mix < 0 ? term : g.add(mix, term);
    }
    DenseLayer& mid = task_mids_[task];
    NodeId ht = g.relu(g.add_row(g.matmul(mix, g.param(mid.w)), g.param(mid.b)));
    DenseLayer& head = heads_[task];
    out.scores[task] = g.sigmoid(g.add_row(g.matmul(ht, g.param(head.w)), g.param(head.b)));
  }
  return out;
}

ForwardOut PepNetModel::forward(Graph& g, std::span<const Example> batch, int64_t pass,
                                ForwardMode mode) {
  switch (cfg_.variant) {
    case Variant::kPepNet: return forward_pepnet(g, batch, pass, mode, true, true);
    case Variant::kPepNetNoEp: return forward_pepnet(g, batch, pass, mode, false, true);
    case Variant::kPepNetNoPp: return forward_pepnet(g, batch, pass, mode, true, false);
    case Variant::kSharedBottom: return forward_shared_bottom(g, batch, pass, mode);
    case Variant::kMmoe: return forward_mmoe(g, batch, pass, mode);
  }
  throw std::logic_error("forward: unreachable");
}

// ---- parameters -------------------------------------------------------------

std::vector<Parameter*> PepNetModel::parameters() {
  std::vector<Parameter*> out;
  if (!ep_.gate.w1.value.empty()) {
    for (Parameter* p : ep_.gate.parameters()) out.push_back(p);
  }
  for (GateNUParams& gparams : pp_) {
    for (Parameter* p : gparams.parameters()) out.push_back(p);
  }
  for (auto& tower : towers_) {
    for (DenseLayer& d : tower) {
      out.push_back(&d.w);
      out.push_back(&d.b);
    }
  }
  for (DenseLayer& d : trunk_) {
    out.push_back(&d.w);
    out.push_back(&d.b);
  }
  for (auto& stack : experts_) {
    for (DenseLayer& d : stack) {
      out.push_back(&d.w);
      out.push_back(&d.b);
    }
  }
  for (DenseLayer& d : mmoe_gates_) {
    out.push_back(&d.w);
    out.push_back(&d.b);
  }
  for (DenseLayer& d : task_mids_) {
    out.push_back(&d.w);
    out.push_back(&d.b);
  }
  for (DenseLayer& d : heads_) {
    out.push_back(&d.w);
    out.push_back(&d.b);
  }
  return out;
}

int64_t PepNetModel::parameter_count() const {
  int64_t n = 0;
  for (Parameter* p : const_cast<PepNetModel*>(this)->parameters()) n += p->value.size();
  return n;
}

void PepNetModel::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

// ---- config json ------------------------------------------------------------

std::string ModelConfig::to_json() const {
  json j;
  j["num_tasks"] = num_tasks;
  j["num_domains"] = num_domains;
  j["embedding_dim"] = embedding_dim;
  json jf = json::array();
  for (const FeatureField& f : fields) {
    jf.push_back({{"name", f.name}, {"side", side_name(f.side)}, {"vocab", f.vocab}});
  }
  j["fields"] = jf;
  j["tower_widths"] = tower_widths;
  j["gamma"] = gamma;
  j["gate_hidden"] = gate_hidden;
  j["epnet_vector_wise"] = epnet_vector_wise;
  j["variant"] = variant_name(variant);
  j["mmoe_experts"] = mmoe_experts;
  j["store_capacity"] = store_capacity;
  j["store_score_decay"] = store_score_decay;
  j["task_names"] = task_names;
  return j.dump(2) + "\n";
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig c = ModelConfig::default_config();
  c.num_tasks = j.value("num_tasks", c.num_tasks);
  c.num_domains = j.value("num_domains", c.num_domains);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  if (j.contains("fields")) {
    c.fields.clear();
    for (const json& jf : j["fields"]) {
      FeatureField f;
      f.name = jf.at("name").get<std::string>();
      f.side = side_from_name(jf.at("side").get<std::string>());
      f.vocab = jf.value("vocab", int64_t{1});
      c.fields.push_back(std::move(f));
    }
  }
  c.tower_widths = j.value("tower_widths", c.tower_widths);
  c.gamma = j.value("gamma", c.gamma);
  c.gate_hidden = j.value("gate_hidden", c.gate_hidden);
  c.epnet_vector_wise = j.value("epnet_vector_wise", c.epnet_vector_wise);
  if (j.contains("variant")) c.variant = variant_from_name(j["variant"].get<std::string>());
  c.mmoe_experts = j.value("mmoe_experts", c.mmoe_experts);
  c.store_capacity = j.value("store_capacity", c.store_capacity);
  c.store_score_decay = j.value("store_score_decay", c.store_score_decay);
  c.task_names = j.value("task_names", c.task_names);
  c.validate();
  return c;
}

ModelConfig ModelConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open model config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return from_json(ss.str());
  } catch (const json::exception& e) {
    throw std::runtime_error("parse error in " + path + ": " + e.what());
  }
}

void ModelConfig::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write model config: " + path);
  os << to_json();
}

}  // namespace pepnet
