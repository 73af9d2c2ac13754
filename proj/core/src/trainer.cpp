#include "pepnet/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "pepnet/evaluate.hpp"

namespace pepnet {

using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (dnn_lr <= 0.0 || dnn_lr_online <= 0.0 || embedding_lr <= 0.0) {
    throw std::invalid_argument("learning rates must be positive");
  }
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  for (double w : task_weights) {
    if (w < 0.0) throw std::invalid_argument("task weights must be nonnegative");
  }
}

void adam_step(AdamState& state, Parameter& param, const Tensor& grad, double lr) {
  if (!param.value.same_shape(grad)) {
    throw std::invalid_argument("adam_step: gradient shape " + grad.shape_str() +
                                " does not match parameter " + param.value.shape_str());
  }
  if (!grad.all_finite()) {
    throw std::runtime_error("adam_step: non-finite gradient for " + param.name);
  }
  if (state.m.size() != param.value.size()) {
    state.m = Tensor::zeros(param.value.shape());
    state.v = Tensor::zeros(param.value.shape());
  }
  if (param.updated_by == UpdatedBy::kAdagrad) {
    throw std::logic_error("adam_step: parameter " + param.name + " is AdaGrad-owned");
  }
  param.updated_by = UpdatedBy::kAdam;
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  double* p = param.value.data();
  double* m = state.m.data();
  double* v = state.v.data();
  const double* g = grad.data();
  for (int64_t i = 0; i < param.value.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

NodeId multi_task_loss(Graph& g, const std::vector<NodeId>& scores,
                       const std::vector<Tensor>& labels, const std::vector<double>& weights) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("multi_task_loss: got " + std::to_string(scores.size()) +
                                " score sets for " + std::to_string(labels.size()) +
                                " label sets");
  }
  if (!weights.empty() && weights.size() != scores.size()) {
    throw std::invalid_argument("multi_task_loss: weight count mismatch");
  }
  if (scores.empty()) throw std::invalid_argument("multi_task_loss: no tasks");
  NodeId total = -1;
  for (size_t t = 0; t < scores.size(); ++t) {
    const double w = weights.empty() ? 1.0 : weights[t];
    NodeId term = g.scale(g.bce_loss(scores[t], labels[t]), w);
    total = total < 0 ? term : g.add(total, term);
  }
  return total;
}

// ---- Trainer ----------------------------------------------------------------

Trainer::Trainer(PepNetModel& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
  cfg_.validate();
  const size_t n = model_.parameters().size();
  adam_.resize(n);
  for (AdamState& s : adam_) {
    s.beta1 = cfg_.adam_beta1;
    s.beta2 = cfg_.adam_beta2;
    s.eps = cfg_.adam_eps;
  }
}

std::vector<double> Trainer::effective_task_weights() const {
  if (!cfg_.task_weights.empty()) return cfg_.task_weights;
  return std::vector<double>(static_cast<size_t>(model_.config().num_tasks), 1.0);
}

double Trainer::train_batch(std::span<const Example> batch, int64_t pass) {
  const int32_t tasks = model_.config().num_tasks;
  Graph g;
  ForwardOut f = model_.forward(g, batch, pass, ForwardMode::kTrain);

  std::vector<Tensor> labels;
  labels.reserve(static_cast<size_t>(tasks));
  for (int32_t t = 0; t < tasks; ++t) {
    Tensor lt(std::vector<int64_t>{static_cast<int64_t>(batch.size()), 1});
    for (size_t b = 0; b < batch.size(); ++b) {
      if (batch[b].labels.size() != static_cast<size_t>(tasks)) {
        throw std::invalid_argument("train_batch: example carries " +
                                    std::to_string(batch[b].labels.size()) + " labels for " +
                                    std::to_string(tasks) + " tasks");
      }
      lt[static_cast<int64_t>(b)] = batch[b].labels[static_cast<size_t>(t)];
    }
    labels.push_back(std::move(lt));
  }

  NodeId loss = multi_task_loss(g, f.scores, labels, effective_task_weights());
  const double loss_value = g.value(loss)[0];

  model_.zero_grad();
  g.backward(loss);

  // embedding gradients go to the store's AdaGrad
  const int64_t dim = model_.config().embedding_dim;
  for (const FieldEmbed& fe : f.embeds.fields) {
    const Tensor& tg = g.grad(fe.table);
    for (size_t k = 0; k < fe.keys.size(); ++k) {
      const std::span<const double> row(tg.data() + static_cast<int64_t>(k) * dim,
                                        static_cast<size_t>(dim));
      model_.store().apply_gradient_adagrad(fe.keys[k], row, cfg_.embedding_lr, pass);
    }
  }

  // dense and gate parameters go to Adam
  const std::vector<Parameter*> params = model_.parameters();
  const double lr = dnn_lr();
  for (size_t i = 0; i < params.size(); ++i) {
    adam_step(adam_[i], *params[i], params[i]->grad, lr);
  }
  model_.zero_grad();
  return loss_value;
}

TrainResult Trainer::train(const std::vector<Example>& train_data,
                           const std::vector<Example>* valid_data) {
  TrainResult result;
  std::vector<uint32_t> order(train_data.size());
  for (int32_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    const int64_t pass = epochs_done_;
    std::iota(order.begin(), order.end(), 0u);
    Rng shuffle_rng = Rng(cfg_.seed).fork(0xE90C0 + static_cast<uint64_t>(pass));
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(shuffle_rng.uniform_index(i));
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    int64_t batches = 0;
    std::vector<Example> batch;
    batch.reserve(static_cast<size_t>(cfg_.batch_size));
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg_.batch_size)) {
      const size_t n = std::min<size_t>(static_cast<size_t>(cfg_.batch_size),
                                        order.size() - begin);
      batch.clear();
      for (size_t i = 0; i < n; ++i) batch.push_back(train_data[order[begin + i]]);
      const double loss = train_batch(batch, pass);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 " batch " + std::to_string(batches));
      }
      loss_sum += loss;
      ++batches;
    }

    EpochMetrics em;
    em.epoch = static_cast<int32_t>(epochs_done_);
    em.train_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
    em.batches = batches;
    if (valid_data != nullptr) em.valid = evaluate(model_, *valid_data);
    result.history.push_back(std::move(em));
    ++epochs_done_;
  }
  return result;
}

namespace {

int64_t delta_bytes(const std::vector<DeltaRecord>& records) {
  int64_t bytes = 8 + 4;  // header: pass + field count
  for (const DeltaRecord& r : records) {
    bytes += 4 + 8 + 2 + static_cast<int64_t>(r.vector.size()) * 8;
  }
  return bytes;
}

}  // namespace

std::vector<PassSyncSummary> Trainer::run_online_passes(const std::vector<Example>& stream,
                                                        const SyncPolicy& policy) {
  if (cfg_.mode != TrainMode::kOnlinePass) {
    throw std::logic_error("run_online_passes requires online-pass mode");
  }
  std::map<int64_t, std::vector<Example>> by_pass;
  int64_t max_pass = -1;
  for (const Example& ex : stream) {
    by_pass[ex.timestamp].push_back(ex);
    max_pass = std::max(max_pass, ex.timestamp);
  }
  std::vector<PassSyncSummary> out;
  for (int64_t pass = 0; pass <= max_pass; ++pass) {
    PassSyncSummary s;
    s.pass = pass;
    const int64_t evictions_before = model_.store().eviction_count();
    double loss_sum = 0.0;
    int64_t batches = 0;
    auto it = by_pass.find(pass);
    if (it != by_pass.end()) {
      const std::vector<Example>& examples = it->second;
      s.examples = static_cast<int64_t>(examples.size());
      for (size_t begin = 0; begin < examples.size();
           begin += static_cast<size_t>(cfg_.batch_size)) {
        const size_t n = std::min<size_t>(static_cast<size_t>(cfg_.batch_size),
                                          examples.size() - begin);
        loss_sum += train_batch(std::span<const Example>(examples.data() + begin, n), pass);
        ++batches;
      }
    }
    const std::vector<DeltaRecord> delta = model_.store().export_delta(policy, pass);
    s.exported_entries = static_cast<int64_t>(delta.size());
    s.exported_bytes = delta_bytes(delta);
    s.evictions = model_.store().eviction_count() - evictions_before;
    s.dnn_fully_synced = true;
    s.dnn_params = model_.parameter_count();
    s.train_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
    out.push_back(s);
  }
  return out;
}

std::vector<PassSyncSummary> run_store_replay(GsetStore& store, const ModelConfig& schema,
                                              const std::vector<Example>& stream,
                                              const SyncPolicy& policy) {
  std::map<int64_t, std::vector<const Example*>> by_pass;
  int64_t max_pass = -1;
  for (const Example& ex : stream) {
    by_pass[ex.timestamp].push_back(&ex);
    max_pass = std::max(max_pass, ex.timestamp);
  }
  const std::vector<double> zero_grad(static_cast<size_t>(store.config().dim), 0.0);
  std::vector<PassSyncSummary> out;
  for (int64_t pass = 0; pass <= max_pass; ++pass) {
    PassSyncSummary s;
    s.pass = pass;
    const int64_t evictions_before = store.eviction_count();
    auto it = by_pass.find(pass);
    if (it != by_pass.end()) {
      s.examples = static_cast<int64_t>(it->second.size());
      for (const Example* ex : it->second) {
        for (size_t f = 0; f < schema.fields.size(); ++f) {
          const FeatureKey key{static_cast<int32_t>(f), example_field_value(schema, f, *ex)};
          store.lookup_or_admit(key, pass);
          store.apply_gradient_adagrad(key, zero_grad, 0.0, pass);
        }
      }
    }
    const std::vector<DeltaRecord> delta = store.export_delta(policy, pass);
    s.exported_entries = static_cast<int64_t>(delta.size());
    s.exported_bytes = delta_bytes(delta);
    s.evictions = store.eviction_count() - evictions_before;
    s.dnn_fully_synced = false;
    s.dnn_params = 0;
    out.push_back(s);
  }
  return out;
}

// ---- ablation grid ----------------------------------------------------------

AblationReport run_ablation_grid(const std::vector<Example>& train_data,
                                 const std::vector<Example>& test_data,
                                 const AblationGridConfig& cfg) {
  std::vector<AblationRunResult> runs(cfg.variants.size() * cfg.seeds.size());
  std::vector<std::pair<size_t, size_t>> jobs;  // (variant idx, seed idx)
  for (size_t v = 0; v < cfg.variants.size(); ++v) {
    for (size_t s = 0; s < cfg.seeds.size(); ++s) jobs.emplace_back(v, s);
  }

  const auto run_one = [&](size_t job) {
    const auto [vi, si] = jobs[job];
    ModelConfig mc = cfg.model;
    mc.variant = cfg.variants[vi];
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seeds[si];
    PepNetModel model(mc, tc.seed);
    Trainer trainer(model, tc);
    const TrainResult tr = trainer.train(train_data);
    AblationRunResult r;
    r.variant = cfg.variants[vi];
    r.seed = cfg.seeds[si];
    r.final_train_loss = tr.history.empty() ? 0.0 : tr.history.back().train_loss;
    r.report = evaluate(model, test_data);
    r.gauc_defined = r.report.overall_gauc.value.has_value();
    r.pooled_gauc = r.report.overall_gauc.value.value_or(0.0);
    runs[vi * cfg.seeds.size() + si] = std::move(r);
  };

  int32_t workers = cfg.workers;
  if (workers <= 0) {
    workers = static_cast<int32_t>(std::max(1u, std::thread::hardware_concurrency()));
  }
  workers = std::min<int32_t>(workers, static_cast<int32_t>(jobs.size()));
  if (workers <= 1) {
    for (size_t j = 0; j < jobs.size(); ++j) run_one(j);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (int32_t w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        while (true) {
          const size_t j = next.fetch_add(1);
          if (j >= jobs.size()) return;
          run_one(j);
        }
      });
    }
    for (std::thread& t : pool) t.join();
  }

  AblationReport report;
  report.runs = std::move(runs);
  for (size_t v = 0; v < cfg.variants.size(); ++v) {
    VariantSummary vs;
    vs.variant = cfg.variants[v];
    double sum = 0.0, sumsq = 0.0;
    int32_t n = 0;
    for (size_t s = 0; s < cfg.seeds.size(); ++s) {
      const AblationRunResult& r = report.runs[v * cfg.seeds.size() + s];
      if (!r.gauc_defined) continue;
      sum += r.pooled_gauc;
      sumsq += r.pooled_gauc * r.pooled_gauc;
      ++n;
    }
    vs.runs = n;
    if (n > 0) {
      vs.mean_gauc = sum / n;
      const double var = std::max(0.0, sumsq / n - vs.mean_gauc * vs.mean_gauc);
      vs.std_gauc = std::sqrt(var);
    }
    report.summaries.push_back(vs);
  }
  return report;
}

std::string AblationReport::to_csv() const {
  std::ostringstream os;
  os << "variant,seed,pooled_gauc,final_train_loss\n";
  char buf[64];
  for (const AblationRunResult& r : runs) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.pooled_gauc);
    os << variant_name(r.variant) << ',' << r.seed << ',' << (r.gauc_defined ? buf : "NA") << ',';
    std::snprintf(buf, sizeof(buf), "%.17g", r.final_train_loss);
    os << buf << '\n';
  }
  return os.str();
}

std::string AblationReport::to_table() const {
  std::ostringstream os;
  char buf[96];
  os << "variant          runs   mean GAUC    std\n";
  for (const VariantSummary& v : summaries) {
    const char* mark = v.variant == Variant::kPepNet ? "  <- full model (reference)" : "";
    std::snprintf(buf, sizeof(buf), "%-16s %4d   %.6f   %.6f%s\n", variant_name(v.variant),
                  v.runs, v.mean_gauc, v.std_gauc, mark);
    os << buf;
  }
  return os.str();
}

std::string metrics_history_csv(const TrainResult& result, const std::string& variant) {
  std::ostringstream os;
  os << "epoch,variant,domain,task,loss,auc,gauc\n";
  char buf[64];
  const auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const EpochMetrics& em : result.history) {
    os << em.epoch << ',' << variant << ",-1,-1," << fmt(em.train_loss) << ",NA,NA\n";
    if (!em.valid.has_value()) continue;
    const EvalReport& rep = *em.valid;
    for (int32_t d = 0; d < rep.domains; ++d) {
      for (int32_t t = 0; t < rep.tasks; ++t) {
        const CellMetrics& m = rep.cells[static_cast<size_t>(d)][static_cast<size_t>(t)];
        os << em.epoch << ',' << variant << ',' << d << ',' << t << ',' << fmt(m.logloss) << ','
           << (m.auc.has_value() ? fmt(*m.auc) : "NA") << ','
           << (m.gauc.value.has_value() ? fmt(*m.gauc.value) : "NA") << '\n';
      }
    }
  }
  return os.str();
}

// ---- config json ------------------------------------------------------------

std::string TrainConfig::to_json() const {
  json j;
  j["batch_size"] = batch_size;
  j["dnn_lr"] = dnn_lr;
  j["dnn_lr_online"] = dnn_lr_online;
  j["embedding_lr"] = embedding_lr;
  j["epochs"] = epochs;
  j["task_weights"] = task_weights;
  j["seed"] = seed;
  j["mode"] = mode == TrainMode::kOnlinePass ? "online" : "offline";
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["adam_eps"] = adam_eps;
  return j.dump(2) + "\n";
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.dnn_lr = j.value("dnn_lr", c.dnn_lr);
  c.dnn_lr_online = j.value("dnn_lr_online", c.dnn_lr_online);
  c.embedding_lr = j.value("embedding_lr", c.embedding_lr);
  c.epochs = j.value("epochs", c.epochs);
  c.task_weights = j.value("task_weights", c.task_weights);
  c.seed = j.value("seed", c.seed);
  const std::string mode = j.value("mode", std::string("offline"));
  if (mode == "offline") {
    c.mode = TrainMode::kOffline;
  } else if (mode == "online") {
    c.mode = TrainMode::kOnlinePass;
  } else {
    throw std::invalid_argument("train mode must be 'offline' or 'online', got '" + mode + "'");
  }
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open train config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return from_json(ss.str());
  } catch (const json::exception& e) {
    throw std::runtime_error("parse error in " + path + ": " + e.what());
  }
}

void TrainConfig::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write train config: " + path);
  os << to_json();
}

}  // namespace pepnet
