#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pepnet/metrics.hpp"
#include "pepnet/model.hpp"

namespace pepnet {

enum class TrainMode { kOffline, kOnlinePass };

struct TrainConfig {
  int64_t batch_size = 1024;
  double dnn_lr = 0.001;        // Adam, offline
  double dnn_lr_online = 5e-6;  // Adam, online-pass mode
  double embedding_lr = 0.05;   // AdaGrad, both modes
  int32_t epochs = 2;
  std::vector<double> task_weights;  // empty -> uniform 1.0
  uint64_t seed = 1;
  TrainMode mode = TrainMode::kOffline;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  static TrainConfig load(const std::string& path);
  void save(const std::string& path) const;
};

struct AdamState {
  Tensor m;
  Tensor v;
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard bias-corrected Adam update; tags the parameter as Adam-owned.
void adam_step(AdamState& state, Parameter& param, const Tensor& grad, double lr);

// Sum over tasks of weight_t * mean-BCE(scores_t, labels_t).
NodeId multi_task_loss(Graph& g, const std::vector<NodeId>& scores,
                       const std::vector<Tensor>& labels, const std::vector<double>& weights);

struct EpochMetrics {
  int32_t epoch = 0;
  double train_loss = 0.0;
  int64_t batches = 0;
  std::optional<EvalReport> valid;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
};

struct PassSyncSummary {
  int64_t pass = 0;
  int64_t examples = 0;
  int64_t exported_entries = 0;
  int64_t exported_bytes = 0;
  int64_t evictions = 0;
  bool dnn_fully_synced = true;
  int64_t dnn_params = 0;
  double train_loss = 0.0;
};

// Owns optimizer state for one model. Dense/gate parameters update through
// Adam; embedding gradients route to the store's AdaGrad. Gradients are
// zeroed explicitly around every step.
class Trainer {
 public:
  Trainer(PepNetModel& model, TrainConfig cfg);

  double train_batch(std::span<const Example> batch, int64_t pass);

  TrainResult train(const std::vector<Example>& train_data,
                    const std::vector<Example>* valid_data = nullptr);

  // Consumes the stream pass by pass (by timestamp), training each pass and
  // exporting the store delta afterwards. DNN parameters count as fully
  // synchronized every pass.
  std::vector<PassSyncSummary> run_online_passes(const std::vector<Example>& stream,
                                                 const SyncPolicy& policy);

  PepNetModel& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  std::vector<AdamState>& adam_states() { return adam_; }
  int64_t epochs_done() const { return epochs_done_; }
  void set_epochs_done(int64_t n) { epochs_done_ = n; }

  double dnn_lr() const {
    return cfg_.mode == TrainMode::kOnlinePass ? cfg_.dnn_lr_online : cfg_.dnn_lr;
  }
  std::vector<double> effective_task_weights() const;

 private:
  PepNetModel& model_;
  TrainConfig cfg_;
  std::vector<AdamState> adam_;  // aligned with model_.parameters()
  int64_t epochs_done_ = 0;
};

// Store-only stream replay: every feature touch admits/looks up its key and
// applies a zero gradient so update counts advance; per-pass deltas are
// exported under the policy. Used by the sync simulation command.
std::vector<PassSyncSummary> run_store_replay(GsetStore& store, const ModelConfig& schema,
                                              const std::vector<Example>& stream,
                                              const SyncPolicy& policy);

// ---- ablation grid ----------------------------------------------------------

struct AblationRunResult {
  Variant variant = Variant::kPepNet;
  uint64_t seed = 0;
  double final_train_loss = 0.0;
  EvalReport report;
  double pooled_gauc = 0.0;  // NaN-free: undefined collapses to 0 with a flag
  bool gauc_defined = false;
};

struct VariantSummary {
  Variant variant = Variant::kPepNet;
  double mean_gauc = 0.0;
  double std_gauc = 0.0;
  int32_t runs = 0;
};

struct AblationReport {
  std::vector<AblationRunResult> runs;     // variant-major, seed-minor
  std::vector<VariantSummary> summaries;   // one per variant
  std::string to_csv() const;
  std::string to_table() const;
};

struct AblationGridConfig {
  ModelConfig model;  // variant field overridden per run
  TrainConfig train;  // seed overridden per run
  std::vector<Variant> variants = {Variant::kPepNet, Variant::kPepNetNoEp, Variant::kPepNetNoPp,
                                   Variant::kSharedBottom, Variant::kMmoe};
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  int32_t workers = 0;  // 0 -> hardware concurrency; runs are independent
};

// Trains every (variant, seed) pair on identical data and reports per-run
// pooled GAUC plus per-variant mean +/- std. Results do not depend on the
// worker count.
AblationReport run_ablation_grid(const std::vector<Example>& train_data,
                                 const std::vector<Example>& test_data,
                                 const AblationGridConfig& cfg);

// Metrics history CSV: epoch, variant, domain, task, loss, auc, gauc.
std::string metrics_history_csv(const TrainResult& result, const std::string& variant);

}  // namespace pepnet
