#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pepnet/example.hpp"
#include "pepnet/rng.hpp"

namespace pepnet {

// Synthetic multi-domain multi-task interaction-log generator. Labels come
// from a logistic model over planted user/item latent vectors whose slope
// varies per (domain, task, user group); heterogeneity = 0 collapses every
// group to the same slope. Per-(domain, task) biases are calibrated by
// bisection against a Monte Carlo sample of the impression distribution so
// empirical positive rates land on the configured targets.
struct GenConfig {
  int32_t domains = 3;
  int32_t tasks = 6;
  std::vector<std::string> task_names = {"like", "follow", "forward", "hate", "click", "effview"};

  std::vector<int64_t> users_per_domain = {7600, 11000, 8800};
  std::vector<int64_t> items_per_domain = {9474, 5205, 5588};
  std::vector<int64_t> authors_per_domain = {950, 520, 560};

  // overlap[r][c] = |pool_r ∩ pool_c| / |pool_c|; diagonal ignored
  std::vector<std::vector<double>> user_overlap = {
      {0.0, 0.6364, 0.0682}, {0.9211, 0.0, 0.0909}, {0.0789, 0.0727, 0.0}};
  std::vector<std::vector<double>> item_overlap = {
      {0.0, 0.3854, 0.3826}, {0.2117, 0.0, 0.4046}, {0.2257, 0.4343, 0.0}};

  // positive_rates[d][t] in (0,1)
  std::vector<std::vector<double>> positive_rates = {
      {0.0368, 0.0048, 0.0021, 0.0020, 0.1466, 0.4557},
      {0.0291, 0.0033, 0.0021, 0.0006, 0.5838, 0.4458},
      {0.0282, 0.0035, 0.0028, 0.0008, 0.5733, 0.4848}};

  std::vector<double> domain_share = {0.247, 0.352, 0.402};

  int32_t latent_dim = 8;
  double heterogeneity = 1.5;  // 0 disables planted personalization
  int32_t user_groups = 4;
  int32_t context_fields = 1;
  int64_t context_vocab = 32;
  int32_t stat_buckets = 16;

  int64_t num_examples = 1000000;
  int32_t passes = 12;
  int64_t calibration_samples = 200000;
  uint64_t seed = 1;

  void validate() const;

  std::string to_json() const;
  static GenConfig from_json(const std::string& text);
  static GenConfig load(const std::string& path);
  void save(const std::string& path) const;
};

struct GenStats {
  // [d][t] empirical positive rates alongside the configured targets
  std::vector<std::vector<double>> configured_rates;
  std::vector<std::vector<double>> empirical_rates;
  std::vector<std::vector<double>> configured_user_overlap;
  std::vector<std::vector<double>> measured_user_overlap;
  std::vector<std::vector<double>> measured_item_overlap;
  std::vector<int64_t> examples_per_domain;
  int64_t total_examples = 0;

  std::string to_json() const;
};

class Generator {
 public:
  explicit Generator(GenConfig cfg);

  // Deterministic for a fixed config (seed included).
  std::vector<Example> generate();

  // Stats for the most recent generate() call.
  const GenStats& stats() const { return stats_; }

  // Oracle introspection for tests: the latent dot product and the exact
  // positive probability behind a (domain, user, item, task) combination.
  double latent_dot(int64_t user_id, int64_t item_id) const;
  double positive_probability(int32_t domain, int32_t task, int64_t user_id,
                              int64_t item_id) const;
  int32_t user_group(int64_t user_id) const;
  const std::vector<int64_t>& domain_user_pool(int32_t d) const { return user_pools_[d]; }
  const std::vector<int64_t>& domain_item_pool(int32_t d) const { return item_pools_[d]; }

 private:
  void build_pools();
  void draw_latents();
  void calibrate_biases();

  GenConfig cfg_;
  GenStats stats_;
  std::vector<std::vector<int64_t>> user_pools_;  // per domain, global user ids
  std::vector<std::vector<int64_t>> item_pools_;
  std::vector<int64_t> item_author_;              // global item id -> author id
  int64_t total_users_ = 0;
  int64_t total_items_ = 0;
  int64_t total_authors_ = 0;
  std::vector<double> user_latent_;               // total_users x latent_dim
  std::vector<double> item_latent_;
  std::vector<int32_t> user_group_;
  std::vector<std::vector<std::vector<double>>> slope_;  // [d][t][group]
  std::vector<std::vector<double>> bias_;                // [d][t]
};

// Tab-separated log lines: domain, T labels, then field:value tokens
// (t: pass, u: user, i: item, a: author, c: context..., s: stat...).
void write_log(const std::string& path, const std::vector<Example>& examples);
std::vector<Example> read_log(const std::string& path);

// Split by pass counts: [0, train), [train, train+valid), [train+valid, total).
struct TimeSplit {
  std::vector<Example> train;
  std::vector<Example> valid;
  std::vector<Example> test;
};
TimeSplit split_by_time(const std::vector<Example>& examples, int32_t train_passes,
                        int32_t valid_passes, int32_t test_passes);

}  // namespace pepnet
