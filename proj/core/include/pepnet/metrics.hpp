#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pepnet {

struct EvalRecord {
  int64_t user_id = 0;
  int32_t domain = 0;
  int32_t task = 0;
  double score = 0.0;
  uint8_t label = 0;
};

// Rank-sum AUC with ties counted 0.5. Undefined (nullopt) when the input
// lacks a positive or a negative; never silently 0.5.
std::optional<double> auc(std::span<const EvalRecord> records);

struct GaucResult {
  std::optional<double> value;
  int64_t qualified_users = 0;
  int64_t skipped_users = 0;  // users with a single label class
  double weight_sum = 0.0;    // impressions behind the qualified users
};

// Impression-weighted mean of per-user AUCs; users with one class skipped.
GaucResult gauc(std::span<const EvalRecord> records);

struct CellMetrics {
  std::optional<double> auc;
  GaucResult gauc;
  double logloss = 0.0;  // mean binary cross-entropy over the cell
  int64_t records = 0;
  int64_t positives = 0;
};

struct EvalReport {
  int32_t domains = 0;
  int32_t tasks = 0;
  std::vector<std::string> task_names;
  std::vector<std::vector<CellMetrics>> cells;  // [domain][task]

  // Pooled GAUC across every (domain, task, user) group; sparse cells
  // contribute in proportion to their qualified impressions.
  GaucResult overall_gauc;

  std::string to_csv() const;
  std::string to_table() const;
};

// Assembles the D x T report (plus pooled GAUC) from scored records.
EvalReport build_report(std::span<const EvalRecord> records, int32_t domains, int32_t tasks,
                        const std::vector<std::string>& task_names);

}  // namespace pepnet
