#pragma once

#include <cstdint>
#include <vector>

namespace pepnet {

// One impression: domain, per-task binary labels, typed feature ids, and the
// pass index it belongs to.
struct Example {
  int32_t domain = 0;
  std::vector<uint8_t> labels;           // one 0/1 per task
  int64_t user_id = 0;
  int64_t item_id = 0;
  int64_t author_id = 0;
  std::vector<int64_t> context_ids;      // one per context field
  std::vector<int64_t> domain_stat_ids;  // bucketed per-domain statistics
  int64_t timestamp = 0;                 // pass index

  bool operator==(const Example&) const = default;
};

}  // namespace pepnet
