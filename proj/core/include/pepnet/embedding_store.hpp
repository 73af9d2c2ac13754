#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pepnet/rng.hpp"

namespace pepnet {

struct FeatureKey {
  int32_t field = 0;
  int64_t value = 0;

  bool operator==(const FeatureKey&) const = default;
  bool operator<(const FeatureKey& o) const {
    return field != o.field ? field < o.field : value < o.value;
  }
};

struct FeatureKeyHash {
  size_t operator()(const FeatureKey& k) const {
    return static_cast<size_t>(
        splitmix64(static_cast<uint64_t>(k.value) ^ (static_cast<uint64_t>(k.field) << 56)));
  }
};

struct GsetEntry {
  std::vector<double> vector;
  double score = 0.0;               // feature score: touch count with per-pass decay
  int64_t update_count = 0;
  int64_t last_update_pass = 0;
  std::vector<double> adagrad_accum;  // per-dimension, nonnegative
};

// Feature-score primitives. Touch adds one; decay multiplies by rho^passes.
double feature_score_touch(GsetEntry& e);
double feature_score_decay(GsetEntry& e, int64_t passes, double rho);

struct SyncPolicy {
  int64_t per_feature_quota = 100;  // max exported entries per field per pass
  int64_t min_update_count = 1;     // expiration threshold
  int64_t pass_window = 1;          // staleness window in passes
};

struct StoreConfig {
  int64_t capacity = 1 << 20;  // max resident entries
  int64_t dim = 8;
  double score_decay = 0.999;  // per-pass multiplicative decay rho
  uint64_t seed = 1;
};

struct DeltaRecord {
  FeatureKey key;
  std::vector<double> vector;

  bool operator==(const DeltaRecord&) const = default;
};

// Capacity-bounded shared embedding table with feature-score eviction and
// per-pass delta export. Keys are exact (field, value) pairs; distinct keys
// never share a slot. All mutations are serialized by the caller within a
// pass; read-only lookups against a frozen pass may run concurrently.
class GsetStore {
 public:
  explicit GsetStore(StoreConfig cfg);

  const StoreConfig& config() const { return cfg_; }

  // Returns the key's vector, bumping its feature score. Misses admit a
  // Xavier-initialized vector; when the store is at capacity, the documented
  // eviction order picks the victim among residents and candidate alike, so
  // a candidate colder than every resident is handed back as a transient
  // vector without entering (it can never be evicted by its own call). The
  // returned span is valid until the next mutating call.
  std::span<const double> lookup_or_admit(FeatureKey key, int64_t pass);

  // Read-only lookup; no admission, no score change.
  std::optional<std::span<const double>> peek(FeatureKey key) const;

  // accum += grad^2; vector -= lr * grad / (sqrt(accum) + 1e-8)
  void apply_gradient_adagrad(FeatureKey key, std::span<const double> grad, double lr,
                              int64_t pass);

  // Entries with update_count >= min_update_count and last_update_pass >
  // pass - pass_window, cut per field to per_feature_quota by descending
  // update_count (ties: higher score, then lower value id). Resets the
  // exported entries' update_count to 0.
  std::vector<DeltaRecord> export_delta(const SyncPolicy& policy, int64_t pass);

  // resident * (dim + dim) * 8 payload bytes + resident * kEntryMetadataBytes
  int64_t memory_usage() const;
  int64_t memory_threshold() const;
  static constexpr int64_t kEntryMetadataBytes = 40;

  size_t resident_count() const { return entries_.size(); }
  bool contains(FeatureKey key) const { return entries_.count(key) > 0; }
  const GsetEntry* find(FeatureKey key) const;
  GsetEntry* find_mutable(FeatureKey key);
  int64_t current_pass() const { return current_pass_; }
  int64_t eviction_count() const { return evictions_; }

  // Sorted-by-key snapshot of resident keys.
  std::vector<FeatureKey> keys() const;

  void save(std::ostream& os) const;
  static GsetStore load(std::istream& is);

 private:
  void advance_to(int64_t pass);
  void evict_down_to_capacity(const FeatureKey& keep);

  StoreConfig cfg_;
  std::unordered_map<FeatureKey, GsetEntry, FeatureKeyHash> entries_;
  int64_t current_pass_ = 0;
  int64_t evictions_ = 0;
  Rng rng_;
};

// Delta file: u64 pass, u32 field count, then per record u32 field id,
// u64 value id, u16 dim, dim little-endian f64s. Bit-exact round trip.
void write_delta_file(const std::string& path, int64_t pass,
                      const std::vector<DeltaRecord>& records);
std::pair<int64_t, std::vector<DeltaRecord>> read_delta_file(const std::string& path);

}  // namespace pepnet
