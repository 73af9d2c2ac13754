#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "pepnet/embedding_store.hpp"
#include "pepnet/rng.hpp"

using namespace pepnet;

namespace {

StoreConfig small_config(int64_t capacity, int64_t dim = 4, uint64_t seed = 1) {
  StoreConfig c;
  c.capacity = capacity;
  c.dim = dim;
  c.seed = seed;
  return c;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("admission and lookup basics") {
  GsetStore store(small_config(8));
  CHECK(store.resident_count() == 0);
  CHECK(store.memory_usage() == 0);
  const auto v = store.lookup_or_admit({0, 42}, 0);
  CHECK(v.size() == 4);
  CHECK(store.resident_count() == 1);
  CHECK(store.find({0, 42})->score == 1.0);

  // same key again: same vector, score bumped
  std::vector<double> first(v.begin(), v.end());
  const auto v2 = store.lookup_or_admit({0, 42}, 0);
  for (size_t i = 0; i < first.size(); ++i) CHECK(v2[i] == first[i]);
  CHECK(store.find({0, 42})->score == 2.0);

  CHECK_THROWS_AS(GsetStore(small_config(0)), std::invalid_argument);
}

TEST_CASE("capacity 2 evicts the minimal-score entry") {
  GsetStore store(small_config(2));
  store.lookup_or_admit({0, 1}, 0);
  store.lookup_or_admit({0, 1}, 0);  // score 2
  store.lookup_or_admit({0, 2}, 0);  // score 1
  store.lookup_or_admit({0, 3}, 0);  // forces one eviction
  CHECK(store.resident_count() == 2);
  CHECK(store.contains({0, 1}));
  CHECK(store.contains({0, 3}));   // just admitted, protected
  CHECK(!store.contains({0, 2}));  // minimal score, evicted
  CHECK(store.eviction_count() == 1);
}

TEST_CASE("eviction tie-breaking: older pass first, then larger value id") {
  GsetStore store(small_config(2));
  store.lookup_or_admit({0, 5}, 0);
  store.lookup_or_admit({0, 9}, 0);
  // equal scores and equal pass: larger value id goes first
  store.lookup_or_admit({0, 1}, 0);
  CHECK(!store.contains({0, 9}));
  CHECK(store.contains({0, 5}));
}

TEST_CASE("hot key survives under capacity 1") {
  GsetStore store(small_config(1));
  for (int i = 0; i < 10; ++i) store.lookup_or_admit({0, 7}, 0);
  store.lookup_or_admit({0, 8}, 0);
  // A admitted with score 10; B admitted then the lower-score entry must go.
  // B holds score 1 < 10, so B is evicted right after its own admission.
  CHECK(store.resident_count() == 1);
  CHECK(store.contains({0, 7}));
  CHECK(!store.contains({0, 8}));
}

TEST_CASE("feature score: touch and decay") {
  GsetEntry e;
  CHECK(feature_score_touch(e) == 1.0);
  CHECK(feature_score_decay(e, 0, 0.999) == 1.0);
  const double decayed = feature_score_decay(e, 693, 0.999);
  CHECK(decayed == std::pow(0.999, 693.0));
  CHECK(decayed == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("adagrad gradient application") {
  GsetStore store(small_config(4, 1));
  store.lookup_or_admit({0, 1}, 0);
  const double v0 = store.find({0, 1})->vector[0];

  // zero grad: nothing moves
  store.apply_gradient_adagrad({0, 1}, std::vector<double>{0.0}, 0.05, 0);
  CHECK(store.find({0, 1})->vector[0] == v0);
  CHECK(store.find({0, 1})->adagrad_accum[0] == 0.0);
  CHECK(store.find({0, 1})->update_count == 1);

  // first real step: v -= lr * g / (|g| + 1e-8)
  store.apply_gradient_adagrad({0, 1}, std::vector<double>{2.0}, 0.05, 0);
  const double expect = v0 - 0.05 * 2.0 / (std::sqrt(4.0) + 1e-8);
  CHECK(store.find({0, 1})->vector[0] == doctest::Approx(expect).epsilon(1e-15));

  CHECK_THROWS_AS(
      store.apply_gradient_adagrad({0, 99}, std::vector<double>{1.0}, 0.05, 0),
      std::runtime_error);
  CHECK_THROWS_AS(store.apply_gradient_adagrad(
                      {0, 1}, std::vector<double>{std::nan("")}, 0.05, 0),
                  std::runtime_error);
}

TEST_CASE("10-step scalar adagrad trace matches a hand recurrence") {
  GsetStore store(small_config(4, 1, 3));
  store.lookup_or_admit({0, 1}, 0);
  double v = store.find({0, 1})->vector[0];
  double accum = 0.0;
  Rng rng(17);
  for (int step = 0; step < 10; ++step) {
    const double grad = rng.uniform(-2.0, 2.0);
    store.apply_gradient_adagrad({0, 1}, std::vector<double>{grad}, 0.05, 0);
    accum += grad * grad;
    v -= 0.05 * grad / (std::sqrt(accum) + 1e-8);
    CHECK(std::fabs(store.find({0, 1})->vector[0] - v) <= 1e-12);
  }
}

TEST_CASE("export_delta policy filters, quota, and reset") {
  GsetStore store(small_config(64, 2));
  SyncPolicy policy;
  policy.per_feature_quota = 2;
  policy.min_update_count = 1;
  policy.pass_window = 5;

  // nothing updated yet
  CHECK(store.export_delta(policy, 0).empty());

  const std::vector<double> g{0.1, -0.1};
  auto touch_updates = [&](int64_t value, int n, int64_t pass) {
    store.lookup_or_admit({0, value}, pass);
    for (int i = 0; i < n; ++i) store.apply_gradient_adagrad({0, value}, g, 0.05, pass);
  };
  touch_updates(10, 5, 3);
  touch_updates(11, 3, 3);
  touch_updates(12, 1, 3);
  auto delta = store.export_delta(policy, 3);
  REQUIRE(delta.size() == 2);  // quota cuts the count-1 entry
  CHECK(delta[0].key.value == 10);
  CHECK(delta[1].key.value == 11);
  // exported entries reset; the cut entry keeps its count
  CHECK(store.find({0, 10})->update_count == 0);
  CHECK(store.find({0, 11})->update_count == 0);
  CHECK(store.find({0, 12})->update_count == 1);

  // staleness: updated at pass 3, window 5 -> excluded at pass 8, included at 7
  auto stale = store.export_delta(policy, 8);
  CHECK(stale.empty());
  touch_updates(13, 2, 10);
  auto fresh = store.export_delta(policy, 10);
  REQUIRE(fresh.size() == 1);
  CHECK(fresh[0].key.value == 13);
}

TEST_CASE("memory usage accounting") {
  GsetStore store(small_config(100, 4));
  CHECK(store.memory_usage() == 0);
  for (int64_t i = 0; i < 10; ++i) store.lookup_or_admit({0, i}, 0);
  CHECK(store.memory_usage() == 10 * (4 + 4) * 8 + 10 * GsetStore::kEntryMetadataBytes);
  CHECK(store.memory_usage() <= store.memory_threshold());
}

TEST_CASE("delta file round trip is bit exact") {
  Rng rng(5);
  std::vector<DeltaRecord> records;
  for (int i = 0; i < 20; ++i) {
    DeltaRecord r;
    r.key = {static_cast<int32_t>(i % 3), static_cast<int64_t>(rng.next_u64())};
    r.vector.resize(6);
    for (double& v : r.vector) v = rng.normal();
    records.push_back(std::move(r));
  }
  const std::string path = temp_path("pepnet_delta_test.bin");
  write_delta_file(path, 17, records);
  const auto [pass, loaded] = read_delta_file(path);
  CHECK(pass == 17);
  REQUIRE(loaded.size() == records.size());
  for (size_t i = 0; i < records.size(); ++i) CHECK(loaded[i] == records[i]);
  std::filesystem::remove(path);

  // empty delta round trips too
  write_delta_file(path, 3, {});
  const auto [pass2, empty] = read_delta_file(path);
  CHECK(pass2 == 3);
  CHECK(empty.empty());
  std::filesystem::remove(path);
}

TEST_CASE("store serialization round trip preserves state") {
  GsetStore store(small_config(32, 3, 11));
  for (int64_t i = 0; i < 10; ++i) store.lookup_or_admit({static_cast<int32_t>(i % 2), i}, i % 4);
  const std::vector<double> g{0.2, -0.4, 0.6};
  store.apply_gradient_adagrad({0, 0}, g, 0.05, 2);
  store.apply_gradient_adagrad({1, 3}, g, 0.05, 3);

  std::stringstream blob;
  store.save(blob);
  GsetStore loaded = GsetStore::load(blob);
  CHECK(loaded.resident_count() == store.resident_count());
  CHECK(loaded.current_pass() == store.current_pass());
  for (const FeatureKey& k : store.keys()) {
    const GsetEntry* a = store.find(k);
    const GsetEntry* b = loaded.find(k);
    REQUIRE(b != nullptr);
    CHECK(a->score == b->score);
    CHECK(a->update_count == b->update_count);
    CHECK(a->last_update_pass == b->last_update_pass);
    CHECK(a->vector == b->vector);
    CHECK(a->adagrad_accum == b->adagrad_accum);
  }
  // future admissions continue identically (RNG state restored)
  const auto va = store.lookup_or_admit({7, 777}, 5);
  const auto vb = loaded.lookup_or_admit({7, 777}, 5);
  for (size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);
}

// Shadow-model property test: replays a random operation sequence against an
// independent reimplementation of the documented score/eviction rules.
TEST_CASE("randomized operation sequences against a shadow model") {
  struct ShadowEntry {
    double score = 0.0;
    int64_t update_count = 0;
    int64_t last_update_pass = 0;
  };

  for (uint64_t seed = 1; seed <= 4; ++seed) {
    const int64_t capacity = 24;
    GsetStore store(small_config(capacity, 2, seed));
    std::map<std::pair<int32_t, int64_t>, ShadowEntry> shadow;
    int64_t shadow_pass = 0;
    Rng rng(seed * 1000 + 7);

    auto shadow_advance = [&](int64_t pass) {
      if (pass <= shadow_pass) return;
      for (auto& [k, e] : shadow) e.score *= std::pow(0.999, double(pass - shadow_pass));
      shadow_pass = pass;
    };

    int64_t pass = 0;
    for (int op = 0; op < 25000; ++op) {
      if (rng.uniform() < 0.01) ++pass;
      const int32_t field = static_cast<int32_t>(rng.uniform_index(3));
      const int64_t value = static_cast<int64_t>(rng.uniform_index(60));
      const double roll = rng.uniform();
      if (roll < 0.75) {
        store.lookup_or_admit({field, value}, pass);
        shadow_advance(pass);
        auto [it, inserted] = shadow.try_emplace({field, value});
        if (inserted) it->second.last_update_pass = pass;
        it->second.score += 1.0;
        if (shadow.size() > static_cast<size_t>(capacity)) {
          // evict the minimal (score, oldest pass, larger value, larger field)
          auto victim = shadow.end();
          for (auto s = shadow.begin(); s != shadow.end(); ++s) {
            if (s->first == std::pair<int32_t, int64_t>{field, value}) continue;
            if (victim == shadow.end()) {
              victim = s;
              continue;
            }
            const auto& a = s->second;
            const auto& b = victim->second;
            bool before = false;
            if (a.score != b.score) {
              before = a.score < b.score;
            } else if (a.last_update_pass != b.last_update_pass) {
              before = a.last_update_pass < b.last_update_pass;
            } else if (s->first.second != victim->first.second) {
              before = s->first.second > victim->first.second;
            } else {
              before = s->first.first > victim->first.first;
            }
            if (before) victim = s;
          }
          shadow.erase(victim);
        }
      } else if (roll < 0.95) {
        if (store.contains({field, value})) {
          const std::vector<double> g{rng.uniform(-1, 1), rng.uniform(-1, 1)};
          store.apply_gradient_adagrad({field, value}, g, 0.05, pass);
          shadow_advance(pass);
          auto& e = shadow.at({field, value});
          e.update_count += 1;
          e.last_update_pass = pass;
        }
      } else {
        SyncPolicy policy;
        policy.per_feature_quota = static_cast<int64_t>(rng.uniform_index(4));
        policy.min_update_count = 1 + static_cast<int64_t>(rng.uniform_index(3));
        policy.pass_window = 1 + static_cast<int64_t>(rng.uniform_index(8));
        const auto delta = store.export_delta(policy, pass);
        shadow_advance(pass);
        // soundness: every exported entry satisfies both predicates + quota
        std::map<int32_t, int64_t> per_field;
        for (const DeltaRecord& r : delta) {
          auto& e = shadow.at({r.key.field, r.key.value});
          CHECK(e.update_count >= policy.min_update_count);
          CHECK(e.last_update_pass > pass - policy.pass_window);
          per_field[r.key.field] += 1;
          e.update_count = 0;
        }
        for (const auto& [f, n] : per_field) CHECK(n <= policy.per_feature_quota);
        // completeness: every qualifying entry exported unless cut by quota
        std::map<int32_t, int64_t> qualifying;
        for (const auto& [k, e] : shadow) {
          if (e.update_count >= policy.min_update_count &&
              e.last_update_pass > pass - policy.pass_window) {
            qualifying[k.first] += 1;  // those still qualifying were NOT exported
          }
        }
        for (const auto& [f, leftover] : qualifying) {
          // leftovers only when the quota was exhausted for the field
          CHECK(per_field[f] == policy.per_feature_quota);
        }
      }

      CHECK(store.resident_count() <= static_cast<size_t>(capacity));
      CHECK(store.memory_usage() <= store.memory_threshold());
    }

    // full state agreement at the end
    shadow_advance(pass);
    CHECK(store.resident_count() == shadow.size());
    for (const auto& [k, e] : shadow) {
      const GsetEntry* entry = store.find({k.first, k.second});
      REQUIRE(entry != nullptr);
      CHECK(std::fabs(entry->score - e.score) <= 1e-9 * std::max(1.0, e.score));
      CHECK(entry->update_count == e.update_count);
      CHECK(entry->last_update_pass == e.last_update_pass);
    }

    // determinism: replay the identical sequence and compare dumps
    GsetStore replay(small_config(capacity, 2, seed));
    Rng rng2(seed * 1000 + 7);
    int64_t pass2 = 0;
    for (int op = 0; op < 25000; ++op) {
      if (rng2.uniform() < 0.01) ++pass2;
      const int32_t field = static_cast<int32_t>(rng2.uniform_index(3));
      const int64_t value = static_cast<int64_t>(rng2.uniform_index(60));
      const double roll = rng2.uniform();
      if (roll < 0.75) {
        replay.lookup_or_admit({field, value}, pass2);
      } else if (roll < 0.95) {
        if (replay.contains({field, value})) {
          const std::vector<double> g{rng2.uniform(-1, 1), rng2.uniform(-1, 1)};
          replay.apply_gradient_adagrad({field, value}, g, 0.05, pass2);
        }
      } else {
        SyncPolicy policy;
        policy.per_feature_quota = static_cast<int64_t>(rng2.uniform_index(4));
        policy.min_update_count = 1 + static_cast<int64_t>(rng2.uniform_index(3));
        policy.pass_window = 1 + static_cast<int64_t>(rng2.uniform_index(8));
        replay.export_delta(policy, pass2);
      }
    }
    std::stringstream a, b;
    store.save(a);
    replay.save(b);
    CHECK(a.str() == b.str());
  }
}
