#include "pepnet/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "pepnet/binio.hpp"

namespace pepnet {

double feature_score_touch(GsetEntry& e) {
  e.score += 1.0;
  return e.score;
}

double feature_score_decay(GsetEntry& e, int64_t passes, double rho) {
  if (passes > 0) e.score *= std::pow(rho, static_cast<double>(passes));
  return e.score;
}

GsetStore::GsetStore(StoreConfig cfg) : cfg_(cfg), rng_(cfg.seed) {
  if (cfg_.capacity < 1) throw std::invalid_argument("store capacity must be at least 1");
  if (cfg_.dim < 1) throw std::invalid_argument("embedding dim must be at least 1");
}

void GsetStore::advance_to(int64_t pass) {
  if (pass <= current_pass_) return;
  const int64_t delta = pass - current_pass_;
  for (auto& [key, entry] : entries_) feature_score_decay(entry, delta, cfg_.score_decay);
  current_pass_ = pass;
}

namespace {
// true when a should be evicted before b
bool evicts_before(const FeatureKey& ka, const GsetEntry& a, const FeatureKey& kb,
                   const GsetEntry& b) {
  if (a.score != b.score) return a.score < b.score;
  if (a.last_update_pass != b.last_update_pass) return a.last_update_pass < b.last_update_pass;
  if (ka.value != kb.value) return ka.value > kb.value;
  return ka.field > kb.field;
}
}  // namespace

std::span<const double> GsetStore::lookup_or_admit(FeatureKey key, int64_t pass) {
  advance_to(pass);
  auto it = entries_.find(key);
  if (it != entries_.end()) {
    feature_score_touch(it->second);
    return it->second.vector;
  }

  GsetEntry candidate;
  candidate.vector.resize(static_cast<size_t>(cfg_.dim));
  const double limit = std::sqrt(3.0 / static_cast<double>(cfg_.dim));
  for (double& v : candidate.vector) v = rng_.uniform(-limit, limit);
  candidate.adagrad_accum.assign(static_cast<size_t>(cfg_.dim), 0.0);
  candidate.last_update_pass = pass;
  candidate.score = 1.0;  // post-admission touch

  if (static_cast<int64_t>(entries_.size()) < cfg_.capacity) {
    it = entries_.emplace(key, std::move(candidate)).first;
    return it->second.vector;
  }

  // At capacity the documented eviction order decides between the residents
  // and the candidate. A candidate that would itself be the victim never
  // enters, which keeps cold features from churning hot ones out.
  const FeatureKey* victim_key = nullptr;
  const GsetEntry* victim = nullptr;
  for (const auto& [k, entry] : entries_) {
    if (victim == nullptr || evicts_before(k, entry, *victim_key, *victim)) {
      victim_key = &k;
      victim = &entry;
    }
  }
  if (victim == nullptr || !evicts_before(*victim_key, *victim, key, candidate)) {
    ++rejections_;
    transient_ = std::move(candidate.vector);
    return transient_;
  }
  entries_.erase(*victim_key);
  ++evictions_;
  it = entries_.emplace(key, std::move(candidate)).first;
  return it->second.vector;
}

std::optional<std::span<const double>> GsetStore::peek(FeatureKey key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return std::span<const double>(it->second.vector);
}

const GsetEntry* GsetStore::find(FeatureKey key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

GsetEntry* GsetStore::find_mutable(FeatureKey key) {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

void GsetStore::apply_gradient_adagrad(FeatureKey key, std::span<const double> grad, double lr,
                                       int64_t pass) {
  advance_to(pass);
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    throw std::runtime_error("apply_gradient_adagrad: key (" + std::to_string(key.field) + "," +
                             std::to_string(key.value) + ") not resident");
  }
  GsetEntry& e = it->second;
  if (grad.size() != e.vector.size()) {
    throw std::invalid_argument("apply_gradient_adagrad: gradient dim mismatch");
  }
  for (double gv : grad) {
    if (!std::isfinite(gv)) throw std::runtime_error("apply_gradient_adagrad: non-finite gradient");
  }
  for (size_t i = 0; i < grad.size(); ++i) {
    e.adagrad_accum[i] += grad[i] * grad[i];
    e.vector[i] -= lr * grad[i] / (std::sqrt(e.adagrad_accum[i]) + 1e-8);
  }
  e.update_count += 1;
  e.last_update_pass = pass;
}

std::vector<DeltaRecord> GsetStore::export_delta(const SyncPolicy& policy, int64_t pass) {
  advance_to(pass);
  // qualifying entries grouped per field
  std::map<int32_t, std::vector<std::pair<FeatureKey, GsetEntry*>>> by_field;
  for (auto& [key, entry] : entries_) {
    if (entry.update_count < policy.min_update_count) continue;
    if (entry.last_update_pass <= pass - policy.pass_window) continue;
    by_field[key.field].emplace_back(key, &entry);
  }
  std::vector<DeltaRecord> out;
  for (auto& [field, group] : by_field) {
    std::sort(group.begin(), group.end(), [](const auto& a, const auto& b) {
      if (a.second->update_count != b.second->update_count)
        return a.second->update_count > b.second->update_count;
      if (a.second->score != b.second->score) return a.second->score > b.second->score;
      return a.first.value < b.first.value;
    });
    const size_t take = std::min<size_t>(group.size(),
                                         static_cast<size_t>(std::max<int64_t>(0, policy.per_feature_quota)));
    for (size_t i = 0; i < take; ++i) {
      out.push_back({group[i].first, group[i].second->vector});
      group[i].second->update_count = 0;
    }
  }
  return out;
}

int64_t GsetStore::memory_usage() const {
  const int64_t n = static_cast<int64_t>(entries_.size());
  return n * (cfg_.dim + cfg_.dim) * 8 + n * kEntryMetadataBytes;
}

int64_t GsetStore::memory_threshold() const {
  return cfg_.capacity * ((cfg_.dim + cfg_.dim) * 8 + kEntryMetadataBytes);
}

std::vector<FeatureKey> GsetStore::keys() const {
  std::vector<FeatureKey> out;
  out.reserve(entries_.size());
  for (const auto& [key, entry] : entries_) out.push_back(key);
  std::sort(out.begin(), out.end());
  return out;
}

// ---- serialization ---------------------------------------------------------

using binio::get_f64;
using binio::get_u16;
using binio::get_u32;
using binio::get_u64;
using binio::put_f64;
using binio::put_u16;
using binio::put_u32;
using binio::put_u64;

void GsetStore::save(std::ostream& os) const {
  put_u32(os, 0x47534554u);  // "GSET"
  put_u32(os, 1u);
  put_u64(os, static_cast<uint64_t>(cfg_.capacity));
  put_u64(os, static_cast<uint64_t>(cfg_.dim));
  put_f64(os, cfg_.score_decay);
  put_u64(os, cfg_.seed);
  put_u64(os, static_cast<uint64_t>(current_pass_));
  put_u64(os, static_cast<uint64_t>(evictions_));
  std::ostringstream rs;
  rng_.save_state(rs);
  const std::string rng_state = rs.str();
  put_u64(os, rng_state.size());
  os.write(rng_state.data(), static_cast<std::streamsize>(rng_state.size()));
  put_u64(os, entries_.size());
  for (const FeatureKey& key : keys()) {
    const GsetEntry& e = entries_.at(key);
    put_u32(os, static_cast<uint32_t>(key.field));
    put_u64(os, static_cast<uint64_t>(key.value));
    put_f64(os, e.score);
    put_u64(os, static_cast<uint64_t>(e.update_count));
    put_u64(os, static_cast<uint64_t>(e.last_update_pass));
    for (double v : e.vector) put_f64(os, v);
    for (double v : e.adagrad_accum) put_f64(os, v);
  }
}

GsetStore GsetStore::load(std::istream& is) {
  if (get_u32(is) != 0x47534554u) throw std::runtime_error("store load: bad magic");
  if (get_u32(is) != 1u) throw std::runtime_error("store load: unsupported version");
  StoreConfig cfg;
  cfg.capacity = static_cast<int64_t>(get_u64(is));
  cfg.dim = static_cast<int64_t>(get_u64(is));
  cfg.score_decay = get_f64(is);
  cfg.seed = get_u64(is);
  GsetStore store(cfg);
  store.current_pass_ = static_cast<int64_t>(get_u64(is));
  store.evictions_ = static_cast<int64_t>(get_u64(is));
  const uint64_t rng_len = get_u64(is);
  std::string rng_state(rng_len, '\0');
  is.read(rng_state.data(), static_cast<std::streamsize>(rng_len));
  std::istringstream rs(rng_state);
  store.rng_.load_state(rs);
  const uint64_t n = get_u64(is);
  for (uint64_t i = 0; i < n; ++i) {
    FeatureKey key;
    key.field = static_cast<int32_t>(get_u32(is));
    key.value = static_cast<int64_t>(get_u64(is));
    GsetEntry e;
    e.score = get_f64(is);
    e.update_count = static_cast<int64_t>(get_u64(is));
    e.last_update_pass = static_cast<int64_t>(get_u64(is));
    e.vector.resize(static_cast<size_t>(cfg.dim));
    for (double& v : e.vector) v = get_f64(is);
    e.adagrad_accum.resize(static_cast<size_t>(cfg.dim));
    for (double& v : e.adagrad_accum) v = get_f64(is);
    store.entries_.emplace(key, std::move(e));
  }
  if (!is) throw std::runtime_error("store load: truncated stream");
  return store;
}

void write_delta_file(const std::string& path, int64_t pass,
                      const std::vector<DeltaRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_delta_file: cannot open " + path);
  put_u64(os, static_cast<uint64_t>(pass));
  std::vector<int32_t> fields;
  for (const DeltaRecord& r : records) fields.push_back(r.key.field);
  std::sort(fields.begin(), fields.end());
  fields.erase(std::unique(fields.begin(), fields.end()), fields.end());
  put_u32(os, static_cast<uint32_t>(fields.size()));
  for (const DeltaRecord& r : records) {
    put_u32(os, static_cast<uint32_t>(r.key.field));
    put_u64(os, static_cast<uint64_t>(r.key.value));
    put_u16(os, static_cast<uint16_t>(r.vector.size()));
    for (double v : r.vector) put_f64(os, v);
  }
  if (!os) throw std::runtime_error("write_delta_file: write failed for " + path);
}

std::pair<int64_t, std::vector<DeltaRecord>> read_delta_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_delta_file: cannot open " + path);
  const int64_t pass = static_cast<int64_t>(get_u64(is));
  get_u32(is);  // field count; records carry field ids themselves
  std::vector<DeltaRecord> records;
  while (true) {
    const int next = is.peek();
    if (next == std::char_traits<char>::eof()) break;
    DeltaRecord r;
    r.key.field = static_cast<int32_t>(get_u32(is));
    r.key.value = static_cast<int64_t>(get_u64(is));
    const uint16_t dim = get_u16(is);
    r.vector.resize(dim);
    for (double& v : r.vector) v = get_f64(is);
    if (!is) throw std::runtime_error("read_delta_file: truncated record in " + path);
    records.push_back(std::move(r));
  }
  return {pass, std::move(records)};
}

}  // namespace pepnet
