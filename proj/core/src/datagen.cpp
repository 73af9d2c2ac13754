#include "pepnet/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

namespace pepnet {

using nlohmann::json;

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Pairwise-overlap pool construction: one shared block per domain pair plus a
// per-domain exclusive block. Triple intersections are left empty.
struct PoolLayout {
  std::vector<std::vector<int64_t>> pools;  // per domain, global ids
  std::vector<std::pair<int32_t, int32_t>> block_pair;  // (r, c) or (d, -1) for exclusive
  std::vector<int64_t> block_begin;
  std::vector<int64_t> block_size;
  int64_t total = 0;
};

PoolLayout build_overlapped_pools(const std::vector<int64_t>& sizes,
                                  const std::vector<std::vector<double>>& overlap,
                                  const std::string& what) {
  const int32_t d = static_cast<int32_t>(sizes.size());
  std::vector<std::vector<int64_t>> pair_n(d, std::vector<int64_t>(d, 0));
  for (int32_t r = 0; r < d; ++r) {
    for (int32_t c = r + 1; c < d; ++c) {
      const double est = (overlap[r][c] * static_cast<double>(sizes[c]) +
                          overlap[c][r] * static_cast<double>(sizes[r])) /
                         2.0;
      pair_n[r][c] = std::llround(est);
    }
  }
  PoolLayout out;
  out.pools.resize(sizes.size());
  int64_t next = 0;
  auto add_block = [&](int32_t r, int32_t c, int64_t n) {
    out.block_pair.emplace_back(r, c);
    out.block_begin.push_back(next);
    out.block_size.push_back(n);
    for (int64_t k = 0; k < n; ++k) {
      out.pools[static_cast<size_t>(r)].push_back(next + k);
      if (c >= 0) out.pools[static_cast<size_t>(c)].push_back(next + k);
    }
    next += n;
  };
  for (int32_t r = 0; r < d; ++r) {
    for (int32_t c = r + 1; c < d; ++c) {
      if (pair_n[r][c] > 0) add_block(r, c, pair_n[r][c]);
    }
  }
  for (int32_t r = 0; r < d; ++r) {
    int64_t shared = 0;
    for (int32_t c = 0; c < d; ++c) {
      if (c < r) shared += pair_n[c][r];
      if (c > r) shared += pair_n[r][c];
    }
    const int64_t exclusive = sizes[static_cast<size_t>(r)] - shared;
    if (exclusive < 0) {
      throw std::invalid_argument("infeasible " + what + " overlap configuration for domain " +
                                  std::to_string(r));
    }
    if (exclusive > 0) add_block(r, -1, exclusive);
  }
  out.total = next;
  return out;
}

int64_t bucketize(int64_t count, int32_t buckets) {
  int64_t b = 0;
  int64_t threshold = 1;
  while (count >= threshold && b < buckets - 1) {
    threshold *= 2;
    ++b;
  }
  return b;
}

}  // namespace

void GenConfig::validate() const {
  if (domains < 1 || tasks < 1) throw std::invalid_argument("domains and tasks must be >= 1");
  auto expect_d = [&](size_t n, const char* name) {
    if (n != static_cast<size_t>(domains)) {
      throw std::invalid_argument(std::string(name) + " must have one entry per domain");
    }
  };
  expect_d(users_per_domain.size(), "users_per_domain");
  expect_d(items_per_domain.size(), "items_per_domain");
  expect_d(authors_per_domain.size(), "authors_per_domain");
  expect_d(user_overlap.size(), "user_overlap");
  expect_d(item_overlap.size(), "item_overlap");
  expect_d(positive_rates.size(), "positive_rates");
  expect_d(domain_share.size(), "domain_share");
  for (const auto& row : positive_rates) {
    if (row.size() != static_cast<size_t>(tasks)) {
      throw std::invalid_argument("positive_rates rows must have one entry per task");
    }
    for (double r : row) {
      if (!(r > 0.0 && r < 1.0)) {
        throw std::invalid_argument("positive rates must lie strictly inside (0,1)");
      }
    }
  }
  for (const auto& m : {user_overlap, item_overlap}) {
    for (const auto& row : m) {
      if (row.size() != static_cast<size_t>(domains)) {
        throw std::invalid_argument("overlap matrices must be domains x domains");
      }
      for (double v : row) {
        if (v < 0.0 || v > 1.0) throw std::invalid_argument("overlap fractions must be in [0,1]");
      }
    }
  }
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
  if (user_groups < 1) throw std::invalid_argument("user_groups must be >= 1");
  if (passes < 1) throw std::invalid_argument("passes must be >= 1");
  if (num_examples < 0) throw std::invalid_argument("num_examples must be >= 0");
}

Generator::Generator(GenConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  build_pools();
  draw_latents();
  calibrate_biases();
}

void Generator::build_pools() {
  PoolLayout users = build_overlapped_pools(cfg_.users_per_domain, cfg_.user_overlap, "user");
  user_pools_ = std::move(users.pools);
  total_users_ = users.total;

  PoolLayout items = build_overlapped_pools(cfg_.items_per_domain, cfg_.item_overlap, "item");
  item_pools_ = items.pools;
  total_items_ = items.total;

  PoolLayout authors =
      build_overlapped_pools(cfg_.authors_per_domain, cfg_.item_overlap, "author");
  total_authors_ = authors.total;

  // items follow their block's author block so shared items keep one author
  item_author_.assign(static_cast<size_t>(total_items_), 0);
  for (size_t b = 0; b < items.block_pair.size(); ++b) {
    // locate the author block with the same (r, c) signature
    int64_t abegin = 0, asize = 0;
    for (size_t ab = 0; ab < authors.block_pair.size(); ++ab) {
      if (authors.block_pair[ab] == items.block_pair[b]) {
        abegin = authors.block_begin[ab];
        asize = authors.block_size[ab];
        break;
      }
    }
    for (int64_t k = 0; k < items.block_size[b]; ++k) {
      const int64_t item = items.block_begin[b] + k;
      item_author_[static_cast<size_t>(item)] = asize > 0 ? abegin + (k % asize) : 0;
    }
  }
}

void Generator::draw_latents() {
  const double sigma = std::pow(static_cast<double>(cfg_.latent_dim), -0.25);
  Rng rng = Rng(cfg_.seed).fork(0xA11CE);
  user_latent_.resize(static_cast<size_t>(total_users_ * cfg_.latent_dim));
  for (double& v : user_latent_) v = sigma * rng.normal();
  item_latent_.resize(static_cast<size_t>(total_items_ * cfg_.latent_dim));
  for (double& v : item_latent_) v = sigma * rng.normal();
  user_group_.resize(static_cast<size_t>(total_users_));
  for (int64_t u = 0; u < total_users_; ++u) {
    user_group_[static_cast<size_t>(u)] = static_cast<int32_t>(
        splitmix64(cfg_.seed ^ splitmix64(static_cast<uint64_t>(u) + 0x6e0b)) %
        static_cast<uint64_t>(cfg_.user_groups));
  }
  slope_.assign(cfg_.domains, std::vector<std::vector<double>>(
                                  cfg_.tasks, std::vector<double>(cfg_.user_groups, 1.0)));
  Rng srng = Rng(cfg_.seed).fork(0x510FE);
  for (int32_t d = 0; d < cfg_.domains; ++d) {
    for (int32_t t = 0; t < cfg_.tasks; ++t) {
      for (int32_t g = 0; g < cfg_.user_groups; ++g) {
        slope_[d][t][g] = 1.0 + cfg_.heterogeneity * srng.normal();
      }
    }
  }
}

double Generator::latent_dot(int64_t user_id, int64_t item_id) const {
  const double* u = &user_latent_[static_cast<size_t>(user_id * cfg_.latent_dim)];
  const double* i = &item_latent_[static_cast<size_t>(item_id * cfg_.latent_dim)];
  double s = 0.0;
  for (int32_t k = 0; k < cfg_.latent_dim; ++k) s += u[k] * i[k];
  return s;
}

int32_t Generator::user_group(int64_t user_id) const {
  return user_group_[static_cast<size_t>(user_id)];
}

double Generator::positive_probability(int32_t domain, int32_t task, int64_t user_id,
                                       int64_t item_id) const {
  const double x = latent_dot(user_id, item_id);
  const int32_t g = user_group(user_id);
  return sigmoid(x * slope_[domain][task][g] + bias_[domain][task]);
}

void Generator::calibrate_biases() {
  bias_.assign(cfg_.domains, std::vector<double>(cfg_.tasks, 0.0));
  Rng rng = Rng(cfg_.seed).fork(0xCA11B);
  const int64_t m = std::max<int64_t>(1000, cfg_.calibration_samples);
  for (int32_t d = 0; d < cfg_.domains; ++d) {
    const auto& upool = user_pools_[static_cast<size_t>(d)];
    const auto& ipool = item_pools_[static_cast<size_t>(d)];
    std::vector<double> dots(static_cast<size_t>(m));
    std::vector<int32_t> groups(static_cast<size_t>(m));
    for (int64_t s = 0; s < m; ++s) {
      const int64_t u = upool[rng.uniform_index(upool.size())];
      const int64_t i = ipool[rng.uniform_index(ipool.size())];
      dots[static_cast<size_t>(s)] = latent_dot(u, i);
      groups[static_cast<size_t>(s)] = user_group(u);
    }
    for (int32_t t = 0; t < cfg_.tasks; ++t) {
      std::vector<double> scores(static_cast<size_t>(m));
      for (int64_t s = 0; s < m; ++s) {
        scores[static_cast<size_t>(s)] =
            dots[static_cast<size_t>(s)] * slope_[d][t][groups[static_cast<size_t>(s)]];
      }
      const double target = cfg_.positive_rates[d][t];
      double lo = -60.0, hi = 60.0;
      for (int iter = 0; iter < 80; ++iter) {
        const double mid = 0.5 * (lo + hi);
        double mean = 0.0;
        for (double s : scores) mean += sigmoid(s + mid);
        mean /= static_cast<double>(m);
        if (mean < target) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      bias_[d][t] = 0.5 * (lo + hi);
    }
  }
}

std::vector<Example> Generator::generate() {
  const int32_t d_count = cfg_.domains;
  std::vector<double> cum_share(static_cast<size_t>(d_count), 0.0);
  double acc = 0.0, total_share = 0.0;
  for (double s : cfg_.domain_share) total_share += s;
  for (int32_t d = 0; d < d_count; ++d) {
    acc += cfg_.domain_share[static_cast<size_t>(d)] / total_share;
    cum_share[static_cast<size_t>(d)] = acc;
  }

  stats_ = GenStats{};
  stats_.configured_rates = cfg_.positive_rates;
  stats_.configured_user_overlap = cfg_.user_overlap;
  stats_.examples_per_domain.assign(static_cast<size_t>(d_count), 0);
  std::vector<std::vector<int64_t>> positives(
      static_cast<size_t>(d_count), std::vector<int64_t>(static_cast<size_t>(cfg_.tasks), 0));
  std::vector<std::vector<uint8_t>> user_seen(
      static_cast<size_t>(d_count), std::vector<uint8_t>(static_cast<size_t>(total_users_), 0));
  std::vector<std::vector<uint8_t>> item_seen(
      static_cast<size_t>(d_count), std::vector<uint8_t>(static_cast<size_t>(total_items_), 0));

  std::unordered_map<int64_t, int64_t> user_domain_count;
  std::unordered_map<int64_t, int64_t> item_domain_count;
  user_domain_count.reserve(static_cast<size_t>(total_users_) * 2);
  item_domain_count.reserve(static_cast<size_t>(total_items_) * 2);

  Rng rng = Rng(cfg_.seed).fork(0x9E4);
  std::vector<Example> out;
  out.reserve(static_cast<size_t>(cfg_.num_examples));
  for (int64_t e = 0; e < cfg_.num_examples; ++e) {
    Example ex;
    ex.timestamp = e * cfg_.passes / cfg_.num_examples;
    const double dr = rng.uniform();
    int32_t d = 0;
    while (d + 1 < d_count && dr >= cum_share[static_cast<size_t>(d)]) ++d;
    ex.domain = d;
    const auto& upool = user_pools_[static_cast<size_t>(d)];
    const auto& ipool = item_pools_[static_cast<size_t>(d)];
    ex.user_id = upool[rng.uniform_index(upool.size())];
    ex.item_id = ipool[rng.uniform_index(ipool.size())];
    ex.author_id = item_author_[static_cast<size_t>(ex.item_id)];
    ex.context_ids.resize(static_cast<size_t>(cfg_.context_fields));
    for (int32_t c = 0; c < cfg_.context_fields; ++c) {
      ex.context_ids[static_cast<size_t>(c)] =
          static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(cfg_.context_vocab)));
    }
    int64_t& ucount = user_domain_count[ex.user_id * d_count + d];
    int64_t& icount = item_domain_count[ex.item_id * d_count + d];
    ex.domain_stat_ids = {bucketize(ucount, cfg_.stat_buckets),
                          bucketize(icount, cfg_.stat_buckets)};
    ++ucount;
    ++icount;

    const double x = latent_dot(ex.user_id, ex.item_id);
    const int32_t g = user_group(ex.user_id);
    ex.labels.resize(static_cast<size_t>(cfg_.tasks));
    for (int32_t t = 0; t < cfg_.tasks; ++t) {
      const double p = sigmoid(x * slope_[d][t][g] + bias_[d][t]);
      ex.labels[static_cast<size_t>(t)] = rng.bernoulli(p) ? 1 : 0;
      if (ex.labels[static_cast<size_t>(t)]) ++positives[static_cast<size_t>(d)][static_cast<size_t>(t)];
    }

    ++stats_.examples_per_domain[static_cast<size_t>(d)];
    user_seen[static_cast<size_t>(d)][static_cast<size_t>(ex.user_id)] = 1;
    item_seen[static_cast<size_t>(d)][static_cast<size_t>(ex.item_id)] = 1;
    out.push_back(std::move(ex));
  }

  stats_.total_examples = cfg_.num_examples;
  stats_.empirical_rates.assign(static_cast<size_t>(d_count),
                                std::vector<double>(static_cast<size_t>(cfg_.tasks), 0.0));
  for (int32_t d = 0; d < d_count; ++d) {
    const int64_t n = stats_.examples_per_domain[static_cast<size_t>(d)];
    for (int32_t t = 0; t < cfg_.tasks; ++t) {
      stats_.empirical_rates[d][t] =
          n > 0 ? static_cast<double>(positives[d][t]) / static_cast<double>(n) : 0.0;
    }
  }
  auto measure_overlap = [&](const std::vector<std::vector<uint8_t>>& seen) {
    std::vector<std::vector<double>> m(static_cast<size_t>(d_count),
                                       std::vector<double>(static_cast<size_t>(d_count), 0.0));
    std::vector<int64_t> counts(static_cast<size_t>(d_count), 0);
    for (int32_t d = 0; d < d_count; ++d) {
      for (uint8_t v : seen[static_cast<size_t>(d)]) counts[static_cast<size_t>(d)] += v;
    }
    for (int32_t r = 0; r < d_count; ++r) {
      for (int32_t c = 0; c < d_count; ++c) {
        if (r == c || counts[static_cast<size_t>(c)] == 0) continue;
        int64_t inter = 0;
        const auto& sr = seen[static_cast<size_t>(r)];
        const auto& sc = seen[static_cast<size_t>(c)];
        for (size_t k = 0; k < sr.size(); ++k) inter += sr[k] & sc[k];
        m[static_cast<size_t>(r)][static_cast<size_t>(c)] =
            static_cast<double>(inter) / static_cast<double>(counts[static_cast<size_t>(c)]);
      }
    }
    return m;
  };
  stats_.measured_user_overlap = measure_overlap(user_seen);
  stats_.measured_item_overlap = measure_overlap(item_seen);
  return out;
}

// ---- config / stats json ----------------------------------------------------

std::string GenConfig::to_json() const {
  json j;
  j["domains"] = domains;
  j["tasks"] = tasks;
  j["task_names"] = task_names;
  j["users_per_domain"] = users_per_domain;
  j["items_per_domain"] = items_per_domain;
  j["authors_per_domain"] = authors_per_domain;
  j["user_overlap"] = user_overlap;
  j["item_overlap"] = item_overlap;
  j["positive_rates"] = positive_rates;
  j["domain_share"] = domain_share;
  j["latent_dim"] = latent_dim;
  j["heterogeneity"] = heterogeneity;
  j["user_groups"] = user_groups;
  j["context_fields"] = context_fields;
  j["context_vocab"] = context_vocab;
  j["stat_buckets"] = stat_buckets;
  j["num_examples"] = num_examples;
  j["passes"] = passes;
  j["calibration_samples"] = calibration_samples;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

GenConfig GenConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  GenConfig c;
  c.domains = j.value("domains", c.domains);
  c.tasks = j.value("tasks", c.tasks);
  c.task_names = j.value("task_names", c.task_names);
  c.users_per_domain = j.value("users_per_domain", c.users_per_domain);
  c.items_per_domain = j.value("items_per_domain", c.items_per_domain);
  c.authors_per_domain = j.value("authors_per_domain", c.authors_per_domain);
  c.user_overlap = j.value("user_overlap", c.user_overlap);
  c.item_overlap = j.value("item_overlap", c.item_overlap);
  c.positive_rates = j.value("positive_rates", c.positive_rates);
  c.domain_share = j.value("domain_share", c.domain_share);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.heterogeneity = j.value("heterogeneity", c.heterogeneity);
  c.user_groups = j.value("user_groups", c.user_groups);
  c.context_fields = j.value("context_fields", c.context_fields);
  c.context_vocab = j.value("context_vocab", c.context_vocab);
  c.stat_buckets = j.value("stat_buckets", c.stat_buckets);
  c.num_examples = j.value("num_examples", c.num_examples);
  c.passes = j.value("passes", c.passes);
  c.calibration_samples = j.value("calibration_samples", c.calibration_samples);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

GenConfig GenConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open generator config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return from_json(ss.str());
  } catch (const json::exception& e) {
    throw std::runtime_error("parse error in " + path + ": " + e.what());
  }
}

void GenConfig::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write generator config: " + path);
  os << to_json();
}

std::string GenStats::to_json() const {
  json j;
  j["configured_rates"] = configured_rates;
  j["empirical_rates"] = empirical_rates;
  j["configured_user_overlap"] = configured_user_overlap;
  j["measured_user_overlap"] = measured_user_overlap;
  j["measured_item_overlap"] = measured_item_overlap;
  j["examples_per_domain"] = examples_per_domain;
  j["total_examples"] = total_examples;
  return j.dump(2) + "\n";
}

// ---- log io -----------------------------------------------------------------

void write_log(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_log: cannot open " + path);
  std::string line;
  for (const Example& ex : examples) {
    line.clear();
    line += std::to_string(ex.domain);
    for (uint8_t l : ex.labels) {
      line += '\t';
      line += l ? '1' : '0';
    }
    line += "\tt:" + std::to_string(ex.timestamp);
    line += "\tu:" + std::to_string(ex.user_id);
    line += "\ti:" + std::to_string(ex.item_id);
    line += "\ta:" + std::to_string(ex.author_id);
    for (int64_t c : ex.context_ids) line += "\tc:" + std::to_string(c);
    for (int64_t s : ex.domain_stat_ids) line += "\ts:" + std::to_string(s);
    line += '\n';
    os << line;
  }
  if (!os) throw std::runtime_error("write_log: write failed for " + path);
}

std::vector<Example> read_log(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_log: cannot open " + path);
  std::vector<Example> out;
  std::string line;
  int64_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error("read_log: " + what + " at " + path + ":" +
                             std::to_string(line_no));
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    Example ex;
    size_t pos = 0;
    bool first = true;
    bool in_labels = true;
    while (pos <= line.size()) {
      const size_t tab = line.find('\t', pos);
      const std::string tok = line.substr(pos, tab == std::string::npos ? tab : tab - pos);
      pos = tab == std::string::npos ? line.size() + 1 : tab + 1;
      if (tok.empty()) fail("empty field");
      const size_t colon = tok.find(':');
      try {
        if (first) {
          ex.domain = static_cast<int32_t>(std::stol(tok));
          first = false;
        } else if (colon == std::string::npos) {
          if (!in_labels) fail("label token after feature tokens");
          if (tok != "0" && tok != "1") fail("label must be 0 or 1");
          ex.labels.push_back(tok == "1" ? 1 : 0);
        } else {
          in_labels = false;
          const std::string field = tok.substr(0, colon);
          const int64_t value = std::stoll(tok.substr(colon + 1));
          if (field == "t") {
            ex.timestamp = value;
          } else if (field == "u") {
            ex.user_id = value;
          } else if (field == "i") {
            ex.item_id = value;
          } else if (field == "a") {
            ex.author_id = value;
          } else if (field == "c") {
            ex.context_ids.push_back(value);
          } else if (field == "s") {
            ex.domain_stat_ids.push_back(value);
          } else {
            fail("unknown field '" + field + "'");
          }
        }
      } catch (const std::invalid_argument&) {
        fail("malformed token '" + tok + "'");
      } catch (const std::out_of_range&) {
        fail("out-of-range token '" + tok + "'");
      }
    }
    if (first) fail("missing domain column");
    out.push_back(std::move(ex));
  }
  return out;
}

TimeSplit split_by_time(const std::vector<Example>& examples, int32_t train_passes,
                        int32_t valid_passes, int32_t test_passes) {
  if (train_passes < 0 || valid_passes < 0 || test_passes < 0) {
    throw std::invalid_argument("split_by_time: pass counts must be nonnegative");
  }
  const int64_t a = train_passes;
  const int64_t b = a + valid_passes;
  const int64_t c = b + test_passes;
  TimeSplit out;
  for (const Example& ex : examples) {
    if (ex.timestamp < 0 || ex.timestamp >= c) {
      throw std::invalid_argument("split_by_time: timestamp " + std::to_string(ex.timestamp) +
                                  " outside covered range [0," + std::to_string(c) + ")");
    }
    if (ex.timestamp < a) {
      out.train.push_back(ex);
    } else if (ex.timestamp < b) {
      out.valid.push_back(ex);
    } else {
      out.test.push_back(ex);
    }
  }
  return out;
}

}  // namespace pepnet
