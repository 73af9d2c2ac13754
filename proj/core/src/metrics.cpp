#include "pepnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace pepnet {

std::optional<double> auc(std::span<const EvalRecord> records) {
  const size_t n = records.size();
  int64_t pos = 0;
  for (const EvalRecord& r : records) pos += r.label ? 1 : 0;
  const int64_t neg = static_cast<int64_t>(n) - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::vector<uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  std::sort(idx.begin(), idx.end(),
            [&](uint32_t a, uint32_t b) { return records[a].score < records[b].score; });

  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && records[idx[j]].score == records[idx[i]].score) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (size_t k = i; k < j; ++k) {
      if (records[idx[k]].label) rank_sum_pos += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double u_stat = rank_sum_pos - p * (p + 1.0) / 2.0;
  return u_stat / (p * static_cast<double>(neg));
}

namespace {

// records must arrive sorted so equal keys are contiguous
template <typename KeyEq>
GaucResult grouped_gauc(std::span<const EvalRecord> sorted, KeyEq same_group) {
  GaucResult out;
  double weighted = 0.0;
  size_t i = 0;
  while (i < sorted.size()) {
    size_t j = i;
    while (j < sorted.size() && same_group(sorted[i], sorted[j])) ++j;
    const auto user_auc = auc(sorted.subspan(i, j - i));
    if (user_auc.has_value()) {
      const double w = static_cast<double>(j - i);
      weighted += w * *user_auc;
      out.weight_sum += w;
      ++out.qualified_users;
    } else {
      ++out.skipped_users;
    }
    i = j;
  }
  if (out.weight_sum > 0.0) out.value = weighted / out.weight_sum;
  return out;
}

}  // namespace

GaucResult gauc(std::span<const EvalRecord> records) {
  std::vector<EvalRecord> sorted(records.begin(), records.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const EvalRecord& a, const EvalRecord& b) { return a.user_id < b.user_id; });
  return grouped_gauc(sorted, [](const EvalRecord& a, const EvalRecord& b) {
    return a.user_id == b.user_id;
  });
}

EvalReport build_report(std::span<const EvalRecord> records, int32_t domains, int32_t tasks,
                        const std::vector<std::string>& task_names) {
  EvalReport rep;
  rep.domains = domains;
  rep.tasks = tasks;
  rep.task_names = task_names;
  rep.cells.assign(static_cast<size_t>(domains),
                   std::vector<CellMetrics>(static_cast<size_t>(tasks)));

  std::vector<std::vector<std::vector<EvalRecord>>> per_cell(
      static_cast<size_t>(domains), std::vector<std::vector<EvalRecord>>(static_cast<size_t>(tasks)));
  for (const EvalRecord& r : records) {
    if (r.domain < 0 || r.domain >= domains || r.task < 0 || r.task >= tasks) continue;
    per_cell[static_cast<size_t>(r.domain)][static_cast<size_t>(r.task)].push_back(r);
  }
  for (int32_t d = 0; d < domains; ++d) {
    for (int32_t t = 0; t < tasks; ++t) {
      auto& cell = per_cell[static_cast<size_t>(d)][static_cast<size_t>(t)];
      CellMetrics m;
      m.records = static_cast<int64_t>(cell.size());
      double ll = 0.0;
      for (const EvalRecord& r : cell) {
        m.positives += r.label ? 1 : 0;
        const double p = std::min(std::max(r.score, 1e-12), 1.0 - 1e-12);
        ll += r.label ? -std::log(p) : -std::log1p(-p);
      }
      m.logloss = cell.empty() ? 0.0 : ll / static_cast<double>(cell.size());
      m.auc = auc(cell);
      m.gauc = gauc(cell);
      rep.cells[static_cast<size_t>(d)][static_cast<size_t>(t)] = std::move(m);
    }
  }

  std::vector<EvalRecord> sorted(records.begin(), records.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const EvalRecord& a, const EvalRecord& b) {
    if (a.domain != b.domain) return a.domain < b.domain;
    if (a.task != b.task) return a.task < b.task;
    return a.user_id < b.user_id;
  });
  rep.overall_gauc = grouped_gauc(sorted, [](const EvalRecord& a, const EvalRecord& b) {
    return a.domain == b.domain && a.task == b.task && a.user_id == b.user_id;
  });
  return rep;
}

namespace {

std::string fmt_metric(const std::optional<double>& v, const char* fmt) {
  if (!v.has_value()) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, *v);
  return buf;
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "domain,task,task_name,records,positives,auc,gauc,gauc_users,gauc_skipped\n";
  for (int32_t d = 0; d < domains; ++d) {
    for (int32_t t = 0; t < tasks; ++t) {
      const CellMetrics& m = cells[static_cast<size_t>(d)][static_cast<size_t>(t)];
      const std::string name =
          t < static_cast<int32_t>(task_names.size()) ? task_names[static_cast<size_t>(t)] : "";
      os << d << ',' << t << ',' << name << ',' << m.records << ',' << m.positives << ','
         << fmt_metric(m.auc, "%.17g") << ',' << fmt_metric(m.gauc.value, "%.17g") << ','
         << m.gauc.qualified_users << ',' << m.gauc.skipped_users << '\n';
    }
  }
  os << "overall,,,,," << "" << ',' << fmt_metric(overall_gauc.value, "%.17g") << ','
     << overall_gauc.qualified_users << ',' << overall_gauc.skipped_users << '\n';
  return os.str();
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  char buf[64];
  for (int32_t d = 0; d < domains; ++d) {
    os << "Domain " << d << '\n';
    std::snprintf(buf, sizeof(buf), "%-8s", "");
    os << buf;
    for (int32_t t = 0; t < tasks; ++t) {
      const std::string name = t < static_cast<int32_t>(task_names.size())
                                   ? task_names[static_cast<size_t>(t)]
                                   : ("task" + std::to_string(t));
      std::snprintf(buf, sizeof(buf), "%10s", name.c_str());
      os << buf;
    }
    os << '\n';
    std::snprintf(buf, sizeof(buf), "%-8s", "AUC");
    os << buf;
    for (int32_t t = 0; t < tasks; ++t) {
      const CellMetrics& m = cells[static_cast<size_t>(d)][static_cast<size_t>(t)];
      std::snprintf(buf, sizeof(buf), "%10s", fmt_metric(m.auc, "%.4f").c_str());
      os << buf;
    }
    os << '\n';
    std::snprintf(buf, sizeof(buf), "%-8s", "GAUC");
    os << buf;
    for (int32_t t = 0; t < tasks; ++t) {
      const CellMetrics& m = cells[static_cast<size_t>(d)][static_cast<size_t>(t)];
      std::snprintf(buf, sizeof(buf), "%10s", fmt_metric(m.gauc.value, "%.4f").c_str());
      os << buf;
    }
    os << "\n\n";
  }
  os << "Pooled GAUC: " << fmt_metric(overall_gauc.value, "%.6f") << " over "
     << overall_gauc.qualified_users << " user groups (" << overall_gauc.skipped_users
     << " skipped)\n";
  return os.str();
}

}  // namespace pepnet
