#include "pepnet/evaluate.hpp"

namespace pepnet {

std::vector<EvalRecord> score_records(PepNetModel& model, std::span<const Example> data,
                                      int64_t batch_size) {
  std::vector<EvalRecord> records;
  records.reserve(data.size() * static_cast<size_t>(model.config().num_tasks));
  const int64_t pass = model.store().current_pass();
  for (size_t begin = 0; begin < data.size(); begin += static_cast<size_t>(batch_size)) {
    const size_t n = std::min<size_t>(static_cast<size_t>(batch_size), data.size() - begin);
    const std::span<const Example> batch = data.subspan(begin, n);
    Graph g;
    ForwardOut f = model.forward(g, batch, pass, ForwardMode::kEval);
    for (int32_t t = 0; t < model.config().num_tasks; ++t) {
      const Tensor& s = g.value(f.scores[static_cast<size_t>(t)]);
      for (size_t b = 0; b < n; ++b) {
        EvalRecord r;
        r.user_id = batch[b].user_id;
        r.domain = batch[b].domain;
        r.task = t;
        r.score = s[static_cast<int64_t>(b)];
        r.label = batch[b].labels[static_cast<size_t>(t)];
        records.push_back(r);
      }
    }
  }
  return records;
}

EvalReport evaluate(PepNetModel& model, std::span<const Example> data, int64_t batch_size) {
  const std::vector<EvalRecord> records = score_records(model, data, batch_size);
  return build_report(records, model.config().num_domains, model.config().num_tasks,
                      model.config().task_names);
}

}  // namespace pepnet
