#pragma once

#include <span>

#include "pepnet/metrics.hpp"
#include "pepnet/model.hpp"

namespace pepnet {

// Scores every example in eval mode (store untouched; unseen keys read as
// zeros) and assembles the D x T AUC/GAUC report.
EvalReport evaluate(PepNetModel& model, std::span<const Example> data, int64_t batch_size = 4096);

// Raw scored records, one per (example, task).
std::vector<EvalRecord> score_records(PepNetModel& model, std::span<const Example> data,
                                      int64_t batch_size = 4096);

}  // namespace pepnet
