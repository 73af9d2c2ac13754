#pragma once

#include <memory>
#include <string>

#include "pepnet/model.hpp"
#include "pepnet/trainer.hpp"

namespace pepnet {

// Versioned binary container: model config, every named dense parameter,
// the full embedding store (vectors, scores, AdaGrad accumulators, RNG), and
// optionally the trainer's Adam state. f64 payloads round-trip bit-exact, so
// training resumed from a checkpoint continues on the identical trajectory.
void save_checkpoint(const std::string& path, PepNetModel& model,
                     const Trainer* trainer = nullptr);

struct LoadedCheckpoint {
  std::unique_ptr<PepNetModel> model;
  bool has_trainer_state = false;
  std::vector<AdamState> adam;
  int64_t epochs_done = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Restores the trainer's optimizer state from a loaded checkpoint.
void restore_trainer(Trainer& trainer, const LoadedCheckpoint& ckpt);

}  // namespace pepnet
