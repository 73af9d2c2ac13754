#include "pepnet/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pepnet/binio.hpp"

namespace pepnet {

namespace {

constexpr uint32_t kMagic = 0x43504550u;  // "PEPC"
constexpr uint32_t kVersion = 1u;

void put_tensor(std::ostream& os, const Tensor& t) {
  binio::put_u32(os, static_cast<uint32_t>(t.rank()));
  for (int64_t d : t.shape()) binio::put_u64(os, static_cast<uint64_t>(d));
  binio::put_u64(os, static_cast<uint64_t>(t.size()));
  for (int64_t i = 0; i < t.size(); ++i) binio::put_f64(os, t[i]);
}

Tensor get_tensor(std::istream& is) {
  const uint32_t rank = binio::get_u32(is);
  std::vector<int64_t> shape(rank);
  for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int64_t>(binio::get_u64(is));
  const uint64_t size = binio::get_u64(is);
  if (rank == 0 && size == 0) return Tensor{};  // default (e.g. untouched Adam moments)
  Tensor t(shape);
  if (static_cast<uint64_t>(t.size()) != size) {
    throw std::runtime_error("checkpoint: tensor size does not match its shape");
  }
  for (int64_t i = 0; i < t.size(); ++i) t[i] = binio::get_f64(is);
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, PepNetModel& model, const Trainer* trainer) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  binio::put_u32(os, kMagic);
  binio::put_u32(os, kVersion);
  binio::put_string(os, model.config().to_json());

  const std::vector<Parameter*> params = model.parameters();
  binio::put_u64(os, params.size());
  for (Parameter* p : params) {
    binio::put_string(os, p->name);
    put_tensor(os, p->value);
  }

  std::ostringstream store_blob;
  model.store().save(store_blob);
  binio::put_string(os, store_blob.str());

  if (trainer != nullptr) {
    os.put(1);
    binio::put_u64(os, static_cast<uint64_t>(trainer->epochs_done()));
    const auto& states = const_cast<Trainer*>(trainer)->adam_states();
    binio::put_u64(os, states.size());
    for (const AdamState& s : states) {
      binio::put_u64(os, static_cast<uint64_t>(s.step));
      binio::put_f64(os, s.beta1);
      binio::put_f64(os, s.beta2);
      binio::put_f64(os, s.eps);
      put_tensor(os, s.m);
      put_tensor(os, s.v);
    }
  } else {
    os.put(0);
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  if (binio::get_u32(is) != kMagic) {
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
  }
  if (binio::get_u32(is) != kVersion) {
    throw std::runtime_error("load_checkpoint: unsupported version in " + path);
  }
  const ModelConfig cfg = ModelConfig::from_json(binio::get_string(is));

  LoadedCheckpoint out;
  out.model = std::make_unique<PepNetModel>(cfg, /*seed=*/0);

  const uint64_t n = binio::get_u64(is);
  const std::vector<Parameter*> params = out.model->parameters();
  if (n != params.size()) {
    throw std::runtime_error("load_checkpoint: parameter count mismatch in " + path);
  }
  for (uint64_t i = 0; i < n; ++i) {
    const std::string name = binio::get_string(is);
    Tensor value = get_tensor(is);
    if (params[i]->name != name || !params[i]->value.same_shape(value)) {
      throw std::runtime_error("load_checkpoint: parameter layout mismatch at '" + name + "'");
    }
    params[i]->value = std::move(value);
  }

  std::istringstream store_blob(binio::get_string(is));
  out.model->set_store(GsetStore::load(store_blob));

  const int has_trainer = is.get();
  if (has_trainer == 1) {
    out.has_trainer_state = true;
    out.epochs_done = static_cast<int64_t>(binio::get_u64(is));
    const uint64_t k = binio::get_u64(is);
    out.adam.resize(k);
    for (uint64_t i = 0; i < k; ++i) {
      AdamState& s = out.adam[i];
      s.step = static_cast<int64_t>(binio::get_u64(is));
      s.beta1 = binio::get_f64(is);
      s.beta2 = binio::get_f64(is);
      s.eps = binio::get_f64(is);
      s.m = get_tensor(is);
      s.v = get_tensor(is);
    }
  }
  if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return out;
}

void restore_trainer(Trainer& trainer, const LoadedCheckpoint& ckpt) {
  if (!ckpt.has_trainer_state) return;
  if (ckpt.adam.size() != trainer.adam_states().size()) {
    throw std::runtime_error("restore_trainer: optimizer state count mismatch");
  }
  trainer.adam_states() = ckpt.adam;
  trainer.set_epochs_done(ckpt.epochs_done);
}

}  // namespace pepnet
