#pragma once

// Supervised SGD pre-training on the source domain.

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

#include "metatune/metatune.hpp"

namespace metatune {

struct PretrainConfig {
  std::size_t epochs = 20;
  double lr = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0)) throw ValueError("PretrainConfig", "lr must be > 0");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean pre-step loss over the epoch; epoch 0: mean loss of the initial params
  double source_val_dsc = 0.0;
};

struct PretrainResult {
  ParamVector params;
  std::vector<EpochRecord> records;  // epoch 0 (initial params) then one per epoch
};

/// Initial parameters for a pre-training run seeded with `seed`.
inline ParamVector pretrain_init(const NetworkConfig& net, std::uint64_t seed) {
  return init_params(net, derive_seed(seed, "init"));
}

inline PretrainResult pretrain(const NetworkConfig& net, std::span<const PatientVolume> train,
                               std::span<const PatientVolume> val, const PretrainConfig& cfg,
                               const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw ValueError("pretrain", "empty training set");
  if (val.empty()) throw ValueError("pretrain", "empty validation set");
  PretrainResult r;
  r.params = pretrain_init(net, cfg.seed);
  std::vector<const Sample*> pool;
  for (const PatientVolume& p : train) {
    for (const Sample& s : p.slices) pool.push_back(&s);
  }
  double initial = 0.0;
  for (const Sample* s : pool) initial += loss_value(r.params, *s);
  r.records.push_back({0, initial / static_cast<double>(pool.size()), evaluate(r.params, val).mean_fg});
  if (on_epoch) on_epoch(r.records.back());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, "pretrain:" + std::to_string(epoch)));
    rng.shuffle(pool);
    double total = 0.0;
    for (const Sample* s : pool) {
      try {
        total += sgd_step(r.params, *s, cfg.lr);
      } catch (const Error& e) {
        throw Error("pretrain epoch " + std::to_string(epoch), e.what());
      }
    }
    r.records.push_back({epoch, total / static_cast<double>(pool.size()), evaluate(r.params, val).mean_fg});
    if (on_epoch) on_epoch(r.records.back());
  }
  return r;
}

inline void write_pretrain_csv(std::ostream& os, const std::vector<EpochRecord>& records) {
  os << "epoch,train_loss,source_val_dsc\n";
  for (const EpochRecord& e : records) {
    os << e.epoch << ',' << fixed6(e.train_loss) << ',' << fixed6(e.source_val_dsc) << '\n';
  }
}

}  // namespace metatune
