// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rba/manifest.hpp"
#include "rba/model.hpp"
#include "rba/preprocess.hpp"

namespace rba {

/// Everything the optimizer and schedule need. eta_max left unset means
/// "find it": a learning-rate sweep runs before training and a tenth of the
/// minimum-loss rate is used.
struct TrainConfig {
  std::optional<double> eta_max;
  double momentum_min = 0.85;
  double momentum_max = 0.95;
  double beta2 = 0.99;
  double epsilon = 1e-5;
  double weight_decay = 0.01;
  std::int64_t epochs = 50;
  std::int64_t batch_size = 8;
  std::uint64_t seed = 0;
  // schedule shape
  double pct_start = 0.25;
  double div_factor = 25.0;
  double final_div = 1e4;
  // learning-rate finder sweep
  double lr_find_start = 1e-7;
  double lr_find_end = 10.0;
  std::int64_t lr_find_steps = 100;
  // augmentation
  bool augment = true;
  AugmentConfig augment_cfg{};

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& json_text);

/// AdamW first/second moments, one pair per parameter, plus the shared step
/// counter.
struct OptimizerState {
  std::map<std::string, Tensor> m, v;
  std::int64_t t = 0;
};

/// One decoupled-weight-decay Adam update over named parameters, reading
/// each parameter's accumulated gradient (a missing gradient counts as
/// zero). Moments are created lazily. theta <- theta - lr*mhat/(sqrt(vhat)+eps)
/// - lr*wd*theta; the decay acts on the parameter directly, not through the
/// gradient. Fails on a non-finite gradient, naming the parameter.
void adamw_step(std::map<std::string, Tensor>& params, OptimizerState& opt,
                double lr, double beta1, double beta2, double epsilon,
                double weight_decay);

struct SchedulePoint {
  double lr = 0;
  double momentum = 0;
};

/// The 1-cycle policy: cosine rise from eta_max/div_factor to eta_max over
/// round(pct_start*total_steps) steps, cosine fall to
/// eta_max/(div_factor*final_div) over the rest; momentum travels the
/// opposite way between momentum_max and momentum_min. The learning rate is
/// continuous and attains eta_max exactly once (requires eta_max resolved).
SchedulePoint one_cycle(std::int64_t step, std::int64_t total_steps,
                        const TrainConfig& cfg);

/// In-memory dataset: one preprocessed (1,1,D,H,W) tensor per subject.
struct DataSet {
  std::vector<Tensor> volumes;
  std::vector<double> ages;
  std::vector<std::string> ids;
  std::vector<std::string> sexes;

  static DataSet load(const Manifest& manifest);
  DataSet subset(const std::vector<std::int64_t>& indices) const;
  std::int64_t size() const { return std::int64_t(volumes.size()); }
  std::array<std::int64_t, 3> grid() const;
};

struct LrFindResult {
  double eta_max = 0;
  std::vector<double> lrs;
  std::vector<double> raw_losses;
  std::vector<double> smoothed_losses;
  std::int64_t steps_run = 0;
};

/// Mock-training sweep: the learning rate grows geometrically from lr_start
/// to lr_end over num_steps batches while the loss is tracked through a
/// bias-corrected EMA (factor 0.98); the sweep stops early once the smoothed
/// loss exceeds 4x its minimum, and eta_max is the minimum-loss rate divided
/// by 10. Model state is snapshotted and restored bit-exactly: the sweep
/// leaves no trace.
LrFindResult lr_find(const ModelSpec& spec, ModelState& state,
                     const DataSet& data, const TrainConfig& cfg,
                     double lr_start, double lr_end, std::int64_t num_steps);

struct EpochLog {
  double mean_loss = 0;
  std::vector<std::pair<double, std::int64_t>> batches;  // (loss, size)
};

struct TrainLog {
  double eta_max = 0;  // resolved value actually used
  bool lr_find_ran = false;
  LrFindResult lr_find;
  std::vector<EpochLog> epochs;
  std::int64_t dropped_singleton_batches = 0;
};

/// Serialized training artifact; save/load round trips are bit-exact.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ModelSpec spec;
  ModelState state;
  OptimizerState opt;
  TrainConfig config;  // eta_max holds the resolved value after training
  TrainLog log;
  std::array<std::uint64_t, 4> rng_state{};
  std::string run_config_json;  // CLI provenance echo, may be empty

  static constexpr std::uint32_t kCheckpointVersion = 1;
};

/// The training loop: per epoch, shuffle; per batch, augment each sample,
/// forward in train mode, MSE against chronological age, backward, AdamW
/// with the 1-cycle (lr, momentum) for that step. Trailing batches of size 1
/// are dropped (batch statistics need two samples). All randomness flows
/// from cfg.seed, so equal seeds give byte-identical checkpoints. A
/// non-finite loss aborts, naming the batch's subject ids.
Checkpoint train(const ModelSpec& spec, ModelState initial_state,
                 const DataSet& data, const TrainConfig& cfg);

/// Transfer learning: same routine, new data. Optimizer state is reset and
/// (unless cfg pins eta_max) the learning-rate sweep reruns on the new data;
/// weights continue from the checkpoint.
Checkpoint fine_tune(const Checkpoint& checkpoint, const DataSet& data,
                     const TrainConfig& cfg);

/// Deterministic eval-mode predictions, in years.
std::vector<double> predict(const ModelSpec& spec, ModelState& state,
                            const DataSet& data, std::int64_t batch_size = 8);

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace rba
