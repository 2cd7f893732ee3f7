#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "orchard/network.hpp"
#include "orchard/patchset.hpp"

namespace orchard {

// Two-phase transfer-learning schedule: new fully connected layers first
// (conv stages frozen), then the whole network at a reduced conv rate with
// step decay every lr_decay_every epochs.
struct TrainingSchedule {
  int phase1_epochs = 5;
  int phase2_epochs = 30;
  double base_lr = 1e-3;
  double fine_tune_conv_lr = 1e-4;
  double momentum = 0.9;
  double lr_decay_factor = 0.2;
  int lr_decay_every = 5;
  int batch_size = 64;
  std::uint64_t seed = 0;
  // Optional early stop once phase-2 train accuracy reaches this value (0 = off).
  double stop_at_train_accuracy = 0.0;

  void validate() const;
};

// (conv_lr, fc_lr) for a 1-indexed epoch within the given phase.
std::pair<double, double> group_lrs(const TrainingSchedule& s, int phase, int epoch_in_phase);

struct EpochStats {
  int epoch = 0;  // global, 1-indexed across both phases
  int phase = 0;
  double lr = 0;  // fc group rate
  double train_loss = 0;
  double train_acc = 0;
  double val_loss = 0;
  double val_acc = 0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::unique_ptr<CountNetwork> best;  // highest validation accuracy
  int best_epoch = 0;
  double best_val_acc = 0;
};

// Trains in place; `net` ends in the final-epoch state, result.best holds the
// best-validation snapshot. Manifest paths are resolved against data_root.
// Throws TrainingDiverged (restoring the last epoch-end state into net) if the
// loss turns non-finite.
TrainResult train(CountNetwork& net, const DatasetManifest& manifest,
                  const std::string& data_root, const TrainingSchedule& schedule);

void save_history_csv(const std::string& path, const std::vector<EpochStats>& history);

// Inference over one manifest split, in row order.
std::vector<CountPrediction> predict_split(CountNetwork& net, const DatasetManifest& manifest,
                                           const std::string& data_root, const std::string& split,
                                           int batch_size = 64);

nlohmann::json schedule_json(const TrainingSchedule& s);
TrainingSchedule schedule_from_json(const nlohmann::json& j);

}  // namespace orchard
