#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bnn/dataset.hpp"
#include "bnn/metrics.hpp"
#include "bnn/network.hpp"

namespace bnn {

struct TrainConfig {
  std::size_t stage1_epochs = 5;
  std::size_t stage2_epochs = 7;
  std::size_t batch_size = 8;
  double learning_rate = 2e-3;
  double stage2_learning_rate = 1e-3;
  double min_learning_rate_ratio = 0.05;  // cosine schedule floor, relative to the stage's rate
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 1;       // shuffling and augmentation
  std::uint64_t data_seed = 7;  // synthetic data when no directories are given
  std::size_t train_size = 400;
  std::size_t val_size = 100;
  std::string train_dir;
  std::string val_dir;
  bool flip = true;
  bool crop = true;
  std::size_t crop_pad = 4;

  void validate() const;  // throws ConfigError
  bool operator==(const TrainConfig&) const = default;
};

struct EvalReport {
  ConfusionMatrix confusion{2};
  double miou = 0.0;
  double maxf = 0.0;
  std::vector<double> class_iou;
};

struct EpochLog {
  int stage = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double val_miou = 0.0;
  double learning_rate = 0.0;
};

std::string format_epoch(const EpochLog& e);

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
  EvalReport val;
};

// Two stages: binarizers bypassed, then enabled on the same parameters.
// Throws DivergenceError on a non-finite loss or intermediate value.
TrainResult train(const TrainConfig& cfg, const ModelConfig& model_cfg, std::ostream* log = nullptr);

/// Runs training stages on one model. Deterministic given the configs.
class Trainer {
 public:
  Trainer(Model& m, const TrainConfig& cfg);

  // Cosine-annealed per-epoch learning rate starting at `lr`. Adam state is reset at the start.
  // Appends one log entry per epoch, validating on `val` when it is non-empty.
  void run_stage(int stage, std::size_t epochs, double lr, bool bypass_binarizers, const std::vector<Sample>& train,
                 const std::vector<Sample>& val, std::vector<EpochLog>& log, std::ostream* out);

 private:
  double epoch(const std::vector<Sample>& data, double lr, bool bypass);

  Model& m_;
  TrainConfig cfg_;
  Adam<float> adam_;
  std::size_t epochs_done_ = 0;
};

EvalReport evaluate(Model& m, const std::vector<Sample>& data, bool bypass_binarizers = false);

std::vector<Sample> load_or_generate(const std::string& dir, std::uint64_t seed, std::size_t n, std::size_t size,
                                     std::uint64_t first_index);

}  // namespace bnn
