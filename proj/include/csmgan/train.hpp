#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <vector>

#include "csmgan/config.hpp"
#include "csmgan/dataset.hpp"
#include "csmgan/model.hpp"

namespace csmgan {

/// First and second moment estimates, one pair per parameter in store order.
struct AdamState {
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
  std::uint64_t step = 0;
};

class Adam {
 public:
  Adam(ParamStore<float>& store, const Config& cfg);
  Adam(ParamStore<float>& store, const Config& cfg, AdamState state);

  /// Applies one update from the gradients currently held by the parameters.
  void step();

  const AdamState& state() const noexcept { return state_; }

 private:
  ParamStore<float>& store_;
  double lr_, beta1_, beta2_, eps_, clip_;
  AdamState state_;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_r1 = 0.0;  // R@1, IoU=0.5 from the forward passes seen during the epoch
};

struct TrainOptions {
  std::size_t max_steps = 0;  // 0 = run every epoch in the config
  std::ostream* log = nullptr;
  /// Called after each epoch; return false to stop early.
  std::function<bool(const EpochStats&, Model<float>&)> on_epoch;
};

struct TrainResult {
  std::unique_ptr<Model<float>> model;
  AdamState optimizer;
  std::vector<double> step_losses;  // mean batch loss per optimiser step
  std::vector<EpochStats> epochs;
};

/// Minibatch Adam on the total loss. Shuffling draws from the config seed, so
/// identical config + data reproduce the loss trajectory bit for bit.
/// A non-finite value anywhere in the graph aborts with NumericError naming the op.
TrainResult train(const Config& cfg, const Dataset& ds, const TrainOptions& opts = {});

/// Dataset described by the config's synth_* keys (or loaded from train_data).
Dataset training_data(const Config& cfg);

SyntheticSpec synthetic_spec(const Config& cfg, std::size_t n_samples, std::uint64_t seed);

}  // namespace csmgan
