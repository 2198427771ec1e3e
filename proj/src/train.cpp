#include "csmgan/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "csmgan/metrics.hpp"

namespace csmgan {

Adam::Adam(ParamStore<float>& store, const Config& cfg) : Adam(store, cfg, AdamState{}) {}

Adam::Adam(ParamStore<float>& store, const Config& cfg, AdamState state)
    : store_(store),
      lr_(cfg.learning_rate),
      beta1_(cfg.adam_beta1),
      beta2_(cfg.adam_beta2),
      eps_(cfg.adam_eps),
      clip_(cfg.grad_clip),
      state_(std::move(state)) {
  if (state_.m.empty()) {
    for (const auto& p : store_) {
      state_.m.emplace_back(p.value.shape());
      state_.v.emplace_back(p.value.shape());
    }
  }
  if (state_.m.size() != store_.size() || state_.v.size() != store_.size()) {
    throw ContractError("Adam: optimiser state holds " + std::to_string(state_.m.size()) + " moments for " +
                        std::to_string(store_.size()) + " parameters");
  }
}

void Adam::step() {
  ++state_.step;
  double scale_grad = 1.0;
  if (clip_ > 0.0) {
    double sq = 0.0;
    for (const auto& p : store_) {
      for (float g : p.grad.values()) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > clip_) scale_grad = clip_ / norm;
  }
  const double t = static_cast<double>(state_.step);
  const double corr1 = 1.0 - std::pow(beta1_, t);
  const double corr2 = 1.0 - std::pow(beta2_, t);
  std::size_t idx = 0;
  for (auto& p : store_) {
    auto m = state_.m[idx].values();
    auto v = state_.v[idx].values();
    auto w = p.value.values();
    auto g = p.grad.values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = static_cast<double>(g[k]) * scale_grad;
      m[k] = static_cast<float>(beta1_ * m[k] + (1.0 - beta1_) * gk);
      v[k] = static_cast<float>(beta2_ * v[k] + (1.0 - beta2_) * gk * gk);
      const double mhat = m[k] / corr1;
      const double vhat = v[k] / corr2;
      w[k] = static_cast<float>(w[k] - lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
    ++idx;
  }
}

SyntheticSpec synthetic_spec(const Config& cfg, std::size_t n_samples, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_samples = n_samples;
  spec.n_v = cfg.synth_video_len;
  spec.n_q = cfg.synth_query_len;
  spec.d_in = cfg.d_in;
  spec.d_g = cfg.d_g;
  spec.vocab = cfg.synth_vocab;
  spec.noise = cfg.synth_noise;
  spec.seed = seed;
  return spec;
}

Dataset training_data(const Config& cfg) {
  if (!cfg.train_data.empty()) return load_dataset(cfg.train_data);
  return generate_synthetic_dataset(synthetic_spec(cfg, cfg.synth_samples, cfg.seed));
}

TrainResult train(const Config& cfg, const Dataset& ds, const TrainOptions& opts) {
  if (ds.empty()) throw ContractError("train: dataset is empty");
  TrainResult result;
  result.model = std::make_unique<Model<float>>(cfg);
  Model<float>& model = *result.model;
  for (const Sample& s : ds) model.check_sample(s);

  Adam adam(model.params(), cfg);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5deece66dULL);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);

  std::size_t steps = 0;
  bool stop = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t seen = 0, hits = 0;
    for (std::size_t begin = 0; begin < order.size() && !stop; begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const float inv = 1.0f / static_cast<float>(end - begin);
      model.params().zero_grad();
      double batch_loss = 0.0;
      for (std::size_t k = begin; k < end; ++k) {
        const Sample& s = ds[order[k]];
        Tape<float> tape;
        auto fw = model.forward(tape, s);
        auto loss = model.loss(fw, s.label);
        Var<float> scaled = scale(loss.total, inv);
        tape.backward(scaled);
        batch_loss += loss.total.value()[0];

        const auto top = nms(Model<float>::scored_candidates(fw, s.video_len()), cfg.nms_threshold, 1);
        if (!top.empty() && temporal_iou(top.front().span(), s.label) >= 0.5) ++hits;
        ++seen;
      }
      adam.step();
      result.step_losses.push_back(batch_loss / static_cast<double>(end - begin));
      epoch_loss += batch_loss;
      if (opts.max_steps != 0 && ++steps >= opts.max_steps) stop = true;
    }
    EpochStats stats{epoch + 1, epoch_loss / static_cast<double>(seen),
                     static_cast<double>(hits) / static_cast<double>(seen)};
    result.epochs.push_back(stats);
    if (opts.log) {
      *opts.log << "epoch " << stats.epoch << "  loss " << stats.mean_loss << "  train R@1,IoU=0.5 " << stats.train_r1
                << "\n";
    }
    if (opts.on_epoch && !opts.on_epoch(stats, model)) stop = true;
  }
  result.optimizer = adam.state();
  return result;
}

}  // namespace csmgan
