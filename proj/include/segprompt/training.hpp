#pragma once

#include "segprompt/encoder.hpp"
#include "segprompt/mllm.hpp"
#include "segprompt/nn/optim.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace segprompt::mllm {

struct TrainConfig {
  int epochs = 3;
  double base_lr = 2e-5;
  double warmup_ratio = 0.03;
  int batch_size = 4;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::SS;
  bool single_view = true;
  prompting::MaskNames mask_names = prompting::MaskNames::Default;
  double weight_decay = 0.0;
  std::int64_t max_steps = -1;  // cap on optimizer steps; -1 = epochs only
  int threads = 0;              // 0 = SEGPROMPT_THREADS or hardware concurrency
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct StepLog {
  std::int64_t step;
  double lr;
  double loss;
};

struct TrainResult {
  std::vector<StepLog> curve;
  std::uint64_t encoder_checksum_before = 0;
  std::uint64_t encoder_checksum_after = 0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Worker count: explicit request, else SEGPROMPT_THREADS, else hardware concurrency.
int worker_threads(int requested);

std::int64_t total_steps(std::size_t dataset_size, const TrainConfig& tc);

/// Minibatch AdamW over the trainable set (extractor, adapter, bridge, LM) with a
/// warmup+cosine schedule. Items of a batch may run on separate threads; their
/// gradients are reduced in item order so results do not depend on thread count.
template <typename Scalar>
TrainResult train(MultimodalModel<Scalar>& model, const std::vector<PreparedStudy<Scalar>>& data,
                  const TrainConfig& tc, const std::function<void(const StepLog&)>& on_step = {}) {
  nn::require(!data.empty(), "train: empty dataset");
  nn::require(tc.epochs >= 1 && tc.batch_size >= 1, "train: epochs and batch size must be positive");

  encoder::set_frozen(model.encoder());
  TrainResult result;
  result.encoder_checksum_before = encoder::parameter_checksum(model.encoder().parameters());

  const auto params = model.parameters();
  nn::OptimState<Scalar> state(nn::AdamWConfig{0.9, 0.999, 1e-8, tc.weight_decay});
  const std::int64_t steps = total_steps(data.size(), tc);
  const nn::LrSchedule schedule{tc.base_lr, steps, tc.warmup_ratio};
  const int threads = worker_threads(tc.threads);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::int64_t step = 0;
  for (int epoch = 0; epoch < tc.epochs && step < steps; ++epoch) {
    std::mt19937_64 rng(tc.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size() && step < steps; begin += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(tc.batch_size));
      const std::size_t batch = end - begin;

      std::vector<std::unique_ptr<nn::Tape<Scalar>>> tapes(batch);
      std::vector<double> losses(batch, 0.0);
      auto run_item = [&](std::size_t k) {
        tapes[k] = std::make_unique<nn::Tape<Scalar>>();
        auto loss = model.study_loss(*tapes[k], data[order[begin + k]]);
        losses[k] = static_cast<double>(loss.value()(0, 0));
        tapes[k]->backward(loss, /*flush=*/false);
      };
      const int workers = std::min<int>(threads, static_cast<int>(batch));
      if (workers <= 1) {
        for (std::size_t k = 0; k < batch; ++k) run_item(k);
      } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
          pool.emplace_back([&, w] {
            for (std::size_t k = static_cast<std::size_t>(w); k < batch; k += static_cast<std::size_t>(workers)) run_item(k);
          });
        for (auto& t : pool) t.join();
      }

      const double mean_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(batch);
      if (!std::isfinite(mean_loss)) throw TrainingError("non-finite loss at step " + std::to_string(step));

      nn::zero_grads(params);
      for (auto& t : tapes) t->flush_param_grads(Scalar(1) / static_cast<Scalar>(batch));
      const double lr = schedule.at(step);
      nn::adamw_step(params, state, lr);

      StepLog log{step, lr, mean_loss};
      result.curve.push_back(log);
      if (on_step) on_step(log);
      ++step;
    }
  }
  result.encoder_checksum_after = encoder::parameter_checksum(model.encoder().parameters());
  return result;
}

/// Mean target cross-entropy over a dataset with the current weights.
template <typename Scalar>
double mean_loss(MultimodalModel<Scalar>& model, const std::vector<PreparedStudy<Scalar>>& data) {
  double total = 0.0;
  for (const auto& ps : data) {
    nn::Tape<Scalar> tape;
    total += static_cast<double>(model.study_loss(tape, ps).value()(0, 0));
  }
  return total / static_cast<double>(data.size());
}

}  // namespace segprompt::mllm
