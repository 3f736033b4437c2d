#include "segprompt/mllm.hpp"
#include "segprompt/training.hpp"

#include <cstdlib>
#include <thread>

namespace segprompt::mllm {

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"encoder",
       {{"image_size", c.encoder.image_size},
        {"patch_size", c.encoder.patch_size},
        {"depth", c.encoder.depth},
        {"dim", c.encoder.dim},
        {"heads", c.encoder.heads},
        {"tap_layers", c.encoder.tap_layers},
        {"tap_point", c.encoder.tap_point}}},
      {"extractor",
       {{"dim", c.extractor.dim},
        {"spatial_side", c.extractor.spatial_side},
        {"mlp_depth", c.extractor.mlp_depth},
        {"fusion_activation", c.extractor.fusion_activation == nn::Activation::Gelu ? "gelu" : "identity"}}},
      {"lm",
       {{"vocab", c.lm.vocab},
        {"dim", c.lm.dim},
        {"depth", c.lm.depth},
        {"heads", c.lm.heads},
        {"max_len", c.lm.max_len},
        {"causal", c.lm.causal}}},
      {"adapter_layers", c.adapter_layers},
      {"encoder_seed", c.encoder_seed},
      {"seed", c.seed},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    c.encoder.image_size = e.value("image_size", c.encoder.image_size);
    c.encoder.patch_size = e.value("patch_size", c.encoder.patch_size);
    c.encoder.depth = e.value("depth", c.encoder.depth);
    c.encoder.dim = e.value("dim", c.encoder.dim);
    c.encoder.heads = e.value("heads", c.encoder.heads);
    c.encoder.tap_layers = e.value("tap_layers", c.encoder.tap_layers);
  }
  if (j.contains("extractor")) {
    const auto& x = j.at("extractor");
    c.extractor.dim = x.value("dim", c.extractor.dim);
    c.extractor.spatial_side = x.value("spatial_side", c.extractor.spatial_side);
    c.extractor.mlp_depth = x.value("mlp_depth", c.extractor.mlp_depth);
    c.extractor.fusion_activation =
        x.value("fusion_activation", std::string("gelu")) == "identity" ? nn::Activation::Identity : nn::Activation::Gelu;
  }
  if (j.contains("lm")) {
    const auto& l = j.at("lm");
    c.lm.vocab = l.value("vocab", c.lm.vocab);
    c.lm.dim = l.value("dim", c.lm.dim);
    c.lm.depth = l.value("depth", c.lm.depth);
    c.lm.heads = l.value("heads", c.lm.heads);
    c.lm.max_len = l.value("max_len", c.lm.max_len);
  }
  c.adapter_layers = j.value("adapter_layers", c.adapter_layers);
  c.encoder_seed = j.value("encoder_seed", c.encoder_seed);
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"base_lr", c.base_lr},
          {"warmup_ratio", c.warmup_ratio},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"strategy", prompting::strategy_name(c.strategy)},
          {"single_view", c.single_view},
          {"mask_names", prompting::mask_names_key(c.mask_names)},
          {"weight_decay", c.weight_decay},
          {"max_steps", c.max_steps},
          {"trainable", {"extractor", "adapter", "bridge", "lm"}},
          {"frozen", {"encoder"}}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  if (j.contains("strategy")) {
    auto s = prompting::parse_strategy(j.at("strategy").get<std::string>());
    if (!s) throw ContractError("unknown strategy " + j.at("strategy").get<std::string>());
    c.strategy = *s;
  }
  c.single_view = j.value("single_view", c.single_view);
  if (j.contains("mask_names")) {
    auto n = prompting::parse_mask_names(j.at("mask_names").get<std::string>());
    if (!n) throw ContractError("unknown mask_names " + j.at("mask_names").get<std::string>());
    c.mask_names = *n;
  }
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.max_steps = j.value("max_steps", c.max_steps);
  return c;
}

int worker_threads(int requested) {
  if (requested > 0) return requested;
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  if (const char* env = std::getenv("SEGPROMPT_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return n;
}

std::int64_t total_steps(std::size_t dataset_size, const TrainConfig& tc) {
  const auto per_epoch = static_cast<std::int64_t>((dataset_size + static_cast<std::size_t>(tc.batch_size) - 1) /
                                                   static_cast<std::size_t>(tc.batch_size));
  std::int64_t steps = per_epoch * tc.epochs;
  if (tc.max_steps > 0) steps = std::min(steps, tc.max_steps);
  return steps;
}

}  // namespace segprompt::mllm
