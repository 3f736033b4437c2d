#pragma once

// Trainable multimodal stack: frozen encoder -> {seg extractor, 4-layer MLP
// adapter} -> small decoder-only LM trained with next-token cross-entropy on
// the report tokens only.

#include "segprompt/encoder.hpp"
#include "segprompt/nn/checkpoint.hpp"
#include "segprompt/nn/layers.hpp"
#include "segprompt/prompting.hpp"
#include "segprompt/realize.hpp"
#include "segprompt/seg_extractor.hpp"
#include "segprompt/tokenizer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace segprompt::mllm {

using nn::Index;
using nn::Matrix;
using nn::Tape;
using nn::Var;
using prompting::Strategy;
using prompting::View;

struct LmConfig {
  int vocab = 0;
  int dim = 64;
  int depth = 2;
  int heads = 4;
  int max_len = 512;
  bool causal = true;  // always on; kept explicit in the config echo
};

struct ModelConfig {
  encoder::VitConfig encoder{64, 16, 8, 64, 4, {2, 4, 6, 8}, "block_output"};
  seg::ExtractorConfig extractor{64, 64, {2, 4, 6, 8}, 32, 2, nn::Activation::Gelu};
  LmConfig lm;
  int adapter_layers = 4;
  std::uint64_t encoder_seed = 1234;
  std::uint64_t seed = 0;  // extractor/adapter/LM init
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// 4-layer MLP from encoder width to LM width; one embedding per patch cell.
template <typename Scalar>
class Adapter {
 public:
  Adapter() = default;
  Adapter(Index in_dim, Index out_dim, int layers, std::mt19937_64& rng) {
    nn::require(layers >= 1, "Adapter: needs at least one layer");
    std::vector<Index> dims(static_cast<std::size_t>(layers) + 1, out_dim);
    dims.front() = in_dim;
    mlp_ = nn::Mlp<Scalar>("adapter.mlp", dims, nn::Activation::Gelu, rng);
  }

  Var<Scalar> operator()(Tape<Scalar>& tape, Var<Scalar> features) {
    nn::require(features.cols() == mlp_.in_dim(), "adapt: feature width " + std::to_string(features.cols()) +
                                                      ", adapter expects " + std::to_string(mlp_.in_dim()));
    return mlp_(tape, features);
  }

  Matrix<Scalar> adapt(const encoder::FeatureGrid<Scalar>& fg) {
    Tape<Scalar> tape;
    return (*this)(tape, tape.constant(fg.features)).value();
  }

  nn::Mlp<Scalar>& mlp() { return mlp_; }
  void set_identity() { mlp_.set_identity(); }
  nn::ParameterList<Scalar> parameters() {
    nn::ParameterList<Scalar> out;
    mlp_.collect(out);
    return out;
  }

 private:
  nn::Mlp<Scalar> mlp_;
};

/// Linear map from extractor width to LM width; identity (no parameters) when they agree.
template <typename Scalar>
class Bridge {
 public:
  Bridge() = default;
  Bridge(Index in_dim, Index out_dim, std::mt19937_64& rng) {
    if (in_dim != out_dim) proj_.emplace("bridge.linear", in_dim, out_dim, rng);
  }
  Var<Scalar> operator()(Tape<Scalar>& tape, Var<Scalar> token) { return proj_ ? (*proj_)(tape, token) : token; }
  nn::ParameterList<Scalar> parameters() {
    nn::ParameterList<Scalar> out;
    if (proj_) proj_->collect(out);
    return out;
  }

 private:
  std::optional<nn::Linear<Scalar>> proj_;
};

/// Decoder-only transformer over precomputed input embeddings.
template <typename Scalar>
class TinyLm {
 public:
  TinyLm() = default;
  TinyLm(const LmConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    nn::require(cfg.vocab > 0 && cfg.dim > 0 && cfg.depth > 0 && cfg.max_len > 0, "LmConfig: sizes must be positive");
    nn::require(cfg.causal, "LmConfig: the decoder is always causal");
    std::normal_distribution<double> nd(0.0, 0.02);
    Matrix<Scalar> tok(cfg.vocab, cfg.dim);
    for (Index i = 0; i < tok.size(); ++i) tok.data()[i] = static_cast<Scalar>(nd(rng));
    tok_emb_ = nn::Parameter<Scalar>("lm.tok_emb", std::move(tok));
    Matrix<Scalar> pos(cfg.max_len, cfg.dim);
    for (Index i = 0; i < pos.size(); ++i) pos.data()[i] = static_cast<Scalar>(nd(rng));
    pos_emb_ = nn::Parameter<Scalar>("lm.pos_emb", std::move(pos));
    for (int b = 0; b < cfg.depth; ++b)
      blocks_.emplace_back("lm.block" + std::to_string(b + 1), cfg.dim, cfg.heads, /*causal=*/true, rng);
    ln_f_ = nn::LayerNorm<Scalar>("lm.ln_f", cfg.dim);
    head_ = nn::Linear<Scalar>("lm.head", cfg.dim, cfg.vocab, rng);
  }

  const LmConfig& config() const { return cfg_; }

  Var<Scalar> embed(Tape<Scalar>& tape, const std::vector<int>& ids) {
    return nn::gather_rows(tape.parameter(tok_emb_), ids);
  }

  /// Logits for every input position (rows = positions).
  Var<Scalar> logits(Tape<Scalar>& tape, Var<Scalar> inputs) {
    nn::require(inputs.cols() == cfg_.dim, "TinyLm: input width mismatch");
    nn::require(inputs.rows() <= cfg_.max_len, "TinyLm: sequence of " + std::to_string(inputs.rows()) +
                                                   " exceeds max length " + std::to_string(cfg_.max_len));
    Var<Scalar> x = nn::add(inputs, nn::slice_rows(tape.parameter(pos_emb_), 0, inputs.rows()));
    for (auto& b : blocks_) x = b(tape, x);
    return head_(tape, ln_f_(tape, x));
  }

  nn::ParameterList<Scalar> parameters() {
    nn::ParameterList<Scalar> out{&tok_emb_, &pos_emb_};
    for (auto& b : blocks_) b.collect(out);
    ln_f_.collect(out);
    head_.collect(out);
    return out;
  }

 private:
  LmConfig cfg_;
  nn::Parameter<Scalar> tok_emb_;
  nn::Parameter<Scalar> pos_emb_;
  std::vector<nn::TransformerBlock<Scalar>> blocks_;
  nn::LayerNorm<Scalar> ln_f_;
  nn::Linear<Scalar> head_;
};

/// Per-position labels for prompt(P) ++ [BOS] ++ target: ignore the prompt,
/// predict target[i] at the position before it and EOS after the last token.
inline std::vector<int> target_labels(Index prompt_len, const std::vector<int>& target) {
  std::vector<int> labels(static_cast<std::size_t>(prompt_len), -1);
  labels.insert(labels.end(), target.begin(), target.end());
  labels.push_back(Tokenizer::kEos);
  return labels;
}

/// Mean cross-entropy over target positions of a prompt(P) ++ [BOS] ++ target sequence.
template <typename Scalar>
Var<Scalar> loss_from_logits(Var<Scalar> logits, Index prompt_len, const std::vector<int>& target) {
  return nn::cross_entropy(logits, target_labels(prompt_len, target));
}

/// A study with everything that does not depend on trainable weights precomputed.
template <typename Scalar>
struct PreparedStudy {
  std::string id;
  prompting::Prompt prompt;
  std::map<View, Matrix<Scalar>> images;  // unit-range pixels, kept for live encoding
  std::map<View, encoder::EncodedView<Scalar>> encoded;
  std::map<View, std::vector<seg::MaskInputs<Scalar>>> masks;
  std::vector<int> target;
};

template <typename Scalar>
class MultimodalModel {
 public:
  MultimodalModel(ModelConfig cfg, Tokenizer tokenizer) : cfg_(std::move(cfg)), tokenizer_(std::move(tokenizer)) {
    cfg_.lm.vocab = tokenizer_.size();
    cfg_.extractor.feature_dim = cfg_.encoder.dim;
    cfg_.extractor.tap_layers = cfg_.encoder.tap_layers;
    encoder_ = encoder::VitEncoder<Scalar>(cfg_.encoder, cfg_.encoder_seed);
    encoder::set_frozen(encoder_);
    std::mt19937_64 rng(cfg_.seed);
    extractor_ = seg::SegExtractor<Scalar>(cfg_.extractor, rng());
    adapter_ = Adapter<Scalar>(cfg_.encoder.dim, cfg_.lm.dim, cfg_.adapter_layers, rng);
    bridge_ = Bridge<Scalar>(cfg_.extractor.dim, cfg_.lm.dim, rng);
    lm_ = TinyLm<Scalar>(cfg_.lm, rng);
  }

  MultimodalModel(const MultimodalModel&) = delete;
  MultimodalModel& operator=(const MultimodalModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  encoder::VitEncoder<Scalar>& encoder() { return encoder_; }
  seg::SegExtractor<Scalar>& extractor() { return extractor_; }
  Adapter<Scalar>& adapter() { return adapter_; }
  TinyLm<Scalar>& lm() { return lm_; }

  nn::ParameterList<Scalar> trainable_parameters() {
    nn::ParameterList<Scalar> out = extractor_.parameters();
    for (auto* p : adapter_.parameters()) out.push_back(p);
    for (auto* p : bridge_.parameters()) out.push_back(p);
    for (auto* p : lm_.parameters()) out.push_back(p);
    return out;
  }

  nn::ParameterList<Scalar> parameters() {
    nn::ParameterList<Scalar> out = encoder_.parameters();
    for (auto* p : trainable_parameters()) out.push_back(p);
    return out;
  }

  PreparedStudy<Scalar> prepare(const prompting::StudyInput& study, const prompting::Prompt& prompt) {
    PreparedStudy<Scalar> ps;
    ps.id = study.id;
    ps.prompt = prompt;
    for (const auto& seg : prompt.segments) {
      const auto* slot = std::get_if<prompting::ImageSlot>(&seg);
      if (!slot) continue;
      const auto* view = study.view(slot->view);
      nn::require(view != nullptr, "prepare: prompt references a missing view");
      Matrix<Scalar> unit = to_unit<Scalar>(view->image);
      ps.encoded.emplace(slot->view, encoder_.encode_values(unit));
      ps.images.emplace(slot->view, std::move(unit));
      auto& inputs = ps.masks[slot->view];
      for (auto id : view->masks.positives())
        inputs.push_back(seg::prepare_mask<Scalar>(id, *view->masks.find(id), cfg_.encoder.patch_size,
                                                   cfg_.extractor.spatial_side));
    }
    ps.target = tokenizer_.encode(study.target);
    return ps;
  }

  PreparedStudy<Scalar> prepare(const prompting::StudyInput& study, Strategy strategy, bool single_view) {
    return prepare(study, prompting::build_prompt(study, strategy, single_view));
  }

  /// Realizes the prompt on `tape`. With live_encoder the encoder runs on the
  /// tape (its frozen weights still receive gradients, which the optimizer drops);
  /// otherwise cached features enter as constants.
  prompting::Realized<Scalar> realize(Tape<Scalar>& tape, const PreparedStudy<Scalar>& ps, bool live_encoder = false) {
    std::map<View, Var<Scalar>> finals;
    std::map<View, std::map<int, Var<Scalar>>> taps;
    for (const auto& [view, enc] : ps.encoded) {
      if (live_encoder) {
        auto out = encoder_.encode(tape, ps.images.at(view));
        finals.emplace(view, out.final);
        taps.emplace(view, out.taps);
      } else {
        finals.emplace(view, tape.constant(enc.final.features));
        auto& m = taps[view];
        for (const auto& [layer, grid] : enc.taps) m.emplace(layer, tape.constant(grid.features));
      }
    }
    const bool needs_tokens = std::any_of(ps.prompt.segments.begin(), ps.prompt.segments.end(), [](const auto& s) {
      return std::holds_alternative<prompting::SegSlot>(s) || std::holds_alternative<prompting::CombinedSegSlot>(s);
    });
    prompting::TokensByView<Scalar> tokens;
    if (needs_tokens)
      for (const auto& [view, inputs] : ps.masks)
        for (const auto& in : inputs) tokens[view].push_back(extractor_.tokens(tape, taps.at(view), in));

    return prompting::realize_embeddings<Scalar>(
        tape, ps.prompt, finals, tokens,
        [this](Tape<Scalar>& t, std::string_view text) {
          const auto ids = tokenizer_.encode(text);
          return ids.empty() ? Var<Scalar>() : lm_.embed(t, ids);
        },
        [this](Tape<Scalar>& t, Var<Scalar> features) { return adapter_(t, features); },
        [this](Tape<Scalar>& t, Var<Scalar> token) { return bridge_(t, token); });
  }

  /// Mean next-token cross-entropy over the target (report) tokens only.
  Var<Scalar> forward_loss(Tape<Scalar>& tape, Var<Scalar> prompt_embeddings, const std::vector<int>& target) {
    const Index p = prompt_embeddings.rows();
    const Index total = p + static_cast<Index>(target.size()) + 1;
    nn::require(total <= cfg_.lm.max_len, "forward_loss: prompt " + std::to_string(p) + " + target " +
                                              std::to_string(target.size() + 1) + " exceeds max length " +
                                              std::to_string(cfg_.lm.max_len));
    std::vector<int> ids{Tokenizer::kBos};
    ids.insert(ids.end(), target.begin(), target.end());
    Var<Scalar> inputs = nn::concat_rows<Scalar>({prompt_embeddings, lm_.embed(tape, ids)});
    return loss_from_logits(lm_.logits(tape, inputs), p, target);
  }

  Var<Scalar> study_loss(Tape<Scalar>& tape, const PreparedStudy<Scalar>& ps, bool live_encoder = false) {
    return forward_loss(tape, realize(tape, ps, live_encoder).embeddings, ps.target);
  }

  /// Greedy decoding until EOS or max_new tokens.
  std::vector<int> generate(const Matrix<Scalar>& prompt_embeddings, int max_new) {
    std::vector<int> generated;
    std::vector<int> ids{Tokenizer::kBos};
    for (int step = 0; step < max_new; ++step) {
      if (prompt_embeddings.rows() + static_cast<Index>(ids.size()) > cfg_.lm.max_len) break;
      Tape<Scalar> tape;
      Var<Scalar> inputs = nn::concat_rows<Scalar>({tape.constant(prompt_embeddings), lm_.embed(tape, ids)});
      const Matrix<Scalar>& logits = lm_.logits(tape, inputs).value();
      Index best = 0;
      logits.row(logits.rows() - 1).maxCoeff(&best);
      if (best == Tokenizer::kEos) break;
      generated.push_back(static_cast<int>(best));
      ids.push_back(static_cast<int>(best));
    }
    return generated;
  }

  std::vector<int> generate(const PreparedStudy<Scalar>& ps, int max_new) {
    Tape<Scalar> tape;
    return generate(realize(tape, ps).embeddings.value(), max_new);
  }

  void save(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nn::TensorMap tensors;
    nn::store<Scalar>(tensors, parameters());
    nn::save_checkpoint(dir / "model.ckpt", tensors);
  }

  void load_weights(const std::filesystem::path& file) { nn::restore<Scalar>(nn::load_checkpoint(file), parameters()); }

 private:
  ModelConfig cfg_;
  Tokenizer tokenizer_;
  encoder::VitEncoder<Scalar> encoder_;
  seg::SegExtractor<Scalar> extractor_;
  Adapter<Scalar> adapter_;
  Bridge<Scalar> bridge_;
  TinyLm<Scalar> lm_;
};

}  // namespace segprompt::mllm
