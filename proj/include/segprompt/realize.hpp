#pragma once

// Turns a Prompt into the LM input sequence: text spans through the token
// embedder, image slots through the adapter (one row per patch), seg slots
// through the width bridge. Rows follow segment order.

#include "segprompt/nn/ops.hpp"
#include "segprompt/prompting.hpp"
#include "segprompt/seg_extractor.hpp"

#include <map>
#include <string>
#include <vector>

namespace segprompt::prompting {

struct RealizedSpan {
  std::size_t segment;  // index into Prompt::segments
  nn::Index start;
  nn::Index length;
};

template <typename Scalar>
struct Realized {
  nn::Var<Scalar> embeddings;
  std::vector<RealizedSpan> spans;
};

template <typename Scalar>
using TokensByView = std::map<View, std::vector<seg::SegTokenVars<Scalar>>>;

/// TextEmbed:  (Tape&, std::string_view) -> Var (rows = tokens) or an invalid Var for zero tokens
/// ImageEmbed: (Tape&, Var features) -> Var (rows = cells)
/// SegEmbed:   (Tape&, Var token 1×d) -> Var (1×lm_dim)
template <typename Scalar, typename TextEmbed, typename ImageEmbed, typename SegEmbed>
Realized<Scalar> realize_embeddings(nn::Tape<Scalar>& tape, const Prompt& p,
                                    const std::map<View, nn::Var<Scalar>>& image_features,
                                    const TokensByView<Scalar>& tokens_by_view, TextEmbed&& text_embed,
                                    ImageEmbed&& image_embed, SegEmbed&& seg_embed) {
  std::vector<nn::Var<Scalar>> parts;
  Realized<Scalar> out;
  nn::Index row = 0;

  auto find_pair = [&](View v, masks::StructureId s) -> const seg::SegTokenVars<Scalar>& {
    auto it = tokens_by_view.find(v);
    if (it != tokens_by_view.end())
      for (const auto& t : it->second)
        if (t.structure == s) return t;
    throw ContractError("realize_embeddings: no seg tokens for " + std::string(view_key(v)) + "/" +
                        std::string(masks::structure_key(s)));
  };
  auto push = [&](std::size_t idx, nn::Var<Scalar> v) {
    out.spans.push_back({idx, row, v.rows()});
    row += v.rows();
    parts.push_back(v);
  };

  for (std::size_t idx = 0; idx < p.segments.size(); ++idx) {
    const auto& seg = p.segments[idx];
    if (const auto* t = std::get_if<TextSpan>(&seg)) {
      nn::Var<Scalar> e = text_embed(tape, std::string_view(t->text));
      if (e.valid() && e.rows() > 0) {
        push(idx, e);
      } else {
        out.spans.push_back({idx, row, 0});
      }
    } else if (const auto* i = std::get_if<ImageSlot>(&seg)) {
      auto it = image_features.find(i->view);
      if (it == image_features.end())
        throw ContractError("realize_embeddings: no encoder output for image slot " + std::string(view_key(i->view)));
      push(idx, image_embed(tape, it->second));
    } else if (const auto* s = std::get_if<SegSlot>(&seg)) {
      const auto& pair = find_pair(s->view, s->structure);
      push(idx, seg_embed(tape, s->token == SegToken::Mask ? pair.mask_token : pair.spatial_token));
    } else if (const auto* c = std::get_if<CombinedSegSlot>(&seg)) {
      std::vector<nn::Var<Scalar>> block;
      for (const auto& [view, structures] : p.combined) {
        if (view != c->view) continue;
        for (masks::StructureId sid : structures) {
          const auto& pair = find_pair(view, sid);
          block.push_back(seg_embed(tape, pair.mask_token));
          block.push_back(seg_embed(tape, pair.spatial_token));
        }
      }
      if (block.empty())
        throw ContractError("realize_embeddings: combined seg slot for " + std::string(view_key(c->view)) +
                            " has no structures");
      push(idx, nn::concat_rows(block));
    }
  }
  if (parts.empty()) throw ContractError("realize_embeddings: prompt realizes to an empty sequence");
  out.embeddings = parts.size() == 1 ? parts.front() : nn::concat_rows(parts);
  return out;
}

}  // namespace segprompt::prompting
