#pragma once

#include <vector>

#include "hermes/kernels.hpp"
#include "hermes/model_store.hpp"

// Deliberately plain serial re-implementations of the transformer kernels,
// written as direct loop nests with no code shared with the production path.
// Tests require bit-identical outputs between the two; keep the operation
// order here in sync with the conventions pinned in hermes/kernels.hpp.
namespace hermes::ref {

kernels::Activation embed(const store::LayerWeights& weights, const std::vector<int>& token_ids);
kernels::Activation encoder_forward(const store::LayerWeights& weights, const kernels::Activation& x);
kernels::Activation decoder_forward(const store::LayerWeights& weights, const kernels::Activation& x);
std::vector<float> head_forward(const store::LayerWeights& weights, const kernels::Activation& x);

}  // namespace hermes::ref
