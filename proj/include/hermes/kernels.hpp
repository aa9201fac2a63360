#pragma once

#include <cstdint>
#include <vector>

#include "hermes/model_store.hpp"

namespace hermes::kernels {

// All kernels use 32-bit float math with a fixed ascending-index summation
// order, so repeated runs (and the serial reference implementation) produce
// bit-identical results. Numeric conventions, pinned for reproducibility:
//   - dot products accumulate left to right, bias added after the sum
//   - softmax subtracts the row max before exponentiation
//   - layer norm: mean/variance in input order, eps = 1e-5f
//   - GELU (tanh form): 0.5*x*(1 + tanh(0.7978845608028654*(x + 0.044715*x^3)))
// Outer loops over independent output elements are OpenMP-parallel; the
// per-element operation sequence does not depend on the thread count.

inline constexpr float kLnEps = 1e-5f;
inline constexpr float kGeluC0 = 0.7978845608028654f;  // sqrt(2/pi)
inline constexpr float kGeluC1 = 0.044715f;

struct Activation {
    int seq_len = 0;
    int dim = 0;
    std::vector<float> data;  // row-major seq_len x dim

    Activation() = default;
    Activation(int s, int d) : seq_len(s), dim(d), data(static_cast<size_t>(s) * d, 0.0f) {}
    float& at(int r, int c) { return data[static_cast<size_t>(r) * dim + c]; }
    float at(int r, int c) const { return data[static_cast<size_t>(r) * dim + c]; }
};

// Token embedding plus stored positional encoding. Rejects ids outside the
// embedding table and inputs longer than the positional table.
Activation embed(const store::LayerWeights& weights, const std::vector<int>& token_ids);

// z = LN2(y + FFN(y)), y = LN1(x + MHSA(x)).
Activation encoder_forward(const store::LayerWeights& weights, const Activation& x);

// Same with a causal mask: position i attends to positions <= i.
Activation decoder_forward(const store::LayerWeights& weights, const Activation& x);

// Terminal layer: pooling -> tanh(x[0] @ W + b) over the first row;
// lm_head -> logits x[last] @ W + b over the vocabulary.
std::vector<float> head_forward(const store::LayerWeights& weights, const Activation& x);

// Lowest-index tie-break; greedy decoding uses this on lm_head logits.
int argmax_lowest(const std::vector<float>& v);

// Role dispatch for encoder/decoder/synthetic records; x is updated in place.
// Synthetic records sleep their injected compute delay, then apply a fixed
// deterministic transform.
void forward_layer(const store::LayerWeights& weights, Activation& x);

}  // namespace hermes::kernels
