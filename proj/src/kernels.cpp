#include "hermes/kernels.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include "hermes/errors.hpp"

namespace hermes::kernels {

namespace {

using store::LayerWeights;
using store::Role;
using store::Tensor;

// out[r][c] = sum_k a[r][k] * b[k][c], k ascending. b is row-major K x C.
void matmul(const float* a, int rows, int k_dim, const float* b, int cols, float* out) {
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * cols * k_dim > 16384)
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            float acc = 0.0f;
            for (int k = 0; k < k_dim; ++k) acc += a[static_cast<size_t>(r) * k_dim + k] * b[static_cast<size_t>(k) * cols + c];
            out[static_cast<size_t>(r) * cols + c] = acc;
        }
    }
}

void layer_norm_row(const float* x, int d, const float* gain, const float* bias, float* out) {
    float sum = 0.0f;
    for (int i = 0; i < d; ++i) sum += x[i];
    const float mean = sum / static_cast<float>(d);
    float var_sum = 0.0f;
    for (int i = 0; i < d; ++i) {
        const float dev = x[i] - mean;
        var_sum += dev * dev;
    }
    const float var = var_sum / static_cast<float>(d);
    const float inv = 1.0f / std::sqrt(var + kLnEps);
    for (int i = 0; i < d; ++i) out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
}

float gelu(float v) {
    const float u = v + kGeluC1 * (v * v * v);
    return 0.5f * v * (1.0f + std::tanh(kGeluC0 * u));
}

const Tensor& want(const LayerWeights& w, const char* name) { return w.tensor(name); }

void check_shape(const LayerWeights& w, const Activation& x) {
    const auto& wq = want(w, "w_q");
    if (wq.dims.size() != 2 || static_cast<int>(wq.dims[0]) != x.dim)
        throw InvalidInput("activation dim " + std::to_string(x.dim) +
                           " does not match layer " + std::to_string(w.record.index));
    if (x.seq_len <= 0) throw InvalidInput("empty activation");
}

// Shared encoder/decoder body; causal limits attention of row i to columns <= i.
Activation attention_block(const LayerWeights& w, const Activation& x, bool causal) {
    check_shape(w, x);
    const int s = x.seq_len;
    const int d = x.dim;
    const auto& wq = want(w, "w_q");
    const auto& wk = want(w, "w_k");
    const auto& wv = want(w, "w_v");
    const auto& wo = want(w, "w_o");

    const int heads = w.num_heads;
    if (heads <= 0 || d % heads != 0)
        throw InvalidInput("hidden dim " + std::to_string(d) + " not divisible into " +
                           std::to_string(heads) + " heads");
    const int dh = d / heads;

    std::vector<float> q(static_cast<size_t>(s) * d), k(static_cast<size_t>(s) * d),
        v(static_cast<size_t>(s) * d);
    matmul(x.data.data(), s, d, wq.data.data(), d, q.data());
    matmul(x.data.data(), s, d, wk.data.data(), d, k.data());
    matmul(x.data.data(), s, d, wv.data.data(), d, v.data());

    const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
    std::vector<float> ctx(static_cast<size_t>(s) * d, 0.0f);

#pragma omp parallel for schedule(static) if (static_cast<long>(s) * d > 4096)
    for (int i = 0; i < s; ++i) {
        std::vector<float> probs(static_cast<size_t>(s));
        for (int h = 0; h < heads; ++h) {
            const int off = h * dh;
            const int limit = causal ? i + 1 : s;
            // scores
            for (int j = 0; j < limit; ++j) {
                float acc = 0.0f;
                for (int c = 0; c < dh; ++c)
                    acc += q[static_cast<size_t>(i) * d + off + c] * k[static_cast<size_t>(j) * d + off + c];
                probs[j] = acc * inv_sqrt_dh;
            }
            // softmax with max subtraction
            float mx = probs[0];
            for (int j = 1; j < limit; ++j)
                if (probs[j] > mx) mx = probs[j];
            float sum = 0.0f;
            for (int j = 0; j < limit; ++j) {
                probs[j] = std::exp(probs[j] - mx);
                sum += probs[j];
            }
            for (int j = 0; j < limit; ++j) probs[j] /= sum;
            // weighted value sum
            for (int c = 0; c < dh; ++c) {
                float acc = 0.0f;
                for (int j = 0; j < limit; ++j)
                    acc += probs[j] * v[static_cast<size_t>(j) * d + off + c];
                ctx[static_cast<size_t>(i) * d + off + c] = acc;
            }
        }
    }

    std::vector<float> attn(static_cast<size_t>(s) * d);
    matmul(ctx.data(), s, d, wo.data.data(), d, attn.data());

    const auto& ln1_g = want(w, "ln1_g");
    const auto& ln1_b = want(w, "ln1_b");
    const auto& ln2_g = want(w, "ln2_g");
    const auto& ln2_b = want(w, "ln2_b");
    const auto& w1 = want(w, "w_1");
    const auto& b1 = want(w, "b_1");
    const auto& w2 = want(w, "w_2");
    const auto& b2 = want(w, "b_2");
    const int ffn = static_cast<int>(w1.dims[1]);

    Activation y(s, d);
#pragma omp parallel for schedule(static) if (static_cast<long>(s) * d > 4096)
    for (int i = 0; i < s; ++i) {
        std::vector<float> row(static_cast<size_t>(d));
        for (int c = 0; c < d; ++c) row[c] = x.at(i, c) + attn[static_cast<size_t>(i) * d + c];
        layer_norm_row(row.data(), d, ln1_g.data.data(), ln1_b.data.data(), &y.at(i, 0));
    }

    std::vector<float> h1(static_cast<size_t>(s) * ffn);
    matmul(y.data.data(), s, d, w1.data.data(), ffn, h1.data());
    Activation z(s, d);
#pragma omp parallel for schedule(static) if (static_cast<long>(s) * ffn > 4096)
    for (int i = 0; i < s; ++i) {
        std::vector<float> act(static_cast<size_t>(ffn));
        for (int c = 0; c < ffn; ++c) {
            float t = h1[static_cast<size_t>(i) * ffn + c] + b1.data[c];
            act[c] = gelu(t);
        }
        std::vector<float> o(static_cast<size_t>(d));
        for (int c = 0; c < d; ++c) {
            float acc = 0.0f;
            for (int k2 = 0; k2 < ffn; ++k2) acc += act[k2] * w2.data[static_cast<size_t>(k2) * d + c];
            o[c] = acc + b2.data[c];
        }
        std::vector<float> row(static_cast<size_t>(d));
        for (int c = 0; c < d; ++c) row[c] = y.at(i, c) + o[c];
        layer_norm_row(row.data(), d, ln2_g.data.data(), ln2_b.data.data(), &z.at(i, 0));
    }
    return z;
}

}  // namespace

Activation embed(const store::LayerWeights& weights, const std::vector<int>& token_ids) {
    const auto& tok = weights.tensor("tok_table");
    const auto& pos = weights.tensor("pos_table");
    const int vocab = static_cast<int>(tok.dims[0]);
    const int d = static_cast<int>(tok.dims[1]);
    const int max_pos = static_cast<int>(pos.dims[0]);
    if (token_ids.empty()) throw InvalidInput("no input tokens");
    if (static_cast<int>(token_ids.size()) > max_pos)
        throw InvalidInput("input longer than positional table (" + std::to_string(max_pos) + ")");
    Activation a(static_cast<int>(token_ids.size()), d);
    for (int i = 0; i < a.seq_len; ++i) {
        const int id = token_ids[i];
        if (id < 0 || id >= vocab)
            throw InvalidInput("token id " + std::to_string(id) + " outside vocabulary");
        for (int c = 0; c < d; ++c)
            a.at(i, c) = tok.data[static_cast<size_t>(id) * d + c] + pos.data[static_cast<size_t>(i) * d + c];
    }
    return a;
}

Activation encoder_forward(const store::LayerWeights& weights, const Activation& x) {
    return attention_block(weights, x, /*causal=*/false);
}

Activation decoder_forward(const store::LayerWeights& weights, const Activation& x) {
    return attention_block(weights, x, /*causal=*/true);
}

std::vector<float> head_forward(const store::LayerWeights& weights, const Activation& x) {
    if (x.seq_len <= 0) throw InvalidInput("empty activation");
    const auto& w = weights.tensor("w");
    const auto& b = weights.tensor("b");
    const int d = static_cast<int>(w.dims[0]);
    const int out_dim = static_cast<int>(w.dims[1]);
    if (x.dim != d) throw InvalidInput("activation dim does not match head");

    const bool pooled = weights.record.role == store::Role::Pooling;
    const int row = pooled ? 0 : x.seq_len - 1;
    std::vector<float> out(static_cast<size_t>(out_dim));
#pragma omp parallel for schedule(static) if (static_cast<long>(out_dim) * d > 16384)
    for (int j = 0; j < out_dim; ++j) {
        float acc = 0.0f;
        for (int c = 0; c < d; ++c) acc += x.at(row, c) * w.data[static_cast<size_t>(c) * out_dim + j];
        acc += b.data[j];
        out[j] = pooled ? std::tanh(acc) : acc;
    }
    return out;
}

int argmax_lowest(const std::vector<float>& v) {
    if (v.empty()) throw InvalidInput("argmax of empty vector");
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

void forward_layer(const store::LayerWeights& weights, Activation& x) {
    const auto& rec = weights.record;
    if (rec.synthetic) {
        if (rec.compute_delay_ms > 0)
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(rec.compute_delay_ms));
        for (auto& v : x.data) v += 1.0f;
        return;
    }
    switch (rec.role) {
        case Role::Encoder:
            x = encoder_forward(weights, x);
            return;
        case Role::Decoder:
            x = decoder_forward(weights, x);
            return;
        default:
            throw InvalidInput("forward_layer applies to encoder/decoder records only");
    }
}

}  // namespace hermes::kernels
