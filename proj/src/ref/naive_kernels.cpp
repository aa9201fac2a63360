#include "naive_kernels.hpp"

#include <cmath>

#include "hermes/errors.hpp"

namespace hermes::ref {

using kernels::Activation;
using store::LayerWeights;
using store::Tensor;

namespace {

std::vector<float> get(const LayerWeights& w, const char* name, std::vector<uint32_t>* dims = nullptr) {
    const Tensor& t = w.tensor(name);
    if (dims) *dims = t.dims;
    return t.data;
}

Activation block(const LayerWeights& w, const Activation& x, bool causal) {
    const int s = x.seq_len;
    const int d = x.dim;
    const int heads = w.num_heads;
    const int dh = d / heads;

    std::vector<uint32_t> wq_dims;
    std::vector<float> wq = get(w, "w_q", &wq_dims);
    if (wq_dims.size() != 2 || static_cast<int>(wq_dims[0]) != d || s <= 0)
        throw InvalidInput("reference block shape mismatch");
    std::vector<float> wk = get(w, "w_k");
    std::vector<float> wv = get(w, "w_v");
    std::vector<float> wo = get(w, "w_o");

    std::vector<float> q((size_t)s * d, 0.0f), k((size_t)s * d, 0.0f), v((size_t)s * d, 0.0f);
    for (int i = 0; i < s; ++i)
        for (int c = 0; c < d; ++c) {
            float aq = 0.0f, ak = 0.0f, av = 0.0f;
            for (int t = 0; t < d; ++t) {
                const float xv = x.at(i, t);
                aq += xv * wq[(size_t)t * d + c];
                ak += xv * wk[(size_t)t * d + c];
                av += xv * wv[(size_t)t * d + c];
            }
            q[(size_t)i * d + c] = aq;
            k[(size_t)i * d + c] = ak;
            v[(size_t)i * d + c] = av;
        }

    const float scale = 1.0f / std::sqrt((float)dh);
    std::vector<float> ctx((size_t)s * d, 0.0f);
    for (int i = 0; i < s; ++i) {
        const int limit = causal ? i + 1 : s;
        for (int h = 0; h < heads; ++h) {
            const int off = h * dh;
            std::vector<float> sc(limit);
            for (int j = 0; j < limit; ++j) {
                float a = 0.0f;
                for (int c = 0; c < dh; ++c)
                    a += q[(size_t)i * d + off + c] * k[(size_t)j * d + off + c];
                sc[j] = a * scale;
            }
            float mx = sc[0];
            for (int j = 1; j < limit; ++j)
                if (sc[j] > mx) mx = sc[j];
            float sum = 0.0f;
            for (int j = 0; j < limit; ++j) {
                sc[j] = std::exp(sc[j] - mx);
                sum += sc[j];
            }
            for (int j = 0; j < limit; ++j) sc[j] /= sum;
            for (int c = 0; c < dh; ++c) {
                float a = 0.0f;
                for (int j = 0; j < limit; ++j) a += sc[j] * v[(size_t)j * d + off + c];
                ctx[(size_t)i * d + off + c] = a;
            }
        }
    }

    std::vector<float> attn((size_t)s * d, 0.0f);
    for (int i = 0; i < s; ++i)
        for (int c = 0; c < d; ++c) {
            float a = 0.0f;
            for (int t = 0; t < d; ++t) a += ctx[(size_t)i * d + t] * wo[(size_t)t * d + c];
            attn[(size_t)i * d + c] = a;
        }

    std::vector<float> ln1_g = get(w, "ln1_g"), ln1_b = get(w, "ln1_b");
    std::vector<float> ln2_g = get(w, "ln2_g"), ln2_b = get(w, "ln2_b");
    std::vector<uint32_t> w1_dims;
    std::vector<float> w1 = get(w, "w_1", &w1_dims);
    std::vector<float> b1 = get(w, "b_1");
    std::vector<float> w2 = get(w, "w_2");
    std::vector<float> b2 = get(w, "b_2");
    const int ffn = (int)w1_dims[1];

    Activation y(s, d);
    for (int i = 0; i < s; ++i) {
        std::vector<float> row(d);
        for (int c = 0; c < d; ++c) row[c] = x.at(i, c) + attn[(size_t)i * d + c];
        float sum = 0.0f;
        for (int c = 0; c < d; ++c) sum += row[c];
        const float mean = sum / (float)d;
        float vs = 0.0f;
        for (int c = 0; c < d; ++c) vs += (row[c] - mean) * (row[c] - mean);
        const float inv = 1.0f / std::sqrt(vs / (float)d + kernels::kLnEps);
        for (int c = 0; c < d; ++c) y.at(i, c) = (row[c] - mean) * inv * ln1_g[c] + ln1_b[c];
    }

    Activation z(s, d);
    for (int i = 0; i < s; ++i) {
        std::vector<float> act(ffn);
        for (int c = 0; c < ffn; ++c) {
            float a = 0.0f;
            for (int t = 0; t < d; ++t) a += y.at(i, t) * w1[(size_t)t * ffn + c];
            const float t2 = a + b1[c];
            const float u = t2 + kernels::kGeluC1 * (t2 * t2 * t2);
            act[c] = 0.5f * t2 * (1.0f + std::tanh(kernels::kGeluC0 * u));
        }
        std::vector<float> row(d);
        for (int c = 0; c < d; ++c) {
            float a = 0.0f;
            for (int t = 0; t < ffn; ++t) a += act[t] * w2[(size_t)t * d + c];
            row[c] = y.at(i, c) + (a + b2[c]);
        }
        float sum = 0.0f;
        for (int c = 0; c < d; ++c) sum += row[c];
        const float mean = sum / (float)d;
        float vs = 0.0f;
        for (int c = 0; c < d; ++c) vs += (row[c] - mean) * (row[c] - mean);
        const float inv = 1.0f / std::sqrt(vs / (float)d + kernels::kLnEps);
        for (int c = 0; c < d; ++c) z.at(i, c) = (row[c] - mean) * inv * ln2_g[c] + ln2_b[c];
    }
    return z;
}

}  // namespace

Activation embed(const LayerWeights& weights, const std::vector<int>& token_ids) {
    const Tensor& tok = weights.tensor("tok_table");
    const Tensor& pos = weights.tensor("pos_table");
    const int vocab = (int)tok.dims[0];
    const int d = (int)tok.dims[1];
    if (token_ids.empty() || (int)token_ids.size() > (int)pos.dims[0])
        throw InvalidInput("reference embed: bad input length");
    Activation a((int)token_ids.size(), d);
    for (int i = 0; i < a.seq_len; ++i) {
        if (token_ids[i] < 0 || token_ids[i] >= vocab)
            throw InvalidInput("reference embed: token id out of range");
        for (int c = 0; c < d; ++c)
            a.at(i, c) = tok.data[(size_t)token_ids[i] * d + c] + pos.data[(size_t)i * d + c];
    }
    return a;
}

Activation encoder_forward(const LayerWeights& weights, const Activation& x) {
    return block(weights, x, false);
}

Activation decoder_forward(const LayerWeights& weights, const Activation& x) {
    return block(weights, x, true);
}

std::vector<float> head_forward(const LayerWeights& weights, const Activation& x) {
    const Tensor& w = weights.tensor("w");
    const Tensor& b = weights.tensor("b");
    const int d = (int)w.dims[0];
    const int out_dim = (int)w.dims[1];
    if (x.dim != d || x.seq_len <= 0) throw InvalidInput("reference head: shape mismatch");
    const bool pooled = weights.record.role == store::Role::Pooling;
    const int row = pooled ? 0 : x.seq_len - 1;
    std::vector<float> out(out_dim);
    for (int j = 0; j < out_dim; ++j) {
        float a = 0.0f;
        for (int c = 0; c < d; ++c) a += x.at(row, c) * w.data[(size_t)c * out_dim + j];
        a += b.data[j];
        out[j] = pooled ? std::tanh(a) : a;
    }
    return out;
}

}  // namespace hermes::ref
