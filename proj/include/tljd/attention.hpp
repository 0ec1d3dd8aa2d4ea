#pragma once

#include "tljd/errors.hpp"
#include "tljd/ops.hpp"
#include "tljd/param_store.hpp"
#include "tljd/tape.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace tljd {

struct AttentionShape {
    std::size_t tokens = 0; ///< rows of the token matrix (indicators + CLS)
    std::size_t d = 0;
    std::size_t heads = 1;
    std::size_t d_ff = 0;
    double ln_eps = 1e-5;

    [[nodiscard]] std::size_t head_dim() const { return d / heads; }

    void validate() const
    {
        if (tokens == 0 || d == 0 || d_ff == 0)
            throw ConfigError("attention layer: tokens, d and d_ff must be positive");
        if (heads == 0 || d % heads != 0)
            throw ConfigError("attention layer: d=" + std::to_string(d) + " is not divisible by heads=" +
                              std::to_string(heads));
    }
};

/// Creates the parameters of one arithmetic-attention transformer layer:
///   {prefix}.head{m}.wq|wk|wv, {prefix}.wo, {prefix}.fc.w, {prefix}.fc.b,
///   {prefix}.ffn.w1|b1|w2|b2, {prefix}.ln1.gain|bias, {prefix}.ln2.gain|bias
inline void init_attention_layer(ParamStore& store, const std::string& prefix, const AttentionShape& s)
{
    s.validate();
    const std::size_t dh = s.head_dim();
    for (std::size_t m = 0; m < s.heads; ++m) {
        const std::string head = prefix + ".head" + std::to_string(m);
        store.add_uniform(head + ".wq", {s.d, dh}, s.d);
        store.add_uniform(head + ".wk", {s.d, dh}, s.d);
        store.add_uniform(head + ".wv", {s.d, dh}, s.d);
    }
    store.add_uniform(prefix + ".wo", {s.d, s.d}, s.d);
    store.add_uniform(prefix + ".fc.w", {s.tokens, 2 * s.tokens}, 2 * s.tokens);
    store.add_constant(prefix + ".fc.b", {s.tokens, 1}, 0.0);
    store.add_uniform(prefix + ".ffn.w1", {s.d, s.d_ff}, s.d);
    store.add_constant(prefix + ".ffn.b1", {1, s.d_ff}, 0.0);
    store.add_uniform(prefix + ".ffn.w2", {s.d_ff, s.d}, s.d_ff);
    store.add_constant(prefix + ".ffn.b2", {1, s.d}, 0.0);
    store.add_constant(prefix + ".ln1.gain", {1, s.d}, 1.0);
    store.add_constant(prefix + ".ln1.bias", {1, s.d}, 0.0);
    store.add_constant(prefix + ".ln2.gain", {1, s.d}, 1.0);
    store.add_constant(prefix + ".ln2.bias", {1, s.d}, 0.0);
}

/// Parameters of one transformer layer bound to a tape.
struct AttentionLayer {
    AttentionShape shape;
    std::vector<Var> wq, wk, wv;
    Var wo, fc_w, fc_b;
    Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;

    static AttentionLayer bind(Tape& tape, const std::string& prefix, const AttentionShape& s)
    {
        s.validate();
        AttentionLayer l;
        l.shape = s;
        for (std::size_t m = 0; m < s.heads; ++m) {
            const std::string head = prefix + ".head" + std::to_string(m);
            l.wq.push_back(tape.param(head + ".wq"));
            l.wk.push_back(tape.param(head + ".wk"));
            l.wv.push_back(tape.param(head + ".wv"));
        }
        l.wo = tape.param(prefix + ".wo");
        l.fc_w = tape.param(prefix + ".fc.w");
        l.fc_b = tape.param(prefix + ".fc.b");
        l.ffn_w1 = tape.param(prefix + ".ffn.w1");
        l.ffn_b1 = tape.param(prefix + ".ffn.b1");
        l.ffn_w2 = tape.param(prefix + ".ffn.w2");
        l.ffn_b2 = tape.param(prefix + ".ffn.b2");
        l.ln1_gain = tape.param(prefix + ".ln1.gain");
        l.ln1_bias = tape.param(prefix + ".ln1.bias");
        l.ln2_gain = tape.param(prefix + ".ln2.gain");
        l.ln2_bias = tape.param(prefix + ".ln2.bias");
        return l;
    }
};

/// Standard multi-head self-attention: concat_m softmax(Q_m K_m^T / sqrt(d')) V_m, times W^O.
inline Var multi_head(const Var& h, const AttentionLayer& layer)
{
    const auto& s = layer.shape;
    if (h.cols() != s.d)
        throw ShapeError("multi_head: input " + shape_to_string(h.value().shape()) + " does not have d=" +
                         std::to_string(s.d) + " columns");
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(s.head_dim()));
    std::vector<Var> heads;
    heads.reserve(s.heads);
    for (std::size_t m = 0; m < s.heads; ++m) {
        Var q = matmul(h, layer.wq[m]);
        Var k = matmul(h, layer.wk[m]);
        Var v = matmul(h, layer.wv[m]);
        Var weights = softmax(scale(matmul_nt(q, k), inv_sqrt), 1);
        heads.push_back(matmul(weights, v));
    }
    Var concat = heads.size() == 1 ? heads.front() : concat_cols(heads);
    return matmul(concat, layer.wo);
}

inline Var att_additive(const Var& h, const AttentionLayer& layer)
{
    return multi_head(h, layer);
}

/// exp(MultiHead(log(relu(H) + 1))); the shift keeps every log argument >= 1.
inline Var att_multiplicative(const Var& h, const AttentionLayer& layer)
{
    return exp(multi_head(log(add_scalar(relu(h), 1.0)), layer));
}

/// Mixes the stacked additive and multiplicative outputs along the token
/// axis: out = W_fc [Att_add; Att_mult] + b_fc, with W_fc of shape T x 2T and
/// one bias per output token.
inline Var arithmetic_attention(const Var& h, const AttentionLayer& layer)
{
    const std::size_t t = h.rows();
    const auto& fw = layer.fc_w.value();
    const auto& fb = layer.fc_b.value();
    if (fw.rows() != t || fw.cols() != 2 * t || fb.rows() != t || fb.cols() != 1)
        throw ConfigError("arithmetic_attention: token-mixing weights " + shape_to_string(fw.shape()) + " / bias " +
                          shape_to_string(fb.shape()) + " do not fit " + std::to_string(t) + " tokens");
    Var stacked = concat_rows({att_additive(h, layer), att_multiplicative(h, layer)});
    return add_col_bias(matmul(layer.fc_w, stacked), layer.fc_b);
}

inline Var feed_forward(const Var& z, const AttentionLayer& layer)
{
    Var hidden = relu(add_row_bias(matmul(z, layer.ffn_w1), layer.ffn_b1));
    return add_row_bias(matmul(hidden, layer.ffn_w2), layer.ffn_b2);
}

/// Post-norm transformer layer: z = LN(H + Att(H)); out = LN(z + FFN(z)).
inline Var transformer_layer(const Var& h, const AttentionLayer& layer)
{
    const double eps = layer.shape.ln_eps;
    Var z = layer_norm(add(h, arithmetic_attention(h, layer)), layer.ln1_gain, layer.ln1_bias, eps);
    return layer_norm(add(z, feed_forward(z, layer)), layer.ln2_gain, layer.ln2_bias, eps);
}

inline Var run_stack(const Var& h0, std::span<const AttentionLayer> stack)
{
    Var h = h0;
    for (const auto& layer : stack)
        h = transformer_layer(h, layer);
    return h;
}

} // namespace tljd
