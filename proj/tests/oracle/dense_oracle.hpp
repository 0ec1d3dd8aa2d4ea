#pragma once

// Straight-line dense recomputation of the model's forward pass, used as a
// reference in tests. Shares nothing with the library except the parameter
// store it reads weights from.

#include "tljd/param_store.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat from_store(const tljd::ParamStore& store, const std::string& name)
{
    const tljd::Tensor& t = store.value(name);
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j)
            m[i][j] = t.data()[i * t.cols() + j];
    return m;
}

inline Mat zeros(std::size_t r, std::size_t c)
{
    return Mat(r, std::vector<double>(c, 0.0));
}

inline Mat matmul(const Mat& a, const Mat& b)
{
    Mat out = zeros(a.size(), b[0].size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j)
                out[i][j] += a[i][k] * b[k][j];
    return out;
}

inline Mat transpose(const Mat& a)
{
    Mat out = zeros(a[0].size(), a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j)
            out[j][i] = a[i][j];
    return out;
}

inline Mat plus(const Mat& a, const Mat& b)
{
    Mat out = a;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j)
            out[i][j] += b[i][j];
    return out;
}

/// Adds a 1 x c row to every row.
inline Mat plus_row(const Mat& a, const Mat& row)
{
    Mat out = a;
    for (auto& r : out)
        for (std::size_t j = 0; j < r.size(); ++j)
            r[j] += row[0][j];
    return out;
}

inline Mat relu(Mat a)
{
    for (auto& r : a)
        for (double& v : r)
            v = v > 0.0 ? v : 0.0;
    return a;
}

inline Mat softmax_rows(Mat a)
{
    for (auto& r : a) {
        double mx = r[0];
        for (double v : r)
            mx = std::max(mx, v);
        double s = 0.0;
        for (double& v : r) {
            v = std::exp(v - mx);
            s += v;
        }
        for (double& v : r)
            v /= s;
    }
    return a;
}

inline Mat layer_norm(const Mat& a, const Mat& gain, const Mat& bias, double eps)
{
    Mat out = a;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double n = static_cast<double>(a[i].size());
        double mu = 0.0;
        for (double v : a[i])
            mu += v;
        mu /= n;
        double var = 0.0;
        for (double v : a[i])
            var += (v - mu) * (v - mu);
        var /= n;
        for (std::size_t j = 0; j < a[i].size(); ++j)
            out[i][j] = gain[0][j] * (a[i][j] - mu) / std::sqrt(var + eps) + bias[0][j];
    }
    return out;
}

struct Dims {
    std::size_t d = 4;
    std::size_t heads = 2;
    std::size_t layers = 1;
    double eps = 1e-5;
};

inline Mat multi_head(const tljd::ParamStore& s, const std::string& p, const Mat& h, const Dims& dims)
{
    const std::size_t dh = dims.d / dims.heads;
    Mat concat = zeros(h.size(), dims.d);
    for (std::size_t m = 0; m < dims.heads; ++m) {
        const std::string hp = p + ".head" + std::to_string(m);
        Mat q = matmul(h, from_store(s, hp + ".wq"));
        Mat k = matmul(h, from_store(s, hp + ".wk"));
        Mat v = matmul(h, from_store(s, hp + ".wv"));
        Mat scores = matmul(q, transpose(k));
        for (auto& r : scores)
            for (double& x : r)
                x /= std::sqrt(static_cast<double>(dh));
        Mat head = matmul(softmax_rows(scores), v);
        for (std::size_t i = 0; i < h.size(); ++i)
            for (std::size_t j = 0; j < dh; ++j)
                concat[i][m * dh + j] = head[i][j];
    }
    return matmul(concat, from_store(s, p + ".wo"));
}

inline Mat arithmetic(const tljd::ParamStore& s, const std::string& p, const Mat& h, const Dims& dims)
{
    Mat add = multi_head(s, p, h, dims);
    Mat shifted = h;
    for (auto& r : shifted)
        for (double& v : r)
            v = std::log((v > 0.0 ? v : 0.0) + 1.0);
    Mat mult = multi_head(s, p, shifted, dims);
    for (auto& r : mult)
        for (double& v : r)
            v = std::exp(v);
    Mat stacked = add;
    stacked.insert(stacked.end(), mult.begin(), mult.end());
    Mat out = matmul(from_store(s, p + ".fc.w"), stacked);
    const Mat b = from_store(s, p + ".fc.b");
    for (std::size_t i = 0; i < out.size(); ++i)
        for (double& v : out[i])
            v += b[i][0];
    return out;
}

inline Mat transformer(const tljd::ParamStore& s, const std::string& p, const Mat& h, const Dims& dims)
{
    Mat z = layer_norm(plus(h, arithmetic(s, p, h, dims)), from_store(s, p + ".ln1.gain"),
                       from_store(s, p + ".ln1.bias"), dims.eps);
    Mat hidden = relu(plus_row(matmul(z, from_store(s, p + ".ffn.w1")), from_store(s, p + ".ffn.b1")));
    Mat ffn = plus_row(matmul(hidden, from_store(s, p + ".ffn.w2")), from_store(s, p + ".ffn.b2"));
    return layer_norm(plus(z, ffn), from_store(s, p + ".ln2.gain"), from_store(s, p + ".ln2.bias"), dims.eps);
}

inline double head(const tljd::ParamStore& s, const std::string& p, const std::vector<double>& cls, const Dims& dims)
{
    Mat n = relu(layer_norm(Mat{cls}, from_store(s, p + ".ln.gain"), from_store(s, p + ".ln.bias"), dims.eps));
    const Mat w = from_store(s, p + ".w");
    double y = from_store(s, p + ".b")[0][0];
    for (std::size_t j = 0; j < dims.d; ++j)
        y += n[0][j] * w[j][0];
    return y;
}

/// Column embedding for each training column (rows of `columns`): MLP1(v) * MLP2(v).
inline Mat column_embeddings(const tljd::ParamStore& s, const Mat& columns)
{
    auto mlp = [&](const std::string& p) {
        Mat hidden = relu(plus_row(matmul(columns, from_store(s, p + ".w1")), from_store(s, p + ".b1")));
        return plus_row(matmul(hidden, from_store(s, p + ".w2")), from_store(s, p + ".b2"));
    };
    Mat vec = mlp("col.mlp1");
    Mat gain = mlp("col.mlp2");
    for (std::size_t j = 0; j < vec.size(); ++j)
        for (double& v : vec[j])
            v *= gain[j][0];
    return vec;
}

/// Token matrix after the encoder stack, (K+1) x d.
inline Mat encode(const tljd::ParamStore& s, const Mat& train_columns, const std::vector<double>& x, const Dims& dims,
                  bool column_encoder)
{
    const std::size_t K = x.size();
    Mat col = column_encoder ? column_embeddings(s, train_columns) : Mat(K, std::vector<double>(dims.d, 1.0));
    Mat h;
    h.push_back(from_store(s, "cls")[0]);
    for (std::size_t j = 0; j < K; ++j) {
        const auto w = from_store(s, "row.w." + std::to_string(j))[0];
        const auto b = from_store(s, "row.b." + std::to_string(j))[0];
        std::vector<double> tok(dims.d);
        for (std::size_t c = 0; c < dims.d; ++c)
            tok[c] = (w[c] * x[j] + b[c]) * col[j][c];
        h.push_back(tok);
    }
    for (std::size_t l = 0; l < dims.layers; ++l)
        h = transformer(s, "enc.layer" + std::to_string(l), h, dims);
    return h;
}

/// Forward pass of the variant with one transformer layer and head in place of the experts.
inline double forward_single(const tljd::ParamStore& s, const Mat& train_columns, const std::vector<double>& x,
                             const Dims& dims)
{
    const Mat z = transformer(s, "single.layer", encode(s, train_columns, x, dims, true), dims);
    return head(s, "single.head", z[0], dims);
}

struct Result {
    double y_hat = 0.0;
    std::array<double, 4> gate{};
    std::array<double, 4> expert{};
};

/// Full-model forward for one scaled sample. `types[j]` is 0..3 (PJ, DJ, JE, JC).
inline Result forward(const tljd::ParamStore& s, const Mat& train_columns, const std::vector<int>& types,
                      const std::vector<double>& x, const Dims& dims, bool column_encoder = true)
{
    const std::size_t K = x.size();
    const Mat h = encode(s, train_columns, x, dims, column_encoder);

    static const char* keys[4] = {"pj", "dj", "je", "jc"};
    Result r;
    for (int t = 0; t < 4; ++t) {
        Mat block{h[0]};
        for (std::size_t j = 0; j < K; ++j)
            if (types[j] == t)
                block.push_back(h[j + 1]);
        const std::string p = std::string("expert.") + keys[t];
        Mat out = transformer(s, p + ".layer", block, dims);
        r.expert[static_cast<std::size_t>(t)] = head(s, p + ".head", out[0], dims);
    }
    Mat logits = plus_row(matmul(Mat{h[0]}, from_store(s, "gate.w")), from_store(s, "gate.b"));
    Mat a = softmax_rows(logits);
    for (std::size_t t = 0; t < 4; ++t) {
        r.gate[t] = a[0][t];
        r.y_hat += a[0][t] * r.expert[t];
    }
    return r;
}

} // namespace oracle
