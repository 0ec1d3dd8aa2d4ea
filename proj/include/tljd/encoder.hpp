#pragma once

#include "tljd/errors.hpp"
#include "tljd/ops.hpp"
#include "tljd/param_store.hpp"
#include "tljd/tape.hpp"

#include <span>
#include <string>
#include <vector>

namespace tljd {

// Row encoder: one affine map per indicator, x -> w_j * x + b_j.

inline void init_row_encoder(ParamStore& store, std::size_t K, std::size_t d)
{
    for (std::size_t j = 0; j < K; ++j) {
        store.add_uniform("row.w." + std::to_string(j), {1, d}, 1);
        store.add_constant("row.b." + std::to_string(j), {1, d}, 0.0);
    }
}

struct RowEncoder {
    Var weights; ///< K x d, row j is w_j
    Var biases;  ///< K x d, row j is b_j

    static RowEncoder bind(Tape& tape, std::size_t K)
    {
        std::vector<Var> w, b;
        w.reserve(K);
        b.reserve(K);
        for (std::size_t j = 0; j < K; ++j) {
            w.push_back(tape.param("row.w." + std::to_string(j)));
            b.push_back(tape.param("row.b." + std::to_string(j)));
        }
        return {concat_rows(w), concat_rows(b)};
    }
};

/// K x d matrix whose j-th row is w_j * x[j] + b_j.
inline Var encode_row(const RowEncoder& enc, std::span<const double> x)
{
    const std::size_t K = enc.weights.rows();
    if (x.size() != K)
        throw ShapeError("encode_row: got " + std::to_string(x.size()) + " values for " + std::to_string(K) +
                         " indicators");
    Var xs = enc.weights.tape().constant(Tensor::column({x.begin(), x.end()}));
    return add(scale_rows(enc.weights, xs), enc.biases);
}

// Column encoder: two MLPs over each frozen training column v_j (length N).
// MLP1 maps v_j to a d-vector, MLP2 to a scalar that rescales it.

inline void init_column_encoder(ParamStore& store, std::size_t n_train, std::size_t d_hidden, std::size_t d)
{
    store.add_uniform("col.mlp1.w1", {n_train, d_hidden}, n_train);
    store.add_constant("col.mlp1.b1", {1, d_hidden}, 0.0);
    store.add_uniform("col.mlp1.w2", {d_hidden, d}, d_hidden);
    store.add_constant("col.mlp1.b2", {1, d}, 0.0);
    store.add_uniform("col.mlp2.w1", {n_train, d_hidden}, n_train);
    store.add_constant("col.mlp2.b1", {1, d_hidden}, 0.0);
    store.add_uniform("col.mlp2.w2", {d_hidden, 1}, d_hidden);
    store.add_constant("col.mlp2.b2", {1, 1}, 0.0);
}

struct ColumnEncoder {
    Var mlp1_w1, mlp1_b1, mlp1_w2, mlp1_b2;
    Var mlp2_w1, mlp2_b1, mlp2_w2, mlp2_b2;

    static ColumnEncoder bind(Tape& tape)
    {
        return {tape.param("col.mlp1.w1"), tape.param("col.mlp1.b1"), tape.param("col.mlp1.w2"),
                tape.param("col.mlp1.b2"), tape.param("col.mlp2.w1"), tape.param("col.mlp2.b1"),
                tape.param("col.mlp2.w2"), tape.param("col.mlp2.b2")};
    }

    [[nodiscard]] std::size_t input_width() const { return mlp1_w1.rows(); }
};

/// Two affine layers with relu in between, applied to every row of `x`.
inline Var mlp2(const Var& x, const Var& w1, const Var& b1, const Var& w2, const Var& b2)
{
    Var hidden = relu(add_row_bias(matmul(x, w1), b1));
    return add_row_bias(matmul(hidden, w2), b2);
}

/// `columns` holds one training column per row (K x N). Returns K x d where
/// row j is MLP1(v_j) * MLP2(v_j).
inline Var encode_columns(const ColumnEncoder& enc, const Var& columns)
{
    if (columns.cols() != enc.input_width())
        throw ShapeError("encode_columns: column length " + std::to_string(columns.cols()) +
                         " does not match MLP input width " + std::to_string(enc.input_width()));
    Var vec = mlp2(columns, enc.mlp1_w1, enc.mlp1_b1, enc.mlp1_w2, enc.mlp1_b2);
    Var gain = mlp2(columns, enc.mlp2_w1, enc.mlp2_b1, enc.mlp2_w2, enc.mlp2_b2);
    return scale_rows(vec, gain);
}

inline void init_cls(ParamStore& store, std::size_t d)
{
    store.add_uniform("cls", {1, d}, 1);
}

/// H = [cls; row_1 * col_1; ...; row_K * col_K], a (K+1) x d matrix.
inline Var fuse(const Var& row_embs, const Var& col_embs, const Var& cls)
{
    if (row_embs.rows() != col_embs.rows() || row_embs.cols() != col_embs.cols())
        throw ShapeError("fuse: row embeddings " + shape_to_string(row_embs.value().shape()) +
                         " vs column embeddings " + shape_to_string(col_embs.value().shape()));
    if (cls.rows() != 1 || cls.cols() != row_embs.cols())
        throw ShapeError("fuse: cls embedding " + shape_to_string(cls.value().shape()) + " does not match d=" +
                         std::to_string(row_embs.cols()));
    return concat_rows({cls, mul(row_embs, col_embs)});
}

} // namespace tljd
