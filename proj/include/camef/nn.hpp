#pragma once

#include <cmath>
#include <random>
#include <string>

#include "camef/graph.hpp"
#include "camef/params.hpp"

namespace camef::nn {

using ag::Tape;
using ag::VarId;

/// y = x W + b with x as (rows, in), W as (in, out), b as (out).
inline VarId linear(Tape& t, VarId x, const ParameterSet& ps, const std::string& prefix) {
    VarId w = t.param(ps, prefix + ".w");
    VarId b = t.param(ps, prefix + ".b");
    return t.add_rowwise(t.matmul(x, w), b);
}

inline void init_linear(ParameterSet& ps, const std::string& prefix, std::size_t in,
                        std::size_t out, std::mt19937_64& rng, bool trainable = true) {
    double std = 1.0 / std::sqrt(double(in));
    ps.add(prefix + ".w", Tensor::randn({in, out}, rng, std), trainable);
    ps.add(prefix + ".b", Tensor({out}), trainable);
}

inline void init_layer_norm(ParameterSet& ps, const std::string& prefix, std::size_t dim,
                            bool trainable = true) {
    ps.add(prefix + ".g", Tensor({dim}, 1.0), trainable);
    ps.add(prefix + ".b", Tensor({dim}), trainable);
}

inline VarId layer_norm(Tape& t, VarId x, const ParameterSet& ps,
                        const std::string& prefix) {
    return t.layer_norm(x, t.param(ps, prefix + ".g"), t.param(ps, prefix + ".b"));
}

/// Multi-head scaled dot-product self-attention over tokens (S, D).
inline VarId self_attention(Tape& t, VarId x, const ParameterSet& ps,
                            const std::string& prefix, std::size_t heads, bool causal) {
    std::size_t dim = t.value(x).cols();
    if (heads == 0 || dim % heads != 0)
        throw ConfigError("head count " + std::to_string(heads) +
                          " does not divide token dim " + std::to_string(dim));
    std::size_t hd = dim / heads;
    VarId q = linear(t, x, ps, prefix + ".wq");
    VarId k = linear(t, x, ps, prefix + ".wk");
    VarId v = linear(t, x, ps, prefix + ".wv");
    VarId merged = -1;
    for (std::size_t h = 0; h < heads; ++h) {
        VarId qh = t.slice_cols(q, h * hd, (h + 1) * hd);
        VarId kh = t.slice_cols(k, h * hd, (h + 1) * hd);
        VarId vh = t.slice_cols(v, h * hd, (h + 1) * hd);
        VarId scores = t.scale(t.matmul_nt(qh, kh), 1.0 / std::sqrt(double(hd)));
        VarId probs = t.softmax_rows(scores, causal);
        VarId oh = t.matmul(probs, vh);
        merged = h == 0 ? oh : t.concat_cols(merged, oh);
    }
    return linear(t, merged, ps, prefix + ".wo");
}

/// Pre-norm transformer block: x + attn(ln1(x)); then x + mlp(ln2(x)).
/// MLP expansion ratio 4; the causal flag masks attention to positions <= t.
inline VarId transformer_block(Tape& t, VarId x, const ParameterSet& ps,
                               const std::string& prefix, std::size_t heads,
                               bool causal) {
    if (t.value(x).rank() != 2)
        throw ShapeError("transformer block expects (sequence, dim) input");
    VarId a = self_attention(t, layer_norm(t, x, ps, prefix + ".ln1"), ps,
                             prefix + ".attn", heads, causal);
    x = t.add(x, a);
    VarId h = layer_norm(t, x, ps, prefix + ".ln2");
    h = linear(t, h, ps, prefix + ".mlp.fc");
    h = t.gelu(h);
    h = linear(t, h, ps, prefix + ".mlp.proj");
    return t.add(x, h);
}

inline void init_transformer_block(ParameterSet& ps, const std::string& prefix,
                                   std::size_t dim, std::mt19937_64& rng,
                                   bool trainable = true) {
    init_layer_norm(ps, prefix + ".ln1", dim, trainable);
    init_linear(ps, prefix + ".attn.wq", dim, dim, rng, trainable);
    init_linear(ps, prefix + ".attn.wk", dim, dim, rng, trainable);
    init_linear(ps, prefix + ".attn.wv", dim, dim, rng, trainable);
    init_linear(ps, prefix + ".attn.wo", dim, dim, rng, trainable);
    init_layer_norm(ps, prefix + ".ln2", dim, trainable);
    init_linear(ps, prefix + ".mlp.fc", dim, 4 * dim, rng, trainable);
    init_linear(ps, prefix + ".mlp.proj", 4 * dim, dim, rng, trainable);
}

}  // namespace camef::nn
