#pragma once

#include <cctype>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "camef/common.hpp"
#include "camef/corpus.hpp"
#include "camef/graph.hpp"
#include "camef/market.hpp"
#include "camef/nn.hpp"
#include "camef/params.hpp"
#include "camef/tensor.hpp"

namespace camef::model {

using ag::Tape;
using ag::VarId;

enum class Distance { Euclidean, Cosine };

inline const char* to_string(Distance d) {
    return d == Distance::Euclidean ? "euclidean" : "cosine";
}

inline Distance distance_from_string(const std::string& s) {
    if (s == "euclidean") return Distance::Euclidean;
    if (s == "cosine") return Distance::Cosine;
    throw ConfigError("unknown distance: " + s);
}

struct ModelConfig {
    std::size_t text_embed_dim = 768;
    std::size_t text_proj_hidden = 1024;
    std::size_t series_embed_dim = 768;
    std::size_t residual_hidden = 768;
    std::size_t fusion_hidden = 1024;
    std::size_t decoder_token_count = 8;  // s
    std::size_t decoder_layers = 12;      // l
    std::size_t decoder_heads = 4;
    std::size_t regressor_layers = 4;     // k
    std::size_t regressor_hidden = 1024;
    double dropout = 0.1;
    double margin = 1.0;
    Distance distance = Distance::Euclidean;
    std::size_t d = 1;                    // forecast channels
    std::size_t pred_len = 35;
    double time_weight = 1.0;
    double causal_weight = 1.0;

    // internal encoder details (pretrained-model substitutes)
    std::size_t vocab_size = 4096;
    std::size_t max_tokens = 512;
    std::size_t text_encoder_layers = 2;
    std::size_t text_encoder_heads = 4;
    std::size_t series_encoder_layers = 2;
    std::size_t series_encoder_heads = 4;
    std::size_t patch_len = 5;

    std::size_t token_dim() const { return fusion_hidden / decoder_token_count; }

    void validate() const {
        auto positive = [](std::size_t v, const char* name) {
            if (v == 0) throw ConfigError(std::string(name) + " must be positive");
        };
        positive(text_embed_dim, "text-embed-dim");
        positive(text_proj_hidden, "text-proj-hidden");
        positive(series_embed_dim, "series-embed-dim");
        positive(residual_hidden, "residual-hidden");
        positive(fusion_hidden, "fusion-hidden");
        positive(decoder_token_count, "decoder-token-count");
        positive(decoder_layers, "decoder-layers");
        positive(decoder_heads, "decoder-heads");
        positive(regressor_hidden, "regressor-hidden");
        positive(pred_len, "pred-len");
        positive(vocab_size, "vocab-size");
        positive(max_tokens, "max-tokens");
        positive(patch_len, "patch-len");
        if (text_embed_dim != series_embed_dim)
            throw ConfigError("text and series embedding dims must match for fusion");
        if (fusion_hidden % decoder_token_count != 0)
            throw ConfigError("decoder token count " +
                              std::to_string(decoder_token_count) +
                              " does not divide fusion dim " +
                              std::to_string(fusion_hidden));
        if (token_dim() % decoder_heads != 0)
            throw ConfigError("decoder heads " + std::to_string(decoder_heads) +
                              " do not divide token dim " + std::to_string(token_dim()));
        if (text_embed_dim % text_encoder_heads != 0 ||
            series_embed_dim % series_encoder_heads != 0)
            throw ConfigError("encoder heads must divide embedding dim");
        if (d != 1 && d != 4) throw ConfigError("forecast channels must be 1 or 4");
        if (dropout < 0.0 || dropout >= 1.0)
            throw ConfigError("dropout must be in [0,1)");
        if (margin < 0.0) throw ConfigError("margin must be non-negative");
    }

    static ModelConfig paper() { return ModelConfig{}; }

    /// Same topology at a scale where training runs in seconds.
    static ModelConfig desk() {
        ModelConfig c;
        c.text_embed_dim = 32;
        c.text_proj_hidden = 48;
        c.series_embed_dim = 32;
        c.residual_hidden = 32;
        c.fusion_hidden = 64;
        c.decoder_token_count = 4;
        c.decoder_layers = 2;
        c.decoder_heads = 4;
        c.regressor_layers = 2;
        c.regressor_hidden = 48;
        c.vocab_size = 512;
        c.max_tokens = 64;
        c.text_encoder_layers = 1;
        c.series_encoder_layers = 1;
        c.validate();
        return c;
    }
};

// ---- tokenizer -------------------------------------------------------------

/// Whitespace split, case-folded, FNV-1a hashed into the vocabulary.
inline std::vector<std::size_t> tokenize(const std::string& text,
                                         std::size_t vocab_size) {
    std::vector<std::size_t> ids;
    std::istringstream is(text);
    std::string w;
    while (is >> w) {
        std::uint64_t h = 1469598103934665603ull;
        for (char c : w) {
            h ^= std::uint64_t(std::tolower(static_cast<unsigned char>(c)));
            h *= 1099511628211ull;
        }
        ids.push_back(std::size_t(h % vocab_size));
    }
    return ids;
}

// ---- initialization --------------------------------------------------------

inline void init_model(ParameterSet& ps, const ModelConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    ps.add("text.embed", Tensor::randn({cfg.vocab_size, cfg.text_embed_dim}, rng, 0.02));
    for (std::size_t i = 0; i < cfg.text_encoder_layers; ++i)
        nn::init_transformer_block(ps, "text.block" + std::to_string(i),
                                   cfg.text_embed_dim, rng);
    nn::init_linear(ps, "text.proj.l1", cfg.text_embed_dim, cfg.text_proj_hidden, rng);
    nn::init_linear(ps, "text.proj.l2", cfg.text_proj_hidden, cfg.text_proj_hidden, rng);
    nn::init_linear(ps, "text.proj.l3", cfg.text_proj_hidden, cfg.text_embed_dim, rng);

    nn::init_linear(ps, "series.patch", cfg.patch_len * cfg.d, cfg.series_embed_dim, rng);
    for (std::size_t i = 0; i < cfg.series_encoder_layers; ++i)
        nn::init_transformer_block(ps, "series.block" + std::to_string(i),
                                   cfg.series_embed_dim, rng);
    nn::init_linear(ps, "series.residual.l1", cfg.series_embed_dim, cfg.residual_hidden,
                    rng);
    nn::init_linear(ps, "series.residual.l2", cfg.residual_hidden, cfg.residual_hidden,
                    rng);
    nn::init_linear(ps, "series.residual.l3", cfg.residual_hidden, cfg.series_embed_dim,
                    rng);

    nn::init_linear(ps, "fusion.l1", 2 * cfg.text_embed_dim, cfg.fusion_hidden, rng);
    nn::init_linear(ps, "fusion.l2", cfg.fusion_hidden, cfg.fusion_hidden, rng);

    ps.add("decoder.pos",
           Tensor::randn({cfg.decoder_token_count, cfg.token_dim()}, rng, 0.02));
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i)
        nn::init_transformer_block(ps, "decoder.block" + std::to_string(i),
                                   cfg.token_dim(), rng);
    nn::init_layer_norm(ps, "decoder.ln_f", cfg.token_dim());

    for (std::size_t i = 0; i < cfg.regressor_layers; ++i)
        nn::init_linear(ps, "regressor.l" + std::to_string(i),
                        i == 0 ? cfg.fusion_hidden : cfg.regressor_hidden,
                        cfg.regressor_hidden, rng);
    nn::init_linear(ps, "regressor.out",
                    cfg.regressor_layers == 0 ? cfg.fusion_hidden : cfg.regressor_hidden,
                    cfg.d * cfg.pred_len, rng);
}

// ---- stages ----------------------------------------------------------------

/// Token embedding + bidirectional contextual blocks + per-token 3-layer GELU
/// projection + mean pool. Returns a length text-embed-dim vector.
inline VarId encode_text(Tape& t, const std::vector<std::size_t>& tokens,
                         const ParameterSet& ps, const ModelConfig& cfg) {
    if (tokens.empty()) throw InputError("cannot encode an empty token sequence");
    if (tokens.size() > cfg.max_tokens)
        throw InputError("token count " + std::to_string(tokens.size()) +
                         " exceeds max length " + std::to_string(cfg.max_tokens));
    // Embedding lookup as one-hot matmul so gradients reach the table.
    Tensor onehot({tokens.size(), cfg.vocab_size});
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= cfg.vocab_size)
            throw InputError("token id " + std::to_string(tokens[i]) +
                             " outside vocabulary");
        onehot.at(i, tokens[i]) = 1.0;
    }
    VarId x = t.matmul(t.leaf(std::move(onehot)), t.param(ps, "text.embed"));
    for (std::size_t i = 0; i < cfg.text_encoder_layers; ++i)
        x = nn::transformer_block(t, x, ps, "text.block" + std::to_string(i),
                                  cfg.text_encoder_heads, false);
    x = t.gelu(nn::linear(t, x, ps, "text.proj.l1"));
    x = t.gelu(nn::linear(t, x, ps, "text.proj.l2"));
    x = nn::linear(t, x, ps, "text.proj.l3");
    return t.mean_rows(x);
}

namespace detail {

inline Tensor sinusoidal_positions(std::size_t n, std::size_t dim) {
    Tensor pos({n, dim});
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t j = 0; j < dim; ++j) {
            double rate = std::pow(10000.0, -2.0 * double(j / 2) / double(dim));
            pos.at(p, j) = (j % 2 == 0) ? std::sin(double(p) * rate)
                                        : std::cos(double(p) * rate);
        }
    return pos;
}

}  // namespace detail

/// Patch embedding + contextual blocks + mean pool gives the base encoding X;
/// the residual projection adds f_residual(X), three linear layers with GELU
/// between them.
inline VarId encode_series(Tape& t, const Tensor& window, const ParameterSet& ps,
                           const ModelConfig& cfg) {
    if (window.rank() != 2 || window.cols() != cfg.d)
        throw ShapeError("series window must be (tau, " + std::to_string(cfg.d) +
                         "), got " + window.shape_str());
    if (window.rows() == 0 || window.rows() % cfg.patch_len != 0)
        throw ShapeError("window length " + std::to_string(window.rows()) +
                         " is not a positive multiple of patch length " +
                         std::to_string(cfg.patch_len));
    std::size_t n_patches = window.rows() / cfg.patch_len;
    VarId x = t.reshape(t.leaf(window), {n_patches, cfg.patch_len * cfg.d});
    x = nn::linear(t, x, ps, "series.patch");
    // Fixed sinusoidal positions; patches are order-sensitive inputs.
    x = t.add(x, t.leaf(detail::sinusoidal_positions(n_patches, cfg.series_embed_dim)));
    for (std::size_t i = 0; i < cfg.series_encoder_layers; ++i)
        x = nn::transformer_block(t, x, ps, "series.block" + std::to_string(i),
                                  cfg.series_encoder_heads, false);
    VarId base = t.mean_rows(x);
    VarId r = t.reshape(base, {std::size_t(1), cfg.series_embed_dim});
    r = t.gelu(nn::linear(t, r, ps, "series.residual.l1"));
    r = t.gelu(nn::linear(t, r, ps, "series.residual.l2"));
    r = nn::linear(t, r, ps, "series.residual.l3");
    return t.add(base, t.reshape(r, {cfg.series_embed_dim}));
}

/// [E || Z] through the two-layer GELU feedforward fusion network.
inline VarId fuse(Tape& t, VarId text_vec, VarId series_vec, const ParameterSet& ps,
                  const ModelConfig& cfg) {
    if (t.value(text_vec).size() != cfg.text_embed_dim ||
        t.value(series_vec).size() != cfg.series_embed_dim)
        throw ShapeError("fusion inputs must be vectors of dim " +
                         std::to_string(cfg.text_embed_dim) + ", got " +
                         t.value(text_vec).shape_str() + " and " +
                         t.value(series_vec).shape_str());
    VarId e = t.reshape(text_vec, {std::size_t(1), cfg.text_embed_dim});
    VarId z = t.reshape(series_vec, {std::size_t(1), cfg.series_embed_dim});
    VarId combined = t.concat_cols(e, z);
    VarId h = t.gelu(nn::linear(t, combined, ps, "fusion.l1"));
    h = nn::linear(t, h, ps, "fusion.l2");
    return t.reshape(h, {cfg.fusion_hidden});
}

/// Fused vector as s tokens through l causal decoder blocks, final layer
/// norm, flattened back to the fused width.
inline VarId decode(Tape& t, VarId fused, const ParameterSet& ps,
                    const ModelConfig& cfg) {
    if (t.value(fused).size() != cfg.fusion_hidden)
        throw ShapeError("decoder input must have dim " +
                         std::to_string(cfg.fusion_hidden) + ", got " +
                         t.value(fused).shape_str());
    if (cfg.fusion_hidden % cfg.decoder_token_count != 0)
        throw ConfigError("token count does not divide fused dim");
    VarId x = t.reshape(fused, {cfg.decoder_token_count, cfg.token_dim()});
    x = t.add(x, t.param(ps, "decoder.pos"));
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i)
        x = nn::transformer_block(t, x, ps, "decoder.block" + std::to_string(i),
                                  cfg.decoder_heads, true);
    x = nn::layer_norm(t, x, ps, "decoder.ln_f");
    return t.reshape(x, {cfg.fusion_hidden});
}

/// k blocks of linear + GELU + dropout, then the output head reshaped to
/// (d, pred-len). Dropout fires only on a training-mode tape.
inline VarId regress(Tape& t, VarId h_final, const ParameterSet& ps,
                     const ModelConfig& cfg) {
    if (t.value(h_final).size() != cfg.fusion_hidden)
        throw ShapeError("regressor input must have dim " +
                         std::to_string(cfg.fusion_hidden) + ", got " +
                         t.value(h_final).shape_str());
    VarId x = t.reshape(h_final, {std::size_t(1), cfg.fusion_hidden});
    for (std::size_t i = 0; i < cfg.regressor_layers; ++i) {
        x = nn::linear(t, x, ps, "regressor.l" + std::to_string(i));
        x = t.gelu(x);
        x = t.dropout(x, cfg.dropout);
    }
    x = nn::linear(t, x, ps, "regressor.out");
    return t.reshape(x, {cfg.d, cfg.pred_len});
}

// ---- full forward ----------------------------------------------------------

struct GraphOutputs {
    VarId text_embedding = -1;    // E
    VarId series_embedding = -1;  // Z (and T for the triplet objective)
    VarId fused = -1;
    VarId decoded = -1;
    VarId prediction = -1;
};

inline GraphOutputs forward_graph(Tape& t, const std::vector<std::size_t>& tokens,
                                  const Tensor& window, const ParameterSet& ps,
                                  const ModelConfig& cfg) {
    GraphOutputs g;
    g.text_embedding = encode_text(t, tokens, ps, cfg);
    g.series_embedding = encode_series(t, window, ps, cfg);
    g.fused = fuse(t, g.text_embedding, g.series_embedding, ps, cfg);
    g.decoded = decode(t, g.fused, ps, cfg);
    g.prediction = regress(t, g.decoded, ps, cfg);
    return g;
}

struct ForecastOutput {
    Tensor predictions;    // (d, pred-len), normalized units
    Tensor denormalized;   // same shape, original units
};

inline Tensor denormalize_predictions(const Tensor& pred,
                                      const market::AlignedSample& sample,
                                      const ModelConfig& cfg) {
    if (sample.stats.size() != std::size_t(market::kChannels))
        throw ContractError("sample carries no normalization stats: " + sample.event_id);
    Tensor out = pred;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        // d=1 forecasts the close channel; d=4 forecasts OHLC in channel order.
        const auto& st = sample.stats[cfg.d == 1 ? 3 : r];
        for (std::size_t c = 0; c < out.cols(); ++c)
            out.at(r, c) = out.at(r, c) * st.stddev + st.mean;
    }
    return out;
}

inline ForecastOutput forward(const market::AlignedSample& sample,
                              const corpus::EventScript& script,
                              const ParameterSet& ps, const ModelConfig& cfg) {
    if (!sample.normalized)
        throw ContractError("forward requires a normalized sample: " + sample.event_id);
    auto tokens = tokenize(script.text, cfg.vocab_size);
    if (tokens.size() > cfg.max_tokens) tokens.resize(cfg.max_tokens);
    if (tokens.empty())
        throw InputError("event text produced no tokens: " + script.id);
    Tape t(0, false);
    GraphOutputs g =
        forward_graph(t, tokens, market::window_tensor(sample.pre, cfg.d), ps, cfg);
    ForecastOutput out;
    out.predictions = t.value(g.prediction);
    out.predictions.require_finite("forecast for " + sample.event_id);
    out.denormalized = denormalize_predictions(out.predictions, sample, cfg);
    return out;
}

// ---- losses ----------------------------------------------------------------

/// MSE + MAE, both means over all d * pred-len entries.
inline VarId time_loss(Tape& t, VarId pred, VarId target) {
    if (t.value(pred).shape() != t.value(target).shape())
        throw ShapeError("time loss shape mismatch: " + t.value(pred).shape_str() +
                         " vs " + t.value(target).shape_str());
    VarId diff = t.sub(pred, target);
    return t.add(t.mean_all(t.square(diff)), t.mean_all(t.abs(diff)));
}

inline double time_loss_value(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("time loss shape mismatch: " + pred.shape_str() + " vs " +
                         target.shape_str());
    double mse = 0.0, mae = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double d = pred[i] - target[i];
        mse += d * d;
        mae += std::fabs(d);
    }
    return mse / double(pred.size()) + mae / double(pred.size());
}

inline VarId embedding_distance(Tape& t, VarId a, VarId b, Distance kind) {
    if (t.value(a).shape() != t.value(b).shape())
        throw ShapeError("distance between different shapes: " +
                         t.value(a).shape_str() + " vs " + t.value(b).shape_str());
    if (kind == Distance::Euclidean) {
        VarId sq = t.sum_all(t.square(t.sub(a, b)));
        return t.sqrt_op(t.add(sq, t.leaf(Tensor::scalar(1e-12))));
    }
    VarId dot = t.sum_all(t.mul(a, b));
    VarId na = t.sqrt_op(t.add(t.sum_all(t.square(a)), t.leaf(Tensor::scalar(1e-12))));
    VarId nb = t.sqrt_op(t.add(t.sum_all(t.square(b)), t.leaf(Tensor::scalar(1e-12))));
    VarId denom = t.add(t.mul(na, nb), t.leaf(Tensor::scalar(1e-12)));
    return t.sub(t.leaf(Tensor::scalar(1.0)), t.div(dot, denom));
}

/// Mean over counterfactuals of max(0, d(P_gt,T) - d(P_cf,T) + alpha).
inline VarId triplet_loss(Tape& t, VarId p_gt, const std::vector<VarId>& p_cfs,
                          VarId series_embed, double alpha, Distance kind) {
    if (p_cfs.empty())
        throw ContractError("triplet loss requires at least one counterfactual");
    VarId d_gt = embedding_distance(t, p_gt, series_embed, kind);
    VarId alpha_leaf = t.leaf(Tensor::scalar(alpha));
    VarId acc = -1;
    for (VarId p_cf : p_cfs) {
        VarId d_cf = embedding_distance(t, p_cf, series_embed, kind);
        VarId hinge = t.relu(t.add(t.sub(d_gt, d_cf), alpha_leaf));
        acc = acc < 0 ? hinge : t.add(acc, hinge);
    }
    return t.scale(acc, 1.0 / double(p_cfs.size()));
}

inline double triplet_loss_value(const Tensor& p_gt, const std::vector<Tensor>& p_cfs,
                                 const Tensor& series_embed, double alpha,
                                 Distance kind) {
    Tape t;
    std::vector<VarId> cf_ids;
    for (const Tensor& cf : p_cfs) cf_ids.push_back(t.leaf(cf));
    return t.value(triplet_loss(t, t.leaf(p_gt), cf_ids, t.leaf(series_embed), alpha,
                                kind))[0];
}

/// L_Total = L_Time + L_Causal-TL with unit weights by default.
inline VarId total_loss(Tape& t, VarId time, VarId causal, double time_weight = 1.0,
                        double causal_weight = 1.0) {
    if (!t.value(time).all_finite() || !t.value(causal).all_finite())
        throw NumericError("non-finite loss component");
    return t.add(t.scale(time, time_weight), t.scale(causal, causal_weight));
}

inline double total_loss_value(double time, double causal) {
    if (!std::isfinite(time) || !std::isfinite(causal))
        throw NumericError("non-finite loss component");
    return time + causal;
}

}  // namespace camef::model
