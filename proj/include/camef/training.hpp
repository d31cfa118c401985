#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "camef/common.hpp"
#include "camef/corpus.hpp"
#include "camef/graph.hpp"
#include "camef/market.hpp"
#include "camef/model.hpp"
#include "camef/nn.hpp"
#include "camef/params.hpp"

namespace camef::training {

using ag::GradientMap;
using ag::Tape;
using ag::VarId;
using model::ModelConfig;

enum class TrainStage { Pretrain, Full };

/// Component learning rates. Keys name model components; parameters map to a
/// component by name prefix.
inline std::map<std::string, double> paper_learning_rates() {
    return {{"series-encoder", 1e-6}, {"text-encoder", 5e-7}, {"decoder", 1e-5},
            {"embedding", 1e-5},      {"residual", 1e-5},     {"fusion", 5e-7},
            {"output", 1e-5}};
}

inline std::string component_of(const std::string& param_name) {
    if (param_name.rfind("series.residual.", 0) == 0) return "residual";
    if (param_name.rfind("series.", 0) == 0 || param_name.rfind("pretrain.", 0) == 0)
        return "series-encoder";
    if (param_name.rfind("text.", 0) == 0) return "text-encoder";
    if (param_name == "decoder.pos") return "embedding";
    if (param_name.rfind("decoder.", 0) == 0) return "decoder";
    if (param_name.rfind("fusion.", 0) == 0) return "fusion";
    if (param_name.rfind("regressor.", 0) == 0) return "output";
    throw ConfigError("parameter belongs to no known component: " + param_name);
}

struct TrainConfig {
    TrainStage stage = TrainStage::Full;
    std::size_t epochs = 10;
    std::size_t batch_size = 10;
    std::map<std::string, double> learning_rates = paper_learning_rates();
    std::size_t patience = 3;
    std::uint64_t seed = 0;
    double mask_ratio = 0.3;
    double pretrain_rate = 1e-3;  // stage 1 uses one uniform rate
    double rate_decay = 1.0;      // per-step multiplier on every rate
    double clip_norm = 1.0;
    bool use_causal = true;
    std::string checkpoint_dir;  // empty disables periodic checkpoints

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        for (const auto& [component, rate] : learning_rates)
            if (rate <= 0.0)
                throw ConfigError("learning rate for " + component +
                                  " must be positive");
        if (pretrain_rate <= 0.0) throw ConfigError("pretrain rate must be positive");
        if (rate_decay <= 0.0 || rate_decay > 1.0)
            throw ConfigError("rate decay must be in (0,1]");
        if (mask_ratio < 0.0 || mask_ratio > 1.0)
            throw ConfigError("mask ratio must be in [0,1]");
        if (patience < 1) throw ConfigError("patience must be >= 1");
    }

    double rate_for(const std::string& param_name) const {
        auto it = learning_rates.find(component_of(param_name));
        if (it == learning_rates.end())
            throw ConfigError("no learning rate configured for component of " +
                              param_name);
        return it->second;
    }
};

struct FreezePolicy {
    std::vector<std::string> frozen_prefixes;

    void apply(ParameterSet& ps) const {
        for (const auto& prefix : frozen_prefixes) {
            bool hit = false;
            for (const auto& [name, t] : ps.all())
                if (name.rfind(prefix, 0) == 0) hit = true;
            if (!hit)
                throw ContractError("freeze prefix resolves no parameter: " + prefix);
            ps.freeze_prefix(prefix);
        }
    }

    /// Series encoder fully frozen, text encoder frozen except its final
    /// block, decoder token-reshape embedding frozen. Projection heads and
    /// everything downstream stay trainable.
    static FreezePolicy standard(const ModelConfig& cfg) {
        FreezePolicy f;
        f.frozen_prefixes = {"series.patch", "text.embed", "decoder.pos"};
        for (std::size_t i = 0; i < cfg.series_encoder_layers; ++i)
            f.frozen_prefixes.push_back("series.block" + std::to_string(i));
        for (std::size_t i = 0; i + 1 < cfg.text_encoder_layers; ++i)
            f.frozen_prefixes.push_back("text.block" + std::to_string(i));
        return f;
    }
};

// ---- optimizer -------------------------------------------------------------

/// Adam with per-component learning rates. Frozen parameters are skipped even
/// when a gradient is supplied.
class Adam {
public:
    explicit Adam(const TrainConfig& cfg, double uniform_rate = 0.0)
        : cfg_(cfg), uniform_rate_(uniform_rate) {}

    void step(ParameterSet& ps, const GradientMap& grads) {
        ++t_;
        for (const auto& [name, grad] : grads) {
            if (!ps.has(name)) throw ContractError("gradient for unknown parameter: " + name);
            if (!ps.trainable(name)) continue;
            Tensor& p = ps.get(name);
            if (p.shape() != grad.shape())
                throw ShapeError("gradient shape " + grad.shape_str() +
                                 " does not match parameter " + p.shape_str());
            double rate = uniform_rate_ > 0.0 ? uniform_rate_ : cfg_.rate_for(name);
            rate *= std::pow(cfg_.rate_decay, double(t_ - 1));
            Tensor& m = moment(m_, name, p);
            Tensor& v = moment(v_, name, p);
            double bc1 = 1.0 - std::pow(kBeta1, double(t_));
            double bc2 = 1.0 - std::pow(kBeta2, double(t_));
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * grad[i];
                v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                p[i] -= rate * mhat / (std::sqrt(vhat) + kEps);
            }
        }
    }

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

private:
    Tensor& moment(std::map<std::string, Tensor>& store, const std::string& name,
                   const Tensor& like) {
        auto it = store.find(name);
        if (it == store.end()) it = store.emplace(name, Tensor(like.shape())).first;
        return it->second;
    }

    TrainConfig cfg_;
    double uniform_rate_;
    int t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

/// Scales all gradients down when their global L2 norm exceeds `max_norm`.
inline void clip_global_norm(GradientMap& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
        for (double v : g.data()) sq += v * v;
    double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    double s = max_norm / norm;
    for (auto& [name, g] : grads)
        for (double& v : g.data()) v *= s;
}

// ---- stage 1: series-encoder pretraining -----------------------------------

namespace detail {

/// Per-patch encoder states (n_patches, embed) with the listed patches
/// zero-masked at the input.
inline VarId masked_patch_states(Tape& t, const Tensor& window,
                                 const std::vector<std::size_t>& masked,
                                 const ParameterSet& ps, const ModelConfig& cfg) {
    std::size_t n = window.rows() / cfg.patch_len;
    Tensor patches({n, cfg.patch_len * cfg.d});
    for (std::size_t p = 0; p < n; ++p) {
        if (std::find(masked.begin(), masked.end(), p) != masked.end()) continue;
        for (std::size_t i = 0; i < cfg.patch_len; ++i)
            for (std::size_t c = 0; c < cfg.d; ++c)
                patches.at(p, i * cfg.d + c) = window.at(p * cfg.patch_len + i, c);
    }
    VarId x = nn::linear(t, t.leaf(std::move(patches)), ps, "series.patch");
    x = t.add(x, t.leaf(model::detail::sinusoidal_positions(n, cfg.series_embed_dim)));
    for (std::size_t i = 0; i < cfg.series_encoder_layers; ++i)
        x = nn::transformer_block(t, x, ps, "series.block" + std::to_string(i),
                                  cfg.series_encoder_heads, false);
    return x;
}

}  // namespace detail

struct PretrainResult {
    std::vector<double> loss_history;  // one entry per optimizer step
};

/// Masked patch reconstruction. Mask-ratio of each window's patches are
/// zeroed; a linear head rebuilds them from the encoder states; MSE is taken
/// over masked positions only (empty mask contributes zero).
inline PretrainResult pretrain_series_encoder(ParameterSet& ps,
                                              const std::vector<Tensor>& windows,
                                              const ModelConfig& cfg,
                                              const TrainConfig& tc) {
    tc.validate();
    if (windows.size() < tc.batch_size)
        throw DataError("pretraining needs at least one full batch: have " +
                        std::to_string(windows.size()) + ", batch " +
                        std::to_string(tc.batch_size));
    for (const Tensor& w : windows)
        if (w.rank() != 2 || w.cols() != cfg.d || w.rows() % cfg.patch_len != 0)
            throw ShapeError("bad pretraining window shape " + w.shape_str());
    if (!ps.has("pretrain.head.w")) {
        std::mt19937_64 init_rng(tc.seed ^ 0x9e3779b97f4a7c15ull);
        nn::init_linear(ps, "pretrain.head", cfg.series_embed_dim,
                        cfg.patch_len * cfg.d, init_rng);
    }
    Adam opt(tc, tc.pretrain_rate);
    std::mt19937_64 rng(tc.seed);
    PretrainResult result;
    std::vector<std::size_t> order(windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t b = 0; b < order.size(); b += tc.batch_size, ++step) {
            std::size_t b_end = std::min(order.size(), b + tc.batch_size);
            GradientMap batch_grads;
            double batch_loss = 0.0;
            for (std::size_t s = b; s < b_end; ++s) {
                const Tensor& window = windows[order[s]];
                std::size_t n = window.rows() / cfg.patch_len;
                std::size_t n_mask =
                    std::size_t(std::llround(tc.mask_ratio * double(n)));
                std::vector<std::size_t> all(n), masked;
                for (std::size_t i = 0; i < n; ++i) all[i] = i;
                std::shuffle(all.begin(), all.end(), rng);
                masked.assign(all.begin(), all.begin() + n_mask);
                if (masked.empty()) continue;  // empty mask: zero loss by convention

                Tape t(0, true);
                VarId states = detail::masked_patch_states(t, window, masked, ps, cfg);
                VarId recon = nn::linear(t, states, ps, "pretrain.head");
                Tensor target({n, cfg.patch_len * cfg.d});
                Tensor mask({n, cfg.patch_len * cfg.d});
                for (std::size_t p : masked)
                    for (std::size_t i = 0; i < cfg.patch_len; ++i)
                        for (std::size_t c = 0; c < cfg.d; ++c) {
                            target.at(p, i * cfg.d + c) =
                                window.at(p * cfg.patch_len + i, c);
                            mask.at(p, i * cfg.d + c) = 1.0;
                        }
                VarId diff = t.mul(t.sub(recon, t.leaf(target)), t.leaf(mask));
                VarId loss = t.scale(
                    t.sum_all(t.square(diff)),
                    1.0 / double(masked.size() * cfg.patch_len * cfg.d));
                double lv = t.value(loss)[0];
                if (!std::isfinite(lv))
                    throw TrainingError("pretraining diverged at step " +
                                        std::to_string(step));
                batch_loss += lv;
                GradientMap grads = t.backward(loss);
                for (auto& [name, g] : grads) {
                    auto [it, fresh] = batch_grads.emplace(name, g);
                    if (!fresh)
                        for (std::size_t i = 0; i < g.size(); ++i)
                            it->second[i] += g[i];
                }
            }
            double scale = 1.0 / double(b_end - b);
            for (auto& [name, g] : batch_grads)
                for (double& v : g.data()) v *= scale;
            clip_global_norm(batch_grads, tc.clip_norm);
            opt.step(ps, batch_grads);
            result.loss_history.push_back(batch_loss * scale);
        }
    }
    return result;
}

// ---- stage 2: full training ------------------------------------------------

/// One training unit: aligned market sample, its ground-truth script, and the
/// texts of its counterfactual set (identical-type then diverse-type).
struct TrainSample {
    market::AlignedSample sample;  // normalized
    corpus::EventScript script;
    std::vector<std::string> cf_texts;
};

/// Pluggable forward pass. Ablation variants substitute degraded wiring while
/// the training loop stays identical.
using GraphFn = std::function<model::GraphOutputs(
    Tape&, const std::vector<std::size_t>&, const Tensor&, const ParameterSet&,
    const ModelConfig&)>;

inline GraphFn full_model_graph() {
    return [](Tape& t, const std::vector<std::size_t>& tokens, const Tensor& window,
              const ParameterSet& ps, const ModelConfig& cfg) {
        return model::forward_graph(t, tokens, window, ps, cfg);
    };
}

/// Tokens for one script under the model's vocabulary and length budget.
inline std::vector<std::size_t> script_tokens(const std::string& text,
                                              const ModelConfig& cfg) {
    auto tokens = model::tokenize(text, cfg.vocab_size);
    if (tokens.size() > cfg.max_tokens) tokens.resize(cfg.max_tokens);
    if (tokens.empty()) throw DataError("script text produced no tokens");
    return tokens;
}

/// Forecast target (d, pred-len) from the post-window.
inline Tensor target_tensor(const market::AlignedSample& sample,
                            const ModelConfig& cfg) {
    if (sample.post.size() != cfg.pred_len)
        throw ShapeError("post-window length " + std::to_string(sample.post.size()) +
                         " does not match pred-len " + std::to_string(cfg.pred_len));
    Tensor y({cfg.d, cfg.pred_len});
    for (std::size_t i = 0; i < cfg.pred_len; ++i) {
        if (cfg.d == 1) {
            y.at(0, i) = sample.post[i].close;
        } else {
            for (int c = 0; c < market::kChannels; ++c)
                y.at(std::size_t(c), i) = sample.post[i].channel(c);
        }
    }
    return y;
}

struct HistoryRow {
    std::size_t step = 0;
    double train_time = 0.0;
    double train_causal = 0.0;
    double train_total = 0.0;
    double val_time = std::numeric_limits<double>::quiet_NaN();  // set at epoch end
};

struct TrainResult {
    std::vector<HistoryRow> history;
    double best_val_time = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
};

inline void write_history_csv(const std::string& path,
                              const std::vector<HistoryRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open history for write: " + path);
    out << "step,train_l_time,train_l_causal,train_l_total,val_l_time\n";
    char buf[256];
    for (const HistoryRow& r : rows) {
        if (std::isnan(r.val_time))
            std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,\n", r.step,
                          r.train_time, r.train_causal, r.train_total);
        else
            std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", r.step,
                          r.train_time, r.train_causal, r.train_total, r.val_time);
        out << buf;
    }
}

inline double validation_time_loss(const ParameterSet& ps,
                                   const std::vector<TrainSample>& val,
                                   const ModelConfig& cfg,
                                   const GraphFn& graph = full_model_graph()) {
    if (val.empty()) throw DataError("empty validation set");
    double total = 0.0;
    for (const TrainSample& ts : val) {
        if (!ts.sample.normalized)
            throw ContractError("validation requires normalized samples: " +
                                ts.sample.event_id);
        Tape t(0, false);
        model::GraphOutputs g = graph(t, script_tokens(ts.script.text, cfg),
                                      market::window_tensor(ts.sample.pre, cfg.d),
                                      ps, cfg);
        total += model::time_loss_value(t.value(g.prediction),
                                        target_tensor(ts.sample, cfg));
    }
    return total / double(val.size());
}

/// Batched training on L_Time plus the counterfactual triplet objective,
/// early stopping on validation L_Time, best-validation parameters restored.
inline TrainResult train_full(ParameterSet& ps, const std::vector<TrainSample>& train,
                              const std::vector<TrainSample>& val,
                              const ModelConfig& cfg, const TrainConfig& tc,
                              const FreezePolicy& freeze,
                              const GraphFn& graph = full_model_graph()) {
    tc.validate();
    cfg.validate();
    if (train.empty()) throw DataError("empty training set");
    if (tc.use_causal)
        for (const TrainSample& ts : train)
            if (ts.cf_texts.empty() && cfg.causal_weight != 0.0)
                throw DataError("training sample missing counterfactual set: " +
                                ts.sample.event_id);
    freeze.apply(ps);
    Adam opt(tc);
    std::mt19937_64 shuffle_rng(tc.seed);
    TrainResult result;
    ParameterSet best = ps;
    std::size_t checks_without_improvement = 0;
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t b = 0; b < order.size(); b += tc.batch_size, ++step) {
            std::size_t b_end = std::min(order.size(), b + tc.batch_size);
            GradientMap batch_grads;
            double time_sum = 0.0, causal_sum = 0.0;
            for (std::size_t s = b; s < b_end; ++s) {
                const TrainSample& ts = train[order[s]];
                auto tokens = script_tokens(ts.script.text, cfg);
                // Dropout stream keyed by seed, step and slot; independent of
                // whether the causal branch runs.
                Tape t(tc.seed * 1000003ull + step * 131ull + (s - b), true);
                model::GraphOutputs g = graph(
                    t, tokens, market::window_tensor(ts.sample.pre, cfg.d), ps, cfg);
                VarId lt = model::time_loss(t, g.prediction,
                                            t.leaf(target_tensor(ts.sample, cfg)));
                VarId loss = lt;
                double causal_v = 0.0;
                if (tc.use_causal && cfg.causal_weight != 0.0 && !ts.cf_texts.empty()) {
                    std::vector<VarId> cf_vecs;
                    for (const std::string& text : ts.cf_texts) {
                        auto cf_tokens = model::tokenize(text, cfg.vocab_size);
                        if (cf_tokens.size() > cfg.max_tokens)
                            cf_tokens.resize(cfg.max_tokens);
                        if (cf_tokens.empty())
                            throw DataError("empty counterfactual text for " +
                                            ts.sample.event_id);
                        cf_vecs.push_back(model::encode_text(t, cf_tokens, ps, cfg));
                    }
                    VarId lc = model::triplet_loss(t, g.text_embedding, cf_vecs,
                                                   g.series_embedding, cfg.margin,
                                                   cfg.distance);
                    causal_v = t.value(lc)[0];
                    loss = model::total_loss(t, lt, lc, cfg.time_weight,
                                             cfg.causal_weight);
                } else if (cfg.time_weight != 1.0) {
                    loss = t.scale(lt, cfg.time_weight);
                }
                double time_v = t.value(lt)[0];
                if (!std::isfinite(t.value(loss)[0]))
                    throw TrainingError("training diverged at step " +
                                        std::to_string(step));
                time_sum += time_v;
                causal_sum += causal_v;
                GradientMap grads = t.backward(loss);
                for (auto& [name, gr] : grads) {
                    auto [it, fresh] = batch_grads.emplace(name, gr);
                    if (!fresh)
                        for (std::size_t i = 0; i < gr.size(); ++i)
                            it->second[i] += gr[i];
                }
            }
            double scale = 1.0 / double(b_end - b);
            for (auto& [name, gr] : batch_grads)
                for (double& v : gr.data()) v *= scale;
            clip_global_norm(batch_grads, tc.clip_norm);
            opt.step(ps, batch_grads);
            HistoryRow row;
            row.step = step;
            row.train_time = time_sum * scale;
            row.train_causal = causal_sum * scale;
            row.train_total = cfg.time_weight * row.train_time +
                              cfg.causal_weight * row.train_causal;
            result.history.push_back(row);
        }
        double val_time = validation_time_loss(ps, val, cfg, graph);
        if (!result.history.empty()) result.history.back().val_time = val_time;
        result.epochs_run = epoch + 1;
        if (!tc.checkpoint_dir.empty())
            ps.save(tc.checkpoint_dir + "/epoch_" + std::to_string(epoch) + ".ckpt");
        if (val_time < result.best_val_time) {
            result.best_val_time = val_time;
            result.best_epoch = epoch;
            best = ps;
            checks_without_improvement = 0;
        } else if (++checks_without_improvement >= tc.patience) {
            break;
        }
    }
    ps = best;
    if (!tc.checkpoint_dir.empty()) ps.save(tc.checkpoint_dir + "/best.ckpt");
    return result;
}

}  // namespace camef::training
