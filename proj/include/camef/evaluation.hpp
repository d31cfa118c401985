#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "camef/common.hpp"
#include "camef/counterfactual.hpp"
#include <json.hpp>

#include "camef/market.hpp"
#include "camef/model.hpp"
#include "camef/timeutil.hpp"
#include "camef/training.hpp"

namespace camef::evaluation {

using ag::Tape;
using ag::VarId;
using model::ModelConfig;
using training::GraphFn;
using training::TrainConfig;
using training::TrainSample;

// ---- report ----------------------------------------------------------------

struct EvaluationRow {
    std::string asset_id;
    std::size_t pred_len = 0;
    std::string variant;
    double mse = 0.0;
    double mae = 0.0;
    std::size_t sample_count = 0;
    std::string mse_vs_baseline;  // "up", "down" or "" (no baseline row)
    std::string mae_vs_baseline;
};

struct EvaluationReport {
    std::vector<EvaluationRow> rows;
    std::vector<std::string> warnings;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::int64_t data_ts = 0;  // newest event in the evaluated data

    void append(const EvaluationReport& other) {
        rows.insert(rows.end(), other.rows.begin(), other.rows.end());
        warnings.insert(warnings.end(), other.warnings.begin(),
                        other.warnings.end());
        data_ts = std::max(data_ts, other.data_ts);
    }
};

inline std::uint64_t config_hash(const ModelConfig& cfg) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%zu|%zu|%zu|%zu|%zu|%zu|%zu|%zu|%zu|%zu|%.17g|%.17g|%s|%zu|%zu|"
                  "%.17g|%.17g|%zu|%zu|%zu|%zu|%zu|%zu|%zu",
                  cfg.text_embed_dim, cfg.text_proj_hidden, cfg.series_embed_dim,
                  cfg.residual_hidden, cfg.fusion_hidden, cfg.decoder_token_count,
                  cfg.decoder_layers, cfg.decoder_heads, cfg.regressor_layers,
                  cfg.regressor_hidden, cfg.dropout, cfg.margin,
                  model::to_string(cfg.distance), cfg.d, cfg.pred_len,
                  cfg.time_weight, cfg.causal_weight, cfg.vocab_size, cfg.max_tokens,
                  cfg.text_encoder_layers, cfg.text_encoder_heads,
                  cfg.series_encoder_layers, cfg.series_encoder_heads, cfg.patch_len);
    std::uint64_t h = 1469598103934665603ull;
    for (const char* p = buf; *p; ++p) {
        h ^= std::uint64_t(static_cast<unsigned char>(*p));
        h *= 1099511628211ull;
    }
    return h;
}

inline void write_report_csv(const std::string& path, const EvaluationReport& r) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open report for write: " + path);
    out << "asset_id,pred_len,variant,mse,mae,sample_count,mse_vs_baseline,"
           "mae_vs_baseline\n";
    char buf[512];
    for (const EvaluationRow& row : r.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%zu,\"%s\",%.17g,%.17g,%zu,%s,%s\n",
                      row.asset_id.c_str(), row.pred_len, row.variant.c_str(),
                      row.mse, row.mae, row.sample_count,
                      row.mse_vs_baseline.c_str(), row.mae_vs_baseline.c_str());
        out << buf;
    }
}

inline nlohmann::json report_to_json(const EvaluationReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const EvaluationRow& row : r.rows)
        rows.push_back({{"asset_id", row.asset_id},
                        {"pred_len", row.pred_len},
                        {"variant", row.variant},
                        {"mse", row.mse},
                        {"mae", row.mae},
                        {"sample_count", row.sample_count},
                        {"mse_vs_baseline", row.mse_vs_baseline},
                        {"mae_vs_baseline", row.mae_vs_baseline}});
    return {{"metadata",
             {{"config_hash", r.config_hash},
              {"seed", r.seed},
              {"data_ts", timeutil::format_rfc3339(r.data_ts)}}},
            {"rows", rows},
            {"warnings", r.warnings}};
}

inline void write_report_json(const std::string& path, const EvaluationReport& r) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open report for write: " + path);
    out << report_to_json(r).dump(2) << "\n";
}

// ---- metric accumulation ---------------------------------------------------

namespace detail {

struct Accum {
    double se = 0.0, ae = 0.0;
    std::size_t points = 0, samples = 0;
};

inline void accumulate(Accum& a, const Tensor& pred, const Tensor& truth) {
    if (pred.shape() != truth.shape())
        throw ShapeError("metric shape mismatch: " + pred.shape_str() + " vs " +
                         truth.shape_str());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double e = pred[i] - truth[i];
        a.se += e * e;
        a.ae += std::fabs(e);
    }
    a.points += pred.size();
    ++a.samples;
}

inline std::vector<EvaluationRow> rows_from(
    const std::map<std::string, Accum>& by_asset, std::size_t pred_len,
    const std::string& variant) {
    std::vector<EvaluationRow> rows;
    for (const auto& [asset, a] : by_asset) {
        EvaluationRow row;
        row.asset_id = asset;
        row.pred_len = pred_len;
        row.variant = variant;
        row.mse = a.se / double(a.points);
        row.mae = a.ae / double(a.points);
        row.sample_count = a.samples;
        rows.push_back(row);
    }
    return rows;
}

inline std::int64_t newest_ts(const std::vector<TrainSample>& samples) {
    std::int64_t ts = 0;
    for (const TrainSample& s : samples) ts = std::max(ts, s.sample.event_ts);
    return ts;
}

}  // namespace detail

/// Mean MSE/MAE of the model on a test split, aggregated per asset. Metrics
/// are in normalized units unless `original_units` is set.
inline EvaluationReport evaluate(const ParameterSet& ps,
                                 const std::vector<TrainSample>& test,
                                 const ModelConfig& cfg,
                                 const std::string& variant = "Full CAMEF Model",
                                 bool original_units = false,
                                 const GraphFn& graph = training::full_model_graph()) {
    if (test.empty()) throw DataError("empty evaluation split");
    std::map<std::string, detail::Accum> by_asset;
    for (const TrainSample& ts : test) {
        if (!ts.sample.normalized)
            throw ContractError("evaluation requires normalized samples: " +
                                ts.sample.event_id);
        Tape t(0, false);
        model::GraphOutputs g =
            graph(t, training::script_tokens(ts.script.text, cfg),
                  market::window_tensor(ts.sample.pre, cfg.d), ps, cfg);
        Tensor pred = t.value(g.prediction);
        Tensor truth = training::target_tensor(ts.sample, cfg);
        if (original_units) {
            pred = model::denormalize_predictions(pred, ts.sample, cfg);
            truth = training::target_tensor(market::denormalize_sample(ts.sample),
                                            cfg);
        }
        detail::accumulate(by_asset[ts.sample.asset_id], pred, truth);
    }
    EvaluationReport r;
    r.rows = detail::rows_from(by_asset, cfg.pred_len, variant);
    r.config_hash = config_hash(cfg);
    r.data_ts = detail::newest_ts(test);
    return r;
}

/// Naive anchor: repeat the last pre-window value for the whole horizon.
/// Scored in whatever units the samples carry.
inline EvaluationReport persistence_baseline(const std::vector<TrainSample>& test,
                                             const ModelConfig& cfg) {
    if (test.empty()) throw DataError("empty evaluation split");
    std::map<std::string, detail::Accum> by_asset;
    for (const TrainSample& ts : test) {
        if (ts.sample.pre.empty())
            throw DataError("sample has no pre-window: " + ts.sample.event_id);
        Tensor pred({cfg.d, cfg.pred_len});
        for (std::size_t c = 0; c < cfg.d; ++c) {
            double last = cfg.d == 1 ? ts.sample.pre.back().close
                                     : ts.sample.pre.back().channel(int(c));
            for (std::size_t i = 0; i < cfg.pred_len; ++i) pred.at(c, i) = last;
        }
        detail::accumulate(by_asset[ts.sample.asset_id], pred,
                           training::target_tensor(ts.sample, cfg));
    }
    EvaluationReport r;
    r.rows = detail::rows_from(by_asset, cfg.pred_len, "Persistence");
    r.config_hash = config_hash(cfg);
    r.data_ts = detail::newest_ts(test);
    return r;
}

// ---- component ablations ---------------------------------------------------

struct AblationSpec {
    bool textual = true;
    bool causal = true;
    bool fusion = true;
    bool decoder = true;
    bool post_regressor = true;

    void validate() const {
        if (!textual && !causal && !fusion && !decoder && !post_regressor)
            throw SpecError("ablation with every component removed is not a model");
    }

    bool full() const {
        return textual && causal && fusion && decoder && post_regressor;
    }

    std::string label() const {
        if (full()) return "Full CAMEF Model";
        std::string s = "w/o";
        if (!textual) s += " Textual";
        if (!causal) s += " Causal";
        if (!fusion) s += " Feature Fusion";
        if (!decoder) s += " Decoder";
        if (!post_regressor) s += " Post-Regressor";
        return s;
    }
};

/// Extra parameters some degraded paths need. Deterministic in the seed;
/// the fusion resize is deliberately left untrained.
inline void init_variant_params(ParameterSet& ps, const ModelConfig& cfg,
                                const AblationSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0xa5a5a5a55a5a5a5aull);
    if (!spec.fusion && !ps.has("fusion.resize.w")) {
        nn::init_linear(ps, "fusion.resize",
                        cfg.text_embed_dim + cfg.series_embed_dim,
                        cfg.fusion_hidden, rng, false);
    }
    if (!spec.post_regressor && !ps.has("regressor.direct.w"))
        nn::init_linear(ps, "regressor.direct", cfg.fusion_hidden,
                        cfg.d * cfg.pred_len, rng);
}

/// Forward pass with the spec's degraded wiring. The all-on spec returns the
/// untouched full model graph so tapes match op for op.
inline GraphFn variant_graph(const AblationSpec& spec) {
    spec.validate();
    if (spec.textual && spec.fusion && spec.decoder && spec.post_regressor)
        return training::full_model_graph();
    return [spec](Tape& t, const std::vector<std::size_t>& tokens,
                  const Tensor& window, const ParameterSet& ps,
                  const ModelConfig& cfg) {
        model::GraphOutputs g;
        g.text_embedding = model::encode_text(t, tokens, ps, cfg);
        g.series_embedding = model::encode_series(t, window, ps, cfg);
        VarId text_in = spec.textual
                            ? g.text_embedding
                            : t.leaf(Tensor({cfg.text_embed_dim}));
        if (spec.fusion) {
            g.fused = model::fuse(t, text_in, g.series_embedding, ps, cfg);
        } else {
            VarId e = t.reshape(text_in, {std::size_t(1), cfg.text_embed_dim});
            VarId z = t.reshape(g.series_embedding,
                                {std::size_t(1), cfg.series_embed_dim});
            g.fused = t.reshape(
                nn::linear(t, t.concat_cols(e, z), ps, "fusion.resize"),
                {cfg.fusion_hidden});
        }
        g.decoded = spec.decoder ? model::decode(t, g.fused, ps, cfg) : g.fused;
        if (spec.post_regressor) {
            g.prediction = model::regress(t, g.decoded, ps, cfg);
        } else {
            VarId h = t.reshape(g.decoded, {std::size_t(1), cfg.fusion_hidden});
            g.prediction = t.reshape(nn::linear(t, h, ps, "regressor.direct"),
                                     {cfg.d, cfg.pred_len});
        }
        return g;
    };
}

struct AblationData {
    std::vector<TrainSample> train, val, test;
};

struct VariantRun {
    std::string label;
    training::TrainResult train_result;
    EvaluationReport report;  // test metrics for this variant only
    ParameterSet params;
};

/// Trains one variant from the shared initial seed and scores it on the test
/// split.
inline VariantRun run_variant(const AblationSpec& spec, const ModelConfig& cfg,
                              const AblationData& data, const TrainConfig& tc,
                              const training::FreezePolicy& freeze) {
    spec.validate();
    VariantRun run;
    run.label = spec.label();
    std::mt19937_64 rng(tc.seed);
    model::init_model(run.params, cfg, rng);
    init_variant_params(run.params, cfg, spec, tc.seed);
    TrainConfig vtc = tc;
    vtc.use_causal = tc.use_causal && spec.causal;
    GraphFn graph = variant_graph(spec);
    run.train_result = training::train_full(run.params, data.train, data.val, cfg,
                                            vtc, freeze, graph);
    run.report = evaluate(run.params, data.test, cfg, run.label, false, graph);
    run.report.seed = tc.seed;
    return run;
}

/// Table-style component ablation: every variant trained from the same seed,
/// variants run concurrently, rows assembled in the given order.
inline EvaluationReport run_ablation(const ModelConfig& cfg,
                                     const std::vector<AblationSpec>& variants,
                                     const AblationData& data, const TrainConfig& tc,
                                     const training::FreezePolicy& freeze,
                                     std::size_t workers = 0) {
    if (variants.empty()) throw SpecError("ablation needs at least one variant");
    for (const AblationSpec& v : variants) v.validate();
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    std::vector<VariantRun> runs(variants.size());
    for (std::size_t base = 0; base < variants.size(); base += workers) {
        std::size_t end = std::min(variants.size(), base + workers);
        std::vector<std::future<VariantRun>> batch;
        for (std::size_t i = base; i < end; ++i)
            batch.push_back(std::async(std::launch::async, [&, i] {
                return run_variant(variants[i], cfg, data, tc, freeze);
            }));
        for (std::size_t i = base; i < end; ++i) runs[i] = batch[i - base].get();
    }
    EvaluationReport report;
    report.config_hash = config_hash(cfg);
    report.seed = tc.seed;
    for (const VariantRun& run : runs) report.append(run.report);
    return report;
}

// ---- event-type ablation ---------------------------------------------------

struct EventTypeAblationResult {
    EvaluationReport report;
    // variant label -> ids of every sample the run touched, for auditing
    std::map<std::string, std::vector<std::string>> touched;
};

namespace detail {

inline std::vector<TrainSample> of_type(const std::vector<TrainSample>& all,
                                        corpus::EventType type) {
    std::vector<TrainSample> out;
    for (const TrainSample& s : all)
        if (s.script.type == type) out.push_back(s);
    return out;
}

inline void record_touched(EventTypeAblationResult& res, const std::string& label,
                           const AblationData& d) {
    auto& ids = res.touched[label];
    for (const auto* split : {&d.train, &d.val, &d.test})
        for (const TrainSample& s : *split) ids.push_back(s.sample.event_id);
}

}  // namespace detail

/// Trains and scores the model per single-event-type subset plus the full
/// union, and marks each subset row up or down against the union row.
inline EventTypeAblationResult run_event_type_ablation(const AblationData& data,
                                                       const ModelConfig& cfg,
                                                       const TrainConfig& tc,
                                                       const training::FreezePolicy& freeze) {
    EventTypeAblationResult res;
    res.report.config_hash = config_hash(cfg);
    res.report.seed = tc.seed;

    AblationSpec full_spec;
    VariantRun full = run_variant(full_spec, cfg, data, tc, freeze);
    for (EvaluationRow& row : full.report.rows) row.variant = "Full Selection";
    detail::record_touched(res, "Full Selection", data);
    res.report.append(full.report);

    // Union metrics per (asset, pred-len) for the direction markers.
    std::map<std::pair<std::string, std::size_t>, std::pair<double, double>> base;
    for (const EvaluationRow& row : full.report.rows)
        base[{row.asset_id, row.pred_len}] = {row.mse, row.mae};

    for (corpus::EventType type : corpus::all_event_types()) {
        std::string label = counterfactual::display_name(type);
        AblationData sub;
        sub.train = detail::of_type(data.train, type);
        sub.val = detail::of_type(data.val, type);
        sub.test = detail::of_type(data.test, type);
        if (sub.train.empty() || sub.val.empty() || sub.test.empty()) {
            res.report.warnings.push_back("skipped empty partition: " + label);
            continue;
        }
        VariantRun run = run_variant(full_spec, cfg, sub, tc, freeze);
        for (EvaluationRow& row : run.report.rows) {
            row.variant = label;
            auto it = base.find({row.asset_id, row.pred_len});
            if (it != base.end()) {
                row.mse_vs_baseline = row.mse > it->second.first ? "up" : "down";
                row.mae_vs_baseline = row.mae > it->second.second ? "up" : "down";
            }
        }
        detail::record_touched(res, label, sub);
        res.report.append(run.report);
    }
    return res;
}

// ---- sensitivity sweeps ----------------------------------------------------

struct SweepRecord {
    std::string knob;  // "n-identical" or "k"
    double value = 0.0;
    std::uint64_t seed = 0;
    double test_mse = 0.0;
    std::vector<training::HistoryRow> history;
};

namespace detail {

inline double mean_mse(const EvaluationReport& r) {
    double se = 0.0;
    std::size_t n = 0;
    for (const EvaluationRow& row : r.rows) {
        se += row.mse * double(row.sample_count);
        n += row.sample_count;
    }
    return se / double(n);
}

}  // namespace detail

/// Grid sweep over the identical-counterfactual count (the margin-sweep knob)
/// and the post-regressor depth. One trained run per (knob value, seed).
inline std::vector<SweepRecord> run_sensitivity(const ModelConfig& cfg,
                                                const std::vector<std::size_t>& n_identicals,
                                                const std::vector<std::size_t>& ks,
                                                const AblationData& data,
                                                const TrainConfig& tc,
                                                const std::vector<std::uint64_t>& seeds,
                                                const training::FreezePolicy& freeze) {
    if (n_identicals.empty() && ks.empty())
        throw SpecError("sensitivity sweep needs at least one grid point");
    if (seeds.empty()) throw SpecError("sensitivity sweep needs at least one seed");
    std::vector<SweepRecord> records;
    for (std::uint64_t seed : seeds) {
        TrainConfig stc = tc;
        stc.seed = seed;
        for (std::size_t n : n_identicals) {
            AblationData d = data;
            for (auto* split : {&d.train, &d.val, &d.test})
                for (TrainSample& s : *split)
                    if (s.cf_texts.size() > n) s.cf_texts.resize(n);
            TrainConfig ntc = stc;
            if (n == 0) ntc.use_causal = false;  // no counterfactuals left
            AblationSpec full;
            VariantRun run = run_variant(full, cfg, d, ntc, freeze);
            SweepRecord rec;
            rec.knob = "n-identical";
            rec.value = double(n);
            rec.seed = seed;
            rec.test_mse = detail::mean_mse(run.report);
            rec.history = run.train_result.history;
            records.push_back(std::move(rec));
        }
        for (std::size_t k : ks) {
            ModelConfig kcfg = cfg;
            kcfg.regressor_layers = k;
            kcfg.validate();
            AblationSpec full;
            VariantRun run = run_variant(full, kcfg, data, stc, freeze);
            SweepRecord rec;
            rec.knob = "k";
            rec.value = double(k);
            rec.seed = seed;
            rec.test_mse = detail::mean_mse(run.report);
            rec.history = run.train_result.history;
            records.push_back(std::move(rec));
        }
    }
    return records;
}

inline void write_sweep_csv(const std::string& path,
                            const std::vector<SweepRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open sweep output for write: " + path);
    out << "knob,value,seed,test_mse\n";
    char buf[256];
    for (const SweepRecord& r : records) {
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%llu,%.17g\n", r.knob.c_str(),
                      r.value, static_cast<unsigned long long>(r.seed), r.test_mse);
        out << buf;
    }
}

// ---- plots -----------------------------------------------------------------

/// Minimal deterministic line chart, one polyline per series.
inline void write_lines_svg(const std::string& path,
                            const std::vector<std::pair<std::string, std::vector<double>>>& series) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open plot for write: " + path);
    const double w = 640, h = 360, pad = 40;
    double lo = 0.0, hi = 1.0;
    std::size_t len = 1;
    bool first = true;
    for (const auto& [name, ys] : series)
        for (double y : ys) {
            if (first) { lo = hi = y; first = false; }
            lo = std::min(lo, y);
            hi = std::max(hi, y);
        }
    for (const auto& [name, ys] : series) len = std::max(len, ys.size());
    if (hi == lo) hi = lo + 1.0;
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b"};
    char buf[128];
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"360\" "
           "viewBox=\"0 0 640 360\">\n";
    out << "<rect width=\"640\" height=\"360\" fill=\"white\"/>\n";
    std::size_t ci = 0;
    for (const auto& [name, ys] : series) {
        out << "<polyline fill=\"none\" stroke=\"" << colors[ci % 6]
            << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < ys.size(); ++i) {
            double x = pad + (w - 2 * pad) * double(i) / double(std::max<std::size_t>(1, len - 1));
            double y = h - pad - (h - 2 * pad) * (ys[i] - lo) / (hi - lo);
            std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", x, y);
            out << buf;
        }
        out << "\"/>\n";
        out << "<text x=\"" << pad << "\" y=\"" << 16 + 14 * ci << "\" fill=\""
            << colors[ci % 6] << "\" font-size=\"12\">" << name << "</text>\n";
        ++ci;
    }
    out << "</svg>\n";
}

}  // namespace camef::evaluation
