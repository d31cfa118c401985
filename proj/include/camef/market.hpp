#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "camef/common.hpp"
#include "camef/corpus.hpp"
#include "camef/tensor.hpp"
#include "camef/timeutil.hpp"

namespace camef::market {

inline constexpr int kChannels = 4;  // open, high, low, close
inline constexpr std::int64_t kBarSeconds = 300;

struct Bar {
    std::int64_t ts = 0;  // UTC epoch seconds
    double open = 0, high = 0, low = 0, close = 0;
    double channel(int c) const {
        switch (c) {
            case 0: return open;
            case 1: return high;
            case 2: return low;
            case 3: return close;
        }
        throw ContractError("bad channel index");
    }
    double& channel(int c) {
        switch (c) {
            case 0: return open;
            case 1: return high;
            case 2: return low;
            case 3: return close;
        }
        throw ContractError("bad channel index");
    }
};

struct BarSeries {
    std::string asset_id;
    std::vector<Bar> bars;

    void validate() const {
        for (std::size_t i = 0; i < bars.size(); ++i) {
            const Bar& b = bars[i];
            if (i > 0 && bars[i - 1].ts >= b.ts)
                throw DataError(asset_id + ": timestamps not strictly increasing at index " +
                                std::to_string(i));
            if (!(std::isfinite(b.open) && std::isfinite(b.high) &&
                  std::isfinite(b.low) && std::isfinite(b.close)))
                throw DataError(asset_id + ": non-finite bar at index " + std::to_string(i));
            if (b.high < std::max(b.open, b.close) || b.low > std::min(b.open, b.close))
                throw DataError(asset_id + ": OHLC ordering violated at index " +
                                std::to_string(i));
        }
    }
};

struct ChannelStats {
    double mean = 0.0;
    double stddev = 1.0;
    bool constant = false;
};

/// One aligned training/eval unit. Pre-window includes the anchor bar and has
/// exactly tau bars; the post-window is the tau bars immediately after.
struct AlignedSample {
    std::string event_id;
    std::string asset_id;
    std::int64_t event_ts = 0;
    std::size_t tau = 0;
    std::vector<Bar> pre;
    std::vector<Bar> post;
    std::vector<ChannelStats> stats;  // per channel, pre-window only
    bool normalized = false;
};

// ---- alignment -------------------------------------------------------------

/// Anchor = last bar with timestamp <= event timestamp; pre = the tau bars
/// ending at the anchor, post = the tau bars after it.
inline AlignedSample align_event(const BarSeries& series,
                                 const corpus::EventScript& event, std::size_t tau) {
    if (tau == 0) throw ConfigError("tau must be positive");
    const auto& bars = series.bars;
    if (bars.empty() || event.timestamp < bars.front().ts)
        throw AlignmentError("event " + event.id + " precedes first bar of " +
                             series.asset_id);
    auto it = std::upper_bound(bars.begin(), bars.end(), event.timestamp,
                               [](std::int64_t t, const Bar& b) { return t < b.ts; });
    std::size_t anchor = static_cast<std::size_t>(it - bars.begin()) - 1;
    if (anchor + 1 < tau)
        throw AlignmentError("event " + event.id + ": insufficient history, need " +
                             std::to_string(tau) + " bars, have " +
                             std::to_string(anchor + 1));
    if (anchor + tau >= bars.size())
        throw AlignmentError("event " + event.id + ": insufficient future bars, need " +
                             std::to_string(tau) + ", have " +
                             std::to_string(bars.size() - anchor - 1));
    AlignedSample s;
    s.event_id = event.id;
    s.asset_id = series.asset_id;
    s.event_ts = event.timestamp;
    s.tau = tau;
    s.pre.assign(bars.begin() + (anchor + 1 - tau), bars.begin() + (anchor + 1));
    s.post.assign(bars.begin() + (anchor + 1), bars.begin() + (anchor + 1 + tau));
    return s;
}

// ---- normalization ----------------------------------------------------------

/// Per-channel z-score using pre-window statistics only; constant channels
/// keep sigma 1 and are flagged.
inline AlignedSample normalize_sample(const AlignedSample& in) {
    if (in.normalized) throw ContractError("sample already normalized: " + in.event_id);
    AlignedSample s = in;
    s.stats.assign(kChannels, {});
    for (int c = 0; c < kChannels; ++c) {
        double mean = 0.0;
        for (const Bar& b : s.pre) mean += b.channel(c);
        mean /= double(s.pre.size());
        double var = 0.0;
        for (const Bar& b : s.pre) {
            double d = b.channel(c) - mean;
            var += d * d;
        }
        var /= double(s.pre.size());
        ChannelStats st;
        st.mean = mean;
        if (var > 0.0) {
            st.stddev = std::sqrt(var);
        } else {
            st.stddev = 1.0;
            st.constant = true;
        }
        for (Bar& b : s.pre) b.channel(c) = (b.channel(c) - st.mean) / st.stddev;
        for (Bar& b : s.post) b.channel(c) = (b.channel(c) - st.mean) / st.stddev;
        s.stats[c] = st;
    }
    s.normalized = true;
    return s;
}

inline AlignedSample denormalize_sample(const AlignedSample& in) {
    if (!in.normalized) throw ContractError("sample not normalized: " + in.event_id);
    AlignedSample s = in;
    for (int c = 0; c < kChannels; ++c) {
        const ChannelStats& st = s.stats[c];
        for (Bar& b : s.pre) b.channel(c) = b.channel(c) * st.stddev + st.mean;
        for (Bar& b : s.post) b.channel(c) = b.channel(c) * st.stddev + st.mean;
    }
    s.normalized = false;
    s.stats.clear();
    return s;
}

/// Window matrix (tau, d). d=1 selects close only; d=4 selects OHLC in
/// channel order open, high, low, close.
inline Tensor window_tensor(const std::vector<Bar>& window, std::size_t d) {
    if (d != 1 && d != 4) throw ConfigError("forecast channel count must be 1 or 4");
    Tensor t({window.size(), d});
    for (std::size_t r = 0; r < window.size(); ++r) {
        if (d == 1) {
            t.at(r, 0) = window[r].close;
        } else {
            for (int c = 0; c < kChannels; ++c) t.at(r, c) = window[r].channel(c);
        }
    }
    return t;
}

// ---- chronological split ----------------------------------------------------

struct DatasetSplit {
    std::vector<AlignedSample> train, validation, test;
};

/// Chronological 6:2:2 with the floor rule: sorted by event timestamp,
/// first floor(0.6 N) -> train, next floor(0.2 N) -> validation, rest -> test.
inline DatasetSplit split_dataset(std::vector<AlignedSample> samples) {
    if (samples.size() < 5)
        throw DatasetError("need at least 5 samples to split, have " +
                           std::to_string(samples.size()));
    std::stable_sort(samples.begin(), samples.end(),
                     [](const AlignedSample& a, const AlignedSample& b) {
                         return a.event_ts < b.event_ts;
                     });
    std::size_t n = samples.size();
    std::size_t n_train = static_cast<std::size_t>(std::floor(0.6 * double(n)));
    std::size_t n_val = static_cast<std::size_t>(std::floor(0.2 * double(n)));
    DatasetSplit split;
    split.train.assign(samples.begin(), samples.begin() + n_train);
    split.validation.assign(samples.begin() + n_train, samples.begin() + n_train + n_val);
    split.test.assign(samples.begin() + n_train + n_val, samples.end());
    return split;
}

// ---- persistence ------------------------------------------------------------

/// bars/<asset-id>.csv with header `timestamp,open,high,low,close`.
inline BarSeries read_bars_csv(const std::string& path, const std::string& asset_id) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open bar file: " + path);
    BarSeries series;
    series.asset_id = asset_id;
    std::string line;
    if (!std::getline(in, line) || line.rfind("timestamp,open,high,low,close", 0) != 0)
        throw DataError("bad CSV header in " + path);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        Bar b;
        std::getline(ls, field, ',');
        b.ts = timeutil::parse_rfc3339(field);
        std::getline(ls, field, ',');
        b.open = std::stod(field);
        std::getline(ls, field, ',');
        b.high = std::stod(field);
        std::getline(ls, field, ',');
        b.low = std::stod(field);
        std::getline(ls, field, ',');
        b.close = std::stod(field);
        series.bars.push_back(b);
    }
    series.validate();
    return series;
}

inline void write_bars_csv(const std::string& path, const BarSeries& series) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    out << "timestamp,open,high,low,close\n";
    char buf[128];
    for (const Bar& b : series.bars) {
        std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g,%.10g\n",
                      timeutil::format_rfc3339(b.ts).c_str(), b.open, b.high, b.low,
                      b.close);
        out << buf;
    }
}

inline nlohmann::json to_json(const AlignedSample& s) {
    auto bars_json = [](const std::vector<Bar>& bars) {
        nlohmann::json arr = nlohmann::json::array();
        for (const Bar& b : bars)
            arr.push_back({{"ts", timeutil::format_rfc3339(b.ts)},
                           {"o", b.open},
                           {"h", b.high},
                           {"l", b.low},
                           {"c", b.close}});
        return arr;
    };
    nlohmann::json j{{"event_id", s.event_id},
                     {"asset_id", s.asset_id},
                     {"event_ts", timeutil::format_rfc3339(s.event_ts)},
                     {"tau", s.tau},
                     {"normalized", s.normalized},
                     {"pre", bars_json(s.pre)},
                     {"post", bars_json(s.post)}};
    if (!s.stats.empty()) {
        nlohmann::json stats = nlohmann::json::array();
        for (const auto& st : s.stats)
            stats.push_back({{"mean", st.mean}, {"stddev", st.stddev}, {"constant", st.constant}});
        j["stats"] = stats;
    }
    return j;
}

inline AlignedSample sample_from_json(const nlohmann::json& j) {
    auto bars_from = [](const nlohmann::json& arr) {
        std::vector<Bar> bars;
        for (const auto& bj : arr) {
            Bar b;
            b.ts = timeutil::parse_rfc3339(bj.at("ts").get<std::string>());
            b.open = bj.at("o").get<double>();
            b.high = bj.at("h").get<double>();
            b.low = bj.at("l").get<double>();
            b.close = bj.at("c").get<double>();
            bars.push_back(b);
        }
        return bars;
    };
    AlignedSample s;
    s.event_id = j.at("event_id").get<std::string>();
    s.asset_id = j.at("asset_id").get<std::string>();
    s.event_ts = timeutil::parse_rfc3339(j.at("event_ts").get<std::string>());
    s.tau = j.at("tau").get<std::size_t>();
    s.normalized = j.at("normalized").get<bool>();
    s.pre = bars_from(j.at("pre"));
    s.post = bars_from(j.at("post"));
    if (j.contains("stats")) {
        for (const auto& sj : j.at("stats")) {
            ChannelStats st;
            st.mean = sj.at("mean").get<double>();
            st.stddev = sj.at("stddev").get<double>();
            st.constant = sj.at("constant").get<bool>();
            s.stats.push_back(st);
        }
    }
    return s;
}

inline void write_samples_jsonl(const std::string& path,
                                const std::vector<AlignedSample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    for (const auto& s : samples) out << to_json(s).dump() << "\n";
}

inline std::vector<AlignedSample> read_samples_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open samples file: " + path);
    std::vector<AlignedSample> samples;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        samples.push_back(sample_from_json(nlohmann::json::parse(line)));
    }
    return samples;
}

}  // namespace camef::market
