#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "camef/market.hpp"

using namespace camef::market;
using camef::corpus::EventScript;
using camef::corpus::EventType;

namespace {

BarSeries synthetic_series(std::size_t n, std::uint64_t seed,
                           std::int64_t start_ts = 1577836800 /*2020-01-01*/) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> step(0.0, 1.0);
    BarSeries s;
    s.asset_id = "SYN";
    double px = 100.0;
    for (std::size_t i = 0; i < n; ++i) {
        Bar b;
        b.ts = start_ts + std::int64_t(i) * kBarSeconds;
        b.open = px;
        px += step(rng);
        b.close = px;
        b.high = std::max(b.open, b.close) + 0.25;
        b.low = std::min(b.open, b.close) - 0.25;
        s.bars.push_back(b);
    }
    s.validate();
    return s;
}

EventScript event_at(std::int64_t ts) {
    EventScript e;
    e.id = "FOMC/test";
    e.type = EventType::FOMC;
    e.timestamp = ts;
    e.text = "t";
    return e;
}

// Independent O(n) linear-scan oracle for the window rule.
struct OracleWindows {
    bool ok = false;
    std::size_t pre_begin = 0, post_begin = 0;
};
OracleWindows scan_oracle(const BarSeries& s, std::int64_t event_ts, std::size_t tau) {
    OracleWindows o;
    long anchor = -1;
    for (std::size_t i = 0; i < s.bars.size(); ++i)
        if (s.bars[i].ts <= event_ts) anchor = long(i);
    if (anchor < 0) return o;
    if (std::size_t(anchor) + 1 < tau) return o;
    if (std::size_t(anchor) + tau >= s.bars.size()) return o;
    o.ok = true;
    o.pre_begin = std::size_t(anchor) + 1 - tau;
    o.post_begin = std::size_t(anchor) + 1;
    return o;
}

}  // namespace

TEST_CASE("alignment window rule on a 300-bar series") {
    BarSeries s = synthetic_series(300, 1);
    // Anchor exactly at index 100.
    AlignedSample a = align_event(s, event_at(s.bars[100].ts), 35);
    CHECK(a.pre.size() == 35);
    CHECK(a.post.size() == 35);
    CHECK(a.pre.front().ts == s.bars[66].ts);
    CHECK(a.pre.back().ts == s.bars[100].ts);
    CHECK(a.post.front().ts == s.bars[101].ts);
    CHECK(a.post.back().ts == s.bars[135].ts);
}

TEST_CASE("alignment boundary errors") {
    BarSeries s = synthetic_series(300, 2);
    CHECK_THROWS_AS((void)align_event(s, event_at(s.bars[10].ts), 35),
                    camef::AlignmentError);
    CHECK_THROWS_AS((void)align_event(s, event_at(s.bars.front().ts - 1000), 35),
                    camef::AlignmentError);
    CHECK_THROWS_AS((void)align_event(s, event_at(s.bars[280].ts), 35),
                    camef::AlignmentError);
}

TEST_CASE("1000 random alignments match the linear-scan oracle") {
    std::mt19937_64 rng(99);
    for (int iter = 0; iter < 1000; ++iter) {
        std::size_t n = 50 + rng() % 300;
        BarSeries s = synthetic_series(n, rng());
        std::size_t tau = 1 + rng() % 40;
        std::int64_t t0 = s.bars.front().ts - 600;
        std::int64_t t1 = s.bars.back().ts + 600;
        std::int64_t ts = t0 + std::int64_t(rng() % std::uint64_t(t1 - t0));
        OracleWindows oracle = scan_oracle(s, ts, tau);
        if (!oracle.ok) {
            CHECK_THROWS_AS((void)align_event(s, event_at(ts), tau),
                            camef::AlignmentError);
            continue;
        }
        AlignedSample a = align_event(s, event_at(ts), tau);
        REQUIRE(a.pre.size() == tau);
        REQUIRE(a.post.size() == tau);
        CHECK(a.pre.front().ts == s.bars[oracle.pre_begin].ts);
        CHECK(a.post.front().ts == s.bars[oracle.post_begin].ts);
        // Window invariant straddles the anchor correctly.
        CHECK(a.pre.back().ts <= ts);
        CHECK(a.post.front().ts > ts);
    }
}

TEST_CASE("normalization: constant window, round trip, statistics") {
    BarSeries s = synthetic_series(200, 5);
    AlignedSample raw = align_event(s, event_at(s.bars[100].ts), 35);

    SUBCASE("constant pre-window becomes all zeros") {
        AlignedSample flat = raw;
        for (Bar& b : flat.pre) b.open = b.high = b.low = b.close = 42.0;
        AlignedSample n = normalize_sample(flat);
        for (const Bar& b : n.pre)
            for (int c = 0; c < kChannels; ++c) CHECK(b.channel(c) == 0.0);
        for (const auto& st : n.stats) CHECK(st.constant);
    }
    SUBCASE("normalize then denormalize recovers originals within 1e-9") {
        AlignedSample n = normalize_sample(raw);
        AlignedSample back = denormalize_sample(n);
        for (std::size_t i = 0; i < raw.pre.size(); ++i)
            for (int c = 0; c < kChannels; ++c) {
                CHECK(back.pre[i].channel(c) ==
                      doctest::Approx(raw.pre[i].channel(c)).epsilon(1e-9));
                CHECK(back.post[i].channel(c) ==
                      doctest::Approx(raw.post[i].channel(c)).epsilon(1e-9));
            }
        // OHLC ordering survives the round trip.
        for (const Bar& b : back.pre) {
            CHECK(b.high >= std::max(b.open, b.close));
            CHECK(b.low <= std::min(b.open, b.close));
        }
    }
    SUBCASE("normalized pre-window has zero mean and unit variance") {
        AlignedSample n = normalize_sample(raw);
        for (int c = 0; c < kChannels; ++c) {
            double mean = 0.0, var = 0.0;
            for (const Bar& b : n.pre) mean += b.channel(c) / double(n.pre.size());
            for (const Bar& b : n.pre)
                var += (b.channel(c) - mean) * (b.channel(c) - mean) / double(n.pre.size());
            CHECK(std::fabs(mean) < 1e-9);
            CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("split contract: floor rule and chronology") {
    auto make_samples = [](std::size_t n) {
        std::vector<AlignedSample> v(n);
        for (std::size_t i = 0; i < n; ++i) {
            v[i].event_id = "e" + std::to_string(i);
            v[i].event_ts = 1577836800 + std::int64_t((n - i)) * 86400;  // reversed order
        }
        return v;
    };
    SUBCASE("N=10 -> 6/2/2") {
        DatasetSplit sp = split_dataset(make_samples(10));
        CHECK(sp.train.size() == 6);
        CHECK(sp.validation.size() == 2);
        CHECK(sp.test.size() == 2);
    }
    SUBCASE("N=100 -> 60/20/20") {
        DatasetSplit sp = split_dataset(make_samples(100));
        CHECK(sp.train.size() == 60);
        CHECK(sp.validation.size() == 20);
        CHECK(sp.test.size() == 20);
    }
    SUBCASE("N=11 -> 6/2/3") {
        DatasetSplit sp = split_dataset(make_samples(11));
        CHECK(sp.train.size() == 6);
        CHECK(sp.validation.size() == 2);
        CHECK(sp.test.size() == 3);
    }
    SUBCASE("chronological: no leakage") {
        DatasetSplit sp = split_dataset(make_samples(50));
        std::int64_t max_train = 0, min_val = INT64_MAX, min_test = INT64_MAX;
        for (const auto& s : sp.train) max_train = std::max(max_train, s.event_ts);
        for (const auto& s : sp.validation) min_val = std::min(min_val, s.event_ts);
        for (const auto& s : sp.test) min_test = std::min(min_test, s.event_ts);
        CHECK(max_train < min_val);
        CHECK(min_val < min_test);
    }
    SUBCASE("fewer than 5 samples is a dataset error") {
        CHECK_THROWS_AS((void)split_dataset(make_samples(4)), camef::DatasetError);
    }
}

TEST_CASE("bars CSV round trip") {
    BarSeries s = synthetic_series(40, 8);
    write_bars_csv("bars_test.csv", s);
    BarSeries back = read_bars_csv("bars_test.csv", "SYN");
    REQUIRE(back.bars.size() == s.bars.size());
    for (std::size_t i = 0; i < s.bars.size(); ++i) {
        CHECK(back.bars[i].ts == s.bars[i].ts);
        CHECK(back.bars[i].close == doctest::Approx(s.bars[i].close).epsilon(1e-9));
    }
}

TEST_CASE("samples JSONL round trip") {
    BarSeries s = synthetic_series(200, 12);
    std::vector<AlignedSample> samples;
    for (std::size_t i = 60; i < 120; i += 10)
        samples.push_back(normalize_sample(align_event(s, event_at(s.bars[i].ts), 35)));
    write_samples_jsonl("samples_test.jsonl", samples);
    auto back = read_samples_jsonl("samples_test.jsonl");
    REQUIRE(back.size() == samples.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].event_ts == samples[i].event_ts);
        CHECK(back[i].normalized);
        CHECK(back[i].stats.size() == std::size_t(kChannels));
        CHECK(back[i].pre.back().close ==
              doctest::Approx(samples[i].pre.back().close).epsilon(1e-12));
    }
}

TEST_CASE("window tensor channel selection") {
    BarSeries s = synthetic_series(120, 3);
    AlignedSample a = align_event(s, event_at(s.bars[60].ts), 35);
    camef::Tensor close_only = window_tensor(a.pre, 1);
    CHECK(close_only.shape() == std::vector<std::size_t>{35, 1});
    CHECK(close_only.at(0, 0) == a.pre[0].close);
    camef::Tensor ohlc = window_tensor(a.pre, 4);
    CHECK(ohlc.shape() == std::vector<std::size_t>{35, 4});
    CHECK(ohlc.at(3, 1) == a.pre[3].high);
    CHECK_THROWS_AS((void)window_tensor(a.pre, 2), camef::ConfigError);
}
